//! Expression language for user-supplied entire maps.
//!
//! ```text
//! expr   := term (("+" | "-") term)*
//! term   := unary ("*" unary)*
//! unary  := "-" unary | power
//! power  := atom ("^" exponent)?
//! exponent := UINT | INDEX
//! atom   := NUMBER | NUMBER "i" | "i" | "pi" | "z" UINT | INDEX
//!         | ("exp" | "sin" | "cos") "(" expr ")"
//!         | ("sum" | "prod") "(" IDENT "=" INT "," INT "," expr ")"
//!         | "(" expr ")"
//! ```
//!
//! Variables are `z1 .. zn`. Sums and products run over an inclusive
//! integer range and bind `IDENT` inside their body. Division is rejected.

use crate::xnum::{LogComplex, XnumError};
use std::fmt;
use thiserror::Error;

pub const GRAMMAR: &str = "expr := term ((\"+\"|\"-\") term)* ; term := unary (\"*\" unary)* ; \
unary := \"-\" unary | power ; power := atom (\"^\" (UINT|INDEX))? ; \
atom := NUMBER | NUMBER\"i\" | \"i\" | \"pi\" | \"z\"UINT | INDEX | (\"exp\"|\"sin\"|\"cos\") \"(\" expr \")\" \
| (\"sum\"|\"prod\") \"(\" IDENT \"=\" INT \",\" INT \",\" expr \")\" | \"(\" expr \")\"";

const MAX_RANGE: i64 = 1_000_000;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ExprError {
    #[error("syntax error at byte {offset}: {msg}")]
    Syntax { offset: usize, msg: String },
    #[error("unknown identifier '{name}' at byte {offset}")]
    UnknownIdent { name: String, offset: usize },
    #[error("variable z{index} out of range for n = {n} (byte {offset})")]
    VarIndex { index: usize, n: usize, offset: usize },
    #[error("non-entire operation at byte {offset}")]
    NonEntire { offset: usize },
    #[error("empty expression")]
    Empty,
    #[error("expected {expected} coordinates, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("negative exponent in power")]
    NegativePower,
    #[error(transparent)]
    Num(#[from] XnumError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Func {
    Exp,
    Sin,
    Cos,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PowExp {
    Lit(u32),
    Index(String),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Expr {
    /// Complex literal `re + i im`.
    Lit(f64, f64),
    /// Zero-based variable index.
    Var(usize),
    Index(String),
    Neg(Box<Expr>),
    Add(Box<Expr>, Box<Expr>),
    Sub(Box<Expr>, Box<Expr>),
    Mul(Box<Expr>, Box<Expr>),
    Pow(Box<Expr>, PowExp),
    Call(Func, Box<Expr>),
    Sum { var: String, lo: i64, hi: i64, body: Box<Expr> },
    Prod { var: String, lo: i64, hi: i64, body: Box<Expr> },
}

/// A parsed scalar component together with its declared dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct ExprAst {
    pub n_vars: usize,
    pub root: Expr,
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Lit(re, im) if *im == 0.0 => write!(f, "{re}"),
            Expr::Lit(re, im) if *re == 0.0 => write!(f, "{im}i"),
            Expr::Lit(re, im) => write!(f, "({re} + {im}i)"),
            Expr::Var(k) => write!(f, "z{}", k + 1),
            Expr::Index(s) => write!(f, "{s}"),
            Expr::Neg(a) => write!(f, "(-{a})"),
            Expr::Add(a, b) => write!(f, "({a} + {b})"),
            Expr::Sub(a, b) => write!(f, "({a} - {b})"),
            Expr::Mul(a, b) => write!(f, "({a} * {b})"),
            Expr::Pow(a, PowExp::Lit(k)) => write!(f, "({a}^{k})"),
            Expr::Pow(a, PowExp::Index(s)) => write!(f, "({a}^{s})"),
            Expr::Call(func, a) => {
                let name = match func {
                    Func::Exp => "exp",
                    Func::Sin => "sin",
                    Func::Cos => "cos",
                };
                write!(f, "{name}({a})")
            }
            Expr::Sum { var, lo, hi, body } => write!(f, "sum({var}={lo},{hi},{body})"),
            Expr::Prod { var, lo, hi, body } => write!(f, "prod({var}={lo},{hi},{body})"),
        }
    }
}

impl fmt::Display for ExprAst {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.root)
    }
}

struct Parser<'a> {
    src: &'a [u8],
    pos: usize,
    n_vars: usize,
    scope: Vec<String>,
}

fn is_ident_start(c: u8) -> bool {
    c.is_ascii_alphabetic() || c == b'_'
}

fn is_ident_char(c: u8) -> bool {
    c.is_ascii_alphanumeric() || c == b'_'
}

impl<'a> Parser<'a> {
    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn syntax<T>(&self, offset: usize, msg: impl Into<String>) -> Result<T, ExprError> {
        Err(ExprError::Syntax { offset, msg: msg.into() })
    }

    fn expect(&mut self, c: u8) -> Result<(), ExprError> {
        match self.peek() {
            Some(x) if x == c => {
                self.pos += 1;
                Ok(())
            }
            Some(x) => self.syntax(self.pos, format!("expected '{}', found '{}'", c as char, x as char)),
            None => self.syntax(self.pos, format!("expected '{}', found end of input", c as char)),
        }
    }

    fn ident(&mut self) -> Option<(usize, String)> {
        self.skip_ws();
        let start = self.pos;
        if start < self.src.len() && is_ident_start(self.src[start]) {
            let mut end = start;
            while end < self.src.len() && is_ident_char(self.src[end]) {
                end += 1;
            }
            self.pos = end;
            Some((start, String::from_utf8_lossy(&self.src[start..end]).into_owned()))
        } else {
            None
        }
    }

    fn int(&mut self) -> Result<i64, ExprError> {
        self.skip_ws();
        let start = self.pos;
        if self.src.get(self.pos) == Some(&b'-') {
            self.pos += 1;
        }
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        std::str::from_utf8(&self.src[start..self.pos])
            .ok()
            .and_then(|s| s.parse::<i64>().ok())
            .map_or_else(|| self.syntax(start, "expected integer"), Ok)
    }

    fn expr(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.term()?;
        loop {
            match self.peek() {
                Some(b'+') => {
                    self.pos += 1;
                    lhs = Expr::Add(Box::new(lhs), Box::new(self.term()?));
                }
                Some(b'-') => {
                    self.pos += 1;
                    lhs = Expr::Sub(Box::new(lhs), Box::new(self.term()?));
                }
                _ => return Ok(lhs),
            }
        }
    }

    fn term(&mut self) -> Result<Expr, ExprError> {
        let mut lhs = self.unary()?;
        loop {
            match self.peek() {
                Some(b'*') => {
                    self.pos += 1;
                    lhs = Expr::Mul(Box::new(lhs), Box::new(self.unary()?));
                }
                Some(b'/') => return Err(ExprError::NonEntire { offset: self.pos }),
                _ => return Ok(lhs),
            }
        }
    }

    fn unary(&mut self) -> Result<Expr, ExprError> {
        if self.peek() == Some(b'-') {
            self.pos += 1;
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        self.power()
    }

    fn power(&mut self) -> Result<Expr, ExprError> {
        let base = self.atom()?;
        if self.peek() != Some(b'^') {
            return Ok(base);
        }
        self.pos += 1;
        let at = {
            self.skip_ws();
            self.pos
        };
        match self.peek() {
            Some(c) if c.is_ascii_digit() => {
                let k = self.int()?;
                let k = u32::try_from(k).map_or_else(|_| self.syntax(at, "exponent too large"), Ok)?;
                Ok(Expr::Pow(Box::new(base), PowExp::Lit(k)))
            }
            Some(b'-') => Err(ExprError::NonEntire { offset: at }),
            Some(c) if is_ident_start(c) => {
                let (off, name) = self.ident().unwrap();
                if self.scope.contains(&name) {
                    Ok(Expr::Pow(Box::new(base), PowExp::Index(name)))
                } else {
                    Err(ExprError::UnknownIdent { name, offset: off })
                }
            }
            _ => self.syntax(at, "expected non-negative integer exponent"),
        }
    }

    fn number(&mut self) -> Result<Expr, ExprError> {
        let start = self.pos;
        let s = self.src;
        let mut end = start;
        while end < s.len() && s[end].is_ascii_digit() {
            end += 1;
        }
        if end < s.len() && s[end] == b'.' {
            end += 1;
            while end < s.len() && s[end].is_ascii_digit() {
                end += 1;
            }
        }
        if end < s.len() && (s[end] == b'e' || s[end] == b'E') {
            let mut k = end + 1;
            if k < s.len() && (s[k] == b'+' || s[k] == b'-') {
                k += 1;
            }
            if k < s.len() && s[k].is_ascii_digit() {
                while k < s.len() && s[k].is_ascii_digit() {
                    k += 1;
                }
                end = k;
            }
        }
        let v: f64 = std::str::from_utf8(&s[start..end])
            .ok()
            .and_then(|t| t.parse().ok())
            .map_or_else(|| self.syntax(start, "malformed number"), Ok)?;
        self.pos = end;
        if end < s.len() && s[end] == b'i' && !(end + 1 < s.len() && is_ident_char(s[end + 1])) {
            self.pos += 1;
            return Ok(Expr::Lit(0.0, v));
        }
        Ok(Expr::Lit(v, 0.0))
    }

    fn atom(&mut self) -> Result<Expr, ExprError> {
        match self.peek() {
            None => self.syntax(self.pos, "unexpected end of input"),
            Some(b'(') => {
                self.pos += 1;
                let e = self.expr()?;
                self.expect(b')')?;
                Ok(e)
            }
            Some(b'/') => Err(ExprError::NonEntire { offset: self.pos }),
            Some(c) if c.is_ascii_digit() || c == b'.' => self.number(),
            Some(c) if is_ident_start(c) => {
                let (off, name) = self.ident().unwrap();
                self.named(off, name)
            }
            Some(c) => self.syntax(self.pos, format!("unexpected character '{}'", c as char)),
        }
    }

    fn named(&mut self, off: usize, name: String) -> Result<Expr, ExprError> {
        if self.scope.contains(&name) {
            return Ok(Expr::Index(name));
        }
        match name.as_str() {
            "i" => return Ok(Expr::Lit(0.0, 1.0)),
            "pi" => return Ok(Expr::Lit(std::f64::consts::PI, 0.0)),
            "exp" | "sin" | "cos" => {
                let func = match name.as_str() {
                    "exp" => Func::Exp,
                    "sin" => Func::Sin,
                    _ => Func::Cos,
                };
                self.expect(b'(')?;
                let a = self.expr()?;
                self.expect(b')')?;
                return Ok(Expr::Call(func, Box::new(a)));
            }
            "sum" | "prod" => {
                self.expect(b'(')?;
                let (voff, var) = match self.ident() {
                    Some(v) => v,
                    None => return self.syntax(self.pos, "expected index name"),
                };
                if var.starts_with('z') && var[1..].chars().all(|c| c.is_ascii_digit()) && var.len() > 1 {
                    return self.syntax(voff, "index name shadows a variable");
                }
                self.expect(b'=')?;
                let lo = self.int()?;
                self.expect(b',')?;
                let hi = self.int()?;
                if hi.saturating_sub(lo) > MAX_RANGE {
                    return self.syntax(voff, "index range too long");
                }
                self.expect(b',')?;
                self.scope.push(var.clone());
                let body = self.expr();
                self.scope.pop();
                let body = Box::new(body?);
                self.expect(b')')?;
                return Ok(if name == "sum" {
                    Expr::Sum { var, lo, hi, body }
                } else {
                    Expr::Prod { var, lo, hi, body }
                });
            }
            "log" | "ln" | "sqrt" | "tan" => return Err(ExprError::NonEntire { offset: off }),
            _ => {}
        }
        if let Some(digits) = name.strip_prefix('z') {
            if !digits.is_empty() && digits.chars().all(|c| c.is_ascii_digit()) {
                let index: usize = digits.parse().map_err(|_| ExprError::UnknownIdent { name: name.clone(), offset: off })?;
                if index == 0 || index > self.n_vars {
                    return Err(ExprError::VarIndex { index, n: self.n_vars, offset: off });
                }
                return Ok(Expr::Var(index - 1));
            }
        }
        Err(ExprError::UnknownIdent { name, offset: off })
    }
}

pub fn parse(text: &str, n_vars: usize) -> Result<ExprAst, ExprError> {
    if text.trim().is_empty() {
        return Err(ExprError::Empty);
    }
    let mut p = Parser { src: text.as_bytes(), pos: 0, n_vars, scope: Vec::new() };
    let root = p.expr()?;
    match p.peek() {
        None => Ok(ExprAst { n_vars, root }),
        Some(b'/') => Err(ExprError::NonEntire { offset: p.pos }),
        Some(c) => Err(ExprError::Syntax { offset: p.pos, msg: format!("unexpected '{}'", c as char) }),
    }
}

type Env = Vec<(String, i64)>;

fn lookup(env: &Env, name: &str) -> i64 {
    env.iter().rev().find(|(n, _)| n == name).map(|(_, v)| *v).expect("index bound by parser")
}

fn pow_exponent(e: &PowExp, env: &Env) -> Result<u32, ExprError> {
    match e {
        PowExp::Lit(k) => Ok(*k),
        PowExp::Index(s) => u32::try_from(lookup(env, s)).map_err(|_| ExprError::NegativePower),
    }
}

fn eval_node(e: &Expr, x: &[LogComplex], env: &mut Env) -> Result<LogComplex, ExprError> {
    Ok(match e {
        Expr::Lit(re, im) => LogComplex::from_parts(*re, *im)?,
        Expr::Var(k) => x[*k],
        Expr::Index(s) => LogComplex::from_f64(lookup(env, s) as f64)?,
        Expr::Neg(a) => eval_node(a, x, env)?.neg(),
        Expr::Add(a, b) => eval_node(a, x, env)?.add(&eval_node(b, x, env)?)?,
        Expr::Sub(a, b) => eval_node(a, x, env)?.sub(&eval_node(b, x, env)?)?,
        Expr::Mul(a, b) => eval_node(a, x, env)?.mul(&eval_node(b, x, env)?)?,
        Expr::Pow(a, k) => eval_node(a, x, env)?.powi(pow_exponent(k, env)?)?,
        Expr::Call(f, a) => {
            let v = eval_node(a, x, env)?;
            match f {
                Func::Exp => v.exp()?,
                Func::Sin => v.sin()?,
                Func::Cos => v.cos()?,
            }
        }
        Expr::Sum { var, lo, hi, body } => {
            let mut acc = LogComplex::zero();
            for j in *lo..=*hi {
                env.push((var.clone(), j));
                let t = eval_node(body, x, env);
                env.pop();
                acc = acc.add(&t?)?;
            }
            acc
        }
        Expr::Prod { var, lo, hi, body } => {
            let mut acc = LogComplex::one();
            for j in *lo..=*hi {
                env.push((var.clone(), j));
                let t = eval_node(body, x, env);
                env.pop();
                acc = acc.mul(&t?)?;
            }
            acc
        }
    })
}

pub fn eval(ast: &ExprAst, point: &[LogComplex]) -> Result<LogComplex, ExprError> {
    if point.len() != ast.n_vars {
        return Err(ExprError::Dimension { expected: ast.n_vars, got: point.len() });
    }
    eval_node(&ast.root, point, &mut Vec::new())
}

/// Value and gradient carried together (forward mode).
#[derive(Debug, Clone)]
struct Dual {
    v: LogComplex,
    d: Vec<LogComplex>,
}

impl Dual {
    fn constant(v: LogComplex, n: usize) -> Self {
        Self { v, d: vec![LogComplex::zero(); n] }
    }

    fn scaled(&self, s: &LogComplex, v: LogComplex) -> Result<Self, ExprError> {
        let d = self.d.iter().map(|x| x.mul(s)).collect::<Result<_, _>>()?;
        Ok(Self { v, d })
    }
}

fn dual_add(a: &Dual, b: &Dual, sign: bool) -> Result<Dual, ExprError> {
    let op = |x: &LogComplex, y: &LogComplex| if sign { x.add(y) } else { x.sub(y) };
    let d = a.d.iter().zip(&b.d).map(|(x, y)| op(x, y)).collect::<Result<_, _>>()?;
    Ok(Dual { v: op(&a.v, &b.v)?, d })
}

fn dual_mul(a: &Dual, b: &Dual) -> Result<Dual, ExprError> {
    let mut d = Vec::with_capacity(a.d.len());
    for (x, y) in a.d.iter().zip(&b.d) {
        d.push(x.mul(&b.v)?.add(&a.v.mul(y)?)?);
    }
    Ok(Dual { v: a.v.mul(&b.v)?, d })
}

fn dual_node(e: &Expr, x: &[LogComplex], env: &mut Env) -> Result<Dual, ExprError> {
    let n = x.len();
    Ok(match e {
        Expr::Lit(..) | Expr::Index(_) => Dual::constant(eval_node(e, x, env)?, n),
        Expr::Var(k) => {
            let mut d = Dual::constant(x[*k], n);
            d.d[*k] = LogComplex::one();
            d
        }
        Expr::Neg(a) => {
            let a = dual_node(a, x, env)?;
            Dual { v: a.v.neg(), d: a.d.iter().map(|t| t.neg()).collect() }
        }
        Expr::Add(a, b) => dual_add(&dual_node(a, x, env)?, &dual_node(b, x, env)?, true)?,
        Expr::Sub(a, b) => dual_add(&dual_node(a, x, env)?, &dual_node(b, x, env)?, false)?,
        Expr::Mul(a, b) => dual_mul(&dual_node(a, x, env)?, &dual_node(b, x, env)?)?,
        Expr::Pow(a, k) => {
            let a = dual_node(a, x, env)?;
            let k = pow_exponent(k, env)?;
            if k == 0 {
                Dual::constant(LogComplex::one(), n)
            } else {
                let lower = a.v.powi(k - 1)?;
                let s = lower.mul_f64(k as f64)?;
                a.scaled(&s, lower.mul(&a.v)?)?
            }
        }
        Expr::Call(f, a) => {
            let a = dual_node(a, x, env)?;
            match f {
                Func::Exp => {
                    let v = a.v.exp()?;
                    a.scaled(&v, v)?
                }
                Func::Sin => a.scaled(&a.v.cos()?, a.v.sin()?)?,
                Func::Cos => a.scaled(&a.v.sin()?.neg(), a.v.cos()?)?,
            }
        }
        Expr::Sum { var, lo, hi, body } => {
            let mut acc = Dual::constant(LogComplex::zero(), n);
            for j in *lo..=*hi {
                env.push((var.clone(), j));
                let t = dual_node(body, x, env);
                env.pop();
                acc = dual_add(&acc, &t?, true)?;
            }
            acc
        }
        Expr::Prod { var, lo, hi, body } => {
            let mut acc = Dual::constant(LogComplex::one(), n);
            for j in *lo..=*hi {
                env.push((var.clone(), j));
                let t = dual_node(body, x, env);
                env.pop();
                acc = dual_mul(&acc, &t?)?;
            }
            acc
        }
    })
}

/// Value and gradient of one component.
pub fn eval_grad(ast: &ExprAst, point: &[LogComplex]) -> Result<(LogComplex, Vec<LogComplex>), ExprError> {
    if point.len() != ast.n_vars {
        return Err(ExprError::Dimension { expected: ast.n_vars, got: point.len() });
    }
    let d = dual_node(&ast.root, point, &mut Vec::new())?;
    Ok((d.v, d.d))
}

/// Row `i` holds the partial derivatives of component `i`.
pub fn jacobian(asts: &[ExprAst], point: &[LogComplex]) -> Result<Vec<Vec<LogComplex>>, ExprError> {
    asts.iter().map(|a| eval_grad(a, point).map(|(_, g)| g)).collect()
}

//! Command-line surface: argument parsing, dispatch and report emission.

use crate::csverify::{cs_table, cs_table_csv, falsification, CSStructure, CsAnalyzer};
use crate::grid::{coarse_count_capped, zeros_in_ball, Verdict};
use crate::maps::{builtin, from_config, from_exprs, mu_estimate, CSParams, EntireMap, MapConfig};
use crate::persist::{barcode0, barcode_of_grid, count_long_bars, stability_check};
use crate::taylor::{all_bounds, tau_bound};
use crate::zeros::tau;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;
use serde_json::{json, Value};
use std::io::Write;

pub const REPORT_SCHEMA: &str = "coarse-bezout/report/v1";
pub const THREADS_ENV: &str = "COARSE_BEZOUT_THREADS";

#[derive(Debug, Parser)]
#[command(name = "coarse-bezout", version, about = "Coarse zero counts of entire maps")]
pub struct Cli {
    #[command(subcommand)]
    pub verb: Verb,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Json,
    Csv,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct Common {
    /// `builtin:NAME`, `expr:E1;E2;...` or a path to a map-config JSON file
    #[arg(long)]
    pub map: Option<String>,
    /// JSON object of builtin parameters
    #[arg(long)]
    pub params: Option<String>,
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long, allow_hyphen_values = true)]
    pub r: Option<f64>,
    #[arg(long, allow_hyphen_values = true)]
    pub delta: Option<f64>,
    #[arg(long, default_value_t = 2.0, allow_hyphen_values = true)]
    pub a: f64,
    #[arg(long, default_value_t = 256)]
    pub res: usize,
    /// refinement cap per axis for `count`
    #[arg(long)]
    pub max_res: Option<usize>,
    #[arg(long, value_enum)]
    pub format: Option<Format>,
    #[arg(long, allow_hyphen_values = true)]
    pub log2mu: Option<f64>,
    #[arg(long)]
    #[serde(skip)]
    pub output: Option<String>,
    #[arg(long)]
    pub strict: bool,
    #[arg(long)]
    #[serde(skip)]
    pub threads: Option<usize>,
}

#[derive(Debug, Subcommand)]
pub enum Verb {
    /// Components of {|f| <= delta} in B_r containing zeros
    Count(Common),
    /// Zeros with multiplicity inside islands
    Tau(Common),
    /// 0-dimensional sublevel barcode of |f| on B_r
    Barcode(Common),
    /// Sampled maximum modulus; --res is the sample budget
    Mu(Common),
    /// Taylor-degree bounds for zeta, tau and zeta_d
    BezoutBound(Common),
    /// Structural table for the Cornalba-Shiffman map
    CsVerify {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "pow:1,1")]
        c_spec: String,
        /// comma-separated radii; default 2^4 .. 2^30
        #[arg(long, value_delimiter = ',')]
        radii: Vec<f64>,
    },
    /// Barcode stability between --map and --map2
    Stability {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        map2: String,
        #[arg(long)]
        c: f64,
        #[arg(long)]
        eps: f64,
    },
}

#[derive(Debug)]
enum Failure {
    Validation(String),
    Runtime(String),
}

impl<E: std::error::Error> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure::Runtime(e.to_string())
    }
}

fn invalid<T>(msg: impl Into<String>) -> Result<T, Failure> {
    Err(Failure::Validation(msg.into()))
}

struct Outcome {
    verb: &'static str,
    config: Value,
    result: Value,
    verdicts: Vec<Verdict>,
    csv: Option<String>,
    unconverged: bool,
}

pub fn resolve_map(spec: &str, n: Option<usize>, params: Option<&str>) -> Result<EntireMap, String> {
    let params: Value = match params {
        Some(p) => serde_json::from_str(p).map_err(|e| format!("--params: {e}"))?,
        None => Value::Null,
    };
    if let Some(name) = spec.strip_prefix("builtin:") {
        builtin(name, n.unwrap_or(1), &params).map_err(|e| e.to_string())
    } else if let Some(src) = spec.strip_prefix("expr:") {
        let comps: Vec<String> = src.split(';').map(|s| s.trim().to_string()).filter(|s| !s.is_empty()).collect();
        from_exprs(&comps, n.unwrap_or(comps.len())).map_err(|e| e.to_string())
    } else {
        let text = std::fs::read_to_string(spec).map_err(|e| format!("{spec}: {e}"))?;
        let cfg: MapConfig = serde_json::from_str(&text).map_err(|e| format!("{spec}: {e}"))?;
        from_config(&cfg).map_err(|e| e.to_string())
    }
}

fn need_map(c: &Common) -> Result<EntireMap, Failure> {
    let Some(spec) = &c.map else { return invalid("--map is required") };
    resolve_map(spec, c.n, c.params.as_deref()).map_err(Failure::Validation)
}

fn need_r(c: &Common) -> Result<f64, Failure> {
    match c.r {
        None => invalid("--r is required"),
        Some(r) if !(r > 0.0 && r.is_finite()) => invalid("r must be positive"),
        Some(r) => Ok(r),
    }
}

fn need_delta(c: &Common) -> Result<f64, Failure> {
    match c.delta {
        None => invalid("--delta is required"),
        Some(d) => Ok(d),
    }
}

fn validate(c: &Common) -> Result<(), Failure> {
    if let Some(d) = c.delta {
        if !(d > 0.0 && d.is_finite()) {
            return invalid("delta must be positive");
        }
    }
    if let Some(r) = c.r {
        if !(r > 0.0 && r.is_finite()) {
            return invalid("r must be positive");
        }
    }
    if !(c.a > 1.0 && c.a.is_finite()) {
        return invalid("a must be greater than 1");
    }
    if c.res < 2 {
        return invalid("res must be at least 2");
    }
    Ok(())
}

fn base_config(c: &Common, map: Option<&EntireMap>) -> Value {
    let mut v = serde_json::to_value(c).unwrap();
    v["map"] = map.map(|m| serde_json::to_value(&m.config).unwrap()).unwrap_or(Value::Null);
    v.as_object_mut().unwrap().remove("params");
    v
}

/// log2 mu(f, a r): explicit value or the map's analytic upper bound.
fn log2_mu_ar(c: &Common, map: &EntireMap, r: f64) -> Result<Option<(f64, &'static str)>, Failure> {
    if let Some(m) = c.log2mu {
        return Ok(Some((m, "given")));
    }
    Ok(map.log2_mu_upper(c.a * r).map(|m| (m, "analytic upper bound")))
}

fn run_count(c: &Common) -> Result<Outcome, Failure> {
    let (map, r, delta) = (need_map(c)?, need_r(c)?, need_delta(c)?);
    if map.n > 2 {
        return invalid("count supports n <= 2");
    }
    let zeros = zeros_in_ball(&map, r)?;
    let (mut rep, snap) = coarse_count_capped(&map, &zeros, r, delta, c.res, c.max_res.unwrap_or(usize::MAX))?;
    let n_delta = count_long_bars(&barcode_of_grid(&snap.grid), delta);
    rep.n_delta = Some(n_delta);
    rep.verdicts
        .push(Verdict::new("zeta_le_n_delta", rep.zeta <= n_delta, format!("{} <= {n_delta}", rep.zeta)));
    if let Some((lm, src)) = log2_mu_ar(c, &map, r)? {
        if let Ok(b) = all_bounds(map.n as u32, c.a, lm, delta) {
            rep.verdicts.push(Verdict::new(
                "zeta_le_bezout_bound",
                rep.zeta as u128 <= b.bezout_bound,
                format!("{} <= {} (log2 mu(ar) {lm} {src})", rep.zeta, b.bezout_bound),
            ));
        }
    }
    let verdicts = std::mem::take(&mut rep.verdicts);
    let unconverged = !rep.converged;
    let mut result = serde_json::to_value(&rep)?;
    result.as_object_mut().unwrap().remove("verdicts");
    Ok(Outcome {
        verb: "count",
        config: base_config(c, Some(&map)),
        result,
        verdicts,
        csv: None,
        unconverged,
    })
}

fn run_tau(c: &Common) -> Result<Outcome, Failure> {
    let (map, r, delta) = (need_map(c)?, need_r(c)?, need_delta(c)?);
    if map.n != 1 {
        return invalid("tau supports n = 1");
    }
    let rep = tau(&map, r, delta, c.res)?;
    let mut verdicts = vec![Verdict::new(
        "every_island_has_zero",
        rep.islands_without_zero == 0,
        format!("{} islands without a zero", rep.islands_without_zero),
    )];
    if let Some((lm, src)) = log2_mu_ar(c, &map, r)? {
        if let Ok(b) = tau_bound(1, c.a, lm, delta) {
            verdicts.push(Verdict::new("tau_le_bound", rep.tau as u128 <= b, format!("{} <= {b} (log2 mu(ar) {lm} {src})", rep.tau)));
        }
    }
    let result = serde_json::to_value(&rep)?;
    Ok(Outcome { verb: "tau", config: base_config(c, Some(&map)), result, verdicts, csv: None, unconverged: false })
}

fn run_barcode(c: &Common) -> Result<Outcome, Failure> {
    let (map, r) = (need_map(c)?, need_r(c)?);
    if map.n > 2 {
        return invalid("barcode supports n <= 2");
    }
    let bc = barcode0::<f64>(&map, r, c.res)?;
    let mut result = json!({ "bars": bc.bars, "total": bc.total(), "infinite": bc.infinite() });
    if let Some(d) = c.delta {
        result["n_delta"] = json!(count_long_bars(&bc, d));
    }
    let csv = Some(bc.to_csv());
    Ok(Outcome { verb: "barcode", config: base_config(c, Some(&map)), result, verdicts: vec![], csv, unconverged: false })
}

fn run_mu(c: &Common) -> Result<Outcome, Failure> {
    let (map, r) = (need_map(c)?, need_r(c)?);
    let rep = mu_estimate(&map, r, c.res)?;
    let mut verdicts = vec![];
    if let Some(u) = rep.log2_mu_upper {
        verdicts.push(Verdict::new("sample_below_upper", rep.log2_mu_lower <= u, format!("{} <= {u}", rep.log2_mu_lower)));
    }
    Ok(Outcome {
        verb: "mu",
        config: base_config(c, Some(&map)),
        result: serde_json::to_value(&rep)?,
        verdicts,
        csv: None,
        unconverged: false,
    })
}

fn run_bezout(c: &Common) -> Result<Outcome, Failure> {
    let delta = need_delta(c)?;
    let (n, lm, map) = match (c.log2mu, &c.map) {
        (Some(lm), _) => (c.n.unwrap_or(1), lm, None),
        (None, Some(_)) => {
            let map = need_map(c)?;
            let r = need_r(c)?;
            let Some(lm) = map.log2_mu_upper(c.a * r) else {
                return invalid("map has no analytic mu bound; pass --log2mu");
            };
            (map.n, lm, Some(map))
        }
        (None, None) => return invalid("--log2mu or --map with --r is required"),
    };
    if n == 0 {
        return invalid("n must be at least 1");
    }
    let b = all_bounds(n as u32, c.a, lm, delta).map_err(|e| Failure::Validation(e.to_string()))?;
    Ok(Outcome {
        verb: "bezout-bound",
        config: base_config(c, map.as_ref()),
        result: serde_json::to_value(&b)?,
        verdicts: vec![],
        csv: None,
        unconverged: false,
    })
}

fn run_cs_verify(c: &Common, spec: &str, radii: &[f64]) -> Result<Outcome, Failure> {
    let delta = need_delta(c)?;
    let params = CSParams::from_spec(spec).map_err(|e| Failure::Validation(e.to_string()))?;
    let radii: Vec<f64> = if radii.is_empty() { (4..=30).map(|k| 2f64.powi(k)).collect() } else { radii.to_vec() };
    if radii.iter().any(|&r| !(r >= 2.0 && r.is_finite())) {
        return invalid("radii must be at least 2");
    }
    let rows = cs_table(&radii, delta, &params)?;
    let an = CsAnalyzer::new(&params, delta)?;
    let mut brackets = Vec::new();
    let mut verdicts = Vec::new();
    for &r in &radii {
        let b = an.bracket(r)?;
        verdicts.extend(b.verdicts.iter().map(|v| Verdict::new(&format!("r={r}: {}", v.name), v.holds, v.detail.clone())));
        brackets.push(b);
    }
    let fals = falsification(&params, 1.0, 1.0, 10).ok();
    let mut config = base_config(c, None);
    config["c_spec"] = json!(params.spec_string());
    config["radii"] = json!(radii);
    let result = json!({
        "structure": CSStructure::new(&params, delta)?,
        "rows": rows,
        "brackets": brackets,
        "jacobian_falsification": fals,
    });
    Ok(Outcome { verb: "cs-verify", config, result, verdicts, csv: Some(cs_table_csv(&rows)), unconverged: false })
}

fn run_stability(c: &Common, map2: &str, cc: f64, eps: f64) -> Result<Outcome, Failure> {
    let (f, r) = (need_map(c)?, need_r(c)?);
    let g = resolve_map(map2, c.n, c.params.as_deref()).map_err(Failure::Validation)?;
    if !(cc > 0.0 && eps > 0.0) {
        return invalid("c and eps must be positive");
    }
    let rep = stability_check(&f, &g, cc, eps, r, c.res)?;
    let mut config = base_config(c, Some(&f));
    config["map2"] = serde_json::to_value(&g.config)?;
    config["c"] = json!(cc);
    config["eps"] = json!(eps);
    Ok(Outcome {
        verb: "stability",
        config,
        verdicts: vec![rep.verdict.clone()],
        result: serde_json::to_value(&rep)?,
        csv: None,
        unconverged: false,
    })
}

/// Flat CSV of the scalar fields of a JSON object.
fn scalar_csv(v: &Value) -> String {
    let Some(obj) = v.as_object() else { return String::new() };
    let cols: Vec<(&String, &Value)> = obj.iter().filter(|(_, x)| !x.is_object() && !x.is_array()).collect();
    let head: Vec<&str> = cols.iter().map(|(k, _)| k.as_str()).collect();
    let row: Vec<String> = cols
        .iter()
        .map(|(_, x)| match x {
            Value::String(s) => s.clone(),
            Value::Null => String::new(),
            other => other.to_string(),
        })
        .collect();
    format!("{}\n{}\n", head.join(","), row.join(","))
}

fn dispatch(verb: &Verb) -> Result<(Outcome, &Common), Failure> {
    let c = match verb {
        Verb::Count(c) | Verb::Tau(c) | Verb::Barcode(c) | Verb::Mu(c) | Verb::BezoutBound(c) => c,
        Verb::CsVerify { common, .. } | Verb::Stability { common, .. } => common,
    };
    validate(c)?;
    let threads = match c.threads {
        Some(t) => Some(t),
        None => std::env::var(THREADS_ENV).ok().and_then(|s| s.parse().ok()),
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.unwrap_or(0))
        .build()
        .map_err(|e| Failure::Runtime(e.to_string()))?;
    let out = pool.install(|| match verb {
        Verb::Count(c) => run_count(c),
        Verb::Tau(c) => run_tau(c),
        Verb::Barcode(c) => run_barcode(c),
        Verb::Mu(c) => run_mu(c),
        Verb::BezoutBound(c) => run_bezout(c),
        Verb::CsVerify { common, c_spec, radii } => run_cs_verify(common, c_spec, radii),
        Verb::Stability { common, map2, c, eps } => run_stability(common, map2, *c, *eps),
    })?;
    Ok((out, c))
}

fn render(out: &Outcome, format: Format) -> String {
    match format {
        Format::Csv => out.csv.clone().unwrap_or_else(|| scalar_csv(&out.result)),
        Format::Json => {
            let report = json!({
                "schema": REPORT_SCHEMA,
                "tool_version": env!("CARGO_PKG_VERSION"),
                "verb": out.verb,
                "config": out.config,
                "result": out.result,
                "verdicts": out.verdicts,
                "all_verdicts_hold": out.verdicts.iter().all(|v| v.holds),
                "converged": !out.unconverged,
            });
            let mut s = serde_json::to_string_pretty(&report).unwrap();
            s.push('\n');
            s
        }
    }
}

/// Runs the tool on `argv` (including the program name) and returns the exit code.
pub fn run<I, S>(argv: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let (out, c) = match dispatch(&cli.verb) {
        Ok(x) => x,
        Err(Failure::Validation(m)) => {
            eprintln!("error: {m}");
            return 2;
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("error: {m}");
            return 1;
        }
    };
    let default = if out.verb == "cs-verify" { Format::Csv } else { Format::Json };
    let text = render(&out, c.format.unwrap_or(default));
    let written = match &c.output {
        Some(p) => std::fs::write(p, &text),
        None => std::io::stdout().lock().write_all(text.as_bytes()),
    };
    if let Err(e) = written {
        eprintln!("error: {e}");
        return 1;
    }
    if c.strict && out.unconverged {
        eprintln!("error: not converged at the resolution cap");
        return 3;
    }
    0
}

//! Coarse zero counting for entire maps `C^n -> C^m`.

pub mod cli;
pub mod csverify;
pub mod expr;
pub mod grid;
pub mod persist;
pub mod taylor;
pub mod maps;
pub mod xnum;
pub mod zeros;

pub use maps::{CSParams, EntireMap};
pub use xnum::LogComplex;

/// Real scalar used for sampled fields and barcodes.
pub trait Scalar:
    num_traits::Float + num_traits::FromPrimitive + Send + Sync + std::fmt::Debug + std::fmt::Display + std::fmt::LowerExp + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

pub type SublevelGrid64 = grid::SublevelGrid<f64>;
pub type SublevelGrid32 = grid::SublevelGrid<f32>;
pub type Barcode64 = persist::Barcode<f64>;
pub type Barcode32 = persist::Barcode<f32>;

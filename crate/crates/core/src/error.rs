//! Error type shared across the toolkit.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed NIfTI header: {0}")]
    MalformedHeader(String),

    #[error("unsupported NIfTI datatype code {0}")]
    UnsupportedDatatype(i16),

    #[error("expected a 3D volume, header declares dim[0] = {0}")]
    Dimensionality(i16),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("degenerate input: {0}")]
    DegenerateInput(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("missing volume for participant {0}")]
    MissingVolume(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("empty selection: {0}")]
    EmptySelection(String),

    #[error("normative cell unusable for age {age}, sex {sex} (n < 2)")]
    UnusableCell { age: u32, sex: String },

    #[error("age {0} falls outside every configured age bin")]
    BinCoverage(u32),

    #[error("invalid scale factor k = {0}; k must be > 0")]
    InvalidK(f64),

    #[error("configuration error: {0}")]
    Config(String),
}

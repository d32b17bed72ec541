use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DixError {
    #[error("domain error: {0}")]
    Domain(String),

    /// The manifold model itself misbehaves (e.g. an indefinite fundamental tensor).
    #[error("model error: {message}; eigenvalues {eigenvalues:?}")]
    Model { message: String, eigenvalues: Vec<f64> },

    #[error("integration error at t = {t}: {message}")]
    Integration { t: f64, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("initialization error: no usable anchor for t in [{t_lo}, {t_hi}]")]
    Initialization { t_lo: f64, t_hi: f64 },

    #[error("solver failure in block {block} (r in [{r_lo}, {r_hi}]): {message}")]
    Solver { block: usize, r_lo: f64, r_hi: f64, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("degenerate metric at z = {z:?}, t = {t}: focal point")]
    DegenerateMetric { z: Vec<f64>, t: f64 },

    #[error("data hygiene violation: {0}")]
    Hygiene(String),

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for DixError {
    fn from(e: std::io::Error) -> Self {
        DixError::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, DixError>;

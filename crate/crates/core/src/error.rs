use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },
    #[error("matrix is not symmetric: |a_ij - a_ji| = {deviation:e} at ({row}, {col})")]
    NotSymmetric {
        row: usize,
        col: usize,
        deviation: f64,
    },
    #[error("{context}: need at least {needed} samples, got {got}")]
    TooFewSamples {
        context: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("{name} = {value} is outside [{min}, {max}]")]
    OutOfRange {
        name: &'static str,
        value: usize,
        min: usize,
        max: usize,
    },
    #[error("invalid parameter {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("degenerate neighbour ratios: {0}")]
    DegenerateRatios(String),
    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),
    #[error("label {label} out of range for {classes} classes")]
    LabelOutOfRange { label: usize, classes: usize },
    #[error("forward cache does not match the requested segment")]
    CacheMismatch,
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    Divergence { epoch: usize, batch: usize },
    #[error("attack produced a non-finite loss at step {step}")]
    AttackNonFinite { step: usize },
    #[error("infeasible class layout: {0}")]
    InfeasibleMargin(String),
    #[error("profile does not match model: {0}")]
    ProfileMismatch(String),
    #[error("bad magic bytes: expected \"{}\", found {found:02x?}", magic_str(expected))]
    BadMagic { expected: [u8; 4], found: [u8; 4] },
    #[error("truncated data: expected {expected} bytes, got {got}")]
    Truncated { expected: usize, got: usize },
    #[error("{extra} trailing bytes after payload")]
    TrailingBytes { extra: usize },
}

pub type Result<T> = core::result::Result<T, Error>;

fn magic_str(m: &[u8; 4]) -> alloc::string::String {
    m.iter().map(|&b| if b.is_ascii_graphic() { b as char } else { '?' }).collect()
}

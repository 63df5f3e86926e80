use alloc::string::String;

/// Errors raised by the numerical engine.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("contract violation: {0}")]
    Contract(String),

    /// A non-finite value showed up in a loss or gradient. Parameters are left untouched.
    #[error("divergence: non-finite {0}")]
    Divergence(String),

    /// A variance-bound check was requested outside the per-sample regime.
    #[error("regime error: {0}")]
    Regime(String),

    #[error("variance bound violated at layer {layer}: lower {lower:e}, var_dw {var_dw:e}, upper {upper:e}")]
    BoundViolation {
        layer: usize,
        lower: f64,
        var_dw: f64,
        upper: f64,
    },
}

pub type Result<T, E = Error> = core::result::Result<T, E>;

pub(crate) fn shape_err(what: &str, got: &[usize], expected: &[usize]) -> Error {
    Error::Shape(alloc::format!(
        "{what}: got {got:?}, expected {expected:?}"
    ))
}

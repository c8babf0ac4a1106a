use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument is outside the domain of the operation (e.g. a
    /// componentwise subtraction that would go negative, or a weight
    /// requested for indices that do not nest).
    #[error("domain error: {0}")]
    Domain(String),

    /// Mismatched vector/grid/component dimensions.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// A Gaussian sample was required for a basis index but not supplied.
    #[error("missing sample for basis index {index}")]
    MissingSample { index: u32 },

    /// A quadrature rule could not be constructed or did not converge.
    #[error("quadrature error: {0}")]
    Quadrature(String),

    /// Advective CFL number exceeded the stability limit.
    #[error("CFL violation at t={t}: dt={dt} exceeds stable limit; suggest dt<={suggested_dt}")]
    CflViolation { t: f64, dt: f64, suggested_dt: f64 },

    /// A coefficient field grew past the blow-up threshold.
    #[error("blow-up detected at t={time} in {coeff}: sup={sup} > limit={limit}")]
    Blowup {
        time: f64,
        coeff: String,
        sup: f64,
        limit: f64,
    },

    /// A propagator source requested a coefficient that is not strictly
    /// lower in degree (or is missing from the state).
    #[error("dependency violation: {0}")]
    DependencyViolation(String),

    /// Empty input where at least one element is required.
    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Malformed textual input (multiindex literals, field dumps, ...).
    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

//! Crate-wide error type.
//!
//! Every fallible operation in this crate returns [`Error`]; the variants
//! name the precise contract violation so callers can distinguish "the
//! input is outside the domain" (e.g. [`Error::NotInRemainingSet`]) from
//! "the requested computation exceeds a configured budget" (e.g.
//! [`Error::SearchBudgetExceeded`]).

use thiserror::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors raised by measure construction, integer search, lattice
/// enumeration, and the statistical helpers.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    /// A cylinder digit violates `1 <= y_i <= 2i`.
    #[error("invalid cylinder code: digit {digit} at stage {stage} outside 1..={max}")]
    InvalidCode { digit: u32, stage: usize, max: u32 },

    /// The queried point falls into a removed gap before the requested depth.
    #[error("point leaves the retained set at stage {stage}")]
    NotInRemainingSet { stage: usize },

    /// A scan ratio degenerated (zero mass where positive mass is required).
    #[error("degenerate scan: {0}")]
    DegenerateScan(String),

    /// Direct witness search would enumerate more candidates than allowed.
    #[error("witness search budget exceeded: {candidates} candidate vectors > {budget}")]
    SearchBudgetExceeded { candidates: u128, budget: u128 },

    /// Lattice enumeration box exceeds the configured point budget.
    #[error("enumeration box of {points} points exceeds {budget}")]
    EnumerationOverflow { points: u128, budget: u128 },

    /// Continued-fraction expansion did not reach the required height
    /// within the depth cap.
    #[error("continued fraction did not converge within {max_depth} terms")]
    NonConvergence { max_depth: usize },

    /// Basis views drifted away from unit determinant.
    #[error("numerical blowup: |log det| = {drift:e} exceeds {limit:e}")]
    NumericalBlowup { drift: f64, limit: f64 },

    /// Probabilities are negative or do not sum to one.
    #[error("invalid distribution: {0}")]
    InvalidDistribution(String),

    /// Too few observations to populate the joint block alphabet.
    #[error("insufficient data: {observed} windows for {distinct} distinct cells")]
    InsufficientData { observed: usize, distinct: usize },

    /// The operation is defined only for another flow family.
    #[error("unsupported flow family: {0}")]
    UnsupportedFamily(String),

    /// Regression input collapses to a single abscissa.
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),

    /// A dimension argument is outside the supported range.
    #[error("unsupported dimension {dim}: {reason}")]
    UnsupportedDimension { dim: usize, reason: String },
}

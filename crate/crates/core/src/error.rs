//! Error types shared across the crate.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// An input lies outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// Adaptive quadrature exhausted its panel budget before reaching the
    /// requested relative tolerance.
    #[error("quadrature tolerance not met: requested {requested:e}, achieved {achieved:e} after {panels} panels")]
    ToleranceNotMet {
        requested: f64,
        achieved: f64,
        panels: usize,
    },

    /// The post-selection region clipped to the physical intensity range has
    /// zero measure.
    #[error("empty post-selection region: {0}")]
    EmptyRegion(String),

    /// A union of regions mixed key and test bases.
    #[error("mixed bases in region union")]
    MixedBasis,

    /// Matrix operands of incompatible photon number / dimension.
    #[error("dimension mismatch: {0} vs {1}")]
    DimensionMismatch(usize, usize),

    /// A weighted Fock norm underflowed, so the normalized matrix is
    /// meaningless.
    #[error("degenerate Fock matrix: norm {norm:e} underflows for n = {n}")]
    DegenerateFock { n: usize, norm: f64 },

    /// The linear program admits no feasible point. In protocol terms the
    /// observations are inconsistent and the run aborts.
    #[error("linear program infeasible: {0}")]
    Infeasible(String),

    /// The LP solver failed for numerical reasons.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Malformed configuration.
    #[error("config error: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, Error>;

//! Crate-wide error type.

use alloc::string::String;
use core::fmt;

/// Convenience alias used throughout the crate.
pub type Result<T> = core::result::Result<T, Error>;

/// Everything that can go wrong in construction, integration or solving.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// A constructor was handed values violating a documented invariant.
    InvalidParameter(String),
    /// Two objects with incompatible spatial/phase dimensions were combined.
    DimensionMismatch(String),
    /// The singular weight was evaluated at zero separation inside the
    /// right-hand side; the caller must merge the offending pair first.
    CollisionAtSingularity { i: usize, j: usize, time: f64 },
    /// The adaptive step size underflowed below `1e-14 * t_end`.
    StiffnessFailure { time: f64, dt: f64 },
    /// A density evaluator produced non-finite or negative values, or the
    /// total mass did not come out positive and finite.
    QuadratureFailure(String),
    /// Quantization found no mass anywhere in the declared support box.
    EmptySupport,
    /// A merge cluster was out of range, not distinct, or a singleton.
    InvalidCluster(String),
    /// A trajectory has too few snapshots for a quadrature-based diagnostic.
    TooFewSnapshots { found: usize, need: usize },
    /// The declared initial support radius is smaller than the actual one.
    SupportExceedsRadius { declared: f64, actual: f64 },
    /// An atom index does not exist in the ensemble.
    InvalidAtom { index: usize, len: usize },
    /// The brute-force metric oracle refuses instances this large.
    OracleSupportTooLarge { size: usize, max: usize },
    /// The LP/flow solver failed to certify optimality. Should not occur.
    SolverFault(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::InvalidParameter(msg) => write!(f, "invalid parameter: {msg}"),
            Error::DimensionMismatch(msg) => write!(f, "dimension mismatch: {msg}"),
            Error::CollisionAtSingularity { i, j, time } => write!(
                f,
                "particles {i} and {j} coincide at t = {time} under a singular weight; \
                 merge them before evaluating the right-hand side"
            ),
            Error::StiffnessFailure { time, dt } => {
                write!(f, "step size underflow (dt = {dt}) at t = {time}")
            }
            Error::QuadratureFailure(msg) => write!(f, "quadrature failure: {msg}"),
            Error::EmptySupport => write!(f, "initial datum has empty support"),
            Error::InvalidCluster(msg) => write!(f, "invalid merge cluster: {msg}"),
            Error::TooFewSnapshots { found, need } => {
                write!(f, "trajectory has {found} snapshots, need at least {need}")
            }
            Error::SupportExceedsRadius { declared, actual } => write!(
                f,
                "initial support radius {actual} exceeds the declared bound {declared}"
            ),
            Error::InvalidAtom { index, len } => {
                write!(f, "atom index {index} out of range for {len} particles")
            }
            Error::OracleSupportTooLarge { size, max } => {
                write!(f, "oracle refuses union support of {size} points (max {max})")
            }
            Error::SolverFault(msg) => write!(f, "solver fault: {msg}"),
        }
    }
}

impl core::error::Error for Error {}

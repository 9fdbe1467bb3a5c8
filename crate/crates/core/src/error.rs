use std::fmt;

/// Errors surfaced by the solver framework.
#[derive(Debug, Clone, PartialEq)]
pub enum Error {
    /// Constraint or sample index out of range.
    IndexOutOfRange { what: &'static str, index: usize, len: usize },
    /// A vector had the wrong length for its role.
    DimensionMismatch { what: &'static str, expected: usize, got: usize },
    /// Invalid domain or configuration value.
    InvalidInput(String),
    /// The short-term feasible set is empty for some state.
    ProjectionInfeasible,
    /// A short-term solver promised multipliers but did not return them.
    MissingMultipliers,
    /// A numerical routine failed to converge within its iteration cap.
    NonConvergence(String),
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::IndexOutOfRange { what, index, len } => {
                write!(f, "{what} index {index} out of range (len {len})")
            }
            Error::DimensionMismatch { what, expected, got } => {
                write!(f, "{what}: expected length {expected}, got {got}")
            }
            Error::InvalidInput(msg) => write!(f, "invalid input: {msg}"),
            Error::ProjectionInfeasible => {
                write!(f, "short-term feasible set is empty (projection infeasible)")
            }
            Error::MissingMultipliers => {
                write!(f, "short-term solver contract promised multipliers but none were returned")
            }
            Error::NonConvergence(msg) => write!(f, "non-convergence: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

use std::fmt;

/// Error type shared across the library.
///
/// `Usage`-class errors mean the caller passed something malformed and can fix
/// the call; the remaining variants report numerical trouble discovered while
/// computing (blow-up, rank deficiency, failed sampling).
#[derive(Debug, Clone)]
pub enum Error {
    /// Invalid argument or configuration.
    Usage(String),
    /// Shape or dimension mismatch between inputs.
    Dimension {
        context: &'static str,
        expected: usize,
        found: usize,
    },
    /// A non-finite value showed up where a finite one is required.
    NonFinite(String),
    /// State norm escaped the blow-up guard during integration.
    Divergence { time: f64, norm: f64 },
    /// Rejection sampling could not produce the requested points.
    Sampling(String),
    /// Gram matrix is singular beyond what the regularized solve can absorb.
    RankDeficient { condition: f64, residual: f64 },
    /// Invalid mesh specification.
    Mesh(String),
    /// Malformed serialized data.
    Parse(String),
}

impl Error {
    /// True for errors the caller can fix by changing arguments or config.
    pub fn is_usage(&self) -> bool {
        matches!(
            self,
            Error::Usage(_) | Error::Dimension { .. } | Error::Mesh(_) | Error::Parse(_)
        )
    }
}

impl fmt::Display for Error {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Error::Usage(msg) => write!(f, "usage: {msg}"),
            Error::Dimension {
                context,
                expected,
                found,
            } => write!(f, "dimension mismatch in {context}: expected {expected}, found {found}"),
            Error::NonFinite(what) => write!(f, "non-finite value: {what}"),
            Error::Divergence { time, norm } => {
                write!(f, "state diverged at t = {time} (norm {norm:.3e})")
            }
            Error::Sampling(msg) => write!(f, "sampling failed: {msg}"),
            Error::RankDeficient {
                condition,
                residual,
            } => write!(
                f,
                "Gram matrix is rank deficient beyond regularization \
                 (condition {condition:.3e}, solve residual {residual:.3e}); \
                 use more data or a smaller dictionary"
            ),
            Error::Mesh(msg) => write!(f, "mesh: {msg}"),
            Error::Parse(msg) => write!(f, "parse: {msg}"),
        }
    }
}

impl std::error::Error for Error {}

pub type Result<T> = std::result::Result<T, Error>;

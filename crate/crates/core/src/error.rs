use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("index out of range: {what} {index} (limit {limit})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid data: {0}")]
    InvalidData(String),

    #[error("non-finite objective: {0}")]
    NonFinite(String),

    #[error("nonpositive Dirichlet parameter at index {index}: {value}")]
    NonPositiveAlpha { index: usize, value: f64 },

    #[error("block {block} not positive definite after jitter up to {max_jitter:e}")]
    NotPositiveDefinite { block: String, max_jitter: f64 },

    #[error("all {0} restarts failed")]
    AllRestartsFailed(usize),
}

impl Error {
    /// Errors caused by the numerical procedure rather than by the inputs.
    pub fn is_numeric(&self) -> bool {
        matches!(
            self,
            Error::NonFinite(_)
                | Error::NonPositiveAlpha { .. }
                | Error::NotPositiveDefinite { .. }
                | Error::AllRestartsFailed(_)
        )
    }
}

use alloc::string::String;

pub type Result<T, E = Error> = core::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch for {what}: expected {expected}, found {found}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        found: usize,
    },
    #[error("non-finite loss in batch {batch}")]
    NonFiniteLoss { batch: usize },
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("matrix is not positive definite after jitter {jitter:e}")]
    NotPositiveDefinite { jitter: f64 },
    #[error("empty input: {0}")]
    Empty(&'static str),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn check_len(what: &'static str, expected: usize, found: usize) -> Result<()> {
        if expected == found {
            Ok(())
        } else {
            Err(Error::DimensionMismatch {
                what,
                expected,
                found,
            })
        }
    }
}

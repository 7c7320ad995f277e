use alloc::boxed::Box;
use alloc::string::String;
use thiserror::Error;

pub type Result<T> = core::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("too few exceedances: {got} available, {need} required")]
    TooFewExceedances { got: usize, need: usize },
    #[error("degenerate sample: {0}")]
    Degenerate(String),
    #[error("no convergence: {0}")]
    NoConvergence(String),
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),
    #[error("no spatial structure in the empirical variogram")]
    NoSpatialStructure,
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("cell ({x}, {y}) is masked")]
    MaskedCell { x: usize, y: usize },
    #[error("cell ({x}, {y}): {source}")]
    AtCell {
        x: usize,
        y: usize,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn at_cell(self, x: usize, y: usize) -> Self {
        Error::AtCell { x, y, source: Box::new(self) }
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::invalid(msg)
}

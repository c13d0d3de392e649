use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid sampling distribution: {0}")]
    Distribution(String),
    #[error("cannot split {0} observations into train and validation sets")]
    Split(usize),
    #[error("shape {0:?} is too large for atom enumeration (sum of dims > {1})")]
    TooLarge(Vec<usize>, usize),
    #[error("linear program did not converge after {0} pivots")]
    LpNonConvergence(usize),
    #[error("parse error: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

//! Low-rank tensor completion under a max-qnorm constraint.

pub mod completion;
pub mod error;
pub mod experiment;
pub mod io;
pub mod norms;
pub mod observation;
pub mod oracle;
pub mod par;
pub mod seed;
pub mod solvers;
pub mod tensor;

pub use error::{Error, Result};
pub use norms::QnormBound;
pub use observation::{ObservationSet, SamplingDistribution};
pub use solvers::{Method, SolverParams, SolverState};
pub use tensor::{CPFactors, DenseTensor, FactorKind, Index, Shape};

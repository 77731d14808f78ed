pub mod autodiff;
pub mod causal;
pub mod checkpoint;
pub mod env;
pub mod error;
pub mod harness;
pub mod kernels;
pub mod metrics;
pub mod model;
pub mod nn;
pub mod optim;
pub mod seeding;
pub mod tensor;
pub mod train;

pub use error::{Error, Result};
pub use tensor::Tensor;

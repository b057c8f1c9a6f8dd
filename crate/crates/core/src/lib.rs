pub mod baselines;
pub mod diffcore;
pub mod envs;
pub mod error;
pub mod harness;
pub mod learner;
pub mod policy;
pub mod theory;

pub use error::{Error, Result};

pub mod corpus;
pub mod error;
pub mod harness;
pub mod lm;
pub mod metrics;
pub mod scoring;
pub mod synthetic;
pub mod transform;

pub use error::{Error, Result};

pub mod error;
pub mod linalg;
pub mod model;
pub mod precision;
pub mod decomposition;
pub mod synth;
pub mod metrics;
pub mod harness;

pub use error::{Error, Result};

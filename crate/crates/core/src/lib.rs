pub mod checkpoint;
pub mod config;
pub mod datasets;
pub mod eval;
pub mod error;
pub mod generator;
pub mod glo;
pub mod imle;
pub mod linalg;
pub mod loss;
pub mod nn;
pub mod pipeline;
pub mod rng;
pub mod synthesis;

pub use error::{Error, Result};

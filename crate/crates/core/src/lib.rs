pub mod augment;
pub mod baselines;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod forest;
pub mod linalg;
pub mod nn;
pub mod optimize;
pub mod rfe;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use linalg::{Matrix, RandomSource};

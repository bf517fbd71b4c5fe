//! Local surrogate explanations for multi-modal (report text + image
//! region) classifiers, and tools to score them against expert annotations.

pub mod cli;
pub mod error;
pub mod eval;
pub mod explain;
pub mod fixture;
pub mod io;
pub mod kernel;
pub mod model;
pub mod perturb;
pub mod predictor;
pub mod render;
pub mod seed;
pub mod surrogate;

pub const ENGINE_VERSION: &str = env!("CARGO_PKG_VERSION");

pub mod conditioning;
pub mod data;
pub mod dsp;
pub mod embeddings;
pub mod error;
pub mod eval;
pub mod model;
pub mod numerics;
pub mod parallel;
pub mod profile;
pub mod training;

pub use error::{Error, Result};

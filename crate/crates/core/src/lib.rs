pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod datapipe;
pub mod error;
pub mod eval;
pub mod gradsuite;
pub mod kernels;
pub mod layers;
pub mod model;
pub mod plantsim;
pub mod probe;
pub mod train;

pub use autodiff::Tensor;
pub use error::{Error, Result};

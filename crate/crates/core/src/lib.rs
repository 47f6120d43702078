pub mod analysis;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod gradsuite;
pub mod graph;
pub mod layers;
pub mod model;
pub mod params;
pub mod rng;
pub mod tensor;
pub mod trainer;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;

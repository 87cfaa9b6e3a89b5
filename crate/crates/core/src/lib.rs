pub mod blocks;
pub mod camera;
pub mod config;
pub mod data;
pub mod gradcheck;
pub mod model;
pub mod error;
pub mod parallel;
pub mod params;
pub mod ppm;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod train;

pub use error::{Result, VsaError};
pub use tape::{Tape, Var};
pub use tensor::{Float, Tensor};

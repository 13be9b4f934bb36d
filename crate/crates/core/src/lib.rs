pub mod alphaselect;
pub mod classifier;
pub mod diffusion;
pub mod error;
pub mod guidance;
pub mod metrics;
pub mod numerics;
pub mod repro;
pub mod theory;
pub mod world;

pub use error::{Error, Result};

//! Fit unsigned distance fields to raw point clouds with level-set
//! projection, then extract open surfaces, normals and upsampled clouds.

pub mod applications;
pub mod diffengine;
pub mod error;
pub mod field;
pub mod fixtures;
pub mod geometry;
pub mod losses;
pub mod mesher;
pub mod metrics;
pub mod parallel;
pub mod sampler;
pub mod trainer;

pub use error::{Error, Result};

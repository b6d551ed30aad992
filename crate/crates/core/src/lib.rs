//! Articulated 3D Gaussian hand models, tiled splatting, and hand-object
//! contact maps.
//!
//! The crate is `no_std` and only needs `alloc`. File formats, images on
//! disk and the command line live in the `graspsplat` companion crate.
#![no_std]

extern crate alloc;

pub mod adam;
pub mod camera;
pub mod contact;
pub mod error;
pub mod gaussian;
pub mod image;
pub mod kinematics;
pub mod loss;
pub mod math;
pub mod metrics;
pub mod pose_fit;
pub mod raster;
pub mod sh;
pub mod skinning;
pub mod spatial;
pub mod synthetic;
pub mod train;

pub use error::{Error, Result};

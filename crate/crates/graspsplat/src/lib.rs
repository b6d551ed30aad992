//! File formats, synthetic fixture export and the command-line pipeline
//! around `graspsplat-core`.

pub mod binfmt;
pub mod commands;
pub mod config;
pub mod error;
pub mod fsio;
pub mod imageio;
pub mod json;
pub mod manifest;
pub mod ply;
pub mod scene;

pub use error::{Error, Result};

//! HDRTV-to-SDRTV training-data synthesis.
//!
//! Colorimetry and baseline tone mapping, 3D LUTs, region-aware
//! supervision targets, a conditioned two-stream network with its own
//! gradients and trainer, and image-quality metrics.

pub mod align;
pub mod colorimetry;
pub mod error;
pub mod image;
pub mod io;
pub mod lut;
pub mod metrics;
pub mod region;
pub mod synthetic;
pub mod synthnet;
pub mod tmo;

pub use error::{Error, Result};
pub use image::{Gamut, Image, Transfer};
pub use lut::Lut3D;
pub use tmo::Tmo;

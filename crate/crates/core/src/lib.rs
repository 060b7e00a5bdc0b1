//! Polarization-filter-array eye imaging toolkit.
//!
//! The signal chain runs raw mosaic -> per-angle channels -> Stokes maps ->
//! intensity/DoLP/AoLP products and model inputs. Around it sit a synthetic
//! polarized eye-scene generator used as ground truth, a SIFT/RANSAC
//! feature-stability matcher, a 9-point affine calibration with a linear
//! stand-in gaze regressor, and the E95/U50E95 tail-error statistics.

pub mod calib;
pub mod dataset;
pub mod demosaic;
pub mod error;
pub mod eval;
pub mod features;
pub mod input;
pub mod mosaic;
pub mod plane;
pub mod render;
pub mod stokes;
pub mod synth;
pub mod tensor;

pub use error::{Error, Result};
pub use plane::Plane;

//! HSV composites of polarization products and PNG output.

use std::f64::consts::PI;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::plane::Plane;
use crate::stokes::{normalize_intensity, PolarizationProducts};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CompositeMode {
    /// Hue = AoLP, saturation = 1, value = DoLP.
    MethodsHsv,
    /// Hue = AoLP, saturation = DoLP, value = gamma-corrected normalized intensity.
    FigureHsv,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    /// Interleaved RGB, row-major.
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn pixel(&self, x: usize, y: usize) -> [u8; 3] {
        let k = 3 * (y * self.width + x);
        [self.data[k], self.data[k + 1], self.data[k + 2]]
    }

    pub fn save_png(&self, path: &Path) -> Result<()> {
        image::save_buffer(
            path,
            &self.data,
            self.width as u32,
            self.height as u32,
            image::ExtendedColorType::Rgb8,
        )
        .map_err(|e| match e {
            image::ImageError::IoError(io) => Error::io(path, io),
            other => Error::io(path, std::io::Error::other(other.to_string())),
        })
    }
}

/// HSV (each in `[0, 1]`, hue wrapping at 1) to RGB in `[0, 1]`.
pub fn hsv_to_rgb(h: f64, s: f64, v: f64) -> [f64; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let sector = (h6.floor() as usize).min(5);
    let f = h6 - sector as f64;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match sector {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

#[inline]
fn quantize(x: f64) -> u8 {
    (255.0 * x.clamp(0.0, 1.0)).round() as u8
}

/// Renders the composite; masked pixels are black.
pub fn render_composite(
    products: &PolarizationProducts,
    mode: CompositeMode,
    gamma: f64,
) -> Result<RgbImage> {
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::NonPositiveGamma(gamma));
    }
    let (w, h) = products.dims();
    let value: Option<Plane> = match mode {
        CompositeMode::MethodsHsv => None,
        CompositeMode::FigureHsv => {
            Some(normalize_intensity(&products.intensity)?.map(|v| v.powf(1.0 / gamma)))
        }
    };
    let mut data = Vec::with_capacity(3 * w * h);
    for k in 0..w * h {
        if !products.mask[k] {
            data.extend_from_slice(&[0, 0, 0]);
            continue;
        }
        let hue = (products.aolp.data()[k] + PI / 2.0) / PI;
        let dolp = products.dolp.data()[k];
        let (s, v) = match &value {
            None => (1.0, dolp),
            Some(val) => (dolp, val.data()[k]),
        };
        data.extend(hsv_to_rgb(hue, s, v).map(quantize));
    }
    Ok(RgbImage {
        width: w,
        height: h,
        data,
    })
}

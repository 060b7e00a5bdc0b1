//! Keypoint matching between sessions: detection, ratio matching and
//! geometric verification.

pub mod matching;
pub mod ransac;
pub mod sift;

use serde::{Deserialize, Serialize};

pub use matching::match_descriptors;
pub use ransac::{
    apply_transform, ransac_verify, MatchReport, PointPair, RansacParams, Transform2x3,
    TransformModel,
};
pub use sift::{detect_and_describe, Descriptor, Keypoint, SiftParams};

use crate::error::{Error, Result};
use crate::plane::Plane;
use crate::render::{render_composite, CompositeMode};
use crate::stokes::{normalize_intensity, PolarizationProducts};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MatchPlane {
    #[default]
    Dolp,
    Aolp,
    Composite,
    Intensity,
}

impl std::str::FromStr for MatchPlane {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "dolp" => Ok(Self::Dolp),
            "aolp" => Ok(Self::Aolp),
            "composite" => Ok(Self::Composite),
            "intensity" => Ok(Self::Intensity),
            other => Err(Error::InvalidParameter(format!("unknown match plane '{other}'"))),
        }
    }
}

/// Turns polarization products into a `[0, 1]` image for keypoint detection.
pub fn match_image(products: &PolarizationProducts, plane: MatchPlane) -> Result<Plane> {
    match plane {
        MatchPlane::Dolp => normalize_intensity(&products.dolp),
        MatchPlane::Intensity => normalize_intensity(&products.intensity),
        MatchPlane::Aolp => Ok(products
            .aolp
            .map(|a| (a + std::f64::consts::FRAC_PI_2) / std::f64::consts::PI)),
        MatchPlane::Composite => {
            let rgb = render_composite(products, CompositeMode::MethodsHsv, 2.2)?;
            let (w, h) = (rgb.width, rgb.height);
            Ok(Plane::from_fn(w, h, |x, y| {
                let p = rgb.pixel(x, y);
                (p[0] as f64 + p[1] as f64 + p[2] as f64) / (3.0 * 255.0)
            }))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MatchParams {
    pub sift: SiftParams,
    pub ratio: f64,
    pub ransac: RansacParams,
}

impl Default for MatchParams {
    fn default() -> Self {
        Self {
            sift: SiftParams::default(),
            ratio: 0.75,
            ransac: RansacParams::default(),
        }
    }
}

/// Matches two detected feature sets and verifies them geometrically.
///
/// Pair sets too small or too degenerate for the transform model yield a
/// report with zero inliers instead of an error.
pub fn match_features(
    a: &[(Keypoint, Descriptor)],
    b: &[(Keypoint, Descriptor)],
    params: &MatchParams,
) -> Result<MatchReport> {
    if !(params.ratio > 0.0 && params.ratio < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "ratio must lie in (0, 1), got {}",
            params.ratio
        )));
    }
    let da: Vec<Descriptor> = a.iter().map(|(_, d)| d.clone()).collect();
    let db: Vec<Descriptor> = b.iter().map(|(_, d)| d.clone()).collect();
    let pairs: Vec<PointPair> = match_descriptors(&da, &db, params.ratio)
        .into_iter()
        .map(|(i, j)| PointPair {
            src: [a[i].0.x, a[i].0.y],
            dst: [b[j].0.x, b[j].0.y],
        })
        .collect();
    match ransac_verify(&pairs, &params.ransac) {
        Err(Error::TooFewMatches { .. }) | Err(Error::DegenerateSample) => {
            Ok(MatchReport::unverified(pairs.len(), params.ransac.seed))
        }
        other => other,
    }
}

/// One report per session image, each matched against `baseline`.
pub fn stability_report(
    baseline: &Plane,
    sessions: &[Plane],
    params: &MatchParams,
) -> Result<Vec<MatchReport>> {
    if sessions.is_empty() {
        return Err(Error::EmptyInput("no session images".into()));
    }
    let base = detect_and_describe(baseline, &params.sift)?;
    sessions
        .iter()
        .map(|s| {
            let feats = detect_and_describe(s, &params.sift)?;
            match_features(&base, &feats, params)
        })
        .collect()
}

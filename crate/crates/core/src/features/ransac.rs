use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TransformModel {
    #[default]
    Similarity,
    Affine,
}

impl TransformModel {
    pub fn min_samples(self) -> usize {
        match self {
            Self::Similarity => 2,
            Self::Affine => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PointPair {
    pub src: [f64; 2],
    pub dst: [f64; 2],
}

/// Row-major 2x3 matrix mapping `src` to `dst`.
pub type Transform2x3 = [[f64; 3]; 2];

pub const IDENTITY: Transform2x3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];

pub fn apply_transform(t: &Transform2x3, p: [f64; 2]) -> [f64; 2] {
    [
        t[0][0] * p[0] + t[0][1] * p[1] + t[0][2],
        t[1][0] * p[0] + t[1][1] * p[1] + t[1][2],
    ]
}

fn residual(t: &Transform2x3, pair: &PointPair) -> f64 {
    let q = apply_transform(t, pair.src);
    (q[0] - pair.dst[0]).hypot(q[1] - pair.dst[1])
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RansacParams {
    pub model: TransformModel,
    pub threshold_px: f64,
    pub max_iters: usize,
    pub seed: u64,
}

impl Default for RansacParams {
    fn default() -> Self {
        Self {
            model: TransformModel::Similarity,
            threshold_px: 3.0,
            max_iters: 2000,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchReport {
    pub n_putative: usize,
    pub n_inliers: usize,
    pub transform: Transform2x3,
    pub inlier_rms_px: f64,
    pub seed: u64,
    /// Indices into the input pairs.
    #[serde(default)]
    pub inliers: Vec<usize>,
}

impl MatchReport {
    /// Report for a pair set too small or degenerate to verify.
    pub fn unverified(n_putative: usize, seed: u64) -> Self {
        Self {
            n_putative,
            n_inliers: 0,
            transform: IDENTITY,
            inlier_rms_px: 0.0,
            seed,
            inliers: Vec::new(),
        }
    }
}

fn fit_similarity(pairs: &[&PointPair]) -> Option<Transform2x3> {
    let n = pairs.len() as f64;
    let mean = |f: fn(&PointPair) -> f64| pairs.iter().map(|p| f(p)).sum::<f64>() / n;
    let (sx, sy) = (mean(|p| p.src[0]), mean(|p| p.src[1]));
    let (dx, dy) = (mean(|p| p.dst[0]), mean(|p| p.dst[1]));
    let (mut num_a, mut num_b, mut den) = (0.0, 0.0, 0.0);
    for p in pairs {
        let (x, y) = (p.src[0] - sx, p.src[1] - sy);
        let (u, v) = (p.dst[0] - dx, p.dst[1] - dy);
        num_a += x * u + y * v;
        num_b += x * v - y * u;
        den += x * x + y * y;
    }
    if den <= 1e-12 {
        return None;
    }
    let (a, b) = (num_a / den, num_b / den);
    Some([
        [a, -b, dx - (a * sx - b * sy)],
        [b, a, dy - (b * sx + a * sy)],
    ])
}

fn fit_affine(pairs: &[&PointPair]) -> Option<Transform2x3> {
    let mut ata = Matrix3::<f64>::zeros();
    let mut atu = Vector3::<f64>::zeros();
    let mut atv = Vector3::<f64>::zeros();
    // Centre for conditioning.
    let n = pairs.len() as f64;
    let cx = pairs.iter().map(|p| p.src[0]).sum::<f64>() / n;
    let cy = pairs.iter().map(|p| p.src[1]).sum::<f64>() / n;
    for p in pairs {
        let r = Vector3::new(p.src[0] - cx, p.src[1] - cy, 1.0);
        ata += r * r.transpose();
        atu += r * p.dst[0];
        atv += r * p.dst[1];
    }
    let scale = ata[(0, 0)] + ata[(1, 1)];
    if ata.determinant().abs() <= 1e-9 * scale.max(1.0).powi(2) {
        return None;
    }
    let inv = ata.try_inverse()?;
    let (u, v) = (inv * atu, inv * atv);
    Some([
        [u[0], u[1], u[2] - u[0] * cx - u[1] * cy],
        [v[0], v[1], v[2] - v[0] * cx - v[1] * cy],
    ])
}

fn fit(model: TransformModel, pairs: &[&PointPair]) -> Option<Transform2x3> {
    let t = match model {
        TransformModel::Similarity => fit_similarity(pairs),
        TransformModel::Affine => fit_affine(pairs),
    }?;
    t.iter().flatten().all(|v| v.is_finite()).then_some(t)
}

fn inliers_of(t: &Transform2x3, pairs: &[PointPair], threshold: f64) -> Vec<usize> {
    pairs
        .iter()
        .enumerate()
        .filter(|(_, p)| residual(t, p) < threshold)
        .map(|(i, _)| i)
        .collect()
}

/// Seeded RANSAC followed by least-squares refits on the consensus set.
pub fn ransac_verify(pairs: &[PointPair], params: &RansacParams) -> Result<MatchReport> {
    let need = params.model.min_samples();
    if pairs.len() < need {
        return Err(Error::TooFewMatches {
            needed: need,
            got: pairs.len(),
        });
    }
    if !(params.threshold_px > 0.0) || params.max_iters == 0 {
        return Err(Error::InvalidParameter(
            "RANSAC needs a positive threshold and at least one iteration".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let mut best: Option<Vec<usize>> = None;
    let mut sample = Vec::with_capacity(need);
    for _ in 0..params.max_iters {
        sample.clear();
        while sample.len() < need {
            let k = rng.random_range(0..pairs.len());
            if !sample.contains(&k) {
                sample.push(k);
            }
        }
        let chosen: Vec<&PointPair> = sample.iter().map(|&k| &pairs[k]).collect();
        let Some(t) = fit(params.model, &chosen) else {
            continue;
        };
        let inl = inliers_of(&t, pairs, params.threshold_px);
        if best.as_ref().is_none_or(|b| inl.len() > b.len()) {
            let all = inl.len() == pairs.len();
            best = Some(inl);
            if all {
                break;
            }
        }
    }
    let Some(mut inliers) = best else {
        return Err(Error::DegenerateSample);
    };
    if inliers.len() < need {
        return Ok(MatchReport {
            inliers: Vec::new(),
            ..MatchReport::unverified(pairs.len(), params.seed)
        });
    }

    let refit = |set: &[usize]| {
        let chosen: Vec<&PointPair> = set.iter().map(|&k| &pairs[k]).collect();
        fit(params.model, &chosen)
    };
    let mut transform = refit(&inliers).ok_or(Error::DegenerateSample)?;
    for _ in 0..5 {
        let next = inliers_of(&transform, pairs, params.threshold_px);
        if next == inliers || next.len() < inliers.len() {
            break;
        }
        let Some(t) = refit(&next) else { break };
        inliers = next;
        transform = t;
    }
    let ss: f64 = inliers
        .iter()
        .map(|&k| residual(&transform, &pairs[k]).powi(2))
        .sum();
    Ok(MatchReport {
        n_putative: pairs.len(),
        n_inliers: inliers.len(),
        transform,
        inlier_rms_px: (ss / inliers.len() as f64).sqrt(),
        seed: params.seed,
        inliers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn similarity(theta: f64, s: f64, tx: f64, ty: f64) -> Transform2x3 {
        let (c, sn) = (s * theta.cos(), s * theta.sin());
        [[c, -sn, tx], [sn, c, ty]]
    }

    #[test]
    fn too_few_for_affine() {
        let p = PointPair { src: [0.0, 0.0], dst: [1.0, 1.0] };
        let params = RansacParams {
            model: TransformModel::Affine,
            ..Default::default()
        };
        assert!(matches!(
            ransac_verify(&[p, p], &params),
            Err(Error::TooFewMatches { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn collinear_affine_is_degenerate() {
        let pairs: Vec<_> = (0..6)
            .map(|i| PointPair {
                src: [i as f64, 2.0 * i as f64],
                dst: [i as f64, 2.0 * i as f64],
            })
            .collect();
        let params = RansacParams {
            model: TransformModel::Affine,
            ..Default::default()
        };
        assert!(matches!(ransac_verify(&pairs, &params), Err(Error::DegenerateSample)));
    }

    #[test]
    fn exact_similarity_is_recovered() {
        let t = similarity(10f64.to_radians(), 1.05, 4.0, -7.5);
        let pairs: Vec<_> = (0..50)
            .map(|i| {
                let src = [(i * 37 % 101) as f64 * 3.1, (i * 53 % 89) as f64 * 2.7];
                PointPair { src, dst: apply_transform(&t, src) }
            })
            .collect();
        let r = ransac_verify(&pairs, &RansacParams::default()).unwrap();
        assert_eq!(r.n_inliers, 50);
        for (row_r, row_t) in r.transform.iter().zip(t.iter()) {
            for (a, b) in row_r.iter().zip(row_t) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn affine_refit_is_exact() {
        let t = [[1.1, 0.2, 3.0], [-0.1, 0.9, 1.0]];
        let pairs: Vec<_> = (0..20)
            .map(|i| {
                let src = [(i % 5) as f64 * 10.0, (i / 5) as f64 * 7.0 + (i % 3) as f64];
                PointPair { src, dst: apply_transform(&t, src) }
            })
            .collect();
        let params = RansacParams {
            model: TransformModel::Affine,
            ..Default::default()
        };
        let r = ransac_verify(&pairs, &params).unwrap();
        assert_eq!(r.n_inliers, 20);
        for (row_r, row_t) in r.transform.iter().zip(t.iter()) {
            for (a, b) in row_r.iter().zip(row_t) {
                assert!((a - b).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn same_seed_same_report() {
        let pairs: Vec<_> = (0..30)
            .map(|i| PointPair {
                src: [i as f64, (i * i % 17) as f64],
                dst: [(i * 7 % 13) as f64, (i * 3 % 11) as f64],
            })
            .collect();
        let p = RansacParams { seed: 9, ..Default::default() };
        assert_eq!(ransac_verify(&pairs, &p).unwrap(), ransac_verify(&pairs, &p).unwrap());
    }
}

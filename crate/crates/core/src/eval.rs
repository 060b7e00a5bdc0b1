//! Gaze tail-error statistics: per-frame angular error, per-participant E95,
//! population U50E95, participant-level bootstrap intervals and paired
//! percentile-difference curves.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gaze direction as `(yaw, pitch)` in degrees. Serialized as `[yaw, pitch]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct GazeAngles {
    pub yaw: f64,
    pub pitch: f64,
}

impl GazeAngles {
    pub const fn new(yaw: f64, pitch: f64) -> Self {
        Self { yaw, pitch }
    }

    pub fn in_range(&self) -> bool {
        self.yaw.is_finite()
            && self.pitch.is_finite()
            && self.yaw.abs() <= 90.0
            && self.pitch.abs() <= 90.0
    }

    /// Unit vector `(cos p sin y, sin p, cos p cos y)`.
    pub fn unit_vector(&self) -> [f64; 3] {
        let (y, p) = (self.yaw.to_radians(), self.pitch.to_radians());
        [p.cos() * y.sin(), p.sin(), p.cos() * y.cos()]
    }
}

impl From<[f64; 2]> for GazeAngles {
    fn from(v: [f64; 2]) -> Self {
        Self::new(v[0], v[1])
    }
}

impl From<GazeAngles> for [f64; 2] {
    fn from(g: GazeAngles) -> Self {
        [g.yaw, g.pitch]
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AngularMetric {
    /// Angle between the two 3D gaze unit vectors.
    #[default]
    Vector3d,
    /// `sqrt(d_yaw^2 + d_pitch^2)`, for sensitivity analysis.
    PerAxisEuclidean,
}

impl AngularMetric {
    pub fn error(self, pred: &GazeAngles, gt: &GazeAngles) -> f64 {
        match self {
            AngularMetric::Vector3d => angular_error(pred, gt),
            AngularMetric::PerAxisEuclidean => {
                (pred.yaw - gt.yaw).hypot(pred.pitch - gt.pitch)
            }
        }
    }
}

/// 3D angle between gaze directions, in degrees.
pub fn angular_error(pred: &GazeAngles, gt: &GazeAngles) -> f64 {
    let (u, v) = (pred.unit_vector(), gt.unit_vector());
    let dot = u[0] * v[0] + u[1] * v[1] + u[2] * v[2];
    dot.clamp(-1.0, 1.0).acos().to_degrees()
}

/// Linear-interpolation percentile on the `(n - 1)` fractional index.
///
/// Uses selection rather than a full sort, so it runs in linear time on large
/// planes while returning exactly the value the sorted definition gives.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("percentile of an empty list".into()));
    }
    let mut scratch = values.to_vec();
    percentile_in_place(&mut scratch, p)
}

/// As [`percentile`], reordering `values` instead of copying them.
pub fn percentile_in_place(values: &mut [f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(Error::EmptyInput("percentile of an empty list".into()));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(Error::InvalidParameter(format!(
            "percentile must be in [0, 100], got {p}"
        )));
    }
    let n = values.len();
    let h = (n - 1) as f64 * p / 100.0;
    let lo = (h.floor() as usize).min(n - 1);
    let frac = h - lo as f64;
    let (_, &mut v_lo, rest) = values.select_nth_unstable_by(lo, f64::total_cmp);
    if frac == 0.0 || rest.is_empty() {
        return Ok(v_lo);
    }
    let v_hi = rest.iter().copied().fold(f64::INFINITY, f64::min);
    Ok(v_lo + frac * (v_hi - v_lo))
}

/// Per-frame absolute angular errors (degrees) of one participant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParticipantErrors {
    pub participant_id: String,
    pub errors: Vec<f64>,
}

impl ParticipantErrors {
    pub fn new(participant_id: impl Into<String>, errors: Vec<f64>) -> Self {
        Self {
            participant_id: participant_id.into(),
            errors,
        }
    }

    fn percentile(&self, p: f64) -> Result<f64> {
        if self.errors.is_empty() {
            return Err(Error::EmptyInput(format!(
                "participant {} has no frames",
                self.participant_id
            )));
        }
        percentile(&self.errors, p)
    }
}

pub fn participant_e95(pe: &ParticipantErrors) -> Result<f64> {
    pe.percentile(95.0)
}

/// Median of per-participant E95.
pub fn u50_e95(participants: &[ParticipantErrors]) -> Result<f64> {
    if participants.is_empty() {
        return Err(Error::EmptyInput("no participants".into()));
    }
    let e95 = participants
        .iter()
        .map(participant_e95)
        .collect::<Result<Vec<_>>>()?;
    percentile(&e95, 50.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub point: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub level: f64,
    pub n_resamples: usize,
    pub seed: u64,
    /// Set when the percentile interval does not contain the point estimate.
    pub point_outside_ci: bool,
}

/// Statistic recomputed on every participant-level resample.
#[derive(Debug, Clone, Copy)]
pub enum Statistic<'a> {
    /// Median E95 of the resampled participants.
    U50E95,
    /// Median over participants of `pct_p(arm) - pct_p(baseline)`, where the
    /// baseline arm is paired by participant id.
    MedianDiff {
        baseline: &'a [ParticipantErrors],
        percentile: f64,
    },
}

/// Indices of resample `index` drawn with replacement from `0..n`.
///
/// Each resample has its own ChaCha stream derived from `(seed, index)`, so
/// resamples can be drawn in any order or in parallel.
pub fn resample_indices(n: usize, seed: u64, index: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// Percentile bootstrap of the median of per-participant values.
pub fn bootstrap_median(
    values: &[f64],
    n_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapResult> {
    if values.is_empty() {
        return Err(Error::EmptyInput("no participants".into()));
    }
    if n_resamples == 0 {
        return Err(Error::InvalidParameter("need at least one resample".into()));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "confidence level must be in (0, 1), got {level}"
        )));
    }
    let point = percentile(values, 50.0)?;
    let mut stats: Vec<f64> = (0..n_resamples as u64)
        .into_par_iter()
        .map_init(
            || Vec::with_capacity(values.len()),
            |buf, b| {
                buf.clear();
                buf.extend(
                    resample_indices(values.len(), seed, b)
                        .into_iter()
                        .map(|i| values[i]),
                );
                percentile_in_place(buf, 50.0).expect("non-empty resample")
            },
        )
        .collect();
    let tail = 100.0 * (1.0 - level) / 2.0;
    let ci_low = percentile_in_place(&mut stats, tail)?;
    let ci_high = percentile_in_place(&mut stats, 100.0 - tail)?;
    Ok(BootstrapResult {
        point,
        ci_low,
        ci_high,
        level,
        n_resamples,
        seed,
        point_outside_ci: point < ci_low || point > ci_high,
    })
}

/// Participant-level bootstrap: whole participants are resampled with
/// replacement, keeping their frames intact.
pub fn bootstrap_ci(
    participants: &[ParticipantErrors],
    statistic: Statistic<'_>,
    n_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<BootstrapResult> {
    if participants.is_empty() {
        return Err(Error::EmptyInput("no participants".into()));
    }
    // Both statistics are medians of a per-participant quantity, which is
    // computed once and then resampled.
    let values = match statistic {
        Statistic::U50E95 => participants
            .iter()
            .map(participant_e95)
            .collect::<Result<Vec<_>>>()?,
        Statistic::MedianDiff {
            baseline,
            percentile,
        } => paired_differences(participants, baseline, percentile)?,
    };
    bootstrap_median(&values, n_resamples, level, seed)
}

/// Reorders `baseline` to match the participant order of `arm`.
fn pair_arms<'a>(
    arm: &'a [ParticipantErrors],
    baseline: &'a [ParticipantErrors],
) -> Result<Vec<(&'a ParticipantErrors, &'a ParticipantErrors)>> {
    let by_id: HashMap<&str, &ParticipantErrors> = baseline
        .iter()
        .map(|p| (p.participant_id.as_str(), p))
        .collect();
    if by_id.len() != baseline.len() {
        return Err(Error::UnpairedParticipants(
            "baseline arm repeats a participant id".into(),
        ));
    }
    let pairs = arm
        .iter()
        .map(|a| {
            by_id
                .get(a.participant_id.as_str())
                .map(|b| (a, *b))
                .ok_or_else(|| {
                    Error::UnpairedParticipants(format!(
                        "{} has no counterpart",
                        a.participant_id
                    ))
                })
        })
        .collect::<Result<Vec<_>>>()?;
    if arm.len() != baseline.len() {
        let in_arm: std::collections::HashSet<&str> =
            arm.iter().map(|p| p.participant_id.as_str()).collect();
        let missing: Vec<&str> = baseline
            .iter()
            .map(|p| p.participant_id.as_str())
            .filter(|id| !in_arm.contains(id))
            .collect();
        return Err(Error::UnpairedParticipants(if missing.is_empty() {
            format!("arms have {} and {} participants", arm.len(), baseline.len())
        } else {
            format!("{} has no counterpart", missing.join(", "))
        }));
    }
    Ok(pairs)
}

fn paired_differences(
    arm: &[ParticipantErrors],
    baseline: &[ParticipantErrors],
    p: f64,
) -> Result<Vec<f64>> {
    pair_arms(arm, baseline)?
        .into_iter()
        .map(|(a, b)| Ok(a.percentile(p)? - b.percentile(p)?))
        .collect()
}

/// Median PET-minus-intensity error difference per percentile, with a
/// participant-level bootstrap envelope.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DifferenceCurve {
    pub percentiles: Vec<f64>,
    pub median_diff: Vec<f64>,
    pub envelope_low: Vec<f64>,
    pub envelope_high: Vec<f64>,
    pub level: f64,
}

impl DifferenceCurve {
    pub fn validate(&self) -> Result<()> {
        let n = self.percentiles.len();
        if self.median_diff.len() != n
            || self.envelope_low.len() != n
            || self.envelope_high.len() != n
        {
            return Err(Error::DimensionMismatch(
                "difference-curve arrays differ in length".into(),
            ));
        }
        if self.percentiles.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidParameter(
                "percentiles must be strictly increasing".into(),
            ));
        }
        if let Some(i) = (0..n).find(|&i| self.envelope_low[i] > self.envelope_high[i]) {
            return Err(Error::InvalidParameter(format!(
                "envelope inverted at p = {}",
                self.percentiles[i]
            )));
        }
        Ok(())
    }
}

/// Paired difference curve. The same resample indices are applied to both
/// arms and to every percentile.
pub fn percentile_difference_curve(
    pet: &[ParticipantErrors],
    intensity: &[ParticipantErrors],
    percentiles: &[f64],
    n_resamples: usize,
    level: f64,
    seed: u64,
) -> Result<DifferenceCurve> {
    if pet.is_empty() {
        return Err(Error::EmptyInput("no participants".into()));
    }
    pair_arms(pet, intensity)?;
    let mut curve = DifferenceCurve {
        percentiles: percentiles.to_vec(),
        median_diff: Vec::with_capacity(percentiles.len()),
        envelope_low: Vec::with_capacity(percentiles.len()),
        envelope_high: Vec::with_capacity(percentiles.len()),
        level,
    };
    for &p in percentiles {
        let r = bootstrap_ci(
            pet,
            Statistic::MedianDiff {
                baseline: intensity,
                percentile: p,
            },
            n_resamples,
            level,
            seed,
        )?;
        curve.median_diff.push(r.point);
        curve.envelope_low.push(r.ci_low);
        curve.envelope_high.push(r.ci_high);
    }
    curve.validate()?;
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, LogNormal};

    fn pe(id: &str, errors: Vec<f64>) -> ParticipantErrors {
        ParticipantErrors::new(id, errors)
    }

    #[test]
    fn angular_error_cases() {
        let z = GazeAngles::new(0.0, 0.0);
        assert_eq!(angular_error(&z, &z), 0.0);
        let e = angular_error(&GazeAngles::new(1.0, 0.0), &z);
        assert!((e - 1.0).abs() < 1e-9, "{e}");
        let e = angular_error(&GazeAngles::new(0.0, 90.0), &GazeAngles::new(0.0, -90.0));
        assert!((e - 180.0).abs() < 1e-9);
        let e = AngularMetric::PerAxisEuclidean
            .error(&GazeAngles::new(3.0, 4.0), &z);
        assert!((e - 5.0).abs() < 1e-12);
    }

    #[test]
    fn angular_error_matches_dot_product_oracle() {
        // Independent construction: rotate (0,0,1) by yaw about y then pitch.
        let dir = |yaw: f64, pitch: f64| {
            let (y, p) = (yaw.to_radians(), pitch.to_radians());
            let v = [0.0, 0.0, 1.0];
            // pitch about x (towards +y), then yaw about y
            let v = [v[0], v[1] * p.cos() + v[2] * p.sin(), -v[1] * p.sin() + v[2] * p.cos()];
            [v[0] * y.cos() + v[2] * y.sin(), v[1], -v[0] * y.sin() + v[2] * y.cos()]
        };
        for (a, b) in [((5.0, 3.0), (-2.0, 7.5)), ((30.0, -20.0), (29.0, -21.0))] {
            let (u, v) = (dir(a.0, a.1), dir(b.0, b.1));
            let want = (u[0] * v[0] + u[1] * v[1] + u[2] * v[2]).acos().to_degrees();
            let got = angular_error(&GazeAngles::new(a.0, a.1), &GazeAngles::new(b.0, b.1));
            assert!((got - want).abs() < 1e-9);
        }
    }

    #[test]
    fn percentile_rule() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((percentile(&v, 95.0).unwrap() - 95.05).abs() < 1e-12);
        assert_eq!(percentile(&[4.2], 37.0).unwrap(), 4.2);
        assert!(matches!(percentile(&[], 50.0), Err(Error::EmptyInput(_))));
        assert!(percentile(&[1.0], 101.0).is_err());
    }

    #[test]
    fn e95_cases() {
        assert_eq!(participant_e95(&pe("a", vec![2.0; 7])).unwrap(), 2.0);
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!((participant_e95(&pe("a", v)).unwrap() - 95.05).abs() < 1e-12);
        let mut v = vec![0.0; 19];
        v.push(10.0);
        assert!((participant_e95(&pe("a", v)).unwrap() - 0.5).abs() < 1e-12);
        assert!(participant_e95(&pe("a", vec![])).is_err());
    }

    #[test]
    fn u50_cases() {
        let ps = |vals: &[f64]| -> Vec<ParticipantErrors> {
            vals.iter()
                .enumerate()
                .map(|(i, &v)| pe(&format!("p{i}"), vec![v; 5]))
                .collect()
        };
        assert_eq!(u50_e95(&ps(&[1.0, 2.0, 3.0])).unwrap(), 2.0);
        assert_eq!(u50_e95(&ps(&[1.0, 3.0])).unwrap(), 2.0);
        assert_eq!(u50_e95(&ps(&[4.5])).unwrap(), 4.5);
        assert!(u50_e95(&[]).is_err());
    }

    #[test]
    fn bootstrap_single_participant_is_degenerate() {
        let ps = vec![pe("only", vec![0.5, 1.0, 3.0])];
        let r = bootstrap_ci(&ps, Statistic::U50E95, 200, 0.9, 7).unwrap();
        assert_eq!(r.ci_low, r.point);
        assert_eq!(r.ci_high, r.point);
    }

    #[test]
    fn bootstrap_is_deterministic() {
        let ps: Vec<_> = (0..12)
            .map(|i| pe(&format!("p{i}"), (0..30).map(|k| ((i * 7 + k * 3) % 11) as f64).collect()))
            .collect();
        let a = bootstrap_ci(&ps, Statistic::U50E95, 300, 0.9, 42).unwrap();
        let b = bootstrap_ci(&ps, Statistic::U50E95, 300, 0.9, 42).unwrap();
        assert_eq!(a, b);
        assert!(a.ci_low <= a.ci_high);
    }

    #[test]
    fn difference_curve_self_and_shift() {
        let pet: Vec<_> = (0..8)
            .map(|i| pe(&format!("p{i}"), (0..40).map(|k| 1.0 + ((i * 13 + k * 7) % 17) as f64 * 0.1).collect()))
            .collect();
        let ps = [10.0, 50.0, 95.0];
        let c = percentile_difference_curve(&pet, &pet, &ps, 200, 0.9, 1).unwrap();
        for i in 0..3 {
            assert_eq!(c.median_diff[i], 0.0);
            assert!(c.envelope_low[i] <= 0.0 && c.envelope_high[i] >= 0.0);
        }
        let intensity: Vec<_> = pet
            .iter()
            .map(|p| pe(&p.participant_id, p.errors.iter().map(|e| e + 0.5).collect()))
            .rev()
            .collect();
        let c = percentile_difference_curve(&pet, &intensity, &ps, 200, 0.9, 1).unwrap();
        for d in &c.median_diff {
            assert!((d + 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn difference_curve_agrees_with_bootstrap_ci() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pet: Vec<_> = (0..15)
            .map(|i| pe(&format!("p{i}"), (0..25).map(|_| rng.random::<f64>() * 3.0).collect()))
            .collect();
        let intensity: Vec<_> = (0..15)
            .map(|i| pe(&format!("p{i}"), (0..25).map(|_| rng.random::<f64>() * 3.2).collect()))
            .collect();
        let c = percentile_difference_curve(&pet, &intensity, &[50.0, 95.0], 500, 0.9, 9).unwrap();
        let r = bootstrap_ci(
            &pet,
            Statistic::MedianDiff { baseline: &intensity, percentile: 95.0 },
            500,
            0.9,
            9,
        )
        .unwrap();
        assert!((c.median_diff[1] - r.point).abs() < 1e-9);
        assert!((c.envelope_low[1] - r.ci_low).abs() < 1e-9);
        assert!((c.envelope_high[1] - r.ci_high).abs() < 1e-9);
    }

    #[test]
    fn unpaired_arms_rejected() {
        let a = vec![pe("x", vec![1.0]), pe("y", vec![1.0])];
        let b = vec![pe("x", vec![1.0]), pe("z", vec![1.0])];
        assert!(matches!(
            percentile_difference_curve(&a, &b, &[50.0], 10, 0.9, 0),
            Err(Error::UnpairedParticipants(_))
        ));
    }

    #[test]
    fn curve_invariant_checks() {
        let bad = DifferenceCurve {
            percentiles: vec![10.0, 20.0],
            median_diff: vec![0.0, 0.0],
            envelope_low: vec![0.0, 1.0],
            envelope_high: vec![0.0, 0.5],
            level: 0.9,
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn bootstrap_width_shrinks_with_cohort_size() {
        let dist = LogNormal::new(0.0, 0.5).unwrap();
        let mean_width = |n: usize| {
            let mut total = 0.0;
            for rep in 0..40u64 {
                let mut rng = ChaCha8Rng::seed_from_u64(1000 + rep);
                let ps: Vec<_> = (0..n)
                    .map(|i| pe(&format!("p{i}"), vec![dist.sample(&mut rng); 3]))
                    .collect();
                let r = bootstrap_ci(&ps, Statistic::U50E95, 200, 0.9, rep).unwrap();
                total += r.ci_high - r.ci_low;
            }
            total / 40.0
        };
        let (w10, w40, w160) = (mean_width(10), mean_width(40), mean_width(160));
        assert!(w10 > w40 && w40 > w160, "{w10} {w40} {w160}");
    }
}

#[cfg(test)]
mod proptests {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #[test]
        fn percentile_monotone_and_affine_equivariant(
            mut v in prop::collection::vec(-1e3f64..1e3, 1..60),
            p in 0.0f64..100.0, q in 0.0f64..100.0,
            a in 0.01f64..10.0, b in -50.0f64..50.0,
        ) {
            let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
            prop_assert!(percentile(&v, lo).unwrap() <= percentile(&v, hi).unwrap());
            let t: Vec<f64> = v.iter().map(|x| a * x + b).collect();
            let want = a * percentile(&v, p).unwrap() + b;
            prop_assert!((percentile(&t, p).unwrap() - want).abs() <= 1e-9 * (1.0 + want.abs()));
            let before = percentile(&v, p).unwrap();
            v.reverse();
            prop_assert_eq!(percentile(&v, p).unwrap(), before);
        }

        #[test]
        fn u50_permutation_invariant_and_scale_equivariant(
            e95s in prop::collection::vec(0.0f64..20.0, 1..15), k in 0.1f64..10.0, rot in 0usize..15
        ) {
            let ps: Vec<_> = e95s.iter().enumerate().map(|(i, &v)| ParticipantErrors::new(format!("p{i}"), vec![v, v * 0.5])).collect();
            let base = u50_e95(&ps).unwrap();
            let mut rotated = ps.clone();
            let r = rot % rotated.len();
            rotated.rotate_left(r);
            prop_assert_eq!(u50_e95(&rotated).unwrap(), base);
            let scaled: Vec<_> = ps.iter().map(|p| ParticipantErrors::new(p.participant_id.clone(), p.errors.iter().map(|e| e * k).collect())).collect();
            prop_assert!((u50_e95(&scaled).unwrap() - k * base).abs() <= 1e-9 * (1.0 + k * base));
        }
    }
}

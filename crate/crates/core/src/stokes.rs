//! Linear Stokes maps and the products derived from them: intensity, DoLP,
//! AoLP and a validity mask.

use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::demosaic::PolarizationChannels;
use crate::error::Result;
use crate::eval::percentile_in_place;
use crate::plane::Plane;

/// `s0 = i0 + i45 + i90 + i135`, `s1 = i0 - i90`, `s2 = i45 - i135`.
///
/// Note that `s0` is the four-sample sum, i.e. twice the physical total power.
#[derive(Debug, Clone, PartialEq)]
pub struct StokesMaps {
    pub s0: Plane,
    pub s1: Plane,
    pub s2: Plane,
}

pub fn compute_stokes(channels: &PolarizationChannels) -> StokesMaps {
    let (w, h) = channels.dims();
    let (i0, i45, i90, i135) = (
        channels.i0().data(),
        channels.i45().data(),
        channels.i90().data(),
        channels.i135().data(),
    );
    let n = w * h;
    let mut s0 = vec![0.0; n];
    let mut s1 = vec![0.0; n];
    let mut s2 = vec![0.0; n];
    s0.par_chunks_mut(w.max(1))
        .zip(s1.par_chunks_mut(w.max(1)))
        .zip(s2.par_chunks_mut(w.max(1)))
        .enumerate()
        .for_each(|(y, ((r0, r1), r2))| {
            let off = y * w;
            for x in 0..r0.len() {
                let k = off + x;
                r0[x] = i0[k] + i45[k] + i90[k] + i135[k];
                r1[x] = i0[k] - i90[k];
                r2[x] = i45[k] - i135[k];
            }
        });
    StokesMaps {
        s0: Plane::new(w, h, s0).expect("sized"),
        s1: Plane::new(w, h, s1).expect("sized"),
        s2: Plane::new(w, h, s2).expect("sized"),
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DolpConvention {
    /// `sqrt(s1^2 + s2^2) / (s0 + eps)` with the four-sample `s0`; tops out at 0.5.
    #[default]
    PaperLiteral,
    /// Twice the literal value, i.e. DoLP relative to physical total power.
    PhysicalX2,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProductConfig {
    pub epsilon: f64,
    /// Pixels with `s0 < mask_threshold_rel * p99(s0)` are masked.
    pub mask_threshold_rel: f64,
    pub dolp_convention: DolpConvention,
}

impl ProductConfig {
    /// Defaults scaled to the sensor full scale: `epsilon = 1e-6 * 2^bit_depth`.
    pub fn for_bit_depth(bit_depth: u8) -> Self {
        Self {
            epsilon: 1e-6 * (1u32 << bit_depth) as f64,
            mask_threshold_rel: 0.01,
            dolp_convention: DolpConvention::PaperLiteral,
        }
    }

    pub fn with_convention(mut self, convention: DolpConvention) -> Self {
        self.dolp_convention = convention;
        self
    }
}

impl Default for ProductConfig {
    fn default() -> Self {
        Self::for_bit_depth(12)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PolarizationProducts {
    /// `s0 / 4`.
    pub intensity: Plane,
    pub dolp: Plane,
    /// Radians in `(-pi/2, pi/2]`.
    pub aolp: Plane,
    /// `true` where the pixel is valid.
    pub mask: Vec<bool>,
}

impl PolarizationProducts {
    pub fn dims(&self) -> (usize, usize) {
        self.intensity.dims()
    }

    pub fn mask_plane(&self) -> Plane {
        let (w, h) = self.dims();
        Plane::new(
            w,
            h,
            self.mask.iter().map(|&m| if m { 1.0 } else { 0.0 }).collect(),
        )
        .expect("mask matches dims")
    }
}

/// `0.5 * atan2(s2, s1)` folded into `(-pi/2, pi/2]`, with `atan2(0, 0) := 0`.
#[inline]
pub fn aolp_from(s1: f64, s2: f64) -> f64 {
    if s1 == 0.0 && s2 == 0.0 {
        return 0.0;
    }
    let a = 0.5 * s2.atan2(s1);
    if a <= -FRAC_PI_2 {
        a + PI
    } else {
        a
    }
}

pub fn compute_products(stokes: &StokesMaps, cfg: &ProductConfig) -> PolarizationProducts {
    let (w, h) = stokes.s0.dims();
    let threshold = if cfg.mask_threshold_rel > 0.0 && !stokes.s0.is_empty() {
        let mut scratch = stokes.s0.data().to_vec();
        cfg.mask_threshold_rel * percentile_in_place(&mut scratch, 99.0).expect("non-empty")
    } else {
        f64::NEG_INFINITY
    };
    let gain = match cfg.dolp_convention {
        DolpConvention::PaperLiteral => 1.0,
        DolpConvention::PhysicalX2 => 2.0,
    };
    let (s0, s1, s2) = (stokes.s0.data(), stokes.s1.data(), stokes.s2.data());
    let n = w * h;
    let row = w.max(1);
    let mut intensity = vec![0.0; n];
    let mut dolp = vec![0.0; n];
    let mut aolp = vec![0.0; n];
    let mut mask = vec![false; n];
    intensity
        .par_chunks_mut(row)
        .zip(dolp.par_chunks_mut(row))
        .zip(aolp.par_chunks_mut(row))
        .zip(mask.par_chunks_mut(row))
        .enumerate()
        .for_each(|(y, (((ir, dr), ar), mr))| {
            let off = y * row;
            for x in 0..ir.len() {
                let (v0, v1, v2) = (s0[off + x], s1[off + x], s2[off + x]);
                ir[x] = v0 / 4.0;
                if v0 >= threshold {
                    mr[x] = true;
                    let d = gain * (v1 * v1 + v2 * v2).sqrt() / (v0 + cfg.epsilon);
                    dr[x] = d.clamp(0.0, 1.0);
                    ar[x] = aolp_from(v1, v2);
                }
            }
        });
    PolarizationProducts {
        intensity: Plane::new(w, h, intensity).expect("sized"),
        dolp: Plane::new(w, h, dolp).expect("sized"),
        aolp: Plane::new(w, h, aolp).expect("sized"),
        mask,
    }
}

/// `clamp(v / p99, 0, 1)`; all zeros when the 99th percentile is zero.
pub fn normalize_intensity(intensity: &Plane) -> Result<Plane> {
    let mut scratch = intensity.data().to_vec();
    let p99 = percentile_in_place(&mut scratch, 99.0)?;
    if p99 == 0.0 {
        return Ok(Plane::zeros(intensity.width(), intensity.height()));
    }
    Ok(intensity.map(|v| (v / p99).clamp(0.0, 1.0)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_8;

    fn stokes_of(v: [f64; 4]) -> StokesMaps {
        compute_stokes(&PolarizationChannels::constant(1, 1, v))
    }

    fn triple(s: &StokesMaps) -> (f64, f64, f64) {
        (s.s0.get(0, 0), s.s1.get(0, 0), s.s2.get(0, 0))
    }

    #[test]
    fn stokes_hand_cases() {
        assert_eq!(triple(&stokes_of([4.0, 3.0, 2.0, 1.0])), (10.0, 2.0, 2.0));
        assert_eq!(triple(&stokes_of([7.0; 4])), (28.0, 0.0, 0.0));
        assert_eq!(triple(&stokes_of([1.0, 0.5, 0.0, 0.5])), (2.0, 1.0, 0.0));
    }

    fn single(s0: f64, s1: f64, s2: f64) -> StokesMaps {
        StokesMaps {
            s0: Plane::filled(1, 1, s0),
            s1: Plane::filled(1, 1, s1),
            s2: Plane::filled(1, 1, s2),
        }
    }

    #[test]
    fn products_hand_case() {
        let cfg = ProductConfig {
            epsilon: 1e-6,
            mask_threshold_rel: 0.01,
            dolp_convention: DolpConvention::PaperLiteral,
        };
        let p = compute_products(&single(10.0, 2.0, 2.0), &cfg);
        assert_eq!(p.intensity.get(0, 0), 2.5);
        assert!((p.dolp.get(0, 0) - 8f64.sqrt() / (10.0 + 1e-6)).abs() < 1e-15);
        assert!((p.dolp.get(0, 0) - 0.28284).abs() < 1e-5);
        assert!((p.aolp.get(0, 0) - FRAC_PI_8).abs() < 1e-15);

        let p = compute_products(&single(12.0, 0.0, 0.0), &cfg);
        assert_eq!((p.dolp.get(0, 0), p.aolp.get(0, 0)), (0.0, 0.0));
    }

    #[test]
    fn low_s0_pixels_are_masked_and_zeroed() {
        let s = StokesMaps {
            s0: Plane::new(3, 1, vec![100.0, 100.0, 0.5]).unwrap(),
            s1: Plane::new(3, 1, vec![10.0, 10.0, 0.3]).unwrap(),
            s2: Plane::new(3, 1, vec![0.0, 5.0, 0.2]).unwrap(),
        };
        let p = compute_products(&s, &ProductConfig::default());
        assert_eq!(p.mask, vec![true, true, false]);
        assert_eq!((p.dolp.get(2, 0), p.aolp.get(2, 0)), (0.0, 0.0));
        assert!(p.dolp.get(0, 0) > 0.0);
    }

    #[test]
    fn aolp_principal_range() {
        assert_eq!(aolp_from(-1.0, -0.0), FRAC_PI_2);
        assert_eq!(aolp_from(-1.0, 0.0), FRAC_PI_2);
        assert_eq!(aolp_from(-0.0, -0.0), 0.0);
        assert!((aolp_from(0.0, -1.0) + PI / 4.0).abs() < 1e-15);
    }

    #[test]
    fn normalization_cases() {
        let p = normalize_intensity(&Plane::filled(4, 4, 5.0)).unwrap();
        assert!(p.data().iter().all(|&v| v == 1.0));
        let p = normalize_intensity(&Plane::zeros(3, 3)).unwrap();
        assert!(p.data().iter().all(|&v| v == 0.0));
        // 1..100: p99 = 99 + 0.01 * 1 = 99.01 under the (n-1) interpolation rule.
        let p = normalize_intensity(&Plane::from_fn(100, 1, |x, _| x as f64 + 1.0)).unwrap();
        assert!((p.get(98, 0) - 99.0 / 99.01).abs() < 1e-12);
        assert_eq!(p.get(99, 0), 1.0);
    }

    #[test]
    fn swapping_orthogonal_channels_rotates_aolp_by_quarter_turn() {
        let cfg = ProductConfig::default();
        let a = [900.0, 700.0, 300.0, 500.0];
        let b = [a[2], a[3], a[0], a[1]];
        let pa = compute_products(&stokes_of(a), &cfg);
        let pb = compute_products(&stokes_of(b), &cfg);
        let sa = stokes_of(a);
        let sb = stokes_of(b);
        assert_eq!(sb.s1.get(0, 0), -sa.s1.get(0, 0));
        assert_eq!(sb.s2.get(0, 0), -sa.s2.get(0, 0));
        let d = (pb.aolp.get(0, 0) - pa.aolp.get(0, 0)).rem_euclid(PI);
        assert!((d - FRAC_PI_2).abs() < 1e-12);
        assert!((pa.dolp.get(0, 0) - pb.dolp.get(0, 0)).abs() < 1e-15);
    }
}

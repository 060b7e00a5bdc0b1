//! Per-orientation channel reconstruction and Gaussian smoothing.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::mosaic::{Mosaic, PolarizerAngle};
use crate::plane::Plane;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChannelProvenance {
    FullResInterpolated,
    SuperpixelHalfRes,
}

/// Four co-registered planes at 0/45/90/135 degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarizationChannels {
    planes: [Plane; 4],
    pub provenance: ChannelProvenance,
}

impl PolarizationChannels {
    /// Planes in `[0, 45, 90, 135]` order.
    pub fn new(planes: [Plane; 4], provenance: ChannelProvenance) -> Result<Self> {
        let dims = planes[0].dims();
        if planes.iter().any(|p| p.dims() != dims) {
            return Err(Error::DimensionMismatch(
                "polarization channels differ in size".into(),
            ));
        }
        Ok(Self { planes, provenance })
    }

    /// Channels that are spatially constant with the given `(i0, i45, i90, i135)`.
    pub fn constant(width: usize, height: usize, values: [f64; 4]) -> Self {
        Self {
            planes: values.map(|v| Plane::filled(width, height, v)),
            provenance: ChannelProvenance::FullResInterpolated,
        }
    }

    pub fn get(&self, angle: PolarizerAngle) -> &Plane {
        &self.planes[angle.index()]
    }

    pub fn i0(&self) -> &Plane {
        &self.planes[0]
    }
    pub fn i45(&self) -> &Plane {
        &self.planes[1]
    }
    pub fn i90(&self) -> &Plane {
        &self.planes[2]
    }
    pub fn i135(&self) -> &Plane {
        &self.planes[3]
    }

    pub fn planes(&self) -> &[Plane; 4] {
        &self.planes
    }

    pub fn into_planes(self) -> [Plane; 4] {
        self.planes
    }

    pub fn dims(&self) -> (usize, usize) {
        self.planes[0].dims()
    }
}

/// Half-resolution channels: each 2x2 cell contributes one sample per angle.
pub fn split_superpixels<M: Mosaic + ?Sized>(frame: &M) -> PolarizationChannels {
    let (w, h) = (frame.width() / 2, frame.height() / 2);
    let layout = *frame.layout();
    let planes = PolarizerAngle::ALL.map(|angle| {
        let (cx, cy) = layout.offset_of(angle);
        Plane::from_fn(w, h, |x, y| {
            frame.sample((2 * y + cy) * frame.width() + 2 * x + cx)
        })
    });
    PolarizationChannels {
        planes,
        provenance: ChannelProvenance::SuperpixelHalfRes,
    }
}

/// Interpolation taps along one axis: `(lo, hi, weight_hi)` in subgrid indices.
fn axis_taps(len: usize, offset: usize) -> Vec<(usize, usize, f64)> {
    let sub = len / 2;
    (0..len)
        .map(|p| {
            let d = p as isize - offset as isize;
            let lo = d.div_euclid(2);
            let frac = if d.rem_euclid(2) == 0 { 0.0 } else { 0.5 };
            let clamp = |i: isize| i.clamp(0, sub as isize - 1) as usize;
            let (lo_c, hi_c) = (clamp(lo), clamp(lo + 1));
            if frac == 0.0 || lo_c == hi_c {
                (lo_c, lo_c, 0.0)
            } else {
                (lo_c, hi_c, frac)
            }
        })
        .collect()
}

/// Full-resolution channels by bilinear interpolation on each angle's
/// stride-2 subgrid, with edge replication. Carrier pixels are copied exactly.
pub fn demosaic_bilinear<M: Mosaic + Sync + ?Sized>(frame: &M) -> PolarizationChannels {
    let (w, h) = (frame.width(), frame.height());
    let layout = *frame.layout();
    let planes = PolarizerAngle::ALL.map(|angle| {
        let (cx, cy) = layout.offset_of(angle);
        let xtaps = axis_taps(w, cx);
        let ytaps = axis_taps(h, cy);
        let sub_w = w / 2;
        let mut data = vec![0.0; w * h];
        data.par_chunks_mut(w).enumerate().for_each_init(
            || vec![0.0; sub_w],
            |column, (y, out)| {
                let (j0, j1, fy) = ytaps[y];
                let r0 = (2 * j0 + cy) * w + cx;
                let r1 = (2 * j1 + cy) * w + cx;
                for (i, c) in column.iter_mut().enumerate() {
                    let a = frame.sample(r0 + 2 * i);
                    *c = if fy == 0.0 {
                        a
                    } else {
                        (1.0 - fy) * a + fy * frame.sample(r1 + 2 * i)
                    };
                }
                for (o, &(i0, i1, fx)) in out.iter_mut().zip(&xtaps) {
                    *o = if fx == 0.0 {
                        column[i0]
                    } else {
                        (1.0 - fx) * column[i0] + fx * column[i1]
                    };
                }
            },
        );
        Plane::new(w, h, data).expect("sized above")
    });
    PolarizationChannels {
        planes,
        provenance: ChannelProvenance::FullResInterpolated,
    }
}

/// Sampled Gaussian truncated at `ceil(3 sigma)` and renormalized to sum 1.
pub fn gaussian_kernel(sigma: f64) -> Result<Vec<f64>> {
    if !(sigma > 0.0) || !sigma.is_finite() {
        return Err(Error::NonPositiveSigma(sigma));
    }
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius)
        .map(|i| (-((i * i) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    Ok(k)
}

/// Separable Gaussian convolution with replicated borders.
pub fn smooth_plane(plane: &Plane, sigma: f64) -> Result<Plane> {
    let kernel = gaussian_kernel(sigma)?;
    let radius = (kernel.len() / 2) as isize;
    let (w, h) = plane.dims();

    let mut tmp = vec![0.0; w * h];
    tmp.par_chunks_mut(w).enumerate().for_each(|(y, out)| {
        let row = plane.row(y);
        for (x, o) in out.iter_mut().enumerate() {
            let mut acc = 0.0;
            for (k, &kv) in kernel.iter().enumerate() {
                let sx = (x as isize + k as isize - radius).clamp(0, w as isize - 1) as usize;
                acc += kv * row[sx];
            }
            *o = acc;
        }
    });

    let mut out = vec![0.0; w * h];
    out.par_chunks_mut(w).enumerate().for_each(|(y, orow)| {
        for (k, &kv) in kernel.iter().enumerate() {
            let sy = (y as isize + k as isize - radius).clamp(0, h as isize - 1) as usize;
            let src = &tmp[sy * w..(sy + 1) * w];
            for (o, &s) in orow.iter_mut().zip(src) {
                *o += kv * s;
            }
        }
    });
    Plane::new(w, h, out)
}

pub fn gaussian_smooth(channels: &PolarizationChannels, sigma: f64) -> Result<PolarizationChannels> {
    let [a, b, c, d] = &channels.planes;
    Ok(PolarizationChannels {
        planes: [
            smooth_plane(a, sigma)?,
            smooth_plane(b, sigma)?,
            smooth_plane(c, sigma)?,
            smooth_plane(d, sigma)?,
        ],
        provenance: channels.provenance,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mosaic::{RawMosaicFrame, SuperpixelLayout};

    fn frame(w: usize, h: usize, data: Vec<u16>) -> RawMosaicFrame {
        RawMosaicFrame::new(w, h, 16, SuperpixelLayout::default(), data).unwrap()
    }

    #[test]
    fn split_relabels_single_cell() {
        let ch = split_superpixels(&frame(2, 2, vec![10, 20, 30, 40]));
        assert_eq!(ch.i90().data(), &[10.0]);
        assert_eq!(ch.i45().data(), &[20.0]);
        assert_eq!(ch.i135().data(), &[30.0]);
        assert_eq!(ch.i0().data(), &[40.0]);
        assert_eq!(ch.provenance, ChannelProvenance::SuperpixelHalfRes);
    }

    #[test]
    fn split_two_cells_by_index_arithmetic() {
        // Left cell (a,b;c,d), right cell (e,f;g,h), second cell row repeats +100.
        let mut data = vec![0u16; 16];
        for y in 0..4 {
            for x in 0..4 {
                data[y * 4 + x] = (100 * (y / 2) + 10 * (x / 2) + 2 * (y % 2) + (x % 2)) as u16;
            }
        }
        let ch = split_superpixels(&frame(4, 4, data.clone()));
        let layout = SuperpixelLayout::default();
        for angle in PolarizerAngle::ALL {
            let (cx, cy) = layout.offset_of(angle);
            let p = ch.get(angle);
            assert_eq!(p.dims(), (2, 2));
            for sy in 0..2 {
                for sx in 0..2 {
                    assert_eq!(p.get(sx, sy), data[(2 * sy + cy) * 4 + 2 * sx + cx] as f64);
                }
            }
        }
    }

    #[test]
    fn constant_frame_gives_constant_planes() {
        let f = frame(6, 4, vec![77; 24]);
        for ch in [split_superpixels(&f), demosaic_bilinear(&f)] {
            for p in ch.planes() {
                assert!(p.data().iter().all(|&v| v == 77.0));
            }
        }
    }

    #[test]
    fn single_cell_broadcasts() {
        let ch = demosaic_bilinear(&frame(2, 2, vec![10, 20, 30, 40]));
        assert_eq!(ch.i90().data(), &[10.0; 4]);
        assert_eq!(ch.i45().data(), &[20.0; 4]);
        assert_eq!(ch.i135().data(), &[30.0; 4]);
        assert_eq!(ch.i0().data(), &[40.0; 4]);
    }

    #[test]
    fn carriers_are_exact_and_ramps_reproduced() {
        let (w, h) = (16, 12);
        let ramp = |x: usize, y: usize| 100.0 + 3.0 * x as f64 + 7.0 * y as f64;
        let data: Vec<u16> = (0..w * h).map(|i| ramp(i % w, i / w) as u16).collect();
        let f = frame(w, h, data.clone());
        let ch = demosaic_bilinear(&f);
        let layout = SuperpixelLayout::default();
        for y in 0..h {
            for x in 0..w {
                let a = layout.angle_at(x, y);
                assert_eq!(ch.get(a).get(x, y), data[y * w + x] as f64);
            }
        }
        // Every angle sees the same affine ramp; interior pixels reproduce it.
        for angle in PolarizerAngle::ALL {
            let p = ch.get(angle);
            for y in 2..h - 2 {
                for x in 2..w - 2 {
                    assert!((p.get(x, y) - ramp(x, y)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn kernel_sums_to_one_and_rejects_bad_sigma() {
        for sigma in [0.3, 1.0, 1.7, 4.0] {
            let k = gaussian_kernel(sigma).unwrap();
            assert_eq!(k.len(), 2 * (3.0f64 * sigma).ceil() as usize + 1);
            assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        }
        assert!(matches!(gaussian_kernel(0.0), Err(Error::NonPositiveSigma(_))));
        assert!(matches!(gaussian_kernel(-1.0), Err(Error::NonPositiveSigma(_))));
    }

    #[test]
    fn smoothing_keeps_constants() {
        let p = Plane::filled(9, 7, 3.25);
        let s = smooth_plane(&p, 1.0).unwrap();
        assert!(s.data().iter().all(|v| (v - 3.25).abs() < 1e-12));
    }
}

//! Difference-of-Gaussians keypoints with 128-d gradient-histogram descriptors.
//!
//! Follows the classic construction: 3 scales per octave, base blur 1.6
//! (input assumed pre-blurred by 0.5), quadratic sub-pixel refinement,
//! contrast and principal-curvature rejection, one dominant orientation from
//! a 36-bin histogram, and a 4x4x8 descriptor clipped at 0.2.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::demosaic::smooth_plane;
use crate::error::{Error, Result};
use crate::plane::Plane;

pub const MIN_IMAGE_SIZE: usize = 32;
pub const DESCRIPTOR_LEN: usize = 128;

const BASE_SIGMA: f64 = 1.6;
const INPUT_SIGMA: f64 = 0.5;
const BORDER: usize = 5;
const MAX_REFINE_STEPS: usize = 5;
const ORI_BINS: usize = 36;
const ORI_SIGMA_FACTOR: f64 = 1.5;
const DESC_WIDTH: usize = 4;
const DESC_BINS: usize = 8;
const DESC_SCALE_FACTOR: f64 = 3.0;
const DESC_MAG_CLIP: f64 = 0.2;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SiftParams {
    /// `None` picks `floor(log2(min(w, h))) - 3`, at least 1.
    pub n_octaves: Option<usize>,
    pub scales_per_octave: usize,
    /// DoG contrast threshold for images scaled to `[0, 1]`.
    pub contrast_threshold: f64,
    /// Maximum ratio of principal curvatures.
    pub edge_threshold: f64,
}

impl Default for SiftParams {
    fn default() -> Self {
        Self {
            n_octaves: None,
            scales_per_octave: 3,
            contrast_threshold: 0.03,
            edge_threshold: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Keypoint {
    pub x: f64,
    pub y: f64,
    /// Blur sigma in image pixels.
    pub scale: f64,
    /// Radians, image axes (y down).
    pub orientation: f64,
    pub response: f64,
}

/// Non-negative, unit-L2 descriptor.
#[derive(Debug, Clone, PartialEq)]
pub struct Descriptor(pub [f64; DESCRIPTOR_LEN]);

impl Descriptor {
    pub fn distance_sq(&self, other: &Descriptor) -> f64 {
        self.0
            .iter()
            .zip(other.0.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum()
    }

    pub fn dot(&self, other: &Descriptor) -> f64 {
        self.0.iter().zip(other.0.iter()).map(|(a, b)| a * b).sum()
    }
}

struct Octave {
    gaussians: Vec<Plane>,
    dogs: Vec<Plane>,
}

fn downsample(p: &Plane) -> Plane {
    let (w, h) = ((p.width() + 1) / 2, (p.height() + 1) / 2);
    Plane::from_fn(w, h, |x, y| p.get(2 * x, 2 * y))
}

fn build_pyramid(image: &Plane, n_octaves: usize, s: usize) -> Result<Vec<Octave>> {
    let mut base = smooth_plane(
        image,
        (BASE_SIGMA * BASE_SIGMA - INPUT_SIGMA * INPUT_SIGMA).sqrt(),
    )?;
    let k = 2f64.powf(1.0 / s as f64);
    let mut octaves = Vec::with_capacity(n_octaves);
    for _ in 0..n_octaves {
        let mut gaussians = vec![base.clone()];
        for i in 1..s + 3 {
            let prev = BASE_SIGMA * k.powi(i as i32 - 1);
            let next = prev * k;
            let g = smooth_plane(&gaussians[i - 1], (next * next - prev * prev).sqrt())?;
            gaussians.push(g);
        }
        let dogs = gaussians
            .windows(2)
            .map(|w| {
                let data = w[1]
                    .data()
                    .iter()
                    .zip(w[0].data())
                    .map(|(a, b)| a - b)
                    .collect();
                Plane::new(w[0].width(), w[0].height(), data).expect("same dims")
            })
            .collect();
        base = downsample(&gaussians[s]);
        octaves.push(Octave { gaussians, dogs });
        if base.width() < 2 * BORDER + 3 || base.height() < 2 * BORDER + 3 {
            break;
        }
    }
    Ok(octaves)
}

fn is_extremum(dogs: &[Plane], s: usize, x: usize, y: usize) -> bool {
    let v = dogs[s].get(x, y);
    let mut is_max = true;
    let mut is_min = true;
    for layer in &dogs[s - 1..=s + 1] {
        for yy in y - 1..=y + 1 {
            for xx in x - 1..=x + 1 {
                let n = layer.get(xx, yy);
                if std::ptr::eq(layer, &dogs[s]) && xx == x && yy == y {
                    continue;
                }
                is_max &= v >= n;
                is_min &= v <= n;
            }
        }
        if !is_max && !is_min {
            return false;
        }
    }
    is_max || is_min
}

struct Refined {
    x: usize,
    y: usize,
    layer: usize,
    offset: Vector3<f64>,
    contrast: f64,
}

fn derivatives(dogs: &[Plane], s: usize, x: usize, y: usize) -> (Vector3<f64>, Matrix3<f64>) {
    let d = |ds: isize, dx: isize, dy: isize| {
        dogs[(s as isize + ds) as usize].get((x as isize + dx) as usize, (y as isize + dy) as usize)
    };
    let v = d(0, 0, 0);
    let g = Vector3::new(
        0.5 * (d(0, 1, 0) - d(0, -1, 0)),
        0.5 * (d(0, 0, 1) - d(0, 0, -1)),
        0.5 * (d(1, 0, 0) - d(-1, 0, 0)),
    );
    let dxx = d(0, 1, 0) + d(0, -1, 0) - 2.0 * v;
    let dyy = d(0, 0, 1) + d(0, 0, -1) - 2.0 * v;
    let dss = d(1, 0, 0) + d(-1, 0, 0) - 2.0 * v;
    let dxy = 0.25 * (d(0, 1, 1) - d(0, -1, 1) - d(0, 1, -1) + d(0, -1, -1));
    let dxs = 0.25 * (d(1, 1, 0) - d(1, -1, 0) - d(-1, 1, 0) + d(-1, -1, 0));
    let dys = 0.25 * (d(1, 0, 1) - d(1, 0, -1) - d(-1, 0, 1) + d(-1, 0, -1));
    let h = Matrix3::new(dxx, dxy, dxs, dxy, dyy, dys, dxs, dys, dss);
    (g, h)
}

fn refine(dogs: &[Plane], s_per_oct: usize, mut x: usize, mut y: usize, mut s: usize) -> Option<Refined> {
    let (w, h) = dogs[0].dims();
    for _ in 0..MAX_REFINE_STEPS {
        let (g, hess) = derivatives(dogs, s, x, y);
        let offset = -(hess.try_inverse()? * g);
        if offset.iter().all(|o| o.abs() < 0.5) {
            let contrast = dogs[s].get(x, y) + 0.5 * g.dot(&offset);
            return Some(Refined {
                x,
                y,
                layer: s,
                offset,
                contrast,
            });
        }
        if offset.iter().any(|o| !o.is_finite() || o.abs() > (w.max(h)) as f64) {
            return None;
        }
        let nx = x as isize + offset[0].round() as isize;
        let ny = y as isize + offset[1].round() as isize;
        let ns = s as isize + offset[2].round() as isize;
        if ns < 1
            || ns > s_per_oct as isize
            || nx < BORDER as isize
            || ny < BORDER as isize
            || nx >= (w - BORDER) as isize
            || ny >= (h - BORDER) as isize
        {
            return None;
        }
        (x, y, s) = (nx as usize, ny as usize, ns as usize);
    }
    None
}

fn passes_edge_test(dog: &Plane, x: usize, y: usize, r: f64) -> bool {
    let v = dog.get(x, y);
    let dxx = dog.get(x + 1, y) + dog.get(x - 1, y) - 2.0 * v;
    let dyy = dog.get(x, y + 1) + dog.get(x, y - 1) - 2.0 * v;
    let dxy = 0.25
        * (dog.get(x + 1, y + 1) - dog.get(x - 1, y + 1) - dog.get(x + 1, y - 1)
            + dog.get(x - 1, y - 1));
    let tr = dxx + dyy;
    let det = dxx * dyy - dxy * dxy;
    det > 0.0 && tr * tr * r < (r + 1.0) * (r + 1.0) * det
}

#[inline]
fn gradient(g: &Plane, x: usize, y: usize) -> (f64, f64) {
    (
        g.get(x + 1, y) - g.get(x - 1, y),
        g.get(x, y + 1) - g.get(x, y - 1),
    )
}

/// Dominant gradient orientation around `(x, y)` of octave image `g`.
fn dominant_orientation(g: &Plane, x: f64, y: f64, sigma: f64) -> Option<f64> {
    let (w, h) = g.dims();
    let weight_sigma = ORI_SIGMA_FACTOR * sigma;
    let radius = (3.0 * weight_sigma).round() as isize;
    let (xi, yi) = (x.round() as isize, y.round() as isize);
    let mut hist = [0.0; ORI_BINS];
    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let (px, py) = (xi + dx, yi + dy);
            if px < 1 || py < 1 || px >= w as isize - 1 || py >= h as isize - 1 {
                continue;
            }
            let (gx, gy) = gradient(g, px as usize, py as usize);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let wgt = (-((dx * dx + dy * dy) as f64) / (2.0 * weight_sigma * weight_sigma)).exp();
            let ang = gy.atan2(gx).rem_euclid(2.0 * PI);
            let bin = ((ang * ORI_BINS as f64 / (2.0 * PI)).round() as usize) % ORI_BINS;
            hist[bin] += wgt * mag;
        }
    }
    let mut smooth = [0.0; ORI_BINS];
    for (i, s) in smooth.iter_mut().enumerate() {
        let at = |d: isize| hist[(i as isize + d).rem_euclid(ORI_BINS as isize) as usize];
        *s = (at(-2) + at(2)) / 16.0 + 4.0 * (at(-1) + at(1)) / 16.0 + 6.0 * at(0) / 16.0;
    }
    let (best, &peak) = smooth
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.total_cmp(b.1))?;
    if peak <= 0.0 {
        return None;
    }
    let l = smooth[(best + ORI_BINS - 1) % ORI_BINS];
    let r = smooth[(best + 1) % ORI_BINS];
    let denom = l - 2.0 * peak + r;
    let shift = if denom != 0.0 { 0.5 * (l - r) / denom } else { 0.0 };
    let bin = best as f64 + shift;
    Some(wrap_angle(bin * 2.0 * PI / ORI_BINS as f64))
}

fn wrap_angle(a: f64) -> f64 {
    let r = a.rem_euclid(2.0 * PI);
    if r > PI {
        r - 2.0 * PI
    } else {
        r
    }
}

fn describe(g: &Plane, x: f64, y: f64, sigma: f64, orientation: f64) -> Option<Descriptor> {
    let (w, h) = g.dims();
    let d = DESC_WIDTH as f64;
    let hist_width = DESC_SCALE_FACTOR * sigma;
    let radius = (hist_width * 2f64.sqrt() * (d + 1.0) * 0.5).round() as isize;
    let (cos_t, sin_t) = (orientation.cos(), orientation.sin());
    let exp_denom = 2.0 * (0.5 * d) * (0.5 * d);
    let mut hist = [0.0; DESC_WIDTH * DESC_WIDTH * DESC_BINS];
    let (xi, yi) = (x.round() as isize, y.round() as isize);
    let (fx, fy) = (x - xi as f64, y - yi as f64);

    for dy in -radius..=radius {
        for dx in -radius..=radius {
            let (px, py) = (xi + dx, yi + dy);
            if px < 1 || py < 1 || px >= w as isize - 1 || py >= h as isize - 1 {
                continue;
            }
            let (ox, oy) = (dx as f64 - fx, dy as f64 - fy);
            // Rotate into the keypoint frame, in units of histogram cells.
            let rx = (cos_t * ox + sin_t * oy) / hist_width;
            let ry = (-sin_t * ox + cos_t * oy) / hist_width;
            let cbin = rx + 0.5 * d - 0.5;
            let rbin = ry + 0.5 * d - 0.5;
            if cbin <= -1.0 || rbin <= -1.0 || cbin >= d || rbin >= d {
                continue;
            }
            let (gx, gy) = gradient(g, px as usize, py as usize);
            let mag = gx.hypot(gy);
            if mag == 0.0 {
                continue;
            }
            let weight = (-(rx * rx + ry * ry) / exp_denom).exp();
            let rel = (gy.atan2(gx) - orientation).rem_euclid(2.0 * PI);
            let obin = rel * DESC_BINS as f64 / (2.0 * PI);
            let v = mag * weight;

            let (r0, c0, o0) = (rbin.floor(), cbin.floor(), obin.floor());
            let (dr, dc, dob) = (rbin - r0, cbin - c0, obin - o0);
            for (ri, wr) in [(r0 as isize, 1.0 - dr), (r0 as isize + 1, dr)] {
                if ri < 0 || ri >= DESC_WIDTH as isize {
                    continue;
                }
                for (ci, wc) in [(c0 as isize, 1.0 - dc), (c0 as isize + 1, dc)] {
                    if ci < 0 || ci >= DESC_WIDTH as isize {
                        continue;
                    }
                    for (oi, wo) in [(o0 as usize, 1.0 - dob), (o0 as usize + 1, dob)] {
                        let idx = (ri as usize * DESC_WIDTH + ci as usize) * DESC_BINS
                            + oi % DESC_BINS;
                        hist[idx] += v * wr * wc * wo;
                    }
                }
            }
        }
    }

    let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    if !(norm > 0.0) {
        return None;
    }
    for v in hist.iter_mut() {
        *v = (*v / norm).min(DESC_MAG_CLIP);
    }
    let norm = hist.iter().map(|v| v * v).sum::<f64>().sqrt();
    for v in hist.iter_mut() {
        *v /= norm;
    }
    Some(Descriptor(hist))
}

/// Detects keypoints on `image` (expected roughly in `[0, 1]`) and computes
/// one descriptor per keypoint, sorted by descending response.
pub fn detect_and_describe(image: &Plane, params: &SiftParams) -> Result<Vec<(Keypoint, Descriptor)>> {
    let (w, h) = image.dims();
    if w < MIN_IMAGE_SIZE || h < MIN_IMAGE_SIZE {
        return Err(Error::ImageTooSmall {
            width: w,
            height: h,
            min: MIN_IMAGE_SIZE,
        });
    }
    if params.scales_per_octave == 0 {
        return Err(Error::InvalidParameter("need at least one scale per octave".into()));
    }
    let s = params.scales_per_octave;
    let auto = ((w.min(h) as f64).log2().floor() as usize).saturating_sub(3).max(1);
    let n_octaves = params.n_octaves.unwrap_or(auto).max(1);
    let octaves = build_pyramid(image, n_octaves, s)?;
    let prelim = 0.5 * params.contrast_threshold / s as f64;

    let mut out = Vec::new();
    for (o, oct) in octaves.iter().enumerate() {
        let (ow, oh) = oct.dogs[0].dims();
        if ow <= 2 * BORDER || oh <= 2 * BORDER {
            continue;
        }
        let factor = (1u64 << o) as f64;
        for layer in 1..=s {
            for y in BORDER..oh - BORDER {
                for x in BORDER..ow - BORDER {
                    if oct.dogs[layer].get(x, y).abs() <= prelim
                        || !is_extremum(&oct.dogs, layer, x, y)
                    {
                        continue;
                    }
                    let Some(r) = refine(&oct.dogs, s, x, y, layer) else {
                        continue;
                    };
                    if r.contrast.abs() * (s as f64) < params.contrast_threshold {
                        continue;
                    }
                    if !passes_edge_test(&oct.dogs[r.layer], r.x, r.y, params.edge_threshold) {
                        continue;
                    }
                    let ox = r.x as f64 + r.offset[0];
                    let oy = r.y as f64 + r.offset[1];
                    let oct_sigma =
                        BASE_SIGMA * 2f64.powf((r.layer as f64 + r.offset[2]) / s as f64);
                    let g = &oct.gaussians[r.layer];
                    let Some(orientation) = dominant_orientation(g, ox, oy, oct_sigma) else {
                        continue;
                    };
                    let Some(desc) = describe(g, ox, oy, oct_sigma, orientation) else {
                        continue;
                    };
                    let kp = Keypoint {
                        x: ox * factor,
                        y: oy * factor,
                        scale: oct_sigma * factor,
                        orientation,
                        response: r.contrast.abs(),
                    };
                    if kp.x < 0.0 || kp.y < 0.0 || kp.x > (w - 1) as f64 || kp.y > (h - 1) as f64 {
                        continue;
                    }
                    out.push((kp, desc));
                }
            }
        }
    }
    out.sort_by(|a, b| {
        b.0.response
            .total_cmp(&a.0.response)
            .then(a.0.y.total_cmp(&b.0.y))
            .then(a.0.x.total_cmp(&b.0.x))
    });
    // Refinement can converge two seeds onto the same extremum.
    out.dedup_by(|a, b| {
        (a.0.x - b.0.x).abs() < 1e-9 && (a.0.y - b.0.y).abs() < 1e-9 && (a.0.scale - b.0.scale).abs() < 1e-9
    });
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn blob(w: usize, h: usize, cx: f64, cy: f64, sigma: f64) -> Plane {
        Plane::from_fn(w, h, |x, y| {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            0.1 + 0.8 * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp()
        })
    }

    fn texture(w: usize, h: usize, seed: u64) -> Plane {
        // Sum of a few random Gaussian blobs.
        let mut s = seed;
        let mut next = || {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64
        };
        let blobs: Vec<(f64, f64, f64, f64)> = (0..40)
            .map(|_| (next() * w as f64, next() * h as f64, 1.5 + 3.0 * next(), next() - 0.5))
            .collect();
        Plane::from_fn(w, h, |x, y| {
            0.5 + blobs
                .iter()
                .map(|&(bx, by, bs, a)| {
                    let (dx, dy) = (x as f64 - bx, y as f64 - by);
                    a * (-(dx * dx + dy * dy) / (2.0 * bs * bs)).exp()
                })
                .sum::<f64>()
        })
    }

    #[test]
    fn flat_image_has_no_keypoints() {
        let kps = detect_and_describe(&Plane::filled(64, 64, 0.4), &SiftParams::default()).unwrap();
        assert!(kps.is_empty());
    }

    #[test]
    fn too_small_image() {
        assert!(matches!(
            detect_and_describe(&Plane::zeros(31, 64), &SiftParams::default()),
            Err(Error::ImageTooSmall { .. })
        ));
    }

    #[test]
    fn gaussian_blob_is_detected_at_its_center() {
        let img = blob(64, 64, 31.3, 33.6, 3.0);
        let kps = detect_and_describe(&img, &SiftParams::default()).unwrap();
        assert!(!kps.is_empty());
        assert!(
            kps.iter().any(|(k, _)| (k.x - 31.3).hypot(k.y - 33.6) < 2.0),
            "{:?}",
            kps.iter().map(|(k, _)| (k.x, k.y)).collect::<Vec<_>>()
        );
    }

    #[test]
    fn descriptors_are_unit_norm_and_non_negative() {
        let kps = detect_and_describe(&texture(96, 96, 3), &SiftParams::default()).unwrap();
        assert!(kps.len() > 5);
        for (k, d) in &kps {
            let n: f64 = d.0.iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
            assert!(d.0.iter().all(|&v| v >= 0.0));
            assert!(k.response * 3.0 >= 0.03);
        }
    }

    #[test]
    fn descriptors_survive_quarter_turn() {
        let img = texture(96, 96, 7);
        let (w, h) = img.dims();
        // (x, y) -> (h - 1 - y, x)
        let rot = Plane::from_fn(h, w, |x, y| img.get(y, h - 1 - x));
        let a = detect_and_describe(&img, &SiftParams::default()).unwrap();
        let b = detect_and_describe(&rot, &SiftParams::default()).unwrap();
        let mut checked = 0;
        let mut good = 0;
        for (ka, da) in &a {
            let (ex, ey) = ((h - 1) as f64 - ka.y, ka.x);
            if let Some((_, db)) = b
                .iter()
                .find(|(kb, _)| (kb.x - ex).hypot(kb.y - ey) < 0.5 && (kb.scale - ka.scale).abs() < 0.1)
            {
                checked += 1;
                if da.dot(db) > 0.9 {
                    good += 1;
                }
            }
        }
        assert!(checked >= 5, "only {checked} correspondences");
        assert!(good as f64 >= 0.9 * checked as f64, "{good}/{checked}");
    }
}

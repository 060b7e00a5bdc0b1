//! Synthetic polarized eye scenes with per-pixel ground truth, a forward
//! model of the PFA capture, and target protocols for whole datasets.
//!
//! Scene geometry is expressed in units of `u = min(width, height)`:
//!
//! | feature                 | size                         |
//! |-------------------------|------------------------------|
//! | eye opening (ellipse)   | semi-axes `0.44 u` x `0.27 u` |
//! | iris / cornea           | radius `0.17 u`              |
//! | corneal glint           | radius `0.025 u`             |
//! | gaze displacement       | `PX_PER_DEG_PER_U * u` px/deg |
//!
//! The eye opening is fixed in the image; iris, pupil, glint and the scleral
//! texture translate with gaze. `eye_relief_scale` magnifies everything about
//! the image center. Intensities are fractions of sensor full scale.
//!
//! Scleral DoLP is three-octave value noise keyed by `subject_seed`
//! (lattice spacing `0.03 u`, halving per octave), mapped to `[0.05, 0.6]`.
//! Scleral AoLP is tangential to the limbus plus a one-octave subject-specific
//! perturbation. The cornea carries a tangential AoLP pattern centered on the
//! glint, which sits at the gaze-displaced iris center.

use std::collections::BTreeMap;
use std::f64::consts::{FRAC_PI_2, PI};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{CameraPosition, DatasetManifest, Eye, FrameRecord, ParticipantEntry};
use crate::demosaic::{ChannelProvenance, PolarizationChannels};
use crate::error::{Error, Result};
use crate::eval::GazeAngles;
use crate::mosaic::{write_raw_frame, FloatMosaic, PolarizerAngle, RawMosaicFrame, SuperpixelLayout};
use crate::plane::Plane;

/// Gaze displacement in pixels per degree, per unit of `min(width, height)`.
pub const PX_PER_DEG_PER_U: f64 = 0.005;

const OPENING_AX: f64 = 0.44;
const OPENING_AY: f64 = 0.27;
const IRIS_R: f64 = 0.17;
const GLINT_R: f64 = 0.025;
const TEXTURE_CELL: f64 = 0.03;
const TEXTURE_OCTAVES: u32 = 3;
const AOLP_CELL: f64 = 0.12;

const S0_SCLERA: f64 = 0.62;
const S0_IRIS: f64 = 0.55;
const S0_PUPIL: f64 = 0.02;
const S0_GLINT: f64 = 0.95;
const DOLP_IRIS: f64 = 0.03;
const DOLP_BACKGROUND: f64 = 0.02;
const DOLP_GLINT: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneParams {
    pub width: usize,
    pub height: usize,
    pub gaze: GazeAngles,
    /// Pixels at unit magnification.
    pub pupil_radius: f64,
    /// Magnification about the image center, in `[0.7, 1.3]`.
    pub eye_relief_scale: f64,
    pub subject_seed: u64,
    /// Background (eyelid/skin) level as a fraction of full scale.
    pub background_level: f64,
}

impl SceneParams {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            gaze: GazeAngles::new(0.0, 0.0),
            pupil_radius: 0.05 * width.min(height) as f64,
            eye_relief_scale: 1.0,
            subject_seed: 0,
            background_level: 0.3,
        }
    }

    pub fn unit(&self) -> f64 {
        self.width.min(self.height) as f64
    }

    pub fn px_per_deg(&self) -> f64 {
        PX_PER_DEG_PER_U * self.unit()
    }

    /// Image position of the corneal pattern center (and glint).
    pub fn pattern_center(&self) -> (f64, f64) {
        let (cx, cy) = self.center();
        let k = self.px_per_deg() * self.eye_relief_scale;
        (cx + k * self.gaze.yaw, cy - k * self.gaze.pitch)
    }

    fn center(&self) -> (f64, f64) {
        ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidParameter("scene must be non-empty".into()));
        }
        if !(self.pupil_radius > 0.0) {
            return Err(Error::InvalidParameter(format!(
                "pupil radius must be positive, got {}",
                self.pupil_radius
            )));
        }
        if !(0.7..=1.3).contains(&self.eye_relief_scale) {
            return Err(Error::InvalidParameter(format!(
                "eye relief scale must be in [0.7, 1.3], got {}",
                self.eye_relief_scale
            )));
        }
        if !(0.0..=1.0).contains(&self.background_level) {
            return Err(Error::InvalidParameter(format!(
                "background level must be in [0, 1], got {}",
                self.background_level
            )));
        }
        if !self.gaze.in_range() {
            return Err(Error::InvalidParameter("gaze outside [-90, 90]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    Background,
    Sclera,
    Iris,
    Pupil,
    CorneaHighlight,
}

/// Physical-convention ground truth: `dolp_true` relative to `s0_true`.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruthScene {
    pub s0_true: Plane,
    pub dolp_true: Plane,
    pub aolp_true: Plane,
    pub gaze: GazeAngles,
    pub region_map: Vec<Region>,
}

impl GroundTruthScene {
    pub fn dims(&self) -> (usize, usize) {
        self.s0_true.dims()
    }

    pub fn region(&self, x: usize, y: usize) -> Region {
        self.region_map[y * self.s0_true.width() + x]
    }
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic sub-seed for `(seed, a, b)`.
pub fn derive_seed(seed: u64, a: u64, b: u64) -> u64 {
    splitmix64(splitmix64(splitmix64(seed) ^ a) ^ b.wrapping_mul(0xD6E8_FEB8_6659_FD93))
}

fn lattice(seed: u64, ix: i64, iy: i64) -> f64 {
    let h = derive_seed(seed, ix as u64, iy as u64);
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Value noise in `[0, 1]` with lattice spacing `cell`.
fn value_noise(seed: u64, x: f64, y: f64, cell: f64) -> f64 {
    let (fx, fy) = (x / cell, y / cell);
    let (ix, iy) = (fx.floor(), fy.floor());
    let (tx, ty) = (smoothstep(fx - ix), smoothstep(fy - iy));
    let (ix, iy) = (ix as i64, iy as i64);
    let a = lattice(seed, ix, iy);
    let b = lattice(seed, ix + 1, iy);
    let c = lattice(seed, ix, iy + 1);
    let d = lattice(seed, ix + 1, iy + 1);
    let top = a + (b - a) * tx;
    let bottom = c + (d - c) * tx;
    top + (bottom - top) * ty
}

fn fractal_noise(seed: u64, x: f64, y: f64, cell: f64, octaves: u32) -> f64 {
    let mut sum = 0.0;
    let mut norm = 0.0;
    let mut amp = 1.0;
    let mut c = cell;
    for o in 0..octaves {
        sum += amp * value_noise(derive_seed(seed, 0x5C1E, o as u64), x, y, c);
        norm += amp;
        amp *= 0.5;
        c *= 0.5;
    }
    sum / norm
}

/// Folds an orientation into `(-pi/2, pi/2]`.
pub fn wrap_orientation(a: f64) -> f64 {
    let r = (a + FRAC_PI_2).rem_euclid(PI) - FRAC_PI_2;
    if r <= -FRAC_PI_2 {
        r + PI
    } else {
        r
    }
}

pub fn generate_scene(params: &SceneParams) -> Result<GroundTruthScene> {
    params.validate()?;
    let (w, h) = (params.width, params.height);
    let u = params.unit();
    let (cx, cy) = params.center();
    let s = params.eye_relief_scale;
    let k = params.px_per_deg();
    let (gx, gy) = (k * params.gaze.yaw, -k * params.gaze.pitch);
    let seed = params.subject_seed;
    let texture_seed = derive_seed(seed, 1, 0);
    let aolp_seed = derive_seed(seed, 2, 0);

    let n = w * h;
    let mut s0 = vec![0.0; n];
    let mut dolp = vec![0.0; n];
    let mut aolp = vec![0.0; n];
    let mut regions = vec![Region::Background; n];
    s0.par_chunks_mut(w)
        .zip(dolp.par_chunks_mut(w))
        .zip(aolp.par_chunks_mut(w))
        .zip(regions.par_chunks_mut(w))
        .enumerate()
        .for_each(|(y, (((s0r, dr), ar), rr))| {
            for x in 0..w {
                // Eye-frame coordinates at unit magnification.
                let qx = (x as f64 - cx) / s;
                let qy = (y as f64 - cy) / s;
                let (ex, ey) = (qx / (OPENING_AX * u), qy / (OPENING_AY * u));
                let (dx, dy) = (qx - gx, qy - gy);
                let r = dx.hypot(dy);
                let (region, s0v, dv, av) = if ex * ex + ey * ey > 1.0 {
                    (
                        Region::Background,
                        params.background_level,
                        DOLP_BACKGROUND,
                        0.0,
                    )
                } else if r <= GLINT_R * u {
                    (Region::CorneaHighlight, S0_GLINT, DOLP_GLINT, 0.0)
                } else if r <= params.pupil_radius {
                    (Region::Pupil, S0_PUPIL, 0.0, 0.0)
                } else if r <= IRIS_R * u {
                    let tangential = dy.atan2(dx) + FRAC_PI_2;
                    (Region::Iris, S0_IRIS, DOLP_IRIS, wrap_orientation(tangential))
                } else {
                    let n1 = fractal_noise(texture_seed, dx, dy, TEXTURE_CELL * u, TEXTURE_OCTAVES);
                    let n2 = value_noise(aolp_seed, dx, dy, AOLP_CELL * u);
                    let tangential = dy.atan2(dx) + FRAC_PI_2;
                    (
                        Region::Sclera,
                        S0_SCLERA,
                        0.05 + 0.55 * n1,
                        wrap_orientation(tangential + 0.6 * PI * (n2 - 0.5)),
                    )
                };
                s0r[x] = s0v;
                dr[x] = dv;
                ar[x] = av;
                rr[x] = region;
            }
        });
    Ok(GroundTruthScene {
        s0_true: Plane::new(w, h, s0)?,
        dolp_true: Plane::new(w, h, dolp)?,
        aolp_true: Plane::new(w, h, aolp)?,
        gaze: params.gaze,
        region_map: regions,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub read_noise_dn: f64,
    pub shot_noise: bool,
    /// Polarizer efficiency in `(0, 1]`; `1` is ideal. A value `e` leaks
    /// `(1 - e) / 2` of the orthogonal state into each pixel.
    pub polarizer_extinction: f64,
    pub rng_seed: u64,
}

impl NoiseModel {
    pub fn noiseless() -> Self {
        Self {
            read_noise_dn: 0.0,
            shot_noise: false,
            polarizer_extinction: 1.0,
            rng_seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.read_noise_dn >= 0.0) {
            return Err(Error::InvalidParameter("read noise must be >= 0".into()));
        }
        if !(self.polarizer_extinction > 0.0 && self.polarizer_extinction <= 1.0) {
            return Err(Error::InvalidParameter(
                "polarizer extinction must be in (0, 1]".into(),
            ));
        }
        Ok(())
    }
}

impl Default for NoiseModel {
    fn default() -> Self {
        Self {
            read_noise_dn: 2.0,
            shot_noise: true,
            polarizer_extinction: 1.0,
            rng_seed: 0,
        }
    }
}

/// Linear-polarizer transmission at the four angles for one pixel with
/// physical total `s0`, in the units of `s0`.
///
/// `I(theta) = (s0 + e (s1 cos 2 theta + s2 sin 2 theta)) / 2` with
/// `s1 = s0 dolp cos 2 aolp`, `s2 = s0 dolp sin 2 aolp`.
pub fn malus_samples(s0: f64, dolp: f64, aolp: f64, extinction: f64) -> [f64; 4] {
    let s1 = s0 * dolp * (2.0 * aolp).cos();
    let s2 = s0 * dolp * (2.0 * aolp).sin();
    PolarizerAngle::ALL.map(|a| {
        let t = 2.0 * a.radians();
        0.5 * (s0 + extinction * (s1 * t.cos() + s2 * t.sin()))
    })
}

fn full_scale(bit_depth: u8) -> f64 {
    ((1u32 << bit_depth) - 1) as f64
}

/// Noiseless, unquantized mosaic in digital numbers.
pub fn simulate_pfa_radiance(
    scene: &GroundTruthScene,
    layout: SuperpixelLayout,
    extinction: f64,
    bit_depth: u8,
) -> FloatMosaic {
    let (w, h) = scene.dims();
    let fs = full_scale(bit_depth);
    let data = (0..w * h)
        .into_par_iter()
        .map(|k| {
            let (x, y) = (k % w, k / w);
            let angle = layout.angle_at(x, y);
            malus_samples(
                fs * scene.s0_true.data()[k],
                scene.dolp_true.data()[k],
                scene.aolp_true.data()[k],
                extinction,
            )[angle.index()]
        })
        .collect();
    FloatMosaic {
        width: w,
        height: h,
        layout,
        data,
    }
}

/// All four angles at every pixel, as a perfect (non-mosaicked) sensor would see them.
pub fn ideal_channels(scene: &GroundTruthScene, extinction: f64, bit_depth: u8) -> PolarizationChannels {
    let (w, h) = scene.dims();
    let fs = full_scale(bit_depth);
    let samples: Vec<[f64; 4]> = (0..w * h)
        .map(|k| {
            malus_samples(
                fs * scene.s0_true.data()[k],
                scene.dolp_true.data()[k],
                scene.aolp_true.data()[k],
                extinction,
            )
        })
        .collect();
    let planes = [0, 1, 2, 3]
        .map(|c| Plane::new(w, h, samples.iter().map(|s| s[c]).collect()).expect("sized"));
    PolarizationChannels::new(planes, ChannelProvenance::FullResInterpolated).expect("equal dims")
}

/// Forward model: Malus sampling on the mosaic, Poisson shot noise at unit
/// gain, Gaussian read noise, rounding and clamping to the ADC range.
pub fn simulate_pfa_capture(
    scene: &GroundTruthScene,
    layout: SuperpixelLayout,
    noise: &NoiseModel,
    bit_depth: u8,
) -> Result<RawMosaicFrame> {
    noise.validate()?;
    if !(1..=16).contains(&bit_depth) {
        return Err(Error::InvalidParameter(format!(
            "bit depth must be in 1..=16, got {bit_depth}"
        )));
    }
    let radiance = simulate_pfa_radiance(scene, layout, noise.polarizer_extinction, bit_depth);
    let max = full_scale(bit_depth);
    let mut rng = ChaCha8Rng::seed_from_u64(noise.rng_seed);
    let read = Normal::new(0.0, noise.read_noise_dn.max(0.0))
        .map_err(|e| Error::InvalidParameter(e.to_string()))?;
    let data = radiance
        .data
        .iter()
        .map(|&mean| {
            let mut v = mean.max(0.0);
            if noise.shot_noise && v > 0.0 {
                v = Poisson::new(v).expect("positive mean").sample(&mut rng);
            }
            if noise.read_noise_dn > 0.0 {
                v += read.sample(&mut rng);
            }
            v.round().clamp(0.0, max) as u16
        })
        .collect();
    RawMosaicFrame::new(radiance.width, radiance.height, bit_depth, layout, data)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetPattern {
    /// 9 points on a 20 degree circle.
    Ring20,
    /// Uniform random points in the field of view.
    RandomSaccade,
    /// 9-point 30x20 degree oval plus 9-point 10 degree circle.
    Fp18,
}

impl TargetPattern {
    pub fn default_targets(self) -> usize {
        match self {
            TargetPattern::Ring20 => 9,
            TargetPattern::RandomSaccade => 20,
            TargetPattern::Fp18 => 18,
        }
    }

    pub fn sequence_suffix(self) -> &'static str {
        match self {
            TargetPattern::Ring20 => "RING20",
            TargetPattern::RandomSaccade => "RS",
            TargetPattern::Fp18 => "FP18",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ProtocolConfig {
    pub pattern: TargetPattern,
    /// Full horizontal and vertical extent in degrees.
    pub fov: (f64, f64),
    pub n_targets: usize,
    pub seed: u64,
}

impl ProtocolConfig {
    pub fn new(pattern: TargetPattern, seed: u64) -> Self {
        Self {
            pattern,
            fov: (30.0, 20.0),
            n_targets: pattern.default_targets(),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_targets != self.pattern.default_targets() {
            return Err(Error::InvalidParameter(format!(
                "{:?} uses {} targets, got {}",
                self.pattern,
                self.pattern.default_targets(),
                self.n_targets
            )));
        }
        if !(self.fov.0 > 0.0 && self.fov.1 > 0.0) {
            return Err(Error::InvalidParameter("field of view must be positive".into()));
        }
        Ok(())
    }

    /// Target gaze angles in presentation order.
    pub fn targets(&self) -> Result<Vec<GazeAngles>> {
        self.validate()?;
        let on_ellipse = |count: usize, ry: f64, rp: f64| -> Vec<GazeAngles> {
            (0..count)
                .map(|k| {
                    let t = 2.0 * PI * k as f64 / count as f64;
                    GazeAngles::new(ry * t.cos(), rp * t.sin())
                })
                .collect()
        };
        Ok(match self.pattern {
            TargetPattern::Ring20 => on_ellipse(9, 20.0, 20.0),
            TargetPattern::Fp18 => {
                let mut t = on_ellipse(9, self.fov.0 / 2.0, self.fov.1 / 2.0);
                t.extend(on_ellipse(9, 5.0, 5.0));
                t
            }
            TargetPattern::RandomSaccade => {
                let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
                let (hy, hp) = (self.fov.0 / 2.0, self.fov.1 / 2.0);
                (0..self.n_targets)
                    .map(|_| {
                        GazeAngles::new(rng.random_range(-hy..=hy), rng.random_range(-hp..=hp))
                    })
                    .collect()
            }
        })
    }
}

/// Per-condition scene changes, e.g. slippage (eye relief) or pupil size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionOverride {
    pub tag: String,
    /// Context prefix of the sequence name, e.g. `NW` or `SW`.
    pub sequence_prefix: String,
    pub pupil_radius: Option<f64>,
    pub eye_relief_scale: Option<f64>,
}

impl ConditionOverride {
    pub fn nominal() -> Self {
        Self {
            tag: "nominal".into(),
            sequence_prefix: "NW".into(),
            pupil_radius: None,
            eye_relief_scale: None,
        }
    }

    pub fn apply(&self, base: &SceneParams) -> SceneParams {
        let mut p = base.clone();
        if let Some(r) = self.pupil_radius {
            p.pupil_radius = r;
        }
        if let Some(s) = self.eye_relief_scale {
            p.eye_relief_scale = s;
        }
        p
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CaptureConfig {
    pub layout: SuperpixelLayout,
    pub noise: NoiseModel,
    pub bit_depth: u8,
}

impl Default for CaptureConfig {
    fn default() -> Self {
        Self {
            layout: SuperpixelLayout::default(),
            noise: NoiseModel::default(),
            bit_depth: 12,
        }
    }
}

pub fn participant_id_for(subject_seed: u64) -> String {
    format!("subject_{subject_seed:04}")
}

/// Renders and writes one frame per target per condition for the subject in
/// `scene_base`, returning a single-participant manifest whose frame paths
/// are relative to `out_dir`.
pub fn generate_dataset(
    protocol: &ProtocolConfig,
    scene_base: &SceneParams,
    conditions: &[ConditionOverride],
    capture: &CaptureConfig,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let targets = protocol.targets()?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let pid = participant_id_for(scene_base.subject_seed);
    let nominal = [ConditionOverride::nominal()];
    let conditions = if conditions.is_empty() { &nominal[..] } else { conditions };

    let jobs: Vec<(usize, usize)> = (0..conditions.len())
        .flat_map(|c| (0..targets.len()).map(move |t| (c, t)))
        .collect();
    let frames = jobs
        .par_iter()
        .map(|&(c, t)| {
            let cond = &conditions[c];
            let mut params = cond.apply(scene_base);
            params.gaze = targets[t];
            let scene = generate_scene(&params)?;
            let mut noise = capture.noise;
            noise.rng_seed = derive_seed(
                capture.noise.rng_seed ^ derive_seed(protocol.seed, scene_base.subject_seed, 0),
                c as u64,
                t as u64,
            );
            let frame = simulate_pfa_capture(&scene, capture.layout, &noise, capture.bit_depth)?;
            let sequence = format!("{}_{}", cond.sequence_prefix, protocol.pattern.sequence_suffix());
            let file = format!("{pid}_{sequence}_s{}_{:03}.pfaraw", protocol.seed, t);
            Ok((frame, file, sequence, c, t))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut records = Vec::with_capacity(frames.len());
    for (frame, file, sequence, c, t) in frames {
        write_raw_frame(&frame, &out_dir.join(&file))?;
        records.push(FrameRecord {
            frame_path: file.into(),
            gaze_gt: targets[t],
            condition_tag: conditions[c].tag.clone(),
            sequence_name: sequence,
        });
    }
    let mut metadata = BTreeMap::new();
    metadata.insert("monitor_distance_cm".into(), 48.0.into());
    metadata.insert("target_tilt_deg".into(), (-9.7).into());
    metadata.insert("fov_deg".into(), serde_json::json!([protocol.fov.0, protocol.fov.1]));
    Ok(DatasetManifest {
        participants: vec![ParticipantEntry {
            participant_id: pid,
            eye: Eye::Left,
            camera_position: CameraPosition::LowerTemporal,
            records,
        }],
        metadata,
    })
}

/// Concatenates manifests, merging records of participants that appear in
/// more than one.
pub fn merge_manifests(manifests: impl IntoIterator<Item = DatasetManifest>) -> DatasetManifest {
    let mut out = DatasetManifest::default();
    for m in manifests {
        for p in m.participants {
            match out
                .participants
                .iter_mut()
                .find(|q| q.participant_id == p.participant_id)
            {
                Some(q) => q.records.extend(p.records),
                None => out.participants.push(p),
            }
        }
        out.metadata.extend(m.metadata);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::demosaic::demosaic_bilinear;
    use crate::stokes::{compute_products, compute_stokes, DolpConvention, ProductConfig};

    #[test]
    fn malus_examples() {
        let s = malus_samples(2.0, 1.0, 0.0, 1.0);
        for (got, want) in s.iter().zip([2.0, 1.0, 0.0, 1.0]) {
            assert!((got - want).abs() < 1e-15);
        }
        let s = malus_samples(3.0, 0.0, 0.7, 1.0);
        assert!(s.iter().all(|&v| v == 1.5));
        // Partial extinction shrinks the modulation symmetrically.
        let s = malus_samples(2.0, 1.0, 0.0, 0.5);
        assert!((s[0] - 1.5).abs() < 1e-15 && (s[2] - 0.5).abs() < 1e-15);
    }

    #[test]
    fn scenes_are_deterministic_and_in_range() {
        let mut p = SceneParams::new(96, 80);
        p.subject_seed = 11;
        p.gaze = GazeAngles::new(5.0, -3.0);
        let a = generate_scene(&p).unwrap();
        let b = generate_scene(&p).unwrap();
        assert_eq!(a, b);
        for k in 0..a.s0_true.len() {
            let d = a.dolp_true.data()[k];
            let ang = a.aolp_true.data()[k];
            assert!((0.0..=1.0).contains(&d));
            assert!(ang > -FRAC_PI_2 && ang <= FRAC_PI_2);
            match a.region_map[k] {
                Region::Sclera => assert!((0.05..=0.6).contains(&d)),
                Region::Iris => assert!(d < 0.05),
                Region::Pupil => assert_eq!(d, 0.0),
                _ => {}
            }
        }
    }

    fn glint_center(scene: &GroundTruthScene) -> (f64, f64) {
        let (w, h) = scene.dims();
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0.0);
        for y in 0..h {
            for x in 0..w {
                if scene.region(x, y) == Region::CorneaHighlight {
                    sx += x as f64;
                    sy += y as f64;
                    n += 1.0;
                }
            }
        }
        (sx / n, sy / n)
    }

    #[test]
    fn corneal_pattern_tracks_gaze() {
        let mut p = SceneParams::new(512, 512);
        let a = glint_center(&generate_scene(&p).unwrap());
        p.gaze = GazeAngles::new(10.0, 0.0);
        let b = glint_center(&generate_scene(&p).unwrap());
        let expected = 10.0 * PX_PER_DEG_PER_U * 512.0;
        assert!((b.0 - a.0 - expected).abs() < 0.5, "{a:?} {b:?}");
        assert!((b.1 - a.1).abs() < 1e-9);
    }

    #[test]
    fn subjects_have_distinct_scleral_texture() {
        let mut p = SceneParams::new(256, 256);
        p.subject_seed = 1;
        let a = generate_scene(&p).unwrap();
        p.subject_seed = 2;
        let b = generate_scene(&p).unwrap();
        let idx: Vec<usize> = (0..a.region_map.len())
            .filter(|&k| a.region_map[k] == Region::Sclera)
            .collect();
        let xs: Vec<f64> = idx.iter().map(|&k| a.dolp_true.data()[k]).collect();
        let ys: Vec<f64> = idx.iter().map(|&k| b.dolp_true.data()[k]).collect();
        let mx = xs.iter().sum::<f64>() / xs.len() as f64;
        let my = ys.iter().sum::<f64>() / ys.len() as f64;
        let cov: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
        let vx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
        let vy: f64 = ys.iter().map(|y| (y - my).powi(2)).sum();
        let ncc = cov / (vx * vy).sqrt();
        assert!(ncc.abs() < 0.5, "ncc = {ncc}");
    }

    #[test]
    fn constant_region_round_trip_is_exact() {
        let scene = generate_scene(&SceneParams::new(64, 64)).unwrap();
        let mosaic = simulate_pfa_radiance(&scene, SuperpixelLayout::default(), 1.0, 12);
        let ch = demosaic_bilinear(&mosaic);
        let cfg = ProductConfig::for_bit_depth(12).with_convention(DolpConvention::PhysicalX2);
        let prod = compute_products(&compute_stokes(&ch), &cfg);
        // Top-left corner is background with constant ground truth.
        for y in 0..4 {
            for x in 0..4 {
                assert!((prod.dolp.get(x, y) - DOLP_BACKGROUND).abs() < 1e-6);
                assert!(prod.aolp.get(x, y).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn capture_is_seeded_and_clamped() {
        let scene = generate_scene(&SceneParams::new(32, 32)).unwrap();
        let noise = NoiseModel {
            read_noise_dn: 5.0,
            shot_noise: true,
            polarizer_extinction: 0.9,
            rng_seed: 4,
        };
        let a = simulate_pfa_capture(&scene, SuperpixelLayout::default(), &noise, 8).unwrap();
        let b = simulate_pfa_capture(&scene, SuperpixelLayout::default(), &noise, 8).unwrap();
        assert_eq!(a, b);
        assert!(a.data().iter().all(|&v| v <= 255));
        let c = simulate_pfa_capture(
            &scene,
            SuperpixelLayout::default(),
            &NoiseModel { rng_seed: 5, ..noise },
            8,
        )
        .unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn protocol_geometry() {
        let ring = ProtocolConfig::new(TargetPattern::Ring20, 0).targets().unwrap();
        assert_eq!(ring.len(), 9);
        for t in &ring {
            assert!((t.yaw.hypot(t.pitch) - 20.0).abs() < 1e-9);
        }
        let rs = ProtocolConfig::new(TargetPattern::RandomSaccade, 17);
        let a = rs.targets().unwrap();
        assert_eq!(a.len(), 20);
        assert!(a.iter().all(|t| t.yaw.abs() <= 15.0 && t.pitch.abs() <= 10.0));
        assert_eq!(a, rs.targets().unwrap());
        assert_ne!(a, ProtocolConfig::new(TargetPattern::RandomSaccade, 18).targets().unwrap());
        let fp = ProtocolConfig::new(TargetPattern::Fp18, 0).targets().unwrap();
        assert_eq!(fp.len(), 18);
        let mut bad = ProtocolConfig::new(TargetPattern::Ring20, 0);
        bad.n_targets = 12;
        assert!(bad.targets().is_err());
    }

    #[test]
    fn dataset_writes_frames_and_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let mut base = SceneParams::new(32, 32);
        base.subject_seed = 3;
        let conditions = vec![
            ConditionOverride::nominal(),
            ConditionOverride {
                tag: "slippage".into(),
                sequence_prefix: "SW".into(),
                pupil_radius: None,
                eye_relief_scale: Some(1.15),
            },
        ];
        let m = generate_dataset(
            &ProtocolConfig::new(TargetPattern::Ring20, 0),
            &base,
            &conditions,
            &CaptureConfig::default(),
            dir.path(),
        )
        .unwrap();
        assert_eq!(m.participants.len(), 1);
        assert_eq!(m.participants[0].records.len(), 18);
        assert_eq!(m.participants[0].records[9].sequence_name, "SW_RING20");
        let path = dir.path().join("m.json");
        m.save(&path).unwrap();
        let ds = crate::dataset::load_gaze_dataset(&path).unwrap();
        assert_eq!(ds.n_records(), 18);
    }

    #[test]
    fn wrap_orientation_range() {
        for a in [-7.0, -FRAC_PI_2, 0.0, FRAC_PI_2, 3.0, 10.0] {
            let r = wrap_orientation(a);
            assert!(r > -FRAC_PI_2 && r <= FRAC_PI_2);
            assert!(((r - a) / PI - ((r - a) / PI).round()).abs() < 1e-12);
        }
    }
}

//! Capacity-matched model inputs: the four-channel polarization stack and
//! the channel-averaged pseudo-intensity stack duplicated to four planes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::demosaic::{ChannelProvenance, PolarizationChannels};
use crate::error::Result;
use crate::plane::Plane;
use crate::tensor::write_tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Modality {
    Pet,
    PseudoIntensity,
}

impl Modality {
    pub fn as_str(self) -> &'static str {
        match self {
            Modality::Pet => "pet",
            Modality::PseudoIntensity => "pseudo_intensity",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    /// Zero mean, unit variance per plane; constant planes become zero.
    #[default]
    PerChannelStandardize,
    None,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    pub planes: [Plane; 4],
    pub modality: Modality,
    pub source_frame_id: String,
    pub provenance: ChannelProvenance,
}

impl ModelInput {
    pub fn dims(&self) -> (usize, usize) {
        self.planes[0].dims()
    }

    pub fn as_channels(&self) -> PolarizationChannels {
        PolarizationChannels::new(self.planes.clone(), self.provenance).expect("equal dims")
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let refs: Vec<&Plane> = self.planes.iter().collect();
        let names: &[&str] = match self.modality {
            Modality::Pet => &["i0", "i45", "i90", "i135"],
            Modality::PseudoIntensity => &["m", "m", "m", "m"],
        };
        write_tensor(path, &refs, names)
    }
}

/// Zero-mean, unit-variance (population) copy of `plane`.
pub fn standardize(plane: &Plane) -> Plane {
    let n = plane.len() as f64;
    let mean = plane.mean();
    let var = plane.data().iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    // Rounding in the mean leaves ~1e-32 relative variance on constant planes.
    if var <= 1e-24 * (mean * mean + 1.0) {
        return Plane::zeros(plane.width(), plane.height());
    }
    let sd = var.sqrt();
    plane.map(|v| (v - mean) / sd)
}

fn normalized(plane: &Plane, normalize: Normalization) -> Plane {
    match normalize {
        Normalization::PerChannelStandardize => standardize(plane),
        Normalization::None => plane.clone(),
    }
}

pub fn form_pet_input(
    channels: &PolarizationChannels,
    normalize: Normalization,
    source_frame_id: impl Into<String>,
) -> ModelInput {
    let [a, b, c, d] = channels.planes();
    ModelInput {
        planes: [
            normalized(a, normalize),
            normalized(b, normalize),
            normalized(c, normalize),
            normalized(d, normalize),
        ],
        modality: Modality::Pet,
        source_frame_id: source_frame_id.into(),
        provenance: channels.provenance,
    }
}

/// Per-pixel channel mean, emulating a polarization-insensitive sensor.
pub fn channel_mean(channels: &PolarizationChannels) -> Plane {
    let (w, h) = channels.dims();
    let [a, b, c, d] = channels.planes();
    let data = a
        .data()
        .iter()
        .zip(b.data())
        .zip(c.data())
        .zip(d.data())
        .map(|(((a, b), c), d)| (a + b + c + d) / 4.0)
        .collect();
    Plane::new(w, h, data).expect("sized")
}

pub fn form_pseudo_intensity_input(
    channels: &PolarizationChannels,
    normalize: Normalization,
    source_frame_id: impl Into<String>,
) -> ModelInput {
    let m = normalized(&channel_mean(channels), normalize);
    ModelInput {
        planes: [m.clone(), m.clone(), m.clone(), m],
        modality: Modality::PseudoIntensity,
        source_frame_id: source_frame_id.into(),
        provenance: channels.provenance,
    }
}

pub fn form_input(
    channels: &PolarizationChannels,
    modality: Modality,
    normalize: Normalization,
    source_frame_id: impl Into<String>,
) -> ModelInput {
    match modality {
        Modality::Pet => form_pet_input(channels, normalize, source_frame_id),
        Modality::PseudoIntensity => {
            form_pseudo_intensity_input(channels, normalize, source_frame_id)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stokes::compute_stokes;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_channels(w: usize, h: usize, seed: u64) -> PolarizationChannels {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let planes = [0, 1, 2, 3].map(|_| Plane::from_fn(w, h, |_, _| rng.random::<f64>() * 1000.0));
        PolarizationChannels::new(planes, ChannelProvenance::FullResInterpolated).unwrap()
    }

    #[test]
    fn pet_input_without_normalization_copies_channels() {
        let ch = PolarizationChannels::constant(3, 2, [4.0, 3.0, 2.0, 1.0]);
        let inp = form_pet_input(&ch, Normalization::None, "f");
        for (p, want) in inp.planes.iter().zip([4.0, 3.0, 2.0, 1.0]) {
            assert!(p.data().iter().all(|&v| v == want));
        }
        assert_eq!(inp.modality, Modality::Pet);
    }

    #[test]
    fn constant_planes_standardize_to_zero() {
        let ch = PolarizationChannels::constant(5, 5, [0.1, 3.3, 1e6, 7.0]);
        let inp = form_pet_input(&ch, Normalization::PerChannelStandardize, "f");
        assert!(inp.planes.iter().all(|p| p.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn standardized_planes_have_zero_mean_unit_variance() {
        let inp = form_pet_input(&random_channels(17, 13, 5), Normalization::PerChannelStandardize, "f");
        for p in &inp.planes {
            let m = p.mean();
            let var = p.data().iter().map(|v| (v - m) * (v - m)).sum::<f64>() / p.len() as f64;
            assert!(m.abs() < 1e-9);
            assert!((var - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn pseudo_intensity_is_the_channel_mean() {
        let ch = PolarizationChannels::constant(2, 2, [4.0, 3.0, 2.0, 1.0]);
        let inp = form_pseudo_intensity_input(&ch, Normalization::None, "f");
        assert!(inp.planes.iter().all(|p| p.data().iter().all(|&v| v == 2.5)));

        let ch = random_channels(9, 7, 1);
        let m = channel_mean(&ch);
        let intensity = compute_stokes(&ch).s0.map(|v| v / 4.0);
        for (a, b) in m.data().iter().zip(intensity.data()) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn unpolarized_inputs_coincide() {
        let base = random_channels(8, 8, 2).planes()[0].clone();
        let ch = PolarizationChannels::new(
            [base.clone(), base.clone(), base.clone(), base],
            ChannelProvenance::FullResInterpolated,
        )
        .unwrap();
        for norm in [Normalization::None, Normalization::PerChannelStandardize] {
            let a = form_pet_input(&ch, norm, "f");
            let b = form_pseudo_intensity_input(&ch, norm, "f");
            assert_eq!(a.planes, b.planes);
        }
    }

    #[test]
    fn pseudo_intensity_is_idempotent() {
        let first = form_pseudo_intensity_input(&random_channels(6, 6, 3), Normalization::None, "f");
        let second = form_pseudo_intensity_input(&first.as_channels(), Normalization::None, "f");
        assert_eq!(first.planes, second.planes);
    }

    #[test]
    fn pseudo_intensity_discards_polarization() {
        // Equal per-pixel sums, different DoLP.
        let a = PolarizationChannels::constant(4, 4, [10.0, 10.0, 10.0, 10.0]);
        let b = PolarizationChannels::constant(4, 4, [18.0, 10.0, 2.0, 10.0]);
        let pa = form_pseudo_intensity_input(&a, Normalization::None, "a");
        let pb = form_pseudo_intensity_input(&b, Normalization::None, "b");
        assert_eq!(pa.planes, pb.planes);
        let sa = compute_stokes(&a);
        let sb = compute_stokes(&b);
        assert_ne!(sa.s1, sb.s1);
    }
}

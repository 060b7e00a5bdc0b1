use pet_core::demosaic::demosaic_bilinear;
use pet_core::eval::GazeAngles;
use pet_core::features::*;
use pet_core::mosaic::SuperpixelLayout;
use pet_core::stokes::*;
use pet_core::synth::*;
use pet_core::Plane;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dolp_image(subject: u64, gaze: GazeAngles, noise_seed: u64) -> Plane {
    let mut p = SceneParams::new(384, 384);
    p.subject_seed = subject;
    p.gaze = gaze;
    let scene = generate_scene(&p).unwrap();
    let noise = NoiseModel {
        rng_seed: noise_seed,
        ..Default::default()
    };
    let frame = simulate_pfa_capture(&scene, SuperpixelLayout::default(), &noise, 12).unwrap();
    let products = compute_products(&compute_stokes(&demosaic_bilinear(&frame)), &ProductConfig::for_bit_depth(12));
    match_image(&products, MatchPlane::Dolp).unwrap()
}

fn match_planes(a: &Plane, b: &Plane) -> MatchReport {
    stability_report(a, std::slice::from_ref(b), &MatchParams::default())
        .unwrap()
        .remove(0)
}

fn shifted(img: &Plane, dx: usize, dy: usize) -> Plane {
    Plane::from_fn(img.width(), img.height(), |x, y| {
        img.get(x.saturating_sub(dx), y.saturating_sub(dy))
    })
}

#[test]
fn self_match_is_identity() {
    let img = dolp_image(3, GazeAngles::new(0.0, 0.0), 1);
    let r = match_planes(&img, &img);
    assert!(r.n_inliers >= 20, "{} inliers", r.n_inliers);
    assert!(r.n_inliers == r.n_putative);
    for (row, id) in r.transform.iter().zip(ransac::IDENTITY.iter()) {
        for (a, b) in row.iter().zip(id) {
            assert!((a - b).abs() < 1e-6, "{:?}", r.transform);
        }
    }
}

#[test]
fn small_shift_recovered() {
    let img = dolp_image(4, GazeAngles::new(1.0, 0.0), 2);
    let moved = shifted(&img, 2, 0);
    let r = match_planes(&img, &moved);
    assert!(r.n_inliers >= 20, "{} inliers", r.n_inliers);
    assert!((r.transform[0][2] - 2.0).abs() < 0.5, "{:?}", r.transform);
    assert!(r.transform[1][2].abs() < 0.5, "{:?}", r.transform);
}

#[test]
fn brightness_scaling_does_not_change_keypoints() {
    let img = dolp_image(5, GazeAngles::new(0.0, 2.0), 3);
    let brighter = Plane::from_fn(img.width(), img.height(), |x, y| 0.6 * img.get(x, y));
    let a = detect_and_describe(&img, &SiftParams::default()).unwrap();
    let b = detect_and_describe(&brighter, &SiftParams::default()).unwrap();
    // Contrast thresholding is absolute, so dimming may drop weak points but never adds new ones.
    assert!(b.len() <= a.len());
    let r = match_planes(&img, &brighter);
    assert!(r.n_inliers >= 20, "{} inliers", r.n_inliers);
}

#[test]
fn different_subjects_do_not_verify() {
    let a = dolp_image(10, GazeAngles::new(0.0, 0.0), 4);
    let b = dolp_image(11, GazeAngles::new(0.0, 0.0), 5);
    let r = match_planes(&a, &b);
    assert!(r.n_inliers < 8, "{} inliers across subjects", r.n_inliers);
}

#[test]
fn planted_matches_survive_distractors() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let random_desc = |rng: &mut ChaCha8Rng| {
        let mut v = [0.0; 128];
        for x in v.iter_mut() {
            *x = rng.random_range(0.0..1.0);
        }
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        v.iter_mut().for_each(|x| *x /= n);
        Descriptor(v)
    };
    let a: Vec<_> = (0..40).map(|_| random_desc(&mut rng)).collect();
    let mut b: Vec<_> = (0..200).map(|_| random_desc(&mut rng)).collect();
    let slots: Vec<usize> = (0..40).map(|i| i * 5 + 2).collect();
    for (i, &s) in slots.iter().enumerate() {
        b[s] = a[i].clone();
    }
    let m = match_descriptors(&a, &b, 0.75);
    assert_eq!(m.len(), 40);
    for (i, j) in m {
        assert_eq!(j, slots[i]);
    }
}

#[test]
fn similarity_recovered_among_outliers() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (th, s): (f64, f64) = (10f64.to_radians(), 1.05);
    let t = [[s * th.cos(), -s * th.sin(), 12.0], [s * th.sin(), s * th.cos(), -7.0]];
    let mut pairs = Vec::new();
    for i in 0..80 {
        let src = [rng.random_range(0.0..300.0), rng.random_range(0.0..300.0)];
        let dst = if i % 4 == 0 {
            [rng.random_range(0.0..300.0), rng.random_range(0.0..300.0)]
        } else {
            apply_transform(&t, src)
        };
        pairs.push(PointPair { src, dst });
    }
    let r = ransac_verify(&pairs, &RansacParams::default()).unwrap();
    assert!(r.n_inliers >= 60);
    for (row, want) in r.transform.iter().zip(&t) {
        for (a, b) in row.iter().zip(want) {
            assert!((a - b).abs() < 1e-6);
        }
    }
    let again = ransac_verify(&pairs, &RansacParams::default()).unwrap();
    assert_eq!(r.inliers, again.inliers);
}

#[test]
fn empty_session_list_rejected() {
    let img = Plane::zeros(64, 64);
    assert!(stability_report(&img, &[], &MatchParams::default()).is_err());
}

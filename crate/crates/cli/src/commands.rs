use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::Serialize;

use pet_core::calib::{
    apply_calibration, extract_features, fit_affine_calibration, fit_standin_regressor,
    predict_gaze, CalibrationParams, FeatureVector, RegressorConfig, RegressorModel,
};
use pet_core::dataset::{
    load_gaze_dataset, FrameRecord, ParticipantPredictions, PredictionRecord, PredictionSet,
};
use pet_core::demosaic::{demosaic_bilinear, gaussian_smooth, split_superpixels, PolarizationChannels};
use pet_core::eval::{
    bootstrap_ci, participant_e95, percentile_difference_curve, u50_e95, AngularMetric,
    BootstrapResult, DifferenceCurve, ParticipantErrors, Statistic,
};
use pet_core::features::{match_image, stability_report, MatchParams, MatchPlane, TransformModel};
use pet_core::input::{form_input, Modality, Normalization};
use pet_core::mosaic::{read_raw_frame, write_raw_frame, Mosaic, RawMosaicFrame, SuperpixelLayout};
use pet_core::render::{render_composite, CompositeMode};
use pet_core::stokes::{compute_products, compute_stokes, DolpConvention, PolarizationProducts, ProductConfig};
use pet_core::synth::{
    generate_dataset, generate_scene, merge_manifests, simulate_pfa_capture,
    CaptureConfig, ConditionOverride, NoiseModel, ProtocolConfig, SceneParams, TargetPattern,
};
use pet_core::tensor::write_tensor;
use pet_core::eval::GazeAngles;

use crate::plot::emit_plot;
use crate::*;

pub(crate) fn execute(cli: &Cli) -> Result<()> {
    fs::create_dir_all(&cli.out).with_context(|| format!("creating {}", cli.out.display()))?;
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = cli.threads {
            if n == 0 {
                bail!("--threads must be positive");
            }
            b = b.num_threads(n);
        }
        b.build()?
    };
    pool.install(|| dispatch(cli))
}

fn dispatch(cli: &Cli) -> Result<()> {
    let out = cli.out.as_path();
    match &cli.command {
        Command::Synth { target } => match target {
            SynthTarget::Scene(a) => synth_scene(a, cli.seed, out),
            SynthTarget::Dataset(a) => synth_dataset(a, cli.seed, out),
        },
        Command::Demosaic(a) => demosaic(a, out),
        Command::Stokes(a) => stokes(a, out),
        Command::Render(a) => render(a, out),
        Command::FormInput(a) => form_input_cmd(a, out),
        Command::Match(a) => match_cmd(a, cli.seed, out),
        Command::Calibrate(a) => calibrate(a, out),
        Command::TrainStandin(a) => train(a, out),
        Command::Predict(a) => predict(a, out),
        Command::Evaluate(a) => evaluate(&a.arms, cli.seed, out),
        Command::DiffCurve(a) => diff_curve(&a.arms, cli.seed, out),
        Command::Bench(a) => bench(a, cli.seed, out),
    }
}

fn parse_layout(s: &str) -> Result<SuperpixelLayout> {
    let v: Vec<u16> = s
        .split(',')
        .map(|t| t.trim().parse::<u16>())
        .collect::<std::result::Result<_, _>>()
        .with_context(|| format!("layout '{s}' must be four comma-separated angles"))?;
    let [a, b, c, d] = v[..] else {
        bail!("layout '{s}' must list exactly four angles");
    };
    Ok(SuperpixelLayout::from_degrees([[a, b], [c, d]])?)
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn capture_config(a: &CaptureArgs, seed: u64) -> Result<CaptureConfig> {
    let layout = match &a.layout {
        Some(s) => parse_layout(s)?,
        None => SuperpixelLayout::default(),
    };
    Ok(CaptureConfig {
        layout,
        noise: NoiseModel {
            read_noise_dn: a.read_noise,
            shot_noise: !a.no_shot_noise,
            polarizer_extinction: a.extinction,
            rng_seed: seed,
        },
        bit_depth: a.bit_depth,
    })
}

fn synth_scene(a: &SceneArgs, seed: u64, out: &Path) -> Result<()> {
    let mut params = SceneParams::new(a.width, a.height);
    params.gaze = GazeAngles::new(a.yaw, a.pitch);
    params.subject_seed = a.subject_seed;
    if let Some(r) = a.pupil_radius {
        params.pupil_radius = r;
    }
    params.eye_relief_scale = a.eye_relief;
    params.background_level = a.background;
    let capture = capture_config(&a.capture, seed)?;
    let scene = generate_scene(&params)?;
    let frame = simulate_pfa_capture(&scene, capture.layout, &capture.noise, capture.bit_depth)?;
    write_raw_frame(&frame, &out.join("frame.pfaraw"))?;
    let regions = pet_core::Plane::new(
        a.width,
        a.height,
        scene.region_map.iter().map(|&r| r as u8 as f64).collect(),
    )?;
    write_tensor(
        &out.join("truth.pft"),
        &[&scene.s0_true, &scene.dolp_true, &scene.aolp_true, &regions],
        &["s0_true", "dolp_true", "aolp_true", "region"],
    )?;
    write_json(&out.join("scene.json"), &params)?;
    println!("wrote {}", out.join("frame.pfaraw").display());
    Ok(())
}

fn synth_dataset(a: &DatasetArgs, seed: u64, out: &Path) -> Result<()> {
    if a.subjects == 0 {
        bail!("--subjects must be positive");
    }
    let capture = capture_config(&a.capture, seed)?;
    let mut manifests = Vec::new();
    for subject in a.first_subject..a.first_subject + a.subjects {
        let mut base = SceneParams::new(a.size, a.size);
        base.subject_seed = subject;
        let conditions: Vec<ConditionOverride> = a
            .conditions
            .iter()
            .map(|c| match c {
                ConditionArg::Nominal => ConditionOverride::nominal(),
                ConditionArg::Slippage => ConditionOverride {
                    tag: "slippage".into(),
                    sequence_prefix: "SW".into(),
                    pupil_radius: None,
                    eye_relief_scale: Some(1.1),
                },
                ConditionArg::Pupil => ConditionOverride {
                    tag: "pupil".into(),
                    sequence_prefix: "NW".into(),
                    pupil_radius: Some(1.4 * base.pupil_radius),
                    eye_relief_scale: None,
                },
            })
            .collect();
        for pattern in &a.patterns {
            let pattern = match pattern {
                PatternArg::Ring20 => TargetPattern::Ring20,
                PatternArg::RandomSaccade => TargetPattern::RandomSaccade,
                PatternArg::Fp18 => TargetPattern::Fp18,
            };
            let protocol = ProtocolConfig::new(pattern, seed);
            manifests.push(generate_dataset(&protocol, &base, &conditions, &capture, out)?);
        }
    }
    let manifest = merge_manifests(manifests);
    manifest.save(&out.join("manifest.json"))?;
    println!(
        "wrote {} frames for {} subjects to {}",
        manifest.participants.iter().map(|p| p.records.len()).sum::<usize>(),
        manifest.participants.len(),
        out.display()
    );
    Ok(())
}

fn load_frame(path: &Path, layout: Option<&str>) -> Result<RawMosaicFrame> {
    let layout = layout.map(parse_layout).transpose()?;
    read_raw_frame(path, layout).with_context(|| format!("reading {}", path.display()))
}

fn channels_of(frame: &RawMosaicFrame, method: DemosaicMethod) -> PolarizationChannels {
    match method {
        DemosaicMethod::Bilinear => demosaic_bilinear(frame),
        DemosaicMethod::Superpixel => split_superpixels(frame),
    }
}

fn smoothed(ch: PolarizationChannels, sigma: f64) -> Result<PolarizationChannels> {
    if sigma < 0.0 {
        bail!("sigma must be >= 0 (0 disables smoothing)");
    }
    Ok(if sigma > 0.0 { gaussian_smooth(&ch, sigma)? } else { ch })
}

fn products_of(frame: &RawMosaicFrame, method: DemosaicMethod, a: &ProductArgs) -> Result<PolarizationProducts> {
    let ch = smoothed(channels_of(frame, method), a.sigma)?;
    let mut cfg = ProductConfig::for_bit_depth(frame.bit_depth());
    cfg.mask_threshold_rel = a.mask_rel;
    cfg.dolp_convention = match a.convention {
        ConventionArg::PaperLiteral => DolpConvention::PaperLiteral,
        ConventionArg::PhysicalX2 => DolpConvention::PhysicalX2,
    };
    Ok(compute_products(&compute_stokes(&ch), &cfg))
}

fn demosaic(a: &DemosaicArgs, out: &Path) -> Result<()> {
    let frame = load_frame(&a.input.frame, a.input.layout.as_deref())?;
    let ch = smoothed(channels_of(&frame, a.input.method), a.sigma)?;
    let [p0, p45, p90, p135] = ch.planes();
    let path = out.join("channels.pft");
    write_tensor(&path, &[p0, p45, p90, p135], &["i0", "i45", "i90", "i135"])?;
    println!("wrote {}", path.display());
    Ok(())
}

fn stokes(a: &StokesArgs, out: &Path) -> Result<()> {
    let frame = load_frame(&a.input.frame, a.input.layout.as_deref())?;
    let pr = products_of(&frame, a.input.method, &a.products)?;
    write_tensor(&out.join("intensity.pft"), &[&pr.intensity], &["intensity"])?;
    write_tensor(&out.join("dolp.pft"), &[&pr.dolp], &["dolp"])?;
    write_tensor(&out.join("aolp.pft"), &[&pr.aolp], &["aolp"])?;
    write_tensor(&out.join("mask.pft"), &[&pr.mask_plane()], &["mask"])?;
    render_composite(&pr, CompositeMode::MethodsHsv, a.gamma)?.save_png(&out.join("composite_methods.png"))?;
    render_composite(&pr, CompositeMode::FigureHsv, a.gamma)?.save_png(&out.join("composite_figure.png"))?;
    let unmasked = pr.mask.iter().filter(|&&m| m).count();
    println!(
        "{}x{} frame, {unmasked} unmasked pixels, products written to {}",
        frame.width(),
        frame.height(),
        out.display()
    );
    Ok(())
}

fn render(a: &RenderArgs, out: &Path) -> Result<()> {
    let frame = load_frame(&a.input.frame, a.input.layout.as_deref())?;
    let pr = products_of(&frame, a.input.method, &a.products)?;
    let (mode, name) = match a.mode {
        ModeArg::Methods => (CompositeMode::MethodsHsv, "composite_methods.png"),
        ModeArg::Figure => (CompositeMode::FigureHsv, "composite_figure.png"),
    };
    render_composite(&pr, mode, a.gamma)?.save_png(&out.join(name))?;
    println!("wrote {}", out.join(name).display());
    Ok(())
}

fn modality_of(m: ModalityArg) -> Modality {
    match m {
        ModalityArg::Pet => Modality::Pet,
        ModalityArg::PseudoIntensity => Modality::PseudoIntensity,
    }
}

fn normalization(no_normalize: bool) -> Normalization {
    if no_normalize {
        Normalization::None
    } else {
        Normalization::PerChannelStandardize
    }
}

fn form_input_cmd(a: &FormInputArgs, out: &Path) -> Result<()> {
    let frame = load_frame(&a.input.frame, a.input.layout.as_deref())?;
    let ch = smoothed(channels_of(&frame, a.input.method), a.form.input_sigma)?;
    let modality = modality_of(a.form.modality);
    let id = a
        .input
        .frame
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let input = form_input(&ch, modality, normalization(a.form.no_normalize), id);
    let path = out.join(format!("input_{}.pft", modality.as_str()));
    input.write(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

fn match_cmd(a: &MatchArgs, seed: u64, out: &Path) -> Result<()> {
    let plane = match a.plane {
        PlaneArg::Dolp => MatchPlane::Dolp,
        PlaneArg::Aolp => MatchPlane::Aolp,
        PlaneArg::Composite => MatchPlane::Composite,
        PlaneArg::Intensity => MatchPlane::Intensity,
    };
    let image = |p: &PathBuf| -> Result<pet_core::Plane> {
        let frame = load_frame(p, None)?;
        Ok(match_image(&products_of(&frame, a.method, &a.products)?, plane)?)
    };
    let baseline = image(&a.baseline)?;
    let sessions = a.sessions.iter().map(image).collect::<Result<Vec<_>>>()?;
    let mut params = MatchParams {
        ratio: a.ratio,
        ..Default::default()
    };
    params.ransac.model = match a.model {
        ModelArg::Similarity => TransformModel::Similarity,
        ModelArg::Affine => TransformModel::Affine,
    };
    params.ransac.threshold_px = a.threshold;
    params.ransac.max_iters = a.iters;
    params.ransac.seed = seed;
    let reports = stability_report(&baseline, &sessions, &params)?;
    write_json(&out.join("match_report.json"), &reports)?;
    println!("{}", serde_json::to_string_pretty(&reports)?);
    Ok(())
}

fn calibrate(a: &CalibrateArgs, out: &Path) -> Result<()> {
    let set = PredictionSet::load(&a.predictions)?;
    let mut params = BTreeMap::new();
    let mut calibrated = PredictionSet {
        modality: set.modality.clone(),
        participants: Vec::new(),
    };
    for p in &set.participants {
        let (cal, rest): (Vec<&PredictionRecord>, Vec<&PredictionRecord>) = p
            .records
            .iter()
            .partition(|r| r.sequence_name.ends_with(&a.calibration_sequence));
        if cal.is_empty() {
            bail!(
                "participant {} has no '{}' calibration records",
                p.participant_id,
                a.calibration_sequence
            );
        }
        let preds: Vec<GazeAngles> = cal.iter().map(|r| r.gaze_pred).collect();
        let gts: Vec<GazeAngles> = cal.iter().map(|r| r.gaze_gt).collect();
        let c: CalibrationParams = fit_affine_calibration(&preds, &gts)
            .with_context(|| format!("calibrating {}", p.participant_id))?;
        if !c.is_well_posed() {
            eprintln!("warning: calibration for {} has a non-positive scale", p.participant_id);
        }
        calibrated.participants.push(ParticipantPredictions {
            participant_id: p.participant_id.clone(),
            records: rest
                .into_iter()
                .map(|r| PredictionRecord {
                    gaze_pred: apply_calibration(&c, r.gaze_pred),
                    ..r.clone()
                })
                .collect(),
        });
        params.insert(p.participant_id.clone(), c);
    }
    write_json(&out.join("calibration.json"), &params)?;
    let stem = a
        .predictions
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "predictions".into());
    let path = out.join(format!("{stem}_calibrated.json"));
    calibrated.save(&path)?;
    println!("calibrated {} participants, wrote {}", params.len(), path.display());
    Ok(())
}

struct FeatureRow {
    participant: String,
    record: FrameRecord,
    features: FeatureVector,
}

struct FeatureOptions {
    modality: Modality,
    normalize: Normalization,
    input_sigma: f64,
    superpixel: bool,
    grid: usize,
}

fn keep(r: &FrameRecord, f: &RecordFilter) -> bool {
    (f.sequences.is_empty() || f.sequences.iter().any(|s| r.sequence_name.ends_with(s.as_str())))
        && (f.conditions.is_empty() || f.conditions.iter().any(|c| *c == r.condition_tag))
}

fn dataset_features(manifest: &Path, filter: &RecordFilter, opts: &FeatureOptions) -> Result<Vec<FeatureRow>> {
    let ds = load_gaze_dataset(manifest)?;
    let jobs: Vec<(String, FrameRecord)> = ds
        .participants
        .iter()
        .flat_map(|p| {
            p.records
                .iter()
                .filter(|r| keep(r, filter))
                .map(move |r| (p.participant_id.clone(), r.clone()))
        })
        .collect();
    if jobs.is_empty() {
        bail!("no records in {} pass the filter", manifest.display());
    }
    jobs.into_par_iter()
        .map(|(participant, mut record)| {
            let frame = read_raw_frame(&record.frame_path, None)?;
            let method = if opts.superpixel {
                DemosaicMethod::Superpixel
            } else {
                DemosaicMethod::Bilinear
            };
            let ch = smoothed(channels_of(&frame, method), opts.input_sigma)?;
            let id = record.frame_path.to_string_lossy().into_owned();
            let input = form_input(&ch, opts.modality, opts.normalize, id);
            let features = extract_features(&input, opts.grid)?;
            if let Ok(rel) = record.frame_path.strip_prefix(&ds.root) {
                record.frame_path = rel.to_path_buf();
            }
            Ok(FeatureRow {
                participant,
                record,
                features,
            })
        })
        .collect()
}

fn train(a: &TrainArgs, out: &Path) -> Result<()> {
    let modality = modality_of(a.form.modality);
    let rows = dataset_features(
        &a.manifest,
        &a.filter,
        &FeatureOptions {
            modality,
            normalize: normalization(a.form.no_normalize),
            input_sigma: a.form.input_sigma,
            superpixel: a.superpixel,
            grid: a.grid,
        },
    )?;
    let features: Vec<FeatureVector> = rows.iter().map(|r| r.features.clone()).collect();
    let targets: Vec<GazeAngles> = rows.iter().map(|r| r.record.gaze_gt).collect();
    let cfg = RegressorConfig {
        grid: a.grid,
        ridge_lambda: a.lambda,
        huber_delta: a.delta,
        outlier_k: a.outlier_k,
        ..Default::default()
    };
    let fit = fit_standin_regressor(&features, &targets, &cfg, modality)?;
    let path = out.join(format!("model_{}.json", modality.as_str()));
    fit.model.save(&path)?;
    println!(
        "trained on {} frames: {} IRLS rounds, {} outliers, converged={}; wrote {}",
        rows.len(),
        fit.rounds,
        fit.outliers.iter().filter(|&&o| o).count(),
        fit.converged,
        path.display()
    );
    Ok(())
}

fn predict(a: &PredictArgs, out: &Path) -> Result<()> {
    let model = RegressorModel::load(&a.model)?;
    let rows = dataset_features(
        &a.manifest,
        &a.filter,
        &FeatureOptions {
            modality: model.trained_modality,
            normalize: normalization(a.no_normalize),
            input_sigma: a.input_sigma,
            superpixel: a.superpixel,
            grid: model.grid,
        },
    )?;
    let mut participants: Vec<ParticipantPredictions> = Vec::new();
    for row in rows {
        let pred = predict_gaze(&model, &row.features)?;
        let rec = PredictionRecord {
            frame_path: row.record.frame_path,
            condition_tag: row.record.condition_tag,
            sequence_name: row.record.sequence_name,
            gaze_gt: row.record.gaze_gt,
            gaze_pred: pred,
        };
        match participants.last_mut() {
            Some(p) if p.participant_id == row.participant => p.records.push(rec),
            _ => participants.push(ParticipantPredictions {
                participant_id: row.participant,
                records: vec![rec],
            }),
        }
    }
    let set = PredictionSet {
        modality: model.trained_modality.as_str().to_string(),
        participants,
    };
    let path = out.join(format!("predictions_{}.json", set.modality));
    set.save(&path)?;
    println!("wrote {}", path.display());
    Ok(())
}

struct ArmData {
    pet: Vec<ParticipantErrors>,
    intensity: Vec<ParticipantErrors>,
}

fn load_arms(a: &ArmArgs) -> Result<ArmData> {
    let metric = match a.metric {
        MetricArg::Vector3d => AngularMetric::Vector3d,
        MetricArg::PerAxis => AngularMetric::PerAxisEuclidean,
    };
    let load = |p: &Path| -> Result<Vec<ParticipantErrors>> {
        let set = PredictionSet::load(p)?;
        let errs = set.errors(metric, a.condition.as_deref());
        if let Some(e) = errs.iter().find(|e| e.errors.is_empty()) {
            bail!("participant {} has no frames in {}", e.participant_id, p.display());
        }
        Ok(errs)
    };
    Ok(ArmData {
        pet: load(&a.pet)?,
        intensity: load(&a.intensity)?,
    })
}

fn curve_csv(curve: &DifferenceCurve) -> String {
    let mut s = String::from("p,median_diff,lo,hi\n");
    for k in 0..curve.percentiles.len() {
        s.push_str(&format!(
            "{},{},{},{}\n",
            curve.percentiles[k], curve.median_diff[k], curve.envelope_low[k], curve.envelope_high[k]
        ));
    }
    s
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct ArmSummary {
    n_participants: usize,
    u50e95: f64,
    ci: BootstrapResult,
}

#[derive(Serialize)]
struct EvalSummary {
    metric: MetricArg,
    condition: Option<String>,
    pet: ArmSummary,
    pseudo_intensity: ArmSummary,
    relative_reduction: f64,
    diff_at_95: Option<(f64, f64, f64)>,
}

fn evaluate(a: &ArmArgs, seed: u64, out: &Path) -> Result<()> {
    let arms = load_arms(a)?;
    let curve = percentile_difference_curve(&arms.pet, &arms.intensity, &a.percentiles, a.resamples, a.level, seed)?;
    let summarize = |arm: &[ParticipantErrors]| -> Result<ArmSummary> {
        Ok(ArmSummary {
            n_participants: arm.len(),
            u50e95: u50_e95(arm)?,
            ci: bootstrap_ci(arm, Statistic::U50E95, a.resamples, a.level, seed)?,
        })
    };
    let pet = summarize(&arms.pet)?;
    let intensity = summarize(&arms.intensity)?;
    let at95 = curve
        .percentiles
        .iter()
        .position(|&p| p == 95.0)
        .map(|k| (curve.median_diff[k], curve.envelope_low[k], curve.envelope_high[k]));
    let summary = EvalSummary {
        metric: a.metric,
        condition: a.condition.clone(),
        relative_reduction: 1.0 - pet.u50e95 / intensity.u50e95,
        pet,
        pseudo_intensity: intensity,
        diff_at_95: at95,
    };

    for (name, arm) in [("pet", &arms.pet), ("pseudo_intensity", &arms.intensity)] {
        let mut csv = String::from("participant_id,n_frames,E95\n");
        for pe in arm.iter() {
            csv.push_str(&format!("{},{},{}\n", pe.participant_id, pe.errors.len(), participant_e95(pe)?));
        }
        write_text(&out.join(format!("per_participant_{name}.csv")), &csv)?;
    }
    write_json(&out.join("summary.json"), &summary)?;
    write_text(&out.join("diff_curve.csv"), &curve_csv(&curve))?;
    println!(
        "U50E95 pet {:.3} [{:.3}, {:.3}]  pseudo-intensity {:.3} [{:.3}, {:.3}]",
        summary.pet.u50e95,
        summary.pet.ci.ci_low,
        summary.pet.ci.ci_high,
        summary.pseudo_intensity.u50e95,
        summary.pseudo_intensity.ci.ci_low,
        summary.pseudo_intensity.ci.ci_high
    );
    Ok(())
}

fn diff_curve(a: &ArmArgs, seed: u64, out: &Path) -> Result<()> {
    let arms = load_arms(a)?;
    let curve = percentile_difference_curve(&arms.pet, &arms.intensity, &a.percentiles, a.resamples, a.level, seed)?;
    write_text(&out.join("diff_curve.csv"), &curve_csv(&curve))?;
    emit_plot(&curve, &out.join("diff_curve.svg"))?;
    println!("wrote {}", out.join("diff_curve.svg").display());
    Ok(())
}

#[derive(Serialize)]
struct BenchReport {
    width: usize,
    height: usize,
    threads: usize,
    repeats: usize,
    best_ms: f64,
    median_ms: f64,
    mpix_per_s: f64,
    /// Best demosaic, Stokes and products times.
    stage_ms: [f64; 3],
    target_ms: f64,
    meets_target: bool,
}

fn bench(a: &BenchArgs, seed: u64, out: &Path) -> Result<()> {
    if a.repeats == 0 {
        bail!("--repeats must be positive");
    }
    let mut params = SceneParams::new(a.width, a.height);
    params.subject_seed = seed;
    let scene = generate_scene(&params)?;
    let noise = NoiseModel {
        rng_seed: seed,
        ..Default::default()
    };
    let frame = simulate_pfa_capture(&scene, SuperpixelLayout::default(), &noise, 12)?;
    let cfg = ProductConfig::for_bit_depth(12);
    let mut times = Vec::with_capacity(a.repeats);
    let mut stages = [f64::INFINITY; 3];
    for _ in 0..a.repeats {
        let t = Instant::now();
        let ch = demosaic_bilinear(&frame);
        let t1 = t.elapsed();
        let st = compute_stokes(&ch);
        let t2 = t.elapsed();
        let pr = compute_products(&st, &cfg);
        let t3 = t.elapsed();
        std::hint::black_box(&pr);
        let ms = [t1, t2 - t1, t3 - t2].map(|d| d.as_secs_f64() * 1e3);
        for (s, m) in stages.iter_mut().zip(ms) {
            *s = s.min(m);
        }
        times.push(t3.as_secs_f64() * 1e3);
    }
    times.sort_by(f64::total_cmp);
    let best = times[0];
    let report = BenchReport {
        width: a.width,
        height: a.height,
        threads: rayon::current_num_threads(),
        repeats: a.repeats,
        best_ms: best,
        median_ms: times[times.len() / 2],
        mpix_per_s: (a.width * a.height) as f64 / 1e6 / (best / 1e3),
        stage_ms: stages,
        target_ms: a.target_ms,
        meets_target: best < a.target_ms,
    };
    println!(
        "demosaic+stokes+products {}x{} on {} thread(s): best {:.1} ms, median {:.1} ms, {:.1} MPix/s; target {:.0} ms {}",
        a.width,
        a.height,
        report.threads,
        report.best_ms,
        report.median_ms,
        report.mpix_per_s,
        a.target_ms,
        if report.meets_target { "met" } else { "MISSED" }
    );
    eprintln!(
        "stages (best): demosaic {:.1} ms, stokes {:.1} ms, products {:.1} ms",
        stages[0], stages[1], stages[2]
    );
    write_json(&out.join("bench.json"), &report)
}

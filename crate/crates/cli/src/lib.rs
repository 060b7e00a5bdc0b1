//! The `pet` command line: one subcommand per pipeline stage.

mod commands;
pub mod plot;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Debug, Parser, Serialize)]
#[command(name = "pet", version, about = "Polarization-filter-array eye imaging pipelines")]
pub struct Cli {
    /// Seed for every random draw (noise, protocol targets, RANSAC, bootstrap).
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Worker threads; defaults to all cores. Outputs do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    pub out: PathBuf,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand, Serialize)]
pub enum Command {
    /// Generate synthetic scenes or gaze datasets.
    Synth {
        #[command(subcommand)]
        target: SynthTarget,
    },
    /// Demosaic a raw frame into four angle channels.
    Demosaic(DemosaicArgs),
    /// Compute intensity, DoLP, AoLP, mask and both composites.
    Stokes(StokesArgs),
    /// Render a single HSV composite.
    Render(RenderArgs),
    /// Form a 4-plane model input tensor.
    FormInput(FormInputArgs),
    /// Match session frames against a baseline frame.
    Match(MatchArgs),
    /// Fit per-participant affine calibrations and apply them.
    Calibrate(CalibrateArgs),
    /// Train the grid-pooled stand-in gaze regressor.
    TrainStandin(TrainArgs),
    /// Predict gaze for every frame of a manifest.
    Predict(PredictArgs),
    /// E95/U50E95 statistics and the paired difference curve.
    Evaluate(EvaluateArgs),
    /// Paired difference curve as CSV and SVG.
    DiffCurve(DiffCurveArgs),
    /// Time demosaic + Stokes + products on a synthetic frame.
    Bench(BenchArgs),
}

#[derive(Debug, Subcommand, Serialize)]
pub enum SynthTarget {
    /// One scene: raw frame plus ground-truth tensor.
    Scene(SceneArgs),
    /// Frames and a manifest for a cohort of simulated subjects.
    Dataset(DatasetArgs),
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct CaptureArgs {
    #[arg(long, default_value_t = 12)]
    pub bit_depth: u8,
    #[arg(long, default_value_t = 2.0)]
    pub read_noise: f64,
    #[arg(long)]
    pub no_shot_noise: bool,
    /// Polarizer efficiency in (0, 1].
    #[arg(long, default_value_t = 1.0)]
    pub extinction: f64,
    /// Superpixel angles, row-major, e.g. 90,45,135,0.
    #[arg(long)]
    pub layout: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct SceneArgs {
    #[arg(long, default_value_t = 512)]
    pub width: usize,
    #[arg(long, default_value_t = 512)]
    pub height: usize,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub yaw: f64,
    #[arg(long, default_value_t = 0.0, allow_negative_numbers = true)]
    pub pitch: f64,
    #[arg(long, default_value_t = 0)]
    pub subject_seed: u64,
    /// Pixels; defaults to 5% of the shorter side.
    #[arg(long)]
    pub pupil_radius: Option<f64>,
    #[arg(long, default_value_t = 1.0)]
    pub eye_relief: f64,
    #[arg(long, default_value_t = 0.3)]
    pub background: f64,
    #[command(flatten)]
    pub capture: CaptureArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum PatternArg {
    Ring20,
    RandomSaccade,
    Fp18,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum ConditionArg {
    Nominal,
    /// Eye relief magnified by 1.1, sequence prefix SW.
    Slippage,
    /// Pupil radius scaled by 1.4.
    Pupil,
}

#[derive(Debug, Args, Serialize)]
pub struct DatasetArgs {
    #[arg(long, default_value_t = 4)]
    pub subjects: u64,
    #[arg(long, default_value_t = 0)]
    pub first_subject: u64,
    #[arg(long, default_value_t = 256)]
    pub size: usize,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [PatternArg::Ring20, PatternArg::RandomSaccade])]
    pub patterns: Vec<PatternArg>,
    #[arg(long, value_enum, value_delimiter = ',', default_values_t = [ConditionArg::Nominal])]
    pub conditions: Vec<ConditionArg>,
    #[command(flatten)]
    pub capture: CaptureArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum DemosaicMethod {
    Bilinear,
    Superpixel,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct FrameArgs {
    /// Raw frame (.pfaraw with a .json header alongside).
    pub frame: PathBuf,
    #[arg(long, value_enum, default_value_t = DemosaicMethod::Bilinear)]
    pub method: DemosaicMethod,
    /// Overrides the layout stored in the frame header.
    #[arg(long)]
    pub layout: Option<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct DemosaicArgs {
    #[command(flatten)]
    pub input: FrameArgs,
    /// Gaussian sigma applied after demosaicking; 0 disables.
    #[arg(long, default_value_t = 0.0)]
    pub sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum ConventionArg {
    PaperLiteral,
    PhysicalX2,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ProductArgs {
    /// Gaussian sigma applied before the Stokes computation; 0 disables.
    #[arg(long, default_value_t = 1.0)]
    pub sigma: f64,
    #[arg(long, value_enum, default_value_t = ConventionArg::PaperLiteral)]
    pub convention: ConventionArg,
    /// Mask threshold relative to the 99th percentile of S0.
    #[arg(long, default_value_t = 0.01)]
    pub mask_rel: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct StokesArgs {
    #[command(flatten)]
    pub input: FrameArgs,
    #[command(flatten)]
    pub products: ProductArgs,
    #[arg(long, default_value_t = 2.2)]
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum ModeArg {
    Methods,
    Figure,
}

#[derive(Debug, Args, Serialize)]
pub struct RenderArgs {
    #[command(flatten)]
    pub input: FrameArgs,
    #[command(flatten)]
    pub products: ProductArgs,
    #[arg(long, value_enum, default_value_t = ModeArg::Figure)]
    pub mode: ModeArg,
    #[arg(long, default_value_t = 2.2)]
    pub gamma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum ModalityArg {
    Pet,
    PseudoIntensity,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct InputFormArgs {
    #[arg(long, value_enum, default_value_t = ModalityArg::Pet)]
    pub modality: ModalityArg,
    /// Skip per-channel standardization.
    #[arg(long)]
    pub no_normalize: bool,
    /// Gaussian sigma on the channels before input formation; 0 disables.
    #[arg(long, default_value_t = 0.0)]
    pub input_sigma: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct FormInputArgs {
    #[command(flatten)]
    pub input: FrameArgs,
    #[command(flatten)]
    pub form: InputFormArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum PlaneArg {
    Dolp,
    Aolp,
    Composite,
    Intensity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum ModelArg {
    Similarity,
    Affine,
}

#[derive(Debug, Args, Serialize)]
pub struct MatchArgs {
    pub baseline: PathBuf,
    #[arg(required = true)]
    pub sessions: Vec<PathBuf>,
    #[arg(long, value_enum, default_value_t = PlaneArg::Dolp)]
    pub plane: PlaneArg,
    #[arg(long, value_enum, default_value_t = ModelArg::Similarity)]
    pub model: ModelArg,
    #[arg(long, default_value_t = 0.75)]
    pub ratio: f64,
    #[arg(long, default_value_t = 3.0)]
    pub threshold: f64,
    #[arg(long, default_value_t = 2000)]
    pub iters: usize,
    #[arg(long, value_enum, default_value_t = DemosaicMethod::Bilinear)]
    pub method: DemosaicMethod,
    #[command(flatten)]
    pub products: ProductArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct CalibrateArgs {
    /// Prediction file written by `predict`.
    #[arg(long)]
    pub predictions: PathBuf,
    /// Records whose sequence name ends with this are the calibration points.
    #[arg(long, default_value = "RING20")]
    pub calibration_sequence: String,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct RecordFilter {
    /// Keep only records whose sequence name ends with one of these.
    #[arg(long, value_delimiter = ',')]
    pub sequences: Vec<String>,
    /// Keep only records with one of these condition tags.
    #[arg(long, value_delimiter = ',')]
    pub conditions: Vec<String>,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub form: InputFormArgs,
    #[command(flatten)]
    pub filter: RecordFilter,
    /// Average raw superpixels at half resolution instead of demosaicking.
    #[arg(long)]
    pub superpixel: bool,
    #[arg(long, default_value_t = 8)]
    pub grid: usize,
    #[arg(long, default_value_t = 1e-3)]
    pub lambda: f64,
    #[arg(long, default_value_t = 1.0)]
    pub delta: f64,
    #[arg(long, default_value_t = 5.0)]
    pub outlier_k: f64,
}

#[derive(Debug, Args, Serialize)]
pub struct PredictArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[arg(long)]
    pub model: PathBuf,
    #[command(flatten)]
    pub filter: RecordFilter,
    #[arg(long)]
    pub superpixel: bool,
    #[arg(long)]
    pub no_normalize: bool,
    #[arg(long, default_value_t = 0.0)]
    pub input_sigma: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
pub enum MetricArg {
    Vector3d,
    PerAxis,
}

#[derive(Debug, Clone, Args, Serialize)]
pub struct ArmArgs {
    #[arg(long)]
    pub pet: PathBuf,
    #[arg(long)]
    pub intensity: PathBuf,
    #[arg(long, value_enum, default_value_t = MetricArg::Vector3d)]
    pub metric: MetricArg,
    /// Restrict to one condition tag.
    #[arg(long)]
    pub condition: Option<String>,
    #[arg(long, default_value_t = 1000)]
    pub resamples: usize,
    #[arg(long, default_value_t = 0.9)]
    pub level: f64,
    /// Percentiles of the difference curve.
    #[arg(long, value_delimiter = ',', default_values_t = default_percentiles())]
    pub percentiles: Vec<f64>,
}

fn default_percentiles() -> Vec<f64> {
    (50..=99).map(f64::from).collect()
}

#[derive(Debug, Args, Serialize)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub arms: ArmArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct DiffCurveArgs {
    #[command(flatten)]
    pub arms: ArmArgs,
}

#[derive(Debug, Args, Serialize)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 2448)]
    pub width: usize,
    #[arg(long, default_value_t = 2048)]
    pub height: usize,
    #[arg(long, default_value_t = 5)]
    pub repeats: usize,
    /// Soft target for one demosaic + Stokes + products pass.
    #[arg(long, default_value_t = 100.0)]
    pub target_ms: f64,
}

/// Parses `argv`, runs the subcommand and returns the process exit code:
/// 0 on success, 1 on runtime or data errors, 2 on usage errors.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    eprintln!(
        "resolved config: {}",
        serde_json::to_string(&cli).unwrap_or_else(|_| format!("{cli:?}"))
    );
    match commands::execute(&cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            1
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use tcidm::io;
use tcidm::oracle::{evaluate, EvalThresholds, GroundTruth, SceneSpec};
use tcidm::pipeline::{
    replay_export, run_pipeline, simulate, ActionFormat, FitKind, RunOptions, SimulateOptions, Stage, StageConfig,
    TrackSource, CACHE_ENV,
};
use tcidm::tracks::MaskMode;
use tcidm::trajectory::GapPolicy;

#[derive(Parser)]
#[command(name = "tcidm", version, about = "Recover robot TCP actions from generated-video by-products")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit relative depth to the metric reference and metricize camera poses.
    AlignDepth(RunArgs),
    /// Align, then lift tracks into the world frame.
    LiftTracks(RunArgs),
    /// Run through tool masking and rigid-track selection.
    FilterRigid(RunArgs),
    /// Run through TCP pose recovery.
    RecoverPoses(RunArgs),
    /// Run through gripper / retargeting prediction.
    PredictState(RunArgs),
    /// Full pipeline.
    Run(RunArgs),
    /// Write a synthetic scene with ground truth and a manifest.
    Simulate(SimulateArgs),
    /// Score an action file against ground truth.
    Evaluate(EvaluateArgs),
    /// Convert an action file between JSONL and CSV.
    Export(ExportArgs),
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    manifest: PathBuf,
    #[arg(long, default_value = "tcidm-out")]
    out: PathBuf,
    #[arg(long, env = CACHE_ENV)]
    cache_dir: Option<PathBuf>,
    #[command(flatten)]
    stage: StageArgs,
}

/// Mirrors the manifest `stages` object; manifest values take precedence.
#[derive(Args)]
struct StageArgs {
    #[arg(long)]
    k: Option<usize>,
    #[arg(long)]
    min_visibility: Option<f64>,
    #[arg(long, value_enum)]
    mask_mode: Option<MaskArg>,
    #[arg(long, value_enum)]
    rigidity_fit: Option<FitArg>,
    #[arg(long, value_enum)]
    gap_policy: Option<GapArg>,
    #[arg(long)]
    smoothing_window: Option<usize>,
    #[arg(long)]
    max_step_m: Option<f64>,
    #[arg(long)]
    max_step_deg: Option<f64>,
    #[arg(long)]
    depth_stride: Option<usize>,
    #[arg(long)]
    depth_trim: Option<f64>,
    #[arg(long, value_enum)]
    track_source: Option<SourceArg>,
    #[arg(long)]
    gripper_threshold: Option<f64>,
    #[arg(long)]
    temporal_context: Option<usize>,
}

#[derive(Clone, Copy, ValueEnum)]
enum MaskArg {
    Frame0Only,
    Strict,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitArg {
    Global,
    Ransac,
}

#[derive(Clone, Copy, ValueEnum)]
enum GapArg {
    SkipAndInterpolate,
    FailFast,
}

#[derive(Clone, Copy, ValueEnum)]
enum SourceArg {
    Lift,
    Camera3d,
    World3d,
}

impl StageArgs {
    fn config(&self) -> StageConfig {
        let d = StageConfig::default();
        StageConfig {
            k: self.k.unwrap_or(d.k),
            min_visibility_fraction: self.min_visibility.unwrap_or(d.min_visibility_fraction),
            mask_mode: self.mask_mode.map_or(d.mask_mode, |m| match m {
                MaskArg::Frame0Only => MaskMode::Frame0Only,
                MaskArg::Strict => MaskMode::Strict,
            }),
            rigidity_fit: self.rigidity_fit.map_or(d.rigidity_fit, |f| match f {
                FitArg::Global => FitKind::Global,
                FitArg::Ransac => FitKind::Ransac,
            }),
            gap_policy: self.gap_policy.map_or(d.gap_policy, |g| match g {
                GapArg::SkipAndInterpolate => GapPolicy::SkipAndInterpolate,
                GapArg::FailFast => GapPolicy::FailFast,
            }),
            smoothing_window: self.smoothing_window.unwrap_or(d.smoothing_window),
            max_step_m: self.max_step_m.or(d.max_step_m),
            max_step_deg: self.max_step_deg.or(d.max_step_deg),
            depth_stride: self.depth_stride.unwrap_or(d.depth_stride),
            depth_trim_fraction: self.depth_trim.or(d.depth_trim_fraction),
            track_source: self.track_source.map_or(d.track_source, |s| match s {
                SourceArg::Lift => TrackSource::Lift,
                SourceArg::Camera3d => TrackSource::Camera3d,
                SourceArg::World3d => TrackSource::World3d,
            }),
            gripper_threshold: self.gripper_threshold.or(d.gripper_threshold),
            temporal_context: self.temporal_context.unwrap_or(d.temporal_context),
            ..d
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    out: PathBuf,
    /// Scene spec JSON; missing fields take the default desk scene.
    #[arg(long)]
    scene: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    track_noise_m: Option<f64>,
    #[arg(long)]
    depth_noise_m: Option<f64>,
    #[arg(long)]
    pixel_noise_px: Option<f64>,
    #[arg(long)]
    drop_probability: Option<f64>,
    #[arg(long)]
    outliers: Option<usize>,
    #[arg(long)]
    outlier_displacement_m: Option<f64>,
    #[arg(long, default_value_t = 300)]
    gripper_epochs: usize,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Actions as JSONL or CSV.
    #[arg(long)]
    actions: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, default_value_t = 0.02)]
    translation_m: f64,
    #[arg(long, default_value_t = 10.0)]
    rotation_deg: f64,
}

#[derive(Args)]
struct ExportArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long)]
    format: String,
    #[arg(long)]
    out: PathBuf,
}

fn run_stage(args: RunArgs, stop: Stage) -> Result<(), String> {
    let opts = RunOptions {
        out_dir: args.out.clone(),
        cache_dir: args.cache_dir,
        base_config: args.stage.config(),
        stop_after: Some(stop),
    };
    let outcome = run_pipeline(&args.manifest, &opts).map_err(|e| e.to_string())?;
    for w in &outcome.stage_report.warnings {
        eprintln!("warning: {w}");
    }
    println!("{}: {} actions written to {}", stop, outcome.actions.len(), args.out.display());
    Ok(())
}

fn run_simulate(a: SimulateArgs) -> Result<(), String> {
    let mut spec = match &a.scene {
        Some(p) => io::read_json::<SceneSpec>(p).map_err(|e| e.to_string())?,
        None => SceneSpec::default(),
    };
    if let Some(s) = a.seed {
        spec.seed = s;
    }
    if let Some(f) = a.frames {
        spec.frames = f;
    }
    let n = &mut spec.noise;
    n.track_sigma_m = a.track_noise_m.unwrap_or(n.track_sigma_m);
    n.depth_sigma_m = a.depth_noise_m.unwrap_or(n.depth_sigma_m);
    n.pixel_sigma_px = a.pixel_noise_px.unwrap_or(n.pixel_sigma_px);
    n.drop_probability = a.drop_probability.unwrap_or(n.drop_probability);
    spec.outliers.count = a.outliers.unwrap_or(spec.outliers.count);
    spec.outliers.displacement_m = a.outlier_displacement_m.unwrap_or(spec.outliers.displacement_m);
    let manifest = simulate(&spec, &a.out, &SimulateOptions { gripper_epochs: a.gripper_epochs })?;
    println!("{}", manifest.display());
    Ok(())
}

fn run_evaluate(a: EvaluateArgs) -> Result<(), String> {
    let records = match ActionFormat::from_path(&a.actions).map_err(|e| e.to_string())? {
        ActionFormat::Jsonl => io::read_actions_jsonl(&a.actions),
        ActionFormat::Csv => io::read_actions_csv(&a.actions),
    }
    .map_err(|e| e.to_string())?;
    let actions = io::records_to_actions(&records).map_err(|e| e.to_string())?;
    let truth: GroundTruth = io::read_json(&a.truth).map_err(|e| e.to_string())?;
    let thresholds = EvalThresholds { translation_m: a.translation_m, rotation_deg: a.rotation_deg };
    let eval = evaluate(&actions, &truth, thresholds).map_err(|e| e.to_string())?;
    if let Some(out) = &a.out {
        io::write_json(out, &eval).map_err(|e| e.to_string())?;
    }
    println!(
        "{}: max cumulative error {:.4} m / {:.3} deg (limits {} m / {} deg)",
        if eval.pass { "PASS" } else { "FAIL" },
        eval.max_cumulative_translation_m,
        eval.max_cumulative_rotation_deg,
        thresholds.translation_m,
        thresholds.rotation_deg
    );
    Ok(())
}

fn run_export(a: ExportArgs) -> Result<(), String> {
    let format: ActionFormat = a.format.parse().map_err(|e: tcidm::pipeline::ExportError| e.to_string())?;
    let rows = replay_export(&a.input, &a.out, format).map_err(|e| e.to_string())?;
    println!("{rows} actions written to {}", a.out.display());
    Ok(())
}

fn main() -> ExitCode {
    let result = match Cli::parse().command {
        Command::AlignDepth(a) => run_stage(a, Stage::AlignDepth),
        Command::LiftTracks(a) => run_stage(a, Stage::LiftTracks),
        Command::FilterRigid(a) => run_stage(a, Stage::FilterRigid),
        Command::RecoverPoses(a) => run_stage(a, Stage::RecoverPoses),
        Command::PredictState(a) => run_stage(a, Stage::PredictState),
        Command::Run(a) => run_stage(a, Stage::Merge),
        Command::Simulate(a) => run_simulate(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Export(a) => run_export(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

//! End-to-end orchestration: align → lift → mask → filter → recover → predict → merge.
//!
//! [`run_pipeline`] works from a [`RunManifest`] on disk and writes every
//! stage's output next to a `stage_report.json`; [`run_bundle`] runs the same
//! stages on an in-memory [`Bundle`].

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::depth::{
    alignment_rms, apply_scale_shift, fit_scale_shift, fit_scale_shift_trimmed, joint_valid_domain, metricize_poses,
    CameraIntrinsics, DepthFrame, PoseSequence, ScaleShift,
};
use crate::geometry::RigidTransform;
use crate::heads::{
    train, with_temporal_context, FrameVector, GripperHead, Mlp, MlpSpec, RetargetHead, TrainConfig, WeightsFile,
};
use crate::io::{self, IoError};
use crate::oracle::{generate, Bundle, GroundTruth, SceneSpec};
use crate::tracks::{lift_tracks, mask_tracks, select_rigid, FilterConfig, MaskMode, PointTrack, RigidityFit, Selection, ToolMask};
use crate::trajectory::{
    attach_gripper, recover_trajectory, safety_check, smooth_trajectory, GapPolicy, SafetyLimits, TcpAction,
    TrajectoryReport, Violation,
};

/// Environment variable naming the stage cache directory.
pub const CACHE_ENV: &str = "TCIDM_CACHE_DIR";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Validate,
    AlignDepth,
    LiftTracks,
    Mask,
    FilterRigid,
    RecoverPoses,
    PredictState,
    Merge,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::Validate => "validate",
            Stage::AlignDepth => "align-depth",
            Stage::LiftTracks => "lift-tracks",
            Stage::Mask => "mask",
            Stage::FilterRigid => "filter-rigid",
            Stage::RecoverPoses => "recover-poses",
            Stage::PredictState => "predict-state",
            Stage::Merge => "merge",
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
#[error("stage `{stage}` failed: {message}")]
pub struct PipelineError {
    pub stage: Stage,
    pub message: String,
}

impl PipelineError {
    fn new(stage: Stage, message: impl ToString) -> Self {
        Self { stage, message: message.to_string() }
    }
}

/// Where tracks get their 3D positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackSource {
    /// Pixels back-projected through the aligned depth.
    #[default]
    Lift,
    /// `x,y,z` columns are camera-frame points, re-expressed with the metric poses.
    Camera3d,
    /// `x,y,z` columns are already world-frame points.
    World3d,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitKind {
    #[default]
    Global,
    Ransac,
}

/// Resolved stage knobs. Manifest `stages` entries override these field by field.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StageConfig {
    pub k: usize,
    pub min_visibility_fraction: f64,
    pub mask_mode: MaskMode,
    pub rigidity_fit: FitKind,
    pub ransac_hypotheses: usize,
    pub gap_policy: GapPolicy,
    pub smoothing_window: usize,
    pub max_step_m: Option<f64>,
    pub max_step_deg: Option<f64>,
    pub depth_stride: usize,
    /// Drop this fraction of worst pixels and refit the scale/shift once.
    pub depth_trim_fraction: Option<f64>,
    pub track_source: TrackSource,
    pub gripper_threshold: Option<f64>,
    /// Concatenate features of this many neighbours on each side.
    pub temporal_context: usize,
}

impl Default for StageConfig {
    fn default() -> Self {
        Self {
            k: 10,
            min_visibility_fraction: 0.8,
            mask_mode: MaskMode::Frame0Only,
            rigidity_fit: FitKind::Global,
            ransac_hypotheses: 200,
            gap_policy: GapPolicy::SkipAndInterpolate,
            smoothing_window: 1,
            max_step_m: None,
            max_step_deg: None,
            depth_stride: 1,
            depth_trim_fraction: None,
            track_source: TrackSource::Lift,
            gripper_threshold: None,
            temporal_context: 0,
        }
    }
}

impl StageConfig {
    /// Applies `overrides` (manifest `stages` object) on top of `self`.
    pub fn overlay(&self, overrides: &Map<String, Value>) -> Result<Self, String> {
        let Value::Object(mut base) = serde_json::to_value(self).expect("config serializes") else {
            unreachable!("config is a struct")
        };
        for (k, v) in overrides {
            base.insert(k.clone(), v.clone());
        }
        let cfg: StageConfig = serde_json::from_value(Value::Object(base)).map_err(|e| e.to_string())?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), String> {
        self.filter_config(0).validate().map_err(|e| e.to_string())?;
        if self.smoothing_window == 0 || self.smoothing_window.is_multiple_of(2) {
            return Err(format!("smoothing_window must be odd and positive, got {}", self.smoothing_window));
        }
        if self.depth_stride == 0 {
            return Err("depth_stride must be positive".into());
        }
        if self.depth_trim_fraction.is_some_and(|f| !(0.0..0.5).contains(&f)) {
            return Err("depth_trim_fraction must lie in [0, 0.5)".into());
        }
        if self.max_step_m.is_some_and(|m| !(m > 0.0)) || self.max_step_deg.is_some_and(|d| !(d > 0.0)) {
            return Err("safety limits must be positive".into());
        }
        if self.gripper_threshold.is_some_and(|t| !(0.0..=1.0).contains(&t)) {
            return Err("gripper_threshold must lie in [0, 1]".into());
        }
        Ok(())
    }

    pub fn filter_config(&self, seed: u64) -> FilterConfig {
        let fit = match self.rigidity_fit {
            FitKind::Global => RigidityFit::Global,
            FitKind::Ransac => RigidityFit::Ransac { hypotheses: self.ransac_hypotheses, seed },
        };
        FilterConfig { k: self.k, min_visibility_fraction: self.min_visibility_fraction, fit, ..FilterConfig::default() }
    }

    pub fn safety_limits(&self) -> Option<SafetyLimits> {
        if self.max_step_m.is_none() && self.max_step_deg.is_none() {
            return None;
        }
        let m = self.max_step_m.unwrap_or(f64::INFINITY);
        let deg = self.max_step_deg.unwrap_or(f64::INFINITY);
        SafetyLimits::new(m, deg).ok()
    }
}

/// Input files, relative to the manifest's directory unless absolute.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ManifestInputs {
    #[serde(default)]
    pub relative_depth: Vec<PathBuf>,
    /// Optional per-frame PGM validity masks for `relative_depth`.
    #[serde(default)]
    pub relative_depth_validity: Vec<PathBuf>,
    #[serde(default)]
    pub metric_reference: Option<PathBuf>,
    #[serde(default)]
    pub metric_reference_validity: Option<PathBuf>,
    #[serde(default)]
    pub masks: Vec<PathBuf>,
    pub tracks: PathBuf,
    #[serde(default)]
    pub camera_poses: Option<PathBuf>,
    #[serde(default)]
    pub intrinsics: Option<PathBuf>,
    #[serde(default)]
    pub features: Option<PathBuf>,
    #[serde(default)]
    pub gripper_weights: Option<PathBuf>,
    #[serde(default)]
    pub hand_states: Option<PathBuf>,
    #[serde(default)]
    pub retarget_weights: Option<PathBuf>,
    #[serde(default)]
    pub joint_limits: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    /// Task instruction; carried through as metadata only.
    pub instruction: String,
    /// Free-form note on which model produced the relative depth.
    #[serde(default)]
    pub depth_provenance: String,
    pub inputs: ManifestInputs,
    /// Metric camera pose of frame 0.
    #[serde(default)]
    pub anchor_pose: Option<RigidTransform>,
    #[serde(default)]
    pub initial_tcp: Option<RigidTransform>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub stages: Map<String, Value>,
}

impl RunManifest {
    pub fn load(path: &Path) -> Result<Self, IoError> {
        io::read_json(path)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub stage: Stage,
    pub wall_ms: f64,
    pub input_digest: String,
    pub output_digest: String,
    pub cached: bool,
    pub skipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageFailure {
    pub stage: Stage,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub instruction: String,
    pub depth_provenance: String,
    pub config: Option<StageConfig>,
    pub input_digests: BTreeMap<String, String>,
    pub stages: Vec<StageRecord>,
    pub warnings: Vec<String>,
    pub error: Option<StageFailure>,
}

impl StageReport {
    /// Stage name to output digest; stable across reruns on identical inputs.
    pub fn output_digests(&self) -> BTreeMap<Stage, String> {
        self.stages.iter().map(|r| (r.stage, r.output_digest.clone())).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Alignment {
    pub scale_shift: ScaleShift,
    /// RMS of aligned relative depth against the reference over the fit domain (m).
    pub rms_m: f64,
    pub pixels: usize,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn combine<'a>(parts: impl IntoIterator<Item = (&'a str, &'a str)>) -> String {
    let mut h = Sha256::new();
    for (k, v) in parts {
        h.update(k.as_bytes());
        h.update(b"=");
        h.update(v.as_bytes());
        h.update(b"\n");
    }
    hex::encode(h.finalize())
}

fn json_bytes<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    let mut v = serde_json::to_vec_pretty(value).expect("serializable");
    v.push(b'\n');
    v
}

/// Fits the frame-0 relative depth to the metric reference.
pub fn align_frame0(rel0: &DepthFrame, reference: &DepthFrame, cfg: &StageConfig) -> Result<Alignment, String> {
    let domain = joint_valid_domain(rel0, reference, cfg.depth_stride).map_err(|e| e.to_string())?;
    let scale_shift = match cfg.depth_trim_fraction {
        Some(f) if f > 0.0 => fit_scale_shift_trimmed(rel0, reference, &domain, f),
        _ => fit_scale_shift(rel0, reference, &domain),
    }
    .map_err(|e| e.to_string())?;
    let rms_m = alignment_rms(rel0, reference, &scale_shift).map_err(|e| e.to_string())?;
    Ok(Alignment { scale_shift, rms_m, pixels: domain.len() })
}

/// Rebuilds tracks so only the fields the chosen source uses remain.
pub fn source_tracks(raw: &[PointTrack], source: TrackSource) -> Result<Vec<PointTrack>, String> {
    raw.iter()
        .map(|t| {
            let n = t.len();
            match source {
                TrackSource::Lift => {
                    let pixels = (0..n).map(|f| if t.is_visible(f) { t.pixel(f) } else { None }).collect();
                    Ok(PointTrack::from_pixels(t.track_id, pixels))
                }
                TrackSource::Camera3d | TrackSource::World3d => {
                    if !t.has_positions() {
                        return Err(format!("track {} has no x,y,z observations", t.track_id));
                    }
                    Ok(t.clone())
                }
            }
        })
        .collect()
}

/// World-frame tracks for the chosen source. `metric` supplies depth and poses
/// when the source needs them.
pub fn lift_stage(
    raw: &[PointTrack],
    source: TrackSource,
    metric: Option<(&[DepthFrame], &PoseSequence)>,
    intrinsics: Option<&CameraIntrinsics>,
) -> Result<Vec<PointTrack>, String> {
    let tracks = source_tracks(raw, source)?;
    match source {
        TrackSource::World3d => Ok(tracks),
        TrackSource::Lift => {
            let (depths, poses) = metric.ok_or("lifting needs depth and camera poses")?;
            lift_tracks(&tracks, depths, intrinsics, poses).map_err(|e| e.to_string())
        }
        TrackSource::Camera3d => {
            let (_, poses) = metric.ok_or("camera-frame tracks need camera poses")?;
            let positions_only: Vec<PointTrack> =
                tracks.iter().map(|t| PointTrack::from_positions(t.track_id, t.positions().to_vec())).collect();
            let lifted = lift_camera_points(&positions_only, poses)?;
            lifted
                .into_iter()
                .zip(&tracks)
                .map(|(l, orig)| {
                    PointTrack::new(l.track_id, l.positions().to_vec(), orig.pixels().to_vec(), l.visibility().to_vec())
                        .map_err(|e| e.to_string())
                })
                .collect()
        }
    }
}

fn lift_camera_points(tracks: &[PointTrack], poses: &PoseSequence) -> Result<Vec<PointTrack>, String> {
    tracks
        .iter()
        .map(|t| {
            if t.len() != poses.len() {
                return Err(format!("track {} spans {} frames, poses cover {}", t.track_id, t.len(), poses.len()));
            }
            let positions = (0..t.len()).map(|f| t.position(f).map(|p| poses.poses()[f].apply(&p))).collect();
            Ok(PointTrack::from_positions(t.track_id, positions))
        })
        .collect()
}

/// Recovery plus optional smoothing and safety screening.
pub struct Recovered {
    pub actions: Vec<TcpAction>,
    pub report: TrajectoryReport,
    pub violations: Vec<Violation>,
}

pub fn recover_stage(
    selected: &[PointTrack],
    initial_tcp: Option<&RigidTransform>,
    cfg: &StageConfig,
) -> Result<Recovered, String> {
    let (mut actions, report) = recover_trajectory(selected, initial_tcp, cfg.gap_policy).map_err(|e| e.to_string())?;
    if cfg.smoothing_window > 1 {
        actions = smooth_trajectory(&actions, cfg.smoothing_window).map_err(|e| e.to_string())?;
    }
    let violations = cfg.safety_limits().map(|l| safety_check(&actions, &l)).unwrap_or_default();
    Ok(Recovered { actions, report, violations })
}

/// Per-frame gripper aperture (indexed by frame number).
pub fn gripper_stage(features: &[FrameVector], head: &GripperHead, cfg: &StageConfig) -> Result<Vec<FrameVector>, String> {
    let inputs = if cfg.temporal_context > 0 { with_temporal_context(features, cfg.temporal_context) } else { features.to_vec() };
    let mut head = head.clone();
    head.threshold = cfg.gripper_threshold;
    let values = head.predict(&inputs).map_err(|e| e.to_string())?;
    Ok(inputs.iter().zip(values).map(|(f, v)| FrameVector { frame: f.frame, values: vec![v] }).collect())
}

fn by_frame(gripper: &[FrameVector]) -> Vec<f64> {
    let len = gripper.iter().map(|g| g.frame + 1).max().unwrap_or(0);
    let mut out = vec![f64::NAN; len];
    for g in gripper {
        out[g.frame] = g.values[0];
    }
    out
}

/// Attaches gripper values; frames without a prediction keep `None`.
pub fn merge(mut actions: Vec<TcpAction>, gripper: Option<&[FrameVector]>) -> Vec<TcpAction> {
    if let Some(g) = gripper {
        attach_gripper(&mut actions, &by_frame(g));
        for a in &mut actions {
            a.gripper = a.gripper.filter(|v| !v.is_nan());
        }
    }
    actions
}

fn mask_warnings(masks: &[ToolMask]) -> Vec<String> {
    masks
        .windows(2)
        .filter_map(|w| {
            let (a, b) = (w[0].count(), w[1].count());
            let big = a.max(b).max(1);
            (a.abs_diff(b) * 5 > big).then(|| format!("mask flicker at frame {}: {a} -> {b} tool pixels", w[1].frame))
        })
        .collect()
}

fn gap_warnings(report: &TrajectoryReport) -> Vec<String> {
    report
        .gaps
        .iter()
        .map(|g| format!("degenerate frames between {} and {}: interpolated {} steps", g.from, g.to, g.to - g.from))
        .collect()
}

fn violation_warnings(v: &[Violation]) -> Vec<String> {
    v.iter()
        .map(|v| format!("safety: frame {} {:?} step {:.6} exceeds {}", v.frame, v.kind, v.magnitude, v.limit))
        .collect()
}

/// Result of [`run_bundle`].
pub struct BundleRun {
    pub alignment: Alignment,
    pub lifted: Vec<PointTrack>,
    pub masked: Vec<PointTrack>,
    pub selection: Selection,
    pub actions: Vec<TcpAction>,
    pub report: TrajectoryReport,
    pub violations: Vec<Violation>,
    pub gripper: Option<Vec<FrameVector>>,
    pub warnings: Vec<String>,
}

/// Runs every stage on an in-memory bundle (no files, no cache).
pub fn run_bundle(
    bundle: &Bundle,
    cfg: &StageConfig,
    seed: u64,
    gripper: Option<&GripperHead>,
) -> Result<BundleRun, PipelineError> {
    cfg.validate().map_err(|e| PipelineError::new(Stage::Validate, e))?;
    let mut warnings = Vec::new();
    let fail = |stage| move |e: String| PipelineError::new(stage, e);

    let alignment =
        align_frame0(&bundle.relative_depth[0], &bundle.metric_reference, cfg).map_err(fail(Stage::AlignDepth))?;
    let metric_depth = apply_scale_shift(&bundle.relative_depth, &alignment.scale_shift);
    let metric_poses = metricize_poses(&bundle.relative_poses, &alignment.scale_shift, &bundle.anchor_pose)
        .map_err(|e| PipelineError::new(Stage::AlignDepth, e))?;

    let lifted = lift_stage(&bundle.tracks, cfg.track_source, Some((&metric_depth, &metric_poses)), Some(&bundle.intrinsics))
        .map_err(fail(Stage::LiftTracks))?;

    warnings.extend(mask_warnings(&bundle.masks));
    let masked = mask_tracks(&lifted, &bundle.masks, cfg.mask_mode);
    let selection = select_rigid(&masked, &cfg.filter_config(seed)).map_err(|e| PipelineError::new(Stage::FilterRigid, e))?;

    let rec = recover_stage(&selection.selected, Some(&bundle.initial_tcp), cfg).map_err(fail(Stage::RecoverPoses))?;
    warnings.extend(gap_warnings(&rec.report));
    warnings.extend(violation_warnings(&rec.violations));

    let gripper = gripper
        .map(|h| gripper_stage(&bundle.features, h, cfg))
        .transpose()
        .map_err(fail(Stage::PredictState))?;
    let actions = merge(rec.actions, gripper.as_deref());
    Ok(BundleRun {
        alignment,
        lifted,
        masked,
        selection,
        actions,
        report: rec.report,
        violations: rec.violations,
        gripper,
        warnings,
    })
}

/// Content-addressed store for stage outputs.
struct Cache {
    dir: PathBuf,
}

impl Cache {
    fn path(&self, key: &str, name: &str) -> PathBuf {
        self.dir.join(format!("{key}.{name}"))
    }

    fn get(&self, key: &str, names: &[&str]) -> Option<Vec<Vec<u8>>> {
        names.iter().map(|n| std::fs::read(self.path(key, n)).ok()).collect()
    }

    fn put(&self, key: &str, files: &[(&str, &[u8])]) {
        // A cache that cannot be written is only a missed speed-up.
        for (name, bytes) in files {
            let _ = io::write_bytes(&self.path(key, name), bytes);
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    /// Overrides the [`CACHE_ENV`] directory.
    pub cache_dir: Option<PathBuf>,
    /// Flag-level config; manifest `stages` entries win.
    pub base_config: StageConfig,
    /// Stop after this stage (inclusive).
    pub stop_after: Option<Stage>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub actions: Vec<TcpAction>,
    pub trajectory: Option<TrajectoryReport>,
    pub stage_report: StageReport,
}

struct Loaded {
    cfg: StageConfig,
    frames: Option<usize>,
    tracks: Vec<PointTrack>,
    poses: Option<PoseSequence>,
    intrinsics: Option<CameraIntrinsics>,
    features: Option<Vec<FrameVector>>,
    gripper: Option<GripperHead>,
    hands: Option<(Vec<FrameVector>, RetargetHead)>,
    digests: BTreeMap<String, String>,
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() { p.to_path_buf() } else { base.join(p) }
}

fn load_inputs(m: &RunManifest, base: &Path, flags: &StageConfig) -> Result<Loaded, String> {
    let cfg = flags.overlay(&m.stages)?;
    let inp = &m.inputs;
    let mut digests = BTreeMap::new();
    let mut digest_of = |name: String, path: &Path| -> Result<Vec<u8>, String> {
        let bytes = io::read_bytes(path).map_err(|e| e.to_string())?;
        digests.insert(name, sha256_hex(&bytes));
        Ok(bytes)
    };

    let needs_depth = cfg.track_source == TrackSource::Lift;
    let needs_poses = cfg.track_source != TrackSource::World3d;
    let pose_path = inp.camera_poses.as_ref().map(|p| resolve(base, p));
    let poses = match &pose_path {
        Some(p) => {
            digest_of("camera_poses".into(), p)?;
            Some(io::read_pose_sequence(p).map_err(|e| e.to_string())?)
        }
        None if needs_poses => return Err("inputs.camera_poses is required for this track source".into()),
        None => None,
    };
    if needs_poses && m.anchor_pose.is_none() {
        return Err("anchor_pose is required to metricize camera poses".into());
    }
    let frames = poses.as_ref().map(PoseSequence::len);

    if needs_depth {
        if inp.relative_depth.len() != frames.unwrap_or(0) {
            return Err(format!("{} relative depth frames for {} camera poses", inp.relative_depth.len(), frames.unwrap_or(0)));
        }
        if !inp.relative_depth_validity.is_empty() && inp.relative_depth_validity.len() != inp.relative_depth.len() {
            return Err("relative_depth_validity must have one mask per depth frame".into());
        }
        if inp.metric_reference.is_none() {
            return Err("inputs.metric_reference is required when lifting tracks".into());
        }
        if inp.intrinsics.is_none() {
            return Err("inputs.intrinsics is required when lifting tracks".into());
        }
    }
    for (i, p) in inp.relative_depth.iter().enumerate() {
        digest_of(format!("relative_depth[{i}]"), &resolve(base, p))?;
    }
    for (i, p) in inp.relative_depth_validity.iter().enumerate() {
        digest_of(format!("relative_depth_validity[{i}]"), &resolve(base, p))?;
    }
    if let Some(p) = &inp.metric_reference {
        digest_of("metric_reference".into(), &resolve(base, p))?;
    }
    if let Some(p) = &inp.metric_reference_validity {
        digest_of("metric_reference_validity".into(), &resolve(base, p))?;
    }
    if !inp.masks.is_empty() && frames.is_some_and(|n| n != inp.masks.len()) {
        return Err(format!("{} masks for {} frames", inp.masks.len(), frames.unwrap_or(0)));
    }
    for (i, p) in inp.masks.iter().enumerate() {
        digest_of(format!("masks[{i}]"), &resolve(base, p))?;
    }

    let tracks_path = resolve(base, &inp.tracks);
    digest_of("tracks".into(), &tracks_path)?;
    let tracks = io::read_tracks_csv(&tracks_path, frames).map_err(|e| e.to_string())?;

    let intrinsics = match &inp.intrinsics {
        Some(p) => {
            let p = resolve(base, p);
            digest_of("intrinsics".into(), &p)?;
            let k: CameraIntrinsics = io::read_json(&p).map_err(|e| e.to_string())?;
            Some(CameraIntrinsics::new(k.fx, k.fy, k.cx, k.cy).map_err(|e| format!("{}: {e}", p.display()))?)
        }
        None => None,
    };

    let load_mlp = |p: &Path| -> Result<Mlp, String> {
        let w: WeightsFile = io::read_json(p).map_err(|e| e.to_string())?;
        Mlp::from_json(&w).map_err(|e| format!("{}: {e}", p.display()))
    };
    let (features, gripper) = match (&inp.features, &inp.gripper_weights) {
        (Some(f), Some(w)) => {
            let (f, w) = (resolve(base, f), resolve(base, w));
            digest_of("features".into(), &f)?;
            digest_of("gripper_weights".into(), &w)?;
            let feats = io::read_frame_vectors(&f).map_err(|e| e.to_string())?;
            let head = GripperHead::new(load_mlp(&w)?).map_err(|e| e.to_string())?;
            (Some(feats), Some(head))
        }
        (None, None) => (None, None),
        _ => return Err("features and gripper_weights must be given together".into()),
    };
    let hands = match (&inp.hand_states, &inp.retarget_weights) {
        (Some(h), Some(w)) => {
            let (h, w) = (resolve(base, h), resolve(base, w));
            digest_of("hand_states".into(), &h)?;
            digest_of("retarget_weights".into(), &w)?;
            let states = io::read_frame_vectors(&h).map_err(|e| e.to_string())?;
            let head = RetargetHead::new(load_mlp(&w)?, inp.joint_limits.clone()).map_err(|e| e.to_string())?;
            Some((states, head))
        }
        (None, None) => None,
        _ => return Err("hand_states and retarget_weights must be given together".into()),
    };
    Ok(Loaded { cfg, frames, tracks, poses, intrinsics, features, gripper, hands, digests })
}

struct Runner<'a> {
    out: &'a Path,
    cache: Option<Cache>,
    report: StageReport,
    stop_after: Option<Stage>,
}

impl Runner<'_> {
    fn write(&self, stage: Stage, files: &[(&str, &[u8])]) -> Result<String, PipelineError> {
        for (name, bytes) in files {
            io::write_bytes(&self.out.join(name), bytes).map_err(|e| PipelineError::new(stage, e))?;
        }
        let digests: Vec<(String, String)> = files.iter().map(|(n, b)| (n.to_string(), sha256_hex(b))).collect();
        Ok(combine(digests.iter().map(|(a, b)| (a.as_str(), b.as_str()))))
    }

    fn record(&mut self, stage: Stage, started: Instant, input_digest: String, output_digest: String, cached: bool) {
        self.report.stages.push(StageRecord {
            stage,
            wall_ms: started.elapsed().as_secs_f64() * 1e3,
            input_digest,
            output_digest,
            cached,
            skipped: false,
        });
    }

    fn skip(&mut self, stage: Stage) {
        self.report.stages.push(StageRecord {
            stage,
            wall_ms: 0.0,
            input_digest: String::new(),
            output_digest: String::new(),
            cached: false,
            skipped: true,
        });
    }

    fn done(&self, stage: Stage) -> bool {
        self.stop_after.is_some_and(|s| s <= stage)
    }

    fn finish_report(&self) {
        let _ = io::write_bytes(&self.out.join("stage_report.json"), &json_bytes(&self.report));
    }
}

fn digest_list<'a>(digests: &'a BTreeMap<String, String>, prefix: &str) -> Vec<(&'a str, &'a str)> {
    digests.iter().filter(|(k, _)| k.starts_with(prefix)).map(|(k, v)| (k.as_str(), v.as_str())).collect()
}

/// Runs the pipeline described by the manifest at `manifest_path`.
///
/// Every stage writes its outputs into `opts.out_dir` as soon as it finishes,
/// so a failing run leaves the earlier stages' files for inspection alongside
/// a `stage_report.json` naming the failing stage.
pub fn run_pipeline(manifest_path: &Path, opts: &RunOptions) -> Result<RunOutcome, PipelineError> {
    let started = Instant::now();
    let manifest = RunManifest::load(manifest_path).map_err(|e| PipelineError::new(Stage::Validate, e))?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));
    let cache_dir = opts.cache_dir.clone().or_else(|| std::env::var_os(CACHE_ENV).map(PathBuf::from));
    let mut run = Runner {
        out: &opts.out_dir,
        cache: cache_dir.map(|dir| Cache { dir }),
        report: StageReport {
            instruction: manifest.instruction.clone(),
            depth_provenance: manifest.depth_provenance.clone(),
            config: None,
            input_digests: BTreeMap::new(),
            stages: Vec::new(),
            warnings: Vec::new(),
            error: None,
        },
        stop_after: opts.stop_after,
    };
    std::fs::create_dir_all(&opts.out_dir).map_err(|e| PipelineError::new(Stage::Validate, IoError::Io { path: opts.out_dir.clone(), source: e }))?;

    let result = (|| {
        let loaded = load_inputs(&manifest, base, &opts.base_config).map_err(|e| PipelineError::new(Stage::Validate, e))?;
        run.report.config = Some(loaded.cfg);
        run.report.input_digests = loaded.digests.clone();
        let manifest_digest = sha256_hex(&json_bytes(&manifest));
        run.record(Stage::Validate, started, manifest_digest.clone(), combine(digest_list(&loaded.digests, "")), false);
        execute(&mut run, &manifest, base, loaded)
    })();

    if let Err(e) = &result {
        run.report.error = Some(StageFailure { stage: e.stage, message: e.message.clone() });
    }
    run.finish_report();
    result.map(|(actions, trajectory)| RunOutcome { actions, trajectory, stage_report: run.report })
}

type Executed = (Vec<TcpAction>, Option<TrajectoryReport>);

fn execute(run: &mut Runner<'_>, m: &RunManifest, base: &Path, l: Loaded) -> Result<Executed, PipelineError> {
    let cfg = l.cfg;
    let cfg_json = serde_json::to_string(&cfg).expect("config serializes");
    let d = &l.digests;

    // align-depth
    let t0 = Instant::now();
    let mut metric_poses = None;
    let mut align_digest = String::new();
    let mut alignment = None;
    if cfg.track_source == TrackSource::World3d {
        run.skip(Stage::AlignDepth);
    } else {
        let anchor = m.anchor_pose.expect("validated");
        let anchor_json = serde_json::to_string(&anchor).expect("pose serializes");
        let mut parts = digest_list(d, "relative_depth[0]");
        parts.extend(digest_list(d, "relative_depth_validity[0]"));
        parts.extend(digest_list(d, "metric_reference"));
        parts.extend(digest_list(d, "camera_poses"));
        parts.push(("anchor", &anchor_json));
        parts.push(("config", &cfg_json));
        let key = combine(parts);
        let names = ["scale_shift.json", "metric_poses.json"];
        let cached = run.cache.as_ref().and_then(|c| c.get(&key, &names));
        let hit = cached.is_some();
        let (align_bytes, poses_bytes) = match cached {
            Some(mut files) => (files.remove(0), files.remove(0)),
            None => {
                let poses = l.poses.as_ref().expect("validated");
                let (align, metric) = if cfg.track_source == TrackSource::Lift {
                    let rel0 = read_rel_depth(&m.inputs, base, 0)?;
                    let reference = read_depth_path(
                        m.inputs.metric_reference.as_deref().expect("validated"),
                        m.inputs.metric_reference_validity.as_deref(),
                        base,
                        Stage::AlignDepth,
                    )?;
                    let a = align_frame0(&rel0, &reference, &cfg).map_err(|e| PipelineError::new(Stage::AlignDepth, e))?;
                    let mp = metricize_poses(poses, &a.scale_shift, &anchor)
                        .map_err(|e| PipelineError::new(Stage::AlignDepth, e))?;
                    (Some(a), mp)
                } else {
                    // 3D camera-frame tracks are already metric; only the anchor applies.
                    let mp = metricize_poses(poses, &ScaleShift::identity(), &anchor)
                        .map_err(|e| PipelineError::new(Stage::AlignDepth, e))?;
                    (None, mp)
                };
                let poses_bytes = pose_json_bytes(&metric)?;
                let align_bytes = json_bytes(&align);
                if let Some(c) = &run.cache {
                    c.put(&key, &[(names[0], &align_bytes), (names[1], &poses_bytes)]);
                }
                (align_bytes, poses_bytes)
            }
        };
        alignment = serde_json::from_slice::<Option<Alignment>>(&align_bytes)
            .map_err(|e| PipelineError::new(Stage::AlignDepth, format!("cached alignment: {e}")))?;
        let tmp = run.out.join("metric_poses.json");
        io::write_bytes(&tmp, &poses_bytes).map_err(|e| PipelineError::new(Stage::AlignDepth, e))?;
        metric_poses = Some(io::read_pose_sequence(&tmp).map_err(|e| PipelineError::new(Stage::AlignDepth, e))?);
        align_digest = run.write(Stage::AlignDepth, &[(names[0], &align_bytes), (names[1], &poses_bytes)])?;
        run.record(Stage::AlignDepth, t0, key, align_digest.clone(), hit);
        if let Some(a) = &alignment {
            if a.rms_m > 0.05 {
                run.report.warnings.push(format!("frame-0 depth alignment RMS is {:.4} m", a.rms_m));
            }
        }
    }
    if run.done(Stage::AlignDepth) {
        return Ok((Vec::new(), None));
    }

    // lift-tracks
    let t0 = Instant::now();
    let mut parts = vec![("align", align_digest.as_str()), ("config", cfg_json.as_str())];
    parts.extend(digest_list(d, "relative_depth"));
    parts.extend(digest_list(d, "tracks"));
    parts.extend(digest_list(d, "intrinsics"));
    let key = combine(parts);
    let cached = run.cache.as_ref().and_then(|c| c.get(&key, &["tracks_lifted.csv"]));
    let hit = cached.is_some();
    let lifted_bytes = match cached {
        Some(mut f) => f.remove(0),
        None => {
            let lifted = match cfg.track_source {
                TrackSource::Lift => {
                    let scale = alignment.expect("lift path aligns").scale_shift;
                    let rel: Vec<DepthFrame> = (0..m.inputs.relative_depth.len())
                        .map(|i| read_rel_depth(&m.inputs, base, i))
                        .collect::<Result<_, _>>()?;
                    let metric = apply_scale_shift(&rel, &scale);
                    lift_stage(&l.tracks, cfg.track_source, Some((&metric, metric_poses.as_ref().expect("aligned"))), l.intrinsics.as_ref())
                }
                TrackSource::Camera3d => {
                    lift_stage(&l.tracks, cfg.track_source, Some((&[], metric_poses.as_ref().expect("aligned"))), None)
                }
                TrackSource::World3d => lift_stage(&l.tracks, cfg.track_source, None, None),
            }
            .map_err(|e| PipelineError::new(Stage::LiftTracks, e))?;
            let bytes = io::tracks_csv_bytes(&lifted);
            if let Some(c) = &run.cache {
                c.put(&key, &[("tracks_lifted.csv", &bytes)]);
            }
            bytes
        }
    };
    let lift_digest = run.write(Stage::LiftTracks, &[("tracks_lifted.csv", &lifted_bytes)])?;
    let lifted = io::read_tracks_csv(&run.out.join("tracks_lifted.csv"), l.frames.or(l.tracks.first().map(PointTrack::len)))
        .map_err(|e| PipelineError::new(Stage::LiftTracks, e))?;
    run.record(Stage::LiftTracks, t0, key, lift_digest.clone(), hit);
    if run.done(Stage::LiftTracks) {
        return Ok((Vec::new(), None));
    }

    // mask
    let t0 = Instant::now();
    let masked = if m.inputs.masks.is_empty() {
        run.report.warnings.push("no tool masks given; all tracks are candidates".into());
        lifted
    } else {
        let masks: Vec<ToolMask> = m
            .inputs
            .masks
            .iter()
            .enumerate()
            .map(|(i, p)| io::read_tool_mask(&resolve(base, p), i).map_err(|e| PipelineError::new(Stage::Mask, e)))
            .collect::<Result<_, _>>()?;
        run.report.warnings.extend(mask_warnings(&masks));
        mask_tracks(&lifted, &masks, cfg.mask_mode)
    };
    let masked_bytes = io::tracks_csv_bytes(&masked);
    let mut parts = vec![("lift", lift_digest.as_str()), ("config", cfg_json.as_str())];
    parts.extend(digest_list(d, "masks"));
    let mask_in = combine(parts);
    let mask_digest = run.write(Stage::Mask, &[("tracks_masked.csv", &masked_bytes)])?;
    run.record(Stage::Mask, t0, mask_in, mask_digest.clone(), false);
    if run.done(Stage::Mask) {
        return Ok((Vec::new(), None));
    }

    // filter-rigid
    let t0 = Instant::now();
    let seed = m.seed.to_string();
    let filter_in = combine([("mask", mask_digest.as_str()), ("config", cfg_json.as_str()), ("seed", seed.as_str())]);
    let selection =
        select_rigid(&masked, &cfg.filter_config(m.seed)).map_err(|e| PipelineError::new(Stage::FilterRigid, e))?;
    #[derive(Serialize)]
    struct Rigidity<'a> {
        selected: Vec<u64>,
        scores: &'a [crate::tracks::RigidityScore],
    }
    let rigidity = json_bytes(&Rigidity { selected: selection.selected.iter().map(|t| t.track_id).collect(), scores: &selection.scores });
    let filter_digest = run.write(Stage::FilterRigid, &[("rigidity.json", &rigidity)])?;
    run.record(Stage::FilterRigid, t0, filter_in, filter_digest.clone(), false);
    if run.done(Stage::FilterRigid) {
        return Ok((Vec::new(), None));
    }

    // recover-poses
    let t0 = Instant::now();
    let tcp_json = serde_json::to_string(&m.initial_tcp).expect("pose serializes");
    let recover_in = combine([("filter", filter_digest.as_str()), ("initial_tcp", tcp_json.as_str()), ("config", cfg_json.as_str())]);
    let rec = recover_stage(&selection.selected, m.initial_tcp.as_ref(), &cfg)
        .map_err(|e| PipelineError::new(Stage::RecoverPoses, e))?;
    run.report.warnings.extend(gap_warnings(&rec.report));
    run.report.warnings.extend(violation_warnings(&rec.violations));
    let tcp_bytes = io::actions_jsonl_bytes(&io::actions_to_records(&rec.actions));
    let recover_digest = run.write(
        Stage::RecoverPoses,
        &[
            ("tcp_actions.jsonl", &tcp_bytes),
            ("trajectory_report.json", &json_bytes(&rec.report)),
            ("safety.json", &json_bytes(&rec.violations)),
        ],
    )?;
    run.record(Stage::RecoverPoses, t0, recover_in, recover_digest.clone(), false);
    if run.done(Stage::RecoverPoses) {
        return Ok((rec.actions, Some(rec.report)));
    }

    // predict-state
    let t0 = Instant::now();
    let mut parts = vec![("config", cfg_json.as_str())];
    parts.extend(digest_list(d, "features"));
    parts.extend(digest_list(d, "gripper_weights"));
    parts.extend(digest_list(d, "hand_states"));
    parts.extend(digest_list(d, "retarget_weights"));
    let predict_in = combine(parts);
    let mut predict_files: Vec<(&str, Vec<u8>)> = Vec::new();
    let gripper = match (&l.features, &l.gripper) {
        (Some(f), Some(h)) => {
            let g = gripper_stage(f, h, &cfg).map_err(|e| PipelineError::new(Stage::PredictState, e))?;
            predict_files.push(("gripper.csv", frame_vectors_csv_bytes(&g)));
            Some(g)
        }
        _ => None,
    };
    if let Some((states, head)) = &l.hands {
        let out = head.predict(states).map_err(|e| PipelineError::new(Stage::PredictState, e))?;
        if out.clamp_events > 0 {
            run.report.warnings.push(format!("retargeting clamped {} joint values to their limits", out.clamp_events));
        }
        let rows: Vec<FrameVector> =
            states.iter().zip(out.commands).map(|(s, c)| FrameVector { frame: s.frame, values: c }).collect();
        predict_files.push(("retarget.csv", frame_vectors_csv_bytes(&rows)));
    }
    if predict_files.is_empty() {
        run.skip(Stage::PredictState);
    } else {
        let refs: Vec<(&str, &[u8])> = predict_files.iter().map(|(n, b)| (*n, b.as_slice())).collect();
        let predict_digest = run.write(Stage::PredictState, &refs)?;
        run.record(Stage::PredictState, t0, predict_in, predict_digest, false);
    }
    if run.done(Stage::PredictState) {
        return Ok((rec.actions, Some(rec.report)));
    }

    // merge
    let t0 = Instant::now();
    let actions = merge(rec.actions, gripper.as_deref());
    let bytes = io::actions_jsonl_bytes(&io::actions_to_records(&actions));
    let merge_digest = run.write(Stage::Merge, &[("actions.jsonl", &bytes)])?;
    run.record(Stage::Merge, t0, recover_digest, merge_digest, false);
    Ok((actions, Some(rec.report)))
}

fn read_depth_path(p: &Path, validity: Option<&Path>, base: &Path, stage: Stage) -> Result<DepthFrame, PipelineError> {
    let v = validity.map(|v| resolve(base, v));
    io::read_depth(&resolve(base, p), v.as_deref()).map_err(|e| PipelineError::new(stage, e))
}

fn read_rel_depth(inputs: &ManifestInputs, base: &Path, i: usize) -> Result<DepthFrame, PipelineError> {
    let stage = if i == 0 { Stage::AlignDepth } else { Stage::LiftTracks };
    read_depth_path(&inputs.relative_depth[i], inputs.relative_depth_validity.get(i).map(PathBuf::as_path), base, stage)
}

fn pose_json_bytes(poses: &PoseSequence) -> Result<Vec<u8>, PipelineError> {
    let records: Vec<io::PoseRecord> = poses
        .poses()
        .iter()
        .zip(poses.frame_times())
        .enumerate()
        .map(|(frame, (p, time_s))| {
            let j = p.to_json();
            io::PoseRecord { frame, time_s: *time_s, q: j.q, t: j.t }
        })
        .collect();
    Ok(json_bytes(&records))
}

fn frame_vectors_csv_bytes(rows: &[FrameVector]) -> Vec<u8> {
    let dims = rows.first().map_or(0, |r| r.values.len());
    let mut out = String::from("frame");
    for i in 0..dims {
        out.push_str(&format!(",v{i}"));
    }
    out.push('\n');
    for r in rows {
        out.push_str(&r.frame.to_string());
        for v in &r.values {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    out.into_bytes()
}

#[derive(Debug, Error)]
pub enum ExportError {
    #[error("unknown export format {0:?} (expected jsonl or csv)")]
    UnknownFormat(String),
    #[error(transparent)]
    Io(#[from] IoError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ActionFormat {
    Jsonl,
    Csv,
}

impl std::str::FromStr for ActionFormat {
    type Err = ExportError;

    fn from_str(s: &str) -> Result<Self, ExportError> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(ActionFormat::Jsonl),
            "csv" => Ok(ActionFormat::Csv),
            _ => Err(ExportError::UnknownFormat(s.to_string())),
        }
    }
}

impl ActionFormat {
    /// Guesses from the file extension.
    pub fn from_path(path: &Path) -> Result<Self, ExportError> {
        path.extension().and_then(|e| e.to_str()).unwrap_or("").parse()
    }
}

/// Converts an action file between JSONL and CSV; returns the row count.
pub fn replay_export(input: &Path, output: &Path, format: ActionFormat) -> Result<usize, ExportError> {
    let records = match ActionFormat::from_path(input)? {
        ActionFormat::Jsonl => io::read_actions_jsonl(input)?,
        ActionFormat::Csv => io::read_actions_csv(input)?,
    };
    match format {
        ActionFormat::Jsonl => io::write_actions_jsonl(output, &records)?,
        ActionFormat::Csv => io::write_actions_csv(output, &records)?,
    }
    Ok(records.len())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimulateOptions {
    /// Training epochs for the bundled gripper head; 0 skips it.
    pub gripper_epochs: usize,
}

impl Default for SimulateOptions {
    fn default() -> Self {
        Self { gripper_epochs: 300 }
    }
}

/// Generates a scene and writes it as a runnable directory; returns the manifest path.
pub fn simulate(spec: &SceneSpec, out_dir: &Path, opts: &SimulateOptions) -> Result<PathBuf, String> {
    let (bundle, truth) = generate(spec).map_err(|e| e.to_string())?;
    write_bundle(&bundle, &truth, spec, out_dir, opts)
}

pub fn write_bundle(
    bundle: &Bundle,
    truth: &GroundTruth,
    spec: &SceneSpec,
    out_dir: &Path,
    opts: &SimulateOptions,
) -> Result<PathBuf, String> {
    let e = |e: IoError| e.to_string();
    let mut inputs = ManifestInputs { tracks: "tracks.csv".into(), ..ManifestInputs::default() };
    for (t, frame) in bundle.relative_depth.iter().enumerate() {
        let rel = PathBuf::from(format!("depth/rel_{t:04}.pfm"));
        io::write_pfm(&out_dir.join(&rel), frame).map_err(e)?;
        inputs.relative_depth.push(rel);
    }
    let reference = PathBuf::from("depth/metric_ref_0000.pfm");
    io::write_pfm(&out_dir.join(&reference), &bundle.metric_reference).map_err(e)?;
    inputs.metric_reference = Some(reference);
    for mask in &bundle.masks {
        let p = PathBuf::from(format!("masks/mask_{:04}.pgm", mask.frame));
        io::write_tool_mask(&out_dir.join(&p), mask).map_err(e)?;
        inputs.masks.push(p);
    }
    io::write_tracks_csv(&out_dir.join("tracks.csv"), &bundle.tracks).map_err(e)?;
    io::write_pose_sequence(&out_dir.join("camera_poses.json"), &bundle.relative_poses).map_err(e)?;
    inputs.camera_poses = Some("camera_poses.json".into());
    io::write_json(&out_dir.join("intrinsics.json"), &bundle.intrinsics).map_err(e)?;
    inputs.intrinsics = Some("intrinsics.json".into());
    io::write_frame_vectors_csv(&out_dir.join("features.csv"), &bundle.features).map_err(e)?;
    io::write_json(&out_dir.join("truth.json"), truth).map_err(e)?;
    io::write_json(&out_dir.join("scene.json"), spec).map_err(e)?;

    if opts.gripper_epochs > 0 {
        let dataset: Vec<(Vec<f64>, Vec<f64>)> =
            bundle.features.iter().map(|f| (f.values.clone(), vec![truth.aperture[f.frame]])).collect();
        let cfg = TrainConfig { epochs: opts.gripper_epochs, seed: spec.seed, ..TrainConfig::default() };
        let outcome = train(MlpSpec::gripper(spec.features.dims), &dataset, &cfg).map_err(|e| e.to_string())?;
        io::write_json(&out_dir.join("gripper_weights.json"), &outcome.model.to_json()).map_err(e)?;
        inputs.features = Some("features.csv".into());
        inputs.gripper_weights = Some("gripper_weights.json".into());
    }

    let manifest = RunManifest {
        instruction: bundle.instruction.clone(),
        depth_provenance: "synthetic oracle".into(),
        inputs,
        anchor_pose: Some(bundle.anchor_pose),
        initial_tcp: Some(bundle.initial_tcp),
        seed: spec.seed,
        stages: Map::new(),
    };
    let path = out_dir.join("manifest.json");
    io::write_json(&path, &manifest).map_err(e)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::{evaluate, EvalThresholds, OcclusionWindow};

    #[test]
    fn overlay_prefers_manifest_values() {
        let flags = StageConfig { k: 12, smoothing_window: 3, ..StageConfig::default() };
        let mut m = Map::new();
        m.insert("k".into(), Value::from(5));
        m.insert("mask_mode".into(), Value::from("strict"));
        let cfg = flags.overlay(&m).unwrap();
        assert_eq!((cfg.k, cfg.smoothing_window, cfg.mask_mode), (5, 3, MaskMode::Strict));
        m.insert("k".into(), Value::from(2));
        assert!(flags.overlay(&m).is_err());
        let mut unknown = Map::new();
        unknown.insert("kk".into(), Value::from(5));
        assert!(flags.overlay(&unknown).is_err());
    }

    #[test]
    fn noise_free_bundle_round_trips() {
        let (bundle, truth) = generate(&SceneSpec::with_seed(11)).unwrap();
        let run = run_bundle(&bundle, &StageConfig::default(), 0, None).unwrap();
        assert!((run.alignment.scale_shift.s - 2.0).abs() < 1e-9);
        for (a, g) in run.actions.iter().zip(truth.steps()) {
            assert!(a.transform.rotation.angle_to(&g.rotation) < 1e-6);
            assert!((a.transform.translation - g.translation).norm() < 1e-6);
        }
        let e = evaluate(&run.actions, &truth, EvalThresholds::default()).unwrap();
        assert!(e.pass);
    }

    #[test]
    fn occlusion_window_is_bridged_with_one_warning() {
        let mut spec = SceneSpec::with_seed(12);
        spec.occlusions = vec![OcclusionWindow { from: 14, to: 15, keep: 2 }];
        let (bundle, truth) = generate(&spec).unwrap();
        let run = run_bundle(&bundle, &StageConfig::default(), 0, None).unwrap();
        assert_eq!(run.report.gaps.len(), 1);
        assert_eq!(run.warnings.iter().filter(|w| w.contains("interpolated")).count(), 1);
        assert_eq!(run.actions.len(), truth.steps().len());
    }

    #[test]
    fn export_rejects_unknown_format() {
        assert!(matches!("parquet".parse::<ActionFormat>(), Err(ExportError::UnknownFormat(_))));
        assert_eq!("CSV".parse::<ActionFormat>().unwrap(), ActionFormat::Csv);
    }
}

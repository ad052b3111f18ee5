//! Per-step rigid motion of the tool and the TCP action sequence built from it.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{kabsch_align, residual, GeometryError, PointSet, RigidTransform, Rotation, Vec3};
use crate::tracks::PointTrack;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RecoveryError {
    #[error("frames {from}->{to}: only {visible} tracks visible in both, need 3")]
    InsufficientVisibility { from: usize, to: usize, visible: usize },
    #[error("frames {from}->{to}: {reason}")]
    DegenerateConfiguration { from: usize, to: usize, reason: String },
    #[error("tracks span {0} frames, need at least 2")]
    TooFewFrames(usize),
    #[error("smoothing window {window} exceeds sequence length {len}")]
    WindowTooLarge { window: usize, len: usize },
    #[error("smoothing window must be odd and positive, got {0}")]
    InvalidWindow(usize),
    #[error("invalid safety limits: {0}")]
    InvalidLimits(String),
}

pub type Result<T, E = RecoveryError> = std::result::Result<T, E>;

impl RecoveryError {
    /// First frame of the failing step, if the error is tied to one.
    pub fn frame(&self) -> Option<usize> {
        match self {
            RecoveryError::InsufficientVisibility { from, .. }
            | RecoveryError::DegenerateConfiguration { from, .. } => Some(*from),
            _ => None,
        }
    }
}

/// One commanded end-effector motion.
///
/// `transform` is the world-frame relative motion executed at `frame`
/// (estimated from frames `frame - 1` and `frame`).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TcpAction {
    pub frame: usize,
    pub transform: RigidTransform,
    pub absolute_pose: Option<RigidTransform>,
    pub gripper: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Gap {
    /// Last good frame before the gap.
    pub from: usize,
    /// First frame after the gap that could be aligned with `from`.
    pub to: usize,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrajectoryReport {
    /// Per-step sum of squared residuals (m²).
    pub step_residuals: Vec<f64>,
    pub step_inliers: Vec<usize>,
    pub max_rotation_step_deg: f64,
    pub max_rotation_frame: Option<usize>,
    pub max_translation_step_m: f64,
    pub max_translation_frame: Option<usize>,
    /// Spans re-expressed as one motion and split evenly across their steps.
    pub gaps: Vec<Gap>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GapPolicy {
    #[default]
    SkipAndInterpolate,
    FailFast,
}

/// Rigid motion carrying the tracks from frame `from` to frame `to`.
///
/// Returns the transform, its residual, and the number of tracks used.
pub fn fit_between(tracks: &[PointTrack], from: usize, to: usize) -> Result<(RigidTransform, f64, usize)> {
    let (src, dst): (Vec<Vec3>, Vec<Vec3>) =
        tracks.iter().filter_map(|tr| Some((tr.position(from)?, tr.position(to)?))).unzip();
    let visible = src.len();
    if visible < 3 {
        return Err(RecoveryError::InsufficientVisibility { from, to, visible });
    }
    let degenerate = |e: GeometryError| RecoveryError::DegenerateConfiguration { from, to, reason: e.to_string() };
    let src = PointSet::new(src).map_err(degenerate)?;
    let dst = PointSet::new(dst).map_err(degenerate)?;
    let g = kabsch_align(&src, &dst).map_err(degenerate)?;
    let r = residual(&g, &src, &dst).map_err(degenerate)?;
    Ok((g, r, visible))
}

/// Rigid motion between frames `t` and `t + 1`, with its residual.
pub fn recover_step(tracks: &[PointTrack], t: usize) -> Result<(RigidTransform, f64)> {
    fit_between(tracks, t, t + 1).map(|(g, r, _)| (g, r))
}

/// Recovers one action per frame transition and composes absolute poses.
///
/// Absolute poses follow `pose[t+1] = transform[t] ∘ pose[t]`, starting from
/// `initial_tcp`. Under [`GapPolicy::SkipAndInterpolate`] a failing step is
/// bridged by aligning the last good frame with the next frame that aligns,
/// and that motion is split into equal screw steps.
pub fn recover_trajectory(
    tracks: &[PointTrack],
    initial_tcp: Option<&RigidTransform>,
    policy: GapPolicy,
) -> Result<(Vec<TcpAction>, TrajectoryReport)> {
    let frames = tracks.first().map_or(0, PointTrack::len);
    if frames < 2 {
        return Err(RecoveryError::TooFewFrames(frames));
    }
    let steps = frames - 1;
    let mut transforms = Vec::with_capacity(steps);
    let mut report = TrajectoryReport::default();

    let mut a = 0;
    while a < steps {
        match fit_between(tracks, a, a + 1) {
            Ok((g, r, n)) => {
                transforms.push(g);
                report.step_residuals.push(r);
                report.step_inliers.push(n);
                a += 1;
            }
            Err(e) if policy == GapPolicy::FailFast => return Err(e),
            Err(e) => {
                let bridge = (a + 2..frames).find_map(|b| fit_between(tracks, a, b).ok().map(|fit| (b, fit)));
                let Some((b, (g, r, n))) = bridge else { return Err(e) };
                let span = b - a;
                let piece = g.powf(1.0 / span as f64);
                for _ in 0..span {
                    transforms.push(piece);
                    report.step_residuals.push(r);
                    report.step_inliers.push(n);
                }
                report.gaps.push(Gap { from: a, to: b });
                a = b;
            }
        }
    }

    let mut pose = initial_tcp.copied();
    let actions: Vec<TcpAction> = transforms
        .iter()
        .enumerate()
        .map(|(t, g)| {
            pose = pose.map(|p| g.compose(&p));
            TcpAction { frame: t + 1, transform: *g, absolute_pose: pose, gripper: None }
        })
        .collect();
    fill_step_extremes(&actions, &mut report);
    Ok((actions, report))
}

fn fill_step_extremes(actions: &[TcpAction], report: &mut TrajectoryReport) {
    report.max_rotation_step_deg = 0.0;
    report.max_translation_step_m = 0.0;
    report.max_rotation_frame = None;
    report.max_translation_frame = None;
    for a in actions {
        let deg = a.transform.rotation_angle().to_degrees();
        let m = a.transform.translation_norm();
        if report.max_rotation_frame.is_none() || deg > report.max_rotation_step_deg {
            report.max_rotation_step_deg = deg;
            report.max_rotation_frame = Some(a.frame);
        }
        if report.max_translation_frame.is_none() || m > report.max_translation_step_m {
            report.max_translation_step_m = m;
            report.max_translation_frame = Some(a.frame);
        }
    }
}

/// Normalized mean of unit quaternions after aligning signs with `reference`.
pub fn average_quaternions(quats: &[[f64; 4]], reference: [f64; 4]) -> [f64; 4] {
    let mut sum = [0.0; 4];
    for q in quats {
        let dot: f64 = q.iter().zip(&reference).map(|(a, b)| a * b).sum();
        let sign = if dot < 0.0 { -1.0 } else { 1.0 };
        for (s, v) in sum.iter_mut().zip(q) {
            *s += sign * v;
        }
    }
    sum
}

/// Centered moving-average smoothing of the per-step motions.
///
/// Windows shrink symmetrically near the ends. Absolute poses are recomposed
/// from the smoothed steps when present.
pub fn smooth_trajectory(actions: &[TcpAction], window: usize) -> Result<Vec<TcpAction>> {
    if window == 0 || window.is_multiple_of(2) {
        return Err(RecoveryError::InvalidWindow(window));
    }
    if window > actions.len().max(1) {
        return Err(RecoveryError::WindowTooLarge { window, len: actions.len() });
    }
    if window == 1 {
        return Ok(actions.to_vec());
    }
    let n = actions.len();
    let quats: Vec<[f64; 4]> = actions.iter().map(|a| a.transform.rotation.to_quaternion()).collect();
    let mut out = actions.to_vec();
    for i in 0..n {
        let half = (window / 2).min(i).min(n - 1 - i);
        let span = i - half..=i + half;
        let count = (2 * half + 1) as f64;
        let t = actions[span.clone()].iter().fold(Vec3::zeros(), |acc, a| acc + a.transform.translation) / count;
        let q = average_quaternions(&quats[span], quats[i]);
        let rotation = Rotation::from_quaternion(q).unwrap_or(actions[i].transform.rotation);
        out[i].transform = RigidTransform::new(rotation, t);
    }
    if let Some(first) = actions[0].absolute_pose {
        let mut pose = actions[0].transform.inverse().compose(&first);
        for a in out.iter_mut() {
            pose = a.transform.compose(&pose);
            a.absolute_pose = Some(pose);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SafetyLimits {
    pub max_step_m: f64,
    pub max_step_deg: f64,
}

impl SafetyLimits {
    pub fn new(max_step_m: f64, max_step_deg: f64) -> Result<Self> {
        if !(max_step_m > 0.0 && max_step_deg > 0.0) {
            return Err(RecoveryError::InvalidLimits(format!(
                "limits must be positive, got {max_step_m} m / {max_step_deg} deg"
            )));
        }
        Ok(Self { max_step_m, max_step_deg })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationKind {
    Translation,
    Rotation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub frame: usize,
    pub kind: ViolationKind,
    /// Meters for translation, degrees for rotation.
    pub magnitude: f64,
    pub limit: f64,
}

/// Every step whose translation or rotation exceeds the limits.
pub fn safety_check(actions: &[TcpAction], limits: &SafetyLimits) -> Vec<Violation> {
    let mut out = Vec::new();
    for a in actions {
        let m = a.transform.translation_norm();
        if m > limits.max_step_m {
            out.push(Violation { frame: a.frame, kind: ViolationKind::Translation, magnitude: m, limit: limits.max_step_m });
        }
        let deg = a.transform.rotation_angle().to_degrees();
        if deg > limits.max_step_deg {
            out.push(Violation { frame: a.frame, kind: ViolationKind::Rotation, magnitude: deg, limit: limits.max_step_deg });
        }
    }
    out
}

/// Copies per-frame gripper predictions onto the actions executed at those frames.
pub fn attach_gripper(actions: &mut [TcpAction], gripper_by_frame: &[f64]) {
    for a in actions.iter_mut() {
        a.gripper = gripper_by_frame.get(a.frame).map(|g| g.clamp(0.0, 1.0));
    }
}

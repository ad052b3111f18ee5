//! Metric upgrade of relative depth and relative camera trajectories.
//!
//! A single global `(s, d)` is fitted on the reference frame and then applied
//! to every frame; camera translations are scaled by the same `s` and the
//! whole trajectory is re-anchored on the known metric pose of frame 0.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{RigidTransform, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DepthError {
    #[error("insufficient overlap: {0} jointly valid pixels, need at least 2")]
    InsufficientOverlap(usize),
    #[error("relative depth has zero variance over the fit domain")]
    DegenerateDepth,
    #[error("fitted scale {0} is not positive")]
    NonPositiveScale(f64),
    #[error("frame size mismatch: {0}x{1} vs {2}x{3}")]
    SizeMismatch(usize, usize, usize, usize),
    #[error("pixel {0} is outside the frame or not valid in both frames")]
    InvalidDomain(usize),
    #[error("pose sequence is empty")]
    EmptySequence,
    #[error("invalid depth frame: {0}")]
    InvalidFrame(String),
    #[error("invalid intrinsics: {0}")]
    InvalidIntrinsics(String),
    #[error("invalid pose sequence: {0}")]
    InvalidPoses(String),
}

pub type Result<T, E = DepthError> = std::result::Result<T, E>;

/// Dense depth raster, row-major, with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthFrame {
    width: usize,
    height: usize,
    values: Vec<f64>,
    valid: Vec<bool>,
}

impl DepthFrame {
    /// Validity is inferred: finite and strictly positive pixels are valid.
    pub fn new(width: usize, height: usize, values: Vec<f64>) -> Result<Self> {
        if width * height != values.len() {
            return Err(DepthError::InvalidFrame(format!(
                "{width}x{height} frame with {} values",
                values.len()
            )));
        }
        let valid = values.iter().map(|v| v.is_finite() && *v > 0.0).collect();
        Ok(Self { width, height, values, valid })
    }

    /// Explicit mask; every pixel marked valid must carry a finite positive depth.
    pub fn with_mask(width: usize, height: usize, values: Vec<f64>, valid: Vec<bool>) -> Result<Self> {
        if width * height != values.len() || valid.len() != values.len() {
            return Err(DepthError::InvalidFrame(format!(
                "{width}x{height} frame with {} values and {} mask entries",
                values.len(),
                valid.len()
            )));
        }
        if let Some(i) = (0..values.len()).find(|&i| valid[i] && !(values[i].is_finite() && values[i] > 0.0)) {
            return Err(DepthError::InvalidFrame(format!(
                "pixel {i} is marked valid but has depth {}",
                values[i]
            )));
        }
        Ok(Self { width, height, values, valid })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn valid(&self) -> &[bool] {
        &self.valid
    }

    pub fn index(&self, col: usize, row: usize) -> Option<usize> {
        (col < self.width && row < self.height).then(|| row * self.width + col)
    }

    /// Depth at integer pixel `(col, row)` if valid.
    pub fn depth_at(&self, col: usize, row: usize) -> Option<f64> {
        let i = self.index(col, row)?;
        self.valid[i].then(|| self.values[i])
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }

    fn same_size(&self, other: &DepthFrame) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(DepthError::SizeMismatch(self.width, self.height, other.width, other.height));
        }
        Ok(())
    }
}

/// Affine depth correction `D_metric = s·D_rel + d`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScaleShift {
    pub s: f64,
    pub d: f64,
}

impl ScaleShift {
    pub fn new(s: f64, d: f64) -> Result<Self> {
        if !(s.is_finite() && s > 0.0) {
            return Err(DepthError::NonPositiveScale(s));
        }
        if !d.is_finite() {
            return Err(DepthError::InvalidFrame("shift must be finite".into()));
        }
        Ok(Self { s, d })
    }

    pub fn identity() -> Self {
        Self { s: 1.0, d: 0.0 }
    }

    pub fn apply(&self, v: f64) -> f64 {
        self.s * v + self.d
    }
}

/// Pinhole intrinsics in pixels. Pixel centers sit at integer coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraIntrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
}

impl CameraIntrinsics {
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64) -> Result<Self> {
        let k = Self { fx, fy, cx, cy };
        k.check()?;
        Ok(k)
    }

    fn check(&self) -> Result<()> {
        if !(self.fx.is_finite() && self.fx > 0.0 && self.fy.is_finite() && self.fy > 0.0) {
            return Err(DepthError::InvalidIntrinsics("focal lengths must be positive".into()));
        }
        if !(self.cx.is_finite() && self.cy.is_finite()) {
            return Err(DepthError::InvalidIntrinsics("principal point must be finite".into()));
        }
        Ok(())
    }

    /// Checks focal lengths and that the principal point lies inside the image.
    pub fn validate_for(&self, width: usize, height: usize) -> Result<()> {
        self.check()?;
        if self.cx < 0.0 || self.cy < 0.0 || self.cx > width as f64 || self.cy > height as f64 {
            return Err(DepthError::InvalidIntrinsics(format!(
                "principal point ({}, {}) outside {width}x{height} image",
                self.cx, self.cy
            )));
        }
        Ok(())
    }

    /// Camera-frame point at pixel `(u, v)` with depth `z` along the optical axis.
    pub fn backproject(&self, u: f64, v: f64, z: f64) -> Vec3 {
        Vec3::new((u - self.cx) * z / self.fx, (v - self.cy) * z / self.fy, z)
    }

    /// Pixel coordinates of a camera-frame point in front of the camera.
    pub fn project(&self, p: &Vec3) -> Option<(f64, f64)> {
        (p.z > 0.0).then(|| (self.fx * p.x / p.z + self.cx, self.fy * p.y / p.z + self.cy))
    }
}

/// Camera-to-world poses, one per frame, with strictly increasing timestamps.
#[derive(Debug, Clone, PartialEq)]
pub struct PoseSequence {
    poses: Vec<RigidTransform>,
    frame_times: Vec<f64>,
}

impl PoseSequence {
    pub fn new(poses: Vec<RigidTransform>, frame_times: Vec<f64>) -> Result<Self> {
        if poses.len() != frame_times.len() {
            return Err(DepthError::InvalidPoses(format!(
                "{} poses but {} timestamps",
                poses.len(),
                frame_times.len()
            )));
        }
        if frame_times.iter().any(|t| !t.is_finite() || *t < 0.0) {
            return Err(DepthError::InvalidPoses("timestamps must be finite and non-negative".into()));
        }
        if frame_times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(DepthError::InvalidPoses("timestamps must be strictly increasing".into()));
        }
        Ok(Self { poses, frame_times })
    }

    /// Poses at a fixed frame rate starting at t = 0.
    pub fn uniform(poses: Vec<RigidTransform>, fps: f64) -> Result<Self> {
        let times = (0..poses.len()).map(|i| i as f64 / fps).collect();
        Self::new(poses, times)
    }

    pub fn poses(&self) -> &[RigidTransform] {
        &self.poses
    }

    pub fn frame_times(&self) -> &[f64] {
        &self.frame_times
    }

    pub fn len(&self) -> usize {
        self.poses.len()
    }

    pub fn is_empty(&self) -> bool {
        self.poses.is_empty()
    }
}

/// Pixel indices valid in both frames, sampled every `stride` rows and columns.
pub fn joint_valid_domain(a: &DepthFrame, b: &DepthFrame, stride: usize) -> Result<Vec<usize>> {
    a.same_size(b)?;
    let stride = stride.max(1);
    let mut out = Vec::new();
    for row in (0..a.height).step_by(stride) {
        for col in (0..a.width).step_by(stride) {
            let i = row * a.width + col;
            if a.valid[i] && b.valid[i] {
                out.push(i);
            }
        }
    }
    Ok(out)
}

fn domain_values(relative: &DepthFrame, reference: &DepthFrame, domain: &[usize]) -> Result<(Vec<f64>, Vec<f64>)> {
    relative.same_size(reference)?;
    let mut xs = Vec::with_capacity(domain.len());
    let mut ys = Vec::with_capacity(domain.len());
    for &i in domain {
        if i >= relative.values.len() || !relative.valid[i] || !reference.valid[i] {
            return Err(DepthError::InvalidDomain(i));
        }
        xs.push(relative.values[i]);
        ys.push(reference.values[i]);
    }
    Ok((xs, ys))
}

fn solve_affine(xs: &[f64], ys: &[f64]) -> Result<ScaleShift> {
    let n = xs.len();
    if n < 2 {
        return Err(DepthError::InsufficientOverlap(n));
    }
    let nf = n as f64;
    let mx = xs.iter().sum::<f64>() / nf;
    let my = ys.iter().sum::<f64>() / nf;
    let (mut sxx, mut sxy) = (0.0, 0.0);
    for (x, y) in xs.iter().zip(ys) {
        let dx = x - mx;
        sxx += dx * dx;
        sxy += dx * (y - my);
    }
    if sxx <= f64::EPSILON * f64::EPSILON * nf * mx * mx || sxx == 0.0 {
        return Err(DepthError::DegenerateDepth);
    }
    let s = sxy / sxx;
    if !(s > 0.0) {
        return Err(DepthError::NonPositiveScale(s));
    }
    Ok(ScaleShift { s, d: my - s * mx })
}

/// Least-squares `(s, d)` minimizing `Σ_{i∈Ω} (s·rel_i + d − ref_i)²`.
///
/// Solved through the centered normal equations. A non-positive optimum is an
/// error, never clamped.
pub fn fit_scale_shift(relative: &DepthFrame, metric_ref: &DepthFrame, domain: &[usize]) -> Result<ScaleShift> {
    let (xs, ys) = domain_values(relative, metric_ref, domain)?;
    solve_affine(&xs, &ys)
}

/// Fit, drop the worst `trim_fraction` of pixels by absolute residual, refit once.
pub fn fit_scale_shift_trimmed(
    relative: &DepthFrame,
    metric_ref: &DepthFrame,
    domain: &[usize],
    trim_fraction: f64,
) -> Result<ScaleShift> {
    let (xs, ys) = domain_values(relative, metric_ref, domain)?;
    let first = solve_affine(&xs, &ys)?;
    let drop = ((xs.len() as f64) * trim_fraction.clamp(0.0, 0.5)).floor() as usize;
    if drop == 0 {
        return Ok(first);
    }
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| {
        let ra = (first.apply(xs[a]) - ys[a]).abs();
        let rb = (first.apply(xs[b]) - ys[b]).abs();
        ra.total_cmp(&rb).then(a.cmp(&b))
    });
    order.truncate(xs.len() - drop);
    order.sort_unstable();
    let kx: Vec<f64> = order.iter().map(|&i| xs[i]).collect();
    let ky: Vec<f64> = order.iter().map(|&i| ys[i]).collect();
    solve_affine(&kx, &ky)
}

/// Sum of squared alignment residuals over `domain` (m²).
pub fn alignment_residual(
    relative: &DepthFrame,
    metric_ref: &DepthFrame,
    params: &ScaleShift,
    domain: &[usize],
) -> Result<f64> {
    let (xs, ys) = domain_values(relative, metric_ref, domain)?;
    Ok(xs.iter().zip(&ys).map(|(x, y)| (params.apply(*x) - y).powi(2)).sum())
}

/// Root-mean-square alignment residual over the jointly valid pixels (m).
///
/// Used as a drift diagnostic when later frames have a metric reference too.
pub fn alignment_rms(relative: &DepthFrame, metric_ref: &DepthFrame, params: &ScaleShift) -> Result<f64> {
    let domain = joint_valid_domain(relative, metric_ref, 1)?;
    if domain.is_empty() {
        return Err(DepthError::InsufficientOverlap(0));
    }
    Ok((alignment_residual(relative, metric_ref, params, &domain)? / domain.len() as f64).sqrt())
}

/// Applies `(s, d)` to every valid pixel; results `<= 0` become invalid.
pub fn apply_scale_shift(frames: &[DepthFrame], params: &ScaleShift) -> Vec<DepthFrame> {
    frames
        .iter()
        .map(|f| {
            let mut out = f.clone();
            for (v, ok) in out.values.iter_mut().zip(out.valid.iter_mut()) {
                if *ok {
                    *v = params.apply(*v);
                    *ok = v.is_finite() && *v > 0.0;
                }
            }
            out
        })
        .collect()
}

/// Upgrades relative camera poses to metric scale anchored at `anchor_gt`.
///
/// Translations are scaled by `s`; the single rigid correction that moves the
/// scaled frame-0 pose onto `anchor_gt` is then left-multiplied onto every pose.
pub fn metricize_poses(rel: &PoseSequence, scale: &ScaleShift, anchor_gt: &RigidTransform) -> Result<PoseSequence> {
    let first = rel.poses.first().ok_or(DepthError::EmptySequence)?;
    let scaled = |p: &RigidTransform| RigidTransform::new(p.rotation, p.translation * scale.s);
    let correction = anchor_gt.compose(&scaled(first).inverse());
    let poses = rel.poses.iter().map(|p| correction.compose(&scaled(p))).collect();
    Ok(PoseSequence { poses, frame_times: rel.frame_times.clone() })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;
    use proptest::prelude::*;

    fn row(values: &[f64]) -> DepthFrame {
        DepthFrame::new(values.len(), 1, values.to_vec()).unwrap()
    }

    fn all(f: &DepthFrame) -> Vec<usize> {
        (0..f.values().len()).collect()
    }

    #[test]
    fn fit_by_hand() {
        // Normal equations: mean x = 2, mean y = 4.5, sxy = 4, sxx = 2.
        let rel = row(&[1.0, 2.0, 3.0]);
        let reference = row(&[2.5, 4.5, 6.5]);
        let fit = fit_scale_shift(&rel, &reference, &all(&rel)).unwrap();
        assert!((fit.s - 2.0).abs() < 1e-12 && (fit.d - 0.5).abs() < 1e-12);
        assert!(alignment_residual(&rel, &reference, &fit, &all(&rel)).unwrap() < 1e-24);
    }

    #[test]
    fn self_fit_is_identity() {
        let f = DepthFrame::new(3, 2, vec![0.4, 1.0, 2.2, 3.1, 0.9, 1.7]).unwrap();
        let fit = fit_scale_shift(&f, &f, &all(&f)).unwrap();
        assert!((fit.s - 1.0).abs() < 1e-12 && fit.d.abs() < 1e-12);
    }

    #[test]
    fn fit_errors() {
        let flat = row(&[3.0, 3.0]);
        let rel = row(&[1.0, 2.0]);
        assert!(matches!(
            fit_scale_shift(&rel, &flat, &[0, 1]),
            Err(DepthError::NonPositiveScale(_)) | Err(DepthError::DegenerateDepth)
        ));
        assert_eq!(fit_scale_shift(&flat, &rel, &[0, 1]), Err(DepthError::DegenerateDepth));
        assert_eq!(fit_scale_shift(&rel, &rel, &[0]), Err(DepthError::InsufficientOverlap(1)));
        let reversed = row(&[2.0, 1.0]);
        assert!(matches!(fit_scale_shift(&rel, &reversed, &[0, 1]), Err(DepthError::NonPositiveScale(_))));
        let holes = row(&[1.0, 0.0]);
        assert_eq!(fit_scale_shift(&holes, &rel, &[0, 1]), Err(DepthError::InvalidDomain(1)));
    }

    #[test]
    fn domain_uses_joint_validity_and_stride() {
        let a = DepthFrame::new(4, 2, vec![1.0, 0.0, 1.0, 1.0, 1.0, 1.0, 1.0, -1.0]).unwrap();
        let b = DepthFrame::new(4, 2, vec![1.0; 8]).unwrap();
        assert_eq!(joint_valid_domain(&a, &b, 1).unwrap(), vec![0, 2, 3, 4, 5, 6]);
        assert_eq!(joint_valid_domain(&a, &b, 2).unwrap(), vec![0, 2]);
    }

    #[test]
    fn trimmed_fit_drops_outliers() {
        let xs: Vec<f64> = (1..=20).map(|i| i as f64 * 0.1).collect();
        let mut ys: Vec<f64> = xs.iter().map(|x| 3.0 * x + 0.2).collect();
        ys[7] += 5.0;
        ys[13] -= 4.0;
        let rel = row(&xs);
        let reference = DepthFrame::new(20, 1, ys).unwrap();
        let plain = fit_scale_shift(&rel, &reference, &all(&rel)).unwrap();
        let robust = fit_scale_shift_trimmed(&rel, &reference, &all(&rel), 0.1).unwrap();
        assert!((plain.s - 3.0).abs() > 1e-3);
        assert!((robust.s - 3.0).abs() < 1e-12 && (robust.d - 0.2).abs() < 1e-12);
    }

    #[test]
    fn apply_examples() {
        let f = row(&[1.0, 2.0, 3.0]);
        assert_eq!(apply_scale_shift(std::slice::from_ref(&f), &ScaleShift::identity())[0], f);
        let out = apply_scale_shift(&[f], &ScaleShift::new(2.0, 0.5).unwrap());
        assert_eq!(out[0].values(), &[2.5, 4.5, 6.5]);
        let guard = apply_scale_shift(&[row(&[2.0])], &ScaleShift::new(0.1, -1.0).unwrap());
        assert_eq!(guard[0].valid(), &[false]);
    }

    #[test]
    fn metricize_examples() {
        let id = RigidTransform::identity();
        let one = PoseSequence::uniform(vec![id], 10.0).unwrap();
        let out = metricize_poses(&one, &ScaleShift::identity(), &id).unwrap();
        assert_eq!(out.poses()[0], id);

        let seq = PoseSequence::uniform(vec![id, RigidTransform::from_translation(Vec3::new(0.0, 0.0, 1.0))], 10.0).unwrap();
        let out = metricize_poses(&seq, &ScaleShift::new(2.0, 0.0).unwrap(), &id).unwrap();
        assert!((out.poses()[1].translation - Vec3::new(0.0, 0.0, 2.0)).norm() < 1e-15);

        let rz = RigidTransform::from_rotation(Rotation::rz(30f64.to_radians()));
        let rx = RigidTransform::from_rotation(Rotation::rx(10f64.to_radians()));
        let seq = PoseSequence::uniform(vec![id, rz], 10.0).unwrap();
        let out = metricize_poses(&seq, &ScaleShift::identity(), &rx).unwrap();
        let expected = rx.compose(&rz);
        assert!(out.poses()[0].rotation.angle_to(&rx.rotation) < 1e-12);
        assert!(out.poses()[1].rotation.angle_to(&expected.rotation) < 1e-12);

        let empty = PoseSequence::new(vec![], vec![]).unwrap();
        assert_eq!(metricize_poses(&empty, &ScaleShift::identity(), &id), Err(DepthError::EmptySequence));
    }

    #[test]
    fn pose_sequence_rejects_non_monotone_times() {
        let id = RigidTransform::identity();
        assert!(PoseSequence::new(vec![id, id], vec![0.0, 0.0]).is_err());
        assert!(PoseSequence::new(vec![id], vec![0.0, 1.0]).is_err());
    }

    #[test]
    fn pinhole_examples() {
        let k = CameraIntrinsics::new(500.0, 500.0, 320.0, 240.0).unwrap();
        assert_eq!(k.backproject(320.0, 240.0, 2.0), Vec3::new(0.0, 0.0, 2.0));
        assert_eq!(k.backproject(820.0, 240.0, 1.0), Vec3::new(1.0, 0.0, 1.0));
        assert!(k.validate_for(640, 480).is_ok());
        assert!(k.validate_for(100, 100).is_err());
        assert!(CameraIntrinsics::new(0.0, 1.0, 0.0, 0.0).is_err());
    }

    proptest! {
        #[test]
        fn affine_exactness(s in 0.05..20.0f64, d in -2.0..2.0f64,
                            xs in prop::collection::vec(0.2..5.0f64, 3..40)) {
            let spread = xs.iter().cloned().fold(f64::MIN, f64::max) - xs.iter().cloned().fold(f64::MAX, f64::min);
            prop_assume!(spread > 0.1);
            let ys: Vec<f64> = xs.iter().map(|x| s * x + d).collect();
            prop_assume!(ys.iter().all(|y| *y > 0.0));
            let rel = row(&xs);
            let reference = row(&ys);
            let fit = fit_scale_shift(&rel, &reference, &all(&rel)).unwrap();
            prop_assert!((fit.s - s).abs() < 1e-9 * s.max(1.0));
            prop_assert!((fit.d - d).abs() < 1e-9 * s.max(1.0));
        }

        #[test]
        fn metricize_preserves_relative_motion(
            s in 0.1..10.0f64,
            a in prop::array::uniform3(-1.0..1.0f64), b in prop::array::uniform3(-1.0..1.0f64),
            ra in -3.0..3.0f64, rb in -3.0..3.0f64, anchor_t in prop::array::uniform3(-1.0..1.0f64),
        ) {
            let pa = RigidTransform::new(Rotation::rx(ra), Vec3::from(a));
            let pb = RigidTransform::new(Rotation::ry(rb) * Rotation::rz(ra), Vec3::from(b));
            let anchor = RigidTransform::new(Rotation::rz(rb), Vec3::from(anchor_t));
            let seq = PoseSequence::uniform(vec![pa, pb], 30.0).unwrap();
            let out = metricize_poses(&seq, &ScaleShift::new(s, 0.0).unwrap(), &anchor).unwrap();
            let p = out.poses();
            prop_assert!(p[0].rotation.angle_to(&anchor.rotation) < 1e-9);
            prop_assert!((p[0].translation - anchor.translation).norm() < 1e-9);
            let rel_in = pa.inverse().compose(&pb);
            let rel_out = p[0].inverse().compose(&p[1]);
            prop_assert!(rel_in.rotation.angle_to(&rel_out.rotation) < 1e-9);
            prop_assert!((rel_in.translation * s - rel_out.translation).norm() < 1e-9);
        }
    }
}

//! Rigid-body primitives and the weighted Procrustes (Kabsch) solver.
//!
//! Rotations are stored as 3x3 matrices; quaternions `[w, x, y, z]` are only
//! used for serialization and interpolation, always with `w >= 0`.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A point or direction in 3D, meters unless stated otherwise.
pub type Vec3 = Vector3<f64>;

/// Tolerance used to validate orthonormality and determinant of rotations.
pub const ROTATION_TOLERANCE: f64 = 1e-9;

/// Singular-value ratio below which a point configuration counts as collinear.
pub const COLLINEAR_RATIO: f64 = 1e-8;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("degenerate point configuration: {0}")]
    DegenerateConfiguration(String),
    #[error("length mismatch: source has {source_len} points, target has {target_len}")]
    LengthMismatch { source_len: usize, target_len: usize },
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub type Result<T, E = GeometryError> = std::result::Result<T, E>;

/// An element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rotation(Matrix3<f64>);

impl Default for Rotation {
    fn default() -> Self {
        Self::identity()
    }
}

impl Rotation {
    pub fn identity() -> Self {
        Self(Matrix3::identity())
    }

    /// Validates `RᵀR = I` and `det R = +1` within [`ROTATION_TOLERANCE`].
    pub fn from_matrix(m: Matrix3<f64>) -> Result<Self> {
        if m.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidInput("non-finite rotation entry".into()));
        }
        let ortho = (m.transpose() * m - Matrix3::identity()).abs().max();
        if ortho > ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidInput(format!(
                "matrix is not orthonormal (max deviation {ortho:e})"
            )));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ROTATION_TOLERANCE {
            return Err(GeometryError::InvalidInput(format!(
                "rotation determinant is {det}, expected +1"
            )));
        }
        Ok(Self(m))
    }

    pub(crate) fn from_matrix_unchecked(m: Matrix3<f64>) -> Self {
        Self(m)
    }

    /// Builds a rotation from a quaternion `[w, x, y, z]`; the input is normalized.
    pub fn from_quaternion(q: [f64; 4]) -> Result<Self> {
        let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if !norm.is_finite() || norm < 1e-12 {
            return Err(GeometryError::InvalidInput(format!("quaternion norm {norm} unusable")));
        }
        let [w, x, y, z] = q.map(|v| v / norm);
        let (xx, yy, zz) = (x * x, y * y, z * z);
        let (xy, xz, yz) = (x * y, x * z, y * z);
        let (wx, wy, wz) = (w * x, w * y, w * z);
        Ok(Self(Matrix3::new(
            1.0 - 2.0 * (yy + zz),
            2.0 * (xy - wz),
            2.0 * (xz + wy),
            2.0 * (xy + wz),
            1.0 - 2.0 * (xx + zz),
            2.0 * (yz - wx),
            2.0 * (xz - wy),
            2.0 * (yz + wx),
            1.0 - 2.0 * (xx + yy),
        )))
    }

    /// Unit quaternion `[w, x, y, z]` in canonical sign (`w >= 0`; when `w == 0`
    /// the first non-zero vector component is positive).
    pub fn to_quaternion(&self) -> [f64; 4] {
        let m = &self.0;
        let trace = m[(0, 0)] + m[(1, 1)] + m[(2, 2)];
        let q = if trace > 0.0 {
            let s = (trace + 1.0).sqrt() * 2.0;
            [
                0.25 * s,
                (m[(2, 1)] - m[(1, 2)]) / s,
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(1, 0)] - m[(0, 1)]) / s,
            ]
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            [
                (m[(2, 1)] - m[(1, 2)]) / s,
                0.25 * s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
            ]
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            [
                (m[(0, 2)] - m[(2, 0)]) / s,
                (m[(0, 1)] + m[(1, 0)]) / s,
                0.25 * s,
                (m[(1, 2)] + m[(2, 1)]) / s,
            ]
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            [
                (m[(1, 0)] - m[(0, 1)]) / s,
                (m[(0, 2)] + m[(2, 0)]) / s,
                (m[(1, 2)] + m[(2, 1)]) / s,
                0.25 * s,
            ]
        };
        canonical_quaternion(q)
    }

    /// Rotation of `angle` radians about `axis` (Rodrigues).
    pub fn from_axis_angle(axis: &Vec3, angle: f64) -> Result<Self> {
        let n = axis.norm();
        if !n.is_finite() || n < 1e-12 {
            return Err(GeometryError::InvalidInput("rotation axis has zero length".into()));
        }
        Ok(Self::exp(&(axis * (angle / n))))
    }

    pub fn rx(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn ry(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn rz(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    /// Exponential map from a rotation vector (axis times angle).
    pub fn exp(omega: &Vec3) -> Self {
        let theta = omega.norm();
        let w = skew(omega);
        let (a, b) = if theta < 1e-6 {
            let t2 = theta * theta;
            (1.0 - t2 / 6.0, 0.5 - t2 / 24.0)
        } else {
            (theta.sin() / theta, (1.0 - theta.cos()) / (theta * theta))
        };
        Self(Matrix3::identity() + w * a + w * w * b)
    }

    /// Logarithm map: rotation vector with angle in `[0, π]`.
    pub fn log(&self) -> Vec3 {
        let [w, x, y, z] = self.to_quaternion();
        let v = Vec3::new(x, y, z);
        let vn = v.norm();
        if vn < 1e-12 {
            return v * 2.0 / w.max(f64::MIN_POSITIVE);
        }
        let angle = 2.0 * vn.atan2(w);
        v * (angle / vn)
    }

    /// Geodesic angle to the identity, radians in `[0, π]`.
    pub fn angle(&self) -> f64 {
        let [w, x, y, z] = self.to_quaternion();
        2.0 * (x * x + y * y + z * z).sqrt().atan2(w)
    }

    /// Geodesic angle between two rotations, radians.
    pub fn angle_to(&self, other: &Rotation) -> f64 {
        (self.inverse() * *other).angle()
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.0
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn apply(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Projects back onto SO(3) after accumulated round-off.
    pub fn renormalized(&self) -> Self {
        Self::from_quaternion(self.to_quaternion()).unwrap_or_else(|_| Self::identity())
    }
}

impl std::ops::Mul for Rotation {
    type Output = Rotation;

    fn mul(self, rhs: Rotation) -> Rotation {
        Rotation(self.0 * rhs.0)
    }
}

pub(crate) fn canonical_quaternion(q: [f64; 4]) -> [f64; 4] {
    let norm = q.iter().map(|v| v * v).sum::<f64>().sqrt();
    let q = q.map(|v| v / norm);
    let flip = match q.iter().find(|v| **v != 0.0) {
        Some(first) => *first < 0.0,
        None => false,
    };
    if flip {
        q.map(|v| -v)
    } else {
        q
    }
}

pub(crate) fn skew(v: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// An element of SE(3): `x ↦ R·x + t`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RigidTransform {
    pub rotation: Rotation,
    pub translation: Vec3,
}

impl RigidTransform {
    pub fn new(rotation: Rotation, translation: Vec3) -> Self {
        Self { rotation, translation }
    }

    pub fn identity() -> Self {
        Self::new(Rotation::identity(), Vec3::zeros())
    }

    pub fn from_translation(t: Vec3) -> Self {
        Self::new(Rotation::identity(), t)
    }

    pub fn from_rotation(r: Rotation) -> Self {
        Self::new(r, Vec3::zeros())
    }

    /// `self ∘ other`: applies `other` first.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        RigidTransform {
            rotation: self.rotation * other.rotation,
            translation: self.rotation.apply(&other.translation) + self.translation,
        }
    }

    pub fn inverse(&self) -> RigidTransform {
        let r = self.rotation.inverse();
        RigidTransform { rotation: r, translation: -r.apply(&self.translation) }
    }

    pub fn apply(&self, p: &Vec3) -> Vec3 {
        self.rotation.apply(p) + self.translation
    }

    pub fn rotation_angle(&self) -> f64 {
        self.rotation.angle()
    }

    pub fn translation_norm(&self) -> f64 {
        self.translation.norm()
    }

    /// Twist coordinates `(ω, u)` such that `exp(ω, u) = self`.
    pub fn log(&self) -> (Vec3, Vec3) {
        let omega = self.rotation.log();
        let theta = omega.norm();
        let w = skew(&omega);
        let c = if theta < 1e-6 {
            1.0 / 12.0 + theta * theta / 720.0
        } else {
            let half = 0.5 * theta;
            (1.0 - half * half.cos() / half.sin()) / (theta * theta)
        };
        let v_inv = Matrix3::identity() - w * 0.5 + w * w * c;
        (omega, v_inv * self.translation)
    }

    pub fn exp(omega: &Vec3, u: &Vec3) -> RigidTransform {
        let theta = omega.norm();
        let w = skew(omega);
        let (b, c) = if theta < 1e-6 {
            let t2 = theta * theta;
            (0.5 - t2 / 24.0, 1.0 / 6.0 - t2 / 120.0)
        } else {
            let t2 = theta * theta;
            ((1.0 - theta.cos()) / t2, (theta - theta.sin()) / (t2 * theta))
        };
        let v = Matrix3::identity() + w * b + w * w * c;
        RigidTransform { rotation: Rotation::exp(omega), translation: v * u }
    }

    /// Screw-motion fraction: `self.powf(1/n)` composed `n` times gives `self`.
    pub fn powf(&self, f: f64) -> RigidTransform {
        let (omega, u) = self.log();
        RigidTransform::exp(&(omega * f), &(u * f))
    }

    /// Quaternion/translation view used by every on-disk format.
    pub fn to_json(&self) -> TransformJson {
        TransformJson {
            q: self.rotation.to_quaternion(),
            t: [self.translation.x, self.translation.y, self.translation.z],
        }
    }

    pub fn from_json(j: &TransformJson) -> Result<Self> {
        if j.t.iter().any(|v| !v.is_finite()) {
            return Err(GeometryError::InvalidInput("non-finite translation".into()));
        }
        Ok(Self::new(Rotation::from_quaternion(j.q)?, Vec3::from(j.t)))
    }
}

/// Serialized rigid transform: `{"q":[w,x,y,z],"t":[x,y,z]}` with `w >= 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TransformJson {
    pub q: [f64; 4],
    pub t: [f64; 3],
}

impl Serialize for RigidTransform {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_json().serialize(s)
    }
}

impl<'de> Deserialize<'de> for RigidTransform {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let j = TransformJson::deserialize(d)?;
        RigidTransform::from_json(&j).map_err(serde::de::Error::custom)
    }
}

/// Ordered points with optional non-negative weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PointSet {
    points: Vec<Vec3>,
    weights: Option<Vec<f64>>,
}

impl PointSet {
    pub fn new(points: Vec<Vec3>) -> Result<Self> {
        if points.is_empty() {
            return Err(GeometryError::InvalidInput("point set is empty".into()));
        }
        if points.iter().any(|p| p.iter().any(|v| !v.is_finite())) {
            return Err(GeometryError::InvalidInput("non-finite point coordinate".into()));
        }
        Ok(Self { points, weights: None })
    }

    pub fn with_weights(points: Vec<Vec3>, weights: Vec<f64>) -> Result<Self> {
        let mut set = Self::new(points)?;
        if weights.len() != set.points.len() {
            return Err(GeometryError::InvalidInput(format!(
                "{} weights for {} points",
                weights.len(),
                set.points.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(GeometryError::InvalidInput("weights must be finite and >= 0".into()));
        }
        if weights.iter().sum::<f64>() <= 0.0 {
            return Err(GeometryError::InvalidInput("weights sum to zero".into()));
        }
        set.weights = Some(weights);
        Ok(set)
    }

    pub fn points(&self) -> &[Vec3] {
        &self.points
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn weight(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    /// Applies `t` to every point, keeping weights.
    pub fn transformed(&self, t: &RigidTransform) -> PointSet {
        PointSet {
            points: self.points.iter().map(|p| t.apply(p)).collect(),
            weights: self.weights.clone(),
        }
    }
}

/// Pairwise weights: product of both sets' weights (unit where absent).
fn pair_weights(source: &PointSet, target: &PointSet) -> Result<Vec<f64>> {
    if source.len() != target.len() {
        return Err(GeometryError::LengthMismatch {
            source_len: source.len(),
            target_len: target.len(),
        });
    }
    Ok((0..source.len()).map(|i| source.weight(i) * target.weight(i)).collect())
}

fn weighted_centroid(points: &[Vec3], weights: &[f64], total: f64) -> Vec3 {
    points
        .iter()
        .zip(weights)
        .fold(Vec3::zeros(), |acc, (p, w)| acc + p * *w)
        / total
}

/// Closed-form rigid fit minimizing `Σ wᵢ ‖R·sᵢ + p − tᵢ‖²`.
///
/// Reflections are corrected by flipping the axis of the smallest singular
/// value, so the result always has `det R = +1`. Configurations whose source
/// covariance has `σ₂/σ₁ <` [`COLLINEAR_RATIO`] leave the rotation
/// underdetermined and are rejected.
pub fn kabsch_align(source: &PointSet, target: &PointSet) -> Result<RigidTransform> {
    let weights = pair_weights(source, target)?;
    let active = weights.iter().filter(|w| **w > 0.0).count();
    if active < 3 {
        return Err(GeometryError::DegenerateConfiguration(format!(
            "{active} weighted points, need at least 3"
        )));
    }
    let total: f64 = weights.iter().sum();
    let cs = weighted_centroid(source.points(), &weights, total);
    let ct = weighted_centroid(target.points(), &weights, total);

    let mut cov = Matrix3::zeros();
    let mut cross = Matrix3::zeros();
    for ((s, t), w) in source.points().iter().zip(target.points()).zip(&weights) {
        let ds = s - cs;
        let dt = t - ct;
        cov += ds * ds.transpose() * *w;
        cross += ds * dt.transpose() * *w;
    }

    let mut spread = cov.singular_values().as_slice().to_vec();
    spread.sort_by(|a, b| b.total_cmp(a));
    if !(spread[0] > 0.0) || spread[1] / spread[0] < COLLINEAR_RATIO {
        return Err(GeometryError::DegenerateConfiguration(format!(
            "source points are collinear or coincident (σ₂/σ₁ = {:e})",
            if spread[0] > 0.0 { spread[1] / spread[0] } else { 0.0 }
        )));
    }

    let svd = cross.svd(true, true);
    let (Some(u), Some(v_t)) = (svd.u, svd.v_t) else {
        return Err(GeometryError::DegenerateConfiguration("SVD did not converge".into()));
    };
    let v = v_t.transpose();
    let mut d = Matrix3::identity();
    if (v * u.transpose()).determinant() < 0.0 {
        let smallest = svd
            .singular_values
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(i, _)| i)
            .unwrap_or(2);
        d[(smallest, smallest)] = -1.0;
    }
    let rotation = Rotation::from_matrix_unchecked(v * d * u.transpose());
    let translation = ct - rotation.apply(&cs);
    Ok(RigidTransform::new(rotation, translation))
}

/// Weighted sum of squared distances `Σ wᵢ ‖T·sᵢ − tᵢ‖²` (m²).
pub fn residual(transform: &RigidTransform, source: &PointSet, target: &PointSet) -> Result<f64> {
    let weights = pair_weights(source, target)?;
    Ok(source
        .points()
        .iter()
        .zip(target.points())
        .zip(&weights)
        .map(|((s, t), w)| w * (transform.apply(s) - t).norm_squared())
        .sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::PI;

    fn set(pts: &[[f64; 3]]) -> PointSet {
        PointSet::new(pts.iter().map(|p| Vec3::from(*p)).collect()).unwrap()
    }

    fn assert_transform_close(a: &RigidTransform, b: &RigidTransform, tol: f64) {
        assert!(a.rotation.angle_to(&b.rotation) < tol, "rotation {a:?} vs {b:?}");
        assert!((a.translation - b.translation).norm() < tol, "translation {a:?} vs {b:?}");
    }

    #[test]
    fn compose_with_identity_and_inverse() {
        let t = RigidTransform::new(Rotation::rx(0.3) * Rotation::rz(-1.1), Vec3::new(0.2, -3.0, 1.5));
        assert_transform_close(&RigidTransform::identity().compose(&t), &t, 1e-15);
        assert_transform_close(&t.compose(&t.inverse()), &RigidTransform::identity(), 1e-12);
    }

    #[test]
    fn compose_quarter_turns_by_hand() {
        // [Rz90 | (1,0,0)] · [Rz90 | 0] = [Rz180 | (1,0,0)]
        let a = RigidTransform::new(Rotation::rz(PI / 2.0), Vec3::new(1.0, 0.0, 0.0));
        let b = RigidTransform::from_rotation(Rotation::rz(PI / 2.0));
        let c = a.compose(&b);
        let expected = Matrix3::new(-1.0, 0.0, 0.0, 0.0, -1.0, 0.0, 0.0, 0.0, 1.0);
        assert!((c.rotation.matrix() - expected).abs().max() < 1e-15);
        assert!((c.translation - Vec3::new(1.0, 0.0, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn kabsch_identity_case() {
        let s = set(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let t = kabsch_align(&s, &s).unwrap();
        assert_transform_close(&t, &RigidTransform::identity(), 1e-12);
        assert!(residual(&t, &s, &s).unwrap() < 1e-24);
    }

    #[test]
    fn kabsch_quarter_turn_about_z() {
        let s = set(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);
        let t = set(&[[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0], [0.0, 0.0, 1.0]]);
        let fit = kabsch_align(&s, &t).unwrap();
        // Of the 24 axis-aligned rotations only Rz(+90°) maps s onto t.
        let expected = Matrix3::new(0.0, -1.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0);
        assert!((fit.rotation.matrix() - expected).abs().max() < 1e-12);
        assert!(fit.translation.norm() < 1e-12);
    }

    #[test]
    fn kabsch_recovers_generating_transform() {
        let pts: Vec<Vec3> = (0..10)
            .map(|i| {
                let f = i as f64;
                Vec3::new((f * 1.7).sin(), (f * 0.9).cos() * 2.0, (f * 0.37).sin() - 0.5 * f / 10.0)
            })
            .collect();
        let truth = RigidTransform::new(Rotation::rz(37f64.to_radians()), Vec3::new(0.1, -0.2, 0.3));
        let s = PointSet::new(pts).unwrap();
        let t = s.transformed(&truth);
        let fit = kabsch_align(&s, &t).unwrap();
        assert_transform_close(&fit, &truth, 1e-12);
        assert!(residual(&fit, &s, &t).unwrap() < 1e-12);
    }

    #[test]
    fn kabsch_rejects_degenerate_inputs() {
        let two = set(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0]]);
        assert!(matches!(kabsch_align(&two, &two), Err(GeometryError::DegenerateConfiguration(_))));
        let line = set(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [3.0, 0.0, 0.0]]);
        assert!(matches!(kabsch_align(&line, &line), Err(GeometryError::DegenerateConfiguration(_))));
        let three = set(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        assert!(matches!(
            kabsch_align(&three, &two),
            Err(GeometryError::LengthMismatch { source_len: 3, target_len: 2 })
        ));
    }

    #[test]
    fn kabsch_never_returns_reflection() {
        // Target is a mirror image of the source: the unconstrained solution reflects.
        let s = set(&[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [1.0, 1.0, 1.0]]);
        let t = set(&[[-1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0], [-1.0, 1.0, 1.0]]);
        let fit = kabsch_align(&s, &t).unwrap();
        assert!((fit.rotation.matrix().determinant() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn weighted_fit_ignores_zero_weight_outlier() {
        let pts = vec![
            Vec3::new(0.0, 0.0, 0.0),
            Vec3::new(1.0, 0.0, 0.0),
            Vec3::new(0.0, 1.0, 0.0),
            Vec3::new(0.0, 0.0, 1.0),
        ];
        let truth = RigidTransform::new(Rotation::ry(0.4), Vec3::new(0.0, 0.5, 0.0));
        let mut moved: Vec<Vec3> = pts.iter().map(|p| truth.apply(p)).collect();
        moved[3] += Vec3::new(5.0, 5.0, 5.0);
        let s = PointSet::with_weights(pts, vec![1.0, 1.0, 1.0, 0.0]).unwrap();
        let t = PointSet::new(moved).unwrap();
        assert_transform_close(&kabsch_align(&s, &t).unwrap(), &truth, 1e-12);
    }

    #[test]
    fn residual_examples() {
        let s = set(&[[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.0, 0.0]]);
        let t = set(&[[1.0, 0.0, 0.0], [2.0, 0.0, 0.0], [1.0, 1.0, 0.0]]);
        let id = RigidTransform::identity();
        assert_eq!(residual(&id, &s, &s).unwrap(), 0.0);
        assert_eq!(residual(&id, &s, &t).unwrap(), 3.0);
        let short = set(&[[0.0, 0.0, 0.0]]);
        assert!(matches!(residual(&id, &s, &short), Err(GeometryError::LengthMismatch { .. })));
    }

    #[test]
    fn quaternion_canonical_sign() {
        let q = Rotation::rz(1.5 * PI).to_quaternion();
        assert!(q[0] >= 0.0);
        let half_turn = Rotation::rx(PI).to_quaternion();
        assert!(half_turn[0].abs() < 1e-15 && half_turn[1] > 0.0);
    }

    #[test]
    fn from_matrix_rejects_reflection() {
        let m = Matrix3::new(-1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0);
        assert!(Rotation::from_matrix(m).is_err());
        assert!(Rotation::from_matrix(*Rotation::rx(0.2).matrix()).is_ok());
    }

    #[test]
    fn powf_splits_screw_motion() {
        let g = RigidTransform::new(Rotation::from_axis_angle(&Vec3::new(1.0, 2.0, -0.5), 0.9).unwrap(), Vec3::new(0.3, -0.1, 0.05));
        let third = g.powf(1.0 / 3.0);
        let back = third.compose(&third).compose(&third);
        assert_transform_close(&back, &g, 1e-12);
        assert_transform_close(&g.powf(0.0), &RigidTransform::identity(), 1e-15);
    }

    #[test]
    fn json_shape() {
        let t = RigidTransform::new(Rotation::rz(PI), Vec3::new(1.0, 2.0, 3.0));
        let s = serde_json::to_string(&t).unwrap();
        assert!(s.starts_with("{\"q\":[") && s.contains("\"t\":[1.0,2.0,3.0]"));
        let back: RigidTransform = serde_json::from_str(&s).unwrap();
        assert_transform_close(&back, &t, 1e-15);
    }

    fn arb_rotation() -> impl Strategy<Value = Rotation> {
        (-1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64, -1.0..1.0f64)
            .prop_filter("non-zero", |(w, x, y, z)| w * w + x * x + y * y + z * z > 1e-3)
            .prop_map(|(w, x, y, z)| Rotation::from_quaternion([w, x, y, z]).unwrap())
    }

    fn arb_transform() -> impl Strategy<Value = RigidTransform> {
        (arb_rotation(), prop::array::uniform3(-2.0..2.0f64))
            .prop_map(|(r, t)| RigidTransform::new(r, Vec3::from(t)))
    }

    fn arb_points() -> impl Strategy<Value = Vec<Vec3>> {
        prop::collection::vec(prop::array::uniform3(-1.0..1.0f64), 4..12)
            .prop_map(|v| v.into_iter().map(Vec3::from).collect())
    }

    proptest! {
        #[test]
        fn rotation_roundtrip(r in arb_rotation()) {
            let back = Rotation::from_quaternion(r.to_quaternion()).unwrap();
            prop_assert!((back.matrix() - r.matrix()).abs().max() < 1e-12);
            let q = r.to_quaternion();
            prop_assert!(q[0] >= 0.0);
            prop_assert!((q.iter().map(|v| v * v).sum::<f64>() - 1.0).abs() < 1e-12);
        }

        #[test]
        fn composition_is_associative(a in arb_transform(), b in arb_transform(), c in arb_transform(),
                                      p in prop::array::uniform3(-1.0..1.0f64)) {
            let p = Vec3::from(p);
            let left = a.compose(&b).compose(&c);
            let right = a.compose(&b.compose(&c));
            prop_assert!((left.apply(&p) - right.apply(&p)).norm() < 1e-12);
            prop_assert!((a.compose(&b).apply(&p) - a.apply(&b.apply(&p))).norm() < 1e-12);
            prop_assert!(a.compose(&a.inverse()).translation.norm() < 1e-9);
        }

        #[test]
        fn kabsch_equivariance(pts in arb_points(), g in arb_transform(), q in arb_transform()) {
            let s = PointSet::new(pts).unwrap();
            let t = s.transformed(&g);
            let Ok(base) = kabsch_align(&s, &t) else { return Ok(()); };
            let moved = kabsch_align(&s.transformed(&q), &t.transformed(&q)).unwrap();
            let expected = q.compose(&base).compose(&q.inverse());
            prop_assert!(moved.rotation.angle_to(&expected.rotation) < 1e-9);
            prop_assert!((moved.translation - expected.translation).norm() < 1e-9);
        }

        #[test]
        fn kabsch_is_proper_rotation(src in arb_points(), dst in arb_points()) {
            let n = src.len().min(dst.len());
            let s = PointSet::new(src[..n].to_vec()).unwrap();
            let t = PointSet::new(dst[..n].to_vec()).unwrap();
            if let Ok(fit) = kabsch_align(&s, &t) {
                let m = fit.rotation.matrix();
                prop_assert!((m.determinant() - 1.0).abs() < 1e-9);
                prop_assert!((m.transpose() * m - Matrix3::identity()).abs().max() < 1e-9);
            }
        }
    }
}

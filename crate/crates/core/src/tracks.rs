//! Point tracks: lifting into the world frame, tool masking, and rigidity-based
//! top-K selection.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth::{CameraIntrinsics, DepthFrame, PoseSequence};
use crate::geometry::{kabsch_align, PointSet, RigidTransform, Vec3};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrackError {
    #[error("frame count mismatch: {0}")]
    FrameCountMismatch(String),
    #[error("camera intrinsics are required to lift pixel tracks")]
    IntrinsicsMissing,
    #[error("track {track_id} frame {frame}: pixel ({u}, {v}) outside the {width}x{height} image")]
    PixelOutOfBounds { track_id: u64, frame: usize, u: f64, v: f64, width: usize, height: usize },
    #[error("too few tracks: need {needed}, have {available}")]
    TooFewTracks { needed: usize, available: usize },
    #[error("too few visible frames: {0}")]
    TooFewVisibleFrames(String),
    #[error("invalid filter configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid track: {0}")]
    InvalidTrack(String),
}

pub type Result<T, E = TrackError> = std::result::Result<T, E>;

/// Binary tool segmentation for one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct ToolMask {
    pub width: usize,
    pub height: usize,
    pub frame: usize,
    tool: Vec<bool>,
}

impl ToolMask {
    pub fn new(width: usize, height: usize, frame: usize, tool: Vec<bool>) -> Result<Self> {
        if tool.len() != width * height {
            return Err(TrackError::InvalidTrack(format!(
                "mask {width}x{height} with {} entries",
                tool.len()
            )));
        }
        Ok(Self { width, height, frame, tool })
    }

    pub fn filled(width: usize, height: usize, frame: usize, value: bool) -> Self {
        Self { width, height, frame, tool: vec![value; width * height] }
    }

    pub fn tool(&self) -> &[bool] {
        &self.tool
    }

    /// Membership of the pixel nearest to `(u, v)`; outside the image is `false`.
    pub fn contains(&self, u: f64, v: f64) -> bool {
        nearest_pixel(u, v, self.width, self.height).is_some_and(|(c, r)| self.tool[r * self.width + c])
    }

    pub fn count(&self) -> usize {
        self.tool.iter().filter(|t| **t).count()
    }
}

/// Integer pixel whose center is nearest to `(u, v)`, if inside the image.
pub fn nearest_pixel(u: f64, v: f64, width: usize, height: usize) -> Option<(usize, usize)> {
    let (c, r) = (u.round(), v.round());
    (c >= 0.0 && r >= 0.0 && (c as usize) < width && (r as usize) < height).then_some((c as usize, r as usize))
}

/// One tracked point across the whole video.
///
/// A track carries sub-pixel coordinates, 3D positions, or both. Where it has
/// positions they are present exactly on visible frames.
#[derive(Debug, Clone, PartialEq)]
pub struct PointTrack {
    pub track_id: u64,
    positions: Vec<Option<Vec3>>,
    pixels: Vec<Option<(f64, f64)>>,
    visible: Vec<bool>,
}

impl PointTrack {
    /// A track with 2D observations only; visible wherever a pixel is present.
    pub fn from_pixels(track_id: u64, pixels: Vec<Option<(f64, f64)>>) -> Self {
        let visible = pixels.iter().map(Option::is_some).collect();
        let positions = vec![None; pixels.len()];
        Self { track_id, positions, pixels, visible }
    }

    /// A track with 3D observations only; visible wherever a position is present.
    pub fn from_positions(track_id: u64, positions: Vec<Option<Vec3>>) -> Self {
        let visible = positions.iter().map(Option::is_some).collect();
        let pixels = vec![None; positions.len()];
        Self { track_id, positions, pixels, visible }
    }

    /// Full constructor; checks that positions (when any are given) and pixels
    /// agree with `visible`.
    pub fn new(
        track_id: u64,
        positions: Vec<Option<Vec3>>,
        pixels: Vec<Option<(f64, f64)>>,
        visible: Vec<bool>,
    ) -> Result<Self> {
        let n = visible.len();
        if positions.len() != n || pixels.len() != n {
            return Err(TrackError::InvalidTrack(format!(
                "track {track_id}: {} positions, {} pixels, {} visibility flags",
                positions.len(),
                pixels.len(),
                n
            )));
        }
        let has_3d = positions.iter().any(Option::is_some);
        for t in 0..n {
            if has_3d && positions[t].is_some() != visible[t] {
                return Err(TrackError::InvalidTrack(format!(
                    "track {track_id} frame {t}: position presence disagrees with visibility"
                )));
            }
            if visible[t] && !has_3d && pixels[t].is_none() {
                return Err(TrackError::InvalidTrack(format!(
                    "track {track_id} frame {t}: visible without pixel or position"
                )));
            }
            if positions[t].is_some_and(|p| p.iter().any(|v| !v.is_finite())) {
                return Err(TrackError::InvalidTrack(format!("track {track_id} frame {t}: non-finite position")));
            }
        }
        Ok(Self { track_id, positions, pixels, visible })
    }

    pub fn len(&self) -> usize {
        self.visible.len()
    }

    pub fn is_empty(&self) -> bool {
        self.visible.is_empty()
    }

    pub fn is_visible(&self, t: usize) -> bool {
        self.visible.get(t).copied().unwrap_or(false)
    }

    pub fn position(&self, t: usize) -> Option<Vec3> {
        if self.is_visible(t) {
            self.positions[t]
        } else {
            None
        }
    }

    pub fn pixel(&self, t: usize) -> Option<(f64, f64)> {
        self.pixels.get(t).copied().flatten()
    }

    pub fn positions(&self) -> &[Option<Vec3>] {
        &self.positions
    }

    pub fn pixels(&self) -> &[Option<(f64, f64)>] {
        &self.pixels
    }

    pub fn visibility(&self) -> &[bool] {
        &self.visible
    }

    pub fn has_positions(&self) -> bool {
        self.positions.iter().any(Option::is_some)
    }

    pub fn visibility_fraction(&self) -> f64 {
        if self.visible.is_empty() {
            return 0.0;
        }
        self.visible.iter().filter(|v| **v).count() as f64 / self.visible.len() as f64
    }

    /// Hides frame `t`, dropping its position but keeping the pixel for reference.
    pub fn hide(&mut self, t: usize) {
        self.visible[t] = false;
        self.positions[t] = None;
    }

    /// The same track with every position mapped through `g`.
    pub fn transformed(&self, g: &RigidTransform) -> PointTrack {
        let mut out = self.clone();
        for p in out.positions.iter_mut().flatten() {
            *p = g.apply(p);
        }
        out
    }
}

/// Lifts tracks into the world frame.
///
/// Pixel tracks are back-projected through the metric depth at the nearest
/// pixel and the camera-to-world pose of their frame; frames whose depth pixel
/// is invalid become invisible. Tracks that carry camera-frame 3D positions
/// but no pixels are re-expressed in the world frame unchanged otherwise.
pub fn lift_tracks(
    tracks: &[PointTrack],
    depths: &[DepthFrame],
    intrinsics: Option<&CameraIntrinsics>,
    cam_poses: &PoseSequence,
) -> Result<Vec<PointTrack>> {
    if depths.len() != cam_poses.len() {
        return Err(TrackError::FrameCountMismatch(format!(
            "{} depth frames but {} camera poses",
            depths.len(),
            cam_poses.len()
        )));
    }
    let frames = depths.len();
    let mut out = Vec::with_capacity(tracks.len());
    for track in tracks {
        if track.len() != frames {
            return Err(TrackError::FrameCountMismatch(format!(
                "track {} spans {} frames, video has {frames}",
                track.track_id,
                track.len()
            )));
        }
        let mut positions = vec![None; frames];
        let mut visible = vec![false; frames];
        for t in 0..frames {
            if !track.is_visible(t) {
                continue;
            }
            let pose = &cam_poses.poses()[t];
            let cam_point = match track.pixel(t) {
                Some((u, v)) => {
                    let k = intrinsics.ok_or(TrackError::IntrinsicsMissing)?;
                    let depth = &depths[t];
                    let (col, row) = nearest_pixel(u, v, depth.width(), depth.height()).ok_or(
                        TrackError::PixelOutOfBounds {
                            track_id: track.track_id,
                            frame: t,
                            u,
                            v,
                            width: depth.width(),
                            height: depth.height(),
                        },
                    )?;
                    match depth.depth_at(col, row) {
                        Some(z) => k.backproject(u, v, z),
                        None => continue,
                    }
                }
                None => match track.positions[t] {
                    Some(p) => p,
                    None => continue,
                },
            };
            positions[t] = Some(pose.apply(&cam_point));
            visible[t] = true;
        }
        out.push(PointTrack { track_id: track.track_id, positions, pixels: track.pixels.clone(), visible });
    }
    Ok(out)
}

/// How tool masks restrict tracks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskMode {
    /// Keep tracks that start on the tool; later frames are trusted to the tracker.
    #[default]
    Frame0Only,
    /// Additionally hide every frame where the track leaves that frame's mask.
    Strict,
}

/// Keeps tracks whose frame-0 pixel lies on the frame-0 tool mask.
pub fn mask_tracks(tracks: &[PointTrack], masks: &[ToolMask], mode: MaskMode) -> Vec<PointTrack> {
    let mask_for = |t: usize| masks.iter().find(|m| m.frame == t);
    let Some(first) = mask_for(0) else {
        return Vec::new();
    };
    tracks
        .iter()
        .filter(|tr| tr.is_visible(0) && tr.pixel(0).is_some_and(|(u, v)| first.contains(u, v)))
        .map(|tr| {
            let mut tr = tr.clone();
            if mode == MaskMode::Strict {
                for t in 1..tr.len() {
                    let inside = match (mask_for(t), tr.pixel(t)) {
                        (Some(m), Some((u, v))) => m.contains(u, v),
                        _ => false,
                    };
                    if tr.is_visible(t) && !inside {
                        tr.hide(t);
                    }
                }
            }
            tr
        })
        .collect()
}

/// Per-pair motion model used while scoring rigidity.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RigidityFit {
    /// One weighted-free Kabsch fit over every track in the fit set.
    Global,
    /// Least-median consensus over random 3-point hypotheses, refit on the best half.
    Ransac { hypotheses: usize, seed: u64 },
}

impl RigidityFit {
    pub fn ransac(seed: u64) -> Self {
        RigidityFit::Ransac { hypotheses: 200, seed }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FilterConfig {
    pub k: usize,
    pub min_visibility_fraction: f64,
    pub fit: RigidityFit,
    /// Residuals within the same bucket of this width (m) count as tied.
    pub tie_tolerance: f64,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self { k: 10, min_visibility_fraction: 0.8, fit: RigidityFit::Global, tie_tolerance: 1e-9 }
    }
}

impl FilterConfig {
    pub fn with_k(k: usize) -> Self {
        Self { k, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.k < 3 {
            return Err(TrackError::InvalidConfig(format!("k = {} but pose recovery needs >= 3", self.k)));
        }
        if !(self.min_visibility_fraction > 0.0 && self.min_visibility_fraction <= 1.0) {
            return Err(TrackError::InvalidConfig("min_visibility_fraction must be in (0, 1]".into()));
        }
        if !(self.tie_tolerance > 0.0) {
            return Err(TrackError::InvalidConfig("tie_tolerance must be positive".into()));
        }
        if let RigidityFit::Ransac { hypotheses: 0, .. } = self.fit {
            return Err(TrackError::InvalidConfig("RANSAC needs at least one hypothesis".into()));
        }
        Ok(())
    }
}

/// How well one track follows the dominant rigid motion.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RigidityScore {
    pub track_id: u64,
    /// RMS distance to the fitted motion over the scored frame pairs (m);
    /// `None` when the track was never scored.
    pub mean_residual: Option<f64>,
    pub frames_used: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Selection {
    /// The `k` most rigid tracks, best first.
    pub selected: Vec<PointTrack>,
    /// Scores for every candidate track, in input order.
    pub scores: Vec<RigidityScore>,
}

struct Accum {
    sum_sq: f64,
    pairs: usize,
}

fn fit_pair(points: &[(Vec3, Vec3)], fit: RigidityFit, pair: usize) -> Option<RigidTransform> {
    let src = PointSet::new(points.iter().map(|p| p.0).collect()).ok()?;
    let dst = PointSet::new(points.iter().map(|p| p.1).collect()).ok()?;
    match fit {
        RigidityFit::Global => kabsch_align(&src, &dst).ok(),
        RigidityFit::Ransac { hypotheses, seed } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ (pair as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15));
            let n = points.len();
            let sq = |g: &RigidTransform| -> Vec<f64> {
                points.iter().map(|(a, b)| (g.apply(a) - b).norm_squared()).collect()
            };
            let mut best: Option<(f64, Vec<f64>)> = None;
            for _ in 0..hypotheses {
                let idx = sample(&mut rng, n, 3);
                let s = PointSet::new(idx.iter().map(|i| points[i].0).collect()).ok()?;
                let d = PointSet::new(idx.iter().map(|i| points[i].1).collect()).ok()?;
                let Ok(g) = kabsch_align(&s, &d) else { continue };
                let res = sq(&g);
                let mut sorted = res.clone();
                sorted.sort_by(f64::total_cmp);
                let median = sorted[n / 2];
                if best.as_ref().is_none_or(|(m, _)| median < *m) {
                    best = Some((median, res));
                }
            }
            let (_, res) = best?;
            let mut order: Vec<usize> = (0..n).collect();
            order.sort_by(|&a, &b| res[a].total_cmp(&res[b]).then(a.cmp(&b)));
            order.truncate(n.div_ceil(2).max(3));
            let s = PointSet::new(order.iter().map(|&i| points[i].0).collect()).ok()?;
            let d = PointSet::new(order.iter().map(|&i| points[i].1).collect()).ok()?;
            kabsch_align(&s, &d).ok()
        }
    }
}

/// Scores every candidate against per-pair fits computed over `fit_set`.
fn score_pass(candidates: &[&PointTrack], fit_set: &[bool], frames: usize, fit: RigidityFit) -> Vec<Accum> {
    let mut acc: Vec<Accum> = candidates.iter().map(|_| Accum { sum_sq: 0.0, pairs: 0 }).collect();
    for t in 0..frames.saturating_sub(1) {
        let pts: Vec<(Vec3, Vec3)> = candidates
            .iter()
            .zip(fit_set)
            .filter(|(_, used)| **used)
            .filter_map(|(tr, _)| Some((tr.position(t)?, tr.position(t + 1)?)))
            .collect();
        if pts.len() < 3 {
            continue;
        }
        let Some(g) = fit_pair(&pts, fit, t) else { continue };
        for (tr, a) in candidates.iter().zip(acc.iter_mut()) {
            if let (Some(x0), Some(x1)) = (tr.position(t), tr.position(t + 1)) {
                a.sum_sq += (g.apply(&x0) - x1).norm_squared();
                a.pairs += 1;
            }
        }
    }
    acc
}

fn to_scores(candidates: &[&PointTrack], acc: &[Accum]) -> Vec<RigidityScore> {
    candidates
        .iter()
        .zip(acc)
        .map(|(tr, a)| RigidityScore {
            track_id: tr.track_id,
            mean_residual: (a.pairs > 0).then(|| (a.sum_sq / a.pairs as f64).sqrt()),
            frames_used: a.pairs,
        })
        .collect()
}

fn rank_key(score: &RigidityScore, tol: f64) -> (u64, u64) {
    let bucket = match score.mean_residual {
        Some(r) => {
            let b = (r / tol).floor();
            if b >= u64::MAX as f64 { u64::MAX - 1 } else { b as u64 }
        }
        None => u64::MAX,
    };
    (bucket, score.track_id)
}

/// Retains the `k` tracks most consistent with a single rigid motion.
///
/// For each consecutive frame pair with at least three mutually visible
/// candidates, a rigid motion is fitted over the candidates and every track is
/// charged its squared distance to that motion. After a first pass the worst
/// half is excluded from fitting and all candidates are rescored once.
/// Tracks scored on fewer than half of the frame pairs are ineligible.
pub fn select_rigid(tracks: &[PointTrack], cfg: &FilterConfig) -> Result<Selection> {
    cfg.validate()?;
    if tracks.len() < cfg.k {
        return Err(TrackError::TooFewTracks { needed: cfg.k, available: tracks.len() });
    }
    let frames = tracks[0].len();
    if let Some(bad) = tracks.iter().find(|t| t.len() != frames) {
        return Err(TrackError::FrameCountMismatch(format!(
            "track {} spans {} frames, expected {frames}",
            bad.track_id,
            bad.len()
        )));
    }
    let candidates: Vec<&PointTrack> = tracks
        .iter()
        .filter(|t| t.has_positions() && t.visibility_fraction() >= cfg.min_visibility_fraction)
        .collect();
    if candidates.len() < cfg.k {
        return Err(TrackError::TooFewTracks { needed: cfg.k, available: candidates.len() });
    }
    let pairs = frames.saturating_sub(1);
    if pairs == 0 {
        return Err(TrackError::TooFewVisibleFrames("video has a single frame".into()));
    }

    let first = to_scores(&candidates, &score_pass(&candidates, &vec![true; candidates.len()], frames, cfg.fit));
    let mut order: Vec<usize> = (0..candidates.len()).filter(|&i| first[i].mean_residual.is_some()).collect();
    if order.len() < 3 {
        return Err(TrackError::TooFewVisibleFrames(
            "no frame pair has three mutually visible tracks".into(),
        ));
    }
    order.sort_by_key(|&i| rank_key(&first[i], cfg.tie_tolerance));
    order.truncate(order.len().div_ceil(2).max(3));
    let mut fit_set = vec![false; candidates.len()];
    for i in order {
        fit_set[i] = true;
    }

    let scores = to_scores(&candidates, &score_pass(&candidates, &fit_set, frames, cfg.fit));
    let mut eligible: Vec<usize> = (0..candidates.len())
        .filter(|&i| scores[i].mean_residual.is_some() && 2 * scores[i].frames_used >= pairs)
        .collect();
    if eligible.len() < cfg.k {
        return Err(TrackError::TooFewVisibleFrames(format!(
            "{} tracks scored on at least half of {pairs} frame pairs, need {}",
            eligible.len(),
            cfg.k
        )));
    }
    eligible.sort_by_key(|&i| rank_key(&scores[i], cfg.tie_tolerance));
    let selected = eligible[..cfg.k].iter().map(|&i| candidates[i].clone()).collect();
    Ok(Selection { selected, scores })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Rotation;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn rigid_tracks(n: usize, frames: usize) -> (Vec<PointTrack>, Vec<RigidTransform>) {
        let step = RigidTransform::new(Rotation::from_axis_angle(&Vec3::new(0.3, 1.0, 0.2), 0.04).unwrap(), Vec3::new(0.01, -0.005, 0.02));
        let mut poses = vec![RigidTransform::identity()];
        for _ in 1..frames {
            poses.push(step.compose(poses.last().unwrap()));
        }
        let tracks = (0..n)
            .map(|i| {
                let f = i as f64;
                let local = Vec3::new(0.05 * (f * 1.3).sin(), 0.04 * (f * 0.7).cos(), 0.03 * ((f * 2.1).sin() + 0.2 * f / n as f64));
                PointTrack::from_positions(i as u64, poses.iter().map(|g| Some(g.apply(&local))).collect())
            })
            .collect();
        (tracks, poses)
    }

    fn add_noise(tracks: &mut [PointTrack], sigma: f64, rng: &mut impl Rng) {
        let n = Normal::new(0.0, sigma).unwrap();
        for tr in tracks {
            for p in tr.positions.iter_mut().flatten() {
                *p += Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng));
            }
        }
    }

    #[test]
    fn lift_examples() {
        let k = CameraIntrinsics::new(100.0, 100.0, 10.0, 8.0).unwrap();
        let mut values = vec![1.0; 21 * 17];
        values[8 * 21 + 10] = 2.0;
        let depth = DepthFrame::new(21, 17, values).unwrap();
        let poses = PoseSequence::uniform(vec![RigidTransform::identity()], 10.0).unwrap();
        let center = PointTrack::from_pixels(0, vec![Some((10.0, 8.0))]);
        let out = lift_tracks(&[center], std::slice::from_ref(&depth), Some(&k), &poses).unwrap();
        assert_eq!(out[0].position(0), Some(Vec3::new(0.0, 0.0, 2.0)));

        // u = cx + fx lands outside a small raster; use a wide one instead.
        let k = CameraIntrinsics::new(5.0, 5.0, 10.0, 8.0).unwrap();
        let track = PointTrack::from_pixels(1, vec![Some((15.0, 8.0))]);
        let out = lift_tracks(std::slice::from_ref(&track), std::slice::from_ref(&depth), Some(&k), &poses).unwrap();
        assert_eq!(out[0].position(0), Some(Vec3::new(1.0, 0.0, 1.0)));

        let back = PoseSequence::uniform(vec![RigidTransform::from_translation(Vec3::new(0.0, 0.0, -1.0))], 10.0).unwrap();
        let out = lift_tracks(std::slice::from_ref(&track), std::slice::from_ref(&depth), Some(&k), &back).unwrap();
        assert_eq!(out[0].position(0), Some(Vec3::new(1.0, 0.0, 0.0)));

        assert_eq!(lift_tracks(std::slice::from_ref(&track), std::slice::from_ref(&depth), None, &poses), Err(TrackError::IntrinsicsMissing));
        let two = PoseSequence::uniform(vec![RigidTransform::identity(); 2], 10.0).unwrap();
        assert!(matches!(lift_tracks(&[track], &[depth], Some(&k), &two), Err(TrackError::FrameCountMismatch(_))));
    }

    #[test]
    fn lift_clears_invalid_depth() {
        let k = CameraIntrinsics::new(5.0, 5.0, 1.0, 1.0).unwrap();
        let depth = DepthFrame::new(3, 3, vec![1.0, 1.0, 1.0, 1.0, 0.0, 1.0, 1.0, 1.0, 1.0]).unwrap();
        let poses = PoseSequence::uniform(vec![RigidTransform::identity()], 10.0).unwrap();
        let out = lift_tracks(&[PointTrack::from_pixels(0, vec![Some((1.2, 0.9))])], &[depth], Some(&k), &poses).unwrap();
        assert!(!out[0].is_visible(0));
        assert_eq!(out[0].position(0), None);
    }

    #[test]
    fn camera_frame_tracks_are_reexpressed() {
        let g = RigidTransform::new(Rotation::rz(0.5), Vec3::new(1.0, 2.0, 3.0));
        let poses = PoseSequence::uniform(vec![g], 10.0).unwrap();
        let depth = DepthFrame::new(1, 1, vec![1.0]).unwrap();
        let p = Vec3::new(0.1, 0.2, 0.7);
        let out = lift_tracks(&[PointTrack::from_positions(3, vec![Some(p)])], &[depth], None, &poses).unwrap();
        assert!((out[0].position(0).unwrap() - g.apply(&p)).norm() < 1e-15);
    }

    #[test]
    fn masking_examples() {
        let on = PointTrack::from_pixels(0, vec![Some((1.0, 1.0)), Some((3.0, 1.0))]);
        let off = PointTrack::from_pixels(1, vec![Some((3.0, 3.0)), Some((3.0, 3.0))]);
        let tracks = vec![on.clone(), off];
        let full = vec![ToolMask::filled(4, 4, 0, true), ToolMask::filled(4, 4, 1, true)];
        assert_eq!(mask_tracks(&tracks, &full, MaskMode::Frame0Only), tracks);
        let none = vec![ToolMask::filled(4, 4, 0, false), ToolMask::filled(4, 4, 1, false)];
        assert!(mask_tracks(&tracks, &none, MaskMode::Frame0Only).is_empty());

        let mut m0 = vec![false; 16];
        m0[4 + 1] = true;
        let m1 = vec![false; 16];
        let masks = vec![ToolMask::new(4, 4, 0, m0).unwrap(), ToolMask::new(4, 4, 1, m1).unwrap()];
        let kept = mask_tracks(&tracks, &masks, MaskMode::Frame0Only);
        assert_eq!(kept, vec![on.clone()]);
        let strict = mask_tracks(&tracks, &masks, MaskMode::Strict);
        assert_eq!(strict.len(), 1);
        assert!(strict[0].is_visible(0) && !strict[0].is_visible(1));
    }

    #[test]
    fn noise_free_ties_follow_track_id() {
        let (mut tracks, _) = rigid_tracks(14, 8);
        tracks.reverse();
        let sel = select_rigid(&tracks, &FilterConfig::default()).unwrap();
        let ids: Vec<u64> = sel.selected.iter().map(|t| t.track_id).collect();
        assert_eq!(ids, (0..10).collect::<Vec<u64>>());
        assert!(sel.scores.iter().all(|s| s.mean_residual.unwrap() < 1e-9));
        assert_eq!(sel.scores.len(), 14);
    }

    #[test]
    fn outlier_is_rejected() {
        let (mut tracks, _) = rigid_tracks(12, 10);
        let drift = Vec3::new(0.1, 0.0, 0.0);
        let base = tracks[0].clone();
        let outlier: Vec<Option<Vec3>> =
            (0..10).map(|t| Some(base.position(t).unwrap() + Vec3::new(0.0, 0.01, 0.0) + drift * t as f64)).collect();
        tracks.push(PointTrack::from_positions(99, outlier));
        let sel = select_rigid(&tracks, &FilterConfig::default()).unwrap();
        assert!(sel.selected.iter().all(|t| t.track_id != 99));
        let out = sel.scores.iter().find(|s| s.track_id == 99).unwrap().mean_residual.unwrap();
        let worst_rigid = sel
            .scores
            .iter()
            .filter(|s| s.track_id != 99)
            .map(|s| s.mean_residual.unwrap())
            .fold(0.0, f64::max);
        assert!(out > 10.0 * worst_rigid.max(1e-12));
    }

    #[test]
    fn noisy_small_k_selection() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let (mut tracks, _) = rigid_tracks(5, 8);
            add_noise(&mut tracks, 1e-3, &mut rng);
            let sel = select_rigid(&tracks, &FilterConfig::with_k(3)).unwrap();
            assert_eq!(sel.selected.len(), 3);
            for tr in &sel.selected {
                let s = sel.scores.iter().find(|s| s.track_id == tr.track_id).unwrap();
                assert!(s.mean_residual.unwrap() < 5e-3);
            }
        }
    }

    #[test]
    fn ransac_variant_rejects_heavy_outliers() {
        let (mut tracks, _) = rigid_tracks(12, 6);
        for (j, id) in (100..106).enumerate() {
            let base = tracks[j].clone();
            let pos = (0..6)
                .map(|t| Some(base.position(t).unwrap() + Vec3::new(0.03 * t as f64 * (j as f64 + 1.0), 0.02 * t as f64, 0.0)))
                .collect();
            tracks.push(PointTrack::from_positions(id, pos));
        }
        let cfg = FilterConfig { fit: RigidityFit::ransac(7), ..FilterConfig::default() };
        let sel = select_rigid(&tracks, &cfg).unwrap();
        assert!(sel.selected.iter().all(|t| t.track_id < 100));
        let again = select_rigid(&tracks, &cfg).unwrap();
        assert_eq!(sel, again);
    }

    #[test]
    fn selection_errors() {
        let (tracks, _) = rigid_tracks(5, 4);
        assert_eq!(
            select_rigid(&tracks, &FilterConfig::default()),
            Err(TrackError::TooFewTracks { needed: 10, available: 5 })
        );
        assert!(matches!(select_rigid(&tracks, &FilterConfig::with_k(2)), Err(TrackError::InvalidConfig(_))));
        let mut sparse = tracks.clone();
        for (i, tr) in sparse.iter_mut().enumerate() {
            // Every track alternates visibility so no pair has 3 mutual tracks.
            for t in 0..4 {
                if (t + i) % 2 == 0 {
                    tr.hide(t);
                }
            }
        }
        let cfg = FilterConfig { k: 3, min_visibility_fraction: 0.5, ..FilterConfig::default() };
        assert!(matches!(select_rigid(&sparse, &cfg), Err(TrackError::TooFewVisibleFrames(_))));
    }

    #[test]
    fn selection_is_permutation_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let (mut tracks, _) = rigid_tracks(15, 6);
        add_noise(&mut tracks, 5e-4, &mut rng);
        let base = select_rigid(&tracks, &FilterConfig::default()).unwrap();
        let mut ids: Vec<u64> = base.selected.iter().map(|t| t.track_id).collect();
        ids.sort();
        for _ in 0..5 {
            let mut shuffled = tracks.clone();
            rand::seq::SliceRandom::shuffle(shuffled.as_mut_slice(), &mut rng);
            let sel = select_rigid(&shuffled, &FilterConfig::default()).unwrap();
            let mut got: Vec<u64> = sel.selected.iter().map(|t| t.track_id).collect();
            got.sort();
            assert_eq!(got, ids);
        }
    }
}

//! Synthetic scenes with known ground truth.
//!
//! A rigid tool moves above a table plane while a camera drifts. The generator
//! emits exactly what the pipeline consumes (relative depth, a metric frame-0
//! reference, tool masks, point tracks, relative camera poses and feature
//! vectors) together with the true tool poses, scale/shift and track labels.
//!
//! Every random quantity comes from a ChaCha8 stream selected by purpose and
//! frame, so a scene is bit-identical for a given spec and changing one noise
//! source leaves the others untouched.

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::depth::{CameraIntrinsics, DepthFrame, PoseSequence, ScaleShift};
use crate::geometry::{RigidTransform, Rotation, Vec3};
use crate::heads::FrameVector;
use crate::tracks::{nearest_pixel, PointTrack, ToolMask};
use crate::trajectory::TcpAction;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("invalid scene spec: {0}")]
    SpecInvalid(String),
    #[error("horizon mismatch: truth has {expected} steps, recovered {got}")]
    HorizonMismatch { expected: usize, got: usize },
}

pub type Result<T, E = OracleError> = std::result::Result<T, E>;

/// A run of identical per-step motions: translate by `translation` (world, m)
/// and rotate by `degrees_per_step` about `axis` through the moving frame's origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionSegment {
    pub steps: usize,
    pub translation: [f64; 3],
    pub axis: [f64; 3],
    pub degrees_per_step: f64,
}

impl MotionSegment {
    pub fn still(steps: usize) -> Self {
        Self { steps, translation: [0.0; 3], axis: [0.0, 0.0, 1.0], degrees_per_step: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolSpec {
    pub points: usize,
    /// Points are drawn uniformly in a box of these half-sizes around the TCP (m).
    pub half_extent: [f64; 3],
    /// Initial TCP position in the world (m); the tool starts axis-aligned.
    pub origin: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraPath {
    pub eye: [f64; 3],
    pub target: [f64; 3],
    pub motion: Vec<MotionSegment>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub pixel_sigma_px: f64,
    pub depth_sigma_m: f64,
    /// Isotropic noise on observed 3D track positions (m).
    pub track_sigma_m: f64,
    /// Chance that a track misses a frame (never frame 0).
    pub drop_probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OutlierSpec {
    pub count: usize,
    /// Drift speed relative to the tool (m per frame).
    pub displacement_m: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub dilation_px: f64,
    /// Per-frame chance (frames >= 1) that the mask is eroded by one pixel.
    pub flicker_probability: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureSpec {
    pub dims: usize,
    pub noise_sigma: f64,
}

/// Frames `from..=to` where all but the `keep` lowest-id tool tracks are hidden.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcclusionWindow {
    pub from: usize,
    pub to: usize,
    pub keep: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneSpec {
    pub seed: u64,
    /// Number of frames, T + 1.
    pub frames: usize,
    pub fps: f64,
    pub width: usize,
    pub height: usize,
    pub intrinsics: CameraIntrinsics,
    pub tool: ToolSpec,
    pub tool_motion: Vec<MotionSegment>,
    pub camera: CameraPath,
    /// Maps metric depth z to relative depth (z - d) / s.
    pub depth_scale_shift: ScaleShift,
    pub noise: NoiseSpec,
    pub outliers: OutlierSpec,
    pub background_tracks: usize,
    pub mask: MaskSpec,
    pub features: FeatureSpec,
    /// `(frame, aperture)` keyframes, linearly interpolated and held at the ends.
    pub aperture: Vec<(usize, f64)>,
    pub occlusions: Vec<OcclusionWindow>,
    pub instruction: String,
}

impl Default for SceneSpec {
    /// A noise-free 30-step desk scene: 40 tool points and a slowly drifting camera.
    fn default() -> Self {
        let seg = |steps, translation, axis, degrees_per_step| MotionSegment { steps, translation, axis, degrees_per_step };
        Self {
            seed: 0,
            frames: 31,
            fps: 10.0,
            width: 320,
            height: 240,
            intrinsics: CameraIntrinsics { fx: 320.0, fy: 320.0, cx: 160.0, cy: 120.0 },
            tool: ToolSpec { points: 40, half_extent: [0.06, 0.04, 0.025], origin: [0.0, 0.0, 0.12] },
            tool_motion: vec![
                seg(10, [0.004, 0.002, 0.003], [0.0, 0.0, 1.0], 1.0),
                seg(10, [0.0, 0.003, 0.0], [1.0, 0.2, 0.0], 2.0),
                seg(10, [-0.003, 0.0, -0.002], [0.0, 1.0, 0.0], 1.5),
            ],
            camera: CameraPath {
                eye: [0.0, -0.45, 0.70],
                target: [0.0, 0.0, 0.1],
                motion: vec![seg(30, [0.002, 0.0, 0.0], [0.0, 0.0, 1.0], 0.2)],
            },
            depth_scale_shift: ScaleShift { s: 2.0, d: 0.5 },
            noise: NoiseSpec { pixel_sigma_px: 0.0, depth_sigma_m: 0.0, track_sigma_m: 0.0, drop_probability: 0.0 },
            outliers: OutlierSpec { count: 0, displacement_m: 0.0 },
            background_tracks: 12,
            mask: MaskSpec { dilation_px: 3.0, flicker_probability: 0.0 },
            features: FeatureSpec { dims: 16, noise_sigma: 0.01 },
            aperture: vec![(0, 1.0), (10, 1.0), (15, 0.0), (25, 0.0), (30, 1.0)],
            occlusions: Vec::new(),
            instruction: "pick up the block".into(),
        }
    }
}

impl SceneSpec {
    pub fn with_seed(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    /// Default scene with 1 mm track noise and 2 mm depth noise.
    pub fn noisy(seed: u64) -> Self {
        let mut s = Self::with_seed(seed);
        s.noise.track_sigma_m = 0.001;
        s.noise.depth_sigma_m = 0.002;
        s
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(OracleError::SpecInvalid(m));
        if self.frames < 2 {
            return bad(format!("need at least 2 frames, got {}", self.frames));
        }
        if self.tool.points < 3 {
            return bad(format!("need at least 3 tool points, got {}", self.tool.points));
        }
        if self.width == 0 || self.height == 0 {
            return bad("image size must be positive".into());
        }
        if let Err(e) = self.intrinsics.validate_for(self.width, self.height) {
            return bad(e.to_string());
        }
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return bad("fps must be positive".into());
        }
        let ScaleShift { s, d } = self.depth_scale_shift;
        if !(s > 0.0 && s.is_finite() && d.is_finite()) {
            return bad("depth scale must be positive and shift finite".into());
        }
        let n = self.noise;
        let sigmas = [n.pixel_sigma_px, n.depth_sigma_m, n.track_sigma_m, self.features.noise_sigma];
        if sigmas.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
            return bad("noise sigmas must be finite and >= 0".into());
        }
        if !(0.0..1.0).contains(&n.drop_probability) || !(0.0..1.0).contains(&self.mask.flicker_probability) {
            return bad("probabilities must lie in [0, 1)".into());
        }
        if !(self.outliers.displacement_m >= 0.0) || !(self.mask.dilation_px >= 0.0) {
            return bad("outlier displacement and mask dilation must be >= 0".into());
        }
        if self.features.dims == 0 {
            return bad("feature dims must be positive".into());
        }
        let segments = self.tool_motion.iter().chain(&self.camera.motion);
        for seg in segments {
            if seg.degrees_per_step != 0.0 && Vec3::from(seg.axis).norm() == 0.0 {
                return bad("rotating motion segment has a zero axis".into());
            }
        }
        let forward = Vec3::from(self.camera.target) - Vec3::from(self.camera.eye);
        if forward.norm() == 0.0 || forward.normalize().z.abs() > 1.0 - 1e-9 {
            return bad("camera must look at a distinct, non-vertical target".into());
        }
        if let Some(w) = self.occlusions.iter().find(|w| w.from == 0 || w.to < w.from || w.to >= self.frames - 1) {
            return bad(format!("occlusion window {}..={} must lie strictly inside the video", w.from, w.to));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrackLabel {
    Rigid,
    Outlier,
    Background,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruth {
    /// Tool (TCP) pose in the world, per frame.
    pub tool_poses: Vec<RigidTransform>,
    /// Camera-to-world pose per frame.
    pub camera_poses: Vec<RigidTransform>,
    pub scale_shift: ScaleShift,
    pub labels: Vec<(u64, TrackLabel)>,
    pub aperture: Vec<f64>,
}

impl GroundTruth {
    /// World-frame motion executed at each transition, `pose[t+1] ∘ pose[t]⁻¹`.
    pub fn steps(&self) -> Vec<RigidTransform> {
        self.tool_poses.windows(2).map(|w| w[1].compose(&w[0].inverse())).collect()
    }

    pub fn label(&self, track_id: u64) -> Option<TrackLabel> {
        self.labels.iter().find(|(id, _)| *id == track_id).map(|(_, l)| *l)
    }
}

/// Everything a pipeline run consumes, in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub width: usize,
    pub height: usize,
    pub intrinsics: CameraIntrinsics,
    pub relative_depth: Vec<DepthFrame>,
    pub metric_reference: DepthFrame,
    pub masks: Vec<ToolMask>,
    /// Tracks with both the tracker's pixel and its world-frame 3D observation.
    pub tracks: Vec<PointTrack>,
    pub relative_poses: PoseSequence,
    /// Metric camera pose of frame 0.
    pub anchor_pose: RigidTransform,
    pub initial_tcp: RigidTransform,
    pub features: Vec<FrameVector>,
    pub instruction: String,
}

impl Bundle {
    pub fn frames(&self) -> usize {
        self.relative_depth.len()
    }

    /// The 2D half of the tracks, to be lifted through depth.
    pub fn tracks_2d(&self) -> Vec<PointTrack> {
        self.tracks.iter().map(|t| PointTrack::from_pixels(t.track_id, t.pixels().to_vec())).collect()
    }

    /// The world-frame 3D half of the tracks.
    pub fn tracks_3d(&self) -> Vec<PointTrack> {
        self.tracks.iter().map(|t| PointTrack::from_positions(t.track_id, t.positions().to_vec())).collect()
    }
}

const STREAM_TOOL: u64 = 1;
const STREAM_OUTLIER: u64 = 2;
const STREAM_BACKGROUND: u64 = 3;
const STREAM_FEATURE_BASIS: u64 = 4;
const STREAM_TRACK_NOISE: u64 = 1 << 20;
const STREAM_DEPTH_NOISE: u64 = 2 << 20;
const STREAM_FLICKER: u64 = 3 << 20;
const STREAM_FEATURE_NOISE: u64 = 4 << 20;

/// Tool points closer than this to the nearest surface already drawn at a
/// pixel count as the same surface rather than occluded.
const SURFACE_TOLERANCE_M: f64 = 0.03;

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn normal(sigma: f64) -> Normal<f64> {
    Normal::new(0.0, sigma).expect("sigma validated")
}

fn gauss3(rng: &mut ChaCha8Rng, n: &Normal<f64>) -> Vec3 {
    Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng))
}

fn step_about(seg: &MotionSegment, center: &Vec3) -> RigidTransform {
    let r = if seg.degrees_per_step == 0.0 {
        Rotation::identity()
    } else {
        Rotation::from_axis_angle(&Vec3::from(seg.axis), seg.degrees_per_step.to_radians()).expect("axis validated")
    };
    let t = center - r.apply(center) + Vec3::from(seg.translation);
    RigidTransform::new(r, t)
}

/// Poses of a frame moved by piecewise segments about its own origin.
fn integrate(start: RigidTransform, motion: &[MotionSegment], frames: usize) -> Vec<RigidTransform> {
    let mut schedule = motion.iter().flat_map(|s| std::iter::repeat_n(s, s.steps));
    let mut poses = vec![start];
    for _ in 1..frames {
        let last = *poses.last().expect("non-empty");
        let next = match schedule.next() {
            Some(seg) => step_about(seg, &last.translation).compose(&last),
            None => last,
        };
        poses.push(next);
    }
    poses
}

fn look_at(eye: Vec3, target: Vec3) -> RigidTransform {
    let z = (target - eye).normalize();
    let x = z.cross(&Vec3::z()).normalize();
    let y = z.cross(&x);
    let m = Matrix3::from_columns(&[x, y, z]);
    RigidTransform::new(Rotation::from_matrix(m).expect("orthonormal basis"), eye)
}

fn aperture_at(keys: &[(usize, f64)], t: usize) -> f64 {
    match keys.iter().position(|(f, _)| *f >= t) {
        None => keys.last().map_or(1.0, |k| k.1),
        Some(0) => keys[0].1,
        Some(i) => {
            let ((f0, a0), (f1, a1)) = (keys[i - 1], keys[i]);
            a0 + (a1 - a0) * (t - f0) as f64 / (f1 - f0) as f64
        }
    }
}

fn uniform_in_box(rng: &mut ChaCha8Rng, half: [f64; 3]) -> Vec3 {
    Vec3::new(
        rng.random_range(-1.0..=1.0) * half[0],
        rng.random_range(-1.0..=1.0) * half[1],
        rng.random_range(-1.0..=1.0) * half[2],
    )
}

struct Observation {
    pixel: (f64, f64),
    world: Vec3,
    depth: f64,
}

/// Builds the scene. Deterministic for a given spec.
pub fn generate(spec: &SceneSpec) -> Result<(Bundle, GroundTruth)> {
    spec.validate()?;
    let frames = spec.frames;
    let (w, h) = (spec.width, spec.height);
    let k = spec.intrinsics;
    let seed = spec.seed;

    let tcp0 = RigidTransform::from_translation(Vec3::from(spec.tool.origin));
    let tool_poses = integrate(tcp0, &spec.tool_motion, frames);
    let cam0 = look_at(Vec3::from(spec.camera.eye), Vec3::from(spec.camera.target));
    let camera_poses = integrate(cam0, &spec.camera.motion, frames);

    let mut rng = stream(seed, STREAM_TOOL);
    let tool_local: Vec<Vec3> = (0..spec.tool.points).map(|_| uniform_in_box(&mut rng, spec.tool.half_extent)).collect();
    let mut rng = stream(seed, STREAM_OUTLIER);
    let outliers: Vec<(Vec3, Vec3)> = (0..spec.outliers.count)
        .map(|_| {
            let anchor = uniform_in_box(&mut rng, spec.tool.half_extent);
            let dir: [f64; 3] = UnitSphere.sample(&mut rng);
            (anchor, Vec3::from(dir))
        })
        .collect();
    let mut rng = stream(seed, STREAM_BACKGROUND);
    let origin = Vec3::from(spec.tool.origin);
    let background: Vec<Vec3> = (0..spec.background_tracks)
        .map(|_| Vec3::new(origin.x + rng.random_range(-0.25..0.25), origin.y + rng.random_range(-0.2..0.2), 0.0))
        .collect();

    let n_tool = tool_local.len();
    let n_out = outliers.len();
    let n_tracks = n_tool + n_out + background.len();
    let mut labels = Vec::with_capacity(n_tracks);
    labels.extend((0..n_tool).map(|i| (i as u64, TrackLabel::Rigid)));
    labels.extend((0..n_out).map(|i| ((n_tool + i) as u64, TrackLabel::Outlier)));
    labels.extend((0..background.len()).map(|i| ((n_tool + n_out + i) as u64, TrackLabel::Background)));

    let ScaleShift { s, d } = spec.depth_scale_shift;
    let mut relative_depth = Vec::with_capacity(frames);
    let mut metric_reference = None;
    let mut masks = Vec::with_capacity(frames);
    let mut pixels = vec![vec![None; frames]; n_tracks];
    let mut positions = vec![vec![None; frames]; n_tracks];
    let track_noise = normal(spec.noise.track_sigma_m);
    let pixel_noise = normal(spec.noise.pixel_sigma_px);
    let depth_noise = normal(spec.noise.depth_sigma_m);

    for t in 0..frames {
        let cam = camera_poses[t];
        let world_to_cam = cam.inverse();
        let tool = tool_poses[t];

        // Table plane z = 0 under every pixel ray.
        let mut zbuf = vec![f64::INFINITY; w * h];
        let rot = cam.rotation.matrix();
        for row in 0..h {
            for col in 0..w {
                let ray = rot * Vec3::new((col as f64 - k.cx) / k.fx, (row as f64 - k.cy) / k.fy, 1.0);
                if ray.z < 0.0 {
                    let lambda = -cam.translation.z / ray.z;
                    if lambda > 0.0 {
                        zbuf[row * w + col] = lambda;
                    }
                }
            }
        }

        // Tool surface: dilated splats of tool points and outlier anchors.
        let mut tool_px = vec![false; w * h];
        let r = spec.mask.dilation_px;
        let reach = r.ceil() as i64;
        let surface = tool_local.iter().chain(outliers.iter().map(|(a, _)| a));
        for p in surface {
            let c = world_to_cam.apply(&tool.apply(p));
            let Some((u, v)) = k.project(&c) else { continue };
            let (uc, vc) = (u.round() as i64, v.round() as i64);
            for row in vc - reach..=vc + reach {
                for col in uc - reach..=uc + reach {
                    if row < 0 || col < 0 || row >= h as i64 || col >= w as i64 {
                        continue;
                    }
                    let (du, dv) = (col as f64 - u, row as f64 - v);
                    if du * du + dv * dv <= r * r + 0.5 {
                        let i = row as usize * w + col as usize;
                        tool_px[i] = true;
                        zbuf[i] = zbuf[i].min(c.z);
                    }
                }
            }
        }

        // Observations: fixed draws per track so each noise source is independent.
        let mut rng = stream(seed, STREAM_TRACK_NOISE + t as u64);
        let hidden_by_window = |id: usize| {
            id < n_tool + n_out && id >= spec.occlusions.iter().filter(|o| (o.from..=o.to).contains(&t)).map(|o| o.keep).min().unwrap_or(usize::MAX)
        };
        let mut observed: Vec<(usize, Observation)> = Vec::new();
        for id in 0..n_tracks {
            let noise3 = gauss3(&mut rng, &track_noise);
            let noise2 = (pixel_noise.sample(&mut rng), pixel_noise.sample(&mut rng));
            let dropped = rng.random::<f64>() < spec.noise.drop_probability && t > 0;
            let truth = if id < n_tool {
                tool.apply(&tool_local[id])
            } else if id < n_tool + n_out {
                let (anchor, dir) = outliers[id - n_tool];
                tool.apply(&anchor) + dir * (spec.outliers.displacement_m * t as f64)
            } else {
                background[id - n_tool - n_out]
            };
            if dropped || hidden_by_window(id) {
                continue;
            }
            let world = truth + noise3;
            let c = world_to_cam.apply(&world);
            let Some((u, v)) = k.project(&c) else { continue };
            let pixel = (u + noise2.0, v + noise2.1);
            if nearest_pixel(pixel.0, pixel.1, w, h).is_none() {
                continue;
            }
            observed.push((id, Observation { pixel, world, depth: c.z }));
        }

        // Far-to-near: each track claims the pixel nearest its reported position.
        observed.sort_by(|a, b| b.1.depth.total_cmp(&a.1.depth).then(a.0.cmp(&b.0)));
        let mut owner = vec![usize::MAX; w * h];
        let mut track_depth = vec![f64::NAN; w * h];
        for (id, ob) in &observed {
            let (col, row) = nearest_pixel(ob.pixel.0, ob.pixel.1, w, h).expect("checked in bounds");
            let i = row * w + col;
            if ob.depth <= zbuf[i] + SURFACE_TOLERANCE_M {
                owner[i] = *id;
                track_depth[i] = ob.depth;
            }
        }
        for (id, ob) in &observed {
            let (col, row) = nearest_pixel(ob.pixel.0, ob.pixel.1, w, h).expect("checked in bounds");
            let i = row * w + col;
            if owner[i] == *id {
                pixels[*id][t] = Some(ob.pixel);
                positions[*id][t] = Some(ob.world);
            }
        }
        for (i, z) in track_depth.iter().enumerate() {
            if z.is_finite() {
                zbuf[i] = *z;
            }
        }

        if t == 0 {
            metric_reference = Some(DepthFrame::new(w, h, zbuf.clone()).expect("sized raster"));
        }
        let mut rng = stream(seed, STREAM_DEPTH_NOISE + t as u64);
        let rel: Vec<f64> = zbuf
            .iter()
            .map(|z| {
                let n = depth_noise.sample(&mut rng);
                if z.is_finite() { (z + n - d) / s } else { f64::NAN }
            })
            .collect();
        relative_depth.push(DepthFrame::new(w, h, rel).expect("sized raster"));

        let mut rng = stream(seed, STREAM_FLICKER + t as u64);
        if t > 0 && rng.random::<f64>() < spec.mask.flicker_probability {
            tool_px = erode(&tool_px, w, h);
        }
        masks.push(ToolMask::new(w, h, t, tool_px).expect("sized mask"));
    }

    let tracks = (0..n_tracks)
        .map(|id| {
            let visible = pixels[id].iter().map(Option::is_some).collect();
            PointTrack::new(id as u64, positions[id].clone(), pixels[id].clone(), visible).expect("consistent track")
        })
        .collect();

    let inv0 = camera_poses[0].inverse();
    let rel_poses: Vec<RigidTransform> = camera_poses
        .iter()
        .map(|c| {
            let p = inv0.compose(c);
            RigidTransform::new(p.rotation, p.translation / s)
        })
        .collect();
    let relative_poses = PoseSequence::uniform(rel_poses, spec.fps).expect("uniform timestamps");

    let aperture: Vec<f64> = (0..frames).map(|t| aperture_at(&spec.aperture, t)).collect();
    let mut rng = stream(seed, STREAM_FEATURE_BASIS);
    let unit = normal(1.0);
    let basis: Vec<f64> = (0..spec.features.dims).map(|_| unit.sample(&mut rng)).collect();
    let offset: Vec<f64> = (0..spec.features.dims).map(|_| unit.sample(&mut rng)).collect();
    let feature_noise = normal(spec.features.noise_sigma);
    let features = (0..frames)
        .map(|t| {
            let mut rng = stream(seed, STREAM_FEATURE_NOISE + t as u64);
            let values = basis
                .iter()
                .zip(&offset)
                .map(|(u, b)| aperture[t] * u + b + feature_noise.sample(&mut rng))
                .collect();
            FrameVector { frame: t, values }
        })
        .collect();

    let bundle = Bundle {
        width: w,
        height: h,
        intrinsics: k,
        relative_depth,
        metric_reference: metric_reference.expect("at least one frame"),
        masks,
        tracks,
        relative_poses,
        anchor_pose: camera_poses[0],
        initial_tcp: tool_poses[0],
        features,
        instruction: spec.instruction.clone(),
    };
    let truth = GroundTruth { tool_poses, camera_poses, scale_shift: spec.depth_scale_shift, labels, aperture };
    Ok((bundle, truth))
}

fn erode(mask: &[bool], w: usize, h: usize) -> Vec<bool> {
    let at = |c: usize, r: usize| mask[r * w + c];
    (0..w * h)
        .map(|i| {
            let (c, r) = (i % w, i / w);
            at(c, r)
                && c > 0
                && r > 0
                && c + 1 < w
                && r + 1 < h
                && at(c - 1, r)
                && at(c + 1, r)
                && at(c, r - 1)
                && at(c, r + 1)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EvalThresholds {
    pub translation_m: f64,
    pub rotation_deg: f64,
}

impl Default for EvalThresholds {
    fn default() -> Self {
        Self { translation_m: 0.02, rotation_deg: 10.0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseError {
    pub frame: usize,
    pub rotation_deg: f64,
    pub translation_m: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Error of each recovered step against the true step.
    pub steps: Vec<PoseError>,
    /// Error of the TCP pose obtained by chaining recovered steps from the true
    /// initial pose, per frame.
    pub cumulative: Vec<PoseError>,
    pub max_cumulative_rotation_deg: f64,
    pub max_cumulative_translation_m: f64,
    pub thresholds: EvalThresholds,
    pub rotation_pass: bool,
    pub translation_pass: bool,
    pub pass: bool,
}

fn pose_error(frame: usize, a: &RigidTransform, b: &RigidTransform) -> PoseError {
    PoseError {
        frame,
        rotation_deg: a.rotation.angle_to(&b.rotation).to_degrees(),
        translation_m: (a.translation - b.translation).norm(),
    }
}

/// Scores recovered actions against the truth. Pass/fail uses the worst
/// cumulative error over the horizon.
pub fn evaluate(recovered: &[TcpAction], truth: &GroundTruth, thresholds: EvalThresholds) -> Result<Evaluation> {
    let true_steps = truth.steps();
    if recovered.len() != true_steps.len() {
        return Err(OracleError::HorizonMismatch { expected: true_steps.len(), got: recovered.len() });
    }
    let steps: Vec<PoseError> =
        recovered.iter().zip(&true_steps).map(|(a, g)| pose_error(a.frame, &a.transform, g)).collect();
    let mut pose = truth.tool_poses[0];
    let cumulative: Vec<PoseError> = recovered
        .iter()
        .enumerate()
        .map(|(i, a)| {
            pose = a.transform.compose(&pose);
            pose_error(a.frame, &pose, &truth.tool_poses[i + 1])
        })
        .collect();
    let max_rot = cumulative.iter().map(|e| e.rotation_deg).fold(0.0, f64::max);
    let max_trans = cumulative.iter().map(|e| e.translation_m).fold(0.0, f64::max);
    let rotation_pass = max_rot < thresholds.rotation_deg;
    let translation_pass = max_trans < thresholds.translation_m;
    Ok(Evaluation {
        steps,
        cumulative,
        max_cumulative_rotation_deg: max_rot,
        max_cumulative_translation_m: max_trans,
        thresholds,
        rotation_pass,
        translation_pass,
        pass: rotation_pass && translation_pass,
    })
}

/// Ground-truth actions, with absolute poses and the true aperture attached.
pub fn truth_actions(truth: &GroundTruth) -> Vec<TcpAction> {
    truth
        .steps()
        .into_iter()
        .enumerate()
        .map(|(i, g)| TcpAction {
            frame: i + 1,
            transform: g,
            absolute_pose: Some(truth.tool_poses[i + 1]),
            gripper: Some(truth.aperture[i + 1]),
        })
        .collect()
}

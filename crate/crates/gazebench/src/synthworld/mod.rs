//! Deterministic synthetic session generator.
//!
//! A session simulates a wearer looking around a planar "stage" of targets
//! in front of them. The eye-level head camera rotates to loosely track the
//! gaze target; the neck camera sits a fixed drop below eye level and
//! follows the torso with slower, smaller motion. Both cameras render the
//! same landmark field plus a bright gaze-target blob, and both observe a
//! shared synchronization-marker screen during the opening seconds. The
//! neck stream is emitted with a configurable integer frame offset so the
//! annotation stage has real synchronization work to do.
//!
//! Everything is a pure function of [`SceneConfig`] (including its seed):
//! the same config produces byte-identical sessions.

pub mod files;
pub mod markers;

use nalgebra::{Matrix3, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{self, Intrinsics, PixelPoint, Pose};
use crate::tensor::FrameStack;

pub use markers::{decode_sync_marker, embed_sync_marker};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ViewId {
    Head,
    Neck,
}

impl ViewId {
    pub fn as_str(self) -> &'static str {
        match self {
            ViewId::Head => "head",
            ViewId::Neck => "neck",
        }
    }
}

impl std::fmt::Display for ViewId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Scene and rig parameters for one synthetic session.
///
/// The defaults are calibrated so that, over a long session, the neck view
/// shows a 14–18% out-of-bound gaze rate with an upward-skewed gaze
/// distribution while the head view stays essentially fully in-bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SceneConfig {
    pub fps: u32,
    pub duration_secs: f64,
    pub head_intrinsics: Intrinsics,
    pub neck_intrinsics: Intrinsics,
    /// Vertical drop of the neck camera below eye level, meters (y-down).
    pub neck_drop_m: f64,
    /// Fixed extra downward pitch of the neck camera, radians.
    pub neck_pitch_down_rad: f64,
    /// Per-frame head rotation jitter amplitude, radians.
    pub head_jitter_rad: f64,
    /// Per-frame neck rotation jitter amplitude, radians; must not exceed
    /// the head amplitude.
    pub neck_jitter_rad: f64,
    /// Closed range of fixation durations, seconds.
    pub fixation_secs: (f64, f64),
    /// Closed range of saccade displacements in stage-normalized units.
    pub saccade_range: (f64, f64),
    pub landmark_count: usize,
    pub seed: u64,
    /// Frame offset of the neck stream relative to the head stream;
    /// positive means the neck camera started recording earlier.
    pub neck_frame_offset: i64,
    /// Length of the marker screen at the start of the session, seconds of
    /// wall time.
    pub marker_window_secs: f64,
    /// Fraction of frames whose gaze sample gets an unreliable (low)
    /// tracker confidence.
    pub untracked_fraction: f64,
    /// Distance from the wearer to the target stage plane, meters.
    pub stage_depth_m: f64,
    /// Stage half-width, meters.
    pub stage_half_width_m: f64,
    /// Stage vertical extent relative to eye level, meters, y-down
    /// (negative is above eye level).
    pub stage_y_range_m: (f64, f64),
    /// Per-frame fraction of the remaining head orientation error removed.
    pub head_track_gain: f64,
    /// Same for the torso carrying the neck camera; smaller and smoother.
    pub neck_track_gain: f64,
}

fn default_intrinsics() -> Intrinsics {
    Intrinsics {
        fx: 48.0,
        fy: 48.0,
        cx: 40.0,
        cy: 32.0,
        width: 80,
        height: 64,
    }
}

impl Default for SceneConfig {
    fn default() -> Self {
        SceneConfig {
            fps: 20,
            duration_secs: 180.0,
            head_intrinsics: default_intrinsics(),
            neck_intrinsics: default_intrinsics(),
            neck_drop_m: 0.35,
            neck_pitch_down_rad: 0.18,
            head_jitter_rad: 0.004,
            neck_jitter_rad: 0.002,
            fixation_secs: (0.4, 1.2),
            saccade_range: (0.15, 0.55),
            landmark_count: 24,
            seed: 0,
            neck_frame_offset: 5,
            marker_window_secs: 2.0,
            untracked_fraction: 0.03,
            stage_depth_m: 2.0,
            stage_half_width_m: 0.85,
            stage_y_range_m: (-0.55, 0.45),
            head_track_gain: 0.35,
            neck_track_gain: 0.05,
        }
    }
}

impl SceneConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: &str| Err(Error::ConfigInvalid(msg.into()));
        if self.fps == 0 {
            return fail("fps must be positive");
        }
        if !(self.duration_secs > 0.0) {
            return fail("duration must be positive");
        }
        self.head_intrinsics.validate()?;
        self.neck_intrinsics.validate()?;
        for intr in [&self.head_intrinsics, &self.neck_intrinsics] {
            if (intr.width as usize) < markers::BLOCK_PX || (intr.height as usize) < markers::BLOCK_PX
            {
                return fail("image size too small for the marker block");
            }
        }
        if self.neck_jitter_rad > self.head_jitter_rad {
            return fail("neck motion amplitude must not exceed head motion amplitude");
        }
        if !(self.fixation_secs.0 > 0.0 && self.fixation_secs.0 <= self.fixation_secs.1) {
            return fail("fixation duration range is empty");
        }
        if !(self.saccade_range.0 > 0.0 && self.saccade_range.0 <= self.saccade_range.1) {
            return fail("saccade displacement range is empty");
        }
        if self.saccade_range.1 > 0.7 {
            return fail("saccade displacement above 0.7 cannot stay on the stage");
        }
        if !(0.0..=1.0).contains(&self.untracked_fraction) {
            return fail("untracked fraction must be in [0, 1]");
        }
        if !(self.marker_window_secs > 0.0) {
            return fail("marker window must be positive");
        }
        if !(self.stage_depth_m > 0.0 && self.stage_half_width_m > 0.0) {
            return fail("stage extents must be positive");
        }
        if !(self.stage_y_range_m.0 < self.stage_y_range_m.1) {
            return fail("stage y range is empty");
        }
        if !(self.head_track_gain > 0.0 && self.head_track_gain <= 1.0)
            || !(self.neck_track_gain > 0.0 && self.neck_track_gain <= 1.0)
        {
            return fail("tracking gains must be in (0, 1]");
        }
        let wall = self.frame_count() as i64 + self.neck_frame_offset.abs();
        if wall as u64 >= markers::CAPACITY as u64 {
            return fail("session too long for frame-unique marker ids");
        }
        Ok(())
    }

    pub fn frame_count(&self) -> usize {
        (self.fps as f64 * self.duration_secs).round() as usize
    }

    pub fn marker_window_frames(&self) -> usize {
        (self.fps as f64 * self.marker_window_secs).round() as usize
    }

    pub fn intrinsics(&self, view: ViewId) -> &Intrinsics {
        match view {
            ViewId::Head => &self.head_intrinsics,
            ViewId::Neck => &self.neck_intrinsics,
        }
    }
}

/// Per-frame gaze ground truth for one view, as stored in `gaze.jsonl`.
/// Coordinates are normalized by the view's image size and may leave
/// [0, 1] when the gaze is out of bounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RawGazeSample {
    pub frame: usize,
    pub view: ViewId,
    pub x: f64,
    pub y: f64,
    pub depth: f64,
    pub confidence: f64,
    pub in_bounds: bool,
}

/// A camera with its per-frame pose track.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraRig {
    pub intrinsics: Intrinsics,
    pub poses: Vec<Pose>,
}

/// One view's recorded stream.
#[derive(Debug, Clone, PartialEq)]
pub struct ViewStream {
    pub view: ViewId,
    pub rig: CameraRig,
    pub frames: FrameStack,
    pub samples: Vec<RawGazeSample>,
    /// Ground-truth 3D gaze target per frame, world coordinates.
    pub targets: Vec<Vector3<f64>>,
    /// Wall-clock marker id per frame (frame-unique within the stream).
    pub marker_ids: Vec<u32>,
    /// Leading frames that carry a visually embedded marker.
    pub embedded_len: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SessionRecord {
    pub config: SceneConfig,
    /// Applied inter-stream frame offset (head[i] pairs with neck[i + offset]).
    pub offset: i64,
    pub head: ViewStream,
    pub neck: ViewStream,
}

impl SessionRecord {
    pub fn view(&self, view: ViewId) -> &ViewStream {
        match view {
            ViewId::Head => &self.head,
            ViewId::Neck => &self.neck,
        }
    }

    /// Stream-local index ranges such that `head[head_start + k]` and
    /// `neck[head_start + k + offset]` observed the same wall frame.
    pub fn aligned_len(&self) -> usize {
        self.head.frames.len - self.offset.unsigned_abs() as usize
    }
}

fn derive_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ (stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15)))
}

/// Camera orientation looking along yaw (about the vertical, toward +x)
/// and pitch (positive looks down, y-down world), returned as the
/// world-to-camera rotation.
fn look_rotation(yaw: f64, pitch: f64) -> Matrix3<f64> {
    let dir = Vector3::new(
        yaw.sin() * pitch.cos(),
        pitch.sin(),
        yaw.cos() * pitch.cos(),
    );
    let right = Vector3::new(dir.z, 0.0, -dir.x).normalize();
    let down = dir.cross(&right);
    // Columns of the camera-to-world rotation are the camera axes.
    Matrix3::from_columns(&[right, down, dir]).transpose()
}

fn pose_at(position: Vector3<f64>, yaw: f64, pitch: f64) -> Pose {
    let rotation = look_rotation(yaw, pitch);
    let translation = -(rotation * position);
    Pose::new(rotation, translation).expect("look rotation is orthonormal")
}

struct WallSim {
    targets: Vec<Vector3<f64>>,
    head_angles: Vec<(f64, f64)>,
    neck_angles: Vec<(f64, f64)>,
    confidences: Vec<f64>,
}

/// Simulate the shared wall-clock timeline: target schedule, camera
/// orientation tracks and tracker confidences.
fn simulate_wall(config: &SceneConfig, wall_frames: usize) -> WallSim {
    let mut rng_gaze = derive_rng(config.seed, 1);
    let mut rng_head = derive_rng(config.seed, 2);
    let mut rng_neck = derive_rng(config.seed, 3);
    let mut rng_conf = derive_rng(config.seed, 4);

    let stage_point = |u: f64, v: f64| -> Vector3<f64> {
        Vector3::new(
            (u - 0.5) * 2.0 * config.stage_half_width_m,
            config.stage_y_range_m.0 + v * (config.stage_y_range_m.1 - config.stage_y_range_m.0),
            config.stage_depth_m,
        )
    };

    let min_frames = ((config.fixation_secs.0 * config.fps as f64).round() as usize).max(1);
    let max_frames = ((config.fixation_secs.1 * config.fps as f64).round() as usize).max(min_frames);

    let mut targets = Vec::with_capacity(wall_frames);
    let (mut u, mut v) = (rng_gaze.gen::<f64>(), rng_gaze.gen::<f64>());
    let mut remaining = rng_gaze.gen_range(min_frames..=max_frames);
    for _ in 0..wall_frames {
        if remaining == 0 {
            // Saccade: jump by a displacement inside the configured range,
            // staying on the stage.
            loop {
                let angle = rng_gaze.gen_range(0.0..std::f64::consts::TAU);
                let mag = rng_gaze.gen_range(config.saccade_range.0..=config.saccade_range.1);
                let (nu, nv) = (u + mag * angle.cos(), v + mag * angle.sin());
                if (0.0..=1.0).contains(&nu) && (0.0..=1.0).contains(&nv) {
                    u = nu;
                    v = nv;
                    break;
                }
            }
            remaining = rng_gaze.gen_range(min_frames..=max_frames);
        }
        targets.push(stage_point(u, v));
        remaining -= 1;
    }

    let head_pos = Vector3::zeros();
    let neck_pos = Vector3::new(0.0, config.neck_drop_m, 0.0);
    let desired = |pos: &Vector3<f64>, target: &Vector3<f64>| -> (f64, f64) {
        let d = target - pos;
        (d.x.atan2(d.z), d.y.atan2((d.x * d.x + d.z * d.z).sqrt()))
    };

    let mut head_angles = Vec::with_capacity(wall_frames);
    let mut neck_angles = Vec::with_capacity(wall_frames);
    let (mut hy, mut hp) = desired(&head_pos, &targets[0]);
    let (dny, _) = desired(&neck_pos, &targets[0]);
    let mut ny = dny;
    for target in &targets {
        let (dy, dp) = desired(&head_pos, target);
        hy += config.head_track_gain * (dy - hy)
            + rng_head.gen_range(-config.head_jitter_rad..=config.head_jitter_rad);
        hp += config.head_track_gain * (dp - hp)
            + rng_head.gen_range(-config.head_jitter_rad..=config.head_jitter_rad);
        head_angles.push((hy, hp));

        // The torso only turns in azimuth; the neck camera keeps its fixed
        // downward pitch plus jitter.
        let (dny, _) = desired(&neck_pos, target);
        ny += config.neck_track_gain * (dny - ny)
            + rng_neck.gen_range(-config.neck_jitter_rad..=config.neck_jitter_rad);
        let np = config.neck_pitch_down_rad
            + rng_neck.gen_range(-config.neck_jitter_rad..=config.neck_jitter_rad);
        neck_angles.push((ny, np));
    }

    let confidences = (0..wall_frames)
        .map(|_| {
            if rng_conf.gen::<f64>() < config.untracked_fraction {
                0.1
            } else {
                1.0
            }
        })
        .collect();

    WallSim {
        targets,
        head_angles,
        neck_angles,
        confidences,
    }
}

/// Generate one session. Deterministic in the config (seed included).
pub fn generate_session(config: &SceneConfig) -> Result<SessionRecord> {
    config.validate()?;

    let frames = config.frame_count();
    let offset = config.neck_frame_offset;
    let wall_frames = frames + offset.unsigned_abs() as usize;
    let window = config.marker_window_frames().min(wall_frames);

    let mut rng_scene = derive_rng(config.seed, 0);
    let landmarks: Vec<Vector3<f64>> = (0..config.landmark_count)
        .map(|_| {
            Vector3::new(
                rng_scene.gen_range(-1.6 * config.stage_half_width_m..=1.6 * config.stage_half_width_m),
                rng_scene.gen_range(config.stage_y_range_m.0 - 0.3..=config.stage_y_range_m.1 + 0.3),
                rng_scene.gen_range(config.stage_depth_m * 0.9..=config.stage_depth_m * 1.7),
            )
        })
        .collect();

    let sim = simulate_wall(config, wall_frames);

    let head_start = offset.max(0) as usize;
    let neck_start = (-offset).max(0) as usize;

    let head_pos = Vector3::zeros();
    let neck_pos = Vector3::new(0.0, config.neck_drop_m, 0.0);

    let head_poses: Vec<Pose> = (0..frames)
        .map(|i| {
            let (y, p) = sim.head_angles[head_start + i];
            pose_at(head_pos, y, p)
        })
        .collect();
    let neck_poses: Vec<Pose> = (0..frames)
        .map(|i| {
            let (y, p) = sim.neck_angles[neck_start + i];
            pose_at(neck_pos, y, p)
        })
        .collect();

    // Per-frame gaze for both views. The neck sample is derived from the
    // head sample through the cross-view mapping so the shared-3D-target
    // invariant holds by construction.
    let mut head_samples = Vec::with_capacity(frames);
    let mut neck_samples = Vec::with_capacity(frames);
    for i in 0..frames {
        let head_wall = head_start + i;
        let target = &sim.targets[head_wall];
        let conf = sim.confidences[head_wall];
        let head_intr = &config.head_intrinsics;
        let neck_intr = &config.neck_intrinsics;
        // The neck stream's own frame i observed a different wall instant;
        // its gaze row must describe that instant.
        let neck_wall = neck_start + i;
        let neck_target = &sim.targets[neck_wall];
        let neck_conf = sim.confidences[neck_wall];

        let head_sample = match geometry::project(target, head_intr, &head_poses[i]) {
            Ok((px, depth)) => RawGazeSample {
                frame: i,
                view: ViewId::Head,
                x: px.x / head_intr.width as f64,
                y: px.y / head_intr.height as f64,
                depth,
                confidence: conf,
                in_bounds: px.in_bounds,
            },
            Err(_) => RawGazeSample {
                frame: i,
                view: ViewId::Head,
                x: 0.0,
                y: 0.0,
                depth: 0.0,
                confidence: 0.0,
                in_bounds: false,
            },
        };
        head_samples.push(head_sample);

        // Gaze for the neck stream's frame i, from that wall instant's
        // head observation mapped across views.
        let head_pose_for_neck_wall = {
            let (y, p) = sim.head_angles[neck_wall];
            pose_at(head_pos, y, p)
        };
        let neck_depth = neck_poses[i].to_camera(neck_target).z;
        let mapped = geometry::project(neck_target, head_intr, &head_pose_for_neck_wall)
            .and_then(|(px, depth)| {
                geometry::map_gaze_cross_view(
                    &px,
                    depth,
                    (head_intr, &head_pose_for_neck_wall),
                    (neck_intr, &neck_poses[i]),
                )
            })
            .or_else(|_| {
                geometry::project(neck_target, neck_intr, &neck_poses[i]).map(|(px, _)| px)
            });
        let neck_sample = match mapped {
            Ok(px) => RawGazeSample {
                frame: i,
                view: ViewId::Neck,
                x: px.x / neck_intr.width as f64,
                y: px.y / neck_intr.height as f64,
                depth: neck_depth,
                confidence: neck_conf,
                in_bounds: px.in_bounds,
            },
            Err(_) => RawGazeSample {
                frame: i,
                view: ViewId::Neck,
                x: 0.0,
                y: 0.0,
                depth: neck_depth,
                confidence: 0.0,
                in_bounds: false,
            },
        };
        neck_samples.push(neck_sample);
    }

    let render_stream = |start: usize,
                         intr: &Intrinsics,
                         poses: &[Pose]|
     -> Result<(FrameStack, Vec<u32>, usize)> {
        let (h, w) = (intr.height as usize, intr.width as usize);
        let mut stack = FrameStack::zeros(frames, h, w);
        let mut marker_ids = Vec::with_capacity(frames);
        let embedded_len = window.saturating_sub(start).min(frames);
        for i in 0..frames {
            let wall = start + i;
            let target = &sim.targets[wall];
            render_frame_into(stack.frame_mut(i), &landmarks, target, intr, &poses[i]);
            marker_ids.push(wall as u32);
            if wall < window {
                embed_sync_marker(stack.frame_mut(i), w, h, wall as u32)?;
            }
        }
        Ok((stack, marker_ids, embedded_len))
    };

    let (head_frames, head_ids, head_embedded) =
        render_stream(head_start, &config.head_intrinsics, &head_poses)?;
    let (neck_frames, neck_ids, neck_embedded) =
        render_stream(neck_start, &config.neck_intrinsics, &neck_poses)?;

    let head_targets = (0..frames).map(|i| sim.targets[head_start + i]).collect();
    let neck_targets = (0..frames).map(|i| sim.targets[neck_start + i]).collect();

    Ok(SessionRecord {
        config: config.clone(),
        offset,
        head: ViewStream {
            view: ViewId::Head,
            rig: CameraRig {
                intrinsics: config.head_intrinsics,
                poses: head_poses,
            },
            frames: head_frames,
            samples: head_samples,
            targets: head_targets,
            marker_ids: head_ids,
            embedded_len: head_embedded,
        },
        neck: ViewStream {
            view: ViewId::Neck,
            rig: CameraRig {
                intrinsics: config.neck_intrinsics,
                poses: neck_poses,
            },
            frames: neck_frames,
            samples: neck_samples,
            targets: neck_targets,
            marker_ids: neck_ids,
            embedded_len: neck_embedded,
        },
    })
}

const LANDMARK_PEAK: f64 = 0.35;
const LANDMARK_SIGMA: f64 = 1.2;
const TARGET_PEAK: f64 = 1.0;
const TARGET_SIGMA: f64 = 1.8;
const TARGET_RING_PEAK: f64 = 0.75;
const TARGET_RING_SIGMA: f64 = 0.9;
const TARGET_RING_OFFSET: f64 = 4.0;

fn splat(frame: &mut [f32], w: usize, h: usize, px: &PixelPoint, peak: f64, sigma: f64) {
    let radius = (3.0 * sigma).ceil() as i64;
    let cx = px.x.round() as i64;
    let cy = px.y.round() as i64;
    for y in (cy - radius).max(0)..=(cy + radius).min(h as i64 - 1) {
        for x in (cx - radius).max(0)..=(cx + radius).min(w as i64 - 1) {
            let dx = x as f64 - px.x;
            let dy = y as f64 - px.y;
            let v = peak * (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
            let cell = &mut frame[y as usize * w + x as usize];
            *cell = (*cell as f64 + v).min(1.0) as f32;
        }
    }
}

fn render_frame_into(
    frame: &mut [f32],
    landmarks: &[Vector3<f64>],
    gaze_target: &Vector3<f64>,
    intr: &Intrinsics,
    pose: &Pose,
) {
    let (h, w) = (intr.height as usize, intr.width as usize);
    for lm in landmarks {
        if let Ok((px, _)) = geometry::project(lm, intr, pose) {
            splat(frame, w, h, &px, LANDMARK_PEAK, LANDMARK_SIGMA);
        }
    }
    if let Ok((px, _)) = geometry::project(gaze_target, intr, pose) {
        // Distinctive pattern for the gaze target: a bright core with four
        // satellite dots.
        splat(frame, w, h, &px, TARGET_PEAK, TARGET_SIGMA);
        for (dx, dy) in [(1.0, 0.0), (-1.0, 0.0), (0.0, 1.0), (0.0, -1.0)] {
            let sat = PixelPoint {
                x: px.x + dx * TARGET_RING_OFFSET,
                y: px.y + dy * TARGET_RING_OFFSET,
                in_bounds: false,
            };
            splat(frame, w, h, &sat, TARGET_RING_PEAK, TARGET_RING_SIGMA);
        }
    }
}

/// Render a single frame of landmark blobs plus the gaze-target pattern.
/// Off-frustum points contribute nothing.
pub fn render_frame(
    landmarks: &[Vector3<f64>],
    gaze_target: &Vector3<f64>,
    intr: &Intrinsics,
    pose: &Pose,
) -> FrameStack {
    let (h, w) = (intr.height as usize, intr.width as usize);
    let mut stack = FrameStack::zeros(1, h, w);
    render_frame_into(stack.frame_mut(0), landmarks, gaze_target, intr, pose);
    stack
}

#[cfg(test)]
mod tests {
    use super::*;

    fn short_config() -> SceneConfig {
        SceneConfig {
            duration_secs: 6.0,
            seed: 42,
            ..SceneConfig::default()
        }
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let config = short_config();
        let a = generate_session(&config).unwrap();
        let b = generate_session(&config).unwrap();
        assert_eq!(a, b);
        let c = generate_session(&SceneConfig {
            seed: 43,
            ..config
        })
        .unwrap();
        assert_ne!(a.head.frames, c.head.frames);
    }

    #[test]
    fn streams_have_equal_length_and_offset_is_recorded() {
        let config = short_config();
        let s = generate_session(&config).unwrap();
        assert_eq!(s.head.frames.len, s.neck.frames.len);
        assert_eq!(s.offset, config.neck_frame_offset);
        assert_eq!(s.aligned_len(), config.frame_count() - 5);
        assert_eq!(s.head.samples.len(), s.head.frames.len);
        assert_eq!(s.neck.samples.len(), s.neck.frames.len);
    }

    #[test]
    fn marker_ids_are_frame_unique_and_aligned_by_wall_clock() {
        let config = short_config();
        let s = generate_session(&config).unwrap();
        let mut seen = std::collections::HashSet::new();
        assert!(s.head.marker_ids.iter().all(|id| seen.insert(*id)));
        // head[i] and neck[i + offset] share a wall frame.
        let d = s.offset as usize;
        for i in 0..s.aligned_len() {
            assert_eq!(s.head.marker_ids[i], s.neck.marker_ids[i + d]);
        }
    }

    #[test]
    fn embedded_markers_decode_to_their_ids() {
        let config = short_config();
        let s = generate_session(&config).unwrap();
        for stream in [&s.head, &s.neck] {
            assert!(stream.embedded_len > 0);
            let (h, w) = (stream.frames.h, stream.frames.w);
            for i in 0..stream.embedded_len {
                assert_eq!(
                    decode_sync_marker(stream.frames.frame(i), w, h),
                    Some(stream.marker_ids[i])
                );
            }
            assert_eq!(
                decode_sync_marker(stream.frames.frame(stream.embedded_len), w, h),
                None
            );
        }
    }

    #[test]
    fn neck_sample_equals_cross_view_mapping_of_head_sample() {
        let config = short_config();
        let s = generate_session(&config).unwrap();
        let d = s.offset as usize;
        let head_intr = &s.head.rig.intrinsics;
        let neck_intr = &s.neck.rig.intrinsics;
        let mut checked = 0;
        for i in 0..s.aligned_len() {
            let hs = &s.head.samples[i];
            let ns = &s.neck.samples[i + d];
            if !hs.in_bounds || hs.confidence == 0.0 || ns.confidence == 0.0 {
                continue;
            }
            let gaze = PixelPoint::new(
                hs.x * head_intr.width as f64,
                hs.y * head_intr.height as f64,
                head_intr,
            );
            let mapped = geometry::map_gaze_cross_view(
                &gaze,
                hs.depth,
                (head_intr, &s.head.rig.poses[i]),
                (neck_intr, &s.neck.rig.poses[i + d]),
            )
            .unwrap();
            assert!(
                (mapped.x / neck_intr.width as f64 - ns.x).abs() < 1e-9
                    && (mapped.y / neck_intr.height as f64 - ns.y).abs() < 1e-9,
                "frame {i}: mapped ({}, {}) vs stored ({}, {})",
                mapped.x,
                mapped.y,
                ns.x * neck_intr.width as f64,
                ns.y * neck_intr.height as f64
            );
            checked += 1;
        }
        assert!(checked > 50);
    }

    #[test]
    fn fixations_are_static_and_saccades_stay_in_range() {
        let config = short_config();
        let s = generate_session(&config).unwrap();
        let span_x = 2.0 * config.stage_half_width_m;
        let span_y = config.stage_y_range_m.1 - config.stage_y_range_m.0;
        let mut saw_saccade = false;
        for pair in s.head.targets.windows(2) {
            let (a, b) = (&pair[0], &pair[1]);
            if a == b {
                continue;
            }
            saw_saccade = true;
            let du = (b.x - a.x) / span_x;
            let dv = (b.y - a.y) / span_y;
            let disp = (du * du + dv * dv).sqrt();
            assert!(
                disp >= config.saccade_range.0 - 1e-9 && disp <= config.saccade_range.1 + 1e-9,
                "saccade displacement {disp} outside configured range"
            );
        }
        assert!(saw_saccade);
    }

    #[test]
    fn large_pitch_down_raises_neck_oob_above_head() {
        let config = SceneConfig {
            neck_pitch_down_rad: 0.5,
            ..short_config()
        };
        let s = generate_session(&config).unwrap();
        let oob = |stream: &ViewStream| {
            let valid = stream
                .samples
                .iter()
                .filter(|s| s.confidence >= 0.5)
                .count();
            let out = stream
                .samples
                .iter()
                .filter(|s| s.confidence >= 0.5 && !s.in_bounds)
                .count();
            out as f64 / valid as f64
        };
        assert!(oob(&s.neck) > oob(&s.head));
    }

    #[test]
    fn render_frame_edge_cases() {
        let intr = default_intrinsics();
        let pose = Pose::identity();
        // No landmarks, target behind the camera: all-zero frame.
        let behind = Vector3::new(0.0, 0.0, -1.0);
        let frame = render_frame(&[], &behind, &intr, &pose);
        assert!(frame.data.iter().all(|&v| v == 0.0));

        // Single landmark on the principal axis: argmax at the principal
        // point.
        let frame = render_frame(&[Vector3::new(0.0, 0.0, 2.0)], &behind, &intr, &pose);
        let (w, _) = (intr.width as usize, intr.height as usize);
        let argmax = frame
            .data
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.total_cmp(b.1))
            .unwrap()
            .0;
        assert_eq!((argmax % w, argmax / w), (intr.cx as usize, intr.cy as usize));
    }

    #[test]
    fn target_renders_a_local_maximum_at_its_projection() {
        let intr = default_intrinsics();
        let pose = Pose::identity();
        let target = Vector3::new(0.2, -0.1, 2.0);
        let (px, _) = geometry::project(&target, &intr, &pose).unwrap();
        let frame = render_frame(&[], &target, &intr, &pose);
        let w = intr.width as usize;
        let (cx, cy) = (px.x.round() as usize, px.y.round() as usize);
        let center = frame.data[cy * w + cx];
        for dy in -1i64..=1 {
            for dx in -1i64..=1 {
                let y = (cy as i64 + dy) as usize;
                let x = (cx as i64 + dx) as usize;
                assert!(frame.data[y * w + x] <= center);
            }
        }
        assert!((px.x - cx as f64).abs() <= 1.0 && (px.y - cy as f64).abs() <= 1.0);
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut c = SceneConfig::default();
        c.fps = 0;
        assert!(matches!(
            generate_session(&c).unwrap_err(),
            Error::ConfigInvalid(_)
        ));
        let mut c = SceneConfig::default();
        c.neck_jitter_rad = c.head_jitter_rad * 2.0;
        assert!(c.validate().is_err());
        let mut c = SceneConfig::default();
        c.fixation_secs = (0.8, 0.2);
        assert!(c.validate().is_err());
    }
}

//! Gaze annotation pipeline: temporal synchronization, event labeling,
//! heatmap target generation, clip segmentation, frame sampling and crop
//! augmentation.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::synthworld::{RawGazeSample, ViewId};
use crate::tensor::{ClipTensor, FrameStack, Grid};

/// Thresholds and preprocessing knobs. The displacement threshold is in
/// normalized image units per frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AnnotationConfig {
    pub conf_threshold: f64,
    pub disp_threshold: f64,
    /// Gaussian target width in pixels.
    pub sigma_px: f64,
    pub clip_len_secs: f64,
    /// Frames sampled per clip (T).
    pub frames_per_clip: usize,
    /// Stride between sampled frames.
    pub frame_stride: usize,
    /// Width of the left/center/right crop window in pixels.
    pub crop_width: usize,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        AnnotationConfig {
            conf_threshold: 0.5,
            disp_threshold: 0.05,
            sigma_px: 3.0,
            clip_len_secs: 5.0,
            frames_per_clip: 8,
            frame_stride: 8,
            crop_width: 64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GazeLabel {
    Fixation,
    Saccade,
    Truncated,
    Untracked,
}

impl GazeLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            GazeLabel::Fixation => "fixation",
            GazeLabel::Saccade => "saccade",
            GazeLabel::Truncated => "truncated",
            GazeLabel::Untracked => "untracked",
        }
    }
}

/// A labeled per-frame gaze sample. Coordinates are normalized to the
/// image size and may leave [0, 1] for out-of-bounds gaze.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GazeSample {
    pub frame: usize,
    pub view: ViewId,
    pub x: f64,
    pub y: f64,
    pub confidence: f64,
    pub in_bounds: bool,
    pub label: GazeLabel,
}

/// In-view flag for the auxiliary classifier: fixation/saccade count as
/// in-view, truncated/untracked as out-of-view.
pub fn in_view_label(sample: &GazeSample) -> bool {
    matches!(sample.label, GazeLabel::Fixation | GazeLabel::Saccade)
}

/// Label one raw sample given the previously labeled one.
///
/// Untracked wins when the tracker confidence is below threshold; gaze
/// outside the image is truncated; otherwise the inter-frame displacement
/// rule separates saccades from fixations. The first valid frame of a
/// stream defaults to fixation.
pub fn classify_gaze_event(
    prev: Option<&GazeSample>,
    cur: &RawGazeSample,
    cfg: &AnnotationConfig,
) -> GazeLabel {
    if cur.confidence < cfg.conf_threshold {
        return GazeLabel::Untracked;
    }
    if !cur.in_bounds {
        return GazeLabel::Truncated;
    }
    if let Some(prev) = prev {
        if matches!(prev.label, GazeLabel::Fixation | GazeLabel::Saccade) {
            let (dx, dy) = (cur.x - prev.x, cur.y - prev.y);
            if (dx * dx + dy * dy).sqrt() > cfg.disp_threshold {
                return GazeLabel::Saccade;
            }
        }
    }
    GazeLabel::Fixation
}

/// Label a whole stream in order.
pub fn label_stream(raw: &[RawGazeSample], cfg: &AnnotationConfig) -> Vec<GazeSample> {
    let mut out: Vec<GazeSample> = Vec::with_capacity(raw.len());
    for cur in raw {
        let label = classify_gaze_event(out.last(), cur, cfg);
        out.push(GazeSample {
            frame: cur.frame,
            view: cur.view,
            x: cur.x,
            y: cur.y,
            confidence: cur.confidence,
            in_bounds: cur.in_bounds,
            label,
        });
    }
    out
}

/// Recover the offset δ such that `ids_a[i] == ids_b[i + δ]` over the
/// maximal overlap, requiring at least three matching markers.
pub fn synchronize(ids_a: &[u32], ids_b: &[u32]) -> Result<i64> {
    const MIN_MATCHES: usize = 3;
    if ids_a.is_empty() || ids_b.is_empty() {
        return Err(Error::NoOverlap {
            required: MIN_MATCHES,
        });
    }
    let mut best_count = 0usize;
    let mut best_delta = 0i64;
    let mut tied = false;
    for delta in -(ids_a.len() as i64 - 1)..=(ids_b.len() as i64 - 1) {
        let mut count = 0;
        for (i, a) in ids_a.iter().enumerate() {
            let j = i as i64 + delta;
            if j >= 0 && (j as usize) < ids_b.len() && *a == ids_b[j as usize] {
                count += 1;
            }
        }
        if count > best_count {
            best_count = count;
            best_delta = delta;
            tied = false;
        } else if count == best_count && count > 0 {
            tied = true;
        }
    }
    if best_count < MIN_MATCHES {
        return Err(Error::NoOverlap {
            required: MIN_MATCHES,
        });
    }
    if tied {
        return Err(Error::AmbiguousSync);
    }
    Ok(best_delta)
}

/// Round-half-away-from-zero rasterization of a normalized coordinate to a
/// valid pixel index.
pub fn rasterize(coord: f64, size: usize) -> usize {
    let raw = (coord * size as f64 - 0.5).round();
    raw.clamp(0.0, size as f64 - 1.0) as usize
}

/// Per-frame supervision target.
///
/// Fixation/saccade samples get a discretized isotropic Gaussian centered
/// at the rasterized gaze pixel, renormalized to sum 1; truncated and
/// untracked samples get the uniform map.
pub fn make_heatmap_target(sample: &GazeSample, h: usize, w: usize, sigma: f64) -> Grid {
    debug_assert!(h >= 4 && w >= 4 && sigma > 0.0);
    let mut grid = Grid::zeros(h, w);
    if !in_view_label(sample) {
        grid.fill(1.0 / (h * w) as f64);
        return grid;
    }
    let px = rasterize(sample.x, w) as f64;
    let py = rasterize(sample.y, h) as f64;
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut sum = 0.0;
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - px, y as f64 - py);
            let v = (-(dx * dx + dy * dy) * inv).exp();
            grid.data[y * w + x] = v;
            sum += v;
        }
    }
    grid.data.iter_mut().for_each(|v| *v /= sum);
    grid
}

/// A fixed-length window of one session view. `start` is a stream-local
/// frame index; `samples` and `in_view` run over the window.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    pub session: String,
    pub view: ViewId,
    pub start: usize,
    pub len: usize,
    pub samples: Vec<GazeSample>,
    pub in_view: Vec<bool>,
}

impl Clip {
    pub fn new(session: String, view: ViewId, start: usize, samples: Vec<GazeSample>) -> Self {
        let in_view = samples.iter().map(in_view_label).collect();
        Clip {
            session,
            view,
            len: samples.len(),
            start,
            samples,
            in_view,
        }
    }
}

/// Cut a labeled stream into consecutive non-overlapping clips of
/// `clip_len_secs`; a trailing remainder shorter than a clip is dropped.
pub fn segment_clips(
    samples: &[GazeSample],
    session: &str,
    view: ViewId,
    fps: u32,
    clip_len_secs: f64,
) -> Result<Vec<Clip>> {
    let frames_f = clip_len_secs * fps as f64;
    if !(frames_f > 0.0) || frames_f.fract() != 0.0 {
        return Err(Error::ConfigInvalid(format!(
            "clip length of {clip_len_secs}s is not a whole number of frames at {fps} fps"
        )));
    }
    let clip_frames = frames_f as usize;
    Ok(samples
        .chunks_exact(clip_frames)
        .enumerate()
        .map(|(k, chunk)| {
            Clip::new(
                session.to_string(),
                view,
                k * clip_frames,
                chunk.to_vec(),
            )
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleMode {
    Train,
    Eval,
}

/// Pick T frame indices at a fixed stride within a clip. Training draws a
/// uniform start; evaluation is pinned to the clip start.
pub fn sample_frames<R: Rng>(
    clip: &Clip,
    t: usize,
    stride: usize,
    mode: SampleMode,
    rng: &mut R,
) -> Result<Vec<usize>> {
    let span = (t - 1) * stride + 1;
    if clip.len < span {
        return Err(Error::ClipTooShort {
            len: clip.len,
            required: span,
        });
    }
    let start = match mode {
        SampleMode::Eval => 0,
        SampleMode::Train => rng.gen_range(0..=clip.len - span),
    };
    Ok((0..t).map(|i| start + i * stride).collect())
}

/// Pull the sampled frames of a clip out of its session frame stack,
/// widened to `f64`, full width; `indices` are clip-local.
pub fn extract_frames(stack: &FrameStack, clip: &Clip, indices: &[usize]) -> ClipTensor {
    let mut out = ClipTensor::zeros(indices.len(), stack.h, stack.w);
    for (i, &local) in indices.iter().enumerate() {
        let src = stack.frame(clip.start + local);
        for (d, s) in out.frame_mut(i).iter_mut().zip(src) {
            *d = *s as f64;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CropMode {
    Left,
    Center,
    Right,
}

/// X origin of the crop window.
pub fn crop_origin(mode: CropMode, width: usize, crop_w: usize) -> usize {
    match mode {
        CropMode::Left => 0,
        CropMode::Center => (width - crop_w) / 2,
        CropMode::Right => width - crop_w,
    }
}

/// Crop frames to `crop_w` columns and renormalize gaze coordinates to the
/// crop. In-view samples whose gaze leaves the crop are relabeled
/// truncated.
pub fn crop_augment(
    frames: &ClipTensor,
    samples: &[GazeSample],
    mode: CropMode,
    crop_w: usize,
) -> Result<(ClipTensor, Vec<GazeSample>)> {
    if crop_w > frames.w {
        return Err(Error::ShapeMismatch(format!(
            "crop width {crop_w} exceeds frame width {}",
            frames.w
        )));
    }
    let x0 = crop_origin(mode, frames.w, crop_w);
    let mut cropped = ClipTensor::zeros(frames.t, frames.h, crop_w);
    for i in 0..frames.t {
        let src = frames.frame(i);
        let dst = cropped.frame_mut(i);
        for y in 0..frames.h {
            dst[y * crop_w..(y + 1) * crop_w]
                .copy_from_slice(&src[y * frames.w + x0..y * frames.w + x0 + crop_w]);
        }
    }
    let out_samples = samples
        .iter()
        .map(|s| {
            let x = (s.x * frames.w as f64 - x0 as f64) / crop_w as f64;
            let in_bounds = (0.0..1.0).contains(&x) && (0.0..1.0).contains(&s.y);
            let label = match s.label {
                GazeLabel::Fixation | GazeLabel::Saccade if !in_bounds => GazeLabel::Truncated,
                l => l,
            };
            GazeSample {
                x,
                in_bounds,
                label,
                ..*s
            }
        })
        .collect();
    Ok((cropped, out_samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> AnnotationConfig {
        AnnotationConfig {
            disp_threshold: 0.02,
            ..AnnotationConfig::default()
        }
    }

    fn raw(x: f64, y: f64, confidence: f64) -> RawGazeSample {
        RawGazeSample {
            frame: 0,
            view: ViewId::Head,
            x,
            y,
            depth: 1.0,
            confidence,
            in_bounds: (0.0..1.0).contains(&x) && (0.0..1.0).contains(&y),
        }
    }

    fn labeled(x: f64, y: f64, label: GazeLabel) -> GazeSample {
        GazeSample {
            frame: 0,
            view: ViewId::Head,
            x,
            y,
            confidence: 1.0,
            in_bounds: (0.0..1.0).contains(&x) && (0.0..1.0).contains(&y),
            label,
        }
    }

    #[test]
    fn event_rules_are_forced() {
        let c = cfg();
        let prev = labeled(0.5, 0.5, GazeLabel::Fixation);
        assert_eq!(
            classify_gaze_event(Some(&prev), &raw(0.505, 0.5, 1.0), &c),
            GazeLabel::Fixation
        );
        assert_eq!(
            classify_gaze_event(Some(&prev), &raw(0.6, 0.5, 1.0), &c),
            GazeLabel::Saccade
        );
        assert_eq!(
            classify_gaze_event(Some(&prev), &raw(1.2, 0.5, 1.0), &c),
            GazeLabel::Truncated
        );
        assert_eq!(
            classify_gaze_event(Some(&prev), &raw(0.6, 0.5, 0.1), &c),
            GazeLabel::Untracked
        );
        // First valid frame defaults to fixation.
        assert_eq!(classify_gaze_event(None, &raw(0.9, 0.9, 1.0), &c), GazeLabel::Fixation);
        // A jump from an untracked previous frame is not a saccade.
        let prev = labeled(0.1, 0.1, GazeLabel::Untracked);
        assert_eq!(
            classify_gaze_event(Some(&prev), &raw(0.9, 0.9, 1.0), &c),
            GazeLabel::Fixation
        );
    }

    #[test]
    fn synchronize_examples() {
        assert_eq!(synchronize(&[5, 6, 7, 8], &[3, 4, 5, 6, 7, 8, 9]).unwrap(), 2);
        assert_eq!(synchronize(&[1, 2, 3, 4], &[1, 2, 3, 4]).unwrap(), 0);
        assert_eq!(synchronize(&[3, 4, 5, 6, 7], &[5, 6, 7]).unwrap(), -2);
    }

    #[test]
    fn synchronize_failure_modes() {
        assert!(matches!(
            synchronize(&[1, 2, 3], &[7, 8, 9]).unwrap_err(),
            Error::NoOverlap { .. }
        ));
        assert!(matches!(
            synchronize(&[], &[1, 2, 3]).unwrap_err(),
            Error::NoOverlap { .. }
        ));
        // Only two matches is not enough.
        assert!(synchronize(&[1, 2], &[1, 2]).is_err());
        // Repeated markers (corrupt input) tie several offsets.
        assert!(matches!(
            synchronize(&[1, 1, 1, 1, 1], &[1, 1, 1, 1, 1, 1]).unwrap_err(),
            Error::AmbiguousSync
        ));
    }

    #[test]
    fn heatmap_target_uniform_for_truncated() {
        let s = labeled(1.2, 0.5, GazeLabel::Truncated);
        let g = make_heatmap_target(&s, 64, 64, 3.0);
        let expect = 1.0 / 4096.0;
        assert!(g.data.iter().all(|&v| v == expect));
    }

    #[test]
    fn heatmap_target_gaussian_geometry() {
        let s = labeled(0.5, 0.5, GazeLabel::Fixation);
        let g = make_heatmap_target(&s, 64, 64, 3.0);
        assert_eq!(g.argmax(), (32, 32));
        assert!((g.sum() - 1.0).abs() < 1e-6);

        let s = labeled(0.25, 0.75, GazeLabel::Fixation);
        let g = make_heatmap_target(&s, 64, 64, 3.0);
        assert_eq!(g.argmax(), (48, 16));
        // At least 98% of the mass lies within 3 sigma of the center.
        let (cy, cx) = (48.0, 16.0);
        let mut near = 0.0;
        for y in 0..64 {
            for x in 0..64 {
                let d2 = (x as f64 - cx).powi(2) + (y as f64 - cy).powi(2);
                if d2.sqrt() <= 9.0 {
                    near += g.at(y, x);
                }
            }
        }
        assert!(near >= 0.98);
    }

    #[test]
    fn segment_clips_counts() {
        let mk = |n: usize| -> Vec<GazeSample> {
            (0..n)
                .map(|i| GazeSample {
                    frame: i,
                    ..labeled(0.5, 0.5, GazeLabel::Fixation)
                })
                .collect()
        };
        let clips = segment_clips(&mk(240), "s", ViewId::Head, 20, 5.0).unwrap();
        assert_eq!(clips.len(), 2);
        assert!(clips.iter().all(|c| c.len == 100));
        assert_eq!(clips[1].start, 100);
        assert!(segment_clips(&mk(99), "s", ViewId::Head, 20, 5.0)
            .unwrap()
            .is_empty());
        // Non-integral clip length in frames is a config error.
        assert!(segment_clips(&mk(100), "s", ViewId::Head, 7, 5.5).is_err());
    }

    #[test]
    fn sample_frames_modes() {
        let clip = Clip::new(
            "s".into(),
            ViewId::Head,
            0,
            (0..100)
                .map(|i| GazeSample {
                    frame: i,
                    ..labeled(0.5, 0.5, GazeLabel::Fixation)
                })
                .collect(),
        );
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let eval = sample_frames(&clip, 8, 8, SampleMode::Eval, &mut rng).unwrap();
        assert_eq!(eval, vec![0, 8, 16, 24, 32, 40, 48, 56]);

        let short = Clip {
            len: 57,
            samples: clip.samples[..57].to_vec(),
            in_view: clip.in_view[..57].to_vec(),
            ..clip.clone()
        };
        let idx = sample_frames(&short, 8, 8, SampleMode::Train, &mut rng).unwrap();
        assert_eq!(idx, eval);

        let too_short = Clip {
            len: 56,
            samples: clip.samples[..56].to_vec(),
            in_view: clip.in_view[..56].to_vec(),
            ..clip.clone()
        };
        assert!(matches!(
            sample_frames(&too_short, 8, 8, SampleMode::Train, &mut rng).unwrap_err(),
            Error::ClipTooShort { len: 56, required: 57 }
        ));

        // Train starts stay within bounds and eventually vary.
        let mut starts = std::collections::HashSet::new();
        for _ in 0..50 {
            let idx = sample_frames(&clip, 8, 8, SampleMode::Train, &mut rng).unwrap();
            assert!(idx[7] < 100);
            starts.insert(idx[0]);
        }
        assert!(starts.len() > 5);
    }

    #[test]
    fn crop_windows_and_relabeling() {
        assert_eq!(crop_origin(CropMode::Left, 96, 64), 0);
        assert_eq!(crop_origin(CropMode::Center, 96, 64), 16);
        assert_eq!(crop_origin(CropMode::Right, 96, 64), 32);

        let frames = ClipTensor::zeros(1, 4, 96);
        // Gaze at pixel x=10 leaves a right crop.
        let s = labeled(10.0 / 96.0, 0.5, GazeLabel::Fixation);
        let (_, out) = crop_augment(&frames, &[s], CropMode::Right, 64).unwrap();
        assert_eq!(out[0].label, GazeLabel::Truncated);
        assert!(!out[0].in_bounds);

        // Gaze at pixel x=48 under a center crop lands at normalized 0.5.
        let s = labeled(48.0 / 96.0, 0.5, GazeLabel::Fixation);
        let (_, out) = crop_augment(&frames, &[s], CropMode::Center, 64).unwrap();
        assert!((out[0].x - 0.5).abs() < 1e-12);
        assert_eq!(out[0].label, GazeLabel::Fixation);

        assert!(crop_augment(&frames, &[s], CropMode::Center, 97).is_err());
    }

    #[test]
    fn crop_then_uncrop_restores_coordinates() {
        let frames = ClipTensor::zeros(1, 4, 80);
        let crop_w = 64usize;
        for mode in [CropMode::Left, CropMode::Center, CropMode::Right] {
            let x0 = crop_origin(mode, 80, crop_w) as f64;
            for k in 0..50 {
                let x = 0.01 + 0.98 * (k as f64 / 49.0);
                let s = labeled(x, 0.4, GazeLabel::Fixation);
                let (_, out) = crop_augment(&frames, &[s], mode, crop_w).unwrap();
                let restored = (out[0].x * crop_w as f64 + x0) / 80.0;
                assert!((restored - x).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn crop_copies_the_right_pixels() {
        let mut frames = ClipTensor::zeros(1, 2, 8);
        for (i, v) in frames.frame_mut(0).iter_mut().enumerate() {
            *v = i as f64;
        }
        let (c, _) = crop_augment(&frames, &[], CropMode::Right, 4).unwrap();
        assert_eq!(c.frame(0), &[4.0, 5.0, 6.0, 7.0, 12.0, 13.0, 14.0, 15.0]);
    }

    #[test]
    fn in_view_labels() {
        assert!(in_view_label(&labeled(0.5, 0.5, GazeLabel::Fixation)));
        assert!(in_view_label(&labeled(0.5, 0.5, GazeLabel::Saccade)));
        assert!(!in_view_label(&labeled(1.5, 0.5, GazeLabel::Truncated)));
        assert!(!in_view_label(&labeled(0.5, 0.5, GazeLabel::Untracked)));
    }

    #[test]
    fn rasterization_examples() {
        assert_eq!(rasterize(0.5, 64), 32);
        assert_eq!(rasterize(0.25, 64), 16);
        assert_eq!(rasterize(0.75, 64), 48);
        assert_eq!(rasterize(0.0, 64), 0);
        assert_eq!(rasterize(0.9999, 64), 63);
        // Clamped outside the image.
        assert_eq!(rasterize(-0.3, 64), 0);
        assert_eq!(rasterize(1.7, 64), 63);
    }
}

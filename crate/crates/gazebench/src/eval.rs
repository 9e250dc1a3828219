//! Evaluation protocol: adaptive F1 over a fixed threshold set on
//! fixation/in-view frames, pixel confusion matrices, classifier metrics
//! and dataset statistics, plus CSV/JSON/SVG reporters.

use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{
    crop_augment, extract_frames, in_view_label, rasterize, sample_frames, AnnotationConfig,
    CropMode, GazeLabel, GazeSample, SampleMode,
};
use crate::error::{Error, Result};
use crate::model::{forward, ParamSet};
use crate::synthworld::ViewId;
use crate::tensor::Grid;
use crate::training::{EpochStats, TrainClip};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ThresholdMode {
    /// Binarize at τ · max(map), per frame.
    Relative,
    /// Binarize at τ directly.
    Absolute,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    pub thresholds: Vec<f64>,
    pub threshold_mode: ThresholdMode,
    /// Radius of the ground-truth disc in pixels (2σ of the training
    /// Gaussian by default).
    pub gt_radius_px: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            thresholds: (1..10).map(|i| i as f64 / 10.0).collect(),
            threshold_mode: ThresholdMode::Relative,
            gt_radius_px: 6.0,
        }
    }
}

/// Binary pixel mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn count(&self) -> u64 {
        self.data.iter().filter(|&&b| b).count() as u64
    }
}

/// Disc of the given radius around the rasterized gaze pixel, clipped to
/// the image.
pub fn gt_mask(sample: &GazeSample, h: usize, w: usize, radius: f64) -> Mask {
    let cx = rasterize(sample.x, w) as i64;
    let cy = rasterize(sample.y, h) as i64;
    let r2 = radius * radius;
    let mut data = vec![false; h * w];
    let r = radius.floor() as i64;
    for y in (cy - r).max(0)..=(cy + r).min(h as i64 - 1) {
        for x in (cx - r).max(0)..=(cx + r).min(w as i64 - 1) {
            let (dx, dy) = ((x - cx) as f64, (y - cy) as f64);
            if dx * dx + dy * dy <= r2 {
                data[y as usize * w + x as usize] = true;
            }
        }
    }
    Mask { h, w, data }
}

/// Binarize a probability map at threshold `tau` under the given mode.
pub fn binarize(pred: &Grid, tau: f64, mode: ThresholdMode) -> Mask {
    let cut = match mode {
        ThresholdMode::Relative => tau * pred.max(),
        ThresholdMode::Absolute => tau,
    };
    Mask {
        h: pred.h,
        w: pred.w,
        data: pred.data.iter().map(|&v| v >= cut).collect(),
    }
}

/// Pixel TP/FP/FN accumulated per candidate threshold across frames.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSweep {
    pub thresholds: Vec<f64>,
    pub tp: Vec<u64>,
    pub fp: Vec<u64>,
    pub fn_: Vec<u64>,
    pub frames: u64,
}

impl ThresholdSweep {
    pub fn new(thresholds: Vec<f64>) -> Result<Self> {
        if thresholds.is_empty() {
            return Err(Error::ConfigInvalid("empty threshold set".into()));
        }
        for pair in thresholds.windows(2) {
            if !(pair[0] < pair[1]) {
                return Err(Error::ConfigInvalid(
                    "thresholds must be strictly increasing".into(),
                ));
            }
        }
        if thresholds[0] <= 0.0 || thresholds[thresholds.len() - 1] >= 1.0 {
            return Err(Error::ConfigInvalid("thresholds must lie in (0, 1)".into()));
        }
        let n = thresholds.len();
        Ok(ThresholdSweep {
            thresholds,
            tp: vec![0; n],
            fp: vec![0; n],
            fn_: vec![0; n],
            frames: 0,
        })
    }

    pub fn accumulate(&mut self, pred: &Grid, gt: &Mask, mode: ThresholdMode) {
        debug_assert_eq!(pred.data.len(), gt.data.len());
        self.frames += 1;
        for (i, &tau) in self.thresholds.iter().enumerate() {
            let bin = binarize(pred, tau, mode);
            for (&p, &g) in bin.data.iter().zip(&gt.data) {
                match (p, g) {
                    (true, true) => self.tp[i] += 1,
                    (true, false) => self.fp[i] += 1,
                    (false, true) => self.fn_[i] += 1,
                    _ => {}
                }
            }
        }
    }

    /// Best threshold by F1; ties resolve toward the smaller threshold.
    pub fn best(&self) -> (usize, f64, f64, f64) {
        let mut best = 0;
        let mut best_f1 = -1.0;
        let mut best_pr = (0.0, 0.0);
        for i in 0..self.thresholds.len() {
            let (f1, p, r) = f1_from_counts(self.tp[i], self.fp[i], self.fn_[i]);
            if f1 > best_f1 {
                best = i;
                best_f1 = f1;
                best_pr = (p, r);
            }
        }
        (best, best_f1, best_pr.0, best_pr.1)
    }
}

/// F1 = 2PR/(P+R) with zero-count conventions: empty denominators give 0.
pub fn f1_from_counts(tp: u64, fp: u64, fn_: u64) -> (f64, f64, f64) {
    let precision = if tp + fp > 0 {
        tp as f64 / (tp + fp) as f64
    } else {
        0.0
    };
    let recall = if tp + fn_ > 0 {
        tp as f64 / (tp + fn_) as f64
    } else {
        0.0
    };
    let f1 = if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    };
    (f1, precision, recall)
}

/// Keep exactly the frames labeled fixation with in-bounds gaze.
pub fn select_eval_frames<'a>(
    samples: &'a [GazeSample],
    preds: &'a [Grid],
) -> Vec<(&'a GazeSample, &'a Grid)> {
    samples
        .iter()
        .zip(preds)
        .filter(|(s, _)| s.label == GazeLabel::Fixation && s.in_bounds)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassifierMetrics {
    pub f1: f64,
    pub precision: f64,
    pub recall: f64,
}

/// Binary classification metrics at a 0.5 score threshold.
pub fn classifier_metrics(scores: &[f64], labels: &[bool]) -> ClassifierMetrics {
    let (mut tp, mut fp, mut fn_) = (0u64, 0u64, 0u64);
    for (&s, &y) in scores.iter().zip(labels) {
        let pred = s >= 0.5;
        match (pred, y) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            _ => {}
        }
    }
    let (f1, precision, recall) = f1_from_counts(tp, fp, fn_);
    ClassifierMetrics {
        f1,
        precision,
        recall,
    }
}

/// Row-normalized 2×2 confusion matrix over all pixels of all frames:
/// rows are ground-truth positive/negative, columns predicted
/// positive/negative.
pub fn pixel_confusion(preds: &[Mask], gts: &[Mask]) -> Result<[[f64; 2]; 2]> {
    if preds.len() != gts.len() || preds.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} ground-truth masks",
            preds.len(),
            gts.len()
        )));
    }
    let (mut tp, mut fp, mut fn_, mut tn) = (0u64, 0u64, 0u64, 0u64);
    for (p, g) in preds.iter().zip(gts) {
        if p.data.len() != g.data.len() {
            return Err(Error::ShapeMismatch("mask size mismatch".into()));
        }
        for (&pv, &gv) in p.data.iter().zip(&g.data) {
            match (gv, pv) {
                (true, true) => tp += 1,
                (true, false) => fn_ += 1,
                (false, true) => fp += 1,
                (false, false) => tn += 1,
            }
        }
    }
    let row = |a: u64, b: u64| -> [f64; 2] {
        let total = a + b;
        if total == 0 {
            [0.0, 0.0]
        } else {
            [a as f64 / total as f64, b as f64 / total as f64]
        }
    };
    Ok([row(tp, fn_), row(fp, tn)])
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MetricsReport {
    pub variant: String,
    pub adaptive_f1: f64,
    pub precision: f64,
    pub recall: f64,
    pub best_threshold: f64,
    /// Rows: ground-truth positive/negative; columns: predicted
    /// positive/negative. Row-normalized.
    pub confusion: [[f64; 2]; 2],
    pub classifier: Option<ClassifierMetrics>,
    pub frames_evaluated: u64,
    pub frames_skipped: u64,
}

/// Adaptive F1 over prediction/ground-truth pairs: accumulate pixel counts
/// per threshold, micro-averaged across frames, and report the best.
pub fn adaptive_f1(
    preds: &[Grid],
    gts: &[Mask],
    cfg: &EvalConfig,
) -> Result<(ThresholdSweep, f64, f64, f64, f64)> {
    if preds.is_empty() || preds.len() != gts.len() {
        return Err(Error::EmptyEvalSet);
    }
    let mut sweep = ThresholdSweep::new(cfg.thresholds.clone())?;
    for (p, g) in preds.iter().zip(gts) {
        sweep.accumulate(p, g, cfg.threshold_mode);
    }
    let (idx, f1, precision, recall) = sweep.best();
    let tau = sweep.thresholds[idx];
    Ok((sweep, f1, precision, recall, tau))
}

/// Run a model over clips in evaluation mode (clip-start sampling, center
/// crop) and score it with the adaptive-F1 protocol. Classifier metrics
/// are attached when `with_classifier` is set.
pub fn evaluate_clips(
    params: &ParamSet,
    clips: &[TrainClip],
    ann: &AnnotationConfig,
    cfg: &EvalConfig,
    variant: &str,
    with_classifier: bool,
) -> Result<MetricsReport> {
    if clips.is_empty() {
        return Err(Error::EmptyEvalSet);
    }
    struct ClipEval {
        selected: Vec<(Grid, Mask)>,
        scores: Vec<f64>,
        labels: Vec<bool>,
        skipped: u64,
    }
    let per_clip: Vec<ClipEval> = clips
        .par_iter()
        .map(|tc| {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
            let indices = sample_frames(
                &tc.clip,
                ann.frames_per_clip,
                ann.frame_stride,
                SampleMode::Eval,
                &mut rng,
            )?;
            let frames = extract_frames(&tc.stack, &tc.clip, &indices);
            let samples: Vec<GazeSample> = indices.iter().map(|&i| tc.clip.samples[i]).collect();
            let (input, samples) =
                crop_augment(&frames, &samples, CropMode::Center, ann.crop_width)?;
            let out = forward(&input, params)?;
            let kept = select_eval_frames(&samples, &out.probs);
            let selected = kept
                .iter()
                .map(|(s, p)| ((*p).clone(), gt_mask(s, input.h, input.w, cfg.gt_radius_px)))
                .collect::<Vec<_>>();
            let skipped = (samples.len() - selected.len()) as u64;
            let scores = out
                .inview_logits
                .iter()
                .map(|&z| 1.0 / (1.0 + (-z).exp()))
                .collect();
            let labels = samples.iter().map(in_view_label).collect();
            Ok(ClipEval {
                selected,
                scores,
                labels,
                skipped,
            })
        })
        .collect::<Result<_>>()?;

    let mut preds = Vec::new();
    let mut gts = Vec::new();
    let mut scores = Vec::new();
    let mut labels = Vec::new();
    let mut skipped = 0;
    for c in per_clip {
        for (p, g) in c.selected {
            preds.push(p);
            gts.push(g);
        }
        scores.extend(c.scores);
        labels.extend(c.labels);
        skipped += c.skipped;
    }
    let (_, f1, precision, recall, tau) = adaptive_f1(&preds, &gts, cfg)?;
    let binarized: Vec<Mask> = preds
        .iter()
        .map(|p| binarize(p, tau, cfg.threshold_mode))
        .collect();
    let confusion = pixel_confusion(&binarized, &gts)?;
    Ok(MetricsReport {
        variant: variant.to_string(),
        adaptive_f1: f1,
        precision,
        recall,
        best_threshold: tau,
        confusion,
        classifier: with_classifier.then(|| classifier_metrics(&scores, &labels)),
        frames_evaluated: preds.len() as u64,
        frames_skipped: skipped,
    })
}

// ── Dataset statistics ──────────────────────────────────────────────────

pub const HIST_BINS: usize = 16;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ViewStats {
    pub view: ViewId,
    pub fixation: u64,
    pub saccade: u64,
    pub truncated: u64,
    pub untracked: u64,
    /// truncated / (fixation + saccade + truncated); untracked samples are
    /// not valid points.
    pub oob_rate: f64,
    /// Mean normalized gaze over in-bounds fixation/saccade samples.
    pub mean_x: f64,
    pub mean_y: f64,
    /// Row-major 16×16 histogram of in-bounds gaze, y down.
    pub histogram: Vec<Vec<u64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DatasetStats {
    pub views: Vec<ViewStats>,
}

impl DatasetStats {
    pub fn view(&self, view: ViewId) -> Option<&ViewStats> {
        self.views.iter().find(|v| v.view == view)
    }
}

/// Label counts, out-of-bound rate, gaze histogram and mean gaze location
/// per view.
pub fn dataset_stats(samples: &[GazeSample]) -> DatasetStats {
    let mut views = Vec::new();
    for view in [ViewId::Head, ViewId::Neck] {
        let mut stats = ViewStats {
            view,
            fixation: 0,
            saccade: 0,
            truncated: 0,
            untracked: 0,
            oob_rate: 0.0,
            mean_x: 0.0,
            mean_y: 0.0,
            histogram: vec![vec![0; HIST_BINS]; HIST_BINS],
        };
        let (mut sx, mut sy, mut n) = (0.0, 0.0, 0u64);
        for s in samples.iter().filter(|s| s.view == view) {
            match s.label {
                GazeLabel::Fixation => stats.fixation += 1,
                GazeLabel::Saccade => stats.saccade += 1,
                GazeLabel::Truncated => stats.truncated += 1,
                GazeLabel::Untracked => stats.untracked += 1,
            }
            if in_view_label(s) {
                sx += s.x;
                sy += s.y;
                n += 1;
                let bx = ((s.x * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
                let by = ((s.y * HIST_BINS as f64) as usize).min(HIST_BINS - 1);
                stats.histogram[by][bx] += 1;
            }
        }
        let valid = stats.fixation + stats.saccade + stats.truncated;
        if valid > 0 {
            stats.oob_rate = stats.truncated as f64 / valid as f64;
        }
        if n > 0 {
            stats.mean_x = sx / n as f64;
            stats.mean_y = sy / n as f64;
        }
        if stats.fixation + stats.saccade + stats.truncated + stats.untracked > 0 {
            views.push(stats);
        }
    }
    DatasetStats { views }
}

// ── Reporters ───────────────────────────────────────────────────────────

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsRow {
    pub metric: String,
    pub variant: String,
    pub value: f64,
    pub threshold: Option<f64>,
}

pub fn report_rows(report: &MetricsReport) -> Vec<MetricsRow> {
    let mut rows = Vec::new();
    let mut push = |metric: &str, value: f64, threshold: Option<f64>| {
        rows.push(MetricsRow {
            metric: metric.to_string(),
            variant: report.variant.clone(),
            value,
            threshold,
        });
    };
    let tau = Some(report.best_threshold);
    push("adaptive_f1", report.adaptive_f1, tau);
    push("precision", report.precision, tau);
    push("recall", report.recall, tau);
    push("frames_evaluated", report.frames_evaluated as f64, None);
    push("frames_skipped", report.frames_skipped as f64, None);
    push("confusion_tp_rate", report.confusion[0][0], tau);
    push("confusion_fn_rate", report.confusion[0][1], tau);
    push("confusion_fp_rate", report.confusion[1][0], tau);
    push("confusion_tn_rate", report.confusion[1][1], tau);
    if let Some(c) = &report.classifier {
        push("classifier_f1", c.f1, Some(0.5));
        push("classifier_precision", c.precision, Some(0.5));
        push("classifier_recall", c.recall, Some(0.5));
    }
    rows
}

/// Long-format metrics CSV: metric, variant, value, threshold.
pub fn write_metrics_csv(path: &Path, rows: &[MetricsRow]) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "metric,variant,value,threshold")?;
    for r in rows {
        match r.threshold {
            Some(t) => writeln!(w, "{},{},{},{}", r.metric, r.variant, r.value, t)?,
            None => writeln!(w, "{},{},{},", r.metric, r.variant, r.value)?,
        }
    }
    Ok(())
}

pub fn write_stats_json(path: &Path, stats: &DatasetStats) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer_pretty(&mut w, stats)?;
    w.write_all(b"\n")?;
    Ok(())
}

// Minimal deterministic SVG writers; enough for histogram heatmaps,
// confusion matrices and loss curves.

fn svg_open(w: usize, h: usize, out: &mut String) {
    out.push_str("<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n");
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n"
    ));
}

fn svg_text(x: f64, y: f64, size: usize, text: &str, out: &mut String) {
    out.push_str(&format!(
        "<text x=\"{x:.1}\" y=\"{y:.1}\" font-family=\"monospace\" font-size=\"{size}\">{text}</text>\n"
    ));
}

/// Gaze histogram as a grayscale cell grid.
pub fn svg_histogram(stats: &ViewStats) -> String {
    let cell = 16usize;
    let (w, h) = (HIST_BINS * cell + 40, HIST_BINS * cell + 60);
    let mut out = String::new();
    svg_open(w, h, &mut out);
    svg_text(
        20.0,
        20.0,
        12,
        &format!(
            "gaze histogram ({}), oob rate {:.1}%",
            stats.view,
            stats.oob_rate * 100.0
        ),
        &mut out,
    );
    let max = stats
        .histogram
        .iter()
        .flatten()
        .copied()
        .max()
        .unwrap_or(0)
        .max(1) as f64;
    for (by, row) in stats.histogram.iter().enumerate() {
        for (bx, &count) in row.iter().enumerate() {
            let shade = 255 - (count as f64 / max * 255.0).round() as u8;
            out.push_str(&format!(
                "<rect x=\"{}\" y=\"{}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({shade},{shade},{shade})\"/>\n",
                20 + bx * cell,
                40 + by * cell,
            ));
        }
    }
    out.push_str("</svg>\n");
    out
}

/// 2×2 row-normalized confusion matrix figure.
pub fn svg_confusion(confusion: &[[f64; 2]; 2], variant: &str) -> String {
    let cell = 90usize;
    let (w, h) = (2 * cell + 120, 2 * cell + 80);
    let mut out = String::new();
    svg_open(w, h, &mut out);
    svg_text(20.0, 20.0, 12, &format!("pixel confusion ({variant})"), &mut out);
    let labels = [["TP", "FN"], ["FP", "TN"]];
    for (i, row) in confusion.iter().enumerate() {
        for (j, &v) in row.iter().enumerate() {
            let shade = 255 - (v * 200.0).round() as u8;
            let x = 80 + j * cell;
            let y = 40 + i * cell;
            out.push_str(&format!(
                "<rect x=\"{x}\" y=\"{y}\" width=\"{cell}\" height=\"{cell}\" fill=\"rgb({shade},{shade},255)\" stroke=\"black\"/>\n"
            ));
            svg_text(
                x as f64 + 10.0,
                y as f64 + 50.0,
                14,
                &format!("{} {:.3}", labels[i][j], v),
                &mut out,
            );
        }
    }
    svg_text(20.0, 40.0 + 45.0, 11, "gt+", &mut out);
    svg_text(20.0, 40.0 + 135.0, 11, "gt-", &mut out);
    out.push_str("</svg>\n");
    out
}

/// Per-epoch loss curves as polylines.
pub fn svg_loss_curves(history: &[EpochStats]) -> String {
    let (w, h) = (420usize, 240usize);
    let mut out = String::new();
    svg_open(w, h, &mut out);
    svg_text(20.0, 20.0, 12, "training loss per epoch", &mut out);
    if !history.is_empty() {
        let max = history
            .iter()
            .map(|e| e.total)
            .fold(f64::NEG_INFINITY, f64::max)
            .max(1e-12);
        let series: [(fn(&EpochStats) -> f64, &str); 3] = [
            (|e| e.total, "black"),
            (|e| e.heatmap, "steelblue"),
            (|e| e.inbound + e.align, "darkorange"),
        ];
        for (get, color) in series {
            let pts: Vec<String> = history
                .iter()
                .enumerate()
                .map(|(i, e)| {
                    let x = 30.0 + (w as f64 - 60.0) * i as f64 / (history.len() - 1).max(1) as f64;
                    let y = (h as f64 - 30.0) - (h as f64 - 70.0) * (get(e) / max);
                    format!("{x:.1},{y:.1}")
                })
                .collect();
            out.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\"/>\n",
                pts.join(" ")
            ));
        }
    }
    out.push_str("</svg>\n");
    out
}

/// Write the full report set: metrics.csv plus figures/*.svg, and
/// stats.json when dataset statistics are given.
pub fn emit_report(
    dir: &Path,
    reports: &[MetricsReport],
    stats: Option<&DatasetStats>,
    history: Option<&[EpochStats]>,
) -> Result<()> {
    std::fs::create_dir_all(dir.join("figures"))?;
    let rows: Vec<MetricsRow> = reports.iter().flat_map(report_rows).collect();
    write_metrics_csv(&dir.join("metrics.csv"), &rows)?;
    for r in reports {
        std::fs::write(
            dir.join("figures").join(format!("confusion_{}.svg", r.variant)),
            svg_confusion(&r.confusion, &r.variant),
        )?;
    }
    if let Some(stats) = stats {
        write_stats_json(&dir.join("stats.json"), stats)?;
        for v in &stats.views {
            std::fs::write(
                dir.join("figures").join(format!("gaze_hist_{}.svg", v.view)),
                svg_histogram(v),
            )?;
        }
    }
    if let Some(history) = history {
        std::fs::write(
            dir.join("figures").join("loss_curves.svg"),
            svg_loss_curves(history),
        )?;
    }
    Ok(())
}

//! Optimization loops for the three model variants.
//!
//! `base` minimizes the heatmap KL loss on neck-view clips, `aux` adds the
//! in-view classification BCE term, and `colearn` trains a head-view and a
//! neck-view model jointly with the rotation-conditioned alignment loss.
//! All runs are deterministic in the seed: batch shuffling and per-clip
//! augmentation draw from counter-derived streams, so a checkpointed run
//! resumes bit-exactly.

use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::annotation::{
    crop_augment, extract_frames, in_view_label, make_heatmap_target, sample_frames,
    AnnotationConfig, Clip, CropMode, GazeSample, SampleMode,
};
use crate::error::{Error, Result};
use crate::model::{
    self, load_checkpoint, param_entries, save_checkpoint, AlignTerm, CheckpointPayload,
    LossValues, LossWeights, ModelConfig, ParamSet,
};
use crate::tensor::{ClipTensor, FrameStack, Grid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    Base,
    Aux,
    Colearn,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Base => "base",
            Variant::Aux => "aux",
            Variant::Colearn => "colearn",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "base" => Ok(Variant::Base),
            "aux" => Ok(Variant::Aux),
            "colearn" => Ok(Variant::Colearn),
            other => Err(Error::ConfigInvalid(format!(
                "unknown variant '{other}' (expected base, aux or colearn)"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub variant: Variant,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub weights: LossWeights,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            variant: Variant::Base,
            learning_rate: 1e-4,
            epochs: 30,
            batch_size: 8,
            weights: LossWeights::default(),
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::ConfigInvalid(m.into()));
        // A zero learning rate is allowed so smoke runs can exercise the
        // full loop without moving parameters.
        if !(self.learning_rate >= 0.0) {
            return fail("learning rate must be nonnegative");
        }
        if self.epochs == 0 {
            return fail("epochs must be at least 1");
        }
        if self.batch_size == 0 {
            return fail("batch size must be at least 1");
        }
        if self.weights.heatmap < 0.0 || self.weights.inbound < 0.0 || self.weights.align < 0.0 {
            return fail("loss weights must be nonnegative");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("betas must lie in [0, 1)");
        }
        if !(self.eps > 0.0) {
            return fail("epsilon must be positive");
        }
        if self.weight_decay < 0.0 {
            return fail("weight decay must be nonnegative");
        }
        Ok(())
    }

    /// Loss weights with the terms the variant does not train zeroed out.
    pub fn effective_weights(&self) -> LossWeights {
        let w = self.weights;
        match self.variant {
            Variant::Base => LossWeights {
                heatmap: w.heatmap,
                inbound: 0.0,
                align: 0.0,
            },
            Variant::Aux => LossWeights {
                heatmap: w.heatmap,
                inbound: w.inbound,
                align: 0.0,
            },
            Variant::Colearn => LossWeights {
                heatmap: w.heatmap,
                inbound: 0.0,
                align: w.align,
            },
        }
    }
}

/// Per-parameter AdamW accumulators.
#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub step: u64,
    pub m: ParamSet,
    pub v: ParamSet,
}

impl OptimizerState {
    pub fn new(cfg: &ModelConfig) -> Self {
        OptimizerState {
            step: 0,
            m: ParamSet::zeros(cfg),
            v: ParamSet::zeros(cfg),
        }
    }
}

/// One decoupled-weight-decay AdamW update:
/// m ← β₁m + (1−β₁)g, v ← β₂v + (1−β₂)g², θ ← θ − lr·(m̂/(√v̂+ε) + λθ).
pub fn adamw_step(
    params: &mut ParamSet,
    grads: &ParamSet,
    state: &mut OptimizerState,
    cfg: &TrainConfig,
) -> Result<()> {
    for (name, g) in grads.named() {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient(name.to_string()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let lr = cfg.learning_rate;
    let named_g = grads.named();
    let mut named_t = params.named_mut();
    let mut named_m = state.m.named_mut();
    let mut named_v = state.v.named_mut();
    for i in 0..named_g.len() {
        let g = &named_g[i].1.data;
        let theta = &mut named_t[i].1.data;
        let m = &mut named_m[i].1.data;
        let v = &mut named_v[i].1.data;
        for j in 0..theta.len() {
            m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g[j];
            v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g[j] * g[j];
            let m_hat = m[j] / bc1;
            let v_hat = v[j] / bc2;
            theta[j] -= lr * (m_hat / (v_hat.sqrt() + cfg.eps) + cfg.weight_decay * theta[j]);
        }
    }
    Ok(())
}

/// A clip plus the frame stack of its session view.
#[derive(Clone)]
pub struct TrainClip {
    pub stack: Arc<FrameStack>,
    pub clip: Clip,
}

/// Synchronized head/neck clip pair with the head→neck extrinsic rotation
/// evaluated at the clip start.
#[derive(Clone)]
pub struct TrainPair {
    pub head: TrainClip,
    pub neck: TrainClip,
    pub rotation: Matrix3<f64>,
}

pub enum TrainSet {
    Single(Vec<TrainClip>),
    Paired(Vec<TrainPair>),
}

impl TrainSet {
    pub fn len(&self) -> usize {
        match self {
            TrainSet::Single(v) => v.len(),
            TrainSet::Paired(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub heatmap: f64,
    pub inbound: f64,
    pub align: f64,
    pub total: f64,
    pub wall_secs: f64,
}

fn mix(seed: u64, parts: &[u64]) -> u64 {
    let mut h = seed ^ 0x9E37_79B9_7F4A_7C15;
    for &p in parts {
        h ^= p
            .wrapping_add(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(h << 6)
            .wrapping_add(h >> 2);
        h = h.wrapping_mul(0xBF58_476D_1CE4_E5B9);
        h ^= h >> 31;
    }
    h
}

const STREAM_MODEL_NECK: u64 = 1;
const STREAM_MODEL_HEAD: u64 = 2;
const STREAM_SHUFFLE: u64 = 3;
const STREAM_CLIP: u64 = 4;

fn clip_rng(seed: u64, epoch: usize, clip_id: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed, &[STREAM_CLIP, epoch as u64, clip_id as u64]))
}

const CROPS: [CropMode; 3] = [CropMode::Left, CropMode::Center, CropMode::Right];

/// Sampled frame indices and crop choices for one dataset entry. For pairs
/// the temporal start is shared between views so the alignment compares
/// the same instants; crops are drawn per view, neck first.
#[derive(Debug, Clone)]
struct Draw {
    id: usize,
    indices: Vec<usize>,
    crop_neck: CropMode,
    crop_head: CropMode,
}

fn draw_for(
    seed: u64,
    epoch: usize,
    id: usize,
    clip: &Clip,
    ann: &AnnotationConfig,
    paired: bool,
) -> Result<Draw> {
    let mut rng = clip_rng(seed, epoch, id);
    let indices = sample_frames(
        clip,
        ann.frames_per_clip,
        ann.frame_stride,
        SampleMode::Train,
        &mut rng,
    )?;
    let crop_neck = CROPS[rng.gen_range(0..3usize)];
    let crop_head = if paired {
        CROPS[rng.gen_range(0..3usize)]
    } else {
        crop_neck
    };
    Ok(Draw {
        id,
        indices,
        crop_neck,
        crop_head,
    })
}

struct Example {
    input: ClipTensor,
    targets: Vec<Grid>,
    labels: Vec<bool>,
}

fn build_example(
    tc: &TrainClip,
    indices: &[usize],
    crop: CropMode,
    ann: &AnnotationConfig,
) -> Result<Example> {
    let frames = extract_frames(&tc.stack, &tc.clip, indices);
    let samples: Vec<GazeSample> = indices.iter().map(|&i| tc.clip.samples[i]).collect();
    let (input, samples) = crop_augment(&frames, &samples, crop, ann.crop_width)?;
    let targets = samples
        .iter()
        .map(|s| make_heatmap_target(s, input.h, input.w, ann.sigma_px))
        .collect();
    let labels = samples.iter().map(in_view_label).collect();
    Ok(Example {
        input,
        targets,
        labels,
    })
}

pub enum VariantParams {
    Single(ParamSet),
    Pair { head: ParamSet, neck: ParamSet },
}

impl VariantParams {
    /// The neck-view model: the one evaluated for every variant.
    pub fn neck(&self) -> &ParamSet {
        match self {
            VariantParams::Single(p) => p,
            VariantParams::Pair { neck, .. } => neck,
        }
    }

    pub fn head(&self) -> Option<&ParamSet> {
        match self {
            VariantParams::Single(_) => None,
            VariantParams::Pair { head, .. } => Some(head),
        }
    }
}

enum VariantOpt {
    Single(OptimizerState),
    Pair {
        head: OptimizerState,
        neck: OptimizerState,
    },
}

pub struct Trainer {
    pub config: TrainConfig,
    pub model_config: ModelConfig,
    pub annotation: AnnotationConfig,
    pub models: VariantParams,
    opt: VariantOpt,
    pub next_epoch: usize,
    pub history: Vec<EpochStats>,
}

impl Trainer {
    pub fn new(
        config: TrainConfig,
        model: ModelConfig,
        annotation: AnnotationConfig,
    ) -> Result<Self> {
        config.validate()?;
        let (models, opt) = match config.variant {
            Variant::Colearn => (
                VariantParams::Pair {
                    head: ParamSet::init(&model, mix(config.seed, &[STREAM_MODEL_HEAD])),
                    neck: ParamSet::init(&model, mix(config.seed, &[STREAM_MODEL_NECK])),
                },
                VariantOpt::Pair {
                    head: OptimizerState::new(&model),
                    neck: OptimizerState::new(&model),
                },
            ),
            _ => (
                VariantParams::Single(ParamSet::init(
                    &model,
                    mix(config.seed, &[STREAM_MODEL_NECK]),
                )),
                VariantOpt::Single(OptimizerState::new(&model)),
            ),
        };
        Ok(Trainer {
            config,
            model_config: model,
            annotation,
            models,
            opt,
            next_epoch: 0,
            history: Vec::new(),
        })
    }

    fn validate_set(&self, data: &TrainSet) -> Result<()> {
        if data.is_empty() {
            return Err(Error::DatasetEmpty);
        }
        match (self.config.variant, data) {
            (Variant::Colearn, TrainSet::Paired(pairs)) => {
                for (i, p) in pairs.iter().enumerate() {
                    if p.head.clip.len != p.neck.clip.len {
                        return Err(Error::PairMismatch(format!(
                            "pair {i}: head clip has {} frames, neck {}",
                            p.head.clip.len, p.neck.clip.len
                        )));
                    }
                    if p.head.clip.view == p.neck.clip.view {
                        return Err(Error::PairMismatch(format!(
                            "pair {i}: both clips come from the {} view",
                            p.head.clip.view
                        )));
                    }
                }
                Ok(())
            }
            (Variant::Colearn, TrainSet::Single(_)) => Err(Error::PairMismatch(
                "colearn needs paired head/neck clips".into(),
            )),
            (_, TrainSet::Paired(_)) => Err(Error::ConfigInvalid(
                "variants base/aux train on single-view clips".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn run(&mut self, data: &TrainSet) -> Result<()> {
        self.run_with(data, |_| {})
    }

    /// Run the remaining epochs, invoking `on_epoch` after each one.
    pub fn run_with<F: FnMut(&EpochStats)>(
        &mut self,
        data: &TrainSet,
        mut on_epoch: F,
    ) -> Result<()> {
        self.validate_set(data)?;
        while self.next_epoch < self.config.epochs {
            let stats = self.run_epoch(data)?;
            on_epoch(&stats);
            self.history.push(stats);
            self.next_epoch += 1;
        }
        Ok(())
    }

    fn run_epoch(&mut self, data: &TrainSet) -> Result<EpochStats> {
        let epoch = self.next_epoch;
        let started = Instant::now();
        let mut order: Vec<usize> = (0..data.len()).collect();
        let mut shuffle_rng =
            ChaCha8Rng::seed_from_u64(mix(self.config.seed, &[STREAM_SHUFFLE, epoch as u64]));
        // Fisher–Yates, explicit so the draw count is fixed.
        for i in (1..order.len()).rev() {
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }

        let mut sums = LossValues::default();
        let mut batches = 0usize;
        let batch_size = self.config.batch_size;
        for start in (0..order.len()).step_by(batch_size) {
            let batch = &order[start..(start + batch_size).min(order.len())];
            let losses = match data {
                TrainSet::Single(clips) => self.step_single(clips, batch, epoch)?,
                TrainSet::Paired(pairs) => self.step_paired(pairs, batch, epoch)?,
            };
            sums.heatmap += losses.heatmap;
            sums.inbound += losses.inbound;
            sums.align += losses.align;
            sums.total += losses.total;
            batches += 1;
        }
        let n = batches.max(1) as f64;
        Ok(EpochStats {
            epoch,
            heatmap: sums.heatmap / n,
            inbound: sums.inbound / n,
            align: sums.align / n,
            total: sums.total / n,
            wall_secs: started.elapsed().as_secs_f64(),
        })
    }

    fn step_single(
        &mut self,
        clips: &[TrainClip],
        batch: &[usize],
        epoch: usize,
    ) -> Result<LossValues> {
        let ann = self.annotation.clone();
        let weights = self.config.effective_weights();
        let seed = self.config.seed;
        let draws: Vec<Draw> = batch
            .iter()
            .map(|&id| draw_for(seed, epoch, id, &clips[id].clip, &ann, false))
            .collect::<Result<_>>()?;

        let params = match &self.models {
            VariantParams::Single(p) => p,
            _ => unreachable!("variant/model shape fixed at construction"),
        };
        let results: Vec<(LossValues, ParamSet)> = draws
            .par_iter()
            .map(|draw| {
                let ex = build_example(&clips[draw.id], &draw.indices, draw.crop_neck, &ann)?;
                model::backward(&ex.input, params, &ex.targets, &ex.labels, None, &weights)
            })
            .collect::<Result<_>>()?;

        let scale = 1.0 / results.len() as f64;
        let mut grads = ParamSet::zeros(&self.model_config);
        let mut losses = LossValues::default();
        for (l, g) in &results {
            grads.add_scaled(g, scale);
            losses.heatmap += l.heatmap * scale;
            losses.inbound += l.inbound * scale;
            losses.align += l.align * scale;
            losses.total += l.total * scale;
        }
        match (&mut self.models, &mut self.opt) {
            (VariantParams::Single(p), VariantOpt::Single(state)) => {
                adamw_step(p, &grads, state, &self.config)?;
            }
            _ => unreachable!(),
        }
        Ok(losses)
    }

    fn step_paired(
        &mut self,
        pairs: &[TrainPair],
        batch: &[usize],
        epoch: usize,
    ) -> Result<LossValues> {
        let ann = self.annotation.clone();
        let weights = self.config.effective_weights();
        let seed = self.config.seed;
        let draws: Vec<Draw> = batch
            .iter()
            .map(|&id| draw_for(seed, epoch, id, &pairs[id].neck.clip, &ann, true))
            .collect::<Result<_>>()?;

        let (head_params, neck_params) = match &self.models {
            VariantParams::Pair { head, neck } => (head, neck),
            _ => unreachable!(),
        };

        type PairGrads = (LossValues, ParamSet, ParamSet);
        let results: Vec<PairGrads> = draws
            .par_iter()
            .map(|draw| {
                let pair = &pairs[draw.id];
                let neck_ex = build_example(&pair.neck, &draw.indices, draw.crop_neck, &ann)?;
                let head_ex = build_example(&pair.head, &draw.indices, draw.crop_head, &ann)?;
                let neck_pass = model::forward_pass(&neck_ex.input, neck_params)?;
                let head_pass = model::forward_pass(&head_ex.input, head_params)?;

                // Both models receive the gradient of the same alignment
                // term; each side sees the rotation taking its own frame
                // to the other's.
                let head_align = AlignTerm {
                    other: &neck_pass.output.latent,
                    rotation: pair.rotation,
                };
                let neck_align = AlignTerm {
                    other: &head_pass.output.latent,
                    rotation: pair.rotation.transpose(),
                };
                let (neck_losses, neck_grads) = model::backward_pass(
                    &neck_pass,
                    &neck_ex.input,
                    neck_params,
                    &neck_ex.targets,
                    &neck_ex.labels,
                    Some(&neck_align),
                    &weights,
                )?;
                let (head_losses, head_grads) = model::backward_pass(
                    &head_pass,
                    &head_ex.input,
                    head_params,
                    &head_ex.targets,
                    &head_ex.labels,
                    Some(&head_align),
                    &weights,
                )?;
                let losses = LossValues {
                    heatmap: head_losses.heatmap + neck_losses.heatmap,
                    inbound: 0.0,
                    // The same scalar seen from both sides; report one.
                    align: neck_losses.align,
                    total: weights.heatmap * (head_losses.heatmap + neck_losses.heatmap)
                        + weights.align * neck_losses.align,
                };
                Ok((losses, head_grads, neck_grads))
            })
            .collect::<Result<_>>()?;

        let scale = 1.0 / results.len() as f64;
        let mut head_grads = ParamSet::zeros(&self.model_config);
        let mut neck_grads = ParamSet::zeros(&self.model_config);
        let mut losses = LossValues::default();
        for (l, hg, ng) in &results {
            head_grads.add_scaled(hg, scale);
            neck_grads.add_scaled(ng, scale);
            losses.heatmap += l.heatmap * scale;
            losses.align += l.align * scale;
            losses.total += l.total * scale;
        }
        match (&mut self.models, &mut self.opt) {
            (
                VariantParams::Pair { head, neck },
                VariantOpt::Pair {
                    head: head_state,
                    neck: neck_state,
                },
            ) => {
                adamw_step(head, &head_grads, head_state, &self.config)?;
                adamw_step(neck, &neck_grads, neck_state, &self.config)?;
            }
            _ => unreachable!(),
        }
        Ok(losses)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut tensors = Vec::new();
        let steps: Vec<u64>;
        match (&self.models, &self.opt) {
            (VariantParams::Single(p), VariantOpt::Single(s)) => {
                tensors.extend(param_entries("model.", p));
                tensors.extend(param_entries("opt_m.", &s.m));
                tensors.extend(param_entries("opt_v.", &s.v));
                steps = vec![s.step];
            }
            (
                VariantParams::Pair { head, neck },
                VariantOpt::Pair {
                    head: hs,
                    neck: ns,
                },
            ) => {
                tensors.extend(param_entries("head.", head));
                tensors.extend(param_entries("neck.", neck));
                tensors.extend(param_entries("opt_m_head.", &hs.m));
                tensors.extend(param_entries("opt_v_head.", &hs.v));
                tensors.extend(param_entries("opt_m_neck.", &ns.m));
                tensors.extend(param_entries("opt_v_neck.", &ns.v));
                steps = vec![hs.step, ns.step];
            }
            _ => unreachable!(),
        }
        let payload = CheckpointPayload {
            model: self.model_config,
            extra: serde_json::json!({
                "train": self.config,
                "annotation": self.annotation,
                "next_epoch": self.next_epoch,
                "steps": steps,
                "history": self.history,
            }),
            tensors,
        };
        save_checkpoint(path, &payload)
    }

    pub fn load(path: &Path) -> Result<Trainer> {
        let payload = load_checkpoint(path)?;
        let corrupt = |m: &str| Error::CorruptCheckpoint(m.to_string());
        let config: TrainConfig = serde_json::from_value(payload.extra["train"].clone())
            .map_err(|_| corrupt("missing train config"))?;
        let annotation: AnnotationConfig =
            serde_json::from_value(payload.extra["annotation"].clone())
                .map_err(|_| corrupt("missing annotation config"))?;
        let next_epoch = payload.extra["next_epoch"]
            .as_u64()
            .ok_or_else(|| corrupt("missing next_epoch"))? as usize;
        let steps: Vec<u64> = serde_json::from_value(payload.extra["steps"].clone())
            .map_err(|_| corrupt("missing steps"))?;
        let history: Vec<EpochStats> =
            serde_json::from_value(payload.extra["history"].clone()).unwrap_or_default();

        let (models, opt) = match config.variant {
            Variant::Colearn => {
                if steps.len() != 2 {
                    return Err(corrupt("expected two optimizer step counters"));
                }
                (
                    VariantParams::Pair {
                        head: payload.params("head.")?,
                        neck: payload.params("neck.")?,
                    },
                    VariantOpt::Pair {
                        head: OptimizerState {
                            step: steps[0],
                            m: payload.params("opt_m_head.")?,
                            v: payload.params("opt_v_head.")?,
                        },
                        neck: OptimizerState {
                            step: steps[1],
                            m: payload.params("opt_m_neck.")?,
                            v: payload.params("opt_v_neck.")?,
                        },
                    },
                )
            }
            _ => {
                if steps.len() != 1 {
                    return Err(corrupt("expected one optimizer step counter"));
                }
                (
                    VariantParams::Single(payload.params("model.")?),
                    VariantOpt::Single(OptimizerState {
                        step: steps[0],
                        m: payload.params("opt_m.")?,
                        v: payload.params("opt_v.")?,
                    }),
                )
            }
        };
        Ok(Trainer {
            config,
            model_config: payload.model,
            annotation,
            models,
            opt,
            next_epoch,
            history,
        })
    }
}

/// History CSV: epoch, each loss term, wall time.
pub fn write_history_csv(path: &Path, history: &[EpochStats]) -> Result<()> {
    use std::io::Write;
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "epoch,heatmap,inbound,align,total,wall_secs")?;
    for e in history {
        writeln!(
            w,
            "{},{},{},{},{},{:.3}",
            e.epoch, e.heatmap, e.inbound, e.align, e.total, e.wall_secs
        )?;
    }
    Ok(())
}

//! Encoder–bottleneck–decoder gaze network with analytic gradients.
//!
//! Per frame: two stride-2 convolutions (1→8→16 channels) encode the
//! frame, a 3×3 bottleneck convolution produces the per-frame feature, and
//! two transposed convolutions decode per-frame heatmap logits back at
//! input resolution. A spatial softmax turns logits into gaze probability
//! maps. The in-view head pools each frame's feature globally and emits a
//! per-frame logit. The temporal mean of the per-frame features is the
//! clip bottleneck; a 1×1 convolution projects it into K 3-vectors per
//! cell, the latent field used by the rotation-conditioned alignment loss.
//!
//! Everything is `f64` and deterministic; `backward` returns gradients of
//! the weighted sum of the three losses and is validated against central
//! finite differences.

mod checkpoint;
mod ops;

pub use checkpoint::{
    load_checkpoint, param_entries, save_checkpoint, CheckpointPayload, CHECKPOINT_MAGIC,
};

use nalgebra::Matrix3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{ClipTensor, Grid, Tensor};

/// Encoder channel widths (fixed by the architecture).
pub const C1: usize = 8;
pub const C2: usize = 16;

const EPS_LOG: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Number of 3-vectors per bottleneck cell in the latent field (K).
    pub latent_vectors: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig { latent_vectors: 8 }
    }
}

/// All learnable tensors. The same container holds gradients and optimizer
/// moments, so parameter traversal is written once.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSet {
    pub enc1_w: Tensor,
    pub enc1_b: Tensor,
    pub enc2_w: Tensor,
    pub enc2_b: Tensor,
    pub bott_w: Tensor,
    pub bott_b: Tensor,
    pub dec1_w: Tensor,
    pub dec1_b: Tensor,
    pub dec2_w: Tensor,
    pub dec2_b: Tensor,
    pub head_w: Tensor,
    pub head_b: Tensor,
    pub proj_w: Tensor,
    pub proj_b: Tensor,
}

/// Parameter names, stable across runs; checkpoint and optimizer state
/// entries key off these.
pub const PARAM_NAMES: [&str; 14] = [
    "enc1_w", "enc1_b", "enc2_w", "enc2_b", "bott_w", "bott_b", "dec1_w", "dec1_b", "dec2_w",
    "dec2_b", "head_w", "head_b", "proj_w", "proj_b",
];

impl ParamSet {
    fn shapes(cfg: &ModelConfig) -> [(&'static str, Vec<usize>); 14] {
        let k3 = 3 * cfg.latent_vectors;
        [
            ("enc1_w", vec![C1, 1, 3, 3]),
            ("enc1_b", vec![C1]),
            ("enc2_w", vec![C2, C1, 3, 3]),
            ("enc2_b", vec![C2]),
            ("bott_w", vec![C2, C2, 3, 3]),
            ("bott_b", vec![C2]),
            // Transposed-convolution weights are stored [in, out, kh, kw].
            ("dec1_w", vec![C2, C1, 3, 3]),
            ("dec1_b", vec![C1]),
            ("dec2_w", vec![C1, 1, 3, 3]),
            ("dec2_b", vec![1]),
            ("head_w", vec![C2]),
            ("head_b", vec![1]),
            ("proj_w", vec![k3, C2]),
            ("proj_b", vec![k3]),
        ]
    }

    pub fn zeros(cfg: &ModelConfig) -> Self {
        let mut tensors = Self::shapes(cfg).map(|(_, dims)| Tensor::zeros(&dims));
        // Drain in declaration order.
        let mut it = tensors.iter_mut().map(std::mem::take);
        ParamSet {
            enc1_w: it.next().unwrap(),
            enc1_b: it.next().unwrap(),
            enc2_w: it.next().unwrap(),
            enc2_b: it.next().unwrap(),
            bott_w: it.next().unwrap(),
            bott_b: it.next().unwrap(),
            dec1_w: it.next().unwrap(),
            dec1_b: it.next().unwrap(),
            dec2_w: it.next().unwrap(),
            dec2_b: it.next().unwrap(),
            head_w: it.next().unwrap(),
            head_b: it.next().unwrap(),
            proj_w: it.next().unwrap(),
            proj_b: it.next().unwrap(),
        }
    }

    /// Seeded uniform init in ±1/sqrt(fan_in), fan_in taken from the
    /// associated weight tensor for biases as well.
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut params = Self::zeros(cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let fan_in = |name: &str| -> f64 {
            match name {
                "enc1_w" | "enc1_b" => 9.0,
                "enc2_w" | "enc2_b" => (C1 * 9) as f64,
                "bott_w" | "bott_b" | "dec1_w" | "dec1_b" => (C2 * 9) as f64,
                "dec2_w" | "dec2_b" => (C1 * 9) as f64,
                _ => C2 as f64,
            }
        };
        for (name, tensor) in params.named_mut() {
            let bound = 1.0 / fan_in(name).sqrt();
            for v in tensor.data.iter_mut() {
                *v = rng.gen_range(-bound..bound);
            }
        }
        params
    }

    pub fn named(&self) -> [(&'static str, &Tensor); 14] {
        [
            ("enc1_w", &self.enc1_w),
            ("enc1_b", &self.enc1_b),
            ("enc2_w", &self.enc2_w),
            ("enc2_b", &self.enc2_b),
            ("bott_w", &self.bott_w),
            ("bott_b", &self.bott_b),
            ("dec1_w", &self.dec1_w),
            ("dec1_b", &self.dec1_b),
            ("dec2_w", &self.dec2_w),
            ("dec2_b", &self.dec2_b),
            ("head_w", &self.head_w),
            ("head_b", &self.head_b),
            ("proj_w", &self.proj_w),
            ("proj_b", &self.proj_b),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut Tensor); 14] {
        [
            ("enc1_w", &mut self.enc1_w),
            ("enc1_b", &mut self.enc1_b),
            ("enc2_w", &mut self.enc2_w),
            ("enc2_b", &mut self.enc2_b),
            ("bott_w", &mut self.bott_w),
            ("bott_b", &mut self.bott_b),
            ("dec1_w", &mut self.dec1_w),
            ("dec1_b", &mut self.dec1_b),
            ("dec2_w", &mut self.dec2_w),
            ("dec2_b", &mut self.dec2_b),
            ("head_w", &mut self.head_w),
            ("head_b", &mut self.head_b),
            ("proj_w", &mut self.proj_w),
            ("proj_b", &mut self.proj_b),
        ]
    }

    pub fn param_count(&self) -> usize {
        self.named().iter().map(|(_, t)| t.len()).sum()
    }

    /// K recovered from the projection head shape.
    pub fn latent_vectors(&self) -> usize {
        self.proj_b.len() / 3
    }

    pub fn config(&self) -> ModelConfig {
        ModelConfig {
            latent_vectors: self.latent_vectors(),
        }
    }

    /// In-place `self += other * scale`, used for batch gradient reduction.
    pub fn add_scaled(&mut self, other: &ParamSet, scale: f64) {
        for ((_, a), (_, b)) in self.named_mut().into_iter().zip(other.named()) {
            for (x, y) in a.data.iter_mut().zip(&b.data) {
                *x += y * scale;
            }
        }
    }
}

/// K 3-vectors per bottleneck cell, stored channel-major: channel
/// `3k + c` holds component `c` of vector `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentField {
    pub k: usize,
    pub h: usize,
    pub w: usize,
    pub data: Vec<f64>,
}

impl LatentField {
    pub fn zeros(k: usize, h: usize, w: usize) -> Self {
        LatentField {
            k,
            h,
            w,
            data: vec![0.0; 3 * k * h * w],
        }
    }

    pub fn component_count(&self) -> usize {
        self.data.len()
    }
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Per-frame heatmap logits at input resolution.
    pub logits: Vec<Grid>,
    /// Per-frame gaze probability maps (spatial softmax of the logits).
    pub probs: Vec<Grid>,
    /// Per-frame in-view logits; apply a sigmoid for scores.
    pub inview_logits: Vec<f64>,
    /// Temporal mean of the per-frame bottleneck features, [C2, H/4, W/4].
    pub bottleneck: Tensor,
    /// 3D-like latent projection of the bottleneck.
    pub latent: LatentField,
}

/// Forward intermediates retained for the backward pass.
struct FrameCache {
    z1: Vec<f64>,
    a1: Vec<f64>,
    z2: Vec<f64>,
    a2: Vec<f64>,
    zf: Vec<f64>,
    f: Vec<f64>,
    zd1: Vec<f64>,
    d1: Vec<f64>,
    gap: Vec<f64>,
}

pub struct ForwardPass {
    pub output: ForwardOutput,
    caches: Vec<FrameCache>,
    dims: FrameDims,
}

#[derive(Debug, Clone, Copy)]
struct FrameDims {
    h: usize,
    w: usize,
    h2: usize,
    w2: usize,
    h4: usize,
    w4: usize,
}

fn relu_into(src: &[f64], dst: &mut Vec<f64>) {
    dst.clear();
    dst.extend(src.iter().map(|&v| v.max(0.0)));
}

fn sigmoid(z: f64) -> f64 {
    1.0 / (1.0 + (-z).exp())
}

fn check_input(clip: &ClipTensor) -> Result<FrameDims> {
    if clip.t == 0 {
        return Err(Error::ShapeMismatch("clip has no frames".into()));
    }
    if clip.h < 4 || clip.w < 4 || clip.h % 4 != 0 || clip.w % 4 != 0 {
        return Err(Error::ShapeMismatch(format!(
            "frame size {}x{} must be divisible by 4",
            clip.h, clip.w
        )));
    }
    Ok(FrameDims {
        h: clip.h,
        w: clip.w,
        h2: clip.h / 2,
        w2: clip.w / 2,
        h4: clip.h / 4,
        w4: clip.w / 4,
    })
}

/// Run the network, keeping the intermediates needed by `backward_pass`.
pub fn forward_pass(clip: &ClipTensor, params: &ParamSet) -> Result<ForwardPass> {
    let d = check_input(clip)?;
    let k = params.latent_vectors();
    let mut caches = Vec::with_capacity(clip.t);
    let mut logits_out = Vec::with_capacity(clip.t);
    let mut probs_out = Vec::with_capacity(clip.t);
    let mut inview = Vec::with_capacity(clip.t);
    let mut bottleneck = Tensor::zeros(&[C2, d.h4, d.w4]);

    for ti in 0..clip.t {
        let x = clip.frame(ti);
        let mut z1 = vec![0.0; C1 * d.h2 * d.w2];
        ops::conv2d(
            x, 1, d.h, d.w,
            &params.enc1_w.data, &params.enc1_b.data, C1, 2,
            &mut z1, d.h2, d.w2,
        );
        let mut a1 = Vec::new();
        relu_into(&z1, &mut a1);

        let mut z2 = vec![0.0; C2 * d.h4 * d.w4];
        ops::conv2d(
            &a1, C1, d.h2, d.w2,
            &params.enc2_w.data, &params.enc2_b.data, C2, 2,
            &mut z2, d.h4, d.w4,
        );
        let mut a2 = Vec::new();
        relu_into(&z2, &mut a2);

        let mut zf = vec![0.0; C2 * d.h4 * d.w4];
        ops::conv2d(
            &a2, C2, d.h4, d.w4,
            &params.bott_w.data, &params.bott_b.data, C2, 1,
            &mut zf, d.h4, d.w4,
        );
        let mut f = Vec::new();
        relu_into(&zf, &mut f);

        let mut zd1 = vec![0.0; C1 * d.h2 * d.w2];
        ops::tconv2d(&f, C2, d.h4, d.w4, &params.dec1_w.data, &params.dec1_b.data, C1, &mut zd1);
        let mut d1 = Vec::new();
        relu_into(&zd1, &mut d1);

        let mut logits = vec![0.0; d.h * d.w];
        ops::tconv2d(&d1, C1, d.h2, d.w2, &params.dec2_w.data, &params.dec2_b.data, 1, &mut logits);

        // Spatial softmax.
        let maxv = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut probs: Vec<f64> = logits.iter().map(|&z| (z - maxv).exp()).collect();
        let sum: f64 = probs.iter().sum();
        probs.iter_mut().for_each(|p| *p /= sum);

        // Per-frame in-view logit from the globally pooled feature.
        let cell = (d.h4 * d.w4) as f64;
        let gap: Vec<f64> = (0..C2)
            .map(|c| f[c * d.h4 * d.w4..(c + 1) * d.h4 * d.w4].iter().sum::<f64>() / cell)
            .collect();
        let c_t = params.head_b.data[0]
            + gap.iter().zip(&params.head_w.data).map(|(g, w)| g * w).sum::<f64>();
        inview.push(c_t);

        for (acc, v) in bottleneck.data.iter_mut().zip(&f) {
            *acc += v / clip.t as f64;
        }

        logits_out.push(Grid::from_vec(d.h, d.w, logits.clone()));
        probs_out.push(Grid::from_vec(d.h, d.w, probs));
        caches.push(FrameCache {
            z1,
            a1,
            z2,
            a2,
            zf,
            f,
            zd1,
            d1,
            gap,
        });
    }

    let latent = project_latent_3d(&bottleneck, params)?;
    debug_assert_eq!(latent.k, k);

    Ok(ForwardPass {
        output: ForwardOutput {
            logits: logits_out,
            probs: probs_out,
            inview_logits: inview,
            bottleneck,
            latent,
        },
        caches,
        dims: d,
    })
}

/// Deterministic forward pass; probability maps each sum to 1.
pub fn forward(clip: &ClipTensor, params: &ParamSet) -> Result<ForwardOutput> {
    Ok(forward_pass(clip, params)?.output)
}

/// 1×1 convolution regrouping the bottleneck into K 3-vectors per cell;
/// linear in the input.
pub fn project_latent_3d(bottleneck: &Tensor, params: &ParamSet) -> Result<LatentField> {
    let dims = &bottleneck.dims;
    if dims.len() != 3 || dims[0] != C2 {
        return Err(Error::ShapeMismatch(format!(
            "bottleneck dims {dims:?}, expected [{C2}, h, w]"
        )));
    }
    let (h, w) = (dims[1], dims[2]);
    let k = params.latent_vectors();
    let mut field = LatentField::zeros(k, h, w);
    let hw = h * w;
    for j in 0..3 * k {
        let out = &mut field.data[j * hw..(j + 1) * hw];
        out.fill(params.proj_b.data[j]);
        for c in 0..C2 {
            let wv = params.proj_w.data[j * C2 + c];
            let src = &bottleneck.data[c * hw..(c + 1) * hw];
            for (o, s) in out.iter_mut().zip(src) {
                *o += wv * s;
            }
        }
    }
    Ok(field)
}

/// Mean over frames of KL(target ‖ pred), with 0·log 0 := 0 and the
/// prediction clamped at 1e-12 inside the log.
pub fn heatmap_loss(preds: &[Grid], targets: &[Grid]) -> Result<f64> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} predictions vs {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let mut total = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        if p.h != t.h || p.w != t.w {
            return Err(Error::ShapeMismatch("heatmap size mismatch".into()));
        }
        let mut kl = 0.0;
        for (&pv, &tv) in p.data.iter().zip(&t.data) {
            if tv > 0.0 {
                kl += tv * (tv.ln() - pv.max(EPS_LOG).ln());
            }
        }
        total += kl;
    }
    Ok(total / preds.len() as f64)
}

/// Mean binary cross-entropy of sigmoid(logit) against the labels,
/// computed in the numerically stable logit form.
pub fn inbound_loss(logits: &[f64], labels: &[bool]) -> Result<f64> {
    if logits.len() != labels.len() || logits.is_empty() {
        return Err(Error::ShapeMismatch(format!(
            "{} logits vs {} labels",
            logits.len(),
            labels.len()
        )));
    }
    let total: f64 = logits
        .iter()
        .zip(labels)
        .map(|(&z, &y)| z.max(0.0) - z * (y as u8 as f64) + (1.0 + (-z.abs()).exp()).ln())
        .sum();
    Ok(total / logits.len() as f64)
}

fn check_rotation(r: &Matrix3<f64>) -> Result<()> {
    let dev = (r.transpose() * r - Matrix3::identity()).abs().max();
    if dev > 1e-6 {
        return Err(Error::NotARotation);
    }
    Ok(())
}

/// Mean squared error between the rotated head field and the neck field,
/// averaged over every scalar component.
pub fn align_loss(head: &LatentField, neck: &LatentField, rotation: &Matrix3<f64>) -> Result<f64> {
    if (head.k, head.h, head.w) != (neck.k, neck.h, neck.w) {
        return Err(Error::ShapeMismatch("latent field shapes differ".into()));
    }
    check_rotation(rotation)?;
    let hw = head.h * head.w;
    let mut acc = 0.0;
    for k in 0..head.k {
        let (x0, x1, x2) = (3 * k * hw, (3 * k + 1) * hw, (3 * k + 2) * hw);
        for i in 0..hw {
            let v = nalgebra::Vector3::new(head.data[x0 + i], head.data[x1 + i], head.data[x2 + i]);
            let rv = rotation * v;
            let d0 = rv.x - neck.data[x0 + i];
            let d1 = rv.y - neck.data[x1 + i];
            let d2 = rv.z - neck.data[x2 + i];
            acc += d0 * d0 + d1 * d1 + d2 * d2;
        }
    }
    Ok(acc / head.component_count() as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LossWeights {
    pub heatmap: f64,
    pub inbound: f64,
    pub align: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            heatmap: 1.0,
            inbound: 1.0,
            align: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct LossValues {
    pub heatmap: f64,
    pub inbound: f64,
    pub align: f64,
    pub total: f64,
}

/// Cross-view coupling for one side of a co-learning pair: the loss term
/// is MSE(rotation · own_latent − other_latent). The head model passes the
/// head→neck rotation; the neck model passes its transpose.
pub struct AlignTerm<'a> {
    pub other: &'a LatentField,
    pub rotation: Matrix3<f64>,
}

/// Gradients of `w.heatmap·L_heatmap + w.inbound·L_inbound + w.align·L_align`
/// for every parameter, from a completed forward pass. Terms with zero
/// weight are skipped entirely and contribute exactly nothing.
pub fn backward_pass(
    pass: &ForwardPass,
    clip: &ClipTensor,
    params: &ParamSet,
    targets: &[Grid],
    labels: &[bool],
    align: Option<&AlignTerm>,
    weights: &LossWeights,
) -> Result<(LossValues, ParamSet)> {
    let d = pass.dims;
    let t_count = clip.t;
    let out = &pass.output;
    let mut losses = LossValues::default();
    let mut grads = ParamSet::zeros(&params.config());

    let use_heatmap = weights.heatmap != 0.0;
    let use_inbound = weights.inbound != 0.0;
    let use_align = weights.align != 0.0 && align.is_some();

    if use_heatmap {
        losses.heatmap = heatmap_loss(&out.probs, targets)?;
    }
    if use_inbound {
        if labels.len() != t_count {
            return Err(Error::ShapeMismatch(format!(
                "{} labels for {t_count} frames",
                labels.len()
            )));
        }
        losses.inbound = inbound_loss(&out.inview_logits, labels)?;
    }

    // Alignment path: gradient with respect to the shared bottleneck.
    let mut d_bottleneck: Option<Tensor> = None;
    if use_align {
        let term = align.unwrap();
        losses.align = align_loss(&out.latent, term.other, &term.rotation)?;
        let field = &out.latent;
        let hw = field.h * field.w;
        let n = field.component_count() as f64;
        let scale = weights.align * 2.0 / n;
        let rt = term.rotation.transpose();
        let mut d_latent = vec![0.0; field.data.len()];
        for k in 0..field.k {
            let (x0, x1, x2) = (3 * k * hw, (3 * k + 1) * hw, (3 * k + 2) * hw);
            for i in 0..hw {
                let v = nalgebra::Vector3::new(
                    field.data[x0 + i],
                    field.data[x1 + i],
                    field.data[x2 + i],
                );
                let residual = term.rotation * v
                    - nalgebra::Vector3::new(
                        term.other.data[x0 + i],
                        term.other.data[x1 + i],
                        term.other.data[x2 + i],
                    );
                let g = rt * residual * scale;
                d_latent[x0 + i] = g.x;
                d_latent[x1 + i] = g.y;
                d_latent[x2 + i] = g.z;
            }
        }
        // Backprop through the 1×1 projection.
        let mut db = Tensor::zeros(&[C2, d.h4, d.w4]);
        let k3 = 3 * field.k;
        for j in 0..k3 {
            let dl = &d_latent[j * hw..(j + 1) * hw];
            grads.proj_b.data[j] += dl.iter().sum::<f64>();
            for c in 0..C2 {
                let src = &out.bottleneck.data[c * hw..(c + 1) * hw];
                grads.proj_w.data[j * C2 + c] += dl.iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                let wv = params.proj_w.data[j * C2 + c];
                let dst = &mut db.data[c * hw..(c + 1) * hw];
                for (o, g) in dst.iter_mut().zip(dl) {
                    *o += wv * g;
                }
            }
        }
        d_bottleneck = Some(db);
    }

    let cell = (d.h4 * d.w4) as f64;
    for ti in 0..t_count {
        let cache = &pass.caches[ti];
        let mut df = vec![0.0; C2 * d.h4 * d.w4];

        if use_heatmap {
            // d KL / d logits = (softmax - target) / T, scaled by the weight.
            let scale = weights.heatmap / t_count as f64;
            let dlogits: Vec<f64> = out.probs[ti]
                .data
                .iter()
                .zip(&targets[ti].data)
                .map(|(&p, &t)| (p - t) * scale)
                .collect();

            let mut dd1 = vec![0.0; C1 * d.h2 * d.w2];
            ops::tconv2d_backward(
                &cache.d1, C1, d.h2, d.w2,
                &params.dec2_w.data, 1, &dlogits,
                Some(&mut dd1), &mut grads.dec2_w.data, &mut grads.dec2_b.data,
            );
            for (g, &z) in dd1.iter_mut().zip(&cache.zd1) {
                if z <= 0.0 {
                    *g = 0.0;
                }
            }
            ops::tconv2d_backward(
                &cache.f, C2, d.h4, d.w4,
                &params.dec1_w.data, C1, &dd1,
                Some(&mut df), &mut grads.dec1_w.data, &mut grads.dec1_b.data,
            );
        }

        if use_inbound {
            let y = labels[ti] as u8 as f64;
            let dc = (sigmoid(out.inview_logits[ti]) - y) * weights.inbound / t_count as f64;
            grads.head_b.data[0] += dc;
            for c in 0..C2 {
                grads.head_w.data[c] += dc * cache.gap[c];
                let dg = dc * params.head_w.data[c] / cell;
                for v in df[c * d.h4 * d.w4..(c + 1) * d.h4 * d.w4].iter_mut() {
                    *v += dg;
                }
            }
        }

        if let Some(db) = &d_bottleneck {
            for (g, b) in df.iter_mut().zip(&db.data) {
                *g += b / t_count as f64;
            }
        }

        if df.iter().all(|&v| v == 0.0) {
            continue;
        }

        // Bottleneck convolution.
        let mut dzf = df;
        for (g, &z) in dzf.iter_mut().zip(&cache.zf) {
            if z <= 0.0 {
                *g = 0.0;
            }
        }
        let mut da2 = vec![0.0; C2 * d.h4 * d.w4];
        ops::conv2d_backward(
            &cache.a2, C2, d.h4, d.w4,
            &params.bott_w.data, C2, 1, &dzf, d.h4, d.w4,
            Some(&mut da2), &mut grads.bott_w.data, &mut grads.bott_b.data,
        );

        // Encoder stage 2.
        for (g, &z) in da2.iter_mut().zip(&cache.z2) {
            if z <= 0.0 {
                *g = 0.0;
            }
        }
        let mut da1 = vec![0.0; C1 * d.h2 * d.w2];
        ops::conv2d_backward(
            &cache.a1, C1, d.h2, d.w2,
            &params.enc2_w.data, C2, 2, &da2, d.h4, d.w4,
            Some(&mut da1), &mut grads.enc2_w.data, &mut grads.enc2_b.data,
        );

        // Encoder stage 1; no input gradient needed.
        for (g, &z) in da1.iter_mut().zip(&cache.z1) {
            if z <= 0.0 {
                *g = 0.0;
            }
        }
        ops::conv2d_backward(
            clip.frame(ti), 1, d.h, d.w,
            &params.enc1_w.data, C1, 2, &da1, d.h2, d.w2,
            None, &mut grads.enc1_w.data, &mut grads.enc1_b.data,
        );
    }

    losses.total = weights.heatmap * losses.heatmap
        + weights.inbound * losses.inbound
        + weights.align * losses.align;
    Ok((losses, grads))
}

/// Convenience wrapper that runs its own forward pass.
pub fn backward(
    clip: &ClipTensor,
    params: &ParamSet,
    targets: &[Grid],
    labels: &[bool],
    align: Option<&AlignTerm>,
    weights: &LossWeights,
) -> Result<(LossValues, ParamSet)> {
    let pass = forward_pass(clip, params)?;
    backward_pass(&pass, clip, params, targets, labels, align, weights)
}

#[cfg(test)]
mod tests;

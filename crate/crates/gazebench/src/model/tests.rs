use super::*;
use nalgebra::Rotation3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_clip(rng: &mut ChaCha8Rng, t: usize, h: usize, w: usize) -> ClipTensor {
    let mut clip = ClipTensor::zeros(t, h, w);
    for v in clip.data.iter_mut() {
        *v = rng.gen_range(0.0..1.0);
    }
    clip
}

fn random_targets(rng: &mut ChaCha8Rng, t: usize, h: usize, w: usize) -> Vec<Grid> {
    (0..t)
        .map(|_| {
            let mut g = Grid::zeros(h, w);
            for v in g.data.iter_mut() {
                *v = rng.gen_range(0.01..1.0);
            }
            let s = g.sum();
            g.data.iter_mut().for_each(|v| *v /= s);
            g
        })
        .collect()
}

fn random_field(rng: &mut ChaCha8Rng, k: usize, h: usize, w: usize) -> LatentField {
    let mut f = LatentField::zeros(k, h, w);
    for v in f.data.iter_mut() {
        *v = rng.gen_range(-1.0..1.0);
    }
    f
}

#[test]
fn forward_shapes_and_softmax_normalization() {
    let params = ParamSet::init(&ModelConfig::default(), 1);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let clip = random_clip(&mut rng, 8, 64, 64);
    let out = forward(&clip, &params).unwrap();
    assert_eq!(out.probs.len(), 8);
    assert_eq!(out.inview_logits.len(), 8);
    assert_eq!(out.bottleneck.dims, vec![C2, 16, 16]);
    assert_eq!(out.latent.k, 8);
    assert_eq!((out.latent.h, out.latent.w), (16, 16));
    for p in &out.probs {
        assert_eq!((p.h, p.w), (64, 64));
        assert!((p.sum() - 1.0).abs() < 1e-6);
        assert!(p.data.iter().all(|&v| v.is_finite() && v >= 0.0));
    }
    for c in &out.inview_logits {
        let s = sigmoid(*c);
        assert!(s > 0.0 && s < 1.0);
    }
}

#[test]
fn constant_logits_give_uniform_maps() {
    // All-zero parameters (final decoder bias included) on any input
    // produce constant logits, hence uniform probability maps.
    let params = ParamSet::zeros(&ModelConfig::default());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let clip = random_clip(&mut rng, 2, 16, 16);
    let out = forward(&clip, &params).unwrap();
    let uniform = 1.0 / 256.0;
    for p in &out.probs {
        assert!(p.data.iter().all(|&v| (v - uniform).abs() < 1e-12));
    }
}

#[test]
fn forward_is_deterministic_bitwise() {
    let params = ParamSet::init(&ModelConfig::default(), 9);
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let clip = random_clip(&mut rng, 3, 16, 24);
    let a = forward(&clip, &params).unwrap();
    let b = forward(&clip, &params).unwrap();
    assert_eq!(a.probs, b.probs);
    assert_eq!(a.inview_logits, b.inview_logits);
    assert_eq!(a.latent, b.latent);
}

#[test]
fn forward_rejects_bad_shapes() {
    let params = ParamSet::init(&ModelConfig::default(), 1);
    let clip = ClipTensor::zeros(2, 30, 64);
    assert!(matches!(
        forward(&clip, &params).unwrap_err(),
        Error::ShapeMismatch(_)
    ));
    let clip = ClipTensor::zeros(0, 16, 16);
    assert!(forward(&clip, &params).is_err());
}

#[test]
fn kl_loss_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let targets = random_targets(&mut rng, 3, 8, 8);
    assert!(heatmap_loss(&targets, &targets).unwrap().abs() < 1e-9);

    let uniform = vec![Grid::from_vec(2, 2, vec![0.25; 4]); 2];
    assert_eq!(heatmap_loss(&uniform, &uniform).unwrap(), 0.0);

    // 1x2 maps: target (1, 0), pred (0.5, 0.5) -> ln 2.
    let target = vec![Grid::from_vec(1, 2, vec![1.0, 0.0])];
    let pred = vec![Grid::from_vec(1, 2, vec![0.5, 0.5])];
    assert!((heatmap_loss(&pred, &target).unwrap() - std::f64::consts::LN_2).abs() < 1e-6);

    // Nonnegative in general.
    let preds = random_targets(&mut rng, 3, 8, 8);
    assert!(heatmap_loss(&preds, &targets).unwrap() >= 0.0);
}

#[test]
fn bce_loss_identities() {
    assert!(inbound_loss(&[50.0], &[true]).unwrap() < 1e-9);
    assert!((inbound_loss(&[0.0], &[true]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    assert!((inbound_loss(&[0.0], &[false]).unwrap() - std::f64::consts::LN_2).abs() < 1e-12);
    // -ln sigmoid(1) = ln(1 + e^-1)
    let expect = (1.0 + (-1.0f64).exp()).ln();
    assert!((inbound_loss(&[1.0], &[true]).unwrap() - expect).abs() < 1e-12);
    assert!((expect - 0.3133).abs() < 1e-4);
}

#[test]
fn align_loss_identities() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let head = random_field(&mut rng, 4, 3, 5);
    let rot = Rotation3::from_euler_angles(0.3, -0.8, 1.3).into_inner();

    // neck = R · head element-wise gives zero loss.
    let mut neck = head.clone();
    let hw = head.h * head.w;
    for k in 0..head.k {
        for i in 0..hw {
            let v = nalgebra::Vector3::new(
                head.data[3 * k * hw + i],
                head.data[(3 * k + 1) * hw + i],
                head.data[(3 * k + 2) * hw + i],
            );
            let rv = rot * v;
            neck.data[3 * k * hw + i] = rv.x;
            neck.data[(3 * k + 1) * hw + i] = rv.y;
            neck.data[(3 * k + 2) * hw + i] = rv.z;
        }
    }
    assert!(align_loss(&head, &neck, &rot).unwrap() < 1e-18);

    // Identity rotation, one perturbed component of N total: delta^2 / N.
    let mut bumped = head.clone();
    let delta = 0.37;
    bumped.data[7] += delta;
    let n = head.component_count() as f64;
    let loss = align_loss(&head, &bumped, &Matrix3::identity()).unwrap();
    assert!((loss - delta * delta / n).abs() < 1e-9);

    // Flattened MSE oracle on random fields.
    let a = random_field(&mut rng, 4, 3, 5);
    let b = random_field(&mut rng, 4, 3, 5);
    let mut acc = 0.0;
    for k in 0..a.k {
        for i in 0..hw {
            let v = nalgebra::Vector3::new(
                a.data[3 * k * hw + i],
                a.data[(3 * k + 1) * hw + i],
                a.data[(3 * k + 2) * hw + i],
            );
            let rv = rot * v;
            for (c, rvc) in [rv.x, rv.y, rv.z].into_iter().enumerate() {
                let d = rvc - b.data[(3 * k + c) * hw + i];
                acc += d * d;
            }
        }
    }
    let expect = acc / n;
    assert!((align_loss(&a, &b, &rot).unwrap() - expect).abs() < 1e-12);

    // MSE symmetry under the inverse rotation.
    let fwd = align_loss(&a, &b, &rot).unwrap();
    let rev = align_loss(&b, &a, &rot.transpose()).unwrap();
    assert!((fwd - rev).abs() < 1e-9);

    // Non-rotations are rejected.
    let bad = Matrix3::identity() * 1.1;
    assert!(matches!(
        align_loss(&a, &b, &bad).unwrap_err(),
        Error::NotARotation
    ));
}

#[test]
fn latent_projection_is_linear_and_matches_dense_reference() {
    let cfg = ModelConfig { latent_vectors: 3 };
    let params = ParamSet::init(&cfg, 11);
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mk = |rng: &mut ChaCha8Rng| {
        let mut t = Tensor::zeros(&[C2, 4, 6]);
        for v in t.data.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
        t
    };
    let a = mk(&mut rng);
    let b = mk(&mut rng);

    // Zero input with zero bias gives a zero field.
    let mut zero_bias = params.clone();
    zero_bias.proj_b.fill(0.0);
    let z = project_latent_3d(&Tensor::zeros(&[C2, 4, 6]), &zero_bias).unwrap();
    assert!(z.data.iter().all(|&v| v == 0.0));

    // Linearity (with the bias removed).
    let mut ab = a.clone();
    for (x, y) in ab.data.iter_mut().zip(&b.data) {
        *x += y;
    }
    let pa = project_latent_3d(&a, &zero_bias).unwrap();
    let pb = project_latent_3d(&b, &zero_bias).unwrap();
    let pab = project_latent_3d(&ab, &zero_bias).unwrap();
    for i in 0..pab.data.len() {
        assert!((pab.data[i] - pa.data[i] - pb.data[i]).abs() < 1e-6);
    }

    // Dense matmul reference, bias included.
    let pa = project_latent_3d(&a, &params).unwrap();
    let hw = 4 * 6;
    for j in 0..3 * cfg.latent_vectors {
        for i in 0..hw {
            let mut expect = params.proj_b.data[j];
            for c in 0..C2 {
                expect += params.proj_w.data[j * C2 + c] * a.data[c * hw + i];
            }
            assert!((pa.data[j * hw + i] - expect).abs() < 1e-12);
        }
    }
}

/// Evaluate the weighted total loss for finite differencing.
fn total_loss(
    clip: &ClipTensor,
    params: &ParamSet,
    targets: &[Grid],
    labels: &[bool],
    align: Option<&AlignTerm>,
    weights: &LossWeights,
) -> f64 {
    let pass = forward_pass(clip, params).unwrap();
    let mut total = 0.0;
    if weights.heatmap != 0.0 {
        total += weights.heatmap * heatmap_loss(&pass.output.probs, targets).unwrap();
    }
    if weights.inbound != 0.0 {
        total += weights.inbound * inbound_loss(&pass.output.inview_logits, labels).unwrap();
    }
    if let Some(term) = align {
        if weights.align != 0.0 {
            total +=
                weights.align * align_loss(&pass.output.latent, term.other, &term.rotation).unwrap();
        }
    }
    total
}

#[test]
fn analytic_gradients_match_finite_differences() {
    // The instance is pinned to a point where no probed perturbation
    // crosses a ReLU kink within ±h; central differences are invalid
    // across kinks and the analytic gradient was separately verified to
    // be the h→0 limit.
    let cfg = ModelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let clip = random_clip(&mut rng, 2, 16, 16);
    let targets = random_targets(&mut rng, 2, 16, 16);
    let labels = vec![true, false];
    let other = random_field(&mut rng, cfg.latent_vectors, 4, 4);
    let rotation = Rotation3::from_euler_angles(0.2, 0.5, -0.4).into_inner();

    let combos: [(LossWeights, bool); 3] = [
        (LossWeights { heatmap: 1.0, inbound: 0.0, align: 0.0 }, false),
        (LossWeights { heatmap: 1.0, inbound: 1.0, align: 0.0 }, false),
        (LossWeights { heatmap: 1.0, inbound: 1.0, align: 1.0 }, true),
    ];
    for (weights, with_align) in combos {
        let params = ParamSet::init(&cfg, 1000);
        let align = with_align.then_some(AlignTerm {
            other: &other,
            rotation,
        });
        let (_, grads) = backward(&clip, &params, &targets, &labels, align.as_ref(), &weights)
            .unwrap();
        let h = 1e-4;
        for (idx, (name, grad)) in grads.named().into_iter().enumerate() {
            // Probe a few parameters per tensor.
            for probe in 0..5.min(grad.len()) {
                let i = (probe * 37 + idx * 11) % grad.len();
                let mut plus = params.clone();
                plus.named_mut()[idx].1.data[i] += h;
                let mut minus = params.clone();
                minus.named_mut()[idx].1.data[i] -= h;
                let fd = (total_loss(&clip, &plus, &targets, &labels, align.as_ref(), &weights)
                    - total_loss(&clip, &minus, &targets, &labels, align.as_ref(), &weights))
                    / (2.0 * h);
                let a = grad.data[i];
                let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-8);
                assert!(
                    rel < 1e-4,
                    "{name}[{i}]: analytic {a} vs fd {fd} (rel {rel}) under {weights:?}"
                );
            }
        }
    }
}

#[test]
fn zero_weights_give_zero_gradients() {
    let cfg = ModelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(20);
    let clip = random_clip(&mut rng, 2, 16, 16);
    let targets = random_targets(&mut rng, 2, 16, 16);
    let weights = LossWeights {
        heatmap: 0.0,
        inbound: 0.0,
        align: 0.0,
    };
    let params = ParamSet::init(&cfg, 8);
    let (losses, grads) = backward(&clip, &params, &targets, &[true, true], None, &weights).unwrap();
    assert_eq!(losses.total, 0.0);
    for (name, g) in grads.named() {
        assert!(g.data.iter().all(|&v| v == 0.0), "{name} has nonzero grads");
    }
}

#[test]
fn heatmap_gradient_vanishes_at_the_optimum() {
    let cfg = ModelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let clip = random_clip(&mut rng, 2, 16, 16);
    let params = ParamSet::init(&cfg, 5);
    let out = forward(&clip, &params).unwrap();
    // Supervise with the model's own predictions: KL is at its minimum.
    let weights = LossWeights {
        heatmap: 1.0,
        inbound: 0.0,
        align: 0.0,
    };
    let (losses, grads) = backward(&clip, &params, &out.probs, &[], None, &weights).unwrap();
    assert!(losses.heatmap.abs() < 1e-12);
    for (name, g) in grads.named() {
        assert!(
            g.data.iter().all(|&v| v.abs() < 1e-12),
            "{name} gradient not at minimum"
        );
    }
}

#[test]
fn zero_weight_terms_change_nothing_bitwise() {
    let cfg = ModelConfig::default();
    let mut rng = ChaCha8Rng::seed_from_u64(33);
    let clip = random_clip(&mut rng, 2, 16, 16);
    let targets = random_targets(&mut rng, 2, 16, 16);
    let params = ParamSet::init(&cfg, 3);
    let other = random_field(&mut rng, cfg.latent_vectors, 4, 4);
    let align = AlignTerm {
        other: &other,
        rotation: Matrix3::identity(),
    };

    let base = backward(
        &clip, &params, &targets, &[],
        None,
        &LossWeights { heatmap: 1.0, inbound: 0.0, align: 0.0 },
    )
    .unwrap();
    let with_disabled_terms = backward(
        &clip, &params, &targets, &[true, false],
        Some(&align),
        &LossWeights { heatmap: 1.0, inbound: 0.0, align: 0.0 },
    )
    .unwrap();
    assert_eq!(base.1, with_disabled_terms.1);
    assert_eq!(base.0.total, with_disabled_terms.0.total);
}

#[test]
fn param_count_is_deterministic() {
    let params = ParamSet::init(&ModelConfig::default(), 0);
    let again = ParamSet::init(&ModelConfig::default(), 0);
    assert_eq!(params, again);
    // 8·9+8 + 16·8·9+16 + 16·16·9+16 + 16·8·9+8 + 8·9+1 + 16+1 + 24·16+24
    let expect = (8 * 9 + 8)
        + (16 * 8 * 9 + 16)
        + (16 * 16 * 9 + 16)
        + (16 * 8 * 9 + 8)
        + (8 * 9 + 1)
        + (16 + 1)
        + (24 * 16 + 24);
    assert_eq!(params.param_count(), expect);
}

//! Gradient checks of the full backward pass against an independent
//! forward computation.
//!
//! The binary network is piecewise constant, so finite differences are taken
//! on its straight-through linearization at the current point: each sign is
//! replaced by `sign(x0) + (x - x0) * 1[|x0| <= 1]`, the bundle sign acting
//! on `pre_sum / sqrt(n)`. That surrogate equals the loss at `x0` and its
//! exact gradient is what the estimator claims to compute.

use metaldc::data::Example;
use metaldc::ldc::{LdcConfig, LdcModel};
use metaldc::losses::{backprop_full, batch_loss, hinge_grad_classlayer, hinge_loss, latent_scores, LdcGrads};
use metaldc::numerics::{seeded_rng, RealMatrix};
use rand::Rng;

type M = LdcModel<f64>;

fn sgn(x: f64) -> f64 {
    if x >= 0.0 {
        1.0
    } else {
        -1.0
    }
}

/// Straight-through linearization of `sign` around `x0`.
fn lin(x: f64, x0: f64) -> f64 {
    sgn(x0) + if x0.abs() <= 1.0 { x - x0 } else { 0.0 }
}

fn value_pre(m: &M, level: usize) -> Vec<f64> {
    let vb = &m.value_box;
    let u = vb.normalize(level);
    let h = vb.weights_in.cols();
    let hidden: Vec<f64> = (0..h)
        .map(|k| (vb.weights_in.get(0, k) * u + vb.bias_hidden.get(0, k)).tanh())
        .collect();
    (0..vb.weights_out.cols())
        .map(|d| (0..h).map(|k| hidden[k] * vb.weights_out.get(k, d)).sum::<f64>() + vb.bias_out.get(0, d))
        .collect()
}

/// Pre-activations of one example: ValueBox outputs per feature and the
/// bundle sums, both computed with binary forward values.
fn pre_sums(m: &M, levels: &[usize], model_at: &M) -> Vec<f64> {
    let d = m.dim();
    let mut sums = vec![0.0; d];
    for (i, &l) in levels.iter().enumerate() {
        let v = value_pre(m, l);
        let v0 = value_pre(model_at, l);
        for k in 0..d {
            let f = lin(m.feature_layer.latent.get(i, k), model_at.feature_layer.latent.get(i, k));
            sums[k] += f * lin(v[k], v0[k]);
        }
    }
    sums
}

/// Mean hinge loss of the linearized network at `m`, linearized around `at`.
fn surrogate_loss(m: &M, at: &M, batch: &[Example], margin: f64) -> f64 {
    let n = m.n_features() as f64;
    let scale = 1.0 / n.sqrt();
    let mut total = 0.0;
    for e in batch {
        let levels = m.quantize(&e.features).unwrap();
        let pre_now = pre_sums(m, &levels, at);
        let pre0 = pre_sums(at, &levels, at);
        let h: Vec<f64> = pre_now.iter().zip(&pre0).map(|(&p, &p0)| lin(p * scale, p0 * scale)).collect();
        let scores: Vec<f64> = (0..m.n_classes())
            .map(|j| {
                (0..m.dim())
                    .map(|k| lin(m.class_layer.latent.get(j, k), at.class_layer.latent.get(j, k)) * h[k])
                    .sum()
            })
            .collect();
        total += hinge_loss(&scores, e.label, margin).unwrap();
    }
    total / batch.len() as f64
}

fn perturbed(m: &M, dir: &LdcGrads<f64>, eps: f64) -> M {
    let mut out = m.clone();
    let vb = &mut out.value_box;
    let params = [
        &mut vb.weights_in,
        &mut vb.bias_hidden,
        &mut vb.weights_out,
        &mut vb.bias_out,
        &mut out.feature_layer.latent,
        &mut out.class_layer.latent,
    ];
    for (p, d) in params.into_iter().zip(dir.tensors()) {
        p.add_scaled(d, eps).unwrap();
    }
    out
}

fn random_batch<R: Rng>(n: usize, c: usize, size: usize, rng: &mut R) -> Vec<Example> {
    (0..size)
        .map(|_| Example {
            features: (0..n).map(|_| rng.gen()).collect(),
            label: rng.gen_range(0..c),
        })
        .collect()
}

fn random_direction<R: Rng>(m: &M, rng: &mut R) -> LdcGrads<f64> {
    let mut d = LdcGrads::zeros_like(m);
    for t in d.tensors_mut() {
        for v in t.as_mut_slice() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
    d
}

#[test]
fn directional_derivative_matches_surrogate() {
    let mut rng = seeded_rng(31);
    // Scores are integers; a half-integer margin keeps every hinge off its kink.
    let margin = 4.5;
    let mut checked = 0;
    let mut attempts = 0;
    while checked < 40 {
        attempts += 1;
        assert!(attempts < 2000, "too few usable instances");
        let n = rng.gen_range(2..=9);
        let c = rng.gen_range(2..=4);
        let cfg = LdcConfig {
            dim: rng.gen_range(2..=12),
            levels: rng.gen_range(2..=8),
            hidden: rng.gen_range(1..=4),
        };
        let model = LdcModel::<f64>::init(n, c, cfg, &mut rng).unwrap();
        let batch = random_batch(n, c, 3, &mut rng);
        let (loss, grads) = backprop_full(&model, &batch, margin).unwrap();
        assert!(grads.is_finite());
        let base = surrogate_loss(&model, &model, &batch, margin);
        assert!((base - loss).abs() < 1e-9, "surrogate must agree with the loss at the point");
        let dir = random_direction(&model, &mut rng);
        let analytic = grads.dot(&dir);
        let central = |eps: f64| {
            let up = surrogate_loss(&perturbed(&model, &dir, eps), &model, &batch, margin);
            let down = surrogate_loss(&perturbed(&model, &dir, -eps), &model, &batch, margin);
            (up - down) / (2.0 * eps)
        };
        let numeric = central(1e-3);
        // A hinge kink inside the step shows up as disagreement between step sizes.
        let fine = central(1e-4);
        if (numeric - fine).abs() > 1e-3 * fine.abs().max(1e-3) || analytic.abs() < 1e-6 {
            continue;
        }
        let rel = (numeric - analytic).abs() / analytic.abs();
        assert!(rel <= 1e-3, "numeric {numeric} vs analytic {analytic}");
        checked += 1;
    }
}

#[test]
fn zero_loss_gives_zero_gradients() {
    let mut rng = seeded_rng(8);
    let model = LdcModel::<f64>::init(6, 3, LdcConfig { dim: 16, levels: 4, hidden: 3 }, &mut rng).unwrap();
    let x: Vec<f32> = (0..6).map(|_| rng.gen()).collect();
    let (_, h) = model.encode_sample(&x).unwrap();
    let mut m = model.clone();
    // Target row equal to H, the others opposite: scores D vs -D.
    for j in 0..3 {
        for (k, s) in h.to_signs().into_iter().enumerate() {
            let v = if j == 1 { 0.5 } else { -0.5 };
            m.class_layer.latent.set(j, k, v * s as f64);
        }
    }
    let batch = vec![Example { features: x, label: 1 }];
    assert_eq!(batch_loss(&m, &batch, 1.0).unwrap(), 0.0);
    let (loss, grads) = backprop_full(&m, &batch, 1.0).unwrap();
    assert_eq!(loss, 0.0);
    assert!(grads.is_zero());
}

#[test]
fn single_example_class_gradient_is_masked_closed_form() {
    let mut rng = seeded_rng(9);
    let mut model = LdcModel::<f64>::init(5, 4, LdcConfig { dim: 10, levels: 6, hidden: 2 }, &mut rng).unwrap();
    // Push some class latents outside the clip so the mask matters.
    for k in 0..10 {
        model.class_layer.latent.set(0, k, if k % 3 == 0 { 1.5 } else { model.class_layer.latent.get(0, k) });
    }
    let x: Vec<f32> = (0..5).map(|_| rng.gen()).collect();
    let (_, h) = model.encode_sample(&x).unwrap();
    let hs: Vec<f64> = h.to_signs().into_iter().map(f64::from).collect();
    let scores = latent_scores(&model.class_layer.latent, &h.to_signs());
    let y = 2;
    let closed = hinge_grad_classlayer(&hs, &scores, y, 3.0).unwrap();
    let (_, grads) = backprop_full(&model, &[Example { features: x, label: y }], 3.0).unwrap();
    for j in 0..4 {
        for k in 0..10 {
            let inside = model.class_layer.latent.get(j, k).abs() <= 1.0;
            let want = if inside { closed.get(j, k) } else { 0.0 };
            assert_eq!(grads.class.get(j, k), want);
        }
    }
}

#[test]
fn gradients_are_finite_on_extreme_inputs() {
    let mut rng = seeded_rng(10);
    let mut model = LdcModel::<f64>::init(8, 3, LdcConfig { dim: 12, levels: 16, hidden: 4 }, &mut rng).unwrap();
    model.value_box.weights_in = RealMatrix::from_vec(1, 4, vec![1e6, -1e6, 0.0, 3.0]).unwrap();
    for features in [vec![0.0f32; 8], vec![1.0f32; 8], vec![0.5; 8]] {
        let (_, g) = backprop_full(&model, &[Example { features, label: 0 }], 1.0).unwrap();
        assert!(g.is_finite());
    }
}

//! Meta-training of `(θ, φ)` over a task distribution, and the plain
//! supervised trainer used for the pretrained baseline.
//!
//! Each outer step samples `m` tasks. For task `i` a copy `φ′_i` of the class
//! layer takes `inner_grad_steps` gradient steps on a support batch, the loss
//! of `(θ, φ′_i)` on a freshly drawn query batch is backpropagated, and one
//! Adam step is applied to every latent with the task-averaged gradient.

use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::data::{Example, TaskSampler, TaskSpec};
use crate::ldc::{latent_ste_clip, ste_pass, Encoded, EncoderView, LdcConfig, LdcModel};
use crate::losses::{
    backprop_with_class, class_layer_backward, encode_batch, hinge_score_grad, latent_scores, EncoderBackward,
    LdcGrads,
};
use crate::numerics::{derive_seed, seeded_rng, AdamConfig, AdamState, RealMatrix, Scalar, SeededRng};
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaConfig {
    /// Total outer steps; `None` runs `epochs` passes of
    /// `ceil(n_train / (inner_tasks · batch_size))` steps each.
    pub outer_steps: Option<usize>,
    /// Tasks `m` per outer step.
    pub inner_tasks: usize,
    /// Examples `K` per class in each support and query batch.
    pub shots: usize,
    pub inner_lr: f64,
    pub outer_lr: f64,
    pub inner_grad_steps: usize,
    pub margin: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub first_order: bool,
    pub adam: AdamConfig,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            outer_steps: None,
            inner_tasks: 4,
            shots: 1,
            inner_lr: 0.01,
            outer_lr: 0.001,
            inner_grad_steps: 1,
            margin: 1.0,
            epochs: 60,
            batch_size: 10,
            seed: 0,
            first_order: true,
            adam: AdamConfig::default(),
        }
    }
}

impl MetaConfig {
    pub fn validate(&self) -> Result<()> {
        if self.inner_tasks == 0 || self.shots == 0 || self.batch_size == 0 {
            return Err(Error::Config("inner_tasks, shots and batch_size must be at least 1".into()));
        }
        if !(self.inner_lr >= 0.0) || !(self.outer_lr > 0.0) {
            return Err(Error::Config(format!(
                "learning rates must satisfy inner_lr >= 0 and outer_lr > 0, got {} and {}",
                self.inner_lr, self.outer_lr
            )));
        }
        if !(self.margin > 0.0) {
            return Err(Error::Config(format!("margin must be positive, got {}", self.margin)));
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, n_train: usize) -> usize {
        n_train.div_ceil(self.inner_tasks * self.batch_size).max(1)
    }

    pub fn total_steps(&self, n_train: usize) -> usize {
        self.outer_steps.unwrap_or(self.epochs * self.steps_per_epoch(n_train))
    }
}

/// One row of the loss trace.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub outer_step: usize,
    /// Support loss before the inner update, averaged over tasks.
    pub mean_inner_loss: f64,
    /// Query loss at `φ′_i`, averaged over tasks.
    pub mean_outer_loss: f64,
}

#[derive(Clone, Debug)]
pub struct MetaTrainReport<S> {
    pub trace: Vec<TraceRow>,
    pub wall_time_secs: f64,
    pub model: LdcModel<S>,
}

/// Adam state for every latent tensor of an [`LdcModel`].
#[derive(Clone, Debug)]
pub struct LdcOptimizer<S> {
    states: Vec<AdamState<S>>,
}

impl<S: Scalar> LdcOptimizer<S> {
    pub fn new(model: &LdcModel<S>, cfg: AdamConfig) -> Result<Self> {
        let vb = &model.value_box;
        let states = [
            &vb.weights_in,
            &vb.bias_hidden,
            &vb.weights_out,
            &vb.bias_out,
            &model.feature_layer.latent,
            &model.class_layer.latent,
        ]
        .iter()
        .map(|m| AdamState::for_params(m, cfg))
        .collect::<Result<Vec<_>>>()?;
        Ok(Self { states })
    }

    /// One Adam step on every tensor, then the binary latents are clipped to
    /// `[-1, 1]` so they stay where the straight-through gradient is alive.
    pub fn step(&mut self, model: &mut LdcModel<S>, grads: &LdcGrads<S>, lr: S) -> Result<()> {
        let vb = &mut model.value_box;
        let params = [
            &mut vb.weights_in,
            &mut vb.bias_hidden,
            &mut vb.weights_out,
            &mut vb.bias_out,
            &mut model.feature_layer.latent,
            &mut model.class_layer.latent,
        ];
        for ((p, g), st) in params.into_iter().zip(grads.tensors()).zip(&mut self.states) {
            st.step(p, g, lr)?;
        }
        model.feature_layer.latent.clamp_abs(latent_ste_clip());
        model.class_layer.latent.clamp_abs(latent_ste_clip());
        if !model.value_box.check_finite() {
            return Err(Error::Numeric("ValueBox weights became non-finite".into()));
        }
        Ok(())
    }
}

/// Task-specific class latents after `steps` gradient steps on `support`;
/// `model` is not modified.
pub fn inner_update<S: Scalar>(
    model: &LdcModel<S>,
    support: &[Example],
    alpha: S,
    steps: usize,
    margin: S,
) -> Result<RealMatrix<S>> {
    if support.is_empty() {
        return Err(Error::Input("empty support batch".into()));
    }
    let view = model.encoder_view();
    let (enc, labels) = encode_batch(&view, support)?;
    Ok(inner_from_encoded(&model.class_layer.latent, &enc, &labels, alpha, steps, margin, None)?.1)
}

/// Per-step record needed by the second-order term: class latents and
/// per-example score gradients at that step.
struct InnerStep<S> {
    latent: RealMatrix<S>,
    score_grads: Vec<Vec<S>>,
}

/// Returns the support loss before the first step and the updated latents.
fn inner_from_encoded<S: Scalar>(
    phi: &RealMatrix<S>,
    enc: &[Encoded],
    labels: &[usize],
    alpha: S,
    steps: usize,
    margin: S,
    mut history: Option<&mut Vec<InnerStep<S>>>,
) -> Result<(S, RealMatrix<S>)> {
    let mut current = phi.clone();
    let mut first_loss = None;
    for _ in 0..steps.max(1) {
        let (loss, grad) = class_layer_backward(&current, enc, labels, margin, None)?;
        first_loss.get_or_insert(loss);
        if steps == 0 {
            break;
        }
        if let Some(h) = history.as_deref_mut() {
            let score_grads = enc
                .iter()
                .zip(labels)
                .map(|(e, &y)| hinge_score_grad(&latent_scores(&current, &e.h), y, margin))
                .collect::<Result<Vec<_>>>()?;
            h.push(InnerStep {
                latent: current.clone(),
                score_grads,
            });
        }
        current.add_scaled(&grad, -alpha)?;
    }
    Ok((first_loss.expect("at least one evaluation"), current))
}

/// Support and query examples of one task.
#[derive(Clone, Debug)]
pub struct TaskBatch {
    pub support: Vec<Example>,
    pub query: Vec<Example>,
}

/// Mean losses of one outer step.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub inner_loss: f64,
    pub outer_loss: f64,
}

/// Query-loss gradient of one task with respect to `(θ, φ)`.
fn task_gradient<S: Scalar>(
    model: &LdcModel<S>,
    view: &EncoderView<S>,
    batch: &TaskBatch,
    cfg: &MetaConfig,
) -> Result<(S, S, LdcGrads<S>)> {
    let margin = S::of(cfg.margin);
    let alpha = S::of(cfg.inner_lr);
    let (enc_s, lab_s) = encode_batch(view, &batch.support)?;
    let mut history = Vec::new();
    let record = (!cfg.first_order).then_some(&mut history);
    let (inner_loss, phi_task) = inner_from_encoded(
        &model.class_layer.latent,
        &enc_s,
        &lab_s,
        alpha,
        cfg.inner_grad_steps,
        margin,
        record,
    )?;
    let (enc_q, lab_q) = encode_batch(view, &batch.query)?;
    let (outer_loss, mut grads) = backprop_with_class(model, view, &phi_task, &enc_q, &lab_q, margin)?;
    if !cfg.first_order {
        // φ′ depends on θ through the support encodings H_b:
        // ∂φ′_jd/∂H_bd = −(α/|B|) M_jd g_bj at each inner step.
        let d = model.dim();
        let coef = -alpha / S::of(enc_s.len() as f64);
        let mut back = EncoderBackward::new(view);
        for (b, e) in enc_s.iter().enumerate() {
            let mut u = vec![S::zero(); d];
            for step in &history {
                for (j, &gbj) in step.score_grads[b].iter().enumerate() {
                    if gbj == S::zero() {
                        continue;
                    }
                    let lat = step.latent.row(j);
                    let gq = grads.class.row(j);
                    for k in 0..d {
                        if ste_pass(lat[k]) {
                            u[k] += coef * gq[k] * gbj;
                        }
                    }
                }
            }
            back.accumulate(e, &u, S::one());
        }
        back.finish(model, &mut grads);
    }
    Ok((inner_loss, outer_loss, grads))
}

/// One meta-update over `batches`, one per task.
pub fn outer_step<S: Scalar>(
    model: &mut LdcModel<S>,
    opt: &mut LdcOptimizer<S>,
    batches: &[TaskBatch],
    cfg: &MetaConfig,
) -> Result<StepStats> {
    if batches.is_empty() {
        return Err(Error::Input("outer step needs at least one task".into()));
    }
    let view = model.encoder_view();
    let mut total = LdcGrads::zeros_like(model);
    let (mut inner, mut outer) = (0.0, 0.0);
    let inv = S::one() / S::of(batches.len() as f64);
    for b in batches {
        let (li, lo, g) = task_gradient(model, &view, b, cfg)?;
        total.add_scaled(&g, inv)?;
        inner += li.to_f64_lossy();
        outer += lo.to_f64_lossy();
    }
    if !total.is_finite() {
        return Err(Error::Numeric("non-finite meta-gradient".into()));
    }
    if !total.is_zero() {
        opt.step(model, &total, S::of(cfg.outer_lr))?;
    }
    let m = batches.len() as f64;
    Ok(StepStats {
        inner_loss: inner / m,
        outer_loss: outer / m,
    })
}

/// Draws tasks without replacement from the pool, reshuffling whenever the
/// pool is exhausted.
struct TaskCursor {
    order: Vec<usize>,
    next: usize,
}

impl TaskCursor {
    fn new(n: usize, rng: &mut SeededRng) -> Self {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(rng);
        Self { order, next: 0 }
    }

    fn take(&mut self, rng: &mut SeededRng) -> usize {
        if self.next == self.order.len() {
            self.order.shuffle(rng);
            self.next = 0;
        }
        self.next += 1;
        self.order[self.next - 1]
    }
}

fn check_sampler(sampler: &TaskSampler<'_>, cfg: &MetaConfig) -> Result<()> {
    cfg.validate()?;
    if sampler.pool().len() < cfg.inner_tasks {
        return Err(Error::Data(format!(
            "task pool has {} tasks, each outer step needs {}",
            sampler.pool().len(),
            cfg.inner_tasks
        )));
    }
    let need = 2 * cfg.shots;
    if sampler.min_class_size() < need {
        return Err(Error::Data(format!(
            "a class has {} examples, meta-training needs at least {need}",
            sampler.min_class_size()
        )));
    }
    Ok(())
}

/// Fresh model for a sampler, seeded from `cfg.seed`.
pub fn init_model<S: Scalar>(sampler: &TaskSampler<'_>, ldc: LdcConfig, seed: u64) -> Result<LdcModel<S>> {
    LdcModel::init(sampler.n_features(), sampler.ways(), ldc, &mut seeded_rng(derive_seed(seed, 1)))
}

fn sample_step(
    sampler: &TaskSampler<'_>,
    cursor: &mut TaskCursor,
    cfg: &MetaConfig,
    rng: &mut SeededRng,
    with_support: bool,
) -> Result<Vec<TaskBatch>> {
    (0..cfg.inner_tasks)
        .map(|_| {
            let task: &TaskSpec = &sampler.pool()[cursor.take(rng)];
            let support = if with_support {
                sampler.sample_batch(task, cfg.shots, rng)?
            } else {
                Vec::new()
            };
            let query = sampler.sample_batch(task, cfg.shots, rng)?;
            Ok(TaskBatch { support, query })
        })
        .collect()
}

/// Full meta-training run; deterministic given `cfg.seed`.
pub fn meta_train<S: Scalar>(sampler: &TaskSampler<'_>, ldc: LdcConfig, cfg: &MetaConfig) -> Result<MetaTrainReport<S>> {
    train_loop(sampler, ldc, cfg, true)
}

/// Standard supervised training on the pooled training tasks: the same
/// sampling schedule, no inner loop, one Adam step per batch of tasks.
pub fn supervised_train<S: Scalar>(
    sampler: &TaskSampler<'_>,
    ldc: LdcConfig,
    cfg: &MetaConfig,
) -> Result<MetaTrainReport<S>> {
    train_loop(sampler, ldc, cfg, false)
}

fn train_loop<S: Scalar>(
    sampler: &TaskSampler<'_>,
    ldc: LdcConfig,
    cfg: &MetaConfig,
    meta: bool,
) -> Result<MetaTrainReport<S>> {
    check_sampler(sampler, cfg)?;
    let start = Instant::now();
    let mut model = init_model::<S>(sampler, ldc, cfg.seed)?;
    let mut opt = LdcOptimizer::new(&model, cfg.adam)?;
    let mut rng = seeded_rng(derive_seed(cfg.seed, 3));
    let mut cursor = TaskCursor::new(sampler.pool().len(), &mut rng);
    let steps = cfg.total_steps(sampler.dataset().len());
    let mut trace = Vec::with_capacity(steps);
    for step in 0..steps {
        let batches = sample_step(sampler, &mut cursor, cfg, &mut rng, meta)?;
        let stats = if meta {
            outer_step(&mut model, &mut opt, &batches, cfg)?
        } else {
            supervised_step(&mut model, &mut opt, &batches, cfg)?
        };
        if !stats.outer_loss.is_finite() || !stats.inner_loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite loss at outer step {step}")));
        }
        trace.push(TraceRow {
            outer_step: step,
            mean_inner_loss: stats.inner_loss,
            mean_outer_loss: stats.outer_loss,
        });
    }
    Ok(MetaTrainReport {
        trace,
        wall_time_secs: start.elapsed().as_secs_f64(),
        model,
    })
}

/// One Adam step on the mean loss over all query batches. The inner-loss
/// column of the trace repeats the batch loss.
pub fn supervised_step<S: Scalar>(
    model: &mut LdcModel<S>,
    opt: &mut LdcOptimizer<S>,
    batches: &[TaskBatch],
    cfg: &MetaConfig,
) -> Result<StepStats> {
    let pooled: Vec<Example> = batches.iter().flat_map(|b| b.query.iter().cloned()).collect();
    let (loss, grads) = crate::losses::backprop_full(model, &pooled, S::of(cfg.margin))?;
    if !grads.is_zero() {
        opt.step(model, &grads, S::of(cfg.outer_lr))?;
    }
    let l = loss.to_f64_lossy();
    Ok(StepStats {
        inner_loss: l,
        outer_loss: l,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{separable_two_class, TaskSpec};
    use crate::losses::backprop_full;

    fn small_model(n: usize, c: usize, seed: u64) -> LdcModel<f64> {
        LdcModel::init(n, c, LdcConfig { dim: 32, levels: 16, hidden: 6 }, &mut seeded_rng(seed)).unwrap()
    }

    fn batch(ds: &crate::data::Dataset, ids: &[usize]) -> Vec<Example> {
        ids.iter().map(|&i| ds.example(i)).collect()
    }

    #[test]
    fn zero_alpha_keeps_phi_and_theta() {
        let ds = separable_two_class(12, 6, 1);
        let m = small_model(12, 2, 2);
        let before = m.theta_fingerprint();
        let phi = inner_update(&m, &batch(&ds, &[0, 1, 2, 3]), 0.0, 3, 1.0).unwrap();
        assert_eq!(phi, m.class_layer.latent);
        assert_eq!(m.theta_fingerprint(), before);
    }

    #[test]
    fn one_step_matches_closed_form() {
        let ds = separable_two_class(10, 2, 5);
        let m = small_model(10, 2, 6);
        let ex = batch(&ds, &[0]);
        let phi = inner_update(&m, &ex, 0.25, 1, 1.0).unwrap();
        let (_, h) = m.encode_sample(&ex[0].features).unwrap();
        let x: Vec<f64> = h.to_signs().iter().map(|&v| v as f64).collect();
        let scores: Vec<f64> = m.class_scores(&h).unwrap().iter().map(|&s| s as f64).collect();
        let g = crate::losses::hinge_grad_classlayer(&x, &scores, ex[0].label, 1.0).unwrap();
        let g = crate::ldc::binarize_ste_backward(&g, &m.class_layer.latent).unwrap();
        let mut expect = m.class_layer.latent.clone();
        expect.add_scaled(&g, -0.25).unwrap();
        assert_eq!(phi, expect);
    }

    #[test]
    fn zero_alpha_matches_plain_training() {
        let ds = separable_two_class(16, 20, 3);
        let cfg = MetaConfig {
            inner_lr: 0.0,
            outer_lr: 0.01,
            ..MetaConfig::default()
        };
        let mut a = small_model(16, 2, 4);
        let mut b = a.clone();
        let mut oa = LdcOptimizer::new(&a, cfg.adam).unwrap();
        let mut ob = LdcOptimizer::new(&b, cfg.adam).unwrap();
        for step in 0..10 {
            let q: Vec<usize> = (0..4).map(|k| (step * 4 + k) % ds.len()).collect();
            let tb = TaskBatch {
                support: batch(&ds, &[0, 1]),
                query: batch(&ds, &q),
            };
            outer_step(&mut a, &mut oa, std::slice::from_ref(&tb), &cfg).unwrap();
            let (_, g) = backprop_full(&b, &tb.query, 1.0).unwrap();
            if !g.is_zero() {
                ob.step(&mut b, &g, 0.01).unwrap();
            }
            assert_eq!(a, b, "diverged at step {step}");
        }
    }

    #[test]
    fn zero_query_loss_is_noop() {
        let ds = separable_two_class(8, 4, 9);
        let mut m = small_model(8, 2, 1);
        // Every input encodes to all +1 and class 0 is aligned with it.
        m.feature_layer.latent.fill(0.5);
        m.value_box = crate::ldc::ValueBox::zeros(16, 6, 32);
        m.class_layer.latent.fill(0.5);
        for k in 0..32 {
            m.class_layer.latent.set(1, k, -0.5);
        }
        let zeros: Vec<Example> = (0..ds.len()).filter(|&i| ds.label(i) == 0).map(|i| ds.example(i)).collect();
        let before = m.clone();
        let cfg = MetaConfig::default();
        let mut opt = LdcOptimizer::new(&m, cfg.adam).unwrap();
        let tb = TaskBatch {
            support: zeros.clone(),
            query: zeros,
        };
        let stats = outer_step(&mut m, &mut opt, &[tb], &cfg).unwrap();
        assert_eq!(stats.outer_loss, 0.0);
        assert_eq!(m, before);
    }

    #[test]
    fn second_order_differs_only_in_theta() {
        let ds = separable_two_class(12, 10, 7);
        let m = small_model(12, 2, 8);
        let view = m.encoder_view();
        let tb = TaskBatch {
            support: batch(&ds, &[0, 1, 2, 3]),
            query: batch(&ds, &[4, 5, 6, 7]),
        };
        let fo = MetaConfig {
            inner_lr: 0.5,
            ..MetaConfig::default()
        };
        let so = MetaConfig {
            first_order: false,
            ..fo.clone()
        };
        let (_, _, g1) = task_gradient(&m, &view, &tb, &fo).unwrap();
        let (_, _, g2) = task_gradient(&m, &view, &tb, &so).unwrap();
        assert_eq!(g1.class, g2.class);
        assert!(g2.is_finite());
    }

    #[test]
    fn zero_steps_returns_init() {
        let ds = separable_two_class(12, 10, 7);
        let sampler = TaskSampler::new(&ds, vec![TaskSpec::class_subset(vec![0, 1]); 4]).unwrap();
        let cfg = MetaConfig {
            outer_steps: Some(0),
            ..MetaConfig::default()
        };
        let ldc = LdcConfig { dim: 16, levels: 8, hidden: 3 };
        let r = meta_train::<f32>(&sampler, ldc, &cfg).unwrap();
        assert!(r.trace.is_empty());
        assert_eq!(r.model, init_model(&sampler, ldc, 0).unwrap());
    }

    #[test]
    fn too_few_examples_is_data_error() {
        let ds = separable_two_class(12, 1, 7);
        let sampler = TaskSampler::new(&ds, vec![TaskSpec::class_subset(vec![0, 1]); 4]).unwrap();
        let cfg = MetaConfig::default();
        let err = meta_train::<f32>(&sampler, LdcConfig::default(), &cfg).unwrap_err();
        assert!(matches!(err, Error::Data(_)));
    }
}

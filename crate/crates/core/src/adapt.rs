//! Fast adaptation of a trained model to a new task.
//!
//! With the representation frozen, every support example is encoded once and
//! the class latents take plain gradient steps with the closed-form hinge
//! gradient. The `full` variant instead backpropagates through the whole
//! model on every step and is reported as not deployable on device.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::data::{Episode, Example};
use crate::ldc::{BakedModel, Encoded, LdcModel};
use crate::losses::{backprop_full, class_layer_backward, latent_scores};
use crate::ldc::argmax;
use crate::numerics::{RealMatrix, Scalar};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum AdaptVariant {
    /// Update the class layer only.
    LastLayer,
    /// Update every latent.
    Full,
    /// No adaptation.
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdaptConfig {
    /// Support examples `M` per class.
    pub shots: usize,
    pub grad_steps: usize,
    pub lr: f64,
    pub margin: f64,
    pub variant: AdaptVariant,
}

impl Default for AdaptConfig {
    fn default() -> Self {
        Self {
            shots: 10,
            grad_steps: 5,
            lr: 0.1,
            margin: 1.0,
            variant: AdaptVariant::LastLayer,
        }
    }
}

impl AdaptConfig {
    pub fn validate(&self) -> Result<()> {
        if self.variant != AdaptVariant::None && self.shots == 0 {
            return Err(Error::Config("adaptation needs at least one shot per class".into()));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!("adaptation lr must be non-negative, got {}", self.lr)));
        }
        if !(self.margin > 0.0) {
            return Err(Error::Config(format!("margin must be positive, got {}", self.margin)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct AdaptResult<S> {
    pub model: LdcModel<S>,
    /// The deployed binary artifact after adaptation.
    pub baked: BakedModel,
    /// Support accuracy before the first step and after every step.
    pub support_accuracy: Vec<f64>,
    pub query_accuracy: f64,
    /// Number of support-example encodings performed.
    pub support_encodings: usize,
    pub deployable: bool,
    pub wall_time_secs: f64,
}

/// One gradient-descent step on the class latents with the batch-mean
/// closed-form hinge gradient, masked by the straight-through clip.
pub fn closed_form_step<S: Scalar>(
    phi: &RealMatrix<S>,
    encoded: &[Encoded],
    labels: &[usize],
    lr: S,
    margin: S,
) -> Result<RealMatrix<S>> {
    let (_, grad) = class_layer_backward(phi, encoded, labels, margin, None)?;
    let mut out = phi.clone();
    out.add_scaled(&grad, -lr)?;
    Ok(out)
}

fn encoded_accuracy<S: Scalar>(phi: &RealMatrix<S>, encoded: &[Encoded], labels: &[usize]) -> f64 {
    if encoded.is_empty() {
        return 0.0;
    }
    let hits = encoded
        .iter()
        .zip(labels)
        .filter(|(e, &y)| argmax(&latent_scores(phi, &e.h)) == y)
        .count();
    hits as f64 / encoded.len() as f64
}

fn accuracy_of<S: Scalar>(model: &LdcModel<S>, xs: &[Example]) -> Result<f64> {
    let view = model.encoder_view();
    let mut hits = 0;
    for e in xs {
        let enc = view.encode(&e.features)?;
        if argmax(&latent_scores(&model.class_layer.latent, &enc.h)) == e.label {
            hits += 1;
        }
    }
    Ok(if xs.is_empty() { 0.0 } else { hits as f64 / xs.len() as f64 })
}

fn check_episode<S: Scalar>(model: &LdcModel<S>, episode: &Episode, needs_support: bool) -> Result<()> {
    episode.check_disjoint()?;
    let c = model.n_classes();
    if let Some(e) = episode.query.iter().chain(&episode.support).find(|e| e.label >= c) {
        return Err(Error::Input(format!("episode label {} exceeds the model's {c} classes", e.label)));
    }
    if needs_support {
        let mut seen = vec![false; c];
        for e in &episode.support {
            seen[e.label] = true;
        }
        let labels_used = episode.ways();
        if let Some(missing) = (0..labels_used).find(|&j| !seen[j]) {
            return Err(Error::Data(format!("class {missing} has no support examples")));
        }
    }
    Ok(())
}

/// Adapts `model` on the episode's support set and scores the result on its
/// query set.
pub fn fast_adapt<S: Scalar>(model: &LdcModel<S>, episode: &Episode, cfg: &AdaptConfig) -> Result<AdaptResult<S>> {
    cfg.validate()?;
    check_episode(model, episode, cfg.variant != AdaptVariant::None)?;
    let start = Instant::now();
    let lr = S::of(cfg.lr);
    let margin = S::of(cfg.margin);
    let mut adapted = model.clone();
    let mut trace = Vec::new();
    let mut encodings = 0;
    match cfg.variant {
        AdaptVariant::None => {}
        AdaptVariant::LastLayer => {
            let view = model.encoder_view();
            let mut encoded = Vec::with_capacity(episode.support.len());
            for e in &episode.support {
                let full = view.encode(&e.features)?;
                encodings += 1;
                // Only H is needed once θ is frozen.
                encoded.push(Encoded {
                    levels: Vec::new(),
                    pre_sum: Vec::new(),
                    h: full.h,
                });
            }
            let labels: Vec<usize> = episode.support.iter().map(|e| e.label).collect();
            let mut phi = adapted.class_layer.latent.clone();
            trace.push(encoded_accuracy(&phi, &encoded, &labels));
            for _ in 0..cfg.grad_steps {
                phi = closed_form_step(&phi, &encoded, &labels, lr, margin)?;
                trace.push(encoded_accuracy(&phi, &encoded, &labels));
            }
            adapted.class_layer.latent = phi;
        }
        AdaptVariant::Full => {
            trace.push(accuracy_of(&adapted, &episode.support)?);
            for _ in 0..cfg.grad_steps {
                let (_, grads) = backprop_full(&adapted, &episode.support, margin)?;
                encodings += episode.support.len();
                let vb = &mut adapted.value_box;
                let params = [
                    &mut vb.weights_in,
                    &mut vb.bias_hidden,
                    &mut vb.weights_out,
                    &mut vb.bias_out,
                    &mut adapted.feature_layer.latent,
                    &mut adapted.class_layer.latent,
                ];
                for (p, g) in params.into_iter().zip(grads.tensors()) {
                    p.add_scaled(g, -lr)?;
                }
                trace.push(accuracy_of(&adapted, &episode.support)?);
            }
        }
    }
    let baked = adapted.bake();
    let query_accuracy = baked.accuracy(&episode.query)?;
    Ok(AdaptResult {
        model: adapted,
        baked,
        support_accuracy: trace,
        query_accuracy,
        support_encodings: encodings,
        deployable: cfg.variant != AdaptVariant::Full,
        wall_time_secs: start.elapsed().as_secs_f64(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{make_episode, separable_two_class, TaskSpec};
    use crate::ldc::LdcConfig;
    use crate::numerics::seeded_rng;

    fn setup() -> (LdcModel<f32>, Episode) {
        let ds = separable_two_class(24, 30, 1);
        let m = LdcModel::init(24, 2, LdcConfig { dim: 48, levels: 16, hidden: 6 }, &mut seeded_rng(2)).unwrap();
        let ep = make_episode(&ds, &TaskSpec::class_subset(vec![0, 1]), 5, 3).unwrap();
        (m, ep)
    }

    #[test]
    fn zero_lr_and_none_are_identity() {
        let (m, ep) = setup();
        let r = fast_adapt(&m, &ep, &AdaptConfig { lr: 0.0, ..AdaptConfig::default() }).unwrap();
        assert_eq!(r.model, m);
        let r0 = fast_adapt(&m, &ep, &AdaptConfig { variant: AdaptVariant::None, ..AdaptConfig::default() }).unwrap();
        assert_eq!(r0.model, m);
        assert_eq!(r0.support_encodings, 0);
        assert_eq!(r0.query_accuracy, m.bake().accuracy(&ep.query).unwrap());
    }

    #[test]
    fn last_layer_freezes_theta_and_encodes_once() {
        let (m, ep) = setup();
        for steps in [1, 5, 20] {
            let cfg = AdaptConfig {
                grad_steps: steps,
                shots: 5,
                ..AdaptConfig::default()
            };
            let r = fast_adapt(&m, &ep, &cfg).unwrap();
            assert_eq!(r.model.theta_fingerprint(), m.theta_fingerprint());
            assert_eq!(r.support_encodings, ep.support.len());
            assert_eq!(r.support_accuracy.len(), steps + 1);
            assert!(r.deployable);
        }
    }

    #[test]
    fn single_violation_step() {
        // H = all +1, class 1 scores above the target class 0.
        let h = vec![1i8; 4];
        let enc = vec![Encoded {
            levels: vec![],
            pre_sum: vec![],
            h: h.clone(),
        }];
        let phi = RealMatrix::from_vec(2, 4, vec![0.1, -0.1, -0.1, -0.1, 0.1, 0.1, 0.1, 0.1]).unwrap();
        // scores: class 0 = -2, class 1 = 4
        let out = closed_form_step(&phi, &enc, &[0], 0.5f32, 1.0).unwrap();
        for k in 0..4 {
            assert!((out.get(0, k) - (phi.get(0, k) + 0.5)).abs() < 1e-6);
            assert!((out.get(1, k) - (phi.get(1, k) - 0.5)).abs() < 1e-6);
        }
    }

    #[test]
    fn overlap_and_missing_class_errors() {
        let (m, mut ep) = setup();
        let mut bad = ep.clone();
        bad.query_ids.push(bad.support_ids[0]);
        assert!(matches!(fast_adapt(&m, &bad, &AdaptConfig::default()), Err(Error::Protocol(_))));
        ep.support.retain(|e| e.label == 0);
        ep.support_ids.truncate(ep.support.len());
        assert!(matches!(fast_adapt(&m, &ep, &AdaptConfig::default()), Err(Error::Data(_))));
    }

    #[test]
    fn full_variant_is_flagged() {
        let (m, ep) = setup();
        let r = fast_adapt(&m, &ep, &AdaptConfig { variant: AdaptVariant::Full, grad_steps: 2, ..AdaptConfig::default() }).unwrap();
        assert!(!r.deployable);
        assert_eq!(r.support_encodings, 2 * ep.support.len());
    }
}

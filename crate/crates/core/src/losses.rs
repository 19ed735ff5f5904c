//! Multiclass hinge loss and its gradients.
//!
//! The class-layer gradient is closed-form. Gradients for the representation
//! flow back through the bundle sign, the Hadamard binding and the ValueBox
//! with the clipped straight-through estimator at every sign. Batch
//! gradients are means, accumulated sequentially in batch order.

use serde::{Deserialize, Serialize};

use crate::data::Example;
use crate::ldc::{bundle_scale, sign_i8, ste_pass, Encoded, EncoderView, LdcModel};
use crate::numerics::{RealMatrix, Scalar};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HingeConfig {
    pub margin: f64,
}

impl Default for HingeConfig {
    fn default() -> Self {
        Self { margin: 1.0 }
    }
}

impl HingeConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.margin > 0.0) || !self.margin.is_finite() {
            return Err(Error::Config(format!("hinge margin must be positive, got {}", self.margin)));
        }
        Ok(())
    }
}

fn check_label(y: usize, c: usize) -> Result<()> {
    if y >= c {
        return Err(Error::Input(format!("label {y} outside [0, {c})")));
    }
    Ok(())
}

/// `Σ_{j≠y} max(0, s_j − s_y + Δ)`.
pub fn hinge_loss<S: Scalar>(scores: &[S], y: usize, margin: S) -> Result<S> {
    check_label(y, scores.len())?;
    let sy = scores[y];
    Ok(scores
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != y)
        .map(|(_, &s)| (s - sy + margin).max(S::zero()))
        .sum())
}

/// Per-class loss derivative `∂L/∂s_j`: the strict indicator
/// `1[s_j − s_y + Δ > 0]` off the target and minus their count on it.
pub fn hinge_score_grad<S: Scalar>(scores: &[S], y: usize, margin: S) -> Result<Vec<S>> {
    check_label(y, scores.len())?;
    let sy = scores[y];
    let mut g: Vec<S> = scores
        .iter()
        .enumerate()
        .map(|(j, &s)| if j != y && s - sy + margin > S::zero() { S::one() } else { S::zero() })
        .collect();
    let fired: S = g.iter().copied().sum();
    g[y] = -fired;
    Ok(g)
}

/// Closed-form hinge gradient with respect to the class weights `w`,
/// given `x` and `scores_j = w_j · x`: `∂L/∂w_j = (∂L/∂s_j) x`.
pub fn hinge_grad_classlayer<S: Scalar>(x: &[S], scores: &[S], y: usize, margin: S) -> Result<RealMatrix<S>> {
    if x.is_empty() {
        return Err(Error::dim("hinge_grad_classlayer x", 1, 0));
    }
    let g = hinge_score_grad(scores, y, margin)?;
    let d = x.len();
    let mut out = RealMatrix::zeros(scores.len(), d);
    for (j, &gj) in g.iter().enumerate() {
        if gj != S::zero() {
            for (o, &xv) in out.row_mut(j).iter_mut().zip(x) {
                *o = gj * xv;
            }
        }
    }
    Ok(out)
}

/// Gradients for every real latent of an [`LdcModel`].
#[derive(Clone, Debug, PartialEq)]
pub struct LdcGrads<S> {
    pub weights_in: RealMatrix<S>,
    pub bias_hidden: RealMatrix<S>,
    pub weights_out: RealMatrix<S>,
    pub bias_out: RealMatrix<S>,
    pub feature: RealMatrix<S>,
    pub class: RealMatrix<S>,
}

impl<S: Scalar> LdcGrads<S> {
    pub fn zeros_like(model: &LdcModel<S>) -> Self {
        let vb = &model.value_box;
        let z = |m: &RealMatrix<S>| RealMatrix::zeros(m.rows(), m.cols());
        Self {
            weights_in: z(&vb.weights_in),
            bias_hidden: z(&vb.bias_hidden),
            weights_out: z(&vb.weights_out),
            bias_out: z(&vb.bias_out),
            feature: z(&model.feature_layer.latent),
            class: z(&model.class_layer.latent),
        }
    }

    pub fn tensors(&self) -> [&RealMatrix<S>; 6] {
        [
            &self.weights_in,
            &self.bias_hidden,
            &self.weights_out,
            &self.bias_out,
            &self.feature,
            &self.class,
        ]
    }

    pub fn tensors_mut(&mut self) -> [&mut RealMatrix<S>; 6] {
        [
            &mut self.weights_in,
            &mut self.bias_hidden,
            &mut self.weights_out,
            &mut self.bias_out,
            &mut self.feature,
            &mut self.class,
        ]
    }

    pub fn add_scaled(&mut self, other: &Self, k: S) -> Result<()> {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.add_scaled(b, k)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: S) {
        for t in self.tensors_mut() {
            t.scale(k);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.tensors().iter().all(|t| t.is_zero())
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.is_finite())
    }

    /// Inner product with a direction of the same shape.
    pub fn dot(&self, other: &Self) -> S {
        self.tensors()
            .iter()
            .zip(other.tensors())
            .flat_map(|(a, b)| a.as_slice().iter().zip(b.as_slice()).map(|(&x, &y)| x * y))
            .sum()
    }
}

/// Scores of a `±1` encoding against binarized class latents.
pub fn latent_scores<S: Scalar>(class_latent: &RealMatrix<S>, h: &[i8]) -> Vec<S> {
    (0..class_latent.rows())
        .map(|j| {
            let s: i32 = class_latent
                .row(j)
                .iter()
                .zip(h)
                .map(|(&w, &x)| (sign_i8(w) * x) as i32)
                .sum();
            S::of(s as f64)
        })
        .collect()
}

/// Mean hinge loss and mean class-latent gradient (through the STE mask) of
/// pre-encoded examples. Optionally records `∂L/∂H` per example, unscaled.
pub fn class_layer_backward<S: Scalar>(
    class_latent: &RealMatrix<S>,
    encoded: &[Encoded],
    labels: &[usize],
    margin: S,
    mut dh_out: Option<&mut Vec<Vec<S>>>,
) -> Result<(S, RealMatrix<S>)> {
    if encoded.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    if encoded.len() != labels.len() {
        return Err(Error::dim("class_layer_backward labels", encoded.len(), labels.len()));
    }
    let (c, d) = class_latent.shape();
    let mut grad = RealMatrix::zeros(c, d);
    let mut loss = S::zero();
    for (e, &y) in encoded.iter().zip(labels) {
        if e.h.len() != d {
            return Err(Error::dim("class_layer_backward H", d, e.h.len()));
        }
        let scores = latent_scores(class_latent, &e.h);
        loss += hinge_loss(&scores, y, margin)?;
        let g = hinge_score_grad(&scores, y, margin)?;
        for (j, &gj) in g.iter().enumerate() {
            if gj != S::zero() {
                for (o, &hv) in grad.row_mut(j).iter_mut().zip(&e.h) {
                    *o += gj * S::of(hv as f64);
                }
            }
        }
        if let Some(out) = dh_out.as_deref_mut() {
            let mut dh = vec![S::zero(); d];
            for (j, &gj) in g.iter().enumerate() {
                if gj != S::zero() {
                    for (o, &w) in dh.iter_mut().zip(class_latent.row(j)) {
                        *o += gj * S::of(sign_i8(w) as f64);
                    }
                }
            }
            out.push(dh);
        }
    }
    let inv = S::one() / S::of(encoded.len() as f64);
    loss *= inv;
    for (gv, &lat) in grad.as_mut_slice().iter_mut().zip(class_latent.as_slice()) {
        *gv = if ste_pass(lat) { *gv * inv } else { S::zero() };
    }
    Ok((loss, grad))
}

/// Accumulates `∂L/∂H` of encoded examples back to the θ latents.
pub struct EncoderBackward<'a, S> {
    view: &'a EncoderView<S>,
    /// `∂L/∂V` per level, before the ValueBox sign.
    value: RealMatrix<S>,
    /// `∂L/∂F` before the feature sign.
    feature: RealMatrix<S>,
    scale: S,
}

impl<'a, S: Scalar> EncoderBackward<'a, S> {
    pub fn new(view: &'a EncoderView<S>) -> Self {
        Self {
            view,
            value: RealMatrix::zeros(view.levels, view.dim),
            feature: RealMatrix::zeros(view.n_features, view.dim),
            scale: bundle_scale(view.n_features),
        }
    }

    /// Adds `weight · ∂L/∂H` of one example. The bundle sign is
    /// differentiated as `hardtanh(pre_sum / √n)`.
    pub fn accumulate(&mut self, e: &Encoded, dh: &[S], weight: S) {
        let d = self.view.dim;
        let dpre: Vec<S> = e
            .pre_sum
            .iter()
            .zip(dh)
            .map(|(&p, &g)| {
                if ste_pass(S::of(p as f64) * self.scale) {
                    g * self.scale * weight
                } else {
                    S::zero()
                }
            })
            .collect();
        if dpre.iter().all(|v| *v == S::zero()) {
            return;
        }
        for (i, &l) in e.levels.iter().enumerate() {
            let f = &self.view.feature_signs[i * d..(i + 1) * d];
            let v = &self.view.value_signs[l * d..(l + 1) * d];
            let fg = self.feature.row_mut(i);
            for k in 0..d {
                fg[k] += dpre[k] * S::of(v[k] as f64);
            }
            let vg = self.value.row_mut(l);
            for k in 0..d {
                vg[k] += dpre[k] * S::of(f[k] as f64);
            }
        }
    }

    /// Applies the STE masks and the ValueBox chain rule; adds the result
    /// into the θ fields of `grads`.
    pub fn finish(self, model: &LdcModel<S>, grads: &mut LdcGrads<S>) {
        let view = self.view;
        let vb = &model.value_box;
        let (q, d, h) = (view.levels, view.dim, vb.hidden());
        for (g, (&fg, &lat)) in grads
            .feature
            .as_mut_slice()
            .iter_mut()
            .zip(self.feature.as_slice().iter().zip(model.feature_layer.latent.as_slice()))
        {
            if ste_pass(lat) {
                *g += fg;
            }
        }
        for l in 0..q {
            let gv: Vec<S> = self
                .value
                .row(l)
                .iter()
                .zip(view.value_pre.row(l))
                .map(|(&g, &p)| if ste_pass(p) { g } else { S::zero() })
                .collect();
            if gv.iter().all(|v| *v == S::zero()) {
                continue;
            }
            let hidden = view.value_hidden.row(l);
            let u = vb.normalize(l);
            for (b, &g) in grads.bias_out.as_mut_slice().iter_mut().zip(&gv) {
                *b += g;
            }
            for k in 0..h {
                let wrow = vb.weights_out.row(k);
                let mut dhid = S::zero();
                for dd in 0..d {
                    dhid += gv[dd] * wrow[dd];
                }
                let grow = grads.weights_out.row_mut(k);
                for dd in 0..d {
                    grow[dd] += gv[dd] * hidden[k];
                }
                let da = dhid * (S::one() - hidden[k] * hidden[k]);
                grads.weights_in.as_mut_slice()[k] += da * u;
                grads.bias_hidden.as_mut_slice()[k] += da;
            }
        }
    }
}

/// Encodes a batch with the view, returning encodings and labels.
pub fn encode_batch<S: Scalar>(view: &EncoderView<S>, batch: &[Example]) -> Result<(Vec<Encoded>, Vec<usize>)> {
    let enc = batch.iter().map(|e| view.encode(&e.features)).collect::<Result<Vec<_>>>()?;
    Ok((enc, batch.iter().map(|e| e.label).collect()))
}

/// Mean hinge loss over the batch and its gradient with respect to every
/// latent, using `class_latent` in place of the model's class layer.
pub fn backprop_with_class<S: Scalar>(
    model: &LdcModel<S>,
    view: &EncoderView<S>,
    class_latent: &RealMatrix<S>,
    encoded: &[Encoded],
    labels: &[usize],
    margin: S,
) -> Result<(S, LdcGrads<S>)> {
    let mut dh = Vec::with_capacity(encoded.len());
    let (loss, class_grad) = class_layer_backward(class_latent, encoded, labels, margin, Some(&mut dh))?;
    let mut grads = LdcGrads::zeros_like(model);
    grads.class = class_grad;
    let inv = S::one() / S::of(encoded.len() as f64);
    let mut back = EncoderBackward::new(view);
    for (e, g) in encoded.iter().zip(&dh) {
        back.accumulate(e, g, inv);
    }
    back.finish(model, &mut grads);
    Ok((loss, grads))
}

/// Mean hinge loss and gradients for the whole model on a batch.
pub fn backprop_full<S: Scalar>(model: &LdcModel<S>, batch: &[Example], margin: S) -> Result<(S, LdcGrads<S>)> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let view = model.encoder_view();
    let (enc, labels) = encode_batch(&view, batch)?;
    backprop_with_class(model, &view, &model.class_layer.latent, &enc, &labels, margin)
}

/// Mean hinge loss of the model on a batch.
pub fn batch_loss<S: Scalar>(model: &LdcModel<S>, batch: &[Example], margin: S) -> Result<S> {
    if batch.is_empty() {
        return Err(Error::Input("empty batch".into()));
    }
    let view = model.encoder_view();
    let mut total = S::zero();
    for e in batch {
        let enc = view.encode(&e.features)?;
        total += hinge_loss(&latent_scores(&model.class_layer.latent, &enc.h), e.label, margin)?;
    }
    Ok(total / S::of(batch.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{finite_difference_grad, seeded_rng};
    use rand::Rng;

    #[test]
    fn hinge_values() {
        assert_eq!(hinge_loss(&[5.0, 0.0, 0.0], 0, 1.0).unwrap(), 0.0);
        assert_eq!(hinge_loss(&[0.0, 0.0], 0, 1.0).unwrap(), 1.0);
        assert_eq!(hinge_loss(&[0.0, 2.0, 0.0], 0, 1.0).unwrap(), 4.0);
        assert!(matches!(hinge_loss(&[0.0, 1.0], 2, 1.0), Err(Error::Input(_))));
    }

    #[test]
    fn hand_gradient() {
        let x = [1.0, -1.0];
        let w = [[1.0, 1.0], [1.0, -1.0], [-1.0, -1.0]];
        let scores: Vec<f64> = w.iter().map(|r| r[0] * x[0] + r[1] * x[1]).collect();
        assert_eq!(scores, vec![0.0, 2.0, 0.0]);
        let g = hinge_grad_classlayer(&x, &scores, 0, 1.0).unwrap();
        assert_eq!(g.as_slice(), &[-2.0, 2.0, 1.0, -1.0, 1.0, -1.0]);
    }

    #[test]
    fn satisfied_margins_give_zero() {
        let g = hinge_grad_classlayer(&[1.0, 1.0], &[5.0, 1.0, -3.0], 0, 1.0).unwrap();
        assert!(g.is_zero());
        // Slack exactly zero does not fire.
        let g = hinge_grad_classlayer(&[1.0], &[1.0, 0.0], 0, 1.0).unwrap();
        assert!(g.is_zero());
    }

    #[test]
    fn matches_finite_difference() {
        let mut rng = seeded_rng(11);
        let mut checked = 0;
        while checked < 100 {
            let c = rng.gen_range(2..=10);
            let d = rng.gen_range(1..=64);
            let y = rng.gen_range(0..c);
            let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let w = RealMatrix::<f64>::uniform(c, d, -1.0, 1.0, &mut rng);
            let scores = |w: &RealMatrix<f64>| -> Vec<f64> {
                (0..c).map(|j| w.row(j).iter().zip(&x).map(|(a, b)| a * b).sum()).collect()
            };
            let s = scores(&w);
            if (0..c).any(|j| j != y && (s[j] - s[y] + 1.0).abs() <= 1e-3) {
                continue;
            }
            let fd = finite_difference_grad(|w| hinge_loss(&scores(w), y, 1.0).unwrap(), &w, 1e-6).unwrap();
            let g = hinge_grad_classlayer(&x, &s, y, 1.0).unwrap();
            for (a, b) in fd.as_slice().iter().zip(g.as_slice()) {
                assert!((a - b).abs() <= 1e-5);
            }
            checked += 1;
        }
    }
}

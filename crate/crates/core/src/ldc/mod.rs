//! The LDC classifier.
//!
//! `θ` is the representation: the [`ValueBox`] (scalar level → bipolar value
//! vector) and the [`FeatureLayer`] (one bipolar vector per input feature).
//! `φ` is the [`ClassLayer`]. Every binary weight is held as a real latent
//! and binarized with `sign(0) = +1`.

pub(crate) mod baked;

pub use baked::{BakedModel, SizeReport, HEADER_BYTES, LDC_MAGIC};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bipolar::BipolarVector;
use crate::numerics::{RealMatrix, Scalar};
use crate::{Error, Result};

/// Architecture hyperparameters.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LdcConfig {
    /// Vector dimension `D`.
    pub dim: usize,
    /// Quantization levels `Q` of each input feature.
    pub levels: usize,
    /// Hidden width of the ValueBox.
    pub hidden: usize,
}

impl Default for LdcConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            levels: 256,
            hidden: 32,
        }
    }
}

/// Clip radius of the straight-through estimator.
pub const STE_CLIP: f64 = 1.0;

/// `floor(value · Q)` clamped to `[0, Q - 1]`.
pub fn quantize_feature(value: f32, levels: usize) -> Result<usize> {
    if !(0.0..=1.0).contains(&value) {
        return Err(Error::Input(format!("feature value {value} outside [0, 1]")));
    }
    Ok(((value * levels as f32).floor() as usize).min(levels - 1))
}

pub fn quantize_sample(x: &[f32], levels: usize) -> Result<Vec<usize>> {
    x.iter().map(|&v| quantize_feature(v, levels)).collect()
}

/// Clipped straight-through gradient of `sign`: upstream passes where
/// `|latent| <= 1`, inclusive.
pub fn binarize_ste_backward<S: Scalar>(grad_out: &RealMatrix<S>, latent: &RealMatrix<S>) -> Result<RealMatrix<S>> {
    grad_out.check_same_shape(latent, "binarize_ste_backward")?;
    let clip = S::of(STE_CLIP);
    let data = grad_out
        .as_slice()
        .iter()
        .zip(latent.as_slice())
        .map(|(&g, &l)| if l.abs() <= clip { g } else { S::zero() })
        .collect();
    RealMatrix::from_vec(grad_out.rows(), grad_out.cols(), data)
}

pub(crate) fn latent_ste_clip<S: Scalar>() -> S {
    S::of(STE_CLIP)
}

#[inline]
pub(crate) fn ste_pass<S: Scalar>(x: S) -> bool {
    x.abs() <= S::of(STE_CLIP)
}

#[inline]
pub(crate) fn sign_i8<S: Scalar>(x: S) -> i8 {
    if x >= S::zero() {
        1
    } else {
        -1
    }
}

/// Scale applied to the integer bundle before its straight-through clip,
/// so the clip region covers typical bundle magnitudes of order `√n`.
pub fn bundle_scale<S: Scalar>(n_features: usize) -> S {
    S::one() / S::of(n_features as f64).sqrt()
}

/// Scalar-to-vector encoder: `1 → hidden (tanh) → D (sign)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "S: Scalar + Deserialize<'de>"))]
pub struct ValueBox<S> {
    pub levels: usize,
    /// `1 × h`.
    pub weights_in: RealMatrix<S>,
    /// `1 × h`.
    pub bias_hidden: RealMatrix<S>,
    /// `h × D`.
    pub weights_out: RealMatrix<S>,
    /// `1 × D`.
    pub bias_out: RealMatrix<S>,
}

impl<S: Scalar> ValueBox<S> {
    pub fn init<R: Rng>(levels: usize, hidden: usize, dim: usize, rng: &mut R) -> Self {
        Self {
            levels,
            weights_in: RealMatrix::uniform(1, hidden, -0.5, 0.5, rng),
            bias_hidden: RealMatrix::uniform(1, hidden, -0.5, 0.5, rng),
            weights_out: RealMatrix::uniform(hidden, dim, -0.5, 0.5, rng),
            bias_out: RealMatrix::uniform(1, dim, -0.5, 0.5, rng),
        }
    }

    pub fn zeros(levels: usize, hidden: usize, dim: usize) -> Self {
        Self {
            levels,
            weights_in: RealMatrix::zeros(1, hidden),
            bias_hidden: RealMatrix::zeros(1, hidden),
            weights_out: RealMatrix::zeros(hidden, dim),
            bias_out: RealMatrix::zeros(1, dim),
        }
    }

    pub fn hidden(&self) -> usize {
        self.weights_in.cols()
    }

    pub fn dim(&self) -> usize {
        self.bias_out.cols()
    }

    /// Level mapped linearly onto `[-1, 1]`.
    pub fn normalize(&self, level: usize) -> S {
        S::of(2.0 * level as f64 / (self.levels - 1) as f64 - 1.0)
    }

    pub fn hidden_activations(&self, level: usize) -> Vec<S> {
        let u = self.normalize(level);
        self.weights_in
            .as_slice()
            .iter()
            .zip(self.bias_hidden.as_slice())
            .map(|(&w, &b)| (w * u + b).tanh())
            .collect()
    }

    fn pre_from_hidden(&self, hidden: &[S]) -> Vec<S> {
        let mut pre = self.bias_out.as_slice().to_vec();
        for (k, &hk) in hidden.iter().enumerate() {
            for (p, &w) in pre.iter_mut().zip(self.weights_out.row(k)) {
                *p += w * hk;
            }
        }
        pre
    }

    /// Pre-activations and binarized value vector for one level.
    pub fn forward(&self, level: usize) -> Result<(Vec<S>, BipolarVector)> {
        if level >= self.levels {
            return Err(Error::Input(format!("level {level} outside [0, {})", self.levels)));
        }
        let pre = self.pre_from_hidden(&self.hidden_activations(level));
        let v = BipolarVector::from_reals(&pre);
        Ok((pre, v))
    }

    pub fn check_finite(&self) -> bool {
        [&self.weights_in, &self.bias_hidden, &self.weights_out, &self.bias_out]
            .iter()
            .all(|m| m.is_finite())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "S: Scalar + Deserialize<'de>"))]
pub struct FeatureLayer<S> {
    /// `n × D` latents; row `i` binarizes to feature vector `F_i`.
    pub latent: RealMatrix<S>,
}

impl<S: Scalar> FeatureLayer<S> {
    pub fn n_features(&self) -> usize {
        self.latent.rows()
    }

    pub fn binarized(&self) -> Vec<BipolarVector> {
        (0..self.latent.rows())
            .map(|i| BipolarVector::from_reals(self.latent.row(i)))
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "S: Scalar + Deserialize<'de>"))]
pub struct ClassLayer<S> {
    /// `C × D` latents; row `j` binarizes to class vector `j`.
    pub latent: RealMatrix<S>,
}

impl<S: Scalar> ClassLayer<S> {
    pub fn n_classes(&self) -> usize {
        self.latent.rows()
    }

    pub fn class_vectors(&self) -> Vec<BipolarVector> {
        (0..self.latent.rows())
            .map(|j| BipolarVector::from_reals(self.latent.row(j)))
            .collect()
    }

    /// Class vectors as dense `±1` rows, `C × D` row-major.
    pub fn signs(&self) -> Vec<i8> {
        self.latent.as_slice().iter().map(|&v| sign_i8(v)).collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "S: Scalar + Deserialize<'de>"))]
pub struct LdcModel<S> {
    pub value_box: ValueBox<S>,
    pub feature_layer: FeatureLayer<S>,
    pub class_layer: ClassLayer<S>,
}

/// `argmax`, ties to the lowest index.
pub fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (j, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = j;
        }
    }
    best
}

impl<S: Scalar> LdcModel<S> {
    /// Random model with every parameter drawn from `uniform(-0.5, 0.5)`.
    pub fn init<R: Rng>(n_features: usize, n_classes: usize, cfg: LdcConfig, rng: &mut R) -> Result<Self> {
        Self::check_config(n_features, n_classes, cfg)?;
        let value_box = ValueBox::init(cfg.levels, cfg.hidden, cfg.dim, rng);
        let feature_layer = FeatureLayer {
            latent: RealMatrix::uniform(n_features, cfg.dim, -0.5, 0.5, rng),
        };
        let class_layer = ClassLayer {
            latent: RealMatrix::uniform(n_classes, cfg.dim, -0.5, 0.5, rng),
        };
        Ok(Self {
            value_box,
            feature_layer,
            class_layer,
        })
    }

    fn check_config(n_features: usize, n_classes: usize, cfg: LdcConfig) -> Result<()> {
        if cfg.dim == 0 || cfg.hidden == 0 || n_features == 0 {
            return Err(Error::Config("dim, hidden and n_features must be at least 1".into()));
        }
        if cfg.levels < 2 {
            return Err(Error::Config(format!("need at least 2 quantization levels, got {}", cfg.levels)));
        }
        if n_classes < 2 {
            return Err(Error::Config(format!("need at least 2 classes, got {n_classes}")));
        }
        Ok(())
    }

    /// Checks that every sub-dimension agrees.
    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        let vb = &self.value_box;
        let h = vb.hidden();
        if vb.bias_hidden.shape() != (1, h) || vb.weights_out.shape() != (h, d) || vb.bias_out.shape() != (1, d) {
            return Err(Error::Input("ValueBox shapes are inconsistent".into()));
        }
        if self.feature_layer.latent.cols() != d {
            return Err(Error::dim("feature layer dim", d, self.feature_layer.latent.cols()));
        }
        if self.class_layer.latent.cols() != d {
            return Err(Error::dim("class layer dim", d, self.class_layer.latent.cols()));
        }
        Self::check_config(
            self.n_features(),
            self.n_classes(),
            LdcConfig {
                dim: d,
                levels: vb.levels,
                hidden: h,
            },
        )
    }

    pub fn config(&self) -> LdcConfig {
        LdcConfig {
            dim: self.dim(),
            levels: self.levels(),
            hidden: self.value_box.hidden(),
        }
    }

    pub fn dim(&self) -> usize {
        self.value_box.dim()
    }

    pub fn levels(&self) -> usize {
        self.value_box.levels
    }

    pub fn n_features(&self) -> usize {
        self.feature_layer.n_features()
    }

    pub fn n_classes(&self) -> usize {
        self.class_layer.n_classes()
    }

    pub fn quantize(&self, x: &[f32]) -> Result<Vec<usize>> {
        if x.len() != self.n_features() {
            return Err(Error::dim("input features", self.n_features(), x.len()));
        }
        quantize_sample(x, self.levels())
    }

    /// Reference encoder: `pre_sum = Σ_i F_i ⊙ V(x_i)` as integers and
    /// `H = sign(pre_sum)`. Evaluates the ValueBox network directly.
    pub fn encode_sample(&self, x: &[f32]) -> Result<(Vec<i32>, BipolarVector)> {
        let levels = self.quantize(x)?;
        self.encode_levels(&levels)
    }

    pub fn encode_levels(&self, levels: &[usize]) -> Result<(Vec<i32>, BipolarVector)> {
        let d = self.dim();
        let mut memo: Vec<Option<Vec<i8>>> = vec![None; self.levels()];
        let mut sum = vec![0i32; d];
        for (i, &l) in levels.iter().enumerate() {
            if memo[l].is_none() {
                memo[l] = Some(self.value_box.forward(l)?.1.to_signs());
            }
            let v = memo[l].as_ref().expect("filled above");
            let f = self.feature_layer.latent.row(i);
            for k in 0..d {
                sum[k] += (sign_i8(f[k]) * v[k]) as i32;
            }
        }
        let h = BipolarVector::from_ints(&sum);
        Ok((sum, h))
    }

    /// `scores_j = <class_j, H>`, integers in `[-D, D]`.
    pub fn class_scores(&self, h: &BipolarVector) -> Result<Vec<i32>> {
        if h.dim() != self.dim() {
            return Err(Error::dim("class_scores", self.dim(), h.dim()));
        }
        let hs = h.to_signs();
        Ok((0..self.n_classes())
            .map(|j| {
                self.class_layer
                    .latent
                    .row(j)
                    .iter()
                    .zip(&hs)
                    .map(|(&w, &x)| (sign_i8(w) * x) as i32)
                    .sum()
            })
            .collect())
    }

    pub fn predict(&self, x: &[f32]) -> Result<usize> {
        let (_, h) = self.encode_sample(x)?;
        Ok(argmax(&self.class_scores(&h)?))
    }

    /// Bytes of every θ parameter; equal fingerprints mean a bit-identical θ.
    pub fn theta_fingerprint(&self) -> Vec<u8> {
        let vb = &self.value_box;
        [&vb.weights_in, &vb.bias_hidden, &vb.weights_out, &vb.bias_out, &self.feature_layer.latent]
            .iter()
            .flat_map(|m| m.as_slice().iter().flat_map(|v| v.to_f64_lossy().to_bits().to_le_bytes()))
            .collect()
    }

    /// Binarized θ tables for training and adaptation.
    pub fn encoder_view(&self) -> EncoderView<S> {
        let vb = &self.value_box;
        let q = self.levels();
        let d = self.dim();
        let h = vb.hidden();
        let mut value_hidden = RealMatrix::zeros(q, h);
        let mut value_pre = RealMatrix::zeros(q, d);
        for l in 0..q {
            let hid = vb.hidden_activations(l);
            let pre = vb.pre_from_hidden(&hid);
            value_hidden.row_mut(l).copy_from_slice(&hid);
            value_pre.row_mut(l).copy_from_slice(&pre);
        }
        let value_signs = value_pre.as_slice().iter().map(|&v| sign_i8(v)).collect();
        let feature_signs = self.feature_layer.latent.as_slice().iter().map(|&v| sign_i8(v)).collect();
        EncoderView {
            levels: q,
            dim: d,
            n_features: self.n_features(),
            value_hidden,
            value_pre,
            value_signs,
            feature_signs,
        }
    }

    pub fn bake(&self) -> BakedModel {
        BakedModel::from_model(self)
    }

    pub fn cast<T: Scalar>(&self) -> LdcModel<T> {
        let vb = &self.value_box;
        LdcModel {
            value_box: ValueBox {
                levels: vb.levels,
                weights_in: vb.weights_in.cast(),
                bias_hidden: vb.bias_hidden.cast(),
                weights_out: vb.weights_out.cast(),
                bias_out: vb.bias_out.cast(),
            },
            feature_layer: FeatureLayer {
                latent: self.feature_layer.latent.cast(),
            },
            class_layer: ClassLayer {
                latent: self.class_layer.latent.cast(),
            },
        }
    }
}

/// Snapshot of the binarized representation with the real ValueBox
/// intermediates kept for backpropagation.
#[derive(Clone, Debug)]
pub struct EncoderView<S> {
    pub levels: usize,
    pub dim: usize,
    pub n_features: usize,
    /// `Q × h` tanh activations.
    pub value_hidden: RealMatrix<S>,
    /// `Q × D` ValueBox output pre-activations.
    pub value_pre: RealMatrix<S>,
    /// `Q × D` signs of `value_pre`.
    pub value_signs: Vec<i8>,
    /// `n × D` signs of the feature latents.
    pub feature_signs: Vec<i8>,
}

/// One example after encoding.
#[derive(Clone, Debug, PartialEq)]
pub struct Encoded {
    pub levels: Vec<usize>,
    pub pre_sum: Vec<i32>,
    /// `H` as `±1` entries.
    pub h: Vec<i8>,
}

impl<S: Scalar> EncoderView<S> {
    pub fn encode_levels(&self, levels: Vec<usize>) -> Encoded {
        let d = self.dim;
        let mut pre_sum = vec![0i32; d];
        for (i, &l) in levels.iter().enumerate() {
            let f = &self.feature_signs[i * d..(i + 1) * d];
            let v = &self.value_signs[l * d..(l + 1) * d];
            for k in 0..d {
                pre_sum[k] += (f[k] * v[k]) as i32;
            }
        }
        let h = pre_sum.iter().map(|&s| if s >= 0 { 1 } else { -1 }).collect();
        Encoded { levels, pre_sum, h }
    }

    pub fn encode(&self, x: &[f32]) -> Result<Encoded> {
        if x.len() != self.n_features {
            return Err(Error::dim("input features", self.n_features, x.len()));
        }
        Ok(self.encode_levels(quantize_sample(x, self.levels)?))
    }
}

/// Scores of a dense `±1` encoding against dense `±1` class rows.
pub fn dense_scores(class_signs: &[i8], h: &[i8]) -> Vec<i32> {
    class_signs
        .chunks(h.len())
        .map(|w| w.iter().zip(h).map(|(&a, &b)| (a * b) as i32).sum())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::seeded_rng;

    fn model_from_signs(features: &[&[i8]], values: &[&[i8]], classes: &[&[i8]]) -> LdcModel<f64> {
        // Q = 2 with one hidden unit that saturates to +1 at level 0 and -1 at
        // level 1, so each output column can realize any pair of signs.
        let d = features[0].len();
        let mut vb = ValueBox::zeros(2, 1, d);
        vb.weights_in = RealMatrix::row_vector(vec![-20.0]).unwrap();
        for k in 0..d {
            let v0 = values[0][k] as f64;
            let v1 = values.get(1).map_or(v0, |v| v[k] as f64);
            vb.bias_out.set(0, k, (v0 + v1) / 2.0);
            vb.weights_out.set(0, k, (v0 - v1) / 2.0);
        }
        let to_latent = |rows: &[&[i8]]| {
            RealMatrix::from_vec(rows.len(), d, rows.iter().flat_map(|r| r.iter().map(|&v| v as f64 * 0.5)).collect())
                .unwrap()
        };
        LdcModel {
            value_box: vb,
            feature_layer: FeatureLayer {
                latent: to_latent(features),
            },
            class_layer: ClassLayer {
                latent: to_latent(classes),
            },
        }
    }

    #[test]
    fn quantize_edges() {
        assert_eq!(quantize_feature(0.0, 256).unwrap(), 0);
        assert_eq!(quantize_feature(1.0, 256).unwrap(), 255);
        assert_eq!(quantize_feature(0.5, 256).unwrap(), 128);
        assert!(quantize_feature(1.01, 256).is_err());
        assert!(quantize_feature(-0.01, 256).is_err());
    }

    #[test]
    fn zero_valuebox_gives_all_positive() {
        let vb = ValueBox::<f32>::zeros(4, 3, 5);
        let (pre, v) = vb.forward(2).unwrap();
        assert!(pre.iter().all(|&p| p == 0.0));
        assert_eq!(v, BipolarVector::positive(5));
        assert!(vb.forward(4).is_err());
    }

    #[test]
    fn dominant_output_column_is_positive() {
        let mut rng = seeded_rng(0);
        let mut vb = ValueBox::<f32>::init(16, 4, 3, &mut rng);
        vb.bias_hidden.fill(5.0);
        for k in 0..4 {
            vb.weights_out.set(k, 1, 100.0);
        }
        for l in 0..16 {
            let (_, v1) = vb.forward(l).unwrap();
            let (_, v2) = vb.forward(l).unwrap();
            assert_eq!(v1.get(1), 1);
            assert_eq!(v1, v2);
        }
    }

    #[test]
    fn hand_encode_two_features() {
        // F1 = [+1,-1], V1 = [+1,-1]; F2 = [+1,+1], V2 = [+1,+1].
        let m = model_from_signs(&[&[1, -1], &[1, 1]], &[&[1, -1], &[1, 1]], &[&[1, 1], &[-1, -1]]);
        // level 0 for feature 1, level 1 for feature 2.
        let (pre, h) = m.encode_sample(&[0.0, 1.0]).unwrap();
        assert_eq!(pre, vec![2, 2]);
        assert_eq!(h.to_signs(), vec![1, 1]);
    }

    #[test]
    fn hand_encode_tie() {
        let m = model_from_signs(&[&[1], &[1]], &[&[1], &[-1]], &[&[1], &[-1]]);
        let (pre, h) = m.encode_sample(&[0.0, 1.0]).unwrap();
        assert_eq!(pre, vec![0]);
        assert_eq!(h.to_signs(), vec![1]);
    }

    #[test]
    fn single_feature_is_binding() {
        let mut rng = seeded_rng(4);
        let m = LdcModel::<f32>::init(1, 3, LdcConfig { dim: 37, levels: 8, hidden: 4 }, &mut rng).unwrap();
        for l in 0..8 {
            let x = (l as f32 + 0.5) / 8.0;
            let (_, h) = m.encode_sample(&[x]).unwrap();
            let f = &m.feature_layer.binarized()[0];
            let v = m.value_box.forward(l).unwrap().1;
            assert_eq!(h, f.bind(&v).unwrap());
        }
    }

    #[test]
    fn scores_hand_cases() {
        let m = model_from_signs(&[&[1, 1, 1, 1]], &[&[1, 1, 1, 1]], &[&[1, 1, -1, -1], &[1, -1, -1, 1]]);
        let h = BipolarVector::from_signs(&[1, -1, -1, 1]).unwrap();
        assert_eq!(m.class_scores(&h).unwrap(), vec![0, 4]);
        assert_eq!(m.class_scores(&h.negated()).unwrap(), vec![0, -4]);
        assert!(m.class_scores(&BipolarVector::positive(3)).is_err());
    }

    #[test]
    fn argmax_ties_low() {
        assert_eq!(argmax(&[3, 5, 5, 1]), 1);
        assert_eq!(argmax(&[2, 2]), 0);
    }

    #[test]
    fn ste_clip_region() {
        let latent = RealMatrix::<f32>::row_vector(vec![0.5, 2.0, 1.0, -1.0, -1.5]).unwrap();
        let g = RealMatrix::row_vector(vec![3.0; 5]).unwrap();
        let out = binarize_ste_backward(&g, &latent).unwrap();
        assert_eq!(out.as_slice(), &[3.0, 0.0, 3.0, 3.0, 0.0]);
    }

    #[test]
    fn view_matches_reference_encoding() {
        let mut rng = seeded_rng(8);
        let m = LdcModel::<f32>::init(20, 4, LdcConfig { dim: 33, levels: 16, hidden: 5 }, &mut rng).unwrap();
        let view = m.encoder_view();
        for _ in 0..20 {
            let x: Vec<f32> = (0..20).map(|_| rng.gen::<f32>()).collect();
            let (pre, h) = m.encode_sample(&x).unwrap();
            let e = view.encode(&x).unwrap();
            assert_eq!(e.pre_sum, pre);
            assert_eq!(e.h, h.to_signs());
        }
    }

    #[test]
    fn same_levels_same_encoding() {
        let mut rng = seeded_rng(2);
        let m = LdcModel::<f32>::init(3, 2, LdcConfig { dim: 16, levels: 4, hidden: 3 }, &mut rng).unwrap();
        // 0.26 and 0.49 share level 1 at Q = 4.
        let a = m.encode_sample(&[0.26, 0.0, 0.9]).unwrap();
        let b = m.encode_sample(&[0.49, 0.1, 0.76]).unwrap();
        assert_eq!(a, b);
    }
}

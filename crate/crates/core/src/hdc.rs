//! Hyperdimensional baseline: fixed random item memory, bundled encodings,
//! class hypervectors from summed encodings and perceptron-style retraining.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::bipolar::{BipolarVector, BundleAccumulator};
use crate::data::Example;
use crate::ldc::baked::{read_envelope, write_envelope};
use crate::ldc::{argmax, quantize_sample, SizeReport, HEADER_BYTES};
use crate::numerics::{derive_seed, seeded_rng};
use crate::{Error, Result};

pub const HDC_MAGIC: &[u8; 4] = b"HDC1";

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HdcConfig {
    pub dim: usize,
    pub levels: usize,
    pub retrain_epochs: usize,
    pub retrain_rate: f64,
    pub seed: u64,
}

impl Default for HdcConfig {
    fn default() -> Self {
        Self {
            dim: 8000,
            levels: 256,
            retrain_epochs: 20,
            retrain_rate: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HdcModel {
    dim: usize,
    pub feature_hvs: Vec<BipolarVector>,
    pub value_hvs: Vec<BipolarVector>,
    pub class_accumulators: Vec<Vec<f64>>,
    pub class_hvs: Vec<BipolarVector>,
}

/// Per-epoch training accuracy of a retraining run, measured during the pass.
#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct RetrainReport {
    pub epoch_accuracy: Vec<f64>,
    pub updates: usize,
}

fn sign_of(acc: &[f64]) -> BipolarVector {
    BipolarVector::from_fn(acc.len(), |d| acc[d] >= 0.0)
}

/// Encodes many inputs against one item memory. When most features of an
/// input share a level, their bound terms follow from the per-dimension
/// count of `+1` bits over all feature hypervectors, so only the remaining
/// features are accumulated. The result equals [`HdcModel::encode`].
struct BatchEncoder<'a> {
    model: &'a HdcModel,
    feature_ones: Vec<u32>,
    bound: BundleAccumulator,
    plain: BundleAccumulator,
    histogram: Vec<usize>,
}

impl<'a> BatchEncoder<'a> {
    fn new(model: &'a HdcModel) -> Self {
        let mut all = BundleAccumulator::new(model.dim);
        for f in &model.feature_hvs {
            all.add(f);
        }
        Self {
            model,
            feature_ones: all.counts().to_vec(),
            bound: BundleAccumulator::new(model.dim),
            plain: BundleAccumulator::new(model.dim),
            histogram: vec![0; model.levels()],
        }
    }

    fn encode(&mut self, x: &[f32]) -> Result<BipolarVector> {
        let m = self.model;
        if x.len() != m.n_features() {
            return Err(Error::dim("HDC input features", m.n_features(), x.len()));
        }
        let levels = quantize_sample(x, m.levels())?;
        self.histogram.iter_mut().for_each(|h| *h = 0);
        for &l in &levels {
            self.histogram[l] += 1;
        }
        let (common, count) = self
            .histogram
            .iter()
            .enumerate()
            .max_by_key(|&(l, &c)| (c, std::cmp::Reverse(l)))
            .map(|(l, &c)| (l, c))
            .expect("at least two levels");
        if 2 * count <= levels.len() {
            return m.encode_with(x, &mut self.bound);
        }
        self.bound.reset();
        self.plain.reset();
        for (f, &l) in m.feature_hvs.iter().zip(&levels) {
            if l != common {
                self.bound.add_bound(f, &m.value_hvs[l]);
                self.plain.add(f);
            }
        }
        let n = levels.len() as u32;
        let rest = self.plain.counts().to_vec();
        let bound = self.bound.counts();
        let v = &m.value_hvs[common];
        Ok(BipolarVector::from_fn(m.dim, |d| {
            // Common-level features with F = +1, then matches against V.
            let ones = self.feature_ones[d] - rest[d];
            let matches = if v.is_positive(d) { ones } else { count as u32 - ones };
            2 * (bound[d] + matches) >= n
        }))
    }
}

impl HdcModel {
    /// Random item memory. Value hypervectors are level-encoded: each level
    /// flips a fresh block of `floor(D / (2 (Q - 1)))` positions of the
    /// previous one, so the extremes sit about `D / 2` apart.
    pub fn init(n: usize, levels: usize, classes: usize, cfg: &HdcConfig) -> Result<Self> {
        if n == 0 || classes == 0 || levels < 2 || cfg.dim == 0 {
            return Err(Error::Config("HDC needs n, C, D ≥ 1 and Q ≥ 2".into()));
        }
        let d = cfg.dim;
        let mut rng = seeded_rng(derive_seed(cfg.seed, 0x4844));
        let feature_hvs = (0..n).map(|_| BipolarVector::random(d, &mut rng)).collect();
        let mut positions: Vec<usize> = (0..d).collect();
        positions.shuffle(&mut rng);
        let per_level = d / (2 * (levels - 1));
        let mut current = BipolarVector::random(d, &mut rng);
        let mut value_hvs = Vec::with_capacity(levels);
        value_hvs.push(current.clone());
        for q in 1..levels {
            for &p in &positions[(q - 1) * per_level..q * per_level] {
                current.flip(p);
            }
            value_hvs.push(current.clone());
        }
        Ok(Self {
            dim: d,
            feature_hvs,
            value_hvs,
            class_accumulators: vec![vec![0.0; d]; classes],
            class_hvs: vec![BipolarVector::positive(d); classes],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_features(&self) -> usize {
        self.feature_hvs.len()
    }

    pub fn levels(&self) -> usize {
        self.value_hvs.len()
    }

    pub fn n_classes(&self) -> usize {
        self.class_hvs.len()
    }

    /// `sign(Σ_i F_i ⊙ V[level(x_i)])`.
    pub fn encode(&self, x: &[f32]) -> Result<BipolarVector> {
        let mut acc = BundleAccumulator::new(self.dim);
        self.encode_with(x, &mut acc)
    }

    fn encode_with(&self, x: &[f32], acc: &mut BundleAccumulator) -> Result<BipolarVector> {
        if x.len() != self.n_features() {
            return Err(Error::dim("HDC input features", self.n_features(), x.len()));
        }
        let levels = quantize_sample(x, self.levels())?;
        acc.reset();
        for (f, &l) in self.feature_hvs.iter().zip(&levels) {
            acc.add_bound(f, &self.value_hvs[l]);
        }
        Ok(acc.sign())
    }

    pub fn encode_all(&self, xs: &[Example]) -> Result<Vec<BipolarVector>> {
        let mut enc = BatchEncoder::new(self);
        xs.iter().map(|e| enc.encode(&e.features)).collect()
    }

    fn check_labels(&self, labels: &[usize]) -> Result<()> {
        if let Some(&bad) = labels.iter().find(|&&y| y >= self.n_classes()) {
            return Err(Error::Input(format!("label {bad} outside [0, {})", self.n_classes())));
        }
        Ok(())
    }

    /// Sums encodings per class. Returns the classes that received no
    /// examples; their hypervectors stay all `+1`.
    pub fn train_encoded(&mut self, encoded: &[BipolarVector], labels: &[usize]) -> Result<Vec<usize>> {
        if encoded.is_empty() {
            return Err(Error::Input("HDC training set is empty".into()));
        }
        self.check_labels(labels)?;
        for acc in &mut self.class_accumulators {
            acc.iter_mut().for_each(|a| *a = 0.0);
        }
        let mut counts = vec![0usize; self.n_classes()];
        for (h, &y) in encoded.iter().zip(labels) {
            counts[y] += 1;
            for (a, s) in self.class_accumulators[y].iter_mut().zip(h.to_signs()) {
                *a += s as f64;
            }
        }
        self.class_hvs = self.class_accumulators.iter().map(|a| sign_of(a)).collect();
        Ok(counts.iter().enumerate().filter(|(_, &c)| c == 0).map(|(j, _)| j).collect())
    }

    pub fn train(&mut self, xs: &[Example]) -> Result<Vec<usize>> {
        let enc = self.encode_all(xs)?;
        let labels: Vec<usize> = xs.iter().map(|e| e.label).collect();
        self.train_encoded(&enc, &labels)
    }

    /// Each misclassified example adds `λ H` to its true class and subtracts
    /// it from the predicted one; both hypervectors are re-signed at once.
    pub fn retrain_encoded(
        &mut self,
        encoded: &[BipolarVector],
        labels: &[usize],
        epochs: usize,
        rate: f64,
    ) -> Result<RetrainReport> {
        self.check_labels(labels)?;
        let mut report = RetrainReport::default();
        for _ in 0..epochs {
            let mut hits = 0;
            for (h, &y) in encoded.iter().zip(labels) {
                let pred = self.infer_encoded(h)?;
                if pred == y {
                    hits += 1;
                    continue;
                }
                if rate == 0.0 {
                    continue;
                }
                report.updates += 1;
                let signs = h.to_signs();
                for (a, &s) in self.class_accumulators[y].iter_mut().zip(&signs) {
                    *a += rate * s as f64;
                }
                for (a, &s) in self.class_accumulators[pred].iter_mut().zip(&signs) {
                    *a -= rate * s as f64;
                }
                self.class_hvs[y] = sign_of(&self.class_accumulators[y]);
                self.class_hvs[pred] = sign_of(&self.class_accumulators[pred]);
            }
            report.epoch_accuracy.push(hits as f64 / encoded.len().max(1) as f64);
        }
        Ok(report)
    }

    pub fn retrain(&mut self, xs: &[Example], epochs: usize, rate: f64) -> Result<RetrainReport> {
        let enc = self.encode_all(xs)?;
        let labels: Vec<usize> = xs.iter().map(|e| e.label).collect();
        self.retrain_encoded(&enc, &labels, epochs, rate)
    }

    /// Closest class by Hamming distance, ties to the lowest index.
    pub fn infer_encoded(&self, h: &BipolarVector) -> Result<usize> {
        let mut best = 0;
        let mut best_d = u32::MAX;
        for (j, c) in self.class_hvs.iter().enumerate() {
            let d = c.hamming(h)?;
            if d < best_d {
                best = j;
                best_d = d;
            }
        }
        Ok(best)
    }

    /// Same decision through dot products.
    pub fn infer_encoded_dot(&self, h: &BipolarVector) -> Result<usize> {
        let scores = self.class_hvs.iter().map(|c| c.dot(h)).collect::<Result<Vec<_>>>()?;
        Ok(argmax(&scores))
    }

    pub fn infer(&self, x: &[f32]) -> Result<usize> {
        self.infer_encoded(&self.encode(x)?)
    }

    pub fn accuracy(&self, xs: &[Example]) -> Result<f64> {
        if xs.is_empty() {
            return Ok(0.0);
        }
        let mut enc = BatchEncoder::new(self);
        let mut hits = 0;
        for e in xs {
            if self.infer_encoded(&enc.encode(&e.features)?)? == e.label {
                hits += 1;
            }
        }
        Ok(hits as f64 / xs.len() as f64)
    }

    /// Bytes of the fixed item memory, for immutability checks.
    pub fn item_memory_bytes(&self) -> Vec<u8> {
        self.feature_hvs.iter().chain(&self.value_hvs).flat_map(BipolarVector::to_bytes).collect()
    }

    pub fn size_report(&self) -> SizeReport {
        SizeReport::new(HEADER_BYTES, self.levels(), self.n_features(), self.n_classes(), self.dim)
    }

    /// `HDC1` stream, laid out like `LDC1`: `n, D, C, Q`, then value, feature
    /// and class hypervectors.
    pub fn to_bytes(&self) -> Vec<u8> {
        write_envelope(
            HDC_MAGIC,
            [self.n_features(), self.dim, self.n_classes(), self.levels()],
            &[&self.value_hvs, &self.feature_hvs, &self.class_hvs],
        )
    }

    /// Accumulators are restored as the `±1` signs of the class hypervectors.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let (fields, [value_hvs, feature_hvs, class_hvs]) =
            read_envelope(HDC_MAGIC, bytes, |f| f[1], |f| [f[3], f[0], f[2]])?;
        let [n, d, c, q] = fields;
        if n == 0 || c == 0 || q < 2 {
            return Err(Error::Format(format!("inconsistent header n={n} C={c} Q={q}")));
        }
        let class_accumulators = class_hvs.iter().map(|h| h.to_signs().iter().map(|&s| s as f64).collect()).collect();
        Ok(Self {
            dim: d,
            feature_hvs,
            value_hvs,
            class_accumulators,
            class_hvs,
        })
    }
}

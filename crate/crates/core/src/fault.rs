//! Random bit-error injection into deployed binary models.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::bipolar::BipolarVector;
use crate::data::Example;
use crate::hdc::HdcModel;
use crate::ldc::BakedModel;
use crate::numerics::{derive_seed, mean_std, seeded_rng};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FaultScope {
    FeatureLayer,
    ClassLayer,
    ValueLut,
    All,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FaultConfig {
    pub flip_probability: f64,
    pub scope: FaultScope,
    pub seed: u64,
    pub trials: usize,
    /// Flip probabilities swept by [`robustness_sweep`].
    pub p_grid: Vec<f64>,
}

impl Default for FaultConfig {
    fn default() -> Self {
        Self {
            flip_probability: 0.0,
            scope: FaultScope::All,
            seed: 0,
            trials: 10,
            p_grid: vec![0.0, 0.001, 0.005, 0.01, 0.05, 0.1],
        }
    }
}

impl FaultConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |p: f64| !(0.0..=1.0).contains(&p);
        if bad(self.flip_probability) || self.p_grid.iter().any(|&p| bad(p)) {
            return Err(Error::Config("flip probabilities must lie in [0, 1]".into()));
        }
        if self.trials == 0 {
            return Err(Error::Config("fault trials must be at least 1".into()));
        }
        Ok(())
    }
}

/// A deployed model whose binary rows can be corrupted.
pub trait Deployed: Clone {
    fn bit_rows_mut(&mut self, scope: FaultScope) -> Vec<&mut BipolarVector>;

    fn accuracy(&self, xs: &[Example]) -> Result<f64>;
}

impl Deployed for BakedModel {
    fn bit_rows_mut(&mut self, scope: FaultScope) -> Vec<&mut BipolarVector> {
        let mut rows = Vec::new();
        if matches!(scope, FaultScope::ValueLut | FaultScope::All) {
            rows.extend(self.value_lut.iter_mut());
        }
        if matches!(scope, FaultScope::FeatureLayer | FaultScope::All) {
            rows.extend(self.feature_vectors.iter_mut());
        }
        if matches!(scope, FaultScope::ClassLayer | FaultScope::All) {
            rows.extend(self.class_vectors.iter_mut());
        }
        rows
    }

    fn accuracy(&self, xs: &[Example]) -> Result<f64> {
        BakedModel::accuracy(self, xs)
    }
}

/// Value hypervectors play the role of the value LUT.
impl Deployed for HdcModel {
    fn bit_rows_mut(&mut self, scope: FaultScope) -> Vec<&mut BipolarVector> {
        let mut rows = Vec::new();
        if matches!(scope, FaultScope::ValueLut | FaultScope::All) {
            rows.extend(self.value_hvs.iter_mut());
        }
        if matches!(scope, FaultScope::FeatureLayer | FaultScope::All) {
            rows.extend(self.feature_hvs.iter_mut());
        }
        if matches!(scope, FaultScope::ClassLayer | FaultScope::All) {
            rows.extend(self.class_hvs.iter_mut());
        }
        rows
    }

    fn accuracy(&self, xs: &[Example]) -> Result<f64> {
        HdcModel::accuracy(self, xs)
    }
}

/// Copy of `model` with every in-scope bit flipped independently with
/// probability `p`, drawn from a stream seeded by `seed`.
pub fn inject<M: Deployed>(model: &M, p: f64, scope: FaultScope, seed: u64) -> Result<M> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::Input(format!("flip probability {p} outside [0, 1]")));
    }
    let mut out = model.clone();
    if p == 0.0 {
        return Ok(out);
    }
    let mut rng = seeded_rng(seed);
    for row in out.bit_rows_mut(scope) {
        for i in 0..row.dim() {
            if p == 1.0 || rng.gen::<f64>() < p {
                row.flip(i);
            }
        }
    }
    Ok(out)
}

/// One model and the query set it is scored on.
pub struct Target<'a, M> {
    pub model: &'a M,
    pub query: &'a [Example],
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SweepRow {
    pub p: f64,
    pub mean_accuracy: f64,
    /// Sample standard deviation over trials; 0 with a single trial.
    pub std_accuracy: f64,
    pub trials: usize,
}

/// Mean accuracy over targets, in target order.
pub fn mean_accuracy<M: Deployed>(targets: &[Target<'_, M>]) -> Result<f64> {
    if targets.is_empty() {
        return Err(Error::Input("no evaluation targets".into()));
    }
    let mut sum = 0.0;
    for t in targets {
        sum += t.model.accuracy(t.query)?;
    }
    Ok(sum / targets.len() as f64)
}

/// For each `p`, `trials` independent corruptions of every target; a trial's
/// accuracy is the mean over targets.
pub fn robustness_sweep<M: Deployed>(targets: &[Target<'_, M>], cfg: &FaultConfig) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    if cfg.p_grid.is_empty() {
        return Err(Error::Input("empty flip-probability grid".into()));
    }
    let mut rows = Vec::with_capacity(cfg.p_grid.len());
    for (pi, &p) in cfg.p_grid.iter().enumerate() {
        let mut accs = Vec::with_capacity(cfg.trials);
        for trial in 0..cfg.trials {
            let trial_seed = derive_seed(cfg.seed, (pi as u64) << 32 | trial as u64);
            let mut sum = 0.0;
            for (k, t) in targets.iter().enumerate() {
                let corrupted = inject(t.model, p, cfg.scope, derive_seed(trial_seed, k as u64))?;
                sum += corrupted.accuracy(t.query)?;
            }
            accs.push(sum / targets.len().max(1) as f64);
        }
        let (mean, std) = mean_std(&accs);
        rows.push(SweepRow {
            p,
            mean_accuracy: mean,
            std_accuracy: std,
            trials: cfg.trials,
        });
    }
    Ok(rows)
}

/// Number of differing in-scope bits between two models of equal shape.
pub fn flipped_bits<M: Deployed>(a: &M, b: &M, scope: FaultScope) -> Result<u64> {
    let mut a = a.clone();
    let mut b = b.clone();
    let ra = a.bit_rows_mut(scope);
    let rb = b.bit_rows_mut(scope);
    if ra.len() != rb.len() {
        return Err(Error::dim("flipped_bits rows", ra.len(), rb.len()));
    }
    let mut total = 0u64;
    for (x, y) in ra.into_iter().zip(rb) {
        total += x.hamming(y)? as u64;
    }
    Ok(total)
}

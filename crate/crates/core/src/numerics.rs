//! Dense real matrices, Adam, seeded randomness and a finite-difference oracle.

use std::fmt::{Debug, Display};
use std::iter::Sum;

use num_traits::{Float, FromPrimitive, NumAssign, ToPrimitive};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Floating-point element type of every real-valued tensor in the crate.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + NumAssign + Sum + Debug + Display + Default + Send + Sync + 'static
{
    /// Lossy conversion from `f64`, used for constants and config values.
    fn of(v: f64) -> Self {
        Self::from_f64(v).expect("f64 is representable in every Scalar")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Portable seeded generator. ChaCha8 yields the same stream on every platform.
pub type SeededRng = ChaCha8Rng;

pub fn seeded_rng(seed: u64) -> SeededRng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Mean and sample standard deviation (0 for a single value, NaN for none).
/// Values are centred on the first one, so identical values give exactly
/// that value and a zero deviation.
pub fn mean_std(values: &[f64]) -> (f64, f64) {
    let Some(&first) = values.first() else {
        return (f64::NAN, f64::NAN);
    };
    let n = values.len() as f64;
    let shift = values.iter().map(|v| v - first).sum::<f64>() / n;
    let mean = first + shift;
    if values.len() == 1 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - first - shift).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Derives an independent child seed for a named sub-stream (splitmix64 mix).
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(0xD1B5_4A32_D192_ED03);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Row-major dense matrix of finite reals.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawMatrix<S>", bound(deserialize = "S: Scalar + Deserialize<'de>"))]
pub struct RealMatrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

/// Unvalidated serialized form; deserialization goes through `from_vec`.
#[derive(Deserialize)]
struct RawMatrix<S> {
    rows: usize,
    cols: usize,
    data: Vec<S>,
}

impl<S: Scalar> TryFrom<RawMatrix<S>> for RealMatrix<S> {
    type Error = Error;

    fn try_from(raw: RawMatrix<S>) -> Result<Self> {
        Self::from_vec(raw.rows, raw.cols, raw.data)
    }
}

impl<S: Scalar> RealMatrix<S> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![S::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<S>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(Error::dim("RealMatrix::from_vec", rows * cols, data.len()));
        }
        if let Some(bad) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!("non-finite entry at flat index {bad}")));
        }
        Ok(Self { rows, cols, data })
    }

    /// Single row vector.
    pub fn row_vector(data: Vec<S>) -> Result<Self> {
        let n = data.len();
        Self::from_vec(1, n, data)
    }

    /// Entries drawn independently from `uniform(lo, hi)`.
    pub fn uniform<R: Rng>(rows: usize, cols: usize, lo: f64, hi: f64, rng: &mut R) -> Self {
        let data = (0..rows * cols)
            .map(|_| S::of(rng.gen_range(lo..hi)))
            .collect();
        Self { rows, cols, data }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn as_slice(&self) -> &[S] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<S> {
        self.data
    }

    pub fn row(&self, r: usize) -> &[S] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [S] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> S {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: S) {
        self.data[r * self.cols + c] = v;
    }

    pub fn fill(&mut self, v: S) {
        self.data.iter_mut().for_each(|x| *x = v);
    }

    pub fn check_same_shape(&self, other: &Self, context: &'static str) -> Result<()> {
        if self.shape() != other.shape() {
            return Err(Error::dim(context, self.len(), other.len()));
        }
        Ok(())
    }

    /// `self += k * other`.
    pub fn add_scaled(&mut self, other: &Self, k: S) -> Result<()> {
        self.check_same_shape(other, "RealMatrix::add_scaled")?;
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += k * b;
        }
        Ok(())
    }

    pub fn scale(&mut self, k: S) {
        self.data.iter_mut().for_each(|x| *x *= k);
    }

    /// Clamps every entry into `[-bound, bound]`.
    pub fn clamp_abs(&mut self, bound: S) {
        for x in &mut self.data {
            *x = x.max(-bound).min(bound);
        }
    }

    pub fn max_abs(&self) -> S {
        self.data.iter().fold(S::zero(), |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn is_zero(&self) -> bool {
        self.data.iter().all(|v| v.is_zero())
    }

    /// Element-wise conversion to another scalar type.
    pub fn cast<T: Scalar>(&self) -> RealMatrix<T> {
        RealMatrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|v| T::of(v.to_f64_lossy())).collect(),
        }
    }
}

/// Moment estimates and hyperparameters of one Adam-optimized tensor.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound(deserialize = "S: Scalar + Deserialize<'de>"))]
pub struct AdamState<S> {
    pub first_moment: RealMatrix<S>,
    pub second_moment: RealMatrix<S>,
    pub step_count: u64,
    pub beta1: S,
    pub beta2: S,
    pub epsilon: S,
}

/// Adam hyperparameters; the defaults are the customary 0.9 / 0.999 / 1e-8.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl<S: Scalar> AdamState<S> {
    pub fn new(rows: usize, cols: usize, cfg: AdamConfig) -> Result<Self> {
        if !(0.0..1.0).contains(&cfg.beta1) || !(0.0..1.0).contains(&cfg.beta2) {
            return Err(Error::Input(format!(
                "Adam betas must lie in [0, 1), got {} and {}",
                cfg.beta1, cfg.beta2
            )));
        }
        if cfg.epsilon <= 0.0 {
            return Err(Error::Input(format!("Adam epsilon must be positive, got {}", cfg.epsilon)));
        }
        Ok(Self {
            first_moment: RealMatrix::zeros(rows, cols),
            second_moment: RealMatrix::zeros(rows, cols),
            step_count: 0,
            beta1: S::of(cfg.beta1),
            beta2: S::of(cfg.beta2),
            epsilon: S::of(cfg.epsilon),
        })
    }

    pub fn for_params(params: &RealMatrix<S>, cfg: AdamConfig) -> Result<Self> {
        Self::new(params.rows(), params.cols(), cfg)
    }

    /// One bias-corrected Adam update of `params` in place.
    pub fn step(&mut self, params: &mut RealMatrix<S>, grads: &RealMatrix<S>, lr: S) -> Result<()> {
        params.check_same_shape(grads, "adam_step grads")?;
        params.check_same_shape(&self.first_moment, "adam_step state")?;
        if !(lr > S::zero()) {
            return Err(Error::Input(format!("Adam learning rate must be positive, got {lr}")));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let one = S::one();
        let (b1, b2) = (self.beta1, self.beta2);
        let correction1 = one - b1.powi(t);
        let correction2 = one - b2.powi(t);
        let m = self.first_moment.as_mut_slice();
        let v = self.second_moment.as_mut_slice();
        for (((p, &g), m), v) in params
            .as_mut_slice()
            .iter_mut()
            .zip(grads.as_slice())
            .zip(m.iter_mut())
            .zip(v.iter_mut())
        {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *p -= lr * m_hat / (v_hat.sqrt() + self.epsilon);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`]: returns the updated parameters.
pub fn adam_step<S: Scalar>(
    params: &RealMatrix<S>,
    grads: &RealMatrix<S>,
    state: &mut AdamState<S>,
    lr: S,
) -> Result<RealMatrix<S>> {
    let mut out = params.clone();
    state.step(&mut out, grads, lr)?;
    Ok(out)
}

/// Central-difference gradient of a scalar function, one entry at a time.
pub fn finite_difference_grad<S, F>(mut f: F, x: &RealMatrix<S>, h: S) -> Result<RealMatrix<S>>
where
    S: Scalar,
    F: FnMut(&RealMatrix<S>) -> S,
{
    if !(h > S::zero()) {
        return Err(Error::Input(format!("finite-difference step must be positive, got {h}")));
    }
    let mut probe = x.clone();
    let mut grad = RealMatrix::zeros(x.rows(), x.cols());
    let two_h = h + h;
    for k in 0..x.len() {
        let orig = probe.as_slice()[k];
        probe.as_mut_slice()[k] = orig + h;
        let up = f(&probe);
        probe.as_mut_slice()[k] = orig - h;
        let down = f(&probe);
        probe.as_mut_slice()[k] = orig;
        if !up.is_finite() || !down.is_finite() {
            return Err(Error::Numeric(format!("objective not finite around flat index {k}")));
        }
        grad.as_mut_slice()[k] = (up - down) / two_h;
    }
    Ok(grad)
}

//! The train / adapt / evaluate protocol shared by the CLI and the
//! acceptance suite.
//!
//! Every method sees the same evaluation episodes: an episode depends only
//! on the benchmark, the task index, the support size and the run seed.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adapt::{fast_adapt, AdaptConfig, AdaptResult, AdaptVariant};
use crate::data::{
    load_isolet, load_mnist, make_episode, make_eval_tasks, sample_training_tasks, synthetic_isolet, Dataset,
    DatasetKind, Episode, Example, Split, TaskConfig, TaskSampler, TaskSpec,
};
use crate::hdc::{HdcConfig, HdcModel, RetrainReport};
use crate::ldc::{LdcConfig, LdcModel};
use crate::meta::{meta_train, supervised_train, MetaConfig, MetaTrainReport};
pub use crate::numerics::mean_std;
use crate::numerics::{derive_seed, seeded_rng};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Metaldc,
    MetaldcFull,
    MetaldcNft,
    PretrainedLdc,
    HdcRetrain,
}

/// How a method's model is produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Trainer {
    Meta,
    Supervised,
    Hdc,
}

impl Method {
    pub const ALL: [Method; 5] = [
        Method::Metaldc,
        Method::MetaldcFull,
        Method::MetaldcNft,
        Method::PretrainedLdc,
        Method::HdcRetrain,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Metaldc => "metaldc",
            Method::MetaldcFull => "metaldc-full",
            Method::MetaldcNft => "metaldc-nft",
            Method::PretrainedLdc => "pretrained-ldc",
            Method::HdcRetrain => "hdc-retrain",
        }
    }

    pub fn trainer(self) -> Trainer {
        match self {
            Method::Metaldc | Method::MetaldcFull | Method::MetaldcNft => Trainer::Meta,
            Method::PretrainedLdc => Trainer::Supervised,
            Method::HdcRetrain => Trainer::Hdc,
        }
    }

    /// Adaptation applied at evaluation; `None` for HDC.
    pub fn adapt_variant(self) -> Option<AdaptVariant> {
        match self {
            Method::Metaldc | Method::PretrainedLdc => Some(AdaptVariant::LastLayer),
            Method::MetaldcFull => Some(AdaptVariant::Full),
            Method::MetaldcNft => Some(AdaptVariant::None),
            Method::HdcRetrain => None,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown method {s:?}")))
    }
}

/// Where benchmark data comes from.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Directory holding the four MNIST IDX files (optionally gzipped).
    pub mnist_dir: Option<PathBuf>,
    pub isolet_train: Option<PathBuf>,
    pub isolet_test: Option<PathBuf>,
    /// Use the generated ISOLET-shaped surrogate when no CSV is given.
    pub synthetic_isolet: bool,
    pub train_limit: Option<usize>,
    pub test_limit: Option<usize>,
}

/// A loaded benchmark: both splits plus the task settings.
#[derive(Clone, Debug)]
pub struct Benchmark {
    pub kind: DatasetKind,
    pub train: Dataset,
    pub test: Dataset,
    pub tasks: TaskConfig,
    /// True when the data is the generated surrogate rather than real files.
    pub synthetic: bool,
}

/// First existing path among `name` and `name.gz` inside `dir`.
fn find_idx(dir: &Path, name: &str) -> Result<PathBuf> {
    for candidate in [dir.join(name), dir.join(format!("{name}.gz"))] {
        if candidate.exists() {
            return Ok(candidate);
        }
    }
    Err(Error::Config(format!("data.mnist_dir: {name} not found in {}", dir.display())))
}

impl Benchmark {
    pub fn load(kind: DatasetKind, data: &DataConfig, tasks: TaskConfig) -> Result<Self> {
        let mut b = match kind {
            DatasetKind::Rmnist => {
                let dir = data
                    .mnist_dir
                    .as_deref()
                    .ok_or_else(|| Error::Config("data.mnist_dir is required for rmnist".into()))?;
                Self::rmnist(dir, tasks)?
            }
            DatasetKind::Sisolet => match (&data.isolet_train, &data.isolet_test) {
                (Some(tr), Some(te)) => Self::sisolet_files(tr, te, tasks)?,
                (None, None) if data.synthetic_isolet => Self::sisolet_synthetic(tasks),
                _ => {
                    return Err(Error::Config(
                        "data.isolet_train and data.isolet_test are required for sisolet \
                         unless data.synthetic_isolet is set"
                            .into(),
                    ))
                }
            },
        };
        if let Some(n) = data.train_limit {
            b.train = b.train.truncated(n);
        }
        if let Some(n) = data.test_limit {
            b.test = b.test.truncated(n);
        }
        Ok(b)
    }

    pub fn rmnist(dir: &Path, tasks: TaskConfig) -> Result<Self> {
        let train = load_mnist(
            &find_idx(dir, "train-images-idx3-ubyte")?,
            &find_idx(dir, "train-labels-idx1-ubyte")?,
            Split::Train,
        )?;
        let test = load_mnist(
            &find_idx(dir, "t10k-images-idx3-ubyte")?,
            &find_idx(dir, "t10k-labels-idx1-ubyte")?,
            Split::Test,
        )?;
        Ok(Self {
            kind: DatasetKind::Rmnist,
            train,
            test,
            tasks,
            synthetic: false,
        })
    }

    pub fn sisolet_files(train: &Path, test: &Path, tasks: TaskConfig) -> Result<Self> {
        let (train, stats) = load_isolet(train, Split::Train, None)?;
        let (test, _) = load_isolet(test, Split::Test, Some(&stats))?;
        Ok(Self {
            kind: DatasetKind::Sisolet,
            train,
            test,
            tasks,
            synthetic: false,
        })
    }

    /// ISOLET-shaped surrogate with the public split sizes (about 240
    /// training and 60 test examples per letter).
    pub fn sisolet_synthetic(tasks: TaskConfig) -> Self {
        let (train, test) = synthetic_isolet(240, 60, derive_seed(tasks.seed, 0x150));
        Self {
            kind: DatasetKind::Sisolet,
            train,
            test,
            tasks,
            synthetic: true,
        }
    }

    pub fn ways(&self) -> usize {
        match self.kind {
            DatasetKind::Rmnist => self.train.n_classes(),
            DatasetKind::Sisolet => self.tasks.ways,
        }
    }

    /// Training task pool for a run seed.
    pub fn training_pool(&self, seed: u64) -> Result<Vec<TaskSpec>> {
        sample_training_tasks(&self.train, &self.tasks, &mut seeded_rng(derive_seed(seed, 2)))
    }

    pub fn eval_tasks(&self) -> Result<Vec<TaskSpec>> {
        make_eval_tasks(&self.test, &self.tasks)
    }

    /// Evaluation episodes with `shots` support examples per class.
    pub fn episodes(&self, shots: usize, seed: u64) -> Result<Vec<Episode>> {
        self.eval_tasks()?
            .iter()
            .enumerate()
            .map(|(i, t)| make_episode(&self.test, t, shots, episode_seed(seed, i)))
            .collect()
    }
}

pub fn episode_seed(seed: u64, task_index: usize) -> u64 {
    derive_seed(seed, 0xE915_0000 + task_index as u64)
}

/// Trains the LDC model of a method. Methods sharing a trainer produce
/// identical models for the same seed.
pub fn train_ldc(
    bench: &Benchmark,
    method: Method,
    ldc: LdcConfig,
    meta: &MetaConfig,
    seed: u64,
) -> Result<MetaTrainReport<f32>> {
    let pool = bench.training_pool(seed)?;
    let sampler = TaskSampler::new(&bench.train, pool)?;
    let cfg = MetaConfig { seed, ..meta.clone() };
    match method.trainer() {
        Trainer::Meta => meta_train(&sampler, ldc, &cfg),
        Trainer::Supervised => supervised_train(&sampler, ldc, &cfg),
        Trainer::Hdc => Err(Error::Config(format!("{method} is not an LDC method"))),
    }
}

/// Training examples of the pooled training tasks: example `i` under task
/// `i mod |pool|`, skipping examples whose class is outside that task.
pub fn pooled_training_examples(bench: &Benchmark, seed: u64) -> Result<Vec<Example>> {
    let pool = bench.training_pool(seed)?;
    let sampler = TaskSampler::new(&bench.train, pool.clone())?;
    Ok((0..bench.train.len())
        .flat_map(|i| sampler.materialize(&pool[i % pool.len()], &[i]))
        .collect())
}

/// HDC with retraining. On Rotated MNIST it is trained on the pooled
/// training tasks and never adapted. Split ISOLET evaluates unseen classes,
/// so there the returned model is only the item memory and class
/// hypervectors are fitted per episode in [`evaluate_hdc`].
pub fn train_hdc(bench: &Benchmark, cfg: &HdcConfig, seed: u64) -> Result<(HdcModel, RetrainReport)> {
    let cfg = HdcConfig { seed, ..*cfg };
    let mut model = HdcModel::init(bench.train.n_features(), cfg.levels, bench.ways(), &cfg)?;
    if bench.kind == DatasetKind::Sisolet {
        return Ok((model, RetrainReport::default()));
    }
    let train = pooled_training_examples(bench, seed)?;
    let enc = model.encode_all(&train)?;
    let labels: Vec<usize> = train.iter().map(|e| e.label).collect();
    model.train_encoded(&enc, &labels)?;
    let report = model.retrain_encoded(&enc, &labels, cfg.retrain_epochs, cfg.retrain_rate)?;
    Ok((model, report))
}

/// One evaluated (method, task, seed) cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub method: Method,
    pub task_index: usize,
    pub task: String,
    /// Shots per class used in training.
    pub k: usize,
    /// Support shots per class used in adaptation.
    pub m: usize,
    pub seed: u64,
    pub accuracy: f64,
    pub adapt_time_secs: f64,
}

/// Adapts `model` to every episode according to `method`.
pub fn evaluate_ldc(
    model: &LdcModel<f32>,
    method: Method,
    episodes: &[Episode],
    adapt: &AdaptConfig,
    k: usize,
    seed: u64,
) -> Result<(Vec<ResultRow>, Vec<AdaptResult<f32>>)> {
    let variant = method
        .adapt_variant()
        .ok_or_else(|| Error::Config(format!("{method} is not an LDC method")))?;
    let cfg = AdaptConfig { variant, ..*adapt };
    let mut rows = Vec::with_capacity(episodes.len());
    let mut results = Vec::with_capacity(episodes.len());
    for (i, ep) in episodes.iter().enumerate() {
        if ep.query.first().map(|e| e.features.len()) != Some(model.n_features()) {
            return Err(Error::Config(format!(
                "model expects {} features, episode {i} does not match",
                model.n_features()
            )));
        }
        let r = fast_adapt(model, ep, &cfg)?;
        rows.push(ResultRow {
            method,
            task_index: i,
            task: ep.task.label(),
            k,
            m: adapt.shots,
            seed,
            accuracy: r.query_accuracy,
            adapt_time_secs: r.wall_time_secs,
        });
        results.push(r);
    }
    Ok((rows, results))
}

/// HDC evaluation; per-episode class fitting only on Split ISOLET.
pub fn evaluate_hdc(
    model: &HdcModel,
    bench: &Benchmark,
    episodes: &[Episode],
    cfg: &HdcConfig,
    m: usize,
    seed: u64,
) -> Result<(Vec<ResultRow>, Vec<HdcModel>)> {
    let mut rows = Vec::new();
    let mut deployed = Vec::new();
    for (i, ep) in episodes.iter().enumerate() {
        let start = std::time::Instant::now();
        let fitted = match bench.kind {
            DatasetKind::Rmnist => model.clone(),
            DatasetKind::Sisolet => {
                let mut fitted = model.clone();
                let enc = fitted.encode_all(&ep.support)?;
                let labels: Vec<usize> = ep.support.iter().map(|e| e.label).collect();
                fitted.train_encoded(&enc, &labels)?;
                fitted.retrain_encoded(&enc, &labels, cfg.retrain_epochs, cfg.retrain_rate)?;
                fitted
            }
        };
        let elapsed = start.elapsed().as_secs_f64();
        rows.push(ResultRow {
            method: Method::HdcRetrain,
            task_index: i,
            task: ep.task.label(),
            k: 0,
            m,
            seed,
            accuracy: fitted.accuracy(&ep.query)?,
            adapt_time_secs: elapsed,
        });
        deployed.push(fitted);
    }
    Ok((rows, deployed))
}

/// Mean and sample standard deviation of one group of rows.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Summary {
    pub method: Method,
    pub task_index: usize,
    pub task: String,
    pub mean: f64,
    pub std: f64,
    pub runs: usize,
}

/// Aggregates rows over seeds per (method, task).
pub fn summarize(rows: &[ResultRow]) -> Vec<Summary> {
    let mut keys: Vec<(Method, usize, String)> = rows.iter().map(|r| (r.method, r.task_index, r.task.clone())).collect();
    keys.sort();
    keys.dedup();
    keys.into_iter()
        .map(|(method, task_index, task)| {
            let accs: Vec<f64> = rows
                .iter()
                .filter(|r| r.method == method && r.task_index == task_index)
                .map(|r| r.accuracy)
                .collect();
            let (mean, std) = mean_std(&accs);
            Summary {
                method,
                task_index,
                task,
                mean,
                std,
                runs: accs.len(),
            }
        })
        .collect()
}

/// Mean accuracy of a method over every task and seed.
pub fn method_mean(rows: &[ResultRow], method: Method) -> Option<f64> {
    let accs: Vec<f64> = rows.iter().filter(|r| r.method == method).map(|r| r.accuracy).collect();
    (!accs.is_empty()).then(|| mean_std(&accs).0)
}

/// Mean accuracy of a method on one task over seeds.
pub fn task_mean(rows: &[ResultRow], method: Method, task_index: usize) -> Option<f64> {
    let accs: Vec<f64> = rows
        .iter()
        .filter(|r| r.method == method && r.task_index == task_index)
        .map(|r| r.accuracy)
        .collect();
    (!accs.is_empty()).then(|| mean_std(&accs).0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.name()));
        }
        assert!("mlp".parse::<Method>().is_err());
    }

    #[test]
    fn summary_statistics() {
        let (m, s) = mean_std(&[0.5, 0.7, 0.9]);
        assert!((m - 0.7).abs() < 1e-12);
        assert!((s - 0.2).abs() < 1e-12);
        assert_eq!(mean_std(&[0.3]).1, 0.0);
    }

    #[test]
    fn missing_paths_name_the_field() {
        let err = Benchmark::load(DatasetKind::Rmnist, &DataConfig::default(), TaskConfig::rmnist()).unwrap_err();
        assert!(err.to_string().contains("data.mnist_dir"));
        let err = Benchmark::load(DatasetKind::Sisolet, &DataConfig::default(), TaskConfig::sisolet()).unwrap_err();
        assert!(err.to_string().contains("data.isolet_train"));
    }

    #[test]
    fn synthetic_isolet_episodes_are_shared() {
        let b = Benchmark::sisolet_synthetic(TaskConfig::sisolet());
        let a = b.episodes(5, 1).unwrap();
        let c = b.episodes(5, 1).unwrap();
        assert_eq!(a.len(), 5);
        for (x, y) in a.iter().zip(&c) {
            assert_eq!(x.support_ids, y.support_ids);
            assert_eq!(x.support.len(), 20);
        }
    }
}

//! Task distributions and M-shot N-way episodes.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{rotate_image, Dataset, Example};
use crate::numerics::{seeded_rng, SeededRng};
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DatasetKind {
    /// Rotated MNIST: every task shares all ten digits, rotated by an angle.
    Rmnist,
    /// Split ISOLET: every task is a small subset of the letters.
    Sisolet,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "kebab-case")]
pub enum TaskKind {
    Rotation { degrees: f64 },
    ClassSubset { classes: Vec<usize> },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub kind: TaskKind,
    pub source: DatasetKind,
}

impl TaskSpec {
    pub fn rotation(degrees: f64) -> Self {
        Self {
            kind: TaskKind::Rotation { degrees },
            source: DatasetKind::Rmnist,
        }
    }

    pub fn class_subset(classes: Vec<usize>) -> Self {
        Self {
            kind: TaskKind::ClassSubset { classes },
            source: DatasetKind::Sisolet,
        }
    }

    /// Global class ids in local label order.
    pub fn classes(&self, dataset: &Dataset) -> Vec<usize> {
        match &self.kind {
            TaskKind::Rotation { .. } => (0..dataset.n_classes()).collect(),
            TaskKind::ClassSubset { classes } => classes.clone(),
        }
    }

    pub fn ways(&self, dataset: &Dataset) -> usize {
        match &self.kind {
            TaskKind::Rotation { .. } => dataset.n_classes(),
            TaskKind::ClassSubset { classes } => classes.len(),
        }
    }

    /// Short human-readable identifier, e.g. `rot0` or `c20-21-23-25`.
    pub fn label(&self) -> String {
        match &self.kind {
            TaskKind::Rotation { degrees } => format!("rot{degrees}"),
            TaskKind::ClassSubset { classes } => {
                let ids: Vec<String> = classes.iter().map(ToString::to_string).collect();
                format!("c{}", ids.join("-"))
            }
        }
    }

    fn validate(&self, dataset: &Dataset) -> Result<()> {
        match &self.kind {
            TaskKind::Rotation { degrees } => {
                if !degrees.is_finite() {
                    return Err(Error::Input(format!("rotation angle must be finite, got {degrees}")));
                }
                if dataset.image_side().is_none() {
                    return Err(Error::Input("rotation task on a dataset without image geometry".into()));
                }
            }
            TaskKind::ClassSubset { classes } => {
                let mut seen = classes.clone();
                seen.sort_unstable();
                seen.dedup();
                if seen.len() != classes.len() || classes.is_empty() {
                    return Err(Error::Input(format!("class subset must be distinct and nonempty: {classes:?}")));
                }
                if let Some(&bad) = classes.iter().find(|&&c| c >= dataset.n_classes()) {
                    return Err(Error::Input(format!("class {bad} not present in source")));
                }
            }
        }
        Ok(())
    }

    /// Applies the task's input transform to one raw example.
    pub fn transform(&self, dataset: &Dataset, features: &[f32]) -> Vec<f32> {
        match &self.kind {
            TaskKind::Rotation { degrees } => {
                let side = dataset.image_side().expect("validated rotation task");
                rotate_image(features, side, *degrees)
            }
            TaskKind::ClassSubset { .. } => features.to_vec(),
        }
    }

    fn materialize(&self, dataset: &Dataset, index: usize, local_label: usize) -> Example {
        Example {
            features: self.transform(dataset, dataset.features(index)),
            label: local_label,
        }
    }
}

/// Task-generation settings for both benchmark families.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskConfig {
    pub kind: DatasetKind,
    /// Number of training tasks pre-generated into the pool.
    pub pool_size: usize,
    /// Half-open interval of training rotation angles, in degrees.
    pub train_angle_range: [f64; 2],
    pub eval_angles: Vec<f64>,
    /// Classes per class-subset task.
    pub ways: usize,
    pub train_classes: Vec<usize>,
    pub eval_classes: Vec<usize>,
    /// Number of class-subset evaluation tasks.
    pub eval_tasks: usize,
    pub seed: u64,
}

impl Default for TaskConfig {
    fn default() -> Self {
        Self::rmnist()
    }
}

impl TaskConfig {
    pub fn rmnist() -> Self {
        Self {
            kind: DatasetKind::Rmnist,
            pool_size: 200,
            train_angle_range: [10.0, 20.0],
            eval_angles: vec![0.0, 2.0, 4.0, 6.0, 8.0],
            ways: 10,
            train_classes: (0..10).collect(),
            eval_classes: (0..10).collect(),
            eval_tasks: 5,
            seed: 0,
        }
    }

    pub fn sisolet() -> Self {
        Self {
            kind: DatasetKind::Sisolet,
            pool_size: 200,
            train_angle_range: [10.0, 20.0],
            eval_angles: Vec::new(),
            ways: 4,
            train_classes: (0..20).collect(),
            eval_classes: (20..26).collect(),
            eval_tasks: 5,
            seed: 0,
        }
    }

    fn check_class_pools(&self, dataset: &Dataset) -> Result<()> {
        if self.ways > self.train_classes.len() || self.ways > self.eval_classes.len() {
            return Err(Error::Config(format!(
                "ways = {} exceeds a class pool ({} train, {} eval)",
                self.ways,
                self.train_classes.len(),
                self.eval_classes.len()
            )));
        }
        if let Some(c) = self.train_classes.iter().find(|c| self.eval_classes.contains(c)) {
            return Err(Error::Config(format!("class {c} is in both training and evaluation pools")));
        }
        if let Some(&c) = self
            .train_classes
            .iter()
            .chain(&self.eval_classes)
            .find(|&&c| c >= dataset.n_classes())
        {
            return Err(Error::Config(format!("class {c} not present in dataset")));
        }
        Ok(())
    }
}

/// Builds the training task pool.
pub fn sample_training_tasks(dataset: &Dataset, cfg: &TaskConfig, rng: &mut SeededRng) -> Result<Vec<TaskSpec>> {
    if cfg.pool_size == 0 {
        return Err(Error::Config("pool_size must be at least 1".into()));
    }
    let tasks: Vec<TaskSpec> = match cfg.kind {
        DatasetKind::Rmnist => {
            let [lo, hi] = cfg.train_angle_range;
            if !(lo < hi) {
                return Err(Error::Config(format!("empty angle range [{lo}, {hi})")));
            }
            (0..cfg.pool_size).map(|_| TaskSpec::rotation(rng.gen_range(lo..hi))).collect()
        }
        DatasetKind::Sisolet => {
            cfg.check_class_pools(dataset)?;
            (0..cfg.pool_size)
                .map(|_| {
                    let classes = cfg.train_classes.choose_multiple(rng, cfg.ways).copied().collect();
                    TaskSpec::class_subset(classes)
                })
                .collect()
        }
    };
    for t in &tasks {
        t.validate(dataset)?;
    }
    Ok(tasks)
}

/// Builds the fixed list of evaluation tasks.
pub fn make_eval_tasks(dataset: &Dataset, cfg: &TaskConfig) -> Result<Vec<TaskSpec>> {
    let tasks: Vec<TaskSpec> = match cfg.kind {
        DatasetKind::Rmnist => cfg.eval_angles.iter().map(|&a| TaskSpec::rotation(a)).collect(),
        DatasetKind::Sisolet => {
            cfg.check_class_pools(dataset)?;
            let mut rng = seeded_rng(cfg.seed ^ 0xE7A1);
            (0..cfg.eval_tasks)
                .map(|_| {
                    let classes = cfg.eval_classes.choose_multiple(&mut rng, cfg.ways).copied().collect();
                    TaskSpec::class_subset(classes)
                })
                .collect()
        }
    };
    for t in &tasks {
        t.validate(dataset)?;
    }
    Ok(tasks)
}

/// Support and query sets of one task; labels are local to the task.
#[derive(Clone, Debug)]
pub struct Episode {
    pub task: TaskSpec,
    pub support: Vec<Example>,
    pub query: Vec<Example>,
    /// Source-dataset indices of the support examples.
    pub support_ids: Vec<usize>,
    pub query_ids: Vec<usize>,
}

impl Episode {
    pub fn ways(&self) -> usize {
        self.query
            .iter()
            .chain(&self.support)
            .map(|e| e.label + 1)
            .max()
            .unwrap_or(0)
    }

    /// Fails if support and query share a source example.
    pub fn check_disjoint(&self) -> Result<()> {
        let mut ids = self.support_ids.clone();
        ids.sort_unstable();
        if let Some(q) = self.query_ids.iter().find(|q| ids.binary_search(q).is_ok()) {
            return Err(Error::Protocol(format!("example {q} is in both support and query")));
        }
        Ok(())
    }
}

/// Samples `shots` support examples per class without replacement; every
/// other example of the task's classes becomes query. The result depends
/// only on `(dataset, task, shots, seed)`.
pub fn make_episode(dataset: &Dataset, task: &TaskSpec, shots: usize, seed: u64) -> Result<Episode> {
    task.validate(dataset)?;
    let mut rng = seeded_rng(seed);
    let by_class = dataset.indices_by_class();
    let mut support = Vec::new();
    let mut support_ids = Vec::new();
    let mut query_ids: Vec<(usize, usize)> = Vec::new();
    for (local, &global) in task.classes(dataset).iter().enumerate() {
        let mut pool = by_class[global].clone();
        if pool.len() < shots {
            return Err(Error::Data(format!(
                "class {global} has {} examples, need {shots} support shots",
                pool.len()
            )));
        }
        let (chosen, rest) = pool.partial_shuffle(&mut rng, shots);
        for &i in chosen.iter() {
            support.push(task.materialize(dataset, i, local));
            support_ids.push(i);
        }
        query_ids.extend(rest.iter().map(|&i| (i, local)));
    }
    query_ids.sort_unstable();
    let query = query_ids.iter().map(|&(i, l)| task.materialize(dataset, i, l)).collect();
    let episode = Episode {
        task: task.clone(),
        support,
        query,
        support_ids,
        query_ids: query_ids.into_iter().map(|(i, _)| i).collect(),
    };
    episode.check_disjoint()?;
    Ok(episode)
}

/// Draws training batches from a pool of tasks over one source split.
#[derive(Clone, Debug)]
pub struct TaskSampler<'a> {
    dataset: &'a Dataset,
    pool: Vec<TaskSpec>,
    by_class: Vec<Vec<usize>>,
}

impl<'a> TaskSampler<'a> {
    pub fn new(dataset: &'a Dataset, pool: Vec<TaskSpec>) -> Result<Self> {
        if pool.is_empty() {
            return Err(Error::Input("task pool is empty".into()));
        }
        let ways = pool[0].ways(dataset);
        for t in &pool {
            t.validate(dataset)?;
            if t.ways(dataset) != ways {
                return Err(Error::Input("all tasks in a pool must have the same number of ways".into()));
            }
        }
        Ok(Self {
            dataset,
            by_class: dataset.indices_by_class(),
            pool,
        })
    }

    pub fn dataset(&self) -> &Dataset {
        self.dataset
    }

    pub fn pool(&self) -> &[TaskSpec] {
        &self.pool
    }

    pub fn ways(&self) -> usize {
        self.pool[0].ways(self.dataset)
    }

    pub fn n_features(&self) -> usize {
        self.dataset.n_features()
    }

    /// Smallest per-class example count over every class used by the pool.
    pub fn min_class_size(&self) -> usize {
        self.pool
            .iter()
            .flat_map(|t| t.classes(self.dataset))
            .map(|c| self.by_class[c].len())
            .min()
            .unwrap_or(0)
    }

    /// `per_class` distinct examples of each class of `task`.
    pub fn sample_batch(&self, task: &TaskSpec, per_class: usize, rng: &mut SeededRng) -> Result<Vec<Example>> {
        let mut out = Vec::with_capacity(per_class * task.ways(self.dataset));
        for (local, &global) in task.classes(self.dataset).iter().enumerate() {
            let group = &self.by_class[global];
            if group.len() < per_class {
                return Err(Error::Data(format!(
                    "class {global} has {} examples, batch needs {per_class}",
                    group.len()
                )));
            }
            for &i in group.choose_multiple(rng, per_class) {
                out.push(task.materialize(self.dataset, i, local));
            }
        }
        Ok(out)
    }

    /// Materializes given source indices under `task`; indices whose class
    /// is outside the task are skipped.
    pub fn materialize(&self, task: &TaskSpec, indices: &[usize]) -> Vec<Example> {
        let classes = task.classes(self.dataset);
        indices
            .iter()
            .filter_map(|&i| {
                let g = self.dataset.label(i);
                classes.iter().position(|&c| c == g).map(|local| task.materialize(self.dataset, i, local))
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{synthetic_isolet, Split};

    fn tiny_images() -> Dataset {
        let n = 40;
        let feats = (0..n * 16).map(|k| (k % 7) as f32 / 7.0).collect();
        let labels = (0..n).map(|i| i % 10).collect();
        Dataset::new(feats, labels, 16, 10, Split::Test)
            .unwrap()
            .with_image_side(4)
            .unwrap()
    }

    #[test]
    fn rotation_pool_within_range() {
        let ds = tiny_images();
        let cfg = TaskConfig {
            pool_size: 100,
            ..TaskConfig::rmnist()
        };
        let pool = sample_training_tasks(&ds, &cfg, &mut seeded_rng(1)).unwrap();
        assert_eq!(pool.len(), 100);
        for t in &pool {
            match t.kind {
                TaskKind::Rotation { degrees } => assert!((10.0..20.0).contains(&degrees)),
                _ => panic!(),
            }
        }
        let again = sample_training_tasks(&ds, &cfg, &mut seeded_rng(1)).unwrap();
        assert_eq!(pool, again);
    }

    #[test]
    fn eval_angles() {
        let tasks = make_eval_tasks(&tiny_images(), &TaskConfig::rmnist()).unwrap();
        let angles: Vec<f64> = tasks
            .iter()
            .map(|t| match t.kind {
                TaskKind::Rotation { degrees } => degrees,
                _ => f64::NAN,
            })
            .collect();
        assert_eq!(angles, vec![0.0, 2.0, 4.0, 6.0, 8.0]);
    }

    #[test]
    fn isolet_pools_disjoint() {
        let (train, test) = synthetic_isolet(3, 2, 0);
        let cfg = TaskConfig::sisolet();
        let pool = sample_training_tasks(&train, &cfg, &mut seeded_rng(2)).unwrap();
        for t in &pool {
            let c = t.classes(&train);
            assert_eq!(c.len(), 4);
            let mut d = c.clone();
            d.sort();
            d.dedup();
            assert_eq!(d.len(), 4);
            assert!(c.iter().all(|&x| x < 20));
        }
        for t in make_eval_tasks(&test, &cfg).unwrap() {
            assert!(t.classes(&test).iter().all(|c| (20..26).contains(c)));
        }
    }

    #[test]
    fn too_many_ways_is_config_error() {
        let (train, _) = synthetic_isolet(2, 1, 0);
        let cfg = TaskConfig {
            ways: 21,
            ..TaskConfig::sisolet()
        };
        assert!(matches!(
            sample_training_tasks(&train, &cfg, &mut seeded_rng(0)),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn episode_counts_and_disjointness() {
        let ds = tiny_images();
        let ep = make_episode(&ds, &TaskSpec::rotation(4.0), 1, 9).unwrap();
        assert_eq!(ep.support.len(), 10);
        assert_eq!(ep.query.len(), 30);
        ep.check_disjoint().unwrap();
        let again = make_episode(&ds, &TaskSpec::rotation(4.0), 1, 9).unwrap();
        assert_eq!(ep.support_ids, again.support_ids);
        assert!(make_episode(&ds, &TaskSpec::rotation(0.0), 5, 0).is_err());
    }

    #[test]
    fn overlap_detected() {
        let ds = tiny_images();
        let mut ep = make_episode(&ds, &TaskSpec::rotation(0.0), 1, 0).unwrap();
        ep.query_ids.push(ep.support_ids[0]);
        assert!(matches!(ep.check_disjoint(), Err(Error::Protocol(_))));
    }
}

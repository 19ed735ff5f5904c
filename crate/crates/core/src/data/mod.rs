//! Datasets, transforms, task distributions and few-shot episodes.

mod idx;
mod isolet;
mod rotate;
mod synthetic;
mod tasks;

pub use idx::{load_mnist, parse_idx_images, parse_idx_labels, write_idx_images, write_idx_labels};
pub use isolet::{load_isolet, parse_isolet, FeatureScaling};
pub use rotate::rotate_image;
pub use synthetic::{separable_two_class, synthetic_isolet};
pub use tasks::{
    make_episode, make_eval_tasks, sample_training_tasks, DatasetKind, Episode, TaskConfig, TaskKind,
    TaskSampler, TaskSpec,
};

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// A feature vector in `[0, 1]^n` with its class label.
#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub features: Vec<f32>,
    pub label: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Immutable labelled dataset with row-major feature storage.
#[derive(Clone, Debug)]
pub struct Dataset {
    features: Vec<f32>,
    labels: Vec<usize>,
    n_features: usize,
    n_classes: usize,
    split: Split,
    image_side: Option<usize>,
}

impl Dataset {
    pub fn new(
        features: Vec<f32>,
        labels: Vec<usize>,
        n_features: usize,
        n_classes: usize,
        split: Split,
    ) -> Result<Self> {
        if n_features == 0 || features.len() != labels.len() * n_features {
            return Err(Error::dim("Dataset::new", labels.len() * n_features, features.len()));
        }
        if let Some(bad) = features.iter().position(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::Data(format!(
                "feature {} of example {} outside [0, 1]: {}",
                bad % n_features,
                bad / n_features,
                features[bad]
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= n_classes) {
            return Err(Error::Data(format!("label {bad} out of range for {n_classes} classes")));
        }
        Ok(Self {
            features,
            labels,
            n_features,
            n_classes,
            split,
            image_side: None,
        })
    }

    /// Marks rows as square images of the given side length.
    pub fn with_image_side(mut self, side: usize) -> Result<Self> {
        if side * side != self.n_features {
            return Err(Error::dim("image side", self.n_features, side * side));
        }
        self.image_side = Some(side);
        Ok(self)
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn split(&self) -> Split {
        self.split
    }

    pub fn image_side(&self) -> Option<usize> {
        self.image_side
    }

    pub fn features(&self, i: usize) -> &[f32] {
        &self.features[i * self.n_features..(i + 1) * self.n_features]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn example(&self, i: usize) -> Example {
        Example {
            features: self.features(i).to_vec(),
            label: self.labels[i],
        }
    }

    pub fn examples(&self) -> Vec<Example> {
        (0..self.len()).map(|i| self.example(i)).collect()
    }

    /// Example indices grouped by class, each group in ascending order.
    pub fn indices_by_class(&self) -> Vec<Vec<usize>> {
        let mut groups = vec![Vec::new(); self.n_classes];
        for (i, &l) in self.labels.iter().enumerate() {
            groups[l].push(i);
        }
        groups
    }

    /// First `limit` examples, keeping metadata.
    pub fn truncated(&self, limit: usize) -> Self {
        let n = limit.min(self.len());
        Self {
            features: self.features[..n * self.n_features].to_vec(),
            labels: self.labels[..n].to_vec(),
            ..self.clone()
        }
    }

    /// Subset of rows by index, keeping metadata.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut features = Vec::with_capacity(indices.len() * self.n_features);
        let mut labels = Vec::with_capacity(indices.len());
        for &i in indices {
            features.extend_from_slice(self.features(i));
            labels.push(self.labels[i]);
        }
        Self {
            features,
            labels,
            ..self.clone()
        }
    }
}

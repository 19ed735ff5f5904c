//! Experiment configuration: strict JSON over dataset-specific defaults.

use std::path::{Path, PathBuf};

use metaldc::adapt::AdaptConfig;
use metaldc::data::{DatasetKind, TaskConfig};
use metaldc::experiment::{DataConfig, Method};
use metaldc::fault::FaultConfig;
use metaldc::hdc::HdcConfig;
use metaldc::ldc::LdcConfig;
use metaldc::meta::MetaConfig;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{CliError, Result};

/// Grids for the K and M ablations.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub k_grid: Vec<usize>,
    pub m_grid: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    /// Methods evaluated side by side on shared episodes.
    pub methods: Vec<Method>,
    pub data: DataConfig,
    pub tasks: TaskConfig,
    pub ldc: LdcConfig,
    pub meta: MetaConfig,
    pub adapt: AdaptConfig,
    pub hdc: HdcConfig,
    pub fault: FaultConfig,
    pub ablation: AblationConfig,
    pub seeds: Vec<u64>,
    pub out_dir: PathBuf,
}

impl ExperimentConfig {
    /// Defaults of one benchmark family; a config file only states overrides.
    pub fn defaults(dataset: DatasetKind) -> Self {
        let (tasks, meta, adapt, ablation) = match dataset {
            DatasetKind::Rmnist => (
                TaskConfig::rmnist(),
                MetaConfig::default(),
                AdaptConfig::default(),
                AblationConfig {
                    k_grid: vec![1, 5, 10, 20, 40],
                    m_grid: vec![10, 50, 100, 150],
                },
            ),
            DatasetKind::Sisolet => (
                TaskConfig::sisolet(),
                MetaConfig {
                    epochs: 30,
                    ..MetaConfig::default()
                },
                AdaptConfig {
                    shots: 5,
                    ..AdaptConfig::default()
                },
                AblationConfig {
                    k_grid: vec![1, 2, 3, 4, 5],
                    m_grid: vec![1, 5, 10, 15],
                },
            ),
        };
        Self {
            dataset,
            methods: Method::ALL.to_vec(),
            data: DataConfig::default(),
            tasks,
            ldc: LdcConfig::default(),
            meta,
            adapt,
            hdc: HdcConfig::default(),
            fault: FaultConfig::default(),
            ablation,
            seeds: vec![0, 1, 2],
            out_dir: PathBuf::from("runs").join(dataset_name(dataset)),
        }
    }

    pub fn from_json_str(text: &str) -> Result<Self> {
        let user: Value = serde_json::from_str(text).map_err(|e| CliError::Config {
            path: ".".into(),
            message: e.to_string(),
        })?;
        let dataset = match user.get("dataset") {
            Some(v) => DatasetKind::deserialize(v).map_err(|e| CliError::Config {
                path: "dataset".into(),
                message: e.to_string(),
            })?,
            None => {
                return Err(CliError::Config {
                    path: "dataset".into(),
                    message: "missing field; expected \"rmnist\" or \"sisolet\"".into(),
                })
            }
        };
        if !user.is_object() {
            return Err(CliError::Config {
                path: ".".into(),
                message: "config must be a JSON object".into(),
            });
        }
        let mut merged = serde_json::to_value(Self::defaults(dataset))?;
        merge(&mut merged, user);
        let cfg: Self = serde_path_to_error::deserialize(merged).map_err(|e| CliError::Config {
            path: e.path().to_string(),
            message: e.inner().to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        let field = |path: &str, message: String| CliError::Config {
            path: path.into(),
            message,
        };
        if self.methods.is_empty() {
            return Err(field("methods", "at least one method is required".into()));
        }
        if self.seeds.is_empty() {
            return Err(field("seeds", "at least one seed is required".into()));
        }
        if self.tasks.kind != self.dataset {
            return Err(field("tasks.kind", "must match dataset".into()));
        }
        self.meta.validate().map_err(|e| field("meta", e.to_string()))?;
        self.adapt.validate().map_err(|e| field("adapt", e.to_string()))?;
        self.fault.validate().map_err(|e| field("fault", e.to_string()))?;
        if self.hdc.dim == 0 || self.hdc.levels < 2 {
            return Err(field("hdc", "dim must be positive and levels at least 2".into()));
        }
        Ok(())
    }

    /// Short digest of everything that affects results. The output
    /// directory is left out so identical runs elsewhere hash the same.
    pub fn hash(&self) -> String {
        let mut canonical = self.clone();
        canonical.out_dir = PathBuf::new();
        let bytes = serde_json::to_vec(&canonical).expect("config serializes");
        let digest = Sha256::digest(&bytes);
        digest[..8].iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Methods whose models come out of LDC training.
    pub fn ldc_methods(&self) -> Vec<Method> {
        self.methods.iter().copied().filter(|m| m.adapt_variant().is_some()).collect()
    }
}

pub fn dataset_name(kind: DatasetKind) -> &'static str {
    match kind {
        DatasetKind::Rmnist => "rmnist",
        DatasetKind::Sisolet => "sisolet",
    }
}

/// Objects merge key by key; anything else in `over` replaces `base`.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_object() && v.is_object() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_config_takes_dataset_defaults() {
        let c = ExperimentConfig::from_json_str(r#"{"dataset": "sisolet"}"#).unwrap();
        assert_eq!(c.meta.epochs, 30);
        assert_eq!(c.adapt.shots, 5);
        assert_eq!(c.tasks.ways, 4);
        let r = ExperimentConfig::from_json_str(r#"{"dataset": "rmnist", "meta": {"epochs": 3}}"#).unwrap();
        assert_eq!(r.meta.epochs, 3);
        assert_eq!(r.meta.inner_tasks, 4);
    }

    #[test]
    fn unknown_keys_are_rejected_with_a_path() {
        let err = ExperimentConfig::from_json_str(r#"{"dataset": "rmnist", "meta": {"epohcs": 3}}"#).unwrap_err();
        match err {
            CliError::Config { path, message } => {
                assert_eq!(path, "meta.epohcs");
                assert!(message.contains("epohcs"), "{message}");
            }
            other => panic!("unexpected {other:?}"),
        }
        assert!(ExperimentConfig::from_json_str(r#"{"dataset": "rmnist", "extra": 1}"#).is_err());
        assert!(ExperimentConfig::from_json_str(r#"{"meta": {}}"#).is_err());
        assert!(ExperimentConfig::from_json_str(r#"{"dataset": "rmnist", "seeds": []}"#).is_err());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = ExperimentConfig::from_json_str(r#"{"dataset": "rmnist", "out_dir": "a"}"#).unwrap();
        let b = ExperimentConfig::from_json_str(r#"{"dataset": "rmnist", "out_dir": "b"}"#).unwrap();
        let c = ExperimentConfig::from_json_str(r#"{"dataset": "rmnist", "seeds": [4]}"#).unwrap();
        assert_eq!(a.hash(), b.hash());
        assert_ne!(a.hash(), c.hash());
        assert_eq!(a.hash().len(), 16);
    }
}

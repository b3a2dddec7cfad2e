//! Experiment configuration: one JSON document with dataset, model, trainer
//! and seed blocks.

use std::path::{Path, PathBuf};

use metabayes::data::{CauchyConfig, CsvSchema, SinusoidConfig, SplitPlan};
use metabayes::model::{Method, ModelOptions};
use metabayes::trainer::OptimHyper;
use metabayes::{Error, Result};
use serde::{Deserialize, Serialize};

/// Accepts either a single value or a list.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum OneOrMany<T> {
    One(T),
    Many(Vec<T>),
}

impl<T> OneOrMany<T> {
    pub fn as_slice(&self) -> &[T] {
        match self {
            OneOrMany::One(v) => std::slice::from_ref(v),
            OneOrMany::Many(v) => v,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SinusoidPreset {
    Easy,
    Hard,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum DatasetSource {
    Sinusoid {
        preset: SinusoidPreset,
        /// Replaces the preset's generator parameters when given.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        config: Option<SinusoidConfig>,
    },
    Cauchy {
        #[serde(default)]
        config: CauchyConfig,
    },
    Csv {
        train: PathBuf,
        test: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        schema: Option<CsvSchema>,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub name: String,
    pub source: DatasetSource,
    pub split: SplitPlan,
}

impl DatasetConfig {
    pub fn sinusoid_easy() -> Self {
        Self {
            name: "sinusoid-easy".into(),
            source: DatasetSource::Sinusoid {
                preset: SinusoidPreset::Easy,
                config: None,
            },
            split: SplitPlan::sinusoid_easy(),
        }
    }

    pub fn sinusoid_hard() -> Self {
        Self {
            name: "sinusoid-hard".into(),
            source: DatasetSource::Sinusoid {
                preset: SinusoidPreset::Hard,
                config: None,
            },
            split: SplitPlan::sinusoid_hard(),
        }
    }

    pub fn cauchy() -> Self {
        Self {
            name: "cauchy".into(),
            source: DatasetSource::Cauchy {
                config: CauchyConfig::default(),
            },
            split: SplitPlan::cauchy(),
        }
    }

    /// Built-in datasets by name.
    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "sinusoid-easy" => Some(Self::sinusoid_easy()),
            "sinusoid-hard" => Some(Self::sinusoid_hard()),
            "cauchy" => Some(Self::cauchy()),
            _ => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        if self.name.trim().is_empty() {
            return Err(Error::InvalidConfig("dataset name is empty".into()));
        }
        match &self.source {
            DatasetSource::Sinusoid { config: Some(c), .. } => c.validate()?,
            DatasetSource::Sinusoid { config: None, .. } => {}
            DatasetSource::Cauchy { config } => config.validate()?,
            DatasetSource::Csv { train, test, .. } => {
                for p in [train, test] {
                    if !p.is_file() {
                        return Err(Error::InvalidConfig(format!(
                            "dataset file {} does not exist",
                            p.display()
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelBlock {
    pub method: OneOrMany<Method>,
    #[serde(flatten)]
    pub options: ModelOptions,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub dataset: OneOrMany<DatasetConfig>,
    pub model: ModelBlock,
    #[serde(default)]
    pub trainer: OptimHyper,
    #[serde(default = "default_seeds")]
    pub seeds: Vec<u64>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
}

fn default_seeds() -> Vec<u64> {
    vec![0, 1, 2]
}

fn default_output() -> PathBuf {
    PathBuf::from("results")
}

impl ExperimentConfig {
    pub fn new(datasets: Vec<DatasetConfig>, methods: Vec<Method>, options: ModelOptions, trainer: OptimHyper) -> Self {
        Self {
            dataset: OneOrMany::Many(datasets),
            model: ModelBlock {
                method: OneOrMany::Many(methods),
                options,
            },
            trainer,
            seeds: default_seeds(),
            output_dir: default_output(),
        }
    }

    /// Parses and validates; relative CSV paths resolve against the config's
    /// directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: Self =
            serde_json::from_str(&text).map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        match &mut cfg.dataset {
            OneOrMany::One(d) => {
                if let DatasetSource::Csv { train, test, .. } = &mut d.source {
                    resolve(train);
                    resolve(test);
                }
            }
            OneOrMany::Many(ds) => {
                for d in ds {
                    if let DatasetSource::Csv { train, test, .. } = &mut d.source {
                        resolve(train);
                        resolve(test);
                    }
                }
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.datasets().is_empty() || self.methods().is_empty() {
            return Err(Error::InvalidConfig(
                "config needs at least one dataset and one method".into(),
            ));
        }
        if self.seeds.is_empty() {
            return Err(Error::InvalidConfig("seed list is empty".into()));
        }
        for d in self.datasets() {
            d.validate()?;
        }
        let mut names: Vec<&str> = self.datasets().iter().map(|d| d.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::InvalidConfig("dataset names must be unique".into()));
        }
        if self.model.options.latent_dim == 0 {
            return Err(Error::InvalidConfig("latent_dim must be positive".into()));
        }
        self.trainer.validate()
    }

    pub fn datasets(&self) -> &[DatasetConfig] {
        self.dataset.as_slice()
    }

    pub fn methods(&self) -> &[Method] {
        self.model.method.as_slice()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

//! Pipeline configuration: a TOML file with every section optional, then
//! command-line flags on top.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use mgfn_core::eval::RetrievalConfig;
use mgfn_core::model::ModelConfig;
use mgfn_core::training::TrainConfig;
use serde::{Deserialize, Serialize};

pub const DEFAULT_SEED: u64 = 42;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub log: Option<PathBuf>,
    pub catalog: Option<PathBuf>,
    pub graph: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub loss: Option<PathBuf>,
    /// Directory for reports.
    pub reports: Option<PathBuf>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub items: usize,
    pub topics: usize,
    pub users: usize,
    pub days: usize,
    pub exclusive_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        let d = mgfn_core::synthgen::DatasetSpec::default();
        Self {
            items: d.n_items,
            topics: d.n_topics,
            users: d.n_users,
            days: d.n_days,
            exclusive_fraction: d.exclusive_item_fraction,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GraphConfig {
    pub hash_buckets: usize,
    /// Hold the last calendar day of the log out of the graph.
    pub holdout_last_day: bool,
    pub source: String,
    pub target: String,
}

impl Default for GraphConfig {
    fn default() -> Self {
        Self {
            hash_buckets: mgfn_core::graph_builder::DEFAULT_HASH_BUCKETS,
            holdout_last_day: true,
            source: "feed".into(),
            target: "home".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub pca: bool,
    pub pca_tags: usize,
    pub pca_sample: usize,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            pca: false,
            pca_tags: 3,
            pca_sample: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub deterministic: bool,
    pub variant: String,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub graph: GraphConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub retrieval: RetrievalConfig,
    pub eval: EvalConfig,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: DEFAULT_SEED,
            deterministic: false,
            variant: "mgfn".into(),
            paths: Paths::default(),
            synth: SynthConfig::default(),
            graph: GraphConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            retrieval: RetrievalConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: Option<&Path>) -> anyhow::Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))
    }

    /// TOML rendering of the effective configuration.
    pub fn echo(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> anyhow::Result<()> {
        self.model.validate()?;
        self.train.validate()?;
        if self.retrieval.final_k == 0 || self.retrieval.per_query_k == 0 || self.retrieval.queue_len == 0 {
            bail!("retrieval per_query_k, final_k and queue_len must be >= 1");
        }
        if self.graph.hash_buckets == 0 {
            bail!("graph.hash_buckets must be >= 1");
        }
        Variant::parse(&self.variant)?;
        Ok(())
    }
}

/// Model family trained by `train`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Variant {
    Mgfn,
    MgfnMean,
    MgfnWeighted,
    MgfnGat,
    SingleScenario(String),
    DataConcat,
}

impl Variant {
    pub fn parse(s: &str) -> anyhow::Result<Self> {
        Ok(match s {
            "mgfn" => Self::Mgfn,
            "mgfn-mean" => Self::MgfnMean,
            "mgfn-weighted" => Self::MgfnWeighted,
            "mgfn-gat" => Self::MgfnGat,
            "dataconcat" => Self::DataConcat,
            _ => match s.strip_prefix("single-scenario:") {
                Some(name) if !name.is_empty() => Self::SingleScenario(name.to_owned()),
                _ => bail!(
                    "invalid variant `{s}` (expected mgfn, mgfn-mean, mgfn-weighted, mgfn-gat, \
                     single-scenario:<scenario> or dataconcat)"
                ),
            },
        })
    }
}

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use semtab_core::embed::EndpointConfig;
use semtab_core::model::ModelConfig;
use semtab_core::train::{EmbeddingSource, InitStrategy, TrainConfig};
use semtab_core::txn::{LogConfig, SplitSpec, WorldConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// Knowledge base; unset means `<data_dir>/kb.json`.
    pub kb: Option<PathBuf>,
    pub data_dir: PathBuf,
    pub cache: PathBuf,
    pub reports: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            kb: None,
            data_dir: "data".into(),
            cache: "cache/embeddings.stc".into(),
            reports: "reports".into(),
        }
    }
}

impl Paths {
    pub fn kb(&self) -> PathBuf {
        self.kb.clone().unwrap_or_else(|| self.data_dir.join("kb.json"))
    }

    pub fn transactions(&self) -> PathBuf {
        self.data_dir.join("transactions.jsonl")
    }

    pub fn world(&self) -> PathBuf {
        self.data_dir.join("world.json")
    }

    pub fn enriched(&self) -> PathBuf {
        self.data_dir.join("enriched.jsonl")
    }

    pub fn prompts(&self) -> PathBuf {
        self.data_dir.join("prompts.jsonl")
    }

    /// Root layout used by `demo --out DIR`.
    pub fn under(root: &Path) -> Self {
        Self {
            kb: None,
            data_dir: root.join("data"),
            cache: root.join("cache").join("embeddings.stc"),
            reports: root.join("reports"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitMonths {
    pub train: u32,
    pub val: u32,
    pub test: u32,
}

impl Default for SplitMonths {
    fn default() -> Self {
        Self { train: 20, val: 1, test: 3 }
    }
}

impl SplitMonths {
    pub fn spec(&self) -> SplitSpec {
        SplitSpec::new(self.train, self.val, self.test)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EmbedSettings {
    pub mock_dim: usize,
    pub mock_seed: u64,
    /// Unset: prompts render unwrapped; training follows the cache.
    pub one_word_wrap: Option<bool>,
    pub endpoint: EndpointConfig,
}

impl Default for EmbedSettings {
    fn default() -> Self {
        Self { mock_dim: 256, mock_seed: 0, one_word_wrap: None, endpoint: EndpointConfig::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GridSettings {
    pub strategies: Vec<InitStrategy>,
    /// Unset: three consecutive seeds from the run seed.
    pub seeds: Option<Vec<u64>>,
    /// Unset: the embedding cache at `paths.cache`.
    pub sources: Option<Vec<EmbeddingSource>>,
    pub projection_seed: u64,
    pub jobs: usize,
}

impl Default for GridSettings {
    fn default() -> Self {
        Self {
            strategies: vec![InitStrategy::Vanilla, InitStrategy::AllFields],
            seeds: None,
            sources: None,
            projection_seed: 0,
            jobs: 1,
        }
    }
}

/// Single JSON configuration for every command. Flags override it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub world: WorldConfig,
    pub log: LogConfig,
    pub split: SplitMonths,
    pub embed: EmbedSettings,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub grid: GridSettings,
}

/// Desk-scale model: default field widths over a narrow one-layer trunk.
pub fn default_model() -> ModelConfig {
    ModelConfig { d_model: 32, n_layers: 1, n_heads: 2, ffn_mult: 2, max_seq_len: 32, ..ModelConfig::default() }
}

pub fn default_train() -> TrainConfig {
    let mut t = TrainConfig { epochs: 10, batch_size: 32, ..TrainConfig::default() };
    t.optimizer.lr = 3e-3;
    t
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            paths: Paths::default(),
            world: WorldConfig::default(),
            log: LogConfig::default(),
            split: SplitMonths::default(),
            embed: EmbedSettings::default(),
            model: default_model(),
            train: default_train(),
            grid: GridSettings::default(),
        }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| CliError::Usage(format!("invalid config {}: {e}", path.display())))
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Self, CliError> {
        path.map_or_else(|| Ok(Self::default()), Self::load)
    }

    pub fn grid_seeds(&self) -> Vec<u64> {
        self.grid.seeds.clone().unwrap_or_else(|| (0..3).map(|i| self.seed + i).collect())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }
}

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::fit::{train, History, TrainConfig, Trained};
use super::metrics::MetricReport;
use super::TrainError;
use crate::dataset::{restrict_to_merchants, Dataset, Split};
use crate::embed::{build_table, records_from_cache, Embedder, EmbeddingCache, EmbeddingTable, MockEmbedder};
use crate::fusion::KnowledgeBase;
use crate::model::{ModelConfig, SeqTabModel};
use crate::vocab::Field;

/// Which categorical fields start from prompt embeddings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum InitStrategy {
    #[serde(rename = "vanilla")]
    Vanilla,
    #[serde(rename = "mcc")]
    Mcc,
    #[serde(rename = "merchant")]
    Merchant,
    #[serde(rename = "mcc+merchant")]
    MccMerchant,
    #[serde(rename = "state+city")]
    StateCity,
    #[serde(rename = "all_fields")]
    AllFields,
}

impl InitStrategy {
    pub const ALL: [InitStrategy; 6] = [
        InitStrategy::Vanilla,
        InitStrategy::Mcc,
        InitStrategy::Merchant,
        InitStrategy::MccMerchant,
        InitStrategy::StateCity,
        InitStrategy::AllFields,
    ];

    pub fn name(self) -> &'static str {
        match self {
            InitStrategy::Vanilla => "vanilla",
            InitStrategy::Mcc => "mcc",
            InitStrategy::Merchant => "merchant",
            InitStrategy::MccMerchant => "mcc+merchant",
            InitStrategy::StateCity => "state+city",
            InitStrategy::AllFields => "all_fields",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|v| v.name() == s)
    }

    pub fn fields(self) -> &'static [Field] {
        match self {
            InitStrategy::Vanilla => &[],
            InitStrategy::Mcc => &[Field::Mcc],
            InitStrategy::Merchant => &[Field::Merchant],
            InitStrategy::MccMerchant => &[Field::Mcc, Field::Merchant],
            InitStrategy::StateCity => &[Field::State, Field::City],
            InitStrategy::AllFields => &Field::ALL,
        }
    }
}

impl std::fmt::Display for InitStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Where prompt embeddings come from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum EmbeddingSource {
    /// The in-process mock embedder.
    Mock { dim: usize, seed: u64 },
    /// A cache file filled beforehand, optionally pinned to a model id.
    Cache {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        model_id: Option<String>,
    },
}

impl EmbeddingSource {
    /// Row label in comparison tables.
    pub fn label(&self) -> String {
        match self {
            EmbeddingSource::Mock { dim, seed } => crate::embed::mock_model_id(*dim, *seed),
            EmbeddingSource::Cache { path, model_id } => {
                model_id.clone().unwrap_or_else(|| path.display().to_string())
            }
        }
    }
}

/// One training configuration, run once per seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub strategy: InitStrategy,
    pub source: EmbeddingSource,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub projection_seed: u64,
    /// One-word wrapper on prompts. Unset means off for the in-process
    /// mock and, for a cache, whichever rendering the cache holds.
    #[serde(default)]
    pub one_word_wrap: Option<bool>,
}

/// Semantic tables for the strategy's fields, in canonical field order.
pub fn build_tables(
    data: &Dataset,
    kb: &KnowledgeBase,
    strategy: InitStrategy,
    source: &EmbeddingSource,
    model: &ModelConfig,
    projection_seed: u64,
    one_word_wrap: Option<bool>,
) -> Result<Vec<EmbeddingTable>, TrainError> {
    if strategy.fields().is_empty() {
        return Ok(Vec::new());
    }
    let cache = match source {
        EmbeddingSource::Mock { .. } => None,
        EmbeddingSource::Cache { path, model_id } => {
            let cache = EmbeddingCache::open(path)?;
            if let Some(want) = model_id {
                if cache.model_id() != want {
                    return Err(TrainError::Config(format!(
                        "cache {} holds model {}, config expects {want}",
                        path.display(),
                        cache.model_id()
                    )));
                }
            }
            Some(cache)
        }
    };
    let wrap = match (one_word_wrap, &cache) {
        (Some(w), _) => w,
        (None, None) => false,
        // follow whichever rendering the cache was filled with
        (None, Some(c)) => {
            let field = strategy.fields()[0];
            let plain = data.registry.field_prompts(field, kb, false);
            records_from_cache(&plain, c).is_err()
        }
    };
    let mut tables = Vec::new();
    for &field in strategy.fields() {
        let items = data.registry.field_prompts(field, kb, wrap);
        let records = match (source, &cache) {
            (EmbeddingSource::Mock { dim, seed }, _) => MockEmbedder { dim: *dim, seed: *seed }.embed(&items)?,
            (_, Some(cache)) => records_from_cache(&items, cache)?,
            (_, None) => unreachable!("cache opened above"),
        };
        let vocab = data.vocabs.get(field);
        let d = model.d_field(field);
        tables.push(build_table(field, vocab, &records, d, model.init_scale as f32, projection_seed)?);
    }
    Ok(tables)
}

/// The initialized model of a run: config sized to the dataset's
/// vocabularies, strategy tables copied in.
pub fn init_model(
    data: &Dataset,
    kb: &KnowledgeBase,
    cfg: &RunConfig,
    seed: u64,
) -> Result<SeqTabModel<f32>, TrainError> {
    let model_cfg = cfg.model.clone().with_vocabs(&data.vocabs);
    let tables = build_tables(data, kb, cfg.strategy, &cfg.source, &model_cfg, cfg.projection_seed, cfg.one_word_wrap)?;
    let refs: Vec<&EmbeddingTable> = tables.iter().collect();
    Ok(SeqTabModel::init(model_cfg, &refs, Some(&data.vocabs), seed)?)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitReports {
    pub val: MetricReport,
    pub test: MetricReport,
    /// Test positions whose merchant never occurs in the train window.
    pub test_cold_start: Option<MetricReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub run_config: RunConfig,
    pub seed: u64,
    pub per_split: SplitReports,
    pub history: History,
}

/// Initializes, trains and evaluates one seed of `cfg`. The test window is
/// evaluated once, after training.
pub fn run_single(data: &Dataset, kb: &KnowledgeBase, cfg: &RunConfig, seed: u64) -> Result<RunReport, TrainError> {
    let model = init_model(data, kb, cfg, seed)?;
    let trained: Trained = train(model, data, &cfg.train, seed)?;
    let max_len = trained.model.config.max_seq_len;
    let bs = cfg.train.eval_batch_size;
    let val = trained.evaluate(&data.examples(Split::Val, max_len), bs)?;
    let test_ex = data.examples(Split::Test, max_len);
    let test = trained.evaluate(&test_ex, bs)?;
    let cold = restrict_to_merchants(&test_ex, &data.cold_merchants());
    let test_cold_start = if cold.is_empty() { None } else { Some(trained.evaluate(&cold, bs)?) };
    Ok(RunReport {
        run_config: cfg.clone(),
        seed,
        per_split: SplitReports { val, test, test_cold_start },
        history: trained.history,
    })
}

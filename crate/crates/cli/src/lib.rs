//! Pipeline commands behind the `semtab` binary.

pub mod config;

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use semtab_core::dataset::{fields_of_kind, read_jsonl, write_jsonl, Dataset, EnrichedEntity, PromptRecord, Registry};
use semtab_core::embed::{embed_cached, mock_model_id, Embedder, EmbeddingCache, MockEmbedder, RemoteEmbedder};
use semtab_core::fusion::KnowledgeBase;
use semtab_core::promptgen::{Prompt, PromptKind};
use semtab_core::train::{run_grid, run_single, ComparisonTable, EmbeddingSource, GridConfig, InitStrategy, RunConfig};
use semtab_core::txn::{generate_log, generate_world, read_log, write_log};

pub use config::PipelineConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad arguments, config or missing inputs; exit code 2.
    #[error("{0}")]
    Usage(String),
    /// A pipeline stage failed at runtime; exit code 1.
    #[error("stage {stage} failed: {source:#}")]
    Stage { stage: &'static str, source: anyhow::Error },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 2,
            CliError::Stage { .. } => 1,
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;

trait StageExt<T> {
    fn stage(self, stage: &'static str) -> CliResult<T>;
}

impl<T, E: Into<anyhow::Error>> StageExt<T> for Result<T, E> {
    fn stage(self, stage: &'static str) -> CliResult<T> {
        self.map_err(|e| CliError::Stage { stage, source: e.into() })
    }
}

/// Fails with a usage error naming `path` when it does not exist.
pub fn require(path: &Path, what: &str) -> CliResult<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(CliError::Usage(format!("{what} not found: {}", path.display())))
    }
}

fn create_parent(path: &Path) -> std::io::Result<()> {
    match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => fs::create_dir_all(p),
        _ => Ok(()),
    }
}

fn write_file(path: &Path, contents: &str) -> anyhow::Result<()> {
    create_parent(path)?;
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

pub struct GenSummary {
    pub transactions: usize,
    pub users: usize,
}

/// Generates a synthetic world and its log into `data_dir`:
/// `transactions.jsonl`, `kb.json` and `world.json`.
pub fn gen_data(cfg: &PipelineConfig, data_dir: &Path) -> CliResult<GenSummary> {
    const STAGE: &str = "gen-data";
    let world = generate_world(&cfg.world, cfg.seed).stage(STAGE)?;
    let log = generate_log(&world, &cfg.log, cfg.seed).stage(STAGE)?;
    fs::create_dir_all(data_dir).stage(STAGE)?;
    write_log(&log, data_dir.join("transactions.jsonl")).stage(STAGE)?;
    write_file(&data_dir.join("kb.json"), &(world.kb.to_json() + "\n")).stage(STAGE)?;
    let world_json = serde_json::to_string_pretty(&world).stage(STAGE)? + "\n";
    write_file(&data_dir.join("world.json"), &world_json).stage(STAGE)?;
    tracing::info!(transactions = log.len(), users = log.n_users(), dir = %data_dir.display(), "generated data");
    Ok(GenSummary { transactions: log.len(), users: log.n_users() })
}

pub fn load_kb(path: &Path) -> CliResult<KnowledgeBase> {
    require(path, "knowledge base")?;
    KnowledgeBase::load(path).map_err(|e| CliError::Usage(format!("cannot load knowledge base {}: {e}", path.display())))
}

/// Enriches every categorical value of the log into JSONL.
pub fn enrich(transactions: &Path, kb_path: &Path, out: &Path) -> CliResult<usize> {
    require(transactions, "transactions file")?;
    let kb = load_kb(kb_path)?;
    let log = read_log(transactions).stage("enrich")?;
    let entities = Registry::from_log(&log).enrich_all(&kb);
    create_parent(out).stage("enrich")?;
    write_jsonl(out, &entities).stage("enrich")?;
    tracing::info!(entities = entities.len(), out = %out.display(), "enriched");
    Ok(entities.len())
}

/// Renders prompts for enriched entities of `kind` (all kinds if `None`).
pub fn prompts(enriched: &Path, kind: Option<PromptKind>, wrap: bool, out: &Path) -> CliResult<usize> {
    require(enriched, "enrichment file")?;
    let entities: Vec<EnrichedEntity> = read_jsonl(enriched).stage("prompts")?;
    let fields = kind.map(fields_of_kind);
    let records: Vec<PromptRecord> = entities
        .iter()
        .filter(|e| fields.as_ref().is_none_or(|f| f.contains(&e.field)))
        .map(|e| PromptRecord::new(&e.key(), &e.prompt(wrap)))
        .collect();
    create_parent(out).stage("prompts")?;
    write_jsonl(out, &records).stage("prompts")?;
    tracing::info!(prompts = records.len(), wrap, out = %out.display(), "rendered prompts");
    Ok(records.len())
}

pub enum Endpoint {
    Mock { dim: usize, seed: u64 },
    Remote(semtab_core::embed::EndpointConfig),
}

pub struct EmbedSummary {
    pub model_id: String,
    pub dim: usize,
    pub prompts: usize,
    pub cached: usize,
}

/// Embeds every prompt in `prompt_files` missing from the cache at
/// `cache_path`, creating the cache when needed.
pub fn embed(prompt_files: &[PathBuf], endpoint: Endpoint, cache_path: &Path) -> CliResult<EmbedSummary> {
    const STAGE: &str = "embed";
    for p in prompt_files {
        require(p, "prompt file")?;
    }
    let (embedder, model_id, dim): (Box<dyn Embedder>, String, usize) = match endpoint {
        Endpoint::Mock { dim, seed } => {
            if dim < semtab_core::embed::MIN_MOCK_DIM {
                return Err(CliError::Usage(format!(
                    "mock dim must be at least {}, got {dim}",
                    semtab_core::embed::MIN_MOCK_DIM
                )));
            }
            (Box::new(MockEmbedder { dim, seed }), mock_model_id(dim, seed), dim)
        }
        Endpoint::Remote(cfg) => {
            let remote = RemoteEmbedder::new(cfg).map_err(|e| CliError::Usage(format!("invalid endpoint: {e}")))?;
            let info = remote.info().stage(STAGE)?;
            (Box::new(remote), info.model_id, info.dim)
        }
    };
    let mut items: Vec<(String, Prompt)> = Vec::new();
    for p in prompt_files {
        let records: Vec<PromptRecord> = read_jsonl(p).stage(STAGE)?;
        for r in records {
            let (_, key, prompt) = r.to_prompt().stage(STAGE)?;
            items.push((key, prompt));
        }
    }
    create_parent(cache_path).stage(STAGE)?;
    let mut cache = EmbeddingCache::open_or_create(cache_path, &model_id, dim).stage(STAGE)?;
    embed_cached(&items, &*embedder, &mut cache).stage(STAGE)?;
    cache.flush().stage(STAGE)?;
    tracing::info!(model_id = %model_id, dim, prompts = items.len(), cached = cache.len(), "embedded");
    Ok(EmbedSummary { model_id, dim, prompts: items.len(), cached: cache.len() })
}

/// Loads the log and splits it per the config.
pub fn load_dataset(cfg: &PipelineConfig, transactions: &Path) -> CliResult<Dataset> {
    require(transactions, "transactions file")?;
    let log = read_log(transactions).stage("load-data")?;
    Dataset::new(&log, &cfg.split.spec()).stage("load-data")
}

/// Embedding sources of the grid: the configured list, or the cache at
/// `cache` labelled with its model id.
pub fn grid_sources(cfg: &PipelineConfig, cache: &Path) -> CliResult<Vec<EmbeddingSource>> {
    if let Some(s) = &cfg.grid.sources {
        return Ok(s.clone());
    }
    require(cache, "embedding cache")?;
    let c = EmbeddingCache::open(cache).stage("grid")?;
    Ok(vec![EmbeddingSource::Cache { path: cache.to_path_buf(), model_id: Some(c.model_id().to_string()) }])
}

pub fn grid_config(cfg: &PipelineConfig, sources: Vec<EmbeddingSource>) -> GridConfig {
    GridConfig {
        strategies: cfg.grid.strategies.clone(),
        sources,
        seeds: cfg.grid_seeds(),
        model: cfg.model.clone(),
        train: cfg.train.clone(),
        projection_seed: cfg.grid.projection_seed,
        one_word_wrap: cfg.embed.one_word_wrap,
    }
}

/// Writes `comparison.{json,csv,txt}` into `dir`.
pub fn write_table(table: &ComparisonTable, dir: &Path) -> CliResult<()> {
    fs::create_dir_all(dir).stage("report")?;
    write_file(&dir.join("comparison.json"), &(table.to_json() + "\n")).stage("report")?;
    write_file(&dir.join("comparison.csv"), &table.to_csv()).stage("report")?;
    write_file(&dir.join("comparison.txt"), &table.to_text()).stage("report")?;
    Ok(())
}

pub fn grid(cfg: &PipelineConfig, data: &Dataset, kb: &KnowledgeBase, sources: Vec<EmbeddingSource>, jobs: usize, out: &Path) -> CliResult<ComparisonTable> {
    let gc = grid_config(cfg, sources);
    gc.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let table = run_grid(data, kb, &gc, jobs).stage("grid")?;
    write_table(&table, out)?;
    Ok(table)
}

/// Trains one strategy for one seed and writes its report JSON.
pub fn train(
    cfg: &PipelineConfig,
    data: &Dataset,
    kb: &KnowledgeBase,
    strategy: InitStrategy,
    source: EmbeddingSource,
    seed: u64,
    out: &Path,
) -> CliResult<PathBuf> {
    let run = RunConfig {
        strategy,
        source,
        model: cfg.model.clone(),
        train: cfg.train.clone(),
        seeds: vec![seed],
        projection_seed: cfg.grid.projection_seed,
        one_word_wrap: cfg.embed.one_word_wrap,
    };
    let report = run_single(data, kb, &run, seed).stage("train")?;
    let name = format!("run_{}_seed{seed}.json", strategy.name().replace('+', "_"));
    let path = out.join(name);
    let json = serde_json::to_string_pretty(&report).stage("train")? + "\n";
    write_file(&path, &json).stage("train")?;
    Ok(path)
}

/// Re-renders a saved comparison table.
pub fn report(input: &Path, out: &Path) -> CliResult<ComparisonTable> {
    require(input, "comparison report")?;
    let text = fs::read_to_string(input).stage("report")?;
    let table: ComparisonTable = serde_json::from_str(&text).stage("report")?;
    write_table(&table, out)?;
    Ok(table)
}

/// Whole pipeline under `root`: data, enrichment, prompts, mock
/// embeddings, and the configured strategy grid.
pub fn demo(cfg: &PipelineConfig, root: &Path) -> CliResult<ComparisonTable> {
    if let Some(kb) = &cfg.paths.kb {
        require(kb, "knowledge base")?;
    }
    let mut paths = config::Paths::under(root);
    paths.kb = cfg.paths.kb.clone();
    gen_data(cfg, &paths.data_dir)?;
    enrich(&paths.transactions(), &paths.kb(), &paths.enriched())?;
    let wrap = cfg.embed.one_word_wrap.unwrap_or(false);
    prompts(&paths.enriched(), None, wrap, &paths.prompts())?;
    let endpoint = Endpoint::Mock { dim: cfg.embed.mock_dim, seed: cfg.embed.mock_seed };
    let summary = embed(&[paths.prompts()], endpoint, &paths.cache)?;
    let data = load_dataset(cfg, &paths.transactions())?;
    let kb = load_kb(&paths.kb())?;
    let sources = vec![EmbeddingSource::Cache { path: paths.cache.clone(), model_id: Some(summary.model_id) }];
    grid(cfg, &data, &kb, sources, cfg.grid.jobs, &paths.reports)
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use semtab::config::PipelineConfig;
use semtab::{CliError, CliResult, Endpoint};
use semtab_core::promptgen::PromptKind;
use semtab_core::train::{EmbeddingSource, InitStrategy};

#[derive(Parser)]
#[command(name = "semtab", version, about = "Semantic embedding initialization for transaction sequence models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct Common {
    /// Base seed; overrides the config.
    #[arg(long)]
    seed: Option<u64>,
    /// Pipeline config JSON.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output location (file or directory, per command).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum FieldArg {
    Mcc,
    Merchant,
    Location,
}

#[derive(Clone, Copy, ValueEnum)]
enum Switch {
    On,
    Off,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic world and transaction log.
    GenData {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        users: Option<usize>,
        #[arg(long)]
        months: Option<u32>,
    },
    /// Enrich every categorical value of a log from the knowledge base.
    Enrich {
        #[command(flatten)]
        common: Common,
        /// Directory holding transactions.jsonl.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        kb: Option<PathBuf>,
    },
    /// Render prompts for enriched entities.
    Prompts {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Enrichment JSONL; defaults to <data>/enriched.jsonl.
        #[arg(long)]
        enriched: Option<PathBuf>,
        #[arg(long, value_enum)]
        field: Option<FieldArg>,
        #[arg(long, value_enum)]
        wrap_one_word: Option<Switch>,
    },
    /// Embed prompts into the cache.
    Embed {
        #[command(flatten)]
        common: Common,
        /// Prompt JSONL files; defaults to <data>/prompts.jsonl.
        #[arg(long, num_args = 1..)]
        prompts: Vec<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// `mock` or the base URL of an embedding service.
        #[arg(long, default_value = "mock")]
        endpoint: String,
        /// Mock embedding dimension.
        #[arg(long)]
        dim: Option<usize>,
        #[arg(long)]
        cache: Option<PathBuf>,
    },
    /// Train and evaluate one strategy for one seed.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        strategy: String,
        /// Embedding cache; without it the mock embedder runs in-process.
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        kb: Option<PathBuf>,
    },
    /// Run the strategy comparison grid.
    Grid {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        kb: Option<PathBuf>,
        #[arg(long)]
        cache: Option<PathBuf>,
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Re-render a saved comparison table.
    Report {
        #[command(flatten)]
        common: Common,
        /// comparison.json written by `grid`.
        #[arg(long = "in")]
        input: PathBuf,
    },
    /// Run the whole pipeline end to end with the mock embedder.
    Demo {
        #[command(flatten)]
        common: Common,
    },
}

fn load(common: &Common) -> CliResult<PipelineConfig> {
    let mut cfg = PipelineConfig::load_or_default(common.config.as_deref())?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn apply_data(cfg: &mut PipelineConfig, data: Option<PathBuf>, kb: Option<PathBuf>) {
    if let Some(d) = data {
        cfg.paths.data_dir = d;
    }
    if kb.is_some() {
        cfg.paths.kb = kb;
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::GenData { common, users, months } => {
            let mut cfg = load(&common)?;
            if let Some(u) = users {
                cfg.log.n_users = u;
            }
            if let Some(m) = months {
                cfg.log.months = m;
            }
            let dir = common.out.unwrap_or(cfg.paths.data_dir.clone());
            let s = semtab::gen_data(&cfg, &dir)?;
            println!("wrote {} transactions for {} users to {}", s.transactions, s.users, dir.display());
        }
        Command::Enrich { common, data, kb } => {
            let mut cfg = load(&common)?;
            apply_data(&mut cfg, data, kb);
            let out = common.out.unwrap_or(cfg.paths.enriched());
            let n = semtab::enrich(&cfg.paths.transactions(), &cfg.paths.kb(), &out)?;
            println!("wrote {n} enriched entities to {}", out.display());
        }
        Command::Prompts { common, data, enriched, field, wrap_one_word } => {
            let mut cfg = load(&common)?;
            apply_data(&mut cfg, data, None);
            let kind = field.map(|f| match f {
                FieldArg::Mcc => PromptKind::Mcc,
                FieldArg::Merchant => PromptKind::Merchant,
                FieldArg::Location => PromptKind::Location,
            });
            let wrap = match wrap_one_word {
                Some(Switch::On) => true,
                Some(Switch::Off) => false,
                None => cfg.embed.one_word_wrap.unwrap_or(false),
            };
            let input = enriched.unwrap_or(cfg.paths.enriched());
            let out = common.out.unwrap_or(cfg.paths.prompts());
            let n = semtab::prompts(&input, kind, wrap, &out)?;
            println!("wrote {n} prompts to {}", out.display());
        }
        Command::Embed { common, prompts, data, endpoint, dim, cache } => {
            let mut cfg = load(&common)?;
            apply_data(&mut cfg, data, None);
            let endpoint = if endpoint == "mock" {
                Endpoint::Mock { dim: dim.unwrap_or(cfg.embed.mock_dim), seed: cfg.embed.mock_seed }
            } else {
                if dim.is_some() {
                    return Err(CliError::Usage("--dim applies to the mock endpoint only".into()));
                }
                Endpoint::Remote(semtab_core::embed::EndpointConfig { base_url: endpoint, ..cfg.embed.endpoint.clone() })
            };
            let files = if prompts.is_empty() { vec![cfg.paths.prompts()] } else { prompts };
            let cache = cache.or(common.out).unwrap_or(cfg.paths.cache.clone());
            let s = semtab::embed(&files, endpoint, &cache)?;
            println!("cache {} holds {} vectors of dim {} from {}", cache.display(), s.cached, s.dim, s.model_id);
        }
        Command::Train { common, strategy, cache, data, kb } => {
            let Some(strategy) = InitStrategy::parse(&strategy) else {
                let names: Vec<&str> = InitStrategy::ALL.iter().map(|s| s.name()).collect();
                return Err(CliError::Usage(format!("unknown strategy {strategy:?}; expected one of {}", names.join(", "))));
            };
            let mut cfg = load(&common)?;
            apply_data(&mut cfg, data, kb);
            if let Some(c) = &cache {
                semtab::require(c, "embedding cache")?;
            }
            let kb = semtab::load_kb(&cfg.paths.kb())?;
            let dataset = semtab::load_dataset(&cfg, &cfg.paths.transactions())?;
            let source = match cache {
                Some(path) => EmbeddingSource::Cache { path, model_id: None },
                None => EmbeddingSource::Mock { dim: cfg.embed.mock_dim, seed: cfg.embed.mock_seed },
            };
            let out = common.out.unwrap_or(cfg.paths.reports.clone());
            let path = semtab::train(&cfg, &dataset, &kb, strategy, source, cfg.seed, &out)?;
            println!("wrote {}", path.display());
        }
        Command::Grid { common, data, kb, cache, jobs } => {
            let mut cfg = load(&common)?;
            apply_data(&mut cfg, data, kb);
            if let Some(c) = cache {
                cfg.paths.cache = c;
            }
            let sources = semtab::grid_sources(&cfg, &cfg.paths.cache)?;
            let kb = semtab::load_kb(&cfg.paths.kb())?;
            let dataset = semtab::load_dataset(&cfg, &cfg.paths.transactions())?;
            let out = common.out.unwrap_or(cfg.paths.reports.clone());
            let table = semtab::grid(&cfg, &dataset, &kb, sources, jobs.unwrap_or(cfg.grid.jobs), &out)?;
            print!("{}", table.to_text());
        }
        Command::Report { common, input } => {
            let out = common.out.unwrap_or_else(|| input.parent().map(PathBuf::from).unwrap_or_default());
            let table = semtab::report(&input, &out)?;
            print!("{}", table.to_text());
        }
        Command::Demo { common } => {
            let cfg = load(&common)?;
            let root = common.out.unwrap_or_else(|| PathBuf::from("demo"));
            let table = semtab::demo(&cfg, &root)?;
            print!("{}", table.to_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt().json().with_writer(std::io::stderr).with_target(false).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            tracing::error!(error = %e, "command failed");
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::fit::TrainConfig;
use super::metrics::{task_metrics, ClassMetrics, Metric, MetricReport, RegressionMetrics};
use super::run::{run_single, EmbeddingSource, InitStrategy, RunConfig, RunReport};
use super::{relative_improvement, TrainError};
use crate::dataset::Dataset;
use crate::fusion::KnowledgeBase;
use crate::model::{ModelConfig, Task};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub strategies: Vec<InitStrategy>,
    pub sources: Vec<EmbeddingSource>,
    pub seeds: Vec<u64>,
    #[serde(default)]
    pub model: ModelConfig,
    #[serde(default)]
    pub train: TrainConfig,
    #[serde(default)]
    pub projection_seed: u64,
    #[serde(default)]
    pub one_word_wrap: Option<bool>,
}

impl GridConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let vanilla = self.strategies.iter().filter(|s| **s == InitStrategy::Vanilla).count();
        if vanilla != 1 {
            return Err(TrainError::Config(format!("the grid needs vanilla exactly once, found {vanilla}")));
        }
        let mut seen = std::collections::BTreeSet::new();
        if let Some(dup) = self.strategies.iter().find(|s| !seen.insert(**s)) {
            return Err(TrainError::Config(format!("strategy {dup} listed twice")));
        }
        if self.seeds.is_empty() {
            return Err(TrainError::Config("the grid needs at least one seed".into()));
        }
        if self.sources.is_empty() && self.strategies.len() > 1 {
            return Err(TrainError::Config("semantic strategies need at least one embedding source".into()));
        }
        self.train.validate()
    }

    /// One cell per row: vanilla once, then every other strategy per source.
    pub fn cells(&self) -> Vec<RunConfig> {
        let run = |strategy, source: &EmbeddingSource| RunConfig {
            strategy,
            source: source.clone(),
            model: self.model.clone(),
            train: self.train.clone(),
            seeds: self.seeds.clone(),
            projection_seed: self.projection_seed,
            one_word_wrap: self.one_word_wrap,
        };
        let placeholder = EmbeddingSource::Mock { dim: 0, seed: 0 };
        let mut out = vec![run(InitStrategy::Vanilla, self.sources.first().unwrap_or(&placeholder))];
        for source in &self.sources {
            for s in self.strategies.iter().filter(|s| **s != InitStrategy::Vanilla) {
                out.push(run(*s, source));
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedOutcome {
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<RunReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridRow {
    pub strategy: InitStrategy,
    /// Embedding source label; `None` for vanilla.
    pub source: Option<String>,
    /// Seed means over successful runs.
    pub test: Option<MetricReport>,
    pub test_cold_start: Option<MetricReport>,
    /// `task.metric` -> better than vanilla on the test split.
    pub better_than_vanilla: BTreeMap<String, bool>,
    pub runs: Vec<SeedOutcome>,
}

impl GridRow {
    pub fn flag(&self, task: Task, metric: Metric) -> bool {
        self.better_than_vanilla.get(&flag_key(task, metric)).copied().unwrap_or(false)
    }

    pub fn errors(&self) -> impl Iterator<Item = (u64, &str)> {
        self.runs.iter().filter_map(|r| r.error.as_deref().map(|e| (r.seed, e)))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiCell {
    pub strategy: InitStrategy,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ri_percent: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Relative improvement of the anomaly task against vanilla: one row per
/// embedding source, one cell per semantic strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiRow {
    pub source: String,
    pub cells: Vec<RiCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonTable {
    pub config: GridConfig,
    pub rows: Vec<GridRow>,
    /// Score behind the RI grid.
    pub ri_score: String,
    pub ri: Vec<RiRow>,
}

pub fn flag_key(task: Task, metric: Metric) -> String {
    format!("{}.{}", task.name(), metric.name())
}

/// Task and metric columns of the comparison table.
pub const TABLE_COLUMNS: [(Task, Metric); 8] = [
    (Task::Amount, Metric::Mae),
    (Task::Amount, Metric::Smape),
    (Task::Mcc, Metric::Acc),
    (Task::Mcc, Metric::MacroF1),
    (Task::City, Metric::Acc),
    (Task::City, Metric::MacroF1),
    (Task::Merchant, Metric::Acc),
    (Task::Merchant, Metric::MacroF1),
];

fn mean_class(xs: &[&ClassMetrics]) -> ClassMetrics {
    let n = xs.len() as f64;
    ClassMetrics {
        acc: xs.iter().map(|c| c.acc).sum::<f64>() / n,
        macro_f1: xs.iter().map(|c| c.macro_f1).sum::<f64>() / n,
        count: xs[0].count,
    }
}

/// Field-wise mean; counts come from the first report.
pub fn mean_report(reports: &[&MetricReport]) -> Option<MetricReport> {
    let first = reports.first()?;
    let n = reports.len() as f64;
    let class = |f: fn(&MetricReport) -> &ClassMetrics| mean_class(&reports.iter().map(|r| f(r)).collect::<Vec<_>>());
    Some(MetricReport {
        next_amount: RegressionMetrics {
            mae: reports.iter().map(|r| r.next_amount.mae).sum::<f64>() / n,
            smape: reports.iter().map(|r| r.next_amount.smape).sum::<f64>() / n,
            count: first.next_amount.count,
        },
        next_mcc: class(|r| &r.next_mcc),
        next_city: class(|r| &r.next_city),
        next_merchant: class(|r| &r.next_merchant),
        anomaly: class(|r| &r.anomaly),
    })
}

/// Better-than-baseline flag for every task metric with evaluated
/// positions on both sides.
pub fn flags(cell: &MetricReport, baseline: &MetricReport) -> BTreeMap<String, bool> {
    let mut out = BTreeMap::new();
    for task in Task::ALL {
        for metric in task_metrics(task) {
            let ok = cell.count(task) > 0 && baseline.count(task) > 0;
            let better = ok && metric.improves(cell.get(task, metric).unwrap(), baseline.get(task, metric).unwrap());
            out.insert(flag_key(task, metric), better);
        }
    }
    out
}

/// Assembles the table from per-cell seed outcomes, in cell order. The
/// first cell must be vanilla.
pub fn assemble(config: &GridConfig, cells: &[RunConfig], outcomes: Vec<Vec<SeedOutcome>>) -> ComparisonTable {
    let mut rows: Vec<GridRow> = cells
        .iter()
        .zip(outcomes)
        .map(|(cell, runs)| {
            let reports: Vec<&RunReport> = runs.iter().filter_map(|r| r.report.as_ref()).collect();
            let test = mean_report(&reports.iter().map(|r| &r.per_split.test).collect::<Vec<_>>());
            let cold: Vec<&MetricReport> = reports.iter().filter_map(|r| r.per_split.test_cold_start.as_ref()).collect();
            let test_cold_start = if cold.len() == reports.len() { mean_report(&cold) } else { None };
            GridRow {
                strategy: cell.strategy,
                source: (cell.strategy != InitStrategy::Vanilla).then(|| cell.source.label()),
                test,
                test_cold_start,
                better_than_vanilla: BTreeMap::new(),
                runs,
            }
        })
        .collect();
    let baseline = rows.first().and_then(|r| r.test);
    for row in rows.iter_mut() {
        let cell = row.test.filter(|_| row.strategy != InitStrategy::Vanilla);
        row.better_than_vanilla = match (cell, baseline) {
            (Some(c), Some(b)) => flags(&c, &b),
            _ => flags(&MetricReport::default(), &MetricReport::default()),
        };
    }

    let score = |r: &MetricReport| r.anomaly.macro_f1;
    let ri = config
        .sources
        .iter()
        .map(|source| {
            let label = source.label();
            let cells = config
                .strategies
                .iter()
                .filter(|s| **s != InitStrategy::Vanilla)
                .map(|s| {
                    let row = rows.iter().find(|r| r.strategy == *s && r.source.as_deref() == Some(label.as_str()));
                    let value = match (row.and_then(|r| r.test), baseline) {
                        (Some(c), Some(b)) => relative_improvement(score(&c), score(&b)).map_err(|e| e.to_string()),
                        (None, _) => Err("cell has no successful runs".to_string()),
                        (_, None) => Err("vanilla has no successful runs".to_string()),
                    };
                    RiCell { strategy: *s, ri_percent: value.as_ref().ok().copied(), error: value.err() }
                })
                .collect();
            RiRow { source: label, cells }
        })
        .collect();
    ComparisonTable { config: config.clone(), rows, ri_score: flag_key(Task::Anomaly, Metric::MacroF1), ri }
}

/// Runs every cell for every seed on up to `jobs` threads. Run failures
/// are recorded in their cell; configuration errors abort.
pub fn run_grid(data: &Dataset, kb: &KnowledgeBase, config: &GridConfig, jobs: usize) -> Result<ComparisonTable, TrainError> {
    config.validate()?;
    let cells = config.cells();
    let work: Vec<(usize, u64)> = (0..cells.len()).flat_map(|c| config.seeds.iter().map(move |s| (c, *s))).collect();
    let results: Mutex<BTreeMap<(usize, usize), SeedOutcome>> = Mutex::new(BTreeMap::new());
    let next = AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..jobs.clamp(1, work.len().max(1)) {
            scope.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&(c, seed)) = work.get(i) else { break };
                tracing::info!(strategy = %cells[c].strategy, source = %cells[c].source.label(), seed, "grid run");
                let outcome = match run_single(data, kb, &cells[c], seed) {
                    Ok(report) => SeedOutcome { seed, report: Some(report), error: None },
                    Err(e) => {
                        tracing::warn!(strategy = %cells[c].strategy, seed, error = %e, "grid run failed");
                        SeedOutcome { seed, report: None, error: Some(e.to_string()) }
                    }
                };
                results.lock().expect("no panics while holding the lock").insert((c, i), outcome);
            });
        }
    });
    let mut outcomes: Vec<Vec<SeedOutcome>> = vec![Vec::new(); cells.len()];
    for ((c, _), o) in results.into_inner().expect("threads joined") {
        outcomes[c].push(o);
    }
    Ok(assemble(config, &cells, outcomes))
}

fn fmt_metric(metric: Metric, v: f64) -> String {
    match metric {
        Metric::Mae => format!("{v:.2}"),
        _ => format!("{v:.4}"),
    }
}

fn column_title(task: Task, metric: Metric) -> String {
    let t = match task {
        Task::Amount => "Amount",
        Task::Mcc => "MCC",
        Task::City => "City",
        Task::Merchant => "Merchant",
        Task::Anomaly => "Anomaly",
    };
    let m = match metric {
        Metric::Mae => "MAE",
        Metric::Smape => "sMAPE",
        Metric::Acc => "Acc",
        Metric::MacroF1 => "F1",
    };
    format!("{t} {m}")
}

fn aligned(rows: &[Vec<String>]) -> String {
    let ncol = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> =
        (0..ncol).map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for r in rows {
        let line: Vec<String> = r
            .iter()
            .enumerate()
            .map(|(c, s)| if c < 2 { format!("{s:<w$}", w = widths[c]) } else { format!("{s:>w$}", w = widths[c]) })
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

impl ComparisonTable {
    pub fn row(&self, strategy: InitStrategy, source: Option<&str>) -> Option<&GridRow> {
        self.rows.iter().find(|r| r.strategy == strategy && (r.source.as_deref() == source || source.is_none()))
    }

    /// Aligned text: the metric grid, with `*` marking cells better than
    /// vanilla, then the RI grid.
    pub fn to_text(&self) -> String {
        let mut grid = vec![["Strategy".to_string(), "Source".to_string()]
            .into_iter()
            .chain(TABLE_COLUMNS.iter().map(|(t, m)| column_title(*t, *m)))
            .collect::<Vec<_>>()];
        for row in &self.rows {
            let mut line = vec![row.strategy.to_string(), row.source.clone().unwrap_or_else(|| "-".into())];
            for (t, m) in TABLE_COLUMNS {
                line.push(match &row.test {
                    Some(r) => format!("{}{}", fmt_metric(m, r.get(t, m).unwrap()), if row.flag(t, m) { "*" } else { " " }),
                    None => "error ".into(),
                });
            }
            grid.push(line);
        }
        let mut out = String::from("Test metrics (mean over seeds; * better than vanilla)\n");
        out.push_str(&aligned(&grid));
        for row in &self.rows {
            for (seed, e) in row.errors() {
                let _ = writeln!(out, "error: {} {} seed {seed}: {e}", row.strategy, row.source.as_deref().unwrap_or("-"));
            }
        }
        if !self.ri.is_empty() {
            let _ = writeln!(out, "\nRelative improvement of {} against vanilla", self.ri_score);
            let mut ri = vec![std::iter::once("Source".to_string())
                .chain(self.ri.first().into_iter().flat_map(|r| r.cells.iter().map(|c| c.strategy.to_string())))
                .collect::<Vec<_>>()];
            for r in &self.ri {
                let mut line = vec![r.source.clone()];
                for c in &r.cells {
                    line.push(c.ri_percent.map_or_else(|| "n/a".into(), |v| format!("{v:+.2}%")));
                }
                ri.push(line);
            }
            out.push_str(&aligned(&ri));
        }
        out
    }

    /// One CSV line per row with a value and a flag column per metric.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("strategy,source,runs_ok,runs_failed");
        for (t, m) in TABLE_COLUMNS {
            let k = format!("{}_{}", t.name(), m.name());
            let _ = write!(out, ",{k},{k}_better");
        }
        out.push('\n');
        for row in &self.rows {
            let ok = row.runs.iter().filter(|r| r.report.is_some()).count();
            let _ = write!(out, "{},{},{ok},{}", row.strategy, row.source.as_deref().unwrap_or(""), row.runs.len() - ok);
            for (t, m) in TABLE_COLUMNS {
                let v = row.test.and_then(|r| r.get(t, m)).map(|v| format!("{v}")).unwrap_or_default();
                let _ = write!(out, ",{v},{}", row.flag(t, m));
            }
            out.push('\n');
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("table serializes")
    }
}

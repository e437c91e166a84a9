use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::model::{Real, SeqOutput, SeqTabModel, Task};
use crate::model::{Batch, Example};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct RegressionMetrics {
    pub mae: f64,
    pub smape: f64,
    pub count: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub acc: f64,
    pub macro_f1: f64,
    pub count: usize,
}

/// Mean absolute error and the [0, 1] symmetric percentage error
/// `mean(|y - p| / ((|y| + |p|) / 2)) / 2`, with 0/0 terms counted as 0.
pub fn regression_metrics(y: &[f64], pred: &[f64]) -> RegressionMetrics {
    assert_eq!(y.len(), pred.len(), "targets and predictions differ in length");
    if y.is_empty() {
        return RegressionMetrics::default();
    }
    let n = y.len() as f64;
    let mut abs = 0.0;
    let mut sym = 0.0;
    for (&a, &b) in y.iter().zip(pred) {
        let d = (a - b).abs();
        abs += d;
        let denom = (a.abs() + b.abs()) / 2.0;
        if denom > 0.0 {
            sym += d / denom;
        }
    }
    RegressionMetrics { mae: abs / n, smape: sym / n / 2.0, count: y.len() }
}

/// Top-1 accuracy and macro-F1 over the classes present in `y`.
pub fn classification_metrics(y: &[u32], pred: &[u32]) -> ClassMetrics {
    assert_eq!(y.len(), pred.len(), "targets and predictions differ in length");
    if y.is_empty() {
        return ClassMetrics::default();
    }
    // class -> (tp, fp, fn)
    let mut tally: BTreeMap<u32, [usize; 3]> = BTreeMap::new();
    let mut correct = 0;
    for (&a, &b) in y.iter().zip(pred) {
        if a == b {
            correct += 1;
            tally.entry(a).or_default()[0] += 1;
        } else {
            tally.entry(a).or_default()[2] += 1;
            tally.entry(b).or_default()[1] += 1;
        }
    }
    let present: Vec<[usize; 3]> =
        tally.into_iter().filter(|(_, [tp, _, fn_])| tp + fn_ > 0).map(|(_, c)| c).collect();
    let f1_sum: f64 = present.iter().map(|[tp, fp, fn_]| (2 * tp) as f64 / (2 * tp + fp + fn_) as f64).sum();
    ClassMetrics { acc: correct as f64 / y.len() as f64, macro_f1: f1_sum / present.len() as f64, count: y.len() }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    Mae,
    Smape,
    Acc,
    MacroF1,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Mae => "mae",
            Metric::Smape => "smape",
            Metric::Acc => "acc",
            Metric::MacroF1 => "macro_f1",
        }
    }

    pub fn lower_is_better(self) -> bool {
        matches!(self, Metric::Mae | Metric::Smape)
    }

    /// Whether `value` beats `baseline` under this metric's orientation.
    pub fn improves(self, value: f64, baseline: f64) -> bool {
        if self.lower_is_better() {
            value < baseline
        } else {
            value > baseline
        }
    }
}

/// Metrics of one task.
pub fn task_metrics(task: Task) -> [Metric; 2] {
    match task {
        Task::Amount => [Metric::Mae, Metric::Smape],
        _ => [Metric::Acc, Metric::MacroF1],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    pub next_amount: RegressionMetrics,
    pub next_mcc: ClassMetrics,
    pub next_city: ClassMetrics,
    pub next_merchant: ClassMetrics,
    pub anomaly: ClassMetrics,
}

impl MetricReport {
    pub fn count(&self, task: Task) -> usize {
        match task {
            Task::Amount => self.next_amount.count,
            Task::Mcc => self.next_mcc.count,
            Task::City => self.next_city.count,
            Task::Merchant => self.next_merchant.count,
            Task::Anomaly => self.anomaly.count,
        }
    }

    pub fn class(&self, task: Task) -> Option<&ClassMetrics> {
        match task {
            Task::Amount => None,
            Task::Mcc => Some(&self.next_mcc),
            Task::City => Some(&self.next_city),
            Task::Merchant => Some(&self.next_merchant),
            Task::Anomaly => Some(&self.anomaly),
        }
    }

    /// Value of `metric` for `task`, `None` when the pair does not exist.
    pub fn get(&self, task: Task, metric: Metric) -> Option<f64> {
        match (task, metric) {
            (Task::Amount, Metric::Mae) => Some(self.next_amount.mae),
            (Task::Amount, Metric::Smape) => Some(self.next_amount.smape),
            (Task::Amount, _) => None,
            (_, Metric::Acc) => self.class(task).map(|c| c.acc),
            (_, Metric::MacroF1) => self.class(task).map(|c| c.macro_f1),
            _ => None,
        }
    }

    pub fn from_predictions(p: &Predictions) -> Result<Self, TrainError> {
        let r = Self {
            next_amount: regression_metrics(&p.amount.0, &p.amount.1),
            next_mcc: classification_metrics(&p.mcc.0, &p.mcc.1),
            next_city: classification_metrics(&p.city.0, &p.city.1),
            next_merchant: classification_metrics(&p.merchant.0, &p.merchant.1),
            anomaly: classification_metrics(&p.anomaly.0, &p.anomaly.1),
        };
        if Task::ALL.iter().all(|t| r.count(*t) == 0) {
            return Err(TrainError::EmptyEval);
        }
        Ok(r)
    }
}

/// Paired (target, prediction) columns per task. Anomaly classes are 0/1.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Predictions {
    pub amount: (Vec<f64>, Vec<f64>),
    pub mcc: (Vec<u32>, Vec<u32>),
    pub city: (Vec<u32>, Vec<u32>),
    pub merchant: (Vec<u32>, Vec<u32>),
    pub anomaly: (Vec<u32>, Vec<u32>),
}

/// Index of the largest logit among regular classes (index >= 2); the
/// first wins ties.
fn argmax_regular<T: Real>(row: &[T]) -> u32 {
    let mut best = 2;
    for (i, v) in row.iter().enumerate().skip(3) {
        if *v > row[best] {
            best = i;
        }
    }
    best as u32
}

impl Predictions {
    /// Collects predictions at every defined target of one sequence.
    pub fn push<T: Real>(&mut self, ex: &Example, out: &SeqOutput<T>) {
        let t = &ex.targets;
        for i in 0..ex.len() {
            if let Some(y) = t.amount[i] {
                self.amount.0.push(y);
                self.amount.1.push(out.amount_currency(i));
            }
            for (col, target, logits) in [
                (&mut self.mcc, t.mcc[i], &out.mcc),
                (&mut self.city, t.city[i], &out.city),
                (&mut self.merchant, t.merchant[i], &out.merchant),
            ] {
                if let Some(y) = target {
                    col.0.push(y);
                    col.1.push(argmax_regular(logits.row(i)));
                }
            }
            if let Some(y) = t.anomaly[i] {
                self.anomaly.0.push(u32::from(y));
                self.anomaly.1.push(u32::from(out.anomaly_prob(i).f64() >= 0.5));
            }
        }
    }
}

/// Predictions of `model` over `examples`, batched.
pub fn predict<T: Real>(model: &SeqTabModel<T>, examples: &[Example], batch_size: usize) -> Result<Predictions, TrainError> {
    let mut p = Predictions::default();
    for chunk in examples.chunks(batch_size.max(1)) {
        let outs = model.forward(&Batch::new(chunk))?;
        for (ex, out) in chunk.iter().zip(&outs) {
            p.push(ex, out);
        }
    }
    Ok(p)
}

/// Metrics over every valid target position of `examples`.
pub fn evaluate<T: Real>(model: &SeqTabModel<T>, examples: &[Example], batch_size: usize) -> Result<MetricReport, TrainError> {
    MetricReport::from_predictions(&predict(model, examples, batch_size)?)
}

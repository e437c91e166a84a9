use serde::{Deserialize, Serialize};

use super::batch::{Batch, Example, Targets};
use super::forward::loss_and_grad;
use super::params::VocabSizes;
use super::{ModelConfig, ModelError, SeqTabModel, TaskWeights};
use crate::vocab::Field;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    /// Max over all parameters of `|a - n| / max(|a|, |n|, 1e-8)`.
    pub max_rel_error: f64,
    pub worst_tensor: String,
    pub worst_index: usize,
    /// `(tensor, max relative error)` in visit order.
    pub per_tensor: Vec<(String, f64)>,
    /// Whether every embedding row not referenced by the batch has an
    /// exactly zero gradient.
    pub unused_rows_zero: bool,
    pub n_checked: usize,
}

/// Compares the analytic gradient of the joint loss against central
/// differences for every parameter element.
pub fn grad_check(
    model: &SeqTabModel<f64>,
    batch: &Batch,
    weights: &TaskWeights,
    eps: f64,
) -> Result<GradCheckReport, ModelError> {
    let (_, grads) = loss_and_grad(model, batch, weights, None, true)?;
    let grads = grads.expect("gradient requested");
    let analytic: Vec<(String, Vec<f64>)> = grads.tensors().into_iter().map(|(n, _, m)| (n, m.data.clone())).collect();

    let mut probe = model.clone();
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_tensor: String::new(),
        worst_index: 0,
        per_tensor: Vec::new(),
        unused_rows_zero: true,
        n_checked: 0,
    };
    for (ti, (name, a)) in analytic.iter().enumerate() {
        let mut worst = 0f64;
        for i in 0..a.len() {
            let orig = element(&mut probe, ti, i, None);
            element(&mut probe, ti, i, Some(orig + eps));
            let up = loss_and_grad(&probe, batch, weights, None, false)?.0.total;
            element(&mut probe, ti, i, Some(orig - eps));
            let down = loss_and_grad(&probe, batch, weights, None, false)?.0.total;
            element(&mut probe, ti, i, Some(orig));
            let numeric = (up - down) / (2.0 * eps);
            let rel = (a[i] - numeric).abs() / a[i].abs().max(numeric.abs()).max(1e-8);
            worst = worst.max(rel);
            if rel > report.max_rel_error {
                report.max_rel_error = rel;
                report.worst_tensor = name.clone();
                report.worst_index = i;
            }
            report.n_checked += 1;
        }
        report.per_tensor.push((name.clone(), worst));
    }

    for (k, field) in Field::ALL.into_iter().enumerate() {
        let g = grads.embedding(field);
        for row in 0..g.rows {
            let used = (0..batch.len()).any(|b| batch.seq(b).fields.iter().any(|f| f[k] as usize == row));
            if !used && g.row(row).iter().any(|v| *v != 0.0) {
                report.unused_rows_zero = false;
            }
        }
    }
    Ok(report)
}

/// Reads element `i` of tensor `ti`, optionally overwriting it first.
fn element(model: &mut SeqTabModel<f64>, ti: usize, i: usize, set: Option<f64>) -> f64 {
    let mut tensors = model.params.tensors_mut();
    let m = &mut tensors[ti].2;
    if let Some(v) = set {
        m.data[i] = v;
    }
    m.data[i]
}

/// Tiny architecture for gradient checks: `d_model` 8, two heads, two
/// layers. The larger init scale keeps gradients well above round-off.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_mcc: 3,
        d_merchant: 4,
        d_city: 3,
        d_state: 2,
        d_amount: 2,
        d_time: 2,
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        ffn_mult: 2,
        max_seq_len: 6,
        init_scale: 0.5,
        dropout: 0.0,
        vocab_sizes: VocabSizes { mcc: 6, merchant: 7, city: 5, state: 4 },
    }
}

/// Two sequences of lengths 6 and 4 covering all five tasks. Index 5 of
/// the merchant vocabulary and index 4 of the city vocabulary never occur.
pub fn tiny_batch() -> Batch {
    let a = Example {
        fields: vec![[2, 3, 2, 2], [3, 2, 2, 2], [0, 4, 3, 3], [2, 3, 1, 2], [4, 6, 2, 2], [5, 2, 3, 3]],
        log_amount: vec![2.3, 3.1, 1.2, 4.0, 2.2, 0.7],
        time_bucket: vec![0, 5, 7, 3, 9, 12],
        targets: Targets {
            amount: vec![Some(21.5), Some(2.3), Some(53.0), Some(8.0), Some(1.0), None],
            mcc: vec![Some(3), None, Some(2), Some(4), Some(5), None],
            city: vec![Some(2), Some(3), Some(1), Some(2), Some(3), None],
            merchant: vec![Some(2), Some(4), Some(3), Some(6), Some(2), None],
            anomaly: vec![Some(false), Some(true), Some(false), Some(false), Some(true), Some(false)],
        },
    };
    let b = Example {
        fields: vec![[3, 4, 3, 3], [2, 0, 2, 2], [3, 1, 1, 1], [2, 2, 2, 2]],
        log_amount: vec![1.5, 0.2, 2.8, 3.3],
        time_bucket: vec![0, 2, 14, 1],
        targets: Targets {
            amount: vec![Some(0.5), Some(15.2), Some(26.0), None],
            mcc: vec![Some(2), Some(3), Some(2), None],
            city: vec![Some(2), Some(1), Some(2), None],
            merchant: vec![Some(0), Some(1), Some(2), None],
            anomaly: vec![Some(false), Some(false), Some(true), Some(false)],
        },
    };
    Batch::new(&[a, b])
}

/// Gradient check of the tiny model in double precision.
pub fn grad_check_tiny(seed: u64, eps: f64) -> Result<GradCheckReport, ModelError> {
    let model = SeqTabModel::<f64>::init(tiny_config(), &[], None, seed)?;
    grad_check(&model, &tiny_batch(), &TaskWeights::default(), eps)
}

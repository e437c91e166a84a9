use serde::{Deserialize, Serialize};

use super::{ModelConfig, ModelError, N_TIME_BUCKETS};

/// Bucket for the gap since the previous transaction: 0 for the first
/// transaction, then log2-spaced hours.
pub fn time_bucket(dt_secs: Option<i64>) -> u8 {
    match dt_secs {
        None => 0,
        Some(dt) => {
            let hours = dt.max(0) as f64 / 3600.0;
            let b = (1.0 + hours).log2().floor() as usize;
            (1 + b.min(N_TIME_BUCKETS - 2)) as u8
        }
    }
}

/// Per-position targets. `None` marks an undefined or masked target.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Targets {
    /// Next transaction amount in currency units.
    pub amount: Vec<Option<f64>>,
    pub mcc: Vec<Option<u32>>,
    pub city: Vec<Option<u32>>,
    pub merchant: Vec<Option<u32>>,
    /// Label of the current transaction.
    pub anomaly: Vec<Option<bool>>,
}

impl Targets {
    pub fn empty(len: usize) -> Self {
        Self {
            amount: vec![None; len],
            mcc: vec![None; len],
            city: vec![None; len],
            merchant: vec![None; len],
            anomaly: vec![None; len],
        }
    }

    fn extend_from(&mut self, other: &Targets) {
        self.amount.extend_from_slice(&other.amount);
        self.mcc.extend_from_slice(&other.mcc);
        self.city.extend_from_slice(&other.city);
        self.merchant.extend_from_slice(&other.merchant);
        self.anomaly.extend_from_slice(&other.anomaly);
    }

    fn pad(&mut self, n: usize) {
        self.extend_from(&Targets::empty(n));
    }

    pub fn len(&self) -> usize {
        self.amount.len()
    }

    pub fn is_empty(&self) -> bool {
        self.amount.is_empty()
    }

    /// Drops every target at positions where `keep` is false.
    pub fn retain(&mut self, keep: impl Fn(usize) -> bool) {
        for i in 0..self.len() {
            if !keep(i) {
                self.amount[i] = None;
                self.mcc[i] = None;
                self.city[i] = None;
                self.merchant[i] = None;
                self.anomaly[i] = None;
            }
        }
    }

    pub fn count_defined(&self) -> usize {
        self.amount.iter().filter(|v| v.is_some()).count()
            + self.mcc.iter().filter(|v| v.is_some()).count()
            + self.city.iter().filter(|v| v.is_some()).count()
            + self.merchant.iter().filter(|v| v.is_some()).count()
            + self.anomaly.iter().filter(|v| v.is_some()).count()
    }
}

/// One encoded sequence: field indices `[mcc, merchant, city, state]`,
/// log1p amounts and time buckets per position, plus targets.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Example {
    pub fields: Vec<[u32; 4]>,
    pub log_amount: Vec<f32>,
    pub time_bucket: Vec<u8>,
    pub targets: Targets,
}

impl Example {
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
}

/// Borrowed view of one sequence's valid prefix.
#[derive(Debug, Clone, Copy)]
pub struct SeqRef<'a> {
    pub fields: &'a [[u32; 4]],
    pub log_amount: &'a [f32],
    pub time_bucket: &'a [u8],
    pub amount: &'a [Option<f64>],
    pub mcc: &'a [Option<u32>],
    pub city: &'a [Option<u32>],
    pub merchant: &'a [Option<u32>],
    pub anomaly: &'a [Option<bool>],
}

impl SeqRef<'_> {
    pub fn len(&self) -> usize {
        self.fields.len()
    }

    pub fn is_empty(&self) -> bool {
        self.fields.is_empty()
    }
}

/// Right-padded batch of sequences with a validity mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub lengths: Vec<usize>,
    pub width: usize,
    pub fields: Vec<[u32; 4]>,
    pub log_amount: Vec<f32>,
    pub time_bucket: Vec<u8>,
    pub mask: Vec<bool>,
    pub targets: Targets,
}

impl Batch {
    pub fn new(examples: &[Example]) -> Self {
        let width = examples.iter().map(Example::len).max().unwrap_or(0);
        Self::padded(examples, width)
    }

    /// Pads every example to `width` positions (at least the longest one).
    pub fn padded(examples: &[Example], width: usize) -> Self {
        let width = width.max(examples.iter().map(Example::len).max().unwrap_or(0));
        let mut b = Batch {
            lengths: Vec::with_capacity(examples.len()),
            width,
            fields: Vec::with_capacity(examples.len() * width),
            log_amount: Vec::with_capacity(examples.len() * width),
            time_bucket: Vec::with_capacity(examples.len() * width),
            mask: Vec::with_capacity(examples.len() * width),
            targets: Targets::default(),
        };
        for e in examples {
            let pad = width - e.len();
            b.lengths.push(e.len());
            b.fields.extend_from_slice(&e.fields);
            b.fields.extend(std::iter::repeat_n([0; 4], pad));
            b.log_amount.extend_from_slice(&e.log_amount);
            b.log_amount.extend(std::iter::repeat_n(0.0, pad));
            b.time_bucket.extend_from_slice(&e.time_bucket);
            b.time_bucket.extend(std::iter::repeat_n(0, pad));
            b.mask.extend(std::iter::repeat_n(true, e.len()));
            b.mask.extend(std::iter::repeat_n(false, pad));
            b.targets.extend_from(&e.targets);
            b.targets.pad(pad);
        }
        b
    }

    /// Number of sequences.
    pub fn len(&self) -> usize {
        self.lengths.len()
    }

    pub fn is_empty(&self) -> bool {
        self.lengths.is_empty()
    }

    pub fn seq(&self, b: usize) -> SeqRef<'_> {
        let r = b * self.width..b * self.width + self.lengths[b];
        SeqRef {
            fields: &self.fields[r.clone()],
            log_amount: &self.log_amount[r.clone()],
            time_bucket: &self.time_bucket[r.clone()],
            amount: &self.targets.amount[r.clone()],
            mcc: &self.targets.mcc[r.clone()],
            city: &self.targets.city[r.clone()],
            merchant: &self.targets.merchant[r.clone()],
            anomaly: &self.targets.anomaly[r],
        }
    }

    pub fn validate(&self, cfg: &ModelConfig) -> Result<(), ModelError> {
        let n = self.len() * self.width;
        let lens = [
            self.fields.len(),
            self.log_amount.len(),
            self.time_bucket.len(),
            self.mask.len(),
            self.targets.amount.len(),
            self.targets.mcc.len(),
            self.targets.city.len(),
            self.targets.merchant.len(),
            self.targets.anomaly.len(),
        ];
        if lens.iter().any(|l| *l != n) {
            return Err(ModelError::Input(format!("batch arrays must all hold {n} positions")));
        }
        let v = &cfg.vocab_sizes;
        let sizes = [v.mcc, v.merchant, v.city, v.state];
        for (b, &len) in self.lengths.iter().enumerate() {
            if len > self.width {
                return Err(ModelError::Input(format!("sequence {b} longer than batch width")));
            }
            if len > cfg.max_seq_len {
                return Err(ModelError::Input(format!(
                    "sequence {b} has length {len} > max_seq_len {}",
                    cfg.max_seq_len
                )));
            }
            for t in 0..self.width {
                let i = b * self.width + t;
                if self.mask[i] != (t < len) {
                    return Err(ModelError::Input(format!("mask disagrees with length at sequence {b}, position {t}")));
                }
                if t >= len {
                    continue;
                }
                for (k, (&idx, &size)) in self.fields[i].iter().zip(&sizes).enumerate() {
                    if idx as usize >= size {
                        return Err(ModelError::Input(format!(
                            "field {k} index {idx} out of range {size} at sequence {b}, position {t}"
                        )));
                    }
                }
                if self.time_bucket[i] as usize >= N_TIME_BUCKETS {
                    return Err(ModelError::Input(format!("time bucket {} out of range", self.time_bucket[i])));
                }
                if !self.log_amount[i].is_finite() {
                    return Err(ModelError::Input(format!("non-finite amount at sequence {b}, position {t}")));
                }
                let class_targets = [(self.targets.mcc[i], v.mcc), (self.targets.city[i], v.city), (self.targets.merchant[i], v.merchant)];
                for (tgt, size) in class_targets {
                    if tgt.is_some_and(|c| c as usize >= size) {
                        return Err(ModelError::Input(format!("target class out of range at sequence {b}, position {t}")));
                    }
                }
                if self.targets.amount[i].is_some_and(|a| !a.is_finite() || a < 0.0) {
                    return Err(ModelError::Input(format!("invalid amount target at sequence {b}, position {t}")));
                }
            }
        }
        Ok(())
    }
}

//! Sequential tabular transformer with five task heads and hand-written
//! reverse-mode gradients.

mod batch;
mod checkpoint;
mod forward;
mod gradcheck;
mod optim;
mod params;
mod real;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use batch::{time_bucket, Batch, Example, SeqRef, Targets};
pub use checkpoint::{Checkpoint, RngState};
pub use forward::{loss_and_grad, softmax_in_place, LossReport, SeqOutput};
pub use gradcheck::{grad_check, grad_check_tiny, tiny_batch, tiny_config, GradCheckReport};
pub use optim::{AdamW, AdamWConfig};
pub use params::{Layer, Mat, Params, Role, VocabSizes};
pub use real::{gemm, Real};

use crate::embed::EmbeddingTable;
use crate::vocab::Vocabs;

/// Log-spaced time-delta buckets; bucket 0 marks a sequence start.
pub const N_TIME_BUCKETS: usize = 16;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    Config(String),
    #[error("invalid input: {0}")]
    Input(String),
    #[error("batch has no valid targets")]
    EmptyBatch,
    #[error("non-finite {what} in task {task}")]
    Divergence { task: String, what: String },
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Task {
    Amount,
    Mcc,
    City,
    Merchant,
    Anomaly,
}

impl Task {
    pub const ALL: [Task; 5] = [Task::Amount, Task::Mcc, Task::City, Task::Merchant, Task::Anomaly];

    pub fn name(self) -> &'static str {
        match self {
            Task::Amount => "next_amount",
            Task::Mcc => "next_mcc",
            Task::City => "next_city",
            Task::Merchant => "next_merchant",
            Task::Anomaly => "anomaly",
        }
    }

    pub fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaskWeights {
    pub amount: f64,
    pub mcc: f64,
    pub city: f64,
    pub merchant: f64,
    pub anomaly: f64,
}

impl Default for TaskWeights {
    fn default() -> Self {
        Self { amount: 1.0, mcc: 1.0, city: 1.0, merchant: 1.0, anomaly: 1.0 }
    }
}

impl TaskWeights {
    pub fn only(task: Task) -> Self {
        let mut w = Self { amount: 0.0, mcc: 0.0, city: 0.0, merchant: 0.0, anomaly: 0.0 };
        *w.get_mut(task) = 1.0;
        w
    }

    pub fn get(&self, task: Task) -> f64 {
        match task {
            Task::Amount => self.amount,
            Task::Mcc => self.mcc,
            Task::City => self.city,
            Task::Merchant => self.merchant,
            Task::Anomaly => self.anomaly,
        }
    }

    pub fn get_mut(&mut self, task: Task) -> &mut f64 {
        match task {
            Task::Amount => &mut self.amount,
            Task::Mcc => &mut self.mcc,
            Task::City => &mut self.city,
            Task::Merchant => &mut self.merchant,
            Task::Anomaly => &mut self.anomaly,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let ws = Task::ALL.map(|t| self.get(t));
        if ws.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(ModelError::Config("task weights must be finite and non-negative".into()));
        }
        if ws.iter().all(|w| *w == 0.0) {
            return Err(ModelError::Config("at least one task weight must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub d_mcc: usize,
    pub d_merchant: usize,
    pub d_city: usize,
    pub d_state: usize,
    pub d_amount: usize,
    pub d_time: usize,
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub ffn_mult: usize,
    pub max_seq_len: usize,
    pub init_scale: f64,
    pub dropout: f64,
    pub vocab_sizes: VocabSizes,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            d_mcc: 32,
            d_merchant: 48,
            d_city: 32,
            d_state: 16,
            d_amount: 8,
            d_time: 8,
            d_model: 128,
            n_layers: 2,
            n_heads: 4,
            ffn_mult: 4,
            max_seq_len: 64,
            init_scale: 0.02,
            dropout: 0.0,
            vocab_sizes: VocabSizes { mcc: 2, merchant: 2, city: 2, state: 2 },
        }
    }
}

impl ModelConfig {
    pub fn with_vocabs(mut self, vocabs: &Vocabs) -> Self {
        self.vocab_sizes = VocabSizes {
            mcc: vocabs.mcc.len(),
            merchant: vocabs.merchant.len(),
            city: vocabs.city.len(),
            state: vocabs.state.len(),
        };
        self
    }

    pub fn d_field(&self, field: crate::vocab::Field) -> usize {
        use crate::vocab::Field;
        match field {
            Field::Mcc => self.d_mcc,
            Field::Merchant => self.d_merchant,
            Field::City => self.d_city,
            Field::State => self.d_state,
        }
    }

    pub fn input_width(&self) -> usize {
        self.d_mcc + self.d_merchant + self.d_city + self.d_state + self.d_amount + self.d_time
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let dims = [
            ("d_mcc", self.d_mcc),
            ("d_merchant", self.d_merchant),
            ("d_city", self.d_city),
            ("d_state", self.d_state),
            ("d_amount", self.d_amount),
            ("d_time", self.d_time),
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("ffn_mult", self.ffn_mult),
            ("max_seq_len", self.max_seq_len),
            ("vocab_sizes.mcc", self.vocab_sizes.mcc),
            ("vocab_sizes.merchant", self.vocab_sizes.merchant),
            ("vocab_sizes.city", self.vocab_sizes.city),
            ("vocab_sizes.state", self.vocab_sizes.state),
        ];
        for (name, v) in dims {
            if v == 0 {
                return Err(ModelError::Config(format!("{name} must be >= 1")));
            }
        }
        if self.d_model % self.n_heads != 0 {
            return Err(ModelError::Config(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        if !(self.init_scale.is_finite() && self.init_scale > 0.0) {
            return Err(ModelError::Config("init_scale must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(ModelError::Config("dropout must lie in [0, 1)".into()));
        }
        Ok(())
    }
}

/// Model configuration together with its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct SeqTabModel<T> {
    pub config: ModelConfig,
    pub params: Params<T>,
}

impl<T: Real> SeqTabModel<T> {
    /// Seeded model. Fields with a table copy its rows; everything else is
    /// drawn identically whether or not tables are given.
    pub fn init(config: ModelConfig, tables: &[&EmbeddingTable], vocabs: Option<&Vocabs>, seed: u64) -> Result<Self, ModelError> {
        if let Some(vocabs) = vocabs {
            for t in tables {
                if &t.vocab != vocabs.get(t.field) {
                    return Err(ModelError::Config(format!("table vocabulary for {} differs from the dataset's", t.field)));
                }
            }
        }
        let params = Params::init(&config, tables, seed)?;
        Ok(Self { config, params })
    }

    pub fn cast<U: Real>(&self) -> SeqTabModel<U> {
        SeqTabModel { config: self.config.clone(), params: self.params.cast() }
    }
}

//! Transaction data model, JSONL ingest, synthetic worlds and temporal splits.

mod io;
mod split;
mod world;

pub use io::{read_log, read_log_from, write_log, write_log_to};
pub use split::{split_by_time, SplitBounds, SplitSpec, TimeSplit, MONTH_SECS};
pub use world::{
    generate_log, generate_world, LogConfig, SyntheticWorld, WorldCity, WorldCluster,
    WorldConfig, WorldMcc, WorldMerchant, LOG_EPOCH,
};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum TxnError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid transaction: {0}")]
    InvalidRecord(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("log spans {available} months but the split needs {required}")]
    Span { available: u32, required: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// One payment event as it appears in a raw log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Transaction {
    pub user_id: String,
    /// Epoch seconds, UTC.
    pub ts: i64,
    pub amount: f64,
    pub merchant_raw: String,
    pub mcc: String,
    pub city: String,
    #[serde(rename = "state")]
    pub state_or_region: String,
    pub country: String,
    #[serde(with = "bool_as_int")]
    pub anomaly: bool,
}

impl Transaction {
    pub fn validate(&self) -> Result<(), TxnError> {
        if !self.amount.is_finite() || self.amount < 0.0 {
            return Err(TxnError::InvalidRecord(format!(
                "amount {} must be finite and non-negative",
                self.amount
            )));
        }
        if self.ts <= 0 {
            return Err(TxnError::InvalidRecord(format!("ts {} must be positive", self.ts)));
        }
        Ok(())
    }
}

mod bool_as_int {
    use serde::{de::Error, Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &bool, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u8(u8::from(*v))
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<bool, D::Error> {
        match u8::deserialize(d)? {
            0 => Ok(false),
            1 => Ok(true),
            other => Err(D::Error::custom(format!("anomaly must be 0 or 1, got {other}"))),
        }
    }
}

/// An immutable, time-indexed collection of transactions.
///
/// Transactions keep their input order; the per-user index lists positions
/// sorted by timestamp (ties keep input order).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TransactionLog {
    transactions: Vec<Transaction>,
    users: IndexMap<String, Vec<usize>>,
}

impl TransactionLog {
    pub fn new(transactions: Vec<Transaction>) -> Result<Self, TxnError> {
        for t in &transactions {
            t.validate()?;
        }
        let mut users: IndexMap<String, Vec<usize>> = IndexMap::new();
        for (i, t) in transactions.iter().enumerate() {
            users.entry(t.user_id.clone()).or_default().push(i);
        }
        for positions in users.values_mut() {
            positions.sort_by_key(|&i| (transactions[i].ts, i));
        }
        Ok(Self { transactions, users })
    }

    pub fn transactions(&self) -> &[Transaction] {
        &self.transactions
    }

    pub fn len(&self) -> usize {
        self.transactions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transactions.is_empty()
    }

    pub fn n_users(&self) -> usize {
        self.users.len()
    }

    /// Users in order of first appearance.
    pub fn user_ids(&self) -> impl Iterator<Item = &str> {
        self.users.keys().map(String::as_str)
    }

    /// Time-sorted positions of one user's transactions.
    pub fn user_positions(&self, user_id: &str) -> Option<&[usize]> {
        self.users.get(user_id).map(Vec::as_slice)
    }

    /// Iterates `(user_id, time-sorted transactions)`.
    pub fn sequences(&self) -> impl Iterator<Item = (&str, Vec<&Transaction>)> {
        self.users.iter().map(move |(u, pos)| {
            (u.as_str(), pos.iter().map(|&i| &self.transactions[i]).collect())
        })
    }

    pub fn min_ts(&self) -> Option<i64> {
        self.transactions.iter().map(|t| t.ts).min()
    }

    pub fn max_ts(&self) -> Option<i64> {
        self.transactions.iter().map(|t| t.ts).max()
    }

    /// Keeps transactions matching `keep`, preserving order.
    pub fn filter(&self, mut keep: impl FnMut(&Transaction) -> bool) -> TransactionLog {
        let kept = self.transactions.iter().filter(|t| keep(t)).cloned().collect();
        // Already validated.
        TransactionLog::new(kept).expect("subset of a valid log")
    }

    pub fn into_transactions(self) -> Vec<Transaction> {
        self.transactions
    }
}

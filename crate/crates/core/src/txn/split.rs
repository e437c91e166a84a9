use serde::{Deserialize, Serialize};

use super::{TransactionLog, TxnError};

/// Length of one calendar month, approximated as a 30-day window.
pub const MONTH_SECS: i64 = 30 * 86_400;

/// Month counts for the train / validation / test windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_months: u32,
    pub val_months: u32,
    pub test_months: u32,
    /// Start of month 1. Defaults to the earliest timestamp in the log.
    #[serde(default)]
    pub origin: Option<i64>,
}

impl SplitSpec {
    pub fn new(train_months: u32, val_months: u32, test_months: u32) -> Self {
        Self { train_months, val_months, test_months, origin: None }
    }

    pub fn with_origin(mut self, origin: i64) -> Self {
        self.origin = Some(origin);
        self
    }

    pub fn total_months(&self) -> u32 {
        self.train_months + self.val_months + self.test_months
    }

    fn validate(&self) -> Result<(), TxnError> {
        if self.train_months == 0 || self.val_months == 0 || self.test_months == 0 {
            return Err(TxnError::Config(format!("split months must all be >= 1, got {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimeSplit {
    pub train: TransactionLog,
    pub val: TransactionLog,
    pub test: TransactionLog,
}

/// `[origin, val_start, test_start, end)` boundaries of the split windows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitBounds {
    pub origin: i64,
    pub val_start: i64,
    pub test_start: i64,
    pub end: i64,
}

impl SplitSpec {
    /// Resolves the window boundaries for `log`, checking it spans enough months.
    pub fn bounds(&self, log: &TransactionLog) -> Result<SplitBounds, TxnError> {
        self.validate()?;
        let (Some(min_ts), Some(max_ts)) = (log.min_ts(), log.max_ts()) else {
            return Err(TxnError::Span { available: 0, required: self.total_months() });
        };
        let origin = self.origin.unwrap_or(min_ts);
        let available = if max_ts < origin { 0 } else { ((max_ts - origin) / MONTH_SECS + 1) as u32 };
        if available < self.total_months() {
            return Err(TxnError::Span { available, required: self.total_months() });
        }
        let val_start = origin + i64::from(self.train_months) * MONTH_SECS;
        let test_start = val_start + i64::from(self.val_months) * MONTH_SECS;
        let end = test_start + i64::from(self.test_months) * MONTH_SECS;
        Ok(SplitBounds { origin, val_start, test_start, end })
    }
}

/// Splits by transaction timestamp into consecutive month windows. Users may
/// appear in several splits; rows past the covered window are dropped.
pub fn split_by_time(log: &TransactionLog, spec: &SplitSpec) -> Result<TimeSplit, TxnError> {
    let b = spec.bounds(log)?;
    Ok(TimeSplit {
        train: log.filter(|t| t.ts >= b.origin && t.ts < b.val_start),
        val: log.filter(|t| t.ts >= b.val_start && t.ts < b.test_start),
        test: log.filter(|t| t.ts >= b.test_start && t.ts < b.end),
    })
}

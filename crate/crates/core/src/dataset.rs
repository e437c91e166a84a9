//! From transaction logs to model inputs: cleaned values, the entity
//! registry behind vocabularies and prompts, and windowed examples.
//!
//! Vocabularies come from the registry of every categorical value in the
//! log, so values first seen after training still own an embedding row.
//! Targets are next-step values, except anomaly which labels the current
//! transaction. Evaluation windows keep earlier history as context and
//! score only targets whose event falls inside the window.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{
    clean_field, enrich_city, enrich_location, enrich_mcc, enrich_merchant, CleanKind, EnrichedLocation, EnrichedMcc,
    EnrichedMerchant, KnowledgeBase, NULL_TOKEN,
};
use crate::model::{time_bucket, Example, Targets};
use crate::promptgen::{fingerprint, fingerprint_hex, render_location, render_mcc, render_merchant, Prompt, PromptKind};
use crate::txn::{SplitBounds, SplitSpec, Transaction, TransactionLog, TxnError};
use crate::vocab::{Field, Vocab, Vocabs};

#[derive(Debug, Error)]
pub enum DataError {
    #[error(transparent)]
    Txn(#[from] TxnError),
    #[error("{path} line {line}: {message}")]
    Parse { path: String, line: usize, message: String },
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// A transaction with every categorical field cleaned.
#[derive(Debug, Clone, PartialEq)]
pub struct CleanTxn {
    pub user_id: String,
    pub ts: i64,
    pub amount: f64,
    pub mcc: String,
    pub merchant: String,
    pub city: String,
    pub state: String,
    pub country: String,
    pub anomaly: bool,
}

impl CleanTxn {
    pub fn value(&self, field: Field) -> &str {
        match field {
            Field::Mcc => &self.mcc,
            Field::Merchant => &self.merchant,
            Field::City => &self.city,
            Field::State => &self.state,
        }
    }
}

pub fn clean_transaction(t: &Transaction) -> CleanTxn {
    CleanTxn {
        user_id: t.user_id.clone(),
        ts: t.ts,
        amount: t.amount,
        mcc: clean_field(&t.mcc, CleanKind::Mcc).text,
        merchant: clean_field(&t.merchant_raw, CleanKind::Merchant).text,
        city: clean_field(&t.city, CleanKind::City).text,
        state: clean_field(&t.state_or_region, CleanKind::State).text,
        country: clean_field(&t.country, CleanKind::Country).text,
        anomaly: t.anomaly,
    }
}

#[derive(Default)]
struct Tally(BTreeMap<String, usize>);

impl Tally {
    fn add(&mut self, v: &str) {
        if v != NULL_TOKEN {
            *self.0.entry(v.to_string()).or_default() += 1;
        }
    }

    /// Most frequent value, ties to the lexicographically smallest.
    fn top(&self) -> String {
        let mut best: Option<(&String, usize)> = None;
        for (v, n) in &self.0 {
            if best.is_none_or(|(_, b)| *n > b) {
                best = Some((v, *n));
            }
        }
        best.map_or_else(|| NULL_TOKEN.to_string(), |(v, _)| v.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MerchantContext {
    pub mcc: String,
    pub city: String,
    pub state: String,
    pub country: String,
}

/// Every categorical value in a log with its majority context: a
/// merchant's code and location, a city's state and country, a state's
/// country. Labels are never consulted.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Registry {
    pub mccs: BTreeSet<String>,
    pub merchants: BTreeMap<String, MerchantContext>,
    /// city -> (state, country)
    pub cities: BTreeMap<String, (String, String)>,
    /// state -> country
    pub states: BTreeMap<String, String>,
}

impl Registry {
    pub fn from_log(log: &TransactionLog) -> Self {
        let mut merchants: BTreeMap<String, [Tally; 4]> = BTreeMap::new();
        let mut cities: BTreeMap<String, [Tally; 2]> = BTreeMap::new();
        let mut states: BTreeMap<String, Tally> = BTreeMap::new();
        let mut mccs = BTreeSet::new();
        for t in log.transactions() {
            let c = clean_transaction(t);
            if c.mcc != NULL_TOKEN {
                mccs.insert(c.mcc.clone());
            }
            if c.merchant != NULL_TOKEN {
                let m = merchants.entry(c.merchant.clone()).or_default();
                m[0].add(&c.mcc);
                m[1].add(&c.city);
                m[2].add(&c.state);
                m[3].add(&c.country);
            }
            if c.city != NULL_TOKEN {
                let e = cities.entry(c.city.clone()).or_default();
                e[0].add(&c.state);
                e[1].add(&c.country);
            }
            if c.state != NULL_TOKEN {
                states.entry(c.state.clone()).or_default().add(&c.country);
            }
        }
        Self {
            mccs,
            merchants: merchants
                .into_iter()
                .map(|(k, t)| {
                    let ctx = MerchantContext { mcc: t[0].top(), city: t[1].top(), state: t[2].top(), country: t[3].top() };
                    (k, ctx)
                })
                .collect(),
            cities: cities.into_iter().map(|(k, t)| (k, (t[0].top(), t[1].top()))).collect(),
            states: states.into_iter().map(|(k, t)| (k, t.top())).collect(),
        }
    }

    pub fn vocabs(&self) -> Vocabs {
        Vocabs {
            mcc: Vocab::from_values(self.mccs.iter()),
            merchant: Vocab::from_values(self.merchants.keys()),
            city: Vocab::from_values(self.cities.keys()),
            state: Vocab::from_values(self.states.keys()),
        }
    }

    /// Enriches one registry value. Values unknown to the registry enrich
    /// with null context.
    pub fn enrich(&self, field: Field, value: &str, kb: &KnowledgeBase) -> EnrichedEntity {
        let enriched = match field {
            Field::Mcc => Enriched::Mcc(enrich_mcc(value, kb)),
            Field::Merchant => {
                let ctx = self.merchants.get(value).cloned().unwrap_or_else(|| MerchantContext {
                    mcc: NULL_TOKEN.into(),
                    city: NULL_TOKEN.into(),
                    state: NULL_TOKEN.into(),
                    country: NULL_TOKEN.into(),
                });
                let name = clean_field(value, CleanKind::Merchant);
                Enriched::Merchant(enrich_merchant(&name, &ctx.mcc, &ctx.city, &ctx.state, &ctx.country, kb))
            }
            Field::City => {
                let (state, country) =
                    self.cities.get(value).cloned().unwrap_or_else(|| (NULL_TOKEN.into(), NULL_TOKEN.into()));
                Enriched::Location(enrich_city(value, &state, &country, kb))
            }
            Field::State => {
                let country = self.states.get(value).map_or(NULL_TOKEN, String::as_str);
                Enriched::Location(enrich_location(country, value, kb))
            }
        };
        EnrichedEntity { field, value: value.to_string(), enriched }
    }

    /// Enriches every vocabulary value, fields in canonical order.
    pub fn enrich_all(&self, kb: &KnowledgeBase) -> Vec<EnrichedEntity> {
        let vocabs = self.vocabs();
        Field::ALL
            .into_iter()
            .flat_map(|f| vocabs.get(f).regular().map(|(_, v)| self.enrich(f, v, kb)).collect::<Vec<_>>())
            .collect()
    }

    /// Keyed prompts for every regular value of `field`, in vocabulary order.
    pub fn field_prompts(&self, field: Field, kb: &KnowledgeBase, wrap: bool) -> Vec<(String, Prompt)> {
        self.vocabs()
            .get(field)
            .regular()
            .map(|(_, v)| {
                let e = self.enrich(field, v, kb);
                (e.key(), e.prompt(wrap))
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Enriched {
    Mcc(EnrichedMcc),
    Merchant(EnrichedMerchant),
    Location(EnrichedLocation),
}

/// One line of an enrichment file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnrichedEntity {
    pub field: Field,
    pub value: String,
    pub enriched: Enriched,
}

impl EnrichedEntity {
    pub fn key(&self) -> String {
        self.field.key(&self.value)
    }

    pub fn prompt(&self, wrap: bool) -> Prompt {
        let p = match &self.enriched {
            Enriched::Mcc(e) => render_mcc(e),
            Enriched::Merchant(e) => render_merchant(e),
            Enriched::Location(e) => render_location(e),
        };
        p.with_wrap(wrap).expect("rendered prompts are never empty")
    }
}

/// One line of a prompt file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptRecord {
    pub key: String,
    pub prompt: String,
    pub fingerprint: String,
}

const WRAP_PREFIX: &str = "This sentence: '";
const WRAP_SUFFIX: &str = "' means in one word:";

impl PromptRecord {
    pub fn new(key: &str, p: &Prompt) -> Self {
        Self { key: key.to_string(), prompt: p.text.clone(), fingerprint: fingerprint_hex(p.fingerprint) }
    }

    /// Rebuilds the keyed prompt, checking the key's field and fingerprint.
    pub fn to_prompt(&self) -> Result<(Field, String, Prompt), DataError> {
        let field = self
            .key
            .split_once(':')
            .and_then(|(f, _)| Field::parse(f))
            .ok_or_else(|| DataError::Invalid(format!("prompt key {:?} has no known field prefix", self.key)))?;
        let fp = fingerprint(&self.prompt);
        if fingerprint_hex(fp) != self.fingerprint {
            return Err(DataError::Invalid(format!(
                "fingerprint {} does not match prompt text for {}",
                self.fingerprint, self.key
            )));
        }
        let mut p = Prompt::new(self.prompt.clone(), field.prompt_kind());
        p.one_word_wrapped = self.prompt.starts_with(WRAP_PREFIX) && self.prompt.ends_with(WRAP_SUFFIX);
        Ok((field, self.key.clone(), p))
    }
}

/// Which prompt family a field's table is built from.
pub fn fields_of_kind(kind: PromptKind) -> Vec<Field> {
    Field::ALL.into_iter().filter(|f| f.prompt_kind() == kind).collect()
}

pub fn read_jsonl<T: DeserializeOwned>(path: impl AsRef<Path>) -> Result<Vec<T>, DataError> {
    let path = path.as_ref();
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|e| DataError::Parse {
            path: path.display().to_string(),
            line: i + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn write_jsonl<T: Serialize>(path: impl AsRef<Path>, items: &[T]) -> Result<(), DataError> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    for item in items {
        serde_json::to_writer(&mut w, item).map_err(std::io::Error::from)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct Encoded {
    fields: [u32; 4],
    ts: i64,
    amount: f64,
    anomaly: bool,
}

/// An encoded log with its registry, vocabularies and split windows.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub registry: Registry,
    pub vocabs: Vocabs,
    pub bounds: SplitBounds,
    /// Time-sorted encoded sequences, users in lexicographic order.
    users: Vec<Vec<Encoded>>,
}

fn target_index(i: u32) -> Option<u32> {
    (i >= 2).then_some(i)
}

impl Dataset {
    pub fn new(log: &TransactionLog, spec: &SplitSpec) -> Result<Self, DataError> {
        let registry = Registry::from_log(log);
        let vocabs = registry.vocabs();
        Self::with_vocabs(log, spec, registry, vocabs)
    }

    /// Encodes `log` against existing vocabularies; unseen values map to OOV.
    pub fn with_vocabs(
        log: &TransactionLog,
        spec: &SplitSpec,
        registry: Registry,
        vocabs: Vocabs,
    ) -> Result<Self, DataError> {
        let bounds = spec.bounds(log)?;
        let mut users: Vec<(&str, Vec<Encoded>)> = log
            .sequences()
            .map(|(u, seq)| {
                let enc = seq
                    .into_iter()
                    .map(|t| {
                        let c = clean_transaction(t);
                        let fields = Field::ALL.map(|f| vocabs.get(f).index_of(c.value(f)));
                        Encoded { fields, ts: t.ts, amount: t.amount, anomaly: t.anomaly }
                    })
                    .collect();
                (u, enc)
            })
            .collect();
        users.sort_by(|a, b| a.0.cmp(b.0));
        Ok(Self { registry, vocabs, bounds, users: users.into_iter().map(|(_, e)| e).collect() })
    }

    pub fn window(&self, split: Split) -> (i64, i64) {
        let b = &self.bounds;
        match split {
            Split::Train => (b.origin, b.val_start),
            Split::Val => (b.val_start, b.test_start),
            Split::Test => (b.test_start, b.end),
        }
    }

    /// Number of transactions inside the split window.
    pub fn n_transactions(&self, split: Split) -> usize {
        let (start, end) = self.window(split);
        self.users.iter().flatten().filter(|e| e.ts >= start && e.ts < end).count()
    }

    /// Merchant indices seen inside the split window.
    pub fn merchants_in(&self, split: Split) -> BTreeSet<u32> {
        let (start, end) = self.window(split);
        self.users.iter().flatten().filter(|e| e.ts >= start && e.ts < end).map(|e| e.fields[1]).collect()
    }

    /// Regular merchants present in test but absent from train.
    pub fn cold_merchants(&self) -> BTreeSet<u32> {
        let train = self.merchants_in(Split::Train);
        self.merchants_in(Split::Test).into_iter().filter(|m| *m >= 2 && !train.contains(m)).collect()
    }

    /// Chunks of at most `max_len` positions whose targets fall in the split
    /// window. Context before the window is kept; chunks overlap by half
    /// their length and each position is scored in exactly one chunk.
    pub fn examples(&self, split: Split, max_len: usize) -> Vec<Example> {
        self.examples_with_stride(split, max_len, (max_len / 2).max(1))
    }

    /// As [`Dataset::examples`] with chunk starts `stride` apart.
    pub fn examples_with_stride(&self, split: Split, max_len: usize, stride: usize) -> Vec<Example> {
        assert!(max_len >= 1 && (1..=max_len).contains(&stride), "need 1 <= stride <= max_len");
        let (start, end) = self.window(split);
        let inside = |ts: i64| ts >= start && ts < end;
        let mut out = Vec::new();
        for seq in &self.users {
            let n = seq.partition_point(|e| e.ts < end);
            let seq = &seq[..n];
            let (mut b, mut covered) = (0usize, 0usize);
            while covered < n {
                let e = (b + max_len).min(n);
                let mut targets = Targets::empty(e - b);
                for t in covered..e {
                    let k = t - b;
                    if inside(seq[t].ts) {
                        targets.anomaly[k] = Some(seq[t].anomaly);
                    }
                    if let Some(next) = seq.get(t + 1).filter(|x| inside(x.ts)) {
                        targets.amount[k] = Some(next.amount);
                        targets.mcc[k] = target_index(next.fields[0]);
                        targets.merchant[k] = target_index(next.fields[1]);
                        targets.city[k] = target_index(next.fields[2]);
                    }
                }
                if targets.count_defined() > 0 {
                    out.push(Example {
                        fields: seq[b..e].iter().map(|x| x.fields).collect(),
                        log_amount: seq[b..e].iter().map(|x| x.amount.ln_1p() as f32).collect(),
                        time_bucket: (b..e).map(|i| time_bucket(i.checked_sub(1).map(|p| seq[i].ts - seq[p].ts))).collect(),
                        targets,
                    });
                }
                covered = e;
                b += stride;
            }
        }
        out
    }
}

/// Keeps targets only at positions whose current merchant is in
/// `merchants`, dropping examples left without targets.
pub fn restrict_to_merchants(examples: &[Example], merchants: &BTreeSet<u32>) -> Vec<Example> {
    examples
        .iter()
        .filter_map(|ex| {
            let mut ex = ex.clone();
            let keep: Vec<bool> = ex.fields.iter().map(|f| merchants.contains(&f[1])).collect();
            ex.targets.retain(|i| keep[i]);
            (ex.targets.count_defined() > 0).then_some(ex)
        })
        .collect()
}

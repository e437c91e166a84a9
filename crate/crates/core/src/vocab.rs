//! Categorical fields and their vocabularies.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::fusion::{CleanKind, NULL_TOKEN};
use crate::promptgen::PromptKind;

pub const OOV_TOKEN: &str = "[OOV]";
pub const NULL_INDEX: u32 = 0;
pub const OOV_INDEX: u32 = 1;

/// Categorical transaction fields that own an embedding table.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Field {
    Mcc,
    Merchant,
    City,
    State,
}

impl Field {
    pub const ALL: [Field; 4] = [Field::Mcc, Field::Merchant, Field::City, Field::State];

    pub fn name(self) -> &'static str {
        match self {
            Field::Mcc => "mcc",
            Field::Merchant => "merchant",
            Field::City => "city",
            Field::State => "state",
        }
    }

    pub fn clean_kind(self) -> CleanKind {
        match self {
            Field::Mcc => CleanKind::Mcc,
            Field::Merchant => CleanKind::Merchant,
            Field::City => CleanKind::City,
            Field::State => CleanKind::State,
        }
    }

    pub fn prompt_kind(self) -> PromptKind {
        match self {
            Field::Mcc => PromptKind::Mcc,
            Field::Merchant => PromptKind::Merchant,
            Field::City | Field::State => PromptKind::Location,
        }
    }

    /// Vocabulary key used by caches and prompt files, e.g. `mcc:5814`.
    pub fn key(self, value: &str) -> String {
        format!("{}:{value}", self.name())
    }

    pub fn parse(s: &str) -> Option<Field> {
        Field::ALL.into_iter().find(|f| f.name() == s)
    }
}

impl std::fmt::Display for Field {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Ordered values of one field. Index 0 is `[NULL]`, index 1 is `[OOV]`,
/// the rest are sorted.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    values: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub fn from_values<I, S>(values: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let rest: BTreeSet<String> = values
            .into_iter()
            .map(|s| s.as_ref().to_string())
            .filter(|s| s != NULL_TOKEN && s != OOV_TOKEN)
            .collect();
        let mut all = vec![NULL_TOKEN.to_string(), OOV_TOKEN.to_string()];
        all.extend(rest);
        Self::from_ordered(all)
    }

    fn from_ordered(values: Vec<String>) -> Self {
        let index = values.iter().enumerate().map(|(i, v)| (v.clone(), i as u32)).collect();
        Self { values, index }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn values(&self) -> &[String] {
        &self.values
    }

    /// Non-special values with their indices.
    pub fn regular(&self) -> impl Iterator<Item = (u32, &str)> {
        self.values.iter().enumerate().skip(2).map(|(i, v)| (i as u32, v.as_str()))
    }

    pub fn index_of(&self, value: &str) -> u32 {
        if value == NULL_TOKEN {
            return NULL_INDEX;
        }
        self.index.get(value).copied().unwrap_or(OOV_INDEX)
    }

    pub fn contains(&self, value: &str) -> bool {
        self.index.contains_key(value)
    }

    pub fn value(&self, index: u32) -> Option<&str> {
        self.values.get(index as usize).map(String::as_str)
    }
}

impl Serialize for Vocab {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.values.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let values = Vec::<String>::deserialize(d)?;
        if values.len() < 2 || values[0] != NULL_TOKEN || values[1] != OOV_TOKEN {
            return Err(serde::de::Error::custom("vocabulary must start with [NULL], [OOV]"));
        }
        Ok(Self::from_ordered(values))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabs {
    pub mcc: Vocab,
    pub merchant: Vocab,
    pub city: Vocab,
    pub state: Vocab,
}

impl Vocabs {
    pub fn get(&self, field: Field) -> &Vocab {
        match field {
            Field::Mcc => &self.mcc,
            Field::Merchant => &self.merchant,
            Field::City => &self.city,
            Field::State => &self.state,
        }
    }
}

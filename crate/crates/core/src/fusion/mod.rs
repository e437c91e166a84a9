//! Field cleaning and multi-source enrichment of MCC, merchant and location
//! values.

mod country;

pub use country::country_short;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Shared placeholder for missing or information-free field values.
pub const NULL_TOKEN: &str = "[NULL]";

/// Number of similar codes returned by the Jaccard fallback.
pub const SIMILAR_FALLBACK_K: usize = 3;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("knowledge base {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("knowledge base parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid knowledge base: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CleanKind {
    Merchant,
    Mcc,
    City,
    State,
    Country,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CleanedValue {
    pub text: String,
    pub was_null_replaced: bool,
}

impl CleanedValue {
    pub fn null() -> Self {
        Self { text: NULL_TOKEN.to_string(), was_null_replaced: true }
    }

    pub fn is_null(&self) -> bool {
        self.text == NULL_TOKEN
    }

    pub fn as_str(&self) -> &str {
        &self.text
    }
}

/// Normalizes a raw categorical value. Total: any input yields either a
/// normalized string or the null token.
pub fn clean_field(raw: &str, kind: CleanKind) -> CleanedValue {
    let spaced: String = raw
        .chars()
        .filter_map(|c| {
            if c.is_whitespace() {
                Some(' ')
            } else if c.is_control() {
                None
            } else {
                Some(c)
            }
        })
        .collect();
    let text = spaced.split(' ').filter(|s| !s.is_empty()).collect::<Vec<_>>().join(" ");
    let keep = match kind {
        CleanKind::Mcc => text.len() == 4 && text.bytes().all(|b| b.is_ascii_digit()),
        _ => text.chars().filter(|c| c.is_alphanumeric()).count() >= 2,
    };
    if keep {
        CleanedValue { text, was_null_replaced: false }
    } else {
        CleanedValue::null()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MccEntry {
    pub title: String,
    /// Compact title used when this code is listed as a similar category.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub short_title: Option<String>,
    pub description: String,
    #[serde(default)]
    pub included_categories: Vec<String>,
    /// Curated similar codes; `None` triggers the Jaccard fallback.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub similar_codes: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub related_merchants: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LocationEntry {
    pub country: String,
    pub region: String,
    #[serde(default)]
    pub economic_context: Option<String>,
    #[serde(default)]
    pub demographics: Option<String>,
    #[serde(default)]
    pub industries: Option<String>,
}

/// Curated descriptions for MCC codes, regions and cities.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KnowledgeBase {
    pub mcc: BTreeMap<String, MccEntry>,
    #[serde(default)]
    pub locations: Vec<LocationEntry>,
    /// City name to region.
    #[serde(default)]
    pub cities: BTreeMap<String, String>,
}

const FIXTURE_KB: &str = include_str!("../../data/kb_fixture.json");

impl KnowledgeBase {
    /// The bundled ISO 18245-derived subset.
    pub fn fixture() -> Self {
        Self::from_json(FIXTURE_KB).expect("bundled knowledge base is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, KbError> {
        let kb: KnowledgeBase = serde_json::from_str(text)?;
        kb.validate()?;
        Ok(kb)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, KbError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| KbError::Io { path: path.display().to_string(), source })?;
        Self::from_json(&text)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("knowledge base serializes")
    }

    pub fn validate(&self) -> Result<(), KbError> {
        for (code, e) in &self.mcc {
            if clean_field(code, CleanKind::Mcc).is_null() {
                return Err(KbError::Invalid(format!("mcc key {code:?} is not a 4-digit code")));
            }
            if e.title.trim().is_empty() || e.description.trim().is_empty() {
                return Err(KbError::Invalid(format!("mcc {code} has an empty title or description")));
            }
            for s in e.similar_codes.iter().flatten() {
                if !self.mcc.contains_key(s) {
                    return Err(KbError::Invalid(format!("mcc {code} lists unknown similar code {s}")));
                }
            }
        }
        for l in &self.locations {
            if l.country.trim().is_empty() || l.region.trim().is_empty() {
                return Err(KbError::Invalid("location entry with empty country or region".into()));
            }
        }
        Ok(())
    }

    fn location(&self, country: &str, region: &str) -> Option<&LocationEntry> {
        let c = country_short(country);
        let r = region.trim().to_lowercase();
        self.locations
            .iter()
            .find(|l| country_short(&l.country) == c && l.region.trim().to_lowercase() == r)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichedMcc {
    pub code: String,
    pub title: Option<String>,
    pub description: Option<String>,
    #[serde(default)]
    pub included_categories: Vec<String>,
    /// `(code, display title)` pairs.
    #[serde(default)]
    pub similar: Vec<(String, String)>,
    #[serde(default)]
    pub related_merchants: Vec<String>,
}

impl EnrichedMcc {
    fn unknown(code: &str) -> Self {
        Self {
            code: code.to_string(),
            title: None,
            description: None,
            included_categories: Vec::new(),
            similar: Vec::new(),
            related_merchants: Vec::new(),
        }
    }

    pub fn is_known(&self) -> bool {
        self.description.is_some()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichedMerchant {
    pub name: String,
    pub city: Option<String>,
    pub state: Option<String>,
    pub country: Option<String>,
    pub mcc: EnrichedMcc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnrichedLocation {
    pub country: String,
    pub region: String,
    /// Set for city-level entities.
    #[serde(default)]
    pub city: Option<String>,
    pub economic_context: Option<String>,
    pub demographics: Option<String>,
    pub industries: Option<String>,
}

fn non_null(s: &str) -> Option<String> {
    if s == NULL_TOKEN || s.trim().is_empty() {
        None
    } else {
        Some(s.to_string())
    }
}

fn description_tokens(text: &str) -> BTreeSet<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|t| !t.is_empty())
        .map(str::to_lowercase)
        .collect()
}

fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let inter = a.intersection(b).count();
    let union = a.len() + b.len() - inter;
    if union == 0 {
        0.0
    } else {
        inter as f64 / union as f64
    }
}

fn display_title(e: &MccEntry) -> String {
    e.short_title.clone().unwrap_or_else(|| e.title.clone())
}

/// Top-k codes by description-token Jaccard similarity, descending, ties
/// broken by ascending code. Codes with no overlap are never listed.
pub fn similar_by_jaccard(code: &str, kb: &KnowledgeBase, k: usize) -> Vec<String> {
    let Some(entry) = kb.mcc.get(code) else { return Vec::new() };
    let own = description_tokens(&entry.description);
    let mut scored: Vec<(f64, &String)> = kb
        .mcc
        .iter()
        .filter(|(c, _)| c.as_str() != code)
        .map(|(c, e)| (jaccard(&own, &description_tokens(&e.description)), c))
        .filter(|(s, _)| *s > 0.0)
        .collect();
    scored.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1)));
    scored.into_iter().take(k).map(|(_, c)| c.clone()).collect()
}

pub fn enrich_mcc(code: &str, kb: &KnowledgeBase) -> EnrichedMcc {
    let Some(entry) = kb.mcc.get(code) else {
        return EnrichedMcc::unknown(code);
    };
    let similar_codes = match &entry.similar_codes {
        Some(list) if !list.is_empty() => list.clone(),
        _ => similar_by_jaccard(code, kb, SIMILAR_FALLBACK_K),
    };
    let similar = similar_codes
        .iter()
        .filter_map(|c| kb.mcc.get(c).map(|e| (c.clone(), display_title(e))))
        .collect();
    EnrichedMcc {
        code: code.to_string(),
        title: Some(entry.title.clone()),
        description: Some(entry.description.clone()),
        included_categories: entry.included_categories.clone(),
        similar,
        related_merchants: entry.related_merchants.clone(),
    }
}

pub fn enrich_merchant(
    name: &CleanedValue,
    mcc: &str,
    city: &str,
    state: &str,
    country: &str,
    kb: &KnowledgeBase,
) -> EnrichedMerchant {
    EnrichedMerchant {
        name: name.text.clone(),
        city: non_null(city),
        state: non_null(state),
        country: non_null(country),
        mcc: enrich_mcc(mcc, kb),
    }
}

pub fn enrich_location(country: &str, region: &str, kb: &KnowledgeBase) -> EnrichedLocation {
    let entry = kb.location(country, region);
    EnrichedLocation {
        country: country.to_string(),
        region: region.to_string(),
        city: None,
        economic_context: entry.and_then(|e| e.economic_context.clone()),
        demographics: entry.and_then(|e| e.demographics.clone()),
        industries: entry.and_then(|e| e.industries.clone()),
    }
}

/// City-level location. A null region is resolved through the KB's city
/// table when possible.
pub fn enrich_city(city: &str, region: &str, country: &str, kb: &KnowledgeBase) -> EnrichedLocation {
    let region = if region == NULL_TOKEN {
        kb.cities.get(city).map(String::as_str).unwrap_or(NULL_TOKEN)
    } else {
        region
    };
    EnrichedLocation { city: non_null(city), ..enrich_location(country, region, kb) }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn cleans_listing_merchant() {
        let v = clean_field("  365  MARKET  888 432-3299 ", CleanKind::Merchant);
        assert_eq!(v.text, "365 MARKET 888 432-3299");
        assert!(!v.was_null_replaced);
    }

    #[test]
    fn empty_and_punctuation_become_null() {
        let v = clean_field("", CleanKind::City);
        assert_eq!(v.text, NULL_TOKEN);
        assert!(v.was_null_replaced);
        assert!(clean_field("##--##", CleanKind::Merchant).is_null());
        assert!(!clean_field("BP", CleanKind::Merchant).is_null());
        assert!(clean_field("B.", CleanKind::Merchant).is_null());
    }

    #[test]
    fn mcc_requires_four_digits() {
        assert_eq!(clean_field(" 5814 ", CleanKind::Mcc).text, "5814");
        assert!(clean_field("581", CleanKind::Mcc).is_null());
        assert!(clean_field("58 14", CleanKind::Mcc).is_null());
        assert!(clean_field("N/A", CleanKind::Mcc).is_null());
        assert!(clean_field("５８１４", CleanKind::Mcc).is_null());
    }

    #[test]
    fn control_characters_stripped() {
        assert_eq!(clean_field("A\u{0}B\tC\nD", CleanKind::City).text, "AB C D");
    }

    proptest! {
        #[test]
        fn clean_is_idempotent(raw in "\\PC{0,24}|[ \\t#a-z0-9\u{1}-]{0,16}", k in 0usize..5) {
            let kind = [CleanKind::Merchant, CleanKind::Mcc, CleanKind::City, CleanKind::State, CleanKind::Country][k];
            let once = clean_field(&raw, kind);
            let twice = clean_field(&once.text, kind);
            prop_assert_eq!(&once.text, &twice.text);
            prop_assert!(once.is_null() || once.text.chars().filter(|c| c.is_alphanumeric()).count() >= 2);
        }
    }

    #[test]
    fn fixture_mcc_5044() {
        let kb = KnowledgeBase::fixture();
        let e = enrich_mcc("5044", &kb);
        assert_eq!(e.title.as_deref(), Some("Photographic, Photocopy, Microfilm Equipment and Supplies"));
        let codes: Vec<&str> = e.similar.iter().map(|(c, _)| c.as_str()).collect();
        assert_eq!(codes, ["5021", "5045", "5943"]);
    }

    #[test]
    fn unknown_code_is_a_null_enrichment() {
        let e = enrich_mcc("0000", &KnowledgeBase::fixture());
        assert_eq!(e.code, "0000");
        assert!(e.title.is_none() && e.description.is_none() && e.similar.is_empty());
    }

    fn entry(description: &str) -> MccEntry {
        MccEntry {
            title: "t".into(),
            short_title: None,
            description: description.into(),
            included_categories: vec![],
            similar_codes: None,
            related_merchants: vec![],
        }
    }

    #[test]
    fn jaccard_fallback_ranks_overlap() {
        let mut kb = KnowledgeBase::default();
        kb.mcc.insert("1000".into(), entry("alpha beta gamma delta epsilon"));
        // 4 shared of 6 distinct tokens: J = 4/6
        kb.mcc.insert("2000".into(), entry("alpha beta gamma delta zeta"));
        kb.mcc.insert("3000".into(), entry("omega psi chi"));
        // 1 shared of 7: J = 1/7
        kb.mcc.insert("4000".into(), entry("alpha eta theta"));
        // same score as 4000, larger code sorts later
        kb.mcc.insert("4500".into(), entry("beta iota kappa"));
        let e = enrich_mcc("1000", &kb);
        let codes: Vec<&str> = e.similar.iter().map(|(c, _)| c.as_str()).collect();
        assert_eq!(codes, ["2000", "4000", "4500"]);
    }

    #[test]
    fn merchant_enrichment_from_listing() {
        let kb = KnowledgeBase::fixture();
        let name = clean_field("365 MARKET 888 432-3299", CleanKind::Merchant);
        let m = enrich_merchant(&name, "5814", "Troy", "Michigan", "USA", &kb);
        assert_eq!(m.mcc.title.as_deref(), Some("Fast Food Restaurants"));
        assert_eq!(m.city.as_deref(), Some("Troy"));

        let nulls = enrich_merchant(&CleanedValue::null(), NULL_TOKEN, NULL_TOKEN, NULL_TOKEN, NULL_TOKEN, &kb);
        assert_eq!(nulls.name, NULL_TOKEN);
        assert!(nulls.city.is_none() && nulls.state.is_none() && nulls.country.is_none());
        assert!(!nulls.mcc.is_known());

        let unknown = enrich_merchant(&name, "0001", "Troy", "Michigan", "USA", &kb);
        assert!(unknown.mcc.description.is_none());
        assert_eq!(unknown.state.as_deref(), Some("Michigan"));
    }

    #[test]
    fn location_lookup_and_hot_swap() {
        let kb = KnowledgeBase::fixture();
        let loc = enrich_location("UNITED STATES OF AMERICA", "New York", &kb);
        assert!(loc.economic_context.is_some());
        let unknown = enrich_location("Atlantis", "Deep", &kb);
        assert!(unknown.economic_context.is_none() && unknown.demographics.is_none() && unknown.industries.is_none());

        let mut v2 = kb.clone();
        for l in &mut v2.locations {
            l.industries = Some("revised industries".into());
        }
        let loc2 = enrich_location("UNITED STATES OF AMERICA", "New York", &v2);
        assert_eq!(loc.country, loc2.country);
        assert_eq!(loc.region, loc2.region);
        assert_eq!(loc.economic_context, loc2.economic_context);
        assert_eq!(loc.demographics, loc2.demographics);
        assert_ne!(loc.industries, loc2.industries);
    }

    #[test]
    fn city_resolves_region_through_kb() {
        let kb = KnowledgeBase::fixture();
        let c = enrich_city("Troy", NULL_TOKEN, "USA", &kb);
        assert_eq!(c.region, "Michigan");
        assert_eq!(c.city.as_deref(), Some("Troy"));
    }

    #[test]
    fn validation_rejects_dangling_similar() {
        let mut kb = KnowledgeBase::default();
        let mut e = entry("x y");
        e.similar_codes = Some(vec!["9999".into()]);
        kb.mcc.insert("1000".into(), e);
        assert!(kb.validate().is_err());
    }
}

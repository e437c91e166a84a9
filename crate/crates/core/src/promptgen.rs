//! Prompt templates for location, MCC and merchant entities, plus the
//! one-word limitation wrapper.

use std::hash::Hasher;

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fusion::{
    clean_field, country_short, enrich_city, enrich_location, enrich_mcc, enrich_merchant, CleanKind, EnrichedLocation,
    EnrichedMcc, EnrichedMerchant, KnowledgeBase, NULL_TOKEN,
};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("cannot wrap empty text")]
    EmptyText,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PromptKind {
    Location,
    Mcc,
    Merchant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Prompt {
    pub text: String,
    pub field_kind: PromptKind,
    pub one_word_wrapped: bool,
    pub fingerprint: u64,
}

/// 64-bit FNV-1a of the UTF-8 bytes.
pub fn fingerprint(text: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(text.as_bytes());
    h.finish()
}

pub fn fingerprint_hex(fp: u64) -> String {
    format!("{fp:016x}")
}

impl Prompt {
    pub fn new(text: String, field_kind: PromptKind) -> Self {
        let fingerprint = fingerprint(&text);
        Self { text, field_kind, one_word_wrapped: false, fingerprint }
    }

    /// Applies the one-word wrapper. Wrapping an already wrapped prompt nests.
    pub fn wrapped(self) -> Result<Self, PromptError> {
        let text = wrap_one_word(&self.text)?;
        Ok(Self { one_word_wrapped: true, ..Self::new(text, self.field_kind) })
    }

    pub fn with_wrap(self, wrap: bool) -> Result<Self, PromptError> {
        if wrap {
            self.wrapped()
        } else {
            Ok(self)
        }
    }
}

pub fn wrap_one_word(text: &str) -> Result<String, PromptError> {
    if text.is_empty() {
        return Err(PromptError::EmptyText);
    }
    Ok(format!("This sentence: '{}' means in one word:", text.replace('\'', "''")))
}

fn oxford_list(items: &[String]) -> String {
    match items {
        [] => String::new(),
        [a] => a.clone(),
        [a, b] => format!("{a} and {b}"),
        [rest @ .., last] => format!("{}, and {last}", rest.join(", ")),
    }
}

pub fn render_location(e: &EnrichedLocation) -> Prompt {
    let mut place = Vec::new();
    if let Some(city) = &e.city {
        place.push(city.clone());
    }
    place.push(e.region.clone());
    place.push(if e.country == NULL_TOKEN { NULL_TOKEN.to_string() } else { country_short(&e.country) });
    let scope = if e.city.is_some() { "city" } else { "state" };

    let mut considerations = Vec::new();
    if e.economic_context.is_some() {
        considerations.push(format!("{scope}-specific economic trends"));
    }
    if e.demographics.is_some() {
        considerations.push("population demographics".to_string());
    }
    if e.industries.is_some() {
        considerations.push("major industries".to_string());
    }
    considerations.push("financial regulations".to_string());

    let text = format!(
        "Represent the following location in the context of financial transactions, and economic indicators: {}. \nConsider {}.",
        place.join(", "),
        oxford_list(&considerations)
    );
    Prompt::new(text, PromptKind::Location)
}

pub fn render_mcc(e: &EnrichedMcc) -> Prompt {
    let (Some(title), Some(description)) = (&e.title, &e.description) else {
        return Prompt::new(format!("Please provide the embedding of MCC {}.", e.code), PromptKind::Mcc);
    };
    let mut text = format!("The MCC {}, titled '{title}', serves {description}", e.code);
    if !e.included_categories.is_empty() {
        text.push_str(" including ");
        text.push_str(&oxford_list(&e.included_categories));
    }
    text.push('.');
    if !e.similar.is_empty() {
        let items: Vec<String> = e.similar.iter().map(|(c, t)| format!("{c} ({t})")).collect();
        text.push_str(&format!(" Similar categories include {}.", oxford_list(&items)));
    }
    if !e.related_merchants.is_empty() {
        text.push_str(&format!(" Example merchants include {}.", oxford_list(&e.related_merchants)));
    }
    text.push_str(&format!("\nPlease provide the embedding of MCC {}.", e.code));
    Prompt::new(text, PromptKind::Mcc)
}

pub fn render_merchant(e: &EnrichedMerchant) -> Prompt {
    let mut place: Vec<String> = Vec::new();
    place.extend(e.city.clone());
    place.extend(e.state.clone());
    place.extend(e.country.as_deref().map(country_short));
    let located = if place.is_empty() { NULL_TOKEN.to_string() } else { place.join(", ") };

    let category = match (&e.mcc.title, &e.mcc.description) {
        (Some(title), Some(description)) => {
            format!("It belongs to MCC category {} '{title}', which serves {description}.", e.mcc.code)
        }
        _ => format!("It belongs to MCC category {}.", e.mcc.code),
    };
    let text = format!(
        "The merchant '{}' is located in {located}. {category}\nPlease provide the merchant embedding.",
        e.name
    );
    Prompt::new(text, PromptKind::Merchant)
}

const CORPUS_NAMES: &[&str] = &["CORNER", "HARBOR", "MAPLE", "UNION", "SUMMIT", "LIBERTY", "PIONEER"];

/// Up to `n` prompts drawn from a knowledge base: every MCC entry, every
/// location entry and every city, then merchant prompts cycling through
/// codes and cities.
pub fn kb_prompt_corpus(kb: &KnowledgeBase, n: usize) -> Vec<Prompt> {
    let mut out: Vec<Prompt> = kb.mcc.keys().map(|c| render_mcc(&enrich_mcc(c, kb))).collect();
    out.extend(kb.locations.iter().map(|l| render_location(&enrich_location(&l.country, &l.region, kb))));
    let country = kb.locations.first().map_or(NULL_TOKEN, |l| l.country.as_str());
    let cities: Vec<(&str, &str)> = kb.cities.iter().map(|(c, r)| (c.as_str(), r.as_str())).collect();
    out.extend(cities.iter().map(|(c, r)| render_location(&enrich_city(c, r, country, kb))));
    let codes: Vec<&String> = kb.mcc.keys().collect();
    let mut i = 0;
    while out.len() < n && !codes.is_empty() {
        let code = codes[i % codes.len()];
        let name = clean_field(&format!("{} {} {:03}", CORPUS_NAMES[i % CORPUS_NAMES.len()], code, i), CleanKind::Merchant);
        let (city, region) = cities.get((i * 7) % cities.len().max(1)).copied().unwrap_or((NULL_TOKEN, NULL_TOKEN));
        out.push(render_merchant(&enrich_merchant(&name, code, city, region, country, kb)));
        i += 1;
    }
    out.truncate(n);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fusion::{clean_field, enrich_location, enrich_mcc, enrich_merchant, CleanKind, KnowledgeBase};

    #[test]
    fn wrapper_matches_template() {
        assert_eq!(wrap_one_word("hello").unwrap(), "This sentence: 'hello' means in one word:");
        assert_eq!(wrap_one_word("JOE'S").unwrap(), "This sentence: 'JOE''S' means in one word:");
        assert_eq!(wrap_one_word(""), Err(PromptError::EmptyText));
    }

    #[test]
    fn wrapping_twice_nests() {
        let once = wrap_one_word("hello").unwrap();
        let twice = wrap_one_word(&once).unwrap();
        assert_ne!(once, twice);
        assert!(twice.contains("This sentence: ''hello'' means in one word:"));
        assert!(twice.starts_with("This sentence: 'This sentence: "));
    }

    #[test]
    fn wrapped_prompt_updates_fingerprint() {
        let p = Prompt::new("abc".into(), PromptKind::Mcc);
        let w = p.clone().wrapped().unwrap();
        assert!(w.one_word_wrapped);
        assert_eq!(w.fingerprint, fingerprint(&w.text));
        assert_ne!(w.fingerprint, p.fingerprint);
    }

    #[test]
    fn fnv_reference_values() {
        // FNV-1a 64 offset basis and the published "a" vector.
        assert_eq!(fingerprint(""), 0xcbf29ce484222325);
        assert_eq!(fingerprint("a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn null_location_renders_null_tokens() {
        let e = enrich_location(NULL_TOKEN, NULL_TOKEN, &KnowledgeBase::fixture());
        let p = render_location(&e);
        assert!(p.text.contains(": [NULL], [NULL]. \n"), "{}", p.text);
        assert!(p.text.ends_with("Consider financial regulations."));
    }

    #[test]
    fn distinct_regions_distinct_fingerprints() {
        let kb = KnowledgeBase::fixture();
        let a = render_location(&enrich_location("USA", "New York", &kb));
        let b = render_location(&enrich_location("USA", "Michigan", &kb));
        assert_ne!(a.fingerprint, b.fingerprint);
    }

    #[test]
    fn unknown_mcc_uses_basic_prompt() {
        let p = render_mcc(&enrich_mcc("0000", &KnowledgeBase::fixture()));
        assert_eq!(p.text, "Please provide the embedding of MCC 0000.");
    }

    #[test]
    fn single_similar_code_grammar() {
        let mut e = enrich_mcc("5044", &KnowledgeBase::fixture());
        e.similar.truncate(1);
        let p = render_mcc(&e);
        assert!(p.text.contains(" Similar categories include 5021 (Office Furniture).\n"), "{}", p.text);
        e.similar.clear();
        let p = render_mcc(&e);
        assert!(!p.text.contains("Similar categories"));
        assert!(p.text.contains("microfilm machines.\nPlease"));
    }

    #[test]
    fn merchant_without_city_keeps_state_and_country() {
        let kb = KnowledgeBase::fixture();
        let name = clean_field("365 MARKET 888 432-3299", CleanKind::Merchant);
        let m = enrich_merchant(&name, "5814", NULL_TOKEN, "Michigan", "USA", &kb);
        let p = render_merchant(&m);
        assert!(p.text.contains("is located in Michigan, USA."), "{}", p.text);
    }

    #[test]
    fn null_merchant_minimal_rendering() {
        let kb = KnowledgeBase::fixture();
        let m = enrich_merchant(&clean_field("", CleanKind::Merchant), NULL_TOKEN, NULL_TOKEN, NULL_TOKEN, NULL_TOKEN, &kb);
        let p = render_merchant(&m);
        assert_eq!(
            p.text,
            "The merchant '[NULL]' is located in [NULL]. It belongs to MCC category [NULL].\nPlease provide the merchant embedding."
        );
    }
}

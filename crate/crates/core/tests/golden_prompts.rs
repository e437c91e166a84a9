//! Pins the rendered location, MCC and merchant prompts byte-for-byte.

use semtab_core::fusion::{clean_field, enrich_location, enrich_mcc, enrich_merchant, CleanKind, KnowledgeBase};
use semtab_core::promptgen::{render_location, render_mcc, render_merchant, wrap_one_word, Prompt};

fn golden(name: &str) -> String {
    let path = format!("{}/tests/golden/{name}", env!("CARGO_MANIFEST_DIR"));
    std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{path}: {e}"))
}

fn assert_golden(p: &Prompt, name: &str) {
    assert_eq!(p.text, golden(name), "golden mismatch for {name}");
    assert!(!p.text.contains('{') && !p.text.contains('}'));
}

#[test]
fn location_new_york() {
    let kb = KnowledgeBase::fixture();
    let e = enrich_location("UNITED STATES OF AMERICA", "New York", &kb);
    assert_golden(&render_location(&e), "location_new_york.txt");
}

#[test]
fn mcc_5044() {
    let kb = KnowledgeBase::fixture();
    let code = clean_field("5044", CleanKind::Mcc);
    assert_golden(&render_mcc(&enrich_mcc(&code.text, &kb)), "mcc_5044.txt");
}

#[test]
fn merchant_365_market() {
    let kb = KnowledgeBase::fixture();
    let name = clean_field("  365  MARKET  888 432-3299 ", CleanKind::Merchant);
    let e = enrich_merchant(&name, "5814", "Troy", "Michigan", "USA", &kb);
    assert_golden(&render_merchant(&e), "merchant_365_market.txt");
}

#[test]
fn one_word_wrapper() {
    assert_eq!(wrap_one_word("hello").unwrap(), "This sentence: 'hello' means in one word:");
}

#[test]
fn fixture_vocabulary_renders_injectively() {
    let kb = KnowledgeBase::fixture();
    let mut seen = std::collections::HashSet::new();
    for code in kb.mcc.keys() {
        let p = render_mcc(&enrich_mcc(code, &kb));
        assert!(!p.text.contains('{') && !p.text.contains('}'));
        assert!(seen.insert(p.fingerprint), "duplicate fingerprint for {code}");
    }
    for l in &kb.locations {
        let p = render_location(&enrich_location(&l.country, &l.region, &kb));
        assert!(seen.insert(p.fingerprint));
    }
    assert_eq!(render_mcc(&enrich_mcc("5044", &kb)), render_mcc(&enrich_mcc("5044", &kb)));
}

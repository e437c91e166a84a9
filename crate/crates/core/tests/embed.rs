use std::collections::{BTreeMap, HashMap};
use std::io::Read;

use semtab_core::embed::*;
use semtab_core::fusion::{enrich_mcc, KnowledgeBase};
use semtab_core::promptgen::{fingerprint, kb_prompt_corpus, render_mcc, Prompt, PromptKind};
use semtab_core::txn::{generate_world, WorldConfig};
use semtab_core::vocab::{Field, Vocab};

// Exact (unhashed) bag-of-words cosine, written independently of the mock.
fn bow(text: &str) -> BTreeMap<String, f64> {
    let mut m = BTreeMap::new();
    for tok in text.to_lowercase().split(|c: char| !c.is_ascii_alphanumeric()).filter(|t| !t.is_empty()) {
        *m.entry(tok.to_string()).or_insert(0.0) += 1.0;
    }
    m
}

fn bow_cosine(a: &str, b: &str) -> f64 {
    let (x, y) = (bow(a), bow(b));
    let dot: f64 = x.iter().map(|(k, v)| v * y.get(k).unwrap_or(&0.0)).sum();
    let n = |m: &BTreeMap<String, f64>| m.values().map(|v| v * v).sum::<f64>().sqrt();
    dot / (n(&x) * n(&y))
}

fn cos64(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let n = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (n(a) * n(b))
}

fn group_means(prompts: &[(usize, String)], sim: impl Fn(&str, &str) -> f64) -> (f64, f64) {
    let (mut same, mut ns, mut cross, mut nc) = (0.0, 0, 0.0, 0);
    for (i, (ga, a)) in prompts.iter().enumerate() {
        for (gb, b) in &prompts[i + 1..] {
            let s = sim(a, b);
            if ga == gb {
                same += s;
                ns += 1;
            } else {
                cross += s;
                nc += 1;
            }
        }
    }
    (same / ns as f64, cross / nc as f64)
}

fn mock_cos(a: &str, b: &str) -> f64 {
    cosine(&mock_embed(a, 256, 0).unwrap(), &mock_embed(b, 256, 0).unwrap())
}

#[test]
fn fixture_groups_closer_within_than_across() {
    let kb = KnowledgeBase::fixture();
    let groups = [["8011", "8021", "8062", "8099"], ["4111", "4121", "4131", "4511"], ["5812", "5813", "5814", "5462"]];
    let prompts: Vec<(usize, String)> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, codes)| codes.iter().map(move |c| (g, c)))
        .map(|(g, c)| (g, render_mcc(&enrich_mcc(c, &kb)).text))
        .collect();
    let (os, oc) = group_means(&prompts, bow_cosine);
    assert!(os > oc, "oracle: same {os} cross {oc}");
    let (ms, mc) = group_means(&prompts, mock_cos);
    assert!(ms > mc, "mock: same {ms} cross {mc}");
}

#[test]
fn world_clusters_closer_within_than_across() {
    let world = generate_world(&WorldConfig::default(), 3).unwrap();
    let prompts: Vec<(usize, String)> =
        world.mccs.iter().map(|m| (m.cluster, render_mcc(&enrich_mcc(&m.code, &world.kb)).text)).collect();
    let (os, oc) = group_means(&prompts, bow_cosine);
    let (ms, mc) = group_means(&prompts, mock_cos);
    assert!(os > oc && ms > mc, "oracle {os}/{oc} mock {ms}/{mc}");
    // every pair ordering in the oracle is reflected on average by the mock
    assert!((ms - mc) > 0.5 * (os - oc));
}

#[test]
fn mock_is_deterministic_and_unit_norm() {
    for p in kb_prompt_corpus(&KnowledgeBase::fixture(), 50) {
        let a = mock_embed(&p.text, 256, 4).unwrap();
        assert_eq!(a, mock_embed(&p.text, 256, 4).unwrap());
        let n: f64 = a.iter().map(|v| (*v as f64).powi(2)).sum::<f64>().sqrt();
        assert!((n - 1.0).abs() < 1e-6);
    }
    let e = mock_embed("!!! ---", 16, 0).unwrap();
    assert_eq!(e[0], 1.0);
    assert!(e[1..].iter().all(|v| *v == 0.0));
    assert!(matches!(mock_embed("x", 4, 0), Err(EmbedError::DimTooSmall { .. })));
}

fn vector(i: usize, dim: usize) -> Vec<f32> {
    // includes subnormals, negative zero and large magnitudes
    (0..dim)
        .map(|j| match (i + j) % 7 {
            0 => -0.0,
            1 => f32::MIN_POSITIVE / 3.0,
            2 => 1.0e30,
            _ => ((i * 31 + j * 17) as f32).sin(),
        })
        .collect()
}

#[test]
fn cache_round_trips_and_reopens() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("emb.semb");
    let dim = 24;
    let mut expected: HashMap<(String, u64), Vec<f32>> = HashMap::new();
    {
        let mut cache = EmbeddingCache::open_or_create(&path, "m-test", dim).unwrap();
        for i in 0..1000 {
            let key = format!("merchant:STORE {i}");
            let fp = fingerprint(&key) ^ i as u64;
            let rec = EmbeddingRecord::new(key.clone(), fp, "m-test", vector(i, dim));
            cache.put(&rec).unwrap();
            let got = cache.get(&key, "m-test", fp).unwrap();
            assert!(got.iter().zip(&rec.vector).all(|(a, b)| a.to_bits() == b.to_bits()));
            expected.insert((key, fp), rec.vector);
        }
        cache.flush().unwrap();
    }
    let cache = EmbeddingCache::open(&path).unwrap();
    assert_eq!(cache.len(), 1000);
    assert_eq!((cache.model_id(), cache.dim()), ("m-test", dim));
    for ((key, fp), v) in &expected {
        let got = cache.get(key, "m-test", *fp).unwrap();
        assert!(got.iter().zip(v).all(|(a, b)| a.to_bits() == b.to_bits()), "{key}");
        assert!(cache.get(key, "other-model", *fp).is_none());
    }
    assert_eq!(cache.records().count(), 1000);
}

#[test]
fn cache_header_is_documented_layout() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("h.semb");
    let mut cache = EmbeddingCache::open_or_create(&path, "abc", 256).unwrap();
    cache.put(&EmbeddingRecord::new("mcc:5044", 7, "abc", vec![0.5; 256])).unwrap();
    cache.flush().unwrap();
    let mut bytes = Vec::new();
    std::fs::File::open(&path).unwrap().read_to_end(&mut bytes).unwrap();
    assert_eq!(&bytes[..4], b"SEMB");
    assert_eq!(bytes[4], 1);
    assert_eq!(u32::from_le_bytes(bytes[5..9].try_into().unwrap()), 256);
    assert_eq!(u32::from_le_bytes(bytes[9..13].try_into().unwrap()), 3);
    assert_eq!(&bytes[13..16], b"abc");
    assert_eq!(u64::from_le_bytes(bytes[16..24].try_into().unwrap()), 7);
    let body_end = bytes.len() - 4;
    let crc = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
    assert_eq!(crc, crc32fast::hash(&bytes[16..body_end]));
}

#[test]
fn damaged_cache_files_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("c.semb");
    {
        let mut cache = EmbeddingCache::open_or_create(&path, "m", 8).unwrap();
        for i in 0..20 {
            cache.put(&EmbeddingRecord::new(format!("city:C{i}"), i, "m", vector(i as usize, 8))).unwrap();
        }
    }
    let good = std::fs::read(&path).unwrap();
    for cut in [0, 3, 9, 20, good.len() / 2, good.len() - 1] {
        std::fs::write(&path, &good[..cut]).unwrap();
        assert!(matches!(EmbeddingCache::open(&path), Err(EmbedError::CacheCorrupt { .. })), "cut {cut}");
    }
    let mut flipped = good.clone();
    flipped[40] ^= 0x10;
    std::fs::write(&path, &flipped).unwrap();
    assert!(matches!(EmbeddingCache::open(&path), Err(EmbedError::CacheCorrupt { .. })));
    let mut magic = good.clone();
    magic[0] = b'X';
    std::fs::write(&path, &magic).unwrap();
    assert!(matches!(EmbeddingCache::open(&path), Err(EmbedError::CacheCorrupt { .. })));
}

#[test]
fn conflicting_put_is_an_error() {
    let dir = tempfile::tempdir().unwrap();
    let mut cache = EmbeddingCache::open_or_create(dir.path().join("x.semb"), "m", 4).unwrap();
    let rec = EmbeddingRecord::new("mcc:5814", 99, "m", vec![1.0, 2.0, 3.0, 4.0]);
    cache.put(&rec).unwrap();
    cache.put(&rec).unwrap();
    let changed = EmbeddingRecord { vector: vec![1.0, 2.0, 3.0, 4.5], ..rec.clone() };
    assert!(matches!(cache.put(&changed), Err(EmbedError::Conflict { fingerprint: 99, .. })));
    let new_fp = EmbeddingRecord { prompt_fingerprint: 100, ..changed };
    cache.put(&new_fp).unwrap();
    assert_eq!(cache.len(), 2);
    let other_dim = EmbeddingRecord::new("mcc:1", 1, "m", vec![1.0; 5]);
    assert!(matches!(cache.put(&other_dim), Err(EmbedError::CacheMismatch { .. })));
}

fn corpus_records(n: usize, dim: usize) -> (Vocab, Vec<EmbeddingRecord>, Vec<Vec<f64>>) {
    let prompts = kb_prompt_corpus(&KnowledgeBase::fixture(), n);
    let values: Vec<String> = (0..prompts.len()).map(|i| format!("v{i:04}")).collect();
    let vocab = Vocab::from_values(values.iter());
    let records: Vec<EmbeddingRecord> = prompts
        .iter()
        .zip(&values)
        .map(|(p, v)| EmbeddingRecord::new(Field::Merchant.key(v), p.fingerprint, "mock", mock_embed(&p.text, dim, 0).unwrap()))
        .collect();
    // sources in vocabulary order
    let sources = vocab
        .regular()
        .map(|(_, v)| {
            let r = records.iter().find(|r| r.key == Field::Merchant.key(v)).unwrap();
            r.vector.iter().map(|x| *x as f64).collect()
        })
        .collect();
    (vocab, records, sources)
}

fn distortions(table: &EmbeddingTable, sources: &[Vec<f64>]) -> Vec<f64> {
    let rows: Vec<Vec<f64>> = (2..table.rows()).map(|i| table.row(i).iter().map(|v| *v as f64).collect()).collect();
    let mut d = Vec::new();
    for i in 0..rows.len() {
        for j in i + 1..rows.len() {
            d.push((cos64(&rows[i], &rows[j]) - cos64(&sources[i], &sources[j])).abs());
        }
    }
    d.sort_by(f64::total_cmp);
    d
}

#[test]
fn corpus_has_two_hundred_distinct_prompts() {
    let prompts = kb_prompt_corpus(&KnowledgeBase::fixture(), 200);
    assert_eq!(prompts.len(), 200);
    let mut fps: Vec<u64> = prompts.iter().map(|p| p.fingerprint).collect();
    fps.sort_unstable();
    fps.dedup();
    assert_eq!(fps.len(), 200);
    assert!(prompts.iter().any(|p| p.field_kind == PromptKind::Merchant));
}

#[test]
fn projected_rows_are_rms_matched() {
    let (vocab, records, _) = corpus_records(200, 256);
    let t = build_table(Field::Merchant, &vocab, &records, 32, 0.02, 0).unwrap();
    assert_eq!(t.rows(), 202);
    assert!(t.row(0).iter().all(|v| *v == 0.0));
    for i in 1..t.rows() {
        assert!((row_rms(t.row(i)) - 0.02).abs() <= 1e-5, "row {i}: {}", row_rms(t.row(i)));
    }
    assert_eq!(t.provenance, Provenance { model_id: "mock".into(), projection_seed: 0, source_dim: 256 });
}

#[test]
fn oov_row_is_rescaled_mean() {
    let (vocab, records, _) = corpus_records(40, 64);
    let t = build_table(Field::Merchant, &vocab, &records, 16, 0.02, 9).unwrap();
    let mut mean = vec![0f64; 16];
    for i in 2..t.rows() {
        for (m, v) in mean.iter_mut().zip(t.row(i)) {
            *m += *v as f64;
        }
    }
    let c = cos64(&mean, &t.row(1).iter().map(|v| *v as f64).collect::<Vec<_>>());
    assert!(c > 1.0 - 1e-6, "{c}");
}

#[test]
fn projection_distortion_shrinks_with_width() {
    let (vocab, records, sources) = corpus_records(120, 256);
    let median = |d: usize| {
        let t = build_table(Field::Merchant, &vocab, &records, d, 0.02, 1).unwrap();
        let v = distortions(&t, &sources);
        v[v.len() / 2]
    };
    let (m32, m128) = (median(32), median(128));
    assert!(m128 < m32, "{m128} vs {m32}");
    let same = build_table(Field::Merchant, &vocab, &records, 256, 0.02, 1).unwrap();
    assert!(*distortions(&same, &sources).last().unwrap() < 1e-6);
}

#[test]
fn table_build_is_deterministic() {
    let (vocab, records, _) = corpus_records(60, 256);
    let a = build_table(Field::Mcc, &vocab, &records, 32, 0.02, 5);
    // records keyed for Merchant do not cover the Mcc field
    assert!(matches!(a, Err(EmbedError::Coverage { .. })));
    let a = build_table(Field::Merchant, &vocab, &records, 32, 0.02, 5).unwrap();
    let b = build_table(Field::Merchant, &vocab, &records, 32, 0.02, 5).unwrap();
    assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
}

fn client(url: &str, batch_size: usize, concurrency: usize, attempts: u32, token_env: &str) -> RemoteEmbedder {
    RemoteEmbedder::new(EndpointConfig {
        base_url: url.to_string(),
        token_env: token_env.to_string(),
        batch_size,
        max_concurrent_requests: concurrency,
        retry: RetryPolicy { max_attempts: attempts, backoff_ms: 1 },
        timeout_ms: 10_000,
    })
    .unwrap()
}

fn texts(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("prompt {i} {}", "long tail words ".repeat(i % 5))).collect()
}

#[test]
fn remote_three_prompts() {
    let server = MockServer::start(MockServerConfig { dim: 64, seed: 2, ..Default::default() }).unwrap();
    let c = client(server.url(), 16, 2, 3, "SEMTAB_TEST_UNSET_A");
    c.health().unwrap();
    let info = c.info().unwrap();
    assert_eq!(info, EndpointInfo { model_id: mock_model_id(64, 2), dim: 64 });
    let items: Vec<(String, Prompt)> = ["alpha", "beta gamma", "delta"]
        .iter()
        .enumerate()
        .map(|(i, t)| (format!("mcc:{i}"), Prompt::new(t.to_string(), PromptKind::Mcc)))
        .collect();
    let recs = c.embed_prompts(&items).unwrap();
    assert_eq!(recs.len(), 3);
    for (r, (k, p)) in recs.iter().zip(&items) {
        assert_eq!((&r.key, r.prompt_fingerprint, r.dim), (k, p.fingerprint, 64));
        assert_eq!(r.model_id, info.model_id);
        assert_eq!(r.vector, mock_embed(&p.text, 64, 2).unwrap());
    }
}

#[test]
fn remote_retries_transient_failure() {
    let server = MockServer::start(MockServerConfig { dim: 32, fail_first: 1, ..Default::default() }).unwrap();
    let c = client(server.url(), 8, 1, 2, "SEMTAB_TEST_UNSET_B");
    let (_, out) = c.embed_texts(&texts(3)).unwrap();
    assert_eq!(out.len(), 3);
    assert_eq!(server.embed_requests(), 2);
}

#[test]
fn remote_exhausted_retries_name_failed_indices() {
    let server = MockServer::start(MockServerConfig { dim: 32, fail_first: 3, ..Default::default() }).unwrap();
    let c = client(server.url(), 2, 1, 2, "SEMTAB_TEST_UNSET_C");
    match c.embed_texts(&texts(5)) {
        Err(EmbedError::Batch { indices, .. }) => assert_eq!(indices, vec![0, 1]),
        other => panic!("{other:?}"),
    }
}

#[test]
fn remote_batched_equals_singleton() {
    let server = MockServer::start(MockServerConfig { dim: 128, ..Default::default() }).unwrap();
    let prompts = texts(7);
    let (_, batched) = client(server.url(), 16, 1, 1, "SEMTAB_TEST_UNSET_D").embed_texts(&prompts).unwrap();
    let (_, single) = client(server.url(), 1, 1, 1, "SEMTAB_TEST_UNSET_D").embed_texts(&prompts).unwrap();
    assert_eq!(batched, single);
    assert_eq!(server.batch_sizes(), vec![7, 1, 1, 1, 1, 1, 1, 1]);
}

#[test]
fn remote_preserves_order_with_bounded_concurrency() {
    let server = MockServer::start(MockServerConfig { dim: 16, delay_ms: 25, ..Default::default() }).unwrap();
    let prompts = texts(16);
    let (_, out) = client(server.url(), 1, 3, 1, "SEMTAB_TEST_UNSET_E").embed_texts(&prompts).unwrap();
    for (p, v) in prompts.iter().zip(&out) {
        assert_eq!(*v, mock_embed(p, 16, 0).unwrap());
    }
    assert!(server.max_in_flight() <= 3, "{}", server.max_in_flight());
    assert!(server.max_in_flight() >= 2);
    assert_eq!(server.embed_requests(), 16);
}

#[test]
fn remote_sends_bearer_token_from_env() {
    let server =
        MockServer::start(MockServerConfig { dim: 16, token: Some("s3cret".into()), ..Default::default() }).unwrap();
    let anon = client(server.url(), 4, 1, 3, "SEMTAB_TEST_TOKEN_MISSING");
    assert!(matches!(anon.embed_texts(&texts(2)), Err(EmbedError::Http(_))));
    assert!(anon.info().is_err());
    // a 401 is not retried
    assert_eq!(server.embed_requests(), 0);
    std::env::set_var("SEMTAB_TEST_TOKEN_SET", "s3cret");
    let authed = client(server.url(), 4, 1, 3, "SEMTAB_TEST_TOKEN_SET");
    assert_eq!(authed.embed_texts(&texts(2)).unwrap().1.len(), 2);
    assert!(!format!("{authed:?}").contains("s3cret"));
}

#[test]
fn remote_unreachable_endpoint_fails_after_retries() {
    let url = {
        let s = MockServer::start(MockServerConfig::default()).unwrap();
        s.url().to_string()
    };
    let c = client(&url, 4, 1, 2, "SEMTAB_TEST_UNSET_F");
    assert!(matches!(c.embed_texts(&texts(3)), Err(EmbedError::Batch { .. })));
}

/// Serves one canned /embed body, for protocol violations the mock never makes.
fn canned(body: &'static str) -> (String, std::thread::JoinHandle<()>) {
    let server = tiny_http::Server::http("127.0.0.1:0").unwrap();
    let url = format!("http://{}", server.server_addr().to_ip().unwrap());
    let h = std::thread::spawn(move || {
        if let Ok(req) = server.recv() {
            let _ = req.respond(tiny_http::Response::from_string(body));
        }
    });
    (url, h)
}

#[test]
fn remote_dim_mismatch_is_protocol_error() {
    let (url, h) = canned(r#"{"model_id":"x","dim":3,"embeddings":[[1,2,3],[1,2]]}"#);
    let r = client(&url, 8, 1, 3, "SEMTAB_TEST_UNSET_G").embed_texts(&texts(2));
    assert!(matches!(r, Err(EmbedError::Protocol(_))), "{r:?}");
    h.join().unwrap();
    let (url, h) = canned(r#"{"model_id":"x","dim":3,"embeddings":[[1,2,3]]}"#);
    let r = client(&url, 8, 1, 3, "SEMTAB_TEST_UNSET_G").embed_texts(&texts(2));
    assert!(matches!(r, Err(EmbedError::Protocol(_))), "{r:?}");
    h.join().unwrap();
}

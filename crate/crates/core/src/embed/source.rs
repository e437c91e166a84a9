use super::{mock_embed, mock_model_id, EmbedError, EmbeddingCache, EmbeddingRecord, RemoteEmbedder};
use crate::promptgen::Prompt;

/// Anything that turns keyed prompts into embedding records.
pub trait Embedder {
    fn model_id(&self) -> Result<String, EmbedError>;
    fn embed(&self, items: &[(String, Prompt)]) -> Result<Vec<EmbeddingRecord>, EmbedError>;
}

/// In-process signed-hash bag-of-words embedder.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MockEmbedder {
    pub dim: usize,
    pub seed: u64,
}

impl Embedder for MockEmbedder {
    fn model_id(&self) -> Result<String, EmbedError> {
        Ok(mock_model_id(self.dim, self.seed))
    }

    fn embed(&self, items: &[(String, Prompt)]) -> Result<Vec<EmbeddingRecord>, EmbedError> {
        let model_id = mock_model_id(self.dim, self.seed);
        items
            .iter()
            .map(|(key, p)| {
                Ok(EmbeddingRecord::new(key.clone(), p.fingerprint, model_id.clone(), mock_embed(&p.text, self.dim, self.seed)?))
            })
            .collect()
    }
}

impl Embedder for RemoteEmbedder {
    fn model_id(&self) -> Result<String, EmbedError> {
        Ok(self.info()?.model_id)
    }

    fn embed(&self, items: &[(String, Prompt)]) -> Result<Vec<EmbeddingRecord>, EmbedError> {
        self.embed_prompts(items)
    }
}

/// Returns one record per item, embedding only the prompts missing from
/// `cache` and storing them. The cache is flushed before returning.
pub fn embed_cached(
    items: &[(String, Prompt)],
    embedder: &dyn Embedder,
    cache: &mut EmbeddingCache,
) -> Result<Vec<EmbeddingRecord>, EmbedError> {
    let model_id = cache.model_id().to_string();
    let missing: Vec<(String, Prompt)> = items
        .iter()
        .filter(|(k, p)| cache.get(k, &model_id, p.fingerprint).is_none())
        .cloned()
        .collect();
    if !missing.is_empty() {
        tracing::info!(missing = missing.len(), total = items.len(), "embedding prompts");
        for r in embedder.embed(&missing)? {
            cache.put(&r)?;
        }
        cache.flush()?;
    }
    records_from_cache(items, cache)
}

/// Looks every item up in `cache`; missing entries are a coverage error.
pub fn records_from_cache(items: &[(String, Prompt)], cache: &EmbeddingCache) -> Result<Vec<EmbeddingRecord>, EmbedError> {
    let mut missing = Vec::new();
    let mut out = Vec::with_capacity(items.len());
    for (key, p) in items {
        match cache.get(key, cache.model_id(), p.fingerprint) {
            Some(v) => out.push(EmbeddingRecord::new(key.clone(), p.fingerprint, cache.model_id(), v.to_vec())),
            None => missing.push(key.clone()),
        }
    }
    if !missing.is_empty() {
        return Err(EmbedError::Coverage { field: format!("cache {}", cache.path().display()), missing });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::promptgen::PromptKind;
    use std::cell::Cell;

    struct Counting {
        inner: MockEmbedder,
        calls: Cell<usize>,
    }

    impl Embedder for Counting {
        fn model_id(&self) -> Result<String, EmbedError> {
            self.inner.model_id()
        }

        fn embed(&self, items: &[(String, Prompt)]) -> Result<Vec<EmbeddingRecord>, EmbedError> {
            self.calls.set(self.calls.get() + items.len());
            self.inner.embed(items)
        }
    }

    #[test]
    fn cache_hits_skip_the_embedder() {
        let dir = tempfile::tempdir().unwrap();
        let e = Counting { inner: MockEmbedder { dim: 16, seed: 1 }, calls: Cell::new(0) };
        let mut cache = EmbeddingCache::open_or_create(dir.path().join("c"), &e.model_id().unwrap(), 16).unwrap();
        let items: Vec<(String, Prompt)> =
            ["a b", "c d"].iter().map(|t| (format!("mcc:{t}"), Prompt::new(t.to_string(), PromptKind::Mcc))).collect();
        let first = embed_cached(&items, &e, &mut cache).unwrap();
        let second = embed_cached(&items, &e, &mut cache).unwrap();
        assert_eq!(first, second);
        assert_eq!(e.calls.get(), 2);

        let edited = vec![(items[0].0.clone(), Prompt::new("a b changed".into(), PromptKind::Mcc))];
        assert!(records_from_cache(&edited, &cache).is_err());
        embed_cached(&edited, &e, &mut cache).unwrap();
        assert_eq!(e.calls.get(), 3);
    }
}

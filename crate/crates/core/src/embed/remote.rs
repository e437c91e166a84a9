//! Client for the hidden-state embedding service.

use std::ops::Range;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{EmbedError, EmbeddingRecord};
use crate::promptgen::Prompt;

pub const DEFAULT_TOKEN_ENV: &str = "EMBED_API_KEY";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RetryPolicy {
    pub max_attempts: u32,
    pub backoff_ms: u64,
}

impl Default for RetryPolicy {
    fn default() -> Self {
        Self { max_attempts: 3, backoff_ms: 200 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EndpointConfig {
    pub base_url: String,
    pub token_env: String,
    pub batch_size: usize,
    pub max_concurrent_requests: usize,
    pub retry: RetryPolicy,
    pub timeout_ms: u64,
}

impl Default for EndpointConfig {
    fn default() -> Self {
        Self {
            base_url: "http://127.0.0.1:8000".into(),
            token_env: DEFAULT_TOKEN_ENV.into(),
            batch_size: 16,
            max_concurrent_requests: 2,
            retry: RetryPolicy::default(),
            timeout_ms: 120_000,
        }
    }
}

impl EndpointConfig {
    pub fn validate(&self) -> Result<(), EmbedError> {
        if self.batch_size == 0 {
            return Err(EmbedError::Config("batch_size must be at least 1".into()));
        }
        if self.max_concurrent_requests == 0 {
            return Err(EmbedError::Config("max_concurrent_requests must be at least 1".into()));
        }
        if self.retry.max_attempts == 0 {
            return Err(EmbedError::Config("retry.max_attempts must be at least 1".into()));
        }
        if !(self.base_url.starts_with("http://") || self.base_url.starts_with("https://")) {
            return Err(EmbedError::Config(format!("base_url must be http(s): {}", self.base_url)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EndpointInfo {
    pub model_id: String,
    pub dim: usize,
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    prompts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    model_id: String,
    dim: usize,
    embeddings: Vec<Vec<f32>>,
}

#[derive(Deserialize)]
struct HealthResponse {
    status: String,
}

enum Failure {
    Retryable(String),
    Fatal(EmbedError),
}

pub struct RemoteEmbedder {
    cfg: EndpointConfig,
    token: Option<String>,
    agent: ureq::Agent,
}

impl std::fmt::Debug for RemoteEmbedder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RemoteEmbedder")
            .field("cfg", &self.cfg)
            .field("token", &self.token.as_ref().map(|_| "<redacted>"))
            .finish()
    }
}

impl RemoteEmbedder {
    /// Validates the config and reads the bearer token from the configured
    /// environment variable, if set.
    pub fn new(cfg: EndpointConfig) -> Result<Self, EmbedError> {
        cfg.validate()?;
        let token = std::env::var(&cfg.token_env).ok().filter(|t| !t.is_empty());
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_millis(cfg.timeout_ms)))
            .http_status_as_error(false)
            .build()
            .into();
        Ok(Self { cfg, token, agent })
    }

    pub fn config(&self) -> &EndpointConfig {
        &self.cfg
    }

    fn url(&self, path: &str) -> String {
        format!("{}{path}", self.cfg.base_url.trim_end_matches('/'))
    }

    fn get_json<T: serde::de::DeserializeOwned>(&self, path: &str) -> Result<T, EmbedError> {
        let mut req = self.agent.get(self.url(path));
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = req.call().map_err(|e| EmbedError::Http(e.to_string()))?;
        let status = resp.status().as_u16();
        if status != 200 {
            return Err(EmbedError::Http(format!("GET {path} returned {status}")));
        }
        resp.body_mut().read_json().map_err(|e| EmbedError::Protocol(e.to_string()))
    }

    pub fn health(&self) -> Result<(), EmbedError> {
        let h: HealthResponse = self.get_json("/health")?;
        if h.status != "ok" {
            return Err(EmbedError::Protocol(format!("health status {}", h.status)));
        }
        Ok(())
    }

    pub fn info(&self) -> Result<EndpointInfo, EmbedError> {
        self.get_json("/info")
    }

    fn post_once(&self, prompts: &[String]) -> Result<EmbedResponse, Failure> {
        let mut req = self.agent.post(self.url("/embed"));
        if let Some(t) = &self.token {
            req = req.header("Authorization", format!("Bearer {t}"));
        }
        let mut resp = req.send_json(EmbedRequest { prompts }).map_err(|e| Failure::Retryable(e.to_string()))?;
        let status = resp.status().as_u16();
        if status == 429 || status >= 500 {
            return Err(Failure::Retryable(format!("server returned {status}")));
        }
        if status != 200 {
            let body = resp.body_mut().read_to_string().unwrap_or_default();
            return Err(Failure::Fatal(EmbedError::Http(format!("server returned {status}: {body}"))));
        }
        let parsed: EmbedResponse =
            resp.body_mut().read_json().map_err(|e| Failure::Fatal(EmbedError::Protocol(e.to_string())))?;
        if parsed.embeddings.len() != prompts.len() {
            return Err(Failure::Fatal(EmbedError::Protocol(format!(
                "sent {} prompts, received {} embeddings",
                prompts.len(),
                parsed.embeddings.len()
            ))));
        }
        if let Some(v) = parsed.embeddings.iter().find(|v| v.len() != parsed.dim) {
            return Err(Failure::Fatal(EmbedError::Protocol(format!(
                "response declares dim {} but holds a vector of length {}",
                parsed.dim,
                v.len()
            ))));
        }
        Ok(parsed)
    }

    fn post_with_retry(&self, prompts: &[String]) -> Result<EmbedResponse, Failure> {
        let mut last = String::new();
        for attempt in 0..self.cfg.retry.max_attempts {
            if attempt > 0 {
                let delay = self.cfg.retry.backoff_ms.saturating_mul(1 << (attempt - 1).min(16));
                std::thread::sleep(Duration::from_millis(delay));
            }
            match self.post_once(prompts) {
                Ok(r) => return Ok(r),
                Err(Failure::Retryable(msg)) => {
                    tracing::debug!(attempt, error = %msg, "embed request failed");
                    last = msg;
                }
                Err(fatal) => return Err(fatal),
            }
        }
        Err(Failure::Retryable(format!("gave up after {} attempts: {last}", self.cfg.retry.max_attempts)))
    }

    /// Embeds `prompts` in order, batching and running up to
    /// `max_concurrent_requests` requests at once.
    pub fn embed_texts(&self, prompts: &[String]) -> Result<(EndpointInfo, Vec<Vec<f32>>), EmbedError> {
        if prompts.is_empty() {
            return Err(EmbedError::Config("no prompts to embed".into()));
        }
        let batches: Vec<Range<usize>> = (0..prompts.len())
            .step_by(self.cfg.batch_size)
            .map(|s| s..(s + self.cfg.batch_size).min(prompts.len()))
            .collect();
        let next = AtomicUsize::new(0);
        let results: Mutex<Vec<Option<Result<EmbedResponse, Failure>>>> =
            Mutex::new((0..batches.len()).map(|_| None).collect());
        let workers = self.cfg.max_concurrent_requests.min(batches.len());
        std::thread::scope(|s| {
            for _ in 0..workers {
                s.spawn(|| loop {
                    let b = next.fetch_add(1, Ordering::SeqCst);
                    if b >= batches.len() {
                        break;
                    }
                    let r = self.post_with_retry(&prompts[batches[b].clone()]);
                    results.lock().unwrap()[b] = Some(r);
                });
            }
        });

        let results = results.into_inner().unwrap();
        let mut failed = Vec::new();
        let mut first_msg = None;
        let mut info: Option<EndpointInfo> = None;
        let mut out = Vec::with_capacity(prompts.len());
        for (range, r) in batches.iter().zip(results) {
            match r.expect("every batch is processed") {
                Ok(resp) => {
                    let this = EndpointInfo { model_id: resp.model_id, dim: resp.dim };
                    match &info {
                        Some(i) if *i != this => {
                            return Err(EmbedError::Protocol(format!(
                                "responses disagree: {}/{} vs {}/{}",
                                i.model_id, i.dim, this.model_id, this.dim
                            )))
                        }
                        Some(_) => {}
                        None => info = Some(this),
                    }
                    out.extend(resp.embeddings);
                }
                Err(Failure::Fatal(e)) => return Err(e),
                Err(Failure::Retryable(msg)) => {
                    failed.extend(range.clone());
                    first_msg.get_or_insert(msg);
                }
            }
        }
        if !failed.is_empty() {
            return Err(EmbedError::Batch { indices: failed, message: first_msg.unwrap_or_default() });
        }
        Ok((info.expect("at least one batch"), out))
    }

    /// Embeds keyed prompts, one record per prompt in input order.
    pub fn embed_prompts(&self, items: &[(String, Prompt)]) -> Result<Vec<EmbeddingRecord>, EmbedError> {
        let texts: Vec<String> = items.iter().map(|(_, p)| p.text.clone()).collect();
        let (info, vectors) = self.embed_texts(&texts)?;
        let records: Vec<EmbeddingRecord> = items
            .iter()
            .zip(vectors)
            .map(|((key, p), v)| EmbeddingRecord::new(key.clone(), p.fingerprint, info.model_id.clone(), v))
            .collect();
        for r in &records {
            r.validate().map_err(|e| EmbedError::Protocol(e.to_string()))?;
        }
        Ok(records)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_validation() {
        let mut c = EndpointConfig::default();
        assert!(c.validate().is_ok());
        c.batch_size = 0;
        assert!(c.validate().is_err());
        let c = EndpointConfig { max_concurrent_requests: 0, ..Default::default() };
        assert!(c.validate().is_err());
        let c = EndpointConfig { base_url: "ftp://x".into(), ..Default::default() };
        assert!(c.validate().is_err());
    }

    #[test]
    fn unknown_config_keys_rejected() {
        assert!(serde_json::from_str::<EndpointConfig>(r#"{"batch":3}"#).is_err());
        let c: EndpointConfig = serde_json::from_str(r#"{"batch_size":3}"#).unwrap();
        assert_eq!(c.batch_size, 3);
        assert_eq!(c.token_env, DEFAULT_TOKEN_ENV);
    }

    #[test]
    fn debug_redacts_token() {
        let mut e = RemoteEmbedder::new(EndpointConfig::default()).unwrap();
        e.token = Some("secret-value".into());
        assert!(!format!("{e:?}").contains("secret-value"));
    }
}

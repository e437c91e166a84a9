//! In-process HTTP server speaking the embedding wire protocol, backed by
//! the mock embedder. Supports scripted failures for client tests.

use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use serde::Deserialize;
use serde_json::json;
use tiny_http::{Header, Method, Request, Response, Server};

use super::mock::{mock_embed, mock_model_id};
use super::EmbedError;

#[derive(Debug, Clone)]
pub struct MockServerConfig {
    pub dim: usize,
    pub seed: u64,
    /// Answer the first N /embed requests with HTTP 500.
    pub fail_first: usize,
    /// Required bearer token, if any.
    pub token: Option<String>,
    /// Per-request handling delay.
    pub delay_ms: u64,
}

impl Default for MockServerConfig {
    fn default() -> Self {
        Self { dim: 256, seed: 0, fail_first: 0, token: None, delay_ms: 0 }
    }
}

#[derive(Default)]
struct Stats {
    embed_requests: AtomicUsize,
    in_flight: AtomicUsize,
    max_in_flight: AtomicUsize,
    batch_sizes: Mutex<Vec<usize>>,
}

pub struct MockServer {
    url: String,
    stop: Arc<AtomicBool>,
    stats: Arc<Stats>,
    handle: Option<JoinHandle<()>>,
}

#[derive(Deserialize)]
struct EmbedBody {
    prompts: Vec<String>,
}

fn json_response(status: u16, body: serde_json::Value) -> Response<std::io::Cursor<Vec<u8>>> {
    Response::from_string(body.to_string())
        .with_status_code(status)
        .with_header(Header::from_bytes("Content-Type", "application/json").expect("static header"))
}

fn authorized(req: &Request, token: &Option<String>) -> bool {
    let Some(token) = token else { return true };
    let expected = format!("Bearer {token}");
    req.headers().iter().any(|h| h.field.equiv("Authorization") && h.value.as_str() == expected)
}

fn handle(mut req: Request, cfg: &MockServerConfig, failures_left: &AtomicUsize, stats: &Stats) {
    let model_id = mock_model_id(cfg.dim, cfg.seed);
    let resp = if !authorized(&req, &cfg.token) {
        json_response(401, json!({"error": "unauthorized"}))
    } else {
        match (req.method(), req.url()) {
            (Method::Get, "/health") => json_response(200, json!({"status": "ok"})),
            (Method::Get, "/info") => json_response(200, json!({"model_id": model_id, "dim": cfg.dim})),
            (Method::Post, "/embed") => {
                stats.embed_requests.fetch_add(1, Ordering::SeqCst);
                let now = stats.in_flight.fetch_add(1, Ordering::SeqCst) + 1;
                stats.max_in_flight.fetch_max(now, Ordering::SeqCst);
                if cfg.delay_ms > 0 {
                    std::thread::sleep(Duration::from_millis(cfg.delay_ms));
                }
                let mut body = String::new();
                let parsed = req
                    .as_reader()
                    .read_to_string(&mut body)
                    .ok()
                    .and_then(|_| serde_json::from_str::<EmbedBody>(&body).ok());
                let fail = failures_left
                    .fetch_update(Ordering::SeqCst, Ordering::SeqCst, |n| n.checked_sub(1))
                    .is_ok();
                let r = match parsed {
                    _ if fail => json_response(500, json!({"error": "injected failure"})),
                    None => json_response(400, json!({"error": "expected {\"prompts\": [...]}"})),
                    Some(b) => {
                        stats.batch_sizes.lock().unwrap().push(b.prompts.len());
                        let embeddings: Result<Vec<Vec<f32>>, _> =
                            b.prompts.iter().map(|p| mock_embed(p, cfg.dim, cfg.seed)).collect();
                        match embeddings {
                            Ok(e) => json_response(200, json!({"model_id": model_id, "dim": cfg.dim, "embeddings": e})),
                            Err(e) => json_response(500, json!({"error": e.to_string()})),
                        }
                    }
                };
                stats.in_flight.fetch_sub(1, Ordering::SeqCst);
                r
            }
            _ => json_response(404, json!({"error": "not found"})),
        }
    };
    let _ = req.respond(resp);
}

impl MockServer {
    /// Binds an ephemeral localhost port and serves until dropped.
    pub fn start(cfg: MockServerConfig) -> Result<Self, EmbedError> {
        Self::bind("127.0.0.1:0", cfg)
    }

    pub fn bind(addr: &str, cfg: MockServerConfig) -> Result<Self, EmbedError> {
        if cfg.dim < super::MIN_MOCK_DIM {
            return Err(EmbedError::DimTooSmall { dim: cfg.dim, min: super::MIN_MOCK_DIM });
        }
        let server = Server::http(addr).map_err(|e| EmbedError::Http(e.to_string()))?;
        let local = server
            .server_addr()
            .to_ip()
            .ok_or_else(|| EmbedError::Http("server has no IP address".into()))?;
        let url = format!("http://{local}");
        let stop = Arc::new(AtomicBool::new(false));
        let stats = Arc::new(Stats::default());
        let handle = {
            let stop = stop.clone();
            let stats = stats.clone();
            let cfg = Arc::new(cfg);
            let failures_left = Arc::new(AtomicUsize::new(cfg.fail_first));
            std::thread::spawn(move || {
                let mut workers = Vec::new();
                while !stop.load(Ordering::SeqCst) {
                    match server.recv_timeout(Duration::from_millis(20)) {
                        Ok(Some(req)) => {
                            let (cfg, failures_left, stats) = (cfg.clone(), failures_left.clone(), stats.clone());
                            workers.push(std::thread::spawn(move || handle(req, &cfg, &failures_left, &stats)));
                        }
                        Ok(None) => {}
                        Err(_) => break,
                    }
                    workers.retain(|w: &JoinHandle<()>| !w.is_finished());
                }
                for w in workers {
                    let _ = w.join();
                }
            })
        };
        Ok(Self { url, stop, stats, handle: Some(handle) })
    }

    pub fn url(&self) -> &str {
        &self.url
    }

    pub fn embed_requests(&self) -> usize {
        self.stats.embed_requests.load(Ordering::SeqCst)
    }

    pub fn max_in_flight(&self) -> usize {
        self.stats.max_in_flight.load(Ordering::SeqCst)
    }

    pub fn batch_sizes(&self) -> Vec<usize> {
        self.stats.batch_sizes.lock().unwrap().clone()
    }

    /// Blocks until the server thread exits, which happens only on error.
    pub fn wait(mut self) {
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(h) = self.handle.take() {
            let _ = h.join();
        }
    }
}

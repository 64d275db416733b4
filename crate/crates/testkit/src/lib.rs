//! Test support: fixture locations, brute-force oracles and a mock inference
//! server that speaks the classifier, embedder and generator wire protocols.

pub mod oracle;

use std::net::SocketAddr;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread::JoinHandle;
use std::time::Duration;

use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde_json::{json, Value};
use tokio::sync::oneshot;

/// Directory holding the three-case toy corpus.
pub fn toy_corpus_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/toy_corpus")
}

/// Scripted human turns of the golden conversation.
pub fn golden_script_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden/toy_chat.script")
}

/// Recorded transcript of the golden conversation under default parameters.
pub fn golden_transcript_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/golden/toy_chat.json")
}

/// Set to re-record golden files instead of comparing against them.
pub fn update_golden() -> bool {
    std::env::var_os("UPDATE_GOLDEN").is_some()
}

/// What the mock answers. Mutable between requests.
#[derive(Debug, Clone)]
pub struct Behavior {
    /// `/classify` logits; `k` is reported as `k_override` or the length.
    pub logits: Vec<f64>,
    pub k_override: Option<usize>,
    /// `/embed` vector width (hashed bag of words).
    pub dim: usize,
    /// Fixed `/generate` output; when `None`, candidates are rotations of the seed.
    pub candidates: Option<Vec<String>>,
    /// Sleep before answering any request.
    pub delay: Duration,
    /// Answer every POST with this status and an empty JSON body.
    pub status: Option<u16>,
    /// Answer every POST with this raw body.
    pub raw_body: Option<String>,
}

impl Default for Behavior {
    fn default() -> Self {
        Self {
            logits: vec![0.0, 1.0],
            k_override: None,
            dim: 16,
            candidates: None,
            delay: Duration::ZERO,
            status: None,
            raw_body: None,
        }
    }
}

#[derive(Clone)]
struct Shared {
    behavior: Arc<Mutex<Behavior>>,
    requests: Arc<Mutex<Vec<(String, Value)>>>,
}

pub struct MockServer {
    pub base_url: String,
    behavior: Arc<Mutex<Behavior>>,
    requests: Arc<Mutex<Vec<(String, Value)>>>,
    shutdown: Option<oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl MockServer {
    pub fn start(behavior: Behavior) -> Self {
        let shared = Shared {
            behavior: Arc::new(Mutex::new(behavior)),
            requests: Arc::new(Mutex::new(Vec::new())),
        };
        let (addr_tx, addr_rx) = std::sync::mpsc::channel::<SocketAddr>();
        let (shutdown_tx, shutdown_rx) = oneshot::channel::<()>();
        let state = shared.clone();
        let thread = std::thread::spawn(move || {
            let rt = tokio::runtime::Builder::new_multi_thread()
                .worker_threads(2)
                .enable_all()
                .build()
                .expect("runtime");
            rt.block_on(async move {
                let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.expect("bind");
                addr_tx.send(listener.local_addr().unwrap()).unwrap();
                let app = Router::new()
                    .route("/healthz", get(|| async { "ok" }))
                    .route("/classify", post(classify))
                    .route("/embed", post(embed))
                    .route("/generate", post(generate))
                    .with_state(state);
                axum::serve(listener, app)
                    .with_graceful_shutdown(async {
                        let _ = shutdown_rx.await;
                    })
                    .await
                    .expect("serve");
            });
        });
        let addr = addr_rx.recv().expect("mock server address");
        Self {
            base_url: format!("http://{addr}"),
            behavior: shared.behavior,
            requests: shared.requests,
            shutdown: Some(shutdown_tx),
            thread: Some(thread),
        }
    }

    pub fn update(&self, f: impl FnOnce(&mut Behavior)) {
        f(&mut self.behavior.lock().unwrap());
    }

    /// `(path, body)` of every POST received so far.
    pub fn requests(&self) -> Vec<(String, Value)> {
        self.requests.lock().unwrap().clone()
    }
}

impl Drop for MockServer {
    fn drop(&mut self) {
        if let Some(tx) = self.shutdown.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

async fn prelude(state: &Shared, path: &str, body: &Value) -> Result<Behavior, Response> {
    state.requests.lock().unwrap().push((path.to_string(), body.clone()));
    let behavior = state.behavior.lock().unwrap().clone();
    if !behavior.delay.is_zero() {
        tokio::time::sleep(behavior.delay).await;
    }
    if let Some(code) = behavior.status {
        let status = StatusCode::from_u16(code).unwrap_or(StatusCode::INTERNAL_SERVER_ERROR);
        return Err((status, Json(json!({}))).into_response());
    }
    if let Some(raw) = &behavior.raw_body {
        return Err((StatusCode::OK, raw.clone()).into_response());
    }
    Ok(behavior)
}

async fn classify(State(state): State<Shared>, Json(body): Json<Value>) -> Response {
    let b = match prelude(&state, "/classify", &body).await {
        Ok(b) => b,
        Err(r) => return r,
    };
    let k = b.k_override.unwrap_or(b.logits.len());
    Json(json!({ "logits": b.logits, "k": k })).into_response()
}

/// Deterministic hashed bag of lowercase alphanumeric tokens.
pub fn hashed_embedding(text: &str, dim: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    for token in text.split(|c: char| !c.is_alphanumeric()).filter(|t| !t.is_empty()) {
        let h = token.to_lowercase().bytes().fold(0xcbf2_9ce4_8422_2325u64, |h, b| {
            (h ^ u64::from(b)).wrapping_mul(0x100_0000_01b3)
        });
        v[(h % dim as u64) as usize] += 1.0;
    }
    v
}

async fn embed(State(state): State<Shared>, Json(body): Json<Value>) -> Response {
    let b = match prelude(&state, "/embed", &body).await {
        Ok(b) => b,
        Err(r) => return r,
    };
    let texts: Vec<String> = body["texts"]
        .as_array()
        .map(|a| a.iter().filter_map(|t| t.as_str().map(str::to_string)).collect())
        .unwrap_or_default();
    let vectors: Vec<Vec<f64>> = texts.iter().map(|t| hashed_embedding(t, b.dim)).collect();
    Json(json!({ "vectors": vectors, "dim": b.dim })).into_response()
}

async fn generate(State(state): State<Shared>, Json(body): Json<Value>) -> Response {
    let b = match prelude(&state, "/generate", &body).await {
        Ok(b) => b,
        Err(r) => return r,
    };
    let n = body["n"].as_u64().unwrap_or(1) as usize;
    let max_tokens = body["max_tokens"].as_u64().unwrap_or(40) as usize;
    let candidates = b.candidates.unwrap_or_else(|| {
        let words: Vec<&str> = body["seed"].as_str().unwrap_or("").split_whitespace().collect();
        (0..n)
            .map(|l| {
                let mut w = words.clone();
                let len = w.len();
                if len > 0 {
                    w.rotate_left(l % len);
                }
                w.truncate(max_tokens);
                w.join(" ")
            })
            .collect()
    });
    Json(json!({ "candidates": candidates })).into_response()
}

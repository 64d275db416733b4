//! HTTP facade over the dialog engine.
//!
//! Sessions live in memory. Requests for one session are serialized by a
//! per-session lock; engine work runs on the blocking pool so slow backends
//! never stall the reactor.

pub mod api;
pub mod config;
mod error;

use std::collections::HashMap;
use std::future::Future;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use axum::http::{HeaderValue, Method};
use axum::routing::{get, post};
use axum::Router;
use humbert::corpus::{load_index, CorpusError};
use humbert::engine::{Engine, EngineError};
use humbert::Session;
use thiserror::Error;
use tokio::net::TcpListener;
use tokio::sync::Mutex;
use tower_http::cors::{AllowOrigin, Any, CorsLayer};

pub use config::ServiceConfig;
pub use error::ApiError;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("corpus index: {0}")]
    Corpus(#[from] CorpusError),
    #[error("engine: {0}")]
    Engine(#[from] EngineError),
    #[error("cannot bind {addr}: {source}")]
    Bind {
        addr: String,
        #[source]
        source: io::Error,
    },
}

/// Shared state behind every handler.
pub struct AppState {
    pub engine: Arc<Engine>,
    sessions: RwLock<HashMap<String, Arc<Mutex<Session>>>>,
}

impl AppState {
    pub fn new(engine: Arc<Engine>) -> Arc<Self> {
        Arc::new(Self {
            engine,
            sessions: RwLock::new(HashMap::new()),
        })
    }

    fn insert(&self, session: Session) {
        let id = session.id().to_string();
        self.sessions
            .write()
            .expect("session map poisoned")
            .insert(id, Arc::new(Mutex::new(session)));
    }

    fn get(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        self.sessions
            .read()
            .expect("session map poisoned")
            .get(id)
            .cloned()
            .ok_or_else(|| ApiError::not_found(format!("no session {id}")))
    }

    pub fn session_count(&self) -> usize {
        self.sessions.read().expect("session map poisoned").len()
    }

    /// Writes one JSON line per session (its full turn log), ordered by id.
    pub async fn write_snapshot<W: Write>(&self, mut out: W) -> io::Result<usize> {
        let mut slots: Vec<(String, Arc<Mutex<Session>>)> = self
            .sessions
            .read()
            .expect("session map poisoned")
            .iter()
            .map(|(k, v)| (k.clone(), v.clone()))
            .collect();
        slots.sort_by(|a, b| a.0.cmp(&b.0));
        let mut n = 0;
        for (_, slot) in slots {
            let session = slot.lock().await;
            if let Some(h) = api::History::of(&session) {
                serde_json::to_writer(&mut out, &h)?;
                out.write_all(b"\n")?;
                n += 1;
            }
        }
        out.flush()?;
        Ok(n)
    }
}

fn cors(origins: &[String]) -> CorsLayer {
    let layer = CorsLayer::new()
        .allow_methods([Method::GET, Method::POST])
        .allow_headers(Any);
    if origins.is_empty() || origins.iter().any(|o| o == "*") {
        layer.allow_origin(Any)
    } else {
        let list: Vec<HeaderValue> = origins.iter().filter_map(|o| o.parse().ok()).collect();
        layer.allow_origin(AllowOrigin::list(list))
    }
}

pub fn router(state: Arc<AppState>, cors_origins: &[String]) -> Router {
    Router::new()
        .route("/healthz", get(api::health))
        .route("/corpus/cases", get(api::cases))
        .route("/sessions", post(api::create_session))
        .route("/sessions/{id}/messages", post(api::post_message))
        .route("/sessions/{id}/history", get(api::history))
        .fallback(api::not_found)
        .method_not_allowed_fallback(api::method_not_allowed)
        .layer(cors(cors_origins))
        .with_state(state)
}

/// Loads the index named in `config` and builds the engine.
pub fn build_engine(config: &ServiceConfig) -> Result<Arc<Engine>, ServiceError> {
    let path = config
        .index
        .as_deref()
        .ok_or_else(|| ServiceError::Config("no corpus index configured (`index`)".into()))?;
    let index = load_index(path)?;
    Ok(Arc::new(Engine::new(Arc::new(index), config.engine.clone())?))
}

/// Serves on `listener` until `shutdown` resolves, then lets in-flight
/// requests finish and writes the optional snapshot.
pub async fn serve_until(
    state: Arc<AppState>,
    config: &ServiceConfig,
    listener: TcpListener,
    shutdown: impl Future<Output = ()> + Send + 'static,
) -> Result<(), ServiceError> {
    let app = router(state.clone(), &config.cors_origins);
    let addr = listener
        .local_addr()
        .map(|a| a.to_string())
        .unwrap_or_else(|_| "?".into());
    tracing::info!("listening on {addr}");
    axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await
        .map_err(|source| ServiceError::Io {
            path: PathBuf::from(addr),
            source,
        })?;
    if let Some(path) = &config.snapshot {
        write_snapshot_file(&state, path).await?;
    }
    Ok(())
}

async fn write_snapshot_file(state: &AppState, path: &Path) -> Result<(), ServiceError> {
    let io_err = |source| ServiceError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = std::fs::File::create(path).map_err(io_err)?;
    let n = state.write_snapshot(io::BufWriter::new(file)).await.map_err(io_err)?;
    tracing::info!("wrote {n} sessions to {}", path.display());
    Ok(())
}

/// Binds `config.bind` and serves until Ctrl-C or SIGTERM.
pub async fn run(config: ServiceConfig) -> Result<(), ServiceError> {
    let engine = build_engine(&config)?;
    let listener = TcpListener::bind(config.bind)
        .await
        .map_err(|source| ServiceError::Bind {
            addr: config.bind.to_string(),
            source,
        })?;
    serve_until(AppState::new(engine), &config, listener, shutdown_signal()).await
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending::<()>().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {},
        _ = term => {},
    }
    tracing::info!("shutdown requested");
}

//! Service configuration: built-in defaults, then a TOML or JSON file, then
//! `HUMBERT_*` environment variables.
//!
//! Environment keys map onto the config tree with `__` as the path separator
//! and case-insensitive segment matching, e.g. `HUMBERT_BIND`,
//! `HUMBERT_DEFAULTS__SEED=7`, `HUMBERT_GENERATOR__URL=http://host:9000`.
//! Values that parse as JSON are used as such; anything else is a string.

use std::net::SocketAddr;
use std::path::{Path, PathBuf};

use humbert::engine::EngineConfig;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::ServiceError;

pub const ENV_PREFIX: &str = "HUMBERT_";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServiceConfig {
    pub bind: SocketAddr,
    /// NDJSON corpus index written by `humbert ingest`.
    pub index: Option<PathBuf>,
    /// Allowed browser origins; `"*"` allows any.
    pub cors_origins: Vec<String>,
    /// Where to write the turn logs of live sessions on shutdown.
    pub snapshot: Option<PathBuf>,
    #[serde(flatten)]
    pub engine: EngineConfig,
}

impl Default for ServiceConfig {
    fn default() -> Self {
        Self {
            bind: SocketAddr::from(([127, 0, 0, 1], 8080)),
            index: None,
            cors_origins: vec!["*".into()],
            snapshot: None,
            engine: EngineConfig::default(),
        }
    }
}

impl ServiceConfig {
    /// Defaults, overlaid with `path` (if any) and the process environment.
    pub fn load(path: Option<&Path>) -> Result<Self, ServiceError> {
        Self::load_with_env(path, std::env::vars())
    }

    pub fn load_with_env(
        path: Option<&Path>,
        env: impl IntoIterator<Item = (String, String)>,
    ) -> Result<Self, ServiceError> {
        let mut tree = serde_json::to_value(Self::default()).expect("defaults serialize");
        if let Some(path) = path {
            let text = std::fs::read_to_string(path).map_err(|source| ServiceError::Io {
                path: path.to_path_buf(),
                source,
            })?;
            merge(&mut tree, parse_file(path, &text)?);
        }
        let mut env: Vec<(String, String)> = env
            .into_iter()
            .filter(|(k, _)| k.starts_with(ENV_PREFIX) && k.len() > ENV_PREFIX.len())
            .collect();
        env.sort();
        for (key, raw) in env {
            let segments: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(str::to_lowercase).collect();
            set_path(&mut tree, &segments, env_value(&raw));
        }
        serde_json::from_value(tree).map_err(|e| ServiceError::Config(e.to_string()))
    }
}

fn parse_file(path: &Path, text: &str) -> Result<Value, ServiceError> {
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    let value: Value = if is_json {
        serde_json::from_str(text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?
    } else {
        toml::from_str(text).map_err(|e| ServiceError::Config(format!("{}: {e}", path.display())))?
    };
    if !value.is_object() {
        return Err(ServiceError::Config(format!(
            "{}: top level must be a table",
            path.display()
        )));
    }
    Ok(value)
}

fn env_value(raw: &str) -> Value {
    serde_json::from_str(raw).unwrap_or_else(|_| Value::String(raw.to_string()))
}

/// Deep merge of tables; any other value replaces.
fn merge(base: &mut Value, over: Value) {
    match (base, over) {
        (Value::Object(b), Value::Object(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) => merge(slot, v),
                    None => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (slot, v) => *slot = v,
    }
}

fn set_path(tree: &mut Value, segments: &[String], value: Value) {
    let Some((head, rest)) = segments.split_first() else {
        *tree = value;
        return;
    };
    if !tree.is_object() {
        *tree = Value::Object(Map::new());
    }
    let map = tree.as_object_mut().expect("object");
    let key = map
        .keys()
        .find(|k| k.eq_ignore_ascii_case(head))
        .cloned()
        .unwrap_or_else(|| head.clone());
    set_path(map.entry(key).or_insert(Value::Null), rest, value);
}

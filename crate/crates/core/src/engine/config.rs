use std::time::Duration;

use serde::{Deserialize, Serialize};

use crate::backends::local::{DEFAULT_EMBED_DIM, DEFAULT_NGRAM_SEED};
use crate::backends::remote::{Endpoint, CLASSIFY_TIMEOUT, EMBED_TIMEOUT, GENERATE_TIMEOUT};
use crate::reply::DEFAULT_MAX_TOKENS;

use super::EngineError;

/// Per-session tunables. A snapshot is stored with every session.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct SessionParams {
    /// Candidates generated per turn.
    #[serde(rename = "P", alias = "p")]
    pub p: usize,
    /// History capacity, in utterances.
    #[serde(rename = "R", alias = "r")]
    pub r: usize,
    /// Subcontext half-width, in sentences.
    pub w: usize,
    pub seed: u64,
    pub max_tokens: usize,
    /// Restrict the routed case to sentences `0..=m_limit`.
    #[serde(rename = "M", alias = "m", skip_serializing_if = "Option::is_none")]
    pub m_limit: Option<usize>,
}

impl Default for SessionParams {
    fn default() -> Self {
        Self {
            p: 5,
            r: 6,
            w: 2,
            seed: DEFAULT_NGRAM_SEED,
            max_tokens: DEFAULT_MAX_TOKENS,
            m_limit: None,
        }
    }
}

impl SessionParams {
    pub fn validate(&self) -> Result<(), EngineError> {
        if self.p == 0 {
            return Err(EngineError::InvalidArgument("P must be at least 1".into()));
        }
        if self.r == 0 {
            return Err(EngineError::InvalidArgument("R must be at least 1".into()));
        }
        if self.max_tokens == 0 {
            return Err(EngineError::InvalidArgument("max_tokens must be at least 1".into()));
        }
        Ok(())
    }

    /// Applies the optional overrides that arrive with a new session.
    pub fn with_overrides(&self, o: &ParamOverrides) -> Self {
        Self {
            p: o.p.unwrap_or(self.p),
            r: o.r.unwrap_or(self.r),
            w: o.w.unwrap_or(self.w),
            seed: o.seed.unwrap_or(self.seed),
            max_tokens: o.max_tokens.unwrap_or(self.max_tokens),
            m_limit: o.m.or(self.m_limit),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    #[serde(rename = "P", default, skip_serializing_if = "Option::is_none")]
    pub p: Option<usize>,
    #[serde(rename = "R", default, skip_serializing_if = "Option::is_none")]
    pub r: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub w: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_tokens: Option<usize>,
    #[serde(rename = "M", default, skip_serializing_if = "Option::is_none")]
    pub m: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendChoice {
    #[default]
    Local,
    Remote {
        url: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        timeout_ms: Option<u64>,
        /// Embedders only: declared vector width. Probed when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dim: Option<usize>,
    },
}

impl BackendChoice {
    pub fn remote(url: impl Into<String>) -> Self {
        BackendChoice::Remote {
            url: url.into(),
            timeout_ms: None,
            dim: None,
        }
    }

    pub(crate) fn endpoint(&self, default_timeout: Duration) -> Option<Endpoint> {
        match self {
            BackendChoice::Local => None,
            BackendChoice::Remote { url, timeout_ms, .. } => Some(Endpoint::new(
                url.clone(),
                timeout_ms.map_or(default_timeout, Duration::from_millis),
            )),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub defaults: SessionParams,
    pub classifier: BackendChoice,
    pub embedder: BackendChoice,
    pub generator: BackendChoice,
    /// Fall back to the local backend when a remote one fails.
    pub fallback: bool,
    /// Routing below this max logit is flagged as low confidence.
    pub low_confidence_threshold: f64,
    /// Rank cap for the per-case LSA embedder.
    pub embed_dim: usize,
    /// Rank of the LSA classifier; full rank when absent.
    pub lsa_rank: Option<usize>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            defaults: SessionParams::default(),
            classifier: BackendChoice::Local,
            embedder: BackendChoice::Local,
            generator: BackendChoice::Local,
            fallback: false,
            low_confidence_threshold: 0.05,
            embed_dim: DEFAULT_EMBED_DIM,
            lsa_rank: None,
        }
    }
}

pub(crate) const TIMEOUTS: (Duration, Duration, Duration) = (CLASSIFY_TIMEOUT, EMBED_TIMEOUT, GENERATE_TIMEOUT);

//! JSON-over-HTTP clients for an external inference service.
//!
//! | endpoint          | request                                         | response                        |
//! |-------------------|-------------------------------------------------|---------------------------------|
//! | `POST /classify`  | `{"text"}`                                      | `{"logits":[..],"k":K}`         |
//! | `POST /embed`     | `{"texts":[..],"case_id"}`                      | `{"vectors":[[..],..],"dim":d}` |
//! | `POST /generate`  | `{"seed","n","max_tokens","rng_seed"}`          | `{"candidates":[..]}`           |

use std::io::ErrorKind;
use std::time::Duration;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::BackendError;
use crate::read::EmbeddingBackend;
use crate::reply::{GenerationParams, GeneratorBackend};
use crate::seek::{CaseClassifier, LogitVector};
use crate::textnum::DenseVector;

pub const CLASSIFY_TIMEOUT: Duration = Duration::from_secs(10);
pub const EMBED_TIMEOUT: Duration = Duration::from_secs(30);
pub const GENERATE_TIMEOUT: Duration = Duration::from_secs(60);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Endpoint {
    pub base_url: String,
    #[serde(with = "millis")]
    pub timeout: Duration,
}

impl Endpoint {
    pub fn new(base_url: impl Into<String>, timeout: Duration) -> Self {
        Self {
            base_url: base_url.into().trim_end_matches('/').to_string(),
            timeout,
        }
    }
}

mod millis {
    use std::time::Duration;

    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(d: &Duration, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_u64(d.as_millis() as u64)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Duration, D::Error> {
        u64::deserialize(d).map(Duration::from_millis)
    }
}

#[derive(Debug)]
struct JsonClient {
    agent: ureq::Agent,
    endpoint: Endpoint,
}

impl JsonClient {
    fn new(endpoint: Endpoint) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(endpoint.timeout))
            .http_status_as_error(false)
            .build()
            .new_agent();
        Self { agent, endpoint }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.endpoint.base_url, path)
    }

    fn map_err(&self, url: &str, e: ureq::Error) -> BackendError {
        let timed_out = match &e {
            ureq::Error::Timeout(_) => true,
            ureq::Error::Io(io) => matches!(io.kind(), ErrorKind::TimedOut | ErrorKind::WouldBlock),
            _ => false,
        };
        if timed_out {
            BackendError::Timeout {
                endpoint: url.to_string(),
                timeout_ms: self.endpoint.timeout.as_millis() as u64,
            }
        } else {
            BackendError::Transport {
                endpoint: url.to_string(),
                message: e.to_string(),
            }
        }
    }

    fn post<Req: Serialize, Resp: DeserializeOwned>(&self, path: &str, body: &Req) -> Result<Resp, BackendError> {
        let url = self.url(path);
        let payload = serde_json::to_string(body).expect("request types serialize");
        let mut resp = self
            .agent
            .post(&url)
            .header("content-type", "application/json")
            .send(payload)
            .map_err(|e| self.map_err(&url, e))?;
        let status = resp.status().as_u16();
        if !(200..300).contains(&status) {
            return Err(BackendError::Status { endpoint: url, status });
        }
        let text = resp.body_mut().read_to_string().map_err(|e| self.map_err(&url, e))?;
        serde_json::from_str(&text).map_err(|e| BackendError::Malformed {
            endpoint: url,
            message: e.to_string(),
        })
    }

    fn get_ok(&self, path: &str) -> Result<(), BackendError> {
        let url = self.url(path);
        let resp = self.agent.get(&url).call().map_err(|e| self.map_err(&url, e))?;
        let status = resp.status().as_u16();
        if (200..300).contains(&status) {
            Ok(())
        } else {
            Err(BackendError::Status { endpoint: url, status })
        }
    }
}

#[derive(Serialize)]
struct ClassifyRequest<'a> {
    text: &'a str,
}

#[derive(Deserialize)]
struct ClassifyResponse {
    logits: Vec<f64>,
    k: usize,
}

/// Remote K-way case classifier.
#[derive(Debug)]
pub struct RemoteClassifier {
    client: JsonClient,
    k: usize,
    name: String,
}

pub fn remote_classifier(endpoint: Endpoint, k: usize) -> RemoteClassifier {
    RemoteClassifier::new(endpoint, k)
}

impl RemoteClassifier {
    pub fn new(endpoint: Endpoint, k: usize) -> Self {
        let name = format!("remote-classifier:{}", endpoint.base_url);
        Self {
            client: JsonClient::new(endpoint),
            k,
            name,
        }
    }

    /// `GET {base}/healthz` must answer 2xx.
    pub fn health_check(&self) -> Result<(), BackendError> {
        self.client.get_ok("/healthz")
    }
}

impl CaseClassifier for RemoteClassifier {
    fn name(&self) -> &str {
        &self.name
    }

    fn k(&self) -> usize {
        self.k
    }

    fn classify(&self, query: &str) -> Result<LogitVector, BackendError> {
        let resp: ClassifyResponse = self.client.post("/classify", &ClassifyRequest { text: query })?;
        if resp.k != self.k || resp.logits.len() != self.k {
            return Err(BackendError::WrongK {
                expected: self.k,
                got: if resp.logits.len() != self.k {
                    resp.logits.len()
                } else {
                    resp.k
                },
            });
        }
        if resp.logits.iter().any(|v| !v.is_finite()) {
            return Err(BackendError::Malformed {
                endpoint: self.client.url("/classify"),
                message: "non-finite logit".into(),
            });
        }
        Ok(LogitVector(resp.logits))
    }
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
    case_id: &'a str,
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
    dim: usize,
}

/// Remote sentence encoder with a fixed, declared dimension.
#[derive(Debug)]
pub struct RemoteEmbedder {
    client: JsonClient,
    dimension: usize,
    name: String,
}

impl RemoteEmbedder {
    pub fn new(endpoint: Endpoint, dimension: usize) -> Self {
        let name = format!("remote-embedder:{}", endpoint.base_url);
        Self {
            client: JsonClient::new(endpoint),
            dimension,
            name,
        }
    }

    /// Learns the dimension from one probe request.
    pub fn probe(endpoint: Endpoint) -> Result<Self, BackendError> {
        let client = JsonClient::new(endpoint.clone());
        let texts = ["probe".to_string()];
        let resp: EmbedResponse = client.post(
            "/embed",
            &EmbedRequest {
                texts: &texts,
                case_id: "",
            },
        )?;
        Ok(Self::new(endpoint, resp.dim))
    }
}

impl EmbeddingBackend for RemoteEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.dimension
    }

    fn embed(&self, texts: &[String], case_id: &str) -> Result<Vec<DenseVector>, BackendError> {
        let resp: EmbedResponse = self.client.post("/embed", &EmbedRequest { texts, case_id })?;
        if resp.dim != self.dimension {
            return Err(BackendError::Malformed {
                endpoint: self.client.url("/embed"),
                message: format!("dimension {} but expected {}", resp.dim, self.dimension),
            });
        }
        Ok(resp.vectors.into_iter().map(DenseVector).collect())
    }
}

#[derive(Serialize)]
struct GenerateRequest<'a> {
    seed: &'a str,
    n: usize,
    max_tokens: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    rng_seed: Option<u64>,
}

#[derive(Deserialize)]
struct GenerateResponse {
    candidates: Vec<String>,
}

/// Remote text generator.
#[derive(Debug)]
pub struct RemoteGenerator {
    client: JsonClient,
    name: String,
}

impl RemoteGenerator {
    pub fn new(endpoint: Endpoint) -> Self {
        let name = format!("remote-generator:{}", endpoint.base_url);
        Self {
            client: JsonClient::new(endpoint),
            name,
        }
    }
}

impl GeneratorBackend for RemoteGenerator {
    fn name(&self) -> &str {
        &self.name
    }

    fn generate(&self, seed: &str, n: usize, params: &GenerationParams) -> Result<Vec<String>, BackendError> {
        let resp: GenerateResponse = self.client.post(
            "/generate",
            &GenerateRequest {
                seed,
                n,
                max_tokens: params.max_tokens,
                rng_seed: params.rng_seed,
            },
        )?;
        Ok(resp.candidates)
    }
}

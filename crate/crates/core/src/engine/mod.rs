//! Session orchestration.
//!
//! A session routes its opening query to one case, then every turn runs, in
//! order:
//!
//! 1. push the human utterance onto the history,
//! 2. locate the most similar case sentence `j*`,
//! 3. generate `P` candidates from the subcontext around `j*`,
//! 4. pick the candidate with the highest average correlation to the history,
//! 5. push that reply onto the history.
//!
//! A turn works on a copy of the history and commits only when every stage
//! succeeded, so a failed turn leaves the session untouched.

mod config;
pub mod sweep;
pub mod transcript;

pub use config::{BackendChoice, EngineConfig, ParamOverrides, SessionParams};

use std::collections::HashMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::local::{LsaClassifier, LsaEmbedder, NgramGenerator};
use crate::backends::remote::{RemoteClassifier, RemoteEmbedder, RemoteGenerator};
use crate::backends::BackendError;
use crate::corpus::{CorpusIndex, SentenceSet};
use crate::read::{
    self, embed_checked, locate, similarity_to, subcontext, EmbeddingBackend, ReadError, SentenceEmbeddingIndex,
    Subcontext,
};
use crate::reply::{
    generate_candidates, CandidateSet, GenerationParams, GeneratorBackend, HistoryCache, ReplyError, Speaker,
};
use crate::seek::{select_case, CaseClassifier, LogitVector, SeekError};
use crate::textnum::DenseVector;

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("invalid state: {0}")]
    InvalidState(String),
    #[error("routing: {0}")]
    Seek(#[from] SeekError),
    #[error("retrieval: {0}")]
    Read(#[from] ReadError),
    #[error("reply: {0}")]
    Reply(#[from] ReplyError),
    #[error("{stage} backend: {source}")]
    Backend {
        stage: &'static str,
        #[source]
        source: BackendError,
    },
    #[error("case {0}: {1}")]
    CaseSetup(String, String),
}

impl EngineError {
    /// True when the failure came from a model backend rather than the input.
    pub fn is_backend(&self) -> bool {
        matches!(
            self,
            EngineError::Backend { .. }
                | EngineError::Seek(SeekError::Backend(_))
                | EngineError::Read(ReadError::Backend(_) | ReadError::IndexBuild { .. })
                | EngineError::Reply(
                    ReplyError::Backend(_) | ReplyError::ShortCandidates { .. } | ReplyError::EmptyCandidate(_)
                )
        )
    }
}

/// Provides an embedder for a given case.
pub trait EmbedderSource: Send + Sync {
    fn for_case(&self, sentences: &SentenceSet) -> Result<Arc<dyn EmbeddingBackend>, EngineError>;
}

/// Provides a generator for a given case.
pub trait GeneratorSource: Send + Sync {
    fn for_case(&self, sentences: &SentenceSet) -> Result<Arc<dyn GeneratorBackend>, EngineError>;
}

/// Per-case LSA embedders.
pub struct LocalEmbedders {
    pub max_dim: usize,
}

impl EmbedderSource for LocalEmbedders {
    fn for_case(&self, sentences: &SentenceSet) -> Result<Arc<dyn EmbeddingBackend>, EngineError> {
        LsaEmbedder::train(sentences, self.max_dim)
            .map(|e| Arc::new(e) as Arc<dyn EmbeddingBackend>)
            .map_err(|e| EngineError::CaseSetup(sentences.case_id.clone(), e.to_string()))
    }
}

/// Per-case n-gram generators.
pub struct LocalGenerators {
    pub seed: u64,
}

impl GeneratorSource for LocalGenerators {
    fn for_case(&self, sentences: &SentenceSet) -> Result<Arc<dyn GeneratorBackend>, EngineError> {
        NgramGenerator::train(sentences, self.seed)
            .map(|g| Arc::new(g) as Arc<dyn GeneratorBackend>)
            .map_err(|e| EngineError::CaseSetup(sentences.case_id.clone(), e.to_string()))
    }
}

/// One backend shared by every case.
pub struct Shared<T: ?Sized>(pub Arc<T>);

impl EmbedderSource for Shared<dyn EmbeddingBackend> {
    fn for_case(&self, _: &SentenceSet) -> Result<Arc<dyn EmbeddingBackend>, EngineError> {
        Ok(self.0.clone())
    }
}

impl GeneratorSource for Shared<dyn GeneratorBackend> {
    fn for_case(&self, _: &SentenceSet) -> Result<Arc<dyn GeneratorBackend>, EngineError> {
        Ok(self.0.clone())
    }
}

/// The three model slots, each with an optional fallback.
pub struct Backends {
    pub classifier: Arc<dyn CaseClassifier>,
    pub classifier_fallback: Option<Arc<dyn CaseClassifier>>,
    pub embedder: Arc<dyn EmbedderSource>,
    pub embedder_fallback: Option<Arc<dyn EmbedderSource>>,
    pub generator: Arc<dyn GeneratorSource>,
    pub generator_fallback: Option<Arc<dyn GeneratorSource>>,
}

impl Backends {
    /// All-local deterministic backends.
    pub fn local(index: &CorpusIndex, config: &EngineConfig) -> Result<Self, EngineError> {
        Ok(Self {
            classifier: Arc::new(local_classifier(index, config)?),
            classifier_fallback: None,
            embedder: Arc::new(LocalEmbedders {
                max_dim: config.embed_dim,
            }),
            embedder_fallback: None,
            generator: Arc::new(LocalGenerators {
                seed: config.defaults.seed,
            }),
            generator_fallback: None,
        })
    }

    pub fn from_config(index: &CorpusIndex, config: &EngineConfig) -> Result<Self, EngineError> {
        let mut b = Self::local(index, config)?;
        let (classify_t, embed_t, generate_t) = config::TIMEOUTS;
        if let Some(ep) = config.classifier.endpoint(classify_t) {
            let local = std::mem::replace(&mut b.classifier, Arc::new(RemoteClassifier::new(ep, index.k())));
            b.classifier_fallback = config.fallback.then_some(local);
        }
        if let Some(ep) = config.embedder.endpoint(embed_t) {
            let remote = match &config.embedder {
                BackendChoice::Remote { dim: Some(d), .. } => RemoteEmbedder::new(ep, *d),
                _ => RemoteEmbedder::probe(ep).map_err(|source| EngineError::Backend {
                    stage: "embedder",
                    source,
                })?,
            };
            let shared: Arc<dyn EmbeddingBackend> = Arc::new(remote);
            let local = std::mem::replace(&mut b.embedder, Arc::new(Shared(shared)));
            b.embedder_fallback = config.fallback.then_some(local);
        }
        if let Some(ep) = config.generator.endpoint(generate_t) {
            let shared: Arc<dyn GeneratorBackend> = Arc::new(RemoteGenerator::new(ep));
            let local = std::mem::replace(&mut b.generator, Arc::new(Shared(shared)));
            b.generator_fallback = config.fallback.then_some(local);
        }
        Ok(b)
    }
}

fn local_classifier(index: &CorpusIndex, config: &EngineConfig) -> Result<LsaClassifier, EngineError> {
    let trained = match config.lsa_rank {
        Some(k) => LsaClassifier::train(index, k),
        None => LsaClassifier::train_default(index),
    };
    trained.map_err(|e| EngineError::InvalidArgument(format!("lsa classifier: {e}")))
}

/// Conditions surfaced alongside a turn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Flag {
    LowConfidence,
    ClassifierFallback,
    EmbedderFallback,
    GeneratorFallback,
    DuplicateCandidates,
}

impl Flag {
    /// Wire name, as serialized.
    pub fn as_str(self) -> &'static str {
        match self {
            Flag::LowConfidence => "low_confidence",
            Flag::ClassifierFallback => "classifier_fallback",
            Flag::EmbedderFallback => "embedder_fallback",
            Flag::GeneratorFallback => "generator_fallback",
            Flag::DuplicateCandidates => "duplicate_candidates",
        }
    }
}

/// Everything that happened in one exchange.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    /// 1 for the opening exchange, then 2, 3, ...
    pub k: usize,
    pub human: String,
    pub j_star: usize,
    pub similarity: Vec<f64>,
    pub subcontext: Subcontext,
    pub candidates: Vec<String>,
    pub rho: Vec<f64>,
    pub selected: usize,
    pub reply: String,
    pub flags: Vec<Flag>,
    pub elapsed_ms: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Routing {
    pub case_id: String,
    pub case_index: usize,
    pub logits: LogitVector,
    pub classifier: String,
    pub low_confidence: bool,
    pub fallback: bool,
}

/// Models and embeddings prepared for one (case, M) pair.
pub struct CaseResources {
    pub sentences: SentenceSet,
    pub embedder: Arc<dyn EmbeddingBackend>,
    pub embedder_fallback: bool,
    pub index: SentenceEmbeddingIndex,
    generator: Arc<dyn GeneratorSource>,
    generator_fallback: Option<Arc<dyn GeneratorSource>>,
    generators: Mutex<(LazyGenerator, LazyGenerator)>,
}

impl CaseResources {
    fn primary_generator(&self) -> Result<Arc<dyn GeneratorBackend>, EngineError> {
        let mut slots = self.generators.lock().expect("poisoned");
        if let Some(g) = &slots.0 {
            return Ok(g.clone());
        }
        let g = self.generator.for_case(&self.sentences)?;
        slots.0 = Some(g.clone());
        Ok(g)
    }

    fn fallback_generator(&self) -> Option<Result<Arc<dyn GeneratorBackend>, EngineError>> {
        let source = self.generator_fallback.as_ref()?;
        let mut slots = self.generators.lock().expect("poisoned");
        if let Some(g) = &slots.1 {
            return Some(Ok(g.clone()));
        }
        Some(source.for_case(&self.sentences).inspect(|g| slots.1 = Some(g.clone())))
    }
}

type LazyGenerator = Option<Arc<dyn GeneratorBackend>>;

#[derive(Clone)]
struct ActiveCase {
    routing: Routing,
    resources: Arc<CaseResources>,
}

/// One conversation. Created unstarted; [`Engine::start`] binds it to a case.
#[derive(Clone)]
pub struct Session {
    id: String,
    params: SessionParams,
    active: Option<ActiveCase>,
    history: HistoryCache,
    turns: Vec<TurnRecord>,
}

impl std::fmt::Debug for Session {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Session")
            .field("id", &self.id)
            .field("case_id", &self.case_id())
            .field("params", &self.params)
            .field("history", &self.history.len())
            .field("turns", &self.turns.len())
            .finish()
    }
}

impl Session {
    pub fn new(id: impl Into<String>, params: SessionParams) -> Result<Self, EngineError> {
        params.validate()?;
        let history = HistoryCache::new(params.r);
        Ok(Self {
            id: id.into(),
            params,
            active: None,
            history,
            turns: Vec::new(),
        })
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn params(&self) -> &SessionParams {
        &self.params
    }

    pub fn is_started(&self) -> bool {
        self.active.is_some()
    }

    pub fn case_id(&self) -> Option<&str> {
        self.active.as_ref().map(|a| a.routing.case_id.as_str())
    }

    /// Index of the last sentence of the (possibly truncated) routed case.
    pub fn m(&self) -> Option<usize> {
        self.active.as_ref().map(|a| a.resources.sentences.m())
    }

    pub fn routing(&self) -> Option<&Routing> {
        self.active.as_ref().map(|a| &a.routing)
    }

    pub fn history(&self) -> &HistoryCache {
        &self.history
    }

    pub fn turns(&self) -> &[TurnRecord] {
        &self.turns
    }

    pub fn sentences(&self) -> Option<&SentenceSet> {
        self.active.as_ref().map(|a| &a.resources.sentences)
    }
}

type ResourceKey = (String, Option<usize>);

pub struct Engine {
    index: Arc<CorpusIndex>,
    config: EngineConfig,
    backends: Backends,
    resources: Mutex<HashMap<ResourceKey, Arc<CaseResources>>>,
    next_id: AtomicU64,
}

impl Engine {
    pub fn new(index: Arc<CorpusIndex>, config: EngineConfig) -> Result<Self, EngineError> {
        let backends = Backends::from_config(&index, &config)?;
        Self::with_backends(index, config, backends)
    }

    pub fn with_backends(
        index: Arc<CorpusIndex>,
        config: EngineConfig,
        backends: Backends,
    ) -> Result<Self, EngineError> {
        config.defaults.validate()?;
        if backends.classifier.k() != index.k() {
            return Err(EngineError::InvalidArgument(format!(
                "classifier built for {} cases, corpus has {}",
                backends.classifier.k(),
                index.k()
            )));
        }
        Ok(Self {
            index,
            config,
            backends,
            resources: Mutex::new(HashMap::new()),
            next_id: AtomicU64::new(1),
        })
    }

    pub fn index(&self) -> &CorpusIndex {
        &self.index
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    /// A fresh, unstarted session with the default parameters plus overrides.
    pub fn new_session(&self, overrides: &ParamOverrides) -> Result<Session, EngineError> {
        let n = self.next_id.fetch_add(1, Ordering::Relaxed);
        Session::new(format!("s{n:06}"), self.config.defaults.with_overrides(overrides))
    }

    /// Convenience: new session plus its opening exchange.
    pub fn start_session(&self, q0: &str, overrides: &ParamOverrides) -> Result<(Session, TurnRecord), EngineError> {
        let mut session = self.new_session(overrides)?;
        let turn = self.start(&mut session, q0)?;
        Ok((session, turn))
    }

    /// Routes `q0`, prepares the case and produces the reply `q1`. On error
    /// the session stays unstarted.
    pub fn start(&self, session: &mut Session, q0: &str) -> Result<TurnRecord, EngineError> {
        if session.is_started() {
            return Err(EngineError::InvalidState("session already started".into()));
        }
        let q0 = q0.trim();
        if q0.is_empty() {
            return Err(EngineError::InvalidArgument("empty opening query".into()));
        }
        let clock = Instant::now();
        let routing = self.route(q0)?;
        let resources = self.resources_for(&routing.case_id, session.params.m_limit)?;

        let mut flags = Vec::new();
        if routing.low_confidence {
            flags.push(Flag::LowConfidence);
        }
        if routing.fallback {
            flags.push(Flag::ClassifierFallback);
        }
        if resources.embedder_fallback {
            flags.push(Flag::EmbedderFallback);
        }

        let mut history = HistoryCache::new(session.params.r);
        let q0_vec = self.embed_one(&resources, q0)?;
        history.push(q0, Speaker::Human, q0_vec.clone());
        let record = self.exchange(&resources, &session.params, &mut history, 1, q0, &q0_vec, flags, clock)?;

        session.active = Some(ActiveCase { routing, resources });
        session.history = history;
        session.turns.push(record.clone());
        Ok(record)
    }

    /// One human turn `s_k` and its reply `q_k`.
    pub fn step(&self, session: &mut Session, s_k: &str) -> Result<TurnRecord, EngineError> {
        let Some(active) = &session.active else {
            return Err(EngineError::InvalidState("session not started".into()));
        };
        let s_k = s_k.trim();
        if s_k.is_empty() {
            return Err(EngineError::InvalidArgument("empty message".into()));
        }
        let clock = Instant::now();
        let resources = active.resources.clone();
        let k = session.turns.len() + 1;

        let mut history = session.history.clone();
        let s_vec = self.embed_one(&resources, s_k)?;
        history.push(s_k, Speaker::Human, s_vec.clone());
        let flags = if resources.embedder_fallback {
            vec![Flag::EmbedderFallback]
        } else {
            Vec::new()
        };
        let record = self.exchange(&resources, &session.params, &mut history, k, s_k, &s_vec, flags, clock)?;

        session.history = history;
        session.turns.push(record.clone());
        Ok(record)
    }

    /// Read, generate, rerank, then push the reply. `history` already holds
    /// the human utterance.
    #[allow(clippy::too_many_arguments)]
    fn exchange(
        &self,
        res: &CaseResources,
        params: &SessionParams,
        history: &mut HistoryCache,
        k: usize,
        human: &str,
        query: &DenseVector,
        mut flags: Vec<Flag>,
        clock: Instant,
    ) -> Result<TurnRecord, EngineError> {
        let cs = similarity_to(query, &res.index)?;
        let j_star = locate(&cs)?;
        let sub = subcontext(&res.sentences, j_star, params.w)?;

        let gen_params = GenerationParams {
            max_tokens: params.max_tokens,
            rng_seed: Some(turn_seed(params.seed, k)),
        };
        let (candidates, used_fallback) = self.generate(res, &sub.text, params.p, &gen_params)?;
        if used_fallback {
            flags.push(Flag::GeneratorFallback);
        }
        let embeddings =
            embed_checked(res.embedder.as_ref(), &candidates, &res.sentences.case_id).map_err(|source| {
                EngineError::Backend {
                    stage: "embedder",
                    source,
                }
            })?;
        let (set, selected) = CandidateSet::score(candidates, embeddings, history)?;
        if set.duplicates() > 0 {
            flags.push(Flag::DuplicateCandidates);
        }
        let reply = set.candidates[selected].clone();
        history.push(reply.clone(), Speaker::Agent, set.embeddings[selected].clone());

        Ok(TurnRecord {
            k,
            human: human.to_string(),
            j_star,
            similarity: cs.0,
            subcontext: sub,
            candidates: set.candidates,
            rho: set.rho,
            selected,
            reply,
            flags,
            elapsed_ms: clock.elapsed().as_millis() as u64,
        })
    }

    fn generate(
        &self,
        res: &CaseResources,
        seed: &str,
        p: usize,
        params: &GenerationParams,
    ) -> Result<(Vec<String>, bool), EngineError> {
        let primary = res
            .primary_generator()
            .and_then(|g| generate_candidates(g.as_ref(), seed, p, params).map_err(EngineError::from));
        match primary {
            Ok(c) => Ok((c, false)),
            Err(e) if e.is_backend() || matches!(e, EngineError::CaseSetup(..)) => match res.fallback_generator() {
                Some(fallback) => {
                    tracing::warn!("generator failed, using fallback: {e}");
                    let g = fallback?;
                    Ok((generate_candidates(g.as_ref(), seed, p, params)?, true))
                }
                None => Err(e),
            },
            Err(e) => Err(e),
        }
    }

    fn embed_one(&self, res: &CaseResources, text: &str) -> Result<DenseVector, EngineError> {
        embed_checked(res.embedder.as_ref(), &[text.to_string()], &res.sentences.case_id)
            .map(|mut v| v.pop().expect("one vector per text"))
            .map_err(|source| EngineError::Backend {
                stage: "embedder",
                source,
            })
    }

    /// Runs the classifier on `query` and picks the case.
    pub fn route(&self, query: &str) -> Result<Routing, EngineError> {
        let ids = self.index.case_ids();
        let attempt = |c: &Arc<dyn CaseClassifier>| -> Result<(LogitVector, usize), SeekError> {
            let logits = c.classify(query)?;
            let (i, _) = select_case(&logits, &ids)?;
            Ok((logits, i))
        };
        let (logits, case_index, classifier, fallback) = match attempt(&self.backends.classifier) {
            Ok((l, i)) => (l, i, self.backends.classifier.name().to_string(), false),
            Err(e) => match &self.backends.classifier_fallback {
                Some(fb) => {
                    tracing::warn!("classifier failed, using fallback: {e}");
                    let (l, i) = attempt(fb)?;
                    (l, i, fb.name().to_string(), true)
                }
                None => return Err(e.into()),
            },
        };
        Ok(Routing {
            case_id: ids[case_index].to_string(),
            case_index,
            low_confidence: logits.max() < self.config.low_confidence_threshold,
            logits,
            classifier,
            fallback,
        })
    }

    /// Builds or reuses the embedder, sentence index and generator slot for a
    /// case, truncated to `m_limit` when given.
    pub fn resources_for(&self, case_id: &str, m_limit: Option<usize>) -> Result<Arc<CaseResources>, EngineError> {
        let key = (case_id.to_string(), m_limit);
        if let Some(r) = self.resources.lock().expect("poisoned").get(&key) {
            return Ok(r.clone());
        }
        let full = self
            .index
            .sentences_of(case_id)
            .ok_or_else(|| EngineError::InvalidArgument(format!("unknown case {case_id}")))?;
        let sentences = match m_limit {
            Some(m) => full.truncated(m),
            None => full.clone(),
        };

        let build = |source: &Arc<dyn EmbedderSource>| -> Result<(Arc<dyn EmbeddingBackend>, SentenceEmbeddingIndex), EngineError> {
            let embedder = source.for_case(&sentences)?;
            let index = read::build_index(&sentences, embedder.as_ref())?;
            Ok((embedder, index))
        };
        let (embedder, index, embedder_fallback) = match build(&self.backends.embedder) {
            Ok((e, i)) => (e, i, false),
            Err(e) if e.is_backend() => match &self.backends.embedder_fallback {
                Some(fb) => {
                    tracing::warn!("embedder failed for {case_id}, using fallback: {e}");
                    let (e, i) = build(fb)?;
                    (e, i, true)
                }
                None => return Err(e),
            },
            Err(e) => return Err(e),
        };

        let resources = Arc::new(CaseResources {
            sentences,
            embedder,
            embedder_fallback,
            index,
            generator: self.backends.generator.clone(),
            generator_fallback: self.backends.generator_fallback.clone(),
            generators: Mutex::new((None, None)),
        });
        self.resources.lock().expect("poisoned").insert(key, resources.clone());
        Ok(resources)
    }
}

/// Generator seed for turn `k`; independent of `P`, so candidate lists for
/// different `P` are prefixes of each other.
pub fn turn_seed(seed: u64, k: usize) -> u64 {
    seed ^ (k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15)
}

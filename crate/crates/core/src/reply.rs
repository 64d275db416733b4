//! Candidate generation, the conversation history cache and reranking by
//! average historical correlation.
//!
//! For candidate `a_l` and history entries `h_1..h_n`,
//! `rho_l = (1/n) * sum_k cos(h_k, a_l)`. The selected reply is the candidate
//! with the largest `rho_l` (lowest index on ties).

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::BackendError;
use crate::textnum::{argmax, cosine_similarity, DenseVector, MathError};

pub const DEFAULT_MAX_TOKENS: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GenerationParams {
    pub max_tokens: usize,
    pub rng_seed: Option<u64>,
}

impl Default for GenerationParams {
    fn default() -> Self {
        Self {
            max_tokens: DEFAULT_MAX_TOKENS,
            rng_seed: None,
        }
    }
}

pub trait GeneratorBackend: Send + Sync {
    fn name(&self) -> &str;

    /// Up to `n` continuations of `seed`. Callers validate the count.
    fn generate(&self, seed: &str, n: usize, params: &GenerationParams) -> Result<Vec<String>, BackendError>;
}

#[derive(Debug, Error)]
pub enum ReplyError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("history is empty")]
    EmptyHistory,
    #[error("generator returned {got} usable candidates, {expected} requested")]
    ShortCandidates { expected: usize, got: usize },
    #[error("generator returned an empty candidate at position {0}")]
    EmptyCandidate(usize),
    #[error("generator: {0}")]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Math(#[from] MathError),
}

/// Exactly `p` trimmed, non-empty candidates or an error.
pub fn generate_candidates(
    generator: &dyn GeneratorBackend,
    seed: &str,
    p: usize,
    params: &GenerationParams,
) -> Result<Vec<String>, ReplyError> {
    if p == 0 {
        return Err(ReplyError::InvalidArgument("P must be at least 1".into()));
    }
    if seed.trim().is_empty() {
        return Err(ReplyError::InvalidArgument("empty generation seed".into()));
    }
    let raw = generator.generate(seed, p, params)?;
    if raw.len() < p {
        return Err(ReplyError::ShortCandidates {
            expected: p,
            got: raw.len(),
        });
    }
    raw.into_iter()
        .take(p)
        .enumerate()
        .map(|(i, c)| {
            let c = c.trim();
            if c.is_empty() {
                Err(ReplyError::EmptyCandidate(i))
            } else {
                Ok(c.to_string())
            }
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Speaker {
    Human,
    Agent,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub text: String,
    pub speaker: Speaker,
    pub embedding: DenseVector,
    /// Insertion sequence number, strictly increasing within a cache.
    pub seq: u64,
}

/// FIFO store of the last `capacity` utterances.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryCache {
    capacity: usize,
    entries: VecDeque<Utterance>,
    next_seq: u64,
}

impl HistoryCache {
    pub fn new(capacity: usize) -> Self {
        assert!(capacity >= 1, "history capacity must be at least 1");
        Self {
            capacity,
            entries: VecDeque::with_capacity(capacity + 1),
            next_seq: 0,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Oldest first.
    pub fn entries(&self) -> impl DoubleEndedIterator<Item = &Utterance> + ExactSizeIterator {
        self.entries.iter()
    }

    pub fn texts(&self) -> Vec<&str> {
        self.entries.iter().map(|u| u.text.as_str()).collect()
    }

    pub fn push(&mut self, text: impl Into<String>, speaker: Speaker, embedding: DenseVector) {
        self.entries.push_back(Utterance {
            text: text.into(),
            speaker,
            embedding,
            seq: self.next_seq,
        });
        self.next_seq += 1;
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
    }
}

/// `rho` for one candidate. The divisor is the number of entries currently
/// held, not the nominal capacity.
pub fn avg_historical_correlation(h: &HistoryCache, candidate: &DenseVector) -> Result<f64, ReplyError> {
    if h.is_empty() {
        return Err(ReplyError::EmptyHistory);
    }
    let mut sum = 0.0;
    for entry in h.entries() {
        sum += cosine_similarity(&entry.embedding, candidate)?;
    }
    Ok(sum / h.len() as f64)
}

/// Candidates with their embeddings and scores, index-aligned.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    pub candidates: Vec<String>,
    pub embeddings: Vec<DenseVector>,
    pub rho: Vec<f64>,
}

impl CandidateSet {
    pub fn score(
        candidates: Vec<String>,
        embeddings: Vec<DenseVector>,
        h: &HistoryCache,
    ) -> Result<(Self, usize), ReplyError> {
        if candidates.len() != embeddings.len() {
            return Err(ReplyError::InvalidArgument(format!(
                "{} candidates but {} embeddings",
                candidates.len(),
                embeddings.len()
            )));
        }
        let ranking = rerank(&embeddings, h)?;
        Ok((
            Self {
                candidates,
                embeddings,
                rho: ranking.rho,
            },
            ranking.selected,
        ))
    }

    /// Number of candidates equal to an earlier candidate in the set.
    pub fn duplicates(&self) -> usize {
        self.candidates
            .iter()
            .enumerate()
            .filter(|(i, c)| self.candidates[..*i].contains(c))
            .count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ranking {
    pub selected: usize,
    pub rho: Vec<f64>,
}

pub fn rerank(candidate_embeddings: &[DenseVector], h: &HistoryCache) -> Result<Ranking, ReplyError> {
    if candidate_embeddings.is_empty() {
        return Err(ReplyError::InvalidArgument("no candidates".into()));
    }
    let rho = candidate_embeddings
        .iter()
        .map(|a| avg_historical_correlation(h, a))
        .collect::<Result<Vec<_>, _>>()?;
    let selected = argmax(&rho).expect("non-empty");
    Ok(Ranking { selected, rho })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(x: &[f64]) -> DenseVector {
        DenseVector(x.to_vec())
    }

    fn history(entries: &[&[f64]]) -> HistoryCache {
        let mut h = HistoryCache::new(8);
        for (i, e) in entries.iter().enumerate() {
            h.push(format!("h{i}"), Speaker::Human, v(e));
        }
        h
    }

    #[test]
    fn rho_examples() {
        let r = 0.5f64.sqrt();
        assert_eq!(
            avg_historical_correlation(&history(&[&[1.0, 0.0]]), &v(&[1.0, 0.0])).unwrap(),
            1.0
        );
        let got = avg_historical_correlation(&history(&[&[1.0, 0.0], &[0.0, 1.0]]), &v(&[r, r])).unwrap();
        assert!((got - r).abs() < 1e-12);
        let got = avg_historical_correlation(&history(&[&[1.0, 0.0], &[-1.0, 0.0]]), &v(&[1.0, 0.0])).unwrap();
        assert_eq!(got, 0.0);
    }

    #[test]
    fn rho_errors() {
        assert!(matches!(
            avg_historical_correlation(&HistoryCache::new(2), &v(&[1.0])),
            Err(ReplyError::EmptyHistory)
        ));
        assert!(matches!(
            avg_historical_correlation(&history(&[&[1.0, 0.0]]), &v(&[1.0])),
            Err(ReplyError::Math(_))
        ));
    }

    #[test]
    fn fifo_eviction() {
        let mut h = HistoryCache::new(2);
        for t in ["a", "b", "c"] {
            h.push(t, Speaker::Human, v(&[1.0]));
        }
        assert_eq!(h.texts(), ["b", "c"]);
        let seqs: Vec<u64> = h.entries().map(|u| u.seq).collect();
        assert_eq!(seqs, [1, 2]);

        let mut h = HistoryCache::new(1);
        h.push("a", Speaker::Human, v(&[1.0]));
        h.push("b", Speaker::Agent, v(&[1.0]));
        assert_eq!(h.texts(), ["b"]);
    }

    #[test]
    fn fresh_cache_holds_opening_query() {
        let mut h = HistoryCache::new(6);
        h.push("q0", Speaker::Human, v(&[1.0]));
        assert_eq!(h.texts(), ["q0"]);
    }

    #[test]
    fn rerank_tie_breaks_low() {
        // rho = [0.2, 0.9, 0.9] against a single history entry [1, 0].
        let h = history(&[&[1.0, 0.0]]);
        let c = |x: f64| v(&[x, (1.0 - x * x).sqrt()]);
        let ranking = rerank(&[c(0.2), c(0.9), c(0.9)], &h).unwrap();
        assert_eq!(ranking.selected, 1);
        assert!((ranking.rho[0] - 0.2).abs() < 1e-12);
        assert!((ranking.rho[1] - 0.9).abs() < 1e-12);
    }

    #[test]
    fn single_candidate_always_selected() {
        let h = history(&[&[1.0, 0.0]]);
        assert_eq!(rerank(&[v(&[-1.0, 0.0])], &h).unwrap().selected, 0);
    }

    struct Canned(Vec<&'static str>);

    impl GeneratorBackend for Canned {
        fn name(&self) -> &str {
            "canned"
        }

        fn generate(&self, _: &str, _: usize, _: &GenerationParams) -> Result<Vec<String>, BackendError> {
            Ok(self.0.iter().map(|s| s.to_string()).collect())
        }
    }

    #[test]
    fn candidate_contract() {
        let p = GenerationParams::default();
        assert_eq!(generate_candidates(&Canned(vec![" x "]), "seed", 1, &p).unwrap(), ["x"]);
        assert!(matches!(
            generate_candidates(&Canned(vec!["x", "", "y"]), "seed", 3, &p),
            Err(ReplyError::EmptyCandidate(1))
        ));
        assert!(matches!(
            generate_candidates(&Canned(vec!["x"]), "seed", 2, &p),
            Err(ReplyError::ShortCandidates { expected: 2, got: 1 })
        ));
        assert!(generate_candidates(&Canned(vec!["x"]), "  ", 1, &p).is_err());
        assert!(generate_candidates(&Canned(vec!["x"]), "seed", 0, &p).is_err());
    }

    #[test]
    fn duplicate_count() {
        let set = CandidateSet {
            candidates: vec!["a".into(), "b".into(), "a".into(), "a".into()],
            embeddings: vec![],
            rho: vec![],
        };
        assert_eq!(set.duplicates(), 2);
    }
}

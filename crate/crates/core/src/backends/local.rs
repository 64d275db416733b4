//! Offline backends: LSA embedder, LSA case classifier and an order-2
//! n-gram generator. All of them are deterministic.

use std::collections::{BTreeSet, HashMap};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::BackendError;
use crate::corpus::{CorpusIndex, SentenceSet};
use crate::read::EmbeddingBackend;
use crate::reply::{GenerationParams, GeneratorBackend};
use crate::seek::{CaseClassifier, LogitVector};
use crate::textnum::{cosine_similarity, tokenize, DenseVector, LsaModel, MathError, SvdOptions};

pub const DEFAULT_EMBED_DIM: usize = 64;
pub const DEFAULT_NGRAM_SEED: u64 = 0;
/// Generation stops at the first sentence-final token once this many tokens
/// have been produced.
pub const DEFAULT_MIN_REPLY_TOKENS: usize = 6;

/// LSA over the sentences of a single case.
#[derive(Debug, Clone)]
pub struct LsaEmbedder {
    name: String,
    case_id: String,
    model: LsaModel,
}

impl LsaEmbedder {
    /// Rank is `min(max_dim, sentence count, vocabulary size)`.
    pub fn train(sentences: &SentenceSet, max_dim: usize) -> Result<Self, MathError> {
        let docs: Vec<Vec<String>> = sentences.sentences.iter().map(|s| tokenize(s)).collect();
        let vocab: BTreeSet<&String> = docs.iter().flatten().collect();
        let rank = max_dim.min(docs.len()).min(vocab.len()).max(1);
        let model = LsaModel::fit(&docs, rank, SvdOptions::default())?;
        Ok(Self {
            name: format!("lsa:{}", sentences.case_id),
            case_id: sentences.case_id.clone(),
            model,
        })
    }

    pub fn model(&self) -> &LsaModel {
        &self.model
    }

    pub fn embed_text(&self, text: &str) -> DenseVector {
        self.model.project(&tokenize(text))
    }
}

impl EmbeddingBackend for LsaEmbedder {
    fn name(&self) -> &str {
        &self.name
    }

    fn dimension(&self) -> usize {
        self.model.rank()
    }

    fn embed(&self, texts: &[String], case_id: &str) -> Result<Vec<DenseVector>, BackendError> {
        if case_id != self.case_id {
            return Err(BackendError::Local(format!(
                "{} cannot embed for case {case_id}",
                self.name
            )));
        }
        Ok(texts.iter().map(|t| self.embed_text(t)).collect())
    }
}

/// Cosine between the projected query and each projected case body.
#[derive(Debug, Clone)]
pub struct LsaClassifier {
    model: LsaModel,
}

impl LsaClassifier {
    /// Case bodies are the concatenated sentences of each case.
    pub fn train(index: &CorpusIndex, k_lsa: usize) -> Result<Self, MathError> {
        let docs: Vec<Vec<String>> = index.sentence_sets().iter().map(|s| tokenize(&s.joined())).collect();
        let model = LsaModel::fit(&docs, k_lsa, SvdOptions::default())?;
        Ok(Self { model })
    }

    /// Full rank, `min(K, vocabulary size)`.
    pub fn train_default(index: &CorpusIndex) -> Result<Self, MathError> {
        let vocab: BTreeSet<String> = index
            .sentence_sets()
            .iter()
            .flat_map(|s| tokenize(&s.joined()))
            .collect();
        Self::train(index, index.k().min(vocab.len()).max(1))
    }
}

impl CaseClassifier for LsaClassifier {
    fn name(&self) -> &str {
        "lsa-classifier"
    }

    fn k(&self) -> usize {
        self.model.doc_count()
    }

    fn classify(&self, query: &str) -> Result<LogitVector, BackendError> {
        let q = self.model.project(&tokenize(query));
        (0..self.k())
            .map(|j| cosine_similarity(&q, &self.model.document(j)))
            .collect::<Result<Vec<_>, _>>()
            .map(LogitVector)
            .map_err(|e| BackendError::Local(e.to_string()))
    }
}

/// Successor counts in first-seen order, so sampling is reproducible.
#[derive(Debug, Clone, Default, PartialEq)]
struct Counts {
    items: Vec<(usize, u32)>,
    total: u32,
}

impl Counts {
    fn add(&mut self, token: usize) {
        match self.items.iter_mut().find(|(t, _)| *t == token) {
            Some((_, c)) => *c += 1,
            None => self.items.push((token, 1)),
        }
        self.total += 1;
    }

    fn sample<R: Rng>(&self, rng: &mut R) -> usize {
        let mut pick = rng.random_range(0..self.total);
        for &(t, c) in &self.items {
            if pick < c {
                return t;
            }
            pick -= c;
        }
        unreachable!("pick < total")
    }
}

/// Order-2 Markov generator over whitespace tokens of one case, with a
/// unigram fallback for unseen contexts.
///
/// Candidate `l` of a request draws from ChaCha stream `l` of the request
/// seed, so the first `p` candidates do not depend on how many are asked for.
#[derive(Debug, Clone)]
pub struct NgramGenerator {
    vocab: Vec<String>,
    lookup: HashMap<String, usize>,
    transitions: HashMap<(usize, usize), Counts>,
    unigram: Counts,
    seed: u64,
    min_tokens: usize,
}

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum NgramError {
    #[error("case {case_id}: needs at least 2 sentences")]
    TooShort { case_id: String },
    #[error("case {case_id}: vocabulary of {size} tokens is too small (need 3)")]
    TooSmall { case_id: String, size: usize },
}

pub fn train_ngram(sentences: &SentenceSet, seed: u64) -> Result<NgramGenerator, NgramError> {
    NgramGenerator::train(sentences, seed)
}

impl NgramGenerator {
    pub fn train(sentences: &SentenceSet, seed: u64) -> Result<Self, NgramError> {
        if sentences.len() < 2 {
            return Err(NgramError::TooShort {
                case_id: sentences.case_id.clone(),
            });
        }
        let mut vocab = Vec::new();
        let mut lookup = HashMap::new();
        let stream: Vec<usize> = sentences
            .sentences
            .iter()
            .flat_map(|s| s.split_whitespace())
            .map(|t| {
                *lookup.entry(t.to_string()).or_insert_with(|| {
                    vocab.push(t.to_string());
                    vocab.len() - 1
                })
            })
            .collect();
        if vocab.len() < 3 {
            return Err(NgramError::TooSmall {
                case_id: sentences.case_id.clone(),
                size: vocab.len(),
            });
        }
        let mut unigram = Counts::default();
        for &t in &stream {
            unigram.add(t);
        }
        let mut transitions: HashMap<(usize, usize), Counts> = HashMap::new();
        for w in stream.windows(3) {
            transitions.entry((w[0], w[1])).or_default().add(w[2]);
        }
        Ok(Self {
            vocab,
            lookup,
            transitions,
            unigram,
            seed,
            min_tokens: DEFAULT_MIN_REPLY_TOKENS,
        })
    }

    pub fn with_min_tokens(mut self, min_tokens: usize) -> Self {
        self.min_tokens = min_tokens;
        self
    }

    pub fn vocabulary(&self) -> &[String] {
        &self.vocab
    }

    /// `P(next | a, b)` from the bigram table, `None` for an unseen context.
    pub fn probability(&self, a: &str, b: &str, next: &str) -> Option<f64> {
        let ctx = (*self.lookup.get(a)?, *self.lookup.get(b)?);
        let counts = self.transitions.get(&ctx)?;
        let n = self
            .lookup
            .get(next)
            .and_then(|t| counts.items.iter().find(|(x, _)| x == t))
            .map_or(0, |(_, c)| *c);
        Some(f64::from(n) / f64::from(counts.total))
    }

    /// One continuation of `seed` using candidate stream `stream`.
    pub fn continuation(&self, seed: &str, max_tokens: usize, rng_seed: u64, stream: u64) -> String {
        let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
        rng.set_stream(stream);
        let tail: Vec<Option<usize>> = seed
            .split_whitespace()
            .rev()
            .take(2)
            .map(|t| self.lookup.get(t).copied())
            .collect();
        let (mut a, mut b) = match tail.as_slice() {
            [Some(last), Some(prev)] => (Some(*prev), Some(*last)),
            [Some(last), ..] => (None, Some(*last)),
            _ => (None, None),
        };

        let mut out: Vec<&str> = Vec::new();
        while out.len() < max_tokens {
            let dist = match (a, b) {
                (Some(x), Some(y)) => self.transitions.get(&(x, y)).unwrap_or(&self.unigram),
                _ => &self.unigram,
            };
            let next = dist.sample(&mut rng);
            let token = self.vocab[next].as_str();
            out.push(token);
            a = b;
            b = Some(next);
            if out.len() >= self.min_tokens && token.ends_with(['.', '!', '?']) {
                break;
            }
        }
        out.join(" ")
    }
}

impl GeneratorBackend for NgramGenerator {
    fn name(&self) -> &str {
        "ngram-2"
    }

    fn generate(&self, seed: &str, n: usize, params: &GenerationParams) -> Result<Vec<String>, BackendError> {
        let rng_seed = params.rng_seed.unwrap_or(self.seed);
        Ok((0..n)
            .map(|l| self.continuation(seed, params.max_tokens, rng_seed, l as u64))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(sentences: &[&str]) -> SentenceSet {
        SentenceSet {
            case_id: "c".into(),
            sentences: sentences.iter().map(|s| s.to_string()).collect(),
        }
    }

    #[test]
    fn bigram_counts() {
        let g = train_ngram(&set(&["a b c.", "a b d."]), 0).unwrap();
        assert_eq!(g.probability("a", "b", "c."), Some(0.5));
        assert_eq!(g.probability("a", "b", "d."), Some(0.5));
        assert_eq!(g.probability("d.", "a", "b"), None);
    }

    #[test]
    fn degenerate_chain_is_seed_independent() {
        let g = train_ngram(&set(&["the court held firm.", "the court held firm."]), 0)
            .unwrap()
            .with_min_tokens(1);
        let outs: BTreeSet<String> = (0..20).map(|s| g.continuation("the court", 40, s, 0)).collect();
        assert_eq!(outs.len(), 1);
        assert_eq!(outs.first().unwrap(), "held firm.");
    }

    #[test]
    fn fixed_seed_reproduces() {
        let g = train_ngram(
            &set(&[
                "the appellant filed an appeal.",
                "the court dismissed the appeal today.",
                "costs were awarded to the state.",
            ]),
            7,
        )
        .unwrap();
        let p = GenerationParams::default();
        let first = g.generate("the court", 3, &p).unwrap();
        assert_eq!(first, g.generate("the court", 3, &p).unwrap());
        let five = g.generate("the court", 5, &p).unwrap();
        assert_eq!(&five[..3], &first[..]);
        for c in &five {
            assert!(c.split_whitespace().all(|t| g.vocabulary().iter().any(|v| v == t)));
        }
    }

    #[test]
    fn too_small_vocabulary() {
        assert!(matches!(
            train_ngram(&set(&["a b", "a b"]), 0),
            Err(NgramError::TooSmall { size: 2, .. })
        ));
        assert!(matches!(
            train_ngram(&set(&["a b c"]), 0),
            Err(NgramError::TooShort { .. })
        ));
    }

    #[test]
    fn embedder_refuses_other_cases() {
        let e = LsaEmbedder::train(&set(&["rice stored in godown", "cashew export licence"]), 8).unwrap();
        assert_eq!(e.name(), "lsa:c");
        assert_eq!(e.dimension(), 2);
        assert!(e.embed(&["x".into()], "other").is_err());
    }
}

//! Subcontext retrieval within the routed case.
//!
//! Every sentence of the case is embedded once into a
//! [`SentenceEmbeddingIndex`]. Each query is embedded with the same backend,
//! scored against all sentences by cosine similarity, and the best-scoring
//! sentence together with `w` neighbours on either side becomes the
//! [`Subcontext`] handed to the generator.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::BackendError;
use crate::corpus::SentenceSet;
use crate::textnum::{argmax, cosine_similarity, DenseVector, MathError};

pub const DEFAULT_BATCH: usize = 16;

pub trait EmbeddingBackend: Send + Sync {
    /// Identifies the model; indexes built under one name are only usable
    /// with a backend of the same name.
    fn name(&self) -> &str;

    fn dimension(&self) -> usize;

    fn embed(&self, texts: &[String], case_id: &str) -> Result<Vec<DenseVector>, BackendError>;
}

#[derive(Debug, Error)]
pub enum ReadError {
    #[error("case {case_id}: needs at least 2 sentences, has {sentences}")]
    TooShort { case_id: String, sentences: usize },
    #[error("embedding sentence {sentence} failed: {source}")]
    IndexBuild {
        sentence: usize,
        #[source]
        source: BackendError,
    },
    #[error("index built with {index_backend} (dim {index_dim}) but queried with {backend} (dim {dim})")]
    Incompatible {
        index_backend: String,
        index_dim: usize,
        backend: String,
        dim: usize,
    },
    #[error("sentence index {index} outside 0..={m}")]
    OutOfRange { index: usize, m: usize },
    #[error("empty similarity array")]
    Empty,
    #[error("embedding: {0}")]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Math(#[from] MathError),
}

/// Embedded sentences of one case, aligned with the sentence order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SentenceEmbeddingIndex {
    pub case_id: String,
    pub backend: String,
    pub dimension: usize,
    pub vectors: Vec<DenseVector>,
}

/// `CS_j` for every sentence `j`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct SimilarityArray(pub Vec<f64>);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Subcontext {
    pub center: usize,
    pub window: usize,
    /// First sentence index, inclusive.
    pub start: usize,
    /// Last sentence index, inclusive.
    pub end: usize,
    pub text: String,
}

impl Subcontext {
    pub fn indices(&self) -> std::ops::RangeInclusive<usize> {
        self.start..=self.end
    }
}

/// Embeds `texts` and checks the response shape against the backend's
/// declared dimension.
pub fn embed_checked(
    backend: &dyn EmbeddingBackend,
    texts: &[String],
    case_id: &str,
) -> Result<Vec<DenseVector>, BackendError> {
    let vectors = backend.embed(texts, case_id)?;
    let malformed = |message: String| BackendError::Malformed {
        endpoint: backend.name().to_string(),
        message,
    };
    if vectors.len() != texts.len() {
        return Err(malformed(format!(
            "{} vectors for {} texts",
            vectors.len(),
            texts.len()
        )));
    }
    for (i, v) in vectors.iter().enumerate() {
        if v.len() != backend.dimension() {
            return Err(malformed(format!(
                "vector {i} has dimension {}, expected {}",
                v.len(),
                backend.dimension()
            )));
        }
        if !v.is_finite() {
            return Err(malformed(format!("vector {i} has non-finite entries")));
        }
    }
    Ok(vectors)
}

pub fn build_index(
    sentences: &SentenceSet,
    backend: &dyn EmbeddingBackend,
) -> Result<SentenceEmbeddingIndex, ReadError> {
    build_index_batched(sentences, backend, DEFAULT_BATCH)
}

/// Embeds sentences in batches. When a batch fails it is retried one
/// sentence at a time so the error can name the offending sentence.
pub fn build_index_batched(
    sentences: &SentenceSet,
    backend: &dyn EmbeddingBackend,
    batch: usize,
) -> Result<SentenceEmbeddingIndex, ReadError> {
    if sentences.len() < 2 {
        return Err(ReadError::TooShort {
            case_id: sentences.case_id.clone(),
            sentences: sentences.len(),
        });
    }
    let mut vectors = Vec::with_capacity(sentences.len());
    for (chunk_no, chunk) in sentences.sentences.chunks(batch.max(1)).enumerate() {
        let offset = chunk_no * batch.max(1);
        match embed_checked(backend, chunk, &sentences.case_id) {
            Ok(v) => vectors.extend(v),
            Err(batch_err) => {
                for (i, text) in chunk.iter().enumerate() {
                    let single =
                        embed_checked(backend, std::slice::from_ref(text), &sentences.case_id).map_err(|source| {
                            ReadError::IndexBuild {
                                sentence: offset + i,
                                source,
                            }
                        })?;
                    vectors.extend(single);
                }
                tracing::warn!(
                    case = %sentences.case_id,
                    offset,
                    "batch embed failed but single retries succeeded: {batch_err}"
                );
            }
        }
    }
    Ok(SentenceEmbeddingIndex {
        case_id: sentences.case_id.clone(),
        backend: backend.name().to_string(),
        dimension: backend.dimension(),
        vectors,
    })
}

pub fn check_compatible(idx: &SentenceEmbeddingIndex, backend: &dyn EmbeddingBackend) -> Result<(), ReadError> {
    if idx.backend != backend.name() || idx.dimension != backend.dimension() {
        return Err(ReadError::Incompatible {
            index_backend: idx.backend.clone(),
            index_dim: idx.dimension,
            backend: backend.name().to_string(),
            dim: backend.dimension(),
        });
    }
    Ok(())
}

/// Cosine similarity of every indexed sentence against an already embedded
/// query.
pub fn similarity_to(query: &DenseVector, idx: &SentenceEmbeddingIndex) -> Result<SimilarityArray, ReadError> {
    let values = idx
        .vectors
        .iter()
        .map(|s| cosine_similarity(query, s))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(SimilarityArray(values))
}

pub fn similarity_array(
    query: &str,
    idx: &SentenceEmbeddingIndex,
    backend: &dyn EmbeddingBackend,
) -> Result<SimilarityArray, ReadError> {
    check_compatible(idx, backend)?;
    let q = embed_checked(backend, &[query.to_string()], &idx.case_id)?
        .pop()
        .expect("one vector per text");
    similarity_to(&q, idx)
}

/// `j*`: argmax with ties to the lowest index.
pub fn locate(cs: &SimilarityArray) -> Result<usize, ReadError> {
    argmax(&cs.0).ok_or(ReadError::Empty)
}

/// Symmetric window of `w` sentences around `center`, clipped to the case.
pub fn subcontext(s: &SentenceSet, center: usize, w: usize) -> Result<Subcontext, ReadError> {
    let m = s.m();
    if s.is_empty() || center > m {
        return Err(ReadError::OutOfRange { index: center, m });
    }
    let start = center.saturating_sub(w);
    let end = center.saturating_add(w).min(m);
    Ok(Subcontext {
        center,
        window: w,
        start,
        end,
        text: s.sentences[start..=end].join(" "),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixed {
        vectors: Vec<Vec<f64>>,
        fail_on: Option<String>,
    }

    impl EmbeddingBackend for Fixed {
        fn name(&self) -> &str {
            "fixed"
        }

        fn dimension(&self) -> usize {
            2
        }

        fn embed(&self, texts: &[String], _: &str) -> Result<Vec<DenseVector>, BackendError> {
            texts
                .iter()
                .map(|t| {
                    if self.fail_on.as_deref() == Some(t.as_str()) {
                        return Err(BackendError::Local("boom".into()));
                    }
                    let i: usize = t.trim_start_matches('s').parse().unwrap_or(0);
                    Ok(DenseVector(self.vectors[i % self.vectors.len()].clone()))
                })
                .collect()
        }
    }

    fn set(n: usize) -> SentenceSet {
        SentenceSet {
            case_id: "c".into(),
            sentences: (0..n).map(|i| format!("s{i}")).collect(),
        }
    }

    fn fixed() -> Fixed {
        let r = 0.5f64.sqrt();
        Fixed {
            vectors: vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![r, r]],
            fail_on: None,
        }
    }

    #[test]
    fn hand_built_similarity_array() {
        let b = fixed();
        let idx = build_index(&set(3), &b).unwrap();
        let cs = similarity_array("s0", &idx, &b).unwrap();
        assert!((cs.0[0] - 1.0).abs() < 1e-12);
        assert!(cs.0[1].abs() < 1e-12);
        assert!((cs.0[2] - 0.5f64.sqrt()).abs() < 1e-12);
        assert_eq!(locate(&cs).unwrap(), 0);
    }

    #[test]
    fn build_error_names_the_sentence() {
        let b = Fixed {
            fail_on: Some("s1".into()),
            ..fixed()
        };
        match build_index(&set(3), &b) {
            Err(ReadError::IndexBuild { sentence: 1, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
        match build_index_batched(
            &set(5),
            &Fixed {
                fail_on: Some("s3".into()),
                ..fixed()
            },
            2,
        ) {
            Err(ReadError::IndexBuild { sentence: 3, .. }) => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn single_sentence_case_is_rejected() {
        assert!(matches!(
            build_index(&set(1), &fixed()),
            Err(ReadError::TooShort { .. })
        ));
    }

    #[test]
    fn incompatible_index_is_an_error() {
        let b = fixed();
        let mut idx = build_index(&set(3), &b).unwrap();
        idx.backend = "other".into();
        assert!(matches!(
            similarity_array("s0", &idx, &b),
            Err(ReadError::Incompatible { .. })
        ));
    }

    #[test]
    fn locate_ties() {
        assert_eq!(locate(&SimilarityArray(vec![0.1, 0.9, 0.3])).unwrap(), 1);
        assert_eq!(locate(&SimilarityArray(vec![0.5, 0.5])).unwrap(), 0);
        assert!(locate(&SimilarityArray(vec![])).is_err());
    }

    #[test]
    fn windows_clip_at_edges() {
        let eleven = set(11);
        assert_eq!(subcontext(&eleven, 5, 2).unwrap().indices(), 3..=7);
        assert_eq!(subcontext(&eleven, 0, 2).unwrap().indices(), 0..=2);
        let five = set(5);
        let sc = subcontext(&five, 4, 2).unwrap();
        assert_eq!(sc.indices(), 2..=4);
        assert_eq!(sc.text, "s2 s3 s4");
        assert_eq!(subcontext(&five, 3, 0).unwrap().text, "s3");
        assert!(matches!(
            subcontext(&five, 5, 1),
            Err(ReadError::OutOfRange { index: 5, m: 4 })
        ));
    }
}

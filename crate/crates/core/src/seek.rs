//! Case routing: a K-way classifier scores the opening query against every
//! case and the largest logit picks the case the session is bound to.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backends::local::LsaClassifier;
use crate::backends::BackendError;
use crate::corpus::CorpusIndex;
use crate::textnum::{argmax, MathError};

/// Logits in corpus case order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LogitVector(pub Vec<f64>);

impl LogitVector {
    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn max(&self) -> f64 {
        self.0.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

pub trait CaseClassifier: Send + Sync {
    fn name(&self) -> &str;

    /// Number of cases the classifier was built for.
    fn k(&self) -> usize;

    fn classify(&self, query: &str) -> Result<LogitVector, BackendError>;
}

#[derive(Debug, Error)]
pub enum SeekError {
    #[error("{got} logits for a corpus of {expected} cases")]
    LengthMismatch { expected: usize, got: usize },
    #[error("non-finite logit at index {0}")]
    NonFinite(usize),
    #[error(transparent)]
    Math(#[from] MathError),
    #[error("classifier: {0}")]
    Backend(#[from] BackendError),
}

/// Position and id of the argmax case; ties go to the lowest index.
pub fn select_case<'a, S: AsRef<str>>(logits: &LogitVector, case_ids: &'a [S]) -> Result<(usize, &'a str), SeekError> {
    if logits.len() != case_ids.len() || logits.is_empty() {
        return Err(SeekError::LengthMismatch {
            expected: case_ids.len(),
            got: logits.len(),
        });
    }
    if let Some(i) = logits.0.iter().position(|v| !v.is_finite()) {
        return Err(SeekError::NonFinite(i));
    }
    let i = argmax(&logits.0).expect("non-empty");
    Ok((i, case_ids[i].as_ref()))
}

/// LSA baseline: logits are cosine similarities between the projected query
/// and each projected case body.
pub fn train_baseline_classifier(index: &CorpusIndex, k_lsa: usize) -> Result<LsaClassifier, SeekError> {
    Ok(LsaClassifier::train(index, k_lsa)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn picks_argmax() {
        let ids = ["a", "b", "c"];
        assert_eq!(select_case(&LogitVector(vec![0.1, 0.9, 0.2]), &ids).unwrap(), (1, "b"));
        assert_eq!(select_case(&LogitVector(vec![-3.0, -1.0, -2.0]), &ids).unwrap().0, 1);
    }

    #[test]
    fn tie_goes_to_first_case() {
        assert_eq!(
            select_case(&LogitVector(vec![0.5, 0.5]), &["a", "b"]).unwrap(),
            (0, "a")
        );
    }

    #[test]
    fn rejects_wrong_length_and_nan() {
        assert!(matches!(
            select_case(&LogitVector(vec![1.0]), &["a", "b"]),
            Err(SeekError::LengthMismatch { expected: 2, got: 1 })
        ));
        assert!(matches!(
            select_case(&LogitVector(vec![1.0, f64::NAN]), &["a", "b"]),
            Err(SeekError::NonFinite(1))
        ));
    }
}

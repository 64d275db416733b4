use std::collections::{BTreeMap, BTreeSet};

use super::{DenseMatrix, DenseVector, MathError, Result};

/// TF-IDF over a fixed document collection.
///
/// `tf = count / document length`, `idf = ln(N / df)`. Vocabulary indices
/// follow lexicographic token order.
#[derive(Debug, Clone, PartialEq)]
pub struct TfidfModel {
    vocabulary: BTreeMap<String, usize>,
    idf: Vec<f64>,
    doc_matrix: DenseMatrix,
}

pub fn build_tfidf<S: AsRef<str>>(docs: &[Vec<S>]) -> Result<TfidfModel> {
    if docs.is_empty() {
        return Err(MathError::InvalidArgument("no documents".into()));
    }
    let tokens: BTreeSet<&str> = docs.iter().flatten().map(AsRef::as_ref).collect();
    if tokens.is_empty() {
        return Err(MathError::InvalidArgument("corpus has no tokens".into()));
    }
    let vocabulary: BTreeMap<String, usize> = tokens.iter().enumerate().map(|(i, t)| (t.to_string(), i)).collect();

    let mut df = vec![0usize; vocabulary.len()];
    for doc in docs {
        let seen: BTreeSet<usize> = doc.iter().map(|t| vocabulary[t.as_ref()]).collect();
        for i in seen {
            df[i] += 1;
        }
    }
    let n = docs.len() as f64;
    let idf: Vec<f64> = df.iter().map(|&d| (n / d as f64).ln()).collect();

    let mut model = TfidfModel {
        vocabulary,
        idf,
        doc_matrix: DenseMatrix::zeros(0, 0),
    };
    let mut values = Vec::with_capacity(docs.len() * model.vocabulary.len());
    for doc in docs {
        values.extend(model.vectorize(doc).0);
    }
    model.doc_matrix = DenseMatrix::new(docs.len(), model.vocabulary.len(), values)?;
    Ok(model)
}

impl TfidfModel {
    pub fn vocabulary(&self) -> &BTreeMap<String, usize> {
        &self.vocabulary
    }

    pub fn vocabulary_len(&self) -> usize {
        self.vocabulary.len()
    }

    pub fn idf(&self) -> &[f64] {
        &self.idf
    }

    /// Documents × vocabulary.
    pub fn doc_matrix(&self) -> &DenseMatrix {
        &self.doc_matrix
    }

    pub fn entry(&self, doc: usize, token: &str) -> Option<f64> {
        self.vocabulary.get(token).map(|&i| self.doc_matrix.get(doc, i))
    }

    /// TF-IDF vector for an arbitrary token list. Out-of-vocabulary tokens
    /// count toward the length but contribute no weight.
    pub fn vectorize<S: AsRef<str>>(&self, tokens: &[S]) -> DenseVector {
        let mut out = DenseVector::zeros(self.vocabulary.len());
        if tokens.is_empty() {
            return out;
        }
        let len = tokens.len() as f64;
        for t in tokens {
            if let Some(&i) = self.vocabulary.get(t.as_ref()) {
                out.0[i] += 1.0;
            }
        }
        for (v, idf) in out.0.iter_mut().zip(&self.idf) {
            *v = *v / len * idf;
        }
        out
    }
}

use super::{
    build_tfidf, truncated_svd, DenseMatrix, DenseVector, MathError, Result, SvdFactors, SvdOptions, TfidfModel,
};

/// TF-IDF model plus its rank-`k` factorization. Documents are represented by
/// the rows of `U_k Σ_k`; queries by `x V_k`.
#[derive(Debug, Clone)]
pub struct LsaModel {
    tfidf: TfidfModel,
    svd: SvdFactors,
    doc_repr: DenseMatrix,
}

impl LsaModel {
    pub fn fit<S: AsRef<str>>(docs: &[Vec<S>], rank: usize, opts: SvdOptions) -> Result<Self> {
        let tfidf = build_tfidf(docs)?;
        let m = tfidf.doc_matrix();
        if rank == 0 || rank > m.rows().min(m.cols()) {
            return Err(MathError::InvalidArgument(format!(
                "lsa rank {rank} outside 1..={}",
                m.rows().min(m.cols())
            )));
        }
        let svd = truncated_svd(m, rank, opts)?;
        let doc_repr = m.matmul(&svd.right)?;
        Ok(Self { tfidf, svd, doc_repr })
    }

    pub fn rank(&self) -> usize {
        self.svd.k
    }

    pub fn tfidf(&self) -> &TfidfModel {
        &self.tfidf
    }

    pub fn svd(&self) -> &SvdFactors {
        &self.svd
    }

    pub fn doc_count(&self) -> usize {
        self.doc_repr.rows()
    }

    /// Reduced representation of training document `j`.
    pub fn document(&self, j: usize) -> DenseVector {
        DenseVector(self.doc_repr.row(j).to_vec())
    }

    /// Projects a token list onto the right singular basis. Unknown tokens
    /// are ignored; an all-unknown query maps to the zero vector.
    pub fn project<S: AsRef<str>>(&self, tokens: &[S]) -> DenseVector {
        let x = self.tfidf.vectorize(tokens);
        let right = &self.svd.right;
        let mut out = DenseVector::zeros(self.svd.k);
        for (i, &xi) in x.iter().enumerate() {
            if xi == 0.0 {
                continue;
            }
            for (c, o) in out.0.iter_mut().enumerate() {
                *o += xi * right.get(i, c);
            }
        }
        out
    }
}

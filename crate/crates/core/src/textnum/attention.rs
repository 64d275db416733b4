use super::{softmax_rows, DenseMatrix, MathError, Result};

/// Whether the query-key scores are divided by `sqrt(d_k)` before softmax.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum AttentionScaling {
    /// `softmax(Q Kᵀ) V`.
    #[default]
    Unscaled,
    /// `softmax(Q Kᵀ / sqrt(d_k)) V`.
    SqrtDim,
}

/// `softmax(Q Kᵀ) V`, unscaled.
pub fn attention(q: &DenseMatrix, k: &DenseMatrix, v: &DenseMatrix) -> Result<DenseMatrix> {
    attention_with(q, k, v, AttentionScaling::Unscaled)
}

pub fn attention_with(
    q: &DenseMatrix,
    k: &DenseMatrix,
    v: &DenseMatrix,
    scaling: AttentionScaling,
) -> Result<DenseMatrix> {
    if q.cols() != k.cols() {
        return Err(MathError::InvalidArgument(format!(
            "query width {} != key width {}",
            q.cols(),
            k.cols()
        )));
    }
    if k.rows() != v.rows() {
        return Err(MathError::InvalidArgument(format!(
            "{} keys but {} values",
            k.rows(),
            v.rows()
        )));
    }
    let mut scores = q.matmul(&k.transpose())?;
    if scaling == AttentionScaling::SqrtDim && k.cols() > 0 {
        let scale = (k.cols() as f64).sqrt();
        scores = DenseMatrix::new(
            scores.rows(),
            scores.cols(),
            scores.values().iter().map(|s| s / scale).collect(),
        )?;
    }
    softmax_rows(&scores)?.matmul(v)
}

use super::{dot, norm, DenseMatrix, MathError, Result};

pub const DEFAULT_TOL: f64 = 1e-10;
pub const DEFAULT_MAX_SWEEPS: usize = 1000;

/// Rank-`k` factors `left · diag(singular) · rightᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct SvdFactors {
    pub k: usize,
    /// m × k, orthonormal columns.
    pub left: DenseMatrix,
    /// Non-increasing, non-negative.
    pub singular: Vec<f64>,
    /// n × k, orthonormal columns.
    pub right: DenseMatrix,
}

impl SvdFactors {
    pub fn reconstruct(&self) -> DenseMatrix {
        let mut scaled = self.left.clone();
        for r in 0..scaled.rows() {
            for c in 0..self.k {
                scaled.set(r, c, scaled.get(r, c) * self.singular[c]);
            }
        }
        scaled
            .matmul(&self.right.transpose())
            .expect("factor shapes agree by construction")
    }
}

/// Options for [`truncated_svd`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SvdOptions {
    /// Relative orthogonality threshold between column pairs.
    pub tol: f64,
    /// Maximum number of Jacobi sweeps.
    pub max_iter: usize,
}

impl Default for SvdOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_SWEEPS,
        }
    }
}

/// Best rank-`k` approximation via one-sided (Hestenes) Jacobi rotations.
///
/// The full decomposition is computed on the thinner orientation of `m` and
/// then truncated to the `k` largest singular triplets.
pub fn truncated_svd(m: &DenseMatrix, k: usize, opts: SvdOptions) -> Result<SvdFactors> {
    let (rows, cols) = (m.rows(), m.cols());
    if k == 0 || k > rows.min(cols) {
        return Err(MathError::InvalidArgument(format!(
            "rank {k} outside 1..={}",
            rows.min(cols)
        )));
    }
    if opts.tol.is_nan() || opts.tol <= 0.0 {
        return Err(MathError::InvalidArgument("tol must be positive".into()));
    }

    // Work on A = m or mᵀ so that A is tall (height >= width).
    let transposed = rows < cols;
    let a = if transposed { m.transpose() } else { m.clone() };
    let (height, width) = (a.rows(), a.cols());

    let mut columns: Vec<Vec<f64>> = (0..width).map(|c| a.column(c)).collect();
    let mut basis: Vec<Vec<f64>> = (0..width)
        .map(|c| {
            let mut e = vec![0.0; width];
            e[c] = 1.0;
            e
        })
        .collect();

    let mut sweeps = 0;
    loop {
        let mut rotated = false;
        for p in 0..width {
            for q in p + 1..width {
                let alpha = dot(&columns[p], &columns[p]);
                let beta = dot(&columns[q], &columns[q]);
                let gamma = dot(&columns[p], &columns[q]);
                if alpha == 0.0 || beta == 0.0 || gamma.abs() <= opts.tol * (alpha * beta).sqrt() {
                    continue;
                }
                rotated = true;
                let zeta = (beta - alpha) / (2.0 * gamma);
                let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = c * t;
                rotate(&mut columns, p, q, c, s);
                rotate(&mut basis, p, q, c, s);
            }
        }
        if !rotated {
            break;
        }
        sweeps += 1;
        if sweeps >= opts.max_iter {
            return Err(MathError::NoConvergence { iterations: sweeps });
        }
    }

    let sigma: Vec<f64> = columns.iter().map(|c| norm(c)).collect();
    let mut order: Vec<usize> = (0..width).collect();
    order.sort_by(|&i, &j| sigma[j].total_cmp(&sigma[i]));
    order.truncate(k);

    let floor = sigma.iter().copied().fold(0.0, f64::max) * 1e-13;
    let mut left_cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    let mut singular = Vec::with_capacity(k);
    for &i in &order {
        if sigma[i] > floor && sigma[i] > 0.0 {
            left_cols.push(columns[i].iter().map(|v| v / sigma[i]).collect());
            singular.push(sigma[i]);
        } else {
            left_cols.push(orthogonal_complement(&left_cols, height));
            singular.push(0.0);
        }
    }
    let right_cols: Vec<Vec<f64>> = order.iter().map(|&i| basis[i].clone()).collect();

    let (left, right) = if transposed {
        (from_columns(&right_cols, rows), from_columns(&left_cols, cols))
    } else {
        (from_columns(&left_cols, rows), from_columns(&right_cols, cols))
    };
    Ok(SvdFactors {
        k,
        left,
        singular,
        right,
    })
}

fn rotate(cols: &mut [Vec<f64>], p: usize, q: usize, c: f64, s: f64) {
    let (head, tail) = cols.split_at_mut(q);
    let (cp, cq) = (&mut head[p], &mut tail[0]);
    for (x, y) in cp.iter_mut().zip(cq.iter_mut()) {
        let (xp, yq) = (*x, *y);
        *x = c * xp - s * yq;
        *y = s * xp + c * yq;
    }
}

/// A unit vector orthogonal to every vector in `existing`, built by
/// Gram-Schmidt over the standard basis.
fn orthogonal_complement(existing: &[Vec<f64>], dim: usize) -> Vec<f64> {
    let mut best = vec![0.0; dim];
    let mut best_norm = -1.0;
    for e in 0..dim {
        let mut v = vec![0.0; dim];
        v[e] = 1.0;
        for u in existing {
            let proj = dot(&v, u);
            for (vi, ui) in v.iter_mut().zip(u) {
                *vi -= proj * ui;
            }
        }
        let n = norm(&v);
        if n > best_norm {
            best_norm = n;
            best = v;
        }
        if n > 0.5 {
            break;
        }
    }
    best.iter().map(|x| x / best_norm).collect()
}

fn from_columns(cols: &[Vec<f64>], rows: usize) -> DenseMatrix {
    let mut m = DenseMatrix::zeros(rows, cols.len());
    for (c, col) in cols.iter().enumerate() {
        for (r, &v) in col.iter().enumerate() {
            m.set(r, c, v);
        }
    }
    m
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(rows: &[&[f64]]) -> DenseMatrix {
        DenseMatrix::from_rows(&rows.iter().map(|r| r.to_vec()).collect::<Vec<_>>()).unwrap()
    }

    fn assert_unit_columns(mat: &DenseMatrix) {
        for c in 0..mat.cols() {
            assert!((norm(&mat.column(c)) - 1.0).abs() < 1e-6, "column {c}");
        }
    }

    #[test]
    fn diagonal_matrix() {
        let d = m(&[&[3.0, 0.0, 0.0], &[0.0, 2.0, 0.0], &[0.0, 0.0, 1.0]]);
        let f = truncated_svd(&d, 2, SvdOptions::default()).unwrap();
        assert!((f.singular[0] - 3.0).abs() < 1e-12);
        assert!((f.singular[1] - 2.0).abs() < 1e-12);
        let err = d.frobenius_distance_sq(&f.reconstruct()).unwrap();
        assert!((err - 1.0).abs() < 1e-12);
        assert_unit_columns(&f.left);
        assert_unit_columns(&f.right);
    }

    #[test]
    fn rank_one_matrix() {
        let r1 = m(&[&[1.0, 2.0], &[2.0, 4.0]]);
        let f = truncated_svd(&r1, 1, SvdOptions::default()).unwrap();
        assert!(r1.frobenius_distance_sq(&f.reconstruct()).unwrap() < 1e-20);
        assert!((f.singular[0] - 5.0).abs() < 1e-12);
    }

    #[test]
    fn tall_three_by_two() {
        let a = m(&[&[1.0, 0.0], &[0.0, 1.0], &[1.0, 1.0]]);
        let f = truncated_svd(&a, 1, SvdOptions::default()).unwrap();
        assert!((f.singular[0] - 3f64.sqrt()).abs() < 1e-12);
        let f = truncated_svd(&a.transpose(), 2, SvdOptions::default()).unwrap();
        assert!((f.singular[1] - 1.0).abs() < 1e-12);
        assert_eq!((f.left.rows(), f.right.rows()), (2, 3));
    }

    #[test]
    fn zero_matrix_still_has_unit_factors() {
        let z = DenseMatrix::zeros(2, 3);
        let f = truncated_svd(&z, 2, SvdOptions::default()).unwrap();
        assert_eq!(f.singular, vec![0.0, 0.0]);
        assert_unit_columns(&f.left);
        assert_unit_columns(&f.right);
        assert!(dot(&f.left.column(0), &f.left.column(1)).abs() < 1e-12);
    }

    #[test]
    fn rejects_bad_rank_and_tol() {
        let a = DenseMatrix::identity(2);
        assert!(truncated_svd(&a, 0, SvdOptions::default()).is_err());
        assert!(truncated_svd(&a, 3, SvdOptions::default()).is_err());
        let bad = SvdOptions {
            tol: 0.0,
            ..Default::default()
        };
        assert!(truncated_svd(&a, 1, bad).is_err());
    }

    #[test]
    fn reports_non_convergence() {
        let a = m(&[&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0], &[7.0, 8.0, 10.0]]);
        let opts = SvdOptions {
            tol: 1e-14,
            max_iter: 1,
        };
        assert_eq!(
            truncated_svd(&a, 2, opts),
            Err(MathError::NoConvergence { iterations: 1 })
        );
    }
}

//! Brute-force reference computations on plain nested `Vec`s. Nothing here
//! shares code with the library under test.

use std::collections::{BTreeMap, HashMap, HashSet};

pub type Mat = Vec<Vec<f64>>;

pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let mut ab = 0.0;
    let mut aa = 0.0;
    let mut bb = 0.0;
    for i in 0..a.len() {
        ab += a[i] * b[i];
        aa += a[i] * a[i];
        bb += b[i] * b[i];
    }
    if aa == 0.0 || bb == 0.0 {
        0.0
    } else {
        ab / (aa.sqrt() * bb.sqrt())
    }
}

/// `p_i = 1 / sum_j exp(x_j - x_i)`.
pub fn softmax(row: &[f64]) -> Vec<f64> {
    row.iter()
        .map(|&xi| 1.0 / row.iter().map(|&xj| (xj - xi).exp()).sum::<f64>())
        .collect()
}

pub fn attention(q: &Mat, k: &Mat, v: &Mat) -> Mat {
    q.iter()
        .map(|qi| {
            let scores: Vec<f64> = k.iter().map(|kj| qi.iter().zip(kj).map(|(a, b)| a * b).sum()).collect();
            let weights = softmax(&scores);
            let width = v.first().map_or(0, Vec::len);
            (0..width)
                .map(|c| weights.iter().zip(v).map(|(w, row)| w * row[c]).sum())
                .collect()
        })
        .collect()
}

/// `(doc, token) -> count/len * ln(N/df)` for every token present in a doc.
pub fn tfidf(docs: &[Vec<String>]) -> HashMap<(usize, String), f64> {
    let n = docs.len() as f64;
    let mut df: HashMap<&str, usize> = HashMap::new();
    for d in docs {
        let uniq: HashSet<&str> = d.iter().map(String::as_str).collect();
        for t in uniq {
            *df.entry(t).or_default() += 1;
        }
    }
    let mut out = HashMap::new();
    for (j, d) in docs.iter().enumerate() {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in d {
            *counts.entry(t).or_default() += 1;
        }
        for (t, c) in counts {
            let v = c as f64 / d.len() as f64 * (n / df[t] as f64).ln();
            out.insert((j, t.to_string()), v);
        }
    }
    out
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, descending.
#[allow(clippy::needless_range_loop)]
pub fn symmetric_eigenvalues(a: &Mat) -> Vec<f64> {
    let n = a.len();
    let mut a = a.clone();
    for _ in 0..200 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for row in a.iter_mut() {
                    let (akp, akq) = (row[p], row[q]);
                    row[p] = c * akp - s * akq;
                    row[q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut eig: Vec<f64> = (0..n).map(|i| a[i][i]).collect();
    eig.sort_by(|x, y| y.total_cmp(x));
    eig
}

/// Singular values of `m` (descending, length `min(rows, cols)`) from the
/// eigenvalues of the smaller Gram matrix.
pub fn singular_values(m: &Mat) -> Vec<f64> {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    let gram: Mat = if rows >= cols {
        (0..cols)
            .map(|i| (0..cols).map(|j| (0..rows).map(|r| m[r][i] * m[r][j]).sum()).collect())
            .collect()
    } else {
        (0..rows)
            .map(|i| (0..rows).map(|j| (0..cols).map(|c| m[i][c] * m[j][c]).sum()).collect())
            .collect()
    };
    symmetric_eigenvalues(&gram)
        .into_iter()
        .map(|e| e.max(0.0).sqrt())
        .collect()
}

/// Sum of squared singular values beyond the first `k`.
pub fn discarded_spectrum(m: &Mat, k: usize) -> f64 {
    singular_values(m).iter().skip(k).map(|s| s * s).sum()
}

pub fn frobenius_sq(m: &Mat) -> f64 {
    m.iter().flatten().map(|v| v * v).sum()
}

/// `|a - b| <= rel * max(|a|, |b|) + floor`.
pub fn close(a: f64, b: f64, rel: f64, floor: f64) -> bool {
    (a - b).abs() <= rel * a.abs().max(b.abs()) + floor
}

/// Index of the first maximum by linear scan.
pub fn argmax_scan(values: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..values.len() {
        if values[i] > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_sanity() {
        assert!((cosine(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]) - 0.974631846).abs() < 1e-9);
        let s = softmax(&[0.0, 3f64.ln()]);
        assert!((s[0] - 0.25).abs() < 1e-12);
        let sv = singular_values(&vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![1.0, 1.0]]);
        assert!((sv[0] - 3f64.sqrt()).abs() < 1e-12);
        assert!((sv[1] - 1.0).abs() < 1e-12);
        let a = attention(
            &vec![vec![1.0, 0.0]],
            &vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            &vec![vec![2.0, 0.0], vec![0.0, 2.0]],
        );
        assert!((a[0][0] - 1.4621171573).abs() < 1e-9);
        assert!((a[0][1] - 0.5378828427).abs() < 1e-9);
    }
}

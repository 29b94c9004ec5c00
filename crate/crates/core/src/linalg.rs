// SPDX-License-Identifier: Apache-2.0

//! Dense numeric kernels shared by the scoring modules.
//!
//! Everything here works on row-major `f64` storage. The matrices that show
//! up in post-hoc scoring are small enough (a few thousand columns at most)
//! that a straightforward dense layout beats any clever representation.

use std::cmp::Ordering;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{OodError, Result};

/// Row-major dense matrix of finite `f64` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseMatrix {
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

impl DenseMatrix {
    /// Wraps `data` as a `rows x cols` matrix, rejecting wrong lengths and
    /// non-finite entries.
    pub fn from_vec(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != rows * cols {
            return Err(OodError::DimensionMismatch(format!(
                "{} values cannot fill a {rows}x{cols} matrix",
                data.len()
            )));
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(OodError::NonFinite("matrix".into()));
        }
        Ok(DenseMatrix { rows, cols, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let cols = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != cols) {
            return Err(OodError::DimensionMismatch("ragged rows".into()));
        }
        Self::from_vec(rows.len(), cols, rows.concat())
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        DenseMatrix {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = 1.0;
        }
        m
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: f64) {
        self.data[i * self.cols + j] = v;
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn row_iter(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact on an empty-width matrix would panic
        (0..self.rows).map(move |i| self.row(i))
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        (0..self.rows).map(|i| self.get(i, j)).collect()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    pub fn transpose(&self) -> DenseMatrix {
        let mut t = Self::zeros(self.cols, self.rows);
        for i in 0..self.rows {
            for j in 0..self.cols {
                t.data[j * self.rows + i] = self.get(i, j);
            }
        }
        t
    }

    /// Largest absolute entry (0 for an empty matrix).
    pub fn max_abs(&self) -> f64 {
        self.data.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// Keeps only the first `k` columns.
    pub fn leading_columns(&self, k: usize) -> DenseMatrix {
        let k = k.min(self.cols);
        let mut out = Self::zeros(self.rows, k);
        for i in 0..self.rows {
            out.data[i * k..(i + 1) * k].copy_from_slice(&self.row(i)[..k]);
        }
        out
    }

    /// `self · v`.
    pub fn matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.cols {
            return Err(OodError::DimensionMismatch(format!(
                "{}x{} matrix times length-{} vector",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        Ok(self.row_iter().map(|r| dot(r, v)).collect())
    }

    /// `selfᵀ · v`.
    pub fn tr_matvec(&self, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.rows {
            return Err(OodError::DimensionMismatch(format!(
                "transpose of {}x{} matrix times length-{} vector",
                self.rows,
                self.cols,
                v.len()
            )));
        }
        let mut out = vec![0.0; self.cols];
        for (row, &s) in self.row_iter().zip(v) {
            for (o, &a) in out.iter_mut().zip(row) {
                *o += s * a;
            }
        }
        Ok(out)
    }
}

#[inline]
pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn l1_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x.abs()).sum()
}

pub fn l2_norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// `a · b`, parallel over output rows. Each output entry is accumulated in
/// the same order whatever the worker count.
pub fn matmul(a: &DenseMatrix, b: &DenseMatrix) -> Result<DenseMatrix> {
    if a.cols != b.rows {
        return Err(OodError::DimensionMismatch(format!(
            "{}x{} times {}x{}",
            a.rows, a.cols, b.rows, b.cols
        )));
    }
    let n = b.cols;
    let mut out = DenseMatrix::zeros(a.rows, n);
    if n == 0 {
        return Ok(out);
    }
    out.data
        .par_chunks_mut(n)
        .enumerate()
        .for_each(|(i, out_row)| {
            for (k, &aik) in a.row(i).iter().enumerate() {
                for (o, &bkj) in out_row.iter_mut().zip(b.row(k)) {
                    *o += aik * bkj;
                }
            }
        });
    Ok(out)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, &x) in v.iter().enumerate() {
        match best {
            Some((_, b)) if x <= b => {}
            _ => best = Some((i, x)),
        }
    }
    best.map(|(i, _)| i)
}

/// `log Σ exp(v)` with max subtraction.
pub fn log_sum_exp(v: &[f64]) -> f64 {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return m;
    }
    m + v.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Numerically stable softmax.
pub fn softmax(v: &[f64]) -> Vec<f64> {
    let m = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - m).exp()).collect();
    let total: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / total).collect()
}

/// `p`-th percentile (`p` in `[0, 100]`) with linear interpolation between
/// the closest ranks: rank `r = p/100 · (n-1)` on the ascending order.
pub fn percentile(values: &[f64], p: f64) -> Result<f64> {
    if values.is_empty() {
        return Err(OodError::EmptyInput("percentile of an empty set"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    percentile_sorted(&sorted, p)
}

/// Same as [`percentile`] for input already sorted ascending.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> Result<f64> {
    if sorted.is_empty() {
        return Err(OodError::EmptyInput("percentile of an empty set"));
    }
    if !(0.0..=100.0).contains(&p) {
        return Err(OodError::InvalidConfig(format!(
            "percentile {p} outside [0, 100]"
        )));
    }
    let rank = p / 100.0 * (sorted.len() - 1) as f64;
    let lo = rank.floor() as usize;
    let hi = rank.ceil() as usize;
    let frac = rank - lo as f64;
    if lo == hi || frac == 0.0 {
        return Ok(sorted[lo]);
    }
    Ok(sorted[lo] + frac * (sorted[hi] - sorted[lo]))
}

/// Indices ordered by descending value, ties broken by lower index.
pub fn argsort_desc(v: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[b].total_cmp(&v[a]).then(a.cmp(&b)));
    idx
}

/// Indices of the `k` largest entries, in descending order of value; ties
/// go to the lower index.
pub fn top_k(v: &[f64], k: usize) -> Vec<usize> {
    let mut idx = argsort_desc(v);
    idx.truncate(k);
    idx
}

/// Symmetric eigendecomposition `A = Q Λ Qᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenDecomposition {
    /// Sorted descending.
    pub eigenvalues: Vec<f64>,
    /// Column `j` is the eigenvector of `eigenvalues[j]`. The largest-magnitude
    /// entry of each column is positive.
    pub eigenvectors: DenseMatrix,
}

const JACOBI_MAX_SWEEPS: usize = 100;

/// Cyclic Jacobi eigensolver for symmetric matrices.
///
/// The first three sweeps only rotate off-diagonal entries above a threshold
/// of `0.2·S/n²` (S = sum of off-diagonal magnitudes); later sweeps rotate
/// everything and flush entries that no longer change the diagonal.
pub fn sym_eig(a: &DenseMatrix) -> Result<EigenDecomposition> {
    let n = a.rows;
    if a.cols != n {
        return Err(OodError::DimensionMismatch(format!(
            "eigensolve needs a square matrix, got {}x{}",
            a.rows, a.cols
        )));
    }
    let mut asym = 0.0_f64;
    for i in 0..n {
        for j in (i + 1)..n {
            asym = asym.max((a.get(i, j) - a.get(j, i)).abs());
        }
    }
    if asym > 1e-10 * a.max_abs().max(1.0) {
        return Err(OodError::NotSymmetric(asym));
    }

    // work on the symmetrized upper triangle
    let mut m = a.clone();
    for i in 0..n {
        for j in (i + 1)..n {
            let s = 0.5 * (a.get(i, j) + a.get(j, i));
            m.set(i, j, s);
            m.set(j, i, s);
        }
    }
    let mut v = DenseMatrix::identity(n);
    let mut diag: Vec<f64> = (0..n).map(|i| m.get(i, i)).collect();
    let mut base = diag.clone();
    let mut delta = vec![0.0; n];

    let mut converged = n <= 1;
    for sweep in 0..JACOBI_MAX_SWEEPS {
        if converged {
            break;
        }
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| m.get(p, q).abs())
            .sum();
        if off == 0.0 || off < f64::MIN_POSITIVE {
            converged = true;
            break;
        }
        let threshold = if sweep < 3 {
            0.2 * off / (n * n) as f64
        } else {
            0.0
        };
        for p in 0..n - 1 {
            for q in (p + 1)..n {
                let apq = m.get(p, q);
                let g = 100.0 * apq.abs();
                if sweep > 3
                    && diag[p].abs() + g == diag[p].abs()
                    && diag[q].abs() + g == diag[q].abs()
                {
                    m.set(p, q, 0.0);
                    continue;
                }
                if apq.abs() <= threshold {
                    continue;
                }
                let h = diag[q] - diag[p];
                let t = if h.abs() + g == h.abs() {
                    apq / h
                } else {
                    let theta = 0.5 * h / apq;
                    let t = 1.0 / (theta.abs() + (1.0 + theta * theta).sqrt());
                    if theta < 0.0 {
                        -t
                    } else {
                        t
                    }
                };
                let c = 1.0 / (1.0 + t * t).sqrt();
                let s = t * c;
                let tau = s / (1.0 + c);
                let h = t * apq;
                delta[p] -= h;
                delta[q] += h;
                diag[p] -= h;
                diag[q] += h;
                m.set(p, q, 0.0);
                let rotate = |m: &mut DenseMatrix, i: usize, j: usize, k: usize, l: usize| {
                    let g = m.get(i, j);
                    let h = m.get(k, l);
                    m.set(i, j, g - s * (h + g * tau));
                    m.set(k, l, h + s * (g - h * tau));
                };
                for j in 0..p {
                    rotate(&mut m, j, p, j, q);
                }
                for j in (p + 1)..q {
                    rotate(&mut m, p, j, j, q);
                }
                for j in (q + 1)..n {
                    rotate(&mut m, p, j, q, j);
                }
                for j in 0..n {
                    rotate(&mut v, j, p, j, q);
                }
            }
        }
        for p in 0..n {
            base[p] += delta[p];
            diag[p] = base[p];
            delta[p] = 0.0;
        }
    }
    if !converged {
        let off: f64 = (0..n)
            .flat_map(|p| ((p + 1)..n).map(move |q| (p, q)))
            .map(|(p, q)| m.get(p, q).abs())
            .sum();
        if off != 0.0 {
            return Err(OodError::ConvergenceFailure(JACOBI_MAX_SWEEPS));
        }
    }

    let order = argsort_desc(&diag);
    let eigenvalues: Vec<f64> = order.iter().map(|&k| diag[k]).collect();
    let mut eigenvectors = DenseMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let col = v.column(src);
        let pivot = col
            .iter()
            .enumerate()
            .fold((0, 0.0_f64), |(bi, bv), (i, x)| {
                if x.abs() > bv {
                    (i, x.abs())
                } else {
                    (bi, bv)
                }
            })
            .0;
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for (i, x) in col.iter().enumerate() {
            eigenvectors.set(i, dst, sign * x);
        }
    }
    Ok(EigenDecomposition {
        eigenvalues,
        eigenvectors,
    })
}

/// Max-abs deviation of `QᵀQ` from the identity.
pub fn orthonormality_error(q: &DenseMatrix) -> f64 {
    let k = q.cols();
    let mut worst = 0.0_f64;
    for a in 0..k {
        for b in a..k {
            let s: f64 = (0..q.rows()).map(|i| q.get(i, a) * q.get(i, b)).sum();
            let target = if a == b { 1.0 } else { 0.0 };
            worst = worst.max((s - target).abs());
        }
    }
    worst
}

pub(crate) fn cmp_f64(a: &f64, b: &f64) -> Ordering {
    a.partial_cmp(b).unwrap_or(Ordering::Equal)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn naive_matmul(a: &DenseMatrix, b: &DenseMatrix) -> DenseMatrix {
        let mut c = DenseMatrix::zeros(a.rows(), b.cols());
        for i in 0..a.rows() {
            for j in 0..b.cols() {
                let mut s = 0.0;
                for k in 0..a.cols() {
                    s += a.get(i, k) * b.get(k, j);
                }
                c.set(i, j, s);
            }
        }
        c
    }

    fn lcg_matrix(rows: usize, cols: usize, seed: u64) -> DenseMatrix {
        let mut state = seed.wrapping_mul(6364136223846793005).wrapping_add(1);
        let data = (0..rows * cols)
            .map(|_| {
                state = state
                    .wrapping_mul(6364136223846793005)
                    .wrapping_add(1442695040888963407);
                ((state >> 11) as f64 / (1u64 << 53) as f64) * 2.0 - 1.0
            })
            .collect();
        DenseMatrix::from_vec(rows, cols, data).unwrap()
    }

    fn max_diff(a: &DenseMatrix, b: &DenseMatrix) -> f64 {
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .fold(0.0, |m, (x, y)| m.max((x - y).abs()))
    }

    #[test]
    fn matmul_identity_and_hand_values() {
        let m = DenseMatrix::from_rows(&[vec![1.5, -2.0], vec![0.25, 4.0]]).unwrap();
        assert_eq!(matmul(&DenseMatrix::identity(2), &m).unwrap(), m);
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![3.0, 4.0]]).unwrap();
        let ones = DenseMatrix::from_rows(&[vec![1.0], vec![1.0]]).unwrap();
        assert_eq!(matmul(&a, &ones).unwrap().as_slice(), &[3.0, 7.0]);
    }

    #[test]
    fn matmul_matches_triple_loop() {
        let a = lcg_matrix(5, 7, 1);
        let b = lcg_matrix(7, 3, 2);
        assert!(max_diff(&matmul(&a, &b).unwrap(), &naive_matmul(&a, &b)) <= 1e-12);
    }

    #[test]
    fn matmul_rejects_nonconformable() {
        let a = DenseMatrix::zeros(2, 3);
        assert!(matches!(
            matmul(&a, &a),
            Err(OodError::DimensionMismatch(_))
        ));
    }

    #[test]
    fn softmax_spot_values() {
        assert_eq!(softmax(&[0.0; 4]), vec![0.25; 4]);
        let p = softmax(&[1000.0, 0.0]);
        assert!((p[0] - 1.0).abs() < 1e-15 && p[1] >= 0.0 && p[1] < 1e-300);
        // 40-digit reference values of exp(k)/(e + e^2 + e^3)
        let reference = [
            0.090_030_573_170_380_46,
            0.244_728_471_054_797_65,
            0.665_240_955_774_821_9,
        ];
        for (x, r) in softmax(&[1.0, 2.0, 3.0]).iter().zip(reference) {
            assert!((x - r).abs() <= 1e-12);
        }
    }

    #[test]
    fn percentile_spot_values() {
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0, 5.0], 50.0).unwrap(), 3.0);
        assert_eq!(percentile(&[1.0, 2.0, 3.0, 4.0], 100.0).unwrap(), 4.0);
        assert!((percentile(&[4.0, 1.0, 3.0, 2.0], 90.0).unwrap() - 3.7).abs() < 1e-12);
        assert!(matches!(
            percentile(&[], 50.0),
            Err(OodError::EmptyInput(_))
        ));
        assert!(percentile(&[1.0], 101.0).is_err());
    }

    #[test]
    fn top_k_breaks_ties_by_index() {
        assert_eq!(top_k(&[1.0, 3.0, 3.0, 2.0], 2), vec![1, 2]);
        assert_eq!(argmax(&[2.0, 5.0, 5.0]), Some(1));
        assert_eq!(argmax(&[]), None);
    }

    #[test]
    fn sym_eig_diagonal_and_2x2() {
        let d = DenseMatrix::from_rows(&[vec![3.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let e = sym_eig(&d).unwrap();
        assert_eq!(e.eigenvalues, vec![3.0, 1.0]);
        assert_eq!(e.eigenvectors, DenseMatrix::identity(2));

        let a = DenseMatrix::from_rows(&[vec![2.0, 1.0], vec![1.0, 2.0]]).unwrap();
        let e = sym_eig(&a).unwrap();
        assert!((e.eigenvalues[0] - 3.0).abs() < 1e-12);
        assert!((e.eigenvalues[1] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn sym_eig_rejects_asymmetric() {
        let a = DenseMatrix::from_rows(&[vec![1.0, 2.0], vec![0.0, 1.0]]).unwrap();
        assert!(matches!(sym_eig(&a), Err(OodError::NotSymmetric(_))));
    }

    fn reconstruct(e: &EigenDecomposition) -> DenseMatrix {
        let n = e.eigenvalues.len();
        let q = &e.eigenvectors;
        let mut out = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let s: f64 = (0..n)
                    .map(|k| q.get(i, k) * e.eigenvalues[k] * q.get(j, k))
                    .sum();
                out.set(i, j, s);
            }
        }
        out
    }

    fn random_symmetric(n: usize, seed: u64) -> DenseMatrix {
        let r = lcg_matrix(n, n, seed);
        let mut a = DenseMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                a.set(i, j, r.get(i, j) + r.get(j, i));
            }
        }
        a
    }

    #[test]
    fn sym_eig_reconstructs_random_6x6() {
        let a = random_symmetric(6, 9);
        let e = sym_eig(&a).unwrap();
        assert!(max_diff(&reconstruct(&e), &a) <= 1e-7 * a.max_abs());
        assert!(orthonormality_error(&e.eigenvectors) <= 1e-8);
        for j in 0..6 {
            let col = e.eigenvectors.column(j);
            let pivot = argsort_desc(&col.iter().map(|x| x.abs()).collect::<Vec<_>>())[0];
            assert!(col[pivot] > 0.0);
        }
    }

    proptest! {
        #[test]
        fn matmul_is_associative(seed in 0u64..1000, n in 1usize..6, k in 1usize..6) {
            let a = lcg_matrix(n, k, seed);
            let b = lcg_matrix(k, n + 1, seed + 1);
            let c = lcg_matrix(n + 1, 2, seed + 2);
            let left = matmul(&matmul(&a, &b).unwrap(), &c).unwrap();
            let right = matmul(&a, &matmul(&b, &c).unwrap()).unwrap();
            let scale = left.max_abs().max(1.0);
            prop_assert!(max_diff(&left, &right) <= 1e-9 * scale);
        }

        #[test]
        fn softmax_is_shift_invariant(v in prop::collection::vec(-50.0f64..50.0, 1..10), shift in -100.0f64..100.0) {
            let shifted: Vec<f64> = v.iter().map(|x| x + shift).collect();
            let a = softmax(&v);
            let b = softmax(&shifted);
            prop_assert!((a.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for (x, y) in a.iter().zip(&b) {
                prop_assert!((x - y).abs() <= 1e-12);
            }
        }

        #[test]
        fn percentile_is_monotone(v in prop::collection::vec(-1e3f64..1e3, 1..40), p in 0.0f64..100.0, q in 0.0f64..100.0) {
            let (lo, hi) = if p <= q { (p, q) } else { (q, p) };
            prop_assert!(percentile(&v, lo).unwrap() <= percentile(&v, hi).unwrap());
        }

        #[test]
        fn sym_eig_trace_and_order(seed in 0u64..500, n in 1usize..9) {
            let a = random_symmetric(n, seed);
            let e = sym_eig(&a).unwrap();
            let trace: f64 = (0..n).map(|i| a.get(i, i)).sum();
            prop_assert!((trace - e.eigenvalues.iter().sum::<f64>()).abs() <= 1e-9);
            prop_assert!(e.eigenvalues.windows(2).all(|w| w[0] >= w[1]));
            prop_assert!(max_diff(&reconstruct(&e), &a) <= 1e-7 * a.max_abs().max(f64::MIN_POSITIVE));
            prop_assert!(orthonormality_error(&e.eigenvectors) <= 1e-8);
        }
    }
}

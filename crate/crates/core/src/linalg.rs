//! Dense helpers shared by the solver and the trace computations.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

/// `Σ_i w_i x_i x_iᵀ` over the rows of `x` with nonzero weight.
///
/// Weights must be nonnegative. The product is formed as one GEMM on the
/// gathered, √w-scaled rows.
pub fn weighted_gram(x: &DMatrix<f64>, weights: &[f64]) -> DMatrix<f64> {
    let p = x.ncols();
    let active: Vec<usize> = (0..x.nrows()).filter(|&i| weights[i] > 0.0).collect();
    if active.is_empty() {
        return DMatrix::zeros(p, p);
    }
    let mut rows = DMatrix::<f64>::zeros(active.len(), p);
    for (k, &i) in active.iter().enumerate() {
        let s = weights[i].sqrt();
        for j in 0..p {
            rows[(k, j)] = s * x[(i, j)];
        }
    }
    let rows_t = rows.transpose();
    &rows_t * &rows
}

/// Adds `Σ_{i ∈ idx} delta_i x_i x_iᵀ` to `gram` in place.
pub fn gram_update(gram: &mut DMatrix<f64>, x: &DMatrix<f64>, idx: &[usize], delta: &[f64]) {
    if idx.is_empty() {
        return;
    }
    let p = x.ncols();
    let mut a_t = DMatrix::<f64>::zeros(p, idx.len());
    let mut b = DMatrix::<f64>::zeros(idx.len(), p);
    for (k, (&i, &d)) in idx.iter().zip(delta).enumerate() {
        for j in 0..p {
            let v = x[(i, j)];
            a_t[(j, k)] = v;
            b[(k, j)] = d * v;
        }
    }
    gram.gemm(1.0, &a_t, &b, 1.0);
}

/// `Xᵀ v` without materialising the transpose.
pub fn xt_times(x: &DMatrix<f64>, v: &DVector<f64>) -> DVector<f64> {
    x.tr_mul(v)
}

/// Largest eigenvalue of a symmetric positive semi-definite matrix by power
/// iteration.
pub fn psd_op_norm(a: &DMatrix<f64>) -> f64 {
    let n = a.nrows();
    if n == 0 {
        return 0.0;
    }
    let mut v = DVector::from_fn(n, |i, _| 1.0 + 0.01 * (i % 7) as f64);
    v /= v.norm();
    let mut est = 0.0;
    for _ in 0..100 {
        let w = a * &v;
        let norm = w.norm();
        if norm == 0.0 {
            return 0.0;
        }
        let next = v.dot(&w);
        v = w / norm;
        if (next - est).abs() <= 1e-6 * next.abs() {
            return next.max(norm);
        }
        est = next;
    }
    est
}

/// Cholesky factorisation of `a + shift·I`, or `None` when the shifted matrix
/// is not numerically positive definite.
pub fn shifted_cholesky(a: &DMatrix<f64>, shift: f64) -> Option<Cholesky<f64, Dyn>> {
    let mut m = a.clone();
    if shift != 0.0 {
        for i in 0..m.nrows() {
            m[(i, i)] += shift;
        }
    }
    let chol = Cholesky::new(m)?;
    let l = chol.l_dirty();
    let diag = l.diagonal();
    let max = diag.iter().cloned().fold(0.0f64, f64::max);
    let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 0.0) || min < 1e-7 * max {
        return None;
    }
    Some(chol)
}

/// `tr(A⁻¹ B)` given the Cholesky factor of A.
pub fn trace_solve(chol: &Cholesky<f64, Dyn>, b: &DMatrix<f64>) -> f64 {
    chol.solve(b).trace()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gram_matches_naive() {
        let x = DMatrix::from_fn(7, 3, |i, j| ((i * 3 + j * 5) % 11) as f64 - 4.0);
        let w = [1.0, 0.0, 2.0, 0.5, 0.0, 3.0, 1.0];
        let g = weighted_gram(&x, &w);
        let mut naive = DMatrix::zeros(3, 3);
        for (i, wi) in w.iter().enumerate() {
            let r = x.row(i).transpose();
            naive += *wi * &r * r.transpose();
        }
        assert!((g - &naive).norm() < 1e-12);

        let mut upd = weighted_gram(&x, &[1.0; 7]);
        gram_update(&mut upd, &x, &[1, 3, 4], &[-1.0, -0.5, -1.0]);
        let w2 = [1.0, 0.0, 1.0, 0.5, 0.0, 1.0, 1.0];
        assert!((upd - weighted_gram(&x, &w2)).norm() < 1e-12);
    }

    #[test]
    fn op_norm_of_diagonal() {
        let a = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 5.0, 2.0]));
        assert!((psd_op_norm(&a) - 5.0).abs() < 1e-4);
    }

    #[test]
    fn singular_matrix_has_no_factor() {
        let a = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        assert!(shifted_cholesky(&a, 0.0).is_none());
        assert!(shifted_cholesky(&a, 1.0).is_some());
    }
}

//! Small dense helpers shared by the solver and the sensitivity analysis.

use alloc::vec::Vec;

use nalgebra::{DMatrix, DVector};

pub fn inf_norm(v: &DVector<f64>) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Pick a maximal linearly independent subset of `rows` of `a`, in order.
///
/// Modified Gram-Schmidt; a row is dropped when its residual norm falls below
/// `tol` times its original norm.
pub fn independent_rows(a: &DMatrix<f64>, rows: &[usize], tol: f64) -> Vec<usize> {
    let mut basis: Vec<DVector<f64>> = Vec::new();
    let mut keep = Vec::new();
    for &r in rows {
        let mut v: DVector<f64> = a.row(r).transpose();
        let norm0 = v.norm();
        if norm0 == 0.0 {
            continue;
        }
        for q in &basis {
            let c = q.dot(&v);
            v.axpy(-c, q, 1.0);
        }
        let norm = v.norm();
        if norm > tol * norm0 {
            basis.push(v / norm);
            keep.push(r);
        }
    }
    keep
}

/// Solve the equality-constrained KKT system
///
/// ```text
/// [ H  Aᵀ ] [x]   [r1]
/// [ A  0  ] [y] = [r2]
/// ```
///
/// by LU with partial pivoting. Returns `None` when the system is singular.
pub fn solve_kkt(
    h: &DMatrix<f64>,
    a: &DMatrix<f64>,
    r1: &DVector<f64>,
    r2: &DVector<f64>,
) -> Option<(DVector<f64>, DVector<f64>)> {
    let n = h.nrows();
    let m = a.nrows();
    let mut k = DMatrix::zeros(n + m, n + m);
    k.view_mut((0, 0), (n, n)).copy_from(h);
    if m > 0 {
        k.view_mut((0, n), (n, m)).copy_from(&a.transpose());
        k.view_mut((n, 0), (m, n)).copy_from(a);
    }
    let mut rhs = DVector::zeros(n + m);
    rhs.rows_mut(0, n).copy_from(r1);
    if m > 0 {
        rhs.rows_mut(n, m).copy_from(r2);
    }
    let sol = k.lu().solve(&rhs)?;
    if sol.iter().any(|v| !v.is_finite()) {
        return None;
    }
    Some((sol.rows(0, n).into_owned(), sol.rows(n, m).into_owned()))
}

/// Rows `idx` of `a` stacked into a new matrix.
pub fn select_rows(a: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), a.ncols(), |i, j| a[(idx[i], j)])
}

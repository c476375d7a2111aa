//! Least squares and numerical rank on top of nalgebra's SVD.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Least-squares solution of `a x ~ b` (one right-hand side per column of `b`).
#[derive(Debug, Clone)]
pub struct LstsqFit {
    pub coef: DMatrix<f64>,
    /// Condition number of the column-scaled design.
    pub cond: f64,
    /// Root-mean-square residual over all entries of `b`.
    pub rms_residual: f64,
}

/// Solves `a x ~ b` by SVD after scaling each column of `a` to unit Euclidean norm.
///
/// Fails with `IllConditioned` when the scaled design has condition number above `cond_max`.
pub fn lstsq(a: &DMatrix<f64>, b: &DMatrix<f64>, cond_max: f64) -> Result<LstsqFit> {
    let (m, k) = a.shape();
    if b.nrows() != m {
        return Err(Error::DimensionMismatch { expected: m, found: b.nrows() });
    }
    if m < k {
        return Err(Error::InsufficientSamples { found: m, needed: k });
    }
    let scale = DVector::from_iterator(k, a.column_iter().map(|c| {
        let n = c.norm();
        if n > 0.0 { 1.0 / n } else { 1.0 }
    }));
    let mut scaled = a.clone();
    for (j, mut col) in scaled.column_iter_mut().enumerate() {
        col *= scale[j];
    }
    let svd = scaled.svd(true, true);
    let smax = svd.singular_values.max();
    let smin = svd.singular_values.min();
    let cond = if smin > 0.0 { smax / smin } else { f64::INFINITY };
    if !(cond <= cond_max) {
        return Err(Error::IllConditioned { cond });
    }
    let y = svd.solve(b, 0.0).map_err(|e| Error::Degenerate(e.to_string()))?;
    let mut coef = y;
    for (j, mut row) in coef.row_iter_mut().enumerate() {
        row *= scale[j];
    }
    let resid = a * &coef - b;
    let rms_residual = (resid.norm_squared() / resid.len().max(1) as f64).sqrt();
    Ok(LstsqFit { coef, cond, rms_residual })
}

/// Singular values in decreasing order.
pub fn singular_values(a: &DMatrix<f64>) -> Vec<f64> {
    let mut sv: Vec<f64> = a.singular_values().iter().copied().collect();
    sv.sort_by(|x, y| y.total_cmp(x));
    sv
}

/// Number of singular values above `rel * sigma_max`.
pub fn numerical_rank(sv: &[f64], rel: f64) -> usize {
    let smax = sv.iter().copied().fold(0.0, f64::max);
    sv.iter().filter(|&&s| s > rel * smax).count()
}

/// Ratio `sigma_{k-1} / sigma_k` (0-based, decreasing order), the gap below the first `k` values.
pub fn gap_after(sv: &[f64], k: usize) -> f64 {
    match (sv.get(k.wrapping_sub(1)), sv.get(k)) {
        (Some(&a), Some(&b)) if b > 0.0 => a / b,
        (Some(_), Some(_)) => f64::INFINITY,
        _ => f64::NAN,
    }
}

/// Orthonormal basis (columns) of the numerical null space of `a`.
pub fn null_space(a: &DMatrix<f64>, rel: f64) -> DMatrix<f64> {
    let n = a.ncols();
    // Square up so the full right singular basis is available.
    let square = if a.nrows() >= n {
        a.clone()
    } else {
        let mut p = DMatrix::zeros(n, n);
        p.rows_mut(0, a.nrows()).copy_from(a);
        p
    };
    let svd = square.svd(false, true);
    let vt = svd.v_t.expect("requested right singular vectors");
    let smax = svd.singular_values.max();
    let cols: Vec<DVector<f64>> = svd
        .singular_values
        .iter()
        .enumerate()
        .filter(|(_, &s)| s <= rel * smax)
        .map(|(i, _)| vt.row(i).transpose())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_polynomial_fit() {
        let ts: Vec<f64> = (1..=20).map(|k| k as f64 * 0.37).collect();
        let a = DMatrix::from_fn(ts.len(), 3, |i, j| ts[i].powi(j as i32));
        let b = DMatrix::from_fn(ts.len(), 2, |i, j| if j == 0 { 1.0 - 2.0 * ts[i] + 0.5 * ts[i] * ts[i] } else { 3.0 * ts[i] });
        let fit = lstsq(&a, &b, 1e8).unwrap();
        let expect = DMatrix::from_row_slice(3, 2, &[1.0, 0.0, -2.0, 3.0, 0.5, 0.0]);
        assert!((fit.coef - expect).amax() < 1e-12);
        assert!(fit.rms_residual < 1e-12);
    }

    #[test]
    fn column_scaling_removes_unit_effects() {
        let ts: Vec<f64> = (1..=10).map(|k| k as f64).collect();
        let a = DMatrix::from_fn(10, 2, |i, j| if j == 0 { 1e9 * ts[i] } else { 1e-9 });
        let fit = lstsq(&a, &DMatrix::from_fn(10, 1, |i, _| ts[i]), 1e8).unwrap();
        assert!(fit.cond < 10.0);
    }

    #[test]
    fn rejects_ill_conditioned_design() {
        let a = DMatrix::from_fn(5, 2, |i, _| i as f64 + 1.0);
        assert!(matches!(lstsq(&a, &DMatrix::zeros(5, 1), 1e8), Err(Error::IllConditioned { .. })));
    }

    #[test]
    fn rank_gap_and_kernel() {
        let a = DMatrix::from_row_slice(3, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0, 1.0, 0.0, 1.0]);
        let sv = singular_values(&a);
        assert_eq!(numerical_rank(&sv, 1e-10), 2);
        assert!(gap_after(&sv, 2) > 1e12);
        let k = null_space(&a, 1e-10);
        assert_eq!(k.ncols(), 1);
        assert!((&a * &k).amax() < 1e-12);
    }

    #[test]
    fn null_space_of_wide_matrix() {
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let k = null_space(&a, 1e-12);
        assert_eq!(k.ncols(), 2);
        assert!((&a * &k).amax() < 1e-14);
    }
}

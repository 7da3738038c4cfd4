use nalgebra::{DMatrix, DVector};

/// Minimum-norm least-squares solution of `a x ≈ b` via SVD. Singular values
/// below `max(m, n) · σ_max · ε` are treated as zero.
pub fn min_norm_lstsq(a: &DMatrix<f64>, b: &DVector<f64>) -> DVector<f64> {
    let rhs = DMatrix::from_column_slice(b.len(), 1, b.as_slice());
    min_norm_lstsq_multi(a, &rhs).column(0).into_owned()
}

/// Column-wise [`min_norm_lstsq`] for several right-hand sides sharing `a`.
pub fn min_norm_lstsq_multi(a: &DMatrix<f64>, b: &DMatrix<f64>) -> DMatrix<f64> {
    let (m, n) = a.shape();
    if m == 0 || n == 0 {
        return DMatrix::zeros(n, b.ncols());
    }
    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if smax == 0.0 {
        return DMatrix::zeros(n, b.ncols());
    }
    let eps = m.max(n) as f64 * smax * f64::EPSILON;
    svd.solve(b, eps)
        .expect("both singular vector sets were computed")
}

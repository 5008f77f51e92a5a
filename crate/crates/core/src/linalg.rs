//! Small dense helpers shared by the model, the baseline and feature extraction.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

/// Relative singular-value threshold below which a basis counts as rank deficient.
pub const RANK_TOL: f64 = 1e-10;

/// Flips each column so that its first non-negligible entry is positive.
pub(crate) fn normalize_column_signs(q: &mut DMatrix<f64>) {
    for mut col in q.column_iter_mut() {
        let scale = col.amax();
        if scale == 0.0 {
            continue;
        }
        let first = col.iter().copied().find(|v| v.abs() > 1e-12 * scale);
        if matches!(first, Some(v) if v < 0.0) {
            col.neg_mut();
        }
    }
}

/// Smallest over largest singular value, or zero for an all-zero matrix.
pub(crate) fn singular_value_ratio(a: &DMatrix<f64>) -> f64 {
    let sv = a.singular_values();
    let max = sv.max();
    if max <= 0.0 || !max.is_finite() {
        return 0.0;
    }
    sv.min() / max
}

/// Householder QR of a full-column-rank matrix, returning the thin Q factor with
/// the column sign convention applied.
pub(crate) fn thin_q(a: &DMatrix<f64>) -> DMatrix<f64> {
    let mut q = a.clone().qr().q();
    normalize_column_signs(&mut q);
    q
}

/// Top-`k` eigenvectors of a symmetric matrix, ordered by decreasing eigenvalue,
/// signs normalized. Returns (eigenvalues, eigenvectors as columns).
pub(crate) fn top_eigenvectors(sym: DMatrix<f64>, k: usize) -> (DVector<f64>, DMatrix<f64>) {
    let n = sym.nrows();
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps the solver's order for exact ties.
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let values = DVector::from_iterator(k, order.iter().take(k).map(|&j| eig.eigenvalues[j]));
    let mut vectors = DMatrix::zeros(n, k);
    for (dst, &src) in order.iter().take(k).enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    normalize_column_signs(&mut vectors);
    (values, vectors)
}

/// Leading `k` principal directions of the columns of `centered` (already mean
/// subtracted). Uses the Gram matrix when there are fewer samples than dimensions.
pub(crate) fn principal_directions(centered: &DMatrix<f64>, k: usize) -> DMatrix<f64> {
    let (dim, n) = centered.shape();
    if dim <= n {
        let cov = centered * centered.transpose();
        top_eigenvectors(cov, k).1
    } else {
        let gram = centered.transpose() * centered;
        let (values, v) = top_eigenvectors(gram, k);
        let mut u = centered * v;
        for (j, mut col) in u.column_iter_mut().enumerate() {
            let norm = values[j].max(0.0).sqrt();
            if norm > 0.0 {
                col /= norm;
            }
        }
        // Re-orthonormalize to clean up round-off from the Gram route.
        thin_q(&u)
    }
}

pub(crate) fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

//! Dense reference implementations: full L×L covariances, joint-Gaussian
//! conditioning and explicit projectors. Nothing here reuses library code
//! beyond the model accessors.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use subsort_core::{Dataset, MixtureModel, Subspace};

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.sample(StandardNormal))
}

pub fn gaussian_vector(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

/// Random model with L ≤ 32, K ≤ 8, M ≤ 4 and data drawn near it, N ≤ 20.
pub fn random_instance(seed: u64) -> (MixtureModel, Dataset) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let l = rng.random_range(2..=32);
    let k = rng.random_range(1..=8.min(l - 1));
    let m = rng.random_range(1..=4);
    let n = rng.random_range(1..=20);
    let subspaces = (0..m)
        .map(|_| {
            let c = gaussian_matrix(&mut rng, l, k);
            let mu = gaussian_vector(&mut rng, l) * 2.0;
            Subspace::new(c, mu).unwrap()
        })
        .collect::<Vec<_>>();
    let raw: Vec<f64> = (0..m).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let weights = DVector::from_iterator(m, raw.iter().map(|w| w / total));
    let sigma2 = rng.random_range(0.1..2.0);
    let model = MixtureModel::new(subspaces.clone(), weights, sigma2).unwrap();
    let cols: Vec<DVector<f64>> = (0..n)
        .map(|_| {
            let s = &subspaces[rng.random_range(0..m)];
            s.basis() * gaussian_vector(&mut rng, k) + s.center() + gaussian_vector(&mut rng, l) * sigma2.sqrt()
        })
        .collect();
    (model, Dataset::from_vectors(&cols).unwrap())
}

pub fn dense_covariance(s: &Subspace, sigma2: f64) -> DMatrix<f64> {
    let c = s.basis();
    c * c.transpose() + DMatrix::identity(c.nrows(), c.nrows()) * sigma2
}

/// log N(y; μ, CCᵀ + σ²I) from the full covariance.
pub fn dense_component_log_density(s: &Subspace, sigma2: f64, y: &DVector<f64>) -> f64 {
    let cov = dense_covariance(s, sigma2);
    let chol = cov.cholesky().expect("covariance is SPD");
    let d = y - s.center();
    let solved = chol.solve(&d);
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    let l = y.len() as f64;
    -0.5 * (l * (2.0 * std::f64::consts::PI).ln() + logdet + d.dot(&solved))
}

/// Mixture marginal by summing densities (shifted by the max for range only).
pub fn dense_log_density(model: &MixtureModel, y: &DVector<f64>) -> f64 {
    let terms: Vec<f64> = model
        .subspaces()
        .iter()
        .zip(model.weights().iter())
        .map(|(s, w)| w.ln() + dense_component_log_density(s, model.noise_variance(), y))
        .collect();
    let max = terms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

pub struct DensePosterior {
    pub responsibilities: DMatrix<f64>,
    /// [m][i]
    pub first: Vec<Vec<DVector<f64>>>,
    pub second: Vec<Vec<DMatrix<f64>>>,
}

/// Joint Gaussian (x, y) conditioned on y: E[x|y] = CᵀΣ⁻¹(y − μ),
/// Cov = I − CᵀΣ⁻¹C with Σ = CCᵀ + σ²I.
pub fn dense_posterior(model: &MixtureModel, data: &Dataset) -> DensePosterior {
    let (n, m) = (data.len(), model.num_components());
    let sigma2 = model.noise_variance();
    let mut log_r = DMatrix::zeros(n, m);
    let mut first = Vec::new();
    let mut second = Vec::new();
    for (j, s) in model.subspaces().iter().enumerate() {
        let c = s.basis();
        let k = c.ncols();
        let sigma_inv = dense_covariance(s, sigma2).try_inverse().unwrap();
        let gain = c.transpose() * &sigma_inv;
        let cov = DMatrix::identity(k, k) - &gain * c;
        let mut f = Vec::new();
        let mut sec = Vec::new();
        for i in 0..n {
            let y = data.vector(i).into_owned();
            log_r[(i, j)] = model.weights()[j].ln() + dense_component_log_density(s, sigma2, &y);
            let e = &gain * (&y - s.center());
            sec.push(&cov + &e * e.transpose());
            f.push(e);
        }
        first.push(f);
        second.push(sec);
    }
    for i in 0..n {
        let max = log_r.row(i).max();
        let z: f64 = log_r.row(i).iter().map(|v| (v - max).exp()).sum();
        for j in 0..m {
            log_r[(i, j)] = (log_r[(i, j)] - max).exp() / z;
        }
    }
    DensePosterior {
        responsibilities: log_r,
        first,
        second,
    }
}

/// ‖a − b‖ ≤ tol · max(‖b‖, tiny): relative closeness of whole objects.
pub fn rel_close(a: &DMatrix<f64>, b: &DMatrix<f64>, tol: f64) -> bool {
    (a - b).norm() <= tol * b.norm().max(1e-300)
}

pub fn rel_close_scalar(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * b.abs().max(1e-300)
}

/// Orthonormal basis of span(A) by SVD (independent of the library's QR).
pub fn span_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    let svd = a.clone().svd(true, false);
    let u = svd.u.unwrap();
    let mut idx: Vec<usize> = (0..svd.singular_values.len()).collect();
    idx.sort_by(|&x, &y| svd.singular_values[y].total_cmp(&svd.singular_values[x]));
    let k = a.ncols();
    DMatrix::from_columns(&idx[..k].iter().map(|&j| u.column(j).into_owned()).collect::<Vec<_>>())
}

/// Principal angles (radians) between span(A) and span(B).
pub fn principal_angles(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Vec<f64> {
    let qa = span_basis(a);
    let qb = span_basis(b);
    let s = (qa.transpose() * qb).singular_values();
    s.iter().map(|v| v.clamp(-1.0, 1.0).acos()).collect()
}

/// Sorting factor with an explicit projector P = A(AᵀA)⁻¹Aᵀ.
pub fn dense_sorting_factor(basis: &DMatrix<f64>, v: &DVector<f64>) -> f64 {
    let gram_inv = (basis.transpose() * basis).try_inverse().unwrap();
    let p = basis * gram_inv * basis.transpose();
    let proj = &p * v;
    let resid = v - &proj;
    let denom = proj.norm_squared();
    if denom < 1e-300 {
        f64::INFINITY
    } else {
        resid.norm_squared() / denom
    }
}

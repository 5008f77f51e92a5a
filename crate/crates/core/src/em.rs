//! One EM iteration for the mixture of probabilistic PCA analyzers, plus the
//! two functionals used to monitor it.

use std::f64::consts::PI;

use nalgebra::{Cholesky, DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{
    check_dims, component_posteriors, factorize, Dataset, MixtureModel, PosteriorStats, Subspace,
};

/// Gram matrices with a condition estimate above this get a ridge.
const RIDGE_CONDITION: f64 = 1e12;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EmConfig {
    /// Convergence threshold on |ΔL| / (|L| + 1), L the per-sample log-likelihood.
    pub convergence_tol: f64,
    pub max_iterations: usize,
    /// Relative ridge: λ = ridge · trace(G) / (K + 1), added only to ill-conditioned
    /// M-step Gram matrices.
    pub ridge: f64,
    /// A component whose effective count drops below this fraction of N collapses.
    pub min_component_weight: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            convergence_tol: 1e-6,
            max_iterations: 300,
            ridge: 1e-8,
            min_component_weight: 1e-3,
            seed: 0,
        }
    }
}

impl EmConfig {
    pub fn validate(&self, components: usize) -> Result<()> {
        if !(self.convergence_tol > 0.0 && self.convergence_tol.is_finite()) {
            return Err(Error::Input("convergence_tol must be positive".into()));
        }
        if self.max_iterations == 0 {
            return Err(Error::Input("max_iterations must be at least 1".into()));
        }
        if !(self.ridge >= 0.0 && self.ridge.is_finite()) {
            return Err(Error::Input("ridge must be nonnegative".into()));
        }
        let upper = 1.0 / components.max(1) as f64;
        if !(self.min_component_weight >= 0.0 && self.min_component_weight < upper) {
            return Err(Error::Input(format!(
                "min_component_weight must lie in [0, {upper})"
            )));
        }
        Ok(())
    }
}

fn random_frame(rng: &mut ChaCha8Rng, l: usize, k: usize) -> DMatrix<f64> {
    let g = DMatrix::from_fn(l, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    linalg::thin_q(&g)
}

/// k-means++ seeding followed by one assignment pass; returns the centers and
/// each vector's cluster.
fn seed_centers(data: &Dataset, m: usize, rng: &mut ChaCha8Rng) -> (Vec<DVector<f64>>, Vec<usize>) {
    let n = data.len();
    let y = data.matrix();
    let mut seeds = Vec::with_capacity(m);
    seeds.push(rng.random_range(0..n));
    let mut d2: Vec<f64> = (0..n)
        .map(|i| (y.column(i) - y.column(seeds[0])).norm_squared())
        .collect();
    while seeds.len() < m {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.random::<f64>() * total;
            let mut acc = 0.0;
            let mut chosen = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                acc += w;
                if acc > target && w > 0.0 {
                    chosen = i;
                    break;
                }
            }
            chosen
        } else {
            rng.random_range(0..n)
        };
        seeds.push(pick);
        for (i, d) in d2.iter_mut().enumerate() {
            *d = d.min((y.column(i) - y.column(pick)).norm_squared());
        }
    }

    let seed_vectors: Vec<DVector<f64>> = seeds.iter().map(|&s| y.column(s).into_owned()).collect();
    let assignment = nearest(y, &seed_vectors);
    let mut sums = vec![DVector::zeros(data.dim()); m];
    let mut counts = vec![0usize; m];
    for (i, &a) in assignment.iter().enumerate() {
        sums[a] += y.column(i);
        counts[a] += 1;
    }
    let centers = sums
        .into_iter()
        .zip(counts)
        .zip(seed_vectors)
        .map(|((s, c), seed)| if c > 0 { s / c as f64 } else { seed })
        .collect::<Vec<_>>();
    let assignment = nearest(y, &centers);
    (centers, assignment)
}

fn nearest(y: &DMatrix<f64>, centers: &[DVector<f64>]) -> Vec<usize> {
    y.column_iter()
        .map(|col| {
            let mut best = (0, f64::INFINITY);
            for (j, c) in centers.iter().enumerate() {
                let d = (col - c).norm_squared();
                if d < best.1 {
                    best = (j, d);
                }
            }
            best.0
        })
        .collect()
}

/// Initial parameters θ⁽⁰⁾, deterministic in (data, cfg.seed).
///
/// Centers come from k-means++ seeding refined by one assignment pass (so
/// M = 1 yields the data mean). Each basis is a random orthonormal frame scaled
/// by its cluster's per-coordinate standard deviation; π is uniform and σ² is
/// the mean squared distance to the nearest center divided by L.
pub fn initialize(data: &Dataset, m: usize, k: usize, cfg: &EmConfig) -> Result<MixtureModel> {
    let (n, l) = (data.len(), data.dim());
    if m == 0 || k == 0 {
        return Err(Error::Input("M and K must be at least 1".into()));
    }
    if n < m {
        return Err(Error::Input(format!("{n} vectors cannot seed {m} components")));
    }
    if k >= l {
        return Err(Error::Input(format!("subspace dimension {k} must be below L = {l}")));
    }
    cfg.validate(m)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (centers, assignment) = seed_centers(data, m, &mut rng);
    let y = data.matrix();
    let floor = data.noise_floor();

    let mut sq = vec![0.0; m];
    let mut counts = vec![0usize; m];
    for (i, &a) in assignment.iter().enumerate() {
        sq[a] += (y.column(i) - &centers[a]).norm_squared();
        counts[a] += 1;
    }
    let total_sq: f64 = sq.iter().sum();
    let sigma2 = (total_sq / (n * l) as f64).max(floor);

    let subspaces = centers
        .into_iter()
        .enumerate()
        .map(|(j, center)| {
            let var = if counts[j] > 0 {
                sq[j] / (counts[j] * l) as f64
            } else {
                sigma2
            };
            let scale = var.max(floor).sqrt();
            Subspace::new(random_frame(&mut rng, l, k) * scale, center)
        })
        .collect::<Result<Vec<_>>>()?;
    MixtureModel::new(subspaces, DVector::from_element(m, 1.0 / m as f64), sigma2)
}

/// E-step: responsibilities and posterior moments, plus the dataset
/// log-likelihood of `model`, which falls out of the same pass.
pub(crate) fn e_step_with_loglik(
    model: &MixtureModel,
    data: &Dataset,
) -> Result<(PosteriorStats, f64)> {
    check_dims(model, data)?;
    let floor = data.noise_floor();
    if model.noise_variance() < floor {
        return Err(Error::degenerate(
            None,
            format!(
                "noise variance {:e} is below the floor {:e}",
                model.noise_variance(),
                floor
            ),
        ));
    }
    let factors = factorize(model)?;
    let (mut log_resp, first_moments) = component_posteriors(&factors, data);
    let log_w: Vec<f64> = model.weights().iter().map(|w| w.ln()).collect();
    let mut loglik = 0.0;
    for mut row in log_resp.row_iter_mut() {
        for (v, lw) in row.iter_mut().zip(&log_w) {
            *v += lw;
        }
        let values: Vec<f64> = row.iter().copied().collect();
        let lse = linalg::log_sum_exp(&values);
        loglik += lse;
        for v in row.iter_mut() {
            *v = (*v - lse).exp();
        }
    }
    let posterior_covariances = factors.iter().map(|f| f.posterior_covariance()).collect();
    Ok((
        PosteriorStats {
            responsibilities: log_resp,
            first_moments,
            posterior_covariances,
        },
        loglik,
    ))
}

/// E-step: h_{i,m} ∝ π_m N(y_i; μ_m, C_mC_mᵀ + σ²I) and the posterior moments
/// E[x|y,w_m] = B_m(y − μ_m), E[xxᵀ|y,w_m] = I − B_mC_m + E[x]E[x]ᵀ.
pub fn e_step(model: &MixtureModel, data: &Dataset) -> Result<PosteriorStats> {
    e_step_with_loglik(model, data).map(|(stats, _)| stats)
}

/// Σ_i log p(y_i).
pub fn dataset_log_likelihood(model: &MixtureModel, data: &Dataset) -> Result<f64> {
    check_dims(model, data)?;
    let factors = factorize(model)?;
    let (log_dens, _) = component_posteriors(&factors, data);
    let log_w: Vec<f64> = model.weights().iter().map(|w| w.ln()).collect();
    Ok(log_dens
        .row_iter()
        .map(|row| linalg::log_sum_exp(&row.iter().zip(&log_w).map(|(d, w)| d + w).collect::<Vec<_>>()))
        .sum())
}

fn check_stats(data: &Dataset, stats: &PosteriorStats, k: usize) -> Result<()> {
    if stats.num_samples() != data.len() {
        return Err(Error::Contract(format!(
            "statistics cover {} samples, data has {}",
            stats.num_samples(),
            data.len()
        )));
    }
    for m in 0..stats.num_components() {
        let e = stats.first_moments(m);
        if e.shape() != (k, data.len()) || stats.posterior_covariance(m).shape() != (k, k) {
            return Err(Error::Contract(format!(
                "statistics of component {m} do not have subspace dimension {k}"
            )));
        }
    }
    Ok(())
}

/// Estimated condition number of a symmetric positive semidefinite matrix.
fn condition_estimate(g: &DMatrix<f64>) -> f64 {
    let ev = SymmetricEigen::new(g.clone()).eigenvalues;
    let max = ev.max();
    let min = ev.min();
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

/// M-step: maximizes the expected complete log-likelihood given `stats`.
///
/// C_m and μ_m are solved jointly from the augmented coefficients x̃ = (x, 1):
/// `[C_m | μ_m] = (Σ_i h y_i E[x̃_i]ᵀ)(Σ_i h E[x̃_i x̃_iᵀ])⁻¹`. σ² is the
/// responsibility-weighted expected squared residual per coordinate and
/// π_m = N_m / N. Component collapse is reported, never repaired.
pub fn m_step(data: &Dataset, stats: &PosteriorStats, k: usize, cfg: &EmConfig) -> Result<MixtureModel> {
    check_stats(data, stats, k)?;
    let (n, l) = (data.len(), data.dim());
    let y = data.matrix();
    let counts = stats.effective_counts();
    let threshold = cfg.min_component_weight * n as f64;
    for (m, &c) in counts.iter().enumerate() {
        if !(c > 0.0) || c < threshold {
            return Err(Error::ComponentCollapsed {
                component: m,
                effective_count: c,
            });
        }
    }

    let mut subspaces = Vec::with_capacity(stats.num_components());
    let mut residual = 0.0;
    for (m, &count) in counts.iter().enumerate() {
        let h = stats.responsibilities.column(m);
        let e = &stats.first_moments[m];
        let cov = &stats.posterior_covariances[m];

        // Z = diag(h) · [E[x]ᵀ | 1], so that Y Z = Σ_i h_i y_i E[x̃_i]ᵀ.
        let mut z = DMatrix::zeros(n, k + 1);
        for i in 0..n {
            for j in 0..k {
                z[(i, j)] = h[i] * e[(j, i)];
            }
            z[(i, k)] = h[i];
        }
        let rhs = y * &z;
        let gram_top = e * z.columns(0, k);
        let mut gram = DMatrix::zeros(k + 1, k + 1);
        gram.view_mut((0, 0), (k, k)).copy_from(&(cov * count + gram_top));
        let eh = e * h;
        gram.view_mut((0, k), (k, 1)).copy_from(&eh);
        gram.view_mut((k, 0), (1, k)).copy_from(&eh.transpose());
        gram[(k, k)] = count;
        let t = gram.transpose();
        gram = (gram + t) * 0.5;

        if condition_estimate(&gram) > RIDGE_CONDITION {
            let lambda = cfg.ridge * gram.trace() / (k + 1) as f64;
            log::debug!("component {m}: ill-conditioned Gram matrix, ridge {lambda:e}");
            for j in 0..=k {
                gram[(j, j)] += lambda;
            }
        }
        let chol = Cholesky::new(gram).ok_or_else(|| {
            Error::degenerate(Some(m), "augmented Gram matrix is singular")
        })?;
        let w = chol.solve(&rhs.transpose()).transpose();
        let basis = w.columns(0, k).into_owned();
        let center = w.column(k).into_owned();
        let subspace = Subspace::new(basis, center).map_err(|e| match e {
            Error::Contract(reason) => Error::degenerate(Some(m), reason),
            other => other,
        })?;
        if !subspace.is_full_rank() {
            return Err(Error::degenerate(Some(m), "estimated basis is rank deficient"));
        }

        // E‖y − Cx − μ‖² = ‖y − C E[x] − μ‖² + tr(CᵀC Cov).
        let c = subspace.basis();
        let mut r = y - c * e;
        for mut col in r.column_iter_mut() {
            col -= subspace.center();
        }
        let trace_term = (c.tr_mul(c) * cov).trace();
        residual += r
            .column_iter()
            .zip(h.iter())
            .map(|(col, hi)| hi * col.norm_squared())
            .sum::<f64>()
            + count * trace_term;
        subspaces.push(subspace);
    }

    let sigma2 = (residual / (n * l) as f64).max(data.noise_floor());
    let weights = &counts / counts.sum();
    MixtureModel::new(subspaces, weights, sigma2)
}

/// Q(θ | θ_t): the expected complete-data log-likelihood of `model` under the
/// posterior statistics `stats`.
///
/// Includes every term of E[log p(y, x, w)]: log π_m, the Gaussian normalizer
/// −(L/2)log(2πσ²) per sample, the expected squared residual, and the latent
/// prior −(K/2)log(2π) − ½tr E[xxᵀ].
pub fn expected_complete_loglik(
    model: &MixtureModel,
    data: &Dataset,
    stats: &PosteriorStats,
) -> Result<f64> {
    check_dims(model, data)?;
    let k = model.subspace_dim();
    check_stats(data, stats, k)?;
    if stats.num_components() != model.num_components() {
        return Err(Error::Contract(format!(
            "statistics have {} components, model has {}",
            stats.num_components(),
            model.num_components()
        )));
    }
    let (l, kf) = (data.dim() as f64, k as f64);
    let sigma2 = model.noise_variance();
    let y = data.matrix();
    let per_sample_const = -0.5 * l * (2.0 * PI * sigma2).ln() - 0.5 * kf * (2.0 * PI).ln();

    let mut q = 0.0;
    for (m, s) in model.subspaces().iter().enumerate() {
        let h = stats.responsibilities.column(m);
        let e = &stats.first_moments[m];
        let cov = &stats.posterior_covariances[m];
        let c = s.basis();
        let ctc = c.tr_mul(c);
        let trace_cov = (&ctc * cov).trace();
        let log_pi = model.weights()[m].ln();

        let mut d = y.clone();
        for mut col in d.column_iter_mut() {
            col -= s.center();
        }
        let t = c.tr_mul(&d);
        let ge = &ctc * e;
        for i in 0..data.len() {
            if h[i] == 0.0 {
                continue;
            }
            let ei = e.column(i);
            let sq_resid = d.column(i).norm_squared() - 2.0 * t.column(i).dot(&ei)
                + trace_cov
                + ei.dot(&ge.column(i));
            let prior = -0.5 * (cov.trace() + ei.norm_squared());
            q += h[i] * (log_pi + per_sample_const - sq_resid / (2.0 * sigma2) + prior);
        }
    }
    Ok(q)
}

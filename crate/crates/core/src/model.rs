//! Parameters of the union-of-affine-subspaces generative model and the
//! low-rank Gaussian algebra shared by the EM engine and the sorter.
//!
//! Every component has covariance `C Cᵀ + σ² I_L`. Nothing here ever forms
//! that L×L matrix: densities and posteriors go through the K×K "inner"
//! matrix `Cᵀ C + σ² I_K` (Woodbury identity and determinant lemma).

use std::collections::HashSet;
use std::f64::consts::PI;
use std::fmt;

use nalgebra::{Cholesky, DMatrix, DVector, DVectorView, Dyn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{self, RANK_TOL};

/// Images per work unit for data-parallel passes. Fixed so that results do not
/// depend on the worker count.
pub(crate) const CHUNK: usize = 256;

/// One affine component: `span(basis) + center`.
#[derive(Debug, Clone, PartialEq)]
pub struct Subspace {
    basis: DMatrix<f64>,
    center: DVector<f64>,
}

impl Subspace {
    /// Builds a component from an L×K basis and a length-L center.
    ///
    /// Only shapes and finiteness are checked here; rank is checked where a
    /// basis is produced by estimation (see [`Subspace::orthonormal_basis`]).
    pub fn new(basis: DMatrix<f64>, center: DVector<f64>) -> Result<Self> {
        if basis.nrows() != center.len() {
            return Err(Error::Contract(format!(
                "basis has {} rows but center has length {}",
                basis.nrows(),
                center.len()
            )));
        }
        if basis.ncols() == 0 || basis.ncols() > basis.nrows() {
            return Err(Error::Contract(format!(
                "basis must be L×K with 1 ≤ K ≤ L, got {}×{}",
                basis.nrows(),
                basis.ncols()
            )));
        }
        if !basis.iter().chain(center.iter()).all(|v| v.is_finite()) {
            return Err(Error::Contract("non-finite subspace parameter".into()));
        }
        Ok(Subspace { basis, center })
    }

    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn center(&self) -> &DVector<f64> {
        &self.center
    }

    /// Ambient dimension L.
    pub fn dim(&self) -> usize {
        self.basis.nrows()
    }

    /// Subspace dimension K.
    pub fn rank(&self) -> usize {
        self.basis.ncols()
    }

    pub fn is_full_rank(&self) -> bool {
        linalg::singular_value_ratio(&self.basis) > RANK_TOL
    }

    /// Orthonormal L×K frame spanning the same subspace as the basis.
    ///
    /// Deterministic: Householder QR followed by the sign convention "first
    /// nonzero entry of every column is positive".
    pub fn orthonormal_basis(&self) -> Result<DMatrix<f64>> {
        if !self.is_full_rank() {
            return Err(Error::degenerate(None, "basis is rank deficient"));
        }
        Ok(linalg::thin_q(&self.basis))
    }

    pub fn into_parts(self) -> (DMatrix<f64>, DVector<f64>) {
        (self.basis, self.center)
    }
}

/// All EM parameters: M subspaces sharing (L, K), mixture weights π and one
/// shared isotropic noise variance σ².
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureModel {
    subspaces: Vec<Subspace>,
    weights: DVector<f64>,
    noise_variance: f64,
}

/// Tolerance on Σ π = 1.
const WEIGHT_SUM_TOL: f64 = 1e-12;

impl MixtureModel {
    pub fn new(subspaces: Vec<Subspace>, weights: DVector<f64>, noise_variance: f64) -> Result<Self> {
        let Some(first) = subspaces.first() else {
            return Err(Error::Contract("a mixture needs at least one component".into()));
        };
        let (l, k) = (first.dim(), first.rank());
        if subspaces.iter().any(|s| s.dim() != l || s.rank() != k) {
            return Err(Error::Contract("all subspaces must share (L, K)".into()));
        }
        if weights.len() != subspaces.len() {
            return Err(Error::Contract(format!(
                "{} weights for {} components",
                weights.len(),
                subspaces.len()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Contract("mixture weights must be finite and nonnegative".into()));
        }
        if (weights.sum() - 1.0).abs() > WEIGHT_SUM_TOL {
            return Err(Error::Contract(format!(
                "mixture weights sum to {}, not 1",
                weights.sum()
            )));
        }
        if !(noise_variance.is_finite() && noise_variance > 0.0) {
            return Err(Error::Contract(format!(
                "noise variance must be positive and finite, got {noise_variance}"
            )));
        }
        Ok(MixtureModel {
            subspaces,
            weights,
            noise_variance,
        })
    }

    pub fn subspaces(&self) -> &[Subspace] {
        &self.subspaces
    }

    pub fn weights(&self) -> &DVector<f64> {
        &self.weights
    }

    pub fn noise_variance(&self) -> f64 {
        self.noise_variance
    }

    pub fn num_components(&self) -> usize {
        self.subspaces.len()
    }

    pub fn dim(&self) -> usize {
        self.subspaces[0].dim()
    }

    pub fn subspace_dim(&self) -> usize {
        self.subspaces[0].rank()
    }

    /// Orthonormal frames of every component; a rank-deficient basis is reported
    /// with its component index.
    pub fn orthonormal_bases(&self) -> Result<Vec<DMatrix<f64>>> {
        self.subspaces
            .iter()
            .enumerate()
            .map(|(m, s)| s.orthonormal_basis().map_err(|e| e.at_component(m)))
            .collect()
    }

    pub(crate) fn into_parts(self) -> (Vec<Subspace>, DVector<f64>, f64) {
        (self.subspaces, self.weights, self.noise_variance)
    }

    pub fn with_noise_variance(mut self, noise_variance: f64) -> Result<Self> {
        if !(noise_variance > 0.0 && noise_variance.is_finite()) {
            return Err(Error::Contract(format!("noise variance {noise_variance} is not positive")));
        }
        self.noise_variance = noise_variance;
        Ok(self)
    }
}

/// Ground-truth class of a synthetic (or hand-tagged) image.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Particle,
    Outlier,
    #[serde(rename = "noise")]
    PureNoise,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Particle => "particle",
            Label::Outlier => "outlier",
            Label::PureNoise => "noise",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "particle" => Ok(Label::Particle),
            "outlier" => Ok(Label::Outlier),
            "noise" => Ok(Label::PureNoise),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

/// N feature vectors of length L, stored as the columns of an L×N matrix.
///
/// `original_index` survives pruning, so a pruned dataset can always be mapped
/// back to the input stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    vectors: DMatrix<f64>,
    original_index: Vec<usize>,
    labels: Option<Vec<Label>>,
}

impl Dataset {
    /// Wraps the columns of `vectors`; original indices are `0..N`.
    pub fn from_columns(vectors: DMatrix<f64>) -> Result<Self> {
        let n = vectors.ncols();
        Self::with_metadata(vectors, (0..n).collect(), None)
    }

    pub fn from_vectors(vectors: &[DVector<f64>]) -> Result<Self> {
        let Some(first) = vectors.first() else {
            return Err(Error::Input("dataset must contain at least one vector".into()));
        };
        if vectors.iter().any(|v| v.len() != first.len()) {
            return Err(Error::Input("all vectors must have the same length".into()));
        }
        Self::from_columns(DMatrix::from_columns(vectors))
    }

    pub fn with_metadata(
        vectors: DMatrix<f64>,
        original_index: Vec<usize>,
        labels: Option<Vec<Label>>,
    ) -> Result<Self> {
        let n = vectors.ncols();
        if n == 0 || vectors.nrows() == 0 {
            return Err(Error::Input("dataset must contain at least one non-empty vector".into()));
        }
        if original_index.len() != n {
            return Err(Error::Input(format!(
                "{} original indices for {n} vectors",
                original_index.len()
            )));
        }
        if let Some(labels) = &labels {
            if labels.len() != n {
                return Err(Error::Input(format!("{} labels for {n} vectors", labels.len())));
            }
        }
        let mut seen = HashSet::with_capacity(n);
        if let Some(dup) = original_index.iter().find(|i| !seen.insert(**i)) {
            return Err(Error::Input(format!("duplicate original index {dup}")));
        }
        if let Some(pos) = vectors.iter().position(|v| !v.is_finite()) {
            return Err(Error::Input(format!(
                "non-finite value in vector {} (row {})",
                pos / vectors.nrows(),
                pos % vectors.nrows()
            )));
        }
        Ok(Dataset {
            vectors,
            original_index,
            labels,
        })
    }

    pub fn len(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Vector length L.
    pub fn dim(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn vector(&self, i: usize) -> DVectorView<'_, f64> {
        self.vectors.column(i)
    }

    /// L×N matrix whose columns are the vectors.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.vectors
    }

    pub fn original_index(&self) -> &[usize] {
        &self.original_index
    }

    pub fn labels(&self) -> Option<&[Label]> {
        self.labels.as_deref()
    }

    /// Keeps the vectors at the given positions (in the given order).
    pub fn select(&self, positions: &[usize]) -> Dataset {
        let vectors = self.vectors.select_columns(positions);
        let original_index = positions.iter().map(|&p| self.original_index[p]).collect();
        let labels = self
            .labels
            .as_ref()
            .map(|l| positions.iter().map(|&p| l[p]).collect());
        Dataset {
            vectors,
            original_index,
            labels,
        }
    }

    /// Lower bound on σ²: `1e-10 · mean‖y‖² / L`.
    pub fn noise_floor(&self) -> f64 {
        let mean_sq = self.vectors.norm_squared() / self.len() as f64;
        (1e-10 * mean_sq / self.dim() as f64).max(f64::MIN_POSITIVE)
    }
}

/// Per-(image, component) posterior sufficient statistics.
///
/// The posterior covariance of x given (y, w_m) does not depend on y, so it is
/// stored once per component; second moments are assembled on demand as
/// `Cov_m + E[x]E[x]ᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorStats {
    pub(crate) responsibilities: DMatrix<f64>,
    pub(crate) first_moments: Vec<DMatrix<f64>>,
    pub(crate) posterior_covariances: Vec<DMatrix<f64>>,
}

impl PosteriorStats {
    /// N×M matrix h with rows summing to one.
    pub fn responsibilities(&self) -> &DMatrix<f64> {
        &self.responsibilities
    }

    /// E[x_i | y_i, w_m].
    pub fn first_moment(&self, i: usize, m: usize) -> DVector<f64> {
        self.first_moments[m].column(i).into_owned()
    }

    /// All first moments of component m as a K×N matrix.
    pub fn first_moments(&self, m: usize) -> &DMatrix<f64> {
        &self.first_moments[m]
    }

    /// Cov[x | y, w_m] = σ²(CᵀC + σ²I)⁻¹, shared by every image.
    pub fn posterior_covariance(&self, m: usize) -> &DMatrix<f64> {
        &self.posterior_covariances[m]
    }

    /// E[x_i x_iᵀ | y_i, w_m].
    pub fn second_moment(&self, i: usize, m: usize) -> DMatrix<f64> {
        let e = self.first_moments[m].column(i);
        &self.posterior_covariances[m] + e * e.transpose()
    }

    pub fn num_samples(&self) -> usize {
        self.responsibilities.nrows()
    }

    pub fn num_components(&self) -> usize {
        self.responsibilities.ncols()
    }

    /// Effective counts N_m = Σ_i h_{i,m}.
    pub fn effective_counts(&self) -> DVector<f64> {
        self.responsibilities.row_sum().transpose()
    }
}

/// Precomputed K×K quantities for one component of a model.
pub(crate) struct LowRankGaussian<'a> {
    pub(crate) basis: &'a DMatrix<f64>,
    pub(crate) center: &'a DVector<f64>,
    noise_variance: f64,
    inner: Cholesky<f64, Dyn>,
    log_det_cov: f64,
}

impl<'a> LowRankGaussian<'a> {
    pub(crate) fn new(s: &'a Subspace, noise_variance: f64) -> Result<Self> {
        let l = s.dim();
        let k = s.rank();
        let mut inner = s.basis.tr_mul(&s.basis);
        for j in 0..k {
            inner[(j, j)] += noise_variance;
        }
        let inner = Cholesky::new(inner)
            .ok_or_else(|| Error::degenerate(None, "CᵀC + σ²I is not positive definite"))?;
        let log_det_inner: f64 = 2.0 * inner.l_dirty().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        let log_det_cov = (l as f64 - k as f64) * noise_variance.ln() + log_det_inner;
        Ok(LowRankGaussian {
            basis: &s.basis,
            center: &s.center,
            noise_variance,
            inner,
            log_det_cov,
        })
    }

    /// Posterior covariance σ²(CᵀC + σ²I)⁻¹ = I − B C.
    pub(crate) fn posterior_covariance(&self) -> DMatrix<f64> {
        let mut cov = self.inner.inverse() * self.noise_variance;
        // Symmetrize away round-off.
        let t = cov.transpose();
        cov += t;
        cov *= 0.5;
        cov
    }

    /// Log densities and posterior means for the columns of `y`.
    ///
    /// With d = y − μ and z = (CᵀC + σ²I)⁻¹Cᵀd = E[x | y]:
    /// dᵀ(CCᵀ + σ²I)⁻¹d = ‖d − Cz‖²/σ² + ‖z‖², a sum of nonnegative terms.
    pub(crate) fn evaluate(&self, y: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
        let l = y.nrows() as f64;
        let mut d = y.clone();
        for mut col in d.column_iter_mut() {
            col -= self.center;
        }
        let t = self.basis.tr_mul(&d);
        let z = self.inner.solve(&t);
        let r = d - self.basis * &z;
        let norm_const = l * (2.0 * PI).ln() + self.log_det_cov;
        let log_dens = DVector::from_iterator(
            y.ncols(),
            r.column_iter().zip(z.column_iter()).map(|(rc, zc)| {
                let quad = rc.norm_squared() / self.noise_variance + zc.norm_squared();
                -0.5 * (norm_const + quad)
            }),
        );
        (log_dens, z)
    }
}

pub(crate) fn check_dims(model: &MixtureModel, data: &Dataset) -> Result<()> {
    if model.dim() != data.dim() {
        return Err(Error::Contract(format!(
            "model dimension {} does not match data dimension {}",
            model.dim(),
            data.dim()
        )));
    }
    Ok(())
}

pub(crate) fn factorize(model: &MixtureModel) -> Result<Vec<LowRankGaussian<'_>>> {
    model
        .subspaces
        .iter()
        .enumerate()
        .map(|(m, s)| LowRankGaussian::new(s, model.noise_variance).map_err(|e| e.at_component(m)))
        .collect()
}

/// Per-component log densities (N×M, without log π) and posterior means
/// (one K×N matrix per component), computed chunk-parallel.
pub(crate) fn component_posteriors(
    factors: &[LowRankGaussian<'_>],
    data: &Dataset,
) -> (DMatrix<f64>, Vec<DMatrix<f64>>) {
    let n = data.len();
    let y = data.matrix();
    let chunks: Vec<(usize, usize)> = (0..n)
        .step_by(CHUNK)
        .map(|start| (start, CHUNK.min(n - start)))
        .collect();
    let per_component: Vec<(DVector<f64>, DMatrix<f64>)> = factors
        .iter()
        .map(|f| {
            let parts: Vec<(DVector<f64>, DMatrix<f64>)> = chunks
                .par_iter()
                .map(|&(start, len)| f.evaluate(&y.columns(start, len).into_owned()))
                .collect();
            let k = f.basis.ncols();
            let mut dens = DVector::zeros(n);
            let mut means = DMatrix::zeros(k, n);
            for (&(start, len), (d, z)) in chunks.iter().zip(parts) {
                dens.rows_mut(start, len).copy_from(&d);
                means.columns_mut(start, len).copy_from(&z);
            }
            (dens, means)
        })
        .collect();
    let m = factors.len();
    let mut log_dens = DMatrix::zeros(n, m);
    let mut means = Vec::with_capacity(m);
    for (j, (d, z)) in per_component.into_iter().enumerate() {
        log_dens.set_column(j, &d);
        means.push(z);
    }
    (log_dens, means)
}

/// log p(y) under the mixture, combined across components in the log domain.
pub fn marginal_log_density(model: &MixtureModel, y: &DVector<f64>) -> Result<f64> {
    if y.len() != model.dim() {
        return Err(Error::Contract(format!(
            "vector has length {} but the model has dimension {}",
            y.len(),
            model.dim()
        )));
    }
    if !y.iter().all(|v| v.is_finite()) {
        return Err(Error::Input("non-finite input vector".into()));
    }
    let factors = factorize(model)?;
    let y = DMatrix::from_column_slice(y.len(), 1, y.as_slice());
    let terms: Vec<f64> = factors
        .iter()
        .zip(model.weights.iter())
        .map(|(f, &w)| w.ln() + f.evaluate(&y).0[0])
        .collect();
    Ok(linalg::log_sum_exp(&terms))
}

/// Free-function form of [`Subspace::orthonormal_basis`].
pub fn orthonormal_basis(s: &Subspace) -> Result<DMatrix<f64>> {
    s.orthonormal_basis()
}

#[cfg(test)]
mod tests {
    use super::*;

    macro_rules! assert_close {
        ($a:expr, $b:expr, $tol:expr) => {{
            let (a, b): (f64, f64) = ($a, $b);
            assert!((a - b).abs() <= $tol, "{a} vs {b} (tol {})", $tol);
        }};
    }

    fn single(basis: DMatrix<f64>, center: DVector<f64>, sigma2: f64) -> MixtureModel {
        MixtureModel::new(
            vec![Subspace::new(basis, center).unwrap()],
            DVector::from_element(1, 1.0),
            sigma2,
        )
        .unwrap()
    }

    #[test]
    fn scalar_standard_normal() {
        let model = single(DMatrix::zeros(1, 1), DVector::zeros(1), 1.0);
        let lp = marginal_log_density(&model, &DVector::zeros(1)).unwrap();
        assert_close!(lp, -0.918_938_533_204_672_7, 1e-12);
    }

    #[test]
    fn diagonal_covariance_at_center() {
        let mut c = DMatrix::zeros(3, 1);
        c[(0, 0)] = 1.0;
        let model = single(c, DVector::zeros(3), 1.0);
        let lp = marginal_log_density(&model, &DVector::zeros(3)).unwrap();
        let expected = -1.5 * (2.0 * PI).ln() - 0.5 * 2f64.ln();
        assert_close!(lp, expected, 1e-12);
    }

    #[test]
    fn dimension_mismatch_is_contract_error() {
        let model = single(DMatrix::identity(3, 1), DVector::zeros(3), 1.0);
        let err = marginal_log_density(&model, &DVector::zeros(4)).unwrap_err();
        assert!(matches!(err, Error::Contract(_)));
        let err = marginal_log_density(&model, &DVector::from_element(3, f64::NAN)).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn orthonormal_basis_removes_scale() {
        let mut c = DMatrix::zeros(3, 1);
        c[(0, 0)] = 2.0;
        let s = Subspace::new(c, DVector::zeros(3)).unwrap();
        let q = s.orthonormal_basis().unwrap();
        assert_close!(q[(0, 0)], 1.0, 1e-15);
        assert_close!(q[(1, 0)].abs() + q[(2, 0)].abs(), 0.0, 1e-15);
    }

    #[test]
    fn orthonormal_input_is_returned_up_to_sign() {
        let c = DMatrix::from_row_slice(3, 2, &[0.0, 1.0, -1.0, 0.0, 0.0, 0.0]);
        let s = Subspace::new(c.clone(), DVector::zeros(3)).unwrap();
        let q = s.orthonormal_basis().unwrap();
        for j in 0..2 {
            let dot = q.column(j).dot(&c.column(j));
            assert_close!(dot.abs(), 1.0, 1e-14);
            let first = q.column(j).iter().copied().find(|v| v.abs() > 1e-12).unwrap();
            assert!(first > 0.0);
        }
    }

    #[test]
    fn rank_deficient_basis_reports_component() {
        let good = Subspace::new(DMatrix::identity(4, 2), DVector::zeros(4)).unwrap();
        let mut c = DMatrix::zeros(4, 2);
        c[(0, 0)] = 1.0;
        c[(0, 1)] = 2.0;
        let bad = Subspace::new(c, DVector::zeros(4)).unwrap();
        let model =
            MixtureModel::new(vec![good, bad], DVector::from_element(2, 0.5), 1.0).unwrap();
        match model.orthonormal_bases().unwrap_err() {
            Error::Degenerate { component, .. } => assert_eq!(component, Some(1)),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn model_validation() {
        let s = || Subspace::new(DMatrix::identity(3, 1), DVector::zeros(3)).unwrap();
        assert!(MixtureModel::new(vec![s(), s()], DVector::from_vec(vec![0.5, 0.6]), 1.0).is_err());
        assert!(MixtureModel::new(vec![s()], DVector::from_element(1, 1.0), 0.0).is_err());
        let other = Subspace::new(DMatrix::identity(3, 2), DVector::zeros(3)).unwrap();
        assert!(MixtureModel::new(vec![s(), other], DVector::from_element(2, 0.5), 1.0).is_err());
    }

    #[test]
    fn dataset_rejects_duplicates_and_nan() {
        let m = DMatrix::from_element(2, 2, 1.0);
        assert!(Dataset::with_metadata(m.clone(), vec![3, 3], None).is_err());
        let mut bad = m;
        bad[(1, 1)] = f64::INFINITY;
        assert!(matches!(Dataset::from_columns(bad), Err(Error::Input(_))));
    }

    #[test]
    fn select_keeps_original_indices() {
        let m = DMatrix::from_fn(2, 4, |i, j| (i + 10 * j) as f64);
        let labels = vec![Label::Particle, Label::Outlier, Label::PureNoise, Label::Particle];
        let d = Dataset::with_metadata(m, vec![7, 8, 9, 10], Some(labels)).unwrap();
        let s = d.select(&[1, 3]);
        assert_eq!(s.original_index(), &[8, 10]);
        assert_eq!(s.labels().unwrap(), &[Label::Outlier, Label::Particle]);
        assert_eq!(s.vector(1)[0], 30.0);
    }
}

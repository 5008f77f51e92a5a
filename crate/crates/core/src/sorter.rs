//! Projection-error sorting factor, the every-P-iterations pruning schedule,
//! and the driver that interleaves both with EM.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector, DVectorView};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::em::{e_step_with_loglik, expected_complete_loglik, initialize, m_step, EmConfig};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{check_dims, Dataset, MixtureModel, Subspace, CHUNK};

/// Projected energies below this make the sorting factor +∞.
pub const MIN_PROJECTED_ENERGY: f64 = 1e-300;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SfCentering {
    /// Residual taken about the component center: r = y − μ_m.
    #[default]
    Centered,
    /// Raw vector against the linear span, ignoring the center.
    Uncentered,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollapsePolicy {
    #[default]
    Reseed,
    Drop,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SortConfig {
    /// EM iterations between prunings (P).
    pub prune_period: usize,
    /// Fraction of the current stack removed per pruning (α).
    pub prune_fraction: f64,
    /// Stop pruning once this many images remain.
    pub target_keep: Option<usize>,
    pub sf_centering: SfCentering,
    pub collapse_policy: CollapsePolicy,
}

impl Default for SortConfig {
    fn default() -> Self {
        SortConfig {
            prune_period: 6,
            prune_fraction: 0.05,
            target_keep: None,
            sf_centering: SfCentering::Centered,
            collapse_policy: CollapsePolicy::Reseed,
        }
    }
}

impl SortConfig {
    pub fn validate(&self, n: usize) -> Result<()> {
        if self.prune_period == 0 {
            return Err(Error::Input("prune_period must be at least 1".into()));
        }
        if !(self.prune_fraction > 0.0 && self.prune_fraction < 1.0) {
            return Err(Error::Input("prune_fraction must lie in (0, 1)".into()));
        }
        if let Some(t) = self.target_keep {
            if t == 0 || t > n {
                return Err(Error::Input(format!(
                    "target_keep = {t} must lie in [1, N = {n}]"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub original_index: usize,
    pub total_score: f64,
    pub kept: bool,
    pub removed_at_iteration: Option<usize>,
}

/// Outcome per input image, ordered by original index.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SortManifest {
    entries: Vec<ManifestEntry>,
}

impl SortManifest {
    /// Sorts by original index and checks that every index appears once and
    /// that `kept` agrees with `removed_at_iteration`.
    pub fn new(mut entries: Vec<ManifestEntry>) -> Result<Self> {
        entries.sort_by_key(|e| e.original_index);
        if let Some(w) = entries.windows(2).find(|w| w[0].original_index == w[1].original_index) {
            return Err(Error::Input(format!(
                "original index {} appears twice in the manifest",
                w[0].original_index
            )));
        }
        if let Some(e) = entries
            .iter()
            .find(|e| e.kept == e.removed_at_iteration.is_some())
        {
            return Err(Error::Input(format!(
                "entry {} is inconsistent: kept = {} with removed_at_iteration = {:?}",
                e.original_index, e.kept, e.removed_at_iteration
            )));
        }
        if let Some(e) = entries.iter().find(|e| e.total_score.is_nan()) {
            return Err(Error::Input(format!("entry {} has a NaN score", e.original_index)));
        }
        Ok(SortManifest { entries })
    }

    pub fn entries(&self) -> &[ManifestEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn kept_count(&self) -> usize {
        self.entries.iter().filter(|e| e.kept).count()
    }

    pub fn kept_indices(&self) -> Vec<usize> {
        self.entries
            .iter()
            .filter(|e| e.kept)
            .map(|e| e.original_index)
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    pub removed: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CollapseEvent {
    pub component: usize,
    pub policy: CollapsePolicy,
}

/// State after one EM iteration. `loglik` is the dataset log-likelihood of the
/// updated model on the images present during that iteration (before any
/// pruning at that iteration).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceRecord {
    pub iteration: usize,
    pub loglik: f64,
    #[serde(rename = "Q")]
    pub q: Option<f64>,
    pub sigma2: f64,
    pub pi: Vec<f64>,
    pub prune_event: Option<PruneEvent>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub collapse_event: Option<CollapseEvent>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunTrace {
    pub records: Vec<TraceRecord>,
    pub converged: bool,
}

#[derive(Debug, Clone)]
pub struct SortOutcome {
    pub model: MixtureModel,
    pub manifest: SortManifest,
    pub trace: RunTrace,
}

fn residual_ratio(r: DVectorView<'_, f64>, frame: &DMatrix<f64>) -> f64 {
    let coeffs = frame.tr_mul(&r);
    let projected = coeffs.norm_squared();
    if projected < MIN_PROJECTED_ENERGY {
        return f64::INFINITY;
    }
    (r - frame * coeffs).norm_squared() / projected
}

/// SF_m(y) = ‖Pr − r‖² / ‖Pr‖² with P the orthogonal projector onto span(C_m).
///
/// `r = y − μ_m` in centered mode, `r = y` in literal mode. Returns +∞ when the
/// projected energy vanishes.
pub fn sorting_factor(s: &Subspace, y: &DVector<f64>, mode: SfCentering) -> Result<f64> {
    if y.len() != s.dim() {
        return Err(Error::Contract(format!(
            "vector has length {} but the subspace lives in dimension {}",
            y.len(),
            s.dim()
        )));
    }
    let frame = s.orthonormal_basis()?;
    let r = match mode {
        SfCentering::Centered => y - s.center(),
        SfCentering::Uncentered => y.clone(),
    };
    Ok(residual_ratio(r.column(0), &frame))
}

/// Σ_m SF_m(y_i) for every image; any infinite term makes the total infinite.
pub fn total_scores(model: &MixtureModel, data: &Dataset, mode: SfCentering) -> Result<DVector<f64>> {
    check_dims(model, data)?;
    let frames = model.orthonormal_bases()?;
    let n = data.len();
    let y = data.matrix();
    let starts: Vec<usize> = (0..n).step_by(CHUNK).collect();
    let parts: Vec<Vec<f64>> = starts
        .par_iter()
        .map(|&start| {
            let len = CHUNK.min(n - start);
            let block = y.columns(start, len);
            let mut totals = vec![0.0; len];
            for (frame, s) in frames.iter().zip(model.subspaces()) {
                let mut r = block.into_owned();
                if mode == SfCentering::Centered {
                    for mut col in r.column_iter_mut() {
                        col -= s.center();
                    }
                }
                for (j, total) in totals.iter_mut().enumerate() {
                    *total += residual_ratio(r.column(j), frame);
                }
            }
            totals
        })
        .collect();
    Ok(DVector::from_iterator(n, parts.into_iter().flatten()))
}

/// Number of images one pruning step removes from a stack of `n`.
pub fn removal_quota(n: usize, fraction: f64) -> usize {
    // The epsilon keeps exact products such as 0.29 · 100 from rounding down.
    let raw = (fraction * n as f64 + 1e-9).floor() as usize;
    raw.max(1)
}

/// Removes the `count` highest-scoring images; ties go to the smaller original
/// index first. Returns the kept positions (in order) and the removed positions.
fn split_by_score(data: &Dataset, scores: &DVector<f64>, count: usize) -> (Vec<usize>, Vec<usize>) {
    let idx = data.original_index();
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(idx[a].cmp(&idx[b])));
    let mut removed: Vec<usize> = order[..count].to_vec();
    removed.sort_unstable();
    let mut kept = Vec::with_capacity(data.len() - count);
    let mut r = removed.iter().peekable();
    for p in 0..data.len() {
        if r.peek() == Some(&&p) {
            r.next();
        } else {
            kept.push(p);
        }
    }
    (kept, removed)
}

fn prune_count(data: &Dataset, scores: &DVector<f64>, count: usize) -> Result<(Dataset, Vec<usize>)> {
    if scores.len() != data.len() {
        return Err(Error::Contract(format!(
            "{} scores for {} images",
            scores.len(),
            data.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Contract("NaN sorting score".into()));
    }
    if count >= data.len() {
        return Err(Error::Input(format!(
            "removing {count} of {} images would empty the stack",
            data.len()
        )));
    }
    let (kept, removed) = split_by_score(data, scores, count);
    let removed = removed.iter().map(|&p| data.original_index()[p]).collect();
    Ok((data.select(&kept), removed))
}

/// Removes max(1, ⌊αN⌋) images with the largest scores. The kept dataset keeps
/// the input order; the removed list holds original indices.
pub fn prune(data: &Dataset, scores: &DVector<f64>, fraction: f64) -> Result<(Dataset, Vec<usize>)> {
    if !(fraction > 0.0 && fraction < 1.0) {
        return Err(Error::Input("prune fraction must lie in (0, 1)".into()));
    }
    prune_count(data, scores, removal_quota(data.len(), fraction))
}

fn reseed_component(
    model: &MixtureModel,
    data: &Dataset,
    dead: usize,
    mode: SfCentering,
    rng: &mut ChaCha8Rng,
) -> Result<MixtureModel> {
    let (n, l, m, k) = (data.len(), data.dim(), model.num_components(), model.subspace_dim());
    let scores = total_scores(model, data, mode)?;
    let take = (k + 1).max(n.div_ceil(2 * m)).min(n);
    let (_, worst) = split_by_score(data, &scores, take);
    let members = data.matrix().select_columns(&worst);
    let center = members.column_mean();
    let spread: f64 = members
        .column_iter()
        .map(|c| (c - &center).norm_squared())
        .sum::<f64>()
        / (take * l) as f64;
    let scale = spread.max(model.noise_variance()).sqrt();
    let g = DMatrix::from_fn(l, k, |_, _| rng.sample::<f64, _>(StandardNormal));
    let fresh = Subspace::new(linalg::thin_q(&g) * scale, center)?;

    let share = 1.0 / m as f64;
    let (mut subspaces, weights, sigma2) = model.clone().into_parts();
    subspaces[dead] = fresh;
    let others: f64 = weights.iter().enumerate().filter(|(j, _)| *j != dead).map(|(_, w)| w).sum();
    let mut w = DVector::from_fn(m, |j, _| {
        if j == dead {
            share
        } else if others > 0.0 {
            weights[j] / others * (1.0 - share)
        } else {
            share
        }
    });
    w /= w.sum();
    MixtureModel::new(subspaces, w, sigma2)
}

fn drop_component(model: &MixtureModel, dead: usize) -> Result<MixtureModel> {
    if model.num_components() == 1 {
        return Err(Error::degenerate(Some(dead), "cannot drop the only component"));
    }
    let (mut subspaces, weights, sigma2) = model.clone().into_parts();
    subspaces.remove(dead);
    let mut w = DVector::from_iterator(
        subspaces.len(),
        weights.iter().enumerate().filter(|(j, _)| *j != dead).map(|(_, w)| *w),
    );
    let total = w.sum();
    if total > 0.0 {
        w /= total;
    } else {
        w.fill(1.0 / subspaces.len() as f64);
    }
    MixtureModel::new(subspaces, w, sigma2)
}

/// Full sorting run: EM on a union of `components` subspaces of dimension
/// `total_dim / components`, pruning every P iterations.
///
/// Pruning continues until `target_keep` images remain (never overshooting it),
/// after which EM runs to convergence. Without a target, pruning continues
/// until EM converges.
pub fn run_sort(
    data: &Dataset,
    components: usize,
    total_dim: usize,
    em_cfg: &EmConfig,
    sort_cfg: &SortConfig,
) -> Result<SortOutcome> {
    run_sort_observed(data, components, total_dim, em_cfg, sort_cfg, &mut |_| {})
}

/// [`run_sort`], handing every trace record to `observer` as soon as it exists.
pub fn run_sort_observed(
    data: &Dataset,
    components: usize,
    total_dim: usize,
    em_cfg: &EmConfig,
    sort_cfg: &SortConfig,
    observer: &mut dyn FnMut(&TraceRecord),
) -> Result<SortOutcome> {
    if components == 0 || total_dim % components != 0 || total_dim == 0 {
        return Err(Error::Input(format!(
            "K_total = {total_dim} must be a positive multiple of M = {components}"
        )));
    }
    let k = total_dim / components;
    em_cfg.validate(components)?;
    sort_cfg.validate(data.len())?;

    let mut model = initialize(data, components, k, em_cfg)?;
    let mut current = data.clone();
    let mut removed: BTreeMap<usize, (usize, f64)> = BTreeMap::new();
    let mut trace = RunTrace::default();
    let mut rng = ChaCha8Rng::seed_from_u64(em_cfg.seed ^ 0x5eed_c011_a95e);

    let (mut stats, mut loglik) = e_step_with_loglik(&model, &current)?;
    let initial = TraceRecord {
        iteration: 0,
        loglik,
        q: None,
        sigma2: model.noise_variance(),
        pi: model.weights().iter().copied().collect(),
        prune_event: None,
        collapse_event: None,
    };
    observer(&initial);
    trace.records.push(initial);
    let mut previous = loglik / current.len() as f64;

    for t in 1..=em_cfg.max_iterations {
        let mut q = None;
        let mut collapse_event = None;
        match m_step(&current, &stats, k, em_cfg) {
            Ok(next) => {
                q = Some(expected_complete_loglik(&next, &current, &stats)?);
                model = next;
            }
            Err(Error::ComponentCollapsed {
                component,
                effective_count,
            }) => {
                log::warn!(
                    "iteration {t}: component {component} collapsed (N_m = {effective_count:.3e}), policy {:?}",
                    sort_cfg.collapse_policy
                );
                model = match sort_cfg.collapse_policy {
                    CollapsePolicy::Reseed => {
                        reseed_component(&model, &current, component, sort_cfg.sf_centering, &mut rng)?
                    }
                    CollapsePolicy::Drop => drop_component(&model, component)?,
                };
                collapse_event = Some(CollapseEvent {
                    component,
                    policy: sort_cfg.collapse_policy,
                });
            }
            Err(e) => return Err(e),
        }
        (stats, loglik) = e_step_with_loglik(&model, &current)?;
        let per_sample = loglik / current.len() as f64;
        let change = (per_sample - previous).abs() / (per_sample.abs() + 1.0);
        let em_converged = collapse_event.is_none() && change < em_cfg.convergence_tol;
        previous = per_sample;

        let pruning_active = match sort_cfg.target_keep {
            Some(target) => current.len() > target,
            None => !em_converged,
        };
        let mut record = TraceRecord {
            iteration: t,
            loglik,
            q,
            sigma2: model.noise_variance(),
            pi: model.weights().iter().copied().collect(),
            prune_event: None,
            collapse_event,
        };

        if pruning_active && t % sort_cfg.prune_period == 0 {
            let scores = total_scores(&model, &current, sort_cfg.sf_centering)?;
            let mut count = removal_quota(current.len(), sort_cfg.prune_fraction);
            if let Some(target) = sort_cfg.target_keep {
                count = count.min(current.len() - target);
            }
            let positions_by_index: BTreeMap<usize, usize> = current
                .original_index()
                .iter()
                .enumerate()
                .map(|(p, &i)| (i, p))
                .collect();
            let (kept, gone) = prune_count(&current, &scores, count)?;
            for i in &gone {
                removed.insert(*i, (t, scores[positions_by_index[i]]));
            }
            log::info!(
                "iteration {t}: pruned {} images, {} remain",
                gone.len(),
                kept.len()
            );
            record.prune_event = Some(PruneEvent {
                removed: gone.len(),
                kept: kept.len(),
            });
            current = kept;
            let floor = current.noise_floor();
            if model.noise_variance() < floor {
                model = model.with_noise_variance(floor)?;
            }
            (stats, loglik) = e_step_with_loglik(&model, &current)?;
            previous = loglik / current.len() as f64;
            observer(&record);
            trace.records.push(record);
            continue;
        }
        observer(&record);
        trace.records.push(record);

        let target_reached = sort_cfg
            .target_keep
            .is_none_or(|target| current.len() <= target);
        if em_converged && target_reached {
            trace.converged = true;
            break;
        }
    }

    let final_scores = total_scores(&model, &current, sort_cfg.sf_centering)?;
    let mut entries: Vec<ManifestEntry> = current
        .original_index()
        .iter()
        .zip(final_scores.iter())
        .map(|(&i, &s)| ManifestEntry {
            original_index: i,
            total_score: s,
            kept: true,
            removed_at_iteration: None,
        })
        .collect();
    entries.extend(removed.into_iter().map(|(i, (t, s))| ManifestEntry {
        original_index: i,
        total_score: s,
        kept: false,
        removed_at_iteration: Some(t),
    }));
    Ok(SortOutcome {
        model,
        manifest: SortManifest::new(entries)?,
        trace,
    })
}

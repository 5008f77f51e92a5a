//! Single global-PCA subspace with energy-ratio ranking, the linear competitor
//! the union-of-subspaces sorter is compared against.

use nalgebra::DVector;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::Dataset;
use crate::sorter::{ManifestEntry, SortManifest};

/// e_i = ‖P(y_i − ȳ)‖² / ‖y_i − ȳ‖² with P the projector onto the top
/// `total_dim` principal directions. A zero centered vector scores 0.
pub fn energy_ratios(data: &Dataset, total_dim: usize) -> Result<DVector<f64>> {
    if total_dim == 0 || total_dim >= data.dim() {
        return Err(Error::Input(format!(
            "K_total = {total_dim} must lie in [1, L = {})",
            data.dim()
        )));
    }
    let mean = data.matrix().column_mean();
    let mut centered = data.matrix().clone();
    for mut col in centered.column_iter_mut() {
        col -= &mean;
    }
    let directions = linalg::principal_directions(&centered, total_dim);
    let coeffs = directions.tr_mul(&centered);
    Ok(DVector::from_iterator(
        data.len(),
        centered.column_iter().zip(coeffs.column_iter()).map(|(c, p)| {
            let total = c.norm_squared();
            if total > 0.0 {
                (p.norm_squared() / total).min(1.0)
            } else {
                0.0
            }
        }),
    ))
}

/// Keeps the `keep_count` images with the highest energy ratio (ties: smaller
/// original index kept first).
///
/// The manifest score is the unexplained fraction 1 − e_i, so that larger means
/// farther from the model, as with the sorting factor. Discarded images are
/// marked as removed at iteration 0.
pub fn spca_sort(data: &Dataset, total_dim: usize, keep_count: usize) -> Result<SortManifest> {
    if keep_count > data.len() {
        return Err(Error::Input(format!(
            "keep_count = {keep_count} exceeds N = {}",
            data.len()
        )));
    }
    let ratios = energy_ratios(data, total_dim)?;
    let idx = data.original_index();
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| ratios[b].total_cmp(&ratios[a]).then(idx[a].cmp(&idx[b])));
    let mut kept = vec![false; data.len()];
    for &p in &order[..keep_count] {
        kept[p] = true;
    }
    let entries = (0..data.len())
        .map(|p| ManifestEntry {
            original_index: idx[p],
            total_score: 1.0 - ratios[p],
            kept: kept[p],
            removed_at_iteration: (!kept[p]).then_some(0),
        })
        .collect();
    SortManifest::new(entries)
}

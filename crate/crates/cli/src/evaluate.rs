//! Kept-set composition and outlier-removal rate of one or more manifests
//! against ground-truth labels.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::Serialize;
use subsort_core::io::manifest::{read_labels, read_manifest};
use subsort_core::{Label, SortManifest};

use crate::error::{CliError, Result};

/// At most this many missing indices are spelled out in an error.
const MISSING_LISTED: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Composition {
    pub manifest: PathBuf,
    pub total: usize,
    pub kept: usize,
    pub kept_particles: usize,
    pub kept_outliers: usize,
    pub kept_noise: usize,
    pub labeled_outliers: usize,
    pub particles_pct: f64,
    pub outliers_pct: f64,
    pub noise_pct: f64,
    /// Share of labeled outliers the manifest discarded; None without outliers.
    pub outliers_sorted_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Evaluation {
    pub labels: PathBuf,
    pub reports: Vec<Composition>,
}

fn pct(part: usize, whole: usize) -> f64 {
    if whole == 0 {
        0.0
    } else {
        100.0 * part as f64 / whole as f64
    }
}

fn list(indices: &[usize]) -> String {
    let shown: Vec<String> = indices.iter().take(MISSING_LISTED).map(|i| i.to_string()).collect();
    let more = indices.len().saturating_sub(MISSING_LISTED);
    if more > 0 {
        format!("{} and {more} more", shown.join(", "))
    } else {
        shown.join(", ")
    }
}

/// Composition of one manifest. Manifest and labels must cover the same
/// original indices.
pub fn compose(manifest: &SortManifest, labels: &[(usize, Label)], name: &Path) -> Result<Composition> {
    let have: BTreeSet<usize> = manifest.entries().iter().map(|e| e.original_index).collect();
    let want: BTreeSet<usize> = labels.iter().map(|(i, _)| *i).collect();
    if have != want {
        let unlabeled: Vec<usize> = have.difference(&want).copied().collect();
        let unsorted: Vec<usize> = want.difference(&have).copied().collect();
        let mut message = format!("{}: manifest and labels cover different images", name.display());
        if !unlabeled.is_empty() {
            let _ = write!(message, "; missing from labels: {}", list(&unlabeled));
        }
        if !unsorted.is_empty() {
            let _ = write!(message, "; missing from manifest: {}", list(&unsorted));
        }
        return Err(subsort_core::Error::Input(message).into());
    }
    // Both are sorted by original index, so they zip.
    let (mut kept, mut part, mut out, mut noise, mut outliers) = (0, 0, 0, 0, 0);
    for (entry, (_, label)) in manifest.entries().iter().zip(labels) {
        if *label == Label::Outlier {
            outliers += 1;
        }
        if !entry.kept {
            continue;
        }
        kept += 1;
        match label {
            Label::Particle => part += 1,
            Label::Outlier => out += 1,
            Label::PureNoise => noise += 1,
        }
    }
    Ok(Composition {
        manifest: name.to_path_buf(),
        total: manifest.len(),
        kept,
        kept_particles: part,
        kept_outliers: out,
        kept_noise: noise,
        labeled_outliers: outliers,
        particles_pct: pct(part, kept),
        outliers_pct: pct(out, kept),
        noise_pct: pct(noise, kept),
        outliers_sorted_pct: (outliers > 0).then(|| pct(outliers - out, outliers)),
    })
}

/// Evaluates every manifest against one label file. Manifests compared in one
/// call must keep the same number of images.
pub fn evaluate(manifests: &[PathBuf], labels_path: &Path) -> Result<Evaluation> {
    if manifests.is_empty() {
        return Err(CliError::Usage("evaluate needs at least one manifest".into()));
    }
    let labels = read_labels(labels_path)?;
    let mut reports = Vec::with_capacity(manifests.len());
    for path in manifests {
        let manifest = read_manifest(path)?;
        reports.push(compose(&manifest, &labels, path)?);
    }
    if let Some(first) = reports.first() {
        if let Some(other) = reports.iter().find(|r| r.kept != first.kept) {
            return Err(subsort_core::Error::Input(format!(
                "kept counts differ: {} keeps {}, {} keeps {}",
                first.manifest.display(),
                first.kept,
                other.manifest.display(),
                other.kept
            ))
            .into());
        }
    }
    Ok(Evaluation {
        labels: labels_path.to_path_buf(),
        reports,
    })
}

/// Fixed-width table, one row per manifest.
pub fn render_table(eval: &Evaluation) -> String {
    let names: Vec<String> = eval.reports.iter().map(|r| r.manifest.display().to_string()).collect();
    let width = names.iter().map(|n| n.len()).max().unwrap_or(0).max("manifest".len());
    let mut out = format!(
        "{:<width$}  {:>8}  {:>10}  {:>10}  {:>8}  {:>16}\n",
        "manifest", "kept", "particles%", "outliers%", "noise%", "outliers sorted%"
    );
    for (r, name) in eval.reports.iter().zip(&names) {
        let sorted = r
            .outliers_sorted_pct
            .map(|v| format!("{v:.2}"))
            .unwrap_or_else(|| "n/a".into());
        let _ = writeln!(
            out,
            "{name:<width$}  {:>8}  {:>10.2}  {:>10.2}  {:>8.2}  {sorted:>16}",
            r.kept, r.particles_pct, r.outliers_pct, r.noise_pct
        );
    }
    out
}

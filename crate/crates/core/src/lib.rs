//! Unsupervised sorting of particle image stacks.
//!
//! Particle images are modeled as lying near a union of M low-dimensional
//! affine subspaces, `y = C_m x + μ_m + ε`. A mixture of probabilistic PCA
//! analyzers is fitted by EM ([`em`]) while, every few iterations, the images
//! farthest from the learned union are discarded ([`sorter`]).

pub mod baseline;
pub mod em;
pub mod error;
pub mod io;
mod linalg;
pub mod model;
pub mod sorter;

pub use baseline::spca_sort;
pub use em::{dataset_log_likelihood, e_step, expected_complete_loglik, initialize, m_step, EmConfig};
pub use error::{Error, ErrorKind, Result};
pub use linalg::RANK_TOL;
pub use model::{marginal_log_density, orthonormal_basis, Dataset, Label, MixtureModel, PosteriorStats, Subspace};
pub use sorter::{
    prune, removal_quota, run_sort, run_sort_observed, sorting_factor, total_scores, CollapsePolicy, ManifestEntry, RunTrace, SfCentering,
    SortConfig, SortManifest, SortOutcome, TraceRecord,
};

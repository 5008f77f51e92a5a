//! Labeled synthetic stacks in coefficient space: particles drawn from planted
//! affine subspaces, structured outliers, and pure-noise vectors.
//!
//! The L coordinates are laid out on a near-square grid so that "smooth" has a
//! meaning. Planted bases and centers live in the span of the lowest-frequency
//! 2-D cosine modes of that grid (the particle band, about 1.5·K modes), so the
//! planted subspaces overlap heavily the way views of one molecule share
//! structure. Outliers are sums of three products of cosines drawn from a wider
//! low-frequency pool: smooth, within the top principal directions of the
//! stack, but not on any planted subspace.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{Dataset, Label, Subspace};

/// Squared center norm relative to the expected in-subspace signal energy K.
pub const CENTER_ENERGY_RATIO: f64 = 0.25;

/// Particle band size as a multiple of K.
pub const PARTICLE_BAND_RATIO: f64 = 1.5;

/// Outlier frequency pool size as a multiple of K.
pub const OUTLIER_BAND_RATIO: f64 = 3.0;

/// Tolerance on the sum of the three class fractions.
pub const FRACTION_SUM_TOL: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    #[serde(rename = "N")]
    pub n: usize,
    /// Coefficient dimension L.
    #[serde(rename = "L")]
    pub dim: usize,
    /// Number of planted subspaces.
    #[serde(rename = "M_true")]
    pub components: usize,
    /// Dimension of every planted subspace.
    #[serde(rename = "K_true")]
    pub subspace_dim: usize,
    pub inlier_fraction: f64,
    pub outlier_fraction: f64,
    pub noise_fraction: f64,
    /// Per-pixel signal variance over noise variance, measured in the image
    /// domain of `image_pixels` pixels that the coefficients summarize.
    pub snr: f64,
    /// Pixel count of the implied images (71 × 71 by default). Coefficients of
    /// an orthonormal basis keep all of the band-limited signal energy but only
    /// L of the `image_pixels` noise dimensions.
    pub image_pixels: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            n: 12_000,
            dim: 100,
            components: 3,
            subspace_dim: 20,
            inlier_fraction: 10.0 / 12.0,
            outlier_fraction: 1.0 / 12.0,
            noise_fraction: 1.0 / 12.0,
            snr: 0.1,
            image_pixels: 71 * 71,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let fr = [self.inlier_fraction, self.outlier_fraction, self.noise_fraction];
        if fr.iter().any(|f| !(0.0..=1.0).contains(f)) {
            return Err(Error::Input("class fractions must lie in [0, 1]".into()));
        }
        if (fr.iter().sum::<f64>() - 1.0).abs() > FRACTION_SUM_TOL {
            return Err(Error::Input(format!(
                "class fractions sum to {}, not 1",
                fr.iter().sum::<f64>()
            )));
        }
        if !(self.snr > 0.0) {
            return Err(Error::Input("snr must be positive".into()));
        }
        if self.n == 0 || self.components == 0 || self.subspace_dim == 0 || self.image_pixels == 0 {
            return Err(Error::Input("n, components, subspace_dim and image_pixels must be positive".into()));
        }
        if self.subspace_dim >= self.dim {
            return Err(Error::Input(format!(
                "subspace_dim {} must be below dim {}",
                self.subspace_dim, self.dim
            )));
        }
        Ok(())
    }

    /// (particles, outliers, pure noise): outlier and noise counts rounded to
    /// nearest, remainder to particles.
    pub fn class_counts(&self) -> (usize, usize, usize) {
        let outliers = (self.outlier_fraction * self.n as f64).round() as usize;
        let noise = (self.noise_fraction * self.n as f64).round() as usize;
        let particles = self.n.saturating_sub(outliers + noise);
        (particles, outliers, noise)
    }

    /// Dimension of the low-frequency band holding the planted geometry.
    pub fn band_dim(&self) -> usize {
        ((PARTICLE_BAND_RATIO * self.subspace_dim as f64).ceil() as usize)
            .max(self.subspace_dim + 1)
            .min(self.dim)
    }

    /// Number of lowest-frequency modes outlier fields are drawn from.
    pub fn outlier_pool_dim(&self) -> usize {
        ((OUTLIER_BAND_RATIO * self.subspace_dim as f64).ceil() as usize)
            .max(self.band_dim())
            .min(self.dim)
    }
}

/// Ground truth behind a synthetic dataset, aligned with dataset positions.
#[derive(Debug, Clone)]
pub struct PlantedModel {
    /// Orthonormal bases and centers of the planted components.
    pub subspaces: Vec<Subspace>,
    pub noise_variance: f64,
    /// Orthonormal L×F basis of the low-frequency band.
    pub band: DMatrix<f64>,
    /// Planted component of every particle; None for outliers and noise.
    pub component: Vec<Option<usize>>,
    /// Noise-free signal of every vector (L×N).
    pub clean: DMatrix<f64>,
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub dataset: Dataset,
    pub planted: PlantedModel,
}

/// Grid coordinates of coordinate j: (column, row) on a w-wide grid.
fn grid(dim: usize) -> (usize, usize) {
    let w = (dim as f64).sqrt().ceil() as usize;
    let h = dim.div_ceil(w);
    (w, h)
}

/// Cosine mode (p, q) sampled at the L grid positions.
fn cosine_mode(dim: usize, p: usize, q: usize) -> DVector<f64> {
    let (w, h) = grid(dim);
    DVector::from_fn(dim, |j, _| {
        let (u, v) = ((j % w) as f64, (j / w) as f64);
        let fu = std::f64::consts::PI * (u + 0.5) * p as f64 / w as f64;
        let fv = std::f64::consts::PI * (v + 0.5) * q as f64 / h as f64;
        fu.cos() * fv.cos()
    })
}

/// The `count` lowest-frequency mode indices, ordered by normalized frequency.
fn band_modes(dim: usize, count: usize) -> Vec<(usize, usize)> {
    let (w, h) = grid(dim);
    let mut modes: Vec<(usize, usize)> = (0..w).flat_map(|p| (0..h).map(move |q| (p, q))).collect();
    let freq = |&(p, q): &(usize, usize)| (p as f64 / w as f64).powi(2) + (q as f64 / h as f64).powi(2);
    modes.sort_by(|a, b| freq(a).total_cmp(&freq(b)).then(a.cmp(b)));
    modes.truncate(count);
    modes
}

fn gaussian_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.sample::<f64, _>(StandardNormal))
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let (n_particles, n_outliers, n_noise) = spec.class_counts();
    if n_particles == 0 {
        return Err(Error::Input("class fractions leave no particle vectors".into()));
    }
    let (l, k, m) = (spec.dim, spec.subspace_dim, spec.components);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);

    let modes = band_modes(l, spec.outlier_pool_dim());
    let raw = DMatrix::from_columns(
        &modes[..spec.band_dim()]
            .iter()
            .map(|&(p, q)| cosine_mode(l, p, q))
            .collect::<Vec<_>>(),
    );
    let band = linalg::thin_q(&raw);
    let f = band.ncols();

    let center_norm = (CENTER_ENERGY_RATIO * k as f64).sqrt();
    let subspaces = (0..m)
        .map(|_| {
            let g = DMatrix::from_fn(f, k, |_, _| rng.sample::<f64, _>(StandardNormal));
            let basis = &band * linalg::thin_q(&g);
            let c = gaussian_vector(&mut rng, f);
            let center = &band * (c.normalize() * center_norm);
            Subspace::new(basis, center)
        })
        .collect::<Result<Vec<_>>>()?;

    // Expected clean-signal energy of a particle: E‖Cx‖² + ‖μ‖² = K + ‖μ‖².
    let signal_energy = k as f64 + center_norm * center_norm;
    let noise_variance = if spec.snr.is_infinite() {
        0.0
    } else {
        signal_energy / (spec.image_pixels as f64 * spec.snr)
    };
    let noise_sd = noise_variance.sqrt();

    let mut labels: Vec<Label> = std::iter::repeat_n(Label::Particle, n_particles)
        .chain(std::iter::repeat_n(Label::Outlier, n_outliers))
        .chain(std::iter::repeat_n(Label::PureNoise, n_noise))
        .collect();
    labels.shuffle(&mut rng);

    let n = spec.n;
    let mut clean = DMatrix::zeros(l, n);
    let mut noisy = DMatrix::zeros(l, n);
    let mut component = Vec::with_capacity(n);
    for (i, label) in labels.iter().enumerate() {
        let signal = match label {
            Label::Particle => {
                let j = rng.random_range(0..m);
                component.push(Some(j));
                let x = gaussian_vector(&mut rng, k);
                subspaces[j].basis() * x + subspaces[j].center()
            }
            Label::Outlier => {
                component.push(None);
                let mut field = DVector::zeros(l);
                for _ in 0..3 {
                    let (p, q) = modes[rng.random_range(0..modes.len())];
                    let a: f64 = rng.sample(StandardNormal);
                    field += cosine_mode(l, p, q) * a;
                }
                let norm = field.norm();
                if norm > 0.0 {
                    field *= signal_energy.sqrt() / norm;
                }
                field
            }
            Label::PureNoise => {
                component.push(None);
                DVector::zeros(l)
            }
        };
        let noise = gaussian_vector(&mut rng, l) * noise_sd;
        noisy.set_column(i, &(&signal + noise));
        clean.set_column(i, &signal);
    }

    let dataset = Dataset::with_metadata(noisy, (0..n).collect(), Some(labels))?;
    Ok(SyntheticData {
        dataset,
        planted: PlantedModel {
            subspaces,
            noise_variance,
            band,
            component,
            clean,
        },
    })
}

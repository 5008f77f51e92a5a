//! Image stack → feature vectors: optional area-averaging downsample, circular
//! support mask, per-image normalization and an optional global PCA reduction.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io::mrc::ImageStack;
use crate::linalg;
use crate::model::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Normalization {
    #[default]
    None,
    ZeroMeanUnitNorm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    /// Mask radius as a fraction of half the (downsampled) image side.
    pub mask_radius_fraction: f64,
    pub downsample_to: Option<usize>,
    #[serde(rename = "reduce_to_L")]
    pub reduce_to_l: Option<usize>,
    pub normalize: Normalization,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            mask_radius_fraction: 1.0,
            downsample_to: None,
            reduce_to_l: None,
            normalize: Normalization::None,
        }
    }
}

/// Row i of the result averages the input samples overlapping the interval
/// [i·n/out, (i+1)·n/out), weighted by overlap length.
fn area_weights(n: usize, out: usize) -> DMatrix<f64> {
    let step = n as f64 / out as f64;
    DMatrix::from_fn(out, n, |i, j| {
        let (lo, hi) = (i as f64 * step, (i + 1) as f64 * step);
        let overlap = (hi.min(j as f64 + 1.0) - lo.max(j as f64)).max(0.0);
        overlap / step
    })
}

/// Area-averaging resample of an H×W image to side × side.
pub fn downsample(image: &DMatrix<f64>, side: usize) -> DMatrix<f64> {
    let rows = area_weights(image.nrows(), side);
    let cols = area_weights(image.ncols(), side);
    rows * image * cols.transpose()
}

/// Row-major positions of the pixels inside the circular mask.
fn mask_positions(h: usize, w: usize, fraction: f64) -> Vec<(usize, usize)> {
    let radius = fraction * h.min(w) as f64 / 2.0;
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = Vec::new();
    for y in 0..h {
        for x in 0..w {
            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            if d2 <= radius * radius + 1e-12 {
                out.push((y, x));
            }
        }
    }
    out
}

pub fn extract_features(stack: &ImageStack, cfg: &FeatureConfig) -> Result<Dataset> {
    let Some((h, w)) = stack.shape() else {
        return Err(Error::Input("image stack is empty".into()));
    };
    if stack.images.iter().any(|img| img.shape() != (h, w)) {
        return Err(Error::Input("images in the stack differ in size".into()));
    }
    if !(cfg.mask_radius_fraction > 0.0 && cfg.mask_radius_fraction <= 1.0) {
        return Err(Error::Input("mask_radius_fraction must lie in (0, 1]".into()));
    }
    let (h, w) = match cfg.downsample_to {
        Some(s) if s == 0 || s > h.min(w) => {
            return Err(Error::Input(format!(
                "downsample_to = {s} must lie in [1, {}]",
                h.min(w)
            )))
        }
        Some(s) => (s, s),
        None => (h, w),
    };
    let mask = mask_positions(h, w, cfg.mask_radius_fraction);
    if let Some(l) = cfg.reduce_to_l {
        if l == 0 || l >= mask.len() {
            return Err(Error::Input(format!(
                "reduce_to_L = {l} must be positive and below the {} masked pixels",
                mask.len()
            )));
        }
    }

    let columns: Vec<DVector<f64>> = stack
        .images
        .par_iter()
        .map(|img| {
            let img = match cfg.downsample_to {
                Some(s) => downsample(img, s),
                None => img.clone(),
            };
            let mut v = DVector::from_iterator(mask.len(), mask.iter().map(|&p| img[p]));
            if cfg.normalize == Normalization::ZeroMeanUnitNorm {
                let mean = v.mean();
                v.add_scalar_mut(-mean);
                let norm = v.norm();
                if norm > 0.0 {
                    v /= norm;
                }
            }
            v
        })
        .collect();
    let mut matrix = DMatrix::from_columns(&columns);

    if let Some(l) = cfg.reduce_to_l {
        let mean = matrix.column_mean();
        for mut col in matrix.column_iter_mut() {
            col -= &mean;
        }
        let directions = linalg::principal_directions(&matrix, l);
        matrix = directions.tr_mul(&matrix);
    }
    Dataset::from_columns(matrix)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stack(images: Vec<DMatrix<f64>>) -> ImageStack {
        ImageStack {
            images,
            pixel_size: None,
            source: "test".into(),
        }
    }

    #[test]
    fn identity_config_flattens_row_major() {
        let s = stack(vec![DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 3.0, 4.0])]);
        let d = extract_features(&s, &FeatureConfig::default()).unwrap();
        assert_eq!(d.vector(0).as_slice(), &[1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn mask_drops_corners() {
        let s = stack(vec![DMatrix::from_element(8, 8, 1.0)]);
        let d = extract_features(&s, &FeatureConfig::default()).unwrap();
        assert!(d.dim() < 64);
        assert!(d.dim() > 40);
    }

    #[test]
    fn downsample_preserves_mean() {
        let img = DMatrix::from_fn(6, 6, |i, j| (i * 6 + j) as f64);
        let small = downsample(&img, 4);
        assert_eq!(small.shape(), (4, 4));
        assert!((small.mean() - img.mean()).abs() < 1e-12);
        let half = downsample(&img, 3);
        assert!((half[(0, 0)] - (0.0 + 1.0 + 6.0 + 7.0) / 4.0).abs() < 1e-12);
    }

    #[test]
    fn normalization_contract() {
        let imgs = (0..3)
            .map(|k| DMatrix::from_fn(4, 4, |i, j| ((i + 2 * j + k) % 5) as f64 + k as f64))
            .collect();
        let cfg = FeatureConfig {
            normalize: Normalization::ZeroMeanUnitNorm,
            ..FeatureConfig::default()
        };
        let d = extract_features(&stack(imgs), &cfg).unwrap();
        for i in 0..d.len() {
            let v = d.vector(i);
            assert!(v.mean().abs() < 1e-12);
            assert!((v.norm() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn reduction_bounds_are_checked() {
        let s = stack(vec![DMatrix::from_element(2, 2, 1.0); 3]);
        let cfg = FeatureConfig {
            reduce_to_l: Some(4),
            ..FeatureConfig::default()
        };
        assert!(matches!(extract_features(&s, &cfg), Err(Error::Input(_))));
        let cfg = FeatureConfig {
            downsample_to: Some(3),
            ..FeatureConfig::default()
        };
        assert!(matches!(extract_features(&s, &cfg), Err(Error::Input(_))));
    }
}

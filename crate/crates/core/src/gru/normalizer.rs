use serde::{Deserialize, Serialize};

use super::dataset::TrajectoryDataset;
use crate::error::{Error, Result};

pub const DEFAULT_SCALE_FLOOR: f64 = 1e-6;

/// Per-feature affine normalization `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Normalizer {
    pub fn identity(dim: usize) -> Self {
        Normalizer {
            mean: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.mean.len() != self.scale.len() {
            return Err(Error::contract("normalizer mean/scale length mismatch"));
        }
        if self.mean.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("normalizer mean is not finite"));
        }
        if self.scale.iter().any(|s| !(s.is_finite() && *s > 0.0)) {
            return Err(Error::numeric("normalizer scale must be finite and positive"));
        }
        Ok(())
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn denormalize(&self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .zip(&self.mean)
            .zip(&self.scale)
            .map(|((v, m), s)| v * s + m)
            .collect()
    }

    /// Rescales a normalized difference; deltas carry no mean offset.
    pub fn denormalize_delta(&self, d: &[f64]) -> Vec<f64> {
        d.iter().zip(&self.scale).map(|(v, s)| v * s).collect()
    }

    pub fn normalize_delta(&self, d: &[f64]) -> Vec<f64> {
        d.iter().zip(&self.scale).map(|(v, s)| v / s).collect()
    }
}

/// Per-feature sample mean and (population) standard deviation over every
/// state in the dataset, with the standard deviation floored at `scale_floor`.
pub fn fit_normalizer(dataset: &TrajectoryDataset, scale_floor: f64) -> Result<Normalizer> {
    if !(scale_floor > 0.0 && scale_floor.is_finite()) {
        return Err(Error::Usage(format!("scale floor must be positive, got {scale_floor}")));
    }
    let dim = dataset.input_dim;
    let n = dataset.sample_count();
    if n == 0 {
        return Err(Error::Usage("cannot fit a normalizer on an empty dataset".into()));
    }
    let mut mean = vec![0.0; dim];
    for s in dataset.states() {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);

    let mut var = vec![0.0; dim];
    for s in dataset.states() {
        for k in 0..dim {
            let d = s[k] - mean[k];
            var[k] += d * d;
        }
    }
    let scale = var
        .into_iter()
        .map(|v| (v / n as f64).sqrt().max(scale_floor))
        .collect();
    Ok(Normalizer { mean, scale })
}

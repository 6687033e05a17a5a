use std::path::Path;

use serde::{Deserialize, Serialize};

use super::dataset::{DatasetSplit, TrajectoryDataset};
use super::normalizer::Normalizer;
use super::params::GruParams;
use crate::error::{Error, Result};

pub const MODEL_FORMAT_VERSION: u32 = 1;

/// A trained residual transition model `x' = x + scale ⊙ GRU(norm(x), h)`.
///
/// Immutable once built; the recurrent hidden vector is owned by callers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionModel {
    pub model_version: u32,
    /// Per-component one-step squared error on held-out data, in state units.
    pub train_mse: Vec<f64>,
    pub normalizer: Normalizer,
    pub params: GruParams,
}

impl TransitionModel {
    pub fn new(params: GruParams, normalizer: Normalizer) -> Result<Self> {
        let m = TransitionModel {
            model_version: MODEL_FORMAT_VERSION,
            train_mse: vec![0.0; params.input_dim],
            normalizer,
            params,
        };
        m.validate()?;
        Ok(m)
    }

    /// A model whose read-out is zero, i.e. `x' = x`.
    pub fn zero_residual(input_dim: usize, hidden_dim: usize) -> Self {
        TransitionModel {
            model_version: MODEL_FORMAT_VERSION,
            train_mse: vec![0.0; input_dim],
            normalizer: Normalizer::identity(input_dim),
            params: GruParams::zeros(input_dim, hidden_dim),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.params.input_dim
    }

    pub fn hidden_dim(&self) -> usize {
        self.params.hidden_dim
    }

    pub fn initial_hidden(&self) -> Vec<f64> {
        vec![0.0; self.hidden_dim()]
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.normalizer.validate()?;
        if self.normalizer.dim() != self.input_dim() || self.train_mse.len() != self.input_dim() {
            return Err(Error::contract("normalizer/train_mse length does not match input_dim"));
        }
        if self.train_mse.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::numeric("train_mse entries must be finite and non-negative"));
        }
        Ok(())
    }

    /// One-step prediction. Returns `(x', h')`.
    pub fn predict_next(&self, hidden: &[f64], x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        if x.len() != self.input_dim() {
            return Err(Error::contract(format!(
                "state has length {}, model expects {}",
                x.len(),
                self.input_dim()
            )));
        }
        if let Some(k) = x.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("state component {k} is not finite")));
        }
        let x_norm = self.normalizer.normalize(x);
        if let Some(k) = x_norm.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("normalized state component {k} is not finite")));
        }
        let (h, residual) = self.params.cell_step(hidden, &x_norm)?;
        let next: Vec<f64> = x
            .iter()
            .zip(self.normalizer.denormalize_delta(&residual))
            .map(|(a, d)| a + d)
            .collect();
        if let Some(k) = next.iter().position(|v| !v.is_finite()) {
            return Err(Error::numeric(format!("predicted state component {k} is not finite")));
        }
        Ok((next, h))
    }

    /// `n` chained predictions from `(x0, h0)`; the result has `n + 1` states starting with `x0`.
    pub fn open_loop_rollout(&self, x0: &[f64], h0: &[f64], n: usize) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(n + 1);
        out.push(x0.to_vec());
        let mut h = h0.to_vec();
        for _ in 0..n {
            let (x, h_next) = self.predict_next(&h, out.last().unwrap())?;
            h = h_next;
            out.push(x);
        }
        Ok(out)
    }

    /// Per-component one-step mean squared error over a held-out dataset, hidden state
    /// reset at each episode start.
    pub fn compute_training_mse(&self, holdout: &TrajectoryDataset) -> Result<Vec<f64>> {
        if holdout.split == DatasetSplit::Train {
            return Err(Error::Usage(
                "training MSE must be computed on held-out data, got the training split".into(),
            ));
        }
        if holdout.input_dim != self.input_dim() {
            return Err(Error::contract("holdout dimension does not match model"));
        }
        let n = holdout.transition_count();
        if n == 0 {
            return Err(Error::Usage("holdout dataset has no transitions".into()));
        }
        let mut sse = vec![0.0; self.input_dim()];
        for ep in &holdout.episodes {
            let mut h = self.initial_hidden();
            for t in 0..ep.len().saturating_sub(1) {
                let (pred, h_next) = self.predict_next(&h, ep.state(t))?;
                h = h_next;
                for (k, s) in sse.iter_mut().enumerate() {
                    let e = pred[k] - ep.state(t + 1)[k];
                    *s += e * e;
                }
            }
        }
        Ok(sse.into_iter().map(|s| s / n as f64).collect())
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::numeric(format!("cannot serialize model: {e}")))
    }

    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let line_of = |span: Option<std::ops::Range<usize>>| {
            span.map(|s| text[..s.start.min(text.len())].lines().count().max(1))
                .unwrap_or(0)
        };
        let table: toml::Table = toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_of(e.span()),
            msg: e.message().to_string(),
        })?;
        let version = table
            .get("model_version")
            .and_then(toml::Value::as_integer)
            .ok_or_else(|| Error::Parse {
                path: path.to_path_buf(),
                line: 0,
                msg: "missing integer field `model_version`".into(),
            })?;
        if version != MODEL_FORMAT_VERSION as i64 {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: u32::try_from(version).unwrap_or(u32::MAX),
                expected: MODEL_FORMAT_VERSION,
            });
        }
        let model: TransitionModel = toml::from_str(text).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: line_of(e.span()),
            msg: e.message().to_string(),
        })?;
        model.validate().map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: 0,
            msg: e.to_string(),
        })?;
        Ok(model)
    }
}

pub fn save_model(model: &TransitionModel, path: &Path) -> Result<()> {
    std::fs::write(path, model.to_toml()?).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<TransitionModel> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    TransitionModel::from_toml(&text, path)
}

//! Truncated backpropagation through time with Adam.
//!
//! The loss is the mean squared error between the read-out and the normalized
//! one-step residual `(x[t+1] - x[t]) / scale`. Sequences are processed in
//! lock-step batches; each sequence's hidden state is carried from one
//! truncation window to the next (without gradient) and starts at zero at the
//! beginning of its episode.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::dataset::TrajectoryDataset;
use super::model::TransitionModel;
use super::normalizer::{fit_normalizer, Normalizer, DEFAULT_SCALE_FLOOR};
use super::params::{GruParams, StepCache};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSpec {
    pub epochs: usize,
    pub learning_rate: f64,
    /// multiplies the learning rate after every epoch
    pub lr_decay: f64,
    /// sequences per batch
    pub batch_size: usize,
    /// steps per truncation window
    pub truncation_length: usize,
    pub seed: u64,
    pub validation_fraction: f64,
    pub hidden_dim: usize,
    pub scale_floor: f64,
}

impl Default for TrainSpec {
    fn default() -> Self {
        TrainSpec {
            epochs: 15,
            learning_rate: 1e-3,
            lr_decay: 1.0,
            batch_size: 16,
            truncation_length: 32,
            seed: 0,
            validation_fraction: 0.1,
            hidden_dim: 32,
            scale_floor: DEFAULT_SCALE_FLOOR,
        }
    }
}

impl TrainSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::config(format!("train spec: {what}")));
        if self.epochs == 0 {
            return bad("epochs must be positive");
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad("learning_rate must be positive");
        }
        if !(self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return bad("lr_decay must lie in (0, 1]");
        }
        if self.batch_size == 0 || self.truncation_length == 0 || self.hidden_dim == 0 {
            return bad("batch_size, truncation_length and hidden_dim must be positive");
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction <= 0.5) {
            return bad("validation_fraction must lie in (0, 0.5]");
        }
        if !(self.scale_floor > 0.0 && self.scale_floor.is_finite()) {
            return bad("scale_floor must be positive");
        }
        Ok(())
    }
}

/// An episode converted to normalized inputs and normalized residual targets.
#[derive(Debug, Clone)]
pub struct PreparedEpisode {
    pub inputs: Vec<Vec<f64>>,
    pub targets: Vec<Vec<f64>>,
}

pub fn prepare_episodes(ds: &TrajectoryDataset, norm: &Normalizer) -> Vec<PreparedEpisode> {
    ds.episodes
        .iter()
        .map(|ep| {
            let n = ep.len().saturating_sub(1);
            let inputs = (0..n).map(|t| norm.normalize(ep.state(t))).collect();
            let targets = (0..n)
                .map(|t| {
                    let d: Vec<f64> = ep
                        .state(t + 1)
                        .iter()
                        .zip(ep.state(t))
                        .map(|(a, b)| a - b)
                        .collect();
                    norm.normalize_delta(&d)
                })
                .collect();
            PreparedEpisode { inputs, targets }
        })
        .collect()
}

/// One lane of a truncation window: inputs, targets and the hidden state entering the window.
#[derive(Debug, Clone, Copy)]
pub struct Lane<'a> {
    pub inputs: &'a [Vec<f64>],
    pub targets: &'a [Vec<f64>],
    pub h0: &'a [f64],
}

#[derive(Debug, Clone)]
pub struct WindowOutcome {
    /// mean squared error over every (lane, step, component) term
    pub loss: f64,
    pub grad: GruParams,
    pub final_hidden: Vec<Vec<f64>>,
    pub terms: usize,
}

/// Forward-only loss of a window (same definition as [`window_loss_and_grad`]).
pub fn window_loss(params: &GruParams, lanes: &[Lane<'_>]) -> f64 {
    let mut sse = 0.0;
    let mut terms = 0usize;
    for lane in lanes {
        let mut h = lane.h0.to_vec();
        for (x, target) in lane.inputs.iter().zip(lane.targets) {
            h = params.forward_cached(&h, x).h;
            let y = params.read_out(&h);
            sse += y.iter().zip(target).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
            terms += target.len();
        }
    }
    if terms == 0 {
        0.0
    } else {
        sse / terms as f64
    }
}

/// Loss and exact gradient of a window, backpropagating through every step of every lane.
/// The entering hidden states are treated as constants.
pub fn window_loss_and_grad(params: &GruParams, lanes: &[Lane<'_>]) -> WindowOutcome {
    let mut grad = GruParams::zeros(params.input_dim, params.hidden_dim);
    let terms: usize = lanes
        .iter()
        .flat_map(|l| l.targets.iter().map(Vec::len))
        .sum();
    let mut sse = 0.0;
    let mut final_hidden = Vec::with_capacity(lanes.len());
    if terms == 0 {
        final_hidden.extend(lanes.iter().map(|l| l.h0.to_vec()));
        return WindowOutcome {
            loss: 0.0,
            grad,
            final_hidden,
            terms,
        };
    }
    let inv = 1.0 / terms as f64;
    for lane in lanes {
        let mut caches: Vec<StepCache> = Vec::with_capacity(lane.inputs.len());
        let mut dys: Vec<Vec<f64>> = Vec::with_capacity(lane.inputs.len());
        let mut h = lane.h0.to_vec();
        for (x, target) in lane.inputs.iter().zip(lane.targets) {
            let c = params.forward_cached(&h, x);
            let y = params.read_out(&c.h);
            let dy: Vec<f64> = y
                .iter()
                .zip(target)
                .map(|(a, b)| {
                    sse += (a - b) * (a - b);
                    2.0 * (a - b) * inv
                })
                .collect();
            h = c.h.clone();
            caches.push(c);
            dys.push(dy);
        }
        final_hidden.push(h);

        let mut dh_next = vec![0.0; params.hidden_dim];
        for (c, dy) in caches.iter().zip(&dys).rev() {
            super::params::outer_acc(&mut grad.w_out, dy, &c.h);
            grad.b_out.iter_mut().zip(dy).for_each(|(g, d)| *g += d);
            let mut dh = dh_next;
            super::params::matvec_t_acc(&mut dh, &params.w_out, params.hidden_dim, dy);
            dh_next = params.backward_step(c, &dh, &mut grad);
        }
    }
    WindowOutcome {
        loss: sse * inv,
        grad,
        final_hidden,
        terms,
    }
}

/// Mean normalized squared residual error over whole episodes, hidden reset to zero per episode.
pub fn normalized_mse(params: &GruParams, episodes: &[PreparedEpisode]) -> f64 {
    let h0 = vec![0.0; params.hidden_dim];
    let lanes: Vec<Lane<'_>> = episodes
        .iter()
        .map(|e| Lane {
            inputs: &e.inputs,
            targets: &e.targets,
            h0: &h0,
        })
        .collect();
    window_loss(params, &lanes)
}

struct Adam {
    m: GruParams,
    v: GruParams,
    t: i32,
    lr: f64,
}

impl Adam {
    const BETA1: f64 = 0.9;
    const BETA2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(shape: &GruParams, lr: f64) -> Self {
        Adam {
            m: GruParams::zeros(shape.input_dim, shape.hidden_dim),
            v: GruParams::zeros(shape.input_dim, shape.hidden_dim),
            t: 0,
            lr,
        }
    }

    fn step(&mut self, params: &mut GruParams, grad: &GruParams) {
        self.t += 1;
        let c1 = 1.0 - Self::BETA1.powi(self.t);
        let c2 = 1.0 - Self::BETA2.powi(self.t);
        let grads = grad.tensors();
        for (((p, m), v), (_, g)) in params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(grads.iter())
        {
            for k in 0..p.len() {
                m[k] = Self::BETA1 * m[k] + (1.0 - Self::BETA1) * g[k];
                v[k] = Self::BETA2 * v[k] + (1.0 - Self::BETA2) * g[k] * g[k];
                p[k] -= self.lr * (m[k] / c1) / ((v[k] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub model: TransitionModel,
    /// validation normalized MSE after each epoch
    pub loss_curve: Vec<f64>,
    /// mean training window loss during each epoch
    pub train_curve: Vec<f64>,
}

/// Fits a residual GRU on the converged-policy episodes of `dataset`.
///
/// The normalizer is fitted on the training split; `train_mse` on the model is
/// computed on the held-out split.
pub fn train_transition_model(dataset: &TrajectoryDataset, spec: &TrainSpec) -> Result<TrainOutcome> {
    spec.validate()?;
    let data = dataset.curated();
    if data.is_empty() {
        return Err(Error::Usage("no converged-policy episodes to train on".into()));
    }
    if let Some(e) = data.episodes.iter().position(|e| e.len() < 2) {
        return Err(Error::Usage(format!("episode {e} has fewer than 2 samples")));
    }
    let (train, holdout) = data.split_holdout(spec.validation_fraction, spec.seed)?;
    let normalizer = fit_normalizer(&train, spec.scale_floor)?;
    let train_eps = prepare_episodes(&train, &normalizer);
    let val_eps = prepare_episodes(&holdout, &normalizer);

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut params = GruParams::init_uniform(data.input_dim, spec.hidden_dim, &mut rng);
    // zero read-out: training starts from the identity transition x' = x
    params.w_out.fill(0.0);
    params.b_out.fill(0.0);
    let mut adam = Adam::new(&params, spec.learning_rate);
    let mut loss_curve = Vec::with_capacity(spec.epochs);
    let mut train_curve = Vec::with_capacity(spec.epochs);
    let mut order: Vec<usize> = (0..train_eps.len()).collect();

    for epoch in 0..spec.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut windows = 0usize;
        for (batch, idx) in order.chunks(spec.batch_size).enumerate() {
            let mut hidden: Vec<Vec<f64>> = vec![vec![0.0; spec.hidden_dim]; idx.len()];
            let longest = idx.iter().map(|&i| train_eps[i].inputs.len()).max().unwrap_or(0);
            let mut start = 0;
            while start < longest {
                let mut lane_ids = Vec::new();
                let mut lanes = Vec::new();
                for (lane, &i) in idx.iter().enumerate() {
                    let ep = &train_eps[i];
                    if start >= ep.inputs.len() {
                        continue;
                    }
                    let end = (start + spec.truncation_length).min(ep.inputs.len());
                    lane_ids.push(lane);
                    lanes.push(Lane {
                        inputs: &ep.inputs[start..end],
                        targets: &ep.targets[start..end],
                        h0: &hidden[lane],
                    });
                }
                let out = window_loss_and_grad(&params, &lanes);
                let grad_ok = out.grad.tensors().iter().all(|(_, t)| t.iter().all(|g| g.is_finite()));
                if !out.loss.is_finite() || !grad_ok {
                    return Err(Error::Training {
                        epoch,
                        batch,
                        reason: format!("non-finite loss {} at window starting step {start}", out.loss),
                    });
                }
                for (lane, h) in lane_ids.into_iter().zip(out.final_hidden) {
                    hidden[lane] = h;
                }
                adam.step(&mut params, &out.grad);
                epoch_loss += out.loss;
                windows += 1;
                start += spec.truncation_length;
            }
        }
        let val = normalized_mse(&params, &val_eps);
        if !val.is_finite() {
            return Err(Error::Training {
                epoch,
                batch: 0,
                reason: "non-finite validation loss".into(),
            });
        }
        loss_curve.push(val);
        train_curve.push(epoch_loss / windows.max(1) as f64);
        adam.lr *= spec.lr_decay;
    }

    let mut model = TransitionModel::new(params, normalizer)?;
    model.train_mse = model.compute_training_mse(&holdout)?;
    Ok(TrainOutcome {
        model,
        loss_curve,
        train_curve,
    })
}

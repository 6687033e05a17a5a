use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Gaussian belief over one neighbor's communicated state.
#[derive(Debug, Clone, PartialEq)]
pub struct Belief {
    pub mean: DVector<f64>,
    pub cov: DMatrix<f64>,
    /// recurrent state of the transition model that produced `mean`
    pub hidden: Vec<f64>,
    /// control step the estimate refers to
    pub stamp: u64,
}

impl Belief {
    pub fn new(mean: DVector<f64>, cov: DMatrix<f64>, hidden: Vec<f64>, stamp: u64) -> Result<Self> {
        let d = mean.len();
        if cov.nrows() != d || cov.ncols() != d {
            return Err(Error::contract(format!(
                "covariance is {}x{}, mean has {d} components",
                cov.nrows(),
                cov.ncols()
            )));
        }
        let mut b = Belief {
            mean,
            cov,
            hidden,
            stamp,
        };
        b.symmetrize();
        Ok(b)
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub(crate) fn symmetrize(&mut self) {
        let t = self.cov.transpose();
        self.cov += t;
        self.cov *= 0.5;
    }

    /// Smallest eigenvalue of the covariance.
    pub fn min_eigenvalue(&self) -> f64 {
        self.cov
            .clone()
            .symmetric_eigenvalues()
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// The last verified (post-update) belief of a neighbor, including the model's hidden state.
/// Rollouts always start from here and never write back into it.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint(pub(crate) Belief);

impl Checkpoint {
    pub fn belief(&self) -> &Belief {
        &self.0
    }

    pub fn stamp(&self) -> u64 {
        self.0.stamp
    }
}

/// Which state components a measurement observes: `z[k] = x[rows[k]]`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MeasurementMap {
    pub state_dim: usize,
    pub rows: Vec<usize>,
}

impl MeasurementMap {
    pub fn identity(state_dim: usize) -> Self {
        MeasurementMap {
            state_dim,
            rows: (0..state_dim).collect(),
        }
    }

    pub fn select(state_dim: usize, rows: Vec<usize>) -> Result<Self> {
        let m = MeasurementMap { state_dim, rows };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(Error::config("measurement map selects no components"));
        }
        let mut seen = vec![false; self.state_dim];
        for &r in &self.rows {
            if r >= self.state_dim {
                return Err(Error::config(format!("measurement row {r} out of range")));
            }
            if std::mem::replace(&mut seen[r], true) {
                // repeated rows would make H rank deficient
                return Err(Error::config(format!("measurement row {r} selected twice")));
            }
        }
        Ok(())
    }

    pub fn output_dim(&self) -> usize {
        self.rows.len()
    }

    pub fn matrix(&self) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.rows.len(), self.state_dim);
        for (k, &r) in self.rows.iter().enumerate() {
            h[(k, r)] = 1.0;
        }
        h
    }

    /// Extracts the observed components of a full payload.
    pub fn observe(&self, payload: &[f64]) -> Result<DVector<f64>> {
        if payload.len() != self.state_dim {
            return Err(Error::contract(format!(
                "payload has {} components, measurement map expects {}",
                payload.len(),
                self.state_dim
            )));
        }
        Ok(DVector::from_iterator(self.rows.len(), self.rows.iter().map(|&r| payload[r])))
    }
}

/// Position/velocity index pairs for the kinematic baseline.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KinematicLayout {
    pub pairs: Vec<(usize, usize)>,
}

impl KinematicLayout {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if self.pairs.is_empty() {
            return Err(Error::config("kinematic layout declares no position/velocity pairs"));
        }
        let mut used = vec![false; dim];
        for &(p, v) in &self.pairs {
            for i in [p, v] {
                if i >= dim || std::mem::replace(&mut used[i], true) {
                    return Err(Error::config(format!("kinematic layout index {i} invalid or reused")));
                }
            }
        }
        Ok(())
    }
}

/// Filter covariances derived from the transition model's held-out error.
///
/// `Q = diag(train_mse)` (floored), `R = rho · diag(Q[rows])`, `P0 = p0_scale · Q`.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterConfig {
    pub process_cov: DMatrix<f64>,
    pub meas_cov: DMatrix<f64>,
    pub meas_map: MeasurementMap,
    pub naive_damping: f64,
    pub init_cov: DMatrix<f64>,
}

pub const DEFAULT_RHO: f64 = 0.25;
pub const DEFAULT_NAIVE_DAMPING: f64 = 0.95;
/// Lower bound on process variances so `Q` and `R` stay positive for a perfect model.
pub const PROCESS_VARIANCE_FLOOR: f64 = 1e-12;

impl FilterConfig {
    pub fn from_train_mse(
        train_mse: &[f64],
        rho: f64,
        meas_map: MeasurementMap,
        naive_damping: f64,
        p0_scale: f64,
    ) -> Result<Self> {
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::config(format!("rho must be positive, got {rho}")));
        }
        if !(p0_scale > 0.0 && p0_scale.is_finite()) {
            return Err(Error::config(format!("P0 scale must be positive, got {p0_scale}")));
        }
        if meas_map.state_dim != train_mse.len() {
            return Err(Error::config("measurement map does not match the state dimension"));
        }
        meas_map.validate()?;
        let q: Vec<f64> = train_mse.iter().map(|v| v.max(PROCESS_VARIANCE_FLOOR)).collect();
        let r: Vec<f64> = meas_map.rows.iter().map(|&k| rho * q[k]).collect();
        let cfg = FilterConfig {
            process_cov: DMatrix::from_diagonal(&DVector::from_vec(q.clone())),
            meas_cov: DMatrix::from_diagonal(&DVector::from_vec(r)),
            meas_map,
            naive_damping,
            init_cov: DMatrix::from_diagonal(&DVector::from_vec(q)) * p0_scale,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn state_dim(&self) -> usize {
        self.process_cov.nrows()
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.state_dim();
        let diag_positive = |m: &DMatrix<f64>| {
            m.is_square()
                && (0..m.nrows()).all(|i| {
                    (0..m.ncols()).all(|j| if i == j { m[(i, j)] > 0.0 } else { m[(i, j)] == 0.0 })
                })
        };
        if !diag_positive(&self.process_cov) {
            return Err(Error::config("process covariance must be diagonal positive"));
        }
        if !diag_positive(&self.meas_cov) || self.meas_cov.nrows() != self.meas_map.output_dim() {
            return Err(Error::config("measurement covariance must be diagonal positive and match H"));
        }
        if self.init_cov.nrows() != d || !diag_positive(&self.init_cov) {
            return Err(Error::config("initial covariance must be diagonal positive"));
        }
        if !(self.naive_damping > 0.0 && self.naive_damping <= 1.0) {
            return Err(Error::config("naive damping must lie in (0, 1]"));
        }
        self.meas_map.validate()
    }
}

/// Layout of the policy input: local observation followed by each neighbor's mean,
/// neighbors in ascending agent-id order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BeliefLayout {
    pub local_dim: usize,
    pub neighbor_dim: usize,
    pub n_neighbors: usize,
}

impl BeliefLayout {
    pub fn len(&self) -> usize {
        self.local_dim + self.neighbor_dim * self.n_neighbors
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Offset of the `j`-th neighbor block.
    pub fn neighbor_offset(&self, j: usize) -> usize {
        self.local_dim + j * self.neighbor_dim
    }

    pub fn build(&self, local_obs: &[f64], neighbors: &[&Belief]) -> Result<Vec<f64>> {
        if local_obs.len() != self.local_dim || neighbors.len() != self.n_neighbors {
            return Err(Error::contract(format!(
                "belief layout expects local {} + {} neighbors, got local {} + {} neighbors",
                self.local_dim,
                self.n_neighbors,
                local_obs.len(),
                neighbors.len()
            )));
        }
        if let Some(b) = neighbors.iter().find(|b| b.dim() != self.neighbor_dim) {
            return Err(Error::contract(format!(
                "neighbor estimate has {} components, layout expects {}",
                b.dim(),
                self.neighbor_dim
            )));
        }
        Ok(build_belief(local_obs, neighbors))
    }
}

/// Concatenates the local observation with each neighbor's current mean.
pub fn build_belief(local_obs: &[f64], neighbors: &[&Belief]) -> Vec<f64> {
    let mut out = local_obs.to_vec();
    for b in neighbors {
        out.extend(b.mean.iter());
    }
    out
}

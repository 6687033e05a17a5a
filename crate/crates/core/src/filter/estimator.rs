use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use super::belief::{Belief, Checkpoint, FilterConfig, KinematicLayout};
use super::kalman::{kf_predict, kf_update, naive_predict, DynamicsModel};
use crate::channel::Packet;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EstimatorMode {
    /// learned mean propagation with Kalman updates
    GruKalman,
    /// damped constant-velocity filter
    NaiveKalman,
    /// learned rollout restarted from each received payload
    GruOnly,
    /// zero-order hold on the newest payload
    NoCompensation,
}

impl EstimatorMode {
    pub const ALL: [EstimatorMode; 4] = [
        EstimatorMode::GruKalman,
        EstimatorMode::NaiveKalman,
        EstimatorMode::GruOnly,
        EstimatorMode::NoCompensation,
    ];

    pub fn name(self) -> &'static str {
        match self {
            EstimatorMode::GruKalman => "gru_kalman",
            EstimatorMode::NaiveKalman => "naive_kalman",
            EstimatorMode::GruOnly => "gru_only",
            EstimatorMode::NoCompensation => "no_compensation",
        }
    }

    pub fn needs_model(self) -> bool {
        matches!(self, EstimatorMode::GruKalman | EstimatorMode::GruOnly)
    }
}

impl std::fmt::Display for EstimatorMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for EstimatorMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        EstimatorMode::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::config(format!("unknown estimator mode `{s}`")))
    }
}

/// How the mean is propagated between packets.
#[derive(Clone)]
pub enum Predictor {
    Model(Arc<dyn DynamicsModel>),
    Kinematic { layout: KinematicLayout, dt: f64 },
    /// used by the zero-order hold, which never predicts
    Hold,
}

impl std::fmt::Debug for Predictor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Predictor::Model(m) => write!(f, "Model(dim {})", m.state_dim()),
            Predictor::Kinematic { layout, dt } => write!(f, "Kinematic({layout:?}, dt {dt})"),
            Predictor::Hold => f.write_str("Hold"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct EstimatorDiagnostics {
    pub steps: u64,
    pub packets_processed: u64,
    pub stale_dropped: u64,
    /// `now - checkpoint.stamp` after each step
    pub rollout_depth: BTreeMap<u64, u64>,
}

impl EstimatorDiagnostics {
    pub fn mean_rollout_depth(&self) -> f64 {
        if self.steps == 0 {
            return 0.0;
        }
        self.rollout_depth.iter().map(|(&d, &n)| (d * n) as f64).sum::<f64>() / self.steps as f64
    }
}

/// Recursive belief about one neighbor.
///
/// Invariant: `current` equals the rollout of `checkpoint` to `current.stamp`.
#[derive(Debug, Clone)]
pub struct NeighborEstimator {
    mode: EstimatorMode,
    config: FilterConfig,
    predictor: Predictor,
    checkpoint: Checkpoint,
    current: Belief,
    last_packet_stamp: Option<u64>,
    diagnostics: EstimatorDiagnostics,
}

impl NeighborEstimator {
    /// Starts from a known state at `stamp` with `P0` from the config and a zero hidden state.
    pub fn new(
        mode: EstimatorMode,
        config: FilterConfig,
        predictor: Predictor,
        initial_state: &[f64],
        stamp: u64,
    ) -> Result<Self> {
        config.validate()?;
        let d = config.state_dim();
        if initial_state.len() != d {
            return Err(Error::contract(format!(
                "initial state has {} components, filter expects {d}",
                initial_state.len()
            )));
        }
        let hidden = match (&predictor, mode) {
            (Predictor::Model(m), EstimatorMode::GruKalman | EstimatorMode::GruOnly) => {
                if m.state_dim() != d {
                    return Err(Error::config(format!(
                        "model state dimension {} does not match filter dimension {d}",
                        m.state_dim()
                    )));
                }
                m.initial_hidden()
            }
            (Predictor::Kinematic { layout, dt }, EstimatorMode::NaiveKalman) => {
                layout.validate(d)?;
                if !(*dt > 0.0 && dt.is_finite()) {
                    return Err(Error::config(format!("kinematic dt must be positive, got {dt}")));
                }
                Vec::new()
            }
            (Predictor::Hold, EstimatorMode::NoCompensation) => Vec::new(),
            (p, m) => return Err(Error::config(format!("mode {m} cannot run with predictor {p:?}"))),
        };
        let belief = Belief::new(DVector::from_column_slice(initial_state), config.init_cov.clone(), hidden, stamp)?;
        Ok(NeighborEstimator {
            mode,
            config,
            predictor,
            checkpoint: Checkpoint(belief.clone()),
            current: belief,
            last_packet_stamp: None,
            diagnostics: EstimatorDiagnostics::default(),
        })
    }

    pub fn mode(&self) -> EstimatorMode {
        self.mode
    }

    pub fn config(&self) -> &FilterConfig {
        &self.config
    }

    pub fn current(&self) -> &Belief {
        &self.current
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.checkpoint
    }

    pub fn last_packet_stamp(&self) -> Option<u64> {
        self.last_packet_stamp
    }

    pub fn diagnostics(&self) -> &EstimatorDiagnostics {
        &self.diagnostics
    }

    /// One predict step of this estimator's mode.
    pub fn predict(&self, belief: &Belief) -> Result<Belief> {
        match &self.predictor {
            Predictor::Model(m) => kf_predict(belief, m.as_ref(), &self.config.process_cov),
            Predictor::Kinematic { layout, dt } => {
                naive_predict(belief, layout, *dt, self.config.naive_damping, &self.config.process_cov)
            }
            Predictor::Hold => {
                let mut b = belief.clone();
                b.stamp += 1;
                Ok(b)
            }
        }
    }

    /// Predicts `belief` forward until its stamp reaches `target`.
    pub fn rollout(&self, belief: &Belief, target: u64) -> Result<Belief> {
        let mut b = belief.clone();
        while b.stamp < target {
            b = self.predict(&b)?;
        }
        Ok(b)
    }

    fn assimilate(&self, belief: &Belief, payload: &[f64]) -> Result<Belief> {
        let z = self.config.meas_map.observe(payload)?;
        match self.mode {
            EstimatorMode::GruKalman | EstimatorMode::NaiveKalman => {
                kf_update(belief, &z, &self.config.meas_map, &self.config.meas_cov)
            }
            EstimatorMode::GruOnly | EstimatorMode::NoCompensation => {
                let mut b = belief.clone();
                for (k, &r) in self.config.meas_map.rows.iter().enumerate() {
                    b.mean[r] = z[k];
                }
                Ok(b)
            }
        }
    }

    /// Assimilates newly delivered packets in send order and rolls the verified state out to `now`.
    ///
    /// Packets stamped at or before the last processed one are counted as stale and skipped.
    pub fn process_step(&mut self, packets: &[Packet], now: u64) -> Result<&Belief> {
        if now < self.current.stamp {
            return Err(Error::contract(format!(
                "time went backwards: now {now} before current stamp {}",
                self.current.stamp
            )));
        }
        if let Some(p) = packets.iter().find(|p| p.send_stamp > now) {
            return Err(Error::contract(format!(
                "packet stamped {} delivered at step {now}",
                p.send_stamp
            )));
        }
        let mut verified: Option<Belief> = None;
        let mut last = self.last_packet_stamp;
        for p in packets {
            let floor = verified.as_ref().map_or(self.checkpoint.stamp(), |b| b.stamp);
            if last.is_some_and(|l| p.send_stamp <= l) || p.send_stamp < floor {
                self.diagnostics.stale_dropped += 1;
                continue;
            }
            let base = verified.as_ref().unwrap_or(self.checkpoint.belief());
            let aligned = self.rollout(base, p.send_stamp)?;
            verified = Some(self.assimilate(&aligned, &p.payload)?);
            last = Some(p.send_stamp);
            self.diagnostics.packets_processed += 1;
        }
        if let Some(b) = verified {
            self.checkpoint = Checkpoint(b);
            self.last_packet_stamp = last;
        }
        self.current = self.rollout(self.checkpoint.belief(), now)?;
        self.diagnostics.steps += 1;
        *self
            .diagnostics
            .rollout_depth
            .entry(now - self.checkpoint.stamp())
            .or_default() += 1;
        Ok(&self.current)
    }
}

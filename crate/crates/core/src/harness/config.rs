use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::{BurstLoss, DelayKind, DelayModel, FifoPolicy, ScheduleSegment};
use crate::env::{EnvSpec, STATE_DIM};
use crate::error::{Error, Result};
use crate::filter::{
    EstimatorMode, FilterConfig, MeasurementMap, DEFAULT_NAIVE_DAMPING, DEFAULT_RHO,
};
use crate::gru::{TrainSpec, TransitionModel};

/// The single run document shared by every subcommand.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub env: EnvSpec,
    #[serde(default)]
    pub paths: PathsSection,
    #[serde(default)]
    pub collect: CollectSection,
    #[serde(default)]
    pub train: TrainSpec,
    #[serde(default)]
    pub filter: FilterSection,
    #[serde(default)]
    pub channel: ChannelSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub bench: BenchSection,
    #[serde(default)]
    pub replay: ReplaySection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsSection {
    pub dataset: PathBuf,
    pub model: PathBuf,
    /// defaults to the model path with a `loss.csv` extension
    pub loss_curve: Option<PathBuf>,
    pub results: PathBuf,
    /// channel traces of the first episode of every sweep job go here when set
    pub trace_dir: Option<PathBuf>,
    pub trace: Option<PathBuf>,
    pub replay_report: PathBuf,
}

impl Default for PathsSection {
    fn default() -> Self {
        PathsSection {
            dataset: "dataset.txt".into(),
            model: "model.toml".into(),
            loss_curve: None,
            results: "results.csv".into(),
            trace_dir: None,
            trace: None,
            replay_report: "replay.csv".into(),
        }
    }
}

impl PathsSection {
    pub fn loss_curve(&self) -> PathBuf {
        self.loss_curve
            .clone()
            .unwrap_or_else(|| self.model.with_extension("loss.csv"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CollectSection {
    pub episodes: usize,
}

impl Default for CollectSection {
    fn default() -> Self {
        CollectSection { episodes: 100 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterSection {
    pub rho: f64,
    pub naive_damping: f64,
    pub p0_scale: f64,
    /// payload components the filter treats as measured; all when absent
    pub measured: Option<Vec<usize>>,
    /// replaces the model's held-out error as the process variance when set
    pub process_variance: Option<Vec<f64>>,
}

impl Default for FilterSection {
    fn default() -> Self {
        FilterSection {
            rho: DEFAULT_RHO,
            naive_damping: DEFAULT_NAIVE_DAMPING,
            p0_scale: 1.0,
            measured: None,
            process_variance: None,
        }
    }
}

impl FilterSection {
    /// Covariances for every mode; all modes share the same uncertainty parameters.
    pub fn build(&self, model: Option<&TransitionModel>) -> Result<FilterConfig> {
        let variance = match (&self.process_variance, model) {
            (Some(v), _) => v.clone(),
            (None, Some(m)) => m.train_mse.clone(),
            (None, None) => vec![1.0; STATE_DIM],
        };
        let map = match &self.measured {
            Some(rows) => MeasurementMap::select(variance.len(), rows.clone())?,
            None => MeasurementMap::identity(variance.len()),
        };
        FilterConfig::from_train_mse(&variance, self.rho, map, self.naive_damping, self.p0_scale)
    }
}

/// How a swept delay value becomes a delay distribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayFamily {
    #[default]
    Constant,
    /// uniform on `0..=2·delay`
    Uniform,
    /// geometric with mean `delay`
    Geometric,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub family: DelayFamily,
    pub fifo: FifoPolicy,
    pub burst: Option<BurstLoss>,
    /// loss applies only to packets sent at or after this step
    pub loss_start: u64,
    pub schedule: Vec<ScheduleSegment>,
}

impl Default for ChannelSection {
    fn default() -> Self {
        ChannelSection {
            family: DelayFamily::Constant,
            fifo: FifoPolicy::Clamp,
            burst: None,
            loss_start: 0,
            schedule: Vec::new(),
        }
    }
}

impl ChannelSection {
    pub fn delay_model(&self, delay: u64, loss_prob: f64, seed: u64) -> DelayModel {
        let kind = match (self.family, delay) {
            (_, 0) | (DelayFamily::Constant, _) => DelayKind::Constant { tau: delay },
            (DelayFamily::Uniform, d) => DelayKind::UniformInt { lo: 0, hi: 2 * d },
            (DelayFamily::Geometric, d) => DelayKind::Geometric { mean: d as f64 },
        };
        DelayModel {
            delay: kind,
            loss_prob,
            loss_start: self.loss_start,
            burst: self.burst,
            schedule: self.schedule.clone(),
            fifo: self.fifo,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSection {
    pub delays: Vec<u64>,
    pub loss_probs: Vec<f64>,
    pub noise_fracs: Vec<f64>,
    pub modes: Vec<EstimatorMode>,
    pub seeds: Vec<u64>,
    pub episodes_per_seed: usize,
    /// wall-clock filter timing makes results machine dependent, so it is opt-in
    pub record_timing: bool,
}

impl Default for SweepSection {
    fn default() -> Self {
        SweepSection {
            delays: vec![0, 2, 4, 6],
            loss_probs: vec![0.0],
            noise_fracs: vec![0.0],
            modes: EstimatorMode::ALL.to_vec(),
            seeds: (0..8).collect(),
            episodes_per_seed: 50,
            record_timing: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub depths: Vec<u64>,
    pub iterations: usize,
    /// benchmark a freshly initialised model of this size instead of loading one
    pub synthetic: bool,
    pub state_dim: usize,
    pub hidden_dim: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            depths: vec![0, 6, 12],
            iterations: 10_000,
            synthetic: false,
            state_dim: STATE_DIM,
            hidden_dim: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReplaySection {
    pub modes: Vec<EstimatorMode>,
}

impl Default for ReplaySection {
    fn default() -> Self {
        ReplaySection {
            modes: EstimatorMode::ALL.to_vec(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str, path: &Path) -> Result<Self> {
        let cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e.span().map_or(0, |s| text[..s.start].lines().count().max(1));
            Error::Config(format!("{}:{line}: {}", path.display(), e.message()))
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        self.env.validate()?;
        self.train.validate()?;
        let s = &self.sweep;
        for (name, empty) in [
            ("delays", s.delays.is_empty()),
            ("loss_probs", s.loss_probs.is_empty()),
            ("noise_fracs", s.noise_fracs.is_empty()),
            ("modes", s.modes.is_empty()),
            ("seeds", s.seeds.is_empty()),
        ] {
            if empty {
                return Err(Error::config(format!("sweep.{name} must not be empty")));
            }
        }
        if s.episodes_per_seed == 0 {
            return Err(Error::config("sweep.episodes_per_seed must be at least 1"));
        }
        if let Some(p) = s.loss_probs.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::config(format!("loss probability {p} outside [0, 1]")));
        }
        if let Some(f) = s.noise_fracs.iter().find(|f| !(**f >= 0.0 && f.is_finite())) {
            return Err(Error::config(format!("noise fraction {f} must be non-negative")));
        }
        for &d in &s.delays {
            self.channel.delay_model(d, 0.0, 0).validate()?;
        }
        if self.bench.iterations == 0 || self.bench.depths.is_empty() {
            return Err(Error::config("bench needs at least one depth and one iteration"));
        }
        if self.replay.modes.is_empty() {
            return Err(Error::config("replay.modes must not be empty"));
        }
        self.filter.build(None).map(|_| ())
    }
}

//! Pipeline commands: collect delay-free data, train the transition model, sweep
//! delay/loss/noise/mode conditions, benchmark filter latency, and replay channel traces.

mod bench;
mod config;
mod episode;
mod replay;
mod results;
mod sweep;

use std::path::{Path, PathBuf};
use std::sync::Arc;

pub use bench::{bench_latency, format_latency, LatencyStats};
pub use config::{
    BenchSection, ChannelSection, CollectSection, DelayFamily, FilterSection, PathsSection, ReplaySection,
    RunConfig, SweepSection,
};
pub use episode::{predictor_for, run_episode, EpisodeOutcome, EpisodeSetup};
pub use replay::{replay_trace, ReplayReport, REPLAY_HEADER};
pub use results::{
    format_summary, parse_results, read_results, summarize, write_results, ConditionSummary, EpisodeRecord,
    RESULTS_COLUMNS, RESULTS_HEADER,
};
pub use sweep::{episode_seeds, needs_model, run_sweep, sweep_jobs, SweepJob};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::channel::read_trace;
use crate::env::collect_trajectories;
use crate::error::{Error, Result};
use crate::gru::{load_model, save_model, train_transition_model, GruParams, Normalizer, TrajectoryDataset, TransitionModel};

/// Command-line overrides shared by every subcommand.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct RunOptions {
    pub out: Option<PathBuf>,
    pub seed_offset: u64,
    pub threads: Option<usize>,
    pub trace: Option<PathBuf>,
}

impl RunConfig {
    /// Shifts every seed in the config by `offset`.
    pub fn with_seed_offset(mut self, offset: u64) -> Self {
        self.env.seed = self.env.seed.wrapping_add(offset);
        self.train.seed = self.train.seed.wrapping_add(offset);
        for s in &mut self.sweep.seeds {
            *s = s.wrapping_add(offset);
        }
        self
    }
}

fn load_required_model(path: &Path) -> Result<TransitionModel> {
    if !path.exists() {
        return Err(Error::config(format!("model file {} does not exist", path.display())));
    }
    load_model(path)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, PartialEq)]
pub struct CollectReport {
    pub path: PathBuf,
    pub episodes: usize,
    pub sequences: usize,
    pub samples: usize,
}

impl std::fmt::Display for CollectReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "wrote {}: {} episodes, {} sequences, {} samples",
            self.path.display(),
            self.episodes,
            self.sequences,
            self.samples
        )
    }
}

pub fn cmd_collect(cfg: &RunConfig, opts: &RunOptions) -> Result<CollectReport> {
    let cfg = cfg.clone().with_seed_offset(opts.seed_offset);
    let path = opts.out.clone().unwrap_or_else(|| cfg.paths.dataset.clone());
    let spec = crate::env::EnvSpec {
        obs_noise_frac: 0.0,
        ..cfg.env.clone()
    };
    let ds = collect_trajectories(&spec, cfg.collect.episodes)?;
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    ds.save(&path)?;
    Ok(CollectReport {
        path,
        episodes: cfg.collect.episodes,
        sequences: ds.episodes.len(),
        samples: ds.sample_count(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainReport {
    pub model_path: PathBuf,
    pub loss_path: PathBuf,
    pub validation_curve: Vec<f64>,
    pub train_curve: Vec<f64>,
    pub train_mse: Vec<f64>,
}

impl std::fmt::Display for TrainReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "epoch  train_loss  validation_loss")?;
        for (e, (t, v)) in self.train_curve.iter().zip(&self.validation_curve).enumerate() {
            writeln!(f, "{e:>5}  {t:.6e}  {v:.6e}")?;
        }
        write!(
            f,
            "wrote {} (held-out mse {:?}) and {}",
            self.model_path.display(),
            self.train_mse,
            self.loss_path.display()
        )
    }
}

pub const LOSS_HEADER: &str = "# delaycomp-loss v1";

pub fn cmd_train(cfg: &RunConfig, opts: &RunOptions) -> Result<TrainReport> {
    let cfg = cfg.clone().with_seed_offset(opts.seed_offset);
    let ds = TrajectoryDataset::load(&cfg.paths.dataset)?;
    let outcome = train_transition_model(&ds, &cfg.train)?;
    let model_path = opts.out.clone().unwrap_or_else(|| cfg.paths.model.clone());
    let loss_path = match (&opts.out, &cfg.paths.loss_curve) {
        (None, Some(p)) => p.clone(),
        _ => model_path.with_extension("loss.csv"),
    };
    if let Some(dir) = model_path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    save_model(&outcome.model, &model_path)?;
    let mut curve = format!("{LOSS_HEADER}\nepoch,train_loss,validation_loss\n");
    for (e, (t, v)) in outcome.train_curve.iter().zip(&outcome.loss_curve).enumerate() {
        curve += &format!("{e},{t},{v}\n");
    }
    write_text(&loss_path, &curve)?;
    Ok(TrainReport {
        model_path,
        loss_path,
        validation_curve: outcome.loss_curve,
        train_curve: outcome.train_curve,
        train_mse: outcome.model.train_mse.clone(),
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepReport {
    pub path: PathBuf,
    pub records: Vec<EpisodeRecord>,
    pub summary: Vec<ConditionSummary>,
}

impl std::fmt::Display for SweepReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", format_summary(&self.summary))?;
        write!(f, "wrote {} ({} rows)", self.path.display(), self.records.len())
    }
}

pub fn cmd_sweep(cfg: &RunConfig, opts: &RunOptions) -> Result<SweepReport> {
    let cfg = cfg.clone().with_seed_offset(opts.seed_offset);
    cfg.validate()?;
    let model = if needs_model(&cfg, &cfg.sweep.modes) {
        Some(Arc::new(load_required_model(&cfg.paths.model)?))
    } else {
        None
    };
    let records = run_sweep(&cfg, model, opts.threads)?;
    let path = opts.out.clone().unwrap_or_else(|| cfg.paths.results.clone());
    write_results(&path, &cfg.to_toml(), &records)?;
    Ok(SweepReport {
        path,
        summary: summarize(&records),
        records,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub stats: Vec<LatencyStats>,
    pub state_dim: usize,
    pub hidden_dim: usize,
}

impl std::fmt::Display for BenchReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "# state_dim {} hidden_dim {}", self.state_dim, self.hidden_dim)?;
        write!(f, "{}", format_latency(&self.stats))
    }
}

pub fn cmd_bench_latency(cfg: &RunConfig, opts: &RunOptions) -> Result<BenchReport> {
    let cfg = cfg.clone().with_seed_offset(opts.seed_offset);
    let model = if cfg.bench.synthetic {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.train.seed);
        let params = GruParams::init_uniform(cfg.bench.state_dim, cfg.bench.hidden_dim, &mut rng);
        let mut m = TransitionModel::new(params, Normalizer::identity(cfg.bench.state_dim))?;
        m.train_mse = vec![1e-3; cfg.bench.state_dim];
        m
    } else {
        load_required_model(&cfg.paths.model)?
    };
    let filter = cfg.filter.build(Some(&model))?;
    let report = BenchReport {
        state_dim: model.input_dim(),
        hidden_dim: model.hidden_dim(),
        stats: bench_latency(Arc::new(model), &filter, &cfg.bench.depths, cfg.bench.iterations)?,
    };
    if let Some(out) = &opts.out {
        write_text(out, &report.to_string())?;
    }
    Ok(report)
}

pub fn cmd_replay(cfg: &RunConfig, opts: &RunOptions) -> Result<(PathBuf, ReplayReport)> {
    let trace_path = opts
        .trace
        .clone()
        .or_else(|| cfg.paths.trace.clone())
        .ok_or_else(|| Error::config("replay needs a trace path (--trace or paths.trace)"))?;
    let records = read_trace(&trace_path)?;
    let modes = &cfg.replay.modes;
    let model = if needs_model(cfg, modes) {
        Some(Arc::new(load_required_model(&cfg.paths.model)?))
    } else {
        None
    };
    let filter = cfg.filter.build(model.as_deref())?;
    let report = replay_trace(&records, &cfg.env, model, &filter, modes)?;
    let out = opts.out.clone().unwrap_or_else(|| cfg.paths.replay_report.clone());
    write_text(&out, &report.to_csv())?;
    Ok((out, report))
}

/// Mean MSE per mode, one line each.
pub fn format_replay(report: &ReplayReport) -> String {
    report
        .modes
        .iter()
        .map(|&m| format!("{:<16} mean estimate mse {:.6e}\n", m.name(), report.mean_mse(m).unwrap_or(f64::NAN)))
        .collect::<String>()
}


use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;

use super::config::RunConfig;
use super::episode::{run_episode, EpisodeSetup};
use super::results::EpisodeRecord;
use crate::channel::write_trace;
use crate::env::{derive_seed, EnvSpec};
use crate::error::{Error, Result};
use crate::filter::EstimatorMode;
use crate::gru::TransitionModel;

/// One (condition, seed) work unit; episodes inside it run sequentially.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepJob {
    pub delay: u64,
    pub loss_prob: f64,
    pub noise_frac: f64,
    pub mode: EstimatorMode,
    pub seed: u64,
}

/// Cross product in config order: delay, loss, noise, mode, seed.
pub fn sweep_jobs(cfg: &RunConfig) -> Vec<SweepJob> {
    let s = &cfg.sweep;
    let mut jobs = Vec::new();
    for &delay in &s.delays {
        for &loss_prob in &s.loss_probs {
            for &noise_frac in &s.noise_fracs {
                for &mode in &s.modes {
                    for &seed in &s.seeds {
                        jobs.push(SweepJob {
                            delay,
                            loss_prob,
                            noise_frac,
                            mode,
                            seed,
                        });
                    }
                }
            }
        }
    }
    jobs
}

/// World seed of one episode. The channel uses a sibling stream, so every mode and
/// condition sees the same spawn, noise draws and channel realisation.
pub fn episode_seeds(seed: u64, episode: usize) -> (u64, u64) {
    (derive_seed(seed, &[episode as u64]), derive_seed(seed, &[episode as u64, 1]))
}

pub fn needs_model(cfg: &RunConfig, modes: &[EstimatorMode]) -> bool {
    modes.iter().any(|m| m.needs_model())
        || (cfg.filter.process_variance.is_none() && modes.iter().any(|&m| m != EstimatorMode::NoCompensation))
}

fn run_job(cfg: &RunConfig, model: Option<&Arc<TransitionModel>>, job: SweepJob, trace_dir: Option<&Path>) -> Result<Vec<EpisodeRecord>> {
    let filter = cfg.filter.build(model.map(|m| m.as_ref()))?;
    (0..cfg.sweep.episodes_per_seed)
        .map(|episode| {
            let (env_seed, channel_seed) = episode_seeds(job.seed, episode);
            let record_trace = trace_dir.is_some() && episode == 0;
            let setup = EpisodeSetup {
                env: EnvSpec {
                    seed: env_seed,
                    obs_noise_frac: job.noise_frac,
                    ..cfg.env.clone()
                },
                mode: job.mode,
                model: model.cloned(),
                filter: filter.clone(),
                channel: cfg.channel.delay_model(job.delay, job.loss_prob, channel_seed),
                record_timing: cfg.sweep.record_timing,
                record_trace,
                record_beliefs: false,
            };
            let out = run_episode(&setup)?;
            if let (true, Some(dir)) = (record_trace, trace_dir) {
                let name = format!(
                    "trace_{}_d{}_l{}_n{}_s{}.csv",
                    job.mode, job.delay, job.loss_prob, job.noise_frac, job.seed
                );
                write_trace(&dir.join(name), &out.trace)?;
            }
            Ok(EpisodeRecord {
                env: cfg.env.kind,
                mode: job.mode,
                delay: job.delay,
                loss_prob: job.loss_prob,
                noise_frac: job.noise_frac,
                seed: job.seed,
                episode,
                ret: out.ret,
                estimate_mse: out.estimate_mse,
                mean_rollout_depth: out.mean_rollout_depth,
                filter_us_per_step: out.filter_us_per_step,
            })
        })
        .collect()
}

/// Runs every job, in parallel across jobs, and returns records in config order.
pub fn run_sweep(cfg: &RunConfig, model: Option<Arc<TransitionModel>>, threads: Option<usize>) -> Result<Vec<EpisodeRecord>> {
    cfg.validate()?;
    if needs_model(cfg, &cfg.sweep.modes) && model.is_none() {
        return Err(Error::config("the configured modes need a transition model"));
    }
    if let Some(m) = &model {
        if m.input_dim() != crate::env::STATE_DIM {
            return Err(Error::config(format!(
                "model input dimension {} does not match the payload dimension {}",
                m.input_dim(),
                crate::env::STATE_DIM
            )));
        }
        cfg.filter.build(Some(m))?;
    }
    if let Some(dir) = &cfg.paths.trace_dir {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let jobs = sweep_jobs(cfg);
    let trace_dir = cfg.paths.trace_dir.as_deref();
    let work = || -> Result<Vec<EpisodeRecord>> {
        let per_job: Vec<Result<Vec<EpisodeRecord>>> = jobs
            .par_iter()
            .map(|&job| run_job(cfg, model.as_ref(), job, trace_dir))
            .collect();
        let mut out = Vec::with_capacity(jobs.len() * cfg.sweep.episodes_per_seed);
        for r in per_job {
            out.extend(r?);
        }
        Ok(out)
    };
    match threads {
        Some(n) => rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build()
            .map_err(|e| Error::config(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    }
}

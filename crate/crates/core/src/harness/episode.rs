use std::sync::Arc;
use std::time::Instant;

use crate::channel::{ChannelState, DelayModel, Packet, TraceRecord};
use crate::env::{Action, Env, EnvSpec, ScriptedPolicy};
use crate::error::{Error, Result};
use crate::filter::{EstimatorMode, FilterConfig, NeighborEstimator, Predictor};
use crate::gru::TransitionModel;

/// Everything that determines one closed-loop episode.
#[derive(Debug, Clone)]
pub struct EpisodeSetup {
    /// seed and noise level of this episode
    pub env: EnvSpec,
    pub mode: EstimatorMode,
    pub model: Option<Arc<TransitionModel>>,
    pub filter: FilterConfig,
    pub channel: DelayModel,
    pub record_timing: bool,
    pub record_trace: bool,
    pub record_beliefs: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct EpisodeOutcome {
    pub ret: f64,
    /// mean squared error of every neighbor estimate against the true payload
    pub estimate_mse: f64,
    pub mean_rollout_depth: f64,
    /// mean wall time of one `process_step` call, when timing was requested
    pub filter_us_per_step: Option<f64>,
    pub stale_dropped: u64,
    pub clipped_actions: u64,
    pub trace: Vec<TraceRecord>,
    /// per step, every estimator's mean in (agent, neighbor) order
    pub beliefs: Vec<Vec<f64>>,
}

pub fn predictor_for(mode: EstimatorMode, env: &EnvSpec, model: Option<&Arc<TransitionModel>>) -> Result<Predictor> {
    Ok(match mode {
        EstimatorMode::GruKalman | EstimatorMode::GruOnly => {
            let m = model.ok_or_else(|| Error::config(format!("mode {mode} needs a transition model")))?;
            Predictor::Model(m.clone())
        }
        EstimatorMode::NaiveKalman => Predictor::Kinematic {
            layout: env.kind.kinematic_layout(),
            dt: env.dt,
        },
        EstimatorMode::NoCompensation => Predictor::Hold,
    })
}

/// Runs one episode: broadcast, deliver, estimate, act, step.
///
/// Estimators start from the exact spawn state at step 0.
pub fn run_episode(setup: &EpisodeSetup) -> Result<EpisodeOutcome> {
    let mut env = Env::new(setup.env.clone())?;
    let n = setup.env.n_agents;
    let predictor = predictor_for(setup.mode, &setup.env, setup.model.as_ref())?;
    let policy = ScriptedPolicy::for_world(env.state());
    let layout = policy.layout();
    let spawn = env.true_payloads();
    let mut estimators: Vec<Vec<NeighborEstimator>> = (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| NeighborEstimator::new(setup.mode, setup.filter.clone(), predictor.clone(), &spawn[j], 0))
                .collect::<Result<_>>()
        })
        .collect::<Result<_>>()?;
    let mut channel = ChannelState::new(setup.channel.clone())?;
    let mut out = EpisodeOutcome::default();
    let (mut sq_err, mut err_terms) = (0.0, 0usize);
    let (mut filter_ns, mut filter_calls) = (0u128, 0u64);
    let mut payloads = env.noisy_payloads();

    for t in 0..setup.env.episode_len as u64 {
        let truth = env.true_payloads();
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                let sent = channel.send(Packet {
                    sender: i,
                    receiver: j,
                    payload: payloads[i].to_vec(),
                    send_stamp: t,
                })?;
                if setup.record_trace {
                    out.trace.push(TraceRecord {
                        sender: i,
                        receiver: j,
                        send_stamp: t,
                        arrival_stamp: sent.arrival,
                        payload: payloads[i].to_vec(),
                        truth: truth[i].to_vec(),
                    });
                }
            }
        }

        let mut actions: Vec<Action> = Vec::with_capacity(n);
        let mut step_beliefs = Vec::new();
        for (i, ests) in estimators.iter_mut().enumerate() {
            let delivered = channel.deliver(i, t);
            for (slot, j) in (0..n).filter(|&j| j != i).enumerate() {
                let from_j: Vec<Packet> = delivered.iter().filter(|p| p.sender == j).cloned().collect();
                let start = setup.record_timing.then(Instant::now);
                let b = ests[slot].process_step(&from_j, t)?;
                if let Some(s) = start {
                    filter_ns += s.elapsed().as_nanos();
                    filter_calls += 1;
                }
                for (m, v) in b.mean.iter().zip(truth[j]) {
                    sq_err += (m - v).powi(2);
                    err_terms += 1;
                }
                if setup.record_beliefs {
                    step_beliefs.extend(b.mean.iter());
                }
            }
            let local = env.state().local_obs(i);
            let neighbors: Vec<_> = ests.iter().map(|e| e.current()).collect();
            let feature = layout.build(&local, &neighbors)?;
            actions.push(policy.act(i, &feature)?);
        }
        if setup.record_beliefs {
            out.beliefs.push(step_beliefs);
        }
        let step = env.step(&actions)?;
        out.ret += step.reward;
        payloads = step.comms_payload;
    }

    let diags = estimators.iter().flatten().map(|e| e.diagnostics());
    let (mut depth_sum, mut steps) = (0.0, 0u64);
    for d in diags {
        depth_sum += d.mean_rollout_depth() * d.steps as f64;
        steps += d.steps;
        out.stale_dropped += d.stale_dropped;
    }
    out.mean_rollout_depth = depth_sum / steps.max(1) as f64;
    out.estimate_mse = sq_err / err_terms.max(1) as f64;
    out.filter_us_per_step = setup
        .record_timing
        .then(|| filter_ns as f64 / 1e3 / filter_calls.max(1) as f64);
    out.clipped_actions = env.clipped_actions();
    Ok(out)
}

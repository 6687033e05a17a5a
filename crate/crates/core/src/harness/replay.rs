use std::collections::BTreeMap;
use std::sync::Arc;

use super::episode::predictor_for;
use crate::channel::{AgentId, Packet, TraceRecord};
use crate::env::EnvSpec;
use crate::error::{Error, Result};
use crate::filter::{EstimatorMode, FilterConfig, NeighborEstimator};
use crate::gru::TransitionModel;

pub const REPLAY_HEADER: &str = "# delaycomp-replay v1";

/// Per-step estimate error of each mode over every (receiver, sender) pair of a trace.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplayReport {
    pub modes: Vec<EstimatorMode>,
    pub steps: Vec<u64>,
    /// `mse[m][k]`: mode `m`, step `steps[k]`
    pub mse: Vec<Vec<f64>>,
}

impl ReplayReport {
    pub fn mean_mse(&self, mode: EstimatorMode) -> Option<f64> {
        let m = self.modes.iter().position(|&x| x == mode)?;
        Some(self.mse[m].iter().sum::<f64>() / self.mse[m].len().max(1) as f64)
    }

    pub fn to_csv(&self) -> String {
        let mut s = format!("{REPLAY_HEADER}\nstep");
        for m in &self.modes {
            s += &format!(",{m}");
        }
        s.push('\n');
        for (k, step) in self.steps.iter().enumerate() {
            s += &step.to_string();
            for m in &self.mse {
                s += &format!(",{}", m[k]);
            }
            s.push('\n');
        }
        s
    }
}

/// Re-runs the estimators on a recorded trace. Every pair starts from the recorded truth at
/// its first send stamp; packets are fed at their recorded arrival stamps.
pub fn replay_trace(
    records: &[TraceRecord],
    env: &EnvSpec,
    model: Option<Arc<TransitionModel>>,
    filter: &FilterConfig,
    modes: &[EstimatorMode],
) -> Result<ReplayReport> {
    let mut pairs: BTreeMap<(AgentId, AgentId), Vec<&TraceRecord>> = BTreeMap::new();
    for r in records {
        pairs.entry((r.receiver, r.sender)).or_default().push(r);
    }
    if pairs.is_empty() {
        return Err(Error::Usage("trace contains no records".into()));
    }
    let first = records.iter().map(|r| r.send_stamp).min().unwrap_or(0);
    let last = records.iter().map(|r| r.send_stamp).max().unwrap_or(0);
    let steps: Vec<u64> = (first..=last).collect();
    let mut mse = Vec::with_capacity(modes.len());
    for &mode in modes {
        let predictor = predictor_for(mode, env, model.as_ref())?;
        let mut sum = vec![0.0; steps.len()];
        let mut count = vec![0usize; steps.len()];
        for recs in pairs.values() {
            let mut recs = recs.clone();
            recs.sort_by_key(|r| r.send_stamp);
            let truth: BTreeMap<u64, &[f64]> = recs.iter().map(|r| (r.send_stamp, r.truth.as_slice())).collect();
            let mut arrivals: BTreeMap<u64, Vec<Packet>> = BTreeMap::new();
            for r in &recs {
                if let Some(a) = r.arrival_stamp {
                    arrivals.entry(a).or_default().push(Packet {
                        sender: r.sender,
                        receiver: r.receiver,
                        payload: r.payload.clone(),
                        send_stamp: r.send_stamp,
                    });
                }
            }
            let start = recs[0].send_stamp;
            let mut est = NeighborEstimator::new(mode, filter.clone(), predictor.clone(), &recs[0].truth, start)?;
            for (k, &now) in steps.iter().enumerate().filter(|(_, &s)| s >= start) {
                let pkts = arrivals.get(&now).map_or(&[][..], Vec::as_slice);
                let b = est.process_step(pkts, now)?;
                if let Some(t) = truth.get(&now) {
                    sum[k] += b.mean.iter().zip(t.iter()).map(|(m, v)| (m - v).powi(2)).sum::<f64>() / t.len() as f64;
                    count[k] += 1;
                }
            }
        }
        mse.push(sum.iter().zip(&count).map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect());
    }
    Ok(ReplayReport {
        modes: modes.to_vec(),
        steps,
        mse,
    })
}

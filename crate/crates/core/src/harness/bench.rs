use std::sync::Arc;
use std::time::Instant;

use crate::channel::Packet;
use crate::error::{Error, Result};
use crate::filter::{EstimatorMode, FilterConfig, NeighborEstimator, Predictor};
use crate::gru::TransitionModel;

const WARMUP_CALLS: usize = 200;

#[derive(Debug, Clone, PartialEq)]
pub struct LatencyStats {
    /// steps between the assimilated packet and `now`
    pub depth: u64,
    pub iterations: usize,
    pub mean_us: f64,
    pub median_us: f64,
    pub p99_us: f64,
}

/// Times `process_step` in the learned-filter mode with one packet per call, each
/// stamped `depth` steps in the past.
pub fn bench_latency(
    model: Arc<TransitionModel>,
    filter: &FilterConfig,
    depths: &[u64],
    iterations: usize,
) -> Result<Vec<LatencyStats>> {
    if iterations == 0 {
        return Err(Error::Usage("latency benchmark needs at least one iteration".into()));
    }
    let payload = model.normalizer.mean.clone();
    depths
        .iter()
        .map(|&depth| {
            let mut est = NeighborEstimator::new(
                EstimatorMode::GruKalman,
                filter.clone(),
                Predictor::Model(model.clone()),
                &payload,
                0,
            )?;
            let mut times = Vec::with_capacity(iterations);
            for k in 0..WARMUP_CALLS + iterations {
                let stamp = k as u64 + 1;
                let pkt = Packet {
                    sender: 1,
                    receiver: 0,
                    payload: payload.clone(),
                    send_stamp: stamp,
                };
                let start = Instant::now();
                est.process_step(std::slice::from_ref(&pkt), stamp + depth)?;
                let us = start.elapsed().as_secs_f64() * 1e6;
                if k >= WARMUP_CALLS {
                    times.push(us);
                }
            }
            times.sort_by(f64::total_cmp);
            let pick = |q: f64| times[((times.len() - 1) as f64 * q).round() as usize];
            Ok(LatencyStats {
                depth,
                iterations,
                mean_us: times.iter().sum::<f64>() / times.len() as f64,
                median_us: pick(0.5),
                p99_us: pick(0.99),
            })
        })
        .collect()
}

pub fn format_latency(stats: &[LatencyStats]) -> String {
    let mut s = String::from("depth,iterations,mean_us,median_us,p99_us\n");
    for r in stats {
        s += &format!(
            "{},{},{:.3},{:.3},{:.3}\n",
            r.depth, r.iterations, r.mean_us, r.median_us, r.p99_us
        );
    }
    s
}

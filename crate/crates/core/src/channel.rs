//! Timestamped point-to-point channel with integer delays, packet loss and per-pair FIFO.
//!
//! Every ordered `(sender, receiver)` pair owns an independent RNG stream derived from the
//! channel seed, so adding traffic on one pair never perturbs another.

use std::collections::{BTreeMap, VecDeque};
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Geometric};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type AgentId = usize;

#[derive(Debug, Clone, PartialEq)]
pub struct Packet {
    pub sender: AgentId,
    pub receiver: AgentId,
    pub payload: Vec<f64>,
    pub send_stamp: u64,
}

/// Per-packet delay distribution in control steps.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DelayKind {
    Constant { tau: u64 },
    UniformInt { lo: u64, hi: u64 },
    /// Support `{0, 1, ...}` with the given mean.
    Geometric { mean: f64 },
}

impl DelayKind {
    pub fn validate(&self) -> Result<()> {
        match *self {
            DelayKind::Constant { .. } => Ok(()),
            DelayKind::UniformInt { lo, hi } if lo <= hi => Ok(()),
            DelayKind::UniformInt { lo, hi } => Err(Error::config(format!("uniform delay lo {lo} > hi {hi}"))),
            DelayKind::Geometric { mean } if mean > 0.0 && mean.is_finite() => Ok(()),
            DelayKind::Geometric { mean } => Err(Error::config(format!("geometric delay mean must be positive, got {mean}"))),
        }
    }

    pub fn mean(&self) -> f64 {
        match *self {
            DelayKind::Constant { tau } => tau as f64,
            DelayKind::UniformInt { lo, hi } => (lo + hi) as f64 / 2.0,
            DelayKind::Geometric { mean } => mean,
        }
    }

    fn sample(&self, rng: &mut ChaCha8Rng) -> u64 {
        match *self {
            DelayKind::Constant { tau } => tau,
            DelayKind::UniformInt { lo, hi } => rng.random_range(lo..=hi),
            DelayKind::Geometric { mean } => Geometric::new(1.0 / (1.0 + mean))
                .expect("validated geometric parameter")
                .sample(rng),
        }
    }
}

/// Switches the delay distribution from `start` (a send stamp) onward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSegment {
    pub start: u64,
    pub delay: DelayKind,
}

/// Two-state Markov loss: in the bad state every packet is lost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BurstLoss {
    /// per-send probability of entering the bad state
    pub enter: f64,
    /// per-send probability of leaving the bad state
    pub exit: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FifoPolicy {
    /// late packets wait for their predecessor
    #[default]
    Clamp,
    /// packets that would overtake are discarded
    DropLate,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DelayModel {
    pub delay: DelayKind,
    #[serde(default)]
    pub loss_prob: f64,
    /// packets sent before this stamp are never lost
    #[serde(default)]
    pub loss_start: u64,
    #[serde(default)]
    pub burst: Option<BurstLoss>,
    #[serde(default)]
    pub schedule: Vec<ScheduleSegment>,
    #[serde(default)]
    pub fifo: FifoPolicy,
    #[serde(default)]
    pub seed: u64,
}

impl DelayModel {
    pub fn constant(tau: u64, loss_prob: f64, seed: u64) -> Self {
        DelayModel {
            delay: DelayKind::Constant { tau },
            loss_prob,
            loss_start: 0,
            burst: None,
            schedule: Vec::new(),
            fifo: FifoPolicy::Clamp,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.delay.validate()?;
        let prob = |name: &str, p: f64| {
            if (0.0..=1.0).contains(&p) {
                Ok(())
            } else {
                Err(Error::config(format!("{name} must lie in [0, 1], got {p}")))
            }
        };
        prob("loss_prob", self.loss_prob)?;
        if let Some(b) = self.burst {
            prob("burst.enter", b.enter)?;
            prob("burst.exit", b.exit)?;
        }
        for w in self.schedule.windows(2) {
            if w[1].start <= w[0].start {
                return Err(Error::config("delay schedule segments must have increasing start stamps"));
            }
        }
        self.schedule.iter().try_for_each(|s| s.delay.validate())
    }

    /// Delay distribution in force for a packet sent at `stamp`.
    pub fn delay_at(&self, stamp: u64) -> DelayKind {
        self.schedule
            .iter()
            .rev()
            .find(|s| s.start <= stamp)
            .map_or(self.delay, |s| s.delay)
    }
}

#[derive(Debug)]
struct PairState {
    rng: ChaCha8Rng,
    queue: VecDeque<(u64, Packet)>,
    last_send: Option<u64>,
    last_arrival: Option<u64>,
    in_burst: bool,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ChannelStats {
    pub sent: u64,
    pub delivered: u64,
    pub in_flight: u64,
    pub dropped_loss: u64,
    pub dropped_late: u64,
    /// packets whose arrival was pushed back to preserve ordering
    pub clamped: u64,
    /// sampled delay of every packet that survived loss
    pub sampled_delay: BTreeMap<u64, u64>,
    /// arrival minus send stamp of every enqueued packet
    pub effective_delay: BTreeMap<u64, u64>,
}

impl ChannelStats {
    pub fn dropped(&self) -> u64 {
        self.dropped_loss + self.dropped_late
    }

    pub fn histogram_mean(h: &BTreeMap<u64, u64>) -> f64 {
        let n: u64 = h.values().sum();
        if n == 0 {
            return f64::NAN;
        }
        h.iter().map(|(&k, &c)| k as f64 * c as f64).sum::<f64>() / n as f64
    }
}

#[derive(Debug)]
pub struct ChannelState {
    model: DelayModel,
    pairs: BTreeMap<(AgentId, AgentId), PairState>,
    stats: ChannelStats,
}

/// What happened to one sent packet.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SendOutcome {
    /// `None` when the packet was dropped
    pub arrival: Option<u64>,
}

impl ChannelState {
    pub fn new(model: DelayModel) -> Result<Self> {
        model.validate()?;
        Ok(ChannelState {
            model,
            pairs: BTreeMap::new(),
            stats: ChannelStats::default(),
        })
    }

    pub fn model(&self) -> &DelayModel {
        &self.model
    }

    pub fn send(&mut self, pkt: Packet) -> Result<SendOutcome> {
        if pkt.payload.iter().any(|v| !v.is_finite()) {
            return Err(Error::contract(format!(
                "non-finite payload from agent {} at stamp {}",
                pkt.sender, pkt.send_stamp
            )));
        }
        if pkt.sender == pkt.receiver {
            return Err(Error::contract(format!("agent {} sent a packet to itself", pkt.sender)));
        }
        let seed = self.model.seed;
        let key = (pkt.receiver, pkt.sender);
        let pair = self.pairs.entry(key).or_insert_with(|| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(((pkt.sender as u64) << 32) | pkt.receiver as u64);
            PairState {
                rng,
                queue: VecDeque::new(),
                last_send: None,
                last_arrival: None,
                in_burst: false,
            }
        });
        if pair.last_send.is_some_and(|s| pkt.send_stamp < s) {
            return Err(Error::contract(format!(
                "send stamp {} on pair {}->{} precedes the previous send",
                pkt.send_stamp, pkt.sender, pkt.receiver
            )));
        }
        pair.last_send = Some(pkt.send_stamp);
        self.stats.sent += 1;

        // fixed draw order keeps streams aligned across loss settings
        if let Some(b) = self.model.burst {
            let flip: f64 = pair.rng.random();
            pair.in_burst = if pair.in_burst { flip >= b.exit } else { flip < b.enter };
        }
        let u: f64 = pair.rng.random();
        let tau = self.model.delay_at(pkt.send_stamp).sample(&mut pair.rng);
        let lossy = pkt.send_stamp >= self.model.loss_start;
        if lossy && (pair.in_burst || u < self.model.loss_prob) {
            self.stats.dropped_loss += 1;
            return Ok(SendOutcome { arrival: None });
        }
        *self.stats.sampled_delay.entry(tau).or_default() += 1;

        let mut arrival = pkt.send_stamp + tau;
        if let Some(last) = pair.last_arrival.filter(|&l| l > arrival) {
            match self.model.fifo {
                FifoPolicy::Clamp => {
                    arrival = last;
                    self.stats.clamped += 1;
                }
                FifoPolicy::DropLate => {
                    self.stats.dropped_late += 1;
                    return Ok(SendOutcome { arrival: None });
                }
            }
        }
        pair.last_arrival = Some(arrival);
        *self.stats.effective_delay.entry(arrival - pkt.send_stamp).or_default() += 1;
        pair.queue.push_back((arrival, pkt));
        self.stats.in_flight += 1;
        Ok(SendOutcome { arrival: Some(arrival) })
    }

    /// Removes and returns every packet for `receiver` that has arrived by `now`,
    /// ordered by sender then send stamp.
    pub fn deliver(&mut self, receiver: AgentId, now: u64) -> Vec<Packet> {
        let mut out = Vec::new();
        for (_, pair) in self.pairs.range_mut((receiver, 0)..=(receiver, AgentId::MAX)) {
            // arrival stamps are non-decreasing within a queue
            while pair.queue.front().is_some_and(|(a, _)| *a <= now) {
                out.push(pair.queue.pop_front().expect("front checked").1);
            }
        }
        self.stats.delivered += out.len() as u64;
        self.stats.in_flight -= out.len() as u64;
        out
    }

    pub fn stats(&self) -> &ChannelStats {
        &self.stats
    }
}

/// One line of an exported channel trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRecord {
    pub sender: AgentId,
    pub receiver: AgentId,
    pub send_stamp: u64,
    pub arrival_stamp: Option<u64>,
    pub payload: Vec<f64>,
    /// sender's true communicated state at `send_stamp`
    pub truth: Vec<f64>,
}

pub const TRACE_HEADER: &str = "# delaycomp-trace v1";

pub fn write_trace(path: &Path, records: &[TraceRecord]) -> Result<()> {
    let dim = records.first().map_or(0, |r| r.payload.len());
    if records.iter().any(|r| r.payload.len() != dim || r.truth.len() != dim) {
        return Err(Error::contract("trace records have inconsistent dimensions"));
    }
    let mut buf = Vec::new();
    writeln!(buf, "{TRACE_HEADER}").expect("writing to memory");
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        let mut header = vec![
            "sender".to_string(),
            "receiver".into(),
            "send_stamp".into(),
            "arrival_stamp".into(),
            "dropped".into(),
        ];
        header.extend((0..dim).map(|k| format!("payload{k}")));
        header.extend((0..dim).map(|k| format!("truth{k}")));
        w.write_record(&header).expect("writing to memory");
        for r in records {
            let mut row = vec![
                r.sender.to_string(),
                r.receiver.to_string(),
                r.send_stamp.to_string(),
                r.arrival_stamp.map_or(String::new(), |a| a.to_string()),
                u8::from(r.arrival_stamp.is_none()).to_string(),
            ];
            row.extend(r.payload.iter().chain(&r.truth).map(|v| format!("{v:?}")));
            w.write_record(&row).expect("writing to memory");
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_trace(path: &Path) -> Result<Vec<TraceRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_trace(&text, path)
}

pub fn parse_trace(text: &str, path: &Path) -> Result<Vec<TraceRecord>> {
    let perr = |line: u64, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line: line as usize,
        msg,
    };
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(TRACE_HEADER) {
        return Err(perr(1, format!("expected `{TRACE_HEADER}`")));
    }
    let body = &text[text.find('\n').map_or(text.len(), |i| i + 1)..];
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(body.as_bytes());
    let header = rdr.headers().map_err(|e| perr(2, e.to_string()))?.clone();
    if header.len() < 5 || (header.len() - 5) % 2 != 0 {
        return Err(perr(2, format!("unexpected column count {}", header.len())));
    }
    let dim = (header.len() - 5) / 2;
    let mut out = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| {
            let line = e.position().map_or(0, |p| p.line() + 1);
            perr(line, e.to_string())
        })?;
        let line = rec.position().map_or(0, |p| p.line() + 1);
        let field = |k: usize| rec.get(k).unwrap_or("");
        let int = |k: usize| {
            field(k)
                .parse::<u64>()
                .map_err(|_| perr(line, format!("column {} is not an integer: `{}`", header.get(k).unwrap_or("?"), field(k))))
        };
        let real = |k: usize| {
            field(k)
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| perr(line, format!("column {} is not a finite number: `{}`", header.get(k).unwrap_or("?"), field(k))))
        };
        let dropped = int(4)?;
        let arrival_stamp = match (field(3), dropped) {
            ("", 1) => None,
            (_, 0) => Some(int(3)?),
            _ => return Err(perr(line, "arrival stamp and dropped flag disagree".into())),
        };
        let send_stamp = int(2)?;
        if arrival_stamp.is_some_and(|a| a < send_stamp) {
            return Err(perr(line, "arrival precedes send".into()));
        }
        out.push(TraceRecord {
            sender: int(0)? as AgentId,
            receiver: int(1)? as AgentId,
            send_stamp,
            arrival_stamp,
            payload: (5..5 + dim).map(real).collect::<Result<_>>()?,
            truth: (5 + dim..5 + 2 * dim).map(real).collect::<Result<_>>()?,
        });
    }
    Ok(out)
}

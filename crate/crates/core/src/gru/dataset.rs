//! Delay-free trajectory datasets and their text file format.
//!
//! ```text
//! delaycomp-dataset 1
//! input_dim 2
//! dt 0.1
//! split unsplit
//! episode converged-policy 3
//! 0 0 1
//! 0 0.1 1
//! 1 0.2 1
//! ```
//!
//! Each `episode <tag> <n>` header is followed by `n` rows: the terminal flag
//! (`0`/`1`) and then the state components in decimal text.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const DATASET_FORMAT_VERSION: u32 = 1;
const MAGIC: &str = "delaycomp-dataset";

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub state: Vec<f64>,
    pub terminal: bool,
}

/// Provenance of an episode. Only converged-policy data is used for training.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EpisodeTag {
    ConvergedPolicy,
    Exploratory,
}

impl EpisodeTag {
    pub fn as_str(self) -> &'static str {
        match self {
            EpisodeTag::ConvergedPolicy => "converged-policy",
            EpisodeTag::Exploratory => "exploratory",
        }
    }
}

impl FromStr for EpisodeTag {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "converged-policy" => Ok(EpisodeTag::ConvergedPolicy),
            "exploratory" => Ok(EpisodeTag::Exploratory),
            other => Err(format!("unknown episode tag `{other}`")),
        }
    }
}

/// Which side of a train/holdout split a dataset came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetSplit {
    Unsplit,
    Train,
    Holdout,
}

impl DatasetSplit {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetSplit::Unsplit => "unsplit",
            DatasetSplit::Train => "train",
            DatasetSplit::Holdout => "holdout",
        }
    }
}

impl FromStr for DatasetSplit {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "unsplit" => Ok(DatasetSplit::Unsplit),
            "train" => Ok(DatasetSplit::Train),
            "holdout" => Ok(DatasetSplit::Holdout),
            other => Err(format!("unknown split `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub tag: EpisodeTag,
    pub samples: Vec<Sample>,
}

impl Episode {
    /// Builds an episode whose final sample is terminal.
    pub fn new(states: Vec<Vec<f64>>, tag: EpisodeTag) -> Self {
        let n = states.len();
        let samples = states
            .into_iter()
            .enumerate()
            .map(|(k, state)| Sample {
                state,
                terminal: k + 1 == n,
            })
            .collect();
        Episode { tag, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn state(&self, t: usize) -> &[f64] {
        &self.samples[t].state
    }
}

/// Episodes sampled at a fixed control period `dt`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryDataset {
    pub input_dim: usize,
    pub dt: f64,
    pub split: DatasetSplit,
    pub episodes: Vec<Episode>,
}

impl TrajectoryDataset {
    pub fn new(input_dim: usize, dt: f64, episodes: Vec<Episode>) -> Result<Self> {
        let ds = TrajectoryDataset {
            input_dim,
            dt,
            split: DatasetSplit::Unsplit,
            episodes,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::contract("dataset input_dim must be positive"));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::contract(format!("dataset dt must be positive, got {}", self.dt)));
        }
        for (e, ep) in self.episodes.iter().enumerate() {
            for (t, s) in ep.samples.iter().enumerate() {
                if s.state.len() != self.input_dim {
                    return Err(Error::contract(format!(
                        "episode {e} sample {t} has {} components, expected {}",
                        s.state.len(),
                        self.input_dim
                    )));
                }
                if s.state.iter().any(|v| !v.is_finite()) {
                    return Err(Error::numeric(format!("episode {e} sample {t} is not finite")));
                }
                if s.terminal && t + 1 != ep.samples.len() {
                    return Err(Error::contract(format!(
                        "episode {e} has a terminal flag at sample {t} before its end"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.episodes.is_empty()
    }

    pub fn sample_count(&self) -> usize {
        self.episodes.iter().map(Episode::len).sum()
    }

    pub fn transition_count(&self) -> usize {
        self.episodes.iter().map(|e| e.len().saturating_sub(1)).sum()
    }

    pub fn states(&self) -> impl Iterator<Item = &[f64]> {
        self.episodes
            .iter()
            .flat_map(|e| e.samples.iter().map(|s| s.state.as_slice()))
    }

    /// Keeps only episodes eligible for model fitting.
    pub fn curated(&self) -> TrajectoryDataset {
        TrajectoryDataset {
            episodes: self
                .episodes
                .iter()
                .filter(|e| e.tag == EpisodeTag::ConvergedPolicy)
                .cloned()
                .collect(),
            ..self.clone()
        }
    }

    /// Splits whole episodes into `(train, holdout)` with a seeded shuffle.
    /// The holdout receives `ceil(fraction * n)` episodes and both sides are non-empty.
    pub fn split_holdout(&self, fraction: f64, seed: u64) -> Result<(TrajectoryDataset, TrajectoryDataset)> {
        if !(fraction > 0.0 && fraction <= 0.5) {
            return Err(Error::Usage(format!("validation fraction must be in (0, 0.5], got {fraction}")));
        }
        let n = self.episodes.len();
        if n < 2 {
            return Err(Error::Usage(format!("need at least 2 episodes to split, have {n}")));
        }
        let n_hold = ((fraction * n as f64).ceil() as usize).clamp(1, n - 1);
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        let (hold_idx, train_idx) = order.split_at(n_hold);
        let pick = |idx: &[usize], split| {
            let mut idx = idx.to_vec();
            idx.sort_unstable();
            TrajectoryDataset {
                input_dim: self.input_dim,
                dt: self.dt,
                split,
                episodes: idx.iter().map(|&i| self.episodes[i].clone()).collect(),
            }
        };
        Ok((pick(train_idx, DatasetSplit::Train), pick(hold_idx, DatasetSplit::Holdout)))
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{MAGIC} {DATASET_FORMAT_VERSION}").unwrap();
        writeln!(out, "input_dim {}", self.input_dim).unwrap();
        writeln!(out, "dt {}", self.dt).unwrap();
        writeln!(out, "split {}", self.split.as_str()).unwrap();
        for ep in &self.episodes {
            writeln!(out, "episode {} {}", ep.tag.as_str(), ep.len()).unwrap();
            for s in &ep.samples {
                out.push(if s.terminal { '1' } else { '0' });
                for v in &s.state {
                    write!(out, " {v}").unwrap();
                }
                out.push('\n');
            }
        }
        out
    }

    pub fn from_text(text: &str, path: &Path) -> Result<Self> {
        let perr = |line: usize, msg: String| Error::Parse {
            path: path.to_path_buf(),
            line,
            msg,
        };
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));
        let mut header = |key: &str| -> Result<(usize, String)> {
            let (no, line) = lines
                .next()
                .ok_or_else(|| perr(0, format!("unexpected end of file, expected `{key}`")))?;
            let rest = line
                .strip_prefix(key)
                .and_then(|r| r.strip_prefix(' '))
                .ok_or_else(|| perr(no, format!("expected `{key} <value>`, found `{line}`")))?;
            Ok((no, rest.trim().to_string()))
        };
        let (no, version) = header(MAGIC)?;
        let version: u32 = version
            .parse()
            .map_err(|_| perr(no, format!("bad version `{version}`")))?;
        if version != DATASET_FORMAT_VERSION {
            return Err(Error::Version {
                path: path.to_path_buf(),
                found: version,
                expected: DATASET_FORMAT_VERSION,
            });
        }
        let (no, v) = header("input_dim")?;
        let input_dim: usize = v.parse().map_err(|_| perr(no, format!("bad input_dim `{v}`")))?;
        let (no, v) = header("dt")?;
        let dt: f64 = v.parse().map_err(|_| perr(no, format!("bad dt `{v}`")))?;
        let (no, v) = header("split")?;
        let split: DatasetSplit = v.parse().map_err(|e| perr(no, e))?;

        let mut episodes = Vec::new();
        while let Some((no, line)) = lines.next() {
            let mut parts = line.split_whitespace();
            if parts.next() != Some("episode") {
                return Err(perr(no, format!("expected `episode <tag> <count>`, found `{line}`")));
            }
            let tag: EpisodeTag = parts
                .next()
                .ok_or_else(|| perr(no, "missing episode tag".into()))?
                .parse()
                .map_err(|e| perr(no, e))?;
            let count: usize = parts
                .next()
                .and_then(|c| c.parse().ok())
                .ok_or_else(|| perr(no, "missing or bad sample count".into()))?;
            let mut samples = Vec::with_capacity(count);
            for _ in 0..count {
                let (no, line) = lines
                    .next()
                    .ok_or_else(|| perr(no, format!("episode truncated: expected {count} samples")))?;
                let mut fields = line.split_whitespace();
                let terminal = match fields.next() {
                    Some("0") => false,
                    Some("1") => true,
                    other => return Err(perr(no, format!("bad terminal flag {other:?}"))),
                };
                let state = fields
                    .map(|f| f.parse::<f64>().map_err(|_| perr(no, format!("bad number `{f}`"))))
                    .collect::<Result<Vec<_>>>()?;
                if state.len() != input_dim {
                    return Err(perr(no, format!("expected {input_dim} values, found {}", state.len())));
                }
                // parses fine but is unusable data: a numeric failure, not a format error
                if let Some(v) = state.iter().find(|v| !v.is_finite()) {
                    return Err(Error::numeric(format!("{}: line {no}: non-finite value {v}", path.display())));
                }
                samples.push(Sample { state, terminal });
            }
            episodes.push(Episode { tag, samples });
        }
        let ds = TrajectoryDataset {
            input_dim,
            dt,
            split,
            episodes,
        };
        ds.validate()?;
        Ok(ds)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text, path)
    }
}

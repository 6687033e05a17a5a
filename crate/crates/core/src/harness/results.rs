use std::io::Write;
use std::path::Path;

use crate::env::EnvKind;
use crate::error::{Error, Result};
use crate::filter::EstimatorMode;

pub const RESULTS_HEADER: &str = "# delaycomp-results v1";

pub const RESULTS_COLUMNS: [&str; 11] = [
    "env",
    "mode",
    "delay",
    "loss_prob",
    "noise_frac",
    "seed",
    "episode",
    "return",
    "estimate_mse",
    "mean_rollout_depth",
    "filter_us_per_step",
];

/// One evaluated episode; condition columns echo the sweep config.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub env: EnvKind,
    pub mode: EstimatorMode,
    pub delay: u64,
    pub loss_prob: f64,
    pub noise_frac: f64,
    pub seed: u64,
    pub episode: usize,
    pub ret: f64,
    pub estimate_mse: f64,
    pub mean_rollout_depth: f64,
    pub filter_us_per_step: Option<f64>,
}

/// Writes the versioned header, the resolved config as `#` lines, then one row per episode.
pub fn write_results(path: &Path, config_echo: &str, records: &[EpisodeRecord]) -> Result<()> {
    let mut buf = Vec::new();
    writeln!(buf, "{RESULTS_HEADER}").expect("writing to memory");
    for line in config_echo.lines() {
        writeln!(buf, "# {line}").expect("writing to memory");
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(RESULTS_COLUMNS).expect("writing to memory");
        for r in records {
            w.write_record([
                r.env.name().to_string(),
                r.mode.name().to_string(),
                r.delay.to_string(),
                r.loss_prob.to_string(),
                r.noise_frac.to_string(),
                r.seed.to_string(),
                r.episode.to_string(),
                r.ret.to_string(),
                r.estimate_mse.to_string(),
                r.mean_rollout_depth.to_string(),
                r.filter_us_per_step.map_or("NA".to_string(), |v| v.to_string()),
            ])
            .expect("writing to memory");
        }
        w.flush().map_err(|e| Error::io(path, e))?;
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub fn read_results(path: &Path) -> Result<Vec<EpisodeRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_results(&text, path)
}

pub fn parse_results(text: &str, path: &Path) -> Result<Vec<EpisodeRecord>> {
    let perr = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };
    if text.lines().next() != Some(RESULTS_HEADER) {
        return Err(perr(1, format!("expected `{RESULTS_HEADER}`")));
    }
    let skipped = text.lines().take_while(|l| l.starts_with('#')).count();
    let body: String = text.lines().skip(skipped).map(|l| format!("{l}\n")).collect();
    let mut rdr = csv::Reader::from_reader(body.as_bytes());
    let header = rdr.headers().map_err(|e| perr(skipped + 1, e.to_string()))?;
    if header.iter().ne(RESULTS_COLUMNS) {
        return Err(perr(skipped + 1, "unexpected column header".into()));
    }
    let mut out = Vec::new();
    for (k, rec) in rdr.records().enumerate() {
        let line = skipped + 2 + k;
        let rec = rec.map_err(|e| perr(line, e.to_string()))?;
        let get = |c: usize| rec.get(c).unwrap_or("");
        let bad = |c: usize| perr(line, format!("bad {} value `{}`", RESULTS_COLUMNS[c], get(c)));
        let real = |c: usize| get(c).parse::<f64>().map_err(|_| bad(c));
        let env = [
            EnvKind::DoubleIntegratorRendezvous,
            EnvKind::UnicyclePursuit,
            EnvKind::SpreadLite,
        ]
        .into_iter()
        .find(|k| k.name() == get(0))
        .ok_or_else(|| bad(0))?;
        out.push(EpisodeRecord {
            env,
            mode: get(1).parse().map_err(|_| bad(1))?,
            delay: get(2).parse().map_err(|_| bad(2))?,
            loss_prob: real(3)?,
            noise_frac: real(4)?,
            seed: get(5).parse().map_err(|_| bad(5))?,
            episode: get(6).parse().map_err(|_| bad(6))?,
            ret: real(7)?,
            estimate_mse: real(8)?,
            mean_rollout_depth: real(9)?,
            filter_us_per_step: match get(10) {
                "NA" => None,
                _ => Some(real(10)?),
            },
        });
    }
    Ok(out)
}

/// Mean and spread of returns for one (env, mode, delay, loss, noise) condition.
#[derive(Debug, Clone, PartialEq)]
pub struct ConditionSummary {
    pub env: EnvKind,
    pub mode: EstimatorMode,
    pub delay: u64,
    pub loss_prob: f64,
    pub noise_frac: f64,
    pub n: usize,
    pub mean_return: f64,
    /// sample standard deviation over seeds × episodes
    pub std_return: f64,
    pub mean_estimate_mse: f64,
}

impl ConditionSummary {
    pub fn std_error(&self) -> f64 {
        self.std_return / (self.n as f64).sqrt()
    }

    /// Standard error of the difference of two condition means.
    pub fn pooled_std_error(a: &ConditionSummary, b: &ConditionSummary) -> f64 {
        (a.std_error().powi(2) + b.std_error().powi(2)).sqrt()
    }
}

/// Groups records by condition in first-appearance order.
pub fn summarize(records: &[EpisodeRecord]) -> Vec<ConditionSummary> {
    let key = |r: &EpisodeRecord| (r.env, r.mode, r.delay, r.loss_prob.to_bits(), r.noise_frac.to_bits());
    let mut keys = Vec::new();
    for r in records {
        if !keys.contains(&key(r)) {
            keys.push(key(r));
        }
    }
    keys.into_iter()
        .map(|k| {
            let rows: Vec<&EpisodeRecord> = records.iter().filter(|r| key(r) == k).collect();
            let n = rows.len();
            let mean = rows.iter().map(|r| r.ret).sum::<f64>() / n as f64;
            let var = if n > 1 {
                rows.iter().map(|r| (r.ret - mean).powi(2)).sum::<f64>() / (n - 1) as f64
            } else {
                0.0
            };
            ConditionSummary {
                env: rows[0].env,
                mode: rows[0].mode,
                delay: rows[0].delay,
                loss_prob: rows[0].loss_prob,
                noise_frac: rows[0].noise_frac,
                n,
                mean_return: mean,
                std_return: var.sqrt(),
                mean_estimate_mse: rows.iter().map(|r| r.estimate_mse).sum::<f64>() / n as f64,
            }
        })
        .collect()
}

pub fn format_summary(summary: &[ConditionSummary]) -> String {
    let mut s = String::new();
    for c in summary {
        s += &format!(
            "{:<28} {:<16} delay {:>3} loss {:<5} noise {:<5} n {:>4}  return {:>10.4} ± {:<8.4} est-mse {:.3e}\n",
            c.env.name(),
            c.mode.name(),
            c.delay,
            c.loss_prob,
            c.noise_frac,
            c.n,
            c.mean_return,
            c.std_return,
            c.mean_estimate_mse
        );
    }
    s
}

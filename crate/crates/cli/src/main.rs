use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use delaycomp::harness::{
    cmd_bench_latency, cmd_collect, cmd_replay, cmd_sweep, cmd_train, format_replay, RunConfig, RunOptions,
};
use delaycomp::Error;

/// Delay-compensating belief filter: data collection, model training, sweeps and benchmarks.
#[derive(Debug, Parser)]
#[command(name = "delaycomp", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Record delay-free trajectories of the scripted team.
    Collect(Common),
    /// Fit the residual transition model and write its loss curve.
    Train(Common),
    /// Run the delay × loss × noise × mode × seed cross product.
    Sweep(Common),
    /// Time one filter step at several rollout depths.
    BenchLatency(Common),
    /// Re-run the estimators on a recorded channel trace.
    Replay {
        #[command(flatten)]
        common: Common,
        /// channel trace to replay (overrides paths.trace)
        #[arg(long)]
        trace: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// run configuration (TOML)
    #[arg(long)]
    config: PathBuf,
    /// output path overriding the one in the config
    #[arg(long)]
    out: Option<PathBuf>,
    /// added to every seed in the config
    #[arg(long, default_value_t = 0)]
    seed_offset: u64,
    /// worker threads for sweeps (defaults to all cores)
    #[arg(long)]
    threads: Option<usize>,
}

impl Common {
    fn options(&self, trace: Option<PathBuf>) -> RunOptions {
        RunOptions {
            out: self.out.clone(),
            seed_offset: self.seed_offset,
            threads: self.threads,
            trace,
        }
    }
}

fn run(cli: Cli) -> Result<String, Error> {
    let (common, trace) = match &cli.command {
        Command::Collect(c) | Command::Train(c) | Command::Sweep(c) | Command::BenchLatency(c) => (c, None),
        Command::Replay { common, trace } => (common, trace.clone()),
    };
    if common.threads == Some(0) {
        return Err(Error::Usage("--threads must be at least 1".into()));
    }
    let cfg = RunConfig::load(&common.config)?;
    let opts = common.options(trace);
    Ok(match cli.command {
        Command::Collect(_) => cmd_collect(&cfg, &opts)?.to_string(),
        Command::Train(_) => cmd_train(&cfg, &opts)?.to_string(),
        Command::Sweep(_) => cmd_sweep(&cfg, &opts)?.to_string(),
        Command::BenchLatency(_) => cmd_bench_latency(&cfg, &opts)?.to_string(),
        Command::Replay { .. } => {
            let (path, report) = cmd_replay(&cfg, &opts)?;
            format!("{}wrote {}", format_replay(&report), path.display())
        }
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(report) => {
            println!("{report}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

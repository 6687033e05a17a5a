mod support;

use std::sync::Arc;

use delaycomp::channel::read_trace;
use delaycomp::env::EnvSpec;
use delaycomp::filter::EstimatorMode;
use delaycomp::gru::TransitionModel;
use delaycomp::harness::{
    cmd_replay, cmd_sweep, episode_seeds, read_results, run_episode, EpisodeSetup, FilterSection, RunConfig,
    RunOptions, RESULTS_HEADER,
};

/// Small pursuit pipeline: 30 collection episodes, 4 epochs, short sweeps.
fn small(dir: &std::path::Path) -> (RunConfig, Arc<TransitionModel>) {
    let mut cfg = support::pursuit_config(dir);
    cfg.collect.episodes = 30;
    cfg.train.epochs = 4;
    cfg.env.episode_len = 120;
    cfg.sweep.delays = vec![0, 6];
    cfg.sweep.noise_fracs = vec![0.0, 0.2];
    cfg.sweep.seeds = vec![0, 1];
    cfg.sweep.episodes_per_seed = 3;
    let model = support::collect_and_train(&cfg);
    (cfg, model)
}

fn setup(cfg: &RunConfig, model: &Arc<TransitionModel>, mode: EstimatorMode, delay: u64, loss: f64, rho: f64) -> EpisodeSetup {
    let (env_seed, channel_seed) = episode_seeds(3, 0);
    let filter = FilterSection { rho, ..cfg.filter.clone() }.build(Some(model)).unwrap();
    EpisodeSetup {
        env: EnvSpec { seed: env_seed, obs_noise_frac: 0.0, ..cfg.env.clone() },
        mode,
        model: Some(model.clone()),
        filter,
        channel: cfg.channel.delay_model(delay, loss, channel_seed),
        record_timing: false,
        record_trace: true,
        record_beliefs: true,
    }
}

#[test]
fn sweep_layout_determinism_and_thread_independence() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, _) = small(dir.path());
    let one = RunOptions { out: Some(dir.path().join("a.csv")), threads: Some(1), ..RunOptions::default() };
    let two = RunOptions { out: Some(dir.path().join("b.csv")), threads: Some(2), ..RunOptions::default() };
    let again = RunOptions { out: Some(dir.path().join("c.csv")), threads: Some(1), ..RunOptions::default() };
    let a = cmd_sweep(&cfg, &one).unwrap();
    cmd_sweep(&cfg, &two).unwrap();
    cmd_sweep(&cfg, &again).unwrap();

    let s = &cfg.sweep;
    let rows = s.delays.len() * s.loss_probs.len() * s.noise_fracs.len() * s.modes.len() * s.seeds.len() * s.episodes_per_seed;
    assert_eq!(a.records.len(), rows);
    let bytes = |n: &str| std::fs::read(dir.path().join(n)).unwrap();
    assert_eq!(bytes("a.csv"), bytes("b.csv"));
    assert_eq!(bytes("a.csv"), bytes("c.csv"));

    let text = String::from_utf8(bytes("a.csv")).unwrap();
    assert!(text.starts_with(RESULTS_HEADER));
    assert!(text.contains("unicycle_pursuit"));
    let records = read_results(&dir.path().join("a.csv")).unwrap();
    assert_eq!(records, a.records);
}

#[test]
fn closed_loop_regimes() {
    let dir = tempfile::tempdir().unwrap();
    let (cfg, model) = small(dir.path());

    // total loss from t = 0: no innovation ever arrives, so the filter is the open-loop model
    let gk = run_episode(&setup(&cfg, &model, EstimatorMode::GruKalman, 6, 1.0, 0.25)).unwrap();
    let go = run_episode(&setup(&cfg, &model, EstimatorMode::GruOnly, 6, 1.0, 0.25)).unwrap();
    assert_eq!(gk.beliefs, go.beliefs);
    assert_eq!(gk.ret, go.ret);

    // zero delay with exact measurements: every estimate is the sender's current truth
    let out = run_episode(&setup(&cfg, &model, EstimatorMode::GruKalman, 0, 0.0, 1e-9)).unwrap();
    let n = cfg.env.n_agents;
    let mut worst = 0.0f64;
    for (t, step) in out.beliefs.iter().enumerate() {
        let dim = step.len() / (n * (n - 1));
        let mut k = 0;
        for i in 0..n {
            for j in (0..n).filter(|&j| j != i) {
                let rec = out.trace.iter().find(|r| r.sender == j && r.send_stamp == t as u64).unwrap();
                for (b, v) in step[k * dim..(k + 1) * dim].iter().zip(&rec.truth) {
                    worst = worst.max((b - v).abs());
                }
                k += 1;
            }
        }
    }
    assert!(worst <= 1e-6, "{worst:.2e}");
}

#[test]
fn replay_is_deterministic_and_ranks_compensation() {
    let dir = tempfile::tempdir().unwrap();
    let (mut cfg, _) = small(dir.path());
    cfg.paths.trace_dir = Some(dir.path().join("traces"));
    cfg.sweep.modes = vec![EstimatorMode::GruKalman];
    cfg.sweep.noise_fracs = vec![0.0];
    cmd_sweep(&cfg, &RunOptions::default()).unwrap();
    let trace = |d: u64| dir.path().join(format!("traces/trace_gru_kalman_d{d}_l0_n0_s0.csv"));
    assert!(!read_trace(&trace(6)).unwrap().is_empty());

    let run = |d: u64, out: &str| {
        let opts = RunOptions { trace: Some(trace(d)), out: Some(dir.path().join(out)), ..RunOptions::default() };
        cmd_replay(&cfg, &opts).unwrap().1
    };
    let first = run(6, "r1.csv");
    run(6, "r2.csv");
    assert_eq!(
        std::fs::read(dir.path().join("r1.csv")).unwrap(),
        std::fs::read(dir.path().join("r2.csv")).unwrap()
    );
    let gk = first.mean_mse(EstimatorMode::GruKalman).unwrap();
    let hold = first.mean_mse(EstimatorMode::NoCompensation).unwrap();
    assert!(gk < hold, "gru_kalman {gk:.3e} vs hold {hold:.3e}");

    let instant = run(0, "r0.csv");
    for mode in [EstimatorMode::GruKalman, EstimatorMode::NoCompensation] {
        assert!(instant.mean_mse(mode).unwrap() <= 1e-3, "{mode}: {:?}", instant.mean_mse(mode));
    }
}

//! Dataset builders and independent oracles shared by the integration tests and the
//! acceptance runner. Nothing here calls into the filter or trainer internals.
#![allow(dead_code)]

use delaycomp::filter::{kf_predict, kf_update, Belief, LinearDynamics, MeasurementMap};
use delaycomp::gru::{window_loss, window_loss_and_grad, Episode, EpisodeTag, GruParams, Lane, TrajectoryDataset};
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

/// `p' = p + v·dt`, `v' = v` in one dimension; `p0 ~ N(0, 1)`, `v ~ U(-1.5, 1.5)`.
pub fn double_integrator(episodes: usize, len: usize, dt: f64, seed: u64) -> TrajectoryDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = (0..episodes)
        .map(|_| {
            let p0: f64 = rng.sample(StandardNormal);
            let v: f64 = rng.random_range(-1.5..1.5);
            let states = (0..len).map(|t| vec![p0 + v * dt * t as f64, v]).collect();
            Episode::new(states, EpisodeTag::ConvergedPolicy)
        })
        .collect();
    TrajectoryDataset::new(2, dt, eps).unwrap()
}

/// `x' = x` with `x0 ~ N(0, I)`.
pub fn constant_dynamics(episodes: usize, len: usize, dim: usize, seed: u64) -> TrajectoryDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = (0..episodes)
        .map(|_| {
            let x: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
            Episode::new(vec![x; len], EpisodeTag::ConvergedPolicy)
        })
        .collect();
    TrajectoryDataset::new(dim, 0.1, eps).unwrap()
}

/// Stationary unit-variance AR(1): `x' = a·x + sqrt(1 - a²)·ε`. The best one-step residual
/// predictor is `(a - 1)·x`, leaving an i.i.d. error of variance `1 - a²` in units where the
/// state scale is 1.
pub fn ar1(episodes: usize, len: usize, a: f64, seed: u64) -> TrajectoryDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = (1.0 - a * a).sqrt();
    let eps = (0..episodes)
        .map(|_| {
            let mut x: f64 = rng.sample(StandardNormal);
            let states = (0..len)
                .map(|_| {
                    let cur = x;
                    let e: f64 = StandardNormal.sample(&mut rng);
                    x = a * x + s * e;
                    vec![cur]
                })
                .collect();
            Episode::new(states, EpisodeTag::ConvergedPolicy)
        })
        .collect();
    TrajectoryDataset::new(1, 0.1, eps).unwrap()
}

/// Textbook Kalman recursion for `x' = A x + b`, `z = H x + v`:
/// `P⁻ = A P Aᵀ + Q`, `K = P⁻ Hᵀ (H P⁻ Hᵀ + R)⁻¹`, `x = x⁻ + K (z - H x⁻)`, `P = (I - K H) P⁻`.
pub struct TextbookKalman {
    pub x: DVector<f64>,
    pub p: DMatrix<f64>,
}

impl TextbookKalman {
    pub fn predict(&mut self, a: &DMatrix<f64>, b: &DVector<f64>, q: &DMatrix<f64>) {
        self.x = a * &self.x + b;
        self.p = a * &self.p * a.transpose() + q;
    }

    pub fn update(&mut self, z: &DVector<f64>, h: &DMatrix<f64>, r: &DMatrix<f64>) {
        let s = h * &self.p * h.transpose() + r;
        let k = &self.p * h.transpose() * s.try_inverse().expect("innovation covariance is invertible");
        self.x = &self.x + &k * (z - h * &self.x);
        let n = self.x.len();
        self.p = (DMatrix::identity(n, n) - k * h) * &self.p;
    }
}

pub fn max_abs_diff_vec(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn max_abs_diff_mat(a: &DMatrix<f64>, b: &DMatrix<f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Random symmetric positive-definite matrix with eigenvalues in roughly `[lo, lo + n]`.
pub fn random_spd(rng: &mut ChaCha8Rng, n: usize, lo: f64) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &m * m.transpose() / n as f64 + DMatrix::identity(n, n) * lo
}

/// Moving average over every full 3-epoch window.
pub fn smoothed3(curve: &[f64]) -> Vec<f64> {
    curve.windows(3).map(|w| w.iter().sum::<f64>() / 3.0).collect()
}

pub const FD_STEP: f64 = 1e-5;
// below this magnitude both gradients are numerically zero and the ratio means nothing
pub const GRAD_FLOOR: f64 = 1e-6;

/// Largest relative error between the analytic window gradient of a random small model
/// (input ≤ 3, hidden ≤ 4) and central differences.
pub fn gradient_check(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_in = rng.random_range(1..=3);
    let n_h = rng.random_range(1..=4);
    let mut params = GruParams::init_uniform(n_in, n_h, &mut rng);
    // widen the weights so the gates leave their linear regime
    for t in params.tensors_mut() {
        t.iter_mut().for_each(|w| *w *= 2.0);
    }
    let mut vecs = |n: usize, len: usize| -> Vec<Vec<f64>> {
        (0..len).map(|_| (0..n).map(|_| rng.random_range(-1.5..1.5)).collect()).collect()
    };
    let inputs = [vecs(n_in, 5), vecs(n_in, 3)];
    let targets = [vecs(n_in, 5), vecs(n_in, 3)];
    let h0 = vecs(n_h, 2);
    let lanes: Vec<Lane<'_>> = (0..2)
        .map(|k| Lane { inputs: &inputs[k], targets: &targets[k], h0: &h0[k] })
        .collect();
    let analytic = window_loss_and_grad(&params, &lanes).grad;
    let analytic: Vec<Vec<f64>> = analytic.tensors().iter().map(|(_, t)| t.to_vec()).collect();

    let mut worst = 0.0f64;
    for (ti, grads) in analytic.iter().enumerate() {
        for (k, &a) in grads.iter().enumerate() {
            let w = params.tensors_mut()[ti][k];
            params.tensors_mut()[ti][k] = w + FD_STEP;
            let up = window_loss(&params, &lanes);
            params.tensors_mut()[ti][k] = w - FD_STEP;
            let down = window_loss(&params, &lanes);
            params.tensors_mut()[ti][k] = w;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(GRAD_FLOOR);
            worst = worst.max(rel);
        }
    }
    worst
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> DVector<f64> {
    DVector::from_fn(n, |_, _| scale * rng.sample::<f64, _>(StandardNormal))
}

pub fn min_eig(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone()).eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min)
}

/// Runs the filter (drift stub, identity Jacobian) and the textbook recursion side by side on a
/// drifting random walk; returns the largest mean and covariance discrepancy seen.
pub fn kalman_oracle_run(seed: u64, d: usize, rows: Vec<usize>, steps: usize) -> (f64, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = random_spd(&mut rng, d, 0.05) * 0.1;
    let map = MeasurementMap::select(d, rows).unwrap();
    let m = map.output_dim();
    let r = random_spd(&mut rng, m, 0.05) * 0.2;
    let h = map.matrix();
    let dynamics = LinearDynamics { a: DMatrix::identity(d, d), b: random_vec(&mut rng, d, 0.1) };
    let p0 = random_spd(&mut rng, d, 0.1);
    let x0 = random_vec(&mut rng, d, 1.0);

    let mut belief = Belief::new(x0.clone(), p0.clone(), Vec::new(), 0).unwrap();
    let mut oracle = TextbookKalman { x: x0.clone(), p: p0 };
    let mut truth = x0;
    let (mut dm, mut dp) = (0.0f64, 0.0f64);
    for _ in 0..steps {
        truth = &truth + &dynamics.b + random_vec(&mut rng, d, 0.3);
        belief = kf_predict(&belief, &dynamics, &q).unwrap();
        oracle.predict(&dynamics.a, &dynamics.b, &q);
        let z = &h * &truth + random_vec(&mut rng, m, 0.4);
        belief = kf_update(&belief, &z, &map, &r).unwrap();
        oracle.update(&z, &h, &r);
        dm = dm.max(max_abs_diff_vec(&belief.mean, &oracle.x));
        dp = dp.max(max_abs_diff_mat(&belief.cov, &oracle.p));
    }
    (dm, dp)
}

/// `cycles` random predict/update pairs on extreme but valid scales (random PSD P0, diagonal
/// Q and R spanning many decades, random partial H); returns the smallest covariance
/// eigenvalue seen.
pub fn psd_stress(seed: u64, d: usize, cycles: usize) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let log_uniform = |rng: &mut ChaCha8Rng, lo: f64, hi: f64| 10f64.powf(rng.random_range(lo..hi));
    let p0 = random_spd(&mut rng, d, 1e-6) * log_uniform(&mut rng, -3.0, 3.0);
    let mut b = Belief::new(random_vec(&mut rng, d, 1.0), p0, Vec::new(), 0).unwrap();
    let model = LinearDynamics::identity(d);
    let mut worst = f64::INFINITY;
    for _ in 0..cycles {
        let q = DMatrix::from_diagonal(&DVector::from_fn(d, |_, _| log_uniform(&mut rng, -12.0, 2.0)));
        b = kf_predict(&b, &model, &q).unwrap();
        worst = worst.min(min_eig(&b.cov));
        let mut rows: Vec<usize> = (0..d).filter(|_| rng.random_bool(0.7)).collect();
        if rows.is_empty() {
            rows.push(rng.random_range(0..d));
        }
        let map = MeasurementMap::select(d, rows).unwrap();
        let r = DMatrix::from_diagonal(&DVector::from_fn(map.output_dim(), |_, _| log_uniform(&mut rng, -10.0, 4.0)));
        let z = &b.mean + random_vec(&mut rng, d, 1.0);
        let z = map.observe(z.as_slice()).unwrap();
        b = kf_update(&b, &z, &map, &r).unwrap();
        worst = worst.min(min_eig(&b.cov));
    }
    worst
}

/// The shipped pursuit config with every output redirected into `dir`.
pub fn pursuit_config(dir: &std::path::Path) -> delaycomp::harness::RunConfig {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/pursuit.toml");
    let mut cfg = delaycomp::harness::RunConfig::load(&path).unwrap();
    cfg.paths.dataset = dir.join("dataset.txt");
    cfg.paths.model = dir.join("model.toml");
    cfg.paths.loss_curve = None;
    cfg.paths.results = dir.join("results.csv");
    cfg.paths.trace_dir = None;
    cfg.paths.trace = None;
    cfg.paths.replay_report = dir.join("replay.csv");
    cfg
}

/// Collects and trains with the given budget; returns the trained model.
pub fn collect_and_train(
    cfg: &delaycomp::harness::RunConfig,
) -> std::sync::Arc<delaycomp::gru::TransitionModel> {
    use delaycomp::harness::{cmd_collect, cmd_train, RunOptions};
    cmd_collect(cfg, &RunOptions::default()).unwrap();
    let report = cmd_train(cfg, &RunOptions::default()).unwrap();
    std::sync::Arc::new(delaycomp::gru::load_model(&report.model_path).unwrap())
}

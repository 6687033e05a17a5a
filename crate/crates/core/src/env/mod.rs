//! Small multi-agent environments with closed-form dynamics and scripted feedback controllers.
//!
//! Every agent communicates a 4-vector `(px, py, vx, vy)`. Local observations are exact;
//! noise, when configured, corrupts only the communicated payload.

mod collect;
mod policy;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filter::KinematicLayout;

pub use collect::collect_trajectories;
pub use policy::ScriptedPolicy;

/// Length of every agent's state, local observation and payload.
pub const STATE_DIM: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnvKind {
    /// double integrators meeting at their centroid
    DoubleIntegratorRendezvous,
    /// unicycle pursuers holding formation slots around a circling evader (agent 0)
    UnicyclePursuit,
    /// double integrators covering one landmark each
    SpreadLite,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::DoubleIntegratorRendezvous => "double_integrator_rendezvous",
            EnvKind::UnicyclePursuit => "unicycle_pursuit",
            EnvKind::SpreadLite => "spread_lite",
        }
    }

    /// Half-width of the square arena; positions are clipped to it.
    pub fn arena(self) -> f64 {
        match self {
            EnvKind::UnicyclePursuit => 4.0,
            _ => 1.0,
        }
    }

    /// Minimum pairwise distance between spawned agents.
    pub fn min_spawn_separation(self) -> f64 {
        0.2
    }

    /// Typical spread of each payload feature; noise is expressed as a fraction of it.
    pub fn feature_scale(self) -> [f64; STATE_DIM] {
        match self {
            EnvKind::UnicyclePursuit => [1.0, 1.0, 0.7, 0.7],
            _ => [0.5, 0.5, 0.3, 0.3],
        }
    }

    /// Per-component action bound.
    pub fn action_bound(self) -> [f64; 2] {
        match self {
            // (linear acceleration, turn rate)
            EnvKind::UnicyclePursuit => [3.0, 4.0],
            _ => [2.0, 2.0],
        }
    }

    /// Position/velocity pairs of the payload, shared by all kinds.
    pub fn kinematic_layout(self) -> KinematicLayout {
        KinematicLayout {
            pairs: vec![(0, 2), (1, 3)],
        }
    }
}

impl std::fmt::Display for EnvKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvSpec {
    pub kind: EnvKind,
    pub n_agents: usize,
    pub dt: f64,
    pub episode_len: usize,
    #[serde(default)]
    pub obs_noise_frac: f64,
    #[serde(default)]
    pub seed: u64,
}

impl EnvSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_agents < 2 {
            return Err(Error::config(format!("need at least 2 agents, got {}", self.n_agents)));
        }
        if self.n_agents > 16 {
            return Err(Error::config(format!("at most 16 agents fit the arena, got {}", self.n_agents)));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return Err(Error::config(format!("dt must be positive, got {}", self.dt)));
        }
        if self.episode_len == 0 {
            return Err(Error::config("episode_len must be at least 1"));
        }
        if !(self.obs_noise_frac >= 0.0 && self.obs_noise_frac.is_finite()) {
            return Err(Error::config(format!("obs_noise_frac must be non-negative, got {}", self.obs_noise_frac)));
        }
        Ok(())
    }
}

/// Unicycle state is `(px, py, heading, speed)`; double-integrator state is `(px, py, vx, vy)`.
#[derive(Debug, Clone, PartialEq)]
pub struct WorldState {
    pub kind: EnvKind,
    pub t: u64,
    pub agents: Vec<[f64; STATE_DIM]>,
    /// one per agent for `SpreadLite`, empty otherwise
    pub landmarks: Vec<[f64; 2]>,
}

pub type Action = [f64; 2];

pub const EVADER_SPEED: f64 = 1.0;
pub const EVADER_RADIUS: f64 = 1.2;
pub const PURSUER_MAX_SPEED: f64 = 1.8;
/// Distance of each pursuer's formation slot from the evader.
pub const SLOT_RADIUS: f64 = 0.3;

/// Deterministic 64-bit mix of a base seed with a path of indices.
pub fn derive_seed(base: u64, path: &[u64]) -> u64 {
    let mut x = base ^ 0x243f_6a88_85a3_08d3;
    for &p in path {
        x = splitmix(x ^ splitmix(p.wrapping_add(0x9e37_79b9_7f4a_7c15)));
    }
    splitmix(x)
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

fn sample_separated(rng: &mut ChaCha8Rng, n: usize, half: f64, min_sep: f64, taken: &[[f64; 2]]) -> Result<Vec<[f64; 2]>> {
    let mut pts: Vec<[f64; 2]> = Vec::with_capacity(n);
    let mut attempts = 0;
    while pts.len() < n {
        attempts += 1;
        if attempts > 100_000 {
            return Err(Error::config("could not place agents with the required separation"));
        }
        let p = [rng.random_range(-half..half), rng.random_range(-half..half)];
        if pts.iter().chain(taken).all(|q| dist(p, *q) >= min_sep) {
            pts.push(p);
        }
    }
    Ok(pts)
}

pub(crate) fn dist(a: [f64; 2], b: [f64; 2]) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

/// Initial world for `spec.seed`; agents start at rest except the pursuit evader.
pub fn env_reset(spec: &EnvSpec) -> Result<WorldState> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let n = spec.n_agents;
    let sep = spec.kind.min_spawn_separation();
    let (agents, landmarks) = match spec.kind {
        EnvKind::DoubleIntegratorRendezvous => {
            let pos = sample_separated(&mut rng, n, 0.9, sep, &[])?;
            (pos.iter().map(|p| [p[0], p[1], 0.0, 0.0]).collect(), Vec::new())
        }
        EnvKind::SpreadLite => {
            let pos = sample_separated(&mut rng, n, 0.9, sep, &[])?;
            let marks = sample_separated(&mut rng, n, 0.8, 0.4, &[])?;
            (pos.iter().map(|p| [p[0], p[1], 0.0, 0.0]).collect(), marks)
        }
        EnvKind::UnicyclePursuit => {
            let centre = [rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0)];
            let phase: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let evader = [
                centre[0] + EVADER_RADIUS * phase.cos(),
                centre[1] + EVADER_RADIUS * phase.sin(),
            ];
            let pursuers = sample_separated(&mut rng, n - 1, 2.0, sep, &[evader])?;
            let mut agents = vec![[evader[0], evader[1], phase + std::f64::consts::FRAC_PI_2, EVADER_SPEED]];
            for p in pursuers {
                agents.push([p[0], p[1], rng.random_range(-std::f64::consts::PI..std::f64::consts::PI), 0.0]);
            }
            (agents, Vec::new())
        }
    };
    Ok(WorldState {
        kind: spec.kind,
        t: 0,
        agents,
        landmarks,
    })
}

/// Advances the world one control step. Out-of-bound actions are clipped; the second
/// return value counts clipped action components.
pub fn env_step(spec: &EnvSpec, state: &WorldState, actions: &[Action]) -> Result<(WorldState, u64)> {
    if actions.len() != state.agents.len() {
        return Err(Error::contract(format!(
            "{} actions for {} agents",
            actions.len(),
            state.agents.len()
        )));
    }
    if let Some(i) = actions.iter().position(|a| a.iter().any(|v| !v.is_finite())) {
        return Err(Error::contract(format!("non-finite action for agent {i} at step {}", state.t)));
    }
    let bound = spec.kind.action_bound();
    let arena = spec.kind.arena();
    let dt = spec.dt;
    let mut clipped = 0;
    let mut next = state.clone();
    next.t += 1;
    for (s, a) in next.agents.iter_mut().zip(actions) {
        let mut a = *a;
        for k in 0..2 {
            if a[k].abs() > bound[k] {
                a[k] = a[k].clamp(-bound[k], bound[k]);
                clipped += 1;
            }
        }
        match spec.kind {
            EnvKind::DoubleIntegratorRendezvous | EnvKind::SpreadLite => {
                let [px, py, vx, vy] = *s;
                *s = [px + vx * dt, py + vy * dt, vx + a[0] * dt, vy + a[1] * dt];
            }
            EnvKind::UnicyclePursuit => {
                let [px, py, th, v] = *s;
                let th2 = wrap_angle(th + a[1] * dt);
                *s = [
                    px + v * th.cos() * dt,
                    py + v * th.sin() * dt,
                    th2,
                    (v + a[0] * dt).clamp(0.0, PURSUER_MAX_SPEED),
                ];
            }
        }
        s[0] = s[0].clamp(-arena, arena);
        s[1] = s[1].clamp(-arena, arena);
    }
    Ok((next, clipped))
}

pub(crate) fn wrap_angle(a: f64) -> f64 {
    let w = (a + std::f64::consts::PI).rem_euclid(std::f64::consts::TAU) - std::f64::consts::PI;
    if w.is_finite() {
        w
    } else {
        a
    }
}

impl WorldState {
    /// The state agent `i` broadcasts: position and planar velocity.
    pub fn payload(&self, i: usize) -> [f64; STATE_DIM] {
        let s = self.agents[i];
        match self.kind {
            EnvKind::UnicyclePursuit => [s[0], s[1], s[3] * s[2].cos(), s[3] * s[2].sin()],
            _ => s,
        }
    }

    /// Exact own-state observation of agent `i`.
    pub fn local_obs(&self, i: usize) -> [f64; STATE_DIM] {
        self.agents[i]
    }

    /// Formation slot of pursuer `i` relative to the evader.
    pub fn slot_offset(n_agents: usize, i: usize) -> [f64; 2] {
        let phi = std::f64::consts::TAU * (i - 1) as f64 / (n_agents - 1) as f64;
        [SLOT_RADIUS * phi.cos(), SLOT_RADIUS * phi.sin()]
    }

    /// Team reward: negative mean distance of each agent to its goal.
    pub fn reward(&self) -> f64 {
        let n = self.agents.len();
        let pos = |i: usize| [self.agents[i][0], self.agents[i][1]];
        match self.kind {
            EnvKind::DoubleIntegratorRendezvous => {
                let c = [
                    self.agents.iter().map(|s| s[0]).sum::<f64>() / n as f64,
                    self.agents.iter().map(|s| s[1]).sum::<f64>() / n as f64,
                ];
                -(0..n).map(|i| dist(pos(i), c)).sum::<f64>() / n as f64
            }
            EnvKind::SpreadLite => -(0..n).map(|i| dist(pos(i), self.landmarks[i])).sum::<f64>() / n as f64,
            EnvKind::UnicyclePursuit => {
                let e = pos(0);
                -(1..n)
                    .map(|i| {
                        let o = Self::slot_offset(n, i);
                        dist(pos(i), [e[0] + o[0], e[1] + o[1]])
                    })
                    .sum::<f64>()
                    / (n - 1) as f64
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub next_state: WorldState,
    pub local_obs: Vec<[f64; STATE_DIM]>,
    pub comms_payload: Vec<[f64; STATE_DIM]>,
    pub reward: f64,
    pub done: bool,
}

/// Episode runner owning the world and the payload-noise stream.
#[derive(Debug, Clone)]
pub struct Env {
    spec: EnvSpec,
    state: WorldState,
    noise_rng: ChaCha8Rng,
    clipped: u64,
}

impl Env {
    pub fn new(spec: EnvSpec) -> Result<Self> {
        let state = env_reset(&spec)?;
        let mut noise_rng = ChaCha8Rng::seed_from_u64(spec.seed);
        noise_rng.set_stream(1);
        Ok(Env {
            spec,
            state,
            noise_rng,
            clipped: 0,
        })
    }

    pub fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    pub fn state(&self) -> &WorldState {
        &self.state
    }

    pub fn clipped_actions(&self) -> u64 {
        self.clipped
    }

    pub fn true_payloads(&self) -> Vec<[f64; STATE_DIM]> {
        (0..self.spec.n_agents).map(|i| self.state.payload(i)).collect()
    }

    /// Current payloads with noise drawn from this env's stream; exact when the noise level is zero.
    pub fn noisy_payloads(&mut self) -> Vec<[f64; STATE_DIM]> {
        let frac = self.spec.obs_noise_frac;
        let scale = self.spec.kind.feature_scale();
        let mut out = self.true_payloads();
        if frac > 0.0 {
            for p in &mut out {
                for (v, s) in p.iter_mut().zip(scale) {
                    let n: f64 = self.noise_rng.sample(StandardNormal);
                    *v += frac * s * n;
                }
            }
        }
        out
    }

    pub fn step(&mut self, actions: &[Action]) -> Result<StepResult> {
        let (next, clipped) = env_step(&self.spec, &self.state, actions)?;
        self.clipped += clipped;
        self.state = next;
        let reward = self.state.reward();
        if !reward.is_finite() {
            return Err(Error::numeric(format!("non-finite reward at step {}", self.state.t)));
        }
        Ok(StepResult {
            local_obs: (0..self.spec.n_agents).map(|i| self.state.local_obs(i)).collect(),
            comms_payload: self.noisy_payloads(),
            next_state: self.state.clone(),
            reward,
            done: self.state.t as usize >= self.spec.episode_len,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(kind: EnvKind, n: usize, seed: u64) -> EnvSpec {
        EnvSpec {
            kind,
            n_agents: n,
            dt: 0.1,
            episode_len: 200,
            obs_noise_frac: 0.0,
            seed,
        }
    }

    const KINDS: [EnvKind; 3] = [
        EnvKind::DoubleIntegratorRendezvous,
        EnvKind::UnicyclePursuit,
        EnvKind::SpreadLite,
    ];

    #[test]
    fn reset_is_seeded() {
        for kind in KINDS {
            assert_eq!(env_reset(&spec(kind, 4, 7)).unwrap(), env_reset(&spec(kind, 4, 7)).unwrap());
            assert_ne!(env_reset(&spec(kind, 4, 7)).unwrap(), env_reset(&spec(kind, 4, 8)).unwrap());
        }
    }

    #[test]
    fn two_agents_spawn_inside_the_arena() {
        for seed in 0..50 {
            let w = env_reset(&spec(EnvKind::DoubleIntegratorRendezvous, 2, seed)).unwrap();
            assert!(w.agents.iter().all(|s| s[0].abs() <= 1.0 && s[1].abs() <= 1.0));
        }
    }

    #[test]
    fn zero_action_from_rest_holds_still() {
        let s = spec(EnvKind::DoubleIntegratorRendezvous, 3, 1);
        let w = env_reset(&s).unwrap();
        let (next, clipped) = env_step(&s, &w, &[[0.0; 2]; 3]).unwrap();
        assert_eq!(next.agents, w.agents);
        assert_eq!(clipped, 0);
    }

    #[test]
    fn constant_velocity_moves_by_v_dt() {
        let s = spec(EnvKind::DoubleIntegratorRendezvous, 2, 1);
        let mut w = env_reset(&s).unwrap();
        w.agents[0] = [0.0, 0.0, 1.0, 0.0];
        let (next, _) = env_step(&s, &w, &[[0.0; 2]; 2]).unwrap();
        assert_eq!(next.agents[0], [0.1, 0.0, 1.0, 0.0]);
    }

    #[test]
    fn unicycle_kinematics() {
        let s = spec(EnvKind::UnicyclePursuit, 2, 1);
        let mut w = env_reset(&s).unwrap();
        w.agents[1] = [0.0, 0.0, std::f64::consts::FRAC_PI_2, 1.0];
        let (next, _) = env_step(&s, &w, &[[0.0; 2], [0.0, 1.0]]).unwrap();
        let a = next.agents[1];
        assert!(a[0].abs() < 1e-15 && (a[1] - 0.1).abs() < 1e-15);
        assert!((a[2] - (std::f64::consts::FRAC_PI_2 + 0.1)).abs() < 1e-15);
        assert_eq!(next.payload(1)[2], a[3] * a[2].cos());
    }

    #[test]
    fn actions_are_clipped_and_counted() {
        let s = spec(EnvKind::SpreadLite, 2, 1);
        let w = env_reset(&s).unwrap();
        let (next, clipped) = env_step(&s, &w, &[[10.0, 0.0], [0.0, -10.0]]).unwrap();
        assert_eq!(clipped, 2);
        assert_eq!(next.agents[0][2], 2.0 * 0.1);
        assert!(matches!(env_step(&s, &w, &[[f64::NAN, 0.0], [0.0; 2]]), Err(Error::Contract(_))));
    }

    #[test]
    fn noise_free_payload_is_the_true_state() {
        let mut env = Env::new(spec(EnvKind::UnicyclePursuit, 3, 4)).unwrap();
        assert_eq!(env.noisy_payloads(), env.true_payloads());
        let mut noisy = Env::new(EnvSpec {
            obs_noise_frac: 0.2,
            ..spec(EnvKind::UnicyclePursuit, 3, 4)
        })
        .unwrap();
        assert_ne!(noisy.noisy_payloads(), noisy.true_payloads());
    }

    #[test]
    fn invalid_specs_are_rejected() {
        assert!(env_reset(&spec(EnvKind::SpreadLite, 1, 0)).is_err());
        assert!(env_reset(&EnvSpec {
            dt: 0.0,
            ..spec(EnvKind::SpreadLite, 2, 0)
        })
        .is_err());
    }

    #[test]
    fn derived_seeds_differ_by_path() {
        assert_ne!(derive_seed(1, &[0, 1]), derive_seed(1, &[1, 0]));
        assert_ne!(derive_seed(1, &[0]), derive_seed(2, &[0]));
        assert_eq!(derive_seed(3, &[4, 5]), derive_seed(3, &[4, 5]));
    }
}

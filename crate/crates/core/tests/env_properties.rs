use delaycomp::env::{
    collect_trajectories, env_reset, env_step, EnvKind, EnvSpec, WorldState, STATE_DIM,
};
use proptest::prelude::*;

const KINDS: [EnvKind; 3] = [EnvKind::DoubleIntegratorRendezvous, EnvKind::UnicyclePursuit, EnvKind::SpreadLite];

fn spec(kind: EnvKind, n_agents: usize, seed: u64) -> EnvSpec {
    EnvSpec { kind, n_agents, dt: 0.1, episode_len: 200, obs_noise_frac: 0.0, seed }
}

#[test]
fn a_thousand_resets_respect_separation_and_arena() {
    for kind in KINDS {
        for n in [2, 3, 6] {
            for seed in 0..1000 {
                let w = env_reset(&spec(kind, n, seed)).unwrap();
                let arena = kind.arena();
                for (i, a) in w.agents.iter().enumerate() {
                    assert!(a[0].abs() <= arena && a[1].abs() <= arena, "{kind:?} seed {seed} agent {i}");
                    for b in &w.agents[i + 1..] {
                        let d = (a[0] - b[0]).hypot(a[1] - b[1]);
                        assert!(d >= kind.min_spawn_separation(), "{kind:?} n {n} seed {seed}: {d}");
                    }
                }
            }
        }
    }
}

#[test]
fn double_integrator_dataset_satisfies_the_position_identity() {
    let s = spec(EnvKind::DoubleIntegratorRendezvous, 3, 17);
    let ds = collect_trajectories(&s, 20).unwrap();
    assert_eq!(ds.episodes.len(), 60);
    let mut checked = 0;
    for ep in &ds.episodes {
        assert_eq!(ep.len(), 200);
        for t in 0..ep.len() - 1 {
            let (x, y) = (ep.state(t), ep.state(t + 1));
            for k in 0..2 {
                assert!((y[k] - x[k] - x[k + 2] * s.dt).abs() <= 1e-12, "t {t} k {k}");
                checked += 1;
            }
        }
    }
    assert_eq!(checked, 60 * 199 * 2);
}

fn at_goal(kind: EnvKind, n: usize) -> WorldState {
    let mut w = env_reset(&spec(kind, n, 3)).unwrap();
    match kind {
        EnvKind::DoubleIntegratorRendezvous => w.agents.iter_mut().for_each(|a| *a = [0.25, -0.125, 0.0, 0.0]),
        EnvKind::SpreadLite => {
            for (a, l) in w.agents.iter_mut().zip(w.landmarks.clone()) {
                *a = [l[0], l[1], 0.0, 0.0];
            }
        }
        EnvKind::UnicyclePursuit => {
            let e = w.agents[0];
            for i in 1..n {
                let o = WorldState::slot_offset(n, i);
                w.agents[i][0] = e[0] + o[0];
                w.agents[i][1] = e[1] + o[1];
            }
        }
    }
    w
}

#[test]
fn reward_is_zero_at_the_goal_and_negative_on_a_grid_around_it() {
    for kind in KINDS {
        let goal = at_goal(kind, 3);
        assert_eq!(goal.reward(), 0.0, "{kind:?}");
        // move one agent to every grid point; the evader (agent 0 in pursuit) defines the goal
        let mover = if kind == EnvKind::UnicyclePursuit { 1 } else { 0 };
        for gx in -10..=10 {
            for gy in -10..=10 {
                if gx == 0 && gy == 0 {
                    continue;
                }
                let mut w = goal.clone();
                w.agents[mover][0] += 0.1 * gx as f64;
                w.agents[mover][1] += 0.1 * gy as f64;
                assert!(w.reward() < 0.0, "{kind:?} at ({gx}, {gy})");
            }
        }
    }
}

proptest! {
    #[test]
    fn step_is_a_pure_function(
        kind_ix in 0usize..3,
        seed in any::<u64>(),
        actions in prop::collection::vec((-5.0f64..5.0, -5.0f64..5.0), 3),
    ) {
        let s = spec(KINDS[kind_ix], 3, seed);
        let w = env_reset(&s).unwrap();
        let acts: Vec<[f64; 2]> = actions.iter().map(|&(a, b)| [a, b]).collect();
        let first = env_step(&s, &w, &acts).unwrap();
        let second = env_step(&s, &w, &acts).unwrap();
        prop_assert_eq!(&first, &second);
        for a in &first.0.agents {
            prop_assert!(a.iter().all(|v| v.is_finite()));
            prop_assert_eq!(a.len(), STATE_DIM);
        }
    }
}

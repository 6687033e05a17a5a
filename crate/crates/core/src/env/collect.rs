use super::{derive_seed, env_reset, env_step, Action, EnvSpec, ScriptedPolicy, WorldState, STATE_DIM};
use crate::error::{Error, Result};
use crate::gru::{Episode, EpisodeTag, TrajectoryDataset};

fn exact_feature(world: &WorldState, agent: usize) -> Vec<f64> {
    let mut f = world.local_obs(agent).to_vec();
    for j in (0..world.agents.len()).filter(|&j| j != agent) {
        f.extend(world.payload(j));
    }
    f
}

/// Runs the scripted team with exact, instantaneous communication and records every agent's
/// payload sequence as one episode. Each sequence holds `episode_len` samples.
///
/// Episode `e` uses the world seed `derive_seed(spec.seed, &[e])`.
pub fn collect_trajectories(spec: &EnvSpec, n_episodes: usize) -> Result<TrajectoryDataset> {
    spec.validate()?;
    if spec.obs_noise_frac != 0.0 {
        return Err(Error::config("trajectory collection requires obs_noise_frac = 0"));
    }
    let mut episodes = Vec::with_capacity(n_episodes * spec.n_agents);
    for e in 0..n_episodes {
        let ep_spec = EnvSpec {
            seed: derive_seed(spec.seed, &[e as u64]),
            ..spec.clone()
        };
        let mut world = env_reset(&ep_spec)?;
        let policy = ScriptedPolicy::for_world(&world);
        let mut seqs: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(spec.episode_len); spec.n_agents];
        for t in 0..spec.episode_len {
            for (i, seq) in seqs.iter_mut().enumerate() {
                seq.push(world.payload(i).to_vec());
            }
            if t + 1 == spec.episode_len {
                break;
            }
            let actions: Vec<Action> = (0..spec.n_agents)
                .map(|i| policy.act(i, &exact_feature(&world, i)))
                .collect::<Result<_>>()?;
            world = env_step(&ep_spec, &world, &actions)?.0;
        }
        episodes.extend(seqs.into_iter().map(|s| Episode::new(s, EpisodeTag::ConvergedPolicy)));
    }
    TrajectoryDataset::new(STATE_DIM, spec.dt, episodes)
}

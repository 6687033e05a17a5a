use super::{wrap_angle, Action, EnvKind, WorldState, EVADER_RADIUS, EVADER_SPEED, PURSUER_MAX_SPEED, STATE_DIM};
use crate::error::{Error, Result};
use crate::filter::BeliefLayout;

const RENDEZVOUS_KP: f64 = 1.0;
const RENDEZVOUS_KD: f64 = 2.0;
const SPREAD_KP: f64 = 1.5;
const SPREAD_KD: f64 = 2.0;
const SPREAD_REPULSION: f64 = 4.0;
const SPREAD_REPULSION_RADIUS: f64 = 0.3;
const PURSUIT_KP: f64 = 3.0;
const PURSUIT_HEADING_GAIN: f64 = 8.0;
const PURSUIT_SPEED_GAIN: f64 = 4.0;

/// Fixed feedback controllers that read peers only through the belief feature.
///
/// Feature layout for agent `i`: its own local observation, then one payload-shaped block per
/// other agent in ascending id order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScriptedPolicy {
    kind: EnvKind,
    n_agents: usize,
    landmarks: Vec<[f64; 2]>,
}

impl ScriptedPolicy {
    /// Takes only the task-static parts of the world (agent count, landmarks).
    pub fn for_world(world: &WorldState) -> Self {
        ScriptedPolicy {
            kind: world.kind,
            n_agents: world.agents.len(),
            landmarks: world.landmarks.clone(),
        }
    }

    pub fn layout(&self) -> BeliefLayout {
        BeliefLayout {
            local_dim: STATE_DIM,
            neighbor_dim: STATE_DIM,
            n_neighbors: self.n_agents - 1,
        }
    }

    /// Position in the feature of agent `agent`'s view of `peer`.
    pub fn peer_slot(agent: usize, peer: usize) -> usize {
        debug_assert_ne!(agent, peer);
        if peer < agent {
            peer
        } else {
            peer - 1
        }
    }

    pub fn act(&self, agent: usize, feature: &[f64]) -> Result<Action> {
        let layout = self.layout();
        if agent >= self.n_agents || feature.len() != layout.len() {
            return Err(Error::contract(format!(
                "policy for agent {agent} expects a feature of length {}, got {}",
                layout.len(),
                feature.len()
            )));
        }
        let own = &feature[..STATE_DIM];
        let peer = |j: usize| {
            let o = layout.neighbor_offset(Self::peer_slot(agent, j));
            &feature[o..o + STATE_DIM]
        };
        let a = match self.kind {
            EnvKind::DoubleIntegratorRendezvous => {
                let n = self.n_agents as f64;
                let mut c = [own[0], own[1], own[2], own[3]];
                for j in (0..self.n_agents).filter(|&j| j != agent) {
                    for (ck, pk) in c.iter_mut().zip(peer(j)) {
                        *ck += pk;
                    }
                }
                let c = c.map(|v| v / n);
                [
                    RENDEZVOUS_KP * (c[0] - own[0]) + RENDEZVOUS_KD * (c[2] - own[2]),
                    RENDEZVOUS_KP * (c[1] - own[1]) + RENDEZVOUS_KD * (c[3] - own[3]),
                ]
            }
            EnvKind::SpreadLite => {
                let goal = self.landmarks[agent];
                let mut a = [
                    SPREAD_KP * (goal[0] - own[0]) - SPREAD_KD * own[2],
                    SPREAD_KP * (goal[1] - own[1]) - SPREAD_KD * own[3],
                ];
                for j in (0..self.n_agents).filter(|&j| j != agent) {
                    let q = peer(j);
                    let (dx, dy) = (own[0] - q[0], own[1] - q[1]);
                    let d = dx.hypot(dy);
                    if d > 1e-9 && d < SPREAD_REPULSION_RADIUS {
                        let push = SPREAD_REPULSION * (SPREAD_REPULSION_RADIUS - d) / d;
                        a[0] += push * dx;
                        a[1] += push * dy;
                    }
                }
                a
            }
            EnvKind::UnicyclePursuit if agent == 0 => {
                // evader: hold speed and circle
                [PURSUIT_SPEED_GAIN * (EVADER_SPEED - own[3]), own[3] / EVADER_RADIUS]
            }
            EnvKind::UnicyclePursuit => {
                let e = peer(0);
                let o = WorldState::slot_offset(self.n_agents, agent);
                let want = [
                    e[2] + PURSUIT_KP * (e[0] + o[0] - own[0]),
                    e[3] + PURSUIT_KP * (e[1] + o[1] - own[1]),
                ];
                let speed = want[0].hypot(want[1]).min(PURSUER_MAX_SPEED);
                let turn = if speed > 1e-9 {
                    PURSUIT_HEADING_GAIN * wrap_angle(want[1].atan2(want[0]) - own[2])
                } else {
                    0.0
                };
                [PURSUIT_SPEED_GAIN * (speed - own[3]), turn]
            }
        };
        let bound = self.kind.action_bound();
        Ok([a[0].clamp(-bound[0], bound[0]), a[1].clamp(-bound[1], bound[1])])
    }
}

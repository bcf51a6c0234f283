//! Two-state, two-action MDP with a known optimum, used to check that the
//! learner converges.
//!
//! From state 0, action 0 moves to state 1 with reward 0 and action 1 stays
//! with reward 0.3. From state 1, action 0 returns to state 0 with reward 1
//! and action 1 stays with reward 0.1. Alternating earns 0.5 per step, so
//! action 0 is optimal in both states for any discount above 0.6.

use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::action::ActionSpace;
use super::nets::{self, Observation};
use super::sac::{SacAgent, SacConfig, Transition};
use crate::nn::{MessageGraph, Tensor};
use crate::Result;

/// `(next state, reward)` for `(state, action)`.
pub const TRANSITIONS: [[(usize, f64); 2]; 2] = [[(1, 0.0), (0, 0.3)], [(0, 1.0), (1, 0.1)]];

/// Optimal values and actions by value iteration.
pub fn value_iteration(gamma: f64, tol: f64) -> ([f64; 2], [usize; 2]) {
    let mut v = [0.0; 2];
    loop {
        let mut next = [0.0; 2];
        let mut delta: f64 = 0.0;
        for s in 0..2 {
            next[s] = (0..2)
                .map(|a| {
                    let (s2, r) = TRANSITIONS[s][a];
                    r + gamma * v[s2]
                })
                .fold(f64::NEG_INFINITY, f64::max);
            delta = delta.max((next[s] - v[s]).abs());
        }
        v = next;
        if delta < tol {
            break;
        }
    }
    let mut best = [0; 2];
    for (s, b) in best.iter_mut().enumerate() {
        let q: Vec<f64> = (0..2)
            .map(|a| {
                let (s2, r) = TRANSITIONS[s][a];
                r + gamma * v[s2]
            })
            .collect();
        *b = if q[1] > q[0] { 1 } else { 0 };
    }
    (v, best)
}

/// Single-node observation with a one-hot state feature.
pub fn observation(state: usize) -> Observation {
    let mut f = Tensor::zeros(&[1, 2]);
    f.row_mut(0)[state] = 1.0;
    let graph = MessageGraph::new(1, &[], &Tensor::zeros(&[0, 1])).expect("no edges");
    Observation { features: f, graph }
}

/// Trains a fresh agent for `steps` environment steps from state 0.
pub fn train_toy(cfg: SacConfig, steps: usize, seed: u64) -> Result<SacAgent> {
    let mut init_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut agent = SacAgent::new(cfg, 2, 1, ActionSpace::new(2, 1)?, &mut init_rng)?;
    let obs = [Arc::new(observation(0)), Arc::new(observation(1))];
    let mut s = 0;
    for _ in 0..steps {
        let a = if agent.in_warmup() {
            agent.random_actions(1, &mut rng)
        } else {
            agent.select_action(&obs[s], &mut rng, false)?
        };
        let (s2, r) = TRANSITIONS[s][a[0]];
        agent.remember(Transition {
            state: Arc::clone(&obs[s]),
            actions: a,
            reward: r,
            next: Arc::clone(&obs[s2]),
        });
        agent.update(&mut rng)?;
        s = s2;
    }
    Ok(agent)
}

/// Policy probability of `action` in each state.
pub fn action_probabilities(agent: &SacAgent, action: usize) -> Result<[f64; 2]> {
    let mut out = [0.0; 2];
    for (s, o) in out.iter_mut().enumerate() {
        let (p, _) = nets::policy_distribution(&agent.logits(&observation(s))?);
        *o = p.get(0, action);
    }
    Ok(out)
}

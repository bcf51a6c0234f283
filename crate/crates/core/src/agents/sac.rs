use std::sync::Arc;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::action::ActionSpace;
use super::nets::{
    self, actor_loss, min_q, node_outputs, q_loss, state_values, v_loss, v_target, Batch, EncoderKind,
    NetShape, Observation,
};
use super::replay::ReplayBuffer;
use crate::env::{CacheEnv, SlotMetrics};
use crate::nn::{Adam, AdamConfig, MpnnConfig, ParamStore, Tensor};
use crate::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub alpha_ent: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    /// Transitions collected with uniformly random actions before learning.
    pub warmup_steps: usize,
    /// Chosen by the scheme rather than the config file.
    #[serde(skip)]
    pub encoder: EncoderKind,
    pub mpnn: MpnnConfig,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.95,
            tau: 0.005,
            alpha_ent: 0.05,
            lr: 3e-4,
            batch_size: 32,
            buffer_capacity: 10_000,
            warmup_steps: 500,
            encoder: EncoderKind::Mpnn,
            mpnn: MpnnConfig::default(),
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let validation = Error::validation;
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(validation("sac.gamma", "must lie in [0, 1)"));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(validation("sac.tau", "must lie in (0, 1]"));
        }
        if !(self.alpha_ent >= 0.0 && self.alpha_ent.is_finite()) {
            return Err(validation("sac.alpha_ent", "must be >= 0"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(validation("sac.lr", "must be >= 0"));
        }
        if self.batch_size == 0 {
            return Err(validation("sac.batch_size", "must be >= 1"));
        }
        if self.buffer_capacity < self.batch_size {
            return Err(validation("sac.buffer_capacity", "must hold at least one minibatch"));
        }
        self.mpnn.validate()
    }

    fn net_shape(&self, node_dim: usize, edge_dim: usize) -> NetShape {
        NetShape {
            encoder: self.encoder,
            node_dim,
            edge_dim,
            hidden: self.mpnn.hidden_dim,
            layers: self.mpnn.layers,
        }
    }
}

/// One stored `(s, a, r, s')`; `actions` holds one index per satellite.
#[derive(Debug, Clone)]
pub struct Transition {
    pub state: Arc<Observation>,
    pub actions: Vec<usize>,
    pub reward: f64,
    pub next: Arc<Observation>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct UpdateStats {
    pub q1_loss: f64,
    pub q2_loss: f64,
    pub v_loss: f64,
    pub actor_loss: f64,
    /// Mean per-node policy entropy on the minibatch.
    pub entropy: f64,
}

#[derive(Debug, Clone)]
struct Optimizers {
    policy: Adam,
    q1: Adam,
    q2: Adam,
    value: Adam,
}

/// Discrete soft actor-critic with twin Q-critics, a V-critic and a target
/// V-critic, all factorized per satellite.
#[derive(Debug, Clone)]
pub struct SacAgent {
    cfg: SacConfig,
    shape: NetShape,
    space: ActionSpace,
    params: ParamStore,
    opt: Optimizers,
    buffer: ReplayBuffer<Transition>,
    transitions_seen: u64,
    updates: u64,
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(
        cfg: SacConfig,
        node_dim: usize,
        edge_dim: usize,
        space: ActionSpace,
        rng: &mut R,
    ) -> Result<Self> {
        cfg.validate()?;
        let shape = cfg.net_shape(node_dim, edge_dim);
        let a = space.len();
        let policy = shape.init(a, rng);
        let q1 = shape.init(a, rng);
        let q2 = shape.init(a, rng);
        let value = shape.init(1, rng);
        let params = ParamStore {
            policy,
            q1,
            q2,
            value_target: value.clone(),
            value,
        };
        Self::with_params(cfg, node_dim, edge_dim, space, params)
    }

    /// Wraps existing parameters, e.g. a loaded checkpoint.
    pub fn with_params(
        cfg: SacConfig,
        node_dim: usize,
        edge_dim: usize,
        space: ActionSpace,
        params: ParamStore,
    ) -> Result<Self> {
        cfg.validate()?;
        let shape = cfg.net_shape(node_dim, edge_dim);
        let mut rng = rand::rngs::mock::StepRng::new(0, 0);
        let a = space.len();
        let expect = [
            ("policy", &params.policy, a),
            ("q1", &params.q1, a),
            ("q2", &params.q2, a),
            ("value", &params.value, 1),
        ];
        for (name, net, out) in expect {
            crate::nn::check_same_shapes(&shape.init(out, &mut rng), net)
                .map_err(|e| Error::Incompatible(format!("{name} network: {e}")))?;
        }
        params.check_target_shapes()?;
        let adam = Adam::new(AdamConfig::with_lr(cfg.lr));
        Ok(Self {
            buffer: ReplayBuffer::new(cfg.buffer_capacity)?,
            opt: Optimizers {
                policy: adam.clone(),
                q1: adam.clone(),
                q2: adam.clone(),
                value: adam,
            },
            cfg,
            shape,
            space,
            params,
            transitions_seen: 0,
            updates: 0,
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.cfg
    }

    pub fn shape(&self) -> &NetShape {
        &self.shape
    }

    pub fn space(&self) -> &ActionSpace {
        &self.space
    }

    pub fn params(&self) -> &ParamStore {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.params
    }

    pub fn buffer_len(&self) -> usize {
        self.buffer.len()
    }

    pub fn updates(&self) -> u64 {
        self.updates
    }

    /// True while actions should still be drawn uniformly at random.
    pub fn in_warmup(&self) -> bool {
        self.transitions_seen < self.cfg.warmup_steps as u64
    }

    pub fn random_actions<R: Rng + ?Sized>(&self, num_nodes: usize, rng: &mut R) -> Vec<usize> {
        (0..num_nodes).map(|_| rng.gen_range(0..self.space.len())).collect()
    }

    /// Per-node policy logits for one observation.
    pub fn logits(&self, obs: &Observation) -> Result<Tensor> {
        node_outputs(&self.shape, &self.params.policy, &Batch::single(obs)?)
    }

    /// One action index per satellite: sampled from each node's categorical,
    /// or its argmax (lowest index on ties) when `greedy`.
    pub fn select_action<R: Rng + ?Sized>(&self, obs: &Observation, rng: &mut R, greedy: bool) -> Result<Vec<usize>> {
        let logits = self.logits(obs)?;
        if greedy {
            return Ok((0..logits.rows()).map(|r| argmax(logits.row(r))).collect());
        }
        let probs = nets::policy_distribution(&logits).0;
        Ok((0..probs.rows()).map(|r| sample_categorical(probs.row(r), rng)).collect())
    }

    pub fn remember(&mut self, t: Transition) {
        self.transitions_seen += 1;
        self.buffer.push(t);
    }

    /// One optimization phase on a sampled minibatch. Returns `None` while
    /// warming up or when too few transitions are stored.
    pub fn update<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Result<Option<UpdateStats>> {
        if self.in_warmup() || self.buffer.len() < self.cfg.batch_size {
            return Ok(None);
        }
        let sample = self.buffer.sample(self.cfg.batch_size, rng)?;
        let states: Vec<&Observation> = sample.iter().map(|t| t.state.as_ref()).collect();
        let nexts: Vec<&Observation> = sample.iter().map(|t| t.next.as_ref()).collect();
        let actions: Vec<usize> = sample.iter().flat_map(|t| t.actions.iter().copied()).collect();
        let rewards: Vec<f64> = sample.iter().map(|t| t.reward).collect();
        let batch = Batch::new(&states)?;
        let next_batch = Batch::new(&nexts)?;
        let stats = self.update_on(&batch, &next_batch, &actions, &rewards)?;
        Ok(Some(stats))
    }

    /// The update itself, on an explicit minibatch.
    pub fn update_on(
        &mut self,
        batch: &Batch,
        next_batch: &Batch,
        actions: &[usize],
        rewards: &[f64],
    ) -> Result<UpdateStats> {
        let k = self.updates;
        let shape = self.shape;
        let (gamma, alpha, tau) = (self.cfg.gamma, self.cfg.alpha_ent, self.cfg.tau);

        // Critic targets come from the target V-network only.
        let v_next = state_values(&shape, &self.params.value_target, next_batch)?;
        let y_q: Vec<f64> = rewards
            .iter()
            .zip(&v_next)
            .map(|(&r, &v)| nets::q_target(r, v, gamma))
            .collect();

        let l1 = q_loss(&shape, &self.params.q1, batch, actions, &y_q)?;
        finite("q1", l1.loss, k)?;
        self.opt.q1.step(&mut self.params.q1, &l1.grads)?;
        let l2 = q_loss(&shape, &self.params.q2, batch, actions, &y_q)?;
        finite("q2", l2.loss, k)?;
        self.opt.q2.step(&mut self.params.q2, &l2.grads)?;

        let q1 = node_outputs(&shape, &self.params.q1, batch)?;
        let q2 = node_outputs(&shape, &self.params.q2, batch)?;
        let mq = min_q(&q1, &q2)?;
        let actor = actor_loss(&shape, &self.params.policy, batch, &mq, alpha)?;
        finite("actor", actor.loss, k)?;

        let y_v = v_target(
            &actor.probs,
            &actor.log_probs,
            &mq,
            &batch.graph_of_node,
            batch.num_graphs,
            alpha,
        )?;
        let lv = v_loss(&shape, &self.params.value, batch, &y_v)?;
        finite("value", lv.loss, k)?;
        self.opt.value.step(&mut self.params.value, &lv.grads)?;
        self.opt.policy.step(&mut self.params.policy, &actor.grads)?;
        nets::soft_update(&self.params.value, &mut self.params.value_target, tau)?;

        for (name, net) in self.params.networks() {
            if !net.values().all(Tensor::all_finite) {
                return Err(Error::Divergence(format!("{name} parameters not finite after update {k}")));
            }
        }
        self.updates += 1;
        let entropy = -actor
            .probs
            .data()
            .iter()
            .zip(actor.log_probs.data())
            .map(|(p, lp)| if *p > 0.0 { p * lp } else { 0.0 })
            .sum::<f64>()
            / actor.probs.rows() as f64;
        Ok(UpdateStats {
            q1_loss: l1.loss,
            q2_loss: l2.loss,
            v_loss: lv.loss,
            actor_loss: actor.loss,
            entropy,
        })
    }
}

fn finite(what: &str, loss: f64, update: u64) -> Result<()> {
    if loss.is_finite() {
        Ok(())
    } else {
        Err(Error::Divergence(format!("{what} loss is {loss} at update {update}")))
    }
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Per-slot training callback: `(episode, slot, metrics)`.
pub type SlotHook<'a> = dyn FnMut(usize, usize, &SlotMetrics) -> Result<()> + 'a;

/// Trains on `env` for `episodes` episodes of the environment's length.
/// Episode `e` starts at `e * T * slot` seconds with an empty cache. Returns
/// the mean per-slot reward of every episode.
pub fn train<R: Rng + ?Sized>(
    env: &mut CacheEnv,
    agent: &mut SacAgent,
    episodes: usize,
    rng: &mut R,
    on_slot: &mut SlotHook<'_>,
) -> Result<Vec<f64>> {
    let slots = env.config().slots_per_episode;
    let episode_len_s = slots as f64 * env.config().slot_seconds;
    let mut trace = Vec::with_capacity(episodes);
    for e in 0..episodes {
        env.reset(e as f64 * episode_len_s)?;
        let mut obs = Arc::new(Observation::from_state(env.state())?);
        let mut total = 0.0;
        for slot in 0..slots {
            let actions = if agent.in_warmup() {
                agent.random_actions(obs.num_nodes(), rng)
            } else {
                agent.select_action(&obs, rng, false)?
            };
            let psi = agent.space().to_cache_matrix(&actions)?;
            let step = env.step(&psi)?;
            let next = Arc::new(Observation::from_state(env.state())?);
            agent.remember(Transition {
                state: obs,
                actions,
                reward: step.reward,
                next: Arc::clone(&next),
            });
            agent.update(rng)?;
            on_slot(e, slot, &step.outcome.metrics)?;
            total += step.reward;
            obs = next;
        }
        trace.push(total / slots as f64);
    }
    Ok(trace)
}

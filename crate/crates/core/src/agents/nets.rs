//! Encoders, heads and the soft actor-critic losses on batched graphs.
//!
//! Every network is `encoder -> dense head` applied per node. The policy and
//! Q-critics emit one row of action scores per satellite; the V-critic emits
//! one scalar per satellite and sums them into a state value, matching the
//! per-satellite factorization of the joint action.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::env::EnvState;
use crate::nn::{
    dense, glorot, init_mpnn_layer, mpnn_layer, softmax_rows, BoundParams, MessageGraph, NetParams,
    Tape, Tensor, Var,
};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    /// Message passing over the ISL graph.
    Mpnn,
    /// Per-node MLP on the node's own features; ignores the topology.
    Flat,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetShape {
    pub encoder: EncoderKind,
    pub node_dim: usize,
    pub edge_dim: usize,
    pub hidden: usize,
    pub layers: usize,
}

const HEAD_W: &str = "head.weight";
const HEAD_B: &str = "head.bias";
const HEAD_INIT: f64 = 3e-3;

impl NetShape {
    /// Fresh parameters for a network with `out` outputs per node.
    pub fn init<R: Rng + ?Sized>(&self, out: usize, rng: &mut R) -> NetParams {
        let mut p = NetParams::new();
        for l in 0..self.layers {
            let inp = if l == 0 { self.node_dim } else { self.hidden };
            match self.encoder {
                EncoderKind::Mpnn => {
                    init_mpnn_layer(&mut p, "enc", l, inp, self.edge_dim, self.hidden, rng)
                }
                EncoderKind::Flat => {
                    p.insert(format!("enc.fc{l}.weight"), glorot(inp, self.hidden, inp, rng));
                    p.insert(format!("enc.fc{l}.bias"), Tensor::zeros(&[1, self.hidden]));
                }
            }
        }
        // Small output weights: near-uniform initial policy, near-zero values.
        let h = self.embed_dim();
        let w = (0..h * out).map(|_| rng.gen_range(-HEAD_INIT..HEAD_INIT)).collect();
        p.insert(HEAD_W.into(), Tensor::from_vec(&[h, out], w).expect("sized"));
        p.insert(HEAD_B.into(), Tensor::zeros(&[1, out]));
        p
    }

    pub fn embed_dim(&self) -> usize {
        if self.layers == 0 {
            self.node_dim
        } else {
            self.hidden
        }
    }
}

/// Network input for one slot.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub features: Tensor,
    pub graph: MessageGraph,
}

impl Observation {
    pub fn from_state(state: &EnvState) -> Result<Self> {
        Ok(Self {
            features: state.graph.node_features.clone(),
            graph: MessageGraph::from_snapshot(&state.graph)?,
        })
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }
}

/// Block-diagonal union of several observations.
#[derive(Debug, Clone)]
pub struct Batch {
    pub features: Tensor,
    pub graph: MessageGraph,
    /// Index of the observation each node belongs to.
    pub graph_of_node: Vec<usize>,
    pub num_graphs: usize,
}

impl Batch {
    pub fn new(obs: &[&Observation]) -> Result<Self> {
        if obs.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        let cols = obs[0].features.cols();
        let edge_cols = obs[0].graph.edge_features.cols();
        let total: usize = obs.iter().map(|o| o.num_nodes()).sum();
        let mut feats = Vec::with_capacity(total * cols);
        let mut recv = Vec::new();
        let mut send = Vec::new();
        let mut ef = Vec::new();
        let mut graph_of_node = Vec::with_capacity(total);
        let mut offset = 0;
        for (g, o) in obs.iter().enumerate() {
            if o.features.cols() != cols || o.graph.edge_features.cols() != edge_cols {
                return Err(Error::Shape("observations differ in feature width".into()));
            }
            feats.extend_from_slice(o.features.data());
            recv.extend(o.graph.recv.iter().map(|r| r + offset));
            send.extend(o.graph.send.iter().map(|s| s + offset));
            ef.extend_from_slice(o.graph.edge_features.data());
            graph_of_node.extend(std::iter::repeat(g).take(o.num_nodes()));
            offset += o.num_nodes();
        }
        let messages = recv.len();
        Ok(Self {
            features: Tensor::from_vec(&[total, cols], feats)?,
            graph: MessageGraph {
                num_nodes: total,
                recv,
                send,
                edge_features: Tensor::from_vec(&[messages, edge_cols], ef)?,
            },
            graph_of_node,
            num_graphs: obs.len(),
        })
    }

    pub fn single(obs: &Observation) -> Result<Self> {
        Self::new(&[obs])
    }

    pub fn num_nodes(&self) -> usize {
        self.features.rows()
    }
}

fn param(bound: &BoundParams, name: &str) -> Result<Var> {
    bound
        .get(name)
        .copied()
        .ok_or_else(|| Error::Shape(format!("missing parameter {name}")))
}

/// Per-node embeddings on the tape.
pub fn embed(tape: &mut Tape, shape: &NetShape, bound: &BoundParams, batch: &Batch) -> Result<Var> {
    let mut h = tape.constant(batch.features.clone());
    match shape.encoder {
        EncoderKind::Mpnn => {
            let e = tape.constant(batch.graph.edge_features.clone());
            for l in 0..shape.layers {
                h = mpnn_layer(tape, h, e, &batch.graph, bound, "enc", l)?;
            }
        }
        EncoderKind::Flat => {
            for l in 0..shape.layers {
                let w = param(bound, &format!("enc.fc{l}.weight"))?;
                let b = param(bound, &format!("enc.fc{l}.bias"))?;
                let z = dense(tape, h, w, b)?;
                h = tape.relu(z);
            }
        }
    }
    Ok(h)
}

/// Per-node head outputs on the tape.
pub fn node_head(tape: &mut Tape, shape: &NetShape, bound: &BoundParams, batch: &Batch) -> Result<Var> {
    let h = embed(tape, shape, bound, batch)?;
    let w = param(bound, HEAD_W)?;
    let b = param(bound, HEAD_B)?;
    dense(tape, h, w, b)
}

/// Per-node head outputs without recording gradients.
pub fn node_outputs(shape: &NetShape, params: &NetParams, batch: &Batch) -> Result<Tensor> {
    let mut tape = Tape::new();
    let bound = bind_constants(&mut tape, params);
    let out = node_head(&mut tape, shape, &bound, batch)?;
    Ok(tape.value(out).clone())
}

fn bind_constants(tape: &mut Tape, params: &NetParams) -> BoundParams {
    params
        .iter()
        .map(|(k, t)| (k.clone(), tape.constant(t.clone())))
        .collect()
}

/// Global (mean over nodes) and per-node embeddings of one observation.
pub fn encode_state(shape: &NetShape, params: &NetParams, obs: &Observation) -> Result<(Vec<f64>, Tensor)> {
    let batch = Batch::single(obs)?;
    let mut tape = Tape::new();
    let bound = bind_constants(&mut tape, params);
    let h = embed(&mut tape, shape, &bound, &batch)?;
    let nodes = tape.value(h).clone();
    let mut global = vec![0.0; nodes.cols()];
    for r in 0..nodes.rows() {
        for (g, v) in global.iter_mut().zip(nodes.row(r)) {
            *g += v;
        }
    }
    let n = nodes.rows().max(1) as f64;
    global.iter_mut().for_each(|g| *g /= n);
    Ok((global, nodes))
}

/// State values `V(s) = sum_n v_n(s)` for every graph of the batch.
pub fn state_values(shape: &NetShape, params: &NetParams, batch: &Batch) -> Result<Vec<f64>> {
    let v = node_outputs(shape, params, batch)?;
    if v.cols() != 1 {
        return Err(Error::Shape("value network must emit one output per node".into()));
    }
    let mut out = vec![0.0; batch.num_graphs];
    for (node, &g) in batch.graph_of_node.iter().enumerate() {
        out[g] += v.get(node, 0);
    }
    Ok(out)
}

/// `y = r + gamma * V'(s')`.
pub fn q_target(reward: f64, next_value: f64, gamma: f64) -> f64 {
    reward + gamma * next_value
}

/// Loss value together with gradients keyed by parameter name.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub loss: f64,
    pub grads: BTreeMap<String, Tensor>,
}

fn check_targets(batch: &Batch, targets: &[f64]) -> Result<()> {
    if targets.len() != batch.num_graphs {
        return Err(Error::Shape(format!(
            "{} targets for {} transitions",
            targets.len(),
            batch.num_graphs
        )));
    }
    Ok(())
}

fn squared_error(tape: &mut Tape, pred: Var, targets: &[f64]) -> Result<Var> {
    let y = tape.constant(Tensor::from_vec(&[targets.len(), 1], targets.to_vec())?);
    let d = tape.sub(pred, y)?;
    let sq = tape.square(d);
    Ok(tape.mean(sq))
}

/// Mean squared error between `Q(s, a) = sum_n Q_n(s, a_n)` and `targets`.
/// `actions` holds one action index per node of the batch.
pub fn q_loss(
    shape: &NetShape,
    params: &NetParams,
    batch: &Batch,
    actions: &[usize],
    targets: &[f64],
) -> Result<LossGrad> {
    check_targets(batch, targets)?;
    let mut tape = Tape::new();
    let bound = tape.bind(params);
    let q = node_head(&mut tape, shape, &bound, batch)?;
    let chosen = tape.select_per_row(q, actions)?;
    let per_graph = tape.scatter_add_rows(chosen, &batch.graph_of_node, batch.num_graphs)?;
    let loss = squared_error(&mut tape, per_graph, targets)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?.collect(&bound);
    Ok(LossGrad { loss: value, grads })
}

/// Mean squared error between `V(s)` and `targets`.
pub fn v_loss(shape: &NetShape, params: &NetParams, batch: &Batch, targets: &[f64]) -> Result<LossGrad> {
    check_targets(batch, targets)?;
    let mut tape = Tape::new();
    let bound = tape.bind(params);
    let v = node_head(&mut tape, shape, &bound, batch)?;
    let per_graph = tape.scatter_add_rows(v, &batch.graph_of_node, batch.num_graphs)?;
    let loss = squared_error(&mut tape, per_graph, targets)?;
    let value = tape.value(loss).item();
    let grads = tape.backward(loss)?.collect(&bound);
    Ok(LossGrad { loss: value, grads })
}

/// Actor loss and the policy it was evaluated at.
#[derive(Debug, Clone)]
pub struct ActorLoss {
    pub loss: f64,
    pub grads: BTreeMap<String, Tensor>,
    pub probs: Tensor,
    pub log_probs: Tensor,
}

/// `J = mean_b sum_n sum_a pi_n(a) (alpha log pi_n(a) - minQ_n(a))`, exact over
/// each node's categorical. `min_q` is held constant.
pub fn actor_loss(
    shape: &NetShape,
    params: &NetParams,
    batch: &Batch,
    min_q: &Tensor,
    alpha: f64,
) -> Result<ActorLoss> {
    let mut tape = Tape::new();
    let bound = tape.bind(params);
    let logits = node_head(&mut tape, shape, &bound, batch)?;
    let p = tape.softmax(logits);
    let lp = tape.log_softmax(logits);
    let q = tape.constant(min_q.clone());
    let ent = tape.scale(lp, alpha);
    let inner = tape.sub(ent, q)?;
    let weighted = tape.mul(p, inner)?;
    let total = tape.sum(weighted);
    let loss = tape.scale(total, 1.0 / batch.num_graphs as f64);
    let value = tape.value(loss).item();
    let probs = tape.value(p).clone();
    let log_probs = tape.value(lp).clone();
    let grads = tape.backward(loss)?.collect(&bound);
    Ok(ActorLoss {
        loss: value,
        grads,
        probs,
        log_probs,
    })
}

/// Elementwise minimum of the two critics' per-node action values.
pub fn min_q(q1: &Tensor, q2: &Tensor) -> Result<Tensor> {
    if !q1.same_shape(q2) {
        return Err(Error::Shape("critic outputs differ in shape".into()));
    }
    let data = q1.data().iter().zip(q2.data()).map(|(a, b)| a.min(*b)).collect();
    Tensor::from_vec(q1.shape(), data)
}

/// `y^V(s) = sum_n sum_a pi_n(a) (minQ_n(a) - alpha log pi_n(a))` per graph.
pub fn v_target(
    probs: &Tensor,
    log_probs: &Tensor,
    min_q: &Tensor,
    graph_of_node: &[usize],
    num_graphs: usize,
    alpha: f64,
) -> Result<Vec<f64>> {
    if !probs.same_shape(log_probs) || !probs.same_shape(min_q) || probs.rows() != graph_of_node.len() {
        return Err(Error::Shape("policy and critic outputs disagree".into()));
    }
    let mut out = vec![0.0; num_graphs];
    for (node, &g) in graph_of_node.iter().enumerate() {
        let mut s = 0.0;
        for a in 0..probs.cols() {
            let p = probs.get(node, a);
            if p > 0.0 {
                s += p * (min_q.get(node, a) - alpha * log_probs.get(node, a));
            }
        }
        out[g] += s;
    }
    Ok(out)
}

/// `target <- tau * online + (1 - tau) * target`.
pub fn soft_update(online: &NetParams, target: &mut NetParams, tau: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&tau) {
        return Err(Error::Domain(format!("tau must lie in [0, 1], got {tau}")));
    }
    crate::nn::check_same_shapes(online, target)?;
    for (k, t) in target.iter_mut() {
        let src = &online[k];
        if tau == 1.0 {
            t.data_mut().copy_from_slice(src.data());
            continue;
        }
        for (d, s) in t.data_mut().iter_mut().zip(src.data()) {
            *d = tau * s + (1.0 - tau) * *d;
        }
    }
    Ok(())
}

/// Row-wise probabilities and log-probabilities of logits.
pub fn policy_distribution(logits: &Tensor) -> (Tensor, Tensor) {
    let probs = softmax_rows(logits);
    let mut lp = logits.clone();
    for r in 0..lp.rows() {
        let row = lp.row_mut(r);
        let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
        row.iter_mut().for_each(|v| *v -= lse);
    }
    (probs, lp)
}

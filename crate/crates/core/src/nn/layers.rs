//! Dense layers and edge-aware message passing.

use rand::Rng;

use super::tape::{softmax_rows, BoundParams, Tape, Var};
use super::tensor::Tensor;
use super::NetParams;
use crate::netgraph::GraphSnapshot;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpnnConfig {
    pub layers: usize,
    pub hidden_dim: usize,
}

impl Default for MpnnConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden_dim: 32,
        }
    }
}

impl MpnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 {
            return Err(Error::validation("sac.mpnn.layers", "must be >= 1"));
        }
        if self.hidden_dim < 1 {
            return Err(Error::validation("sac.mpnn.hidden_dim", "must be >= 1"));
        }
        Ok(())
    }
}

/// `x w + b`.
pub fn dense(tape: &mut Tape, x: Var, weight: Var, bias: Var) -> Result<Var> {
    let xw = tape.matmul(x, weight)?;
    tape.add_bias(xw, bias)
}

/// Directed message list of one graph or a block-diagonal batch of graphs.
/// Every undirected edge contributes one message in each direction.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageGraph {
    pub num_nodes: usize,
    /// Node that receives message `k`.
    pub recv: Vec<usize>,
    /// Node that sends message `k`.
    pub send: Vec<usize>,
    /// Edge feature rows, one per message.
    pub edge_features: Tensor,
}

impl MessageGraph {
    pub fn new(num_nodes: usize, edges: &[(usize, usize)], edge_features: &Tensor) -> Result<Self> {
        if edge_features.rows() != edges.len() && !edges.is_empty() {
            return Err(Error::Shape("one edge feature row per edge required".into()));
        }
        let width = edge_features.cols();
        let mut recv = Vec::with_capacity(2 * edges.len());
        let mut send = Vec::with_capacity(2 * edges.len());
        let mut data = Vec::with_capacity(2 * edges.len() * width);
        for (k, &(a, b)) in edges.iter().enumerate() {
            if a >= num_nodes || b >= num_nodes {
                return Err(Error::Shape(format!("edge ({a}, {b}) outside {num_nodes} nodes")));
            }
            for (r, s) in [(a, b), (b, a)] {
                recv.push(r);
                send.push(s);
                data.extend_from_slice(edge_features.row(k));
            }
        }
        let edge_features = Tensor::from_vec(&[send.len(), width], data)?;
        Ok(Self {
            num_nodes,
            recv,
            send,
            edge_features,
        })
    }

    pub fn from_snapshot(g: &GraphSnapshot) -> Result<Self> {
        let edges: Vec<(usize, usize)> = g.edges.iter().map(|e| (e.a, e.b)).collect();
        Self::new(g.num_nodes(), &edges, &g.edge_features)
    }

    pub fn num_messages(&self) -> usize {
        self.send.len()
    }
}

/// Parameter names of message-passing layer `layer` under `prefix`.
pub fn mpnn_param_names(prefix: &str, layer: usize) -> [String; 4] {
    [
        format!("{prefix}.mp{layer}.w_self"),
        format!("{prefix}.mp{layer}.w_nbr"),
        format!("{prefix}.mp{layer}.w_edge"),
        format!("{prefix}.mp{layer}.bias"),
    ]
}

/// Initializes one message-passing layer mapping `in_dim` node features and
/// `edge_dim` edge features to `out_dim`.
pub fn init_mpnn_layer<R: Rng + ?Sized>(
    params: &mut NetParams,
    prefix: &str,
    layer: usize,
    in_dim: usize,
    edge_dim: usize,
    out_dim: usize,
    rng: &mut R,
) {
    let [ws, wn, we, b] = mpnn_param_names(prefix, layer);
    // The three blocks form one dense layer over [h_i | h_j | e_ij].
    let fan_in = 2 * in_dim + edge_dim;
    params.insert(ws, glorot(fan_in, out_dim, in_dim, rng));
    params.insert(wn, glorot(fan_in, out_dim, in_dim, rng));
    params.insert(we, glorot(fan_in, out_dim, edge_dim, rng));
    params.insert(b, Tensor::zeros(&[1, out_dim]));
}

/// Glorot-uniform `[rows, out]` block of a layer with `fan_in` inputs.
pub fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rows: usize, rng: &mut R) -> Tensor {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    let data = (0..rows * fan_out).map(|_| rng.gen_range(-limit..limit)).collect();
    Tensor::from_vec(&[rows, fan_out], data).expect("sized")
}

/// One round of message passing:
/// `h_i' = relu(sum_{j in N(i)} f_msg(h_i, h_j, e_ij))` where `f_msg` is a
/// single dense layer on the concatenation `[h_i | h_j | e_ij]`. The dense
/// layer is applied blockwise so node projections are computed once per node.
pub fn mpnn_layer(
    tape: &mut Tape,
    h: Var,
    edge_features: Var,
    graph: &MessageGraph,
    params: &BoundParams,
    prefix: &str,
    layer: usize,
) -> Result<Var> {
    let names = mpnn_param_names(prefix, layer);
    let get = |n: &String| {
        params
            .get(n)
            .copied()
            .ok_or_else(|| Error::Shape(format!("missing parameter {n}")))
    };
    let (ws, wn, we, b) = (get(&names[0])?, get(&names[1])?, get(&names[2])?, get(&names[3])?);
    let self_proj = tape.matmul(h, ws)?;
    let nbr_proj = tape.matmul(h, wn)?;
    let to_recv = tape.gather_rows(self_proj, &graph.recv)?;
    let from_send = tape.gather_rows(nbr_proj, &graph.send)?;
    let node_part = tape.add(to_recv, from_send)?;
    let edge_part = tape.matmul(edge_features, we)?;
    let msg = tape.add(node_part, edge_part)?;
    let msg = tape.add_bias(msg, b)?;
    let agg = tape.scatter_add_rows(msg, &graph.recv, graph.num_nodes)?;
    Ok(tape.relu(agg))
}

/// Probabilities from logits, row-wise.
pub fn softmax_head(logits: &Tensor) -> Tensor {
    softmax_rows(logits)
}

//! Minimal differentiable layer for the learner: tensors, a reverse-mode
//! tape, dense and message-passing layers, Adam, and parameter checkpoints.

mod adam;
mod layers;
mod tape;
mod tensor;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use adam::{Adam, AdamConfig};
pub use layers::{
    dense, glorot, init_mpnn_layer, mpnn_layer, mpnn_param_names, softmax_head, MessageGraph,
    MpnnConfig,
};
pub use tape::{softmax_rows, BoundParams, Gradients, Tape, Var};
pub use tensor::Tensor;

use crate::{Error, Result};

/// Named weight and bias tensors of one network.
pub type NetParams = BTreeMap<String, Tensor>;

/// All learner networks: policy, twin Q-critics, V-critic and its target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    pub policy: NetParams,
    pub q1: NetParams,
    pub q2: NetParams,
    pub value: NetParams,
    pub value_target: NetParams,
}

pub const CHECKPOINT_FORMAT: &str = "leocache-params";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    params: ParamStore,
}

impl ParamStore {
    pub fn networks(&self) -> [(&'static str, &NetParams); 5] {
        [
            ("policy", &self.policy),
            ("q1", &self.q1),
            ("q2", &self.q2),
            ("value", &self.value),
            ("value_target", &self.value_target),
        ]
    }

    pub fn check_target_shapes(&self) -> Result<()> {
        check_same_shapes(&self.value, &self.value_target)
    }

    pub fn to_json(&self) -> Result<String> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            params: self.clone(),
        };
        Ok(serde_json::to_string(&ck)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT || ck.version != CHECKPOINT_VERSION {
            return Err(Error::Usage(format!(
                "unsupported checkpoint {} v{}",
                ck.format, ck.version
            )));
        }
        for (name, net) in ck.params.networks() {
            for (k, t) in net {
                if t.len() != t.shape().iter().product::<usize>() {
                    return Err(Error::Shape(format!("{name}.{k}: data does not match shape")));
                }
            }
        }
        ck.params.check_target_shapes()?;
        Ok(ck.params)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn check_same_shapes(a: &NetParams, b: &NetParams) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape("networks have different parameter sets".into()));
    }
    for ((ka, ta), (kb, tb)) in a.iter().zip(b) {
        if ka != kb || ta.shape() != tb.shape() {
            return Err(Error::Shape(format!(
                "{ka} {:?} does not match {kb} {:?}",
                ta.shape(),
                tb.shape()
            )));
        }
    }
    Ok(())
}

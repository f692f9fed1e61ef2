//! JSON checkpoint format for [`Mlp`].
//!
//! ```json
//! { "format": "bonereg-mlp", "version": 1,
//!   "layers": [ { "in": 3, "out": 64, "activation": "tanh",
//!                 "weights": [...row-major out x in...], "bias": [...] } ] }
//! ```
//! A depth-0 network stores its width in `input_dim`.

use serde::{Deserialize, Serialize};

use super::mlp::{Activation, Mlp};
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "bonereg-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerRecord {
    #[serde(rename = "in")]
    pub n_in: usize,
    #[serde(rename = "out")]
    pub n_out: usize,
    pub activation: Activation,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub input_dim: usize,
    pub layers: Vec<LayerRecord>,
}

impl Checkpoint {
    pub fn from_mlp(net: &Mlp) -> Self {
        let layers = (0..net.depth())
            .map(|l| {
                let (w, b) = net.layer(l);
                LayerRecord {
                    n_in: net.dims()[l],
                    n_out: net.dims()[l + 1],
                    activation: net.activations()[l],
                    weights: w.to_vec(),
                    bias: b.to_vec(),
                }
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            input_dim: net.input_dim(),
            layers,
        }
    }

    pub fn to_mlp(&self) -> Result<Mlp> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::parse("checkpoint", 0, format!("unknown format `{}`", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::parse(
                "checkpoint",
                0,
                format!("unsupported version {}", self.version),
            ));
        }
        let mut dims = vec![self.input_dim];
        let mut acts = Vec::new();
        let mut params = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            if l.n_in != *dims.last().unwrap()
                || l.weights.len() != l.n_in * l.n_out
                || l.bias.len() != l.n_out
            {
                return Err(Error::Shape(format!("checkpoint layer {i} is inconsistent")));
            }
            dims.push(l.n_out);
            acts.push(l.activation);
            params.extend_from_slice(&l.weights);
            params.extend_from_slice(&l.bias);
        }
        Mlp::from_params(&dims, &acts, params)
    }
}

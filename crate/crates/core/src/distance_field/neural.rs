use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DistanceField;
use crate::diffnet::{Checkpoint, Matrix, Mlp, Tape};
use crate::error::{Error, Result};
use crate::geometry::{NormalizationRecord, Point};

/// Rows per network evaluation. Larger chunks amortize gemm packing.
const CHUNK: usize = 2048;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UdfMetadata {
    pub normalization: Option<NormalizationRecord>,
    pub steps: usize,
    pub uniform_mae: f64,
    pub near_surface_mae: f64,
    pub seed: u64,
}

/// On-disk form: the network checkpoint plus metadata.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct UdfFile {
    pub network: Checkpoint,
    pub metadata: UdfMetadata,
}

/// Learned unsigned distance field. A network with 3 inputs, tanh hidden
/// layers and a softplus output, so every value is non-negative.
#[derive(Clone, Debug)]
pub struct NeuralUdf {
    mlp: Mlp,
    frozen: bool,
    parallel: bool,
    pub metadata: UdfMetadata,
}

impl NeuralUdf {
    pub fn new(mlp: Mlp) -> Result<Self> {
        if mlp.input_dim() != 3 || mlp.output_dim() != 1 {
            return Err(Error::Shape(format!(
                "distance network must map 3 -> 1, got {} -> {}",
                mlp.input_dim(),
                mlp.output_dim()
            )));
        }
        Ok(Self {
            mlp,
            frozen: false,
            parallel: false,
            metadata: UdfMetadata::default(),
        })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.mlp
    }

    pub(crate) fn mlp_mut(&mut self) -> Result<&mut Mlp> {
        if self.frozen {
            return Err(Error::InvalidConfig("cannot modify a frozen field".into()));
        }
        Ok(&mut self.mlp)
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    /// Splits batch queries across the rayon pool. Results do not depend on
    /// this setting: rows are evaluated independently.
    pub fn set_parallel(&mut self, parallel: bool) {
        self.parallel = parallel;
    }

    pub fn to_file(&self) -> UdfFile {
        UdfFile {
            network: Checkpoint::from_mlp(&self.mlp),
            metadata: self.metadata.clone(),
        }
    }

    /// Loaded fields are frozen.
    pub fn from_file(file: &UdfFile) -> Result<Self> {
        let mut f = Self::new(file.network.to_mlp()?)?;
        f.metadata = file.metadata.clone();
        f.frozen = true;
        Ok(f)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let text = serde_json::to_string(&self.to_file())?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_file(&serde_json::from_str(&text)?)
    }

    fn chunk_values(&self, qs: &[Point]) -> Vec<f64> {
        let x = to_matrix(qs);
        self.mlp.forward(&x).expect("input width checked").into_vec()
    }

    fn chunk_gradients(&self, qs: &[Point]) -> (Vec<f64>, Vec<Vector3<f64>>) {
        let mut tape = Tape::new(&self.mlp);
        let xi = tape.input(to_matrix(qs));
        let y = tape.forward(xi).expect("input width checked");
        let values = tape.value(y).as_slice().to_vec();
        let seed = Matrix::filled(qs.len(), 1, 1.0);
        let grads = tape.backward_inputs(y, &seed).expect("fresh tape");
        let gx = grads.input(xi).expect("input node reached");
        let g = (0..qs.len())
            .map(|r| Vector3::from_row_slice(gx.row(r)))
            .collect();
        (values, g)
    }
}

pub(crate) fn to_matrix(qs: &[Point]) -> Matrix {
    let mut data = Vec::with_capacity(qs.len() * 3);
    for q in qs {
        data.extend_from_slice(q.as_slice());
    }
    Matrix::from_vec(qs.len(), 3, data).expect("three columns")
}

impl DistanceField for NeuralUdf {
    fn query_batch(&self, qs: &[Point]) -> Vec<f64> {
        if self.parallel && qs.len() > CHUNK {
            qs.par_chunks(CHUNK)
                .map(|c| self.chunk_values(c))
                .collect::<Vec<_>>()
                .concat()
        } else {
            qs.chunks(CHUNK).flat_map(|c| self.chunk_values(c)).collect()
        }
    }

    fn query_batch_with_gradient(&self, qs: &[Point]) -> (Vec<f64>, Vec<Vector3<f64>>) {
        let parts: Vec<_> = if self.parallel && qs.len() > CHUNK {
            qs.par_chunks(CHUNK).map(|c| self.chunk_gradients(c)).collect()
        } else {
            qs.chunks(CHUNK).map(|c| self.chunk_gradients(c)).collect()
        };
        let mut values = Vec::with_capacity(qs.len());
        let mut grads = Vec::with_capacity(qs.len());
        for (v, g) in parts {
            values.extend(v);
            grads.extend(g);
        }
        (values, grads)
    }

    fn is_frozen(&self) -> bool {
        self.frozen
    }
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::fastmath;
use super::matrix::{gemm, Matrix};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    /// `ln(1 + e^x)`.
    Softplus,
    Identity,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => fastmath::tanh(x),
            Activation::Softplus => softplus(x),
            Activation::Identity => x,
        }
    }

    /// Derivative given the pre-activation `x` and the output `y`.
    pub fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - y * y,
            Activation::Softplus => sigmoid(x),
            Activation::Identity => 1.0,
        }
    }

    /// Multiplies `grad` element-wise by the derivative at (`pre`, `out`).
    pub fn scale_by_derivative(self, grad: &mut [f64], pre: &[f64], out: &[f64]) {
        match self {
            Activation::Tanh => {
                for (g, &y) in grad.iter_mut().zip(out) {
                    *g *= 1.0 - y * y;
                }
            }
            Activation::Softplus => {
                for (g, &x) in grad.iter_mut().zip(pre) {
                    *g *= sigmoid(x);
                }
            }
            Activation::Identity => {}
        }
    }

    pub fn apply_in_place(self, xs: &mut [f64]) {
        match self {
            Activation::Tanh => fastmath::tanh_in_place(xs),
            Activation::Softplus => xs.iter_mut().for_each(|v| *v = softplus(*v)),
            Activation::Identity => {}
        }
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Fully connected network; every layer is `act(x Wᵀ + b)`.
///
/// Parameters live in one flat vector, layer by layer, each layer storing
/// its `out x in` weight matrix row-major followed by its bias.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    dims: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<f64>,
    offsets: Vec<usize>,
}

impl Mlp {
    /// Weights and biases uniform in `±1/sqrt(fan_in)`.
    pub fn new<R: Rng + ?Sized>(
        dims: &[usize],
        activations: &[Activation],
        rng: &mut R,
    ) -> Result<Self> {
        let mut net = Self::zeros(dims, activations)?;
        for l in 0..net.depth() {
            let bound = 1.0 / (dims[l] as f64).sqrt();
            let (start, end) = (net.offsets[l], net.offsets[l + 1]);
            for p in &mut net.params[start..end] {
                *p = rng.random_range(-bound..bound);
            }
        }
        Ok(net)
    }

    pub fn zeros(dims: &[usize], activations: &[Activation]) -> Result<Self> {
        if dims.is_empty() {
            return Err(Error::Shape("network needs an input dimension".into()));
        }
        if activations.len() + 1 != dims.len() {
            return Err(Error::Shape(format!(
                "{} activations for {} layers",
                activations.len(),
                dims.len() - 1
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Shape("zero-width layer".into()));
        }
        let mut offsets = vec![0];
        for w in dims.windows(2) {
            offsets.push(offsets.last().unwrap() + w[0] * w[1] + w[1]);
        }
        Ok(Self {
            dims: dims.to_vec(),
            activations: activations.to_vec(),
            params: vec![0.0; *offsets.last().unwrap()],
            offsets,
        })
    }

    pub fn from_params(dims: &[usize], activations: &[Activation], params: Vec<f64>) -> Result<Self> {
        let mut net = Self::zeros(dims, activations)?;
        if params.len() != net.params.len() {
            return Err(Error::Shape(format!(
                "{} parameters, network needs {}",
                params.len(),
                net.params.len()
            )));
        }
        net.params = params;
        Ok(net)
    }

    /// Number of layers (0 is the identity map).
    pub fn depth(&self) -> usize {
        self.activations.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn input_dim(&self) -> usize {
        self.dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.dims.last().unwrap()
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    /// Weight slice (`out x in`, row-major) and bias slice of layer `l`.
    pub fn layer(&self, l: usize) -> (&[f64], &[f64]) {
        let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
        let start = self.offsets[l];
        let w_end = start + n_in * n_out;
        (&self.params[start..w_end], &self.params[w_end..w_end + n_out])
    }

    pub(crate) fn layer_offset(&self, l: usize) -> usize {
        self.offsets[l]
    }

    /// Pre-activation `x Wᵀ + b` of layer `l`.
    pub(crate) fn linear(&self, l: usize, x: &Matrix) -> Matrix {
        let (n_in, n_out) = (self.dims[l], self.dims[l + 1]);
        let (w, b) = self.layer(l);
        let n = x.rows();
        let mut z = Matrix::zeros(n, n_out);
        {
            let zs = z.as_mut_slice();
            for r in 0..n {
                zs[r * n_out..(r + 1) * n_out].copy_from_slice(b);
            }
            gemm(n, n_in, n_out, 1.0, x.as_slice(), false, w, true, 1.0, zs);
        }
        z
    }

    /// Evaluates the network on each row of `x` without recording a tape.
    pub fn forward(&self, x: &Matrix) -> Result<Matrix> {
        self.check_input(x)?;
        let mut a = x.clone();
        for l in 0..self.depth() {
            let act = self.activations[l];
            a = self.linear(l, &a);
            act.apply_in_place(a.as_mut_slice());
        }
        Ok(a)
    }

    pub(crate) fn check_input(&self, x: &Matrix) -> Result<()> {
        if x.cols() != self.input_dim() {
            return Err(Error::Shape(format!(
                "input has {} columns, network expects {}",
                x.cols(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

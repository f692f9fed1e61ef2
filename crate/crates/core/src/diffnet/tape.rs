//! Reverse-mode differentiation over batched network evaluations.

use super::matrix::{gemm, Matrix};
use super::mlp::{Activation, Mlp};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct NodeId(usize);

#[derive(Clone, Copy, Debug)]
enum Op {
    Input,
    Linear { x: usize, layer: usize },
    Act { x: usize, kind: Activation },
    Add { a: usize, b: usize },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Matrix,
}

/// Recorded computation graph for one or more forward passes through a
/// single network. Nodes are appended after their inputs, so reverse index
/// order is a reverse topological order.
#[derive(Debug)]
pub struct Tape<'n> {
    net: &'n Mlp,
    nodes: Vec<Node>,
    consumed: bool,
}

/// Result of a backward pass.
#[derive(Clone, Debug)]
pub struct Gradients {
    /// Flat gradient in the network's parameter layout (all zeros when
    /// parameter gradients were not requested).
    pub params: Vec<f64>,
    inputs: Vec<(NodeId, Matrix)>,
}

impl Gradients {
    pub fn input(&self, id: NodeId) -> Option<&Matrix> {
        self.inputs.iter().find(|(n, _)| *n == id).map(|(_, m)| m)
    }
}

impl<'n> Tape<'n> {
    pub fn new(net: &'n Mlp) -> Self {
        Self {
            net,
            nodes: Vec::new(),
            consumed: false,
        }
    }

    fn push(&mut self, op: Op, value: Matrix) -> NodeId {
        self.nodes.push(Node { op, value });
        NodeId(self.nodes.len() - 1)
    }

    fn check_open(&self) -> Result<()> {
        if self.consumed {
            return Err(Error::Tape("tape was already consumed by a backward pass".into()));
        }
        Ok(())
    }

    fn check_id(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::Tape(format!("unknown node {}", id.0)));
        }
        Ok(())
    }

    pub fn input(&mut self, x: Matrix) -> NodeId {
        self.push(Op::Input, x)
    }

    pub fn value(&self, id: NodeId) -> &Matrix {
        &self.nodes[id.0].value
    }

    /// Records a full pass of the network on node `x`.
    pub fn forward(&mut self, x: NodeId) -> Result<NodeId> {
        self.check_open()?;
        self.check_id(x)?;
        self.net.check_input(self.value(x))?;
        let mut cur = x;
        for l in 0..self.net.depth() {
            let z = self.net.linear(l, self.value(cur));
            let lin = self.push(Op::Linear { x: cur.0, layer: l }, z);
            let kind = self.net.activations()[l];
            let mut a = self.value(lin).clone();
            kind.apply_in_place(a.as_mut_slice());
            cur = self.push(Op::Act { x: lin.0, kind }, a);
        }
        Ok(cur)
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check_open()?;
        self.check_id(a)?;
        self.check_id(b)?;
        if self.value(a).shape() != self.value(b).shape() {
            return Err(Error::Shape("add of differently shaped nodes".into()));
        }
        let mut v = self.value(a).clone();
        v.add_assign(self.value(b));
        Ok(self.push(Op::Add { a: a.0, b: b.0 }, v))
    }

    /// Propagates `seed = dL/d(output)` back through the tape.
    pub fn backward(&mut self, output: NodeId, seed: &Matrix) -> Result<Gradients> {
        self.run_backward(output, seed, true)
    }

    /// As [`Tape::backward`] but only input gradients are computed.
    pub fn backward_inputs(&mut self, output: NodeId, seed: &Matrix) -> Result<Gradients> {
        self.run_backward(output, seed, false)
    }

    fn run_backward(&mut self, output: NodeId, seed: &Matrix, want_params: bool) -> Result<Gradients> {
        self.check_open()?;
        self.check_id(output)?;
        if seed.shape() != self.value(output).shape() {
            return Err(Error::Shape(format!(
                "seed {:?} does not match output {:?}",
                seed.shape(),
                self.value(output).shape()
            )));
        }
        self.consumed = true;
        let net = self.net;
        let mut params = vec![0.0; net.param_count()];
        let mut grads: Vec<Option<Matrix>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[output.0] = Some(seed.clone());
        let mut inputs = Vec::new();

        for id in (0..=output.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            let node = &self.nodes[id];
            match node.op {
                Op::Input => inputs.push((NodeId(id), g)),
                Op::Add { a, b } => {
                    accumulate(&mut grads[a], &g);
                    accumulate(&mut grads[b], &g);
                }
                Op::Act { x, kind } => {
                    let pre = &self.nodes[x].value;
                    let mut d = g;
                    kind.scale_by_derivative(d.as_mut_slice(), pre.as_slice(), node.value.as_slice());
                    accumulate(&mut grads[x], &d);
                }
                Op::Linear { x, layer } => {
                    let (n_in, n_out) = (net.dims()[layer], net.dims()[layer + 1]);
                    let xin = &self.nodes[x].value;
                    let n = xin.rows();
                    if want_params {
                        let off = net.layer_offset(layer);
                        let (dw, db) = params[off..off + n_in * n_out + n_out].split_at_mut(n_in * n_out);
                        // dW += dZᵀ X
                        gemm(n_out, n, n_in, 1.0, g.as_slice(), true, xin.as_slice(), false, 1.0, dw);
                        for r in 0..n {
                            for (acc, v) in db.iter_mut().zip(g.row(r)) {
                                *acc += v;
                            }
                        }
                    }
                    let (w, _) = net.layer(layer);
                    let mut dx = Matrix::zeros(n, n_in);
                    // dX = dZ W
                    gemm(n, n_out, n_in, 1.0, g.as_slice(), false, w, false, 0.0, dx.as_mut_slice());
                    accumulate(&mut grads[x], &dx);
                }
            }
        }
        Ok(Gradients { params, inputs })
    }
}

fn accumulate(slot: &mut Option<Matrix>, g: &Matrix) {
    match slot {
        Some(acc) => acc.add_assign(g),
        None => *slot = Some(g.clone()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn tanh_of_wx_at_zero() {
        let net = Mlp::from_params(&[1, 1], &[Activation::Tanh], vec![1.0, 0.0]).unwrap();
        let mut tape = Tape::new(&net);
        let x = tape.input(Matrix::row_vector(&[0.0]));
        let y = tape.forward(x).unwrap();
        let g = tape.backward(y, &Matrix::row_vector(&[1.0])).unwrap();
        assert_eq!(g.params[0], 0.0); // df/dw = x sech²(wx) = 0
        assert_eq!(g.input(x).unwrap().get(0, 0), 1.0); // df/dx = w sech²(0) = 1
    }

    #[test]
    fn shared_parameter_branches_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[2, 3, 1], &[Activation::Tanh, Activation::Identity], &mut rng).unwrap();
        let x1 = Matrix::row_vector(&[0.3, -0.2]);
        let x2 = Matrix::row_vector(&[-0.7, 0.5]);
        let seed = Matrix::row_vector(&[1.0]);

        let single = |x: &Matrix| {
            let mut t = Tape::new(&net);
            let i = t.input(x.clone());
            let o = t.forward(i).unwrap();
            t.backward(o, &seed).unwrap().params
        };
        let mut t = Tape::new(&net);
        let a = t.input(x1.clone());
        let b = t.input(x2.clone());
        let ya = t.forward(a).unwrap();
        let yb = t.forward(b).unwrap();
        let s = t.add(ya, yb).unwrap();
        let both = t.backward(s, &seed).unwrap().params;
        let (g1, g2) = (single(&x1), single(&x2));
        for i in 0..both.len() {
            assert!((both[i] - (g1[i] + g2[i])).abs() < 1e-15);
        }
    }

    #[test]
    fn reuse_is_an_error() {
        let net = Mlp::zeros(&[1, 1], &[Activation::Tanh]).unwrap();
        let mut tape = Tape::new(&net);
        let x = tape.input(Matrix::row_vector(&[0.0]));
        let y = tape.forward(x).unwrap();
        tape.backward(y, &Matrix::row_vector(&[1.0])).unwrap();
        assert!(matches!(
            tape.backward(y, &Matrix::row_vector(&[1.0])),
            Err(Error::Tape(_))
        ));
        assert!(matches!(tape.forward(x), Err(Error::Tape(_))));
    }

    #[test]
    fn seed_shape_checked() {
        let net = Mlp::zeros(&[1, 2], &[Activation::Tanh]).unwrap();
        let mut tape = Tape::new(&net);
        let x = tape.input(Matrix::row_vector(&[0.0]));
        let y = tape.forward(x).unwrap();
        assert!(tape.backward(y, &Matrix::row_vector(&[1.0])).is_err());
    }
}

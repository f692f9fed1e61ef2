//! Small reverse-mode differentiable MLP engine with Adam.
//!
//! Inputs are batches (rows) and every layer is dense. This is all the
//! distance-field network and the registration backbone/heads need.

mod adam;
mod checkpoint;
mod fastmath;
mod matrix;
mod mlp;
mod tape;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{Checkpoint, LayerRecord, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use matrix::Matrix;
pub use fastmath::{tanh, tanh_in_place};
pub use mlp::{sigmoid, softplus, Activation, Mlp};
pub use tape::{Gradients, NodeId, Tape};

#[cfg(test)]
mod gradient_check {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Scalar objective: weighted sum of all outputs.
    fn objective(net: &Mlp, x: &Matrix, weights: &Matrix) -> f64 {
        net.forward(x)
            .unwrap()
            .as_slice()
            .iter()
            .zip(weights.as_slice())
            .map(|(a, b)| a * b)
            .sum()
    }

    fn close(analytic: f64, fd: f64) -> bool {
        let err = (analytic - fd).abs();
        err <= 1e-8 || err <= 1e-4 * analytic.abs().max(fd.abs())
    }

    fn check_random_network(seed: u64) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let depth = rng.random_range(1..=3);
        let mut dims = vec![rng.random_range(1..=4)];
        let mut acts = Vec::new();
        for l in 0..depth {
            dims.push(rng.random_range(1..=16));
            acts.push(match (l + 1 == depth, rng.random_range(0..3)) {
                (true, 0) => Activation::Softplus,
                (true, 1) => Activation::Identity,
                _ => Activation::Tanh,
            });
        }
        let mut net = Mlp::new(&dims, &acts, &mut rng).unwrap();
        let batch = rng.random_range(1..=4);
        let x = Matrix::from_vec(
            batch,
            dims[0],
            (0..batch * dims[0]).map(|_| rng.random_range(-1.5..1.5)).collect(),
        )
        .unwrap();
        let out_dim = *dims.last().unwrap();
        let w = Matrix::from_vec(
            batch,
            out_dim,
            (0..batch * out_dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        )
        .unwrap();

        let mut tape = Tape::new(&net);
        let xi = tape.input(x.clone());
        let y = tape.forward(xi).unwrap();
        let g = tape.backward(y, &w).unwrap();
        let gx = g.input(xi).unwrap().clone();

        let h = 1e-5;
        for i in 0..net.param_count() {
            let orig = net.params()[i];
            net.params_mut()[i] = orig + h;
            let fp = objective(&net, &x, &w);
            net.params_mut()[i] = orig - h;
            let fm = objective(&net, &x, &w);
            net.params_mut()[i] = orig;
            let fd = (fp - fm) / (2.0 * h);
            assert!(close(g.params[i], fd), "seed {seed} param {i}: {} vs {fd}", g.params[i]);
        }
        for i in 0..x.as_slice().len() {
            let mut xp = x.clone();
            xp.as_mut_slice()[i] += h;
            let mut xm = x.clone();
            xm.as_mut_slice()[i] -= h;
            let fd = (objective(&net, &xp, &w) - objective(&net, &xm, &w)) / (2.0 * h);
            assert!(close(gx.as_slice()[i], fd), "seed {seed} input {i}");
        }
    }

    #[test]
    fn fifty_random_networks_match_finite_differences() {
        for seed in 0..50 {
            check_random_network(seed);
        }
    }

    #[test]
    fn training_is_deterministic() {
        let run = || {
            let mut rng = ChaCha8Rng::seed_from_u64(99);
            let mut net = Mlp::new(&[2, 8, 1], &[Activation::Tanh, Activation::Identity], &mut rng)
                .unwrap();
            let mut adam = AdamState::new(AdamConfig::default(), net.param_count());
            for _ in 0..100 {
                let x = Matrix::from_vec(
                    4,
                    2,
                    (0..8).map(|_| rng.random_range(-1.0..1.0)).collect(),
                )
                .unwrap();
                let mut tape = Tape::new(&net);
                let xi = tape.input(x);
                let y = tape.forward(xi).unwrap();
                let seed = tape.value(y).map(|v| 2.0 * (v - 0.3) / 4.0);
                let g = tape.backward(y, &seed).unwrap();
                adam.step(net.params_mut(), &g.params).unwrap();
            }
            net
        };
        let (a, b) = (run(), run());
        assert!(a
            .params()
            .iter()
            .zip(b.params())
            .all(|(x, y)| x.to_bits() == y.to_bits()));
        assert!(a.params().iter().all(|p| p.is_finite()));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]
        #[test]
        fn gradient_check_property(seed in 1000u64..100_000) {
            check_random_network(seed);
        }
    }
}

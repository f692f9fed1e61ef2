use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction over a flat parameter vector.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, param_count: usize) -> Self {
        Self {
            config,
            step: 0,
            m: vec![0.0; param_count],
            v: vec![0.0; param_count],
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Clears the moment estimates of a slice of parameters, e.g. after
    /// they were re-initialized.
    pub fn reset_range(&mut self, range: std::ops::Range<usize>) {
        self.m[range.clone()].fill(0.0);
        self.v[range].fill(0.0);
    }

    /// Applies one update. A non-finite gradient leaves both the parameters
    /// and the state untouched.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "adam state has {} slots, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        if grads.iter().any(|g| !g.is_finite()) {
            return Err(Error::NonFiniteGradient);
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.step as i32);
        let c2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, &g), m), v) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut s = AdamState::new(AdamConfig::default(), 3);
        let mut p = vec![1.0, -2.0, 0.5];
        let before = p.clone();
        s.step(&mut p, &[0.0; 3]).unwrap();
        assert_eq!(p, before);
    }

    #[test]
    fn first_step_by_hand() {
        let cfg = AdamConfig::default();
        let mut s = AdamState::new(cfg, 2);
        let mut p = vec![0.0, 1.0];
        let g = [0.25, -4.0];
        s.step(&mut p, &g).unwrap();
        // m = 0.1 g, v = 0.001 g²; corrected by 0.1 and 0.001 -> g and g².
        for (i, gi) in g.iter().enumerate() {
            let m_hat = (0.1 * gi) / (1.0 - 0.9);
            let v_hat = (0.001 * gi * gi) / (1.0 - 0.999);
            let want = [0.0, 1.0][i] - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            assert!((p[i] - want).abs() < 1e-15);
            // Equivalent closed form: -lr g / (|g| + eps).
            let closed = [0.0, 1.0][i] - cfg.lr * gi / (gi.abs() + cfg.eps);
            assert!((p[i] - closed).abs() < 1e-12);
        }
        assert_eq!(s.steps_taken(), 1);
    }

    #[test]
    fn nan_gradient_rejected() {
        let mut s = AdamState::new(AdamConfig::default(), 1);
        let mut p = vec![1.0];
        assert!(matches!(
            s.step(&mut p, &[f64::NAN]),
            Err(Error::NonFiniteGradient)
        ));
        assert_eq!(p, vec![1.0]);
        assert_eq!(s.steps_taken(), 0);
    }

    #[test]
    fn descends_a_convex_quadratic() {
        // f(p) = sum_i a_i (p_i - c_i)^2
        let a = [1.0, 3.0, 0.5, 2.0];
        let c = [0.3, -0.7, 1.1, 0.0];
        let f = |p: &[f64]| -> f64 { (0..4).map(|i| a[i] * (p[i] - c[i]).powi(2)).sum() };
        let mut p = vec![0.0; 4];
        let start = f(&p);
        let mut s = AdamState::new(
            AdamConfig {
                lr: 0.05,
                ..Default::default()
            },
            4,
        );
        for _ in 0..500 {
            let g: Vec<f64> = (0..4).map(|i| 2.0 * a[i] * (p[i] - c[i])).collect();
            s.step(&mut p, &g).unwrap();
        }
        assert!(f(&p) < 1e-6 * start, "final {} vs start {start}", f(&p));
    }
}

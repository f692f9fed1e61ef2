use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::chart::ChartObjective;
use crate::distance_field::DistanceField;
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform};
use crate::neural_reg::{score_transform, Hypothesis};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BfgsConfig {
    pub max_iterations: usize,
    pub gradient_tolerance: f64,
    /// Evaluate the objective on a seeded subset of this many points.
    pub max_points: Option<usize>,
    pub seed: u64,
}

impl Default for BfgsConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-7,
            max_points: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct MinimizeResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    /// The backtracking line search could not find a decrease.
    pub line_search_failed: bool,
}

/// Quasi-Newton minimization with an inverse-Hessian BFGS update and an
/// Armijo backtracking line search.
pub fn bfgs_minimize(
    f: &dyn Fn(&[f64]) -> (f64, Vec<f64>),
    x0: &[f64],
    max_iterations: usize,
    gradient_tolerance: f64,
) -> MinimizeResult {
    let n = x0.len();
    let mut x = DVector::from_column_slice(x0);
    let (mut fx, g0) = f(x.as_slice());
    let mut g = DVector::from_vec(g0);
    let mut h = DMatrix::<f64>::identity(n, n);
    let mut first = true;
    let mut failed = false;
    let mut iterations = 0;
    while iterations < max_iterations {
        if g.norm() < gradient_tolerance {
            break;
        }
        let mut p = -(&h * &g);
        let mut slope = g.dot(&p);
        if !(slope < 0.0) {
            h = DMatrix::identity(n, n);
            p = -g.clone();
            slope = g.dot(&p);
        }
        let mut alpha = 1.0;
        let mut accepted = None;
        for _ in 0..50 {
            let trial = &x + alpha * &p;
            let (ft, gt) = f(trial.as_slice());
            if ft.is_finite() && ft <= fx + 1e-4 * alpha * slope {
                accepted = Some((trial, ft, DVector::from_vec(gt)));
                break;
            }
            alpha *= 0.5;
        }
        let Some((x_new, f_new, g_new)) = accepted else {
            failed = true;
            break;
        };
        iterations += 1;
        let s = &x_new - &x;
        let y = &g_new - &g;
        let sy = s.dot(&y);
        if sy > 1e-12 {
            if first {
                h *= sy / y.dot(&y);
                first = false;
            }
            let rho = 1.0 / sy;
            let i = DMatrix::<f64>::identity(n, n);
            let a = &i - rho * &s * y.transpose();
            h = &a * &h * a.transpose() + rho * &s * s.transpose();
        }
        let improvement = fx - f_new;
        x = x_new;
        fx = f_new;
        g = g_new;
        if improvement <= 1e-14 * (1.0 + fx.abs()) {
            break;
        }
    }
    MinimizeResult {
        x: x.as_slice().to_vec(),
        value: fx,
        iterations,
        line_search_failed: failed,
    }
}

#[derive(Clone, Debug)]
pub struct BfgsOutcome {
    pub hypothesis: Hypothesis,
    pub iterations: usize,
    pub line_search_failed: bool,
}

/// Minimizes the mean field value of `u` over rigid motions near `init`.
pub fn bfgs_register(
    u: &PointCloud,
    field: &dyn DistanceField,
    init: &RigidTransform,
    config: &BfgsConfig,
) -> Result<BfgsOutcome> {
    if !field.is_frozen() {
        return Err(Error::FieldNotFrozen);
    }
    if u.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let obj = ChartObjective::subsampled(field, u, init.clone(), config.max_points, config.seed);
    let f = |x: &[f64]| {
        let (v, g) = obj.value_and_gradient(x);
        (v, g.to_vec())
    };
    let res = bfgs_minimize(&f, &[0.0; 6], config.max_iterations, config.gradient_tolerance);
    let transform = obj.transform(&res.x);
    let score = score_transform(field, u.points(), &transform);
    Ok(BfgsOutcome {
        hypothesis: Hypothesis { transform, score },
        iterations: res.iterations,
        line_search_failed: res.line_search_failed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance_field::ExactField;
    use crate::geometry::{preprocess, ScaleSource};
    use crate::metrics::transform_errors;
    use crate::synth::{generate, random_transform, Shape, SynthSpec};
    use nalgebra::Vector3;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn normalized(shape: Shape, n: usize, seed: u64) -> PointCloud {
        let spec = SynthSpec { shape, c_count: n, seed, ..Default::default() };
        preprocess(&generate(&spec).unwrap().c_raw, ScaleSource::Own, 1e-4).unwrap().0
    }

    #[test]
    fn stays_at_the_ground_truth() {
        let c = normalized(Shape::AsymmetricBone { length_ratio: 1.0 }, 4000, 2);
        let field = ExactField::new(&c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pose = random_transform(1.0, &mut rng);
        let u = pose.apply(&c.select(&(0..c.len()).step_by(3).collect::<Vec<_>>()));
        let truth = pose.inverse();
        let out = bfgs_register(&u, &field, &truth, &BfgsConfig::default()).unwrap();
        let (rre, rte) = transform_errors(&out.hypothesis.transform, &truth).unwrap();
        assert!(rre < 0.5 && rte < 0.01, "{rre} {rte}");
        assert!(out.hypothesis.score < 1e-6);
    }

    #[test]
    fn flipped_start_stays_in_the_decoy_basin() {
        let c = normalized(Shape::SymmetricCylinder { marker: 0.15 }, 4000, 4);
        let field = ExactField::new(&c).unwrap();
        // A half turn about an axis across the cylinder maps it onto itself
        // apart from the marker.
        let flip = RigidTransform::from_rotation_vector(&Vector3::new(PI, 0.0, 0.0), Vector3::zeros());
        let out = bfgs_register(&c, &field, &flip, &BfgsConfig::default()).unwrap();
        let (rre, _) = transform_errors(&out.hypothesis.transform, &RigidTransform::identity()).unwrap();
        assert!(rre > 90.0, "{rre}");
        assert!(out.hypothesis.score < 0.01, "{}", out.hypothesis.score);
    }

    #[test]
    fn minimizes_rosenbrock() {
        let f = |x: &[f64]| {
            let (a, b) = (x[0], x[1]);
            let v = (1.0 - a).powi(2) + 100.0 * (b - a * a).powi(2);
            let g = vec![-2.0 * (1.0 - a) - 400.0 * a * (b - a * a), 200.0 * (b - a * a)];
            (v, g)
        };
        let res = bfgs_minimize(&f, &[-1.2, 1.0], 500, 1e-10);
        assert!((res.x[0] - 1.0).abs() < 1e-5 && (res.x[1] - 1.0).abs() < 1e-5, "{:?}", res.x);
    }

    #[test]
    fn flags_a_failing_line_search() {
        // Gradient pointing the wrong way: no step ever decreases f.
        let f = |x: &[f64]| (x[0], vec![-1.0]);
        let res = bfgs_minimize(&f, &[0.0], 10, 1e-12);
        assert!(res.line_search_failed);
        assert_eq!(res.x, vec![0.0]);
    }
}

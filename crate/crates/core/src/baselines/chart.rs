use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::distance_field::DistanceField;
use crate::geometry::{quat_mul, rotation_vector_to_quat, so3_exp, so3_left_jacobian, Point, PointCloud, RigidTransform};

/// Mean field value of a cloud as a function of a 6-vector `(ω, τ)`
/// describing the transform `[exp(ω) R₀ | t₀ + τ]` around a base pose.
pub struct ChartObjective<'a> {
    field: &'a dyn DistanceField,
    /// `R₀ u_i`.
    rotated: Vec<Point>,
    base: RigidTransform,
}

impl<'a> ChartObjective<'a> {
    pub fn new(field: &'a dyn DistanceField, points: &[Point], base: RigidTransform) -> Self {
        let rotated = points.iter().map(|p| base.rotation() * p).collect();
        Self { field, rotated, base }
    }

    /// Uses a seeded random subset of at most `max_points` points.
    pub fn subsampled(
        field: &'a dyn DistanceField,
        cloud: &PointCloud,
        base: RigidTransform,
        max_points: Option<usize>,
        seed: u64,
    ) -> Self {
        match max_points {
            Some(m) if m < cloud.len() => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let mut idx = sample(&mut rng, cloud.len(), m).into_vec();
                idx.sort_unstable();
                let pts: Vec<Point> = idx.iter().map(|&i| *cloud.point(i)).collect();
                Self::new(field, &pts, base)
            }
            _ => Self::new(field, cloud.points(), base),
        }
    }

    pub fn transform(&self, x: &[f64]) -> RigidTransform {
        let w = Vector3::new(x[0], x[1], x[2]);
        let q = quat_mul(&rotation_vector_to_quat(&w), self.base.quaternion());
        let t = self.base.translation() + Vector3::new(x[3], x[4], x[5]);
        RigidTransform::from_quaternion(&q, t).expect("unit quaternion")
    }

    fn moved(&self, x: &[f64]) -> Vec<Point> {
        let r = so3_exp(&Vector3::new(x[0], x[1], x[2]));
        let t = self.base.translation() + Vector3::new(x[3], x[4], x[5]);
        self.rotated.iter().map(|q| r * q + t).collect()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        let v = self.field.query_batch(&self.moved(x));
        v.iter().sum::<f64>() / v.len() as f64
    }

    pub fn value_and_gradient(&self, x: &[f64]) -> (f64, [f64; 6]) {
        let w = Vector3::new(x[0], x[1], x[2]);
        let r = so3_exp(&w);
        let t = self.base.translation() + Vector3::new(x[3], x[4], x[5]);
        let spun: Vec<Point> = self.rotated.iter().map(|q| r * q).collect();
        let moved: Vec<Point> = spun.iter().map(|q| q + t).collect();
        let (vals, grads) = self.field.query_batch_with_gradient(&moved);
        let n = vals.len() as f64;
        let mut gt = Vector3::zeros();
        let mut torque = Vector3::zeros();
        for (g, q) in grads.iter().zip(&spun) {
            gt += g;
            torque += q.cross(g);
        }
        let gw = so3_left_jacobian(&w).transpose() * (torque / n);
        let gt = gt / n;
        (vals.iter().sum::<f64>() / n, [gw.x, gw.y, gw.z, gt.x, gt.y, gt.z])
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::{Activation, Mlp};
    use crate::distance_field::NeuralUdf;
    use rand::Rng;

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::new(&[3, 16, 16, 1], &[Activation::Tanh, Activation::Tanh, Activation::Softplus], &mut rng).unwrap();
        let mut field = NeuralUdf::new(mlp).unwrap();
        field.freeze();
        let pts: Vec<Point> = (0..40).map(|_| Point::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5))).collect();
        let base = RigidTransform::from_rotation_vector(&Vector3::new(0.4, -1.0, 0.3), Vector3::new(0.1, 0.0, -0.2));
        let obj = ChartObjective::new(&field, &pts, base);
        for _ in 0..10 {
            let x: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (f0, g) = obj.value_and_gradient(&x);
            assert!((f0 - obj.value(&x)).abs() < 1e-14);
            let h = 1e-6;
            for k in 0..6 {
                let mut xp = x.clone();
                xp[k] += h;
                let mut xm = x.clone();
                xm[k] -= h;
                let fd = (obj.value(&xp) - obj.value(&xm)) / (2.0 * h);
                let err = (fd - g[k]).abs();
                assert!(err <= 1e-3 * fd.abs().max(g[k].abs()) || err < 1e-9, "{k}: {} vs {fd}", g[k]);
            }
        }
    }

    #[test]
    fn transform_matches_moved_points() {
        let field = crate::distance_field::ExactField::new(&PointCloud::new(vec![Point::zeros()]).unwrap()).unwrap();
        let pts = vec![Point::new(1.0, 2.0, 3.0)];
        let base = RigidTransform::from_rotation_vector(&Vector3::new(0.1, 0.2, 0.3), Vector3::new(1.0, 0.0, 0.0));
        let obj = ChartObjective::new(&field, &pts, base);
        let x = [0.3, -0.2, 0.5, 0.1, 0.2, 0.3];
        let t = obj.transform(&x);
        assert!((t.apply_point(&pts[0]).norm() - obj.value(&x)).abs() < 1e-12);
        assert!(obj.transform(&[0.0; 6]) == obj.base || (obj.transform(&[0.0; 6]).rotation() - obj.base.rotation()).norm() < 1e-15);
    }
}

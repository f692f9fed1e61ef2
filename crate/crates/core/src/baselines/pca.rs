use std::f64::consts::PI;

use nalgebra::{Matrix3, SymmetricEigen, Vector3};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::icp::{icp_with_target, IcpConfig, IcpResult, IcpTarget};
use crate::error::{Error, Result};
use crate::geometry::{Point, PointCloud, RigidTransform};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PcaIcpConfig {
    pub rotations_per_axis: usize,
    pub icp: IcpConfig,
    pub parallel: bool,
}

impl Default for PcaIcpConfig {
    fn default() -> Self {
        Self {
            rotations_per_axis: 12,
            icp: IcpConfig::default(),
            parallel: false,
        }
    }
}

/// Centroid and principal axes (columns, by decreasing variance) forming a
/// proper rotation.
fn principal_frame(cloud: &PointCloud) -> Result<(Point, Matrix3<f64>)> {
    let mean = cloud.centroid()?;
    let mut cov = Matrix3::zeros();
    for p in cloud.points() {
        cov += (p - mean) * (p - mean).transpose();
    }
    cov /= cloud.len() as f64;
    let eig = SymmetricEigen::new(cov);
    let mut order = [0usize, 1, 2];
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let (l_max, l_min) = (eig.eigenvalues[order[0]], eig.eigenvalues[order[2]]);
    if !(l_min > 1e-9 * l_max) {
        return Err(Error::DegenerateCovariance);
    }
    let mut axes = Matrix3::from_columns(&[
        eig.eigenvectors.column(order[0]).into_owned(),
        eig.eigenvectors.column(order[1]).into_owned(),
        eig.eigenvectors.column(order[2]).into_owned(),
    ]);
    if axes.determinant() < 0.0 {
        axes.set_column(2, &(-axes.column(2)));
    }
    Ok((mean, axes))
}

/// Candidate initial transforms mapping `u` onto `c`: principal frames
/// matched under the 4 proper sign flips, each rotated by
/// `rotations_per_axis` evenly spaced angles about each principal axis of
/// `c`. Yields `4 * 3 * rotations_per_axis` transforms.
pub fn pca_init(u: &PointCloud, c: &PointCloud, rotations_per_axis: usize) -> Result<Vec<RigidTransform>> {
    if rotations_per_axis == 0 {
        return Err(Error::InvalidConfig("rotations_per_axis must be positive".into()));
    }
    let (mu, eu) = principal_frame(u)?;
    let (mc, ec) = principal_frame(c)?;
    let signs = [
        Vector3::new(1.0, 1.0, 1.0),
        Vector3::new(1.0, -1.0, -1.0),
        Vector3::new(-1.0, 1.0, -1.0),
        Vector3::new(-1.0, -1.0, 1.0),
    ];
    let mut out = Vec::with_capacity(12 * rotations_per_axis);
    for s in &signs {
        let base = ec * Matrix3::from_diagonal(s) * eu.transpose();
        for axis in 0..3 {
            let a: Vector3<f64> = ec.column(axis).into();
            for k in 0..rotations_per_axis {
                let angle = 2.0 * PI * k as f64 / rotations_per_axis as f64;
                let spin = RigidTransform::from_rotation_vector(&(a * angle), Vector3::zeros());
                let r = spin.rotation() * base;
                out.push(RigidTransform::from_matrix(&r, mc - r * mu)?);
            }
        }
    }
    Ok(out)
}

/// ICP from every PCA candidate; the lowest final RMS wins (lowest
/// candidate index on ties).
pub fn pca_icp(u: &PointCloud, c: &PointCloud, config: &PcaIcpConfig) -> Result<IcpResult> {
    let candidates = pca_init(u, c, config.rotations_per_axis)?;
    let target = IcpTarget::new(c, config.icp.variant == super::IcpVariant::PointToPlane)?;
    let run = |t: &RigidTransform| icp_with_target(u, &target, t, &config.icp);
    let results: Vec<Result<IcpResult>> = if config.parallel {
        candidates.par_iter().map(run).collect()
    } else {
        candidates.iter().map(run).collect()
    };
    let mut best: Option<IcpResult> = None;
    let mut last_err = None;
    for r in results {
        match r {
            Ok(r) => {
                if best.as_ref().is_none_or(|b| r.rms < b.rms) {
                    best = Some(r);
                }
            }
            Err(e) => last_err = Some(e),
        }
    }
    best.ok_or_else(|| last_err.unwrap_or(Error::EmptyInput))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{preprocess, ScaleSource};
    use crate::metrics::transform_errors;
    use crate::synth::{generate, random_transform, Shape, SynthSpec};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn normalized(shape: Shape, n: usize) -> PointCloud {
        let pair = generate(&SynthSpec { shape, c_count: n, seed: 5, ..Default::default() }).unwrap();
        preprocess(&pair.c_raw, ScaleSource::Own, 1e-4).unwrap().0
    }

    #[test]
    fn identity_is_a_candidate() {
        let c = normalized(Shape::AsymmetricBone { length_ratio: 1.0 }, 2000);
        let cands = pca_init(&c, &c, 12).unwrap();
        assert_eq!(cands.len(), 4 * 3 * 12);
        assert!(cands.iter().any(|t| (t.rotation() - Matrix3::identity()).norm() < 1e-6 && t.translation().norm() < 1e-6));
        assert_eq!(pca_init(&c, &c, 5).unwrap().len(), 60);
    }

    #[test]
    fn mirrored_input_still_gives_proper_rotations() {
        let c = normalized(Shape::AsymmetricBone { length_ratio: 1.0 }, 2000);
        let mirrored = PointCloud::new(c.points().iter().map(|p| Point::new(-p.x, p.y, p.z)).collect()).unwrap();
        for t in pca_init(&mirrored, &c, 4).unwrap() {
            assert!((t.rotation().determinant() - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn degenerate_covariance() {
        let line = PointCloud::new((0..50).map(|i| Point::new(i as f64, 0.0, 0.0)).collect()).unwrap();
        assert!(matches!(pca_init(&line, &line, 4), Err(Error::DegenerateCovariance)));
    }

    #[test]
    fn recovers_asymmetric_pose() {
        let c = normalized(Shape::AsymmetricBone { length_ratio: 1.0 }, 4000);
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..2 {
            let pose = random_transform(1.0, &mut rng);
            let u = pose.apply(&c);
            let res = pca_icp(&u, &c, &PcaIcpConfig::default()).unwrap();
            let (rre, rte) = transform_errors(&res.transform, &pose.inverse()).unwrap();
            assert!(rre < 1.0 && rte < 0.01, "{rre} {rte}");
        }
    }
}

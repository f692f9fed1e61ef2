use nalgebra::{Matrix3, Matrix6, SymmetricEigen, Vector3, Vector6};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{KdIndex, Point, PointCloud, RigidTransform};

/// Fewest surviving correspondences an ICP step accepts.
pub const MIN_CORRESPONDENCES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum IcpVariant {
    PointToPoint,
    PointToPlane,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IcpConfig {
    pub variant: IcpVariant,
    pub max_iterations: usize,
    /// Pairs farther apart than this are ignored by the update step.
    pub rejection_distance: f64,
    /// Stop once an update moves the transform by less than this
    /// (rotation angle plus translation length).
    pub convergence: f64,
}

impl Default for IcpConfig {
    fn default() -> Self {
        Self {
            variant: IcpVariant::PointToPoint,
            max_iterations: 100,
            rejection_distance: 0.1,
            convergence: 1e-7,
        }
    }
}

impl IcpConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.rejection_distance > 0.0) || !(self.convergence > 0.0) || self.max_iterations == 0 {
            return Err(Error::InvalidConfig("icp thresholds and iteration count must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct IcpResult {
    pub transform: RigidTransform,
    /// Truncated RMS of the returned transform (see [`truncated_rms`]).
    pub rms: f64,
    /// Truncated RMS of the initial transform.
    pub initial_rms: f64,
    pub iterations: usize,
}

/// Target cloud with its search index and normals, reusable across runs.
pub struct IcpTarget {
    index: KdIndex,
    normals: Option<Vec<Point>>,
}

impl IcpTarget {
    /// Normals are taken from the cloud or estimated when `with_normals`
    /// is set and the cloud has none.
    pub fn new(cloud: &PointCloud, with_normals: bool) -> Result<Self> {
        let index = KdIndex::new(cloud)?;
        let normals = match (with_normals, cloud.normals()) {
            (false, _) => None,
            (true, Some(n)) => Some(n.to_vec()),
            (true, None) => Some(estimate_normals_with(cloud, &index, 16)),
        };
        Ok(Self { index, normals })
    }

    pub fn index(&self) -> &KdIndex {
        &self.index
    }
}

/// Closed-form least-squares rigid alignment of `src` onto `dst`
/// (Kabsch / SVD with reflection correction).
pub fn procrustes(src: &[Point], dst: &[Point]) -> Result<RigidTransform> {
    if src.len() != dst.len() || src.is_empty() {
        return Err(Error::InvalidConfig(format!(
            "procrustes needs equal non-empty sets, got {} and {}",
            src.len(),
            dst.len()
        )));
    }
    let n = src.len() as f64;
    let cs = src.iter().sum::<Point>() / n;
    let cd = dst.iter().sum::<Point>() / n;
    let mut h = Matrix3::zeros();
    for (s, d) in src.iter().zip(dst) {
        h += (s - cs) * (d - cd).transpose();
    }
    let svd = h.svd(true, true);
    let (u, vt) = (svd.u.expect("u requested"), svd.v_t.expect("v requested"));
    let v = vt.transpose();
    let sign = (v * u.transpose()).determinant().signum();
    let d = Matrix3::from_diagonal(&Vector3::new(1.0, 1.0, if sign == 0.0 { 1.0 } else { sign }));
    let r = v * d * u.transpose();
    RigidTransform::from_matrix(&r, cd - r * cs)
}

/// `sqrt(mean(min(d², τ²)))` over all source points, where `d` is the
/// distance to the nearest target point. Capping keeps far outliers from
/// dominating and makes point-to-point iterations monotone.
pub fn truncated_rms(src: &[Point], index: &KdIndex, transform: &RigidTransform, tau: f64) -> f64 {
    let sum: f64 = src
        .iter()
        .map(|p| index.nearest(&transform.apply_point(p)).1.powi(2).min(tau * tau))
        .sum();
    (sum / src.len() as f64).sqrt()
}

pub fn icp(u: &PointCloud, c: &PointCloud, init: &RigidTransform, config: &IcpConfig) -> Result<IcpResult> {
    let target = IcpTarget::new(c, config.variant == IcpVariant::PointToPlane)?;
    icp_with_target(u, &target, init, config)
}

pub fn icp_with_target(
    u: &PointCloud,
    target: &IcpTarget,
    init: &RigidTransform,
    config: &IcpConfig,
) -> Result<IcpResult> {
    config.validate()?;
    if u.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let tau = config.rejection_distance;
    let src = u.points();
    let mut current = init.clone();
    let mut best: Option<(RigidTransform, f64)> = None;
    let mut initial_rms = f64::NAN;
    let mut iterations = 0;

    loop {
        let moved: Vec<Point> = src.iter().map(|p| current.apply_point(p)).collect();
        let matches: Vec<(usize, f64)> = moved.iter().map(|p| target.index.nearest(p)).collect();
        let rms = (matches.iter().map(|(_, d)| (d * d).min(tau * tau)).sum::<f64>() / src.len() as f64).sqrt();
        if iterations == 0 {
            initial_rms = rms;
        }
        if best.as_ref().is_none_or(|(_, b)| rms < *b) {
            best = Some((current.clone(), rms));
        }
        if iterations == config.max_iterations {
            break;
        }
        let inliers: Vec<usize> = (0..src.len()).filter(|&i| matches[i].1 <= tau).collect();
        if inliers.len() < MIN_CORRESPONDENCES {
            if iterations == 0 {
                return Err(Error::InsufficientOverlap { found: inliers.len() });
            }
            break;
        }
        let delta = match config.variant {
            IcpVariant::PointToPoint => {
                let a: Vec<Point> = inliers.iter().map(|&i| moved[i]).collect();
                let b: Vec<Point> = inliers.iter().map(|&i| target.index.points()[matches[i].0]).collect();
                procrustes(&a, &b)?
            }
            IcpVariant::PointToPlane => {
                let normals = target
                    .normals
                    .as_ref()
                    .ok_or_else(|| Error::InvalidConfig("point-to-plane needs target normals".into()))?;
                let mut ata = Matrix6::zeros();
                let mut atb = Vector6::zeros();
                for &i in &inliers {
                    let p = moved[i];
                    let (j, _) = matches[i];
                    let n = normals[j];
                    let q = target.index.points()[j];
                    let row = Vector6::from_iterator(p.cross(&n).iter().chain(n.iter()).copied());
                    let r = -(p - q).dot(&n);
                    ata += row * row.transpose();
                    atb += row * r;
                }
                // A light ridge keeps the solve defined along directions the
                // surface does not constrain (e.g. sliding along a cylinder).
                let ridge = 1e-9 * ata.trace().max(1e-12);
                for k in 0..6 {
                    ata[(k, k)] += ridge;
                }
                let x = ata
                    .cholesky()
                    .map(|ch| ch.solve(&atb))
                    .ok_or(Error::DegenerateCovariance)?;
                RigidTransform::from_rotation_vector(&Vector3::new(x[0], x[1], x[2]), Vector3::new(x[3], x[4], x[5]))
            }
        };
        current = delta.compose(&current);
        iterations += 1;
        let step = delta.rotation_vector().norm() + delta.translation().norm();
        if !current.translation().iter().all(|v| v.is_finite()) {
            break;
        }
        if step < config.convergence {
            let moved_rms = truncated_rms(src, &target.index, &current, tau);
            if moved_rms < best.as_ref().map_or(f64::INFINITY, |b| b.1) {
                best = Some((current.clone(), moved_rms));
            }
            break;
        }
    }
    let (transform, rms) = best.expect("at least one evaluation");
    Ok(IcpResult {
        transform,
        rms,
        initial_rms,
        iterations,
    })
}

/// Unit normals from the smallest principal direction of each point's
/// `k` nearest neighbors, flipped to face away from the cloud centroid.
pub fn estimate_normals(cloud: &PointCloud, k: usize) -> Result<Vec<Point>> {
    let index = KdIndex::new(cloud)?;
    Ok(estimate_normals_with(cloud, &index, k))
}

fn estimate_normals_with(cloud: &PointCloud, index: &KdIndex, k: usize) -> Vec<Point> {
    let centroid = cloud.points().iter().sum::<Point>() / cloud.len() as f64;
    cloud
        .points()
        .iter()
        .map(|p| {
            let nb = index.knn(p, k.max(3));
            let pts: Vec<Point> = nb.iter().map(|(i, _)| index.points()[*i]).collect();
            let mean = pts.iter().sum::<Point>() / pts.len() as f64;
            let mut cov = Matrix3::zeros();
            for q in &pts {
                cov += (q - mean) * (q - mean).transpose();
            }
            let eig = SymmetricEigen::new(cov);
            let i = eig.eigenvalues.imin();
            let mut n: Point = eig.eigenvectors.column(i).into();
            if n.norm() < 1e-12 {
                n = Point::z();
            }
            n.normalize_mut();
            if n.dot(&(p - centroid)) < 0.0 {
                n = -n;
            }
            n
        })
        .collect()
}

//! Spatial normalization and voxel-grid downsampling.
//!
//! A complete (preoperative) cloud is centered on its centroid and divided
//! by its bounding-box diagonal, which maps it into (-1, 1)³. A partial
//! (intraoperative) cloud is centered on its own centroid but divided by
//! the diagonal of the complete cloud so both share one scale.

use std::collections::HashMap;

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::cloud::{Point, PointCloud};
use super::transform::RigidTransform;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationRecord {
    /// Bounding-box diagonal used as divisor, in raw units.
    pub scale: f64,
    /// Centroid subtracted before scaling, in raw units.
    pub centroid: [f64; 3],
    /// Voxel edge length in normalized units.
    pub voxel_size: f64,
}

impl NormalizationRecord {
    pub fn centroid(&self) -> Point {
        Vector3::from(self.centroid)
    }

    pub fn normalize_point(&self, p: &Point) -> Point {
        (p - self.centroid()) / self.scale
    }

    pub fn denormalize_point(&self, p: &Point) -> Point {
        p * self.scale + self.centroid()
    }

    pub fn denormalize(&self, cloud: &PointCloud) -> PointCloud {
        let points = cloud
            .points()
            .iter()
            .map(|p| self.denormalize_point(p))
            .collect();
        PointCloud::from_parts_unchecked(points, cloud.normals().map(|n| n.to_vec()))
    }
}

/// Where the normalization scale comes from.
#[derive(Clone, Copy, Debug)]
pub enum ScaleSource<'a> {
    /// Compute centroid and diagonal from the cloud itself.
    Own,
    /// Reuse the diagonal of a previously preprocessed complete cloud; the
    /// centroid is still the cloud's own.
    External(&'a NormalizationRecord),
}

/// Normalizes `raw` and downsamples it on a voxel grid of edge
/// `voxel_size` (normalized units).
pub fn preprocess(
    raw: &PointCloud,
    source: ScaleSource<'_>,
    voxel_size: f64,
) -> Result<(PointCloud, NormalizationRecord)> {
    if !(voxel_size > 0.0) || !voxel_size.is_finite() {
        return Err(Error::InvalidConfig(format!(
            "voxel size must be positive, got {voxel_size}"
        )));
    }
    if raw.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let centroid = raw.centroid()?;
    let scale = match source {
        ScaleSource::Own => raw.bounding_diagonal()?,
        ScaleSource::External(rec) => rec.scale,
    };
    if !(scale > 0.0) || !scale.is_finite() {
        return Err(Error::DegenerateCloud(format!("normalization scale {scale}")));
    }
    let record = NormalizationRecord {
        scale,
        centroid: centroid.into(),
        voxel_size,
    };
    let points: Vec<Point> = raw
        .points()
        .iter()
        .map(|p| record.normalize_point(p))
        .collect();
    let normalized = PointCloud::from_parts_unchecked(points, raw.normals().map(|n| n.to_vec()));
    let keep = voxel_downsample(&normalized, voxel_size);
    Ok((normalized.select(&keep), record))
}

/// Indices of the voxel representatives, ascending.
///
/// The grid is anchored at (-1, -1, -1). Each occupied voxel keeps the point
/// nearest to the mean of its members (lowest index on ties).
pub fn voxel_downsample(cloud: &PointCloud, voxel_size: f64) -> Vec<usize> {
    let mut voxels: HashMap<[i64; 3], Vec<usize>> = HashMap::new();
    for (i, p) in cloud.points().iter().enumerate() {
        voxels.entry(voxel_key(p, voxel_size)).or_default().push(i);
    }
    let points = cloud.points();
    let mut keep: Vec<usize> = voxels
        .values()
        .map(|members| {
            let mean = members
                .iter()
                .fold(Point::zeros(), |acc, &i| acc + points[i])
                / members.len() as f64;
            let mut best = members[0];
            let mut best_d = (points[best] - mean).norm_squared();
            for &i in &members[1..] {
                let d = (points[i] - mean).norm_squared();
                if d < best_d {
                    best = i;
                    best_d = d;
                }
            }
            best
        })
        .collect();
    keep.sort_unstable();
    keep
}

pub(crate) fn voxel_key(p: &Point, voxel_size: f64) -> [i64; 3] {
    [
        ((p.x + 1.0) / voxel_size).floor() as i64,
        ((p.y + 1.0) / voxel_size).floor() as i64,
        ((p.z + 1.0) / voxel_size).floor() as i64,
    ]
}

/// Uniform random subset of exactly `m` points (all points if fewer),
/// preserving input order.
pub fn random_subsample<R: Rng + ?Sized>(cloud: &PointCloud, m: usize, rng: &mut R) -> PointCloud {
    if cloud.len() <= m {
        return cloud.clone();
    }
    let mut idx = sample(rng, cloud.len(), m).into_vec();
    idx.sort_unstable();
    cloud.select(&idx)
}

/// Expresses a raw-frame transform `U_raw → C_raw` between the normalized
/// frames described by `u` and `c`.
pub fn normalize_transform(
    raw: &RigidTransform,
    u: &NormalizationRecord,
    c: &NormalizationRecord,
) -> RigidTransform {
    let t = (raw.rotation() * u.centroid() + raw.translation() - c.centroid()) / c.scale;
    RigidTransform::from_quaternion(raw.quaternion(), t).expect("unit quaternion")
}

/// Inverse of [`normalize_transform`]: maps a transform between normalized
/// frames back to the raw frames.
pub fn denormalize_transform(
    normalized: &RigidTransform,
    u: &NormalizationRecord,
    c: &NormalizationRecord,
) -> RigidTransform {
    let t = normalized.translation() * c.scale + c.centroid() - normalized.rotation() * u.centroid();
    RigidTransform::from_quaternion(normalized.quaternion(), t).expect("unit quaternion")
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::collections::BTreeMap;

    fn corners() -> PointCloud {
        let mut pts = Vec::new();
        for &x in &[0.0, 1.0] {
            for &y in &[0.0, 1.0] {
                for &z in &[0.0, 1.0] {
                    pts.push(Point::new(x, y, z));
                }
            }
        }
        PointCloud::new(pts).unwrap()
    }

    fn random_cloud(seed: u64, n: usize, extent: f64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| {
                    Point::new(
                        rng.random_range(0.0..extent),
                        rng.random_range(0.0..extent * 0.6),
                        rng.random_range(0.0..extent * 0.3),
                    )
                })
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn unit_cube_corners_survive() {
        let (c, rec) = preprocess(&corners(), ScaleSource::Own, 0.01).unwrap();
        assert_eq!(c.len(), 8);
        assert!((rec.scale - 3f64.sqrt()).abs() < 1e-15);
        let max = c
            .points()
            .iter()
            .flat_map(|p| p.iter().copied())
            .fold(0.0f64, |m, v| m.max(v.abs()));
        assert!((max - 0.5 / 3f64.sqrt()).abs() < 1e-15);
        assert!(max < 1.0);
    }

    #[test]
    fn huge_voxel_keeps_one_point() {
        for v in [2.0, 5.0] {
            let (c, _) = preprocess(&random_cloud(1, 500, 30.0), ScaleSource::Own, v).unwrap();
            assert_eq!(c.len(), 1);
        }
    }

    #[test]
    fn config_errors() {
        let c = corners();
        assert!(matches!(
            preprocess(&c, ScaleSource::Own, 0.0),
            Err(Error::InvalidConfig(_))
        ));
        let single = PointCloud::new(vec![Point::new(1.0, 1.0, 1.0); 3]).unwrap();
        assert!(matches!(
            preprocess(&single, ScaleSource::Own, 0.1),
            Err(Error::DegenerateCloud(_))
        ));
    }

    /// Brute-force bucketing written without hashing: sort points by voxel key.
    fn bucket_oracle(points: &[Point], voxel: f64) -> Vec<usize> {
        let mut buckets: BTreeMap<(i64, i64, i64), Vec<usize>> = BTreeMap::new();
        for (i, p) in points.iter().enumerate() {
            let k = (
                ((p.x + 1.0) / voxel).floor() as i64,
                ((p.y + 1.0) / voxel).floor() as i64,
                ((p.z + 1.0) / voxel).floor() as i64,
            );
            buckets.entry(k).or_default().push(i);
        }
        let mut out = Vec::new();
        for members in buckets.values() {
            let n = members.len() as f64;
            let (mut sx, mut sy, mut sz) = (0.0, 0.0, 0.0);
            for &i in members {
                sx += points[i].x;
                sy += points[i].y;
                sz += points[i].z;
            }
            let m = Point::new(sx / n, sy / n, sz / n);
            let best = members
                .iter()
                .copied()
                .min_by(|&a, &b| {
                    (points[a] - m)
                        .norm_squared()
                        .total_cmp(&(points[b] - m).norm_squared())
                        .then(a.cmp(&b))
                })
                .unwrap();
            out.push(best);
        }
        out.sort_unstable();
        out
    }

    #[test]
    fn downsampling_matches_bucket_oracle() {
        let raw = random_cloud(5, 40_000, 120.0);
        let (c, rec) = preprocess(&raw, ScaleSource::Own, 0.005).unwrap();
        let normalized: Vec<Point> = raw
            .points()
            .iter()
            .map(|p| rec.normalize_point(p))
            .collect();
        let oracle = bucket_oracle(&normalized, 0.005);
        assert_eq!(c.len(), oracle.len());
        assert!(c.len() < raw.len());
        for (p, &i) in c.points().iter().zip(&oracle) {
            assert_eq!(*p, normalized[i]);
        }
    }

    #[test]
    fn normalization_round_trip() {
        let raw = random_cloud(9, 5000, 80.0);
        let (c, rec) = preprocess(&raw, ScaleSource::Own, 0.02).unwrap();
        let back = rec.denormalize(&c);
        let keep = voxel_downsample(
            &PointCloud::new(raw.points().iter().map(|p| rec.normalize_point(p)).collect())
                .unwrap(),
            0.02,
        );
        for (p, &i) in back.points().iter().zip(&keep) {
            let q = raw.point(i);
            assert!((p - q).norm() <= 1e-9 * q.norm().max(1.0));
        }
        for p in c.points() {
            assert!(p.iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn external_scale_uses_own_centroid() {
        let full = random_cloud(2, 3000, 100.0);
        let (_, rec_c) = preprocess(&full, ScaleSource::Own, 0.01).unwrap();
        let part = PointCloud::new(
            full.points()
                .iter()
                .filter(|p| p.x < 50.0)
                .copied()
                .collect(),
        )
        .unwrap();
        let (u, rec_u) = preprocess(&part, ScaleSource::External(&rec_c), 0.01).unwrap();
        assert_eq!(rec_u.scale, rec_c.scale);
        assert!((rec_u.centroid() - part.centroid().unwrap()).norm() < 1e-12);
        assert!(u.points().iter().all(|p| p.iter().all(|v| v.abs() < 1.0)));
    }

    #[test]
    fn subsample_hits_exact_count() {
        let c = random_cloud(3, 1000, 1.0);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(random_subsample(&c, 400, &mut rng).len(), 400);
        assert_eq!(random_subsample(&c, 4000, &mut rng).len(), 1000);
    }

    #[test]
    fn transform_normalization_is_consistent() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let c_raw = random_cloud(4, 2000, 90.0);
        let gt = RigidTransform::from_rotation_vector(
            &Vector3::new(0.3, -1.0, 0.2),
            Vector3::new(4.0, 8.0, -3.0),
        );
        let u_raw = gt.inverse().apply(&c_raw.select(&(0..700).collect::<Vec<_>>()));
        let (_, rc) = preprocess(&c_raw, ScaleSource::Own, 0.01).unwrap();
        let (_, ru) = preprocess(&u_raw, ScaleSource::External(&rc), 0.01).unwrap();
        let tn = normalize_transform(&gt, &ru, &rc);
        for _ in 0..20 {
            let i = rng.random_range(0..700);
            let pu = ru.normalize_point(u_raw.point(i));
            let pc = rc.normalize_point(c_raw.point(i));
            assert!((tn.apply_point(&pu) - pc).norm() < 1e-12);
        }
    }

    #[test]
    fn transform_denormalization_inverts() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let c = random_cloud(1, 300, 50.0);
        let u = random_cloud(2, 200, 20.0);
        let (_, rc) = preprocess(&c, ScaleSource::Own, 1e-6).unwrap();
        let (_, ru) = preprocess(&u, ScaleSource::External(&rc), 1e-6).unwrap();
        let raw = crate::synth::random_transform(30.0, &mut rng);
        let n = normalize_transform(&raw, &ru, &rc);
        let back = denormalize_transform(&n, &ru, &rc);
        assert!((back.translation() - raw.translation()).norm() < 1e-9);
        assert!((back.rotation() - raw.rotation()).norm() < 1e-15);
        let p = Point::new(rng.random_range(0.0..20.0), 1.0, 2.0);
        let via_norm = rc.denormalize_point(&n.apply_point(&ru.normalize_point(&p)));
        assert!((via_norm - raw.apply_point(&p)).norm() < 1e-9);
    }
}

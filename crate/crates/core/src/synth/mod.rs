//! Synthetic registration fixtures with exact ground truth.

mod shapes;

use std::path::{Path, PathBuf};

use nalgebra::Vector3;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{io, Point, PointCloud, Quaternion, RigidTransform, TransformRecord};

pub use shapes::{Shape, BASE_LENGTH, SPHERE_RADIUS};

/// Perturbations per pair in the evaluation protocol.
pub const DEFAULT_REPEATS: usize = 20;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ViewModel {
    /// Keep the points on one side of a plane with a random normal.
    HalfSpace,
    /// Keep the points whose outward direction from the centroid faces a
    /// random viewing direction the most.
    DirectionCulling,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthSpec {
    pub shape: Shape,
    /// Surface samples in the complete cloud.
    pub c_count: usize,
    /// Points drawn from the retained region for the partial cloud
    /// (before outliers).
    pub u_count: usize,
    /// Share of the surface retained by the partial view.
    pub fraction: f64,
    pub view: ViewModel,
    /// Noise standard deviation in normalized units (multiples of the
    /// complete cloud's bounding-box diagonal).
    pub noise: f64,
    /// Outliers added, as a share of the partial cloud size.
    pub outliers: f64,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        Self {
            shape: Shape::AsymmetricBone { length_ratio: 1.0 },
            c_count: 20_000,
            u_count: 8_000,
            fraction: 1.0,
            view: ViewModel::HalfSpace,
            noise: 0.0,
            outliers: 0.0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.fraction > 0.0 && self.fraction <= 1.0) {
            return Err(Error::InvalidConfig(format!("fraction {} outside (0, 1]", self.fraction)));
        }
        if !(self.noise >= 0.0) || !self.noise.is_finite() {
            return Err(Error::InvalidConfig(format!("noise {} must be non-negative", self.noise)));
        }
        if !(0.0..=0.2).contains(&self.outliers) {
            return Err(Error::InvalidConfig(format!("outlier fraction {} outside [0, 0.2]", self.outliers)));
        }
        if self.c_count < 10 || self.u_count < 10 {
            return Err(Error::InvalidConfig("clouds need at least 10 points".into()));
        }
        Ok(())
    }
}

/// Raw clouds and the transform taking the partial cloud onto the complete one.
#[derive(Clone, Debug)]
pub struct SynthPair {
    pub c_raw: PointCloud,
    pub u_raw: PointCloud,
    pub t_gt: RigidTransform,
}

/// Uniformly distributed rotation (normalized 4-D Gaussian).
pub fn random_rotation<R: Rng + ?Sized>(rng: &mut R) -> Quaternion {
    loop {
        let q = Quaternion::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        let n = q.norm();
        if n > 1e-9 {
            return q / n;
        }
    }
}

/// Uniform rotation with translation uniform in `[-half, half]³`.
pub fn random_transform<R: Rng + ?Sized>(half: f64, rng: &mut R) -> RigidTransform {
    let q = random_rotation(rng);
    let t = Vector3::new(
        rng.random_range(-half..=half),
        rng.random_range(-half..=half),
        rng.random_range(-half..=half),
    );
    RigidTransform::from_quaternion(&q, t).expect("unit quaternion")
}

/// Indices of the retained region, a share `fraction` of `points`.
fn partial_region<R: Rng + ?Sized>(
    points: &[Point],
    fraction: f64,
    view: ViewModel,
    rng: &mut R,
) -> Vec<usize> {
    let keep = ((fraction * points.len() as f64).round() as usize).clamp(1, points.len());
    if keep == points.len() {
        return (0..points.len()).collect();
    }
    let dir = {
        let g = Vector3::new(
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
            StandardNormal.sample(rng),
        );
        g.normalize()
    };
    let centroid = points.iter().sum::<Point>() / points.len() as f64;
    let score = |p: &Point| match view {
        ViewModel::HalfSpace => p.dot(&dir),
        ViewModel::DirectionCulling => {
            let r = p - centroid;
            let n = r.norm();
            if n > 0.0 {
                r.dot(&dir) / n
            } else {
                0.0
            }
        }
    };
    let mut order: Vec<usize> = (0..points.len()).collect();
    order.sort_by(|&a, &b| score(&points[b]).total_cmp(&score(&points[a])).then(a.cmp(&b)));
    let mut idx = order[..keep].to_vec();
    idx.sort_unstable();
    idx
}

/// Generates a complete cloud, a partial noisy observation of it in a
/// random pose, and the ground-truth transform back.
pub fn generate(spec: &SynthSpec) -> Result<SynthPair> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let c_points = spec.shape.sample(spec.c_count, &mut rng);
    let c_raw = PointCloud::new(c_points)?;
    let diag = c_raw.bounding_diagonal()?;

    let region = partial_region(c_raw.points(), spec.fraction, spec.view, &mut rng);
    let mut chosen = if region.len() > spec.u_count {
        let mut pick: Vec<usize> = sample(&mut rng, region.len(), spec.u_count)
            .into_iter()
            .map(|i| region[i])
            .collect();
        pick.sort_unstable();
        pick
    } else {
        region
    };
    chosen.dedup();
    let mut u_points: Vec<Point> = chosen.iter().map(|&i| *c_raw.point(i)).collect();

    if spec.noise > 0.0 {
        let normal = Normal::new(0.0, spec.noise * diag).expect("positive sigma");
        for p in &mut u_points {
            *p += Vector3::new(normal.sample(&mut rng), normal.sample(&mut rng), normal.sample(&mut rng));
        }
    }
    let n_out = (spec.outliers * u_points.len() as f64).round() as usize;
    if n_out > 0 {
        let partial = PointCloud::new(u_points.clone())?;
        let (lo, hi) = partial.bounds()?;
        for _ in 0..n_out {
            u_points.push(Point::new(
                sample_span(lo.x, hi.x, &mut rng),
                sample_span(lo.y, hi.y, &mut rng),
                sample_span(lo.z, hi.z, &mut rng),
            ));
        }
    }

    let pose = random_transform(diag, &mut rng);
    let u_raw = pose.apply(&PointCloud::new(u_points)?);
    Ok(SynthPair {
        c_raw,
        u_raw,
        t_gt: pose.inverse(),
    })
}

fn sample_span<R: Rng + ?Sized>(lo: f64, hi: f64, rng: &mut R) -> f64 {
    if hi > lo {
        rng.random_range(lo..hi)
    } else {
        lo
    }
}

/// Applies a fresh uniform rigid motion with translation in `[-1, 1]³`.
pub fn perturb(u: &PointCloud, seed: u64) -> (PointCloud, RigidTransform) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let t = random_transform(1.0, &mut rng);
    (t.apply(u), t)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureSidecar {
    /// Maps the partial cloud onto the complete one.
    pub t_gt: TransformRecord,
    pub spec: SynthSpec,
}

/// Paths of a fixture written by [`write_fixture`].
#[derive(Clone, Debug)]
pub struct FixturePaths {
    pub complete: PathBuf,
    pub partial: PathBuf,
    pub ground_truth: PathBuf,
}

/// Writes `<stem>_C.ply`, `<stem>_U.ply` and `<stem>_gt.json` into `dir`.
pub fn write_fixture(dir: impl AsRef<Path>, stem: &str, pair: &SynthPair, spec: &SynthSpec) -> Result<FixturePaths> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let paths = FixturePaths {
        complete: dir.join(format!("{stem}_C.ply")),
        partial: dir.join(format!("{stem}_U.ply")),
        ground_truth: dir.join(format!("{stem}_gt.json")),
    };
    io::write_ply_exact(&paths.complete, &pair.c_raw)?;
    io::write_ply_exact(&paths.partial, &pair.u_raw)?;
    let sidecar = FixtureSidecar {
        t_gt: pair.t_gt.to_record(),
        spec: spec.clone(),
    };
    std::fs::write(&paths.ground_truth, sidecar_json(&sidecar)?)?;
    Ok(paths)
}

/// JSON with every transform entry printed to 17 significant digits.
fn sidecar_json(s: &FixtureSidecar) -> Result<String> {
    let f = |v: f64| format!("{v:.16e}");
    let r = &s.t_gt.rotation;
    let rows: Vec<String> = r
        .iter()
        .map(|row| format!("[{}, {}, {}]", f(row[0]), f(row[1]), f(row[2])))
        .collect();
    let t = &s.t_gt.translation;
    Ok(format!(
        "{{\n  \"t_gt\": {{\n    \"rotation\": [{}],\n    \"translation\": [{}, {}, {}]\n  }},\n  \"spec\": {}\n}}\n",
        rows.join(", "),
        f(t[0]),
        f(t[1]),
        f(t[2]),
        serde_json::to_string(&s.spec)?
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::KdIndex;

    fn small(shape: Shape) -> SynthSpec {
        SynthSpec {
            shape,
            c_count: 4000,
            u_count: 1500,
            seed: 11,
            ..Default::default()
        }
    }

    #[test]
    fn noiseless_full_view_lands_on_complete_samples() {
        let spec = small(Shape::AsymmetricBone { length_ratio: 1.0 });
        let pair = generate(&spec).unwrap();
        let index = KdIndex::new(&pair.c_raw).unwrap();
        for p in pair.t_gt.apply(&pair.u_raw).points() {
            assert!(index.nearest(p).1 < 1e-12 * BASE_LENGTH);
        }
    }

    #[test]
    fn sphere_complete_cloud_on_radius() {
        let pair = generate(&small(Shape::Sphere)).unwrap();
        for p in pair.c_raw.points() {
            assert!((p.norm() - SPHERE_RADIUS).abs() < 1e-12);
        }
    }

    #[test]
    fn mean_rotation_angle_of_uniform_rotations() {
        // E[angle] = π/2 + 2/π for the Haar measure on SO(3).
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 10_000;
        let mean: f64 = (0..n)
            .map(|_| 2.0 * random_rotation(&mut rng)[0].abs().min(1.0).acos())
            .sum::<f64>()
            / n as f64;
        let expected = std::f64::consts::FRAC_PI_2 + 2.0 / std::f64::consts::PI;
        assert!((mean.to_degrees() - expected.to_degrees()).abs() < 2.0);
        assert!((mean.to_degrees() - 126.9).abs() < 2.0);
    }

    #[test]
    fn half_space_fraction() {
        let spec = SynthSpec {
            shape: Shape::Sphere,
            c_count: 10_000,
            u_count: 10_000,
            fraction: 0.4,
            seed: 3,
            ..Default::default()
        };
        let pair = generate(&spec).unwrap();
        assert!((pair.u_raw.len() as f64 - 4000.0).abs() <= 0.02 * 4000.0);
    }

    #[test]
    fn noise_standard_deviation() {
        let spec = SynthSpec {
            shape: Shape::Sphere,
            c_count: 20_000,
            u_count: 20_000,
            noise: 0.01,
            seed: 4,
            ..Default::default()
        };
        let clean = generate(&SynthSpec { noise: 0.0, ..spec.clone() }).unwrap();
        let noisy = generate(&spec).unwrap();
        let sigma = 0.01 * clean.c_raw.bounding_diagonal().unwrap();
        // Same seed draws the same samples and pose; compare in the C frame.
        let a = clean.t_gt.apply(&clean.u_raw);
        let b = noisy.t_gt.apply(&noisy.u_raw);
        assert_eq!(a.len(), b.len());
        for axis in 0..3 {
            let d: Vec<f64> = a.points().iter().zip(b.points()).map(|(p, q)| q[axis] - p[axis]).collect();
            let mean = d.iter().sum::<f64>() / d.len() as f64;
            let sd = (d.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / d.len() as f64).sqrt();
            assert!((sd - sigma).abs() < 0.05 * sigma, "axis {axis}: {sd} vs {sigma}");
        }
    }

    #[test]
    fn outliers_are_appended() {
        let spec = SynthSpec { outliers: 0.02, ..small(Shape::HalfPipe) };
        let pair = generate(&spec).unwrap();
        assert_eq!(pair.u_raw.len(), 1500 + 30);
        assert!(generate(&SynthSpec { outliers: 0.3, ..spec }).is_err());
    }

    #[test]
    fn perturb_is_seeded() {
        let pair = generate(&small(Shape::Sphere)).unwrap();
        let (a, ta) = perturb(&pair.u_raw, 9);
        let (b, tb) = perturb(&pair.u_raw, 9);
        assert_eq!(a, b);
        assert_eq!(ta, tb);
        assert!(ta.translation().iter().all(|t| t.abs() <= 1.0));
        let back = ta.inverse().compose(&ta);
        assert!((back.rotation() - nalgebra::Matrix3::identity()).norm() < 1e-12);
    }

    #[test]
    fn sidecar_holds_seventeen_digits() {
        let spec = small(Shape::Sphere);
        let pair = generate(&spec).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let paths = write_fixture(dir.path(), "s", &pair, &spec).unwrap();
        let text = std::fs::read_to_string(&paths.ground_truth).unwrap();
        let back: FixtureSidecar = serde_json::from_str(&text).unwrap();
        assert_eq!(back.spec, spec);
        let t = RigidTransform::from_record(&back.t_gt).unwrap();
        assert!((t.rotation() - pair.t_gt.rotation()).norm() < 1e-15);
        assert!((t.translation() - pair.t_gt.translation()).norm() < 1e-12);
    }
}

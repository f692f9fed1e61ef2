//! Point-cloud container.

use nalgebra::Vector3;

use crate::error::{Error, Result};

pub type Point = Vector3<f64>;

/// Ordered set of 3D points with optional unit normals.
///
/// Every point is finite; normals, when present, are parallel to the points
/// and have unit length.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct PointCloud {
    points: Vec<Point>,
    normals: Option<Vec<Point>>,
}

const NORMAL_TOLERANCE: f64 = 1e-6;

impl PointCloud {
    pub fn new(points: Vec<Point>) -> Result<Self> {
        check_finite(&points)?;
        Ok(Self {
            points,
            normals: None,
        })
    }

    pub fn with_normals(points: Vec<Point>, normals: Vec<Point>) -> Result<Self> {
        check_finite(&points)?;
        if normals.len() != points.len() {
            return Err(Error::InvalidCloud(format!(
                "{} normals for {} points",
                normals.len(),
                points.len()
            )));
        }
        for (i, n) in normals.iter().enumerate() {
            if (n.norm() - 1.0).abs() > NORMAL_TOLERANCE {
                return Err(Error::InvalidCloud(format!(
                    "normal {i} has norm {}",
                    n.norm()
                )));
            }
        }
        Ok(Self {
            points,
            normals: Some(normals),
        })
    }

    /// Builds a cloud without validation. Callers guarantee the invariants.
    pub(crate) fn from_parts_unchecked(points: Vec<Point>, normals: Option<Vec<Point>>) -> Self {
        Self { points, normals }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point] {
        &self.points
    }

    pub fn normals(&self) -> Option<&[Point]> {
        self.normals.as_deref()
    }

    pub fn point(&self, i: usize) -> &Point {
        &self.points[i]
    }

    pub fn into_points(self) -> Vec<Point> {
        self.points
    }

    pub fn without_normals(&self) -> PointCloud {
        Self::from_parts_unchecked(self.points.clone(), None)
    }

    /// Subset in the order of `indices`.
    pub fn select(&self, indices: &[usize]) -> PointCloud {
        let points = indices.iter().map(|&i| self.points[i]).collect();
        let normals = self
            .normals
            .as_ref()
            .map(|n| indices.iter().map(|&i| n[i]).collect());
        Self::from_parts_unchecked(points, normals)
    }

    /// Axis-aligned bounds as (min, max).
    pub fn bounds(&self) -> Result<(Point, Point)> {
        let first = self.points.first().ok_or(Error::EmptyCloud)?;
        let mut lo = *first;
        let mut hi = *first;
        for p in &self.points[1..] {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        Ok((lo, hi))
    }

    /// Length of the diagonal of the axis-aligned bounding box.
    pub fn bounding_diagonal(&self) -> Result<f64> {
        let (lo, hi) = self.bounds()?;
        Ok((hi - lo).norm())
    }

    pub fn centroid(&self) -> Result<Point> {
        if self.points.is_empty() {
            return Err(Error::EmptyCloud);
        }
        let sum = self.points.iter().fold(Point::zeros(), |acc, p| acc + p);
        Ok(sum / self.points.len() as f64)
    }

    /// Returns a copy with every point translated by `offset`.
    pub fn translated(&self, offset: &Point) -> PointCloud {
        let points = self.points.iter().map(|p| p + offset).collect();
        Self::from_parts_unchecked(points, self.normals.clone())
    }

    /// Concatenates `other` onto this cloud. Normals survive only if both
    /// sides carry them.
    pub fn extend(&mut self, other: &PointCloud) {
        match (&mut self.normals, other.normals()) {
            (Some(mine), Some(theirs)) => mine.extend_from_slice(theirs),
            _ => self.normals = None,
        }
        self.points.extend_from_slice(&other.points);
    }
}

fn check_finite(points: &[Point]) -> Result<()> {
    match points
        .iter()
        .position(|p| !p.iter().all(|c| c.is_finite()))
    {
        Some(i) => Err(Error::InvalidCloud(format!("point {i} is not finite"))),
        None => Ok(()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cloud(pts: &[[f64; 3]]) -> PointCloud {
        PointCloud::new(pts.iter().map(|p| Point::new(p[0], p[1], p[2])).collect()).unwrap()
    }

    #[test]
    fn diagonal_of_unit_cube() {
        let c = cloud(&[[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]);
        assert!((c.bounding_diagonal().unwrap() - 3f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn diagonal_of_repeated_point_is_zero() {
        let c = cloud(&[[0.3, -2.0, 7.0]; 5]);
        assert_eq!(c.bounding_diagonal().unwrap(), 0.0);
    }

    #[test]
    fn diagonal_of_2_3_6_box() {
        let mut pts = Vec::new();
        for &x in &[0.0, 2.0] {
            for &y in &[0.0, 3.0] {
                for &z in &[0.0, 6.0] {
                    pts.push([x, y, z]);
                }
            }
        }
        assert!((cloud(&pts).bounding_diagonal().unwrap() - 7.0).abs() < 1e-15);
    }

    #[test]
    fn empty_cloud_errors() {
        let c = PointCloud::new(vec![]).unwrap();
        assert!(matches!(c.bounding_diagonal(), Err(Error::EmptyCloud)));
        assert!(matches!(c.centroid(), Err(Error::EmptyCloud)));
    }

    #[test]
    fn centroid_examples() {
        assert_eq!(
            cloud(&[[1.0, 0.0, 0.0], [-1.0, 0.0, 0.0]]).centroid().unwrap(),
            Point::zeros()
        );
        assert_eq!(
            cloud(&[[2.0, 2.0, 2.0]]).centroid().unwrap(),
            Point::new(2.0, 2.0, 2.0)
        );
    }

    #[test]
    fn centroid_of_uniform_samples_matches_reverse_summation() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let pts: Vec<Point> = (0..1000)
            .map(|_| Point::new(rng.random(), rng.random(), rng.random()))
            .collect();
        let c = PointCloud::new(pts.clone()).unwrap().centroid().unwrap();
        // Independent summation order: reversed, component-wise.
        let mut oracle = [0.0f64; 3];
        for p in pts.iter().rev() {
            for k in 0..3 {
                oracle[k] += p[k];
            }
        }
        for k in 0..3 {
            let m = oracle[k] / 1000.0;
            assert!((c[k] - m).abs() < 1e-12);
            assert!((c[k] - 0.5).abs() < 0.05);
        }
    }

    #[test]
    fn rejects_non_finite_and_bad_normals() {
        assert!(PointCloud::new(vec![Point::new(f64::NAN, 0.0, 0.0)]).is_err());
        let p = vec![Point::zeros()];
        assert!(PointCloud::with_normals(p.clone(), vec![Point::new(0.0, 0.0, 2.0)]).is_err());
        assert!(PointCloud::with_normals(p.clone(), vec![]).is_err());
        assert!(PointCloud::with_normals(p, vec![Point::new(0.0, 0.0, 1.0)]).is_ok());
    }
}

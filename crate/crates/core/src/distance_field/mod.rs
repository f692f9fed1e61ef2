//! Unsigned distance fields over the normalized frame: a trained neural
//! field and a precomputed trilinear grid, behind one query interface.

mod grid;
mod neural;
mod train;

use nalgebra::Vector3;

use crate::geometry::Point;

pub use grid::{GridConfig, GridVolume, GRID_MAGIC};
pub use neural::{NeuralUdf, UdfFile, UdfMetadata};
pub use train::{evaluate_udf, train_udf, near_surface_queries, uniform_queries, UdfAccuracy, UdfConfig};

/// Read-only distance queries. Implementations are immutable once built,
/// so they can be shared across threads.
pub trait DistanceField: Send + Sync {
    fn query(&self, q: &Point) -> f64 {
        self.query_batch(std::slice::from_ref(q))[0]
    }

    fn query_with_gradient(&self, q: &Point) -> (f64, Vector3<f64>) {
        let (v, g) = self.query_batch_with_gradient(std::slice::from_ref(q));
        (v[0], g[0])
    }

    fn query_batch(&self, qs: &[Point]) -> Vec<f64>;

    fn query_batch_with_gradient(&self, qs: &[Point]) -> (Vec<f64>, Vec<Vector3<f64>>);

    /// Whether the field may be used for registration.
    fn is_frozen(&self) -> bool {
        true
    }
}

/// Mean field value over `points`.
pub fn mean_distance(field: &dyn DistanceField, points: &[Point]) -> f64 {
    if points.is_empty() {
        return 0.0;
    }
    field.query_batch(points).iter().sum::<f64>() / points.len() as f64
}

/// Exact distance to a point cloud through a KD-tree. Used as the oracle
/// for the learned and gridded fields; its gradient is the unit vector away
/// from the nearest point.
pub struct ExactField {
    index: crate::geometry::KdIndex,
}

impl ExactField {
    pub fn new(cloud: &crate::geometry::PointCloud) -> crate::Result<Self> {
        Ok(Self {
            index: crate::geometry::KdIndex::new(cloud)?,
        })
    }
}

impl DistanceField for ExactField {
    fn query_batch(&self, qs: &[Point]) -> Vec<f64> {
        qs.iter().map(|q| self.index.nearest(q).1).collect()
    }

    fn query_batch_with_gradient(&self, qs: &[Point]) -> (Vec<f64>, Vec<Vector3<f64>>) {
        qs.iter()
            .map(|q| {
                let (i, d) = self.index.nearest(q);
                let g = if d > 0.0 {
                    (q - self.index.points()[i]) / d
                } else {
                    Vector3::zeros()
                };
                (d, g)
            })
            .unzip()
    }
}

use std::path::Path;

use nalgebra::Vector3;

use crate::error::{Error, Result};
use crate::geometry::io::read_cloud;
use crate::geometry::{normalize_transform, preprocess, NormalizationRecord, PointCloud, RigidTransform, ScaleSource, TransformRecord};
use crate::synth::{generate, SynthSpec};

/// A complete/partial pair in the normalized frame, ready for trials.
#[derive(Clone, Debug)]
pub struct LoadedPair {
    pub name: String,
    pub complete: PointCloud,
    pub partial: PointCloud,
    /// Maps `partial` onto `complete`.
    pub t_gt: RigidTransform,
    /// Normalization of the complete cloud; `scale` converts normalized
    /// lengths to raw units.
    pub record: NormalizationRecord,
}

fn unit_record(scale: f64) -> NormalizationRecord {
    NormalizationRecord {
        scale,
        centroid: [0.0; 3],
        voxel_size: 0.0,
    }
}

/// Reads a ground-truth transform from either a bare
/// `{"rotation": .., "translation": ..}` object or a fixture sidecar with a
/// `t_gt` field.
pub fn read_ground_truth(path: impl AsRef<Path>) -> Result<RigidTransform> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let value: serde_json::Value = serde_json::from_str(&text)?;
    let inner = value.get("t_gt").cloned().unwrap_or(value);
    let rec: TransformRecord = serde_json::from_value(inner)?;
    RigidTransform::from_record(&rec).map_err(|e| Error::InvalidGroundTruth(e.to_string()))
}

/// Normalizes a raw pair: the complete cloud by its own centroid and
/// diagonal, the partial cloud by its own centroid and the complete
/// cloud's diagonal.
pub fn normalize_pair(
    name: &str,
    c_raw: &PointCloud,
    u_raw: &PointCloud,
    t_raw: &RigidTransform,
    voxel_size: f64,
) -> Result<LoadedPair> {
    let (complete, record) = preprocess(c_raw, ScaleSource::Own, voxel_size)?;
    let (partial, u_rec) = preprocess(u_raw, ScaleSource::External(&record), voxel_size)?;
    Ok(LoadedPair {
        name: name.to_string(),
        complete,
        partial,
        t_gt: normalize_transform(t_raw, &u_rec, &record),
        record,
    })
}

/// Loads a pair from disk. Raw pairs are normalized with `voxel_size`;
/// others are returned as stored with `scale` (default 1) as the raw-unit
/// conversion.
pub fn load_pair(
    c_path: impl AsRef<Path>,
    u_path: impl AsRef<Path>,
    gt_path: impl AsRef<Path>,
    raw: bool,
    scale: Option<f64>,
    voxel_size: f64,
) -> Result<LoadedPair> {
    let c = read_cloud(c_path.as_ref())?;
    let u = read_cloud(u_path.as_ref())?;
    let t = read_ground_truth(gt_path)?;
    let name = c_path
        .as_ref()
        .file_stem()
        .map(|s| s.to_string_lossy().trim_end_matches("_C").to_string())
        .unwrap_or_default();
    if raw {
        normalize_pair(&name, &c, &u, &t, voxel_size)
    } else {
        let scale = scale.unwrap_or(1.0);
        if !(scale > 0.0) {
            return Err(Error::InvalidConfig(format!("scale must be positive, got {scale}")));
        }
        Ok(LoadedPair {
            name,
            complete: c,
            partial: u,
            t_gt: t,
            record: unit_record(scale),
        })
    }
}

/// Generates and normalizes a synthetic pair.
pub fn synthetic_pair(name: &str, spec: &SynthSpec, voxel_size: f64) -> Result<LoadedPair> {
    let pair = generate(spec)?;
    normalize_pair(name, &pair.c_raw, &pair.u_raw, &pair.t_gt, voxel_size)
}

/// Moves `cloud` so its centroid is at the origin; returns the offset that
/// was subtracted.
pub(crate) fn recenter(cloud: &PointCloud) -> Result<(PointCloud, Vector3<f64>)> {
    let c = cloud.centroid()?;
    Ok((cloud.translated(&(-c)), c))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{write_fixture, Shape};
    use nalgebra::Matrix3;

    #[test]
    fn fixture_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec { shape: Shape::HalfPipe, c_count: 500, u_count: 200, fraction: 0.5, seed: 3, ..Default::default() };
        let pair = generate(&spec).unwrap();
        let paths = write_fixture(dir.path(), "hp", &pair, &spec).unwrap();
        let loaded = load_pair(&paths.complete, &paths.partial, &paths.ground_truth, false, None, 0.002).unwrap();
        assert_eq!(loaded.name, "hp");
        assert_eq!(loaded.complete.len(), pair.c_raw.len());
        for (a, b) in loaded.complete.points().iter().zip(pair.c_raw.points()) {
            assert!((a - b).norm() < 1e-12 * b.norm().max(1.0));
        }
        for (a, b) in loaded.partial.points().iter().zip(pair.u_raw.points()) {
            assert!((a - b).norm() < 1e-12 * b.norm().max(1.0));
        }
        assert!((loaded.t_gt.rotation() - pair.t_gt.rotation()).norm() < 1e-12);
        assert!((loaded.t_gt.translation() - pair.t_gt.translation()).norm() < 1e-12 * pair.t_gt.translation().norm().max(1.0));

        let raw = load_pair(&paths.complete, &paths.partial, &paths.ground_truth, true, None, 0.002).unwrap();
        assert!(raw.record.scale > 1.0);
        let moved = raw.t_gt.apply(&raw.partial);
        let index = crate::geometry::KdIndex::new(&raw.complete).unwrap();
        for p in moved.points() {
            assert!(index.nearest(p).1 < 0.01);
        }
    }

    #[test]
    fn truncated_ply_names_the_element() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec { c_count: 300, u_count: 100, seed: 1, ..Default::default() };
        let pair = generate(&spec).unwrap();
        let paths = write_fixture(dir.path(), "t", &pair, &spec).unwrap();
        let text = std::fs::read_to_string(&paths.complete).unwrap();
        let cut: Vec<&str> = text.lines().collect();
        std::fs::write(&paths.complete, cut[..cut.len() - 20].join("\n")).unwrap();
        match load_pair(&paths.complete, &paths.partial, &paths.ground_truth, false, None, 0.002) {
            Err(Error::Parse { message, .. }) => assert!(message.contains("vertex"), "{message}"),
            other => panic!("expected a parse error, got {other:?}"),
        }
    }

    #[test]
    fn reflection_is_invalid_ground_truth() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SynthSpec { c_count: 300, u_count: 100, seed: 1, ..Default::default() };
        let pair = generate(&spec).unwrap();
        let paths = write_fixture(dir.path(), "r", &pair, &spec).unwrap();
        let mirror = Matrix3::from_diagonal(&Vector3::new(-1.0, 1.0, 1.0));
        let rec = serde_json::json!({
            "rotation": [[mirror[(0, 0)], 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]],
            "translation": [0.0, 0.0, 0.0]
        });
        std::fs::write(&paths.ground_truth, rec.to_string()).unwrap();
        assert!(matches!(
            load_pair(&paths.complete, &paths.partial, &paths.ground_truth, false, None, 0.002),
            Err(Error::InvalidGroundTruth(_))
        ));
    }
}

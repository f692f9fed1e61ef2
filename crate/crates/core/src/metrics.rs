//! Registration error metrics and per-trial records.

use nalgebra::{Matrix3, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{check_rotation, RigidTransform};

/// Rotation angle of `M = R_gtᵀ R_est`, in degrees.
///
/// This is `arccos((tr M - 1) / 2)`, evaluated as `atan2` of the sine (from
/// the skew part of `M`) and the clamped cosine, which keeps full precision
/// near 0 and 180 degrees where arccos is flat.
pub fn rre(r_est: &Matrix3<f64>, r_gt: &Matrix3<f64>) -> Result<f64> {
    check_rotation(r_est).map_err(|e| Error::InvalidRotation(format!("estimate: {e}")))?;
    check_rotation(r_gt).map_err(|e| Error::InvalidRotation(format!("ground truth: {e}")))?;
    let m = r_gt.transpose() * r_est;
    let cos = ((m.trace() - 1.0) / 2.0).clamp(-1.0, 1.0);
    let sin = 0.5
        * Vector3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]).norm();
    Ok(sin.atan2(cos).to_degrees())
}

pub fn rte(t_est: &Vector3<f64>, t_gt: &Vector3<f64>) -> f64 {
    (t_est - t_gt).norm()
}

/// `(rre_deg, rte)` between two transforms.
pub fn transform_errors(est: &RigidTransform, gt: &RigidTransform) -> Result<(f64, f64)> {
    Ok((
        rre(est.rotation(), gt.rotation())?,
        rte(est.translation(), gt.translation()),
    ))
}

/// Share of `(rre, rte)` pairs with both strictly below each threshold.
pub fn recall_curve(errors: &[(f64, f64)], thresholds: &[f64]) -> Result<Vec<(f64, f64)>> {
    if errors.is_empty() {
        return Err(Error::EmptyInput);
    }
    let n = errors.len() as f64;
    Ok(thresholds
        .iter()
        .map(|&x| {
            let hits = errors.iter().filter(|(r, t)| *r < x && *t < x).count();
            (x, hits as f64 / n)
        })
        .collect())
}

/// Thresholds `0, 0.5, ..., 180`.
pub fn standard_thresholds() -> Vec<f64> {
    (0..=360).map(|i| i as f64 * 0.5).collect()
}

pub const TRIAL_HEADER: [&str; 21] = [
    "dataset", "pair", "method", "seed", "rre_deg", "rte_units", "rte_mm", "wall_time_s", "r00",
    "r01", "r02", "r10", "r11", "r12", "r20", "r21", "r22", "t0", "t1", "t2", "status",
];

/// One registration trial. CSV columns follow [`TRIAL_HEADER`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub dataset: String,
    pub pair: String,
    pub method: String,
    pub seed: u64,
    pub rre_deg: f64,
    /// Translation error in normalized units.
    pub rte_units: f64,
    /// Translation error scaled by the complete cloud's raw diagonal.
    pub rte_mm: f64,
    pub wall_time_s: f64,
    /// Estimated transform, rotation rows then translation.
    pub t_est: [f64; 12],
    /// `ok`, or `failed: <reason>` for trials recorded with sentinel errors.
    pub status: String,
}

/// Rotation rows then translation, the order of the CSV transform columns.
pub fn pack_transform(t: &RigidTransform) -> [f64; 12] {
    let r = t.rotation();
    let tr = t.translation();
    let mut out = [0.0; 12];
    for i in 0..3 {
        for j in 0..3 {
            out[3 * i + j] = r[(i, j)];
        }
        out[9 + i] = tr[i];
    }
    out
}

impl TrialRecord {
    pub fn transform(&self) -> Result<RigidTransform> {
        let r = Matrix3::from_row_slice(&self.t_est[..9]);
        RigidTransform::from_matrix(&r, Vector3::new(self.t_est[9], self.t_est[10], self.t_est[11]))
    }

    pub fn ok(&self) -> bool {
        self.status == "ok"
    }

    pub fn to_row(&self) -> Vec<String> {
        let mut row = vec![
            self.dataset.clone(),
            self.pair.clone(),
            self.method.clone(),
            self.seed.to_string(),
            fmt(self.rre_deg),
            fmt(self.rte_units),
            fmt(self.rte_mm),
            fmt(self.wall_time_s),
        ];
        row.extend(self.t_est.iter().map(|v| fmt(*v)));
        row.push(self.status.clone());
        row
    }

    pub fn from_row(row: &csv::StringRecord, line: usize) -> Result<Self> {
        if row.len() != TRIAL_HEADER.len() {
            return Err(Error::parse("trial row", line, format!("{} columns, expected {}", row.len(), TRIAL_HEADER.len())));
        }
        let num = |i: usize| -> Result<f64> {
            row[i]
                .parse::<f64>()
                .map_err(|e| Error::parse("trial row", line, format!("column {}: {e}", TRIAL_HEADER[i])))
        };
        let mut t_est = [0.0; 12];
        for (k, v) in t_est.iter_mut().enumerate() {
            *v = num(8 + k)?;
        }
        let rec = Self {
            dataset: row[0].to_string(),
            pair: row[1].to_string(),
            method: row[2].to_string(),
            seed: row[3]
                .parse()
                .map_err(|e| Error::parse("trial row", line, format!("seed: {e}")))?,
            rre_deg: num(4)?,
            rte_units: num(5)?,
            rte_mm: num(6)?,
            wall_time_s: num(7)?,
            t_est,
            status: row[20].to_string(),
        };
        rec.validate().map_err(|e| Error::parse("trial row", line, e.to_string()))?;
        Ok(rec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..=180.0).contains(&self.rre_deg) || !(self.rte_units >= 0.0) || !(self.rte_mm >= 0.0) {
            return Err(Error::InvalidConfig(format!(
                "metrics out of range: rre {}, rte {}",
                self.rre_deg, self.rte_units
            )));
        }
        if self.ok() {
            let r = Matrix3::from_row_slice(&self.t_est[..9]);
            check_rotation(&r)?;
        }
        Ok(())
    }
}

/// Shortest round-trip representation.
fn fmt(v: f64) -> String {
    format!("{v:?}")
}

pub fn write_records<W: std::io::Write>(w: &mut csv::Writer<W>, records: &[TrialRecord]) -> Result<()> {
    for r in records {
        w.write_record(r.to_row())?;
    }
    Ok(())
}

pub fn read_records(path: impl AsRef<std::path::Path>) -> Result<Vec<TrialRecord>> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let mut out = Vec::new();
    for (i, row) in rdr.records().enumerate() {
        out.push(TrialRecord::from_row(&row?, i + 2)?);
    }
    Ok(out)
}

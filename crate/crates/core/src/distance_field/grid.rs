use std::io::{Read, Write};
use std::path::Path;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::DistanceField;
use crate::error::{Error, Result};
use crate::geometry::{KdIndex, Point, PointCloud};

pub const GRID_MAGIC: &[u8; 8] = b"BRGRID01";

/// Fractional grid coordinates this close to an integer are snapped onto
/// the voxel center, so that center queries return stored values exactly.
const SNAP: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GridConfig {
    pub resolution: usize,
    pub lo: f64,
    pub hi: f64,
    pub max_bytes: u64,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            resolution: 512,
            lo: -1.1,
            hi: 1.1,
            max_bytes: 2 << 30,
        }
    }
}

/// Distances to a cloud sampled at voxel centers of a cube, interpolated
/// trilinearly.
///
/// Queries outside the cube are clamped to its surface. The returned value
/// is the interpolant at the clamped point plus the distance to it, which
/// keeps the field 1-Lipschitz and points the gradient back inside.
#[derive(Clone, Debug, PartialEq)]
pub struct GridVolume {
    resolution: usize,
    lo: f64,
    hi: f64,
    values: Vec<f64>,
}

impl GridVolume {
    pub fn build(cloud: &PointCloud, config: &GridConfig) -> Result<Self> {
        let n = config.resolution;
        if n < 8 {
            return Err(Error::InvalidConfig(format!("grid resolution {n} is below 8")));
        }
        if !(config.hi > config.lo) {
            return Err(Error::InvalidConfig("grid extent is empty".into()));
        }
        let requested = (n as u64).saturating_pow(3).saturating_mul(8);
        if requested > config.max_bytes {
            return Err(Error::ResourceLimit {
                requested,
                cap: config.max_bytes,
            });
        }
        let index = KdIndex::new(cloud)?;
        let mut grid = Self {
            resolution: n,
            lo: config.lo,
            hi: config.hi,
            values: vec![0.0; n * n * n],
        };
        let h = grid.spacing();
        let (lo, res) = (grid.lo, n);
        grid.values
            .par_chunks_mut(n * n)
            .enumerate()
            .for_each(|(i, slab)| {
                let x = lo + (i as f64 + 0.5) * h;
                for j in 0..res {
                    let y = lo + (j as f64 + 0.5) * h;
                    for k in 0..res {
                        let z = lo + (k as f64 + 0.5) * h;
                        slab[j * res + k] = index.nearest(&Point::new(x, y, z)).1;
                    }
                }
            });
        Ok(grid)
    }

    pub fn resolution(&self) -> usize {
        self.resolution
    }

    pub fn extent(&self) -> (f64, f64) {
        (self.lo, self.hi)
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / self.resolution as f64
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn center(&self, i: usize, j: usize, k: usize) -> Point {
        let h = self.spacing();
        Point::new(
            self.lo + (i as f64 + 0.5) * h,
            self.lo + (j as f64 + 0.5) * h,
            self.lo + (k as f64 + 0.5) * h,
        )
    }

    pub fn value_at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.values[(i * self.resolution + j) * self.resolution + k]
    }

    /// Value, gradient and whether `q` had to be clamped into the cube.
    pub fn sample(&self, q: &Point) -> (f64, Vector3<f64>, bool) {
        let n = self.resolution;
        let h = self.spacing();
        let c_lo = self.lo + 0.5 * h;
        let c_hi = self.lo + (n as f64 - 0.5) * h;
        let clamped_q = q.map(|v| v.clamp(c_lo, c_hi));
        let clamped = clamped_q != *q;

        let mut base = [0usize; 3];
        let mut frac = [0.0; 3];
        for a in 0..3 {
            let mut u = (clamped_q[a] - c_lo) / h;
            let r = u.round();
            if (u - r).abs() < SNAP {
                u = r;
            }
            let u = u.clamp(0.0, (n - 1) as f64);
            let i0 = (u.floor() as usize).min(n - 2);
            base[a] = i0;
            frac[a] = u - i0 as f64;
        }
        let [i, j, k] = base;
        let [fx, fy, fz] = frac;
        let c = |di: usize, dj: usize, dk: usize| self.value_at(i + di, j + dj, k + dk);
        let (c000, c001, c010, c011) = (c(0, 0, 0), c(0, 0, 1), c(0, 1, 0), c(0, 1, 1));
        let (c100, c101, c110, c111) = (c(1, 0, 0), c(1, 0, 1), c(1, 1, 0), c(1, 1, 1));

        let c00 = c000 * (1.0 - fz) + c001 * fz;
        let c01 = c010 * (1.0 - fz) + c011 * fz;
        let c10 = c100 * (1.0 - fz) + c101 * fz;
        let c11 = c110 * (1.0 - fz) + c111 * fz;
        let c0 = c00 * (1.0 - fy) + c01 * fy;
        let c1 = c10 * (1.0 - fy) + c11 * fy;
        let mut value = c0 * (1.0 - fx) + c1 * fx;

        let dx = (c1 - c0) / h;
        let dy = ((c01 - c00) * (1.0 - fx) + (c11 - c10) * fx) / h;
        let dz = {
            let d00 = c001 - c000;
            let d01 = c011 - c010;
            let d10 = c101 - c100;
            let d11 = c111 - c110;
            let d0 = d00 * (1.0 - fy) + d01 * fy;
            let d1 = d10 * (1.0 - fy) + d11 * fy;
            (d0 * (1.0 - fx) + d1 * fx) / h
        };
        let mut grad = Vector3::new(dx, dy, dz);

        if clamped {
            let out = q - clamped_q;
            let dist = out.norm();
            value += dist;
            for a in 0..3 {
                if out[a] != 0.0 {
                    grad[a] = out[a] / dist;
                }
            }
        }
        (value, grad, clamped)
    }

    /// Header (magic, u64 resolution, f64 lo, f64 hi) then the values, all
    /// little-endian, x slowest and z fastest.
    pub fn write_to(&self, mut w: impl Write) -> Result<()> {
        w.write_all(GRID_MAGIC)?;
        w.write_all(&(self.resolution as u64).to_le_bytes())?;
        w.write_all(&self.lo.to_le_bytes())?;
        w.write_all(&self.hi.to_le_bytes())?;
        let mut buf = Vec::with_capacity(self.values.len() * 8);
        for v in &self.values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        w.write_all(&buf)?;
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let mut head = [0u8; 32];
        r.read_exact(&mut head)?;
        if &head[..8] != GRID_MAGIC {
            return Err(Error::parse("grid header", 0, "bad magic"));
        }
        let n = u64::from_le_bytes(head[8..16].try_into().unwrap()) as usize;
        let lo = f64::from_le_bytes(head[16..24].try_into().unwrap());
        let hi = f64::from_le_bytes(head[24..32].try_into().unwrap());
        if n < 8 || n > 4096 || !(hi > lo) {
            return Err(Error::parse("grid header", 0, format!("resolution {n}, extent [{lo}, {hi}]")));
        }
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        if bytes.len() != n * n * n * 8 {
            return Err(Error::parse(
                "grid values",
                0,
                format!("expected {} bytes, found {}", n * n * n * 8, bytes.len()),
            ));
        }
        let values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self {
            resolution: n,
            lo,
            hi,
            values,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let f = std::fs::File::create(path)?;
        self.write_to(std::io::BufWriter::new(f))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let f = std::fs::File::open(path)?;
        Self::read_from(std::io::BufReader::new(f))
    }
}

impl DistanceField for GridVolume {
    fn query(&self, q: &Point) -> f64 {
        self.sample(q).0
    }

    fn query_with_gradient(&self, q: &Point) -> (f64, Vector3<f64>) {
        let (v, g, _) = self.sample(q);
        (v, g)
    }

    fn query_batch(&self, qs: &[Point]) -> Vec<f64> {
        qs.iter().map(|q| self.sample(q).0).collect()
    }

    fn query_batch_with_gradient(&self, qs: &[Point]) -> (Vec<f64>, Vec<Vector3<f64>>) {
        qs.iter()
            .map(|q| {
                let (v, g, _) = self.sample(q);
                (v, g)
            })
            .unzip()
    }
}

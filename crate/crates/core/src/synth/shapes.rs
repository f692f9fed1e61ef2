//! Parametric surfaces sampled uniformly by area.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::geometry::Point;

/// Surfaces are built in raw units around a length scale of 200 (think
/// millimeters for a long bone).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Shape {
    /// Tapered, bent tube of oval cross-section closed by a cap at its wide
    /// end, with one off-axis bump. Has a single rigid symmetry: the
    /// identity.
    /// `length_ratio` scales the length against the radius; larger values
    /// give thinner shapes in the normalized frame.
    AsymmetricBone {
        #[serde(default = "one")]
        length_ratio: f64,
    },
    /// Open cylinder. `marker` is the height of a small bump relative to
    /// the radius; 0 makes the surface fully symmetric.
    SymmetricCylinder {
        #[serde(default)]
        marker: f64,
    },
    Sphere,
    /// Half of an open cylinder, split along its axis.
    HalfPipe,
}

fn one() -> f64 {
    1.0
}

pub const BASE_LENGTH: f64 = 200.0;
pub const SPHERE_RADIUS: f64 = 100.0;

/// A map from the unit square into space.
trait Patch {
    fn eval(&self, u: f64, v: f64) -> Point;
}

struct Tube {
    length: f64,
    radius: f64,
    taper: f64,
    /// Cross-section radius varies as `1 + ovality cos 2θ`.
    ovality: f64,
    bend: f64,
    bump: Option<Bump>,
    theta_span: f64,
}

struct Bump {
    height: f64,
    at: f64,
    theta: f64,
    width_s: f64,
    width_theta: f64,
}

impl Tube {
    fn radius_at(&self, s: f64, theta: f64) -> f64 {
        let mut r = self.radius * (1.0 + self.taper * s) * (1.0 + self.ovality * (2.0 * theta).cos());
        if let Some(b) = &self.bump {
            let mut dt = (theta - b.theta).rem_euclid(2.0 * PI);
            if dt > PI {
                dt -= 2.0 * PI;
            }
            r += b.height
                * (-((s - b.at).powi(2) / (2.0 * b.width_s.powi(2)))
                    - dt.powi(2) / (2.0 * b.width_theta.powi(2)))
                .exp();
        }
        r
    }

    fn axis_at(&self, s: f64) -> Point {
        Point::new(self.bend * self.length * s * s, 0.0, self.length * s)
    }
}

impl Patch for Tube {
    fn eval(&self, u: f64, v: f64) -> Point {
        let theta = v * self.theta_span;
        let r = self.radius_at(u, theta);
        self.axis_at(u) + Point::new(r * theta.cos(), r * theta.sin(), 0.0)
    }
}

/// Hemispherical cap closing a tube at `s = 1`.
struct Cap<'a> {
    tube: &'a Tube,
}

impl Patch for Cap<'_> {
    fn eval(&self, u: f64, v: f64) -> Point {
        let theta = v * 2.0 * PI;
        let phi = u * PI / 2.0;
        let r = self.tube.radius_at(1.0, theta);
        // Tangent of the bent axis at s = 1 is (2 bend, 0, 1) before scaling.
        let tangent = Point::new(2.0 * self.tube.bend, 0.0, 1.0).normalize();
        let ring = Point::new(theta.cos(), theta.sin(), 0.0);
        self.tube.axis_at(1.0) + r * phi.cos() * ring + r * phi.sin() * tangent
    }
}

/// Samples `n` points uniformly by area over a union of patches using
/// rejection on the numerically estimated area element.
fn sample_patches<R: Rng + ?Sized>(patches: &[&dyn Patch], n: usize, rng: &mut R) -> Vec<Point> {
    const GRID: usize = 64;
    let h = 1e-6;
    let element = |p: &dyn Patch, u: f64, v: f64| {
        let (u, v) = (u.clamp(h, 1.0 - h), v.clamp(h, 1.0 - h));
        let du = (p.eval(u + h, v) - p.eval(u - h, v)) / (2.0 * h);
        let dv = (p.eval(u, v + h) - p.eval(u, v - h)) / (2.0 * h);
        du.cross(&dv).norm()
    };
    let mut areas = Vec::new();
    let mut maxima = Vec::new();
    for p in patches {
        let mut sum = 0.0;
        let mut max: f64 = 0.0;
        for i in 0..GRID {
            for j in 0..GRID {
                let a = element(*p, (i as f64 + 0.5) / GRID as f64, (j as f64 + 0.5) / GRID as f64);
                sum += a;
                max = max.max(a);
            }
        }
        areas.push(sum / (GRID * GRID) as f64);
        maxima.push(1.25 * max);
    }
    let total: f64 = areas.iter().sum();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let mut pick = rng.random::<f64>() * total;
        let mut k = 0;
        while k + 1 < patches.len() && pick >= areas[k] {
            pick -= areas[k];
            k += 1;
        }
        let (u, v) = (rng.random::<f64>(), rng.random::<f64>());
        if rng.random::<f64>() * maxima[k] <= element(patches[k], u, v) {
            out.push(patches[k].eval(u, v));
        }
    }
    out
}

impl Shape {
    /// `n` points uniformly distributed over the surface.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Vec<Point> {
        match self {
            Shape::Sphere => (0..n)
                .map(|_| loop {
                    let g = Point::new(
                        StandardNormal.sample(rng),
                        StandardNormal.sample(rng),
                        StandardNormal.sample(rng),
                    );
                    let norm = g.norm();
                    if norm > 1e-9 {
                        break g * (SPHERE_RADIUS / norm);
                    }
                })
                .collect(),
            Shape::AsymmetricBone { length_ratio } => {
                let tube = Tube {
                    length: BASE_LENGTH * length_ratio,
                    radius: 12.0,
                    taper: 0.6,
                    ovality: 0.25,
                    bend: 0.08,
                    bump: Some(Bump {
                        height: 9.0,
                        at: 0.3,
                        theta: 0.9,
                        width_s: 0.06 / length_ratio,
                        width_theta: 0.5,
                    }),
                    theta_span: 2.0 * PI,
                };
                let cap = Cap { tube: &tube };
                sample_patches(&[&tube, &cap], n, rng)
            }
            Shape::SymmetricCylinder { marker } => {
                let radius = 30.0;
                let tube = Tube {
                    length: BASE_LENGTH,
                    radius,
                    taper: 0.0,
                    ovality: 0.0,
                    bend: 0.0,
                    bump: (*marker > 0.0).then(|| Bump {
                        height: marker * radius,
                        at: 0.8,
                        theta: 0.0,
                        width_s: 0.05,
                        width_theta: 0.3,
                    }),
                    theta_span: 2.0 * PI,
                };
                sample_patches(&[&tube], n, rng)
            }
            Shape::HalfPipe => {
                let tube = Tube {
                    length: BASE_LENGTH,
                    radius: 40.0,
                    taper: 0.0,
                    ovality: 0.0,
                    bend: 0.0,
                    bump: None,
                    theta_span: PI,
                };
                sample_patches(&[&tube], n, rng)
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sphere_points_on_radius() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in Shape::Sphere.sample(2000, &mut rng) {
            assert!((p.norm() - SPHERE_RADIUS).abs() < 1e-12);
        }
    }

    #[test]
    fn cylinder_sampling_is_uniform_by_area() {
        // For a straight cylinder the axial coordinate must be uniform.
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pts = Shape::SymmetricCylinder { marker: 0.0 }.sample(20_000, &mut rng);
        let mut bins = [0usize; 10];
        for p in &pts {
            bins[((p.z / BASE_LENGTH) * 10.0).min(9.0) as usize] += 1;
            assert!(((p.x * p.x + p.y * p.y).sqrt() - 30.0).abs() < 1e-9);
        }
        for b in bins {
            assert!((b as f64 - 2000.0).abs() < 200.0, "{bins:?}");
        }
    }

    #[test]
    fn bone_cap_gets_its_share_of_points() {
        // Cap area = 2π r² for the wide end radius 12·1.6 (bump negligible there).
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let shape = Shape::AsymmetricBone { length_ratio: 1.0 };
        let pts = shape.sample(20_000, &mut rng);
        let beyond = pts.iter().filter(|p| p.z > BASE_LENGTH + 1e-9).count();
        assert!(beyond > 0 && beyond < 20_000 / 5);
    }
}

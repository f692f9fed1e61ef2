use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::chart::ChartObjective;
use crate::distance_field::DistanceField;
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform};
use crate::neural_reg::{score_transform, Hypothesis};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeConfig {
    pub population: usize,
    /// Differential weight.
    pub f: f64,
    /// Crossover probability.
    pub cr: f64,
    pub max_generations: usize,
    /// Stop when the population's objective standard deviation is at most
    /// `atol + tol * |mean|`.
    pub tol: f64,
    pub atol: f64,
    /// Evaluate the objective on a fixed seeded subset of this many points.
    pub max_points: Option<usize>,
    pub seed: u64,
    pub parallel: bool,
}

impl Default for DeConfig {
    fn default() -> Self {
        Self {
            population: 50,
            f: 0.8,
            cr: 0.9,
            max_generations: 300,
            tol: 0.01,
            atol: 0.0,
            max_points: Some(512),
            seed: 0,
            parallel: false,
        }
    }
}

#[derive(Clone, Debug)]
pub struct DeResult {
    pub x: Vec<f64>,
    pub value: f64,
    pub generations: usize,
    pub population: Vec<Vec<f64>>,
    pub fitness: Vec<f64>,
}

/// rand/1/bin differential evolution within box `bounds`. Trial vectors of a
/// generation are all evaluated before any replacement; coordinates that
/// leave the box are redrawn uniformly inside it.
pub fn differential_evolution(
    objective: &(dyn Fn(&[f64]) -> f64 + Sync),
    bounds: &[(f64, f64)],
    config: &DeConfig,
    initial: Option<Vec<Vec<f64>>>,
) -> Result<DeResult> {
    if config.population < 4 {
        return Err(Error::InvalidConfig(format!("population {} is below 4", config.population)));
    }
    if !(config.f > 0.0 && config.f <= 2.0) || !(0.0..=1.0).contains(&config.cr) {
        return Err(Error::InvalidConfig("F must lie in (0, 2] and CR in [0, 1]".into()));
    }
    let dim = bounds.len();
    let np = config.population;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut pop: Vec<Vec<f64>> = match initial {
        Some(p) => {
            if p.len() != np || p.iter().any(|x| x.len() != dim) {
                return Err(Error::Shape("initial population does not match config".into()));
            }
            p
        }
        None => (0..np)
            .map(|_| bounds.iter().map(|&(lo, hi)| rng.random_range(lo..=hi)).collect())
            .collect(),
    };
    let evaluate = |xs: &[Vec<f64>]| -> Vec<f64> {
        if config.parallel {
            xs.par_iter().map(|x| objective(x)).collect()
        } else {
            xs.iter().map(|x| objective(x)).collect()
        }
    };
    let mut fit = evaluate(&pop);
    let mut generations = 0;
    while generations < config.max_generations {
        let mean = fit.iter().sum::<f64>() / np as f64;
        let sd = (fit.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / np as f64).sqrt();
        if sd <= config.atol + config.tol * mean.abs() {
            break;
        }
        let trials: Vec<Vec<f64>> = (0..np)
            .map(|i| {
                let mut pick = || loop {
                    let k = rng.random_range(0..np);
                    if k != i {
                        break k;
                    }
                };
                let a = pick();
                let b = loop {
                    let k = pick();
                    if k != a {
                        break k;
                    }
                };
                let c = loop {
                    let k = pick();
                    if k != a && k != b {
                        break k;
                    }
                };
                let j_rand = rng.random_range(0..dim);
                (0..dim)
                    .map(|j| {
                        if j == j_rand || rng.random::<f64>() < config.cr {
                            let v = pop[a][j] + config.f * (pop[b][j] - pop[c][j]);
                            let (lo, hi) = bounds[j];
                            if v < lo || v > hi {
                                rng.random_range(lo..=hi)
                            } else {
                                v
                            }
                        } else {
                            pop[i][j]
                        }
                    })
                    .collect()
            })
            .collect();
        let trial_fit = evaluate(&trials);
        for (i, (x, v)) in trials.into_iter().zip(trial_fit).enumerate() {
            if v <= fit[i] {
                pop[i] = x;
                fit[i] = v;
            }
        }
        generations += 1;
    }
    let mut best = 0;
    for i in 1..np {
        if fit[i] < fit[best] {
            best = i;
        }
    }
    Ok(DeResult {
        x: pop[best].clone(),
        value: fit[best],
        generations,
        population: pop,
        fitness: fit,
    })
}

/// Rotation-vector and translation bounds of the registration search.
pub fn registration_bounds() -> [(f64, f64); 6] {
    [(-PI, PI), (-PI, PI), (-PI, PI), (-1.0, 1.0), (-1.0, 1.0), (-1.0, 1.0)]
}

/// Global search for the rigid motion minimizing the mean field value of `u`.
pub fn de_register(u: &PointCloud, field: &dyn DistanceField, config: &DeConfig) -> Result<Hypothesis> {
    if !field.is_frozen() {
        return Err(Error::FieldNotFrozen);
    }
    if u.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let obj = ChartObjective::subsampled(field, u, RigidTransform::identity(), config.max_points, config.seed ^ 0xde);
    let f = |x: &[f64]| obj.value(x);
    let res = differential_evolution(&f, &registration_bounds(), config, None)?;
    let transform = obj.transform(&res.x);
    let score = score_transform(field, u.points(), &transform);
    Ok(Hypothesis { transform, score })
}

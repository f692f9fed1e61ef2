//! Multi-hypothesis rigid registration against a distance field.
//!
//! A fixed random latent vector goes through a shared tanh backbone; `H`
//! independent linear+tanh heads map the feature to a translation and a raw
//! quaternion each. All parameters are trained with Adam to minimize the
//! mean field value of the transformed partial cloud, averaged over heads.
//! The head with the lowest mean over the whole cloud wins.

use std::io::Write;
use std::path::Path;

use log::{debug, warn};
use nalgebra::{Matrix3, Vector3};
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::{icp, IcpConfig};
use crate::diffnet::{Activation, AdamConfig, AdamState, Matrix, Mlp, Tape};
use crate::distance_field::DistanceField;
use crate::error::{Error, Result};
use crate::geometry::{quat_to_matrix, quat_to_matrix_vjp, Point, PointCloud, Quaternion, RigidTransform};

/// Head outputs: translation (3) then raw quaternion (4).
const HEAD_OUT: usize = 7;
/// Raw quaternions shorter than this are treated as degenerate.
const MIN_QUAT_NORM: f64 = 1e-12;
/// Points per field call when splitting the work of one iteration.
const QUERY_CHUNK: usize = 4096;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RegConfig {
    pub heads: usize,
    pub iterations: usize,
    /// Points of the partial cloud sampled (without replacement) per
    /// iteration; capped at the cloud size.
    pub batch_size: usize,
    /// Backbone layers, 0 to 6.
    pub depth: usize,
    /// Width of the latent vector, backbone layers and head inputs.
    pub width: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    /// Split field queries across the rayon pool. Results are identical
    /// to sequential mode because every query is independent.
    pub parallel: bool,
}

impl Default for RegConfig {
    fn default() -> Self {
        Self {
            heads: 1000,
            iterations: 1000,
            batch_size: 4096,
            depth: 4,
            width: 256,
            adam: AdamConfig::default(),
            seed: 0,
            parallel: false,
        }
    }
}

impl RegConfig {
    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 {
            return Err(Error::InvalidConfig("at least one head is required".into()));
        }
        if self.depth > 6 {
            return Err(Error::InvalidConfig(format!("backbone depth {} outside [0, 6]", self.depth)));
        }
        if self.batch_size == 0 || self.width == 0 {
            return Err(Error::InvalidConfig("batch size and width must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    pub transform: RigidTransform,
    /// Mean field value of the transformed cloud.
    pub score: f64,
}

/// Batch score of every head at every iteration, row-major
/// `iterations x heads`.
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub iterations: usize,
    pub heads: usize,
    pub scores: Vec<f64>,
}

impl Trace {
    pub fn score(&self, iteration: usize, head: usize) -> f64 {
        self.scores[iteration * self.heads + head]
    }

    pub fn write_csv(&self, w: impl Write) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["iteration", "head", "score"])?;
        for it in 0..self.iterations {
            for h in 0..self.heads {
                wr.write_record([it.to_string(), h.to_string(), format!("{:?}", self.score(it, h))])?;
            }
        }
        wr.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_csv(std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}

#[derive(Clone, Debug)]
pub struct Registration {
    pub best: Hypothesis,
    pub best_index: usize,
    pub all: Vec<Hypothesis>,
    pub trace: Trace,
}

/// Loss value and gradients for one batch.
#[derive(Clone, Debug)]
pub struct LossEval {
    pub loss: f64,
    /// Mean field value of each head over the batch.
    pub head_scores: Vec<f64>,
    pub backbone_grad: Vec<f64>,
    pub heads_grad: Vec<f64>,
}

#[derive(Clone, Debug)]
pub struct NeuralRegModel {
    latent: Vec<f64>,
    backbone: Mlp,
    /// Per head: `7 x width` weights (row-major) then 7 biases.
    heads: Vec<f64>,
    n_heads: usize,
    width: usize,
    rng: ChaCha8Rng,
}

impl NeuralRegModel {
    pub fn new(config: &RegConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let w = config.width;
        let latent = (0..w).map(|_| rng.random_range(-1.0..1.0)).collect();
        let backbone = Mlp::new(&vec![w; config.depth + 1], &vec![Activation::Tanh; config.depth], &mut rng)?;
        let mut model = Self {
            latent,
            backbone,
            heads: vec![0.0; config.heads * head_len(w)],
            n_heads: config.heads,
            width: w,
            rng,
        };
        for h in 0..config.heads {
            model.randomize_head(h);
        }
        Ok(model)
    }

    pub fn head_count(&self) -> usize {
        self.n_heads
    }

    pub fn latent(&self) -> &[f64] {
        &self.latent
    }

    pub fn backbone(&self) -> &Mlp {
        &self.backbone
    }

    pub fn backbone_params_mut(&mut self) -> &mut [f64] {
        self.backbone.params_mut()
    }

    pub fn head_params(&self, h: usize) -> &[f64] {
        let n = head_len(self.width);
        &self.heads[h * n..(h + 1) * n]
    }

    pub fn head_params_mut(&mut self, h: usize) -> &mut [f64] {
        let n = head_len(self.width);
        &mut self.heads[h * n..(h + 1) * n]
    }

    pub fn heads_params(&self) -> &[f64] {
        &self.heads
    }

    fn randomize_head(&mut self, h: usize) {
        let bound = 1.0 / (self.width as f64).sqrt();
        let n = head_len(self.width);
        for p in &mut self.heads[h * n..(h + 1) * n] {
            *p = self.rng.random_range(-bound..bound);
        }
    }

    fn feature(&self) -> Vec<f64> {
        self.backbone
            .forward(&Matrix::row_vector(&self.latent))
            .expect("latent matches backbone width")
            .into_vec()
    }

    /// Tanh outputs of every head for a given feature.
    fn head_outputs(&self, feature: &[f64]) -> Vec<[f64; HEAD_OUT]> {
        let w = self.width;
        (0..self.n_heads)
            .map(|h| {
                let p = self.head_params(h);
                let mut y = [0.0; HEAD_OUT];
                for (o, yo) in y.iter_mut().enumerate() {
                    let row = &p[o * w..(o + 1) * w];
                    let z = p[HEAD_OUT * w + o] + row.iter().zip(feature).map(|(a, b)| a * b).sum::<f64>();
                    *yo = z;
                }
                crate::diffnet::tanh_in_place(&mut y);
                y
            })
            .collect()
    }

    /// Re-randomizes heads whose raw quaternion is degenerate. Returns the
    /// indices that were reset.
    fn repair_heads(&mut self) -> Vec<usize> {
        let mut reset = Vec::new();
        for _attempt in 0..100 {
            let f = self.feature();
            let bad: Vec<usize> = self
                .head_outputs(&f)
                .iter()
                .enumerate()
                .filter(|(_, y)| raw_quat(y).norm() < MIN_QUAT_NORM)
                .map(|(h, _)| h)
                .collect();
            if bad.is_empty() {
                break;
            }
            for &h in &bad {
                warn!("head {h} produced a degenerate quaternion; re-randomizing it");
                self.randomize_head(h);
            }
            reset.extend(bad);
        }
        reset.sort_unstable();
        reset.dedup();
        reset
    }

    /// The current transform of every head. Heads with a degenerate
    /// quaternion are re-randomized first.
    pub fn emit_hypotheses(&mut self) -> Result<Vec<RigidTransform>> {
        self.repair_heads();
        self.current_transforms()
    }

    fn current_transforms(&self) -> Result<Vec<RigidTransform>> {
        let f = self.feature();
        self.head_outputs(&f)
            .iter()
            .map(|y| RigidTransform::from_quaternion(&raw_quat(y), Vector3::new(y[0], y[1], y[2])))
            .collect()
    }

    /// Mean over heads of the mean field value over the batch, with
    /// gradients for every parameter.
    pub fn reg_loss(
        &self,
        u: &PointCloud,
        field: &dyn DistanceField,
        batch: &[usize],
        parallel: bool,
    ) -> Result<LossEval> {
        if batch.is_empty() {
            return Err(Error::EmptyInput);
        }
        if let Some(&i) = batch.iter().find(|&&i| i >= u.len()) {
            return Err(Error::InvalidConfig(format!("batch index {i} out of range for {} points", u.len())));
        }
        let w = self.width;
        let h_count = self.n_heads;
        let b = batch.len();

        let mut tape = Tape::new(&self.backbone);
        let xi = tape.input(Matrix::row_vector(&self.latent));
        let out = tape.forward(xi)?;
        let feature = tape.value(out).as_slice().to_vec();
        let ys = self.head_outputs(&feature);
        let mut rotations = Vec::with_capacity(h_count);
        for y in &ys {
            rotations.push(quat_to_matrix(&raw_quat(y))?);
        }
        let pts: Vec<Point> = batch.iter().map(|&i| *u.point(i)).collect();

        // Field values and gradients per head.
        let per_head = |h: usize| -> (Vec<f64>, Vec<Vector3<f64>>) {
            let r = &rotations[h];
            let t = Vector3::new(ys[h][0], ys[h][1], ys[h][2]);
            let moved: Vec<Point> = pts.iter().map(|p| r * p + t).collect();
            field.query_batch_with_gradient(&moved)
        };
        let heads_per_chunk = (QUERY_CHUNK / b).max(1);
        let run_chunk = |c: usize| -> Vec<(Vec<f64>, Vec<Vector3<f64>>)> {
            let lo = c * heads_per_chunk;
            let hi = (lo + heads_per_chunk).min(h_count);
            if hi - lo == 1 {
                return vec![per_head(lo)];
            }
            // One field call for the whole chunk, split back per head.
            let mut moved = Vec::with_capacity((hi - lo) * b);
            for h in lo..hi {
                let r = &rotations[h];
                let t = Vector3::new(ys[h][0], ys[h][1], ys[h][2]);
                moved.extend(pts.iter().map(|p| r * p + t));
            }
            let (v, g) = field.query_batch_with_gradient(&moved);
            (0..hi - lo)
                .map(|k| (v[k * b..(k + 1) * b].to_vec(), g[k * b..(k + 1) * b].to_vec()))
                .collect()
        };
        let n_chunks = h_count.div_ceil(heads_per_chunk);
        let results: Vec<(Vec<f64>, Vec<Vector3<f64>>)> = if parallel {
            (0..n_chunks).into_par_iter().map(run_chunk).collect::<Vec<_>>().concat()
        } else {
            (0..n_chunks).flat_map(run_chunk).collect()
        };

        let scale = 1.0 / (h_count as f64 * b as f64);
        let mut head_scores = Vec::with_capacity(h_count);
        let mut heads_grad = vec![0.0; self.heads.len()];
        let mut d_feature = vec![0.0; w];
        let mut loss = 0.0;
        for (h, (vals, grads)) in results.iter().enumerate() {
            if let Some(k) = vals.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteLoss(format!(
                    "field value {} for head {h} at batch point {}",
                    vals[k], batch[k]
                )));
            }
            let sum: f64 = vals.iter().sum();
            head_scores.push(sum / b as f64);
            loss += sum;

            let mut dt = Vector3::zeros();
            let mut dr = Matrix3::zeros();
            for (g, p) in grads.iter().zip(&pts) {
                dt += g;
                dr += g * p.transpose();
            }
            dt *= scale;
            dr *= scale;
            let y = &ys[h];
            let dq = quat_to_matrix_vjp(&raw_quat(y), &dr)?;
            let dy = [dt.x, dt.y, dt.z, dq[0], dq[1], dq[2], dq[3]];
            let n = head_len(w);
            let (gw, gb) = heads_grad[h * n..(h + 1) * n].split_at_mut(HEAD_OUT * w);
            let p = self.head_params(h);
            for o in 0..HEAD_OUT {
                let dz = dy[o] * (1.0 - y[o] * y[o]);
                gb[o] = dz;
                for k in 0..w {
                    gw[o * w + k] = dz * feature[k];
                    d_feature[k] += dz * p[o * w + k];
                }
            }
        }
        let loss = loss * scale;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss(format!("loss {loss}")));
        }
        let backbone_grad = tape.backward(out, &Matrix::row_vector(&d_feature))?.params;
        Ok(LossEval {
            loss,
            head_scores,
            backbone_grad,
            heads_grad,
        })
    }
}

fn head_len(width: usize) -> usize {
    HEAD_OUT * width + HEAD_OUT
}

fn raw_quat(y: &[f64; HEAD_OUT]) -> Quaternion {
    Quaternion::new(y[3], y[4], y[5], y[6])
}

/// Mean field value of `transform(points)`.
pub fn score_transform(field: &dyn DistanceField, points: &[Point], transform: &RigidTransform) -> f64 {
    let moved: Vec<Point> = points.iter().map(|p| transform.apply_point(p)).collect();
    field.query_batch(&moved).iter().sum::<f64>() / points.len() as f64
}

/// Trains a fresh model on `u` and returns the head with the lowest mean
/// field value over all of `u`.
pub fn register(u: &PointCloud, field: &dyn DistanceField, config: &RegConfig) -> Result<Registration> {
    config.validate()?;
    if !field.is_frozen() {
        return Err(Error::FieldNotFrozen);
    }
    if u.is_empty() {
        return Err(Error::EmptyCloud);
    }
    let mut model = NeuralRegModel::new(config)?;
    let mut batch_rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0xba7c_4000_0000_0000);
    let b = config.batch_size.min(u.len());
    let mut adam_backbone = AdamState::new(config.adam, model.backbone.param_count());
    let mut adam_heads = AdamState::new(config.adam, model.heads.len());
    let mut trace = Trace {
        iterations: config.iterations,
        heads: config.heads,
        scores: Vec::with_capacity(config.iterations * config.heads),
    };

    for it in 0..config.iterations {
        let reset = model.repair_heads();
        if !reset.is_empty() {
            let n = head_len(model.width);
            for h in reset {
                adam_heads.reset_range(h * n..(h + 1) * n);
            }
        }
        let mut batch = sample(&mut batch_rng, u.len(), b).into_vec();
        batch.sort_unstable();
        let eval = model.reg_loss(u, field, &batch, config.parallel)?;
        trace.scores.extend_from_slice(&eval.head_scores);
        adam_backbone.step(model.backbone.params_mut(), &eval.backbone_grad)?;
        adam_heads.step(&mut model.heads, &eval.heads_grad)?;
        if it % 100 == 0 {
            debug!("iteration {it}: loss {:.6}", eval.loss);
        }
    }

    let transforms = model.emit_hypotheses()?;
    let points = u.points();
    let scores: Vec<f64> = if config.parallel {
        transforms.par_iter().map(|t| score_transform(field, points, t)).collect()
    } else {
        transforms.iter().map(|t| score_transform(field, points, t)).collect()
    };
    let mut best_index = 0;
    for (h, s) in scores.iter().enumerate() {
        if *s < scores[best_index] {
            best_index = h;
        }
    }
    let all: Vec<Hypothesis> = transforms
        .into_iter()
        .zip(scores)
        .map(|(transform, score)| Hypothesis { transform, score })
        .collect();
    Ok(Registration {
        best: all[best_index].clone(),
        best_index,
        all,
        trace,
    })
}

/// Runs point-to-point ICP from the hypothesis. Returns the input unchanged
/// and `false` when ICP fails or does not lower the correspondence error.
pub fn refine_icp_polish(
    best: &Hypothesis,
    u: &PointCloud,
    c: &PointCloud,
    config: &IcpConfig,
) -> (RigidTransform, bool) {
    match icp(u, c, &best.transform, config) {
        Ok(res) if res.rms <= res.initial_rms => (res.transform, true),
        Ok(_) => (best.transform.clone(), false),
        Err(e) => {
            warn!("icp polish failed: {e}");
            (best.transform.clone(), false)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance_field::{DistanceField, NeuralUdf};
    use crate::synth::random_transform;

    fn random_field(seed: u64) -> NeuralUdf {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mlp = Mlp::new(
            &[3, 12, 12, 1],
            &[Activation::Tanh, Activation::Tanh, Activation::Softplus],
            &mut rng,
        )
        .unwrap();
        let mut f = NeuralUdf::new(mlp).unwrap();
        f.freeze();
        f
    }

    fn random_cloud(n: usize, seed: u64) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        PointCloud::new(
            (0..n)
                .map(|_| Point::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5)))
                .collect(),
        )
        .unwrap()
    }

    fn small(heads: usize, depth: usize, seed: u64) -> RegConfig {
        RegConfig {
            heads,
            depth,
            width: 16,
            iterations: 5,
            batch_size: 32,
            seed,
            ..Default::default()
        }
    }

    #[test]
    fn loss_matches_double_loop() {
        let field = random_field(1);
        let u = random_cloud(300, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for trial in 0..20 {
            let h = rng.random_range(1..=16);
            let b = rng.random_range(1..=256);
            let cfg = RegConfig { width: 32, ..small(h, rng.random_range(0..=3), trial) };
            let mut model = NeuralRegModel::new(&cfg).unwrap();
            let batch: Vec<usize> = (0..b).map(|_| rng.random_range(0..u.len())).collect();
            let eval = model.reg_loss(&u, &field, &batch, false).unwrap();
            let hyps = model.emit_hypotheses().unwrap();
            let mut total = 0.0;
            for t in &hyps {
                let mut inner = 0.0;
                for &i in &batch {
                    inner += field.query(&t.apply_point(u.point(i)));
                }
                total += inner / b as f64;
            }
            let naive = total / h as f64;
            assert!((eval.loss - naive).abs() < 1e-12, "{} vs {naive}", eval.loss);
        }
    }

    #[test]
    fn composed_gradient_matches_finite_differences() {
        let field = random_field(4);
        let u = random_cloud(50, 5);
        let batch: Vec<usize> = (0..20).collect();
        let mut model = NeuralRegModel::new(&small(3, 2, 6)).unwrap();
        let eval = model.reg_loss(&u, &field, &batch, false).unwrap();
        let loss = |m: &NeuralRegModel| m.reg_loss(&u, &field, &batch, false).unwrap().loss;
        let h = 1e-6;
        let check = |a: f64, fd: f64| {
            let err = (a - fd).abs();
            assert!(err <= 1e-3 * a.abs().max(fd.abs()) || err < 1e-9, "{a} vs {fd}");
        };
        for i in (0..model.backbone.param_count()).step_by(7) {
            let orig = model.backbone.params()[i];
            model.backbone.params_mut()[i] = orig + h;
            let fp = loss(&model);
            model.backbone.params_mut()[i] = orig - h;
            let fm = loss(&model);
            model.backbone.params_mut()[i] = orig;
            check(eval.backbone_grad[i], (fp - fm) / (2.0 * h));
        }
        for i in (0..model.heads.len()).step_by(5) {
            let orig = model.heads[i];
            model.heads[i] = orig + h;
            let fp = loss(&model);
            model.heads[i] = orig - h;
            let fm = loss(&model);
            model.heads[i] = orig;
            check(eval.heads_grad[i], (fp - fm) / (2.0 * h));
        }
    }

    #[test]
    fn identical_heads_give_single_head_loss() {
        let field = random_field(7);
        let u = random_cloud(100, 8);
        let batch: Vec<usize> = (0..64).collect();
        let mut two = NeuralRegModel::new(&small(2, 1, 9)).unwrap();
        let first = two.head_params(0).to_vec();
        two.head_params_mut(1).copy_from_slice(&first);
        let mut one = NeuralRegModel::new(&small(1, 1, 9)).unwrap();
        one.head_params_mut(0).copy_from_slice(&first);
        let a = two.reg_loss(&u, &field, &batch, false).unwrap().loss;
        let b = one.reg_loss(&u, &field, &batch, false).unwrap().loss;
        assert!((a - b).abs() < 1e-15);
    }

    #[test]
    fn zero_head_is_re_randomized() {
        let mut model = NeuralRegModel::new(&small(3, 0, 1)).unwrap();
        model.head_params_mut(1).fill(0.0);
        let hyps = model.emit_hypotheses().unwrap();
        assert_eq!(hyps.len(), 3);
        assert!(model.head_params(1).iter().any(|p| *p != 0.0));
        let one = NeuralRegModel::new(&small(1, 0, 2)).unwrap().emit_hypotheses().unwrap();
        assert_eq!(one.len(), 1);
    }

    #[test]
    fn heads_are_independent_without_backbone() {
        let mut model = NeuralRegModel::new(&small(5, 0, 3)).unwrap();
        let before = model.emit_hypotheses().unwrap();
        for p in model.head_params_mut(2) {
            *p *= 0.5;
        }
        let after = model.emit_hypotheses().unwrap();
        for h in 0..5 {
            assert_eq!(before[h] == after[h], h != 2);
        }
    }

    #[test]
    fn seeded_models_are_identical() {
        let a = NeuralRegModel::new(&small(16, 2, 77)).unwrap().emit_hypotheses().unwrap();
        let b = NeuralRegModel::new(&small(16, 2, 77)).unwrap().emit_hypotheses().unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.to_row_major().map(f64::to_bits), y.to_row_major().map(f64::to_bits));
        }
    }

    #[test]
    fn register_selects_the_argmin_and_traces_every_head() {
        let field = random_field(10);
        let u = random_cloud(200, 11);
        let cfg = RegConfig { iterations: 20, ..small(8, 1, 12) };
        let reg = register(&u, &field, &cfg).unwrap();
        assert_eq!(reg.trace.scores.len(), 20 * 8);
        assert!(reg.trace.scores.iter().all(|s| s.is_finite() && *s >= 0.0));
        let min = reg.all.iter().map(|h| h.score).fold(f64::INFINITY, f64::min);
        assert_eq!(reg.best.score, min);
        assert_eq!(reg.all[reg.best_index].score, min);
        let fresh = score_transform(&field, u.points(), &reg.best.transform);
        assert!((fresh - reg.best.score).abs() < 1e-9);

        let again = register(&u, &field, &cfg).unwrap();
        assert_eq!(again.best.transform, reg.best.transform);
        let par = register(&u, &field, &RegConfig { parallel: true, ..cfg.clone() }).unwrap();
        assert!((par.best.score - reg.best.score).abs() < 1e-6);

        let mut buf = Vec::new();
        reg.trace.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("iteration,head,score\n"));
        assert_eq!(text.lines().count(), 1 + 20 * 8);
    }

    #[test]
    fn training_lowers_the_loss() {
        // Distance to a fixed cloud; the partial cloud is a moved copy.
        let c = random_cloud(400, 13);
        let field = crate::distance_field::ExactField::new(&c).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let u = random_transform(0.1, &mut rng).apply(&c);
        let cfg = RegConfig { iterations: 150, batch_size: 64, adam: AdamConfig { lr: 0.01, ..Default::default() }, ..small(8, 1, 15) };
        let reg = register(&u, &field, &cfg).unwrap();
        let first: f64 = (0..8).map(|h| reg.trace.score(0, h)).sum::<f64>() / 8.0;
        let last: f64 = (0..8).map(|h| reg.trace.score(149, h)).sum::<f64>() / 8.0;
        assert!(last < first, "{last} vs {first}");
    }

    fn normalized_bone(n: usize) -> PointCloud {
        use crate::geometry::{preprocess, ScaleSource};
        use crate::synth::{generate, Shape, SynthSpec};
        let spec = SynthSpec { shape: Shape::AsymmetricBone { length_ratio: 1.0 }, c_count: n, seed: 21, ..Default::default() };
        preprocess(&generate(&spec).unwrap().c_raw, ScaleSource::Own, 1e-4).unwrap().0
    }

    fn hypothesis(t: RigidTransform) -> Hypothesis {
        Hypothesis { transform: t, score: 0.0 }
    }

    #[test]
    fn polish_keeps_an_optimal_input() {
        let c = normalized_bone(3000);
        let (t, ok) = refine_icp_polish(&hypothesis(RigidTransform::identity()), &c, &c, &IcpConfig::default());
        assert!(ok);
        assert!((t.rotation() - nalgebra::Matrix3::identity()).abs().max() < 1e-6);
        assert!(t.translation().abs().max() < 1e-6);
    }

    #[test]
    fn polish_recovers_a_small_displacement() {
        let c = normalized_bone(6000);
        let axis = nalgebra::Vector3::new(0.3, -0.5, 0.8).normalize();
        let off = RigidTransform::from_rotation_vector(&(axis * 1f64.to_radians()), nalgebra::Vector3::new(0.01, 0.0, 0.0));
        let (t, ok) = refine_icp_polish(&hypothesis(off), &c, &c, &IcpConfig::default());
        assert!(ok);
        assert!((t.rotation() - nalgebra::Matrix3::identity()).abs().max() < 1e-3);
        assert!(t.translation().abs().max() < 1e-3);
    }

    #[test]
    fn polish_flags_missing_overlap() {
        let c = normalized_bone(500);
        let far = RigidTransform::from_translation(nalgebra::Vector3::new(5.0, 0.0, 0.0));
        let (t, ok) = refine_icp_polish(&hypothesis(far.clone()), &c, &c, &IcpConfig::default());
        assert!(!ok);
        assert_eq!(t, far);
    }

    #[test]
    fn unfrozen_field_is_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mlp = Mlp::new(&[3, 4, 1], &[Activation::Tanh, Activation::Softplus], &mut rng).unwrap();
        let field = NeuralUdf::new(mlp).unwrap();
        assert!(!field.is_frozen());
        let u = random_cloud(10, 1);
        assert!(matches!(register(&u, &field, &small(2, 0, 0)), Err(Error::FieldNotFrozen)));
    }
}

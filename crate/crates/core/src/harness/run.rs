use std::fs::{self, File};
use std::io::Write;
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use log::{info, warn};
use rayon::prelude::*;

use super::config::{DatasetSource, ExperimentConfig, Method};
use super::pair::{load_pair, recenter, synthetic_pair, LoadedPair};
use crate::baselines::{bfgs_register, de_register, icp, pca_icp, IcpConfig, IcpVariant};
use crate::distance_field::{DistanceField, GridVolume, NeuralUdf};
use crate::error::{Error, Result};
use crate::geometry::{PointCloud, RigidTransform};
use crate::metrics::{pack_transform, transform_errors, TrialRecord, TRIAL_HEADER};
use crate::neural_reg::register;
use crate::synth::perturb;

/// SplitMix64 output for state `x`.
pub fn splitmix64(x: u64) -> u64 {
    let mut z = x.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of the perturbation of trial `repeat` on pair `pair`.
pub fn trial_seed(master: u64, pair: usize, repeat: usize) -> u64 {
    splitmix64(splitmix64(splitmix64(master) ^ pair as u64) ^ repeat as u64)
}

/// Seed handed to `method` within a trial.
pub fn method_seed(trial: u64, method: Method) -> u64 {
    splitmix64(trial ^ method.stream().wrapping_mul(0x0100_0000_01b3))
}

/// Fields built once per pair and shared by all trials on it.
pub struct PairFields {
    pub udf: Option<std::result::Result<NeuralUdf, String>>,
    pub grid: Option<std::result::Result<GridVolume, String>>,
}

/// Trains or builds whatever fields `methods` need.
pub fn build_fields(pair: &LoadedPair, config: &ExperimentConfig, methods: &[Method]) -> PairFields {
    let udf = methods.iter().any(|m| m.needs_udf()).then(|| {
        let t = Instant::now();
        let mut cfg = config.udf.clone();
        cfg.seed = splitmix64(config.seed ^ 0x0def);
        let res = crate::distance_field::train_udf(&pair.complete, &cfg).map(|mut f| {
            f.metadata.normalization = Some(pair.record);
            f.set_parallel(!config.sequential);
            f
        });
        info!("{}: field training took {:.1}s", pair.name, t.elapsed().as_secs_f64());
        res.map_err(|e| e.to_string())
    });
    let grid = methods.iter().any(|m| m.needs_grid()).then(|| {
        let t = Instant::now();
        let res = GridVolume::build(&pair.complete, &config.grid);
        info!("{}: grid build took {:.1}s", pair.name, t.elapsed().as_secs_f64());
        res.map_err(|e| e.to_string())
    });
    PairFields { udf, grid }
}

fn field_of<'a>(fields: &'a PairFields, method: Method) -> Result<&'a dyn DistanceField> {
    let missing = || Error::InvalidConfig(format!("no field built for {method}"));
    if method.needs_grid() {
        match fields.grid.as_ref().ok_or_else(missing)? {
            Ok(g) => Ok(g),
            Err(e) => Err(Error::InvalidConfig(format!("grid unavailable: {e}"))),
        }
    } else {
        match fields.udf.as_ref().ok_or_else(missing)? {
            Ok(f) => Ok(f),
            Err(e) => Err(Error::InvalidConfig(format!("field unavailable: {e}"))),
        }
    }
}

/// Registers `u` (already perturbed) onto the pair's complete cloud.
/// `truth` is only used by the pseudo-ground-truth method.
pub fn run_method(
    method: Method,
    u: &PointCloud,
    pair: &LoadedPair,
    fields: &PairFields,
    config: &ExperimentConfig,
    seed: u64,
    truth: &RigidTransform,
    trace_path: Option<&Path>,
) -> Result<RigidTransform> {
    let parallel = !config.sequential;
    // Field-based solvers work on a centered copy so the head and search
    // translation ranges cover the answer.
    let centered = || -> Result<(PointCloud, RigidTransform)> {
        let (uc, offset) = recenter(u)?;
        Ok((uc, RigidTransform::from_translation(-offset)))
    };
    match method {
        Method::Neural | Method::NeuralGrid => {
            let field = field_of(fields, method)?;
            let (uc, shift) = centered()?;
            let cfg = crate::neural_reg::RegConfig {
                seed,
                parallel,
                ..config.reg.clone()
            };
            let reg = register(&uc, field, &cfg)?;
            if let Some(p) = trace_path {
                reg.trace.save(p)?;
            }
            Ok(reg.best.transform.compose(&shift))
        }
        Method::Bfgs | Method::GridBfgs => {
            let field = field_of(fields, method)?;
            let (uc, shift) = centered()?;
            let cfg = crate::baselines::BfgsConfig { seed, ..config.bfgs };
            let out = bfgs_register(&uc, field, &RigidTransform::identity(), &cfg)?;
            if out.line_search_failed {
                warn!("bfgs line search failed; keeping the best point reached");
            }
            Ok(out.hypothesis.transform.compose(&shift))
        }
        Method::De => {
            let field = field_of(fields, method)?;
            let (uc, shift) = centered()?;
            let cfg = crate::baselines::DeConfig {
                seed,
                parallel,
                ..config.de
            };
            Ok(de_register(&uc, field, &cfg)?.transform.compose(&shift))
        }
        Method::IcpP2p | Method::IcpP2l => {
            let variant = if method == Method::IcpP2p {
                IcpVariant::PointToPoint
            } else {
                IcpVariant::PointToPlane
            };
            let cfg = IcpConfig { variant, ..config.icp };
            Ok(icp(u, &pair.complete, &RigidTransform::identity(), &cfg)?.transform)
        }
        Method::PcaIcp => {
            let cfg = crate::baselines::PcaIcpConfig {
                parallel,
                ..config.pca
            };
            Ok(pca_icp(u, &pair.complete, &cfg)?.transform)
        }
        Method::PseudoGt => {
            let cfg = IcpConfig {
                variant: IcpVariant::PointToPoint,
                ..config.icp
            };
            Ok(icp(u, &pair.complete, truth, &cfg)?.transform)
        }
    }
}

/// Record written when a method fails: RRE 180, RTE at the largest finite
/// value, identity transform.
pub fn failure_record(dataset: &str, pair: &str, method: Method, seed: u64, wall: f64, reason: &str) -> TrialRecord {
    let reason: String = reason.chars().map(|c| if c.is_control() { ' ' } else { c }).collect();
    TrialRecord {
        dataset: dataset.into(),
        pair: pair.into(),
        method: method.name().into(),
        seed,
        rre_deg: 180.0,
        rte_units: f64::MAX,
        rte_mm: f64::MAX,
        wall_time_s: wall,
        t_est: pack_transform(&RigidTransform::identity()),
        status: format!("failed: {reason}"),
    }
}

/// One repeat on one pair: a shared perturbation, then every method.
/// Returns records and true wall times.
pub fn run_trial(
    pair: &LoadedPair,
    fields: &PairFields,
    config: &ExperimentConfig,
    methods: &[Method],
    pair_index: usize,
    repeat: usize,
) -> Vec<(TrialRecord, f64)> {
    let seed = trial_seed(config.seed, pair_index, repeat);
    let (u_per, t_per) = perturb(&pair.partial, seed);
    let truth = pair.t_gt.compose(&t_per.inverse());
    methods
        .iter()
        .map(|&m| {
            let trace = (config.save_traces && matches!(m, Method::Neural | Method::NeuralGrid)).then(|| {
                config
                    .out_dir
                    .join("traces")
                    .join(format!("{}_{}_{}.csv", pair.name, m.name(), repeat))
            });
            let start = Instant::now();
            let out = run_method(m, &u_per, pair, fields, config, method_seed(seed, m), &truth, trace.as_deref());
            let wall = start.elapsed().as_secs_f64();
            let shown_wall = if config.sequential { 0.0 } else { wall };
            let rec = match out.and_then(|est| {
                let (rre, rte) = transform_errors(&est, &truth)?;
                Ok((est, rre, rte))
            }) {
                Ok((est, rre, rte)) => TrialRecord {
                    dataset: config.dataset.clone(),
                    pair: pair.name.clone(),
                    method: m.name().into(),
                    seed,
                    rre_deg: rre,
                    rte_units: rte,
                    rte_mm: rte * pair.record.scale,
                    wall_time_s: shown_wall,
                    t_est: pack_transform(&est),
                    status: "ok".into(),
                },
                Err(e) => {
                    warn!("{} {} repeat {repeat}: {e}", pair.name, m);
                    failure_record(&config.dataset, &pair.name, m, seed, shown_wall, &e.to_string())
                }
            };
            (rec, wall)
        })
        .collect()
}

/// Loads every pair of the configured source.
pub fn load_pairs(config: &ExperimentConfig) -> Result<Vec<LoadedPair>> {
    match &config.source {
        DatasetSource::Synthetic { specs } => specs
            .iter()
            .enumerate()
            .map(|(i, s)| synthetic_pair(&format!("synth-{i}"), s, config.voxel_size))
            .collect(),
        DatasetSource::Files { pairs } => pairs
            .iter()
            .map(|p| {
                let mut lp = load_pair(&p.complete, &p.partial, &p.ground_truth, p.raw, p.scale, config.voxel_size)?;
                lp.name = p.name.clone();
                Ok(lp)
            })
            .collect(),
    }
}

struct Sinks {
    results: csv::Writer<File>,
    timings: csv::Writer<File>,
}

impl Sinks {
    fn write(&mut self, rec: &TrialRecord, wall: f64) -> Result<()> {
        self.results.write_record(rec.to_row())?;
        self.results.flush()?;
        self.timings
            .write_record([rec.pair.as_str(), rec.method.as_str(), &rec.seed.to_string(), &format!("{wall:?}")])?;
        self.timings.flush()?;
        Ok(())
    }
}

/// Runs the full protocol and writes `results.csv` (one row per trial,
/// flushed as it completes), `timings.csv` and `config.json` into
/// `out_dir`. In sequential mode the `wall_time_s` column of
/// `results.csv` is zero so reruns are byte-identical; real times are in
/// `timings.csv` either way.
pub fn run_experiment(config: &ExperimentConfig) -> Result<Vec<TrialRecord>> {
    config.validate()?;
    fs::create_dir_all(&config.out_dir)?;
    if config.save_traces {
        fs::create_dir_all(config.out_dir.join("traces"))?;
    }
    let mut cfg_file = File::create(config.out_dir.join("config.json"))?;
    cfg_file.write_all(serde_json::to_string_pretty(config)?.as_bytes())?;

    let mut results = csv::Writer::from_path(config.out_dir.join("results.csv"))?;
    results.write_record(TRIAL_HEADER)?;
    results.flush()?;
    let mut timings = csv::Writer::from_path(config.out_dir.join("timings.csv"))?;
    timings.write_record(["pair", "method", "seed", "wall_time_s"])?;
    timings.flush()?;
    let sinks = Mutex::new(Sinks { results, timings });

    let pairs = load_pairs(config)?;
    let mut methods = config.methods.clone();
    methods.dedup();
    let mut all = Vec::new();
    for (pi, pair) in pairs.iter().enumerate() {
        info!("{}: |C| = {}, |U| = {}", pair.name, pair.complete.len(), pair.partial.len());
        let fields = build_fields(pair, config, &methods);
        if config.save_fields {
            let dir = config.out_dir.join(&pair.name);
            fs::create_dir_all(&dir)?;
            if let Some(Ok(f)) = &fields.udf {
                f.save(dir.join("udf.json"))?;
            }
            if let Some(Ok(g)) = &fields.grid {
                g.save(dir.join("grid.bin"))?;
            }
        }
        let emit = |recs: Vec<(TrialRecord, f64)>| -> Result<Vec<TrialRecord>> {
            let mut sink = sinks.lock().expect("writer lock");
            let mut out = Vec::with_capacity(recs.len());
            for (r, wall) in recs {
                sink.write(&r, wall)?;
                out.push(r);
            }
            Ok(out)
        };
        if config.sequential {
            for rep in 0..config.repeats {
                all.extend(emit(run_trial(pair, &fields, config, &methods, pi, rep))?);
            }
        } else {
            let chunks: Vec<Result<Vec<TrialRecord>>> = (0..config.repeats)
                .into_par_iter()
                .map(|rep| emit(run_trial(pair, &fields, config, &methods, pi, rep)))
                .collect();
            for c in chunks {
                all.extend(c?);
            }
        }
    }
    Ok(all)
}

/// Sorts records by pair, method and seed, the order used when comparing
/// runs whose rows were written in completion order.
pub fn canonical_order(records: &mut [TrialRecord]) {
    records.sort_by(|a, b| {
        (a.dataset.as_str(), a.pair.as_str(), a.method.as_str(), a.seed)
            .cmp(&(b.dataset.as_str(), b.pair.as_str(), b.method.as_str(), b.seed))
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::read_records;
    use crate::synth::{Shape, SynthSpec};

    fn small_config(dir: &Path, methods: Vec<Method>) -> ExperimentConfig {
        ExperimentConfig {
            source: DatasetSource::Synthetic {
                specs: vec![SynthSpec { shape: Shape::AsymmetricBone { length_ratio: 1.0 }, c_count: 3000, u_count: 1000, seed: 2, ..Default::default() }],
            },
            methods,
            repeats: 3,
            seed: 5,
            out_dir: dir.to_path_buf(),
            sequential: true,
            save_fields: false,
            ..Default::default()
        }
    }

    #[test]
    fn seeds_are_distinct_and_stable() {
        let mut seen = std::collections::HashSet::new();
        for p in 0..4 {
            for r in 0..50 {
                assert!(seen.insert(trial_seed(9, p, r)));
            }
        }
        assert_eq!(trial_seed(9, 1, 2), trial_seed(9, 1, 2));
        assert_ne!(method_seed(1, Method::Neural), method_seed(1, Method::De));
        assert_eq!(splitmix64(0), 0xe220_a839_7b1d_cdaf);
    }

    #[test]
    fn counts_and_pseudo_ground_truth() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path(), vec![Method::PseudoGt]);
        cfg.repeats = 20;
        let recs = run_experiment(&cfg).unwrap();
        assert_eq!(recs.len(), 20);
        let mean: f64 = recs.iter().map(|r| r.rre_deg).sum::<f64>() / 20.0;
        assert!(mean < 0.1, "{mean}");
        let back = read_records(dir.path().join("results.csv")).unwrap();
        assert_eq!(back, recs);
    }

    #[test]
    fn sequential_runs_are_byte_identical() {
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        let methods = vec![Method::IcpP2p, Method::PcaIcp];
        run_experiment(&small_config(a.path(), methods.clone())).unwrap();
        run_experiment(&small_config(b.path(), methods)).unwrap();
        let ra = fs::read(a.path().join("results.csv")).unwrap();
        let rb = fs::read(b.path().join("results.csv")).unwrap();
        assert_eq!(ra, rb);
    }

    #[test]
    fn failures_become_sentinel_rows() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = small_config(dir.path(), vec![Method::Neural, Method::PseudoGt]);
        // Impossible accuracy target: the field is never built.
        cfg.udf = crate::distance_field::UdfConfig {
            hidden: vec![4],
            max_steps: 2,
            eval_every: 1,
            eval_queries: 100,
            target_mae: 1e-12,
            ..Default::default()
        };
        cfg.repeats = 2;
        let recs = run_experiment(&cfg).unwrap();
        assert_eq!(recs.len(), 4);
        let failed: Vec<_> = recs.iter().filter(|r| !r.ok()).collect();
        assert_eq!(failed.len(), 2);
        for r in failed {
            assert_eq!(r.method, "neural");
            assert_eq!(r.rre_deg, 180.0);
            assert_eq!(r.rte_units, f64::MAX);
            assert!(r.status.starts_with("failed: "));
        }
        let back = read_records(dir.path().join("results.csv")).unwrap();
        assert_eq!(back.len(), 4);
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde_json::json;

use bonereg::distance_field::{train_udf, GridConfig, GridVolume, NeuralUdf, UdfConfig};
use bonereg::geometry::io::read_cloud;
use bonereg::geometry::{
    denormalize_transform, normalize_transform, preprocess, NormalizationRecord, RigidTransform, ScaleSource,
};
use bonereg::harness::{
    build_fields, method_recall, parse_methods, read_ground_truth, read_timings, run_experiment, run_method,
    write_recall, write_summary, ExperimentConfig, LoadedPair, Method, PairFields, RteUnits,
};
use bonereg::metrics::{read_records, transform_errors};
use bonereg::synth::{generate, write_fixture, SynthSpec};
use bonereg::{Error, Result};

#[derive(Parser)]
#[command(name = "bonereg", version, about = "Rigid registration of partial point clouds against distance fields")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file or directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic complete/partial pair with ground truth.
    Synth {
        #[command(flatten)]
        common: Common,
        /// File stem of the written fixture.
        #[arg(long, default_value = "synth")]
        name: String,
    },
    /// Fit a neural distance field to a cloud.
    TrainUdf {
        #[command(flatten)]
        common: Common,
        cloud: PathBuf,
        /// Normalize the cloud first (centroid and bounding-box diagonal).
        #[arg(long)]
        raw: bool,
        #[arg(long, default_value_t = 0.002)]
        voxel_size: f64,
        /// Use the small 4x32 network.
        #[arg(long)]
        compact: bool,
    },
    /// Sample a distance grid around a cloud.
    BuildGrid {
        #[command(flatten)]
        common: Common,
        cloud: PathBuf,
        #[arg(long)]
        resolution: Option<usize>,
        #[arg(long)]
        raw: bool,
        #[arg(long, default_value_t = 0.002)]
        voxel_size: f64,
    },
    /// Register one partial cloud with one method.
    Register {
        #[command(flatten)]
        common: Common,
        complete: PathBuf,
        partial: PathBuf,
        /// Ground-truth transform; enables error reporting.
        #[arg(long)]
        ground_truth: Option<PathBuf>,
        #[arg(long, default_value = "neural")]
        method: String,
        /// Prebuilt field (`.json` network or `.bin` grid).
        #[arg(long)]
        field: Option<PathBuf>,
        #[arg(long)]
        raw: bool,
    },
    /// Run the full protocol and summarize it.
    Experiment {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        sequential: bool,
        /// Comma-separated method names.
        #[arg(long)]
        methods: Option<String>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Summary table and recall curves from a results file.
    Summarize {
        #[command(flatten)]
        common: Common,
        results: PathBuf,
    },
    /// Recall curve of one method.
    RecallCurve {
        #[command(flatten)]
        common: Common,
        results: PathBuf,
        #[arg(long)]
        method: String,
        #[arg(long, value_enum, default_value_t = Units::Raw)]
        units: Units,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Units {
    Raw,
    Normalized,
}

fn load_json<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        Some(p) => Ok(serde_json::from_str(&std::fs::read_to_string(p)?)?),
        None => Ok(T::default()),
    }
}

fn out_path(common: &Common, default: &str) -> PathBuf {
    common.out.clone().unwrap_or_else(|| PathBuf::from(default))
}

fn training_cloud(path: &Path, raw: bool, voxel: f64) -> Result<(bonereg::geometry::PointCloud, Option<NormalizationRecord>)> {
    let cloud = read_cloud(path)?;
    if raw {
        let (c, rec) = preprocess(&cloud, ScaleSource::Own, voxel)?;
        Ok((c, Some(rec)))
    } else {
        Ok((cloud, None))
    }
}

fn load_field(path: &Path, fields: &mut PairFields) -> Result<()> {
    if path.extension().is_some_and(|e| e == "bin") {
        fields.grid = Some(Ok(GridVolume::load(path)?));
    } else {
        fields.udf = Some(Ok(NeuralUdf::load(path)?));
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { common, name } => {
            let mut spec: SynthSpec = load_json(common.config.as_deref())?;
            if let Some(s) = common.seed {
                spec.seed = s;
            }
            spec.validate()?;
            let pair = generate(&spec)?;
            let paths = write_fixture(out_path(&common, "."), &name, &pair, &spec)?;
            println!("{}", paths.complete.display());
            println!("{}", paths.partial.display());
            println!("{}", paths.ground_truth.display());
        }
        Command::TrainUdf { common, cloud, raw, voxel_size, compact } => {
            let mut cfg: UdfConfig = match common.config.as_deref() {
                Some(p) => load_json(Some(p))?,
                None if compact => UdfConfig::compact(),
                None => UdfConfig::default(),
            };
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            let (c, rec) = training_cloud(&cloud, raw, voxel_size)?;
            let mut udf = train_udf(&c, &cfg)?;
            udf.metadata.normalization = rec;
            let out = out_path(&common, "udf.json");
            udf.save(&out)?;
            println!(
                "{}: {} steps, mae {:.5}, near-surface mae {:.5}",
                out.display(),
                udf.metadata.steps,
                udf.metadata.uniform_mae,
                udf.metadata.near_surface_mae
            );
        }
        Command::BuildGrid { common, cloud, resolution, raw, voxel_size } => {
            let mut cfg: GridConfig = load_json(common.config.as_deref())?;
            if let Some(r) = resolution {
                cfg.resolution = r;
            }
            let (c, _) = training_cloud(&cloud, raw, voxel_size)?;
            let grid = GridVolume::build(&c, &cfg)?;
            let out = out_path(&common, "grid.bin");
            grid.save(&out)?;
            println!("{}: {}^3 voxels", out.display(), grid.resolution());
        }
        Command::Register { common, complete, partial, ground_truth, method, field, raw } => {
            let mut cfg: ExperimentConfig = load_json(common.config.as_deref())?;
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            cfg.sequential = true;
            let method: Method = method.parse()?;
            let c_raw = read_cloud(&complete)?;
            let u_raw = read_cloud(&partial)?;
            let gt = ground_truth.as_deref().map(read_ground_truth).transpose()?;
            let (c, u, c_rec, u_rec) = if raw {
                let (c, c_rec) = preprocess(&c_raw, ScaleSource::Own, cfg.voxel_size)?;
                let (u, u_rec) = preprocess(&u_raw, ScaleSource::External(&c_rec), cfg.voxel_size)?;
                (c, u, c_rec, Some(u_rec))
            } else {
                let unit = NormalizationRecord { scale: 1.0, centroid: [0.0; 3], voxel_size: 0.0 };
                (c_raw, u_raw, unit, None)
            };
            let t_gt = match (&gt, &u_rec) {
                (Some(t), Some(ur)) => normalize_transform(t, ur, &c_rec),
                (Some(t), None) => *t,
                (None, _) => RigidTransform::identity(),
            };
            if method == Method::PseudoGt && gt.is_none() {
                return Err(Error::InvalidConfig("pseudo-gt needs --ground-truth".into()));
            }
            let pair = LoadedPair { name: "pair".into(), complete: c, partial: u, t_gt, record: c_rec };
            let fields = match &field {
                Some(p) => {
                    let mut f = PairFields { udf: None, grid: None };
                    load_field(p, &mut f)?;
                    f
                }
                None => build_fields(&pair, &cfg, &[method]),
            };
            let est = run_method(method, &pair.partial, &pair, &fields, &cfg, cfg.seed, &pair.t_gt, None)?;
            let mut report = json!({ "method": method.name(), "transform": est.to_record() });
            if let Some(ur) = &u_rec {
                report["raw_transform"] = json!(denormalize_transform(&est, ur, &c_rec).to_record());
            }
            if gt.is_some() {
                let (rre, rte) = transform_errors(&est, &pair.t_gt)?;
                report["rre_deg"] = json!(rre);
                report["rte_units"] = json!(rte);
                report["rte_raw"] = json!(rte * c_rec.scale);
            }
            let text = serde_json::to_string_pretty(&report)?;
            match &common.out {
                Some(p) => std::fs::write(p, &text)?,
                None => println!("{text}"),
            }
        }
        Command::Experiment { common, sequential, methods, repeats } => {
            let mut cfg: ExperimentConfig = load_json(common.config.as_deref())?;
            if let Some(o) = common.out {
                cfg.out_dir = o;
            }
            if let Some(s) = common.seed {
                cfg.seed = s;
            }
            if let Some(m) = methods {
                cfg.methods = parse_methods(&m)?;
            }
            if let Some(r) = repeats {
                cfg.repeats = r;
            }
            cfg.sequential |= sequential;
            let records = run_experiment(&cfg)?;
            let timings = read_timings(cfg.out_dir.join("timings.csv"))?;
            let summaries = write_summary(&cfg.out_dir, &records, Some(&timings))?;
            print!("{}", bonereg::harness::format_table(&summaries));
            info!("results in {}", cfg.out_dir.display());
        }
        Command::Summarize { common, results } => {
            let records = read_records(&results)?;
            let timing_file = results.with_file_name("timings.csv");
            let timings = if timing_file.exists() { Some(read_timings(&timing_file)?) } else { None };
            let dir = common
                .out
                .unwrap_or_else(|| results.parent().map(Path::to_path_buf).unwrap_or_default());
            let summaries = write_summary(&dir, &records, timings.as_ref())?;
            print!("{}", bonereg::harness::format_table(&summaries));
        }
        Command::RecallCurve { common, results, method, units } => {
            let records = read_records(&results)?;
            let units = match units {
                Units::Raw => RteUnits::Raw,
                Units::Normalized => RteUnits::Normalized,
            };
            let curve = method_recall(&records, &method, units)?;
            match &common.out {
                Some(p) => write_recall(p, &curve)?,
                None => {
                    println!("threshold,recall");
                    for (x, r) in curve {
                        println!("{x:?},{r:?}");
                    }
                }
            }
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_) | Error::UnknownMethod(_) | Error::Json(_) => 2,
        Error::Io(_) | Error::Parse { .. } | Error::Csv(_) | Error::InvalidGroundTruth(_) => 3,
        _ => 1,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Some(n) = std::env::var("BONEREG_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("warning: {e}");
        }
    }
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}


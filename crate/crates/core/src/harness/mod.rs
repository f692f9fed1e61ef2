//! Experiment protocol: pair loading, repeated perturbed trials per method,
//! incremental CSV output and summaries.

mod config;
mod pair;
mod run;
mod summary;

pub use config::{parse_methods, DatasetSource, ExperimentConfig, Method, PairFiles};
pub use pair::{load_pair, normalize_pair, read_ground_truth, synthetic_pair, LoadedPair};
pub use run::{
    build_fields, canonical_order, failure_record, load_pairs, method_seed, run_experiment, run_method, run_trial,
    splitmix64, trial_seed, PairFields,
};
pub use summary::{
    better_icp, format_table, method_recall, read_timings, summarize, write_recall, write_summary, MethodSummary,
    RteUnits,
};

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::metrics::{recall_curve, standard_thresholds, TrialRecord};

/// Aggregate of one method's trials. Means and (population) standard
/// deviations cover successful trials only; failures are counted.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MethodSummary {
    pub method: String,
    pub trials: usize,
    pub failures: usize,
    pub rre_mean: f64,
    pub rre_std: f64,
    pub rte_units_mean: f64,
    pub rte_units_std: f64,
    pub rte_mm_mean: f64,
    pub rte_mm_std: f64,
    pub wall_time_mean: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    if v.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
    (m, var.sqrt())
}

/// Per-method summaries in method-name order. `timings` maps
/// `(pair, method, seed)` to wall time and overrides the records' own
/// column when given.
pub fn summarize(records: &[TrialRecord], timings: Option<&HashMap<(String, String, u64), f64>>) -> Result<Vec<MethodSummary>> {
    if records.is_empty() {
        return Err(Error::EmptyInput);
    }
    let mut by_method: BTreeMap<&str, Vec<&TrialRecord>> = BTreeMap::new();
    for r in records {
        by_method.entry(r.method.as_str()).or_default().push(r);
    }
    Ok(by_method
        .into_iter()
        .map(|(method, recs)| {
            let ok: Vec<&&TrialRecord> = recs.iter().filter(|r| r.ok()).collect();
            let col = |f: fn(&TrialRecord) -> f64| mean_std(&ok.iter().map(|r| f(r)).collect::<Vec<_>>());
            let (rre_mean, rre_std) = col(|r| r.rre_deg);
            let (rte_units_mean, rte_units_std) = col(|r| r.rte_units);
            let (rte_mm_mean, rte_mm_std) = col(|r| r.rte_mm);
            let walls: Vec<f64> = recs
                .iter()
                .map(|r| {
                    timings
                        .and_then(|t| t.get(&(r.pair.clone(), r.method.clone(), r.seed)).copied())
                        .unwrap_or(r.wall_time_s)
                })
                .collect();
            MethodSummary {
                method: method.to_string(),
                trials: recs.len(),
                failures: recs.len() - ok.len(),
                rre_mean,
                rre_std,
                rte_units_mean,
                rte_units_std,
                rte_mm_mean,
                rte_mm_std,
                wall_time_mean: mean_std(&walls).0,
            }
        })
        .collect())
}

/// Lower-RRE ICP variant, reported under the name `icp` when both ran.
pub fn better_icp(summaries: &[MethodSummary]) -> Option<MethodSummary> {
    let p2p = summaries.iter().find(|s| s.method == "icp-p2p")?;
    let p2l = summaries.iter().find(|s| s.method == "icp-p2l")?;
    let best = if p2l.rre_mean < p2p.rre_mean { p2l } else { p2p };
    Some(MethodSummary {
        method: "icp".into(),
        ..best.clone()
    })
}

/// Aligned text table.
pub fn format_table(summaries: &[MethodSummary]) -> String {
    let header = ["method", "trials", "failed", "RRE [deg]", "RTE [units]", "RTE [raw]", "time [s]"];
    let rows: Vec<[String; 7]> = summaries
        .iter()
        .map(|s| {
            [
                s.method.clone(),
                s.trials.to_string(),
                s.failures.to_string(),
                format!("{:.3} ± {:.3}", s.rre_mean, s.rre_std),
                format!("{:.5} ± {:.5}", s.rte_units_mean, s.rte_units_std),
                format!("{:.3} ± {:.3}", s.rte_mm_mean, s.rte_mm_std),
                format!("{:.3}", s.wall_time_mean),
            ]
        })
        .collect();
    let mut widths = header.map(|h| h.chars().count());
    for r in &rows {
        for (w, c) in widths.iter_mut().zip(r) {
            *w = (*w).max(c.chars().count());
        }
    }
    let mut out = String::new();
    let line = |cells: Vec<&str>, out: &mut String| {
        let parts: Vec<String> = cells
            .iter()
            .zip(widths)
            .enumerate()
            .map(|(i, (c, w))| {
                let pad = w - c.chars().count();
                if i == 0 {
                    format!("{c}{}", " ".repeat(pad))
                } else {
                    format!("{}{c}", " ".repeat(pad))
                }
            })
            .collect();
        let _ = writeln!(out, "{}", parts.join("  ").trim_end());
    };
    line(header.to_vec(), &mut out);
    for r in &rows {
        line(r.iter().map(String::as_str).collect(), &mut out);
    }
    out
}

/// Which translation column a recall curve thresholds.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RteUnits {
    Normalized,
    Raw,
}

/// Recall at 0, 0.5, .., 180 for the records of one method.
pub fn method_recall(records: &[TrialRecord], method: &str, units: RteUnits) -> Result<Vec<(f64, f64)>> {
    let errs: Vec<(f64, f64)> = records
        .iter()
        .filter(|r| r.method == method)
        .map(|r| {
            (
                r.rre_deg,
                match units {
                    RteUnits::Normalized => r.rte_units,
                    RteUnits::Raw => r.rte_mm,
                },
            )
        })
        .collect();
    recall_curve(&errs, &standard_thresholds())
}

pub fn write_recall(path: impl AsRef<Path>, curve: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["threshold", "recall"])?;
    for (x, r) in curve {
        w.write_record([format!("{x:?}"), format!("{r:?}")])?;
    }
    w.flush()?;
    Ok(())
}

/// Reads `timings.csv` as written by the experiment runner.
pub fn read_timings(path: impl AsRef<Path>) -> Result<HashMap<(String, String, u64), f64>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let mut out = HashMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let line = i + 2;
        if row.len() != 4 {
            return Err(Error::parse("timings", line, "expected 4 columns"));
        }
        let seed = row[2].parse().map_err(|e| Error::parse("timings", line, format!("seed: {e}")))?;
        let wall = row[3].parse().map_err(|e| Error::parse("timings", line, format!("time: {e}")))?;
        out.insert((row[0].to_string(), row[1].to_string(), seed), wall);
    }
    Ok(out)
}

/// Writes `summary.csv`, `summary.txt` and one `recall_<method>.csv` per
/// method (RTE in raw units) into `dir`.
pub fn write_summary(
    dir: impl AsRef<Path>,
    records: &[TrialRecord],
    timings: Option<&HashMap<(String, String, u64), f64>>,
) -> Result<Vec<MethodSummary>> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    let mut summaries = summarize(records, timings)?;
    if let Some(icp) = better_icp(&summaries) {
        summaries.push(icp);
    }
    let mut w = csv::Writer::from_path(dir.join("summary.csv"))?;
    for s in &summaries {
        w.serialize(s)?;
    }
    w.flush()?;
    std::fs::write(dir.join("summary.txt"), format_table(&summaries))?;
    for s in summaries.iter().filter(|s| s.method != "icp") {
        let curve = method_recall(records, &s.method, RteUnits::Raw)?;
        write_recall(dir.join(format!("recall_{}.csv", s.method)), &curve)?;
    }
    Ok(summaries)
}

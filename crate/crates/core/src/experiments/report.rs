use std::collections::BTreeMap;
use std::path::Path;

use super::exp_a::write_cdf;
use super::log::read_results;
use super::{csv_err, file_label, io_err, ExperimentError};
use crate::dataset::BasinId;
use crate::metrics::median;

/// Summary of one group of result rows. Seeds and cells are collapsed to one
/// value per basin (their median) before the group statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub experiment: String,
    pub variant: String,
    pub split: String,
    pub method: String,
    pub k: Option<usize>,
    pub metric: String,
    pub basins: usize,
    /// Rows whose score was undefined.
    pub undefined: usize,
    pub median: f64,
    pub mean: f64,
}

fn split_group(experiment: &str, split: &str) -> String {
    match experiment {
        "exp-a" if split.starts_with("OOS") => "OOS".into(),
        "exp-b" | "cross-regime" => String::new(),
        _ => split.into(),
    }
}

type GroupKey = (String, String, String, String, Option<usize>, String);

/// Aggregates every `results_*.csv` in `dir` into `report_summary.csv` plus
/// one `cdf_report_<group>.csv` per group.
pub fn report(dir: &Path) -> Result<Vec<ReportRow>, ExperimentError> {
    let mut files: Vec<_> = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.file_name()
                .and_then(|n| n.to_str())
                .is_some_and(|n| n.starts_with("results_") && n.ends_with(".csv"))
        })
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(ExperimentError::InvalidPlan(format!("no results_*.csv files in {}", dir.display())));
    }
    let mut groups: BTreeMap<GroupKey, (BTreeMap<BasinId, Vec<f64>>, usize)> = BTreeMap::new();
    for f in &files {
        for r in read_results(f)? {
            let key = (
                r.experiment.clone(),
                r.variant.clone(),
                split_group(&r.experiment, &r.split),
                r.method.clone(),
                r.k,
                r.metric.clone(),
            );
            let entry = groups.entry(key).or_default();
            if r.value.is_finite() {
                entry.0.entry(r.basin_id).or_default().push(r.value);
            } else {
                entry.1 += 1;
            }
        }
    }

    let mut rows = Vec::new();
    for ((experiment, variant, split, method, k, metric), (per_basin, undefined)) in groups {
        let values: Vec<f64> = per_basin.values().filter_map(|v| median(v)).collect();
        let k_label = k.map(|k| format!("k{k}")).unwrap_or_default();
        if !values.is_empty() {
            let label = file_label(&[&experiment, &variant, &split, &method, &k_label, &metric]);
            write_cdf(&dir.join(format!("cdf_report_{label}.csv")), &values)?;
        }
        let mean = if values.is_empty() {
            f64::NAN
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        };
        rows.push(ReportRow {
            experiment,
            variant,
            split,
            method,
            k,
            metric,
            basins: values.len(),
            undefined,
            median: median(&values).unwrap_or(f64::NAN),
            mean,
        });
    }

    let path = dir.join("report_summary.csv");
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record([
        "experiment",
        "variant",
        "split",
        "method",
        "k",
        "metric",
        "basins",
        "undefined",
        "median",
        "mean",
    ])
    .map_err(csv_err(&path))?;
    for r in &rows {
        w.write_record([
            r.experiment.clone(),
            r.variant.clone(),
            r.split.clone(),
            r.method.clone(),
            r.k.map(|k| k.to_string()).unwrap_or_default(),
            r.metric.clone(),
            r.basins.to_string(),
            r.undefined.to_string(),
            r.median.to_string(),
            r.mean.to_string(),
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(rows)
}

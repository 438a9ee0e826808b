use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::runner::{run_cells, CellSpec, RunSummary};
use super::{csv_err, file_label, io_err, CellModel, ExperimentError, Settings};
use crate::dataset::{build_folds, BasinArchive, BasinId, TableKind};
use crate::metrics::{cdf_points, ks_two_sample_with, median, pool_and_bootstrap, KsMethod};
use crate::seed::derive_seed;

pub(crate) const EXPERIMENT: &str = "exp-a";

/// Which sample the variant comparison runs on.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KsSampling {
    /// One value per basin: its median bootstrapped score.
    #[default]
    Median,
    /// Every defined bootstrap replicate of every basin.
    Replicates,
}

impl KsSampling {
    pub fn as_str(self) -> &'static str {
        match self {
            KsSampling::Median => "median",
            KsSampling::Replicates => "replicates",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpAOptions {
    pub variants: Vec<TableKind>,
    pub seeds: usize,
    pub folds: usize,
    pub bootstrap_reps: usize,
    pub bootstrap_fraction: f64,
    pub ks_sampling: KsSampling,
    pub ks_method: KsMethod,
}

impl Default for ExpAOptions {
    fn default() -> Self {
        ExpAOptions {
            variants: vec![TableKind::Attributes17, TableKind::Aef64],
            seeds: 5,
            folds: 5,
            bootstrap_reps: 100,
            bootstrap_fraction: 0.8,
            ks_sampling: KsSampling::Median,
            ks_method: KsMethod::Asymptotic,
        }
    }
}

/// Median over basins of the per-basin median bootstrapped score.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub variant: String,
    pub split: String,
    pub metric: String,
    pub median: f64,
    pub basins: usize,
    pub undefined_replicates: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct KsRow {
    pub split: String,
    pub metric: String,
    pub sampling: KsSampling,
    pub variant_x: String,
    pub variant_y: String,
    pub n_x: usize,
    pub n_y: usize,
    pub d: f64,
    pub p: f64,
}

#[derive(Debug, Clone)]
pub struct ExpAOutcome {
    pub run: RunSummary,
    pub summary: Vec<SummaryRow>,
    pub ks: Vec<KsRow>,
    /// Per (variant, split, metric): each basin's median bootstrapped score.
    pub basin_medians: BTreeMap<(String, String, String), Vec<(BasinId, f64)>>,
    /// Basins left out of the aggregation, with the reason.
    pub diagnostics: Vec<String>,
}

const GROUPS: [&str; 2] = ["IS", "OOS"];

fn group_of(split: &str) -> &'static str {
    if split == "IS" {
        "IS"
    } else {
        "OOS"
    }
}

fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(header).map_err(csv_err(path))?;
    for r in rows {
        w.write_record(r).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub(crate) fn write_cdf(path: &Path, values: &[f64]) -> Result<(), ExperimentError> {
    let rows: Vec<Vec<String>> = cdf_points(values)
        .into_iter()
        .map(|(v, f)| vec![v.to_string(), f.to_string()])
        .collect();
    write_table(path, &["value", "fraction"], &rows)
}

/// In-sample and k-fold out-of-sample training of one model per static
/// variant and seed, followed by seed-pooled bootstrap scoring, CDF export
/// and a KS comparison between variants.
///
/// Writes, under the output directory: `results_exp-a.csv`, `metrics.csv`,
/// `bootstrap.csv`, `cdf_exp-a_<variant>_<IS|OOS>_<metric>.csv`,
/// `ks_exp-a.csv` and `summary_exp-a.csv`.
pub fn run_experiment_a(
    settings: &Settings,
    opts: &ExpAOptions,
    archive: &BasinArchive,
    model: &dyn CellModel,
) -> Result<ExpAOutcome, ExperimentError> {
    if opts.variants.is_empty() || opts.seeds == 0 {
        return Err(ExperimentError::InvalidPlan("experiment A needs variants and seeds".into()));
    }
    for v in &opts.variants {
        if !matches!(v, TableKind::Attributes17 | TableKind::Aef64) {
            return Err(ExperimentError::InvalidPlan(format!("variant {v} is not an archive table")));
        }
    }
    let pool = settings.pool(archive)?;
    let folds = build_folds(
        &pool,
        opts.folds,
        derive_seed(settings.master_seed, "exp-a/folds"),
        settings.train_period,
        settings.test_period,
    )?;
    let mut splits = vec![("IS".to_owned(), pool.clone(), pool.clone())];
    for f in &folds {
        splits.push((format!("OOS-{}", f.label), f.train_basins.clone(), f.test_basins.clone()));
    }

    let mut cells = Vec::new();
    for &variant in &opts.variants {
        for (split, train, test) in &splits {
            for s in 0..opts.seeds {
                let mut train = train.clone();
                let mut test = test.clone();
                train.sort();
                test.sort();
                cells.push(CellSpec {
                    static_kind: variant,
                    split: split.clone(),
                    method: String::new(),
                    k: None,
                    seed_index: s,
                    seed: derive_seed(settings.master_seed, &format!("exp-a/{variant}/{split}/seed={s}")),
                    train_basins: train,
                    test_basins: test,
                });
            }
        }
    }
    let run = run_cells(EXPERIMENT, settings, archive, model, cells, Vec::new())?;

    // Seed runs per (variant, group, basin).
    let mut runs: BTreeMap<(String, &str, BasinId), Vec<(usize, Vec<(f64, f64)>)>> = BTreeMap::new();
    for cell in &run.cells {
        for (b, pairs) in &cell.pairs {
            runs.entry((cell.variant.clone(), group_of(&cell.split), b.clone()))
                .or_default()
                .push((cell.seed_index, pairs.clone()));
        }
    }

    let out = &settings.output_dir;
    let mut metric_rows = Vec::new();
    let mut boot_rows = Vec::new();
    let mut diagnostics = Vec::new();
    let mut basin_medians: BTreeMap<(String, String, String), Vec<(BasinId, f64)>> = BTreeMap::new();
    let mut replicates: BTreeMap<(String, String, String), Vec<f64>> = BTreeMap::new();
    let mut undefined: BTreeMap<(String, String), usize> = BTreeMap::new();
    for ((variant, group, basin), seed_runs) in &runs {
        let label = format!("{EXPERIMENT}/{variant}/{group}");
        let mut seed_runs = seed_runs.clone();
        seed_runs.sort_by_key(|(s, _)| *s);
        for (s, pairs) in &seed_runs {
            let (obs, sim): (Vec<f64>, Vec<f64>) = pairs.iter().copied().unzip();
            let n = crate::metrics::nse(&obs, &sim).unwrap_or(f64::NAN);
            let k = crate::metrics::kge(&obs, &sim).map(|k| k.kge).unwrap_or(f64::NAN);
            for (m, v) in [("nse", n), ("kge", k)] {
                metric_rows.push(vec![label.clone(), basin.to_string(), s.to_string(), m.to_owned(), v.to_string()]);
            }
        }
        let pooled: Vec<Vec<(f64, f64)>> = seed_runs.into_iter().map(|(_, p)| p).collect();
        let seed = derive_seed(settings.master_seed, &format!("exp-a/bootstrap/{variant}/{group}/{basin}"));
        let boot = match pool_and_bootstrap(&pooled, opts.bootstrap_fraction, opts.bootstrap_reps, seed) {
            Ok(b) => b,
            Err(e) => {
                diagnostics.push(format!("{label} {basin}: {e}"));
                continue;
            }
        };
        *undefined.entry((variant.clone(), group.to_string())).or_default() += boot.undefined_count();
        for (metric, scores) in [("nse", &boot.nse), ("kge", &boot.kge)] {
            for (r, v) in scores.iter().enumerate() {
                boot_rows.push(vec![
                    label.clone(),
                    basin.to_string(),
                    metric.to_owned(),
                    r.to_string(),
                    v.unwrap_or(f64::NAN).to_string(),
                ]);
            }
            let defined: Vec<f64> = scores.iter().flatten().copied().collect();
            let key = (variant.clone(), group.to_string(), metric.to_owned());
            match median(&defined) {
                Some(m) => basin_medians.entry(key.clone()).or_default().push((basin.clone(), m)),
                None => diagnostics.push(format!("{label} {basin}: every {metric} replicate undefined")),
            }
            replicates.entry(key).or_default().extend(defined);
        }
    }
    write_table(&out.join("metrics.csv"), &["experiment", "basin_id", "seed", "metric", "value"], &metric_rows)?;
    write_table(
        &out.join("bootstrap.csv"),
        &["experiment", "basin_id", "metric", "replicate", "value"],
        &boot_rows,
    )?;

    let mut summary = Vec::new();
    for ((variant, group, metric), per_basin) in &basin_medians {
        let values: Vec<f64> = per_basin.iter().map(|(_, v)| *v).collect();
        write_cdf(&out.join(format!("cdf_{}.csv", file_label(&[EXPERIMENT, variant, group, metric]))), &values)?;
        summary.push(SummaryRow {
            variant: variant.clone(),
            split: group.clone(),
            metric: metric.clone(),
            median: median(&values).unwrap_or(f64::NAN),
            basins: values.len(),
            undefined_replicates: undefined.get(&(variant.clone(), group.clone())).copied().unwrap_or(0),
        });
    }
    let summary_rows: Vec<Vec<String>> = summary
        .iter()
        .map(|s| {
            vec![
                s.variant.clone(),
                s.split.clone(),
                s.metric.clone(),
                s.median.to_string(),
                s.basins.to_string(),
                s.undefined_replicates.to_string(),
            ]
        })
        .collect();
    write_table(
        &out.join(format!("summary_{EXPERIMENT}.csv")),
        &["variant", "split", "metric", "median", "basins", "undefined_replicates"],
        &summary_rows,
    )?;

    let mut ks = Vec::new();
    for group in GROUPS {
        for metric in ["nse", "kge"] {
            for (i, x) in opts.variants.iter().enumerate() {
                for y in &opts.variants[i + 1..] {
                    let sample = |v: &TableKind| -> Vec<f64> {
                        let key = (v.label().to_owned(), group.to_owned(), metric.to_owned());
                        match opts.ks_sampling {
                            KsSampling::Median => basin_medians
                                .get(&key)
                                .map(|p| p.iter().map(|(_, m)| *m).collect())
                                .unwrap_or_default(),
                            KsSampling::Replicates => replicates.get(&key).cloned().unwrap_or_default(),
                        }
                    };
                    let (sx, sy) = (sample(x), sample(y));
                    if sx.is_empty() || sy.is_empty() {
                        diagnostics.push(format!("KS {group} {metric}: empty sample"));
                        continue;
                    }
                    let r = ks_two_sample_with(&sx, &sy, opts.ks_method)?;
                    ks.push(KsRow {
                        split: group.to_owned(),
                        metric: metric.to_owned(),
                        sampling: opts.ks_sampling,
                        variant_x: x.label().to_owned(),
                        variant_y: y.label().to_owned(),
                        n_x: sx.len(),
                        n_y: sy.len(),
                        d: r.d,
                        p: r.p,
                    });
                }
            }
        }
    }
    let ks_rows: Vec<Vec<String>> = ks
        .iter()
        .map(|k| {
            vec![
                k.split.clone(),
                k.metric.clone(),
                k.sampling.as_str().to_owned(),
                k.variant_x.clone(),
                k.variant_y.clone(),
                k.n_x.to_string(),
                k.n_y.to_string(),
                k.d.to_string(),
                k.p.to_string(),
            ]
        })
        .collect();
    write_table(
        &out.join(format!("ks_{EXPERIMENT}.csv")),
        &["split", "metric", "sampling", "variant_x", "variant_y", "n_x", "n_y", "d", "p"],
        &ks_rows,
    )?;
    for d in &diagnostics {
        settings.progress(format!("[{EXPERIMENT}] {d}"));
    }
    Ok(ExpAOutcome {
        run,
        summary,
        ks,
        basin_medians,
        diagnostics,
    })
}

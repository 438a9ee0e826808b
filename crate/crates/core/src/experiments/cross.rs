use std::collections::BTreeMap;

use super::exp_a::write_cdf;
use super::runner::{run_cells, CellSpec, RunSummary};
use super::{csv_err, file_label, io_err, static_table, CellModel, ExperimentError, Settings};
use crate::cluster::{loco_splits, select_k, KSelection, DEFAULT_RESTARTS};
use crate::dataset::{standardize_columns, BasinArchive, BasinId, TableKind};
use crate::metrics::median;
use crate::seed::derive_seed;

pub(crate) const EXPERIMENT: &str = "cross-regime";

#[derive(Debug, Clone, PartialEq)]
pub struct CrossRegimeOptions {
    /// Descriptor spaces to cluster.
    pub representations: Vec<TableKind>,
    pub k_min: usize,
    /// Capped at n − 1.
    pub k_max: usize,
    pub restarts: usize,
    pub seeds: usize,
    /// Model static input; `None` uses the clustered representation.
    pub static_input: Option<TableKind>,
}

impl Default for CrossRegimeOptions {
    fn default() -> Self {
        CrossRegimeOptions {
            representations: vec![TableKind::Attributes17, TableKind::Aef64],
            k_min: 2,
            k_max: 15,
            restarts: DEFAULT_RESTARTS,
            seeds: 1,
            static_input: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CrossRegimeOutcome {
    pub run: RunSummary,
    /// Keyed by representation label.
    pub selections: BTreeMap<String, KSelection>,
    /// Per representation: each basin's held-out NSE (median over seeds).
    pub basin_nse: BTreeMap<String, Vec<(BasinId, f64)>>,
}

/// Leave-one-cluster-out generalisation. Each representation is z-scored
/// over the pool, clustered at the silhouette-best K, and every cluster in
/// turn is held out while the rest train.
///
/// Writes `clusters_<repr>.csv`, `silhouette_profile_<repr>.csv`,
/// `results_cross-regime.csv`, `cdf_cross-regime_<repr>_nse.csv` and
/// `summary_cross-regime.csv`.
pub fn run_cross_regime(
    settings: &Settings,
    opts: &CrossRegimeOptions,
    archive: &BasinArchive,
    model: &dyn CellModel,
) -> Result<CrossRegimeOutcome, ExperimentError> {
    if opts.representations.is_empty() || opts.seeds == 0 {
        return Err(ExperimentError::InvalidPlan(
            "cross-regime needs representations and at least one seed".into(),
        ));
    }
    let pool = settings.pool(archive)?;
    let out = &settings.output_dir;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let k_max = opts.k_max.min(pool.len().saturating_sub(1));
    if k_max < opts.k_min {
        return Err(ExperimentError::InvalidPlan(format!(
            "K range {}..={} is empty for {} basins",
            opts.k_min,
            opts.k_max,
            pool.len()
        )));
    }

    let mut selections = BTreeMap::new();
    let mut cells = Vec::new();
    for &repr in &opts.representations {
        let label = repr.label().to_owned();
        let table = static_table(archive, repr)?.select(&pool)?;
        let (z, _) = standardize_columns(table.values().view(), None)?;
        let seed = derive_seed(settings.master_seed, &format!("{EXPERIMENT}/kmeans/{label}"));
        let mut sel = select_k(z.view(), &pool, opts.k_min, k_max, seed, opts.restarts)?;
        sel.model.representation = label.clone();
        sel.model.write_assignments(&out.join(format!("clusters_{label}.csv")))?;
        sel.write_profile(&out.join(format!("silhouette_profile_{label}.csv")))?;
        settings.progress(format!("[{EXPERIMENT}] {label}: K = {}", sel.best_k));
        for split in loco_splits(&sel.model, settings.train_period, settings.test_period) {
            for s in 0..opts.seeds {
                cells.push(CellSpec {
                    static_kind: opts.static_input.unwrap_or(repr),
                    split: split.label.clone(),
                    method: label.clone(),
                    k: Some(sel.best_k),
                    seed_index: s,
                    seed: derive_seed(settings.master_seed, &format!("{EXPERIMENT}/{}/seed={s}", split.label)),
                    train_basins: split.train_basins.clone(),
                    test_basins: split.test_basins.clone(),
                });
            }
        }
        selections.insert(label, sel);
    }
    let run = run_cells(EXPERIMENT, settings, archive, model, cells, Vec::new())?;

    let mut per_basin: BTreeMap<String, BTreeMap<BasinId, Vec<f64>>> = BTreeMap::new();
    for cell in &run.cells {
        for b in &cell.test_basins {
            if let Some(r) = run
                .rows
                .iter()
                .find(|r| r.cell_id == cell.cell_id && r.basin_id == *b && r.metric == "nse")
            {
                per_basin
                    .entry(cell.method.clone())
                    .or_default()
                    .entry(b.clone())
                    .or_default()
                    .push(r.value);
            }
        }
    }
    let mut basin_nse = BTreeMap::new();
    let path = out.join(format!("summary_{EXPERIMENT}.csv"));
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["representation", "k", "silhouette", "basins", "median_nse"])
        .map_err(csv_err(&path))?;
    for (label, sel) in &selections {
        let values: Vec<(BasinId, f64)> = per_basin
            .get(label)
            .map(|m| {
                m.iter()
                    .filter_map(|(b, v)| {
                        let finite: Vec<f64> = v.iter().copied().filter(|x| x.is_finite()).collect();
                        median(&finite).map(|x| (b.clone(), x))
                    })
                    .collect()
            })
            .unwrap_or_default();
        let scores: Vec<f64> = values.iter().map(|(_, v)| *v).collect();
        if !scores.is_empty() {
            write_cdf(&out.join(format!("cdf_{}.csv", file_label(&[EXPERIMENT, label, "nse"]))), &scores)?;
        }
        w.write_record([
            label.clone(),
            sel.best_k.to_string(),
            sel.model.silhouette.to_string(),
            scores.len().to_string(),
            median(&scores).unwrap_or(f64::NAN).to_string(),
        ])
        .map_err(csv_err(&path))?;
        basin_nse.insert(label.clone(), values);
    }
    w.flush().map_err(io_err(&path))?;
    Ok(CrossRegimeOutcome {
        run,
        selections,
        basin_nse,
    })
}

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::time::Instant;

use super::log::{append_line, append_results, read_results, write_results, ResultRow};
use super::{csv_err, io_err, static_table, CellModel, ExperimentError, FitOutput, FitRequest, Settings};
use crate::dataset::{BasinArchive, BasinId, TableKind};
use crate::metrics::{kge, nse};
use crate::model::{EpochRecord, ModelConfig};
use crate::seed::descriptor_hash;

pub(crate) const METRICS: [&str; 2] = ["nse", "kge"];

/// A training cell before it runs.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct CellSpec {
    pub static_kind: TableKind,
    pub split: String,
    pub method: String,
    pub k: Option<usize>,
    pub seed_index: usize,
    /// Training seed.
    pub seed: u64,
    pub train_basins: Vec<BasinId>,
    pub test_basins: Vec<BasinId>,
}

impl CellSpec {
    fn config(&self, settings: &Settings, n_static: usize) -> ModelConfig {
        ModelConfig {
            n_static,
            seed: self.seed,
            ..settings.model.clone()
        }
    }

    /// Everything that determines the fitted model and its predictions.
    fn fit_key(&self, settings: &Settings, cfg: &ModelConfig) -> String {
        let join = |v: &[BasinId]| v.iter().map(BasinId::as_str).collect::<Vec<_>>().join(",");
        format!(
            "statics={}|train={}|test={}|train_period={}|test_period={}|config={}",
            self.static_kind,
            join(&self.train_basins),
            join(&self.test_basins),
            settings.train_period,
            settings.test_period,
            serde_json::to_string(cfg).expect("config serialises"),
        )
    }

    fn descriptor(&self, experiment: &str, fit_key: &str) -> String {
        format!(
            "{experiment}|split={}|method={}|k={:?}|seed={}|{fit_key}",
            self.split, self.method, self.k, self.seed_index
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CellStatus {
    Computed,
    /// Found complete in an earlier run's results.
    Resumed,
    Failed(String),
}

/// A cell after the run, with its test-period `(obs, sim)` pairs per basin.
#[derive(Debug, Clone)]
pub struct CellRecord {
    pub cell_id: String,
    pub variant: String,
    pub split: String,
    pub method: String,
    pub k: Option<usize>,
    pub seed_index: usize,
    pub seed: u64,
    pub train_basins: Vec<BasinId>,
    pub test_basins: Vec<BasinId>,
    pub pairs: BTreeMap<BasinId, Vec<(f64, f64)>>,
    pub history: Vec<EpochRecord>,
    pub status: CellStatus,
}

/// Outcome of one driver run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub experiment: String,
    pub results_path: PathBuf,
    /// Every row of the results table after the run, canonical order.
    pub rows: Vec<ResultRow>,
    pub cells: Vec<CellRecord>,
    pub computed: usize,
    pub resumed: usize,
    pub failed: usize,
    /// Cells the plan could not form (e.g. k beyond the donor pool).
    pub skipped: Vec<String>,
}

impl RunSummary {
    pub fn ok(&self) -> bool {
        self.failed == 0
    }
}

struct Paths {
    results: PathBuf,
    timing: PathBuf,
    failures: PathBuf,
    preds: PathBuf,
    history: PathBuf,
}

impl Paths {
    fn new(out: &Path, experiment: &str) -> Result<Self, ExperimentError> {
        let base = out.join(experiment);
        let preds = base.join("preds");
        let history = base.join("history");
        for d in [&preds, &history] {
            fs::create_dir_all(d).map_err(io_err(d))?;
        }
        Ok(Paths {
            results: out.join(format!("results_{experiment}.csv")),
            timing: out.join(format!("timing_{experiment}.csv")),
            failures: out.join(format!("failures_{experiment}.csv")),
            preds,
            history,
        })
    }
}

fn read_failures(path: &Path) -> Result<BTreeMap<String, String>, ExperimentError> {
    let mut out = BTreeMap::new();
    if !path.exists() {
        return Ok(out);
    }
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        out.insert(rec[0].to_owned(), rec.get(1).unwrap_or_default().to_owned());
    }
    Ok(out)
}

fn write_preds(path: &Path, req_period: crate::Period, pairs: &BTreeMap<BasinId, Vec<(f64, f64)>>) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["basin_id", "date", "obs", "sim"]).map_err(csv_err(path))?;
    for (b, ps) in pairs {
        for (d, (o, s)) in req_period.dates().zip(ps) {
            w.write_record([b.to_string(), d.to_string(), o.to_string(), s.to_string()])
                .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(io_err(path))
}

fn read_preds(path: &Path) -> Result<BTreeMap<BasinId, Vec<(f64, f64)>>, ExperimentError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let mut out: BTreeMap<BasinId, Vec<(f64, f64)>> = BTreeMap::new();
    let bad = |reason: &str| ExperimentError::Malformed {
        path: path.to_owned(),
        reason: reason.to_owned(),
    };
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        let o: f64 = rec.get(2).ok_or_else(|| bad("short row"))?.parse().map_err(|_| bad("obs"))?;
        let s: f64 = rec.get(3).ok_or_else(|| bad("short row"))?.parse().map_err(|_| bad("sim"))?;
        out.entry(BasinId::new(&rec[0])).or_default().push((o, s));
    }
    Ok(out)
}

fn write_history(path: &Path, history: &[EpochRecord]) -> Result<(), ExperimentError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    w.write_record(["epoch", "train_loss", "val_median_nse", "windows"])
        .map_err(csv_err(path))?;
    for h in history {
        let val = h.val_median_nse.map(|v| v.to_string()).unwrap_or_default();
        w.write_record([h.epoch.to_string(), h.train_loss.to_string(), val, h.windows.to_string()])
            .map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Reads a per-cell training history written by a driver.
pub fn read_history(path: &Path) -> Result<Vec<EpochRecord>, ExperimentError> {
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let bad = || ExperimentError::Malformed {
        path: path.to_owned(),
        reason: "bad history row".into(),
    };
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec.map_err(csv_err(path))?;
        out.push(EpochRecord {
            epoch: rec[0].parse().map_err(|_| bad())?,
            train_loss: rec[1].parse().map_err(|_| bad())?,
            val_median_nse: if rec[2].is_empty() {
                None
            } else {
                Some(rec[2].parse().map_err(|_| bad())?)
            },
            windows: rec[3].parse().map_err(|_| bad())?,
        });
    }
    Ok(out)
}

fn score_rows(experiment: &str, cell_id: &str, spec: &CellSpec, pairs: &BTreeMap<BasinId, Vec<(f64, f64)>>) -> Vec<ResultRow> {
    let mut rows = Vec::new();
    for (b, ps) in pairs {
        let (obs, sim): (Vec<f64>, Vec<f64>) = ps.iter().copied().unzip();
        let values = [
            nse(&obs, &sim).unwrap_or(f64::NAN),
            kge(&obs, &sim).map(|k| k.kge).unwrap_or(f64::NAN),
        ];
        for (metric, value) in METRICS.iter().zip(values) {
            rows.push(ResultRow {
                experiment: experiment.to_owned(),
                cell_id: cell_id.to_owned(),
                variant: spec.static_kind.label().to_owned(),
                split: spec.split.clone(),
                method: spec.method.clone(),
                k: spec.k,
                seed: spec.seed_index,
                basin_id: b.clone(),
                metric: (*metric).to_owned(),
                value,
            });
        }
    }
    rows
}

fn is_complete(rows: &[&ResultRow], spec: &CellSpec) -> bool {
    let expected: BTreeSet<(&str, &str)> = spec
        .test_basins
        .iter()
        .flat_map(|b| METRICS.iter().map(move |m| (b.as_str(), *m)))
        .collect();
    let found: BTreeSet<(&str, &str)> = rows.iter().map(|r| (r.basin_id.as_str(), r.metric.as_str())).collect();
    rows.len() == expected.len() && found == expected
}

struct Shared {
    rows: BTreeMap<String, Vec<ResultRow>>,
}

/// Runs `cells`, skipping any whose rows are already complete in the results
/// table and any recorded as failed. Cells that share a fit key (same
/// statics, donors, test basins, periods and config) are fitted once.
pub(crate) fn run_cells(
    experiment: &str,
    settings: &Settings,
    archive: &BasinArchive,
    model: &dyn CellModel,
    cells: Vec<CellSpec>,
    skipped: Vec<String>,
) -> Result<RunSummary, ExperimentError> {
    fs::create_dir_all(&settings.output_dir).map_err(io_err(&settings.output_dir))?;
    let paths = Paths::new(&settings.output_dir, experiment)?;
    let failures = read_failures(&paths.failures)?;
    let mut by_cell: BTreeMap<String, Vec<ResultRow>> = BTreeMap::new();
    for row in read_results(&paths.results)? {
        by_cell.entry(row.cell_id.clone()).or_default().push(row);
    }

    let mut prepared = Vec::with_capacity(cells.len());
    let mut seen = BTreeSet::new();
    for spec in cells {
        let statics = static_table(archive, spec.static_kind)?;
        let cfg = spec.config(settings, statics.width());
        let fit_key = spec.fit_key(settings, &cfg);
        let id = descriptor_hash(&spec.descriptor(experiment, &fit_key));
        if !seen.insert(id.clone()) {
            return Err(ExperimentError::InvalidPlan(format!("duplicate cell {id}")));
        }
        prepared.push((spec, cfg, fit_key, id));
    }

    let shared = Mutex::new(Shared { rows: by_cell });
    let cache: Mutex<HashMap<String, Arc<FitOutput>>> = Mutex::new(HashMap::new());
    let records: Vec<Mutex<Option<CellRecord>>> = prepared.iter().map(|_| Mutex::new(None)).collect();
    let fatal: Mutex<Option<ExperimentError>> = Mutex::new(None);
    let next = AtomicUsize::new(0);
    let total = prepared.len();

    let work = |i: usize| -> Result<CellRecord, ExperimentError> {
        let (spec, cfg, fit_key, id) = &prepared[i];
        let preds_path = paths.preds.join(format!("{id}.csv"));
        let history_path = paths.history.join(format!("{id}.csv"));
        let mut record = CellRecord {
            cell_id: id.clone(),
            variant: spec.static_kind.label().to_owned(),
            split: spec.split.clone(),
            method: spec.method.clone(),
            k: spec.k,
            seed_index: spec.seed_index,
            seed: spec.seed,
            train_basins: spec.train_basins.clone(),
            test_basins: spec.test_basins.clone(),
            pairs: BTreeMap::new(),
            history: Vec::new(),
            status: CellStatus::Resumed,
        };
        let label = format!(
            "[{experiment} {}/{total}] {} {} {}{}seed {}",
            i + 1,
            record.variant,
            record.split,
            if record.method.is_empty() { String::new() } else { format!("{} ", record.method) },
            record.k.map(|k| format!("k={k} ")).unwrap_or_default(),
            record.seed_index
        );
        if let Some(msg) = failures.get(id) {
            settings.progress(format!("{label}: failed earlier ({msg}), skipped"));
            record.status = CellStatus::Failed(msg.clone());
            return Ok(record);
        }
        let complete = {
            let guard = shared.lock().expect("results lock");
            let rows: Vec<&ResultRow> = guard.rows.get(id).map(|r| r.iter().collect()).unwrap_or_default();
            is_complete(&rows, spec) && preds_path.exists()
        };
        if complete {
            record.pairs = read_preds(&preds_path)?;
            if history_path.exists() {
                record.history = read_history(&history_path)?;
            }
            settings.progress(format!("{label}: resumed"));
            return Ok(record);
        }

        let started = Instant::now();
        let cached = cache.lock().expect("cache lock").get(fit_key).cloned();
        let output = match cached {
            Some(out) => Ok(out),
            None => {
                let statics = static_table(archive, spec.static_kind)?;
                let req = FitRequest {
                    archive,
                    statics,
                    config: cfg,
                    train_basins: &spec.train_basins,
                    test_basins: &spec.test_basins,
                    train_period: settings.train_period,
                    test_period: settings.test_period,
                };
                model.fit_predict(&req).map(|out| {
                    let out = Arc::new(out);
                    cache.lock().expect("cache lock").insert(fit_key.clone(), Arc::clone(&out));
                    out
                })
            }
        };
        let output = match output {
            Ok(o) => o,
            Err(e) => {
                let msg = e.to_string();
                settings.progress(format!("{label}: failed: {msg}"));
                let _guard = shared.lock().expect("results lock");
                append_line(&paths.failures, "cell_id,error", &format!("{id},\"{}\"", msg.replace('"', "'")))?;
                record.status = CellStatus::Failed(msg);
                return Ok(record);
            }
        };
        for b in &spec.test_basins {
            let sim = output.predictions.get(b).ok_or_else(|| {
                ExperimentError::InvalidPlan(format!("model returned no prediction for {b}"))
            })?;
            let obs: Vec<f64> = settings.test_period.dates().map(|d| archive.flow_on(b, d)).collect();
            if sim.len() != obs.len() {
                return Err(ExperimentError::InvalidPlan(format!(
                    "prediction for {b} has {} days, test period has {}",
                    sim.len(),
                    obs.len()
                )));
            }
            record.pairs.insert(b.clone(), obs.into_iter().zip(sim.iter().copied()).collect());
        }
        record.history = output.history.clone();
        write_preds(&preds_path, settings.test_period, &record.pairs)?;
        write_history(&history_path, &record.history)?;
        let rows = score_rows(experiment, id, spec, &record.pairs);
        let secs = started.elapsed().as_secs_f64();
        {
            let mut guard = shared.lock().expect("results lock");
            append_results(&paths.results, &rows)?;
            append_line(
                &paths.timing,
                "cell_id,wall_seconds,completed_at",
                &format!("{id},{secs:.3},{}", chrono::Utc::now().to_rfc3339()),
            )?;
            guard.rows.insert(id.clone(), rows);
        }
        record.status = CellStatus::Computed;
        settings.progress(format!("{label}: done in {secs:.1} s"));
        Ok(record)
    };

    let worker = || loop {
        if fatal.lock().expect("fatal lock").is_some() {
            break;
        }
        let i = next.fetch_add(1, Ordering::SeqCst);
        if i >= total {
            break;
        }
        match work(i) {
            Ok(rec) => *records[i].lock().expect("record lock") = Some(rec),
            Err(e) => {
                fatal.lock().expect("fatal lock").get_or_insert(e);
            }
        }
    };
    let jobs = settings.jobs.clamp(1, total.max(1));
    if jobs == 1 {
        worker();
    } else {
        std::thread::scope(|s| {
            for _ in 0..jobs {
                s.spawn(worker);
            }
        });
    }

    let shared = shared.into_inner().expect("results lock");
    let rows: Vec<ResultRow> = shared.rows.into_values().flatten().collect();
    write_results(&paths.results, &rows)?;
    if let Some(e) = fatal.into_inner().expect("fatal lock") {
        return Err(e);
    }
    let cells: Vec<CellRecord> = records
        .into_iter()
        .map(|m| m.into_inner().expect("record lock").expect("every cell ran"))
        .collect();
    let count = |f: fn(&CellStatus) -> bool| cells.iter().filter(|c| f(&c.status)).count();
    let mut rows = read_results(&paths.results)?;
    super::log::sort_rows(&mut rows);
    for s in &skipped {
        settings.progress(format!("[{experiment}] skipped: {s}"));
    }
    Ok(RunSummary {
        experiment: experiment.to_owned(),
        results_path: paths.results,
        rows,
        computed: count(|s| *s == CellStatus::Computed),
        resumed: count(|s| *s == CellStatus::Resumed),
        failed: count(|s| matches!(s, CellStatus::Failed(_))),
        cells,
        skipped,
    })
}

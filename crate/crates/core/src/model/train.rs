use chrono::{Duration, NaiveDate};
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{adam_step, forward_series, init_params, loss_and_grad, AdamState, FrontendMode, ModelConfig, ModelError, ParamSet, Sample};
use crate::dataset::{
    BasinArchive, BasinId, ColumnStats, DataError, Period, StaticTable, TableKind, TimeSeriesFrame, FLOW_COLUMN,
    FORCING_COLUMNS,
};
use crate::metrics::{median, nse_pairs};
use crate::seed::{derive_seed, rng_from};

/// Per-epoch training summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// Median over donors of NSE on the validation slice.
    pub val_median_nse: Option<f64>,
    pub windows: usize,
}

/// Best-epoch snapshot plus everything needed to apply it to new basins.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedModel {
    pub config: ModelConfig,
    pub params: ParamSet,
    /// 1-based epoch whose parameters are kept.
    pub best_epoch: usize,
    pub forcing_stats: ColumnStats,
    pub static_stats: ColumnStats,
    pub flow_stats: ColumnStats,
    pub static_kind: TableKind,
    pub donors: Vec<BasinId>,
    pub history: Vec<EpochRecord>,
}

/// Standardised inputs for one basin, aligned on its forcing dates.
struct BasinData {
    start: NaiveDate,
    forcing: Array2<f64>,
    /// `bad[i]` counts rows before `i` holding a missing forcing value.
    bad: Vec<usize>,
    statics: Array1<f64>,
    flow: Vec<f64>,
}

impl BasinData {
    fn index(&self, date: NaiveDate) -> Option<usize> {
        let i = (date - self.start).num_days();
        (i >= 0 && (i as usize) < self.forcing.nrows()).then_some(i as usize)
    }

    fn window_ok(&self, end: usize, seq: usize) -> bool {
        end + 1 >= seq && self.bad[end + 1] == self.bad[end + 1 - seq]
    }

    fn window(&self, end: usize, seq: usize) -> ArrayView2<'_, f64> {
        self.forcing.slice(s![end + 1 - seq..=end, ..])
    }
}

fn forcing_columns<'a>(frame: &'a TimeSeriesFrame, basin: &BasinId) -> Result<Vec<&'a [f64]>, ModelError> {
    FORCING_COLUMNS
        .iter()
        .map(|name| {
            frame.column(name).ok_or_else(|| {
                ModelError::Data(DataError::MissingColumn {
                    path: format!("forcings/{basin}.csv").into(),
                    column: (*name).to_owned(),
                })
            })
        })
        .collect()
}

/// Fits one column's stats over several value slices.
fn fit_column<'a>(slices: impl Iterator<Item = &'a [f64]>) -> (f64, f64) {
    let st = ColumnStats::fit(1, slices.flat_map(|s| s.iter()).map(std::slice::from_ref));
    (st.mean[0], st.std[0])
}

fn period_range(frame: &TimeSeriesFrame, basin: &BasinId, period: &Period) -> Result<(usize, usize), ModelError> {
    match (frame.index_of(period.start), frame.index_of(period.end)) {
        (Some(a), Some(b)) => Ok((a, b)),
        _ => Err(ModelError::Data(DataError::Coverage {
            basin: basin.clone(),
            start: period.start,
            end: period.end,
        })),
    }
}

fn static_row(table: &StaticTable, basin: &BasinId, stats: &ColumnStats) -> Result<Array1<f64>, ModelError> {
    let row = table.row(basin).ok_or_else(|| ModelError::UnknownBasin(basin.clone()))?;
    Ok(Array1::from_iter(row.iter().enumerate().map(|(j, &x)| stats.apply(j, x))))
}

fn standardise_forcing(cols: &[&[f64]], range: std::ops::Range<usize>, stats: &ColumnStats) -> (Array2<f64>, Vec<usize>) {
    let n = range.len();
    let mut out = Array2::zeros((n, cols.len()));
    let mut bad = vec![0usize; n + 1];
    for (r, i) in range.enumerate() {
        let mut missing = false;
        for (j, col) in cols.iter().enumerate() {
            let x = col[i];
            missing |= x.is_nan();
            out[[r, j]] = if x.is_nan() { f64::NAN } else { stats.apply(j, x) };
        }
        bad[r + 1] = bad[r] + usize::from(missing);
    }
    (out, bad)
}

fn check_shapes(cfg: &ModelConfig, statics: &StaticTable) -> Result<(), ModelError> {
    cfg.validate()?;
    if cfg.n_dyn != FORCING_COLUMNS.len() {
        return Err(ModelError::InvalidConfig(format!(
            "n_dyn is {} but archives carry {} forcings",
            cfg.n_dyn,
            FORCING_COLUMNS.len()
        )));
    }
    if cfg.n_static != statics.width() {
        return Err(ModelError::InvalidConfig(format!(
            "n_static is {} but the {} table has {} columns",
            cfg.n_static,
            statics.kind(),
            statics.width()
        )));
    }
    Ok(())
}

/// [`train_with`] without progress reporting.
pub fn train(
    cfg: &ModelConfig,
    archive: &BasinArchive,
    statics: &StaticTable,
    donors: &[BasinId],
    train_period: Period,
) -> Result<TrainedModel, ModelError> {
    train_with(cfg, archive, statics, donors, train_period, &mut |_| {})
}

/// Trains on all donors jointly and returns the best-epoch snapshot.
///
/// Standardisation stats come from donor data in the train period. The final
/// `validation_fraction` of the period is held out from gradient updates and
/// scores each epoch by median per-donor NSE. Windows are drawn without
/// replacement in an order shuffled per epoch.
pub fn train_with(
    cfg: &ModelConfig,
    archive: &BasinArchive,
    statics: &StaticTable,
    donors: &[BasinId],
    train_period: Period,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainedModel, ModelError> {
    check_shapes(cfg, statics)?;
    let mut donors = donors.to_vec();
    donors.sort();
    donors.dedup();
    if donors.is_empty() {
        return Err(ModelError::NoTrainingWindows);
    }
    let (fit_part, val_part) = train_period.split_tail(cfg.validation_fraction);
    let fit_part = fit_part.ok_or_else(|| {
        ModelError::InvalidConfig(format!("train period {train_period} too short to hold out a validation slice"))
    })?;

    // Stats over donor data in the train period.
    let mut frames = Vec::with_capacity(donors.len());
    for b in &donors {
        let frame = archive.forcing(b)?;
        let (a, z) = period_range(frame, b, &train_period)?;
        frames.push((frame, forcing_columns(frame, b)?, a, z));
    }
    let mut forcing_stats = ColumnStats {
        mean: Vec::new(),
        std: Vec::new(),
    };
    for j in 0..cfg.n_dyn {
        let (m, sd) = fit_column(frames.iter().map(|(_, cols, a, z)| &cols[j][*a..=*z]));
        forcing_stats.mean.push(m);
        forcing_stats.std.push(sd);
    }
    let flows: Vec<Vec<f64>> = donors
        .iter()
        .zip(&frames)
        .map(|(b, (frame, _, a, z))| frame.dates().skip(*a).take(z + 1 - a).map(|d| archive.flow_on(b, d)).collect())
        .collect();
    let (fm, fsd) = fit_column(flows.iter().map(Vec::as_slice));
    let flow_stats = ColumnStats {
        mean: vec![fm],
        std: vec![fsd],
    };
    let donor_rows: Vec<Vec<f64>> = donors
        .iter()
        .map(|b| {
            statics
                .row(b)
                .map(|r| r.to_vec())
                .ok_or_else(|| ModelError::UnknownBasin(b.clone()))
        })
        .collect::<Result<_, _>>()?;
    let static_stats = ColumnStats::fit(cfg.n_static, donor_rows.iter().map(Vec::as_slice));

    // Standardised data from the first possible window start to the period end.
    let seq = cfg.seq_len;
    let mut data = Vec::with_capacity(donors.len());
    for (b, (frame, cols, a, z)) in donors.iter().zip(&frames) {
        let first = a.saturating_sub(seq - 1);
        let (forcing, bad) = standardise_forcing(cols, first..z + 1, &forcing_stats);
        let start = frame.start() + Duration::days(first as i64);
        let flow = (first..=*z)
            .map(|i| {
                let q = archive.flow_on(b, frame.start() + Duration::days(i as i64));
                if q.is_nan() {
                    f64::NAN
                } else {
                    flow_stats.apply(0, q)
                }
            })
            .collect();
        data.push(BasinData {
            start,
            forcing,
            bad,
            statics: static_row(statics, b, &static_stats)?,
            flow,
        });
    }

    let windows_in = |period: &Period| -> Vec<Vec<usize>> {
        data.iter()
            .map(|d| {
                let (Some(a), Some(z)) = (d.index(period.start), d.index(period.end)) else {
                    return Vec::new();
                };
                (a..=z).filter(|&i| !d.flow[i].is_nan() && d.window_ok(i, seq)).collect()
            })
            .collect()
    };
    let fit_windows: Vec<(usize, usize)> = windows_in(&fit_part)
        .into_iter()
        .enumerate()
        .flat_map(|(b, ends)| ends.into_iter().map(move |e| (b, e)))
        .collect();
    if fit_windows.is_empty() {
        return Err(ModelError::NoTrainingWindows);
    }
    let val_windows = windows_in(&val_part);

    let mut params = init_params(cfg, cfg.seed)?;
    let mut adam = AdamState::new(&params);
    let mut best = (f64::NEG_INFINITY, 0usize, params.clone());
    let mut history = Vec::with_capacity(cfg.epochs);
    let per_epoch = cfg.max_windows_per_epoch.unwrap_or(usize::MAX).min(fit_windows.len());
    let keep = 1.0 - cfg.dropout;

    for epoch in 1..=cfg.epochs {
        let mut rng = rng_from(derive_seed(cfg.seed, &format!("epoch/{epoch}")));
        let mut order = fit_windows.clone();
        order.shuffle(&mut rng);
        order.truncate(per_epoch);
        let mut total = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<Sample<'_>> = chunk
                .iter()
                .map(|&(b, e)| Sample {
                    window: data[b].window(e, seq),
                    statics: data[b].statics.view(),
                    target: data[b].flow[e],
                })
                .collect();
            let masks: Option<Vec<Vec<f64>>> = (cfg.dropout > 0.0).then(|| {
                chunk
                    .iter()
                    .map(|_| {
                        (0..cfg.hidden)
                            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
                            .collect()
                    })
                    .collect()
            });
            let (loss, grads) = loss_and_grad(&params, &batch, masks.as_deref())?;
            if !loss.is_finite() {
                return Err(ModelError::Diverged { epoch, loss });
            }
            adam_step(&mut params, &mut adam, &grads, cfg.learning_rate)?;
            total += loss * chunk.len() as f64;
        }
        let train_loss = total / order.len() as f64;
        if !params.is_finite() {
            return Err(ModelError::Diverged { epoch, loss: train_loss });
        }

        let mut scores = Vec::new();
        for (d, ends) in data.iter().zip(&val_windows) {
            let sims = forward_series(&params, d.forcing.view(), d.statics.view(), seq, ends)?;
            let pairs: Vec<(f64, f64)> = ends.iter().map(|&e| d.flow[e]).zip(sims).collect();
            if let Ok(v) = nse_pairs(&pairs) {
                scores.push(v);
            }
        }
        let val_median_nse = median(&scores);
        let record = EpochRecord {
            epoch,
            train_loss,
            val_median_nse,
            windows: order.len(),
        };
        on_epoch(&record);
        history.push(record);
        // without a scorable validation slice fall back to training loss
        let score = val_median_nse.unwrap_or(-train_loss);
        if score > best.0 || epoch == 1 {
            best = (score, epoch, params.clone());
        }
    }

    Ok(TrainedModel {
        config: cfg.clone(),
        params: best.2,
        best_epoch: best.1,
        forcing_stats,
        static_stats,
        flow_stats,
        static_kind: statics.kind(),
        donors,
        history,
    })
}

/// Simulated flow (mm/day) for every day of `period`, each day predicted from
/// the window ending on it. Dropout is off.
pub fn predict(
    model: &TrainedModel,
    archive: &BasinArchive,
    statics: &StaticTable,
    basin: &BasinId,
    period: Period,
) -> Result<TimeSeriesFrame, ModelError> {
    if statics.kind() != model.static_kind {
        return Err(ModelError::StaticKindMismatch {
            expected: model.static_kind,
            found: statics.kind(),
        });
    }
    let seq = model.config.seq_len;
    let frame = archive.forcing(basin)?;
    let (a, z) = period_range(frame, basin, &period)?;
    if a + 1 < seq {
        return Err(ModelError::InsufficientWarmup {
            basin: basin.clone(),
            date: period.start,
            needed: seq - 1,
        });
    }
    let cols = forcing_columns(frame, basin)?;
    let first = a + 1 - seq;
    let (forcing, _) = standardise_forcing(&cols, first..z + 1, &model.forcing_stats);
    let s = static_row(statics, basin, &model.static_stats)?;
    let ends: Vec<usize> = (seq - 1..forcing.nrows()).collect();
    let sim = forward_series(&model.params, forcing.view(), s.view(), seq, &ends)
        .map_err(|e| match e {
            ModelError::MissingForcingInWindow => ModelError::Data(DataError::MissingForcing {
                basin: basin.clone(),
                date: period.start,
            }),
            other => other,
        })?
        .into_iter()
        .map(|y| model.flow_stats.invert(0, y))
        .collect();
    Ok(TimeSeriesFrame::new(period.start, vec![(FLOW_COLUMN.to_owned(), sim)])?)
}

/// Simulated flow from raw arrays: `forcing` is T×n_dyn in archive units and
/// column order, `statics` the basin's unstandardised descriptor row. Returns
/// one value per row from `seq_len - 1` on.
pub fn predict_raw(
    model: &TrainedModel,
    forcing: ArrayView2<'_, f64>,
    statics: ArrayView1<'_, f64>,
) -> Result<Vec<f64>, ModelError> {
    let seq = model.config.seq_len;
    if forcing.ncols() != model.config.n_dyn || statics.len() != model.static_stats.width() {
        return Err(ModelError::ShapeMismatch {
            expected: format!("T×{} forcing and {} statics", model.config.n_dyn, model.static_stats.width()),
            found: format!("{}×{} and {}", forcing.nrows(), forcing.ncols(), statics.len()),
        });
    }
    if forcing.nrows() < seq {
        return Err(ModelError::ShapeMismatch {
            expected: format!("at least {seq} forcing rows"),
            found: forcing.nrows().to_string(),
        });
    }
    let cols: Vec<Vec<f64>> = forcing.columns().into_iter().map(|c| c.to_vec()).collect();
    let refs: Vec<&[f64]> = cols.iter().map(Vec::as_slice).collect();
    let (x, _) = standardise_forcing(&refs, 0..forcing.nrows(), &model.forcing_stats);
    let s = Array1::from_iter(statics.iter().enumerate().map(|(j, &v)| model.static_stats.apply(j, v)));
    let ends: Vec<usize> = (seq - 1..x.nrows()).collect();
    Ok(forward_series(&model.params, x.view(), s.view(), seq, &ends)?
        .into_iter()
        .map(|y| model.flow_stats.invert(0, y))
        .collect())
}

/// Front-end output for each basin of `table`: standardise with the model's
/// static stats, then apply the attr-fc layer including its tanh.
pub fn extract_fusion_embeddings(model: &TrainedModel, table: &StaticTable) -> Result<StaticTable, ModelError> {
    if model.params.layout.mode != FrontendMode::AttrFc {
        return Err(ModelError::NotAttrFc);
    }
    if table.kind() != model.static_kind {
        return Err(ModelError::StaticKindMismatch {
            expected: model.static_kind,
            found: table.kind(),
        });
    }
    let width = model.params.layout.front;
    let fw = model.params.front_w();
    let fb = model.params.front_b();
    let mut values = Array2::zeros((table.n_basins(), width));
    for (i, b) in table.basins().iter().enumerate() {
        let s = static_row(table, b, &model.static_stats)?;
        let e = (fw.dot(&s) + fb).mapv(f64::tanh);
        values.row_mut(i).assign(&e);
    }
    let columns = (0..width).map(|j| format!("f{j:02}")).collect();
    Ok(StaticTable::new(TableKind::FusionEmbedding, table.basins().to_vec(), columns, values)?)
}

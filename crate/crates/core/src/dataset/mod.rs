//! Basin archive data types, CSV ingestion, feature standardisation, splits and
//! synthetic fleets.

mod folds;
mod io;
mod synthetic;
mod transform;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;

use chrono::{Duration, NaiveDate};
use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

pub use folds::build_folds;
pub use io::{
    load_archive, load_archive_from, load_daily_series, load_flow_series, load_forcing_series, load_static_table,
    write_archive, write_daily_series, write_static_table, ArchivePaths, SeriesKind,
};
pub use synthetic::{
    fleet_thetas, generate_synthetic_fleet, generate_synthetic_fleet_with, simulate_reservoir, theta_table,
    SyntheticOptions, Theta, THETA_COLUMNS,
};
pub use transform::{aggregate_pixel_embeddings, convert_flow_units, standardize_columns};

/// Not-a-value sentinel used for missing observations.
pub const MISSING: f64 = f64::NAN;

/// Dynamic forcing columns, in model input order.
pub const FORCING_COLUMNS: [&str; 7] = ["prcp", "dayl", "srad", "tmin", "tmax", "vp", "pet"];

/// Column holding observed discharge in flow files.
pub const FLOW_COLUMN: &str = "q_mm_day";

pub const N_ATTRIBUTES: usize = 17;
pub const N_EMBEDDING: usize = 64;

#[derive(Debug, thiserror::Error)]
pub enum DataError {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("csv error in {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("wrong column count in {path}: expected {expected} feature columns for {kind}, found {found}")]
    WrongColumnCount {
        path: PathBuf,
        kind: TableKind,
        expected: usize,
        found: usize,
    },
    #[error("duplicate id {0}")]
    DuplicateId(BasinId),
    #[error("empty basin id in {0}")]
    EmptyId(PathBuf),
    #[error("non-numeric cell {value:?} in {path} (row {row}, column {column})")]
    NonNumeric {
        path: PathBuf,
        row: usize,
        column: String,
        value: String,
    },
    #[error("missing column {column} in {path}")]
    MissingColumn { path: PathBuf, column: String },
    #[error("unparsable date {value:?} in {path}")]
    BadDate { path: PathBuf, value: String },
    #[error("date gap in {path}: {prev} followed by {next}")]
    DateGap {
        path: PathBuf,
        prev: NaiveDate,
        next: NaiveDate,
    },
    #[error("missing forcing value for {basin} on {date}")]
    MissingForcing { basin: BasinId, date: NaiveDate },
    #[error("non-positive catchment area {0}")]
    NonPositiveArea(f64),
    #[error("dimension mismatch: matrix has {found} columns, stats have {expected}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("empty input: {0}")]
    Empty(&'static str),
    #[error("ragged rows: row {row} has {found} entries, expected {expected}")]
    Ragged { row: usize, expected: usize, found: usize },
    #[error("too few basins: {basins} basins for {folds} folds")]
    TooFewBasins { basins: usize, folds: usize },
    #[error("invalid period: start {start} after end {end}")]
    InvalidPeriod { start: NaiveDate, end: NaiveDate },
    #[error("unknown basin {0}")]
    UnknownBasin(BasinId),
    #[error("no forcings for basin {0}")]
    MissingForcings(BasinId),
    #[error("forcings for {basin} do not cover {start}..{end}")]
    Coverage {
        basin: BasinId,
        start: NaiveDate,
        end: NaiveDate,
    },
    #[error("basin order differs between tables")]
    BasinOrderMismatch,
    #[error("invalid synthetic fleet request: {0}")]
    InvalidSynthetic(String),
}

/// Gauge identifier, e.g. `01013500`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct BasinId(String);

impl BasinId {
    pub fn new(id: impl Into<String>) -> Self {
        BasinId(id.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for BasinId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for BasinId {
    fn from(s: &str) -> Self {
        BasinId(s.to_owned())
    }
}

/// Inclusive range of whole days.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Period {
    pub start: NaiveDate,
    pub end: NaiveDate,
}

impl Period {
    pub fn new(start: NaiveDate, end: NaiveDate) -> Result<Self, DataError> {
        if start > end {
            return Err(DataError::InvalidPeriod { start, end });
        }
        Ok(Period { start, end })
    }

    pub fn days(&self) -> usize {
        (self.end - self.start).num_days() as usize + 1
    }

    pub fn contains(&self, date: NaiveDate) -> bool {
        self.start <= date && date <= self.end
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> {
        let start = self.start;
        (0..self.days() as i64).map(move |i| start + Duration::days(i))
    }

    /// Splits off the final `fraction` of the period. Returns `(head, tail)`;
    /// the tail holds at least one day, the head may be empty (`None`).
    pub fn split_tail(&self, fraction: f64) -> (Option<Period>, Period) {
        let days = self.days();
        let tail_days = ((days as f64 * fraction).round() as usize).clamp(1, days);
        let tail_start = self.start + Duration::days((days - tail_days) as i64);
        let head = if tail_days == days {
            None
        } else {
            Some(Period {
                start: self.start,
                end: tail_start - Duration::days(1),
            })
        };
        (head, Period { start: tail_start, end: self.end })
    }
}

impl fmt::Display for Period {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}..{}", self.start, self.end)
    }
}

/// Contiguous daily series with named columns. Dates are implied by the start
/// date and the column length.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesFrame {
    start: NaiveDate,
    len: usize,
    names: Vec<String>,
    columns: Vec<Vec<f64>>,
}

impl TimeSeriesFrame {
    pub fn new(start: NaiveDate, columns: Vec<(String, Vec<f64>)>) -> Result<Self, DataError> {
        let len = columns.first().map(|(_, c)| c.len()).unwrap_or(0);
        for (row, (_, c)) in columns.iter().enumerate() {
            if c.len() != len {
                return Err(DataError::Ragged {
                    row,
                    expected: len,
                    found: c.len(),
                });
            }
        }
        let (names, columns) = columns.into_iter().unzip();
        Ok(TimeSeriesFrame {
            start,
            len,
            names,
            columns,
        })
    }

    pub fn start(&self) -> NaiveDate {
        self.start
    }

    pub fn end(&self) -> NaiveDate {
        self.start + Duration::days(self.len as i64 - 1)
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn dates(&self) -> impl Iterator<Item = NaiveDate> + '_ {
        (0..self.len).map(move |i| self.start + Duration::days(i as i64))
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.names.iter().position(|n| n == name).map(|i| self.columns[i].as_slice())
    }

    pub fn column_at(&self, idx: usize) -> &[f64] {
        &self.columns[idx]
    }

    /// Row index of `date`, if it lies inside the frame.
    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        let offset = (date - self.start).num_days();
        (offset >= 0 && (offset as usize) < self.len).then_some(offset as usize)
    }

    pub fn covers(&self, period: &Period) -> bool {
        !self.is_empty() && self.start <= period.start && period.end <= self.end()
    }

    /// Restricts the frame to `period`, which must be covered.
    pub fn slice(&self, period: &Period) -> Option<TimeSeriesFrame> {
        let a = self.index_of(period.start)?;
        let b = self.index_of(period.end)?;
        Some(TimeSeriesFrame {
            start: period.start,
            len: b - a + 1,
            names: self.names.clone(),
            columns: self.columns.iter().map(|c| c[a..=b].to_vec()).collect(),
        })
    }
}

/// What a static descriptor table represents.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TableKind {
    #[serde(rename = "attributes-17")]
    Attributes17,
    #[serde(rename = "aef-64")]
    Aef64,
    FusionEmbedding,
    /// Any other per-basin descriptor table (no width constraint).
    Custom,
}

impl TableKind {
    /// Required feature count, if the kind fixes one.
    pub fn expected_width(self) -> Option<usize> {
        match self {
            TableKind::Attributes17 => Some(N_ATTRIBUTES),
            TableKind::Aef64 => Some(N_EMBEDDING),
            TableKind::FusionEmbedding | TableKind::Custom => None,
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            TableKind::Attributes17 => "attributes-17",
            TableKind::Aef64 => "aef-64",
            TableKind::FusionEmbedding => "fusion-embedding",
            TableKind::Custom => "custom",
        }
    }
}

impl fmt::Display for TableKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// One row of static descriptors per basin.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticTable {
    kind: TableKind,
    basins: Vec<BasinId>,
    columns: Vec<String>,
    values: Array2<f64>,
}

impl StaticTable {
    pub fn new(
        kind: TableKind,
        basins: Vec<BasinId>,
        columns: Vec<String>,
        values: Array2<f64>,
    ) -> Result<Self, DataError> {
        let (n, d) = values.dim();
        if basins.len() != n {
            return Err(DataError::Ragged {
                row: 0,
                expected: n,
                found: basins.len(),
            });
        }
        if columns.len() != d {
            return Err(DataError::DimensionMismatch {
                expected: d,
                found: columns.len(),
            });
        }
        if let Some(expected) = kind.expected_width() {
            if d != expected {
                return Err(DataError::WrongColumnCount {
                    path: PathBuf::new(),
                    kind,
                    expected,
                    found: d,
                });
            }
        }
        let mut seen = std::collections::HashSet::new();
        for b in &basins {
            if b.as_str().is_empty() {
                return Err(DataError::EmptyId(PathBuf::new()));
            }
            if !seen.insert(b) {
                return Err(DataError::DuplicateId(b.clone()));
            }
        }
        Ok(StaticTable {
            kind,
            basins,
            columns,
            values,
        })
    }

    pub fn kind(&self) -> TableKind {
        self.kind
    }

    pub fn basins(&self) -> &[BasinId] {
        &self.basins
    }

    pub fn columns(&self) -> &[String] {
        &self.columns
    }

    pub fn values(&self) -> &Array2<f64> {
        &self.values
    }

    pub fn n_basins(&self) -> usize {
        self.values.nrows()
    }

    pub fn width(&self) -> usize {
        self.values.ncols()
    }

    pub fn index_of(&self, basin: &BasinId) -> Option<usize> {
        self.basins.iter().position(|b| b == basin)
    }

    pub fn row(&self, basin: &BasinId) -> Option<ArrayView1<'_, f64>> {
        self.index_of(basin).map(|i| self.values.row(i))
    }

    /// Table restricted to `basins`, in the given order.
    pub fn select(&self, basins: &[BasinId]) -> Result<StaticTable, DataError> {
        let mut values = Array2::zeros((basins.len(), self.width()));
        for (r, b) in basins.iter().enumerate() {
            let i = self.index_of(b).ok_or_else(|| DataError::UnknownBasin(b.clone()))?;
            values.row_mut(r).assign(&self.values.row(i));
        }
        StaticTable::new(self.kind, basins.to_vec(), self.columns.clone(), values)
    }

    /// Same values, different kind tag (width rules re-checked).
    pub fn with_kind(self, kind: TableKind) -> Result<StaticTable, DataError> {
        StaticTable::new(kind, self.basins, self.columns, self.values)
    }
}

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl ColumnStats {
    pub fn width(&self) -> usize {
        self.mean.len()
    }

    /// Mean and population standard deviation of each column, skipping
    /// not-a-value entries. A column with no valid entries gets (0, 0).
    pub fn fit<'a, I>(width: usize, rows: I) -> ColumnStats
    where
        I: IntoIterator<Item = &'a [f64]>,
    {
        let mut count = vec![0usize; width];
        let mut mean = vec![0.0; width];
        let mut m2 = vec![0.0; width];
        for row in rows {
            for (j, &x) in row.iter().enumerate().take(width) {
                if x.is_nan() {
                    continue;
                }
                count[j] += 1;
                let delta = x - mean[j];
                mean[j] += delta / count[j] as f64;
                m2[j] += delta * (x - mean[j]);
            }
        }
        let std = m2
            .iter()
            .zip(&count)
            .map(|(&m, &c)| if c == 0 { 0.0 } else { (m / c as f64).sqrt() })
            .collect();
        ColumnStats { mean, std }
    }

    /// z-score of `x` in column `j`; σ = 0 maps to 0.
    #[inline]
    pub fn apply(&self, j: usize, x: f64) -> f64 {
        let sd = self.std[j];
        if sd > 0.0 {
            (x - self.mean[j]) / sd
        } else {
            0.0
        }
    }

    #[inline]
    pub fn invert(&self, j: usize, z: f64) -> f64 {
        z * self.std[j] + self.mean[j]
    }
}

/// Train/test basin split with its periods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub label: String,
    pub train_basins: Vec<BasinId>,
    pub test_basins: Vec<BasinId>,
    pub train_period: Period,
    pub test_period: Period,
}

/// Static tables and per-basin daily series for a fleet of basins.
#[derive(Debug, Clone, PartialEq)]
pub struct BasinArchive {
    pub attributes: StaticTable,
    pub embeddings: StaticTable,
    pub forcings: BTreeMap<BasinId, TimeSeriesFrame>,
    pub flow: BTreeMap<BasinId, TimeSeriesFrame>,
    pub area_km2: BTreeMap<BasinId, f64>,
}

impl BasinArchive {
    /// Basins present in the attribute table, in table order.
    pub fn basins(&self) -> &[BasinId] {
        self.attributes.basins()
    }

    pub fn static_table(&self, kind: TableKind) -> Option<&StaticTable> {
        match kind {
            TableKind::Attributes17 => Some(&self.attributes),
            TableKind::Aef64 => Some(&self.embeddings),
            _ => None,
        }
    }

    pub fn forcing(&self, basin: &BasinId) -> Result<&TimeSeriesFrame, DataError> {
        self.forcings.get(basin).ok_or_else(|| DataError::MissingForcings(basin.clone()))
    }

    /// Observed flow for `basin` (mm/day), `MISSING` where unobserved or
    /// outside the flow record.
    pub fn flow_on(&self, basin: &BasinId, date: NaiveDate) -> f64 {
        self.flow
            .get(basin)
            .and_then(|f| f.index_of(date).map(|i| f.column_at(0)[i]))
            .unwrap_or(MISSING)
    }

    /// Checks that both static tables list the same basins and that every
    /// basin has forcings covering each of `periods`.
    pub fn validate(&self, periods: &[Period]) -> Result<(), DataError> {
        if self.attributes.basins() != self.embeddings.basins() {
            return Err(DataError::BasinOrderMismatch);
        }
        for basin in self.basins() {
            let frame = self.forcing(basin)?;
            for p in periods {
                if !frame.covers(p) {
                    return Err(DataError::Coverage {
                        basin: basin.clone(),
                        start: p.start,
                        end: p.end,
                    });
                }
            }
        }
        Ok(())
    }
}

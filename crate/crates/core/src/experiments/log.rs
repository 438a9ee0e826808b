use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{csv_err, io_err, ExperimentError};
use crate::dataset::BasinId;

pub const RESULT_HEADER: [&str; 10] = [
    "experiment",
    "cell_id",
    "variant",
    "split",
    "method",
    "k",
    "seed",
    "basin_id",
    "metric",
    "value",
];

/// One score of one basin in one cell. `value` is NaN when the score is
/// undefined (e.g. no observed flow in the test period).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub experiment: String,
    pub cell_id: String,
    /// Static input of the model.
    pub variant: String,
    pub split: String,
    /// Donor-selection method or clustering representation; empty in
    /// experiment A.
    pub method: String,
    pub k: Option<usize>,
    /// Seed index within the cell's replicate set.
    pub seed: usize,
    pub basin_id: BasinId,
    pub metric: String,
    pub value: f64,
}

impl ResultRow {
    fn sort_key(&self) -> (&str, &str, &str, &str, Option<usize>, usize, &BasinId, &str, &str) {
        (
            &self.experiment,
            &self.variant,
            &self.split,
            &self.method,
            self.k,
            self.seed,
            &self.basin_id,
            &self.metric,
            &self.cell_id,
        )
    }

    /// Same row, treating two NaN values as equal.
    pub fn same_as(&self, other: &ResultRow) -> bool {
        self.sort_key() == other.sort_key() && self.value.to_bits() == other.value.to_bits()
    }
}

pub(crate) fn sort_rows(rows: &mut [ResultRow]) {
    rows.sort_by(|a, b| a.sort_key().cmp(&b.sort_key()));
}

/// Reads a results table; a missing file is an empty table.
pub fn read_results(path: &Path) -> Result<Vec<ResultRow>, ExperimentError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let mut r = csv::Reader::from_path(path).map_err(csv_err(path))?;
    let header = r.headers().map_err(csv_err(path))?;
    if header.iter().ne(RESULT_HEADER) {
        return Err(ExperimentError::Malformed {
            path: path.to_owned(),
            reason: format!("header is not {}", RESULT_HEADER.join(",")),
        });
    }
    r.deserialize().map(|row| row.map_err(csv_err(path))).collect()
}

/// Writes rows in canonical order.
pub fn write_results(path: &Path, rows: &[ResultRow]) -> Result<(), ExperimentError> {
    let mut rows = rows.to_vec();
    sort_rows(&mut rows);
    let tmp = path.with_extension("csv.tmp");
    {
        let mut w = csv::Writer::from_path(&tmp).map_err(csv_err(&tmp))?;
        if rows.is_empty() {
            w.write_record(RESULT_HEADER).map_err(csv_err(&tmp))?;
        }
        for row in &rows {
            w.serialize(row).map_err(csv_err(&tmp))?;
        }
        w.flush().map_err(io_err(&tmp))?;
    }
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Appends rows to a results log, writing the header if the file is new.
pub(crate) fn append_results(path: &Path, rows: &[ResultRow]) -> Result<(), ExperimentError> {
    let fresh = !path.exists() || fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
    let file = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
    if fresh {
        w.write_record(RESULT_HEADER).map_err(csv_err(path))?;
    }
    for row in rows {
        w.serialize(row).map_err(csv_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Appends one line to a plain-text sidecar, creating it with `header`.
pub(crate) fn append_line(path: &Path, header: &str, line: &str) -> Result<(), ExperimentError> {
    let fresh = !path.exists();
    let mut f = fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(io_err(path))?;
    if fresh {
        writeln!(f, "{header}").map_err(io_err(path))?;
    }
    writeln!(f, "{line}").map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(basin: &str, value: f64) -> ResultRow {
        ResultRow {
            experiment: "exp-a".into(),
            cell_id: "abc".into(),
            variant: "attributes-17".into(),
            split: "IS".into(),
            method: String::new(),
            k: None,
            seed: 0,
            basin_id: BasinId::new(basin),
            metric: "nse".into(),
            value,
        }
    }

    #[test]
    fn round_trip_is_exact_and_sorted() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results_x.csv");
        let rows = vec![row("b", 0.1 + 0.2), row("a", f64::NAN), row("c", -1e-300)];
        write_results(&path, &rows).unwrap();
        let back = read_results(&path).unwrap();
        assert_eq!(back.len(), 3);
        assert_eq!(back[0].basin_id.as_str(), "a");
        assert!(back[0].value.is_nan());
        assert_eq!(back[1].value.to_bits(), (0.1f64 + 0.2).to_bits());
        assert_eq!(back[2].value, -1e-300);
    }

    #[test]
    fn append_then_read() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("results_x.csv");
        append_results(&path, &[row("a", 1.0)]).unwrap();
        append_results(&path, &[row("b", 2.0)]).unwrap();
        let back = read_results(&path).unwrap();
        assert_eq!(back.len(), 2);
        let mut k = row("a", 1.0);
        k.k = Some(8);
        write_results(&path, &[k.clone()]).unwrap();
        assert_eq!(read_results(&path).unwrap()[0].k, Some(8));
    }
}

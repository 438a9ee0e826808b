//! CSV ingestion and export for basin archives.
//!
//! Layout of an archive directory:
//!
//! ```text
//! attributes.csv          basin_id,<17 attribute names>
//! embeddings.csv          basin_id,e00..e63
//! forcings/<id>.csv       date,prcp,dayl,srad,tmin,tmax,vp,pet
//! flow/<id>.csv           date,q_mm_day   (or date,q_cfs with areas.csv)
//! pixels/<id>.csv         year,pixel_id,e00..e63   (optional)
//! areas.csv               basin_id,area_km2        (optional)
//! ```

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use ndarray::Array2;

use super::transform::{aggregate_pixel_embeddings, convert_flow_units};
use super::{BasinArchive, BasinId, DataError, StaticTable, TableKind, TimeSeriesFrame, FLOW_COLUMN, FORCING_COLUMNS};

/// How date gaps and empty cells are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SeriesKind {
    /// Gaps in the date axis are an error.
    Forcing,
    /// Gaps are filled with the missing-value sentinel.
    Flow,
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>, DataError> {
    let file = fs::File::open(path).map_err(|source| DataError::Io {
        path: path.to_owned(),
        source,
    })?;
    Ok(csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> DataError + '_ {
    move |source| DataError::Csv {
        path: path.to_owned(),
        source,
    }
}

fn parse_cell(path: &Path, row: usize, column: &str, value: &str, allow_empty: bool) -> Result<f64, DataError> {
    if value.is_empty() && allow_empty {
        return Ok(f64::NAN);
    }
    value.parse::<f64>().map_err(|_| DataError::NonNumeric {
        path: path.to_owned(),
        row,
        column: column.to_owned(),
        value: value.to_owned(),
    })
}

/// Reads `basin_id,<features...>` into a table of the given kind.
pub fn load_static_table(path: &Path, kind: TableKind) -> Result<StaticTable, DataError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    let columns: Vec<String> = headers.iter().skip(1).map(str::to_owned).collect();
    if let Some(expected) = kind.expected_width() {
        if columns.len() != expected {
            return Err(DataError::WrongColumnCount {
                path: path.to_owned(),
                kind,
                expected,
                found: columns.len(),
            });
        }
    }
    let mut basins = Vec::new();
    let mut data = Vec::new();
    let mut seen = std::collections::HashSet::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_err(path))?;
        let id = record.get(0).unwrap_or_default();
        if id.is_empty() {
            return Err(DataError::EmptyId(path.to_owned()));
        }
        let id = BasinId::new(id);
        if !seen.insert(id.clone()) {
            return Err(DataError::DuplicateId(id));
        }
        for (j, name) in columns.iter().enumerate() {
            let cell = record.get(j + 1).unwrap_or_default();
            data.push(parse_cell(path, row + 1, name, cell, false)?);
        }
        basins.push(id);
    }
    let values = Array2::from_shape_vec((basins.len(), columns.len()), data).expect("row-major shape");
    StaticTable::new(kind, basins, columns, values).map_err(|e| match e {
        DataError::WrongColumnCount { kind, expected, found, .. } => DataError::WrongColumnCount {
            path: path.to_owned(),
            kind,
            expected,
            found,
        },
        other => other,
    })
}

pub fn write_static_table(table: &StaticTable, path: &Path) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["basin_id".to_owned()];
    header.extend(table.columns().iter().cloned());
    w.write_record(&header).map_err(csv_err(path))?;
    for (i, b) in table.basins().iter().enumerate() {
        let mut rec = vec![b.to_string()];
        rec.extend(table.values().row(i).iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: path.to_owned(),
        source,
    })
}

fn parse_date(path: &Path, value: &str) -> Result<NaiveDate, DataError> {
    value.parse::<NaiveDate>().map_err(|_| DataError::BadDate {
        path: path.to_owned(),
        value: value.to_owned(),
    })
}

/// Reads a daily series with a `date` column plus every column in `schema`.
/// Empty cells become the missing-value sentinel.
pub fn load_daily_series(path: &Path, schema: &[&str], kind: SeriesKind) -> Result<TimeSeriesFrame, DataError> {
    let mut rdr = reader(path)?;
    let headers = rdr.headers().map_err(csv_err(path))?.clone();
    let find = |name: &str| {
        headers.iter().position(|h| h == name).ok_or_else(|| DataError::MissingColumn {
            path: path.to_owned(),
            column: name.to_owned(),
        })
    };
    let date_idx = find("date")?;
    let idx: Vec<usize> = schema.iter().map(|c| find(c)).collect::<Result<_, _>>()?;

    let mut start: Option<NaiveDate> = None;
    let mut prev: Option<NaiveDate> = None;
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); schema.len()];
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_err(path))?;
        let date = parse_date(path, record.get(date_idx).unwrap_or_default())?;
        if let Some(p) = prev {
            let step = (date - p).num_days();
            if step <= 0 || (step > 1 && kind == SeriesKind::Forcing) {
                return Err(DataError::DateGap {
                    path: path.to_owned(),
                    prev: p,
                    next: date,
                });
            }
            for _ in 1..step {
                columns.iter_mut().for_each(|c| c.push(f64::NAN));
            }
        }
        start.get_or_insert(date);
        prev = Some(date);
        for (c, (&i, name)) in idx.iter().zip(schema).enumerate() {
            columns[c].push(parse_cell(path, row + 1, name, record.get(i).unwrap_or_default(), true)?);
        }
    }
    let start = start.ok_or(DataError::Empty("series has no rows"))?;
    TimeSeriesFrame::new(start, schema.iter().map(|s| s.to_string()).zip(columns).collect())
}

pub fn load_forcing_series(path: &Path) -> Result<TimeSeriesFrame, DataError> {
    load_daily_series(path, &FORCING_COLUMNS, SeriesKind::Forcing)
}

/// Reads a flow file as mm/day. Files carrying `q_cfs` instead of `q_mm_day`
/// are converted with the basin's area.
pub fn load_flow_series(path: &Path, area_km2: Option<f64>) -> Result<TimeSeriesFrame, DataError> {
    match load_daily_series(path, &[FLOW_COLUMN], SeriesKind::Flow) {
        Err(DataError::MissingColumn { .. }) if area_km2.is_some() => {
            let raw = load_daily_series(path, &["q_cfs"], SeriesKind::Flow)?;
            let q = convert_flow_units(raw.column_at(0), area_km2.unwrap_or_default())?;
            TimeSeriesFrame::new(raw.start(), vec![(FLOW_COLUMN.to_owned(), q)])
        }
        other => other,
    }
}

pub fn write_daily_series(frame: &TimeSeriesFrame, path: &Path) -> Result<(), DataError> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err(path))?;
    let mut header = vec!["date".to_owned()];
    header.extend(frame.names().iter().cloned());
    w.write_record(&header).map_err(csv_err(path))?;
    for (i, date) in frame.dates().enumerate() {
        let mut rec = vec![date.to_string()];
        for c in 0..frame.names().len() {
            let v = frame.column_at(c)[i];
            rec.push(if v.is_nan() { String::new() } else { v.to_string() });
        }
        w.write_record(&rec).map_err(csv_err(path))?;
    }
    w.flush().map_err(|source| DataError::Io {
        path: path.to_owned(),
        source,
    })
}

fn load_pixel_table(dir: &Path, basins: &[BasinId]) -> Result<StaticTable, DataError> {
    let names: Vec<String> = (0..super::N_EMBEDDING).map(|i| format!("e{i:02}")).collect();
    let mut values = Array2::zeros((basins.len(), names.len()));
    for (r, b) in basins.iter().enumerate() {
        let path = dir.join(format!("{b}.csv"));
        let mut rdr = reader(&path)?;
        let headers = rdr.headers().map_err(csv_err(&path))?.clone();
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                headers.iter().position(|h| h == n).ok_or_else(|| DataError::MissingColumn {
                    path: path.clone(),
                    column: n.clone(),
                })
            })
            .collect::<Result<_, _>>()?;
        let mut rows = Vec::new();
        for (row, record) in rdr.records().enumerate() {
            let record = record.map_err(csv_err(&path))?;
            rows.push(
                idx.iter()
                    .zip(&names)
                    .map(|(&i, n)| parse_cell(&path, row + 1, n, record.get(i).unwrap_or_default(), false))
                    .collect::<Result<Vec<_>, _>>()?,
            );
        }
        values.row_mut(r).assign(&aggregate_pixel_embeddings(&rows)?);
    }
    StaticTable::new(TableKind::Aef64, basins.to_vec(), names, values)
}

fn load_areas(path: &Path) -> Result<BTreeMap<BasinId, f64>, DataError> {
    let mut rdr = reader(path)?;
    let mut out = BTreeMap::new();
    for (row, record) in rdr.records().enumerate() {
        let record = record.map_err(csv_err(path))?;
        let id = BasinId::new(record.get(0).unwrap_or_default());
        let area = parse_cell(path, row + 1, "area_km2", record.get(1).unwrap_or_default(), false)?;
        out.insert(id, area);
    }
    Ok(out)
}

/// Locations of the pieces of an archive. [`ArchivePaths::under`] gives the
/// standard layout below one directory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchivePaths {
    pub attributes: PathBuf,
    /// Used when present; otherwise embeddings are aggregated from `pixels`.
    pub embeddings: PathBuf,
    pub pixels: PathBuf,
    pub forcings: PathBuf,
    pub flow: PathBuf,
    /// Optional.
    pub areas: PathBuf,
}

impl ArchivePaths {
    pub fn under(dir: &Path) -> Self {
        ArchivePaths {
            attributes: dir.join("attributes.csv"),
            embeddings: dir.join("embeddings.csv"),
            pixels: dir.join("pixels"),
            forcings: dir.join("forcings"),
            flow: dir.join("flow"),
            areas: dir.join("areas.csv"),
        }
    }
}

/// Loads a full archive directory. Every basin in `attributes.csv` must have a
/// forcing file; flow files are optional (ungauged basins).
pub fn load_archive(dir: &Path) -> Result<BasinArchive, DataError> {
    load_archive_from(&ArchivePaths::under(dir))
}

pub fn load_archive_from(paths: &ArchivePaths) -> Result<BasinArchive, DataError> {
    let attributes = load_static_table(&paths.attributes, TableKind::Attributes17)?;
    let embeddings = if paths.embeddings.exists() {
        load_static_table(&paths.embeddings, TableKind::Aef64)?
    } else {
        load_pixel_table(&paths.pixels, attributes.basins())?
    };
    let area_km2 = if paths.areas.exists() {
        load_areas(&paths.areas)?
    } else {
        BTreeMap::new()
    };
    let mut forcings = BTreeMap::new();
    let mut flow = BTreeMap::new();
    for b in attributes.basins() {
        let fpath = paths.forcings.join(format!("{b}.csv"));
        if !fpath.exists() {
            return Err(DataError::MissingForcings(b.clone()));
        }
        forcings.insert(b.clone(), load_forcing_series(&fpath)?);
        let qpath = paths.flow.join(format!("{b}.csv"));
        if qpath.exists() {
            flow.insert(b.clone(), load_flow_series(&qpath, area_km2.get(b).copied())?);
        }
    }
    Ok(BasinArchive {
        attributes,
        embeddings,
        forcings,
        flow,
        area_km2,
    })
}

fn create_dir(path: &Path) -> Result<PathBuf, DataError> {
    fs::create_dir_all(path).map_err(|source| DataError::Io {
        path: path.to_owned(),
        source,
    })?;
    Ok(path.to_owned())
}

/// Writes an archive in the directory layout read by [`load_archive`].
pub fn write_archive(archive: &BasinArchive, dir: &Path) -> Result<(), DataError> {
    create_dir(dir)?;
    let fdir = create_dir(&dir.join("forcings"))?;
    let qdir = create_dir(&dir.join("flow"))?;
    write_static_table(&archive.attributes, &dir.join("attributes.csv"))?;
    write_static_table(&archive.embeddings, &dir.join("embeddings.csv"))?;
    for (b, frame) in &archive.forcings {
        write_daily_series(frame, &fdir.join(format!("{b}.csv")))?;
    }
    for (b, frame) in &archive.flow {
        write_daily_series(frame, &qdir.join(format!("{b}.csv")))?;
    }
    if !archive.area_km2.is_empty() {
        let path = dir.join("areas.csv");
        let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
        w.write_record(["basin_id", "area_km2"]).map_err(csv_err(&path))?;
        for (b, a) in &archive.area_km2 {
            w.write_record([b.to_string(), a.to_string()]).map_err(csv_err(&path))?;
        }
        w.flush().map_err(|source| DataError::Io { path, source })?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    fn emb_csv(rows: &[&str], width: usize) -> String {
        let mut s = String::from("basin_id");
        for i in 0..width {
            s.push_str(&format!(",e{i:02}"));
        }
        s.push('\n');
        for id in rows {
            s.push_str(id);
            for i in 0..width {
                s.push_str(&format!(",{}", i as f64 * 0.5));
            }
            s.push('\n');
        }
        s
    }

    #[test]
    fn loads_embedding_table() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "e.csv", &emb_csv(&["01013500", "01022500", "01030500"], 64));
        let t = load_static_table(&p, TableKind::Aef64).unwrap();
        assert_eq!(t.n_basins(), 3);
        assert_eq!(t.width(), 64);
        assert_eq!(t.kind(), TableKind::Aef64);
    }

    #[test]
    fn rejects_wrong_width_duplicates_and_text() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "a.csv", &emb_csv(&["a"], 16));
        let err = load_static_table(&p, TableKind::Attributes17).unwrap_err();
        assert!(err.to_string().contains("wrong column count"), "{err}");

        let p = write(dir.path(), "d.csv", &emb_csv(&["01013500", "01013500"], 17));
        let err = load_static_table(&p, TableKind::Attributes17).unwrap_err();
        assert_eq!(err.to_string(), "duplicate id 01013500");

        let p = write(dir.path(), "n.csv", "basin_id,x\nb1,abc\n");
        assert!(matches!(load_static_table(&p, TableKind::Custom), Err(DataError::NonNumeric { .. })));

        let p = write(dir.path(), "e.csv", "basin_id,x\n,1\n");
        assert!(matches!(load_static_table(&p, TableKind::Custom), Err(DataError::EmptyId(_))));

        assert!(matches!(
            load_static_table(&dir.path().join("missing.csv"), TableKind::Custom),
            Err(DataError::Io { .. })
        ));
    }

    const FORCING_HEADER: &str = "date,prcp,dayl,srad,tmin,tmax,vp,pet\n";

    #[test]
    fn loads_forcings_and_detects_gaps() {
        let dir = tempfile::tempdir().unwrap();
        let body = format!(
            "{FORCING_HEADER}1980-01-01,1,2,3,4,5,6,7\n1980-01-02,1,2,3,4,5,6,7\n1980-01-03,1,2,3,4,5,6,7\n"
        );
        let p = write(dir.path(), "f.csv", &body);
        let f = load_forcing_series(&p).unwrap();
        assert_eq!(f.len(), 3);
        assert_eq!(f.names().len(), 7);

        let gap = format!("{FORCING_HEADER}1980-01-01,1,2,3,4,5,6,7\n1980-01-03,1,2,3,4,5,6,7\n");
        let p = write(dir.path(), "g.csv", &gap);
        let err = load_forcing_series(&p).unwrap_err();
        assert!(err.to_string().contains("date gap"), "{err}");

        let p = write(dir.path(), "h.csv", "date,prcp\n1980-01-01,1\n");
        assert!(matches!(load_forcing_series(&p), Err(DataError::MissingColumn { .. })));

        let p = write(dir.path(), "i.csv", &format!("{FORCING_HEADER}1980/01/01,1,2,3,4,5,6,7\n"));
        assert!(matches!(load_forcing_series(&p), Err(DataError::BadDate { .. })));
    }

    #[test]
    fn flow_missing_cells_and_gaps_become_sentinel() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "q.csv", "date,q_mm_day\n1980-01-01,1.5\n1980-01-02,\n1980-01-04,2\n");
        let q = load_flow_series(&p, None).unwrap();
        let col = q.column(FLOW_COLUMN).unwrap();
        assert_eq!(col.len(), 4);
        assert_eq!(col[0], 1.5);
        assert!(col[1].is_nan());
        assert!(col[2].is_nan());
        assert_eq!(col[3], 2.0);
    }

    #[test]
    fn flow_in_cfs_is_converted() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(dir.path(), "q.csv", "date,q_cfs\n1980-01-01,1\n");
        let q = load_flow_series(&p, Some(1.0)).unwrap();
        assert!((q.column_at(0)[0] - 2.446571).abs() < 1e-5);
    }

    #[test]
    fn pixel_embeddings_are_aggregated_when_table_absent() {
        let dir = tempfile::tempdir().unwrap();
        let mut attrs = String::from("basin_id");
        for i in 0..17 {
            attrs.push_str(&format!(",a{i}"));
        }
        attrs.push_str("\nb1");
        for _ in 0..17 {
            attrs.push_str(",1");
        }
        attrs.push('\n');
        write(dir.path(), "attributes.csv", &attrs);
        fs::create_dir(dir.path().join("forcings")).unwrap();
        write(
            &dir.path().join("forcings"),
            "b1.csv",
            &format!("{FORCING_HEADER}1980-01-01,1,2,3,4,5,6,7\n"),
        );
        fs::create_dir(dir.path().join("pixels")).unwrap();
        let mut px = String::from("year,pixel_id");
        for i in 0..64 {
            px.push_str(&format!(",e{i:02}"));
        }
        px.push('\n');
        for (year, val) in [(2017, 1.0), (2018, 3.0)] {
            px.push_str(&format!("{year},0"));
            for _ in 0..64 {
                px.push_str(&format!(",{val}"));
            }
            px.push('\n');
        }
        write(&dir.path().join("pixels"), "b1.csv", &px);
        let archive = load_archive(dir.path()).unwrap();
        assert_eq!(archive.embeddings.values()[[0, 5]], 2.0);
        assert!(archive.flow.is_empty());
    }
}

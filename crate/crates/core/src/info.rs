//! Plug-in mutual information on equal-frequency bins.

use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::dataset::StaticTable;

#[derive(Debug, thiserror::Error)]
pub enum InfoError {
    #[error("columns differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least {needed} samples for {bins} bins, got {got}")]
    TooFewSamples { needed: usize, bins: usize, got: usize },
    #[error("bin count must be at least 2")]
    BadBins,
    #[error("basin order differs between tables")]
    BasinOrderMismatch,
    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

/// Default number of equal-frequency bins.
pub const DEFAULT_BINS: usize = 16;

/// Assigns each value an equal-frequency bin in `0..bins`. Edge `k` is the
/// sample quantile at rank `⌈k·n/bins⌉`; a value equal to an edge stays in
/// the lower bin.
pub fn equal_frequency_bins(values: &[f64], bins: usize) -> Vec<usize> {
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let edges: Vec<f64> = (1..bins).map(|k| sorted[(k * n).div_ceil(bins) - 1]).collect();
    values
        .iter()
        // number of edges strictly below the value
        .map(|&v| edges.partition_point(|&e| e < v))
        .collect()
}

/// I(X;Y) = Σ p(x,y) ln(p(x,y) / (p(x)p(y))) over the joint histogram of
/// equal-frequency bins, in nats. Empty cells contribute zero.
pub fn mutual_information(x: &[f64], y: &[f64], bins: usize) -> Result<f64, InfoError> {
    if x.len() != y.len() {
        return Err(InfoError::LengthMismatch(x.len(), y.len()));
    }
    if bins < 2 {
        return Err(InfoError::BadBins);
    }
    if x.len() < 2 * bins {
        return Err(InfoError::TooFewSamples {
            needed: 2 * bins,
            bins,
            got: x.len(),
        });
    }
    let bx = equal_frequency_bins(x, bins);
    let by = equal_frequency_bins(y, bins);
    Ok(mi_from_bins(&bx, &by, bins))
}

fn mi_from_bins(bx: &[usize], by: &[usize], bins: usize) -> f64 {
    let n = bx.len() as f64;
    let mut joint = vec![0usize; bins * bins];
    let mut mx = vec![0usize; bins];
    let mut my = vec![0usize; bins];
    for (&a, &b) in bx.iter().zip(by) {
        joint[a * bins + b] += 1;
        mx[a] += 1;
        my[b] += 1;
    }
    let mut terms = Vec::new();
    for a in 0..bins {
        for b in 0..bins {
            let c = joint[a * bins + b];
            if c == 0 {
                continue;
            }
            let pxy = c as f64 / n;
            let px = mx[a] as f64 / n;
            let py = my[b] as f64 / n;
            terms.push(pxy * (pxy / (px * py)).ln());
        }
    }
    // a fixed summation order keeps I(X;Y) and I(Y;X) bitwise equal
    terms.sort_by(f64::total_cmp);
    let total: f64 = terms.iter().sum();
    // rounding can leave a tiny negative for independent columns
    total.max(0.0)
}

/// Attribute-by-embedding MI values (nats).
#[derive(Debug, Clone, PartialEq)]
pub struct MiMatrix {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub values: Array2<f64>,
}

/// MI between every attribute column and every embedding column. Both tables
/// must list the same basins in the same order.
pub fn mi_matrix(attrs: &StaticTable, embs: &StaticTable, bins: usize) -> Result<MiMatrix, InfoError> {
    if attrs.basins() != embs.basins() {
        return Err(InfoError::BasinOrderMismatch);
    }
    let n = attrs.n_basins();
    if bins < 2 {
        return Err(InfoError::BadBins);
    }
    if n < 2 * bins {
        return Err(InfoError::TooFewSamples {
            needed: 2 * bins,
            bins,
            got: n,
        });
    }
    let binned = |t: &StaticTable| -> Vec<Vec<usize>> {
        t.values()
            .columns()
            .into_iter()
            .map(|c| equal_frequency_bins(&c.to_vec(), bins))
            .collect()
    };
    let ab = binned(attrs);
    let eb = binned(embs);
    let mut values = Array2::zeros((ab.len(), eb.len()));
    for (i, a) in ab.iter().enumerate() {
        for (j, e) in eb.iter().enumerate() {
            values[[i, j]] = mi_from_bins(a, e, bins);
        }
    }
    Ok(MiMatrix {
        rows: attrs.columns().to_vec(),
        columns: embs.columns().to_vec(),
        values,
    })
}

impl MiMatrix {
    /// Writes `attribute,<embedding columns...>` with six decimals.
    pub fn write_csv(&self, path: &Path) -> Result<(), InfoError> {
        let err = |source| InfoError::Csv {
            path: path.to_owned(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        let mut header = vec!["attribute".to_owned()];
        header.extend(self.columns.iter().cloned());
        w.write_record(&header).map_err(err)?;
        for (i, name) in self.rows.iter().enumerate() {
            let mut rec = vec![name.clone()];
            rec.extend(self.values.row(i).iter().map(|v| format!("{v:.6}")));
            w.write_record(&rec).map_err(err)?;
        }
        w.flush().map_err(|e| err(e.into()))
    }
}

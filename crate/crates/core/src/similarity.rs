//! Cosine similarity between basin descriptors and donor ranking.
//!
//! All representations (attributes, fusion embeddings, satellite embeddings)
//! share one path: z-score every column over the table's basins, then take
//! pairwise cosine similarity of the standardised rows.

use std::fmt;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::dataset::{standardize_columns, BasinId, DataError, StaticTable, TableKind};
use crate::seed::rng_from;

#[derive(Debug, thiserror::Error)]
pub enum SimilarityError {
    #[error("zero-norm vector")]
    ZeroNorm,
    #[error("vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("basin {0} is all-zero after standardisation")]
    DegenerateRow(BasinId),
    #[error("similarity needs at least 2 basins, got {0}")]
    TooFewBasins(usize),
    #[error("unknown target basin {0}")]
    UnknownTarget(BasinId),
    #[error("k = {k} out of range 1..={max}")]
    KOutOfRange { k: usize, max: usize },
    #[error(transparent)]
    Data(#[from] DataError),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
    #[error("malformed similarity file {0}")]
    Malformed(PathBuf),
}

/// Representation a similarity matrix was computed from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityMethod {
    Attributes,
    Fusion,
    Aef,
    Custom,
}

impl SimilarityMethod {
    pub fn from_kind(kind: TableKind) -> Self {
        match kind {
            TableKind::Attributes17 => SimilarityMethod::Attributes,
            TableKind::Aef64 => SimilarityMethod::Aef,
            TableKind::FusionEmbedding => SimilarityMethod::Fusion,
            TableKind::Custom => SimilarityMethod::Custom,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SimilarityMethod::Attributes => "attributes",
            SimilarityMethod::Fusion => "fusion",
            SimilarityMethod::Aef => "aef",
            SimilarityMethod::Custom => "custom",
        }
    }
}

impl fmt::Display for SimilarityMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for SimilarityMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "attributes" => Ok(SimilarityMethod::Attributes),
            "fusion" => Ok(SimilarityMethod::Fusion),
            "aef" => Ok(SimilarityMethod::Aef),
            "custom" => Ok(SimilarityMethod::Custom),
            other => Err(format!("unknown similarity method {other:?}")),
        }
    }
}

/// Symmetric n×n cosine similarities.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityMatrix {
    pub method: SimilarityMethod,
    pub basins: Vec<BasinId>,
    pub values: Array2<f64>,
}

/// `zᵢᵀzⱼ / (‖zᵢ‖‖zⱼ‖)`, clamped to [-1, 1].
pub fn cosine(u: ArrayView1<'_, f64>, v: ArrayView1<'_, f64>) -> Result<f64, SimilarityError> {
    if u.len() != v.len() {
        return Err(SimilarityError::LengthMismatch(u.len(), v.len()));
    }
    let nu = u.dot(&u).sqrt();
    let nv = v.dot(&v).sqrt();
    if nu == 0.0 || nv == 0.0 || u.is_empty() {
        return Err(SimilarityError::ZeroNorm);
    }
    Ok((u.dot(&v) / (nu * nv)).clamp(-1.0, 1.0))
}

/// Standardises `table` and fills every pairwise cosine similarity.
pub fn similarity_matrix(table: &StaticTable) -> Result<SimilarityMatrix, SimilarityError> {
    let n = table.n_basins();
    if n < 2 {
        return Err(SimilarityError::TooFewBasins(n));
    }
    let (z, _) = standardize_columns(table.values().view(), None)?;
    for (i, row) in z.rows().into_iter().enumerate() {
        if row.iter().all(|&x| x == 0.0) {
            return Err(SimilarityError::DegenerateRow(table.basins()[i].clone()));
        }
    }
    let mut values = Array2::zeros((n, n));
    for i in 0..n {
        for j in i..n {
            let s = cosine(z.row(i), z.row(j))?;
            values[[i, j]] = s;
            values[[j, i]] = s;
        }
    }
    Ok(SimilarityMatrix {
        method: SimilarityMethod::from_kind(table.kind()),
        basins: table.basins().to_vec(),
        values,
    })
}

impl SimilarityMatrix {
    pub fn index_of(&self, basin: &BasinId) -> Option<usize> {
        self.basins.iter().position(|b| b == basin)
    }

    pub fn get(&self, a: &BasinId, b: &BasinId) -> Option<f64> {
        Some(self.values[[self.index_of(a)?, self.index_of(b)?]])
    }

    /// Every other basin ordered by similarity to `target`, descending, ties
    /// broken by ascending id.
    pub fn ranking(&self, target: &BasinId) -> Result<Vec<(BasinId, f64)>, SimilarityError> {
        let t = self
            .index_of(target)
            .ok_or_else(|| SimilarityError::UnknownTarget(target.clone()))?;
        let mut donors: Vec<(BasinId, f64)> = self
            .basins
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != t)
            .map(|(i, b)| (b.clone(), self.values[[t, i]]))
            .collect();
        donors.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        Ok(donors)
    }
}

/// The `k` basins most similar to `target`.
pub fn rank_and_select(matrix: &SimilarityMatrix, target: &BasinId, k: usize) -> Result<Vec<BasinId>, SimilarityError> {
    let ranking = matrix.ranking(target)?;
    if k == 0 || k > ranking.len() {
        return Err(SimilarityError::KOutOfRange { k, max: ranking.len() });
    }
    Ok(ranking.into_iter().take(k).map(|(b, _)| b).collect())
}

/// Seeded uniform sample of `k` basins from `basins` without `target`.
pub fn select_random(basins: &[BasinId], target: &BasinId, k: usize, seed: u64) -> Result<Vec<BasinId>, SimilarityError> {
    let candidates: Vec<&BasinId> = basins.iter().filter(|b| *b != target).collect();
    if k == 0 || k > candidates.len() {
        return Err(SimilarityError::KOutOfRange {
            k,
            max: candidates.len(),
        });
    }
    let mut rng = rng_from(seed);
    Ok(index::sample(&mut rng, candidates.len(), k)
        .into_iter()
        .map(|i| candidates[i].clone())
        .collect())
}

/// Writes the full matrix (`basin_id,<ids...>`) or, with a target, the
/// ranked stripe `donor_id,score`.
pub fn export_similarity(matrix: &SimilarityMatrix, target: Option<&BasinId>, path: &Path) -> Result<(), SimilarityError> {
    let io = |source| SimilarityError::Io {
        path: path.to_owned(),
        source,
    };
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    match target {
        Some(t) => {
            w.write_record(["donor_id", "score"]).map_err(io)?;
            for (b, s) in matrix.ranking(t)? {
                w.write_record([b.to_string(), s.to_string()]).map_err(io)?;
            }
        }
        None => {
            let mut header = vec!["basin_id".to_owned()];
            header.extend(matrix.basins.iter().map(|b| b.to_string()));
            w.write_record(&header).map_err(io)?;
            for (i, b) in matrix.basins.iter().enumerate() {
                let mut rec = vec![b.to_string()];
                rec.extend(matrix.values.row(i).iter().map(|v| v.to_string()));
                w.write_record(&rec).map_err(io)?;
            }
        }
    }
    w.flush().map_err(|e| io(e.into()))
}

/// Reads a full matrix written by [`export_similarity`].
pub fn load_similarity(path: &Path, method: SimilarityMethod) -> Result<SimilarityMatrix, SimilarityError> {
    let io = |source| SimilarityError::Io {
        path: path.to_owned(),
        source,
    };
    let mut r = csv::Reader::from_path(path).map_err(io)?;
    let basins: Vec<BasinId> = r.headers().map_err(io)?.iter().skip(1).map(BasinId::from).collect();
    let n = basins.len();
    let mut values = Array2::zeros((n, n));
    let mut rows = 0;
    for (i, rec) in r.records().enumerate() {
        let rec = rec.map_err(io)?;
        if i >= n || rec.len() != n + 1 || rec.get(0) != Some(basins[i].as_str()) {
            return Err(SimilarityError::Malformed(path.to_owned()));
        }
        for j in 0..n {
            values[[i, j]] = rec[j + 1]
                .parse()
                .map_err(|_| SimilarityError::Malformed(path.to_owned()))?;
        }
        rows += 1;
    }
    if rows != n {
        return Err(SimilarityError::Malformed(path.to_owned()));
    }
    Ok(SimilarityMatrix { method, basins, values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use proptest::prelude::*;
    use rand::Rng;

    fn table(rows: Array2<f64>) -> StaticTable {
        let n = rows.nrows();
        let d = rows.ncols();
        StaticTable::new(
            TableKind::Custom,
            (0..n).map(|i| BasinId::new(format!("b{i}"))).collect(),
            (0..d).map(|j| format!("c{j}")).collect(),
            rows,
        )
        .unwrap()
    }

    fn random_table(seed: u64, n: usize, d: usize) -> StaticTable {
        let mut rng = rng_from(seed);
        table(Array2::from_shape_fn((n, d), |_| rng.random_range(-2.0..2.0)))
    }

    #[test]
    fn cosine_cases() {
        assert_eq!(cosine(array![3.0, 4.0].view(), array![3.0, 4.0].view()).unwrap(), 1.0);
        assert_eq!(cosine(array![1.0, 0.0].view(), array![0.0, 1.0].view()).unwrap(), 0.0);
        let s = cosine(array![1.0, 2.0, 2.0].view(), array![2.0, 1.0, 2.0].view()).unwrap();
        assert!((s - 8.0 / 9.0).abs() < 1e-12);
        assert!(matches!(
            cosine(array![0.0, 0.0].view(), array![1.0, 0.0].view()),
            Err(SimilarityError::ZeroNorm)
        ));
    }

    #[test]
    fn identical_rows_are_degenerate() {
        let t = table(array![[1.0, 2.0], [1.0, 2.0]]);
        assert!(matches!(similarity_matrix(&t), Err(SimilarityError::DegenerateRow(_))));
    }

    #[test]
    fn small_matrix_is_symmetric_with_unit_diagonal() {
        let m = similarity_matrix(&table(array![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]])).unwrap();
        for i in 0..3 {
            assert!((m.values[[i, i]] - 1.0).abs() < 1e-12);
            for j in 0..3 {
                assert_eq!(m.values[[i, j]], m.values[[j, i]]);
            }
        }
    }

    #[test]
    fn matches_pairwise_recomputation() {
        let t = random_table(11, 5, 4);
        let m = similarity_matrix(&t).unwrap();
        // independent standardisation and cosine
        let v = t.values();
        let (n, d) = v.dim();
        let mut z = v.clone();
        for j in 0..d {
            let mean = (0..n).map(|i| v[[i, j]]).sum::<f64>() / n as f64;
            let var = (0..n).map(|i| (v[[i, j]] - mean).powi(2)).sum::<f64>() / n as f64;
            for i in 0..n {
                z[[i, j]] = (v[[i, j]] - mean) / var.sqrt();
            }
        }
        for i in 0..n {
            for j in 0..n {
                let dot: f64 = (0..d).map(|k| z[[i, k]] * z[[j, k]]).sum();
                let ni: f64 = (0..d).map(|k| z[[i, k]].powi(2)).sum::<f64>().sqrt();
                let nj: f64 = (0..d).map(|k| z[[j, k]].powi(2)).sum::<f64>().sqrt();
                assert!((m.values[[i, j]] - dot / (ni * nj)).abs() < 1e-14);
            }
        }
    }

    fn manual(scores: &[(&str, f64)]) -> SimilarityMatrix {
        // target "A" at index 0
        let n = scores.len() + 1;
        let mut values = Array2::eye(n);
        for (i, (_, s)) in scores.iter().enumerate() {
            values[[0, i + 1]] = *s;
            values[[i + 1, 0]] = *s;
        }
        let mut basins = vec![BasinId::from("A")];
        basins.extend(scores.iter().map(|(b, _)| BasinId::from(*b)));
        SimilarityMatrix {
            method: SimilarityMethod::Custom,
            basins,
            values,
        }
    }

    #[test]
    fn ties_break_by_id() {
        let m = manual(&[("D", 0.9), ("C", 0.5), ("B", 0.9)]);
        let top = rank_and_select(&m, &"A".into(), 2).unwrap();
        assert_eq!(top, vec![BasinId::from("B"), BasinId::from("D")]);
        let all = rank_and_select(&m, &"A".into(), 3).unwrap();
        assert_eq!(all, vec![BasinId::from("B"), BasinId::from("D"), BasinId::from("C")]);
        assert!(rank_and_select(&m, &"A".into(), 4).is_err());
        assert!(rank_and_select(&m, &"A".into(), 0).is_err());
        assert!(rank_and_select(&m, &"Z".into(), 1).is_err());
    }

    #[test]
    fn top_k_matches_full_sort() {
        let t = random_table(5, 6, 3);
        let m = similarity_matrix(&t).unwrap();
        let target = t.basins()[2].clone();
        let mut all: Vec<(f64, BasinId)> = (0..6)
            .filter(|&i| i != 2)
            .map(|i| (m.values[[2, i]], t.basins()[i].clone()))
            .collect();
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let expected: Vec<BasinId> = all.into_iter().take(3).map(|(_, b)| b).collect();
        assert_eq!(rank_and_select(&m, &target, 3).unwrap(), expected);
    }

    #[test]
    fn random_selection() {
        let basins: Vec<BasinId> = (0..6).map(|i| BasinId::new(format!("b{i}"))).collect();
        let t = basins[0].clone();
        assert_eq!(select_random(&basins, &t, 3, 9).unwrap(), select_random(&basins, &t, 3, 9).unwrap());
        let mut all = select_random(&basins, &t, 5, 1).unwrap();
        all.sort();
        assert_eq!(all, basins[1..].to_vec());
        assert!(select_random(&basins, &t, 6, 1).is_err());
    }

    #[test]
    fn random_selection_is_uniform() {
        let basins: Vec<BasinId> = (0..6).map(|i| BasinId::new(format!("b{i}"))).collect();
        let t = basins[0].clone();
        let mut counts = std::collections::HashMap::new();
        for seed in 0..10_000 {
            let pick = select_random(&basins, &t, 1, seed).unwrap();
            *counts.entry(pick[0].clone()).or_insert(0usize) += 1;
        }
        assert_eq!(counts.len(), 5);
        for c in counts.values() {
            let f = *c as f64 / 10_000.0;
            assert!((0.18..=0.22).contains(&f), "{f}");
        }
    }

    #[test]
    fn export_round_trip_and_stripe() {
        let dir = tempfile::tempdir().unwrap();
        let m = similarity_matrix(&random_table(2, 3, 4)).unwrap();
        let full = dir.path().join("m.csv");
        export_similarity(&m, None, &full).unwrap();
        let text = std::fs::read_to_string(&full).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 4);
        assert_eq!(lines[1].split(',').count(), 4);
        let back = load_similarity(&full, m.method).unwrap();
        for (a, b) in m.values.iter().zip(back.values.iter()) {
            assert!((a - b).abs() < 1e-9);
        }
        let stripe = dir.path().join("s.csv");
        export_similarity(&m, Some(&m.basins[0]), &stripe).unwrap();
        let mut r = csv::Reader::from_path(&stripe).unwrap();
        let rows: Vec<(String, f64)> = r
            .records()
            .map(|r| {
                let r = r.unwrap();
                (r[0].to_owned(), r[1].parse().unwrap())
            })
            .collect();
        assert_eq!(rows.len(), 2);
        assert!(rows[0].1 >= rows[1].1);
    }

    proptest! {
        #[test]
        fn cosine_scale_invariant(
            u in proptest::collection::vec(-5.0f64..5.0, 4),
            v in proptest::collection::vec(-5.0f64..5.0, 4),
            a in 0.01f64..100.0,
            b in 0.01f64..100.0,
        ) {
            let u = ndarray::Array1::from(u);
            let v = ndarray::Array1::from(v);
            prop_assume!(u.dot(&u) > 1e-6 && v.dot(&v) > 1e-6);
            let s = cosine(u.view(), v.view()).unwrap();
            let s2 = cosine((&u * a).view(), (&v * b).view()).unwrap();
            prop_assert!((s - s2).abs() < 1e-12);
        }

        #[test]
        fn permuting_rows_conjugates_matrix(seed in any::<u64>(), shift in 1usize..6) {
            let t = random_table(seed, 6, 3);
            let m = similarity_matrix(&t).unwrap();
            let perm: Vec<usize> = (0..6).map(|i| (i + shift) % 6).collect();
            let order: Vec<BasinId> = perm.iter().map(|&i| t.basins()[i].clone()).collect();
            let mp = similarity_matrix(&t.select(&order).unwrap()).unwrap();
            for a in 0..6 {
                for b in 0..6 {
                    prop_assert!((mp.values[[a, b]] - m.values[[perm[a], perm[b]]]).abs() < 1e-12);
                }
            }
        }

        #[test]
        fn selection_prefix_monotone(seed in any::<u64>()) {
            let t = random_table(seed, 7, 3);
            let m = similarity_matrix(&t).unwrap();
            let target = t.basins()[0].clone();
            for k in 1..6 {
                let a = rank_and_select(&m, &target, k).unwrap();
                let b = rank_and_select(&m, &target, k + 1).unwrap();
                prop_assert_eq!(&a[..], &b[..k]);
            }
        }
    }
}

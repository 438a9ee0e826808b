//! K-means with k-means++ seeding, silhouette scoring, K selection, and
//! leave-one-cluster-out splits.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView1, ArrayView2};
use rand::Rng;

use crate::dataset::{BasinId, Period, SplitSpec};
use crate::seed::{derive_seed, rng_from};

#[derive(Debug, thiserror::Error)]
pub enum ClusterError {
    #[error("K = {k} out of range 2..={n}")]
    KOutOfRange { k: usize, n: usize },
    #[error("only {distinct} distinct points, cannot form {k} non-empty clusters")]
    Degenerate { k: usize, distinct: usize },
    #[error("silhouette needs at least 2 clusters")]
    SingleCluster,
    #[error("cluster {0} is empty")]
    EmptyCluster(usize),
    #[error("{points} points but {labels} labels")]
    LengthMismatch { points: usize, labels: usize },
    #[error("invalid K range {0}..={1}")]
    BadRange(usize, usize),
    #[error("csv error on {path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

pub const DEFAULT_RESTARTS: usize = 10;
pub const MAX_ITER: usize = 300;

/// Outcome of one k-means fit.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterModel {
    pub k: usize,
    pub centroids: Array2<f64>,
    /// Cluster index per point, in input row order.
    pub labels: Vec<usize>,
    pub basins: Vec<BasinId>,
    pub silhouette: f64,
    pub inertia: f64,
    pub representation: String,
    /// Inertia after each Lloyd iteration of the winning restart.
    pub inertia_history: Vec<f64>,
}

impl ClusterModel {
    pub fn assignments(&self) -> BTreeMap<BasinId, usize> {
        self.basins.iter().cloned().zip(self.labels.iter().copied()).collect()
    }

    /// Members of cluster `c` in input order.
    pub fn members(&self, c: usize) -> Vec<BasinId> {
        self.basins
            .iter()
            .zip(&self.labels)
            .filter(|(_, &l)| l == c)
            .map(|(b, _)| b.clone())
            .collect()
    }

    /// Writes `basin_id,cluster`.
    pub fn write_assignments(&self, path: &Path) -> Result<(), ClusterError> {
        let err = |source| ClusterError::Csv {
            path: path.to_owned(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        w.write_record(["basin_id", "cluster"]).map_err(err)?;
        for (b, l) in self.basins.iter().zip(&self.labels) {
            w.write_record([b.as_str(), &l.to_string()]).map_err(err)?;
        }
        w.flush().map_err(|e| err(e.into()))
    }
}

fn sq_dist(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn count_distinct(points: ArrayView2<'_, f64>, limit: usize) -> usize {
    let mut seen: Vec<ArrayView1<'_, f64>> = Vec::new();
    for row in points.rows() {
        if !seen.contains(&row) {
            seen.push(row);
            if seen.len() >= limit {
                break;
            }
        }
    }
    seen.len()
}

fn kmeans_pp(points: ArrayView2<'_, f64>, k: usize, rng: &mut impl Rng) -> Array2<f64> {
    let n = points.nrows();
    let mut centroids = Array2::zeros((k, points.ncols()));
    let first = rng.random_range(0..n);
    centroids.row_mut(0).assign(&points.row(first));
    let mut d2: Vec<f64> = points.rows().into_iter().map(|p| sq_dist(p, points.row(first))).collect();
    for c in 1..k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut idx = n - 1;
            for (i, &w) in d2.iter().enumerate() {
                if u < w {
                    idx = i;
                    break;
                }
                u -= w;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.row_mut(c).assign(&points.row(pick));
        for (i, p) in points.rows().into_iter().enumerate() {
            d2[i] = d2[i].min(sq_dist(p, points.row(pick)));
        }
    }
    centroids
}

fn assign(points: ArrayView2<'_, f64>, centroids: &Array2<f64>, labels: &mut [usize]) -> f64 {
    let mut inertia = 0.0;
    for (i, p) in points.rows().into_iter().enumerate() {
        let mut best = (f64::INFINITY, 0);
        for (c, cen) in centroids.rows().into_iter().enumerate() {
            let d = sq_dist(p, cen);
            if d < best.0 {
                best = (d, c);
            }
        }
        labels[i] = best.1;
        inertia += best.0;
    }
    inertia
}

/// Recomputes centroids; an emptied cluster takes the point farthest from
/// its currently assigned centroid. Returns false when no donor point is left.
fn update(points: ArrayView2<'_, f64>, centroids: &mut Array2<f64>, labels: &mut [usize]) -> bool {
    let k = centroids.nrows();
    loop {
        let mut counts = vec![0usize; k];
        for &l in labels.iter() {
            counts[l] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            break;
        };
        let far = points
            .rows()
            .into_iter()
            .enumerate()
            .filter(|(i, _)| counts[labels[*i]] > 1)
            .map(|(i, p)| (sq_dist(p, centroids.row(labels[i])), i))
            .max_by(|a, b| a.0.total_cmp(&b.0).then(b.1.cmp(&a.1)));
        let Some((_, i)) = far else {
            return false;
        };
        labels[i] = empty;
        centroids.row_mut(empty).assign(&points.row(i));
    }
    centroids.fill(0.0);
    let mut counts = vec![0usize; k];
    for (i, p) in points.rows().into_iter().enumerate() {
        let mut row = centroids.row_mut(labels[i]);
        row += &p;
        counts[labels[i]] += 1;
    }
    for (c, &cnt) in counts.iter().enumerate() {
        centroids.row_mut(c).mapv_inplace(|v| v / cnt as f64);
    }
    true
}

fn inertia_of(points: ArrayView2<'_, f64>, centroids: &Array2<f64>, labels: &[usize]) -> f64 {
    points
        .rows()
        .into_iter()
        .zip(labels)
        .map(|(p, &l)| sq_dist(p, centroids.row(l)))
        .sum()
}

struct Run {
    centroids: Array2<f64>,
    labels: Vec<usize>,
    inertia: f64,
    history: Vec<f64>,
}

fn lloyd(points: ArrayView2<'_, f64>, k: usize, rng: &mut impl Rng) -> Option<Run> {
    let n = points.nrows();
    let mut centroids = kmeans_pp(points, k, rng);
    let mut labels = vec![usize::MAX; n];
    assign(points, &centroids, &mut labels);
    let mut history = Vec::new();
    for _ in 0..MAX_ITER {
        if !update(points, &mut centroids, &mut labels) {
            return None;
        }
        history.push(inertia_of(points, &centroids, &labels));
        let before = labels.clone();
        history.push(assign(points, &centroids, &mut labels));
        if labels == before {
            break;
        }
    }
    // a final reassignment may have emptied a cluster
    if !update(points, &mut centroids, &mut labels) {
        return None;
    }
    let inertia = inertia_of(points, &centroids, &labels);
    Some(Run {
        centroids,
        labels,
        inertia,
        history,
    })
}

/// Fits K clusters, keeping the best of `restarts` k-means++ runs by inertia
/// (earlier restart wins ties). Each restart has its own derived seed.
pub fn kmeans_fit(
    points: ArrayView2<'_, f64>,
    basins: &[BasinId],
    k: usize,
    seed: u64,
    restarts: usize,
) -> Result<ClusterModel, ClusterError> {
    let n = points.nrows();
    if basins.len() != n {
        return Err(ClusterError::LengthMismatch {
            points: n,
            labels: basins.len(),
        });
    }
    if k < 2 || k > n {
        return Err(ClusterError::KOutOfRange { k, n });
    }
    let distinct = count_distinct(points, k);
    if distinct < k {
        return Err(ClusterError::Degenerate { k, distinct });
    }
    let mut best: Option<Run> = None;
    for r in 0..restarts.max(1) {
        let mut rng = rng_from(derive_seed(seed, &format!("kmeans/k={k}/restart={r}")));
        if let Some(run) = lloyd(points, k, &mut rng) {
            if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
                best = Some(run);
            }
        }
    }
    let run = best.ok_or(ClusterError::Degenerate { k, distinct })?;
    let silhouette = silhouette(points, &run.labels)?;
    Ok(ClusterModel {
        k,
        centroids: run.centroids,
        labels: run.labels,
        basins: basins.to_vec(),
        silhouette,
        inertia: run.inertia,
        representation: String::new(),
        inertia_history: run.history,
    })
}

/// Mean silhouette with Euclidean distance; points in singleton clusters
/// score 0.
pub fn silhouette(points: ArrayView2<'_, f64>, labels: &[usize]) -> Result<f64, ClusterError> {
    let n = points.nrows();
    if labels.len() != n {
        return Err(ClusterError::LengthMismatch {
            points: n,
            labels: labels.len(),
        });
    }
    let k = labels.iter().max().map_or(0, |m| m + 1);
    let mut sizes = vec![0usize; k];
    for &l in labels {
        sizes[l] += 1;
    }
    if let Some(c) = sizes.iter().position(|&s| s == 0) {
        return Err(ClusterError::EmptyCluster(c));
    }
    if k < 2 {
        return Err(ClusterError::SingleCluster);
    }
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        if sizes[labels[i]] == 1 {
            continue;
        }
        sums.fill(0.0);
        for j in 0..n {
            if i != j {
                sums[labels[j]] += sq_dist(points.row(i), points.row(j)).sqrt();
            }
        }
        let own = labels[i];
        let a = sums[own] / (sizes[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own)
            .map(|c| sums[c] / sizes[c] as f64)
            .fold(f64::INFINITY, f64::min);
        let m = a.max(b);
        if m > 0.0 {
            total += (b - a) / m;
        }
    }
    Ok(total / n as f64)
}

/// Result of a silhouette sweep over K.
#[derive(Debug, Clone)]
pub struct KSelection {
    pub best_k: usize,
    pub model: ClusterModel,
    /// `(K, silhouette)` for every K in the range.
    pub profile: Vec<(usize, f64)>,
}

impl KSelection {
    /// Writes `K,score`.
    pub fn write_profile(&self, path: &Path) -> Result<(), ClusterError> {
        let err = |source| ClusterError::Csv {
            path: path.to_owned(),
            source,
        };
        let mut w = csv::Writer::from_path(path).map_err(err)?;
        w.write_record(["K", "score"]).map_err(err)?;
        for (k, s) in &self.profile {
            w.write_record([k.to_string(), format!("{s:.6}")]).map_err(err)?;
        }
        w.flush().map_err(|e| err(e.into()))
    }
}

/// Fits every K in `k_min..=k_max` and keeps the highest silhouette; ties go
/// to the smaller K.
pub fn select_k(
    points: ArrayView2<'_, f64>,
    basins: &[BasinId],
    k_min: usize,
    k_max: usize,
    seed: u64,
    restarts: usize,
) -> Result<KSelection, ClusterError> {
    if k_min < 2 || k_min > k_max {
        return Err(ClusterError::BadRange(k_min, k_max));
    }
    if k_max > points.nrows() {
        return Err(ClusterError::KOutOfRange {
            k: k_max,
            n: points.nrows(),
        });
    }
    let mut profile = Vec::with_capacity(k_max - k_min + 1);
    let mut best: Option<ClusterModel> = None;
    for k in k_min..=k_max {
        let model = kmeans_fit(points, basins, k, seed, restarts)?;
        profile.push((k, model.silhouette));
        if best.as_ref().is_none_or(|b| model.silhouette > b.silhouette) {
            best = Some(model);
        }
    }
    let model = best.expect("non-empty K range");
    Ok(KSelection {
        best_k: model.k,
        model,
        profile,
    })
}

/// One split per cluster: that cluster's members are the test basins, every
/// other basin trains.
pub fn loco_splits(model: &ClusterModel, train_period: Period, test_period: Period) -> Vec<SplitSpec> {
    (0..model.k)
        .map(|c| {
            let test = model.members(c);
            let train = model
                .basins
                .iter()
                .zip(&model.labels)
                .filter(|(_, &l)| l != c)
                .map(|(b, _)| b.clone())
                .collect();
            let label = if model.representation.is_empty() {
                format!("cluster{c}")
            } else {
                format!("{}-cluster{c}", model.representation)
            };
            SplitSpec {
                label,
                train_basins: train,
                test_basins: test,
                train_period,
                test_period,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use chrono::NaiveDate;
    use ndarray::{array, Array2};
    use rand_distr::{Distribution, Normal};

    fn ids(n: usize) -> Vec<BasinId> {
        (0..n).map(|i| BasinId::new(format!("b{i:03}"))).collect()
    }

    fn blobs(centres: &[[f64; 2]], per: usize, sd: f64, seed: u64) -> (Array2<f64>, Vec<usize>) {
        let mut rng = rng_from(seed);
        let noise = Normal::new(0.0, sd).unwrap();
        let n = centres.len() * per;
        let mut pts = Array2::zeros((n, 2));
        let mut truth = Vec::with_capacity(n);
        for (c, centre) in centres.iter().enumerate() {
            for i in 0..per {
                let r = c * per + i;
                pts[[r, 0]] = centre[0] + noise.sample(&mut rng);
                pts[[r, 1]] = centre[1] + noise.sample(&mut rng);
                truth.push(c);
            }
        }
        (pts, truth)
    }

    /// True when the two labelings induce the same partition.
    fn same_partition(a: &[usize], b: &[usize]) -> bool {
        (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
    }

    #[test]
    fn two_point_blobs() {
        let pts = array![[0.0], [0.0], [10.0], [10.0]];
        let m = kmeans_fit(pts.view(), &ids(4), 2, 1, 10).unwrap();
        let mut c: Vec<f64> = m.centroids.column(0).to_vec();
        c.sort_by(f64::total_cmp);
        assert_eq!(c, vec![0.0, 10.0]);
        assert_eq!(m.inertia, 0.0);
    }

    #[test]
    fn recovers_planted_blobs_deterministically() {
        let (pts, truth) = blobs(&[[0.0, 0.0], [10.0, 0.0], [0.0, 10.0]], 20, 0.8, 5);
        let m = kmeans_fit(pts.view(), &ids(60), 3, 9, 10).unwrap();
        assert!(same_partition(&m.labels, &truth));
        assert_eq!(m, kmeans_fit(pts.view(), &ids(60), 3, 9, 10).unwrap());
    }

    #[test]
    fn inertia_never_increases() {
        let (pts, _) = blobs(&[[0.0, 0.0], [3.0, 0.0], [0.0, 3.0], [3.0, 3.0]], 25, 1.5, 2);
        for seed in 0..20 {
            let m = kmeans_fit(pts.view(), &ids(100), 5, seed, 1).unwrap();
            assert!(m.inertia_history.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        }
    }

    #[test]
    fn silhouette_hand_case() {
        let pts = array![[0.0], [0.2], [10.0], [10.2]];
        let s = silhouette(pts.view(), &[0, 0, 1, 1]).unwrap();
        // outer points: a = 0.2, b = 10.1; inner points: a = 0.2, b = 9.9
        let expected = ((10.1 - 0.2) / 10.1 + (9.9 - 0.2) / 9.9) / 2.0;
        assert!((s - expected).abs() < 1e-12);
        assert!((s - 0.98).abs() < 1e-4);
    }

    #[test]
    fn silhouette_singletons_and_errors() {
        let pts = array![[0.0], [1.0], [5.0]];
        assert_eq!(silhouette(pts.view(), &[0, 1, 2]).unwrap(), 0.0);
        assert!(matches!(silhouette(pts.view(), &[0, 0, 0]), Err(ClusterError::SingleCluster)));
        assert!(matches!(silhouette(pts.view(), &[0, 2, 2]), Err(ClusterError::EmptyCluster(1))));
    }

    #[test]
    fn interleaved_copies_score_non_positive() {
        // Two identical point sets, each point's twin put in the other cluster.
        let base = [0.0, 1.0, 2.5, 4.0, 7.0];
        let pts = Array2::from_shape_fn((10, 1), |(i, _)| base[i % 5]);
        let labels: Vec<usize> = (0..10).map(|i| usize::from(i >= 5)).collect();
        let s = silhouette(pts.view(), &labels).unwrap();
        // brute-force oracle
        let mut total = 0.0;
        for i in 0..10 {
            let (mut a, mut na, mut b, mut nb) = (0.0, 0, 0.0, 0);
            for j in 0..10 {
                if i == j {
                    continue;
                }
                let d = (pts[[i, 0]] - pts[[j, 0]]).abs();
                if labels[i] == labels[j] {
                    a += d;
                    na += 1;
                } else {
                    b += d;
                    nb += 1;
                }
            }
            let (a, b) = (a / na as f64, b / nb as f64);
            total += (b - a) / a.max(b);
        }
        assert!((s - total / 10.0).abs() < 1e-12);
        assert!(s <= 0.0);
    }

    #[test]
    fn degenerate_and_range_errors() {
        let pts = array![[1.0], [1.0], [1.0], [2.0]];
        assert!(matches!(
            kmeans_fit(pts.view(), &ids(4), 3, 0, 10),
            Err(ClusterError::Degenerate { k: 3, distinct: 2 })
        ));
        assert!(matches!(kmeans_fit(pts.view(), &ids(4), 1, 0, 10), Err(ClusterError::KOutOfRange { .. })));
        assert!(matches!(kmeans_fit(pts.view(), &ids(4), 5, 0, 10), Err(ClusterError::KOutOfRange { .. })));
    }

    #[test]
    fn translation_leaves_assignments_unchanged() {
        let (pts, _) = blobs(&[[0.0, 0.0], [4.0, 1.0], [1.0, 5.0]], 15, 1.0, 8);
        let shifted = &pts + &array![[100.0, -37.5]];
        let a = kmeans_fit(pts.view(), &ids(45), 3, 4, 10).unwrap();
        let b = kmeans_fit(shifted.view(), &ids(45), 3, 4, 10).unwrap();
        assert!(same_partition(&a.labels, &b.labels));
    }

    #[test]
    fn select_k_finds_planted_counts() {
        let (two, _) = blobs(&[[0.0, 0.0], [12.0, 12.0]], 20, 1.0, 1);
        let sel = select_k(two.view(), &ids(40), 2, 8, 3, 10).unwrap();
        assert_eq!(sel.best_k, 2);
        assert_eq!(sel.profile.len(), 7);
        let (three, _) = blobs(&[[0.0, 0.0], [12.0, 0.0], [0.0, 12.0]], 20, 1.0, 1);
        let sel = select_k(three.view(), &ids(60), 2, 8, 3, 10).unwrap();
        assert_eq!(sel.best_k, 3);
        let again = select_k(three.view(), &ids(60), 2, 8, 3, 10).unwrap();
        assert_eq!(sel.model, again.model);
    }

    #[test]
    fn loco_partitions_basins() {
        let (pts, _) = blobs(&[[0.0, 0.0], [9.0, 0.0], [0.0, 9.0], [9.0, 9.0]], 6, 0.5, 3);
        let basins = ids(24);
        let mut m = kmeans_fit(pts.view(), &basins, 4, 1, 10).unwrap();
        m.representation = "aef".into();
        let d = |s| NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap();
        let p = Period::new(d("2000-01-01"), d("2000-12-31")).unwrap();
        let splits = loco_splits(&m, p, p);
        assert_eq!(splits.len(), 4);
        let mut all: Vec<BasinId> = splits.iter().flat_map(|s| s.test_basins.clone()).collect();
        all.sort();
        assert_eq!(all, basins);
        for s in &splits {
            assert!(s.train_basins.iter().all(|b| !s.test_basins.contains(b)));
            assert_eq!(s.train_basins.len() + s.test_basins.len(), 24);
            assert!(s.label.starts_with("aef-cluster"));
        }
    }
}

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{kge_pairs, nse_pairs, MetricError};
use crate::seed::rng_stream;

/// Replicate scores from resampling a pooled prediction ensemble.
/// Replicates whose score is undefined (zero observation variance, zero
/// mean) hold `None`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub pooled_size: usize,
    pub replicate_size: usize,
    pub fraction: f64,
    pub nse: Vec<Option<f64>>,
    pub kge: Vec<Option<f64>>,
}

impl BootstrapResult {
    pub fn reps(&self) -> usize {
        self.nse.len()
    }

    pub fn defined_nse(&self) -> Vec<f64> {
        self.nse.iter().flatten().copied().collect()
    }

    pub fn defined_kge(&self) -> Vec<f64> {
        self.kge.iter().flatten().copied().collect()
    }

    pub fn undefined_count(&self) -> usize {
        self.nse.iter().filter(|v| v.is_none()).count() + self.kge.iter().filter(|v| v.is_none()).count()
    }
}

/// Pools the `(obs, sim)` pairs of every seed run, then draws
/// `⌊fraction·N⌋` pairs with replacement per replicate and rescores NSE and
/// KGE. Replicate `r` uses its own stream of the generator seeded by `seed`,
/// so each replicate is independent of evaluation order.
pub fn pool_and_bootstrap(
    seed_runs: &[Vec<(f64, f64)>],
    fraction: f64,
    reps: usize,
    seed: u64,
) -> Result<BootstrapResult, MetricError> {
    if seed_runs.is_empty() {
        return Err(MetricError::InvalidBootstrap("no seed runs".into()));
    }
    if !(fraction > 0.0 && fraction <= 1.0) || reps == 0 {
        return Err(MetricError::InvalidBootstrap(format!("fraction {fraction}, reps {reps}")));
    }
    let pooled: Vec<(f64, f64)> = seed_runs
        .iter()
        .flatten()
        .filter(|(o, s)| !o.is_nan() && !s.is_nan())
        .copied()
        .collect();
    let n = pooled.len();
    if n < 5 {
        return Err(MetricError::InvalidBootstrap(format!("pooled size {n} < 5")));
    }
    let size = ((fraction * n as f64).floor() as usize).max(2);
    let mut nse = Vec::with_capacity(reps);
    let mut kge = Vec::with_capacity(reps);
    let mut sample = Vec::with_capacity(size);
    for r in 0..reps {
        let mut rng = rng_stream(seed, r as u64);
        sample.clear();
        sample.extend((0..size).map(|_| pooled[rng.random_range(0..n)]));
        nse.push(nse_pairs(&sample).ok());
        kge.push(kge_pairs(&sample).ok().map(|k| k.kge));
    }
    Ok(BootstrapResult {
        pooled_size: n,
        replicate_size: size,
        fraction,
        nse,
        kge,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run(n: usize, offset: f64) -> Vec<(f64, f64)> {
        (0..n)
            .map(|i| {
                let o = 1.0 + (i as f64 * 0.7).sin().abs() * 3.0;
                (o, o + offset * (i as f64 * 1.3).cos())
            })
            .collect()
    }

    #[test]
    fn replicate_size_is_floor_of_fraction() {
        let b = pool_and_bootstrap(&[run(6, 0.2), run(4, 0.2)], 0.8, 100, 1).unwrap();
        assert_eq!(b.pooled_size, 10);
        assert_eq!(b.replicate_size, 8);
        assert_eq!(b.reps(), 100);
    }

    #[test]
    fn perfect_predictions_stay_perfect() {
        let b = pool_and_bootstrap(&[run(30, 0.0)], 0.8, 100, 3).unwrap();
        assert!(b.nse.iter().all(|v| *v == Some(1.0)));
    }

    #[test]
    fn deterministic_per_seed() {
        let runs = [run(40, 0.5), run(40, 0.3)];
        let a = pool_and_bootstrap(&runs, 0.8, 100, 9).unwrap();
        let b = pool_and_bootstrap(&runs, 0.8, 100, 9).unwrap();
        assert_eq!(a, b);
        let c = pool_and_bootstrap(&runs, 0.8, 100, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn undefined_replicates_are_flagged() {
        // five identical observations and one outlier: some replicates miss the outlier
        let mut pairs = vec![(1.0, 1.0); 5];
        pairs.push((2.0, 2.0));
        let b = pool_and_bootstrap(&[pairs], 0.8, 200, 0).unwrap();
        assert!(b.undefined_count() > 0);
        assert!(b.defined_nse().len() < 200);
    }

    #[test]
    fn rejects_bad_requests() {
        assert!(pool_and_bootstrap(&[], 0.8, 100, 0).is_err());
        assert!(pool_and_bootstrap(&[run(4, 0.1)], 0.8, 100, 0).is_err());
        assert!(pool_and_bootstrap(&[run(10, 0.1)], 0.0, 100, 0).is_err());
    }

    #[test]
    fn mean_replicate_nse_tracks_pooled_nse() {
        let runs = [run(200, 0.6), run(200, 0.4)];
        let pooled: Vec<(f64, f64)> = runs.iter().flatten().copied().collect();
        let target = nse_pairs(&pooled).unwrap();
        let b = pool_and_bootstrap(&runs, 0.8, 2000, 4).unwrap();
        let v = b.defined_nse();
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        assert!((mean - target).abs() < 0.05, "{mean} vs {target}");
    }
}

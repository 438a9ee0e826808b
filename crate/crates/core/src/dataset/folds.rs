use rand::seq::SliceRandom;

use super::{BasinId, DataError, Period, SplitSpec};
use crate::seed::rng_from;

/// Seeded k-fold partition of `basins`. Fold sizes differ by at most one, the
/// larger folds first; each fold trains on every basin outside its test set.
pub fn build_folds(
    basins: &[BasinId],
    n_folds: usize,
    seed: u64,
    train_period: Period,
    test_period: Period,
) -> Result<Vec<SplitSpec>, DataError> {
    if n_folds < 2 || basins.len() < n_folds {
        return Err(DataError::TooFewBasins {
            basins: basins.len(),
            folds: n_folds,
        });
    }
    let mut order = basins.to_vec();
    order.shuffle(&mut rng_from(seed));
    let base = order.len() / n_folds;
    let extra = order.len() % n_folds;
    let mut splits = Vec::with_capacity(n_folds);
    let mut offset = 0;
    for fold in 0..n_folds {
        let size = base + usize::from(fold < extra);
        let test: Vec<BasinId> = order[offset..offset + size].to_vec();
        let train: Vec<BasinId> = order[..offset].iter().chain(&order[offset + size..]).cloned().collect();
        offset += size;
        splits.push(SplitSpec {
            label: format!("fold{fold}"),
            train_basins: train,
            test_basins: test,
            train_period,
            test_period,
        });
    }
    Ok(splits)
}

//! Skill scores, the seed-pooled bootstrap, the two-sample KS test and
//! empirical CDFs.

mod bootstrap;
mod cdf;
mod ks;

use serde::{Deserialize, Serialize};

pub use bootstrap::{pool_and_bootstrap, BootstrapResult};
pub use cdf::cdf_points;
pub use ks::{ks_two_sample, ks_two_sample_with, KsMethod, KsResult};

use crate::dataset::BasinId;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum MetricError {
    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("need at least 2 valid pairs, got {0}")]
    TooFewPairs(usize),
    #[error("observations have zero variance")]
    ZeroVariance,
    #[error("observations have zero mean")]
    ZeroMean,
    #[error("empty sample")]
    EmptySample,
    #[error("invalid bootstrap request: {0}")]
    InvalidBootstrap(String),
}

/// One score for one basin and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub experiment: String,
    pub basin: BasinId,
    pub seed: u64,
    pub metric: String,
    pub value: f64,
}

/// Pairs with a missing observation (or simulation) are dropped.
pub fn valid_pairs(obs: &[f64], sim: &[f64]) -> Result<Vec<(f64, f64)>, MetricError> {
    if obs.len() != sim.len() {
        return Err(MetricError::LengthMismatch(obs.len(), sim.len()));
    }
    Ok(obs
        .iter()
        .zip(sim)
        .filter(|(o, s)| !o.is_nan() && !s.is_nan())
        .map(|(&o, &s)| (o, s))
        .collect())
}

/// Nash–Sutcliffe efficiency, `1 - Σ(o-s)² / Σ(o-ō)²`.
pub fn nse(obs: &[f64], sim: &[f64]) -> Result<f64, MetricError> {
    nse_pairs(&valid_pairs(obs, sim)?)
}

pub fn nse_pairs(pairs: &[(f64, f64)]) -> Result<f64, MetricError> {
    if pairs.len() < 2 {
        return Err(MetricError::TooFewPairs(pairs.len()));
    }
    let mean = pairs.iter().map(|p| p.0).sum::<f64>() / pairs.len() as f64;
    let denom: f64 = pairs.iter().map(|p| (p.0 - mean).powi(2)).sum();
    if denom == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    let num: f64 = pairs.iter().map(|p| (p.0 - p.1).powi(2)).sum();
    Ok(1.0 - num / denom)
}

/// Kling–Gupta efficiency and its components.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kge {
    pub kge: f64,
    /// Pearson correlation.
    pub r: f64,
    /// σ_sim / σ_obs.
    pub alpha: f64,
    /// μ_sim / μ_obs.
    pub beta: f64,
}

pub fn kge(obs: &[f64], sim: &[f64]) -> Result<Kge, MetricError> {
    kge_pairs(&valid_pairs(obs, sim)?)
}

/// A constant simulation has no defined correlation; it is scored with r = 0.
pub fn kge_pairs(pairs: &[(f64, f64)]) -> Result<Kge, MetricError> {
    let n = pairs.len();
    if n < 2 {
        return Err(MetricError::TooFewPairs(n));
    }
    let nf = n as f64;
    let mo = pairs.iter().map(|p| p.0).sum::<f64>() / nf;
    let ms = pairs.iter().map(|p| p.1).sum::<f64>() / nf;
    let (mut vo, mut vs, mut cov) = (0.0, 0.0, 0.0);
    for &(o, s) in pairs {
        vo += (o - mo) * (o - mo);
        vs += (s - ms) * (s - ms);
        cov += (o - mo) * (s - ms);
    }
    if vo == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    if mo == 0.0 {
        return Err(MetricError::ZeroMean);
    }
    let (so, ss) = ((vo / nf).sqrt(), (vs / nf).sqrt());
    // sqrt(vo·vs) rather than so·ss keeps r exactly 1 when sim = obs
    let r = if vs == 0.0 { 0.0 } else { cov / (vo * vs).sqrt() };
    let alpha = ss / so;
    let beta = ms / mo;
    let kge = 1.0 - ((r - 1.0).powi(2) + (alpha - 1.0).powi(2) + (beta - 1.0).powi(2)).sqrt();
    Ok(Kge { kge, r, alpha, beta })
}

/// Median of the finite entries, `None` when there are none.
pub fn median(values: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = values.iter().copied().filter(|x| x.is_finite()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
}

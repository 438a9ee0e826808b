//! Synthetic basin fleets for desk-scale verification.
//!
//! Each basin is a capped linear reservoir driven by a shared seasonal weather
//! realisation with small per-basin perturbations, so basins with similar
//! parameters produce similar hydrographs.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use chrono::NaiveDate;
use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, Exp, Normal};

use super::{
    BasinArchive, BasinId, DataError, StaticTable, TableKind, TimeSeriesFrame, FLOW_COLUMN, FORCING_COLUMNS,
    N_ATTRIBUTES, N_EMBEDDING,
};
use crate::seed::{derive_seed, rng_from};

/// Names of the attribute columns that hold the reservoir parameters.
pub const THETA_COLUMNS: [&str; 3] = ["recession_k", "capacity_c", "evap_e"];

const K_RANGE: (f64, f64) = (5.0, 50.0);
const C_RANGE: (f64, f64) = (50.0, 500.0);
const E_RANGE: (f64, f64) = (0.2, 1.0);
const ENCODING_SEED: u64 = 0x5eed_e4c0;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticOptions {
    pub n_basins: usize,
    pub n_days: usize,
    pub seed: u64,
    /// Plant this many parameter regimes instead of drawing parameters
    /// uniformly. Nuisance attributes then carry regime offsets as well.
    pub regimes: Option<usize>,
    pub start: NaiveDate,
}

impl SyntheticOptions {
    pub fn new(n_basins: usize, n_days: usize, seed: u64) -> Self {
        SyntheticOptions {
            n_basins,
            n_days,
            seed,
            regimes: None,
            start: NaiveDate::from_ymd_opt(1980, 1, 1).expect("valid date"),
        }
    }
}

/// Reservoir parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Theta {
    pub recession_k: f64,
    pub capacity: f64,
    pub evap_coeff: f64,
}

impl Theta {
    fn from_unit(u: [f64; 3]) -> Theta {
        let lerp = |(a, b): (f64, f64), t: f64| a + (b - a) * t.clamp(0.0, 1.0);
        Theta {
            recession_k: lerp(K_RANGE, u[0]),
            capacity: lerp(C_RANGE, u[1]),
            evap_coeff: lerp(E_RANGE, u[2]),
        }
    }

    /// Parameters rescaled to the unit cube.
    pub fn to_unit(&self) -> [f64; 3] {
        let inv = |(a, b): (f64, f64), x: f64| (x - a) / (b - a);
        [
            inv(K_RANGE, self.recession_k),
            inv(C_RANGE, self.capacity),
            inv(E_RANGE, self.evap_coeff),
        ]
    }
}

/// Runs `S[t+1] = clamp(S[t] + P[t] - e*PET[t] - Q[t], 0, c)`, `Q[t] = S[t]/k`
/// from `S[0] = c/2`. Returns `(storage, flow)`; storage has one more entry.
pub fn simulate_reservoir(theta: &Theta, prcp: &[f64], pet: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut storage = Vec::with_capacity(prcp.len() + 1);
    let mut flow = Vec::with_capacity(prcp.len());
    let mut s = theta.capacity / 2.0;
    storage.push(s);
    for (&p, &e) in prcp.iter().zip(pet) {
        let q = s / theta.recession_k;
        flow.push(q);
        s = (s + p - theta.evap_coeff * e - q).clamp(0.0, theta.capacity);
        storage.push(s);
    }
    (storage, flow)
}

/// Fleet-wide weather, one value per day.
struct Weather {
    wet: Vec<bool>,
    amount: Vec<f64>,
    temp: Vec<f64>,
    srad_noise: Vec<f64>,
}

fn shared_weather(n_days: usize, rng: &mut impl Rng) -> Weather {
    let amount_dist = Exp::new(1.0 / 8.0).expect("positive rate");
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut w = Weather {
        wet: Vec::with_capacity(n_days),
        amount: Vec::with_capacity(n_days),
        temp: Vec::with_capacity(n_days),
        srad_noise: Vec::with_capacity(n_days),
    };
    let mut wet_yesterday = false;
    for t in 0..n_days {
        let phase = 2.0 * PI * t as f64 / 365.25;
        let p_wet = if wet_yesterday { 0.55 } else { 0.22 } + 0.05 * phase.cos();
        let wet = rng.random::<f64>() < p_wet;
        wet_yesterday = wet;
        w.wet.push(wet);
        w.amount.push(amount_dist.sample(rng));
        w.temp.push(2.0 * noise.sample(rng));
        w.srad_noise.push(15.0 * noise.sample(rng));
    }
    w
}

/// Generates a fleet with uniformly drawn reservoir parameters.
pub fn generate_synthetic_fleet(n_basins: usize, n_days: usize, seed: u64) -> Result<BasinArchive, DataError> {
    generate_synthetic_fleet_with(&SyntheticOptions::new(n_basins, n_days, seed))
}

pub fn generate_synthetic_fleet_with(opts: &SyntheticOptions) -> Result<BasinArchive, DataError> {
    if opts.n_basins < 2 {
        return Err(DataError::InvalidSynthetic(format!("need at least 2 basins, got {}", opts.n_basins)));
    }
    if opts.n_days < 800 {
        return Err(DataError::InvalidSynthetic(format!("need at least 800 days, got {}", opts.n_days)));
    }
    if opts.regimes.is_some_and(|r| r == 0 || r > opts.n_basins) {
        return Err(DataError::InvalidSynthetic("regime count must be in 1..=n_basins".into()));
    }
    let mut rng = rng_from(derive_seed(opts.seed, "synthetic-fleet"));
    let unit: Normal<f64> = Normal::new(0.0, 1.0).expect("unit normal");
    let n_nuisance = N_ATTRIBUTES - THETA_COLUMNS.len();

    // Regime centres in the unit cube plus their nuisance offsets.
    let centres: Vec<([f64; 3], Vec<f64>)> = (0..opts.regimes.unwrap_or(0))
        .map(|_| {
            let c = [rng.random(), rng.random(), rng.random()];
            let offsets = (0..n_nuisance).map(|_| 3.0 * unit.sample(&mut rng)).collect();
            (c, offsets)
        })
        .collect();

    let mut thetas = Vec::with_capacity(opts.n_basins);
    let mut nuisance = Vec::with_capacity(opts.n_basins);
    for i in 0..opts.n_basins {
        if centres.is_empty() {
            thetas.push(Theta::from_unit([rng.random(), rng.random(), rng.random()]));
            nuisance.push((0..n_nuisance).map(|_| unit.sample(&mut rng)).collect::<Vec<f64>>());
        } else {
            let (c, off) = &centres[i % centres.len()];
            let jitter = |x: f64, rng: &mut _| (x + 0.03 * unit.sample(rng)).clamp(0.0, 1.0);
            thetas.push(Theta::from_unit([jitter(c[0], &mut rng), jitter(c[1], &mut rng), jitter(c[2], &mut rng)]));
            nuisance.push(off.iter().map(|o| o + 0.3 * unit.sample(&mut rng)).collect());
        }
    }

    let weather = shared_weather(opts.n_days, &mut rng);
    let basins: Vec<BasinId> = (0..opts.n_basins).map(|i| BasinId::new(format!("syn{i:05}"))).collect();

    let mut forcings = BTreeMap::new();
    let mut flow = BTreeMap::new();
    for (b, theta) in basins.iter().zip(&thetas) {
        let (columns, prcp, pet) = basin_forcings(&weather, opts.n_days, &mut rng);
        let (_, q) = simulate_reservoir(theta, &prcp, &pet);
        forcings.insert(b.clone(), TimeSeriesFrame::new(opts.start, columns)?);
        flow.insert(b.clone(), TimeSeriesFrame::new(opts.start, vec![(FLOW_COLUMN.to_owned(), q)])?);
    }

    let mut attr_names: Vec<String> = THETA_COLUMNS.iter().map(|s| s.to_string()).collect();
    attr_names.extend((0..n_nuisance).map(|i| format!("nuisance_{i:02}")));
    let mut attrs = Array2::zeros((opts.n_basins, N_ATTRIBUTES));
    for (i, (theta, extra)) in thetas.iter().zip(&nuisance).enumerate() {
        attrs[[i, 0]] = theta.recession_k;
        attrs[[i, 1]] = theta.capacity;
        attrs[[i, 2]] = theta.evap_coeff;
        for (j, v) in extra.iter().enumerate() {
            attrs[[i, 3 + j]] = *v;
        }
    }

    // Fixed linear encoding shared by every fleet; noise comes from the fleet seed.
    let mut enc_rng = rng_from(ENCODING_SEED);
    let encoding: Vec<[f64; 4]> = (0..N_EMBEDDING)
        .map(|_| {
            [
                unit.sample(&mut enc_rng),
                unit.sample(&mut enc_rng),
                unit.sample(&mut enc_rng),
                unit.sample(&mut enc_rng),
            ]
        })
        .collect();
    let mut emb = Array2::zeros((opts.n_basins, N_EMBEDDING));
    for (i, theta) in thetas.iter().enumerate() {
        let u = theta.to_unit();
        for (j, w) in encoding.iter().enumerate() {
            let centred = [u[0] - 0.5, u[1] - 0.5, u[2] - 0.5];
            emb[[i, j]] = w[3] * 0.1 + w[0] * centred[0] + w[1] * centred[1] + w[2] * centred[2]
                + 0.01 * unit.sample(&mut rng);
        }
    }

    Ok(BasinArchive {
        attributes: StaticTable::new(TableKind::Attributes17, basins.clone(), attr_names, attrs)?,
        embeddings: StaticTable::new(
            TableKind::Aef64,
            basins,
            (0..N_EMBEDDING).map(|i| format!("e{i:02}")).collect(),
            emb,
        )?,
        forcings,
        flow,
        area_km2: BTreeMap::new(),
    })
}

type ForcingColumns = Vec<(String, Vec<f64>)>;

fn basin_forcings(w: &Weather, n_days: usize, rng: &mut impl Rng) -> (ForcingColumns, Vec<f64>, Vec<f64>) {
    let unit: Normal<f64> = Normal::new(0.0, 1.0).expect("unit normal");
    let rain_scale = (0.15 * unit.sample(rng)).exp();
    let temp_offset = 1.5 * unit.sample(rng);
    let mut cols: Vec<Vec<f64>> = vec![Vec::with_capacity(n_days); FORCING_COLUMNS.len()];
    let mut prcp = Vec::with_capacity(n_days);
    let mut pet = Vec::with_capacity(n_days);
    for t in 0..n_days {
        let phase = 2.0 * PI * t as f64 / 365.25;
        let season = -phase.cos();
        let p = if w.wet[t] {
            w.amount[t] * rain_scale * (0.2 * unit.sample(rng)).exp()
        } else {
            0.0
        };
        let tmean = 10.0 + 12.0 * season + w.temp[t] + temp_offset;
        let dayl = 43_200.0 + 14_000.0 * season;
        let srad = (220.0 + 110.0 * season + w.srad_noise[t] - if w.wet[t] { 60.0 } else { 0.0 }).max(20.0);
        let vp = (900.0 + 550.0 * season + 40.0 * unit.sample(rng)).max(50.0);
        let e = (1.5 + 1.2 * season + 0.1 * (tmean - 10.0 - 12.0 * season)).max(0.0);
        let row = [p, dayl, srad, tmean - 5.0, tmean + 5.0, vp, e];
        cols.iter_mut().zip(row).for_each(|(c, v)| c.push(v));
        prcp.push(p);
        pet.push(e);
    }
    let named = FORCING_COLUMNS.iter().map(|s| s.to_string()).zip(cols).collect();
    (named, prcp, pet)
}

/// Reservoir parameters of every basin in a synthetic archive, read back from
/// the attribute table.
pub fn fleet_thetas(archive: &BasinArchive) -> Vec<Theta> {
    let v = archive.attributes.values();
    (0..v.nrows())
        .map(|i| Theta {
            recession_k: v[[i, 0]],
            capacity: v[[i, 1]],
            evap_coeff: v[[i, 2]],
        })
        .collect()
}

/// Table of unit-scaled reservoir parameters, for "true similarity" checks.
pub fn theta_table(archive: &BasinArchive) -> StaticTable {
    let thetas = fleet_thetas(archive);
    let mut values = Array2::zeros((thetas.len(), 3));
    for (i, t) in thetas.iter().enumerate() {
        values.row_mut(i).assign(&Array1::from(t.to_unit().to_vec()));
    }
    StaticTable::new(
        TableKind::Custom,
        archive.basins().to_vec(),
        THETA_COLUMNS.iter().map(|s| s.to_string()).collect(),
        values,
    )
    .expect("theta table shape")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pearson(a: &[f64], b: &[f64]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().sum::<f64>() / n;
        let mb = b.iter().sum::<f64>() / n;
        let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
        let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
        let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
        cov / (va * vb).sqrt()
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_synthetic_fleet(4, 900, 7).unwrap();
        let b = generate_synthetic_fleet(4, 900, 7).unwrap();
        assert_eq!(a, b);
        let c = generate_synthetic_fleet(4, 900, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_bad_requests() {
        assert!(generate_synthetic_fleet(1, 900, 0).is_err());
        assert!(generate_synthetic_fleet(4, 799, 0).is_err());
    }

    #[test]
    fn flow_non_negative_and_storage_capped() {
        let fleet = generate_synthetic_fleet(6, 1000, 3).unwrap();
        for (b, theta) in fleet.basins().iter().zip(fleet_thetas(&fleet)) {
            let f = &fleet.forcings[b];
            let (storage, q) = simulate_reservoir(&theta, f.column("prcp").unwrap(), f.column("pet").unwrap());
            assert!(q.iter().all(|&x| x >= 0.0));
            assert!(storage.iter().all(|&s| s <= theta.capacity && s >= 0.0));
            assert_eq!(fleet.flow[b].column_at(0), q.as_slice());
        }
    }

    #[test]
    fn water_balance_closes_without_clipping() {
        let theta = Theta {
            recession_k: 10.0,
            capacity: 1e9,
            evap_coeff: 0.5,
        };
        let prcp: Vec<f64> = (0..200).map(|t| if t % 3 == 0 { 12.0 } else { 0.0 }).collect();
        let pet = vec![1.0; 200];
        let (s, q) = simulate_reservoir(&theta, &prcp, &pet);
        assert!(s.iter().all(|&x| x > 0.0));
        let (a, b) = (20, 150);
        let lhs = s[b] - s[a];
        let rhs: f64 = (a..b).map(|t| prcp[t] - theta.evap_coeff * pet[t] - q[t]).sum();
        assert!((lhs - rhs).abs() < 1e-12 * s[a], "{lhs} vs {rhs}");
    }

    #[test]
    fn similar_parameters_give_correlated_flows() {
        // For each fleet, take the closest pair in parameter space and a third
        // basin farther from both; the pair should correlate more.
        let mut wins = 0;
        let mut trials = 0;
        for seed in 0..24 {
            let fleet = generate_synthetic_fleet(6, 900, seed).unwrap();
            let units: Vec<[f64; 3]> = fleet_thetas(&fleet).iter().map(Theta::to_unit).collect();
            let dist = |i: usize, j: usize| -> f64 {
                (0..3).map(|k| (units[i][k] - units[j][k]).powi(2)).sum::<f64>().sqrt()
            };
            let n = units.len();
            let (mut a, mut b) = (0, 1);
            for i in 0..n {
                for j in i + 1..n {
                    if dist(i, j) < dist(a, b) {
                        (a, b) = (i, j);
                    }
                }
            }
            let Some(c) = (0..n)
                .filter(|&c| c != a && c != b)
                .max_by(|&x, &y| dist(a, x).min(dist(b, x)).total_cmp(&dist(a, y).min(dist(b, y))))
            else {
                continue;
            };
            let q = |i: usize| fleet.flow[&fleet.basins()[i]].column_at(0)[365..].to_vec();
            trials += 1;
            if pearson(&q(a), &q(b)) > pearson(&q(a), &q(c)) {
                wins += 1;
            }
        }
        assert!(wins * 2 > trials, "{wins}/{trials}");
    }

    #[test]
    fn planted_regimes_group_parameters() {
        let mut opts = SyntheticOptions::new(12, 800, 5);
        opts.regimes = Some(3);
        let fleet = generate_synthetic_fleet_with(&opts).unwrap();
        let u: Vec<[f64; 3]> = fleet_thetas(&fleet).iter().map(Theta::to_unit).collect();
        for i in 0..12 {
            let j = (i + 3) % 12;
            let d: f64 = (0..3).map(|k| (u[i][k] - u[j][k]).powi(2)).sum::<f64>().sqrt();
            assert!(d < 0.3);
        }
    }
}

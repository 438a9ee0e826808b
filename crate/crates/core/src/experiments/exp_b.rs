use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::runner::{run_cells, CellSpec, RunSummary};
use super::{csv_err, io_err, CellModel, ExperimentError, Settings};
use crate::dataset::{load_static_table, write_static_table, BasinArchive, BasinId, StaticTable, TableKind};
use crate::metrics::median;
use crate::model::{extract_fusion_embeddings, train, FrontendMode, ModelConfig};
use crate::seed::{derive_seed, descriptor_hash};
use crate::similarity::{rank_and_select, select_random, similarity_matrix, SimilarityMatrix};

pub(crate) const EXPERIMENT: &str = "exp-b";

/// How donors are chosen for a target.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DonorMethod {
    Attributes,
    Fusion,
    Aef,
    /// Ranking on a user-supplied descriptor table.
    Custom,
    Random,
}

impl DonorMethod {
    pub fn as_str(self) -> &'static str {
        match self {
            DonorMethod::Attributes => "attributes",
            DonorMethod::Fusion => "fusion",
            DonorMethod::Aef => "aef",
            DonorMethod::Custom => "custom",
            DonorMethod::Random => "random",
        }
    }
}

impl fmt::Display for DonorMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for DonorMethod {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "attributes" => Ok(DonorMethod::Attributes),
            "fusion" => Ok(DonorMethod::Fusion),
            "aef" => Ok(DonorMethod::Aef),
            "custom" => Ok(DonorMethod::Custom),
            "random" => Ok(DonorMethod::Random),
            other => Err(format!("unknown donor method {other:?}")),
        }
    }
}

/// One rung of the donor-count ladder.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "RawK", into = "RawK")]
pub enum KStep {
    Count(usize),
    /// Every basin in the pool except the target.
    All,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum RawK {
    Count(usize),
    Word(String),
}

impl TryFrom<RawK> for KStep {
    type Error = String;

    fn try_from(raw: RawK) -> Result<Self, Self::Error> {
        match raw {
            RawK::Count(0) => Err("k must be at least 1".into()),
            RawK::Count(k) => Ok(KStep::Count(k)),
            RawK::Word(w) if w == "all" => Ok(KStep::All),
            RawK::Word(w) => Err(format!("k ladder entry {w:?} is neither a count nor \"all\"")),
        }
    }
}

impl From<KStep> for RawK {
    fn from(k: KStep) -> Self {
        match k {
            KStep::Count(n) => RawK::Count(n),
            KStep::All => RawK::Word("all".into()),
        }
    }
}

impl fmt::Display for KStep {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KStep::Count(k) => write!(f, "{k}"),
            KStep::All => f.write_str("all"),
        }
    }
}

/// Counts strictly increasing, `all` at most once and last.
pub fn check_ladder(ladder: &[KStep]) -> Result<(), String> {
    if ladder.is_empty() {
        return Err("k ladder is empty".into());
    }
    let mut prev = 0;
    for (i, k) in ladder.iter().enumerate() {
        match *k {
            KStep::Count(c) if c > prev => prev = c,
            KStep::All if i + 1 == ladder.len() => {}
            _ => return Err("k ladder not increasing".into()),
        }
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExpBOptions {
    pub targets: Vec<BasinId>,
    pub methods: Vec<DonorMethod>,
    pub k_ladder: Vec<KStep>,
    pub seeds_per_cell: usize,
    /// Static table fed to the model, the same for every method so that
    /// cells differ only in their donors.
    pub static_input: TableKind,
    /// Table ranked by [`DonorMethod::Custom`].
    pub custom_table: Option<StaticTable>,
}

impl Default for ExpBOptions {
    fn default() -> Self {
        ExpBOptions {
            targets: Vec::new(),
            methods: vec![
                DonorMethod::Attributes,
                DonorMethod::Fusion,
                DonorMethod::Aef,
                DonorMethod::Random,
            ],
            k_ladder: [100, 200, 300, 400, 500, 600]
                .into_iter()
                .map(KStep::Count)
                .chain([KStep::All])
                .collect(),
            seeds_per_cell: 1,
            static_input: TableKind::Attributes17,
            custom_table: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExpBOutcome {
    pub run: RunSummary,
    /// (target, method, k, seed index) → donors in selection order.
    pub donors: BTreeMap<(BasinId, DonorMethod, usize, usize), Vec<BasinId>>,
}

/// Attr-fc model on every pool basin except `target`; returns the pool's
/// fusion embeddings. Cached under `exp-b/fusion/<target>-<hash>.csv`, the
/// hash covering config, train period and pool.
fn fusion_table(
    settings: &Settings,
    archive: &BasinArchive,
    pool: &[BasinId],
    target: &BasinId,
) -> Result<StaticTable, ExperimentError> {
    let dir = settings.output_dir.join(EXPERIMENT).join("fusion");
    std::fs::create_dir_all(&dir).map_err(io_err(&dir))?;
    let attrs = archive.attributes.select(pool)?;
    let cfg = ModelConfig {
        frontend: FrontendMode::AttrFc,
        n_static: attrs.width(),
        seed: derive_seed(settings.master_seed, &format!("{EXPERIMENT}/fusion/{target}")),
        ..settings.model.clone()
    };
    let key = format!(
        "{}|{}|{}",
        serde_json::to_string(&cfg).expect("config serialises"),
        settings.train_period,
        pool.iter().map(BasinId::as_str).collect::<Vec<_>>().join(",")
    );
    let path = dir.join(format!("{target}-{}.csv", descriptor_hash(&key)));
    if path.exists() {
        return Ok(load_static_table(&path, TableKind::FusionEmbedding)?);
    }
    let donors: Vec<BasinId> = pool.iter().filter(|b| *b != target).cloned().collect();
    settings.progress(format!("[{EXPERIMENT}] training fusion model for {target} on {} basins", donors.len()));
    let model = train(&cfg, archive, &attrs, &donors, settings.train_period)?;
    let table = extract_fusion_embeddings(&model, &attrs)?;
    write_static_table(&table, &path)?;
    Ok(table)
}

/// Donor-count scaling: for each target, method, ladder rung and seed, train
/// on the selected donors and score the target's test period.
///
/// Cells whose donor sets coincide (the full-pool rung) share one fit. Writes
/// `results_exp-b.csv`, `donors_exp-b.csv` and `summary_exp-b.csv`.
pub fn run_experiment_b(
    settings: &Settings,
    opts: &ExpBOptions,
    archive: &BasinArchive,
    model: &dyn CellModel,
) -> Result<ExpBOutcome, ExperimentError> {
    check_ladder(&opts.k_ladder).map_err(ExperimentError::InvalidPlan)?;
    if opts.targets.is_empty() || opts.methods.is_empty() || opts.seeds_per_cell == 0 {
        return Err(ExperimentError::InvalidPlan(
            "experiment B needs targets, methods and at least one seed".into(),
        ));
    }
    let pool = settings.pool(archive)?;
    for t in &opts.targets {
        if !pool.contains(t) {
            return Err(ExperimentError::UnknownBasin(t.clone()));
        }
    }
    let max_k = pool.len() - 1;
    let mut ks = Vec::new();
    let mut skipped = Vec::new();
    for step in &opts.k_ladder {
        let k = match *step {
            KStep::Count(k) if k > max_k => {
                skipped.push(format!("k={k} exceeds the {max_k} donors available to each target"));
                continue;
            }
            KStep::Count(k) => k,
            KStep::All => max_k,
        };
        if !ks.contains(&k) {
            ks.push(k);
        }
    }

    let table_for = |kind: TableKind| -> Result<SimilarityMatrix, ExperimentError> {
        let t = super::static_table(archive, kind)?.select(&pool)?;
        Ok(similarity_matrix(&t)?)
    };
    let mut shared: BTreeMap<DonorMethod, SimilarityMatrix> = BTreeMap::new();
    for &m in &opts.methods {
        let matrix = match m {
            DonorMethod::Attributes => table_for(TableKind::Attributes17)?,
            DonorMethod::Aef => table_for(TableKind::Aef64)?,
            DonorMethod::Custom => {
                let t = opts
                    .custom_table
                    .as_ref()
                    .ok_or_else(|| ExperimentError::InvalidPlan("custom method needs a custom table".into()))?;
                similarity_matrix(&t.select(&pool)?)?
            }
            DonorMethod::Fusion | DonorMethod::Random => continue,
        };
        shared.insert(m, matrix);
    }

    let mut cells = Vec::new();
    let mut donors_out = BTreeMap::new();
    for target in &opts.targets {
        let fusion = if opts.methods.contains(&DonorMethod::Fusion) {
            Some(similarity_matrix(&fusion_table(settings, archive, &pool, target)?)?)
        } else {
            None
        };
        for &method in &opts.methods {
            for &k in &ks {
                for s in 0..opts.seeds_per_cell {
                    let donors = match method {
                        DonorMethod::Random => select_random(
                            &pool,
                            target,
                            k,
                            derive_seed(settings.master_seed, &format!("{EXPERIMENT}/random/{target}/k={k}/seed={s}")),
                        )?,
                        DonorMethod::Fusion => rank_and_select(fusion.as_ref().expect("fusion matrix"), target, k)?,
                        m => rank_and_select(&shared[&m], target, k)?,
                    };
                    if donors.contains(target) {
                        return Err(ExperimentError::TargetLeak { target: target.clone() });
                    }
                    let mut train_basins = donors.clone();
                    train_basins.sort();
                    donors_out.insert((target.clone(), method, k, s), donors);
                    cells.push(CellSpec {
                        static_kind: opts.static_input,
                        split: target.to_string(),
                        method: method.as_str().to_owned(),
                        k: Some(k),
                        seed_index: s,
                        seed: derive_seed(settings.master_seed, &format!("{EXPERIMENT}/train/{target}/seed={s}")),
                        train_basins,
                        test_basins: vec![target.clone()],
                    });
                }
            }
        }
    }
    let run = run_cells(EXPERIMENT, settings, archive, model, cells, skipped)?;

    let out = &settings.output_dir;
    let path = out.join(format!("donors_{EXPERIMENT}.csv"));
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["target", "method", "k", "seed", "rank", "donor_id"])
        .map_err(csv_err(&path))?;
    for ((t, m, k, s), ds) in &donors_out {
        for (r, d) in ds.iter().enumerate() {
            w.write_record([t.as_str(), m.as_str(), &k.to_string(), &s.to_string(), &(r + 1).to_string(), d.as_str()])
                .map_err(csv_err(&path))?;
        }
    }
    w.flush().map_err(io_err(&path))?;

    let mut groups: BTreeMap<(String, usize, String), Vec<f64>> = BTreeMap::new();
    for r in &run.rows {
        if let Some(k) = r.k {
            if r.value.is_finite() && ks.contains(&k) && opts.methods.iter().any(|m| m.as_str() == r.method) {
                groups.entry((r.method.clone(), k, r.metric.clone())).or_default().push(r.value);
            }
        }
    }
    let path = out.join(format!("summary_{EXPERIMENT}.csv"));
    let mut w = csv::Writer::from_path(&path).map_err(csv_err(&path))?;
    w.write_record(["method", "k", "metric", "n", "mean", "median"])
        .map_err(csv_err(&path))?;
    for ((m, k, metric), v) in &groups {
        let mean = v.iter().sum::<f64>() / v.len() as f64;
        w.write_record([
            m.clone(),
            k.to_string(),
            metric.clone(),
            v.len().to_string(),
            mean.to_string(),
            median(v).unwrap_or(f64::NAN).to_string(),
        ])
        .map_err(csv_err(&path))?;
    }
    w.flush().map_err(io_err(&path))?;
    Ok(ExpBOutcome { run, donors: donors_out })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn ladder_rules() {
        assert!(check_ladder(&[KStep::Count(100), KStep::Count(200), KStep::All]).is_ok());
        assert_eq!(
            check_ladder(&[KStep::Count(200), KStep::Count(100)]).unwrap_err(),
            "k ladder not increasing"
        );
        assert!(check_ladder(&[KStep::All, KStep::Count(3)]).is_err());
        assert!(check_ladder(&[KStep::Count(3), KStep::Count(3)]).is_err());
    }

    #[test]
    fn k_step_serde() {
        #[derive(Deserialize)]
        struct W {
            k: Vec<KStep>,
        }
        let w: W = toml::from_str(r#"k = [4, 8, "all"]"#).unwrap();
        assert_eq!(w.k, vec![KStep::Count(4), KStep::Count(8), KStep::All]);
        assert!(toml::from_str::<W>(r#"k = ["most"]"#).is_err());
    }
}

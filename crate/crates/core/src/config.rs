//! Run configuration for the command-line tool.
//!
//! The file is TOML: flat `key = value` pairs grouped under section headers.
//! Every key is optional except the archive location. Unknown keys are
//! rejected. Relative paths resolve against the file's directory.
//!
//! ```toml
//! [data]
//! archive = "camels"            # attributes.csv, embeddings.csv, forcings/, flow/
//! # attributes / embeddings / pixels / forcings / flow / areas override single pieces
//! basin_list = "basins.txt"     # one id per line; default: every basin
//! custom_table = "theta.csv"    # descriptor table for the `custom` donor method
//!
//! [periods]
//! train_start = "1980-01-01"
//! train_end = "2004-12-31"
//! test_start = "2010-01-01"
//! test_end = "2014-12-31"
//!
//! [model]                       # hidden = 128, dropout = 0.4, batch_size = 256, seq_len = 365, ...
//! hidden = 128
//!
//! [experiment]
//! master_seed = 0
//! seeds = 5                     # experiment A seeds per variant and split
//! folds = 5
//! variants = ["attributes-17", "aef-64"]
//! targets = ["01013500"]
//! methods = ["attributes", "fusion", "aef", "random"]
//! k_ladder = [100, 200, 300, 400, 500, 600, "all"]
//! seeds_per_cell = 1
//! static_input = "attributes-17"
//! representations = ["attributes-17", "aef-64"]
//! ks_sampling = "median"        # or "replicates"
//! ks_method = "asymptotic"      # or "exact"
//!
//! [estimators]
//! bins = 16
//! bootstrap_reps = 100
//! bootstrap_fraction = 0.8
//! k_min = 2
//! k_max = 15
//!
//! [output]
//! dir = "results"
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

use crate::dataset::{load_archive_from, load_static_table, ArchivePaths, BasinArchive, DataError, Period, TableKind};
use crate::experiments::{
    check_ladder, CrossRegimeOptions, DonorMethod, ExpAOptions, ExpBOptions, KStep, KsSampling, Settings,
};
use crate::metrics::KsMethod;
use crate::model::ModelConfig;
use crate::BasinId;

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
    #[error("missing required key {0}")]
    Missing(&'static str),
    #[error("{key}: path {path} does not exist")]
    MissingPath { key: &'static str, path: PathBuf },
    #[error("{key}: {reason}")]
    Invalid { key: &'static str, reason: String },
    #[error(transparent)]
    Data(#[from] DataError),
}

fn invalid(key: &'static str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid {
        key,
        reason: reason.into(),
    }
}

mod date_serde {
    use super::*;

    #[derive(Deserialize)]
    #[serde(untagged)]
    enum Raw {
        Text(String),
        Toml(toml::value::Datetime),
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<NaiveDate, D::Error> {
        let text = match Raw::deserialize(d)? {
            Raw::Text(s) => s,
            Raw::Toml(t) => t.to_string(),
        };
        text.parse()
            .map_err(|_| serde::de::Error::custom(format!("{text:?} is not a YYYY-MM-DD date")))
    }

    pub fn serialize<S: Serializer>(date: &NaiveDate, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&date.to_string())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    pub archive: Option<PathBuf>,
    pub attributes: Option<PathBuf>,
    pub embeddings: Option<PathBuf>,
    pub pixels: Option<PathBuf>,
    pub forcings: Option<PathBuf>,
    pub flow: Option<PathBuf>,
    pub areas: Option<PathBuf>,
    pub basin_list: Option<PathBuf>,
    pub custom_table: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PeriodSection {
    #[serde(with = "date_serde")]
    pub train_start: NaiveDate,
    #[serde(with = "date_serde")]
    pub train_end: NaiveDate,
    #[serde(with = "date_serde")]
    pub test_start: NaiveDate,
    #[serde(with = "date_serde")]
    pub test_end: NaiveDate,
}

impl Default for PeriodSection {
    fn default() -> Self {
        let d = |y, m, day| NaiveDate::from_ymd_opt(y, m, day).expect("valid date");
        PeriodSection {
            train_start: d(1980, 1, 1),
            train_end: d(2004, 12, 31),
            test_start: d(2010, 1, 1),
            test_end: d(2014, 12, 31),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentSection {
    pub master_seed: u64,
    pub seeds: usize,
    pub folds: usize,
    pub variants: Vec<TableKind>,
    pub targets: Vec<BasinId>,
    pub methods: Vec<DonorMethod>,
    pub k_ladder: Vec<KStep>,
    pub seeds_per_cell: usize,
    pub static_input: TableKind,
    pub representations: Vec<TableKind>,
    pub cross_seeds: usize,
    /// Cross-regime model input; unset uses the clustered representation.
    pub cross_static_input: Option<TableKind>,
    pub ks_sampling: KsSampling,
    pub ks_method: KsMethod,
}

impl Default for ExperimentSection {
    fn default() -> Self {
        let a = ExpAOptions::default();
        let b = ExpBOptions::default();
        let c = CrossRegimeOptions::default();
        ExperimentSection {
            master_seed: 0,
            seeds: a.seeds,
            folds: a.folds,
            variants: a.variants,
            targets: b.targets,
            methods: b.methods,
            k_ladder: b.k_ladder,
            seeds_per_cell: b.seeds_per_cell,
            static_input: b.static_input,
            representations: c.representations,
            cross_seeds: c.seeds,
            cross_static_input: c.static_input,
            ks_sampling: a.ks_sampling,
            ks_method: a.ks_method,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EstimatorSection {
    pub bins: usize,
    pub bootstrap_reps: usize,
    pub bootstrap_fraction: f64,
    pub k_min: usize,
    pub k_max: usize,
    pub kmeans_restarts: usize,
}

impl Default for EstimatorSection {
    fn default() -> Self {
        EstimatorSection {
            bins: crate::info::DEFAULT_BINS,
            bootstrap_reps: 100,
            bootstrap_fraction: 0.8,
            k_min: 2,
            k_max: 15,
            kmeans_restarts: crate::cluster::DEFAULT_RESTARTS,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        OutputSection { dir: "results".into() }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub periods: PeriodSection,
    pub model: ModelConfig,
    pub experiment: ExperimentSection,
    pub estimators: EstimatorSection,
    pub output: OutputSection,
}

/// Reads, resolves and validates a config file.
pub fn parse_config(path: &Path) -> Result<RunConfig, ConfigError> {
    let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
        path: path.to_owned(),
        source,
    })?;
    let base = path.parent().unwrap_or(Path::new("."));
    let cfg = RunConfig::from_toml(&text, base).map_err(|e| match e {
        ConfigError::Parse { message, .. } => ConfigError::Parse {
            path: path.to_owned(),
            message,
        },
        other => other,
    })?;
    cfg.validate()?;
    Ok(cfg)
}

impl RunConfig {
    /// Parses TOML text, resolving relative paths against `base`. Does not
    /// validate.
    pub fn from_toml(text: &str, base: &Path) -> Result<RunConfig, ConfigError> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| {
            let line = e
                .span()
                .map(|s| format!("line {}: ", text[..s.start].matches('\n').count() + 1))
                .unwrap_or_default();
            ConfigError::Parse {
                path: PathBuf::new(),
                message: format!("{line}{}", e.message().replace('\n', " ")),
            }
        })?;
        cfg.resolve(base);
        Ok(cfg)
    }

    fn resolve(&mut self, base: &Path) {
        let d = &mut self.data;
        for p in [
            &mut d.archive,
            &mut d.attributes,
            &mut d.embeddings,
            &mut d.pixels,
            &mut d.forcings,
            &mut d.flow,
            &mut d.areas,
            &mut d.basin_list,
            &mut d.custom_table,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if self.output.dir.is_relative() {
            self.output.dir = base.join(&self.output.dir);
        }
    }

    /// Checks invariants that do not need the data directory.
    pub fn validate_settings(&self) -> Result<(), ConfigError> {
        self.train_period()?;
        self.test_period()?;
        self.model
            .validate()
            .map_err(|e| invalid("model", e.to_string()))?;
        check_ladder(&self.experiment.k_ladder).map_err(|r| invalid("experiment.k_ladder", r))?;
        let x = &self.experiment;
        if x.seeds == 0 || x.seeds_per_cell == 0 || x.cross_seeds == 0 {
            return Err(invalid("experiment.seeds", "seed counts must be at least 1"));
        }
        if x.folds < 2 {
            return Err(invalid("experiment.folds", "need at least 2 folds"));
        }
        for v in x.variants.iter().chain(&x.representations).chain([&x.static_input]) {
            if !matches!(v, TableKind::Attributes17 | TableKind::Aef64) {
                return Err(invalid("experiment", format!("{v} is not an archive table")));
            }
        }
        let e = &self.estimators;
        if e.bins < 2 {
            return Err(invalid("estimators.bins", "need at least 2 bins"));
        }
        if e.bootstrap_reps == 0 {
            return Err(invalid("estimators.bootstrap_reps", "must be at least 1"));
        }
        if !(e.bootstrap_fraction > 0.0 && e.bootstrap_fraction <= 1.0) {
            return Err(invalid("estimators.bootstrap_fraction", "must lie in (0, 1]"));
        }
        if e.k_min < 2 || e.k_min > e.k_max {
            return Err(invalid("estimators.k_min", format!("K range {}..={} is invalid", e.k_min, e.k_max)));
        }
        if e.kmeans_restarts == 0 {
            return Err(invalid("estimators.kmeans_restarts", "must be at least 1"));
        }
        Ok(())
    }

    /// Full validation: settings plus the existence of every referenced path.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.validate_settings()?;
        let d = &self.data;
        if d.archive.is_none() && (d.attributes.is_none() || d.forcings.is_none()) {
            return Err(ConfigError::Missing("data.archive"));
        }
        let checks: [(&'static str, &Option<PathBuf>); 8] = [
            ("data.archive", &d.archive),
            ("data.attributes", &d.attributes),
            ("data.embeddings", &d.embeddings),
            ("data.pixels", &d.pixels),
            ("data.forcings", &d.forcings),
            ("data.flow", &d.flow),
            ("data.basin_list", &d.basin_list),
            ("data.custom_table", &d.custom_table),
        ];
        for (key, p) in checks {
            if let Some(p) = p {
                if !p.exists() {
                    return Err(ConfigError::MissingPath { key, path: p.clone() });
                }
            }
        }
        Ok(())
    }

    pub fn train_period(&self) -> Result<Period, ConfigError> {
        Period::new(self.periods.train_start, self.periods.train_end)
            .map_err(|e| invalid("periods.train_start", e.to_string()))
    }

    pub fn test_period(&self) -> Result<Period, ConfigError> {
        Period::new(self.periods.test_start, self.periods.test_end)
            .map_err(|e| invalid("periods.test_start", e.to_string()))
    }

    pub fn archive_paths(&self) -> Result<ArchivePaths, ConfigError> {
        let d = &self.data;
        let mut paths = match &d.archive {
            Some(dir) => ArchivePaths::under(dir),
            None => ArchivePaths::under(Path::new("")),
        };
        let over = |slot: &mut PathBuf, v: &Option<PathBuf>| {
            if let Some(v) = v {
                *slot = v.clone();
            }
        };
        over(&mut paths.attributes, &d.attributes);
        over(&mut paths.embeddings, &d.embeddings);
        over(&mut paths.pixels, &d.pixels);
        over(&mut paths.forcings, &d.forcings);
        over(&mut paths.flow, &d.flow);
        over(&mut paths.areas, &d.areas);
        if d.archive.is_none() && (d.attributes.is_none() || d.forcings.is_none()) {
            return Err(ConfigError::Missing("data.archive"));
        }
        Ok(paths)
    }

    pub fn load_archive(&self) -> Result<BasinArchive, ConfigError> {
        Ok(load_archive_from(&self.archive_paths()?)?)
    }

    /// Basin ids from `data.basin_list`; empty when unset. Blank lines and
    /// lines starting with `#` are ignored.
    pub fn basins(&self) -> Result<Vec<BasinId>, ConfigError> {
        let Some(path) = &self.data.basin_list else {
            return Ok(Vec::new());
        };
        let text = fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.clone(),
            source,
        })?;
        Ok(text
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .map(BasinId::new)
            .collect())
    }

    pub fn settings(&self, jobs: usize, quiet: bool) -> Result<Settings, ConfigError> {
        Ok(Settings {
            model: self.model.clone(),
            train_period: self.train_period()?,
            test_period: self.test_period()?,
            basins: self.basins()?,
            master_seed: self.experiment.master_seed,
            output_dir: self.output.dir.clone(),
            jobs,
            quiet,
        })
    }

    pub fn exp_a_options(&self) -> ExpAOptions {
        let x = &self.experiment;
        ExpAOptions {
            variants: x.variants.clone(),
            seeds: x.seeds,
            folds: x.folds,
            bootstrap_reps: self.estimators.bootstrap_reps,
            bootstrap_fraction: self.estimators.bootstrap_fraction,
            ks_sampling: x.ks_sampling,
            ks_method: x.ks_method,
        }
    }

    pub fn exp_b_options(&self) -> Result<ExpBOptions, ConfigError> {
        let x = &self.experiment;
        let custom_table = match &self.data.custom_table {
            Some(p) => Some(load_static_table(p, TableKind::Custom)?),
            None => None,
        };
        Ok(ExpBOptions {
            targets: x.targets.clone(),
            methods: x.methods.clone(),
            k_ladder: x.k_ladder.clone(),
            seeds_per_cell: x.seeds_per_cell,
            static_input: x.static_input,
            custom_table,
        })
    }

    pub fn cross_regime_options(&self) -> CrossRegimeOptions {
        CrossRegimeOptions {
            representations: self.experiment.representations.clone(),
            k_min: self.estimators.k_min,
            k_max: self.estimators.k_max,
            restarts: self.estimators.kmeans_restarts,
            seeds: self.experiment.cross_seeds,
            static_input: self.experiment.cross_static_input,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialises")
    }
}

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use chrono::{Duration, NaiveDate};
use clap::{Args, Parser, Subcommand};

use donorflow::cluster::select_k;
use donorflow::config::RunConfig;
use donorflow::dataset::{
    standardize_columns, theta_table, write_archive, write_daily_series, write_static_table, SyntheticOptions,
    FLOW_COLUMN,
};
use donorflow::experiments::{
    report, run_cross_regime, run_experiment_a, run_experiment_b, LstmCellModel, RunSummary, Settings,
};
use donorflow::info::mi_matrix;
use donorflow::metrics::nse;
use donorflow::model::{extract_fusion_embeddings, load_model, predict, save_model, train_with, FrontendMode};
use donorflow::similarity::{export_similarity, similarity_matrix, SimilarityMethod};
use donorflow::{BasinArchive, BasinId, Period, StaticTable, TableKind};

/// Similarity-guided donor selection and LSTM rainfall-runoff experiments.
#[derive(Parser)]
#[command(name = "donorflow", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// Run configuration (TOML).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Archive directory; overrides `data.archive`.
    #[arg(long, global = true)]
    archive: Option<PathBuf>,
    /// Output directory; overrides `output.dir`.
    #[arg(long, global = true, env = "DONORFLOW_OUTPUT_DIR")]
    output_dir: Option<PathBuf>,
    /// Master seed; overrides `experiment.master_seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Experiment cells run concurrently at most.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    #[arg(long, global = true)]
    hidden: Option<usize>,
    #[arg(long, global = true)]
    seq_len: Option<usize>,
    #[arg(long, global = true)]
    batch_size: Option<usize>,
    #[arg(long, global = true)]
    learning_rate: Option<f64>,
    #[arg(long, global = true)]
    dropout: Option<f64>,
    #[arg(long, global = true)]
    max_windows: Option<usize>,
    /// No progress output.
    #[arg(long, short, global = true)]
    quiet: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Load the archive and check coverage of the configured periods.
    CheckData,
    /// Cosine similarity matrix, or one target's ranked donors.
    Similarity {
        #[arg(long, default_value = "attributes")]
        method: SimilarityMethod,
        #[arg(long)]
        target: Option<BasinId>,
        /// Descriptor table for `custom`, or fusion embeddings for `fusion`.
        #[arg(long)]
        table: Option<PathBuf>,
        /// Attr-fc model to extract fusion embeddings from.
        #[arg(long)]
        model: Option<PathBuf>,
    },
    /// Mutual information between every attribute and embedding dimension.
    Mi {
        #[arg(long)]
        bins: Option<usize>,
    },
    /// K-means with silhouette-selected K.
    Cluster {
        /// attributes-17 or aef-64; both when omitted.
        #[arg(long)]
        representation: Option<String>,
    },
    /// Train one model on the basin pool (or `--basins`).
    Train {
        #[arg(long, default_value = "attributes-17")]
        variant: String,
        #[arg(long, default_value = "joint-mlp")]
        frontend: String,
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        basins: Vec<BasinId>,
        /// Defaults to `<output>/model_<variant>.json`.
        #[arg(long)]
        model_out: Option<PathBuf>,
        /// Also write fusion embeddings (attr-fc only).
        #[arg(long)]
        export_fusion: bool,
    },
    /// Predict one basin with a saved model.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        basin: BasinId,
        #[arg(long)]
        start: Option<NaiveDate>,
        #[arg(long)]
        end: Option<NaiveDate>,
    },
    /// In-sample / out-of-sample variant comparison.
    ExpA,
    /// Donor-count scaling per similarity method.
    ExpB {
        #[arg(long, num_args = 1.., value_delimiter = ',')]
        targets: Vec<BasinId>,
    },
    /// Leave-one-cluster-out generalisation.
    CrossRegime,
    /// Write a synthetic archive and a matching config.
    Synth {
        #[arg(long, default_value_t = 8)]
        basins: usize,
        #[arg(long, default_value_t = 1500)]
        days: usize,
        #[arg(long, default_value_t = 0)]
        regimes: usize,
        /// Destination; defaults to the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Summaries and CDFs over every results table in the output directory.
    Report,
}

fn load_config(g: &Global) -> Result<RunConfig> {
    let mut cfg = match &g.config {
        Some(p) => {
            let mut cfg = RunConfig::from_toml(
                &fs::read_to_string(p).with_context(|| format!("cannot read {}", p.display()))?,
                p.parent().unwrap_or(Path::new(".")),
            )?;
            if let Some(dir) = &g.archive {
                cfg.data.archive = Some(dir.clone());
            }
            cfg
        }
        None => {
            let mut cfg = RunConfig::default();
            cfg.data.archive = g.archive.clone();
            cfg
        }
    };
    if let Some(dir) = &g.output_dir {
        cfg.output.dir = dir.clone();
    }
    if let Some(s) = g.seed {
        cfg.experiment.master_seed = s;
        cfg.model.seed = s;
    }
    let m = &mut cfg.model;
    if let Some(v) = g.epochs {
        m.epochs = v;
    }
    if let Some(v) = g.hidden {
        m.hidden = v;
    }
    if let Some(v) = g.seq_len {
        m.seq_len = v;
    }
    if let Some(v) = g.batch_size {
        m.batch_size = v;
    }
    if let Some(v) = g.learning_rate {
        m.learning_rate = v;
    }
    if let Some(v) = g.dropout {
        m.dropout = v;
    }
    if g.max_windows.is_some() {
        m.max_windows_per_epoch = g.max_windows;
    }
    Ok(cfg)
}

fn progress(g: &Global, msg: impl std::fmt::Display) {
    if !g.quiet {
        eprintln!("{msg}");
    }
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.output.dir.clone();
    fs::create_dir_all(&dir).with_context(|| format!("cannot create {}", dir.display()))?;
    Ok(dir)
}

fn kind_arg(s: &str) -> Result<TableKind> {
    match s {
        "attributes-17" | "attributes" => Ok(TableKind::Attributes17),
        "aef-64" | "aef" => Ok(TableKind::Aef64),
        other => bail!("unknown static table {other:?} (expected attributes-17 or aef-64)"),
    }
}

fn pool_table(archive: &BasinArchive, settings: &Settings, kind: TableKind) -> Result<StaticTable> {
    let pool = settings.pool(archive)?;
    let table = archive
        .static_table(kind)
        .ok_or_else(|| anyhow!("archive has no {kind} table"))?;
    Ok(table.select(&pool)?)
}

fn finish(run: &RunSummary) -> Result<bool> {
    eprintln!(
        "{}: {} cells computed, {} resumed, {} failed, {} skipped -> {}",
        run.experiment,
        run.computed,
        run.resumed,
        run.failed,
        run.skipped.len(),
        run.results_path.display()
    );
    if run.failed > 0 {
        bail!("{} {} cells failed (see failures_{}.csv)", run.failed, run.experiment, run.experiment);
    }
    Ok(true)
}

fn run(cli: Cli) -> Result<bool> {
    let g = &cli.global;
    if let Command::Synth {
        basins,
        days,
        regimes,
        out,
    } = &cli.command
    {
        let cfg = load_config(g)?;
        let dir = out.clone().unwrap_or(cfg.output.dir.clone());
        return synth(g, &dir, *basins, *days, *regimes, cfg.experiment.master_seed);
    }

    let cfg = load_config(g)?;
    cfg.validate()?;
    let settings = cfg.settings(g.jobs, g.quiet)?;
    let archive = cfg.load_archive()?;
    progress(g, format!("loaded {} basins", archive.basins().len()));

    match &cli.command {
        Command::CheckData => {
            let pool = settings.pool(&archive)?;
            let warm = Duration::days(cfg.model.seq_len as i64 - 1);
            let test_warm = Period::new(settings.test_period.start - warm, settings.test_period.end)?;
            for b in &pool {
                let frame = archive.forcing(b)?;
                for p in [&settings.train_period, &test_warm] {
                    if !frame.covers(p) {
                        bail!("basin {b}: forcings do not cover {p}");
                    }
                }
                if !archive.flow.contains_key(b) {
                    progress(g, format!("basin {b}: no flow record (ungauged)"));
                }
            }
            if archive.attributes.basins() != archive.embeddings.basins() {
                bail!("attribute and embedding tables list different basins");
            }
            println!("ok: {} basins, train {}, test {}", pool.len(), settings.train_period, settings.test_period);
        }
        Command::Similarity {
            method,
            target,
            table,
            model,
        } => {
            let pool = settings.pool(&archive)?;
            let t = match method {
                SimilarityMethod::Attributes => pool_table(&archive, &settings, TableKind::Attributes17)?,
                SimilarityMethod::Aef => pool_table(&archive, &settings, TableKind::Aef64)?,
                SimilarityMethod::Custom => {
                    let p = table
                        .as_ref()
                        .or(cfg.data.custom_table.as_ref())
                        .ok_or_else(|| anyhow!("custom similarity needs --table or data.custom_table"))?;
                    donorflow::dataset::load_static_table(p, TableKind::Custom)?.select(&pool)?
                }
                SimilarityMethod::Fusion => match (table, model) {
                    (Some(p), _) => donorflow::dataset::load_static_table(p, TableKind::FusionEmbedding)?.select(&pool)?,
                    (None, Some(m)) => {
                        let m = load_model(m)?;
                        extract_fusion_embeddings(&m, &archive.attributes.select(&pool)?)?
                    }
                    (None, None) => bail!("fusion similarity needs --table or --model"),
                },
            };
            let matrix = similarity_matrix(&t)?;
            let dir = out_dir(&cfg)?;
            let path = match target {
                Some(tg) => dir.join(format!("similarity_{method}_{tg}.csv")),
                None => dir.join(format!("similarity_{method}.csv")),
            };
            export_similarity(&matrix, target.as_ref(), &path)?;
            println!("{}", path.display());
        }
        Command::Mi { bins } => {
            let pool = settings.pool(&archive)?;
            let m = mi_matrix(
                &archive.attributes.select(&pool)?,
                &archive.embeddings.select(&pool)?,
                bins.unwrap_or(cfg.estimators.bins),
            )?;
            let path = out_dir(&cfg)?.join("mi_matrix.csv");
            m.write_csv(&path)?;
            println!("{}", path.display());
        }
        Command::Cluster { representation } => {
            let kinds = match representation {
                Some(r) => vec![kind_arg(r)?],
                None => vec![TableKind::Attributes17, TableKind::Aef64],
            };
            let dir = out_dir(&cfg)?;
            for kind in kinds {
                let t = pool_table(&archive, &settings, kind)?;
                let (z, _) = standardize_columns(t.values().view(), None)?;
                let k_max = cfg.estimators.k_max.min(t.n_basins().saturating_sub(1));
                let seed = donorflow::seed::derive_seed(settings.master_seed, &format!("cluster/{kind}"));
                let mut sel = select_k(z.view(), t.basins(), cfg.estimators.k_min, k_max, seed, cfg.estimators.kmeans_restarts)?;
                sel.model.representation = kind.label().to_owned();
                sel.model.write_assignments(&dir.join(format!("clusters_{kind}.csv")))?;
                sel.write_profile(&dir.join(format!("silhouette_profile_{kind}.csv")))?;
                println!("{kind}: K = {} (silhouette {:.4})", sel.best_k, sel.model.silhouette);
            }
        }
        Command::Train {
            variant,
            frontend,
            basins,
            model_out,
            export_fusion,
        } => {
            let kind = kind_arg(variant)?;
            let statics = archive
                .static_table(kind)
                .ok_or_else(|| anyhow!("archive has no {kind} table"))?;
            let mut mc = cfg.model.clone();
            mc.n_static = statics.width();
            mc.frontend = match frontend.as_str() {
                "joint-mlp" => FrontendMode::JointMlp,
                "attr-fc" => FrontendMode::AttrFc,
                other => bail!("unknown front end {other:?}"),
            };
            let donors = if basins.is_empty() { settings.pool(&archive)? } else { basins.clone() };
            let quiet = g.quiet;
            let model = train_with(&mc, &archive, statics, &donors, settings.train_period, &mut |r| {
                if !quiet {
                    let val = r.val_median_nse.map(|v| format!("{v:.4}")).unwrap_or_else(|| "-".into());
                    eprintln!("epoch {:>3}: loss {:.5}, validation median NSE {val}", r.epoch, r.train_loss);
                }
            })?;
            let dir = out_dir(&cfg)?;
            let path = model_out.clone().unwrap_or_else(|| dir.join(format!("model_{kind}.json")));
            save_model(&model, &path)?;
            if *export_fusion {
                let fusion = extract_fusion_embeddings(&model, statics)?;
                write_static_table(&fusion, &dir.join("fusion_embeddings.csv"))?;
            }
            println!("{} (best epoch {})", path.display(), model.best_epoch);
        }
        Command::Predict { model, basin, start, end } => {
            let m = load_model(model)?;
            let statics = archive
                .static_table(m.static_kind)
                .ok_or_else(|| anyhow!("archive has no {} table", m.static_kind))?;
            let period = Period::new(
                start.unwrap_or(settings.test_period.start),
                end.unwrap_or(settings.test_period.end),
            )?;
            let frame = predict(&m, &archive, statics, basin, period)?;
            let dir = out_dir(&cfg)?.join("predictions");
            fs::create_dir_all(&dir)?;
            let path = dir.join(format!("{basin}.csv"));
            write_daily_series(&frame, &path)?;
            let obs: Vec<f64> = period.dates().map(|d| archive.flow_on(basin, d)).collect();
            match nse(&obs, frame.column(FLOW_COLUMN).expect("prediction column")) {
                Ok(v) => println!("{} (NSE {v:.4})", path.display()),
                Err(_) => println!("{}", path.display()),
            }
        }
        Command::ExpA => {
            let out = run_experiment_a(&settings, &cfg.exp_a_options(), &archive, &LstmCellModel)?;
            for s in &out.summary {
                println!("{} {} median {}: {:.4} over {} basins", s.variant, s.split, s.metric, s.median, s.basins);
            }
            for k in &out.ks {
                println!("KS {} {} ({}): D = {:.4}, p = {:.4}", k.split, k.metric, k.sampling.as_str(), k.d, k.p);
            }
            return finish(&out.run);
        }
        Command::ExpB { targets } => {
            let mut opts = cfg.exp_b_options()?;
            if !targets.is_empty() {
                opts.targets = targets.clone();
            }
            let out = run_experiment_b(&settings, &opts, &archive, &LstmCellModel)?;
            return finish(&out.run);
        }
        Command::CrossRegime => {
            let out = run_cross_regime(&settings, &cfg.cross_regime_options(), &archive, &LstmCellModel)?;
            for (label, sel) in &out.selections {
                println!("{label}: K = {}", sel.best_k);
            }
            return finish(&out.run);
        }
        Command::Report => {
            let rows = report(&out_dir(&cfg)?)?;
            for r in &rows {
                println!(
                    "{} {} {} {} {} {}: median {:.4} over {} basins",
                    r.experiment,
                    r.variant,
                    r.split,
                    r.method,
                    r.k.map(|k| format!("k={k}")).unwrap_or_default(),
                    r.metric,
                    r.median,
                    r.basins
                );
            }
        }
        Command::Synth { .. } => unreachable!("handled above"),
    }
    Ok(true)
}

/// Archive plus a config sized for a laptop CPU.
fn synth(g: &Global, dir: &Path, basins: usize, days: usize, regimes: usize, seed: u64) -> Result<bool> {
    let mut opts = SyntheticOptions::new(basins, days, seed);
    opts.regimes = (regimes > 0).then_some(regimes);
    let archive = donorflow::dataset::generate_synthetic_fleet_with(&opts)?;
    let data = dir.join("archive");
    write_archive(&archive, &data)?;
    write_static_table(&theta_table(&archive), &dir.join("theta.csv"))?;

    let train_days = days * 73 / 100;
    let train_end = opts.start + Duration::days(train_days as i64 - 1);
    let mut cfg = RunConfig::default();
    cfg.data.archive = Some("archive".into());
    cfg.data.custom_table = Some("theta.csv".into());
    cfg.periods.train_start = opts.start;
    cfg.periods.train_end = train_end;
    cfg.periods.test_start = train_end + Duration::days(1);
    cfg.periods.test_end = opts.start + Duration::days(days as i64 - 1);
    cfg.model.hidden = 32;
    cfg.model.seq_len = 120;
    cfg.model.epochs = 15;
    cfg.model.batch_size = 16;
    cfg.model.max_windows_per_epoch = Some(1024);
    cfg.experiment.master_seed = seed;
    cfg.experiment.seeds = 2;
    cfg.experiment.folds = 2.min(basins);
    cfg.experiment.targets = archive.basins().iter().take(3).cloned().collect();
    cfg.experiment.k_ladder = vec![donorflow::experiments::KStep::Count(basins / 2), donorflow::experiments::KStep::All];
    cfg.estimators.k_max = cfg.estimators.k_max.min(basins.saturating_sub(1)).max(2);
    cfg.output.dir = "results".into();
    let path = dir.join("config.toml");
    fs::write(&path, cfg.to_toml()).with_context(|| format!("cannot write {}", path.display()))?;
    progress(g, format!("wrote {basins} synthetic basins to {}", data.display()));
    println!("{}", path.display());
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {}", format!("{e:#}").replace('\n', " "));
            ExitCode::FAILURE
        }
    }
}

use std::collections::BTreeSet;
use std::path::Path;

use chrono::NaiveDate;
use donorflow::dataset::{generate_synthetic_fleet, generate_synthetic_fleet_with, theta_table, SyntheticOptions};
use donorflow::experiments::{
    read_results, report, run_cross_regime, run_experiment_a, run_experiment_b, write_results, CellStatus,
    CrossRegimeOptions, DonorMethod, ExpAOptions, ExpBOptions, KStep, ObservedFlowModel, Settings,
};
use donorflow::model::ModelConfig;
use donorflow::{BasinArchive, Period, TableKind};

fn d(s: &str) -> NaiveDate {
    s.parse().unwrap()
}

fn settings(out: &Path) -> Settings {
    Settings {
        model: ModelConfig {
            hidden: 4,
            frontend_width: 4,
            seq_len: 10,
            epochs: 2,
            batch_size: 8,
            max_windows_per_epoch: Some(16),
            ..ModelConfig::default()
        },
        train_period: Period::new(d("1980-01-01"), d("1981-06-30")).unwrap(),
        test_period: Period::new(d("1981-07-01"), d("1982-06-15")).unwrap(),
        basins: Vec::new(),
        master_seed: 11,
        output_dir: out.to_owned(),
        jobs: 1,
        quiet: true,
    }
}

fn fleet(n: usize) -> BasinArchive {
    generate_synthetic_fleet(n, 900, 5).unwrap()
}

#[test]
fn experiment_a_accounting_and_oracle_pass_through() {
    let dir = tempfile::tempdir().unwrap();
    let s = settings(dir.path());
    let archive = fleet(10);
    let opts = ExpAOptions {
        seeds: 2,
        folds: 2,
        ..ExpAOptions::default()
    };
    let out = run_experiment_a(&s, &opts, &archive, &ObservedFlowModel).unwrap();
    assert_eq!(out.run.computed, 12);
    assert_eq!(out.run.failed, 0);
    let covered: BTreeSet<(String, String)> = out
        .run
        .rows
        .iter()
        .map(|r| (r.variant.clone(), r.basin_id.to_string()))
        .collect();
    assert_eq!(covered.len(), 2 * 10);
    for row in &out.run.rows {
        assert_eq!(row.value, 1.0, "{row:?}");
    }
    for per_basin in out.basin_medians.values() {
        assert_eq!(per_basin.len(), 10);
        assert!(per_basin.iter().all(|(_, v)| *v == 1.0));
    }
    assert_eq!(out.ks.len(), 4);
    assert!(out.ks.iter().all(|k| k.d == 0.0));
    for f in ["metrics.csv", "bootstrap.csv", "ks_exp-a.csv", "summary_exp-a.csv", "cdf_exp-a_aef-64_OOS_nse.csv"] {
        assert!(dir.path().join(f).exists(), "{f}");
    }
    let boot = std::fs::read_to_string(dir.path().join("bootstrap.csv")).unwrap();
    // header + 2 variants x 2 groups x 10 basins x 2 metrics x 100 replicates
    assert_eq!(boot.lines().count(), 1 + 2 * 2 * 10 * 2 * 100);
}

#[test]
fn experiment_a_resume_after_row_loss_is_identical() {
    let dir = tempfile::tempdir().unwrap();
    let s = settings(dir.path());
    let archive = fleet(6);
    let opts = ExpAOptions {
        seeds: 2,
        folds: 2,
        ..ExpAOptions::default()
    };
    let model = donorflow::experiments::LstmCellModel;
    let first = run_experiment_a(&s, &opts, &archive, &model).unwrap();
    assert_eq!(first.run.failed, 0, "{:?}", first.run.cells.iter().map(|c| &c.status).collect::<Vec<_>>());
    let path = dir.path().join("results_exp-a.csv");
    let full = read_results(&path).unwrap();
    let boot = std::fs::read(dir.path().join("bootstrap.csv")).unwrap();
    let kept = full[..full.len() / 2].to_vec();
    write_results(&path, &kept).unwrap();
    let second = run_experiment_a(&s, &opts, &archive, &model).unwrap();
    assert!(second.run.computed > 0 && second.run.computed < first.run.computed);
    let again = read_results(&path).unwrap();
    assert_eq!(again.len(), full.len());
    assert!(again.iter().zip(&full).all(|(a, b)| a.same_as(b)));
    assert_eq!(std::fs::read(dir.path().join("bootstrap.csv")).unwrap(), boot);

    let third = run_experiment_a(&s, &opts, &archive, &model).unwrap();
    assert_eq!(third.run.computed, 0);
    assert!(third.run.cells.iter().all(|c| c.status == CellStatus::Resumed));
}

#[test]
fn experiment_b_full_pool_cells_coincide_and_skip_oversized_k() {
    let dir = tempfile::tempdir().unwrap();
    let s = settings(dir.path());
    let archive = fleet(8);
    let targets = vec![archive.basins()[0].clone(), archive.basins()[3].clone()];
    let opts = ExpBOptions {
        targets: targets.clone(),
        methods: vec![
            DonorMethod::Attributes,
            DonorMethod::Aef,
            DonorMethod::Custom,
            DonorMethod::Fusion,
            DonorMethod::Random,
        ],
        k_ladder: vec![KStep::Count(3), KStep::Count(9), KStep::All],
        seeds_per_cell: 2,
        custom_table: Some(theta_table(&archive)),
        ..ExpBOptions::default()
    };
    let out = run_experiment_b(&s, &opts, &archive, &donorflow::experiments::LstmCellModel).unwrap();
    assert_eq!(out.run.skipped.len(), 1);
    // 2 targets x 5 methods x 2 k x 2 seeds
    assert_eq!(out.run.cells.len(), 40);
    for ((t, _, _, _), donors) in &out.donors {
        assert!(!donors.contains(t));
    }
    for t in &targets {
        for seed in 0..2 {
            let vals: Vec<u64> = out
                .run
                .rows
                .iter()
                .filter(|r| r.split == t.as_str() && r.k == Some(7) && r.seed == seed && r.metric == "nse")
                .map(|r| r.value.to_bits())
                .collect();
            assert_eq!(vals.len(), 5);
            assert!(vals.windows(2).all(|w| w[0] == w[1]));
        }
    }
    assert!(dir.path().join("donors_exp-b.csv").exists());
    assert!(dir.path().join("summary_exp-b.csv").exists());
}

#[test]
fn cross_regime_partitions_every_basin_once() {
    let dir = tempfile::tempdir().unwrap();
    let s = settings(dir.path());
    let mut o = SyntheticOptions::new(12, 900, 3);
    o.regimes = Some(3);
    let archive = generate_synthetic_fleet_with(&o).unwrap();
    let opts = CrossRegimeOptions {
        k_max: 6,
        ..CrossRegimeOptions::default()
    };
    let out = run_cross_regime(&s, &opts, &archive, &ObservedFlowModel).unwrap();
    for (label, sel) in &out.selections {
        let k = sel.best_k;
        let mut seen = BTreeSet::new();
        let rows: Vec<_> = out.run.rows.iter().filter(|r| &r.method == label && r.metric == "nse").collect();
        assert_eq!(rows.len(), 12, "{label}");
        for r in rows {
            assert!(seen.insert(r.basin_id.clone()));
        }
        assert!(dir.path().join(format!("clusters_{label}.csv")).exists());
        assert!(dir.path().join(format!("silhouette_profile_{label}.csv")).exists());
        assert_eq!(out.run.cells.iter().filter(|c| &c.method == label).count(), k);
    }
    assert_eq!(out.selections[TableKind::Attributes17.label()].best_k, 3);

    let rows = report(dir.path()).unwrap();
    assert!(rows.iter().any(|r| r.experiment == "cross-regime" && r.median == 1.0));
    assert!(dir.path().join("report_summary.csv").exists());
}

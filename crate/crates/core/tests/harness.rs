use std::path::{Path, PathBuf};

use pathnorm::data::{read_metrics, write_metrics, MetricRecord, SyntheticSpec};
use pathnorm::harness::{compare_report, run_training, DatasetSpec, ExperimentConfig, Seeds, ValidationSpec};
use pathnorm::init::InitSpec;
use pathnorm::optim::OptimizerKind;

fn calibration_config(out: Option<PathBuf>) -> ExperimentConfig {
    ExperimentConfig {
        architecture: vec![8, 64, 3],
        dataset: DatasetSpec::Synthetic {
            teacher: SyntheticSpec {
                teacher: vec![8, 16, 3],
                noise: 0.0,
            },
            train: 2000,
            test: 500,
            seed: 11,
        },
        optimizer: OptimizerKind::PathSgd,
        alpha: None,
        alpha_grid: vec![0, 1, 2, 3],
        p: 2.0,
        init: InitSpec::Balanced { seed: 4 },
        dropout: None,
        epochs: 40,
        batch_size: 50,
        seeds: Seeds {
            shuffle: 1,
            dropout: 2,
            split: 3,
        },
        validation: ValidationSpec {
            holdout: 400,
            epochs: 3,
        },
        output_dir: out,
        record_wall_time: false,
    }
}

fn golden(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name)
}

#[test]
fn student_learns_teacher_and_matches_golden_curve() {
    let dir = tempfile::tempdir().unwrap();
    let out = run_training(&calibration_config(Some(dir.path().to_path_buf()))).unwrap();
    let last = out.records.last().unwrap();
    assert_eq!(last.epoch, 40);
    assert!(last.err_train < 0.05, "final training error {}", last.err_train);
    assert!(last.err_test.is_finite());
    let produced = std::fs::read_to_string(dir.path().join("metrics.csv")).unwrap();
    let path = golden("synthetic_pathsgd_metrics.csv");
    if std::env::var_os("PATHNORM_UPDATE_GOLDEN").is_some() {
        std::fs::write(&path, &produced).unwrap();
    }
    let expected = std::fs::read_to_string(&path).expect("golden file; set PATHNORM_UPDATE_GOLDEN=1 to create it");
    assert_eq!(produced, expected);
}

#[test]
fn dropout_run_is_seeded() {
    let mut cfg = calibration_config(None);
    cfg.dropout = Some(0.8);
    cfg.alpha = Some(1);
    cfg.epochs = 3;
    let a = run_training(&cfg).unwrap();
    let b = run_training(&cfg).unwrap();
    assert_eq!(a.records, b.records);
    cfg.seeds.dropout += 1;
    let c = run_training(&cfg).unwrap();
    assert_ne!(a.records[1..], c.records[1..]);
    assert_eq!(a.records[0], c.records[0]);
}

fn record(epoch: usize, opt: &str, ce: f64) -> MetricRecord {
    MetricRecord {
        epoch,
        optimizer: opt.into(),
        ce_train: ce,
        err_train: ce / 10.0,
        err_test: f64::NAN,
        wall_s: 0.0,
    }
}

fn run_dir(root: &Path, name: &str, records: &[MetricRecord]) -> PathBuf {
    let d = root.join(name);
    std::fs::create_dir_all(&d).unwrap();
    write_metrics(records, d.join("metrics.csv")).unwrap();
    d
}

#[test]
fn compare_three_runs_on_shared_epochs() {
    let root = tempfile::tempdir().unwrap();
    let a = run_dir(root.path(), "a", &(0..=3).map(|e| record(e, "sgd", 1.0 / (e + 1) as f64)).collect::<Vec<_>>());
    let b = run_dir(root.path(), "b", &[record(0, "pathsgd", 2.0), record(1, "pathsgd", f64::INFINITY)]);
    let c = run_dir(root.path(), "c", &(0..=5).map(|e| record(e, "adagrad", 0.5)).collect::<Vec<_>>());
    let report = compare_report(&[a, b, c]).unwrap();
    assert_eq!(report.labels, ["a", "b", "c"]);
    assert_eq!(report.epochs, [0, 1]);
    let ce = report.curve(|m| m.ce_train);
    assert_eq!(ce[1], (1, vec![0.5, f64::INFINITY, 0.5]));

    let out = root.path().join("cmp");
    report.write(&out).unwrap();
    let text = std::fs::read_to_string(out.join("comparison.csv")).unwrap();
    assert!(text.starts_with("epoch,a.ce_train,a.err_train,a.err_test,b.ce_train"));
    assert!(text.contains("inf"));
    let summary = std::fs::read_to_string(out.join("summary.csv")).unwrap();
    assert_eq!(summary.lines().count(), 4);
    assert!(compare_report(&[]).is_err());
    assert!(compare_report(&[root.path().join("missing")]).is_err());
}

#[test]
fn metrics_round_trip_keeps_special_values() {
    let root = tempfile::tempdir().unwrap();
    let rows = vec![record(0, "sgd", 2.5), record(1, "sgd", f64::INFINITY)];
    let d = run_dir(root.path(), "r", &rows);
    let back = read_metrics(d.join("metrics.csv")).unwrap();
    assert_eq!(back.len(), 2);
    assert_eq!(back[1].ce_train, f64::INFINITY);
    assert!(back[0].err_test.is_nan());
}

use std::fs;

use tlupdate_core::data::DriftInjection;
use tlupdate_core::pipeline::{emit_report, run_pipeline, DataSource, PipelineConfig, StageStatus};
use tlupdate_core::tuning::{SearchSpace, TrainBudget};
use tlupdate_core::update::Strategy;

fn quick(drift: bool) -> PipelineConfig {
    PipelineConfig {
        data: DataSource::Synthetic {
            days: 30,
            interval_secs: 600,
            drift: drift.then(|| DriftInjection::plant_default(12.0)),
            seed: None,
        },
        search: SearchSpace {
            hidden_widths: vec![16],
            hidden_depths: vec![1],
            learning_rates: vec![1e-2],
        },
        update_budget: TrainBudget {
            max_epochs: 100,
            patience: 20,
            mini_batch_size: 32,
        },
        explain: None,
        seed: 1,
        ..PipelineConfig::default()
    }
}

#[test]
fn single_strategy_gives_one_outcome() {
    let cfg = PipelineConfig {
        strategies: vec![Strategy::Lltl],
        ..quick(true)
    };
    let r = run_pipeline(&cfg).unwrap();
    assert!(r.trigger.is_some());
    assert_eq!(r.updates.len(), 1);
    assert_eq!(r.updates[0].strategy, Strategy::Lltl);
    assert_eq!(r.updates[0].cycles.len(), 1);
}

#[test]
fn no_drift_skips_updates_and_parity_has_baseline_only() {
    let r = run_pipeline(&quick(false)).unwrap();
    assert!(r.trigger.is_none());
    assert!(r.drift.is_none());
    assert!(r.updates.is_empty());
    for s in &r.stages {
        let expected = match s.stage {
            "drift" | "buffer" | "update" | "post_update_replay" | "explain" => StageStatus::Skipped,
            _ => StageStatus::Executed,
        };
        assert_eq!(s.status, expected, "{}", s.stage);
    }
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&r, dir.path()).unwrap();
    assert!(files.len() >= 6);
    assert!(!dir.path().join("trigger.json").exists());
    let parity = fs::read_to_string(dir.path().join("parity.csv")).unwrap();
    assert_eq!(parity.lines().next().unwrap(), "timestamp,actual,baseline");
}

#[test]
fn triggered_run_writes_every_artifact() {
    let r = run_pipeline(&quick(true)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let files = emit_report(&r, dir.path()).unwrap();
    for f in &files {
        assert!(f.exists(), "{}", f.display());
    }
    let names: Vec<String> = files
        .iter()
        .map(|f| f.strip_prefix(dir.path()).unwrap().display().to_string())
        .collect();
    for expected in [
        "report.json",
        "daily_errors.csv",
        "parity.csv",
        "weight_summary.csv",
        "importance_evolution.csv",
        "timing.csv",
        "drift.csv",
        "trials.csv",
        "trigger.json",
        "models/initial.json",
        "models/lltl.json",
        "models/altl.json",
        "models/etl.json",
        "manifest.json",
    ] {
        assert!(names.iter().any(|n| n == expected), "missing {expected}");
    }
    let parity = fs::read_to_string(dir.path().join("parity.csv")).unwrap();
    assert_eq!(parity.lines().next().unwrap(), "timestamp,actual,baseline,lltl,altl,etl");
    let report = fs::read_to_string(dir.path().join("report.json")).unwrap();
    assert!(!report.contains("\"seconds\""));
    assert!(!report.contains("\"timings\""));
    let timing = fs::read_to_string(dir.path().join("timing.csv")).unwrap();
    assert!(timing.contains("tuning,") && timing.contains("update:etl,"));
}

#[test]
fn evaluation_rows_follow_the_buffer() {
    let r = run_pipeline(&quick(true)).unwrap();
    let buffer = r.buffer.as_ref().unwrap();
    let fire = r.trigger.as_ref().unwrap().fire_date;
    assert!(r.firing_days.last() == Some(&fire));
    for u in &r.updates {
        assert_eq!(u.evaluation.first_row, buffer.end_row);
        assert_eq!(u.evaluation.rows, r.dataset.rows - buffer.end_row);
        let (_, preds) = r.artifacts.strategy_predictions.iter().find(|(s, _)| *s == u.strategy).unwrap();
        assert!(preds[..buffer.end_row].iter().all(Option::is_none));
        assert!(preds[buffer.end_row..].iter().all(Option::is_some));
    }
}

#[test]
fn multi_cycle_grows_the_ensemble() {
    let cfg = PipelineConfig {
        strategies: vec![Strategy::Etl],
        multi_cycle: true,
        data: DataSource::Synthetic {
            days: 40,
            interval_secs: 600,
            drift: Some(DriftInjection::plant_default(12.0)),
            seed: None,
        },
        ..quick(true)
    };
    let r = run_pipeline(&cfg).unwrap();
    let u = &r.updates[0];
    assert_eq!(u.cycles.len(), u.triggers.len() + 1);
    for (k, c) in u.cycles.iter().enumerate() {
        assert_eq!(c.members, k + 2);
    }
    assert!(u.segments.iter().all(|s| s.armed));
}

#[test]
fn unwritable_output_is_an_error() {
    let r = run_pipeline(&PipelineConfig {
        strategies: vec![Strategy::Lltl],
        ..quick(true)
    })
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    fs::write(&blocker, "x").unwrap();
    assert!(emit_report(&r, &blocker.join("sub")).is_err());
}

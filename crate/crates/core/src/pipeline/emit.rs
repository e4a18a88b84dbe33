use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use super::{version_tag, PipelineError, RunReport};
use crate::drift::write_feature_table;
use crate::monitor::write_daily_csv;
use crate::tuning::write_trials_csv;
use crate::update::write_weight_summary_csv;

/// Keys removed from every JSON artifact so reruns compare byte for byte.
pub const TIMING_KEYS: [&str; 5] = ["seconds", "tuning_seconds", "training_seconds", "epoch_seconds", "timings"];

/// Drop wall-clock fields at any depth.
pub fn strip_timings(value: &mut Value) {
    match value {
        Value::Object(map) => {
            map.retain(|k, _| !TIMING_KEYS.contains(&k.as_str()));
            map.values_mut().for_each(strip_timings);
        }
        Value::Array(items) => items.iter_mut().for_each(strip_timings),
        _ => {}
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T, strip: bool) -> Result<(), PipelineError> {
    let mut v = serde_json::to_value(value)?;
    if strip {
        strip_timings(&mut v);
    }
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, &v)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>, PipelineError> {
    Ok(csv::Writer::from_writer(BufWriter::new(File::create(path)?)))
}

fn rec(written: &mut Vec<PathBuf>, dir: &Path, name: &str) -> PathBuf {
    written.push(PathBuf::from(name));
    dir.join(name)
}

#[derive(Serialize)]
struct TriggerFile<'a> {
    event: &'a crate::monitor::TriggerEvent,
    firing_days: &'a [chrono::NaiveDate],
}

/// Write every artifact of `report` into `dir` and return the written
/// paths. The last entry is `manifest.json`, listing the others.
pub fn emit_report(report: &RunReport, dir: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    fs::create_dir_all(dir.join("models"))?;
    let mut written: Vec<PathBuf> = Vec::new();

    write_json(&rec(&mut written, dir, "report.json"), report, true)?;

    let mut w = csv_writer(&rec(&mut written, dir, "daily_errors.csv"))?;
    write_daily_csv("baseline", &report.replay, &mut w, true)?;
    for u in &report.updates {
        for (k, seg) in u.segments.iter().enumerate() {
            write_daily_csv(&version_tag(u.strategy, k + 1), &seg.state, &mut w, false)?;
        }
    }
    w.flush()?;

    let art = &report.artifacts;
    let mut w = csv_writer(&rec(&mut written, dir, "parity.csv"))?;
    let mut header = vec!["timestamp".to_string(), "actual".into(), "baseline".into()];
    header.extend(art.strategy_predictions.iter().map(|(s, _)| s.label().to_string()));
    w.write_record(&header)?;
    for (i, &stale) in art.stale_predictions.iter().enumerate() {
        let row = art.stream_start + i;
        let mut line = vec![
            art.timestamps[row].to_rfc3339_opts(chrono::SecondsFormat::Secs, true),
            art.targets[row].to_string(),
            stale.to_string(),
        ];
        line.extend(art.strategy_predictions.iter().map(|(_, p)| p[row].map(|v| v.to_string()).unwrap_or_default()));
        w.write_record(&line)?;
    }
    w.flush()?;

    let mut w = csv_writer(&rec(&mut written, dir, "weight_summary.csv"))?;
    w.write_record(["strategy", "stage", "layer", "quantile", "value"])?;
    for u in &report.updates {
        for (k, c) in u.cycles.iter().enumerate() {
            let tag = version_tag(u.strategy, k + 1);
            write_weight_summary_csv(&tag, "before", &c.weights_before, &mut w, false)?;
            write_weight_summary_csv(&tag, "after", &c.weights_after, &mut w, false)?;
        }
    }
    w.flush()?;

    let mut w = csv_writer(&rec(&mut written, dir, "importance_evolution.csv"))?;
    w.write_record(["chain", "version", "feature", "importance", "rank"])?;
    if let Some(imp) = &report.importance {
        if imp.evolutions.is_empty() {
            for p in &imp.profiles {
                let ranks = p.ranks();
                for (j, f) in p.features.iter().enumerate() {
                    w.write_record(["initial", &p.tag, f, &p.importance[j].to_string(), &ranks[j].to_string()])?;
                }
            }
        }
        for (s, evo) in &imp.evolutions {
            for r in &evo.rows {
                w.write_record([s.label(), &r.version, &r.feature, &r.importance.to_string(), &r.rank.to_string()])?;
            }
        }
    }
    w.flush()?;

    let mut w = csv_writer(&rec(&mut written, dir, "trials.csv"))?;
    write_trials_csv("initial", &report.training.search, false, &mut w, true)?;
    for u in &report.updates {
        for (k, c) in u.cycles.iter().enumerate() {
            write_trials_csv(&version_tag(u.strategy, k + 1), &c.search, false, &mut w, false)?;
        }
    }
    w.flush()?;

    if let Some(d) = &report.drift {
        let file = BufWriter::new(File::create(rec(&mut written, dir, "drift.csv"))?);
        write_feature_table(d, file)?;
    }
    if let Some(t) = &report.trigger {
        let file = TriggerFile {
            event: t,
            firing_days: &report.firing_days,
        };
        write_json(&rec(&mut written, dir, "trigger.json"), &file, false)?;
    }

    if let Some(m) = &art.initial {
        write_json(&rec(&mut written, dir, "models/initial.json"), m, false)?;
    }
    for (s, d) in &art.deployed {
        write_json(&rec(&mut written, dir, &format!("models/{}.json", s.label())), d, false)?;
    }

    let mut w = csv_writer(&rec(&mut written, dir, "timing.csv"))?;
    w.write_record(["stage", "seconds"])?;
    for t in &report.timings {
        w.write_record([t.stage.clone(), format!("{:.3}", t.seconds)])?;
    }
    w.flush()?;

    let names: Vec<String> = written.iter().map(|p| p.display().to_string()).collect();
    write_json(&rec(&mut written, dir, "manifest.json"), &names, false)?;
    Ok(written.into_iter().map(|p| dir.join(p)).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn timing_keys_are_removed_at_depth() {
        let mut v = json!({"a": 1, "seconds": 2, "b": [{"tuning_seconds": 1, "c": {"epoch_seconds": [1], "d": 4}}], "timings": []});
        strip_timings(&mut v);
        assert_eq!(v, json!({"a": 1, "b": [{"c": {"d": 4}}]}));
    }
}

//! `tlupdate` command-line interface.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use serde_json::Value;

use tlupdate_core::ann::{NetworkModel, Predictor};
use tlupdate_core::data::{
    apply_scaler, load_csv, make_batches, plant_schema, save_csv, DataError, Dataset, DriftInjection, FeatureSchema,
};
use tlupdate_core::explain::{importance_profile, shapley_values, write_attributions_csv};
use tlupdate_core::monitor::{assemble_update_buffer, replay, write_daily_csv, TriggerEvent};
use tlupdate_core::pipeline::{
    acquire, emit_report, run_pipeline, strip_timings, train_initial, DataSource, PipelineConfig, PipelineError,
};
use tlupdate_core::tuning::write_trials_csv;
use tlupdate_core::update::{run_strategy, Deployed, Strategy};

#[derive(Parser)]
#[command(name = "tlupdate", version, about = "Drift-triggered transfer-learning model updates")]
struct Cli {
    /// Pipeline config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic plant dataset as CSV.
    Generate {
        #[arg(long)]
        days: Option<u32>,
        #[arg(long)]
        interval_secs: Option<i64>,
        /// Inject the default drift from this day on.
        #[arg(long, conflicts_with = "no_drift")]
        drift_day: Option<f64>,
        #[arg(long)]
        no_drift: bool,
        #[arg(long, default_value = "data.csv")]
        file: String,
    },
    /// Train the initial model with the full search.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Replay a model over a stream with the failure trigger armed.
    Replay {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// `training.json` written by `train`.
        #[arg(long, required_unless_present_all = ["rmse_baseline", "mae_baseline"])]
        training: Option<PathBuf>,
        #[arg(long)]
        rmse_baseline: Option<f64>,
        #[arg(long)]
        mae_baseline: Option<f64>,
    },
    /// Repair a model on the buffer around a fire date.
    Update {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        fire_date: NaiveDate,
        /// Defaults to the config strategies.
        #[arg(long = "strategy")]
        strategies: Vec<Strategy>,
    },
    /// Run the whole pipeline and write every artifact.
    Run,
    /// Shapley importance of a model over a data window.
    Explain {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Background rows; defaults to `--data`.
        #[arg(long)]
        background: Option<PathBuf>,
        #[arg(long, default_value = "model")]
        tag: String,
    },
    /// Summarize `report.json` in the output directory.
    Report,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig, PipelineError> {
    let mut cfg = match &cli.config {
        Some(p) => PipelineConfig::load(p)?,
        None => PipelineConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.output_dir = Some(cli.out.clone());
    Ok(cfg)
}

fn schema_of(cfg: &PipelineConfig) -> FeatureSchema {
    match &cfg.data {
        DataSource::Csv { schema, .. } => schema.clone(),
        DataSource::Synthetic { .. } => plant_schema(),
    }
}

fn load_deployed(path: &Path) -> Result<Deployed, PipelineError> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str::<Deployed>(&text)
        .or_else(|_| serde_json::from_str::<NetworkModel>(&text).map(Deployed::Single))
        .map_err(|e| DataError::Invalid(format!("{}: {e}", path.display())).into())
}

fn normalized(deployed: &Deployed, data: &Dataset) -> Result<Dataset, PipelineError> {
    let scaler = deployed
        .scaler()
        .ok_or_else(|| DataError::Invalid("model has no scaler".into()))?;
    Ok(apply_scaler(scaler, data)?)
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<(), PipelineError> {
    fs::write(path, serde_json::to_string_pretty(value)? + "\n")?;
    Ok(())
}

fn generate(
    cli: &Cli,
    days: Option<u32>,
    interval: Option<i64>,
    drift_day: Option<f64>,
    no_drift: bool,
    file: &str,
) -> Result<(), PipelineError> {
    let mut cfg = load_config(cli)?;
    if let DataSource::Synthetic {
        days: d,
        interval_secs,
        drift,
        ..
    } = &mut cfg.data
    {
        *d = days.unwrap_or(*d);
        *interval_secs = interval.unwrap_or(*interval_secs);
        if no_drift {
            *drift = None;
        } else if let Some(day) = drift_day {
            *drift = Some(DriftInjection::plant_default(day));
        }
    } else {
        return Err(PipelineError::Config("generate needs a synthetic data source".into()));
    }
    cfg.validate()?;
    let (data, _) = acquire(&cfg)?;
    fs::create_dir_all(&cli.out)?;
    let path = cli.out.join(file);
    save_csv(&data, &path)?;
    println!("wrote {} rows to {}", data.len(), path.display());
    Ok(())
}

fn train(cli: &Cli, data: Option<&Path>) -> Result<(), PipelineError> {
    let cfg = load_config(cli)?;
    let raw = match data {
        Some(p) => load_csv(p, &schema_of(&cfg))?,
        None => acquire(&cfg)?.0,
    };
    let batches = make_batches(&raw, cfg.batch_days)?;
    let initial = train_initial(&raw, &batches, &cfg)?;
    fs::create_dir_all(&cli.out)?;
    write_json(&cli.out.join("model.json"), &initial.model)?;
    write_json(&cli.out.join("training.json"), &initial.report)?;
    let mut w = csv::Writer::from_path(cli.out.join("trials.csv"))?;
    write_trials_csv("initial", &initial.report.search, true, &mut w, true)?;
    w.flush()?;
    let t = &initial.report.test;
    println!(
        "hidden {:?}, lr {:?}: test rmse {:.5} mae {:.5} r2 {:.5}",
        initial.report.architecture.hidden_layers,
        initial.report.learning_rate,
        t.rmse,
        t.mae,
        t.r2.unwrap_or(f64::NAN)
    );
    Ok(())
}

fn baselines(training: Option<&Path>, rmse: Option<f64>, mae: Option<f64>) -> Result<(f64, f64), PipelineError> {
    if let (Some(r), Some(m)) = (rmse, mae) {
        return Ok((r, m));
    }
    let path = training.ok_or_else(|| PipelineError::Config("baselines missing".into()))?;
    let v: Value = serde_json::from_str(&fs::read_to_string(path)?)?;
    let get = |k: &str| v["test"][k].as_f64().ok_or_else(|| PipelineError::Config(format!("{}: no test.{k}", path.display())));
    Ok((rmse.map_or_else(|| get("rmse"), Ok)?, mae.map_or_else(|| get("mae"), Ok)?))
}

fn replay_cmd(cli: &Cli, model: &Path, data: &Path, training: Option<&Path>, rmse: Option<f64>, mae: Option<f64>) -> Result<(), PipelineError> {
    let cfg = load_config(cli)?;
    let deployed = load_deployed(model)?;
    let stream = normalized(&deployed, &load_csv(data, &schema_of(&cfg))?)?;
    let (r, m) = baselines(training, rmse, mae)?;
    let policy = cfg.trigger.policy(r, m);
    let out = replay(&deployed, &stream, &policy)?;
    fs::create_dir_all(&cli.out)?;
    let mut w = csv::Writer::from_path(cli.out.join("daily_errors.csv"))?;
    write_daily_csv("replay", &out.state, &mut w, true)?;
    w.flush()?;
    match out.state.fired_on {
        Some(date) => {
            let batches = make_batches(&stream, cfg.batch_days)?;
            let buffer = assemble_update_buffer(&stream, &batches, date)?;
            write_json(&cli.out.join("trigger.json"), &TriggerEvent::new(date, &policy, &buffer))?;
            println!("trigger fired on {date}; buffer {} rows", buffer.len());
        }
        None => println!("no trigger over {} days", out.state.records.len()),
    }
    Ok(())
}

fn update_cmd(cli: &Cli, model: &Path, data: &Path, fire_date: NaiveDate, strategies: &[Strategy]) -> Result<(), PipelineError> {
    let cfg = load_config(cli)?;
    let deployed = load_deployed(model)?;
    let stream = normalized(&deployed, &load_csv(data, &schema_of(&cfg))?)?;
    let batches = make_batches(&stream, cfg.batch_days)?;
    let buffer = assemble_update_buffer(&stream, &batches, fire_date)?;
    let strategies = if strategies.is_empty() { &cfg.strategies[..] } else { strategies };
    fs::create_dir_all(cli.out.join("models"))?;
    for &s in strategies {
        let outcome = run_strategy(s, &deployed, &buffer, &cfg.update_budget, cfg.seed)?;
        write_json(&cli.out.join(format!("models/{s}.json")), outcome.deployed())?;
        write_json(&cli.out.join(format!("update_{s}.json")), &outcome)?;
        println!(
            "{s}: validation rmse {:.5} (stale {:.5}), {} member(s)",
            outcome.validation.rmse, outcome.stale_validation.rmse, outcome.members
        );
    }
    Ok(())
}

fn run_cmd(cli: &Cli) -> Result<(), PipelineError> {
    let cfg = load_config(cli)?;
    let report = run_pipeline(&cfg)?;
    let manifest = emit_report(&report, &cli.out)?;
    match &report.trigger {
        Some(t) => println!("trigger fired on {}", t.fire_date),
        None => println!("no trigger; update stages skipped"),
    }
    for u in &report.updates {
        if let (Some(a), Some(b)) = (&u.evaluation.updated, &u.evaluation.stale) {
            println!("{}: rmse {:.5} vs stale {:.5} on {} rows", u.strategy, a.rmse, b.rmse, u.evaluation.rows);
        }
    }
    println!("wrote {} files to {}", manifest.len(), cli.out.display());
    Ok(())
}

fn explain_cmd(cli: &Cli, model: &Path, data: &Path, background: Option<&Path>, tag: &str) -> Result<(), PipelineError> {
    let cfg = load_config(cli)?;
    let settings = cfg.explain.clone().unwrap_or_default();
    let schema = schema_of(&cfg);
    let deployed = load_deployed(model)?;
    let window = normalized(&deployed, &load_csv(data, &schema)?)?;
    let bg = match background {
        Some(p) => normalized(&deployed, &load_csv(p, &schema)?)?,
        None => window.clone(),
    };
    let (bg, ev) = settings.subsample(bg.inputs(), window.inputs());
    let names = schema.input_names.clone();
    let profile = importance_profile(&deployed, ev.view(), bg.view(), &names, tag)?;
    fs::create_dir_all(&cli.out)?;
    write_json(&cli.out.join(format!("profile_{tag}.json")), &profile)?;
    let rows = ev
        .rows()
        .into_iter()
        .map(|r| shapley_values(&deployed, r, bg.view()))
        .collect::<Result<Vec<_>, _>>()?;
    let mut w = csv::Writer::from_path(cli.out.join(format!("attributions_{tag}.csv")))?;
    write_attributions_csv(tag, &names, &rows, &mut w, true)?;
    w.flush()?;
    println!("top feature: {} (input dim {})", profile.top(), deployed.input_dim());
    Ok(())
}

fn report_cmd(cli: &Cli) -> Result<(), PipelineError> {
    let path = cli.out.join("report.json");
    let mut v: Value = serde_json::from_str(&fs::read_to_string(&path)?)?;
    strip_timings(&mut v);
    let test = &v["training"]["test"];
    println!("test: rmse {} mae {} r2 {}", test["rmse"], test["mae"], test["r2"]);
    match v["trigger"]["fire_date"].as_str() {
        Some(d) => println!("fired: {d}"),
        None => println!("fired: never"),
    }
    for u in v["updates"].as_array().into_iter().flatten() {
        let e = &u["evaluation"];
        println!(
            "{}: rmse {} vs stale {} over {} rows, {} cycle(s)",
            u["strategy"].as_str().unwrap_or("?"),
            e["updated"]["rmse"],
            e["stale"]["rmse"],
            e["rows"],
            u["cycles"].as_array().map_or(0, Vec::len)
        );
    }
    let timing = cli.out.join("timing.csv");
    if timing.exists() {
        print!("{}", fs::read_to_string(timing)?);
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate {
            days,
            interval_secs,
            drift_day,
            no_drift,
            file,
        } => generate(&cli, *days, *interval_secs, *drift_day, *no_drift, file),
        Command::Train { data } => train(&cli, data.as_deref()),
        Command::Replay {
            model,
            data,
            training,
            rmse_baseline,
            mae_baseline,
        } => replay_cmd(&cli, model, data, training.as_deref(), *rmse_baseline, *mae_baseline),
        Command::Update {
            model,
            data,
            fire_date,
            strategies,
        } => update_cmd(&cli, model, data, *fire_date, strategies),
        Command::Run => run_cmd(&cli),
        Command::Explain {
            model,
            data,
            background,
            tag,
        } => explain_cmd(&cli, model, data, background.as_deref(), tag),
        Command::Report => report_cmd(&cli),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

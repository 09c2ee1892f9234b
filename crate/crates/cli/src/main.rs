use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use astgi::data::{split_tvt, write_dataset, DatasetManifest, Normalizer, SplitSample};
use astgi::diffcore::Checkpoint;
use astgi::harness::{
    ablate, build_variant, predictions_for, run_variant, sweep, write_csv, write_predictions, ExperimentSpec,
    ResultRow, ResultTable, SweepParam, VariantTag,
};
use astgi::model::gradcheck_tiny;
use astgi::trainer::{prepare_data, train_with, PreparedData, TrainConfig};
use astgi::AstgiError;
use clap::{Parser, Subcommand};
use serde_json::json;

#[derive(Parser)]
#[command(name = "astgi", version, about = "Forecasting irregular multivariate time series")]
struct Cli {
    /// JSON experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Run seed; for multi-seed commands, replaces the seed list.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Force 64-bit arithmetic.
    #[arg(long, global = true)]
    f64: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file.
    Synth {
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long)]
        channels: Option<usize>,
    },
    /// Train one variant and write report, checkpoint and predictions.
    Train {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long, default_value = "full")]
        variant: String,
    },
    /// Evaluate a checkpoint on the test split of a dataset.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Predict the queries of every sample of a dataset.
    Predict {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Compare analytic and finite-difference gradients on a tiny model.
    Gradcheck {
        #[arg(long, default_value_t = 1e-6)]
        step: f64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
    /// Train every configured variant over every seed.
    Ablate {
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Vary one hyperparameter of the full model.
    Sweep {
        #[arg(long)]
        data: Option<PathBuf>,
        /// One of k, l, d_model, d_c.
        #[arg(long)]
        param: String,
        /// Comma-separated values; defaults to the parameter's standard grid.
        #[arg(long, value_delimiter = ',')]
        values: Vec<usize>,
    },
    /// Evaluate the training-free baselines.
    Baselines {
        #[arg(long)]
        data: Option<PathBuf>,
    },
}

fn load_spec(cli: &Cli) -> Result<ExperimentSpec> {
    let mut spec: ExperimentSpec = match &cli.config {
        Some(path) => {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            serde_json::from_str(&text).map_err(AstgiError::from)?
        }
        None => ExperimentSpec::default(),
    };
    if let Some(seed) = cli.seed {
        spec.train.seed = seed;
        spec.train.seeds = vec![seed];
        spec.synth_seed = seed;
    }
    if let Some(out) = &cli.out {
        spec.out_dir = out.clone();
    }
    if cli.f64 {
        spec.train.f64 = true;
    }
    spec.train.validate()?;
    Ok(spec)
}

fn out_dir(spec: &ExperimentSpec) -> Result<&Path> {
    fs::create_dir_all(&spec.out_dir).with_context(|| format!("creating {}", spec.out_dir.display()))?;
    Ok(&spec.out_dir)
}

fn load(spec: &ExperimentSpec) -> Result<(String, astgi::data::Dataset)> {
    match &spec.dataset {
        Some(path) => Ok(spec.load_data().with_context(|| format!("loading {}", path.display()))?),
        None => Ok(spec.load_data()?),
    }
}

fn prepared(spec: &mut ExperimentSpec, data: &Option<PathBuf>) -> Result<(String, PreparedData)> {
    if let Some(path) = data {
        spec.dataset = Some(path.clone());
    }
    let (name, ds) = load(spec)?;
    spec.train.model.n_channels = ds.manifest.n_channels;
    let data = prepare_data(&ds, spec.train.split, spec.train.split_seed)?;
    Ok((name, data))
}

fn write_json(path: &Path, value: &impl serde::Serialize) -> Result<()> {
    fs::write(path, serde_json::to_string_pretty(value).map_err(AstgiError::from)?)?;
    Ok(())
}

fn cmd_synth(spec: &mut ExperimentSpec, samples: Option<usize>, channels: Option<usize>) -> Result<()> {
    if let Some(n) = samples {
        spec.synth.samples = n;
    }
    if let Some(c) = channels {
        spec.synth.n_channels = c;
    }
    spec.dataset = None;
    let (_, ds) = spec.load_data()?;
    let path = out_dir(spec)?.join("dataset.jsonl");
    write_dataset(&path, &ds.manifest, &ds.samples)?;
    println!("{}", json!({"dataset": path, "samples": ds.samples.len()}));
    Ok(())
}

fn cmd_train(spec: &mut ExperimentSpec, data: &Option<PathBuf>, variant: &str) -> Result<()> {
    let tag: VariantTag = variant.parse()?;
    let (name, data) = prepared(spec, data)?;
    let dir = out_dir(spec)?.to_path_buf();
    let mut cfg = spec.train.clone();
    if let Some(v) = tag.model_variant() {
        cfg.model.variant = v;
    }
    cfg.divergence_snapshot = Some(dir.join("divergence_checkpoint.json"));
    let method = build_variant(tag.as_str(), &cfg.model)?;

    let run = if method.is_trainable() {
        let mut log = BufWriter::new(File::create(dir.join("progress.log"))?);
        let outcome = train_with(&cfg, &data, |e| {
            let _ = writeln!(
                log,
                "epoch {} train_loss {:.8} val_mse {:.8} val_mae {:.8}",
                e.epoch, e.train_loss, e.val_mse, e.val_mae
            );
        })?;
        log.flush()?;
        write_csv(&dir.join("loss_curve.csv"), &outcome.report.epochs)?;
        write_json(&dir.join("report.json"), &outcome.report)?;
        let test = method.evaluate(&outcome.params, &data.test)?;
        astgi::harness::RunResult {
            variant: tag,
            seed: cfg.seed,
            method,
            params: outcome.params,
            test,
            runtime_secs: outcome.report.wall_time_secs,
            report: Some(outcome.report),
        }
    } else {
        let run = run_variant(tag, &cfg, &data, cfg.seed)?;
        write_json(
            &dir.join("report.json"),
            &json!({"variant": tag, "seed": cfg.seed, "test_mse": run.test.mse, "test_mae": run.test.mae}),
        )?;
        run
    };

    let ckpt_config = json!({"train": cfg, "variant": tag, "normalizer": data.normalizer});
    Checkpoint::new(&run.params, ckpt_config, cfg.seed).save(&dir.join("checkpoint.json"))?;
    let preds = predictions_for(&run.method, &run.params, &data.test, &data.normalizer)?;
    write_predictions(&dir.join("predictions.jsonl"), &preds)?;
    let row = ResultRow::from_runs(&name, std::slice::from_ref(&run))?;
    ResultTable { rows: vec![row] }.write_csv(&dir.join("metrics.csv"))?;
    println!(
        "{}",
        json!({"variant": tag, "seed": cfg.seed, "test_mse": run.test.mse, "test_mae": run.test.mae, "out": dir})
    );
    Ok(())
}

struct Loaded {
    tag: VariantTag,
    cfg: TrainConfig,
    normalizer: Normalizer,
    params: astgi::diffcore::ModelParams,
}

fn load_checkpoint(path: &Path) -> Result<Loaded> {
    let ckpt = Checkpoint::load(path).with_context(|| format!("loading {}", path.display()))?;
    let field = |name: &str| {
        ckpt.config
            .get(name)
            .cloned()
            .ok_or_else(|| AstgiError::Validation(format!("checkpoint config lacks `{name}`")))
    };
    Ok(Loaded {
        tag: serde_json::from_value(field("variant")?).map_err(AstgiError::from)?,
        cfg: serde_json::from_value(field("train")?).map_err(AstgiError::from)?,
        normalizer: serde_json::from_value(field("normalizer")?).map_err(AstgiError::from)?,
        params: ckpt.to_params()?,
    })
}

fn raw_samples(spec: &mut ExperimentSpec, data: &Option<PathBuf>) -> Result<(String, DatasetManifest, Vec<SplitSample>)> {
    if let Some(path) = data {
        spec.dataset = Some(path.clone());
    }
    let (name, ds) = load(spec)?;
    Ok((name, ds.manifest, ds.samples))
}

fn cmd_eval(spec: &mut ExperimentSpec, checkpoint: &Path, data: &Option<PathBuf>) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let (name, manifest, samples) = raw_samples(spec, data)?;
    if manifest.n_channels != ck.normalizer.n_channels() {
        bail!(AstgiError::Validation(format!(
            "dataset has {} channels, checkpoint expects {}",
            manifest.n_channels,
            ck.normalizer.n_channels()
        )));
    }
    let (_, _, test) = split_tvt(&samples, ck.cfg.split, ck.cfg.split_seed)?;
    let test = ck.normalizer.apply_all(&test);
    let method = build_variant(ck.tag.as_str(), &ck.cfg.model)?;
    let metrics = method.evaluate(&ck.params, &test)?;
    let dir = out_dir(spec)?;
    let report = json!({"variant": ck.tag, "dataset": name, "test_mse": metrics.mse, "test_mae": metrics.mae, "queries": metrics.count});
    write_json(&dir.join("eval.json"), &report)?;
    println!("{report}");
    Ok(())
}

fn cmd_predict(spec: &mut ExperimentSpec, checkpoint: &Path, data: &Option<PathBuf>) -> Result<()> {
    let ck = load_checkpoint(checkpoint)?;
    let (_, _, samples) = raw_samples(spec, data)?;
    let samples = ck.normalizer.apply_all(&samples);
    let method = build_variant(ck.tag.as_str(), &ck.cfg.model)?;
    let preds = predictions_for(&method, &ck.params, &samples, &ck.normalizer)?;
    let path = out_dir(spec)?.join("predictions.jsonl");
    write_predictions(&path, &preds)?;
    println!("{}", json!({"predictions": path, "count": preds.len()}));
    Ok(())
}

fn cmd_gradcheck(spec: &ExperimentSpec, step: f64, tol: f64) -> Result<()> {
    let report = gradcheck_tiny(spec.train.seed, step, tol)?;
    write_json(&out_dir(spec)?.join("gradcheck.json"), &report)?;
    println!(
        "{}",
        json!({"passed": report.passed(), "max_rel_error": report.max_rel_error(), "groups": report.groups.len()})
    );
    if !report.passed() {
        bail!(AstgiError::Contract(format!(
            "gradient check failed: max relative error {:e} exceeds {tol:e}",
            report.max_rel_error()
        )));
    }
    Ok(())
}

fn cmd_ablate(spec: &mut ExperimentSpec, data: &Option<PathBuf>, variants: Option<Vec<VariantTag>>) -> Result<()> {
    if let Some(v) = variants {
        spec.variants = v;
    }
    let (name, data) = prepared(spec, data)?;
    let (table, runs) = ablate(spec, &name, &data)?;
    let dir = out_dir(spec)?;
    table.write_csv(&dir.join("metrics.csv"))?;
    let per_run: Vec<_> = runs
        .iter()
        .map(|r| json!({"variant": r.variant, "seed": r.seed, "test_mse": r.test.mse, "test_mae": r.test.mae}))
        .collect();
    write_json(&dir.join("report.json"), &json!({"dataset": name, "table": table, "runs": per_run}))?;
    println!("{}", serde_json::to_string(&table).map_err(AstgiError::from)?);
    Ok(())
}

fn cmd_sweep(spec: &mut ExperimentSpec, data: &Option<PathBuf>, param: &str, values: &[usize]) -> Result<()> {
    let param: SweepParam = param.parse()?;
    let values = if values.is_empty() {
        param.default_grid()
    } else {
        values.to_vec()
    };
    let (_, data) = prepared(spec, data)?;
    let rows = sweep(param, &values, &spec.train, &data)?;
    let path = out_dir(spec)?.join("sweep.csv");
    write_csv(&path, &rows)?;
    let failed = rows.iter().filter(|r| r.error.is_some()).count();
    println!("{}", json!({"sweep": path, "cells": rows.len(), "failed": failed}));
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut spec = load_spec(&cli)?;
    match &cli.command {
        Command::Synth { samples, channels } => cmd_synth(&mut spec, *samples, *channels),
        Command::Train { data, variant } => cmd_train(&mut spec, data, variant),
        Command::Eval { checkpoint, data } => cmd_eval(&mut spec, checkpoint, data),
        Command::Predict { checkpoint, data } => cmd_predict(&mut spec, checkpoint, data),
        Command::Gradcheck { step, tol } => cmd_gradcheck(&spec, *step, *tol),
        Command::Ablate { data } => cmd_ablate(&mut spec, data, None),
        Command::Sweep { data, param, values } => cmd_sweep(&mut spec, data, param, values),
        Command::Baselines { data } => cmd_ablate(
            &mut spec,
            data,
            Some(vec![VariantTag::BaselineMean, VariantTag::BaselineLocf]),
        ),
    }
}

fn error_json(err: &anyhow::Error) -> serde_json::Value {
    let kind = err.downcast_ref::<AstgiError>().map(|e| e.kind()).unwrap_or("error");
    json!({"error": kind, "message": format!("{err:#}")})
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_json(&e));
            ExitCode::FAILURE
        }
    }
}

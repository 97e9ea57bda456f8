//! The `lfednet` command line.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use chrono::NaiveDate;
use clap::{Parser, Subcommand};
use lfednet_core::data::{build_dataset, split, synth_generate, NormStats, SynthProfile, TrainingExample, FEATURE_DIM};
use lfednet_core::grid::{build_constraints, SystemConfig};
use lfednet_core::metrics::{compare, evaluate, CompareReport, EvalReport};
use lfednet_core::net::{predict, NetConfig, NetworkParams};
use lfednet_core::solver::SqpSettings;
use lfednet_core::taskgrad::TaskContext;
use lfednet_core::train::{pretrain, residual_variance, task_train, DispatchSetup};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::artifacts;
use crate::error::{Error, Result, EXIT_USAGE};
use crate::formats::{read_system, read_training_config, to_json, BundleParts, ModelBundle, Stage};
use crate::fsio::sibling;
use crate::manifest::Run;
use crate::observer::Progress;
use crate::records;

#[derive(Debug, Parser)]
#[command(name = "lfednet", version, about = "Task-based day-ahead load forecasting")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic hourly load and temperature series.
    GenData {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5)]
        years: u32,
        #[arg(long, default_value_t = 2012)]
        start_year: i32,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the forecaster to the prediction loss.
    Pretrain {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[arg(long)]
        out_model: PathBuf,
        /// Overrides the configuration seed; also seeds the data split.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        progress: ProgressArgs,
    },
    /// Fine-tune a pretrained forecaster on the dispatch cost.
    Train {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[arg(long)]
        in_model: PathBuf,
        #[arg(long)]
        out_model: PathBuf,
        /// Minibatch shuffle seed; defaults to the pretraining seed.
        #[arg(long)]
        seed: Option<u64>,
        #[command(flatten)]
        progress: ProgressArgs,
    },
    /// Forecast one day and schedule generation against the forecast.
    Dispatch {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        model: PathBuf,
        /// History covering the feature window of the date.
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        date: NaiveDate,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to `<out stem>.forecast.csv`.
        #[arg(long)]
        forecast_out: Option<PathBuf>,
    },
    /// Score a model on the test period.
    Evaluate {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        out_report: PathBuf,
    },
    /// Compare a task-trained model (A) with a baseline (B) over resampled test sets.
    Compare {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        model_a: PathBuf,
        #[arg(long)]
        model_b: PathBuf,
        #[arg(long, default_value_t = 20)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out_report: PathBuf,
    },
}

#[derive(Debug, Clone, Copy, clap::Args)]
pub struct ProgressArgs {
    /// Record elapsed milliseconds in the training log.
    #[arg(long)]
    pub wall_clock: bool,
    /// Suppress per-epoch progress on stderr.
    #[arg(long)]
    pub quiet: bool,
}

/// Headline numbers of one model in a comparison.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub model: String,
    pub mape_percent: f64,
    pub realized_cost_mean: f64,
    pub days: usize,
    pub skipped: Vec<NaiveDate>,
}

impl ModelSummary {
    fn of(path: &Path, r: &EvalReport) -> Self {
        ModelSummary {
            model: path.display().to_string(),
            mape_percent: r.mape_percent,
            realized_cost_mean: r.realized_cost_mean,
            days: r.days.len(),
            skipped: r.skipped.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareOutput {
    pub lfednet: ModelSummary,
    pub lfnet: ModelSummary,
    pub comparison: CompareReport,
}

/// Parse `args` (including the program name), run the command and return the
/// process exit status.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { 0 };
        }
    };
    let recorded: Vec<String> = args.iter().skip(1).map(|a| a.to_string_lossy().into_owned()).collect();
    match execute(cli.command, recorded) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn execute(command: Command, args: Vec<String>) -> Result<()> {
    match command {
        Command::GenData {
            seed,
            years,
            start_year,
            out,
        } => gen_data(seed, years, start_year, &out, args),
        Command::Pretrain {
            data,
            system,
            train_config,
            out_model,
            seed,
            progress,
        } => run_pretrain(&data, &system, train_config.as_deref(), &out_model, seed, progress, args),
        Command::Train {
            data,
            system,
            train_config,
            in_model,
            out_model,
            seed,
            progress,
        } => run_train(
            &data,
            &system,
            train_config.as_deref(),
            &in_model,
            &out_model,
            seed,
            progress,
            args,
        ),
        Command::Dispatch {
            system,
            model,
            data,
            date,
            out,
            forecast_out,
        } => run_dispatch(&system, &model, &data, date, &out, forecast_out.as_deref(), args),
        Command::Evaluate {
            data,
            system,
            model,
            out_report,
        } => run_evaluate(&data, &system, &model, &out_report, args),
        Command::Compare {
            data,
            system,
            model_a,
            model_b,
            repeats,
            seed,
            out_report,
        } => run_compare(&data, &system, &model_a, &model_b, repeats, seed, &out_report, args),
    }
}

fn gen_data(seed: u64, years: u32, start_year: i32, out: &Path, args: Vec<String>) -> Result<()> {
    if years == 0 {
        return Err(Error::Usage("--years must be at least 1".into()));
    }
    let profile = SynthProfile {
        start_year,
        ..SynthProfile::default()
    };
    let recs = synth_generate(seed, years, &profile);
    let mut run = Run::new("gen-data", args, Some(seed));
    run.output(out, &records::to_csv(&recs))?;
    run.finish()?;
    Ok(())
}

fn load_examples(path: &Path) -> Result<Vec<TrainingExample>> {
    let recs = records::load_csv(path)?;
    Ok(build_dataset(&recs)?)
}

fn normalize_all(stats: &NormStats, examples: &[TrainingExample]) -> Vec<TrainingExample> {
    examples.iter().map(|e| stats.normalize_example(e)).collect()
}

fn in_dir(report: &Path, name: &str) -> PathBuf {
    report.with_file_name(name)
}

fn run_pretrain(
    data: &Path,
    system: &Path,
    config: Option<&Path>,
    out_model: &Path,
    seed: Option<u64>,
    progress: ProgressArgs,
    args: Vec<String>,
) -> Result<()> {
    let mut cfg = read_training_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    read_system(system)?;
    let examples = load_examples(data)?;
    let parts = split(&examples, cfg.seed)?;
    let stats = NormStats::fit(&parts.train)?;
    let train = normalize_all(&stats, &parts.train);
    let net = NetConfig {
        input_dim: FEATURE_DIM,
        hidden_width: cfg.hidden_width,
        hidden_layers: cfg.hidden_layers,
    };
    let params = NetworkParams::init(net, cfg.seed);
    let mut obs = Progress::new(progress.wall_clock, progress.quiet);
    let (params, log) = pretrain(params, &train, &cfg, &mut obs)?;
    let sigma2 = residual_variance(&params, &train)?;
    let bundle = ModelBundle::new(BundleParts {
        stage: Stage::Pretrained,
        params: &params,
        norm_stats: &stats,
        sigma2: &sigma2,
        training: &cfg,
        split_seed: cfg.seed,
        best_epoch: None,
        log: &log,
    });

    let mut run = Run::new("pretrain", args, Some(cfg.seed));
    run.input(data)?;
    run.input(system)?;
    if let Some(c) = config {
        run.input(c)?;
    }
    run.output(out_model, &bundle.to_json())?;
    run.output(&sibling(out_model, "log.csv"), &artifacts::log_csv(&log))?;
    run.finish()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_train(
    data: &Path,
    system_path: &Path,
    config: Option<&Path>,
    in_model: &Path,
    out_model: &Path,
    seed: Option<u64>,
    progress: ProgressArgs,
    args: Vec<String>,
) -> Result<()> {
    let base = ModelBundle::load(in_model)?;
    let params = base.params(in_model)?;
    let mut cfg = match config {
        Some(_) => read_training_config(config)?,
        None => base.training.clone(),
    };
    cfg.seed = seed.unwrap_or(base.split_seed);
    cfg.validate()?;
    let system = read_system(system_path)?;
    let constraints = build_constraints(&system);
    let examples = load_examples(data)?;
    let parts = split(&examples, base.split_seed)?;
    let stats = &base.norm_stats;
    let train = normalize_all(stats, &parts.train);
    let validation = normalize_all(stats, &parts.validation);
    let setup = DispatchSetup {
        system: &system,
        constraints: &constraints,
        stats,
        sqp: SqpSettings::default(),
    };
    let mut obs = Progress::new(progress.wall_clock, progress.quiet);
    let out = task_train(params, &train, &validation, setup, &cfg, &mut obs)?;
    let bundle = ModelBundle::new(BundleParts {
        stage: Stage::TaskTrained,
        params: &out.params,
        norm_stats: stats,
        sigma2: &out.sigma2,
        training: &cfg,
        split_seed: base.split_seed,
        best_epoch: Some(out.best_epoch),
        log: &out.log,
    });

    let mut run = Run::new("train", args, Some(cfg.seed));
    run.input(data)?;
    run.input(system_path)?;
    run.input(in_model)?;
    if let Some(c) = config {
        run.input(c)?;
    }
    run.output(out_model, &bundle.to_json())?;
    run.output(&sibling(out_model, "log.csv"), &artifacts::log_csv(&out.log))?;
    run.finish()?;
    Ok(())
}

fn context<'a>(system: &'a SystemConfig, constraints: &'a lfednet_core::ConstraintSet, bundle: &'a ModelBundle) -> TaskContext<'a> {
    TaskContext {
        system,
        constraints,
        stats: &bundle.norm_stats,
        sigma2: &bundle.sigma2,
        include_cost: bundle.training.include_cost,
        sqp: SqpSettings::default(),
    }
}

fn run_dispatch(
    system_path: &Path,
    model: &Path,
    data: &Path,
    date: NaiveDate,
    out: &Path,
    forecast_out: Option<&Path>,
    args: Vec<String>,
) -> Result<()> {
    let bundle = ModelBundle::load(model)?;
    let params = bundle.params(model)?;
    let system = read_system(system_path)?;
    if system.horizon() != lfednet_core::HOURS_PER_DAY {
        return Err(Error::Usage(format!(
            "dispatch needs a {}-hour system, found horizon {}",
            lfednet_core::HOURS_PER_DAY,
            system.horizon()
        )));
    }
    let constraints = build_constraints(&system);
    let examples = load_examples(data)?;
    let example = examples.iter().find(|e| e.date == date).ok_or_else(|| Error::Schema {
        path: data.to_path_buf(),
        message: format!("no complete feature window for {date}"),
    })?;
    let x = bundle.norm_stats.normalize_features(&example.x);
    let y_hat = predict(&params, &DMatrix::from_row_slice(1, x.len(), &x))?;
    let row: Vec<f64> = y_hat.row(0).iter().copied().collect();
    let ctx = context(&system, &constraints, &bundle);
    let result = ctx.dispatch(&row, None)?;
    let forecast_path = forecast_out.map_or_else(|| sibling(out, "forecast.csv"), Path::to_path_buf);

    let mut run = Run::new("dispatch", args, None);
    run.input(system_path)?;
    run.input(model)?;
    run.input(data)?;
    run.output(out, &artifacts::schedule_csv(&system, &result.p_star))?;
    run.output(&forecast_path, &artifacts::forecast_csv(&ctx.distribution(&row)))?;
    run.finish()?;
    Ok(())
}

/// Evaluate a saved model on the chronological test period.
fn evaluate_model(model: &Path, system: &SystemConfig, examples: &[TrainingExample]) -> Result<(ModelBundle, EvalReport)> {
    let bundle = ModelBundle::load(model)?;
    let params = bundle.params(model)?;
    let constraints = build_constraints(system);
    let test = normalize_all(&bundle.norm_stats, &split(examples, bundle.split_seed)?.test);
    let report = evaluate(&params, &test, &context(system, &constraints, &bundle))?;
    Ok((bundle, report))
}

fn run_evaluate(data: &Path, system_path: &Path, model: &Path, out_report: &Path, args: Vec<String>) -> Result<()> {
    let system = read_system(system_path)?;
    let examples = load_examples(data)?;
    let (bundle, report) = evaluate_model(model, &system, &examples)?;

    let mut run = Run::new("evaluate", args, None);
    run.input(data)?;
    run.input(system_path)?;
    run.input(model)?;
    run.output(out_report, &to_json(&report))?;
    run.output(&in_dir(out_report, "hourly_cost.csv"), &artifacts::hourly_csv(&report.hourly_cost))?;
    run.output(
        &in_dir(out_report, "hourly_taskloss.csv"),
        &artifacts::hourly_csv(&report.hourly_task_loss),
    )?;
    run.output(&in_dir(out_report, "tradeoff.csv"), &artifacts::tradeoff_csv(&bundle.log))?;
    run.finish()?;
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn run_compare(
    data: &Path,
    system_path: &Path,
    model_a: &Path,
    model_b: &Path,
    repeats: usize,
    seed: u64,
    out_report: &Path,
    args: Vec<String>,
) -> Result<()> {
    if repeats == 0 {
        return Err(Error::Usage("--repeats must be at least 1".into()));
    }
    let system = read_system(system_path)?;
    let examples = load_examples(data)?;
    let (bundle_a, a) = evaluate_model(model_a, &system, &examples)?;
    let (_, b) = evaluate_model(model_b, &system, &examples)?;
    let output = CompareOutput {
        lfednet: ModelSummary::of(model_a, &a),
        lfnet: ModelSummary::of(model_b, &b),
        comparison: compare(&a, &b, repeats, seed)?,
    };
    let names = ["lfednet", "lfnet"];

    let mut run = Run::new("compare", args, Some(seed));
    run.input(data)?;
    run.input(system_path)?;
    run.input(model_a)?;
    run.input(model_b)?;
    run.output(out_report, &to_json(&output))?;
    run.output(&in_dir(out_report, "forecast_vs_actual.csv"), &artifacts::forecast_vs_actual_csv(&a, &b))?;
    run.output(
        &in_dir(out_report, "hourly_cost.csv"),
        &artifacts::hourly_pair_csv(names, &a.hourly_cost, &b.hourly_cost),
    )?;
    run.output(
        &in_dir(out_report, "hourly_taskloss.csv"),
        &artifacts::hourly_pair_csv(names, &a.hourly_task_loss, &b.hourly_task_loss),
    )?;
    run.output(&in_dir(out_report, "tradeoff.csv"), &artifacts::tradeoff_csv(&bundle_a.log))?;
    run.finish()?;
    Ok(())
}

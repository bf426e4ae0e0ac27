use std::fs::File;
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use rpfa::dataset::{export_csv, ingest_csv, CsvSchema, Dataset};
use rpfa::estimator::{aic, bic, require_converged, FitOptions};
use rpfa::evaluation::{cross_validate_table, make_folds, CvResult, LossKind};
use rpfa::features::{featurize, FailureSign, FeatureConfig};
use rpfa::harness::{
    compare_predictions, fit_dataset, replicate_study, sweep_decay, write_report, write_study_scores_csv, Measure,
    ReportFormat, ScoringOptions, StudyConfig, SweepConfig, SweepGrid,
};
use rpfa::model::{ModelFamily, ModelSpec};
use rpfa::simulators::{simulate, Generator, InitialState, SimConfig};
use rpfa::{Error, Result};

#[derive(Parser)]
#[command(name = "rpfa", version, about = "Recency-weighted student performance models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Seed for every random choice (overrides the config file).
    #[arg(long)]
    seed: Option<u64>,
    /// JSON config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Exit 0 even when some cells or replications failed.
    #[arg(long)]
    allow_partial: bool,
    /// Treat non-convergence as an error.
    #[arg(long)]
    strict: bool,
}

#[derive(Args, Clone)]
struct DataArgs {
    /// Attempt log CSV (columns student, kc, outcome; opportunity optional).
    #[arg(long)]
    data: PathBuf,
    #[arg(long, default_value = "student")]
    student_column: String,
    #[arg(long, default_value = "kc")]
    kc_column: String,
    #[arg(long, default_value = "outcome")]
    outcome_column: String,
    /// Column holding opportunity numbers; detected when named `opportunity`.
    #[arg(long)]
    opportunity_column: Option<String>,
    /// Column used to order attempts, e.g. a timestamp.
    #[arg(long)]
    order_column: Option<String>,
}

#[derive(Args, Clone)]
struct ModelArgs {
    /// Model as `family[:success_decay[:failure_decay]]`, e.g. `r-pfa:0.7:0.1`.
    #[arg(long, default_value = "r-pfa:0.7:0.1")]
    model: String,
    /// Add a per-student intercept.
    #[arg(long)]
    student_intercept: bool,
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        generator: Option<Generator>,
        #[arg(long)]
        students: Option<usize>,
        #[arg(long)]
        kcs: Option<usize>,
        /// Apply one learning transition before the first attempt.
        #[arg(long)]
        transition_first: bool,
        /// Also write latent states to `<out>.latent.csv`.
        #[arg(long)]
        emit_latent: bool,
        /// Also write the per-student census to `<out>.census.csv`.
        #[arg(long)]
        census: bool,
    },
    /// Compute T, S, F, R for every attempt.
    Featurize {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value_t = 1.0)]
        decay_s: f64,
        #[arg(long, default_value_t = 1.0)]
        decay_f: f64,
        #[arg(long, default_value_t = 1.0)]
        decay_r: f64,
        #[arg(long, default_value_t = 3)]
        ghosts: u32,
        /// Report F as a non-positive sum of (X - 1).
        #[arg(long)]
        negative_failures: bool,
    },
    /// Fit one model and write it as JSON.
    Fit {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
    },
    /// Student-stratified cross-validation of one model.
    Cv {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 5)]
        folds: usize,
        #[arg(long, default_value = "json")]
        format: ReportFormat,
    },
    /// Fit a model family over a grid of decays.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dataset to sweep; otherwise the config's `simulation` is generated.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        family: Option<ModelFamily>,
        #[arg(long)]
        metric: Option<Measure>,
        #[arg(long, default_value = "json")]
        format: ReportFormat,
    },
    /// Replicated simulation study comparing a model roster.
    Study {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        generator: Option<Generator>,
        #[arg(long)]
        replications: Option<usize>,
        /// Full-scale population (N = 3500, K = 50) and 100 replications.
        #[arg(long)]
        full_scale: bool,
        #[arg(long)]
        transition_first: bool,
        #[arg(long, default_value = "json")]
        format: ReportFormat,
        /// Also write per-replication scores as CSV.
        #[arg(long)]
        scores_out: Option<PathBuf>,
    },
    /// Compare two models' predictions binned by recent success rate.
    Compare {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        data: DataArgs,
        #[arg(long, default_value = "r-pfa:0.7:0.1")]
        model_a: String,
        #[arg(long, default_value = "pfa")]
        model_b: String,
        #[arg(long, default_value = "json")]
        format: ReportFormat,
    },
}

fn read_config<T: DeserializeOwned>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(File::open(path)?)?)
}

fn sink(out: &Option<PathBuf>) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn sidecar(out: &Option<PathBuf>, suffix: &str) -> Result<PathBuf> {
    let base = out
        .as_ref()
        .ok_or_else(|| Error::Configuration(format!("--out is required to write the {suffix} file")))?;
    let mut name = base.as_os_str().to_owned();
    name.push(format!(".{suffix}.csv"));
    Ok(PathBuf::from(name))
}

fn load_dataset(args: &DataArgs) -> Result<Dataset> {
    let mut text = String::new();
    File::open(&args.data)?.read_to_string(&mut text)?;
    let header: Vec<&str> = text.lines().next().unwrap_or_default().split(',').map(str::trim).collect();
    let mut schema = CsvSchema {
        student: args.student_column.clone(),
        kc: args.kc_column.clone(),
        outcome: args.outcome_column.clone(),
        ..CsvSchema::default()
    };
    schema.opportunity = args
        .opportunity_column
        .clone()
        .or_else(|| header.contains(&"opportunity").then(|| "opportunity".to_string()));
    schema.order_key = args.order_column.clone();
    ingest_csv(text.as_bytes(), &schema)
}

fn model_spec(args: &ModelArgs, config: &Option<PathBuf>) -> Result<(ModelSpec, FitOptions)> {
    let spec = match config {
        Some(path) => read_config::<ModelSpec>(path)?,
        None => ModelSpec::from_shorthand(&args.model)?.with_student_intercept(args.student_intercept),
    };
    Ok((spec, FitOptions::default().with_ridge(args.ridge)))
}

/// Exit status: 0 on success, 2 when parts failed without `--allow-partial`.
fn partial(failed: usize, what: &str, common: &Common) -> ExitCode {
    if failed == 0 {
        return ExitCode::SUCCESS;
    }
    eprintln!("{failed} {what} failed");
    if common.allow_partial {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    }
}

fn run(command: Command) -> Result<ExitCode> {
    match command {
        Command::Simulate {
            common,
            generator,
            students,
            kcs,
            transition_first,
            emit_latent,
            census,
        } => {
            let mut config = match &common.config {
                Some(p) => read_config::<SimConfig>(p)?,
                None => SimConfig::new(generator.unwrap_or(Generator::Bkt2), Default::default()),
            };
            if let Some(g) = generator {
                config.generator = g;
            }
            if let Some(n) = students {
                config.population.n_students = n;
            }
            if let Some(k) = kcs {
                config.population.n_kcs = k;
            }
            if let Some(seed) = common.seed {
                config.population.seed = seed;
            }
            if transition_first {
                config.initial_state = InitialState::BeforeFirstAttempt;
            }
            let sim = simulate(&config, emit_latent)?;
            export_csv(&sim.dataset, sink(&common.out)?)?;
            if emit_latent {
                sim.write_latent_csv(File::create(sidecar(&common.out, "latent")?)?)?;
            }
            if census {
                sim.write_census_csv(File::create(sidecar(&common.out, "census")?)?)?;
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Featurize {
            common,
            data,
            decay_s,
            decay_f,
            decay_r,
            ghosts,
            negative_failures,
        } => {
            let config = match &common.config {
                Some(p) => read_config::<FeatureConfig>(p)?,
                None => {
                    let sign = if negative_failures {
                        FailureSign::NonposSum
                    } else {
                        FailureSign::NonnegCount
                    };
                    FeatureConfig::new(decay_s, decay_f, decay_r)
                        .with_ghosts(ghosts)
                        .with_failure_sign(sign)
                }
            };
            let table = featurize(&load_dataset(&data)?, &config)?;
            table.write_csv(sink(&common.out)?)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Fit { common, data, model } => {
            let (spec, options) = model_spec(&model, &common.config)?;
            let dataset = load_dataset(&data)?;
            let mut fitted = fit_dataset(&dataset, &spec, &options)?;
            if common.strict {
                fitted = require_converged(fitted)?;
            }
            eprintln!(
                "{}: logLik {:.4}, k {}, AIC {:.4}, BIC {:.4}, converged {}",
                fitted.spec.name,
                fitted.log_likelihood,
                fitted.n_params,
                aic(&fitted),
                bic(&fitted, fitted.n_obs as f64)?,
                fitted.converged
            );
            let mut out = sink(&common.out)?;
            writeln!(out, "{}", fitted.to_json()?)?;
            out.flush()?;
            Ok(if fitted.converged {
                ExitCode::SUCCESS
            } else {
                partial(1, "fit", &common)
            })
        }
        Command::Cv {
            common,
            data,
            model,
            folds,
            format,
        } => {
            let (spec, options) = model_spec(&model, &common.config)?;
            let dataset = load_dataset(&data)?;
            let assignment = make_folds(&dataset, folds, common.seed.unwrap_or(0))?;
            let table = featurize(&dataset, &spec.feature_config)?;
            let results = cross_validate_table(&table, &spec, &assignment, &LossKind::ALL, &options)?;
            let non_converged = results.first().map_or(0, |r| r.non_converged_folds);
            if common.strict && non_converged > 0 {
                return Err(Error::Configuration(format!("{non_converged} folds did not converge")));
            }
            let mut out = sink(&common.out)?;
            match format {
                ReportFormat::Json => writeln!(out, "{}", serde_json::to_string_pretty(&results)?)?,
                ReportFormat::Csv => CvResult::write_csv(&results, &mut out)?,
            }
            out.flush()?;
            Ok(partial(non_converged, "folds", &common))
        }
        Command::Sweep {
            common,
            data,
            family,
            metric,
            format,
        } => {
            let mut config = match &common.config {
                Some(p) => read_config::<SweepConfig>(p)?,
                None => SweepConfig {
                    grid: SweepGrid::new(
                        family.unwrap_or(ModelFamily::RPfa),
                        rpfa::harness::default_decay_grid(),
                        rpfa::harness::default_decay_grid(),
                    ),
                    metric: Measure::Aic,
                    scoring: ScoringOptions::default(),
                    simulation: None,
                },
            };
            if let Some(f) = family {
                config.grid.family = f;
            }
            if let Some(m) = metric {
                config.metric = m;
            }
            if let Some(seed) = common.seed {
                config.scoring.fold_seed = seed;
                if let Some(sim) = config.simulation.as_mut() {
                    sim.population.seed = seed;
                }
            }
            config.scoring.strict |= common.strict;
            let dataset = match (&data, &config.simulation) {
                (Some(path), _) => load_dataset(&DataArgs {
                    data: path.clone(),
                    student_column: "student".into(),
                    kc_column: "kc".into(),
                    outcome_column: "outcome".into(),
                    opportunity_column: None,
                    order_column: None,
                })?,
                (None, Some(sim)) => simulate(sim, false)?.dataset,
                (None, None) => {
                    return Err(Error::Configuration(
                        "sweep needs --data or a `simulation` entry in --config".into(),
                    ))
                }
            };
            let report = sweep_decay(&dataset, &config.grid, config.metric, &config.scoring)?;
            if let Some(best) = report.best() {
                eprintln!("best: {} ({} = {:.4})", best.model, report.metric.as_str(), best.value);
            }
            let mut out = sink(&common.out)?;
            write_report(&report, format, &mut out)?;
            out.flush()?;
            Ok(partial(report.failed_cells(), "cells", &common))
        }
        Command::Study {
            common,
            generator,
            replications,
            full_scale,
            transition_first,
            format,
            scores_out,
        } => {
            let mut config = match (&common.config, full_scale) {
                (Some(p), _) => read_config::<StudyConfig>(p)?,
                (None, true) => StudyConfig::full_scale(),
                (None, false) => StudyConfig::default(),
            };
            if let Some(g) = generator {
                config.generator = g;
            }
            if let Some(r) = replications {
                config.replications = r;
            }
            if let Some(seed) = common.seed {
                config.seed = seed;
            }
            if transition_first {
                config.initial_state = InitialState::BeforeFirstAttempt;
            }
            config.strict |= common.strict;
            let report = replicate_study(&config)?;
            let mut out = sink(&common.out)?;
            write_report(&report, format, &mut out)?;
            out.flush()?;
            if let Some(path) = scores_out {
                write_study_scores_csv(&report, File::create(path)?)?;
            }
            Ok(partial(report.failed_replications(), "replications", &common))
        }
        Command::Compare {
            common,
            data,
            model_a,
            model_b,
            format,
        } => {
            let a = ModelSpec::from_shorthand(&model_a)?;
            let b = ModelSpec::from_shorthand(&model_b)?;
            let report = compare_predictions(&load_dataset(&data)?, &a, &b, &FitOptions::default())?;
            let mut out = sink(&common.out)?;
            write_report(&report, format, &mut out)?;
            out.flush()?;
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

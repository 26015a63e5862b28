//! `beampred`: data collection, training, evaluation and reporting.

mod overrides;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use beampred_core::dataset::{export_csv, load_dataset, save_dataset};
use beampred_core::kpi::{write_cdf, write_kpi_csv};
use beampred_core::models::{train_model, EpochStats};
use beampred_core::sim::matrix::load_matrix;
use beampred_core::sim::{collect_dataset, run_inference_campaign, run_matrix, train_pipeline, CellOutcome};
use beampred_core::{Error, ExperimentResult, Model, ModelConfig, PolicyKind, SimConfig};
use clap::{Parser, Subcommand};
use serde::Serialize;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] Error),
    #[error("i/o error on {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io { .. } => 4,
            CliError::Core(e) => match e {
                Error::Numeric(_) => 3,
                Error::Io(_) | Error::Json(_) | Error::Csv(_) | Error::Corrupt(_) => 4,
                Error::InvalidArgument(_) | Error::DimensionMismatch { .. } | Error::Config(_) | Error::Schema(_) => 2,
            },
        }
    }
}

type Result<T> = std::result::Result<T, CliError>;

/// Flags clap owns; every other `--key=value` is a config override.
const KNOWN_FLAGS: &[&str] = &["config", "out", "data", "weights", "policies", "matrix", "results", "csv", "label"];

#[derive(Debug, Parser)]
#[command(name = "beampred", version, about = "AI/ML beam management simulator")]
#[command(after_help = "Any config field can be overridden with --dotted.path=value, e.g. --scale.n_drops=4.")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Simulate the training drops and write the split dataset.
    GenerateData {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Also export the samples as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Train the configured model family.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Dataset from `generate-data`; collected on the fly when absent.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the closed loop with trained weights.
    Evaluate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        weights: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "model,model-with-fallback,strongest-set-b,exhaustive-genie")]
        policies: Vec<String>,
        #[arg(long, default_value = "evaluate")]
        label: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Collect, train and evaluate in one go.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "model,model-with-fallback,strongest-set-b,exhaustive-genie")]
        policies: Vec<String>,
        #[arg(long, default_value = "simulate")]
        label: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run every cell of an experiment matrix.
    Matrix {
        #[arg(long)]
        matrix: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Turn result files into KPI tables and RSRP-error CDFs.
    Report {
        /// Result of `evaluate`/`simulate` or the outcome list of `matrix`.
        #[arg(long)]
        results: PathBuf,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| CliError::Io { path: path.into(), source })
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(Error::from)?;
    fs::write(path, text).map_err(|source| CliError::Io { path: path.into(), source })
}

fn load_config(path: &Path, overrides: &[(String, String)]) -> Result<SimConfig> {
    let raw: serde_json::Value =
        serde_json::from_str(&read(path)?).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    let base = SimConfig::from_value(raw).map_err(|e| CliError::Config(e.to_string()))?;
    let mut full = serde_json::to_value(&base).map_err(Error::from)?;
    for (key, value) in overrides {
        overrides::apply(&mut full, key, value)?;
    }
    let cfg = SimConfig::from_value(full).map_err(|e| CliError::Config(e.to_string()))?;
    cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
    Ok(cfg)
}

fn parse_policies(names: &[String]) -> Result<Vec<PolicyKind>> {
    names
        .iter()
        .map(|n| {
            serde_json::from_value(serde_json::Value::String(n.trim().to_string()))
                .map_err(|_| CliError::Config(format!("unknown policy `{n}`")))
        })
        .collect()
}

fn save_model(model: &Model, curve: &[EpochStats], out: &Path) -> Result<()> {
    model.save(out, curve)?;
    log::info!("wrote {} parameters to {}", model.param_count(), out.display());
    Ok(())
}

fn run(cli: Cli, overrides: &[(String, String)]) -> Result<()> {
    match cli.command {
        Command::GenerateData { config, out, csv } => {
            let cfg = load_config(&config, overrides)?;
            let (dataset, stats) = collect_dataset(&cfg)?;
            save_dataset(&dataset, &out)?;
            if let Some(csv) = csv {
                export_csv(&dataset, &csv)?;
            }
            println!("{}", serde_json::to_string(&stats).map_err(Error::from)?);
        }
        Command::Train { config, data, out } => {
            let cfg = load_config(&config, overrides)?;
            let (model, report) = match data {
                Some(path) => {
                    let dataset = load_dataset(&path, Some(&cfg.schema()))?;
                    let model_cfg = ModelConfig::for_schema(&dataset.schema)?;
                    train_model(&model_cfg, &dataset, &cfg.train)?
                }
                None => {
                    let (m, r, _) = train_pipeline(&cfg)?;
                    (m, r)
                }
            };
            save_model(&model, &report.curve, &out)?;
            println!("best epoch {}", report.best_epoch);
        }
        Command::Evaluate { config, weights, policies, label, out } => {
            let cfg = load_config(&config, overrides)?;
            let policies = parse_policies(&policies)?;
            let model = weights.map(|w| Model::load(&w)).transpose()?.map(|(m, _)| m);
            let result = run_inference_campaign(&cfg, model.as_ref(), &policies, &label)?;
            write_json(&out, &result)?;
            print_summary(&result);
        }
        Command::Simulate { config, policies, label, out } => {
            let cfg = load_config(&config, overrides)?;
            let policies = parse_policies(&policies)?;
            let model = if policies.iter().any(|p| p.needs_model()) { Some(train_pipeline(&cfg)?.0) } else { None };
            let mut result = run_inference_campaign(&cfg, model.as_ref(), &policies, &label)?;
            result.train_config_hash = model.is_some().then(|| result.config_hash.clone());
            write_json(&out, &result)?;
            print_summary(&result);
        }
        Command::Matrix { matrix, out } => {
            let mcfg = load_matrix(&read(&matrix)?).map_err(|e| CliError::Config(e.to_string()))?;
            for cell in &mcfg.cells {
                for c in std::iter::once(&cell.test).chain(cell.train.as_ref()) {
                    c.validate().map_err(|e| CliError::Config(format!("cell {}: {e}", cell.label)))?;
                }
            }
            let outcomes = run_matrix(&mcfg);
            write_json(&out, &outcomes)?;
            for o in &outcomes {
                match (&o.result, &o.error) {
                    (Some(r), _) => print_summary(r),
                    (None, Some(e)) => eprintln!("{}: failed: {e}", o.label),
                    (None, None) => {}
                }
            }
        }
        Command::Report { results, out } => {
            let text = read(&results)?;
            let list: Vec<ExperimentResult> = match serde_json::from_str::<Vec<CellOutcome>>(&text) {
                Ok(cells) => cells.into_iter().filter_map(|c| c.result).collect(),
                Err(_) => vec![serde_json::from_str(&text).map_err(Error::from)?],
            };
            fs::create_dir_all(&out).map_err(|source| CliError::Io { path: out.clone(), source })?;
            report(&list, &out)?;
        }
    }
    Ok(())
}

fn policy_name(p: PolicyKind) -> String {
    serde_json::to_value(p).ok().and_then(|v| v.as_str().map(String::from)).unwrap_or_default()
}

fn report(results: &[ExperimentResult], dir: &Path) -> Result<()> {
    let labels: Vec<(String, &beampred_core::KpiRecord)> = results
        .iter()
        .flat_map(|r| r.kpi.iter().map(move |(p, k)| (format!("{}/{}", r.label, policy_name(*p)), k)))
        .collect();
    write_kpi_csv(&dir.join("kpi.csv"), labels.iter().map(|(l, k)| (l.as_str(), *k)))?;
    for (label, kpi) in &labels {
        let file = label.replace(['/', ' '], "_");
        write_cdf(&dir.join(format!("cdf_{file}.txt")), &kpi.rsrp_errors_db)?;
    }
    write_json(&dir.join("summary.json"), &results)?;
    println!("wrote {} KPI rows to {}", labels.len(), dir.display());
    Ok(())
}

fn print_summary(r: &ExperimentResult) {
    for (p, k) in &r.kpi {
        println!(
            "{:<24} {:<22} top1 {:.3}  acc1dB {:.3}  records {}",
            r.label,
            policy_name(*p),
            k.top1(),
            k.acc_1db,
            k.count
        );
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let (args, overrides) = overrides::partition(std::env::args().collect(), KNOWN_FLAGS);
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli, &overrides) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use impact_audit::certify::{certify, CertifyOptions};
use impact_audit::data::write_repaired_csv;
use impact_audit::harness::{load_dataset, summarize, sweep, write_curves, Split, SweepClassifier, SweepSpec, ThresholdRule};
use impact_audit::learners::CVPlan;
use impact_audit::synth::{self, SynthKind};
use impact_audit::{Error, LearnerKind, RepairMode, RepairPlan, Result, SchemaConfig};

#[derive(Parser)]
#[command(name = "impact-audit", version, about = "Certify and repair datasets for disparate impact")]
struct Cli {
    #[command(flatten)]
    shared: Shared,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Shared {
    /// Schema config (TOML, or JSON with a .json extension)
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 42)]
    seed: u64,
    #[arg(long, global = true, default_value_t = 0.8)]
    tau: f64,
    /// Output file; stdout when absent
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Test whether any learner predicts the protected group well enough to allow disparate impact
    Certify {
        data: PathBuf,
        #[arg(long, default_value_t = 1.0 / 3.0)]
        test_fraction: f64,
        #[arg(long, value_delimiter = ',', default_value = "svm,logreg,gnb")]
        learners: Vec<LearnerKind>,
    },
    /// Write a repaired copy of the dataset
    Repair {
        data: PathBuf,
        #[arg(long, default_value = "full")]
        mode: RepairMode,
        #[arg(long, default_value_t = 1.0)]
        lambda: f64,
        /// Protected columns to repair over jointly; all of them when absent
        #[arg(long, value_delimiter = ',')]
        stratify: Vec<String>,
    },
    /// DI and utility across the repair grid
    Sweep {
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "combinatorial,geometric")]
        modes: Vec<RepairMode>,
        #[arg(long, value_delimiter = ',', default_value = "svm,logreg,gnb")]
        classifiers: Vec<SweepClassifier>,
        #[arg(long, default_value_t = 1.0 / 3.0)]
        test_fraction: f64,
        /// Use this file as the test split instead of a seeded split
        #[arg(long)]
        test_csv: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        stratify: Vec<String>,
        /// Column for the threshold classifier; defaults to the class column when the config sets class_threshold
        #[arg(long)]
        threshold_column: Option<String>,
        #[arg(long)]
        threshold: Option<f64>,
    },
    /// Generate a synthetic dataset
    Synth {
        #[arg(long, default_value = "two-gaussian")]
        kind: SynthKind,
        /// Rows per group for two-gaussian, total rows otherwise
        #[arg(long, default_value_t = 10_000)]
        n: usize,
        /// Also write a matching schema config here
        #[arg(long)]
        config_out: Option<PathBuf>,
    },
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p).map_err(|e| io_err(p, e))?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn io_err(path: &Path, e: io::Error) -> Error {
    Error::InvalidInput(format!("{}: {e}", path.display()))
}

fn config(shared: &Shared) -> Result<SchemaConfig> {
    let path = shared
        .config
        .as_ref()
        .ok_or_else(|| Error::Config("--config is required".into()))?;
    SchemaConfig::from_path(path)
}

fn write_json<T: serde::Serialize>(value: &T, out: Option<&Path>) -> Result<()> {
    let mut w = output(out)?;
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::InvalidInput(e.to_string()))?;
    writeln!(w, "{text}").and_then(|_| w.flush()).map_err(|e| io_err(Path::new("<output>"), e))
}

fn run(cli: Cli) -> Result<ExitCode> {
    let shared = &cli.shared;
    match cli.command {
        Command::Certify {
            data,
            test_fraction,
            learners,
        } => {
            let config = config(shared)?;
            let (_, dataset, _) = load_dataset(&data, &config, None)?;
            let options = CertifyOptions {
                tau: shared.tau,
                plan: CVPlan::with_seed(shared.seed),
                learners,
                test_fraction,
                seed: shared.seed,
            };
            let report = certify(&dataset, &options)?;
            write_json(&report, shared.out.as_deref())?;
            Ok(if report.is_certified() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(2)
            })
        }
        Command::Repair {
            data,
            mode,
            lambda,
            stratify,
        } => {
            let config = config(shared)?;
            let (table, dataset, _) = load_dataset(&data, &config, None)?;
            let plan = RepairPlan::new(mode, lambda, stratify)?;
            let repaired = impact_audit::repair_dataset(&dataset, &plan)?;
            let columns = if plan.stratify_columns.is_empty() {
                dataset.protected_columns().join(",")
            } else {
                plan.stratify_columns.join(",")
            };
            let comment = format!("repaired mode={} lambda={} stratify={columns}", plan.mode, plan.lambda);
            let out = output(shared.out.as_deref())?;
            write_repaired_csv(&table, &repaired, &comment, &config.ordered_categorical_maps, out)?;
            Ok(ExitCode::SUCCESS)
        }
        Command::Sweep {
            data,
            modes,
            classifiers,
            test_fraction,
            test_csv,
            stratify,
            threshold_column,
            threshold,
        } => {
            let config = config(shared)?;
            let (_, dataset, given) = load_dataset(&data, &config, test_csv.as_deref())?;
            let threshold_rule = match (threshold_column, threshold.or(config.class_threshold)) {
                (Some(column), Some(threshold)) => Some(ThresholdRule { column, threshold }),
                (None, Some(threshold)) if config.class_threshold.is_some() => Some(ThresholdRule {
                    column: config.class_column.clone(),
                    threshold,
                }),
                (Some(_), None) => return Err(Error::InvalidInput("--threshold-column needs --threshold".into())),
                _ => None,
            };
            let spec = SweepSpec {
                modes,
                classifiers,
                tau: shared.tau,
                test_fraction,
                stratify,
                threshold_rule,
                ..SweepSpec::with_seed(shared.seed)
            };
            let seeded = given.is_none();
            let split = match given {
                Some(s) => s,
                None => Split::seeded(dataset.n_rows(), test_fraction, shared.seed)?,
            };
            let points = sweep(&dataset, &split, &spec)?;
            write_curves(&points, output(shared.out.as_deref())?)?;
            let summary = summarize(&points, &spec, &split, seeded);
            for w in &summary.ber_monotonicity_warnings {
                log::warn!("{w}");
            }
            let summary_path = shared.out.as_ref().map(|p| {
                let mut s = p.clone().into_os_string();
                s.push(".summary.json");
                PathBuf::from(s)
            });
            match summary_path {
                Some(p) => write_json(&summary, Some(&p))?,
                None => {
                    let text = serde_json::to_string(&summary).map_err(|e| Error::InvalidInput(e.to_string()))?;
                    eprintln!("{text}");
                }
            }
            Ok(ExitCode::SUCCESS)
        }
        Command::Synth { kind, n, config_out } => {
            let (table, config) = synth::generate(kind, n, shared.seed)?;
            synth::write_table(&table, output(shared.out.as_deref())?)?;
            if let Some(path) = config_out {
                let text = toml::to_string(&config).map_err(|e| Error::InvalidInput(e.to_string()))?;
                std::fs::write(&path, text).map_err(|e| io_err(&path, e))?;
            }
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

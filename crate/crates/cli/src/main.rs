use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use pipegrad::data::{inject_errors, load_table, synth_make, ErrorKind, ErrorSpec};
use pipegrad::harness::{emit_report, load_report, run_experiment, ExperimentConfig};
use pipegrad::Error;

#[derive(Parser)]
#[command(
    name = "pipegrad",
    version,
    about = "Learned preprocessing pipelines for MLP regression"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic regression CSV.
    Synth {
        #[arg(long, default_value_t = 1000)]
        rows: usize,
        #[arg(long, default_value_t = 5)]
        informative: usize,
        #[arg(long, default_value_t = 0)]
        noise: usize,
        #[arg(long, default_value_t = 0.1)]
        noise_std: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        output: PathBuf,
    },
    /// Corrupt a CSV with one kind of error.
    Inject {
        #[arg(long)]
        input: PathBuf,
        #[arg(long, default_value = "y")]
        target: String,
        /// missing, outlier, typo or label_swap
        #[arg(long)]
        kind: String,
        #[arg(long)]
        rate: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 5.0)]
        outlier_sigma: f64,
        #[arg(long)]
        output: PathBuf,
        /// Also write the corrupted cells as `row,column` pairs.
        #[arg(long)]
        mask: Option<PathBuf>,
    },
    /// Execute an experiment config and write its reports.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        output: Option<PathBuf>,
        /// Comma-separated seeds overriding the config.
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
        #[arg(long)]
        budget_seconds: Option<f64>,
    },
    /// Re-emit the CSV reports from a stored report.json.
    Report {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        output: PathBuf,
    },
}

const CONFIG_ERROR: u8 = 1;
const RUNTIME_ERROR: u8 = 2;

fn fail(code: u8, err: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {err}");
    ExitCode::from(code)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match Cli::parse().command {
        Command::Synth {
            rows,
            informative,
            noise,
            noise_std,
            seed,
            output,
        } => match synth_make(rows, informative, noise, noise_std, seed)
            .and_then(|s| s.table.save_csv(&output))
        {
            Ok(()) => ExitCode::SUCCESS,
            Err(e @ Error::InvalidArgument(_)) => fail(CONFIG_ERROR, e),
            Err(e) => fail(RUNTIME_ERROR, e),
        },
        Command::Inject {
            input,
            target,
            kind,
            rate,
            seed,
            outlier_sigma,
            output,
            mask,
        } => {
            let kind: ErrorKind =
                match serde_json::from_value(serde_json::Value::String(kind.clone())) {
                    Ok(k) => k,
                    Err(_) => return fail(CONFIG_ERROR, format!("unknown error kind '{kind}'")),
                };
            let mut spec = ErrorSpec::new(kind, rate, seed);
            spec.outlier_sigma = outlier_sigma;
            if let Err(e) = spec.validate() {
                return fail(CONFIG_ERROR, e);
            }
            let result = load_table(&input, &target)
                .and_then(|t| inject_errors(&t, &spec))
                .and_then(|(t, m)| {
                    t.save_csv(&output)?;
                    if let Some(path) = mask {
                        let mut text = String::from("row,column\n");
                        for (r, c) in m.cells() {
                            text.push_str(&format!("{r},{}\n", t.column_names()[c]));
                        }
                        std::fs::write(&path, text).map_err(|e| Error::Io { path, source: e })?;
                    }
                    eprintln!("corrupted {} cells", m.count());
                    Ok(())
                });
            match result {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => fail(RUNTIME_ERROR, e),
            }
        }
        Command::Run {
            config,
            output,
            seeds,
            budget_seconds,
        } => {
            let mut cfg = match ExperimentConfig::load(&config) {
                Ok(c) => c,
                Err(e) => return fail(CONFIG_ERROR, e),
            };
            if let Some(s) = seeds {
                cfg.seeds = s;
            }
            if let Some(b) = budget_seconds {
                cfg.budget_seconds = b;
            }
            if let Some(o) = output {
                cfg.output_dir = o;
            }
            if let Err(e) = cfg.validate() {
                return fail(CONFIG_ERROR, e);
            }
            let report = match run_experiment(&cfg) {
                Ok(r) => r,
                Err(e) => return fail(CONFIG_ERROR, e),
            };
            if let Err(e) = emit_report(&report, &cfg.output_dir) {
                return fail(RUNTIME_ERROR, e);
            }
            for r in &report.results {
                let rmse = r
                    .test_rmse
                    .map_or("failed".to_string(), |v| format!("{v:.4}"));
                println!("seed {:>4}  {:<16} {rmse}", r.seed, r.method);
            }
            ExitCode::from(report.status().exit_code() as u8)
        }
        Command::Report { input, output } => {
            match load_report(&input).and_then(|r| emit_report(&r, &output)) {
                Ok(files) => {
                    for f in files {
                        println!("{}", f.display());
                    }
                    ExitCode::SUCCESS
                }
                Err(e) => fail(RUNTIME_ERROR, e),
            }
        }
    }
}

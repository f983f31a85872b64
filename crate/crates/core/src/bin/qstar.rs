use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use qstar::config::{load_config, ExperimentConfig};
use qstar::error::Error;
use qstar::harness::{
    cmd_adversary, cmd_bench, cmd_solve, cmd_verify, records_csv, resolve_out_dir, write_bench, BenchOptions,
};

#[derive(Parser)]
#[command(name = "qstar", version, about = "Hard q*-realizable MDPs, exact oracle and LSVI benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Override the master seed from the config.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory (default: config `out_dir`, then $QSTAR_OUT_DIR, then ./qstar-out).
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,

    /// Per-stage state enumeration cap.
    #[arg(long, global = true)]
    cap: Option<usize>,

    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Json,
}

#[derive(Subcommand)]
enum Command {
    /// Structural checks of the configured instance.
    Verify { config: PathBuf },
    /// Replicated planner runs, scored by the exact oracle.
    Bench {
        config: PathBuf,
        /// Record wall-clock milliseconds (output is then not reproducible).
        #[arg(long)]
        timing: bool,
    },
    /// Budgeted identification experiment against M_0 and every M_a.
    Adversary {
        config: PathBuf,
        #[arg(long)]
        budget: u64,
    },
    /// Exact q*, v* and gaps as CSV.
    Solve {
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(cli: &Cli, path: &Path) -> Result<ExperimentConfig, Error> {
    let mut config = load_config(path).map_err(|e| match e {
        Error::Io(io) => Error::Parse(format!("cannot read {}: {io}", path.display())),
        other => other,
    })?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(cap) = cli.cap {
        config.cap = cap;
    }
    Ok(config)
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String, Error> {
    serde_json::to_string_pretty(value).map_err(|e| Error::Parse(e.to_string()))
}

fn run(cli: &Cli) -> Result<bool, Error> {
    match &cli.command {
        Command::Verify { config } => {
            let report = cmd_verify(&load(cli, config)?)?;
            match cli.format {
                Format::Json => println!("{}", to_json(&report)?),
                Format::Csv => {
                    println!("check,status,detail");
                    for c in &report.checks {
                        let status = match c.pass {
                            Some(true) => "pass",
                            Some(false) => "fail",
                            None => "skip",
                        };
                        println!("{},{status},\"{}\"", c.name, c.detail.replace('"', "'"));
                    }
                }
            }
            Ok(report.passed())
        }
        Command::Bench { config, timing } => {
            let config = load(cli, config)?;
            let result = cmd_bench(&config, BenchOptions { timing: *timing })?;
            let dir = resolve_out_dir(cli.out_dir.as_deref(), &config);
            let (csv, json) = write_bench(&dir, &result)?;
            match cli.format {
                Format::Csv => print!("{}", records_csv(&result.records)),
                Format::Json => println!("{}", to_json(&result.summary)?),
            }
            eprintln!("wrote {} and {}", csv.display(), json.display());
            Ok(true)
        }
        Command::Adversary { config, budget } => {
            let report = cmd_adversary(&load(cli, config)?, *budget)?;
            match cli.format {
                Format::Csv => print!("{}", report.to_text()),
                Format::Json => println!("{}", to_json(&report)?),
            }
            Ok(report.passed())
        }
        Command::Solve { config, out } => {
            let config = load(cli, config)?;
            let tables = cmd_solve(&config)?;
            let csv = tables.to_csv();
            match out {
                Some(path) => {
                    std::fs::write(path, csv)?;
                    eprintln!("wrote {}", path.display());
                }
                None => print!("{csv}"),
            }
            Ok(true)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("qstar: {e}");
            let usage = matches!(
                e,
                Error::Config { .. } | Error::Parse(_) | Error::Parameter(_) | Error::Size { .. }
            );
            ExitCode::from(if usage { 2 } else { 1 })
        }
    }
}

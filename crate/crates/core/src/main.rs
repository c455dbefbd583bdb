use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use admem::data::{load_libsvm, serialize_libsvm, synthesize_dataset, synthesize_sparse_binary};
use admem::harness::config::{ExperimentConfig, Overrides};
use admem::harness::{grid_search_fixed_beta, run_checks, run_experiment, summary_line, CheckOptions, Suite};
use admem::Error;

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_CONFIG: u8 = 2;
const EXIT_IO: u8 = 3;

#[derive(Parser)]
#[command(name = "admem", version, about = "Adaptive memory momentum optimizers and benchmarks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(clap::Args)]
struct RunFlags {
    /// Replace the configured seed (and every seed derived from it).
    #[arg(long)]
    seed: Option<u64>,
    /// Replace the configured output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    iterations: Option<u64>,
}

impl RunFlags {
    fn overrides(&self) -> Overrides {
        Overrides { seed: self.seed, iterations: self.iterations, output_dir: self.out.clone() }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Run every optimizer of an experiment config; writes traces and a summary.
    Run {
        config: PathBuf,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Grid search the fixed momentum coefficient of the config's baseline.
    Grid {
        config: PathBuf,
        /// Comma-separated coefficients in [0, 1).
        #[arg(long, value_delimiter = ',', default_values_t = [0.0, 0.3, 0.6, 0.9, 0.99])]
        betas: Vec<f64>,
        #[command(flatten)]
        flags: RunFlags,
    },
    /// Run a verification suite: beta_oracle, overdamped, gradients, lemma1, reductions or all.
    Check {
        suite: String,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Validate a LIBSVM file and print its shape.
    Parse { file: PathBuf },
    /// Write a synthetic LIBSVM dataset to stdout.
    Synth {
        #[arg(long, value_enum, default_value_t = SynthKind::Gaussian)]
        kind: SynthKind,
        #[arg(long, default_value_t = 500)]
        n: usize,
        #[arg(long, default_value_t = 20)]
        dim: usize,
        #[arg(long, default_value_t = 1.0)]
        separability: f64,
        /// Expected active features per row (sparse_binary).
        #[arg(long, default_value_t = 10.0)]
        nnz: f64,
        /// Label noise relative to the score spread (sparse_binary).
        #[arg(long, default_value_t = 0.3)]
        noise: f64,
        /// Write labels as 0/1 instead of -1/+1.
        #[arg(long)]
        zero_one: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum SynthKind {
    Gaussian,
    SparseBinary,
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io(_) => EXIT_IO,
        _ => EXIT_CONFIG,
    }
}

fn fail(err: Error) -> ExitCode {
    eprintln!("admem: {err}");
    ExitCode::from(exit_code(&err))
}

fn load(config: &Path, flags: &RunFlags) -> Result<ExperimentConfig, Error> {
    ExperimentConfig::load(config, &flags.overrides())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(code) => code,
        Err(e) => fail(e),
    }
}

fn run(command: Command) -> Result<ExitCode, Error> {
    let mut out = std::io::stdout().lock();
    match command {
        Command::Run { config, flags } => {
            let cfg = load(&config, &flags)?;
            for (summary, _) in run_experiment(&cfg)? {
                writeln!(out, "{}", summary_line(&summary))?;
            }
        }
        Command::Grid { config, betas, flags } => {
            let cfg = load(&config, &flags)?;
            let grid = grid_search_fixed_beta(&cfg, &betas)?;
            writeln!(out, "beta,final_loss")?;
            for (beta, loss) in &grid.losses {
                match loss {
                    Some(l) => writeln!(out, "{beta},{l:.16e}")?,
                    None => writeln!(out, "{beta},diverged")?,
                }
            }
            writeln!(out, "best,{}", grid.best_beta)?;
        }
        Command::Check { suite, seed } => {
            let Some(s) = Suite::parse(&suite) else {
                return Err(Error::Config {
                    field: "suite".into(),
                    msg: format!("unknown suite `{suite}`; expected beta_oracle, overdamped, gradients, lemma1, reductions or all"),
                });
            };
            let mut opts = CheckOptions::default();
            if let Some(seed) = seed {
                opts.seed = seed;
            }
            let report = run_checks(s, &opts);
            write!(out, "{}", report.to_json_lines())?;
            if !report.passed() {
                return Ok(ExitCode::from(EXIT_CHECK_FAILED));
            }
        }
        Command::Parse { file } => {
            let ds = load_libsvm(&file)?;
            let nnz: usize = ds.rows.iter().map(|r| r.nnz()).sum();
            writeln!(out, "rows={} dim={} nnz={}", ds.len(), ds.dim, nnz)?;
        }
        Command::Synth { kind, n, dim, separability, nnz, noise, zero_one, seed } => {
            let mut ds = match kind {
                SynthKind::Gaussian => synthesize_dataset(n, dim, separability, seed)?,
                SynthKind::SparseBinary => synthesize_sparse_binary(n, dim, nnz, noise, seed)?,
            };
            if zero_one {
                ds.labels.iter_mut().for_each(|y| *y = if *y > 0.0 { 1.0 } else { 0.0 });
            }
            write!(out, "{}", serialize_libsvm(&ds))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}

use std::io;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand, ValueEnum};
use rcm_cli::bench::{parse_range, run_bench, write_csv, BenchConfig, BenchMethod};
use rcm_cli::commands::{cmd_compare, cmd_generate, cmd_infer, cmd_validate, InferMethod};

#[derive(Parser)]
#[command(name = "rcm", version, about = "Exact lifted inference for relational Gaussian models")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Lifted,
    Ground,
}

#[derive(Subcommand)]
enum Command {
    /// Parse a model and report whether each component normalizes.
    Validate { file: PathBuf },
    /// Print the query marginal; the lifted method also prints its elimination trace.
    Infer {
        file: PathBuf,
        #[arg(long, value_enum, default_value = "lifted")]
        method: MethodArg,
        /// Comma-separated ground variables replacing the file's queries.
        #[arg(long)]
        query: Option<String>,
    },
    /// Run lifted and ground inference and compare every quantity.
    Compare {
        file: PathBuf,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Time the recession model over doubling sizes and print CSV.
    Bench {
        /// Markets as `a..b` (doubling) or a single count.
        #[arg(long, default_value = "10")]
        markets: String,
        /// Banks as `a..b` (doubling) or a single count.
        #[arg(long, default_value = "2..2048")]
        banks: String,
        /// Per-cell cap in seconds.
        #[arg(long, default_value_t = 60.0)]
        timeout: f64,
        #[arg(long, value_delimiter = ',', default_value = "lifted,inversion_only,ground")]
        methods: Vec<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Run cells on separate threads.
        #[arg(long)]
        parallel: bool,
    },
    /// Print a recession model in the model language.
    Generate {
        #[arg(long, default_value_t = 10)]
        markets: usize,
        #[arg(long, default_value_t = 8)]
        banks: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn bench(
    markets: &str,
    banks: &str,
    timeout: f64,
    methods: &[String],
    seed: u64,
    parallel: bool,
) -> Result<(), String> {
    if timeout.is_nan() || timeout <= 0.0 || !timeout.is_finite() {
        return Err(format!("--timeout must be positive, got {timeout}"));
    }
    let methods = methods.iter().map(|m| m.parse::<BenchMethod>()).collect::<Result<Vec<_>, _>>()?;
    let cfg = BenchConfig {
        markets: parse_range(markets)?,
        banks: parse_range(banks)?,
        timeout: Duration::from_secs_f64(timeout),
        methods,
        seed,
        parallel,
    };
    let rows = run_bench(&cfg);
    write_csv(io::stdout().lock(), &rows).map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (mut out, mut err) = (io::stdout().lock(), io::stderr().lock());
    let code = match cli.command {
        Command::Validate { file } => cmd_validate(&file, &mut out, &mut err),
        Command::Infer { file, method, query } => {
            let method = match method {
                MethodArg::Lifted => InferMethod::Lifted,
                MethodArg::Ground => InferMethod::Ground,
            };
            cmd_infer(&file, method, query.as_deref(), &mut out, &mut err)
        }
        Command::Compare { file, tol } => cmd_compare(&file, tol, &mut out, &mut err),
        Command::Bench { markets, banks, timeout, methods, seed, parallel } => {
            drop(out);
            match bench(&markets, &banks, timeout, &methods, seed, parallel) {
                Ok(()) => 0,
                Err(e) => {
                    use std::io::Write;
                    writeln!(err, "rcm bench: {e}").ok();
                    2
                }
            }
        }
        Command::Generate { markets, banks, seed } => cmd_generate(markets, banks, seed, &mut out),
    };
    ExitCode::from(code as u8)
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use vir_bench::emit::{emit, render, Format};
use vir_bench::runner::run_benchmark;
use vir_bench::scaling::fit_scaling_exponent;
use vir_bench::spec::{BenchRecord, BenchSpec, Mask, Mode};
use vir_bench::{run_equivalence_suite, run_gradcheck};
use vir_core::DType;

const EXIT_FAILURE: u8 = 1;
const EXIT_USAGE: u8 = 2;

const PARALLEL_SLOPE: (f64, f64) = (1.7, 2.3);
const CHUNKWISE_SLOPE: (f64, f64) = (0.8, 1.3);

#[derive(Parser)]
#[command(
    name = "bench",
    version,
    about = "Retention throughput, memory and equivalence harness"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Time one retention mode across resolutions or sequence lengths.
    Run(RunArgs),
    /// Check every cross-mode equivalence property.
    Verify {
        #[arg(long, default_value_t = 1e-9, allow_hyphen_values = true)]
        tol: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
        /// Print the report as JSON.
        #[arg(long)]
        json: bool,
    },
    /// Compare analytic retention gradients with central differences.
    Gradcheck {
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum, default_value_t = Mode::Parallel)]
    mode: Mode,
    #[arg(long, value_enum, default_value_t = Mask::OneD)]
    mask: Mask,
    /// Square image sizes in pixels.
    #[arg(
        long,
        value_delimiter = ',',
        default_value = "224,448,768,1024",
        conflicts_with = "len"
    )]
    res: Vec<usize>,
    /// Explicit sequence lengths (1d mask, single layer) instead of resolutions.
    #[arg(long, value_delimiter = ',')]
    len: Vec<usize>,
    #[arg(long, default_value_t = 16)]
    patch: usize,
    #[arg(long, default_value_t = 256)]
    dim: usize,
    #[arg(long, default_value_t = 4)]
    heads: usize,
    #[arg(long, default_value_t = 64)]
    chunk: usize,
    #[arg(long, default_value_t = 5)]
    repeats: usize,
    #[arg(long, default_value_t = 2)]
    warmup: usize,
    #[arg(long, default_value = "f64")]
    dtype: DType,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Output file; results go to stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Csv)]
    format: Format,
    /// Time the whole encoder instead of a single retention layer.
    #[arg(long)]
    full_model: bool,
    /// Encoder depth for --full-model.
    #[arg(long, default_value_t = 1)]
    depth: usize,
    /// Leave input and output buffers out of the accounted peak.
    #[arg(long)]
    exclude_io: bool,
    /// Fail unless the scaling laws of the chosen mode hold.
    #[arg(long)]
    strict: bool,
    /// Independent sequences run concurrently, one per worker thread.
    #[arg(long, default_value_t = 1)]
    batch_parallel: usize,
}

impl RunArgs {
    fn spec(&self) -> BenchSpec {
        BenchSpec {
            mode: self.mode,
            mask: self.mask,
            resolutions: if self.len.is_empty() {
                self.res.clone()
            } else {
                Vec::new()
            },
            lengths: self.len.clone(),
            patch: self.patch,
            dim: self.dim,
            heads: self.heads,
            chunk: self.chunk,
            repeats: self.repeats,
            warmup: self.warmup,
            dtype: self.dtype,
            seed: self.seed,
            full_model: self.full_model,
            depth: self.depth,
            exclude_io: self.exclude_io,
            batch_parallel: self.batch_parallel,
        }
    }
}

/// Scaling-law checks for one sweep. Returns human-readable violations.
fn scaling_violations(mode: Mode, records: &[BenchRecord]) -> Vec<String> {
    let ok: Vec<&BenchRecord> = records.iter().filter(|r| r.is_ok()).collect();
    let mut out = Vec::new();
    match mode {
        Mode::Recurrent => {
            if let Some(first) = ok.first() {
                for r in &ok {
                    if r.peak_live_f64 != first.peak_live_f64 {
                        out.push(format!(
                            "recurrent peak {} at N={} differs from {} at N={}",
                            r.peak_live_f64, r.n, first.peak_live_f64, first.n
                        ));
                    }
                }
            }
        }
        Mode::Parallel | Mode::Chunkwise => {
            let (lo, hi) = if mode == Mode::Parallel {
                PARALLEL_SLOPE
            } else {
                CHUNKWISE_SLOPE
            };
            match fit_scaling_exponent(records) {
                Ok(slope) if (lo..=hi).contains(&slope) => {}
                Ok(slope) => out.push(format!("{mode} slope {slope:.3} outside [{lo}, {hi}]")),
                Err(e) => out.push(format!("{mode} slope unavailable: {e}")),
            }
        }
    }
    out
}

fn run(args: RunArgs) -> Result<ExitCode> {
    let spec = args.spec();
    if let Err(e) = spec.validate() {
        eprintln!("error: {e}");
        return Ok(ExitCode::from(EXIT_USAGE));
    }
    let records = run_benchmark(&spec)?;
    match &args.out {
        Some(path) => emit(&records, args.format, path)?,
        None => print!("{}", render(&records, args.format)?),
    }
    if let Ok(slope) = fit_scaling_exponent(&records) {
        eprintln!("log-log slope of median time vs N: {slope:.3}");
    }
    let violations = scaling_violations(spec.mode, &records);
    for v in &violations {
        eprintln!("{}: {v}", if args.strict { "violation" } else { "note" });
    }
    Ok(if args.strict && !violations.is_empty() {
        ExitCode::from(EXIT_FAILURE)
    } else {
        ExitCode::SUCCESS
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Run(args) => run(args),
        Command::Verify { tol, seed, json } => {
            if tol.is_nan() || tol < 0.0 {
                eprintln!("error: tolerance must be a non-negative number");
                return ExitCode::from(EXIT_USAGE);
            }
            let report = run_equivalence_suite(tol, seed);
            if json {
                match serde_json::to_string_pretty(&report) {
                    Ok(s) => println!("{s}"),
                    Err(e) => {
                        eprintln!("error: {e}");
                        return ExitCode::from(EXIT_FAILURE);
                    }
                }
            } else {
                println!("{report}");
            }
            Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAILURE)
            })
        }
        Command::Gradcheck { seed } => {
            let report = run_gradcheck(seed);
            println!("{report}");
            Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(EXIT_FAILURE)
            })
        }
    };
    result.unwrap_or_else(|e| {
        eprintln!("error: {e:#}");
        ExitCode::from(EXIT_FAILURE)
    })
}

//! `mc phase|convergence|noise|verify --config <file> --out <dir>`
//!
//! Exit codes: 0 success, 1 verify found violations, 2 bad configuration
//! (or any other setup error).

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::Instant;

use clap::{Parser, Subcommand};
use mc_core::experiments::{run, write_outputs, ExperimentConfig, ExperimentKind, RunOutput};

#[derive(Parser)]
#[command(name = "mc", version, about = "Low-rank matrix completion experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Success rates over a (p, q) grid
    Phase(Args),
    /// Residual traces of every solver on shared instances
    Convergence(Args),
    /// Reconstruction error under additive noise
    Noise(Args),
    /// Diagnostics sweeps; exits 1 on any violation
    Verify(Args),
}

#[derive(clap::Args)]
struct Args {
    /// TOML config file
    #[arg(long)]
    config: PathBuf,
    /// Output directory, created if missing
    #[arg(long)]
    out: PathBuf,
    /// Overrides master_seed from the config
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores)
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (kind, args) = match cli.command {
        Command::Phase(a) => (ExperimentKind::Phase, a),
        Command::Convergence(a) => (ExperimentKind::Convergence, a),
        Command::Noise(a) => (ExperimentKind::Noise, a),
        Command::Verify(a) => (ExperimentKind::Verify, a),
    };
    let mut config = match ExperimentConfig::load(&args.config) {
        Ok(c) => c,
        Err(e) => {
            eprintln!("mc: {}: {e}", args.config.display());
            return ExitCode::from(2);
        }
    };
    if config.experiment != kind {
        eprintln!("mc: config describes a {} experiment, not {kind}", config.experiment);
        return ExitCode::from(2);
    }
    if let Some(seed) = args.seed {
        config.master_seed = seed;
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(t) = args.threads {
        pool = pool.num_threads(t);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("mc: thread pool: {e}");
            return ExitCode::from(2);
        }
    };

    let start = Instant::now();
    let outcome = pool.install(|| {
        let output = run(&config)?;
        let files = write_outputs(&args.out, &config, &output, start.elapsed().as_secs_f64())?;
        Ok::<_, mc_core::Error>((output, files))
    });
    let (output, files) = match outcome {
        Ok(v) => v,
        Err(e) => {
            eprintln!("mc: {e}");
            return ExitCode::from(2);
        }
    };
    for f in files {
        println!("{}", args.out.join(f).display());
    }
    match &output {
        RunOutput::Verify(report) => {
            for s in &report.sections {
                println!(
                    "{:<22} instances {:>5}  failures {:>4}  violations {:>4}",
                    s.section, s.instances, s.failures, s.violations
                );
            }
            if report.total_violations() > 0 {
                for v in &report.violations {
                    eprintln!("violation: {} #{} (seed {})", v.section, v.instance, v.seed);
                }
                return ExitCode::from(1);
            }
        }
        other => {
            let rows = other.rows();
            let solved = rows.iter().filter(|r| r.success.is_some()).count();
            let ok = rows.iter().filter(|r| r.success == Some(true)).count();
            println!("{ok}/{solved} runs recovered the ground truth");
        }
    }
    ExitCode::SUCCESS
}

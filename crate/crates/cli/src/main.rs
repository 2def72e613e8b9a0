//! `roughrand`: batch runner for rough-path experiments.
//!
//! Exit status: 0 success, 1 acceptance threshold missed, 2 configuration
//! error, 3 numerical divergence, 4 I/O error.

mod config;
mod experiments;

use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use config::{Config, Experiment, Plan};

#[derive(Parser)]
#[command(name = "roughrand", version, about = "Rough-path experiments with CSV output")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Moment statistics of sampled Brownian lifts.
    LiftStats(RunArgs),
    /// Rough integral of a lift against itself, with seminorm estimates.
    Integrate(RunArgs),
    /// Solve a rough SDE preset (or its closed-form convergence ladder).
    SolveRsde(RunArgs),
    /// Pathwise coupling of the randomised and doubly stochastic routes.
    RandomisePathwise(RunArgs),
    /// Conditional laws of the two routes, draw by draw.
    RandomiseLaw(RunArgs),
    /// Rough filter against the Kalman-Bucy oracle.
    Filter(RunArgs),
    /// Conditional option prices against the mixing formula.
    Price(RunArgs),
    /// Conditional McKean-Vlasov laws by common noise and by rough driver.
    Meanfield(RunArgs),
    /// Print the model presets and their parameters.
    ListPresets,
}

#[derive(Args)]
struct RunArgs {
    /// TOML experiment configuration.
    #[arg(long, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long, value_name = "U64")]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, value_name = "N")]
    threads: Option<usize>,
    /// Output directory (overrides the config).
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
}

const ACCEPTANCE: u8 = 1;
const CONFIG: u8 = 2;
const DIVERGENCE: u8 = 3;
const IO: u8 = 4;

fn exit_code(e: &roughrand::Error) -> u8 {
    use roughrand::Error::*;
    match e {
        Divergence { .. } | CallbackFailure { .. } | WeightOverflow { .. } | OracleFailure(_) => DIVERGENCE,
        Io(_) => IO,
        _ => CONFIG,
    }
}

fn write_outputs(dir: &Path, plan: &Plan, report: &experiments::Report, threads: usize, secs: f64) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, body) in &report.files {
        std::fs::write(dir.join(name), body)?;
    }
    let verdict = if report.pass { "PASS" } else { "FAIL" };
    std::fs::write(
        dir.join("summary.txt"),
        format!("{}\n{}result: {verdict}\n", plan.experiment.name(), report.summary),
    )?;
    let outputs: Vec<&str> = report.files.iter().map(|(n, _)| n.as_str()).collect();
    let manifest = format!(
        "roughrand {}\nexperiment = {}\nseed = {}\nthreads = {threads}\nwall_time_seconds = {secs:.3}\noutputs = {}, summary.txt\n\n[config]\n{}",
        env!("CARGO_PKG_VERSION"),
        plan.experiment.name(),
        plan.seed,
        outputs.join(", "),
        plan.echo()
    );
    std::fs::write(dir.join("manifest.txt"), manifest)
}

fn run(experiment: Experiment, args: RunArgs) -> u8 {
    let config = match &args.config {
        Some(path) => match std::fs::read_to_string(path) {
            Ok(text) => match config::parse(&text) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {}: {e}", path.display());
                    return CONFIG;
                }
            },
            Err(e) => {
                eprintln!("error: cannot read {}: {e}", path.display());
                return IO;
            }
        },
        None => Config::default(),
    };
    let plan = match Plan::new(experiment, config, args.seed, args.out) {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: {e}");
            return CONFIG;
        }
    };
    if args.threads == Some(0) {
        eprintln!("error: --threads must be positive");
        return CONFIG;
    }
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = args.threads {
        pool = pool.num_threads(n);
    }
    let pool = match pool.build() {
        Ok(p) => p,
        Err(e) => {
            eprintln!("error: thread pool: {e}");
            return CONFIG;
        }
    };
    let start = Instant::now();
    let report = match pool.install(|| experiments::run(&plan)) {
        Ok(r) => r,
        Err(e) => {
            eprintln!("error: {e}");
            return exit_code(&e);
        }
    };
    let secs = start.elapsed().as_secs_f64();
    if let Err(e) = write_outputs(&plan.output, &plan, &report, pool.current_num_threads(), secs) {
        eprintln!("error: writing {}: {e}", plan.output.display());
        return IO;
    }
    print!("{}", report.summary);
    println!("result: {}", if report.pass { "PASS" } else { "FAIL" });
    if report.pass {
        0
    } else {
        ACCEPTANCE
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (experiment, args) = match cli.command {
        Command::ListPresets => {
            print!("{}", roughrand::presets::list_presets());
            return ExitCode::SUCCESS;
        }
        Command::LiftStats(a) => (Experiment::LiftStats, a),
        Command::Integrate(a) => (Experiment::Integrate, a),
        Command::SolveRsde(a) => (Experiment::SolveRsde, a),
        Command::RandomisePathwise(a) => (Experiment::RandomisePathwise, a),
        Command::RandomiseLaw(a) => (Experiment::RandomiseLaw, a),
        Command::Filter(a) => (Experiment::Filter, a),
        Command::Price(a) => (Experiment::Price, a),
        Command::Meanfield(a) => (Experiment::Meanfield, a),
    };
    ExitCode::from(run(experiment, args))
}

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use exgrpo::experiment::{build_suite, inspect, run_experiment, summary_table, write_outputs};
use exgrpo::snapshot::BufferSnapshot;
use exgrpo::verify::{self, Tier, VerifyOptions};
use exgrpo::ExperimentSpec;

#[derive(Parser)]
#[command(
    name = "exgrpo",
    version,
    about = "Experience-managed GRPO on synthetic verifiable tasks"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every arm x seed of an experiment spec and write metrics.
    Train {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Replace the spec's seed list with this single seed.
        #[arg(long)]
        seed_override: Option<u64>,
    },
    /// Run the verification suite; exits nonzero if any check fails.
    Verify {
        #[arg(long, default_value = "fast")]
        tier: Tier,
        #[arg(long)]
        seed_override: Option<u64>,
        /// Also write the report as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
        #[arg(long, hide = true)]
        force_unit_weight: bool,
    },
    /// Print the bucket histogram of a buffer snapshot and check invariants.
    InspectBuffer { snapshot: PathBuf },
}

fn train(spec_path: PathBuf, out: PathBuf, seed_override: Option<u64>) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&spec_path)
        .with_context(|| format!("reading {}", spec_path.display()))?;
    let mut spec =
        ExperimentSpec::parse(&text).with_context(|| format!("in {}", spec_path.display()))?;
    if let Some(seed) = seed_override {
        spec.seeds = vec![seed];
    }
    std::fs::create_dir_all(&out).with_context(|| format!("creating {}", out.display()))?;
    log::info!(
        "{}: {} arm(s) x {} seed(s), {} steps",
        spec.name,
        spec.arms.len(),
        spec.seeds.len(),
        spec.steps
    );
    let (_, suite) = build_suite(&spec)?;
    let runs = run_experiment(&spec)?;
    let rows = write_outputs(&out, &suite, &runs)
        .with_context(|| format!("writing to {}", out.display()))?;
    print!("{}", summary_table(&rows));
    Ok(ExitCode::SUCCESS)
}

fn run_verify(
    tier: Tier,
    seed: u64,
    json: Option<PathBuf>,
    force_unit_weight: bool,
) -> Result<ExitCode> {
    let report = verify::run(&VerifyOptions {
        tier,
        seed,
        force_unit_weight,
    });
    print!("{}", report.table());
    if let Some(path) = json {
        let text = serde_json::to_string_pretty(&report)?;
        std::fs::write(&path, text + "\n")
            .with_context(|| format!("writing {}", path.display()))?;
    }
    let failures = report.failures();
    if failures.is_empty() {
        println!("all {} checks passed", report.checks.len());
        Ok(ExitCode::SUCCESS)
    } else {
        eprintln!("{} check(s) failed:", failures.len());
        for f in failures {
            eprintln!("  {}: {}", f.name, f.detail);
        }
        Ok(ExitCode::FAILURE)
    }
}

fn inspect_buffer(path: PathBuf) -> Result<ExitCode> {
    let snapshot =
        BufferSnapshot::load(&path).with_context(|| format!("loading {}", path.display()))?;
    let report = inspect(&snapshot);
    print!("{}", report.to_text());
    Ok(if report.violations.is_empty() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("EXGRPO_LOG_LEVEL", "error"))
        .init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train {
            spec,
            out,
            seed_override,
        } => train(spec, out, seed_override),
        Command::Verify {
            tier,
            seed_override,
            json,
            force_unit_weight,
        } => run_verify(tier, seed_override.unwrap_or(0), json, force_unit_weight),
        Command::InspectBuffer { snapshot } => inspect_buffer(snapshot),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use cbdc_sim::invariants::verify_dir;
use cbdc_sim::scenario::load_fault_plan;
use cbdc_sim::smoke::{run_smoke, SmokeConfig};
use cbdc_sim::system::StorageMode;
use cbdc_sim::workload::{generate, WorkloadConfig};
use cbdc_sim::{run_scenario, RunOptions, Scenario, StateExport};
use clap::{Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "cbdc-sim", about = "Run, verify and replay CBDC scenarios")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run a scenario on the logical clock and print its report.
    Run {
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Overrides the scenario's own seed.
        #[arg(long)]
        seed: Option<u64>,
        /// JSON-lines fault plan.
        #[arg(long)]
        faults: Option<PathBuf>,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Keep journals and the final state in this directory.
        #[arg(long)]
        state: Option<PathBuf>,
        /// Also run the concurrent HTTP smoke check.
        #[arg(long)]
        smoke: bool,
        #[arg(long, default_value_t = 1_000)]
        payments: usize,
        #[arg(long, default_value_t = 8)]
        threads: usize,
    },
    /// Check the journals and saved state in a directory.
    Verify {
        #[arg(long)]
        state: PathBuf,
    },
    /// Rebuild the state export from journals and print it.
    Replay {
        #[arg(long)]
        journals: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write a seeded random workload scenario.
    Gen {
        #[arg(long)]
        seed: u64,
        #[arg(long, default_value_t = 10_000)]
        ops: usize,
        #[arg(long, default_value_t = 20)]
        users: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), String> {
    match out {
        Some(path) => std::fs::write(path, text).map_err(|e| format!("{}: {e}", path.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn run(
    scenario: Option<&Path>,
    seed: Option<u64>,
    faults: Option<&Path>,
    out: Option<&Path>,
    state: Option<&Path>,
    smoke: bool,
    payments: usize,
    threads: usize,
) -> Result<bool, String> {
    if scenario.is_none() && !smoke {
        return Err("run needs --scenario, --smoke or both".into());
    }
    let mut pass = true;
    if let Some(path) = scenario {
        let scenario = Scenario::load(path).map_err(|e| e.to_string())?;
        let faults = match faults {
            Some(f) => load_fault_plan(f).map_err(|e| e.to_string())?,
            None => Vec::new(),
        };
        let storage = match state {
            Some(dir) => {
                std::fs::create_dir_all(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
                StorageMode::Dir(dir.to_path_buf())
            }
            None => StorageMode::Memory,
        };
        let run = run_scenario(&scenario, RunOptions { seed, faults, storage }).map_err(|e| e.to_string())?;
        if let Some(dir) = state {
            run.system.save(dir).map_err(|e| format!("{}: {e}", dir.display()))?;
        }
        emit(out, &run.report.to_json())?;
        if let Err(e) = run.report.verdict() {
            eprintln!("FAIL {e}");
            pass = false;
        }
    }
    if smoke {
        let cfg = SmokeConfig {
            seed: seed.unwrap_or(1),
            payments,
            threads,
            ..Default::default()
        };
        let report = run_smoke(&cfg).map_err(|e| e.to_string())?;
        eprintln!(
            "smoke: {} payments, {} committed, {} rejected, {} errors in {} ms",
            report.payments, report.committed, report.rejected, report.errors, report.elapsed_ms
        );
        for i in report.invariants.iter().filter(|i| !i.pass) {
            eprintln!("FAIL {}: {}", i.name, i.violations.join("; "));
        }
        pass &= report.pass();
    }
    Ok(pass)
}

fn verify(state: &Path) -> Result<bool, String> {
    let violations = verify_dir(state).map_err(|e| e.to_string())?;
    for v in &violations {
        println!("{} {}: {}", v.invariant, v.service, v.detail);
    }
    if violations.is_empty() {
        println!("ok");
    }
    Ok(violations.is_empty())
}

fn replay(journals: &Path, out: Option<&Path>) -> Result<bool, String> {
    let export = StateExport::replay_dir(journals).map_err(|e| e.to_string())?;
    emit(out, &(export.canonical() + "\n"))?;
    Ok(true)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run {
            scenario,
            seed,
            faults,
            out,
            state,
            smoke,
            payments,
            threads,
        } => run(
            scenario.as_deref(),
            *seed,
            faults.as_deref(),
            out.as_deref(),
            state.as_deref(),
            *smoke,
            *payments,
            *threads,
        ),
        Command::Verify { state } => verify(state),
        Command::Replay { journals, out } => replay(journals, out.as_deref()),
        Command::Gen { seed, ops, users, out } => {
            let cfg = WorkloadConfig {
                users: *users,
                ..WorkloadConfig::new(*seed, *ops)
            };
            emit(out.as_deref(), &generate(&cfg).to_jsonl()).map(|()| true)
        }
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use flatcyl::surface::{validate_gluing, SurfaceConfig};
use flatcyl::LabError;
use lab::{Scenario, ScenarioConfig};

#[derive(Parser)]
#[command(name = "lab", about = "Geodesic-flow experiments on surfaces with flat cylinders")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write summary.json, CSV tables and plot data.
    Run {
        /// closing-lemma | ergodic-gap | prohorov-bound | nonwandering
        scenario: String,
        /// JSON or key = value file; scenario defaults apply if omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        workers: Option<usize>,
    },
    /// Check a surface configuration and its gluing.
    Validate { surface_config: PathBuf },
}

fn config_error(e: impl std::fmt::Display) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(2)
}

fn run(
    scenario: &str,
    config: Option<PathBuf>,
    seed: Option<u64>,
    out: Option<PathBuf>,
    workers: Option<usize>,
) -> ExitCode {
    let scenario: Scenario = match scenario.parse() {
        Ok(s) => s,
        Err(e) => return config_error(e),
    };
    let mut cfg = match config {
        Some(p) => match ScenarioConfig::load(&p) {
            Ok(c) => c,
            Err(e) => return config_error(e),
        },
        None => ScenarioConfig::preset(scenario),
    };
    if cfg.scenario != scenario {
        return config_error(format!("config is for {}, not {scenario}", cfg.scenario));
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let dir = out.or_else(|| cfg.out.clone()).unwrap_or_else(|| PathBuf::from(format!("out/{scenario}")));
    let report = match lab::run(&cfg, workers) {
        Ok(r) => r,
        Err(e @ LabError::Config(_)) => return config_error(e),
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    };
    if let Err(e) = report.emit(&dir) {
        eprintln!("error: cannot write {}: {e}", dir.display());
        return ExitCode::from(1);
    }
    for a in &report.assertions {
        println!(
            "[{}] criterion {}: {} (measured {:e})",
            if a.passed { "pass" } else { "FAIL" },
            a.criterion,
            a.name,
            a.measured
        );
    }
    println!("status: {}; output in {}", report.status, dir.display());
    if report.passed() {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn validate(path: PathBuf) -> ExitCode {
    let model = match SurfaceConfig::load(&path).and_then(|c| c.build()) {
        Ok(m) => m,
        Err(e) => return config_error(e),
    };
    let report = validate_gluing(&model, 1000);
    println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
    if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    }
}

fn main() -> ExitCode {
    match Cli::parse().command {
        Command::Run {
            scenario,
            config,
            seed,
            out,
            workers,
        } => run(&scenario, config, seed, out, workers),
        Command::Validate { surface_config } => validate(surface_config),
    }
}

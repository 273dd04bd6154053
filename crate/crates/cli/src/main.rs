use std::path::PathBuf;
use std::process::ExitCode;

use airstar_cli::config::Scenario;
use airstar_cli::figures::{self, ALL_SCHEMES};
use airstar_cli::runner::{run_scenario, write_atomic};
use airstar_cli::verify;
use airstar_core::alloc::Scheme;
use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "airstar",
    about = "Simulator and optimizer for a STAR-RIS assisted hybrid NOMA / over-the-air FL uplink"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Execute the scheme × seed grid of a scenario and write CSV records.
    Run {
        /// Scenario config (TOML); defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Override the seed list.
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        /// Scheme name or "all".
        #[arg(long)]
        scheme: Option<String>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Worker threads for grid cells.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Produce the data bundle of a named experiment figure.
    Figure {
        /// One of: gap_schemes, gap_vs_m, obstacle, rate_vs_location, rate_vs_m.
        name: String,
        #[arg(long = "seed")]
        seeds: Vec<u64>,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Run verification suites and write a JSON report. With no suite
    /// arguments the report is empty and the exit code is zero; "all"
    /// selects every suite.
    Verify {
        /// Suites: identities, gradients, bounds, solvers, endtoend, all.
        suites: Vec<String>,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn parse_schemes(name: Option<&str>, fallback: &str) -> Result<Vec<Scheme>> {
    let name = name.unwrap_or(fallback);
    if name == "all" {
        return Ok(ALL_SCHEMES.to_vec());
    }
    match Scheme::parse(name) {
        Some(s) => Ok(vec![s]),
        None => bail!(
            "unknown scheme '{name}'; valid: all, {}",
            ALL_SCHEMES.map(|s| s.name()).join(", ")
        ),
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run() -> Result<ExitCode> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run { config, seeds, scheme, out_dir, threads } => {
            let mut scenario = match &config {
                Some(path) => Scenario::from_path(path)?,
                None => Scenario::default(),
            };
            if !seeds.is_empty() {
                scenario.run.seeds = seeds;
            }
            let schemes = parse_schemes(scheme.as_deref(), &scenario.run.scheme.clone())?;
            let threads = threads.unwrap_or(scenario.run.threads);
            let outcomes = run_scenario(&scenario, &schemes, &out_dir, threads)?;
            for o in &outcomes {
                println!(
                    "{} seed {}: final gap {:.6e}, mean sum rate {:.3} bps/Hz, feasible {}, {:.1?}",
                    o.scheme.name(),
                    o.seed,
                    o.final_gap,
                    o.mean_sum_rate,
                    o.alloc_feasible,
                    o.wall_time
                );
            }
            println!("wrote {} runs to {}", outcomes.len(), out_dir.display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Figure { name, seeds, out_dir, threads } => {
            let seeds_opt = if seeds.is_empty() { None } else { Some(seeds.as_slice()) };
            figures::figure_suite(&name, &out_dir, seeds_opt, threads.unwrap_or(1))?;
            println!("figure '{name}' written under {}", out_dir.join(&name).display());
            Ok(ExitCode::SUCCESS)
        }
        Command::Verify { suites, out_dir } => {
            let report = verify::run_suites(&suites)?;
            let json = report.to_json();
            if let Some(dir) = out_dir {
                std::fs::create_dir_all(&dir).context("create report dir")?;
                write_atomic(&dir.join("verify_report.json"), &json)?;
            }
            for check in &report.checks {
                println!(
                    "[{}] {} {}: measured {:.3e} vs tolerance {:.3e}",
                    if check.pass { "PASS" } else { "FAIL" },
                    check.suite,
                    check.name,
                    check.measured,
                    check.tolerance
                );
            }
            println!("{} checks, {} failures", report.checks.len(), report.failures);
            if report.failures > 0 {
                Ok(ExitCode::FAILURE)
            } else {
                Ok(ExitCode::SUCCESS)
            }
        }
    }
}

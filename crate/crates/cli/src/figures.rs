//! Figure data bundles: each named suite runs the scheme/sweep grid of one
//! experiment figure and writes its CSV files under a dedicated directory.
//!
//! The learning-curve figures use a learning rate suited to the strongly
//! convex regression task (0.1, safely inside the stability range of its
//! smoothness constant) so that two hundred rounds show the full
//! convergence shape; everything else keeps the standard defaults.

use std::path::Path;

use airstar_core::alloc::Scheme;
use anyhow::{bail, Result};

use crate::config::Scenario;
use crate::runner::{format_float, run_one, run_scenario, write_atomic};

pub const FIGURE_NAMES: [&str; 5] =
    ["gap_schemes", "gap_vs_m", "obstacle", "rate_vs_location", "rate_vs_m"];

pub const ALL_SCHEMES: [Scheme; 5] = [
    Scheme::NoiseFree,
    Scheme::Proposed,
    Scheme::ConventionalRis,
    Scheme::RandomStarRis,
    Scheme::EqualPower,
];

/// Learning rate used by the regression-task learning-curve figures.
pub const FIGURE_LEARNING_RATE: f64 = 0.1;

fn figure_scenario() -> Scenario {
    let mut s = Scenario::default();
    s.learning.learning_rate = FIGURE_LEARNING_RATE;
    s
}

/// Run a learning figure and return the per-scheme median final gaps.
fn gap_schemes(out_dir: &Path, seeds: &[u64], threads: usize) -> Result<()> {
    let mut scenario = figure_scenario();
    scenario.run.seeds = seeds.to_vec();
    run_scenario(&scenario, &ALL_SCHEMES, out_dir, threads)?;
    Ok(())
}

/// Optimality gap against the element count, with blocked direct links so
/// the surface carries the whole uplink; includes the no-surface case.
fn gap_vs_m(out_dir: &Path, seeds: &[u64], threads: usize) -> Result<()> {
    let mut rows = String::from("num_elements,seed,final_gap,mean_sum_rate,alloc_feasible\n");
    for &m in &[0usize, 10, 15, 20, 25, 30] {
        let mut scenario = figure_scenario();
        scenario.channel.blocked_direct_links = true;
        scenario.topology.num_elements = m;
        scenario.run.seeds = seeds.to_vec();
        let sub = out_dir.join(format!("m{m}"));
        let outcomes = run_scenario(&scenario, &[Scheme::Proposed], &sub, threads)?;
        for o in &outcomes {
            rows.push_str(&format!(
                "{m},{},{},{},{}\n",
                o.seed,
                format_float(o.final_gap),
                format_float(o.mean_sum_rate),
                o.alloc_feasible as u8
            ));
        }
    }
    write_atomic(&out_dir.join("gap_vs_m.csv"), &rows)?;
    Ok(())
}

/// Paired runs with and without the obstacle blocking the direct links.
fn obstacle(out_dir: &Path, seeds: &[u64], threads: usize) -> Result<()> {
    let mut rows = String::from("blocked,seed,final_gap,mean_sum_rate,alloc_feasible\n");
    for blocked in [false, true] {
        let mut scenario = figure_scenario();
        scenario.channel.blocked_direct_links = blocked;
        scenario.run.seeds = seeds.to_vec();
        let sub = out_dir.join(if blocked { "blocked" } else { "unblocked" });
        let outcomes = run_scenario(&scenario, &[Scheme::Proposed], &sub, threads)?;
        for o in &outcomes {
            rows.push_str(&format!(
                "{},{},{},{},{}\n",
                blocked as u8,
                o.seed,
                format_float(o.final_gap),
                format_float(o.mean_sum_rate),
                o.alloc_feasible as u8
            ));
        }
    }
    write_atomic(&out_dir.join("obstacle.csv"), &rows)?;
    Ok(())
}

/// Rate scenario: a single optimized round is enough for the rate metrics.
fn rate_scenario() -> Scenario {
    let mut s = figure_scenario();
    s.learning.rounds = 1;
    s.optimizer.horizon_rounds = 1;
    s
}

fn rate_sweep(
    out_dir: &Path,
    seeds: &[u64],
    header: &str,
    cases: &[(f64, Scenario)],
) -> Result<()> {
    let mut rows = format!("{header},seed,sum_rate,alloc_feasible\n");
    for (value, scenario) in cases {
        for &seed in seeds {
            let outcome = run_one(scenario, Scheme::Proposed, seed)?;
            rows.push_str(&format!(
                "{},{},{},{}\n",
                value,
                seed,
                format_float(outcome.mean_sum_rate),
                outcome.alloc_feasible as u8
            ));
        }
    }
    write_atomic(&out_dir.join(format!("{header}.csv")), &rows)?;
    Ok(())
}

fn rate_vs_location(out_dir: &Path, seeds: &[u64]) -> Result<()> {
    let cases: Vec<(f64, Scenario)> = [40.0, 50.0, 60.0]
        .iter()
        .map(|&y| {
            let mut s = rate_scenario();
            s.topology.ris_position_m = [0.0, y, 0.0];
            (y, s)
        })
        .collect();
    rate_sweep(out_dir, seeds, "ris_y_m", &cases)
}

fn rate_vs_m(out_dir: &Path, seeds: &[u64]) -> Result<()> {
    let cases: Vec<(f64, Scenario)> = [10usize, 15, 20, 25, 30]
        .iter()
        .map(|&m| {
            let mut s = rate_scenario();
            s.topology.num_elements = m;
            (m as f64, s)
        })
        .collect();
    rate_sweep(out_dir, seeds, "num_elements", &cases)
}

/// Run one named figure suite.
pub fn figure_suite(
    name: &str,
    out_dir: &Path,
    seeds: Option<&[u64]>,
    threads: usize,
) -> Result<()> {
    let dir = out_dir.join(name);
    std::fs::create_dir_all(&dir)?;
    let default_seeds: Vec<u64>;
    let seeds = match seeds {
        Some(s) if !s.is_empty() => s,
        _ => {
            default_seeds = default_seeds_for(name);
            &default_seeds
        }
    };
    match name {
        "gap_schemes" => gap_schemes(&dir, seeds, threads),
        "gap_vs_m" => gap_vs_m(&dir, seeds, threads),
        "obstacle" => obstacle(&dir, seeds, threads),
        "rate_vs_location" => rate_vs_location(&dir, seeds),
        "rate_vs_m" => rate_vs_m(&dir, seeds),
        other => bail!(
            "unknown figure '{other}'; valid names: {}",
            FIGURE_NAMES.join(", ")
        ),
    }
}

pub fn default_seeds_for(name: &str) -> Vec<u64> {
    match name {
        "gap_schemes" => (1..=10).collect(),
        "gap_vs_m" | "obstacle" => (1..=5).collect(),
        _ => (1..=3).collect(),
    }
}

//! Scenario execution: resource allocation, the per-round link-level state,
//! the federated training loop, and deterministic CSV output.
//!
//! A run optimizes the allocation over the configured horizon, holds the
//! last optimized round's allocation for the remaining training rounds
//! (exact under block fading, best effort otherwise), simulates the SIC
//! chain per round, and feeds the resulting effective gains and residual
//! interference into the training loop. Infeasible rounds are recorded
//! through flags; the simulation itself always continues.

use std::io::Write;
use std::path::Path;
use std::time::{Duration, Instant};

use airstar_core::alloc::{
    aligned_schedule, baseline, evaluate, penalty_sdr_ris, AllocContext, AlternateOutcome,
    RisDesignMode, Scheme,
};
use airstar_core::bound::{lambda3, lambda4};
use airstar_core::learning::{train, RateSchedule, RoundChannel};
use airstar_core::ris::StarRisConfig;
use airstar_core::rng::{self, Stream};
use airstar_core::signal::{
    aggregation_mse, combined_channels, decoding_order_ok, effective_gains, SinrReport,
};
use anyhow::{Context, Result};

use crate::config::Scenario;

/// One row of a run record; `round` is 1-based.
#[derive(Debug, Clone)]
pub struct RoundRow {
    pub round: usize,
    pub gap: f64,
    /// Composed gap bound through this round.
    pub bound: f64,
    pub mse: f64,
    pub sum_rate: f64,
    pub order_ok: bool,
    pub qos_ok: bool,
    pub mse_ok: bool,
    /// Every NOMA stage decoded successfully.
    pub sic_ok: bool,
    /// Per-user transmit amplitude.
    pub power: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub scheme: Scheme,
    pub seed: u64,
    pub rows: Vec<RoundRow>,
    pub final_gap: f64,
    pub mean_sum_rate: f64,
    /// The allocation satisfied every constraint on the optimization horizon.
    pub alloc_feasible: bool,
    pub upsilon_trace: Vec<f64>,
    pub wall_time: Duration,
}

/// Allocation with a best-effort fallback: when the optimizer reports the
/// scenario infeasible, fall back to a slack-minimizing configuration with
/// aligned powers so the run can still proceed (flags record the state).
fn allocate(ctx: &AllocContext, scheme: Scheme, seed: u64) -> (AlternateOutcome, bool) {
    let mut rng = rng::stream(seed, Stream::OptimizerInit);
    match baseline(ctx, scheme, &mut rng) {
        Ok(out) => {
            let feasible = out.evaluation.feasible;
            (out, feasible)
        }
        Err(_) => {
            let m = ctx.channels[0].num_elements();
            let mut configs = vec![StarRisConfig::random(m, &mut rng); ctx.rounds()];
            let mut schedule = aligned_schedule(ctx, &configs);
            if let Ok(out) =
                penalty_sdr_ris(ctx, &schedule, &configs, &RisDesignMode::Restore, &mut rng)
            {
                configs = out.configs;
                schedule = aligned_schedule(ctx, &configs);
            }
            let evaluation = evaluate(ctx, &configs, &schedule);
            let trace = vec![evaluation.upsilon];
            (
                AlternateOutcome {
                    schedule,
                    configs,
                    upsilon_trace: trace,
                    evaluation,
                    outer_rounds: 0,
                },
                false,
            )
        }
    }
}

/// Execute one (scheme, seed) cell of the experiment grid.
pub fn run_one(scenario: &Scenario, scheme: Scheme, seed: u64) -> Result<RunOutcome> {
    let start = Instant::now();
    let spec = scenario.to_spec()?;
    let inst = spec.instantiate(seed).map_err(|e| anyhow::anyhow!("scenario: {e}"))?;
    let task = scenario.build_task(seed);
    let constants = task.constants(inst.sigma2);

    let horizon = scenario.optimizer.horizon_rounds.max(1);
    let ctx = AllocContext {
        topology: inst.topology.clone(),
        channels: inst.channels(horizon).map_err(|e| anyhow::anyhow!("channels: {e}"))?,
        constants,
        lambda: scenario.bound_rate(),
        zeta: inst.zeta.clone(),
        mse_tol: spec.mse_tol,
        p_peak: inst.p_peak(),
        p_avg: inst.p_avg(),
        opts: scenario.optimizer_options(),
    };
    let (alloc, alloc_feasible) = allocate(&ctx, scheme, seed);

    let rounds = scenario.learning.rounds;
    let n_noma = spec.num_noma;
    let k_users = spec.num_airfl;
    let noise_free = scheme == Scheme::NoiseFree;
    let sigma2 = if noise_free { 0.0 } else { inst.sigma2 };

    // per-round link state; the allocation of the last horizon round is
    // held for rounds beyond the horizon
    let mut round_channels: Vec<RoundChannel> = Vec::with_capacity(rounds);
    let mut row_protos: Vec<RoundRow> = Vec::with_capacity(rounds);
    let mut lambda3_seq = Vec::with_capacity(rounds);
    let mut lambda4_seq = Vec::with_capacity(rounds);
    let rate = {
        let mut schedule = scenario.rate_schedule();
        if let RateSchedule::Diminishing { gamma, nu, cap: cap @ None } = &mut schedule {
            // stability cap from the first optimized round
            let combined =
                combined_channels(&ctx.channels[0], &alloc.configs[0], &ctx.topology);
            let z = effective_gains(&combined[n_noma..], &alloc.schedule.round(0)[n_noma..]);
            let sum_z: f64 = z.iter().sum();
            let sum_z2: f64 = z.iter().map(|v| v * v).sum();
            let kf = k_users as f64;
            let bound = (2.0 * kf * sum_z - kf * kf) / (constants.l_smooth * sum_z2);
            if bound > 0.0 {
                *cap = Some(bound);
            }
            let _ = (gamma, nu);
        }
        schedule
    };

    for t in 0..rounds {
        let a = t.min(horizon - 1);
        let chan = if spec.block_fading || t < horizon {
            ctx.channels[a].clone()
        } else {
            let mut c = inst.channel(t).map_err(|e| anyhow::anyhow!("channels: {e}"))?;
            c.round_index = t;
            c
        };
        let combined = combined_channels(&chan, &alloc.configs[a], &ctx.topology);
        let gains_sq: Vec<f64> = combined.iter().map(|h| h.norm_sqr()).collect();
        let powers = alloc.schedule.round(a);

        // SIC chain with threshold decoding; undecoded NOMA signals stay in
        // the residual as extra interference for the aggregate
        let mut undecoded_power = 0.0f64;
        let mut sic_ok = true;
        let mut qos_ok = true;
        for n in 0..n_noma {
            let tail: f64 =
                (n + 1..gains_sq.len()).map(|u| gains_sq[u] * powers[u] * powers[u]).sum();
            let gamma = gains_sq[n] * powers[n] * powers[n]
                / (tail + undecoded_power + sigma2);
            if gamma < inst.zeta[n] {
                qos_ok = false;
                if !noise_free {
                    sic_ok = false;
                    undecoded_power += gains_sq[n] * powers[n] * powers[n];
                }
            }
        }

        let z = if noise_free {
            vec![1.0; k_users]
        } else {
            effective_gains(&combined[n_noma..], &powers[n_noma..])
        };
        let extra = if noise_free { 0.0 } else { undecoded_power };
        let mse = aggregation_mse(&z, sigma2 + extra, k_users);
        let report = SinrReport::compute(&gains_sq, &powers, sigma2, n_noma)
            .map_err(|e| anyhow::anyhow!("rate computation: {e}"))?;
        let order_ok = decoding_order_ok(&gains_sq, n_noma, k_users);
        let mse_ok = mse <= spec.mse_tol * (1.0 + 1e-9);

        let lambda_t = rate.at(t);
        lambda3_seq.push(lambda3(&z, constants.mu, constants.l_smooth, lambda_t, k_users));
        lambda4_seq.push(lambda4(
            &z,
            constants.l_smooth,
            lambda_t,
            k_users,
            constants.delta_norm_sq,
            constants.model_dim,
            sigma2 + extra,
        ));

        round_channels.push(RoundChannel {
            effective_gains: z,
            sigma2,
            extra_noise_var: extra,
        });
        row_protos.push(RoundRow {
            round: t + 1,
            gap: f64::NAN,
            bound: f64::NAN,
            mse,
            sum_rate: report.sum_rate,
            order_ok,
            qos_ok,
            mse_ok,
            sic_ok,
            power: powers,
        });
    }

    let channels = round_channels.clone();
    let run = train(&task, rate, move |t| channels[t].clone(), rounds, seed);
    let bound_trace =
        airstar_core::bound::upsilon_trace(&lambda3_seq, &lambda4_seq, constants.initial_gap);

    let mut rows = row_protos;
    for t in 0..rounds {
        rows[t].gap = run.gap_trace[t];
        rows[t].bound = bound_trace[t];
    }
    let final_gap = run.final_gap();
    let mean_sum_rate = rows.iter().map(|r| r.sum_rate).sum::<f64>() / rounds as f64;
    Ok(RunOutcome {
        scheme,
        seed,
        rows,
        final_gap,
        mean_sum_rate,
        alloc_feasible,
        upsilon_trace: alloc.upsilon_trace,
        wall_time: start.elapsed(),
    })
}

/// Lossless float formatting (17 significant digits).
pub fn format_float(x: f64) -> String {
    if x.is_nan() {
        "nan".to_string()
    } else {
        format!("{x:.16e}")
    }
}

pub fn run_csv(outcome: &RunOutcome) -> String {
    let users = outcome.rows.first().map(|r| r.power.len()).unwrap_or(0);
    let mut text = String::from("round,gap,bound,mse,sum_rate,order_ok,qos_ok,mse_ok,sic_ok");
    for u in 0..users {
        text.push_str(&format!(",power_u{u}"));
    }
    text.push('\n');
    for row in &outcome.rows {
        text.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}",
            row.round,
            format_float(row.gap),
            format_float(row.bound),
            format_float(row.mse),
            format_float(row.sum_rate),
            row.order_ok as u8,
            row.qos_ok as u8,
            row.mse_ok as u8,
            row.sic_ok as u8,
        ));
        for p in &row.power {
            text.push(',');
            text.push_str(&format_float(*p));
        }
        text.push('\n');
    }
    text
}

/// Median and interquartile range of a sample (deterministic ordering).
pub fn median_iqr(values: &[f64]) -> (f64, f64) {
    assert!(!values.is_empty());
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q = |p: f64| -> f64 {
        let idx = p * (v.len() - 1) as f64;
        let lo = idx.floor() as usize;
        let hi = idx.ceil() as usize;
        let w = idx - lo as f64;
        v[lo] * (1.0 - w) + v[hi] * w
    };
    (q(0.5), q(0.75) - q(0.25))
}

/// Write a file atomically (write to a sibling temp path, then rename).
pub fn write_atomic(path: &Path, content: &str) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)
            .with_context(|| format!("cannot create {}", tmp.display()))?;
        f.write_all(content.as_bytes())?;
        f.sync_all().ok();
    }
    std::fs::rename(&tmp, path)
        .with_context(|| format!("cannot move into place: {}", path.display()))?;
    Ok(())
}

/// Execute the scheme × seed grid of a scenario and write one CSV per run
/// plus a summary CSV of medians and IQRs across seeds.
pub fn run_scenario(
    scenario: &Scenario,
    schemes: &[Scheme],
    out_dir: &Path,
    threads: usize,
) -> Result<Vec<RunOutcome>> {
    std::fs::create_dir_all(out_dir)
        .with_context(|| format!("cannot create {}", out_dir.display()))?;
    let cells: Vec<(Scheme, u64)> = schemes
        .iter()
        .flat_map(|&s| scenario.run.seeds.iter().map(move |&seed| (s, seed)))
        .collect();

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads.max(1))
        .build()
        .context("thread pool")?;
    let outcomes: Result<Vec<RunOutcome>> = pool.install(|| {
        use rayon::prelude::*;
        cells.par_iter().map(|&(scheme, seed)| run_one(scenario, scheme, seed)).collect()
    });
    let outcomes = outcomes?;

    for outcome in &outcomes {
        let name = format!("run_{}_seed{}.csv", outcome.scheme.name(), outcome.seed);
        write_atomic(&out_dir.join(name), &run_csv(outcome))?;
    }

    let mut summary = String::from(
        "scheme,seeds,final_gap_median,final_gap_iqr,mean_sum_rate_median,mean_sum_rate_iqr,feasible_runs\n",
    );
    for &scheme in schemes {
        let group: Vec<&RunOutcome> =
            outcomes.iter().filter(|o| o.scheme == scheme).collect();
        if group.is_empty() {
            continue;
        }
        let gaps: Vec<f64> = group.iter().map(|o| o.final_gap).collect();
        let rates: Vec<f64> = group.iter().map(|o| o.mean_sum_rate).collect();
        let (gap_med, gap_iqr) = median_iqr(&gaps);
        let (rate_med, rate_iqr) = median_iqr(&rates);
        let feasible = group.iter().filter(|o| o.alloc_feasible).count();
        summary.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            scheme.name(),
            group.len(),
            format_float(gap_med),
            format_float(gap_iqr),
            format_float(rate_med),
            format_float(rate_iqr),
            feasible,
        ));
    }
    write_atomic(&out_dir.join("summary.csv"), &summary)?;
    Ok(outcomes)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_scenario() -> Scenario {
        let mut s = Scenario::default();
        s.topology.num_elements = 6;
        s.learning.rounds = 5;
        s.learning.train_samples = 1200;
        s.learning.pilot_batches = 60;
        s.optimizer.horizon_rounds = 1;
        s.optimizer.max_outer_rounds = 1;
        s
    }

    #[test]
    fn run_produces_one_row_per_round() {
        let s = tiny_scenario();
        let out = run_one(&s, Scheme::NoiseFree, 1).unwrap();
        assert_eq!(out.rows.len(), 5);
        assert!(out.rows.iter().all(|r| r.gap >= 0.0));
        assert!(out.rows.iter().enumerate().all(|(i, r)| r.round == i + 1));
    }

    #[test]
    fn run_csv_is_deterministic() {
        let s = tiny_scenario();
        let a = run_csv(&run_one(&s, Scheme::NoiseFree, 3).unwrap());
        let b = run_csv(&run_one(&s, Scheme::NoiseFree, 3).unwrap());
        assert_eq!(a, b);
        assert!(a.starts_with("round,gap,bound,mse,sum_rate"));
    }

    #[test]
    fn median_iqr_matches_hand_values() {
        let (m, iqr) = median_iqr(&[1.0, 2.0, 3.0, 4.0]);
        assert!((m - 2.5).abs() < 1e-12);
        assert!((iqr - 1.5).abs() < 1e-12);
        let (m, _) = median_iqr(&[5.0]);
        assert_eq!(m, 5.0);
    }

    #[test]
    fn float_format_has_17_significant_digits() {
        let s = format_float(std::f64::consts::PI);
        assert_eq!(s, "3.1415926535897931e0");
        let parsed: f64 = s.parse().unwrap();
        assert_eq!(parsed, std::f64::consts::PI);
    }
}

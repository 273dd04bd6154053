//! Trust-region SCA power allocation.
//!
//! Each iteration linearizes the gap objective at the current schedule,
//! solves the resulting convex QCQP (epigraph variables `ρ_u = p_u²` and
//! `η_k = (h̄_k p_k − 1)²` make QoS and MSE rows linear), then halves the
//! trust-region radius. NOMA amplitudes do not appear in the objective, so
//! they are recovered as `√ρ_n`; a final linear polish pushes the NOMA
//! received powers as high as the QoS chain and budgets allow, which fixes
//! the achieved rates deterministically without touching the objective.

use nalgebra::{DMatrix, DVector};

use crate::bound::{grad_upsilon_power, GapTerms};
use crate::signal::PowerSchedule;
use crate::solver::{solve_qcqp, QcqpProblem, QcqpSolution, QuadConstraint, SolveStatus};

use super::{AllocContext, AllocError};

pub struct PowerStepOutcome {
    pub schedule: PowerSchedule,
    pub upsilon: f64,
    pub iterations: usize,
}

/// Per-round channel magnitudes under fixed configurations:
/// `gains_sq[t][u] = |h̄_u|²` and `gains_abs[t][u] = |h̄_u|`.
fn build_gains(
    ctx: &AllocContext,
    configs: &[crate::ris::StarRisConfig],
) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
    let mut gains_sq = Vec::with_capacity(ctx.rounds());
    let mut gains_abs = Vec::with_capacity(ctx.rounds());
    for t in 0..ctx.rounds() {
        let combined =
            crate::signal::combined_channels(&ctx.channels[t], &configs[t], &ctx.topology);
        gains_sq.push(combined.iter().map(|h| h.norm_sqr()).collect());
        gains_abs.push(combined.iter().map(|h| h.norm()).collect());
    }
    (gains_sq, gains_abs)
}

struct Layout {
    n_noma: usize,
    n_users: usize,
    k_users: usize,
    rounds: usize,
    slack: bool,
}

impl Layout {
    fn p(&self, t: usize, k: usize) -> usize {
        t * self.k_users + k
    }
    fn rho(&self, t: usize, u: usize) -> usize {
        self.rounds * self.k_users + t * self.n_users + u
    }
    fn eta(&self, t: usize, k: usize) -> usize {
        self.rounds * (self.k_users + self.n_users) + t * self.k_users + k
    }
    fn slack_idx(&self) -> usize {
        self.rounds * (2 * self.k_users + self.n_users)
    }
    fn total(&self) -> usize {
        self.rounds * (2 * self.k_users + self.n_users) + self.slack as usize
    }
}

fn normalized(mut c: QuadConstraint) -> QuadConstraint {
    let mut scale = c.offset.abs();
    for v in c.linear.iter() {
        scale = scale.max(v.abs());
    }
    if let Some(q) = &c.quad {
        for v in q.iter() {
            scale = scale.max(v.abs());
        }
    }
    if scale > 1e-12 {
        c.linear /= scale;
        c.offset /= scale;
        if let Some(q) = &mut c.quad {
            *q /= scale;
        }
    }
    c
}

/// Shared constraint set of the power subproblem. With `slack`, the QoS and
/// MSE rows are relaxed by a common slack variable (feasibility phase).
fn build_constraints(
    ctx: &AllocContext,
    gains_sq: &[Vec<f64>],
    gains_abs: &[Vec<f64>],
    layout: &Layout,
) -> Vec<QuadConstraint> {
    let nv = layout.total();
    let n_noma = layout.n_noma;
    let mut out = Vec::new();
    for t in 0..layout.rounds {
        for k in 0..layout.k_users {
            let u = n_noma + k;
            // p² ≤ ρ
            let mut quad = DMatrix::zeros(nv, nv);
            quad[(layout.p(t, k), layout.p(t, k))] = 1.0;
            let mut linear = DVector::zeros(nv);
            linear[layout.rho(t, u)] = -1.0;
            out.push(QuadConstraint { quad: Some(quad), linear, offset: 0.0 });
            // (g p − 1)² ≤ η
            let g = gains_abs[t][u];
            let mut quad = DMatrix::zeros(nv, nv);
            quad[(layout.p(t, k), layout.p(t, k))] = g * g;
            let mut linear = DVector::zeros(nv);
            linear[layout.p(t, k)] = -2.0 * g;
            linear[layout.eta(t, k)] = -1.0;
            out.push(normalized(QuadConstraint { quad: Some(quad), linear, offset: 1.0 }));
        }
        // QoS chain rows
        for n in 0..n_noma {
            let mut linear = DVector::zeros(nv);
            linear[layout.rho(t, n)] = -gains_sq[t][n];
            for u in n + 1..layout.n_users {
                linear[layout.rho(t, u)] = ctx.zeta[n] * gains_sq[t][u];
            }
            if layout.slack {
                linear[layout.slack_idx()] = -1.0;
            }
            let offset = ctx.zeta[n] * ctx.constants.sigma2;
            out.push(normalized(QuadConstraint::linear(linear, offset)));
        }
        // MSE row
        if ctx.mse_tol.is_finite() {
            let mut linear = DVector::zeros(nv);
            for k in 0..layout.k_users {
                linear[layout.eta(t, k)] = 1.0;
            }
            if layout.slack {
                linear[layout.slack_idx()] = -1.0;
            }
            let kf = layout.k_users as f64;
            let offset = ctx.constants.sigma2 - ctx.mse_tol * kf * kf;
            out.push(normalized(QuadConstraint::linear(linear, offset)));
        }
    }
    // average power budgets
    for u in 0..layout.n_users {
        let mut linear = DVector::zeros(nv);
        for t in 0..layout.rounds {
            linear[layout.rho(t, u)] = 1.0;
        }
        let offset = -(layout.rounds as f64) * ctx.p_avg[u];
        out.push(normalized(QuadConstraint::linear(linear, offset)));
    }
    out
}

fn base_boxes(ctx: &AllocContext, layout: &Layout) -> (DVector<f64>, DVector<f64>) {
    let nv = layout.total();
    let mut lower = DVector::from_element(nv, 0.0);
    let mut upper = DVector::from_element(nv, f64::INFINITY);
    let kf = layout.k_users as f64;
    let eta_hi = if ctx.mse_tol.is_finite() { ctx.mse_tol * kf * kf } else { f64::INFINITY };
    for t in 0..layout.rounds {
        for k in 0..layout.k_users {
            let u = layout.n_noma + k;
            upper[layout.p(t, k)] = ctx.round_power_cap(u).sqrt();
            upper[layout.eta(t, k)] = eta_hi;
        }
        for u in 0..layout.n_users {
            upper[layout.rho(t, u)] = ctx.round_power_cap(u);
        }
    }
    if layout.slack {
        // both bounds finite: an unbounded slack would make the barrier
        // unbounded below through the relaxed rows
        lower[layout.slack_idx()] = -1.0;
        upper[layout.slack_idx()] = 10.0;
    }
    (lower, upper)
}

fn schedule_from_solution(
    ctx: &AllocContext,
    layout: &Layout,
    x: &DVector<f64>,
) -> PowerSchedule {
    let mut p = vec![vec![0.0; layout.rounds]; layout.n_users];
    for t in 0..layout.rounds {
        for n in 0..layout.n_noma {
            p[n][t] = x[layout.rho(t, n)].max(0.0).sqrt();
        }
        for k in 0..layout.k_users {
            p[layout.n_noma + k][t] = x[layout.p(t, k)].max(0.0);
        }
    }
    PowerSchedule { p, p_peak: ctx.p_peak.clone(), p_avg: ctx.p_avg.clone() }
}

fn identify_binding(
    ctx: &AllocContext,
    gains_sq: &[Vec<f64>],
    layout: &Layout,
    x: &DVector<f64>,
) -> String {
    // report the most violated row family at the returned point
    let mut worst = ("none", 0.0f64);
    for t in 0..layout.rounds {
        for n in 0..layout.n_noma {
            let mut v = ctx.zeta[n] * ctx.constants.sigma2 - gains_sq[t][n] * x[layout.rho(t, n)];
            for u in n + 1..layout.n_users {
                v += ctx.zeta[n] * gains_sq[t][u] * x[layout.rho(t, u)];
            }
            if v > worst.1 {
                worst = ("QoS", v);
            }
        }
        if ctx.mse_tol.is_finite() {
            let kf = layout.k_users as f64;
            let mut v = ctx.constants.sigma2 - ctx.mse_tol * kf * kf;
            for k in 0..layout.k_users {
                v += x[layout.eta(t, k)];
            }
            if v > worst.1 {
                worst = ("MSE tolerance", v);
            }
        }
    }
    format!("{} (violation {:.3e})", worst.0, worst.1)
}

/// Find a strictly feasible schedule by maximizing the common QoS/MSE slack.
pub fn feasible_start(
    ctx: &AllocContext,
    configs: &[crate::ris::StarRisConfig],
) -> Result<PowerSchedule, AllocError> {
    let (gains_sq, gains_abs) = build_gains(ctx, configs);
    let layout = Layout {
        n_noma: ctx.num_noma(),
        n_users: ctx.topology.num_users(),
        k_users: ctx.num_airfl(),
        rounds: ctx.rounds(),
        slack: true,
    };
    let constraints = build_constraints(ctx, &gains_sq, &gains_abs, &layout);
    let (lower, upper) = base_boxes(ctx, &layout);
    let mut objective = DVector::zeros(layout.total());
    objective[layout.slack_idx()] = 1.0;
    let problem = QcqpProblem { objective, constraints, lower, upper };
    let sol = solve_qcqp(&problem, ctx.opts.qcqp_tol, 6000);
    if std::env::var("AIRSTAR_QCQP_TRACE").is_ok() {
        eprintln!(
            "feasible_start: status={:?} slack={:.6e} newton={}",
            sol.status,
            sol.x[layout.slack_idx()],
            sol.newton_iterations
        );
    }
    if sol.x[layout.slack_idx()] >= -1e-9 {
        return Err(AllocError::Infeasible {
            stage: "power feasibility",
            binding: identify_binding(ctx, &gains_sq, &layout, &sol.x),
        });
    }
    Ok(schedule_from_solution(ctx, &layout, &sol.x))
}

fn solve_step(
    ctx: &AllocContext,
    gains_sq: &[Vec<f64>],
    gains_abs: &[Vec<f64>],
    layout: &Layout,
    current: &PowerSchedule,
    radius: f64,
) -> QcqpSolution {
    let airfl = ctx.airfl_users();
    // linearized objective over AirFL amplitudes, scaled to unit magnitude
    let gains_airfl: Vec<Vec<f64>> = gains_abs
        .iter()
        .map(|g| airfl.iter().map(|&u| g[u]).collect())
        .collect();
    let powers_airfl: Vec<Vec<f64>> = (0..layout.rounds)
        .map(|t| airfl.iter().map(|&u| current.at(u, t)).collect())
        .collect();
    let mut objective = DVector::zeros(layout.total());
    let mut max_coeff = 0.0f64;
    for t in 0..layout.rounds {
        for k in 0..layout.k_users {
            let d = grad_upsilon_power(
                &gains_airfl,
                &powers_airfl,
                ctx.lambda,
                &ctx.constants,
                t,
                k,
            );
            objective[layout.p(t, k)] = d;
            max_coeff = max_coeff.max(d.abs());
        }
    }
    if max_coeff > 1e-300 {
        objective /= max_coeff;
    }

    let constraints = build_constraints(ctx, gains_sq, gains_abs, layout);
    let (mut lower, mut upper) = base_boxes(ctx, layout);
    // trust region around the current iterate, intersected with the budgets
    for t in 0..layout.rounds {
        for k in 0..layout.k_users {
            let u = layout.n_noma + k;
            let c = current.at(u, t);
            lower[layout.p(t, k)] = (c - radius).max(0.0);
            upper[layout.p(t, k)] = (c + radius).min(ctx.round_power_cap(u).sqrt());
        }
        for n in 0..layout.n_noma {
            let c = current.at(n, t);
            let lo = (c - radius).max(0.0);
            let hi = (c + radius).min(ctx.round_power_cap(n).sqrt());
            lower[layout.rho(t, n)] = lo * lo;
            upper[layout.rho(t, n)] = hi * hi;
        }
    }
    let problem = QcqpProblem { objective, constraints, lower, upper };
    solve_qcqp(&problem, ctx.opts.qcqp_tol, 4000)
}

fn upsilon_of(ctx: &AllocContext, gains_abs: &[Vec<f64>], schedule: &PowerSchedule) -> f64 {
    let airfl = ctx.airfl_users();
    let z: Vec<Vec<f64>> = (0..ctx.rounds())
        .map(|t| airfl.iter().map(|&u| gains_abs[t][u] * schedule.at(u, t)).collect())
        .collect();
    GapTerms::from_gains(&z, ctx.lambda, &ctx.constants).upsilon
}

/// Trust-region SCA over the power schedule at fixed configurations.
pub fn sca_power(
    ctx: &AllocContext,
    configs: &[crate::ris::StarRisConfig],
    start: &PowerSchedule,
) -> Result<PowerStepOutcome, AllocError> {
    let (gains_sq, gains_abs) = build_gains(ctx, configs);
    let layout = Layout {
        n_noma: ctx.num_noma(),
        n_users: ctx.topology.num_users(),
        k_users: ctx.num_airfl(),
        rounds: ctx.rounds(),
        slack: false,
    };

    let mut current = if super::evaluate(ctx, configs, start).feasible {
        start.clone()
    } else {
        feasible_start(ctx, configs)?
    };
    let mut best_upsilon = upsilon_of(ctx, &gains_abs, &current);

    let mut radius = ctx.opts.trust_region_initial;
    let mut iterations = 0;
    while iterations < ctx.opts.max_sca_iters && radius > ctx.opts.trust_region_tol {
        iterations += 1;
        let sol = solve_step(ctx, &gains_sq, &gains_abs, &layout, &current, radius);
        if matches!(sol.status, SolveStatus::Infeasible { .. }) {
            radius /= 2.0;
            continue;
        }
        let candidate = schedule_from_solution(ctx, &layout, &sol.x);
        let cand_upsilon = upsilon_of(ctx, &gains_abs, &candidate);
        let accept = !ctx.opts.sca_ratio_test || cand_upsilon <= best_upsilon + 1e-15;
        if accept {
            current = candidate;
            best_upsilon = cand_upsilon;
        }
        radius /= 2.0;
    }

    current = polish_noma_rates(ctx, &gains_sq, current);
    let upsilon = upsilon_of(ctx, &gains_abs, &current);
    Ok(PowerStepOutcome { schedule: current, upsilon, iterations })
}

/// Maximize the total NOMA received power (and hence the sum rate) over the
/// NOMA amplitudes, holding AirFL powers fixed. The objective of the gap
/// bound is untouched; QoS and budget rows still bind.
pub fn polish_noma_rates(
    ctx: &AllocContext,
    gains_sq: &[Vec<f64>],
    schedule: PowerSchedule,
) -> PowerSchedule {
    let n_noma = ctx.num_noma();
    if n_noma == 0 {
        return schedule;
    }
    let rounds = ctx.rounds();
    let n_users = ctx.topology.num_users();
    let nv = rounds * n_noma;
    let idx = |t: usize, n: usize| t * n_noma + n;

    let mut objective = DVector::zeros(nv);
    let mut scale = 0.0f64;
    for t in 0..rounds {
        for n in 0..n_noma {
            objective[idx(t, n)] = -gains_sq[t][n];
            scale = scale.max(gains_sq[t][n]);
        }
    }
    if scale > 0.0 {
        objective /= scale;
    }

    let mut constraints = Vec::new();
    for t in 0..rounds {
        // fixed AirFL interference at this round
        let airfl_interference: f64 = (n_noma..n_users)
            .map(|u| gains_sq[t][u] * schedule.at(u, t) * schedule.at(u, t))
            .sum();
        for n in 0..n_noma {
            let mut linear = DVector::zeros(nv);
            linear[idx(t, n)] = -gains_sq[t][n];
            for u in n + 1..n_noma {
                linear[idx(t, u)] = ctx.zeta[n] * gains_sq[t][u];
            }
            let offset = ctx.zeta[n] * (airfl_interference + ctx.constants.sigma2);
            constraints.push(normalized(QuadConstraint::linear(linear, offset)));
        }
    }
    for n in 0..n_noma {
        let mut linear = DVector::zeros(nv);
        for t in 0..rounds {
            linear[idx(t, n)] = 1.0;
        }
        constraints
            .push(normalized(QuadConstraint::linear(linear, -(rounds as f64) * ctx.p_avg[n])));
    }
    let lower = DVector::from_element(nv, 0.0);
    let mut upper = DVector::zeros(nv);
    for t in 0..rounds {
        for n in 0..n_noma {
            upper[idx(t, n)] = ctx.round_power_cap(n);
        }
    }
    let problem = QcqpProblem { objective, constraints, lower, upper };
    let sol = solve_qcqp(&problem, ctx.opts.qcqp_tol, 4000);
    if sol.status != SolveStatus::Optimal {
        return schedule;
    }
    let mut out = schedule;
    for t in 0..rounds {
        for n in 0..n_noma {
            out.p[n][t] = sol.x[idx(t, n)].max(0.0).sqrt();
        }
    }
    out
}

//! Self-check suites: machine-checkable verification of the lifting
//! identities, the analytic gradients, the bound algebra, the convex
//! kernels, and a small end-to-end run. Each check records its tolerance
//! and the measured value; the report is JSON and the process exit code
//! reflects failures.

use airstar_core::alloc::{evaluate, Scheme};
use airstar_core::bound::{
    self, aggregation_error_bound, grad_upsilon_power, grad_upsilon_q, lambda3, lambda3_lifted,
    lambda4_lifted, one_round_bound, upsilon, ErrorBoundInputs, TaskConstants,
};
use airstar_core::learning;
use airstar_core::ris::{lift_gain, lift_gap_terms, lift_mse, lifted_outer, trace_re};
use airstar_core::rng::{self, standard_complex, Stream};
use airstar_core::solver::{
    psd_project, solve_qcqp, solve_sdp, ConstraintKind, QcqpProblem, QuadConstraint,
    SdpConstraint, SdpProblem,
};
use airstar_core::C64;
use anyhow::{bail, Result};
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::Serialize;

use crate::config::Scenario;
use crate::runner::{run_csv, run_one};

pub const SUITE_NAMES: [&str; 5] =
    ["identities", "gradients", "bounds", "solvers", "endtoend"];

#[derive(Debug, Clone, Serialize)]
pub struct CheckResult {
    pub suite: String,
    pub name: String,
    pub tolerance: f64,
    pub measured: f64,
    pub pass: bool,
}

impl CheckResult {
    fn below(suite: &str, name: &str, measured: f64, tolerance: f64) -> Self {
        Self {
            suite: suite.to_string(),
            name: name.to_string(),
            tolerance,
            measured,
            pass: measured <= tolerance,
        }
    }
}

#[derive(Debug, Serialize)]
pub struct VerifyReport {
    pub suites: Vec<String>,
    pub checks: Vec<CheckResult>,
    pub failures: usize,
}

impl VerifyReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

fn constants() -> TaskConstants {
    TaskConstants {
        mu: 1.9,
        l_smooth: 2.3,
        model_dim: 10,
        delta_norm_sq: 1500.0,
        sigma2: 0.05,
        num_airfl: 3,
        initial_gap: 385.0,
    }
}

/// Trace-lifting identities on random instances at the default element
/// count: channel gain, aggregation error, and both gap-term blocks.
fn suite_identities() -> Vec<CheckResult> {
    let m = 20;
    let (mu, l, lam, k) = (1.9, 2.3, 0.05, 3usize);
    let c = k as f64 / (l * lam);
    let mut rng = rng::stream(2024, Stream::Custom(100));
    let mut worst_gain = 0.0f64;
    let mut worst_mse = 0.0f64;
    let mut worst_check = 0.0f64;
    let mut worst_bar = 0.0f64;
    for _ in 0..1000 {
        let h = standard_complex(&mut rng);
        let r = DVector::from_fn(m, |_, _| standard_complex(&mut rng));
        let q = DVector::from_fn(m, |_, _| standard_complex(&mut rng));
        let p: f64 = rng.gen::<f64>() * 2.0;
        let q_mat = lifted_outer(&q);
        let qh_r: C64 = (0..m).map(|i| q[i].conj() * r[i]).sum();

        let (r_tilde, _, gain) = lift_gain(&q, h, &r);
        let direct_gain = (h + qh_r).norm_sqr();
        worst_gain = worst_gain.max((gain - direct_gain).abs());
        let _ = r_tilde;

        let (r_hat, h_hat) = lift_mse(&r, p, h);
        let lifted = trace_re(&r_hat, &q_mat) + h_hat.norm_sqr();
        let direct = ((h + qh_r) * p - C64::from(1.0)).norm_sqr();
        worst_mse = worst_mse.max((lifted - direct).abs());

        let terms = lift_gap_terms(&r, p, h, mu, l, lam, k);
        let z = (h + qh_r) * p;
        let lifted_check = trace_re(&terms.r_check, &q_mat) + terms.h_check.norm_sqr();
        worst_check = worst_check.max((lifted_check - (z - C64::from(c)).norm_sqr()).abs());
        let lifted_bar = trace_re(&terms.r_bar, &q_mat) + terms.h_ring.norm_sqr();
        worst_bar = worst_bar.max((lifted_bar - z.norm_sqr()).abs());
    }
    // the contraction block carries the constant c ≈ K/(Lλ); compare at
    // matching scale
    let check_scale = c * c;
    vec![
        CheckResult::below("identities", "gain_trace_identity", worst_gain, 1e-9),
        CheckResult::below("identities", "mse_trace_identity", worst_mse, 1e-9),
        CheckResult::below(
            "identities",
            "gap_contraction_trace_identity",
            worst_check / check_scale.max(1.0),
            1e-9,
        ),
        CheckResult::below("identities", "gap_noise_trace_identity", worst_bar, 1e-9),
    ]
}

/// Analytic gradients of the composed bound against central finite
/// differences, for both the power and lifted-configuration routes.
fn suite_gradients() -> Vec<CheckResult> {
    let c = constants();
    let lambda = 0.05;
    let rounds = 3;
    let mut rng = rng::stream(2025, Stream::Custom(101));

    let mut worst_power = 0.0f64;
    for _ in 0..100 {
        let gains: Vec<Vec<f64>> = (0..rounds)
            .map(|_| (0..3).map(|_| 0.5 + rng.gen::<f64>() * 2.0).collect())
            .collect();
        let mut powers: Vec<Vec<f64>> =
            (0..rounds).map(|_| (0..3).map(|_| 0.1 + rng.gen::<f64>()).collect()).collect();
        let t = (rng.gen::<u64>() % rounds as u64) as usize;
        let k = (rng.gen::<u64>() % 3) as usize;
        let analytic = grad_upsilon_power(&gains, &powers, lambda, &c, t, k);
        let h = 1e-6;
        let base = powers[t][k];
        let up = {
            powers[t][k] = base + h;
            upsilon_of_powers(&gains, &powers, lambda, &c)
        };
        let down = {
            powers[t][k] = base - h;
            upsilon_of_powers(&gains, &powers, lambda, &c)
        };
        powers[t][k] = base;
        let fd = (up - down) / (2.0 * h);
        worst_power = worst_power.max((analytic - fd).abs() / fd.abs().max(analytic.abs()).max(1e-9));
    }

    let m = 3;
    let mut worst_q = 0.0f64;
    for _ in 0..100 {
        let mut gap_lifts = Vec::new();
        let mut q_mats = Vec::new();
        for _ in 0..rounds {
            let mut terms = Vec::new();
            let mut qs = Vec::new();
            for _ in 0..c.num_airfl {
                let r = DVector::from_fn(m, |_, _| standard_complex(&mut rng));
                let h = standard_complex(&mut rng);
                let p = 0.2 + rng.gen::<f64>();
                terms.push(lift_gap_terms(&r, p, h, c.mu, c.l_smooth, lambda, c.num_airfl));
                qs.push(lifted_outer(&DVector::from_fn(m, |_, _| standard_complex(&mut rng))));
            }
            gap_lifts.push(terms);
            q_mats.push(qs);
        }
        let t = (rng.gen::<u64>() % rounds as u64) as usize;
        let k = (rng.gen::<u64>() % c.num_airfl as u64) as usize;
        let d = grad_upsilon_q(&gap_lifts, &q_mats, lambda, &c, t, k);
        let a = DMatrix::from_fn(m + 1, m + 1, |_, _| standard_complex(&mut rng));
        let dir = (&a + a.adjoint()) * C64::from(0.5);
        let upsilon_of = |q_mats: &Vec<Vec<DMatrix<C64>>>| -> f64 {
            let l3: Vec<f64> = gap_lifts
                .iter()
                .zip(q_mats)
                .map(|(terms, q)| lambda3_lifted(terms, q, c.mu, c.l_smooth, lambda, c.num_airfl))
                .collect();
            let l4: Vec<f64> = gap_lifts
                .iter()
                .zip(q_mats)
                .map(|(terms, q)| {
                    lambda4_lifted(
                        terms,
                        q,
                        c.l_smooth,
                        lambda,
                        c.num_airfl,
                        c.delta_norm_sq,
                        c.model_dim,
                        c.sigma2,
                    )
                })
                .collect();
            upsilon(&l3, &l4, c.initial_gap)
        };
        let h = 1e-6;
        let mut plus = q_mats.clone();
        plus[t][k] += &dir * C64::from(h);
        let mut minus = q_mats.clone();
        minus[t][k] -= &dir * C64::from(h);
        let fd = (upsilon_of(&plus) - upsilon_of(&minus)) / (2.0 * h);
        let analytic = trace_re(&d, &dir);
        worst_q = worst_q.max((analytic - fd).abs() / fd.abs().max(analytic.abs()).max(1e-9));
    }

    vec![
        CheckResult::below("gradients", "power_gradient_vs_fd", worst_power, 1e-5),
        CheckResult::below("gradients", "config_gradient_vs_fd", worst_q, 1e-5),
    ]
}

fn upsilon_of_powers(
    gains: &[Vec<f64>],
    powers: &[Vec<f64>],
    lambda: f64,
    c: &TaskConstants,
) -> f64 {
    let z: Vec<Vec<f64>> = gains
        .iter()
        .zip(powers)
        .map(|(g, p)| g.iter().zip(p).map(|(&a, &b)| a * b).collect())
        .collect();
    bound::GapTerms::from_gains(&z, lambda, c).upsilon
}

/// Bound algebra: composition, hand values, rate-envelope recursion, and a
/// Monte-Carlo check of the one-round descent bound.
fn suite_bounds() -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut rng = rng::stream(2026, Stream::Custom(102));

    // composition against a literal triple expansion
    let mut worst = 0.0f64;
    for _ in 0..200 {
        let l3: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
        let l4: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
        let g0: f64 = rng.gen::<f64>() * 10.0;
        let brute = l3[0] * l3[1] * l3[2] * g0 + l3[1] * l3[2] * l4[0] + l3[2] * l4[1] + l4[2];
        worst = worst.max((upsilon(&l3, &l4, g0) - brute).abs() / brute.abs().max(1.0));
    }
    out.push(CheckResult::below("bounds", "composition_vs_expansion", worst, 1e-12));

    // hand value for the contraction factor
    let hand = (lambda3(&[1.0], 1.0, 1.0, 0.1, 1) - 0.81).abs();
    out.push(CheckResult::below("bounds", "contraction_hand_value", hand, 1e-14));

    // aggregation-error bound: clean geometric decay
    let c = TaskConstants { delta_norm_sq: 0.0, ..constants() };
    let inputs = ErrorBoundInputs { bias_sq: vec![0.0; 5], grad_mse: vec![0.0; 5] };
    let lam = 0.1;
    let b = aggregation_error_bound(&inputs, lam, &c).unwrap();
    let geometric: f64 = (1.0 - lam * c.mu).powi(5) * c.initial_gap;
    out.push(CheckResult::below(
        "bounds",
        "aggregation_bound_geometric_decay",
        (b - geometric).abs() / geometric,
        1e-12,
    ));

    // one-round descent bound dominates a Monte-Carlo estimate
    let task = learning::make_synthetic_task(3, 50, 3000, 0.5, 300, 4242);
    let tc = task.constants(0.05);
    let w = DVector::from_element(10, 0.5);
    let prev_gap = task.gap(&w);
    let grad_norm_sq = task.full_gradient(&w).norm_squared();
    let z = vec![1.0, 0.95, 1.05];
    let lambda = 0.05;
    let rhs = one_round_bound(prev_gap, grad_norm_sq, &z, lambda, &tc);
    let draws = 2000;
    let mut acc = 0.0;
    let mut acc2 = 0.0;
    for i in 0..draws {
        let grads: Vec<DVector<f64>> =
            (0..3).map(|k| task.local_gradient(k, &w, i, 777)).collect();
        let mut noise_rng = rng::stream(778, Stream::Custom(i as u64));
        let next =
            learning::noisy_global_update(&w, &grads, &z, tc.sigma2, lambda, &mut noise_rng);
        let gap = task.gap(&next);
        acc += gap;
        acc2 += gap * gap;
    }
    let mean = acc / draws as f64;
    let se = ((acc2 / draws as f64 - mean * mean) / draws as f64).sqrt();
    // measured in standard errors above the bound; negative means dominated
    let excess = (mean - rhs) / se.max(1e-12);
    out.push(CheckResult::below("bounds", "one_round_bound_dominates_mc", excess, 3.0));

    out
}

/// Convex kernels against independent oracles on tiny instances.
fn suite_solvers() -> Vec<CheckResult> {
    let mut out = Vec::new();

    // minimize x s.t. x² ≤ 1
    let disc = QcqpProblem {
        objective: DVector::from_column_slice(&[1.0]),
        constraints: vec![QuadConstraint {
            quad: Some(DMatrix::from_element(1, 1, 1.0)),
            linear: DVector::zeros(1),
            offset: -1.0,
        }],
        lower: DVector::from_column_slice(&[f64::NEG_INFINITY]),
        upper: DVector::from_column_slice(&[f64::INFINITY]),
    };
    let sol = solve_qcqp(&disc, 1e-9, 2000);
    out.push(CheckResult::below("solvers", "qcqp_unit_disc", (sol.x[0] + 1.0).abs(), 1e-3));

    // random dim ≤ 3 instances against a dense grid
    let mut rng = rng::stream(2027, Stream::Custom(103));
    let mut worst = 0.0f64;
    for trial in 0..6 {
        let n = 1 + trial % 3;
        let raw = DMatrix::from_fn(n, n, |_, _| rng.gen::<f64>() - 0.5);
        let a = &raw * raw.transpose() + DMatrix::identity(n, n) * 0.3;
        let radius = 0.8 + rng.gen::<f64>();
        let cvec = DVector::from_fn(n, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
        let problem = QcqpProblem {
            objective: cvec.clone(),
            constraints: vec![QuadConstraint {
                quad: Some(a.clone()),
                linear: DVector::zeros(n),
                offset: -radius,
            }],
            lower: DVector::from_element(n, -2.0),
            upper: DVector::from_element(n, 2.0),
        };
        let sol = solve_qcqp(&problem, 1e-9, 4000);
        let steps = if n == 1 { 20_000 } else if n == 2 { 300 } else { 50 };
        let mut best = f64::INFINITY;
        let mut idx = vec![0usize; n];
        loop {
            let x = DVector::from_fn(n, |i, _| -2.0 + 4.0 * idx[i] as f64 / steps as f64);
            if problem.constraints[0].value(&x) <= 0.0 {
                best = best.min(cvec.dot(&x));
            }
            let mut carry = true;
            for d in idx.iter_mut() {
                if carry {
                    *d += 1;
                    if *d > steps {
                        *d = 0;
                    } else {
                        carry = false;
                    }
                }
            }
            if carry {
                break;
            }
        }
        worst = worst.max(sol.objective - best);
    }
    out.push(CheckResult::below("solvers", "qcqp_vs_grid_search", worst, 1e-3));

    // SDP: minimum-trace completion with unit diagonal is the identity
    let diag = |i: usize, rhs: f64| {
        let mut e = DMatrix::zeros(2, 2);
        e[(i, i)] = 1.0;
        SdpConstraint {
            block_terms: vec![(0, e)],
            scalar_terms: vec![],
            rhs,
            kind: ConstraintKind::Eq,
        }
    };
    let problem = SdpProblem {
        block_dims: vec![2],
        objective_blocks: vec![DMatrix::identity(2, 2)],
        scalar_bounds: vec![],
        objective_scalars: vec![],
        constraints: vec![diag(0, 1.0), diag(1, 1.0)],
    };
    let (sol, _) = solve_sdp(&problem, 1e-8, 20_000, None);
    out.push(CheckResult::below("solvers", "sdp_identity_trace", (sol.objective - 2.0).abs(), 1e-3));

    // SDP with an off-diagonal reward against the closed-form optimum:
    // min tr(CX), diag(X) = (1, 1) → offdiag = −sign(C12), obj = C11+C22−2|C12|
    let cmat = DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 2.0]);
    let problem = SdpProblem {
        block_dims: vec![2],
        objective_blocks: vec![cmat],
        scalar_bounds: vec![],
        objective_scalars: vec![],
        constraints: vec![diag(0, 1.0), diag(1, 1.0)],
    };
    let (sol, _) = solve_sdp(&problem, 1e-9, 40_000, None);
    let closed_form = 1.0 + 2.0 - 2.0 * 0.8;
    out.push(CheckResult::below(
        "solvers",
        "sdp_vs_closed_form",
        (sol.objective - closed_form).abs(),
        1e-3,
    ));

    // determinism: identical bitwise outputs across repeated solves
    let (a, _) = solve_sdp(&problem, 1e-9, 40_000, None);
    let (b, _) = solve_sdp(&problem, 1e-9, 40_000, None);
    let identical = a.blocks[0] == b.blocks[0] && a.iterations == b.iterations;
    out.push(CheckResult::below("solvers", "sdp_determinism", (!identical) as u8 as f64, 0.5));

    // PSD projection clips the negative part exactly
    let p = psd_project(&DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, -3.0])).unwrap();
    let expect = DMatrix::from_row_slice(2, 2, &[2.0, 0.0, 0.0, 0.0]);
    out.push(CheckResult::below("solvers", "psd_projection_clip", (&p - &expect).norm(), 1e-12));

    out
}

/// Desk-scale end-to-end: the alternating optimizer on the default scenario
/// must produce a feasible allocation with a non-increasing objective
/// trace, the gain ordering must hold, and the run record must be
/// byte-stable.
fn suite_endtoend() -> Vec<CheckResult> {
    let mut out = Vec::new();
    let mut scenario = Scenario::default();
    scenario.learning.rounds = 20;
    scenario.optimizer.horizon_rounds = 2;
    scenario.learning.train_samples = 6000;
    scenario.learning.pilot_batches = 200;

    match run_one(&scenario, Scheme::Proposed, 1) {
        Ok(outcome) => {
            let mut worst_increase = 0.0f64;
            for w in outcome.upsilon_trace.windows(2) {
                worst_increase = worst_increase.max(w[1] - w[0]);
            }
            out.push(CheckResult::below("endtoend", "alternation_monotone", worst_increase, 1e-9));
            out.push(CheckResult::below(
                "endtoend",
                "allocation_feasible",
                (!outcome.alloc_feasible) as u8 as f64,
                0.5,
            ));
            let order_all = outcome.rows.iter().all(|r| r.order_ok);
            out.push(CheckResult::below(
                "endtoend",
                "decoding_order_holds",
                (!order_all) as u8 as f64,
                0.5,
            ));
            let again = run_one(&scenario, Scheme::Proposed, 1).expect("rerun");
            let identical = run_csv(&outcome) == run_csv(&again);
            out.push(CheckResult::below(
                "endtoend",
                "run_record_byte_identical",
                (!identical) as u8 as f64,
                0.5,
            ));
        }
        Err(e) => {
            out.push(CheckResult {
                suite: "endtoend".into(),
                name: format!("run_failed: {e}"),
                tolerance: 0.0,
                measured: 1.0,
                pass: false,
            });
        }
    }

    // spec'd sanity: the optimized context evaluation agrees with the flags
    let scenario = Scenario::default();
    if let (Ok(spec), Ok(())) = (scenario.to_spec(), scenario.validate()) {
        if let Ok(inst) = spec.instantiate(1) {
            let task_sigma = inst.sigma2;
            let _ = task_sigma;
            let ctx = airstar_core::alloc::AllocContext {
                topology: inst.topology.clone(),
                channels: inst.channels(1).unwrap(),
                constants: constants(),
                lambda: 0.1,
                zeta: inst.zeta.clone(),
                mse_tol: spec.mse_tol,
                p_peak: inst.p_peak(),
                p_avg: inst.p_avg(),
                opts: scenario.optimizer_options(),
            };
            let mut rng = rng::stream(1, Stream::OptimizerInit);
            if let Ok(outcome) = airstar_core::alloc::alternate(&ctx, &mut rng) {
                let eval = evaluate(&ctx, &outcome.configs, &outcome.schedule);
                out.push(CheckResult::below(
                    "endtoend",
                    "post_design_order_ok",
                    (!eval.order_ok.iter().all(|&b| b)) as u8 as f64,
                    0.5,
                ));
            }
        }
    }
    out
}

/// Run the named suite.
pub fn run_suite(name: &str) -> Result<Vec<CheckResult>> {
    match name {
        "identities" => Ok(suite_identities()),
        "gradients" => Ok(suite_gradients()),
        "bounds" => Ok(suite_bounds()),
        "solvers" => Ok(suite_solvers()),
        "endtoend" => Ok(suite_endtoend()),
        other => bail!("unknown suite '{other}'; valid: {}", SUITE_NAMES.join(", ")),
    }
}

/// Run a selection of suites (possibly empty) into one report.
pub fn run_suites(names: &[String]) -> Result<VerifyReport> {
    let expanded: Vec<String> = if names.iter().any(|n| n == "all") {
        SUITE_NAMES.iter().map(|s| s.to_string()).collect()
    } else {
        names.to_vec()
    };
    let mut checks = Vec::new();
    for name in &expanded {
        checks.extend(run_suite(name)?);
    }
    let failures = checks.iter().filter(|c| !c.pass).count();
    Ok(VerifyReport { suites: expanded, checks, failures })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_selection_yields_zero_checks() {
        let report = run_suites(&[]).unwrap();
        assert_eq!(report.checks.len(), 0);
        assert_eq!(report.failures, 0);
    }

    #[test]
    fn unknown_suite_is_an_error() {
        assert!(run_suite("bogus").is_err());
    }

    #[test]
    fn identity_suite_passes() {
        let checks = run_suite("identities").unwrap();
        assert!(checks.iter().all(|c| c.pass), "{checks:?}");
    }
}

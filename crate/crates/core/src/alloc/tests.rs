use nalgebra::DVector;
use rand::Rng;

use super::*;
use crate::bound::GapTerms;
use crate::channel::{ChannelParams, ChannelRealization, Side};
use crate::ris::{config_vector, effective_vector, lift_gain, side_matrix, StarRisConfig};
use crate::rng::{self, Stream};
use crate::scenario::ScenarioSpec;
use crate::signal::combined_channels;
use crate::C64;

fn default_spec() -> ScenarioSpec {
    ScenarioSpec {
        bs_position: [0.0, 0.0, 0.0],
        ris_position: [0.0, 50.0, 0.0],
        user_center: [0.0, 50.0],
        user_radius: 5.0,
        num_noma: 3,
        num_airfl: 3,
        num_elements: 20,
        params: ChannelParams::new(1e-3, 2.2, 2.0, 1e-11, 0.5).unwrap(),
        agc_reference_gain: 10.0,
        blocked: false,
        block_fading: true,
        sort_roles_by_gain: true,
        peak_power: 0.199526231496888, // 23 dBm
        avg_power: 0.1,                // 20 dBm
        min_rate: 1.0,
        mse_tol: 0.01,
    }
}

fn constants(sigma2: f64, k: usize) -> TaskConstants {
    TaskConstants {
        mu: 1.9,
        l_smooth: 2.3,
        model_dim: 10,
        delta_norm_sq: 2000.0,
        sigma2,
        num_airfl: k,
        initial_gap: 385.0,
    }
}

fn context_for(spec: &ScenarioSpec, seed: u64, rounds: usize, lambda: f64) -> AllocContext {
    let inst = spec.instantiate(seed).unwrap();
    AllocContext {
        topology: inst.topology.clone(),
        channels: inst.channels(rounds).unwrap(),
        constants: constants(inst.sigma2, spec.num_airfl),
        lambda,
        zeta: inst.zeta.clone(),
        mse_tol: spec.mse_tol,
        p_peak: inst.p_peak(),
        p_avg: inst.p_avg(),
        opts: OptimizerOptions::default(),
    }
}

#[test]
fn single_user_power_step_matches_golden_section() {
    // K = 1, N = 0, T = 1, no QoS/MSE: the objective is convex in p and the
    // SCA iterate must land on the scalar minimizer.
    let topology = crate::channel::Topology::new(
        [0.0, 0.0, 0.0],
        [0.0, 10.0, 0.0],
        vec![[0.0, 9.0, 0.0]],
        vec![crate::channel::UserRole::AirFl],
    )
    .unwrap();
    let channel = ChannelRealization {
        h: vec![C64::new(1.0, 0.0)],
        r: vec![DVector::from_element(1, C64::new(0.0, 0.0))],
        r_bar: DVector::from_element(1, C64::new(0.0, 0.0)),
        round_index: 0,
    };
    let c = TaskConstants {
        mu: 1.0,
        l_smooth: 2.0,
        model_dim: 4,
        delta_norm_sq: 50.0,
        sigma2: 0.01,
        num_airfl: 1,
        initial_gap: 10.0,
    };
    let lambda = 0.3;
    let ctx = AllocContext {
        topology,
        channels: vec![channel],
        constants: c,
        lambda,
        zeta: vec![],
        mse_tol: f64::INFINITY,
        p_peak: vec![1.0],
        p_avg: vec![1.0],
        opts: OptimizerOptions { max_sca_iters: 40, ..OptimizerOptions::default() },
    };
    let cfg = StarRisConfig::all_on_side(1, Side::Reflect);
    let start = PowerSchedule::constant(&[0.9], 1, vec![1.0], vec![1.0]);
    let out = sca_power(&ctx, &[cfg], &start).unwrap();

    // golden-section oracle on the scalar objective
    let objective = |p: f64| {
        GapTerms::from_gains(&[vec![p]], lambda, &ctx.constants).upsilon
    };
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        if objective(a) < objective(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    let oracle = 0.5 * (lo + hi);
    let got = out.schedule.at(0, 0);
    assert!(
        (got - oracle).abs() <= 1e-3,
        "sca landed at {got}, golden section at {oracle}"
    );
}

#[test]
fn power_step_beats_equal_power() {
    let spec = default_spec();
    let mut done = 0;
    for seed in [1u64, 2, 3, 4, 5] {
        let ctx = context_for(&spec, seed, 3, 1e-4);
        let mut rng = rng::stream(seed, Stream::OptimizerInit);
        // a gain-ordered configuration, so the power subproblem is the
        // only thing under test
        let cfg = StarRisConfig::random(spec.num_elements, &mut rng);
        let mut configs = vec![cfg; 3];
        let mut schedule = PowerSchedule::constant(
            &vec![spec.avg_power.sqrt(); 6],
            3,
            ctx.p_peak.clone(),
            ctx.p_avg.clone(),
        );
        if !evaluate(&ctx, &configs, &schedule).order_ok.iter().all(|&b| b) {
            let Ok(out) =
                penalty_sdr_ris(&ctx, &schedule, &configs, &RisDesignMode::Restore, &mut rng)
            else {
                continue;
            };
            configs = out.configs;
        }
        if !evaluate(&ctx, &configs, &schedule).order_ok.iter().all(|&b| b) {
            continue;
        }
        let out = match sca_power(&ctx, &configs, &schedule) {
            Ok(out) => out,
            Err(AllocError::Infeasible { .. }) => continue, // unlucky draw
            Err(e) => panic!("unexpected error: {e}"),
        };
        let optimized = out.schedule;
        done += 1;
        let eval_opt = evaluate(&ctx, &configs, &optimized);
        assert!(eval_opt.feasible, "optimized schedule must satisfy all constraints");
        // reference points: the aligned start (feasible by construction on
        // these seeds) and equal power whenever it happens to be feasible
        let aligned = aligned_schedule(&ctx, &configs);
        let eval_alg = evaluate(&ctx, &configs, &aligned);
        if eval_alg.feasible {
            assert!(
                eval_opt.upsilon <= eval_alg.upsilon + 1e-9,
                "seed {seed}: optimized {} vs aligned {}",
                eval_opt.upsilon,
                eval_alg.upsilon
            );
        }
        let eval_eq = evaluate(&ctx, &configs, &schedule);
        if eval_eq.feasible {
            assert!(
                eval_opt.upsilon <= eval_eq.upsilon + 1e-9,
                "seed {seed}: optimized {} vs equal-power {}",
                eval_opt.upsilon,
                eval_eq.upsilon
            );
        }
    }
    assert!(done >= 2, "too few workable seeds: {done}");
}

#[test]
fn ris_step_tracks_brute_force_at_m3() {
    // N = K = 1 keeps the брute force cheap: 8 mode patterns x 8^3 phases.
    let mut spec = default_spec();
    spec.num_noma = 1;
    spec.num_airfl = 1;
    spec.num_elements = 3;
    // with K = 1 the aggregation noise floor is σ²; a softer receive gain
    // keeps it under the tolerance
    spec.agc_reference_gain = 3.0;
    let lambda = 0.3;
    let mut found = 0;
    for seed in 1u64..6 {
        let mut ctx = context_for(&spec, seed, 1, lambda);
        ctx.constants = TaskConstants { num_airfl: 1, ..ctx.constants };
        // align the AirFL user on its direct link; the cascade only
        // perturbs the gain at M = 3
        let direct = ctx.channels[0].h[1].norm();
        let p_air = (1.0 / direct).min(spec.avg_power.sqrt());
        let schedule = PowerSchedule::constant(
            &[spec.avg_power.sqrt(), p_air],
            1,
            ctx.p_peak.clone(),
            ctx.p_avg.clone(),
        );

        // brute force over modes and a phase grid
        let grid: Vec<f64> = (0..8).map(|i| i as f64 * std::f64::consts::TAU / 8.0).collect();
        let mut best: Option<(f64, StarRisConfig)> = None;
        for pattern in 0..8u32 {
            let beta: Vec<bool> = (0..3).map(|m| pattern >> m & 1 == 1).collect();
            for &a0 in &grid {
                for &a1 in &grid {
                    for &a2 in &grid {
                        let cfg = StarRisConfig::new(
                            beta.clone(),
                            vec![a0, a1, a2],
                            vec![a0, a1, a2],
                        );
                        let eval = evaluate(&ctx, &[cfg.clone()], &schedule);
                        if eval.feasible
                            && best.as_ref().map_or(true, |(b, _)| eval.upsilon < *b)
                        {
                            best = Some((eval.upsilon, cfg));
                        }
                    }
                }
            }
        }
        let Some((brute, _)) = best else { continue };

        let mut rng = rng::stream(seed, Stream::OptimizerInit);
        let init = vec![StarRisConfig::random(3, &mut rng)];
        let out = match penalty_sdr_ris(&ctx, &schedule, &init, &RisDesignMode::Full, &mut rng) {
            Ok(out) => out,
            // a razor-thin feasible set can defeat the rounding; skip those
            Err(AllocError::Randomization(_)) => continue,
            Err(e) => panic!("unexpected error: {e}"),
        };
        assert!(out.violation <= ctx.opts.binary_tol);
        let eval = evaluate(&ctx, &out.configs, &schedule);
        assert!(eval.feasible, "seed {seed}: output violates constraints");
        assert!(eval.order_ok.iter().all(|&b| b), "decoding order must hold");
        assert!(
            eval.upsilon <= brute * 1.05,
            "seed {seed}: sdr {} vs brute {brute}",
            eval.upsilon
        );
        found += 1;
    }
    assert!(found >= 3, "too few feasible brute-force instances: {found}");
}

#[test]
fn alternate_trace_is_monotone_and_feasible() {
    let spec = default_spec();
    let mut done = 0;
    for seed in 1u64..8 {
        let ctx = context_for(&spec, seed, 2, 1e-4);
        let mut rng = rng::stream(seed, Stream::OptimizerInit);
        let out = match alternate(&ctx, &mut rng) {
            Ok(out) => out,
            Err(AllocError::Infeasible { .. }) => continue,
            Err(e) => panic!("unexpected error: {e}"),
        };
        done += 1;
        assert!(out.evaluation.feasible);
        for w in out.upsilon_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-9, "trace must be non-increasing: {:?}", out.upsilon_trace);
        }
        // the optimized gains should sit near the aggregation target
        for z in out.evaluation.gains.iter().flatten() {
            assert!(*z > 0.5 && *z < 1.5, "effective gain {z} far from alignment");
        }
    }
    assert!(done >= 4, "too few feasible seeds: {done}");
}

#[test]
fn alternate_single_round_is_deterministic() {
    let spec = default_spec();
    let mut ctx = context_for(&spec, 1, 2, 1e-4);
    ctx.opts.max_outer = 1;
    let run = |ctx: &AllocContext| {
        let mut rng = rng::stream(1, Stream::OptimizerInit);
        alternate(ctx, &mut rng)
    };
    let (a, b) = (run(&ctx), run(&ctx));
    match (a, b) {
        (Ok(a), Ok(b)) => {
            assert_eq!(a.outer_rounds, 1);
            assert_eq!(a.upsilon_trace.len(), 2);
            assert_eq!(a.upsilon_trace, b.upsilon_trace);
            assert_eq!(a.schedule.p, b.schedule.p);
            assert_eq!(a.configs[0], b.configs[0]);
        }
        (Err(ea), Err(eb)) => assert_eq!(ea.to_string(), eb.to_string()),
        _ => panic!("nondeterministic feasibility"),
    }
}

#[test]
fn equal_power_baseline_sits_on_average_budget() {
    let spec = default_spec();
    let ctx = context_for(&spec, 2, 2, 1e-4);
    let mut rng = rng::stream(2, Stream::OptimizerInit);
    if let Ok(out) = baseline(&ctx, Scheme::EqualPower, &mut rng) {
        for u in 0..6 {
            for t in 0..2 {
                let p2 = out.schedule.at(u, t).powi(2);
                assert!((p2 - spec.avg_power).abs() < 1e-12, "p² = {p2}");
            }
        }
    }
}

#[test]
fn conventional_baseline_keeps_fixed_split() {
    let spec = default_spec();
    let ctx = context_for(&spec, 3, 2, 1e-4);
    let mut rng = rng::stream(3, Stream::OptimizerInit);
    if let Ok(out) = baseline(&ctx, Scheme::ConventionalRis, &mut rng) {
        let expect: Vec<bool> = (0..20).map(|i| i < 10).collect();
        for cfg in &out.configs {
            assert_eq!(cfg.beta, expect);
        }
    }
}

#[test]
fn random_star_baseline_keeps_pinned_phases() {
    let spec = default_spec();
    let ctx = context_for(&spec, 4, 2, 1e-4);
    let mut probe = rng::stream(4, Stream::OptimizerInit);
    let tau = std::f64::consts::TAU;
    let expect_theta: Vec<f64> = (0..20).map(|_| probe.gen::<f64>() * tau).collect();
    let mut rng = rng::stream(4, Stream::OptimizerInit);
    if let Ok(out) = baseline(&ctx, Scheme::RandomStarRis, &mut rng) {
        for cfg in &out.configs {
            for m in 0..20 {
                let d = (cfg.theta[m] - expect_theta[m]).abs();
                let d = d.min(tau - d);
                assert!(d < 1e-12, "phase {m} must stay pinned");
            }
        }
    }
}

#[test]
fn lifted_gain_agrees_with_combined_channel_through_context() {
    // end-to-end consistency of the lifting used by the design step
    let spec = default_spec();
    let ctx = context_for(&spec, 6, 1, 1e-4);
    let mut rng = rng::stream(6, Stream::OptimizerInit);
    let cfg = StarRisConfig::random(spec.num_elements, &mut rng);
    let combined = combined_channels(&ctx.channels[0], &cfg, &ctx.topology);
    for u in 0..6 {
        let side = ctx.topology.side_assignment[u];
        let q = config_vector(&cfg, side);
        let r_eff = effective_vector(&ctx.channels[0].r_bar, &ctx.channels[0].r[u]);
        let (_, _, gain) = lift_gain(&q, ctx.channels[0].h[u], &r_eff);
        assert!(
            (gain - combined[u].norm_sqr()).abs() <= 1e-9 * gain.max(1.0),
            "user {u}"
        );
        let theta = side_matrix(&cfg, side);
        assert_eq!(theta.len(), 20);
    }
}

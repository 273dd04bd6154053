// quick profiling harness
use std::time::Instant;
fn main() {
    use airstar_core::*;
    use airstar_core::alloc::*;
    use airstar_core::scenario::ScenarioSpec;
    use airstar_core::channel::ChannelParams;
    use airstar_core::signal::PowerSchedule;
    use airstar_core::bound::TaskConstants;

    let spec = ScenarioSpec {
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
        peak_power: 0.199526231496888,
        avg_power: 0.1,
        min_rate: 1.0,
        mse_tol: 0.01,
    };
    let inst = spec.instantiate(1).unwrap();
    let constants = TaskConstants {
        mu: 1.9, l_smooth: 2.3, model_dim: 10, delta_norm_sq: 2000.0,
        sigma2: inst.sigma2, num_airfl: 3, initial_gap: 385.0,
    };
    let ctx = AllocContext {
        topology: inst.topology.clone(),
        channels: inst.channels(2).unwrap(),
        constants,
        lambda: 1e-4,
        zeta: inst.zeta.clone(),
        mse_tol: spec.mse_tol,
        p_peak: inst.p_peak(),
        p_avg: inst.p_avg(),
        opts: OptimizerOptions::default(),
    };
    let mut rng = airstar_core::rng::stream(1, airstar_core::rng::Stream::Custom(0));
    let cfg = StarRisConfig::random(20, &mut rng);
    let configs = vec![cfg; 2];
    let equal = PowerSchedule::constant(&vec![0.316; 6], 2, ctx.p_peak.clone(), ctx.p_avg.clone());

    let t0 = Instant::now();
    let eval = evaluate(&ctx, &configs, &equal);
    println!("evaluate: {:?}  feasible={} upsilon={}", t0.elapsed(), eval.feasible, eval.upsilon);

    let t0 = Instant::now();
    let fs = airstar_core::alloc::sca_power(&ctx, &configs, &equal);
    println!("sca_power: {:?} ok={:?}", t0.elapsed(), fs.as_ref().map(|o| o.upsilon).map_err(|e| e.to_string()));

    let aligned = airstar_core::alloc::aligned_schedule(&ctx, &configs);
    let ev = evaluate(&ctx, &configs, &aligned);
    println!("aligned: feasible={} order={:?} qos={:?} mse={:?}", ev.feasible, ev.order_ok, ev.qos_margin, ev.mse_margin);
    let equal = aligned;
    let t0 = Instant::now();
    let r = penalty_sdr_ris(&ctx, &equal, &configs, &RisDesignMode::Restore, &mut rng);
    println!("penalty_sdr restore: {:?} ok={} iters={:?}", t0.elapsed(), r.is_ok(), r.as_ref().map(|o| (o.inner_iterations, o.admm_iterations)).ok());
    let configs2 = r.map(|o| o.configs).unwrap_or(configs.clone());
    let ev = evaluate(&ctx, &configs2, &equal);
    println!("after restore: feasible={} order={:?} qos={:?} mse={:?}", ev.feasible, ev.order_ok, ev.qos_margin, ev.mse_margin);

    let t0 = Instant::now();
    let fs = airstar_core::alloc::sca_power(&ctx, &configs2, &equal);
    println!("sca_power(2): {:?} ok={:?}", t0.elapsed(), fs.as_ref().map(|o| o.upsilon).map_err(|e| e.to_string()));
    let sched = fs.map(|o| o.schedule).unwrap_or(equal.clone());
    let ev = evaluate(&ctx, &configs2, &sched);
    println!("after power: feasible={} upsilon={}", ev.feasible, ev.upsilon);

    let t0 = Instant::now();
    let r = penalty_sdr_ris(&ctx, &sched, &configs2, &RisDesignMode::Full, &mut rng);
    println!("penalty_sdr full: {:?} ok={:?}", t0.elapsed(), r.as_ref().map(|_| ()).map_err(|e| e.to_string()));
    if let Ok(o) = &r {
        println!("  stages={} inner={} admm={} violation={:.2e} ranks={:?}", o.penalty_stages, o.inner_iterations, o.admm_iterations, o.violation, o.rank_ratios);
        let ev = evaluate(&ctx, &o.configs, &sched);
        println!("  after ris: feasible={} upsilon={}", ev.feasible, ev.upsilon);
    }

    let t0 = Instant::now();
    let mut rng2 = airstar_core::rng::stream(1, airstar_core::rng::Stream::OptimizerInit);
    let alt = alternate(&ctx, &mut rng2);
    println!("alternate: {:?} ok={}", t0.elapsed(), alt.is_ok());
    if let Ok(o) = &alt { println!("  trace={:?}", o.upsilon_trace); }
}

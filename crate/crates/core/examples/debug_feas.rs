use airstar_core::alloc::*;
use airstar_core::bound::TaskConstants;
use airstar_core::channel::ChannelParams;
use airstar_core::scenario::ScenarioSpec;
use airstar_core::signal::PowerSchedule;
use airstar_core::ris::StarRisConfig;

fn main() {
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
    let mut configs = vec![cfg; 2];
    let mut schedule = PowerSchedule::constant(&vec![0.316; 6], 2, ctx.p_peak.clone(), ctx.p_avg.clone());

    // replicate restore flow
    schedule = aligned_schedule(&ctx, &configs);
    let r = penalty_sdr_ris(&ctx, &schedule, &configs, &RisDesignMode::Restore, &mut rng).unwrap();
    configs = r.configs;
    schedule = aligned_schedule(&ctx, &configs);
    let ev = evaluate(&ctx, &configs, &schedule);
    println!("post-restore aligned: feasible={} order={:?} qos={:?} mse={:?}", ev.feasible, ev.order_ok, ev.qos_margin, ev.mse_margin);

    match feasible_start(&ctx, &configs) {
        Ok(s) => {
            let ev = evaluate(&ctx, &configs, &s);
            println!("feasible_start OK: feasible={} qos={:?} mse={:?}", ev.feasible, ev.qos_margin, ev.mse_margin);
            println!("powers round0: {:?}", s.round(0));
        }
        Err(e) => println!("feasible_start FAILED: {e}"),
    }
}

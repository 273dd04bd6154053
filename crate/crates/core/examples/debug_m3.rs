use airstar_core::alloc::*;
use airstar_core::bound::TaskConstants;
use airstar_core::channel::ChannelParams;
use airstar_core::ris::StarRisConfig;
use airstar_core::scenario::ScenarioSpec;
use airstar_core::signal::{combined_channels, PowerSchedule};

fn main() {
    let spec = ScenarioSpec {
        bs_position: [0.0, 0.0, 0.0],
        ris_position: [0.0, 50.0, 0.0],
        user_center: [0.0, 50.0],
        user_radius: 5.0,
        num_noma: 1,
        num_airfl: 1,
        num_elements: 3,
        params: ChannelParams::new(1e-3, 2.2, 2.0, 1e-11, 0.5).unwrap(),
        agc_reference_gain: 3.0,
        blocked: false,
        block_fading: true,
        sort_roles_by_gain: true,
        peak_power: 0.199526231496888,
        avg_power: 0.1,
        min_rate: 1.0,
        mse_tol: 0.01,
    };
    for seed in 1u64..6 {
        let inst = spec.instantiate(seed).unwrap();
        let constants = TaskConstants {
            mu: 1.9, l_smooth: 2.3, model_dim: 10, delta_norm_sq: 2000.0,
            sigma2: inst.sigma2, num_airfl: 1, initial_gap: 385.0,
        };
        let ctx = AllocContext {
            topology: inst.topology.clone(),
            channels: inst.channels(1).unwrap(),
            constants,
            lambda: 0.3,
            zeta: inst.zeta.clone(),
            mse_tol: spec.mse_tol,
            p_peak: inst.p_peak(),
            p_avg: inst.p_avg(),
            opts: OptimizerOptions::default(),
        };
        let direct = ctx.channels[0].h[1].norm();
        let p_air = (1.0 / direct).min(spec.avg_power.sqrt());
        let schedule = PowerSchedule::constant(
            &[spec.avg_power.sqrt(), p_air], 1, ctx.p_peak.clone(), ctx.p_avg.clone());
        println!("seed {seed}: sides={:?} |h0|={:.3} |h1|={:.3} p_air={:.4} sigma2={:.4}",
            ctx.topology.side_assignment, ctx.channels[0].h[0].norm(), direct, p_air, inst.sigma2);
        // all-reflect config with zero phases as a probe
        let cfg = StarRisConfig::all_on_side(3, airstar_core::channel::Side::Reflect);
        let ev = evaluate(&ctx, &[cfg.clone()], &schedule);
        let combined = combined_channels(&ctx.channels[0], &cfg, &ctx.topology);
        println!("  all-reflect: feasible={} order={:?} qos={:?} mse={:?} z={:.4}",
            ev.feasible, ev.order_ok, ev.qos_margin, ev.mse_margin, combined[1].norm()*p_air);
        let mut rng = airstar_core::rng::stream(seed, airstar_core::rng::Stream::OptimizerInit);
        let init = vec![StarRisConfig::random(3, &mut rng)];
        match penalty_sdr_ris(&ctx, &schedule, &init, &RisDesignMode::Full, &mut rng) {
            Ok(out) => {
                let ev = evaluate(&ctx, &out.configs, &schedule);
                println!("  sdr OK: viol={:.1e} ranks={:?} feasible={} upsilon={:.4}",
                    out.violation, out.rank_ratios, ev.feasible, ev.upsilon);
            }
            Err(e) => println!("  sdr ERR: {e}"),
        }
    }
}

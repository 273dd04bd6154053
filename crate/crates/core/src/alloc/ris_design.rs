//! Penalty-based SDR design of the STAR-RIS configuration at fixed powers.
//!
//! All users on one side of the surface share the same configuration
//! vector, so the relaxation carries one lifted Hermitian block per side
//! (embedded into a real symmetric block), linked to the shared relaxed
//! mode vector `β ∈ [0, 1]^M` through its diagonal. Per-user channel
//! expressions are traces of per-user data matrices against the user's
//! side block. An inner SCA loop minimizes the linearized gap objective
//! plus the linearized binary penalty `χ Σ β(1−β)`; the outer loop scales
//! `χ` until the mode violation `max β(1−β)` falls below tolerance. The
//! relaxed solution is rounded by leading-eigenvector extraction and, when
//! a block is not rank one or the rounding is infeasible, by Gaussian
//! randomization.

use nalgebra::DMatrix;
use rand::Rng;

use crate::bound::{grad_upsilon_q, GapTerms};
use crate::channel::Side;
use crate::ris::{
    config_vector, dominant_rank_one, effective_vector, gain_lift, gaussian_randomization,
    lift_gap_terms, lift_mse, lifted_outer, LiftedGapTerms, StarRisConfig,
};
use crate::signal::{combined_channels, decoding_order_ok, PowerSchedule};
use crate::solver::{
    embed_hermitian, extract_hermitian, ConstraintKind, PreparedSdp, SdpConstraint, SdpWarmStart,
};
use crate::C64;

use super::{AllocContext, AllocError};

/// Which degrees of freedom the configuration step may touch.
#[derive(Debug, Clone)]
pub enum RisDesignMode {
    /// Modes and both phase sets free.
    Full,
    /// Element modes pinned (conventional reflect/transmit split).
    FixedModes(Vec<bool>),
    /// Phases pinned to the given values; only modes are optimized.
    FixedPhases { theta: Vec<f64>, phi: Vec<f64> },
    /// Feasibility restoration: minimize the common constraint slack
    /// instead of the gap objective.
    Restore,
}

#[derive(Debug, Clone)]
pub struct RisDesignOutcome {
    pub configs: Vec<StarRisConfig>,
    /// `max_m β(1−β)` of the relaxed solution at termination.
    pub violation: f64,
    /// Per-round worst eigenvalue ratio `λ₂/λ₁` over the side blocks.
    pub rank_ratios: Vec<f64>,
    pub penalty_stages: usize,
    pub inner_iterations: usize,
    /// Total splitting iterations spent across all solves.
    pub admm_iterations: usize,
}

/// Channel data of one round in lifted form.
struct RoundData {
    /// Per-user direct coefficients.
    h: Vec<C64>,
    /// Per-user gain data matrices `R̃_u`.
    gain: Vec<DMatrix<C64>>,
    /// Per-AirFL-user aggregation-error data `(R̂_k, ĥ_k)`.
    mse: Vec<(DMatrix<C64>, C64)>,
    /// Per-AirFL-user gap lifts.
    gap: Vec<LiftedGapTerms>,
    /// Fixed squared amplitudes of this round.
    rho: Vec<f64>,
}

fn round_data(
    ctx: &AllocContext,
    schedule: &PowerSchedule,
    init: &StarRisConfig,
    t: usize,
) -> RoundData {
    let chan = &ctx.channels[t];
    let n_users = ctx.topology.num_users();
    let n_noma = ctx.num_noma();
    // AirFL users absorb their combined-channel phase at the linearization
    // configuration, so the lifted alignment forms see a real effective
    // channel there; for any other configuration the lifted misalignment
    // upper-bounds the physical one.
    let combined = combined_channels(chan, init, &ctx.topology);
    let mut h = Vec::with_capacity(n_users);
    let mut gain = Vec::with_capacity(n_users);
    let mut mse = Vec::new();
    let mut gap = Vec::new();
    let mut rho = Vec::with_capacity(n_users);
    for u in 0..n_users {
        let r = effective_vector(&chan.r_bar, &chan.r[u]);
        h.push(chan.h[u]);
        gain.push(gain_lift(&r, chan.h[u]));
        let p = schedule.at(u, t);
        rho.push(p * p);
        if u >= n_noma {
            let rotation = if combined[u].norm() > 1e-300 {
                C64::from_polar(1.0, -combined[u].arg())
            } else {
                C64::new(1.0, 0.0)
            };
            let h_rot = chan.h[u] * rotation;
            let r_rot = &r * rotation;
            mse.push(lift_mse(&r_rot, p, h_rot));
            gap.push(lift_gap_terms(
                &r_rot,
                p,
                h_rot,
                ctx.constants.mu,
                ctx.constants.l_smooth,
                ctx.lambda,
                ctx.constants.num_airfl,
            ));
        }
    }
    RoundData { h, gain, mse, gap, rho }
}

/// Hermitian matrix whose trace against `Q` reads `Re(e^{jθ} Q[m, c])`.
fn corner_phase_matrix(dim: usize, m: usize, theta: f64) -> DMatrix<C64> {
    let c = dim - 1;
    let mut a = DMatrix::from_element(dim, dim, C64::new(0.0, 0.0));
    let w = C64::from_polar(0.5, theta);
    a[(c, m)] = w; // contributes ½ e^{jθ} Q_mc through tr(E_cm Q)
    a[(m, c)] = w.conj();
    a
}

fn half_embed(a: &DMatrix<C64>) -> DMatrix<f64> {
    embed_hermitian(a) * 0.5
}

/// Block bookkeeping: one lifted block per side that actually has users.
struct SideBlocks {
    /// Block index per side, `[Reflect, Transmit]`.
    index: [Option<usize>; 2],
    sides: Vec<Side>,
}

impl SideBlocks {
    fn new(ctx: &AllocContext) -> Self {
        let mut index = [None, None];
        let mut sides = Vec::new();
        for side in [Side::Reflect, Side::Transmit] {
            if ctx.topology.side_assignment.iter().any(|&s| s == side) {
                index[(side == Side::Transmit) as usize] = Some(sides.len());
                sides.push(side);
            }
        }
        Self { index, sides }
    }

    fn of_side(&self, side: Side) -> usize {
        self.index[(side == Side::Transmit) as usize].expect("side has users")
    }

    fn of_user(&self, ctx: &AllocContext, u: usize) -> usize {
        self.of_side(ctx.topology.side_assignment[u])
    }

    fn count(&self) -> usize {
        self.sides.len()
    }
}

/// Constraint rows of one round's relaxation (objective-independent).
fn build_round_constraints(
    ctx: &AllocContext,
    data: &RoundData,
    blocks: &SideBlocks,
    mode: &RisDesignMode,
    m_elems: usize,
) -> Vec<SdpConstraint> {
    let n_users = ctx.topology.num_users();
    let n_noma = ctx.num_noma();
    let k_users = ctx.num_airfl();
    let dim = m_elems + 1;
    let slack = matches!(mode, RisDesignMode::Restore);
    let slack_idx = m_elems; // scalar layout: [β; (slack)]
    // target the interior so that rank-one rounding stays feasible
    let backoff = if slack { 0.0 } else { ctx.opts.rounding_backoff };
    let mut rows = Vec::new();

    // diagonal links and corner pinning, once per side block
    for (blk, &side) in blocks.sides.iter().enumerate() {
        let reflect = side == Side::Reflect;
        for m in 0..m_elems {
            let mut e = DMatrix::from_element(dim, dim, C64::new(0.0, 0.0));
            e[(m, m)] = C64::new(1.0, 0.0);
            let (coef, rhs) = if reflect { (-1.0, 0.0) } else { (1.0, 1.0) };
            rows.push(SdpConstraint {
                block_terms: vec![(blk, half_embed(&e))],
                scalar_terms: vec![(m, coef)],
                rhs,
                kind: ConstraintKind::Eq,
            });
        }
        let mut e = DMatrix::from_element(dim, dim, C64::new(0.0, 0.0));
        e[(m_elems, m_elems)] = C64::new(1.0, 0.0);
        rows.push(SdpConstraint {
            block_terms: vec![(blk, half_embed(&e))],
            scalar_terms: vec![],
            rhs: 1.0,
            kind: ConstraintKind::Eq,
        });

        // pinned phases fix the corner column of the side block
        if let RisDesignMode::FixedPhases { theta, phi } = mode {
            for m in 0..m_elems {
                let angle = if reflect { theta[m] } else { phi[m] };
                let (coef, rhs) = if reflect { (-1.0, 0.0) } else { (1.0, 1.0) };
                rows.push(SdpConstraint {
                    block_terms: vec![(blk, half_embed(&corner_phase_matrix(dim, m, angle)))],
                    scalar_terms: vec![(m, coef)],
                    rhs,
                    kind: ConstraintKind::Eq,
                });
                rows.push(SdpConstraint {
                    block_terms: vec![(
                        blk,
                        half_embed(&corner_phase_matrix(
                            dim,
                            m,
                            angle + std::f64::consts::FRAC_PI_2,
                        )),
                    )],
                    scalar_terms: vec![],
                    rhs: 0.0,
                    kind: ConstraintKind::Eq,
                });
            }
        }
    }

    // decoding-order chain over the lifted gains
    if n_noma >= 1 {
        let mut pairs: Vec<(usize, usize)> = (1..n_noma).map(|n| (n - 1, n)).collect();
        pairs.extend((n_noma..n_users).map(|k| (n_noma - 1, k)));
        for (strong, weak) in pairs {
            let grow = 1.0 + backoff;
            let mut row = SdpConstraint {
                block_terms: vec![
                    (blocks.of_user(ctx, weak), half_embed(&(&data.gain[weak] * C64::from(grow)))),
                    (
                        blocks.of_user(ctx, strong),
                        half_embed(&(&data.gain[strong] * C64::from(-1.0))),
                    ),
                ],
                scalar_terms: vec![],
                rhs: data.h[strong].norm_sqr() - grow * data.h[weak].norm_sqr(),
                kind: ConstraintKind::Le,
            };
            if slack {
                row.scalar_terms.push((slack_idx, -1.0));
            }
            rows.push(row);
        }
    }

    // QoS rows at fixed powers
    for n in 0..n_noma {
        let zeta = ctx.zeta[n] * (1.0 + backoff);
        let mut block_terms = vec![(
            blocks.of_user(ctx, n),
            half_embed(&(&data.gain[n] * C64::from(-data.rho[n]))),
        )];
        let mut rhs = data.rho[n] * data.h[n].norm_sqr() - zeta * ctx.constants.sigma2;
        for u in n + 1..n_users {
            block_terms.push((
                blocks.of_user(ctx, u),
                half_embed(&(&data.gain[u] * C64::from(zeta * data.rho[u]))),
            ));
            rhs -= zeta * data.rho[u] * data.h[u].norm_sqr();
        }
        let mut row =
            SdpConstraint { block_terms, scalar_terms: vec![], rhs, kind: ConstraintKind::Le };
        if slack {
            row.scalar_terms.push((slack_idx, -1.0));
        }
        rows.push(row);
    }

    // aggregation-error tolerance
    if ctx.mse_tol.is_finite() {
        let kf = k_users as f64;
        let mut rhs = ctx.mse_tol * (1.0 - backoff) * kf * kf - ctx.constants.sigma2;
        let mut block_terms = Vec::with_capacity(k_users);
        for (k, (r_hat, h_hat)) in data.mse.iter().enumerate() {
            block_terms.push((blocks.of_user(ctx, n_noma + k), half_embed(r_hat)));
            rhs -= h_hat.norm_sqr();
        }
        let mut row =
            SdpConstraint { block_terms, scalar_terms: vec![], rhs, kind: ConstraintKind::Le };
        if slack {
            row.scalar_terms.push((slack_idx, -1.0));
        }
        rows.push(row);
    }

    rows
}

/// Exact feasibility check of one candidate round configuration, and the
/// canonical objective with that round's configuration substituted.
struct RoundEvaluator<'a> {
    ctx: &'a AllocContext,
    schedule: &'a PowerSchedule,
    /// Current per-round configs; the evaluated round is substituted.
    configs: Vec<StarRisConfig>,
    round: usize,
    restore: bool,
}

impl RoundEvaluator<'_> {
    fn score(&self, cfg: &StarRisConfig) -> Option<f64> {
        let ctx = self.ctx;
        let t = self.round;
        let combined = combined_channels(&ctx.channels[t], cfg, &ctx.topology);
        let gains_sq: Vec<f64> = combined.iter().map(|h| h.norm_sqr()).collect();
        let powers = self.schedule.round(t);
        let n_noma = ctx.num_noma();
        let k_users = ctx.num_airfl();
        let tol = ctx.opts.feas_tol;

        let order = decoding_order_ok(&gains_sq, n_noma, k_users);
        let mut qos_violation = 0.0f64;
        for n in 0..n_noma {
            let g =
                crate::signal::sinr(n, &gains_sq, &powers, ctx.constants.sigma2, n_noma).unwrap();
            qos_violation = qos_violation.max((ctx.zeta[n] - g) / ctx.zeta[n].max(1e-12));
        }
        let z = crate::signal::effective_gains(&combined[n_noma..], &powers[n_noma..]);
        let mse = crate::signal::aggregation_mse(&z, ctx.constants.sigma2, k_users);
        let mse_violation =
            if ctx.mse_tol.is_finite() { (mse - ctx.mse_tol) / ctx.mse_tol } else { 0.0 };

        if self.restore {
            let order_pen = if order { 0.0 } else { 10.0 };
            return Some(order_pen + qos_violation.max(0.0) + mse_violation.max(0.0));
        }
        if !order || qos_violation > tol || mse_violation > tol {
            return None;
        }
        // canonical objective with this round's gains substituted
        let mut gains = Vec::with_capacity(ctx.rounds());
        for tt in 0..ctx.rounds() {
            if tt == t {
                gains.push(z.clone());
            } else {
                let c = combined_channels(&ctx.channels[tt], &self.configs[tt], &ctx.topology);
                let p = self.schedule.round(tt);
                gains.push(crate::signal::effective_gains(&c[n_noma..], &p[n_noma..]));
            }
        }
        Some(GapTerms::from_gains(&gains, ctx.lambda, &ctx.constants).upsilon)
    }
}

fn overridden(cfg: &StarRisConfig, mode: &RisDesignMode) -> StarRisConfig {
    match mode {
        RisDesignMode::FixedModes(beta) => {
            StarRisConfig::new(beta.clone(), cfg.theta.clone(), cfg.phi.clone())
        }
        RisDesignMode::FixedPhases { theta, phi } => {
            StarRisConfig::new(cfg.beta.clone(), theta.clone(), phi.clone())
        }
        _ => cfg.clone(),
    }
}

/// Algorithm: inner SCA sweeps over the per-round relaxations at growing
/// penalty weight, then rank-one extraction with randomization fallback.
pub fn penalty_sdr_ris(
    ctx: &AllocContext,
    schedule: &PowerSchedule,
    init: &[StarRisConfig],
    mode: &RisDesignMode,
    rng: &mut impl Rng,
) -> Result<RisDesignOutcome, AllocError> {
    let rounds = ctx.rounds();
    assert_eq!(init.len(), rounds);
    let m_elems = ctx.channels[0].num_elements();
    let n_noma = ctx.num_noma();
    let dim = m_elems + 1;
    let restore = matches!(mode, RisDesignMode::Restore);
    let blocks = SideBlocks::new(ctx);

    let data: Vec<RoundData> =
        (0..rounds).map(|t| round_data(ctx, schedule, &init[t], t)).collect();

    // under block fading with a stationary schedule, every round's problem
    // is identical: solve one representative and replicate
    let same_as_first = |t: usize| -> bool {
        data[t].rho == data[0].rho
            && init[t] == init[0]
            && ctx.channels[t].h == ctx.channels[0].h
            && ctx.channels[t].r_bar == ctx.channels[0].r_bar
    };
    let distinct: Vec<usize> = (0..rounds).filter(|&t| t == 0 || !same_as_first(t)).collect();
    let all_identical = distinct.len() == 1 && rounds > 1;

    // scalar variables: relaxed modes, plus the slack in restore mode
    let mut scalar_bounds: Vec<(f64, f64)> = match mode {
        RisDesignMode::FixedModes(beta) => {
            beta.iter().map(|&b| (b as u8 as f64, b as u8 as f64)).collect()
        }
        _ => vec![(0.0, 1.0); m_elems],
    };
    if restore {
        scalar_bounds.push((-10.0, 1e3));
    }

    let mut constraint_rows: Vec<Option<Vec<SdpConstraint>>> = (0..rounds).map(|_| None).collect();
    let mut prepared: Vec<Option<PreparedSdp>> = (0..rounds).map(|_| None).collect();
    for &t in &distinct {
        let rows = build_round_constraints(ctx, &data[t], &blocks, mode, m_elems);
        prepared[t] =
            Some(PreparedSdp::new(vec![2 * dim; blocks.count()], scalar_bounds.clone(), &rows));
        constraint_rows[t] = Some(rows);
    }

    // relaxed side-block state, initialized from the starting configurations
    let mut q_state: Vec<Vec<DMatrix<C64>>> = (0..rounds)
        .map(|t| {
            blocks
                .sides
                .iter()
                .map(|&side| lifted_outer(&config_vector(&init[t], side)))
                .collect()
        })
        .collect();
    let mut beta_state: Vec<Vec<f64>> =
        (0..rounds).map(|t| init[t].beta_vec(Side::Reflect)).collect();
    // seed the splitting state with the (cone-feasible) lifted start
    let mut warm: Vec<Option<SdpWarmStart>> = (0..rounds)
        .map(|t| {
            let (Some(prep), Some(rows)) = (&prepared[t], &constraint_rows[t]) else {
                return None;
            };
            let mats: Vec<_> = q_state[t].iter().map(embed_hermitian).collect();
            let mut scalars = beta_state[t].clone();
            if restore {
                scalars.push(1.0);
            }
            if let RisDesignMode::FixedModes(beta) = mode {
                scalars = beta.iter().map(|&b| b as u8 as f64).collect();
            }
            Some(prep.warm_from_state(&mats, &scalars, rows))
        })
        .collect();

    // per-user view of the side blocks, as the objective gradient expects
    let user_q_view = |q_state: &Vec<Vec<DMatrix<C64>>>| -> Vec<Vec<DMatrix<C64>>> {
        (0..rounds)
            .map(|t| {
                (0..ctx.num_airfl())
                    .map(|k| q_state[t][blocks.of_user(ctx, n_noma + k)].clone())
                    .collect()
            })
            .collect()
    };

    let gap_lifts: Vec<Vec<LiftedGapTerms>> = data.iter().map(|d| d.gap.clone()).collect();

    // one objective normalization for the whole call
    let mut obj_scale = 0.0f64;
    {
        let view = user_q_view(&q_state);
        for t in 0..rounds {
            for k in 0..ctx.num_airfl() {
                let d = grad_upsilon_q(&gap_lifts, &view, ctx.lambda, &ctx.constants, t, k);
                obj_scale = obj_scale.max(d.iter().fold(0.0f64, |a, v| a.max(v.norm())));
            }
        }
    }
    if obj_scale <= 1e-300 {
        obj_scale = 1.0;
    }

    let mut chi = ctx.opts.penalty_initial;
    let mut stages = 0usize;
    let mut inner_total = 0usize;
    let mut admm_total = 0usize;
    let mut violation = f64::INFINITY;
    let max_stages = if restore { 1 } else { ctx.opts.max_penalty_stages };
    // the restore objective is fixed, so one inner pass is exact
    let max_inner = if restore { 1 } else { ctx.opts.max_inner_iters };
    let penalize = matches!(mode, RisDesignMode::Full | RisDesignMode::FixedPhases { .. });

    'outer: for _stage in 0..max_stages {
        stages += 1;
        let mut prev_psi = f64::INFINITY;
        for _inner in 0..max_inner {
            inner_total += 1;
            let beta_prev: Vec<Vec<f64>> = beta_state.clone();
            let mut psi = 0.0;
            for &t in &distinct {
                let zero = DMatrix::zeros(2 * dim, 2 * dim);
                let mut objective_blocks: Vec<DMatrix<f64>> = vec![zero; blocks.count()];
                if !restore {
                    let view = user_q_view(&q_state);
                    for k in 0..ctx.num_airfl() {
                        let d =
                            grad_upsilon_q(&gap_lifts, &view, ctx.lambda, &ctx.constants, t, k);
                        objective_blocks[blocks.of_user(ctx, n_noma + k)] +=
                            half_embed(&d) / obj_scale;
                    }
                }
                let mut objective_scalars = vec![0.0; scalar_bounds.len()];
                if restore {
                    objective_scalars[m_elems] = 1.0;
                } else if penalize {
                    for m in 0..m_elems {
                        objective_scalars[m] = chi * (1.0 - 2.0 * beta_state[t][m]);
                    }
                }

                let budget =
                    if restore { ctx.opts.sdp_max_iter * 2 / 3 } else { ctx.opts.sdp_max_iter };
                let (sol, warm_out) = prepared[t].as_ref().unwrap().solve(
                    &objective_blocks,
                    &objective_scalars,
                    ctx.opts.sdp_tol,
                    budget,
                    warm[t].as_ref(),
                );
                warm[t] = Some(warm_out);
                admm_total += sol.iterations;
                for blk in 0..blocks.count() {
                    q_state[t][blk] = extract_hermitian(&sol.blocks[blk]);
                }
                for m in 0..m_elems {
                    beta_state[t][m] = sol.scalars[m];
                }
                psi += sol.objective
                    + if penalize {
                        chi * beta_state[t].iter().map(|&b| b * b).sum::<f64>()
                    } else {
                        0.0
                    };
            }
            if all_identical {
                for t in 1..rounds {
                    q_state[t] = q_state[0].clone();
                    beta_state[t] = beta_state[0].clone();
                }
            }
            let state_shift = beta_state
                .iter()
                .zip(&beta_prev)
                .flat_map(|(a, b)| a.iter().zip(b).map(|(x, y)| (x - y).abs()))
                .fold(0.0f64, f64::max);
            if (psi - prev_psi).abs() <= ctx.opts.penalty_obj_tol * psi.abs().max(1.0)
                || state_shift <= 1e-4
            {
                prev_psi = psi;
                break;
            }
            prev_psi = psi;
        }
        let _ = prev_psi;

        violation = beta_state
            .iter()
            .flat_map(|b| b.iter().map(|&v| v * (1.0 - v)))
            .fold(0.0f64, f64::max);
        if !penalize || violation <= ctx.opts.binary_tol {
            break 'outer;
        }
        chi *= ctx.opts.penalty_scale;
    }

    // extraction: rank check per side block, rounding, randomization
    let mut configs = init.to_vec();
    let mut rank_ratios = Vec::with_capacity(rounds);
    for t in 0..rounds {
        if all_identical && t > 0 {
            configs[t] = configs[0].clone();
            rank_ratios.push(rank_ratios[0]);
            continue;
        }
        let block_of = |side: Side| -> Option<&DMatrix<C64>> {
            blocks.index[(side == Side::Transmit) as usize].map(|b| &q_state[t][b])
        };
        let q_r = block_of(Side::Reflect);
        let q_t = block_of(Side::Transmit);

        let mut worst_ratio = 0.0f64;
        for q in [&q_r, &q_t].into_iter().flatten() {
            if let Some((_, ratio)) = dominant_rank_one(q) {
                worst_ratio = worst_ratio.max(ratio);
            } else {
                worst_ratio = f64::INFINITY;
            }
        }
        rank_ratios.push(worst_ratio);

        let evaluator =
            RoundEvaluator { ctx, schedule, configs: configs.clone(), round: t, restore };
        let evaluate = |cfg: &StarRisConfig| evaluator.score(&overridden(cfg, mode));

        // deterministic rounding first; randomize when the lift is not rank
        // one or the rounding is infeasible
        let deterministic = gaussian_randomization(q_r, q_t, 0, evaluate, rng);
        let chosen = match deterministic {
            Ok(cfg) if worst_ratio <= ctx.opts.rank_one_ratio => Ok(cfg),
            _ => gaussian_randomization(
                q_r,
                q_t,
                ctx.opts.num_randomization,
                |cfg| evaluator.score(&overridden(cfg, mode)),
                rng,
            ),
        };
        // the starting configuration is always a legitimate candidate; keep
        // it when it scores better or when every rounding fails
        let init_cfg = overridden(&init[t], mode);
        let init_score = evaluator.score(&init_cfg);
        configs[t] = match (chosen, init_score) {
            (Ok(cfg), Some(s_init)) => {
                let s_new = evaluator.score(&overridden(&cfg, mode));
                if s_new.map_or(true, |s| s_init <= s) {
                    init_cfg
                } else {
                    overridden(&cfg, mode)
                }
            }
            (Ok(cfg), None) => overridden(&cfg, mode),
            (Err(_), Some(_)) => init_cfg,
            (Err(e), None) => return Err(e.into()),
        };
    }

    Ok(RisDesignOutcome {
        configs,
        violation,
        rank_ratios,
        penalty_stages: stages,
        inner_iterations: inner_total,
        admm_iterations: admm_total,
    })
}

/// Lifted per-user view of a configuration: the user's side lift plus its
/// gain data matrix and mode-indicator diagonal.
pub fn lifted_view(
    ctx: &AllocContext,
    cfg: &StarRisConfig,
    round: usize,
    user: usize,
) -> crate::ris::LiftedRis {
    let side = ctx.topology.side_assignment[user];
    let q = lifted_outer(&config_vector(cfg, side));
    let r = effective_vector(&ctx.channels[round].r_bar, &ctx.channels[round].r[user]);
    crate::ris::LiftedRis {
        q,
        r_tilde: gain_lift(&r, ctx.channels[round].h[user]),
        beta_vec: cfg.beta_vec(side),
    }
}

//! Successive signal processing at the BS.
//!
//! All users transmit concurrently. The BS first decodes the NOMA users in
//! index order, subtracting each decoded signal, then treats the residual
//! superposition of AirFL signals as the (noisy) over-the-air aggregate.
//! The premise is that the STAR-RIS keeps NOMA users "strong" and AirFL
//! users "weak" in the sense of the combined channel gains.
//!
//! AirFL users absorb the phase of their combined channel into the transmit
//! coefficient, so their effective gains `h̄_k p_k` are real non-negative;
//! the power budgets constrain the magnitude `p_k`.

use rand::Rng;
use thiserror::Error;

use crate::channel::{ChannelRealization, Side, Topology};
use crate::ris::{side_matrix, StarRisConfig};
use crate::rng::standard_complex;
use crate::C64;

#[derive(Debug, Error)]
pub enum SignalError {
    #[error("decoding order violated: user {strong} has smaller gain than user {weak}")]
    OrderViolation { strong: usize, weak: usize },
    #[error("user index {0} outside the NOMA range 0..{1}")]
    NomaIndexOutOfRange(usize, usize),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("power schedule violates {0}")]
    PowerBudget(String),
}

/// Per-user, per-round transmit amplitudes with their budgets.
#[derive(Debug, Clone)]
pub struct PowerSchedule {
    /// `p[u][t]`, non-negative sqrt-power amplitude.
    pub p: Vec<Vec<f64>>,
    /// Per-user peak power budget (linear).
    pub p_peak: Vec<f64>,
    /// Per-user average power budget (linear).
    pub p_avg: Vec<f64>,
}

impl PowerSchedule {
    pub fn constant(levels: &[f64], rounds: usize, p_peak: Vec<f64>, p_avg: Vec<f64>) -> Self {
        Self { p: levels.iter().map(|&v| vec![v; rounds]).collect(), p_peak, p_avg }
    }

    pub fn num_users(&self) -> usize {
        self.p.len()
    }

    pub fn rounds(&self) -> usize {
        self.p.first().map(|r| r.len()).unwrap_or(0)
    }

    pub fn at(&self, user: usize, round: usize) -> f64 {
        self.p[user][round]
    }

    /// Amplitudes of all users in one round.
    pub fn round(&self, t: usize) -> Vec<f64> {
        self.p.iter().map(|row| row[t]).collect()
    }

    /// Check the peak constraint per round and the average constraint over
    /// the horizon, within `tol` (relative to the budget).
    pub fn validate(&self, tol: f64) -> Result<(), SignalError> {
        for (u, row) in self.p.iter().enumerate() {
            for (t, &p) in row.iter().enumerate() {
                if p < 0.0 {
                    return Err(SignalError::PowerBudget(format!(
                        "non-negativity: p[{u}][{t}] = {p}"
                    )));
                }
                if p * p > self.p_peak[u] * (1.0 + tol) {
                    return Err(SignalError::PowerBudget(format!(
                        "peak budget: p[{u}][{t}]^2 = {} > {}",
                        p * p,
                        self.p_peak[u]
                    )));
                }
            }
            let avg = row.iter().map(|&p| p * p).sum::<f64>() / row.len().max(1) as f64;
            if avg > self.p_avg[u] * (1.0 + tol) {
                return Err(SignalError::PowerBudget(format!(
                    "average budget: user {u} mean power {avg} > {}",
                    self.p_avg[u]
                )));
            }
        }
        Ok(())
    }
}

/// Combined channels `h̄_u` of all users under one configuration.
pub fn combined_channels(
    chan: &ChannelRealization,
    cfg: &StarRisConfig,
    topology: &Topology,
) -> Vec<C64> {
    let refl = side_matrix(cfg, Side::Reflect);
    let trans = side_matrix(cfg, Side::Transmit);
    (0..chan.num_users())
        .map(|u| {
            let theta = match topology.side_assignment[u] {
                Side::Reflect => &refl,
                Side::Transmit => &trans,
            };
            let cascade: C64 = (0..chan.num_elements())
                .map(|m| chan.r_bar[m].conj() * theta[m] * chan.r[u][m])
                .sum();
            chan.h[u] + cascade
        })
        .collect()
}

/// Real effective gains `|h̄_u| p_u` for one round.
pub fn effective_gains(combined: &[C64], powers: &[f64]) -> Vec<f64> {
    combined.iter().zip(powers).map(|(h, p)| h.norm() * p).collect()
}

/// Check the gain ordering required by the SIC chain: NOMA gains
/// non-increasing in index and every AirFL gain below the last NOMA gain.
/// Ties are allowed.
pub fn decoding_order_ok(gains: &[f64], n_noma: usize, n_airfl: usize) -> bool {
    assert_eq!(gains.len(), n_noma + n_airfl);
    for i in 1..n_noma {
        if gains[i - 1] < gains[i] {
            return false;
        }
    }
    if n_noma > 0 {
        let last = gains[n_noma - 1];
        for k in n_noma..gains.len() {
            if last < gains[k] {
                return false;
            }
        }
    }
    true
}

/// SINR of NOMA user `n` under the fixed decoding order: all users with a
/// larger index interfere.
pub fn sinr(
    n: usize,
    gains: &[f64],
    powers: &[f64],
    sigma2: f64,
    n_noma: usize,
) -> Result<f64, SignalError> {
    if n >= n_noma {
        return Err(SignalError::NomaIndexOutOfRange(n, n_noma));
    }
    if gains.len() != powers.len() {
        return Err(SignalError::DimensionMismatch(format!(
            "{} gains vs {} powers",
            gains.len(),
            powers.len()
        )));
    }
    let interference: f64 = (n + 1..gains.len()).map(|u| gains[u] * powers[u] * powers[u]).sum();
    Ok(gains[n] * powers[n] * powers[n] / (interference + sigma2))
}

/// Per-user SINRs, rates and the sum rate of the NOMA users.
#[derive(Debug, Clone)]
pub struct SinrReport {
    pub gamma: Vec<f64>,
    pub rate: Vec<f64>,
    pub sum_rate: f64,
}

impl SinrReport {
    pub fn compute(
        gains: &[f64],
        powers: &[f64],
        sigma2: f64,
        n_noma: usize,
    ) -> Result<Self, SignalError> {
        let gamma: Vec<f64> = (0..n_noma)
            .map(|n| sinr(n, gains, powers, sigma2, n_noma))
            .collect::<Result<_, _>>()?;
        let rate: Vec<f64> = gamma.iter().map(|&g| (1.0 + g).log2()).collect();
        let sum_rate = rate.iter().sum();
        Ok(Self { gamma, rate, sum_rate })
    }
}

/// Closed-form aggregation error of the over-the-air average:
/// `(1/K²) (Σ_k |z_k − 1|² + σ²)` for real effective gains `z_k`.
pub fn aggregation_mse(effective: &[f64], sigma2: f64, k_users: usize) -> f64 {
    assert!(k_users >= 1);
    let misalignment: f64 = effective.iter().map(|&z| (z - 1.0) * (z - 1.0)).sum();
    (misalignment + sigma2) / (k_users * k_users) as f64
}

/// How the SIC stage treats a NOMA user whose SINR is too low.
#[derive(Debug, Clone)]
pub enum SicPolicy {
    /// Perfect subtraction of every NOMA signal. Callers must have enforced
    /// the decoding order; a violated order is an error.
    Genie,
    /// Decode user `n` only when its stage SINR reaches `zeta[n]`;
    /// undecoded signals stay in the residual and corrupt the aggregate.
    Threshold { zeta: Vec<f64> },
}

/// Result of one concurrent uplink round at symbol level.
#[derive(Debug, Clone)]
pub struct RoundOutput {
    /// Recovered NOMA symbols (`None` when the stage failed to decode).
    pub decoded: Vec<Option<C64>>,
    /// Residual signal after SIC.
    pub y_hat: C64,
    /// Over-the-air average `ŷ / K`.
    pub s_hat: C64,
    /// Stage SINRs actually seen by the SIC chain.
    pub stage_sinr: Vec<f64>,
}

/// Simulate one superposition round: form the received signal, run SIC over
/// the NOMA users, and average the residual for the AirFL aggregate.
///
/// `symbols[u]` is the unit-variance symbol of user `u`; AirFL users are
/// phase-aligned so their contribution enters with gain `|h̄_k| p_k`.
pub fn simulate_round(
    combined: &[C64],
    powers: &[f64],
    symbols: &[C64],
    sigma2: f64,
    n_noma: usize,
    policy: &SicPolicy,
    rng: &mut impl Rng,
) -> Result<RoundOutput, SignalError> {
    let n_users = combined.len();
    if powers.len() != n_users || symbols.len() != n_users {
        return Err(SignalError::DimensionMismatch(format!(
            "{} channels, {} powers, {} symbols",
            n_users,
            powers.len(),
            symbols.len()
        )));
    }
    let k_users = n_users - n_noma;
    let gains: Vec<f64> = combined.iter().map(|h| h.norm_sqr()).collect();
    if let SicPolicy::Genie = policy {
        if !decoding_order_ok(&gains, n_noma, k_users) {
            let (strong, weak) = first_violation(&gains, n_noma);
            return Err(SignalError::OrderViolation { strong, weak });
        }
    }

    // received contributions; AirFL users pre-rotate their symbols
    let contrib: Vec<C64> = (0..n_users)
        .map(|u| {
            if u < n_noma {
                combined[u] * powers[u] * symbols[u]
            } else {
                C64::from(combined[u].norm() * powers[u]) * symbols[u]
            }
        })
        .collect();
    let noise =
        if sigma2 > 0.0 { standard_complex(rng) * sigma2.sqrt() } else { C64::new(0.0, 0.0) };
    let mut residual: C64 = contrib.iter().sum::<C64>() + noise;

    let mut decoded = Vec::with_capacity(n_noma);
    let mut stage_sinr = Vec::with_capacity(n_noma);
    let mut undecoded_power = 0.0f64;
    for n in 0..n_noma {
        let tail: f64 = (n + 1..n_users).map(|u| gains[u] * powers[u] * powers[u]).sum();
        let gamma = gains[n] * powers[n] * powers[n] / (tail + undecoded_power + sigma2);
        stage_sinr.push(gamma);
        let ok = match policy {
            SicPolicy::Genie => true,
            SicPolicy::Threshold { zeta } => gamma >= zeta[n],
        };
        if ok {
            residual -= contrib[n];
            decoded.push(Some(symbols[n]));
        } else {
            undecoded_power += gains[n] * powers[n] * powers[n];
            decoded.push(None);
        }
    }

    let s_hat = residual / k_users.max(1) as f64;
    Ok(RoundOutput { decoded, y_hat: residual, s_hat, stage_sinr })
}

fn first_violation(gains: &[f64], n_noma: usize) -> (usize, usize) {
    for i in 1..n_noma {
        if gains[i - 1] < gains[i] {
            return (i - 1, i);
        }
    }
    if n_noma > 0 {
        for k in n_noma..gains.len() {
            if gains[n_noma - 1] < gains[k] {
                return (n_noma - 1, k);
            }
        }
    }
    (0, 0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Stream};
    use approx::assert_relative_eq;
    use rand::Rng as _;

    #[test]
    fn order_allows_ties() {
        assert!(decoding_order_ok(&[1.0, 1.0, 1.0], 2, 1));
    }

    #[test]
    fn order_direct_definition() {
        assert!(decoding_order_ok(&[3.0, 2.0, 1.0], 2, 1));
        assert!(!decoding_order_ok(&[2.0, 3.0, 1.0], 2, 1));
        assert!(!decoding_order_ok(&[3.0, 1.0, 2.0], 2, 1));
    }

    #[test]
    fn order_with_no_noma_is_trivially_ok() {
        assert!(decoding_order_ok(&[0.5, 2.0], 0, 2));
    }

    #[test]
    fn sinr_single_user_unit_case() {
        // gain 1, p² = σ² → γ = 1, rate 1 bps/Hz
        let report = SinrReport::compute(&[1.0], &[1e-3f64.sqrt()], 1e-3, 1).unwrap();
        assert_relative_eq!(report.gamma[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(report.rate[0], 1.0, max_relative = 1e-12);
        assert_relative_eq!(report.sum_rate, 1.0, max_relative = 1e-12);
    }

    #[test]
    fn sinr_out_of_range_is_error() {
        assert!(sinr(1, &[1.0, 1.0], &[1.0, 1.0], 1e-3, 1).is_err());
    }

    #[test]
    fn sinr_matches_literal_reimplementation() {
        // N = 2, K = 1 instance, written out directly from the definition.
        let gains = [4.0, 2.5, 0.7];
        let powers = [0.3, 0.4, 0.2];
        let sigma2 = 0.05;
        let den1 = 2.5 * 0.4 * 0.4 + 0.7 * 0.2 * 0.2 + sigma2;
        let den2 = 0.7 * 0.2 * 0.2 + sigma2;
        let expect1 = 4.0 * 0.09 / den1;
        let expect2 = 2.5 * 0.16 / den2;
        assert_relative_eq!(
            sinr(0, &gains, &powers, sigma2, 2).unwrap(),
            expect1,
            max_relative = 1e-14
        );
        assert_relative_eq!(
            sinr(1, &gains, &powers, sigma2, 2).unwrap(),
            expect2,
            max_relative = 1e-14
        );
    }

    #[test]
    fn sinr_monotonicity_under_perturbation() {
        let mut rng = rng::stream(31, Stream::Custom(0));
        for _ in 0..200 {
            let gains: Vec<f64> = (0..4).map(|_| 0.5 + rng.gen::<f64>()).collect();
            let mut powers: Vec<f64> = (0..4).map(|_| 0.1 + rng.gen::<f64>()).collect();
            let base = sinr(1, &gains, &powers, 0.01, 2).unwrap();
            powers[1] *= 1.1;
            let more_own = sinr(1, &gains, &powers, 0.01, 2).unwrap();
            assert!(more_own > base);
            powers[3] *= 1.3;
            let more_interf = sinr(1, &gains, &powers, 0.01, 2).unwrap();
            assert!(more_interf < more_own);
        }
    }

    #[test]
    fn mse_perfect_alignment() {
        assert_eq!(aggregation_mse(&[1.0, 1.0, 1.0], 0.0, 3), 0.0);
        assert_relative_eq!(
            aggregation_mse(&[1.0, 1.0, 1.0], 0.09, 3),
            0.01,
            max_relative = 1e-14
        );
    }

    #[test]
    fn mse_formula_matches_monte_carlo() {
        // 1e6 draws of unit-variance complex symbols and noise.
        let mut rng = rng::stream(32, Stream::Custom(0));
        let effective = [0.8, 1.1, 1.05];
        let sigma2 = 0.04;
        let k = 3usize;
        let target = aggregation_mse(&effective, sigma2, k);
        let draws = 1_000_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let symbols: Vec<C64> = (0..k).map(|_| standard_complex(&mut rng)).collect();
            let ideal: C64 = symbols.iter().sum::<C64>() / k as f64;
            let noisy: C64 = symbols
                .iter()
                .zip(effective.iter())
                .map(|(s, &z)| s * z)
                .sum::<C64>()
                + standard_complex(&mut rng) * sigma2.sqrt();
            acc += (noisy / k as f64 - ideal).norm_sqr();
        }
        let mc = acc / draws as f64;
        assert!((mc - target).abs() / target < 0.01, "mc {mc} vs formula {target}");
    }

    #[test]
    fn simulate_round_noise_free_airfl_only() {
        let mut rng = rng::stream(33, Stream::Custom(0));
        let combined = vec![C64::new(0.6, 0.8), C64::new(1.2, 0.0)];
        let powers = vec![0.5, 0.9];
        let symbols = vec![C64::new(0.3, -0.2), C64::new(-1.0, 0.4)];
        let out =
            simulate_round(&combined, &powers, &symbols, 0.0, 0, &SicPolicy::Genie, &mut rng)
                .unwrap();
        // ŝ = (1/K) Σ |h̄_k| p_k s_k exactly
        let expect = (symbols[0] * (1.0f64 * 0.5) + symbols[1] * (1.2 * 0.9)) / 2.0;
        assert!((out.s_hat - expect).norm() < 1e-14);
    }

    #[test]
    fn simulate_round_perfect_sic_recovers_symbol() {
        let mut rng = rng::stream(34, Stream::Custom(0));
        let combined = vec![C64::new(2.0, 1.0), C64::new(0.5, 0.0)];
        let powers = vec![0.4, 0.6];
        let symbols = vec![C64::new(0.7, 0.1), C64::new(-0.3, 0.9)];
        let out =
            simulate_round(&combined, &powers, &symbols, 0.0, 1, &SicPolicy::Genie, &mut rng)
                .unwrap();
        assert_eq!(out.decoded[0], Some(symbols[0]));
        // residual is exactly the AirFL contribution
        let expect = C64::from(0.5 * 0.6) * symbols[1];
        assert!((out.y_hat - expect).norm() < 1e-14);
    }

    #[test]
    fn simulate_round_rejects_bad_order_in_genie_mode() {
        let mut rng = rng::stream(35, Stream::Custom(0));
        let combined = vec![C64::new(0.1, 0.0), C64::new(2.0, 0.0)];
        let err = simulate_round(
            &combined,
            &[1.0, 1.0],
            &[C64::new(1.0, 0.0), C64::new(1.0, 0.0)],
            0.0,
            1,
            &SicPolicy::Genie,
            &mut rng,
        )
        .unwrap_err();
        match err {
            SignalError::OrderViolation { strong: 0, weak: 1 } => {}
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn threshold_policy_leaves_residual_interference() {
        let mut rng = rng::stream(36, Stream::Custom(0));
        // NOMA user too weak to decode: its signal must stay in the residual.
        let combined = vec![C64::new(0.1, 0.0), C64::new(1.0, 0.0)];
        let powers = vec![1.0, 1.0];
        let symbols = vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)];
        let out = simulate_round(
            &combined,
            &powers,
            &symbols,
            0.0,
            1,
            &SicPolicy::Threshold { zeta: vec![1.0] },
            &mut rng,
        )
        .unwrap();
        assert_eq!(out.decoded[0], None);
        assert!((out.y_hat - combined[0]).norm() < 1e-14);
    }

    #[test]
    fn simulate_round_statistics_match_mse_formula() {
        let mut rng = rng::stream(37, Stream::Custom(0));
        let combined = vec![C64::new(3.0, 0.0), C64::new(0.9, 0.3), C64::new(0.0, -1.05)];
        let powers = vec![0.5, 1.0, 1.0];
        let sigma2 = 0.02;
        let k = 2usize;
        let effective = [combined[1].norm() * powers[1], combined[2].norm() * powers[2]];
        let target = aggregation_mse(&effective, sigma2, k);
        let draws = 100_000;
        let mut acc = 0.0;
        for _ in 0..draws {
            let symbols: Vec<C64> = (0..3).map(|_| standard_complex(&mut rng)).collect();
            let out = simulate_round(
                &combined,
                &powers,
                &symbols,
                sigma2,
                1,
                &SicPolicy::Genie,
                &mut rng,
            )
            .unwrap();
            let ideal = (symbols[1] + symbols[2]) / 2.0;
            acc += (out.s_hat - ideal).norm_sqr();
        }
        let mc = acc / draws as f64;
        assert!((mc - target).abs() / target < 0.02, "mc {mc} vs formula {target}");
    }

    #[test]
    fn power_schedule_validation() {
        let ok = PowerSchedule::constant(&[0.3, 0.3], 4, vec![0.2, 0.2], vec![0.1, 0.1]);
        assert!(ok.validate(1e-9).is_ok());
        let peak_bad = PowerSchedule::constant(&[0.5], 4, vec![0.2], vec![0.3]);
        assert!(peak_bad.validate(1e-9).is_err());
        let mut avg_bad = PowerSchedule::constant(&[0.3], 4, vec![0.2], vec![0.05]);
        assert!(avg_bad.validate(1e-9).is_err());
        avg_bad.p[0] = vec![0.3, 0.1, 0.1, 0.1];
        assert!(avg_bad.validate(1e-9).is_ok());
    }
}

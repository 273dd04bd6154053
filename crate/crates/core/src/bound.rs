//! Closed-form convergence quantities for the noisy over-the-air training
//! loop, and the analytic gradients of the optimality-gap objective used by
//! both resource-allocation steps.
//!
//! The per-round contraction factor and additive term are
//!
//! ```text
//! Λ₃ = 1 − Σ_k [ 2μλ z_k / K − μLλ² z_k² / K² ]
//! Λ₄ = (Lλ² / 2K²) Σ_k z_k² ‖δ‖² + L Q λ² σ² / (2K²)
//! ```
//!
//! with `z_k = h̄_k p_k` the real effective gains. The `T`-round gap bound
//! composes them through the recursion `G_t = Λ₃⁽ᵗ⁾ G_{t−1} + Λ₄⁽ᵗ⁾`,
//! `G_0` the initial gap. For the lifted (SDR) route the quadratic terms are
//! evaluated as `|z_k − c|²` traces, which coincides with the real form for
//! phase-aligned gains; the two routes are pinned against each other in
//! tests.

use nalgebra::DMatrix;
use thiserror::Error;

use crate::ris::{trace_re, LiftedGapTerms};
use crate::C64;

#[derive(Debug, Error)]
pub enum BoundError {
    #[error("diminishing-rate premise fails: stability cap {0} is not positive")]
    NonPositiveCap(f64),
    #[error("learning-rate premise violated: lambda {lambda} > 1/(2+L) = {limit}")]
    LambdaPremise { lambda: f64, limit: f64 },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

/// Constants of the learning task and channel entering the bounds.
#[derive(Debug, Clone, Copy)]
pub struct TaskConstants {
    /// Strong-convexity constant μ.
    pub mu: f64,
    /// Smoothness constant L.
    pub l_smooth: f64,
    /// Model dimension Q.
    pub model_dim: usize,
    /// Squared Euclidean norm of the gradient-deviation bound vector, ‖δ‖².
    pub delta_norm_sq: f64,
    /// Receiver noise power per gradient coordinate.
    pub sigma2: f64,
    /// Number of AirFL users K.
    pub num_airfl: usize,
    /// Initial optimality gap F(w⁽¹⁾) − F*.
    pub initial_gap: f64,
}

/// Contraction factor Λ₃ for real effective gains `z_k = h̄_k p_k`.
pub fn lambda3(effective_gains: &[f64], mu: f64, l_smooth: f64, lambda: f64, k: usize) -> f64 {
    let kf = k as f64;
    let a = 2.0 * mu * lambda / kf;
    let b = mu * l_smooth * lambda * lambda / (kf * kf);
    1.0 - effective_gains.iter().map(|&z| a * z - b * z * z).sum::<f64>()
}

/// Λ₃ evaluated from complex effective gains via the completed square
/// `1 + b Σ_k (|z_k − a/2b|² − (a/2b)²)`; equal to [`lambda3`] when every
/// `z_k` is real.
pub fn lambda3_complex(z: &[C64], mu: f64, l_smooth: f64, lambda: f64, k: usize) -> f64 {
    let kf = k as f64;
    let b = mu * l_smooth * lambda * lambda / (kf * kf);
    let c = kf / (l_smooth * lambda); // a / (2b)
    1.0 + b * z.iter().map(|&zk| (zk - C64::from(c)).norm_sqr() - c * c).sum::<f64>()
}

/// Additive noise term Λ₄.
pub fn lambda4(
    effective_gains: &[f64],
    l_smooth: f64,
    lambda: f64,
    k: usize,
    delta_norm_sq: f64,
    model_dim: usize,
    sigma2: f64,
) -> f64 {
    let kf = k as f64;
    let scale = l_smooth * lambda * lambda / (2.0 * kf * kf);
    let misfit: f64 = effective_gains.iter().map(|&z| z * z).sum();
    scale * misfit * delta_norm_sq + scale * model_dim as f64 * sigma2
}

/// Λ₃ evaluated from lifted data: `1 + b Σ_k (tr(Ř_k Q_k) + |ȟ_k|² − c²)`.
pub fn lambda3_lifted(
    terms: &[LiftedGapTerms],
    q: &[DMatrix<C64>],
    mu: f64,
    l_smooth: f64,
    lambda: f64,
    k: usize,
) -> f64 {
    let kf = k as f64;
    let b = mu * l_smooth * lambda * lambda / (kf * kf);
    let c = kf / (l_smooth * lambda);
    let sum: f64 = terms
        .iter()
        .zip(q)
        .map(|(t, qm)| trace_re(&t.r_check, qm) + t.h_check.norm_sqr() - c * c)
        .sum();
    1.0 + b * sum
}

/// Λ₄ evaluated from lifted data.
pub fn lambda4_lifted(
    terms: &[LiftedGapTerms],
    q: &[DMatrix<C64>],
    l_smooth: f64,
    lambda: f64,
    k: usize,
    delta_norm_sq: f64,
    model_dim: usize,
    sigma2: f64,
) -> f64 {
    let kf = k as f64;
    let scale = l_smooth * lambda * lambda / (2.0 * kf * kf);
    let sum: f64 = terms
        .iter()
        .zip(q)
        .map(|(t, qm)| trace_re(&t.r_bar, qm) + t.h_ring.norm_sqr())
        .sum();
    scale * sum * delta_norm_sq + scale * model_dim as f64 * sigma2
}

/// Per-round bound terms and the composed `T`-round objective.
#[derive(Debug, Clone)]
pub struct GapTerms {
    pub lambda3: Vec<f64>,
    pub lambda4: Vec<f64>,
    pub upsilon: f64,
    pub initial_gap: f64,
}

impl GapTerms {
    /// Evaluate all terms from per-round effective gains `z[t][k]`.
    pub fn from_gains(z: &[Vec<f64>], lambda: f64, c: &TaskConstants) -> Self {
        let l3: Vec<f64> =
            z.iter().map(|zt| lambda3(zt, c.mu, c.l_smooth, lambda, c.num_airfl)).collect();
        let l4: Vec<f64> = z
            .iter()
            .map(|zt| {
                lambda4(zt, c.l_smooth, lambda, c.num_airfl, c.delta_norm_sq, c.model_dim, c.sigma2)
            })
            .collect();
        let upsilon = upsilon(&l3, &l4, c.initial_gap);
        Self { lambda3: l3, lambda4: l4, upsilon, initial_gap: c.initial_gap }
    }
}

/// Compose the `T`-round optimality-gap bound with the stable running
/// recursion `G_t = Λ₃⁽ᵗ⁾ G_{t−1} + Λ₄⁽ᵗ⁾`, `G_0` the initial gap.
pub fn upsilon(lambda3: &[f64], lambda4: &[f64], initial_gap: f64) -> f64 {
    assert_eq!(lambda3.len(), lambda4.len());
    lambda3.iter().zip(lambda4).fold(initial_gap, |g, (&l3, &l4)| l3 * g + l4)
}

/// Partial bounds after each round: entry `t` bounds the expected gap after
/// `t + 1` completed rounds.
pub fn upsilon_trace(lambda3: &[f64], lambda4: &[f64], initial_gap: f64) -> Vec<f64> {
    assert_eq!(lambda3.len(), lambda4.len());
    lambda3
        .iter()
        .zip(lambda4)
        .scan(initial_gap, |g, (&l3, &l4)| {
            *g = l3 * *g + l4;
            Some(*g)
        })
        .collect()
}

/// One-round descent bound: the expected gap after the round given the gap
/// and global gradient norm before it.
pub fn one_round_bound(
    prev_gap: f64,
    grad_norm_sq: f64,
    effective_gains: &[f64],
    lambda: f64,
    c: &TaskConstants,
) -> f64 {
    let kf = c.num_airfl as f64;
    let descent: f64 = effective_gains
        .iter()
        .map(|&z| lambda * z / kf - c.l_smooth * lambda * lambda * z * z / (2.0 * kf * kf))
        .sum();
    let noise = lambda4(
        effective_gains,
        c.l_smooth,
        lambda,
        c.num_airfl,
        c.delta_norm_sq,
        c.model_dim,
        c.sigma2,
    );
    prev_gap - descent * grad_norm_sq + noise
}

/// Output of one diminishing-rate step evaluation.
#[derive(Debug, Clone, Copy)]
pub struct DiminishingStep {
    /// Learning rate actually used, `min(Γ/(t+ν), cap)`.
    pub lambda_t: f64,
    /// The recursion envelope `ξ_t`.
    pub xi_t: f64,
    /// Bound on the expected gap after round `t`: `ξ_t / (t + 1 + ν)`.
    pub bound: f64,
}

/// Evaluate the diminishing-learning-rate bound at (1-based) round `t`.
///
/// The stability cap `(2K Σ z − K²) / (L Σ z²)` must be positive, otherwise
/// the premise of the rate result fails.
pub fn diminishing_gap(
    t: usize,
    gamma: f64,
    nu: f64,
    effective_gains: &[f64],
    prev_gap: f64,
    c: &TaskConstants,
) -> Result<DiminishingStep, BoundError> {
    assert!(t >= 1);
    assert!(gamma > 1.0 / c.mu, "requires Γ > 1/μ");
    assert!(nu > 0.0);
    let kf = c.num_airfl as f64;
    let sum_z: f64 = effective_gains.iter().sum();
    let sum_z2: f64 = effective_gains.iter().map(|&z| z * z).sum();
    let cap = (2.0 * kf * sum_z - kf * kf) / (c.l_smooth * sum_z2);
    if cap <= 0.0 {
        return Err(BoundError::NonPositiveCap(cap));
    }
    let lambda_t = (gamma / (t as f64 + nu)).min(cap);
    let q_tilde = c.l_smooth
        * gamma
        * gamma
        * (sum_z2 * c.delta_norm_sq + c.model_dim as f64 * c.sigma2)
        / (2.0 * kf * kf * (c.mu * gamma - 1.0));
    let xi_t = ((t as f64 + nu) * prev_gap).max(q_tilde);
    Ok(DiminishingStep { lambda_t, xi_t, bound: xi_t / (t as f64 + 1.0 + nu) })
}

/// Inputs to the aggregation-error form of the gap bound.
#[derive(Debug, Clone)]
pub struct ErrorBoundInputs {
    /// Per-round squared bias ‖E[ε⁽ᵗ⁾]‖².
    pub bias_sq: Vec<f64>,
    /// Per-round gradient MSE E[‖ε⁽ᵗ⁾‖²].
    pub grad_mse: Vec<f64>,
}

/// Gap bound written in terms of the gradient aggregation error, valid for
/// `λ ≤ 1/(2+L)`.
pub fn aggregation_error_bound(
    inputs: &ErrorBoundInputs,
    lambda: f64,
    c: &TaskConstants,
) -> Result<f64, BoundError> {
    let limit = 1.0 / (2.0 + c.l_smooth);
    if lambda > limit {
        return Err(BoundError::LambdaPremise { lambda, limit });
    }
    if inputs.bias_sq.len() != inputs.grad_mse.len() {
        return Err(BoundError::DimensionMismatch(format!(
            "{} bias entries vs {} mse entries",
            inputs.bias_sq.len(),
            inputs.grad_mse.len()
        )));
    }
    let t_total = inputs.bias_sq.len();
    let mu_tilde = 1.0 - lambda * c.mu;
    let mut bound = mu_tilde.powi(t_total as i32) * c.initial_gap;
    for (i, (&bias, &mse)) in inputs.bias_sq.iter().zip(&inputs.grad_mse).enumerate() {
        let weight = mu_tilde.powi((t_total - 1 - i) as i32);
        bound += 0.5 * weight * bias;
        bound +=
            0.5 * c.l_smooth * lambda * lambda * weight * (c.l_smooth * bias + c.delta_norm_sq + mse);
    }
    Ok(bound)
}

fn product_excluding(lambda3: &[f64], from: usize, skip: Option<usize>) -> f64 {
    lambda3
        .iter()
        .enumerate()
        .skip(from)
        .filter(|(i, _)| Some(*i) != skip)
        .map(|(_, &v)| v)
        .product()
}

/// Derivative of the composed gap objective with respect to the transmit
/// amplitude of AirFL user `k` in (0-based) round `t`.
///
/// `channel_gains[t][k]` holds the real effective channel magnitudes
/// `|h̄_k⁽ᵗ⁾|` and `powers[t][k]` the amplitudes. NOMA amplitudes do not
/// enter the objective, so their derivative is zero by convention.
pub fn grad_upsilon_power(
    channel_gains: &[Vec<f64>],
    powers: &[Vec<f64>],
    lambda: f64,
    c: &TaskConstants,
    t: usize,
    k: usize,
) -> f64 {
    let rounds = channel_gains.len();
    assert_eq!(powers.len(), rounds);
    let kf = c.num_airfl as f64;
    let z: Vec<Vec<f64>> = channel_gains
        .iter()
        .zip(powers)
        .map(|(g, p)| g.iter().zip(p).map(|(&gi, &pi)| gi * pi).collect())
        .collect();
    let l3: Vec<f64> =
        z.iter().map(|zt| lambda3(zt, c.mu, c.l_smooth, lambda, c.num_airfl)).collect();
    let l4: Vec<f64> = z
        .iter()
        .map(|zt| {
            lambda4(zt, c.l_smooth, lambda, c.num_airfl, c.delta_norm_sq, c.model_dim, c.sigma2)
        })
        .collect();

    let h = channel_gains[t][k];
    let p = powers[t][k];
    let dl3 = -(2.0 * c.mu * lambda * h / kf) * (1.0 - c.l_smooth * lambda * h * p / kf);
    let dl4 = c.l_smooth * lambda * lambda * c.delta_norm_sq * h * h * p / (kf * kf);

    // weight multiplying ∇Λ₃⁽ᵗ⁾: the initial-gap product plus the history sum
    let mut w3 = c.initial_gap * product_excluding(&l3, 0, Some(t));
    for j in 0..t {
        w3 += l4[j] * product_excluding(&l3, j + 1, Some(t));
    }
    let w4 = product_excluding(&l3, t + 1, None);
    dl3 * w3 + dl4 * w4
}

/// Linearization coefficient of the gap objective with respect to the
/// lifted configuration `Q_k⁽ᵗ⁾` of AirFL user `k` in round `t`:
/// a Hermitian matrix `D` with `dΥ = Re tr(D · dQ)`.
pub fn grad_upsilon_q(
    gap_lifts: &[Vec<LiftedGapTerms>],
    q_mats: &[Vec<DMatrix<C64>>],
    lambda: f64,
    c: &TaskConstants,
    t: usize,
    k: usize,
) -> DMatrix<C64> {
    let rounds = gap_lifts.len();
    assert_eq!(q_mats.len(), rounds);
    let kf = c.num_airfl as f64;
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

    let b = c.mu * c.l_smooth * lambda * lambda / (kf * kf);
    let c4 = c.l_smooth * lambda * lambda * c.delta_norm_sq / (2.0 * kf * kf);

    let mut w3 = c.initial_gap * product_excluding(&l3, 0, Some(t));
    for j in 0..t {
        w3 += l4[j] * product_excluding(&l3, j + 1, Some(t));
    }
    let w4 = product_excluding(&l3, t + 1, None);

    &gap_lifts[t][k].r_check * C64::from(b * w3) + &gap_lifts[t][k].r_bar * C64::from(c4 * w4)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ris::{lift_gap_terms, lifted_outer};
    use crate::rng::{self, standard_complex, Stream};
    use approx::assert_relative_eq;
    use nalgebra::DVector;
    use rand::Rng;

    fn constants() -> TaskConstants {
        TaskConstants {
            mu: 2.0,
            l_smooth: 2.2,
            model_dim: 10,
            delta_norm_sq: 40.0,
            sigma2: 0.05,
            num_airfl: 3,
            initial_gap: 100.0,
        }
    }

    #[test]
    fn lambda3_zero_power_is_one() {
        assert_eq!(lambda3(&[0.0, 0.0, 0.0], 2.0, 2.2, 0.1, 3), 1.0);
    }

    #[test]
    fn lambda3_hand_example() {
        // K=1, z=1, μ=L=1, λ=0.1 → 1 − (0.2 − 0.01) = 0.81
        assert_relative_eq!(lambda3(&[1.0], 1.0, 1.0, 0.1, 1), 0.81, max_relative = 1e-14);
    }

    #[test]
    fn lambda3_below_one_within_stability_range() {
        let mut rng = rng::stream(41, Stream::Custom(0));
        for _ in 0..200 {
            let z = 0.05 + rng.gen::<f64>() * 2.0;
            let l = 0.5 + rng.gen::<f64>() * 3.0;
            let lam = 1e-6 + rng.gen::<f64>() * (2.0 / (l * z) - 2e-6);
            assert!(lambda3(&[z], 1.3, l, lam, 1) < 1.0, "z={z} l={l} lam={lam}");
        }
    }

    #[test]
    fn lambda3_complex_matches_real_form() {
        let mut rng = rng::stream(42, Stream::Custom(0));
        for _ in 0..200 {
            let z: Vec<f64> = (0..3).map(|_| rng.gen::<f64>() * 3.0).collect();
            let zc: Vec<C64> = z.iter().map(|&v| C64::from(v)).collect();
            let real = lambda3(&z, 2.0, 2.2, 0.07, 3);
            let comp = lambda3_complex(&zc, 2.0, 2.2, 0.07, 3);
            assert_relative_eq!(real, comp, max_relative = 1e-9, epsilon = 1e-9);
        }
    }

    #[test]
    fn lambda4_noise_floor_and_ideal_case() {
        let c = constants();
        let floor = c.l_smooth * 0.01 * c.model_dim as f64 * c.sigma2 / (2.0 * 9.0);
        assert_relative_eq!(
            lambda4(&[0.0; 3], c.l_smooth, 0.1, 3, c.delta_norm_sq, c.model_dim, c.sigma2),
            floor,
            max_relative = 1e-14
        );
        assert_eq!(lambda4(&[1.0; 3], c.l_smooth, 0.1, 3, 0.0, c.model_dim, 0.0), 0.0);
    }

    #[test]
    fn lambda4_matches_literal_reimplementation() {
        let mut rng = rng::stream(43, Stream::Custom(0));
        for _ in 0..100 {
            let z: Vec<f64> = (0..4).map(|_| rng.gen::<f64>() * 2.0).collect();
            let (l, lam, d2, q, s2) = (2.7, 0.03, 13.0, 7usize, 0.4);
            let got = lambda4(&z, l, lam, 4, d2, q, s2);
            let literal = l * lam * lam / (2.0 * 16.0) * z.iter().map(|&v| v * v).sum::<f64>() * d2
                + l * (q as f64) * lam * lam * s2 / (2.0 * 16.0);
            assert!((got - literal).abs() <= 1e-12 * literal.abs().max(1.0));
        }
    }

    #[test]
    fn lambda4_dominates_noise_floor() {
        let c = constants();
        let mut rng = rng::stream(44, Stream::Custom(0));
        for _ in 0..100 {
            let z: Vec<f64> = (0..3).map(|_| rng.gen::<f64>() * 3.0).collect();
            let lam = 0.001 + rng.gen::<f64>() * 0.2;
            let floor = c.l_smooth * c.model_dim as f64 * lam * lam * c.sigma2 / (2.0 * 9.0);
            let l4 = lambda4(&z, c.l_smooth, lam, 3, c.delta_norm_sq, c.model_dim, c.sigma2);
            assert!(l4 >= floor - 1e-18);
        }
    }

    #[test]
    fn upsilon_base_case() {
        assert_relative_eq!(upsilon(&[0.9], &[0.3], 2.0), 0.9 * 2.0 + 0.3);
    }

    #[test]
    fn upsilon_zero_contraction_keeps_last_term() {
        assert_eq!(upsilon(&[0.0, 0.0], &[5.0, 0.7], 100.0), 0.7);
    }

    #[test]
    fn upsilon_matches_brute_force_expansion() {
        let mut rng = rng::stream(45, Stream::Custom(0));
        for _ in 0..200 {
            let l3: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
            let l4: Vec<f64> = (0..3).map(|_| rng.gen::<f64>()).collect();
            let g0: f64 = rng.gen::<f64>() * 10.0;
            // literal triple expansion of the T = 3 bound
            let brute =
                l3[0] * l3[1] * l3[2] * g0 + l3[1] * l3[2] * l4[0] + l3[2] * l4[1] + l4[2];
            let got = upsilon(&l3, &l4, g0);
            assert!((got - brute).abs() <= 1e-12 * brute.abs().max(1.0));
        }
    }

    #[test]
    fn upsilon_recursive_identity() {
        let l3 = [0.95, 0.9, 0.85, 0.99];
        let l4 = [0.1, 0.2, 0.05, 0.3];
        let partial = upsilon(&l3[..3], &l4[..3], 7.0);
        let full = upsilon(&l3, &l4, 7.0);
        assert_relative_eq!(full, l3[3] * partial + l4[3], max_relative = 1e-14);
    }

    #[test]
    fn upsilon_trace_ends_at_upsilon() {
        let l3 = [0.95, 0.9, 0.85];
        let l4 = [0.1, 0.2, 0.05];
        let trace = upsilon_trace(&l3, &l4, 3.0);
        assert_eq!(trace.len(), 3);
        assert_relative_eq!(trace[2], upsilon(&l3, &l4, 3.0), max_relative = 1e-14);
    }

    #[test]
    fn upsilon_monotone_in_lambda4() {
        let l3 = [0.9, 0.8];
        let high = upsilon(&l3, &[0.3, 0.4], 5.0);
        let low = upsilon(&l3, &[0.3, 0.2], 5.0);
        assert!(low < high);
    }

    #[test]
    fn one_round_bound_idle_round_keeps_gap() {
        let c = TaskConstants { sigma2: 0.0, ..constants() };
        let b = one_round_bound(3.0, 12.0, &[0.0; 3], 0.1, &c);
        assert_relative_eq!(b, 3.0, max_relative = 1e-14);
    }

    #[test]
    fn one_round_bound_aligned_gains_descent_form() {
        // z = 1 for all users recovers the classical descent-lemma shape
        let c = TaskConstants { delta_norm_sq: 0.0, sigma2: 0.0, ..constants() };
        let (gap, g2, lam) = (3.0, 12.0, 0.05);
        let b = one_round_bound(gap, g2, &[1.0; 3], lam, &c);
        let classical = gap - (lam - c.l_smooth * lam * lam / (2.0 * 3.0)) * g2;
        assert_relative_eq!(b, classical, max_relative = 1e-13);
    }

    #[test]
    fn diminishing_gap_ideal_case_uses_prev_gap() {
        let c = TaskConstants { delta_norm_sq: 0.0, sigma2: 0.0, ..constants() };
        let step = diminishing_gap(4, 1.0, 1.0, &[1.0; 3], 2.0, &c).unwrap();
        assert_relative_eq!(step.xi_t, 5.0 * 2.0, max_relative = 1e-14);
        assert_relative_eq!(step.bound, 10.0 / 6.0, max_relative = 1e-14);
    }

    #[test]
    fn diminishing_gap_rejects_infeasible_gains() {
        let c = constants();
        // tiny gains make the cap negative
        let err = diminishing_gap(1, 1.0, 1.0, &[0.01; 3], 2.0, &c).unwrap_err();
        assert!(matches!(err, BoundError::NonPositiveCap(_)));
    }

    #[test]
    fn diminishing_lambda_is_clamped() {
        let c = constants();
        let step = diminishing_gap(1, 1.0, 1.0, &[1.0; 3], 2.0, &c).unwrap();
        let cap = (2.0 * 3.0 * 3.0 - 9.0) / (c.l_smooth * 3.0);
        assert!(step.lambda_t <= cap + 1e-15);
        assert_relative_eq!(step.lambda_t, 0.5, max_relative = 1e-14);
    }

    #[test]
    fn aggregation_bound_clean_geometric_decay() {
        let c = TaskConstants { delta_norm_sq: 0.0, ..constants() };
        let inputs = ErrorBoundInputs { bias_sq: vec![0.0; 5], grad_mse: vec![0.0; 5] };
        let lam = 0.1;
        let b = aggregation_error_bound(&inputs, lam, &c).unwrap();
        let mu_tilde: f64 = 1.0 - lam * c.mu;
        assert_relative_eq!(b, mu_tilde.powi(5) * c.initial_gap, max_relative = 1e-14);
    }

    #[test]
    fn aggregation_bound_rejects_large_lambda() {
        let c = constants();
        let inputs = ErrorBoundInputs { bias_sq: vec![0.0], grad_mse: vec![0.0] };
        assert!(aggregation_error_bound(&inputs, 0.5, &c).is_err());
    }

    #[test]
    fn aggregation_bound_weights_late_rounds_more() {
        let c = constants();
        let lam = 0.05;
        let mut early = ErrorBoundInputs { bias_sq: vec![0.0; 6], grad_mse: vec![0.0; 6] };
        early.grad_mse[0] = 1.0;
        let mut late = ErrorBoundInputs { bias_sq: vec![0.0; 6], grad_mse: vec![0.0; 6] };
        late.grad_mse[5] = 1.0;
        let b_early = aggregation_error_bound(&early, lam, &c).unwrap();
        let b_late = aggregation_error_bound(&late, lam, &c).unwrap();
        assert!(b_late > b_early);
    }

    fn random_instance(
        rng: &mut impl Rng,
        rounds: usize,
        k: usize,
    ) -> (Vec<Vec<f64>>, Vec<Vec<f64>>) {
        let gains: Vec<Vec<f64>> =
            (0..rounds).map(|_| (0..k).map(|_| 0.5 + rng.gen::<f64>() * 2.0).collect()).collect();
        let powers: Vec<Vec<f64>> =
            (0..rounds).map(|_| (0..k).map(|_| 0.1 + rng.gen::<f64>()).collect()).collect();
        (gains, powers)
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
        GapTerms::from_gains(&z, lambda, c).upsilon
    }

    #[test]
    fn power_gradient_matches_finite_differences() {
        let c = constants();
        let lambda = 0.05;
        let mut rng = rng::stream(46, Stream::Custom(0));
        for _ in 0..100 {
            let (gains, mut powers) = random_instance(&mut rng, 3, 3);
            let t = (rng.gen::<u64>() % 3) as usize;
            let k = (rng.gen::<u64>() % 3) as usize;
            let analytic = grad_upsilon_power(&gains, &powers, lambda, &c, t, k);
            let h = 1e-6;
            let base = powers[t][k];
            powers[t][k] = base + h;
            let up = upsilon_of_powers(&gains, &powers, lambda, &c);
            powers[t][k] = base - h;
            let down = upsilon_of_powers(&gains, &powers, lambda, &c);
            powers[t][k] = base;
            let fd = (up - down) / (2.0 * h);
            let denom = fd.abs().max(analytic.abs()).max(1e-9);
            assert!(
                (analytic - fd).abs() / denom <= 1e-5,
                "t={t} k={k}: analytic {analytic} vs fd {fd}"
            );
        }
    }

    #[test]
    fn power_gradient_single_round_has_no_history_sum() {
        let c = constants();
        let lambda = 0.05;
        let gains = vec![vec![1.0, 2.0, 1.5]];
        let powers = vec![vec![0.3, 0.2, 0.4]];
        let analytic = grad_upsilon_power(&gains, &powers, lambda, &c, 0, 1);
        // with T = 1 only the initial-gap and own-round noise terms remain
        let kf = 3.0;
        let h = gains[0][1];
        let p = powers[0][1];
        let dl3 = -(2.0 * c.mu * lambda * h / kf) * (1.0 - c.l_smooth * lambda * h * p / kf);
        let dl4 = c.l_smooth * lambda * lambda * c.delta_norm_sq * h * h * p / (kf * kf);
        assert_relative_eq!(analytic, dl3 * c.initial_gap + dl4, max_relative = 1e-13);
    }

    #[test]
    fn power_gradient_negative_at_zero_power() {
        let c = constants();
        let gains = vec![vec![1.0, 1.0, 1.0]; 2];
        let powers = vec![vec![0.0; 3]; 2];
        for t in 0..2 {
            let g = grad_upsilon_power(&gains, &powers, 0.05, &c, t, 0);
            assert!(g < 0.0, "round {t}: gradient {g}");
        }
    }

    #[test]
    fn q_gradient_matches_directional_finite_differences() {
        let c = constants();
        let lambda = 0.05;
        let mut rng = rng::stream(47, Stream::Custom(0));
        let m = 3;
        let rounds = 3;
        for _ in 0..40 {
            // random lifted state for K users over `rounds` rounds
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
                    let q = DVector::from_fn(m, |_, _| standard_complex(&mut rng));
                    qs.push(lifted_outer(&q));
                }
                gap_lifts.push(terms);
                q_mats.push(qs);
            }
            let t = (rng.gen::<u64>() % rounds as u64) as usize;
            let k = (rng.gen::<u64>() % c.num_airfl as u64) as usize;
            let d = grad_upsilon_q(&gap_lifts, &q_mats, lambda, &c, t, k);

            // random Hermitian direction
            let a = DMatrix::from_fn(m + 1, m + 1, |_, _| standard_complex(&mut rng));
            let dir = (&a + a.adjoint()) * C64::from(0.5);
            let upsilon_of = |q_mats: &Vec<Vec<DMatrix<C64>>>| {
                let l3: Vec<f64> = gap_lifts
                    .iter()
                    .zip(q_mats)
                    .map(|(terms, q)| {
                        lambda3_lifted(terms, q, c.mu, c.l_smooth, lambda, c.num_airfl)
                    })
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
            let denom = fd.abs().max(analytic.abs()).max(1e-9);
            assert!(
                (analytic - fd).abs() / denom <= 1e-5,
                "t={t} k={k}: analytic {analytic} vs fd {fd}"
            );
        }
    }

    #[test]
    fn q_gradient_zero_delta_kills_noise_block() {
        let c = TaskConstants { delta_norm_sq: 0.0, ..constants() };
        let lambda = 0.05;
        let mut rng = rng::stream(48, Stream::Custom(0));
        let m = 2;
        let r = DVector::from_fn(m, |_, _| standard_complex(&mut rng));
        let h = standard_complex(&mut rng);
        let terms =
            vec![vec![lift_gap_terms(&r, 0.5, h, c.mu, c.l_smooth, lambda, c.num_airfl); 3]];
        let qs = vec![vec![lifted_outer(&DVector::from_element(m, C64::new(0.1, 0.0))); 3]];
        let d = grad_upsilon_q(&terms, &qs, lambda, &c, 0, 0);
        // only the contraction block contributes; its coefficient is b·Δ₁
        let kf = 3.0;
        let b = c.mu * c.l_smooth * lambda * lambda / (kf * kf);
        let expect = &terms[0][0].r_check * C64::from(b * c.initial_gap);
        assert!((&d - &expect).norm() < 1e-12);
    }
}

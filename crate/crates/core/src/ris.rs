//! STAR-RIS mode-switching configurations and the matrix liftings used by
//! the semidefinite relaxation.
//!
//! Under the mode-switching protocol every element either reflects
//! (`β_m = 1`, phase `θ_m`) or transmits (`β_m = 0`, phase `φ_m`). For a
//! user on a given side the cascade `r̄ᴴ Θ_u r_u` is linear in the side's
//! configuration vector `q_u`, so squared channel expressions become
//! quadratic forms in the lifted variable `Q_u = q̄_u q̄_uᴴ` with
//! `q̄_u = [q_u; 1]`. The lifting identities implemented here are exact and
//! are pinned by tests against direct evaluation.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use thiserror::Error;

use crate::channel::Side;
use crate::rng::standard_complex;
use crate::C64;

/// Tolerance on eigenvalues when accepting a numerically PSD matrix.
pub const PSD_EIG_TOL: f64 = 1e-8;

fn wrap_angle(a: f64) -> f64 {
    let tau = std::f64::consts::TAU;
    let mut w = a % tau;
    if w < 0.0 {
        w += tau;
    }
    w
}

/// One mode-switching configuration of the surface.
#[derive(Debug, Clone, PartialEq)]
pub struct StarRisConfig {
    /// Mode flags, `true` = reflect.
    pub beta: Vec<bool>,
    /// Reflection phases in `[0, 2π)`.
    pub theta: Vec<f64>,
    /// Transmission phases in `[0, 2π)`.
    pub phi: Vec<f64>,
}

impl StarRisConfig {
    pub fn new(beta: Vec<bool>, theta: Vec<f64>, phi: Vec<f64>) -> Self {
        assert_eq!(beta.len(), theta.len());
        assert_eq!(beta.len(), phi.len());
        Self {
            beta,
            theta: theta.into_iter().map(wrap_angle).collect(),
            phi: phi.into_iter().map(wrap_angle).collect(),
        }
    }

    pub fn num_elements(&self) -> usize {
        self.beta.len()
    }

    /// Uniformly random phases and fair-coin modes.
    pub fn random(m: usize, rng: &mut impl Rng) -> Self {
        let tau = std::f64::consts::TAU;
        Self {
            beta: (0..m).map(|_| rng.gen_bool(0.5)).collect(),
            theta: (0..m).map(|_| rng.gen::<f64>() * tau).collect(),
            phi: (0..m).map(|_| rng.gen::<f64>() * tau).collect(),
        }
    }

    /// All elements on one side with zero phases.
    pub fn all_on_side(m: usize, side: Side) -> Self {
        Self {
            beta: vec![side == Side::Reflect; m],
            theta: vec![0.0; m],
            phi: vec![0.0; m],
        }
    }

    /// Mode indicator as 0/1 reals, complemented for the transmit side.
    pub fn beta_vec(&self, side: Side) -> Vec<f64> {
        self.beta
            .iter()
            .map(|&b| match side {
                Side::Reflect => b as u8 as f64,
                Side::Transmit => (!b) as u8 as f64,
            })
            .collect()
    }
}

/// Diagonal of the reflection (resp. transmission) matrix `Θ_u`.
///
/// The two sides have complementary supports: every element is active with
/// unit modulus on exactly one side.
pub fn side_matrix(cfg: &StarRisConfig, side: Side) -> DVector<C64> {
    let m = cfg.num_elements();
    DVector::from_fn(m, |i, _| match side {
        Side::Reflect => {
            if cfg.beta[i] {
                C64::from_polar(1.0, cfg.theta[i])
            } else {
                C64::new(0.0, 0.0)
            }
        }
        Side::Transmit => {
            if cfg.beta[i] {
                C64::new(0.0, 0.0)
            } else {
                C64::from_polar(1.0, cfg.phi[i])
            }
        }
    })
}

/// Side configuration vector `q_u`, conjugated so that `q_uᴴ R_u` equals
/// `r̄ᴴ Θ_u r_u` with `R_u = diag(r̄ᴴ) r_u`.
pub fn config_vector(cfg: &StarRisConfig, side: Side) -> DVector<C64> {
    let diag = side_matrix(cfg, side);
    diag.map(|e| e.conj())
}

/// Effective cascade vector `R_u = diag(r̄ᴴ) r_u`.
pub fn effective_vector(r_bar: &DVector<C64>, r_u: &DVector<C64>) -> DVector<C64> {
    assert_eq!(r_bar.len(), r_u.len());
    DVector::from_fn(r_bar.len(), |i, _| r_bar[i].conj() * r_u[i])
}

/// Hermitian block matrix `[[r rᴴ, r c̄],[c rᴴ, 0]]` shared by all liftings.
fn corner_lift(r: &DVector<C64>, corner: C64) -> DMatrix<C64> {
    let m = r.len();
    let mut out = DMatrix::from_element(m + 1, m + 1, C64::new(0.0, 0.0));
    for i in 0..m {
        for j in 0..m {
            out[(i, j)] = r[i] * r[j].conj();
        }
        out[(i, m)] = r[i] * corner.conj();
        out[(m, i)] = corner * r[i].conj();
    }
    out
}

/// Real part of `tr(A Q)`; exact trace for Hermitian inputs.
pub fn trace_re(a: &DMatrix<C64>, q: &DMatrix<C64>) -> f64 {
    assert_eq!(a.shape(), q.shape());
    let n = a.nrows();
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            acc += (a[(i, j)] * q[(j, i)]).re;
        }
    }
    acc
}

/// Lifted rank-one matrix `Q = q̄ q̄ᴴ` with `q̄ = [q; 1]`.
pub fn lifted_outer(q: &DVector<C64>) -> DMatrix<C64> {
    let m = q.len();
    let mut q_bar = DVector::from_element(m + 1, C64::new(1.0, 0.0));
    for i in 0..m {
        q_bar[i] = q[i];
    }
    let mut out = DMatrix::zeros(m + 1, m + 1);
    for i in 0..=m {
        for j in 0..=m {
            out[(i, j)] = q_bar[i] * q_bar[j].conj();
        }
    }
    out
}

/// Per-user lifted representation used by the SDR optimizer.
#[derive(Debug, Clone)]
pub struct LiftedRis {
    /// Lifted configuration `Q_u`, Hermitian PSD, corner fixed to one.
    pub q: DMatrix<C64>,
    /// Channel-gain data matrix `R̃_u`.
    pub r_tilde: DMatrix<C64>,
    /// Diagonal target: `β` on the reflect side, `1 − β` on the transmit side.
    pub beta_vec: Vec<f64>,
}

impl LiftedRis {
    /// Check the structural invariants within tolerance.
    pub fn validate(&self) -> Result<(), String> {
        let n = self.q.nrows();
        let m = n - 1;
        if self.beta_vec.len() != m {
            return Err(format!("beta_vec has {} entries for M = {m}", self.beta_vec.len()));
        }
        for i in 0..n {
            for j in 0..n {
                if (self.q[(i, j)] - self.q[(j, i)].conj()).norm() > 1e-9 {
                    return Err(format!("Q not Hermitian at ({i},{j})"));
                }
            }
        }
        if (self.q[(m, m)].re - 1.0).abs() > 1e-6 {
            return Err(format!("corner is {}, expected 1", self.q[(m, m)].re));
        }
        for i in 0..m {
            if (self.q[(i, i)].re - self.beta_vec[i]).abs() > 1e-6 {
                return Err(format!("diag {i} is {} vs beta {}", self.q[(i, i)].re, self.beta_vec[i]));
            }
        }
        let eig = self.q.clone().symmetric_eigen();
        let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -PSD_EIG_TOL {
            return Err(format!("min eigenvalue {min:e} below tolerance"));
        }
        Ok(())
    }
}

/// Channel-gain data matrix `R̃_u` of the lifted form
/// `|h̄_u|² = tr(R̃_u Q_u) + |h_u|²`.
pub fn gain_lift(r_u: &DVector<C64>, h_u: C64) -> DMatrix<C64> {
    corner_lift(r_u, h_u)
}

/// Lift the channel gain: returns `(R̃_u, Q_u, gain)` with
/// `gain = tr(R̃_u Q_u) + |h_u|² = |h_u + q_uᴴ R_u|²`.
pub fn lift_gain(
    q_u: &DVector<C64>,
    h_u: C64,
    r_u: &DVector<C64>,
) -> (DMatrix<C64>, DMatrix<C64>, f64) {
    let r_tilde = gain_lift(r_u, h_u);
    let q_mat = lifted_outer(q_u);
    let gain = trace_re(&r_tilde, &q_mat) + h_u.norm_sqr();
    (r_tilde, q_mat, gain)
}

/// Lift the per-user aggregation error: returns `(R̂_k, ĥ_k)` with
/// `|h̄_k p_k − 1|² = tr(R̂_k Q_k) + |ĥ_k|²`, `ĥ_k = h_k p_k − 1`.
pub fn lift_mse(r_k: &DVector<C64>, p_k: f64, h_k: C64) -> (DMatrix<C64>, C64) {
    let r_ring = r_k * C64::from(p_k);
    let h_hat = h_k * p_k - C64::new(1.0, 0.0);
    (corner_lift(&r_ring, h_hat), h_hat)
}

/// Lifted data for the per-round contraction and noise terms.
#[derive(Debug, Clone)]
pub struct LiftedGapTerms {
    /// Block matrix entering the contraction factor.
    pub r_check: DMatrix<C64>,
    /// Block matrix entering the additive noise term.
    pub r_bar: DMatrix<C64>,
    /// `h_k p_k − K/(Lλ)`.
    pub h_check: C64,
    /// `h_k p_k`.
    pub h_ring: C64,
}

/// Lift the gap terms for one AirFL user at fixed power.
pub fn lift_gap_terms(
    r_k: &DVector<C64>,
    p_k: f64,
    h_k: C64,
    mu: f64,
    l_smooth: f64,
    lambda: f64,
    k_users: usize,
) -> LiftedGapTerms {
    assert!(mu > 0.0 && l_smooth > 0.0 && lambda > 0.0 && k_users > 0);
    let r_ring = r_k * C64::from(p_k);
    let h_ring = h_k * p_k;
    let h_check = h_ring - C64::from(k_users as f64 / (l_smooth * lambda));
    LiftedGapTerms {
        r_check: corner_lift(&r_ring, h_check),
        r_bar: corner_lift(&r_ring, h_ring),
        h_check,
        h_ring,
    }
}

/// Dominant rank-one component of a lifted matrix.
///
/// Returns the configuration vector obtained by scaling the leading
/// eigenvector so its last coordinate is one (the global-phase convention),
/// together with the eigenvalue ratio `λ₂/λ₁`. Fails when the corner
/// coordinate carries no energy.
pub fn dominant_rank_one(q: &DMatrix<C64>) -> Option<(DVector<C64>, f64)> {
    let n = q.nrows();
    let eig = q.clone().symmetric_eigen();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[b].partial_cmp(&eig.eigenvalues[a]).unwrap());
    let l1 = eig.eigenvalues[idx[0]];
    let l2 = if n > 1 { eig.eigenvalues[idx[1]].max(0.0) } else { 0.0 };
    if l1 <= 0.0 {
        return None;
    }
    let v = eig.eigenvectors.column(idx[0]);
    let corner = v[n - 1];
    if corner.norm() < 1e-9 {
        return None;
    }
    let q_vec = DVector::from_fn(n - 1, |i, _| v[i] / corner);
    Some((q_vec, l2 / l1))
}

/// Round a pair of side vectors into a binary configuration.
///
/// Modes come from the reflect-side magnitudes when available (threshold 0.5
/// after corner normalization), otherwise from the complement of the
/// transmit side. Phases are read from `−arg q_m` of the matching side.
pub fn config_from_side_vectors(
    q_reflect: Option<&DVector<C64>>,
    q_transmit: Option<&DVector<C64>>,
) -> StarRisConfig {
    let m = q_reflect.or(q_transmit).map(|v| v.len()).unwrap_or(0);
    let beta: Vec<bool> = match (q_reflect, q_transmit) {
        (Some(qr), _) => qr.iter().map(|e| e.norm() >= 0.5).collect(),
        (None, Some(qt)) => qt.iter().map(|e| e.norm() < 0.5).collect(),
        (None, None) => Vec::new(),
    };
    let theta: Vec<f64> = (0..m)
        .map(|i| q_reflect.map(|qr| wrap_angle(-qr[i].arg())).unwrap_or(0.0))
        .collect();
    let phi: Vec<f64> = (0..m)
        .map(|i| q_transmit.map(|qt| wrap_angle(-qt[i].arg())).unwrap_or(0.0))
        .collect();
    StarRisConfig { beta, theta, phi }
}

#[derive(Debug, Error)]
pub enum RandomizationError {
    #[error("no feasible configuration among {attempts} candidates")]
    NoFeasibleCandidate {
        attempts: usize,
        /// Best infeasible candidate seen, for diagnostics.
        best_infeasible: Box<StarRisConfig>,
    },
    #[error("lifted matrix has no usable dominant component")]
    DegenerateLift,
}

/// Sample a configuration factor `F` with `Q ≈ F Fᴴ` (negative eigenvalues
/// clipped), for drawing `q = F g`, `g ~ CN(0, I)`.
fn gaussian_factor(q: &DMatrix<C64>) -> DMatrix<C64> {
    let n = q.nrows();
    let eig = q.clone().symmetric_eigen();
    let mut f = eig.eigenvectors.clone();
    for j in 0..n {
        let s = eig.eigenvalues[j].max(0.0).sqrt();
        for i in 0..n {
            f[(i, j)] *= s;
        }
    }
    f
}

fn draw_side_vector(factor: &DMatrix<C64>, rng: &mut impl Rng) -> Option<DVector<C64>> {
    let n = factor.nrows();
    let g = DVector::from_fn(n, |_, _| standard_complex(rng));
    let x = factor * g;
    let corner = x[n - 1];
    if corner.norm() < 1e-9 {
        return None;
    }
    Some(DVector::from_fn(n - 1, |i, _| x[i] / corner))
}

/// Recover a feasible binary configuration from lifted side matrices.
///
/// The deterministic leading-eigenvector rounding is always candidate zero;
/// `num_samples` Gaussian draws `q ~ CN(0, Q)` follow. Each candidate is
/// normalized to corner one, magnitude-thresholded into modes, and scored by
/// `evaluate`, which returns the objective to minimize for feasible
/// configurations and `None` otherwise.
pub fn gaussian_randomization(
    q_reflect: Option<&DMatrix<C64>>,
    q_transmit: Option<&DMatrix<C64>>,
    num_samples: usize,
    mut evaluate: impl FnMut(&StarRisConfig) -> Option<f64>,
    rng: &mut impl Rng,
) -> Result<StarRisConfig, RandomizationError> {
    let mut best: Option<(f64, StarRisConfig)> = None;
    let mut best_any: Option<StarRisConfig> = None;
    let mut consider = |cfg: StarRisConfig, best: &mut Option<(f64, StarRisConfig)>,
                        best_any: &mut Option<StarRisConfig>| {
        if best_any.is_none() {
            *best_any = Some(cfg.clone());
        }
        if let Some(obj) = evaluate(&cfg) {
            if best.as_ref().map_or(true, |(b, _)| obj < *b) {
                *best = Some((obj, cfg));
            }
        }
    };

    let det_r = q_reflect.and_then(|q| dominant_rank_one(q).map(|(v, _)| v));
    let det_t = q_transmit.and_then(|q| dominant_rank_one(q).map(|(v, _)| v));
    if det_r.is_none() && det_t.is_none() {
        return Err(RandomizationError::DegenerateLift);
    }
    consider(
        config_from_side_vectors(det_r.as_ref(), det_t.as_ref()),
        &mut best,
        &mut best_any,
    );

    let factor_r = q_reflect.map(gaussian_factor);
    let factor_t = q_transmit.map(gaussian_factor);
    for _ in 0..num_samples {
        let qr = factor_r.as_ref().and_then(|f| draw_side_vector(f, rng));
        let qt = factor_t.as_ref().and_then(|f| draw_side_vector(f, rng));
        if qr.is_none() && qt.is_none() {
            continue;
        }
        consider(config_from_side_vectors(qr.as_ref(), qt.as_ref()), &mut best, &mut best_any);
    }

    match best {
        Some((_, cfg)) => Ok(cfg),
        None => Err(RandomizationError::NoFeasibleCandidate {
            attempts: num_samples + 1,
            best_infeasible: Box::new(best_any.unwrap()),
        }),
    }
}

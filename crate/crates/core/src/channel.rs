//! Network geometry and fading channel generation.
//!
//! The network has one single-antenna BS, one STAR-RIS with `M` passive
//! elements, `N` NOMA users and `K` AirFL users. Large-scale attenuation
//! follows a power-law path loss; user-related links are Rayleigh faded
//! while the BS-RIS link is Rician with a line-of-sight steering component.
//!
//! All sampling functions are pure over an explicit RNG, so callers control
//! reproducibility by handing in seeded streams (see [`crate::rng`]).

use nalgebra::DVector;
use rand::Rng;
use thiserror::Error;

use crate::rng::{self, standard_complex, Stream};
use crate::C64;

/// Which half space of the STAR-RIS a user occupies.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Side {
    /// Same half space as the BS; served by elements in reflection mode.
    Reflect,
    /// Opposite half space; served by elements in transmission mode.
    Transmit,
}

/// Service type of a user.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum UserRole {
    /// Communication-centric user, decoded individually via SIC.
    Noma,
    /// Learning-centric user whose signal is aggregated over the air.
    AirFl,
}

#[derive(Debug, Error)]
pub enum ChannelError {
    #[error("distance must be positive, got {0}")]
    NonPositiveDistance(f64),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

/// Large-scale and noise parameters of the channel model.
#[derive(Debug, Clone, Copy)]
pub struct ChannelParams {
    /// Reference path-loss gain at 1 m, linear scale.
    pub varsigma0: f64,
    /// Path-loss exponent.
    pub alpha: f64,
    /// Rician factor of the BS-RIS link.
    pub kappa: f64,
    /// Noise power, linear scale.
    pub sigma2: f64,
    /// Element separation over wavelength.
    pub element_spacing_ratio: f64,
}

impl ChannelParams {
    pub fn new(
        varsigma0: f64,
        alpha: f64,
        kappa: f64,
        sigma2: f64,
        element_spacing_ratio: f64,
    ) -> Result<Self, ChannelError> {
        if varsigma0 <= 0.0 {
            return Err(ChannelError::InvalidParameter(format!(
                "reference path loss must be positive, got {varsigma0}"
            )));
        }
        if alpha <= 0.0 {
            return Err(ChannelError::InvalidParameter(format!(
                "path loss exponent must be positive, got {alpha}"
            )));
        }
        if kappa < 0.0 {
            return Err(ChannelError::InvalidParameter(format!(
                "Rician factor must be non-negative, got {kappa}"
            )));
        }
        if sigma2 <= 0.0 {
            return Err(ChannelError::InvalidParameter(format!(
                "noise power must be positive, got {sigma2}"
            )));
        }
        Ok(Self { varsigma0, alpha, kappa, sigma2, element_spacing_ratio })
    }
}

/// Positions and service structure of the network.
#[derive(Debug, Clone)]
pub struct Topology {
    pub bs_position: [f64; 3],
    pub ris_position: [f64; 3],
    pub user_positions: Vec<[f64; 3]>,
    /// Derived from the user position relative to the RIS plane.
    pub side_assignment: Vec<Side>,
    pub user_role: Vec<UserRole>,
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn norm(a: [f64; 3]) -> f64 {
    dot(a, a).sqrt()
}

impl Topology {
    /// Build a topology; the side of each user is derived from its position
    /// relative to the plane through the RIS orthogonal to the BS-RIS axis.
    pub fn new(
        bs_position: [f64; 3],
        ris_position: [f64; 3],
        user_positions: Vec<[f64; 3]>,
        user_role: Vec<UserRole>,
    ) -> Result<Self, ChannelError> {
        if user_positions.len() != user_role.len() {
            return Err(ChannelError::DimensionMismatch(format!(
                "{} positions vs {} roles",
                user_positions.len(),
                user_role.len()
            )));
        }
        let axis = sub(ris_position, bs_position);
        let side_assignment = user_positions
            .iter()
            .map(|&p| {
                if dot(sub(p, ris_position), axis) <= 0.0 {
                    Side::Reflect
                } else {
                    Side::Transmit
                }
            })
            .collect();
        Ok(Self { bs_position, ris_position, user_positions, side_assignment, user_role })
    }

    /// Sample `n_noma + n_airfl` users uniformly in a disc of given radius
    /// centered at `center` in the z = 0 plane. Roles are assigned by index:
    /// the first `n_noma` users are NOMA users.
    pub fn sample_disc(
        bs_position: [f64; 3],
        ris_position: [f64; 3],
        center: [f64; 2],
        radius: f64,
        n_noma: usize,
        n_airfl: usize,
        rng: &mut impl Rng,
    ) -> Result<Self, ChannelError> {
        let n = n_noma + n_airfl;
        let mut positions = Vec::with_capacity(n);
        for _ in 0..n {
            let r = radius * rng.gen::<f64>().sqrt();
            let phi = rng.gen::<f64>() * std::f64::consts::TAU;
            positions.push([center[0] + r * phi.cos(), center[1] + r * phi.sin(), 0.0]);
        }
        let mut roles = vec![UserRole::Noma; n_noma];
        roles.extend(vec![UserRole::AirFl; n_airfl]);
        Self::new(bs_position, ris_position, positions, roles)
    }

    pub fn num_users(&self) -> usize {
        self.user_positions.len()
    }

    pub fn num_noma(&self) -> usize {
        self.user_role.iter().filter(|r| **r == UserRole::Noma).count()
    }

    pub fn num_airfl(&self) -> usize {
        self.user_role.iter().filter(|r| **r == UserRole::AirFl).count()
    }

    pub fn bs_ris_distance(&self) -> f64 {
        norm(sub(self.ris_position, self.bs_position))
    }

    pub fn user_bs_distance(&self, u: usize) -> f64 {
        norm(sub(self.user_positions[u], self.bs_position))
    }

    pub fn user_ris_distance(&self, u: usize) -> f64 {
        norm(sub(self.user_positions[u], self.ris_position))
    }

    /// Reorder users so that the `n_noma` users with the largest values of
    /// `gain` come first (in descending gain order), followed by the rest
    /// (also descending). The SIC chain of Eq-style decoding then matches
    /// the index order, which is the premise of the signal processing
    /// scheme: NOMA users are the strong ones.
    pub fn assign_roles_by_gain(&mut self, gain: &[f64]) {
        let n = self.num_users();
        assert_eq!(gain.len(), n, "one gain per user");
        let n_noma = self.num_noma();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| gain[b].partial_cmp(&gain[a]).unwrap().then(a.cmp(&b)));
        let positions: Vec<_> = order.iter().map(|&i| self.user_positions[i]).collect();
        let sides: Vec<_> = order.iter().map(|&i| self.side_assignment[i]).collect();
        self.user_positions = positions;
        self.side_assignment = sides;
        self.user_role = (0..n)
            .map(|i| if i < n_noma { UserRole::Noma } else { UserRole::AirFl })
            .collect();
    }
}

/// Path-loss gain at distance `d` (linear scale).
pub fn path_loss(d: f64, params: &ChannelParams) -> Result<f64, ChannelError> {
    if d <= 0.0 {
        return Err(ChannelError::NonPositiveDistance(d));
    }
    Ok(params.varsigma0 * d.powf(-params.alpha))
}

/// Line-of-sight steering vector of a uniform linear array.
///
/// Entry `m` is `exp(j 2π (d̄/λ̄) m sin aod)`; all entries have unit modulus.
pub fn los_steering(m: usize, aod: f64, spacing_ratio: f64) -> DVector<C64> {
    let step = std::f64::consts::TAU * spacing_ratio * aod.sin();
    DVector::from_fn(m, |i, _| C64::from_polar(1.0, step * i as f64))
}

/// Sample the Rician BS-RIS link.
///
/// `r̄ = sqrt(L(d0)/(κ+1)) (sqrt(κ) r_los + r_nlos)` with IID CN(0,1)
/// scattering entries, so each entry has expected power `L(d0)`.
pub fn sample_bs_ris(
    params: &ChannelParams,
    d0: f64,
    m: usize,
    aod: f64,
    rng: &mut impl Rng,
) -> Result<DVector<C64>, ChannelError> {
    let gain = path_loss(d0, params)?;
    let los = los_steering(m, aod, params.element_spacing_ratio);
    let scale = (gain / (params.kappa + 1.0)).sqrt();
    let k_sqrt = params.kappa.sqrt();
    Ok(DVector::from_fn(m, |i, _| scale * (k_sqrt * los[i] + standard_complex(rng))))
}

/// Sample the Rayleigh links of a single user: the scalar direct link and
/// the `M`-vector RIS link, each scaled to its path-loss power.
pub fn sample_user_link(
    params: &ChannelParams,
    d_bs: f64,
    d_ris: f64,
    m: usize,
    rng_direct: &mut impl Rng,
    rng_ris: &mut impl Rng,
) -> Result<(C64, DVector<C64>), ChannelError> {
    let g_bs = path_loss(d_bs, params)?.sqrt();
    let g_ris = path_loss(d_ris, params)?.sqrt();
    let h = g_bs * standard_complex(rng_direct);
    let r = DVector::from_fn(m, |_, _| g_ris * standard_complex(rng_ris));
    Ok((h, r))
}

/// Sample all user-related links from a single RNG, in user order.
pub fn sample_user_links(
    topology: &Topology,
    params: &ChannelParams,
    m: usize,
    rng: &mut impl Rng,
) -> Result<Vec<(C64, DVector<C64>)>, ChannelError> {
    (0..topology.num_users())
        .map(|u| {
            let d_bs = topology.user_bs_distance(u);
            let d_ris = topology.user_ris_distance(u);
            let g_bs = path_loss(d_bs, params)?.sqrt();
            let g_ris = path_loss(d_ris, params)?.sqrt();
            let h = g_bs * standard_complex(rng);
            let r = DVector::from_fn(m, |_, _| g_ris * standard_complex(rng));
            Ok((h, r))
        })
        .collect()
}

/// All complex channel coefficients of one fading block.
#[derive(Debug, Clone)]
pub struct ChannelRealization {
    /// Direct BS-user links, one per user.
    pub h: Vec<C64>,
    /// RIS-user links, one `M`-vector per user.
    pub r: Vec<DVector<C64>>,
    /// BS-RIS link.
    pub r_bar: DVector<C64>,
    /// Fading-block index (equals the round for per-round fading).
    pub round_index: usize,
}

impl ChannelRealization {
    /// Sample a fading block from the per-entity streams of `seed`.
    ///
    /// Stream keying makes the draw for user `u` / element `m` independent of
    /// the number of users or elements, so element-count sweeps share their
    /// low-index draws. `blocked` zeroes the direct links.
    pub fn sample(
        topology: &Topology,
        params: &ChannelParams,
        m: usize,
        aod: f64,
        block: usize,
        blocked: bool,
        seed: u64,
    ) -> Result<Self, ChannelError> {
        let mut r_bar_rng = rng::stream(seed, Stream::BsRisLink { block });
        let r_bar = sample_bs_ris(params, topology.bs_ris_distance(), m, aod, &mut r_bar_rng)?;
        let mut h = Vec::with_capacity(topology.num_users());
        let mut r = Vec::with_capacity(topology.num_users());
        for u in 0..topology.num_users() {
            let mut rng_d = rng::stream(seed, Stream::DirectLink { user: u, block });
            let mut rng_r = rng::stream(seed, Stream::RisLink { user: u, block });
            let (hu, ru) = sample_user_link(
                params,
                topology.user_bs_distance(u),
                topology.user_ris_distance(u),
                m,
                &mut rng_d,
                &mut rng_r,
            )?;
            h.push(if blocked { C64::new(0.0, 0.0) } else { hu });
            r.push(ru);
        }
        Ok(Self { h, r, r_bar, round_index: block })
    }

    pub fn num_elements(&self) -> usize {
        self.r_bar.len()
    }

    pub fn num_users(&self) -> usize {
        self.h.len()
    }

    /// Apply a receive gain `c` to every propagation path (direct links and
    /// the BS-side hop), scaling every combined channel by `c`.
    pub fn apply_gain(&mut self, c: f64) {
        for h in &mut self.h {
            *h *= c;
        }
        self.r_bar *= C64::new(c, 0.0);
    }
}

/// Combined channel `h_u + r̄ᴴ Θ_u r_u` for one user, with `Θ_u` given by
/// its diagonal.
pub fn combined_channel(
    h_u: C64,
    r_bar: &DVector<C64>,
    theta_diag: &DVector<C64>,
    r_u: &DVector<C64>,
) -> Result<C64, ChannelError> {
    if r_bar.len() != theta_diag.len() || r_bar.len() != r_u.len() {
        return Err(ChannelError::DimensionMismatch(format!(
            "r_bar {} / theta {} / r_u {}",
            r_bar.len(),
            theta_diag.len(),
            r_u.len()
        )));
    }
    let cascade: C64 =
        (0..r_bar.len()).map(|i| r_bar[i].conj() * theta_diag[i] * r_u[i]).sum();
    Ok(h_u + cascade)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params() -> ChannelParams {
        ChannelParams::new(1e-3, 2.2, 2.0, 1e-11, 0.5).unwrap()
    }

    #[test]
    fn path_loss_reference_distance_is_varsigma0() {
        let p = params();
        assert_eq!(path_loss(1.0, &p).unwrap(), p.varsigma0);
    }

    #[test]
    fn path_loss_matches_formula() {
        // 1e-3 * 10^{-2.2}
        let p = params();
        assert_relative_eq!(path_loss(10.0, &p).unwrap(), 6.309573444801933e-6, max_relative = 1e-12);
    }

    #[test]
    fn path_loss_rejects_nonpositive_distance() {
        assert!(path_loss(0.0, &params()).is_err());
        assert!(path_loss(-3.0, &params()).is_err());
    }

    #[test]
    fn steering_at_zero_angle_is_all_ones() {
        let v = los_steering(5, 0.0, 0.5);
        for e in v.iter() {
            assert_relative_eq!(e.re, 1.0, epsilon = 1e-15);
            assert_relative_eq!(e.im, 0.0, epsilon = 1e-15);
        }
    }

    #[test]
    fn steering_half_spacing_broadside() {
        // M=2, d/λ=1/2, aod=π/2 → [1, e^{jπ}] = [1, -1]
        let v = los_steering(2, std::f64::consts::FRAC_PI_2, 0.5);
        assert_relative_eq!(v[0].re, 1.0, epsilon = 1e-12);
        assert_relative_eq!(v[1].re, -1.0, epsilon = 1e-12);
        assert!(v[1].im.abs() < 1e-12);
    }

    #[test]
    fn steering_entries_have_unit_modulus() {
        let v = los_steering(64, 1.234, 0.5);
        for e in v.iter() {
            assert_relative_eq!(e.norm(), 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn bs_ris_large_kappa_limit_is_deterministic_los() {
        let p = ChannelParams::new(1e-3, 2.2, 1e12, 1e-11, 0.5).unwrap();
        let mut rng = rng::stream(1, Stream::Custom(1));
        let aod = 0.7;
        let r_bar = sample_bs_ris(&p, 50.0, 4, aod, &mut rng).unwrap();
        let expect = los_steering(4, aod, 0.5) * C64::from(path_loss(50.0, &p).unwrap().sqrt());
        for i in 0..4 {
            assert_relative_eq!(r_bar[i].re, expect[i].re, max_relative = 1e-4);
            assert_relative_eq!(r_bar[i].im, expect[i].im, epsilon = 1e-7);
        }
    }

    #[test]
    fn bs_ris_entry_power_matches_path_loss() {
        // Monte-Carlo oracle: E|r̄_m|² = L(d0) within 1% at 1e6 entry draws.
        let p = params();
        let mut rng = rng::stream(2, Stream::Custom(2));
        let m = 8;
        let draws = 125_000;
        let target = path_loss(50.0, &p).unwrap();
        let mut acc = 0.0;
        for _ in 0..draws {
            let r_bar = sample_bs_ris(&p, 50.0, m, 0.3, &mut rng).unwrap();
            acc += r_bar.iter().map(|e| e.norm_sqr()).sum::<f64>();
        }
        let mean = acc / (draws * m) as f64;
        assert!(
            (mean - target).abs() / target < 0.01,
            "mean {mean:e} vs target {target:e}"
        );
    }

    #[test]
    fn user_link_powers_match_path_loss() {
        let p = params();
        let topo = Topology::new(
            [0.0, 0.0, 0.0],
            [0.0, 50.0, 0.0],
            vec![[0.0, 47.0, 0.0], [3.0, 50.0, 0.0]],
            vec![UserRole::Noma, UserRole::AirFl],
        )
        .unwrap();
        let mut rng = rng::stream(3, Stream::Custom(3));
        let draws = 250_000;
        let mut acc_h = [0.0f64; 2];
        let mut acc_r = [0.0f64; 2];
        for _ in 0..draws {
            let links = sample_user_links(&topo, &p, 2, &mut rng).unwrap();
            for (u, (h, r)) in links.iter().enumerate() {
                acc_h[u] += h.norm_sqr();
                acc_r[u] += r.iter().map(|e| e.norm_sqr()).sum::<f64>() / 2.0;
            }
        }
        for u in 0..2 {
            let t_h = path_loss(topo.user_bs_distance(u), &p).unwrap();
            let t_r = path_loss(topo.user_ris_distance(u), &p).unwrap();
            let m_h = acc_h[u] / draws as f64;
            let m_r = acc_r[u] / draws as f64;
            assert!((m_h - t_h).abs() / t_h < 0.01, "user {u}: {m_h:e} vs {t_h:e}");
            assert!((m_r - t_r).abs() / t_r < 0.01, "user {u}: {m_r:e} vs {t_r:e}");
        }
    }

    #[test]
    fn realization_is_reproducible() {
        let p = params();
        let mut topo_rng = rng::stream(9, Stream::Topology);
        let topo = Topology::sample_disc(
            [0.0, 0.0, 0.0],
            [0.0, 50.0, 0.0],
            [0.0, 50.0],
            5.0,
            3,
            3,
            &mut topo_rng,
        )
        .unwrap();
        let a = ChannelRealization::sample(&topo, &p, 20, 0.4, 0, false, 77).unwrap();
        let b = ChannelRealization::sample(&topo, &p, 20, 0.4, 0, false, 77).unwrap();
        assert_eq!(a.h, b.h);
        assert_eq!(a.r_bar.as_slice(), b.r_bar.as_slice());
        for u in 0..a.num_users() {
            assert_eq!(a.r[u].as_slice(), b.r[u].as_slice());
        }
    }

    #[test]
    fn element_draws_are_subset_consistent_across_m() {
        let p = params();
        let topo = Topology::new(
            [0.0, 0.0, 0.0],
            [0.0, 50.0, 0.0],
            vec![[1.0, 48.0, 0.0]],
            vec![UserRole::AirFl],
        )
        .unwrap();
        let small = ChannelRealization::sample(&topo, &p, 10, 0.4, 0, false, 5).unwrap();
        let large = ChannelRealization::sample(&topo, &p, 30, 0.4, 0, false, 5).unwrap();
        assert_eq!(small.h, large.h);
        for i in 0..10 {
            assert_eq!(small.r_bar[i], large.r_bar[i]);
            assert_eq!(small.r[0][i], large.r[0][i]);
        }
    }

    #[test]
    fn blocked_zeroes_direct_links() {
        let p = params();
        let topo = Topology::new(
            [0.0, 0.0, 0.0],
            [0.0, 50.0, 0.0],
            vec![[1.0, 48.0, 0.0]],
            vec![UserRole::AirFl],
        )
        .unwrap();
        let c = ChannelRealization::sample(&topo, &p, 4, 0.4, 0, true, 5).unwrap();
        assert_eq!(c.h[0], C64::new(0.0, 0.0));
        assert!(c.r_bar.iter().any(|e| e.norm() > 0.0));
    }

    #[test]
    fn combined_channel_with_zero_theta_is_direct_link() {
        let h = C64::new(0.3, -0.1);
        let r_bar = DVector::from_element(3, C64::new(0.5, 0.2));
        let r_u = DVector::from_element(3, C64::new(-0.4, 0.9));
        let theta = DVector::from_element(3, C64::new(0.0, 0.0));
        let out = combined_channel(h, &r_bar, &theta, &r_u).unwrap();
        assert_eq!(out, h);
    }

    #[test]
    fn combined_channel_unit_cascade() {
        let one = C64::new(1.0, 0.0);
        let out = combined_channel(
            C64::new(0.0, 0.0),
            &DVector::from_element(1, one),
            &DVector::from_element(1, one),
            &DVector::from_element(1, one),
        )
        .unwrap();
        assert_relative_eq!(out.re, 1.0, epsilon = 1e-15);
        assert_relative_eq!(out.im, 0.0, epsilon = 1e-15);
    }

    #[test]
    fn combined_channel_rejects_mismatched_dims() {
        let one = C64::new(1.0, 0.0);
        assert!(combined_channel(
            one,
            &DVector::from_element(2, one),
            &DVector::from_element(3, one),
            &DVector::from_element(2, one),
        )
        .is_err());
    }

    #[test]
    fn roles_by_gain_sorts_noma_first() {
        let mut topo = Topology::new(
            [0.0, 0.0, 0.0],
            [0.0, 50.0, 0.0],
            vec![
                [0.0, 46.0, 0.0],
                [0.0, 47.0, 0.0],
                [0.0, 48.0, 0.0],
                [0.0, 49.0, 0.0],
            ],
            vec![UserRole::Noma, UserRole::Noma, UserRole::AirFl, UserRole::AirFl],
        )
        .unwrap();
        topo.assign_roles_by_gain(&[0.1, 0.7, 0.3, 0.9]);
        // expected order of original indices: 3, 1, 2, 0
        assert_eq!(topo.user_positions[0][1], 49.0);
        assert_eq!(topo.user_positions[1][1], 47.0);
        assert_eq!(topo.user_positions[2][1], 48.0);
        assert_eq!(topo.user_positions[3][1], 46.0);
        assert_eq!(topo.user_role, vec![
            UserRole::Noma,
            UserRole::Noma,
            UserRole::AirFl,
            UserRole::AirFl
        ]);
    }

    #[test]
    fn sides_derive_from_position() {
        let topo = Topology::new(
            [0.0, 0.0, 0.0],
            [0.0, 50.0, 0.0],
            vec![[0.0, 47.0, 0.0], [0.0, 53.0, 0.0]],
            vec![UserRole::Noma, UserRole::AirFl],
        )
        .unwrap();
        assert_eq!(topo.side_assignment, vec![Side::Reflect, Side::Transmit]);
    }
}

//! Scenario configuration: a TOML file with explicit units in field names,
//! converted to linear scale at parse time. Every field has a default equal
//! to the standard evaluation setup, so an empty file is a valid scenario.

use airstar_core::alloc::OptimizerOptions;
use airstar_core::channel::ChannelParams;
use airstar_core::learning::{make_synthetic_task, LearningTask, RateSchedule};
use airstar_core::scenario::ScenarioSpec;
use airstar_core::{db_to_linear, dbm_to_watts};
use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TopologySection {
    pub bs_position_m: [f64; 3],
    pub ris_position_m: [f64; 3],
    pub user_center_m: [f64; 2],
    pub user_radius_m: f64,
    pub num_noma_users: usize,
    pub num_airfl_users: usize,
    pub num_elements: usize,
    /// Give the NOMA roles to the users with the strongest channels.
    pub assign_noma_to_strongest: bool,
}

impl Default for TopologySection {
    fn default() -> Self {
        Self {
            bs_position_m: [0.0, 0.0, 0.0],
            ris_position_m: [0.0, 50.0, 0.0],
            user_center_m: [0.0, 50.0],
            user_radius_m: 5.0,
            num_noma_users: 3,
            num_airfl_users: 3,
            num_elements: 20,
            assign_noma_to_strongest: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ChannelSection {
    pub reference_path_loss_db: f64,
    pub path_loss_exponent: f64,
    pub rician_factor: f64,
    pub noise_power_dbm: f64,
    pub element_spacing_ratio: f64,
    /// Receive-normalization reference gain (dimensionless); 0 disables.
    pub agc_reference_gain: f64,
    pub blocked_direct_links: bool,
    pub block_fading: bool,
}

impl Default for ChannelSection {
    fn default() -> Self {
        Self {
            reference_path_loss_db: -30.0,
            path_loss_exponent: 2.2,
            rician_factor: 2.0,
            noise_power_dbm: -80.0,
            element_spacing_ratio: 0.5,
            agc_reference_gain: 10.0,
            blocked_direct_links: false,
            block_fading: true,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LearningSection {
    pub train_samples: usize,
    pub samples_per_round: usize,
    pub observation_noise: f64,
    pub pilot_batches: usize,
    pub rounds: usize,
    pub learning_rate: f64,
    /// When set, overrides the constant rate with `Γ/(t+ν)`.
    pub diminishing_gamma: Option<f64>,
    pub diminishing_nu: Option<f64>,
}

impl Default for LearningSection {
    fn default() -> Self {
        Self {
            train_samples: 30_000,
            samples_per_round: 50,
            observation_noise: 0.5,
            pilot_batches: 1000,
            rounds: 200,
            learning_rate: 1e-4,
            diminishing_gamma: None,
            diminishing_nu: None,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConstraintSection {
    pub min_rate_bps_hz: f64,
    pub mse_tolerance: f64,
    pub peak_power_dbm: f64,
    pub avg_power_dbm: f64,
}

impl Default for ConstraintSection {
    fn default() -> Self {
        Self {
            min_rate_bps_hz: 1.0,
            mse_tolerance: 0.01,
            peak_power_dbm: 23.0,
            avg_power_dbm: 20.0,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerSection {
    /// Rounds in the joint optimization horizon.
    pub horizon_rounds: usize,
    pub trust_region_initial: f64,
    pub trust_region_tol: f64,
    pub max_sca_iters: usize,
    pub penalty_initial: f64,
    pub penalty_scale: f64,
    pub penalty_obj_tol: f64,
    pub binary_tol: f64,
    pub max_inner_iters: usize,
    pub max_penalty_stages: usize,
    pub num_randomization: usize,
    pub rank_one_ratio: f64,
    pub max_outer_rounds: usize,
    pub outer_rel_tol: f64,
    pub rounding_backoff: f64,
}

impl Default for OptimizerSection {
    fn default() -> Self {
        let o = OptimizerOptions::default();
        Self {
            horizon_rounds: 5,
            trust_region_initial: o.trust_region_initial,
            trust_region_tol: o.trust_region_tol,
            max_sca_iters: o.max_sca_iters,
            penalty_initial: o.penalty_initial,
            penalty_scale: o.penalty_scale,
            penalty_obj_tol: o.penalty_obj_tol,
            binary_tol: o.binary_tol,
            max_inner_iters: o.max_inner_iters,
            max_penalty_stages: o.max_penalty_stages,
            num_randomization: o.num_randomization,
            rank_one_ratio: o.rank_one_ratio,
            max_outer_rounds: o.max_outer,
            outer_rel_tol: o.outer_rel_tol,
            rounding_backoff: o.rounding_backoff,
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub scheme: String,
    pub seeds: Vec<u64>,
    pub threads: usize,
}

impl Default for RunSection {
    fn default() -> Self {
        Self { scheme: "proposed".to_string(), seeds: vec![1], threads: 1 }
    }
}

/// Full scenario description; all §-defaults baked into `Default`.
#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub topology: TopologySection,
    pub channel: ChannelSection,
    pub learning: LearningSection,
    pub constraints: ConstraintSection,
    pub optimizer: OptimizerSection,
    pub run: RunSection,
}

impl Scenario {
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let scenario: Scenario = toml::from_str(text).context("invalid scenario config")?;
        scenario.validate()?;
        Ok(scenario)
    }

    pub fn from_path(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("cannot read config {}", path.display()))?;
        Self::from_toml_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.topology.num_airfl_users == 0 {
            bail!("topology.num_airfl_users: at least one AirFL user is required");
        }
        if self.topology.user_radius_m <= 0.0 {
            bail!("topology.user_radius_m must be positive");
        }
        if self.learning.rounds == 0 {
            bail!("learning.rounds must be at least 1");
        }
        if self.learning.learning_rate <= 0.0 {
            bail!("learning.learning_rate must be positive");
        }
        if self.constraints.mse_tolerance <= 0.0 {
            bail!("constraints.mse_tolerance must be positive");
        }
        if let (Some(g), nu) = (self.learning.diminishing_gamma, self.learning.diminishing_nu) {
            if g <= 0.0 || nu.unwrap_or(1.0) <= 0.0 {
                bail!("diminishing schedule requires positive gamma and nu");
            }
        }
        Ok(())
    }

    pub fn channel_params(&self) -> Result<ChannelParams> {
        ChannelParams::new(
            db_to_linear(self.channel.reference_path_loss_db),
            self.channel.path_loss_exponent,
            self.channel.rician_factor,
            dbm_to_watts(self.channel.noise_power_dbm),
            self.channel.element_spacing_ratio,
        )
        .map_err(|e| anyhow::anyhow!("channel parameters: {e}"))
    }

    pub fn to_spec(&self) -> Result<ScenarioSpec> {
        Ok(ScenarioSpec {
            bs_position: self.topology.bs_position_m,
            ris_position: self.topology.ris_position_m,
            user_center: self.topology.user_center_m,
            user_radius: self.topology.user_radius_m,
            num_noma: self.topology.num_noma_users,
            num_airfl: self.topology.num_airfl_users,
            num_elements: self.topology.num_elements,
            params: self.channel_params()?,
            agc_reference_gain: self.channel.agc_reference_gain,
            blocked: self.channel.blocked_direct_links,
            block_fading: self.channel.block_fading,
            sort_roles_by_gain: self.topology.assign_noma_to_strongest,
            peak_power: dbm_to_watts(self.constraints.peak_power_dbm),
            avg_power: dbm_to_watts(self.constraints.avg_power_dbm),
            min_rate: self.constraints.min_rate_bps_hz,
            mse_tol: self.constraints.mse_tolerance,
        })
    }

    pub fn optimizer_options(&self) -> OptimizerOptions {
        let o = &self.optimizer;
        OptimizerOptions {
            trust_region_initial: o.trust_region_initial,
            trust_region_tol: o.trust_region_tol,
            max_sca_iters: o.max_sca_iters,
            sca_ratio_test: false,
            penalty_initial: o.penalty_initial,
            penalty_scale: o.penalty_scale,
            penalty_obj_tol: o.penalty_obj_tol,
            binary_tol: o.binary_tol,
            max_inner_iters: o.max_inner_iters,
            max_penalty_stages: o.max_penalty_stages,
            num_randomization: o.num_randomization,
            rank_one_ratio: o.rank_one_ratio,
            qcqp_tol: OptimizerOptions::default().qcqp_tol,
            sdp_tol: OptimizerOptions::default().sdp_tol,
            sdp_max_iter: OptimizerOptions::default().sdp_max_iter,
            max_outer: o.max_outer_rounds,
            outer_rel_tol: o.outer_rel_tol,
            feas_tol: OptimizerOptions::default().feas_tol,
            rounding_backoff: o.rounding_backoff,
            per_round_power_cap: true,
        }
    }

    /// Learning-rate schedule from the config.
    pub fn rate_schedule(&self) -> RateSchedule {
        match (self.learning.diminishing_gamma, self.learning.diminishing_nu) {
            (Some(gamma), nu) => {
                RateSchedule::Diminishing { gamma, nu: nu.unwrap_or(1.0), cap: None }
            }
            _ => RateSchedule::Constant(self.learning.learning_rate),
        }
    }

    /// Learning rate used inside the bound objective (constant schedules
    /// use it directly; diminishing ones optimize at the initial rate).
    pub fn bound_rate(&self) -> f64 {
        match self.rate_schedule() {
            RateSchedule::Constant(l) => l,
            s @ RateSchedule::Diminishing { .. } => s.at(0),
        }
    }

    pub fn build_task(&self, seed: u64) -> LearningTask {
        make_synthetic_task(
            self.topology.num_airfl_users,
            self.learning.samples_per_round,
            self.learning.train_samples,
            self.learning.observation_noise,
            self.learning.pilot_batches,
            seed,
        )
    }
}

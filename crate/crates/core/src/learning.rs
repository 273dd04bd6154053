//! The synthetic strongly convex learning task and the federated training
//! loop over the noisy aggregated channel.
//!
//! The task is linear regression with mean-squared-error loss on data
//! `y = cᵀx + 0.5 n₀`, `x ~ N(0, I)`, `c = [1, 2, …]`. Smoothness and
//! strong-convexity constants come from the extreme eigenvalues of the data
//! Hessian `(2/n) XᵀX`, the optimal loss from the closed-form least-squares
//! solution, and the per-coordinate gradient-deviation bounds from a pilot
//! phase of mini-batch draws at the initial model.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::bound::TaskConstants;
use crate::rng::{self, Stream};

/// Learning-rate schedule of the global update.
#[derive(Debug, Clone, Copy)]
pub enum RateSchedule {
    Constant(f64),
    /// `λ⁽ᵗ⁾ = Γ/(t+ν)` for 1-based `t`, optionally clamped to a stability
    /// cap derived from the effective gains.
    Diminishing { gamma: f64, nu: f64, cap: Option<f64> },
}

impl RateSchedule {
    /// Rate for the (0-based) round index.
    pub fn at(&self, round: usize) -> f64 {
        match *self {
            RateSchedule::Constant(l) => l,
            RateSchedule::Diminishing { gamma, nu, cap } => {
                let raw = gamma / ((round + 1) as f64 + nu);
                cap.map_or(raw, |c| raw.min(c))
            }
        }
    }
}

/// A strongly convex regression task with per-user data partitions.
#[derive(Debug, Clone)]
pub struct LearningTask {
    /// Model dimension Q.
    pub dim: usize,
    /// Training inputs, one row per sample.
    pub features: DMatrix<f64>,
    /// Training targets.
    pub targets: DVector<f64>,
    /// Per-user sample index ranges (even partition).
    pub user_ranges: Vec<std::ops::Range<usize>>,
    /// Mini-batch size per user per round.
    pub batch_size: usize,
    /// Optimal loss F*.
    pub optimal_loss: f64,
    /// Least-squares minimizer.
    pub optimal_w: DVector<f64>,
    /// Largest eigenvalue of the data Hessian.
    pub l_smooth: f64,
    /// Smallest eigenvalue of the data Hessian.
    pub mu_strong: f64,
    /// Per-coordinate gradient-deviation bounds (pilot estimate).
    pub delta: DVector<f64>,
}

/// Build the synthetic regression task.
///
/// `num_samples` IID rows are generated and partitioned evenly over
/// `num_users`; `pilot_batches` mini-batch draws at `w = 0` calibrate the
/// deviation bounds, inflated by 10%.
pub fn make_synthetic_task(
    num_users: usize,
    samples_per_round: usize,
    num_samples: usize,
    observation_noise: f64,
    pilot_batches: usize,
    seed: u64,
) -> LearningTask {
    assert!(num_users >= 1);
    let dim = 10;
    let coeff = DVector::from_fn(dim, |i, _| (i + 1) as f64);
    let mut rng = rng::stream(seed, Stream::Dataset);
    let n = num_samples - num_samples % num_users;
    let mut features = DMatrix::zeros(n, dim);
    let mut targets = DVector::zeros(n);
    for i in 0..n {
        let mut dot = 0.0;
        for j in 0..dim {
            let x: f64 = rng.sample(StandardNormal);
            features[(i, j)] = x;
            dot += coeff[j] * x;
        }
        let noise: f64 = rng.sample(StandardNormal);
        targets[i] = dot + observation_noise * noise;
    }
    let per_user = n / num_users;
    let user_ranges: Vec<_> = (0..num_users).map(|k| k * per_user..(k + 1) * per_user).collect();
    LearningTask::from_data(features, targets, user_ranges, samples_per_round, pilot_batches, seed)
}

impl LearningTask {
    /// Assemble a task from explicit data, computing the closed-form
    /// constants and running the pilot phase.
    pub fn from_data(
        features: DMatrix<f64>,
        targets: DVector<f64>,
        user_ranges: Vec<std::ops::Range<usize>>,
        batch_size: usize,
        pilot_batches: usize,
        seed: u64,
    ) -> Self {
        let n = features.nrows();
        let dim = features.ncols();
        let hessian = features.transpose() * &features * (2.0 / n as f64);
        let eig = hessian.clone().symmetric_eigen();
        let l_smooth = eig.eigenvalues.iter().cloned().fold(f64::MIN, f64::max);
        let mu_strong = eig.eigenvalues.iter().cloned().fold(f64::MAX, f64::min);
        let rhs = features.transpose() * &targets * (2.0 / n as f64);
        let optimal_w = hessian
            .clone()
            .cholesky()
            .map(|ch| ch.solve(&rhs))
            .unwrap_or_else(|| hessian.clone().lu().solve(&rhs).expect("singular data Hessian"));

        let mut task = Self {
            dim,
            features,
            targets,
            user_ranges,
            batch_size,
            optimal_loss: 0.0,
            optimal_w: optimal_w.clone(),
            l_smooth,
            mu_strong,
            delta: DVector::zeros(dim),
        };
        task.optimal_loss = task.loss(&optimal_w);
        if pilot_batches > 0 {
            task.delta = task.pilot_delta(pilot_batches, seed);
        }
        task
    }

    /// Mean-squared-error loss over the full training set.
    pub fn loss(&self, w: &DVector<f64>) -> f64 {
        let r = &self.features * w - &self.targets;
        r.norm_squared() / self.features.nrows() as f64
    }

    /// Optimality gap `F(w) − F*`.
    pub fn gap(&self, w: &DVector<f64>) -> f64 {
        self.loss(w) - self.optimal_loss
    }

    /// Full-data gradient `(2/n) Xᵀ(Xw − y)`.
    pub fn full_gradient(&self, w: &DVector<f64>) -> DVector<f64> {
        let r = &self.features * w - &self.targets;
        self.features.transpose() * r * (2.0 / self.features.nrows() as f64)
    }

    /// Full gradient of one user's partition.
    pub fn local_full_gradient(&self, user: usize, w: &DVector<f64>) -> DVector<f64> {
        let range = self.user_ranges[user].clone();
        let mut grad = DVector::zeros(self.dim);
        for i in range.clone() {
            let row = self.features.row(i);
            let r = row.dot(&w.transpose()) - self.targets[i];
            for j in 0..self.dim {
                grad[j] += 2.0 * r * row[j];
            }
        }
        grad / range.len() as f64
    }

    /// Mini-batch gradient from an explicit RNG (uniform with replacement
    /// within the user's partition).
    pub fn local_gradient_with_rng(
        &self,
        user: usize,
        w: &DVector<f64>,
        rng: &mut impl Rng,
    ) -> DVector<f64> {
        let range = self.user_ranges[user].clone();
        let mut grad = DVector::zeros(self.dim);
        for _ in 0..self.batch_size {
            let i = range.start + (rng.gen::<u64>() as usize) % range.len();
            let row = self.features.row(i);
            let r = row.dot(&w.transpose()) - self.targets[i];
            for j in 0..self.dim {
                grad[j] += 2.0 * r * row[j];
            }
        }
        grad / self.batch_size as f64
    }

    /// Mini-batch gradient of user `k` in a given round, drawn from the
    /// round's dedicated stream.
    pub fn local_gradient(
        &self,
        user: usize,
        w: &DVector<f64>,
        round: usize,
        seed: u64,
    ) -> DVector<f64> {
        let mut rng = rng::stream(seed, Stream::Batch { user, round });
        self.local_gradient_with_rng(user, w, &mut rng)
    }

    /// Per-coordinate max deviation of pilot mini-batch gradients from the
    /// global gradient at `w = 0`, inflated by 10%.
    fn pilot_delta(&self, pilot_batches: usize, seed: u64) -> DVector<f64> {
        let w0: DVector<f64> = DVector::zeros(self.dim);
        let global = self.full_gradient(&w0);
        let users = self.user_ranges.len();
        let mut delta: DVector<f64> = DVector::zeros(self.dim);
        for b in 0..pilot_batches {
            let user = b % users;
            let mut rng = rng::stream(seed, Stream::Pilot { user, batch: b });
            let g = self.local_gradient_with_rng(user, &w0, &mut rng);
            for j in 0..self.dim {
                delta[j] = delta[j].max((g[j] - global[j]).abs());
            }
        }
        delta * 1.1
    }

    pub fn delta_norm_sq(&self) -> f64 {
        self.delta.norm_squared()
    }

    /// Bound constants for this task under the given channel noise, with
    /// the initial gap taken at `w = 0`.
    pub fn constants(&self, sigma2: f64) -> TaskConstants {
        TaskConstants {
            mu: self.mu_strong,
            l_smooth: self.l_smooth,
            model_dim: self.dim,
            delta_norm_sq: self.delta_norm_sq(),
            sigma2,
            num_airfl: self.user_ranges.len(),
            initial_gap: self.gap(&DVector::zeros(self.dim)),
        }
    }
}

/// Channel state of one training round as seen by the learning loop.
#[derive(Debug, Clone)]
pub struct RoundChannel {
    /// Real effective gains `h̄_k p_k` of the AirFL users.
    pub effective_gains: Vec<f64>,
    /// Receiver noise power per gradient coordinate.
    pub sigma2: f64,
    /// Extra per-coordinate interference power from undecoded NOMA signals.
    pub extra_noise_var: f64,
}

/// One noisy global update: `w − λ (1/K)(Σ_k z_k g_k + z)` with real
/// per-coordinate Gaussian receiver noise of variance `sigma2`.
pub fn noisy_global_update(
    w: &DVector<f64>,
    local_grads: &[DVector<f64>],
    effective_gains: &[f64],
    sigma2: f64,
    lambda_t: f64,
    rng: &mut impl Rng,
) -> DVector<f64> {
    let k = local_grads.len();
    assert_eq!(effective_gains.len(), k);
    let dim = w.len();
    let mut agg = DVector::zeros(dim);
    for (g, &z) in local_grads.iter().zip(effective_gains) {
        agg += g * z;
    }
    if sigma2 > 0.0 {
        let sd = sigma2.sqrt();
        for j in 0..dim {
            let n: f64 = rng.sample(StandardNormal);
            agg[j] += sd * n;
        }
    }
    w - agg * (lambda_t / k as f64)
}

/// Trace of one federated training run.
#[derive(Debug, Clone)]
pub struct LearningRun {
    pub w_trace: Vec<DVector<f64>>,
    /// `F(w) − F*` after each round's update.
    pub gap_trace: Vec<f64>,
    /// Closed-form aggregation error of each round's alloc.
    pub mse_trace: Vec<f64>,
    pub rounds: usize,
    pub schedule: RateSchedule,
}

impl LearningRun {
    pub fn final_gap(&self) -> f64 {
        *self.gap_trace.last().expect("at least one round")
    }
}

/// Run the broadcast → local gradient → noisy aggregate → update loop for
/// `rounds` rounds starting from `w = 0`.
///
/// `channel` supplies the per-round effective gains and noise; batch and
/// receiver-noise draws come from the round-keyed streams of `seed`.
pub fn train(
    task: &LearningTask,
    schedule: RateSchedule,
    channel: impl Fn(usize) -> RoundChannel,
    rounds: usize,
    seed: u64,
) -> LearningRun {
    assert!(rounds >= 1);
    let users = task.user_ranges.len();
    let mut w = DVector::zeros(task.dim);
    let mut w_trace = Vec::with_capacity(rounds);
    let mut gap_trace = Vec::with_capacity(rounds);
    let mut mse_trace = Vec::with_capacity(rounds);
    for t in 0..rounds {
        let ch = channel(t);
        assert_eq!(ch.effective_gains.len(), users);
        let grads: Vec<DVector<f64>> =
            (0..users).map(|k| task.local_gradient(k, &w, t, seed)).collect();
        let mut noise_rng = rng::stream(seed, Stream::AggregationNoise { round: t });
        let lambda_t = schedule.at(t);
        w = noisy_global_update(
            &w,
            &grads,
            &ch.effective_gains,
            ch.sigma2 + ch.extra_noise_var,
            lambda_t,
            &mut noise_rng,
        );
        gap_trace.push(task.gap(&w));
        mse_trace.push(crate::signal::aggregation_mse(
            &ch.effective_gains,
            ch.sigma2 + ch.extra_noise_var,
            users,
        ));
        w_trace.push(w.clone());
    }
    LearningRun { w_trace, gap_trace, mse_trace, rounds, schedule }
}

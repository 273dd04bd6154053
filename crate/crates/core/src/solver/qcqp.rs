//! Log-barrier interior-point solver for small convex QCQPs.
//!
//! Problems have a linear objective, convex quadratic inequality
//! constraints `xᵀAx + bᵀx + c ≤ 0` with `A ⪰ 0`, and per-variable boxes.
//! A phase-1 pass maximizes the feasibility slack to find a strictly
//! interior starting point; phase 2 follows the central path with Newton
//! steps and backtracking line search, multiplying the barrier parameter by
//! ten per outer stage. Everything is deterministic.

use nalgebra::{DMatrix, DVector};

/// One convex constraint `xᵀ A x + bᵀ x + c ≤ 0`; `quad = None` means a
/// purely linear constraint.
#[derive(Debug, Clone)]
pub struct QuadConstraint {
    pub quad: Option<DMatrix<f64>>,
    pub linear: DVector<f64>,
    pub offset: f64,
}

impl QuadConstraint {
    pub fn linear(linear: DVector<f64>, offset: f64) -> Self {
        Self { quad: None, linear, offset }
    }

    pub fn value(&self, x: &DVector<f64>) -> f64 {
        let mut v = self.linear.dot(x) + self.offset;
        if let Some(a) = &self.quad {
            v += (x.transpose() * a * x)[(0, 0)];
        }
        v
    }

    fn gradient(&self, x: &DVector<f64>) -> DVector<f64> {
        match &self.quad {
            Some(a) => a * x * 2.0 + &self.linear,
            None => self.linear.clone(),
        }
    }
}

/// Linear objective `min cᵀx` over quadratic constraints and boxes.
/// Infinite bounds are allowed.
#[derive(Debug, Clone)]
pub struct QcqpProblem {
    pub objective: DVector<f64>,
    pub constraints: Vec<QuadConstraint>,
    pub lower: DVector<f64>,
    pub upper: DVector<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum SolveStatus {
    /// KKT residual (duality-gap estimate) below tolerance.
    Optimal,
    /// Iteration cap reached; the best iterate is returned.
    MaxIter,
    /// No strictly feasible point exists; carries the residual slack.
    Infeasible { residual: f64 },
}

#[derive(Debug, Clone)]
pub struct QcqpSolution {
    pub x: DVector<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub newton_iterations: usize,
}

struct Barrier<'a> {
    problem: &'a QcqpProblem,
    /// Indices of finitely bounded coordinates.
    lower_idx: Vec<usize>,
    upper_idx: Vec<usize>,
}

impl<'a> Barrier<'a> {
    fn new(problem: &'a QcqpProblem) -> Self {
        let lower_idx =
            (0..problem.lower.len()).filter(|&i| problem.lower[i].is_finite()).collect();
        let upper_idx =
            (0..problem.upper.len()).filter(|&i| problem.upper[i].is_finite()).collect();
        Self { problem, lower_idx, upper_idx }
    }

    fn num_terms(&self) -> usize {
        self.problem.constraints.len() + self.lower_idx.len() + self.upper_idx.len()
    }

    fn strictly_feasible(&self, x: &DVector<f64>, margin: f64) -> bool {
        self.problem.constraints.iter().all(|c| c.value(x) < -margin)
            && self.lower_idx.iter().all(|&i| x[i] - self.problem.lower[i] > margin)
            && self.upper_idx.iter().all(|&i| self.problem.upper[i] - x[i] > margin)
    }

    /// Barrier value `t·cᵀx − Σ log(−f_i)`; infinite outside the interior.
    fn value(&self, x: &DVector<f64>, t: f64) -> f64 {
        let mut v = t * self.problem.objective.dot(x);
        for c in &self.problem.constraints {
            let s = -c.value(x);
            if s <= 0.0 {
                return f64::INFINITY;
            }
            v -= s.ln();
        }
        for &i in &self.lower_idx {
            let s = x[i] - self.problem.lower[i];
            if s <= 0.0 {
                return f64::INFINITY;
            }
            v -= s.ln();
        }
        for &i in &self.upper_idx {
            let s = self.problem.upper[i] - x[i];
            if s <= 0.0 {
                return f64::INFINITY;
            }
            v -= s.ln();
        }
        v
    }

    fn grad_hess(&self, x: &DVector<f64>, t: f64) -> (DVector<f64>, DMatrix<f64>) {
        let n = x.len();
        let mut g = &self.problem.objective * t;
        let mut h = DMatrix::zeros(n, n);
        for c in &self.problem.constraints {
            let s = -c.value(x);
            let cg = c.gradient(x);
            g += &cg / s;
            for i in 0..n {
                for j in 0..n {
                    h[(i, j)] += cg[i] * cg[j] / (s * s);
                }
            }
            if let Some(a) = &c.quad {
                for i in 0..n {
                    for j in 0..n {
                        h[(i, j)] += 2.0 * a[(i, j)] / s;
                    }
                }
            }
        }
        for &i in &self.lower_idx {
            let s = x[i] - self.problem.lower[i];
            g[i] -= 1.0 / s;
            h[(i, i)] += 1.0 / (s * s);
        }
        for &i in &self.upper_idx {
            let s = self.problem.upper[i] - x[i];
            g[i] += 1.0 / s;
            h[(i, i)] += 1.0 / (s * s);
        }
        (g, h)
    }
}

/// Newton minimization of the barrier at fixed `t`. Returns the Newton
/// decrement-converged iterate and the number of iterations spent.
fn center(barrier: &Barrier, mut x: DVector<f64>, t: f64, max_newton: usize) -> (DVector<f64>, usize) {
    let mut iters = 0;
    for _ in 0..max_newton {
        iters += 1;
        let (g, mut h) = barrier.grad_hess(&x, t);
        // ridge fallback keeps the step defined for degenerate Hessians
        let step = loop {
            match h.clone().cholesky() {
                Some(ch) => break ch.solve(&(-&g)),
                None => {
                    let ridge = 1e-10 * (1.0 + h.diagonal().amax());
                    for i in 0..h.nrows() {
                        h[(i, i)] += ridge;
                    }
                }
            }
        };
        let decrement = -g.dot(&step);
        if decrement <= 0.0 {
            break;
        }
        // backtracking line search on the barrier value
        let base = barrier.value(&x, t);
        let mut alpha = 1.0;
        let mut accepted = false;
        for _ in 0..60 {
            let cand = &x + &step * alpha;
            let v = barrier.value(&cand, t);
            if v.is_finite() && v <= base - 0.25 * alpha * decrement {
                x = cand;
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if !accepted || decrement < 1e-14 {
            break;
        }
        if decrement / 2.0 < 1e-12 {
            break;
        }
    }
    (x, iters)
}

fn interior_start(problem: &QcqpProblem) -> DVector<f64> {
    let n = problem.objective.len();
    DVector::from_fn(n, |i, _| {
        let lo = problem.lower[i];
        let hi = problem.upper[i];
        match (lo.is_finite(), hi.is_finite()) {
            (true, true) => 0.51 * lo + 0.49 * hi,
            (true, false) => lo + 1.0,
            (false, true) => hi - 1.0,
            (false, false) => 0.0,
        }
    })
}

/// Phase 1: minimize the max constraint violation `s` over `(x, s)`.
/// Returns a strictly feasible point or the residual violation.
fn phase1(problem: &QcqpProblem, margin: f64) -> Result<DVector<f64>, f64> {
    let x0 = interior_start(problem);
    let bar_check = Barrier::new(problem);
    if bar_check.strictly_feasible(&x0, margin) {
        return Ok(x0);
    }
    let n = problem.objective.len();
    let worst = problem.constraints.iter().map(|c| c.value(&x0)).fold(0.0f64, f64::max);
    let s0 = worst + 1.0;

    // extended problem over (x, s): constraints f_i(x) − s ≤ 0, box on s
    let mut ext_constraints = Vec::with_capacity(problem.constraints.len());
    for c in &problem.constraints {
        let quad = c.quad.as_ref().map(|a| {
            let mut q = DMatrix::zeros(n + 1, n + 1);
            q.view_mut((0, 0), (n, n)).copy_from(a);
            q
        });
        let mut linear = DVector::zeros(n + 1);
        linear.rows_mut(0, n).copy_from(&c.linear);
        linear[n] = -1.0;
        ext_constraints.push(QuadConstraint { quad, linear, offset: c.offset });
    }
    let mut lower = DVector::from_element(n + 1, f64::NEG_INFINITY);
    lower.rows_mut(0, n).copy_from(&problem.lower);
    lower[n] = -2.0 * (1.0 + s0.abs());
    let mut upper = DVector::from_element(n + 1, f64::INFINITY);
    upper.rows_mut(0, n).copy_from(&problem.upper);
    upper[n] = s0 + 1.0;
    let mut objective = DVector::zeros(n + 1);
    objective[n] = 1.0;
    let ext = QcqpProblem { objective, constraints: ext_constraints, lower, upper };
    let barrier = Barrier::new(&ext);

    let trace = std::env::var("AIRSTAR_QCQP_TRACE").is_ok();
    let mut z = DVector::zeros(n + 1);
    z.rows_mut(0, n).copy_from(&x0);
    z[n] = s0;
    let mut t = 1.0;
    for stage in 0..40 {
        let (znew, used) = center(&barrier, z.clone(), t, 50);
        z = znew;
        let x = z.rows(0, n).into_owned();
        if trace {
            let worst =
                problem.constraints.iter().map(|c| c.value(&x)).fold(f64::MIN, f64::max);
            eprintln!("phase1 stage {stage}: t={t:.1e} s={:.6e} worst_f={worst:.6e} newton={used}", z[n]);
        }
        if bar_check.strictly_feasible(&x, margin) {
            return Ok(x);
        }
        if barrier.num_terms() as f64 / t < 1e-10 {
            break;
        }
        t *= 10.0;
    }
    Err(z[n].max(0.0))
}

/// Solve the QCQP with the barrier method. `tol` bounds the final
/// duality-gap estimate `m/t`.
pub fn solve_qcqp(problem: &QcqpProblem, tol: f64, max_iter: usize) -> QcqpSolution {
    let feas_margin = 1e-12;
    let x0 = match phase1(problem, feas_margin) {
        Ok(x) => x,
        Err(residual) => {
            let x = interior_start(problem);
            let objective = problem.objective.dot(&x);
            return QcqpSolution {
                x,
                objective,
                status: SolveStatus::Infeasible { residual },
                newton_iterations: 0,
            };
        }
    };

    let barrier = Barrier::new(problem);
    let m = barrier.num_terms().max(1) as f64;
    let mut x = x0;
    let mut t = 1.0;
    let mut total_newton = 0usize;
    let mut status = SolveStatus::MaxIter;
    while total_newton < max_iter {
        let (xc, used) = center(&barrier, x, t, (max_iter - total_newton).min(60));
        x = xc;
        total_newton += used;
        if m / t <= tol {
            status = SolveStatus::Optimal;
            break;
        }
        t *= 10.0;
    }
    QcqpSolution {
        objective: problem.objective.dot(&x),
        x,
        status,
        newton_iterations: total_newton,
    }
}

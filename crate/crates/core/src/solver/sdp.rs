//! Operator-splitting (ADMM) solver for semidefinite programs with several
//! real symmetric blocks, box-bounded scalar variables, and trace-linear
//! constraints.
//!
//! The iteration alternates a projection onto the affine constraint set
//! (one cached Cholesky factor of `AAᵀ`) with a projection onto the cone
//! product (eigenvalue clipping per block, clamping for scalars and
//! slacks), with over-relaxation and residual-balancing adaptation of the
//! penalty parameter. Inequalities are turned into equalities with
//! non-negative slacks. All updates are deterministic.
//!
//! [`PreparedSdp`] caches the constraint preprocessing, so successive
//! solves that only change the objective (as in penalty / SCA loops) skip
//! the factorization and can warm-start from the previous splitting state.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use super::{psd_project, svec_into, svec_len, unsvec, SolveStatus};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ConstraintKind {
    Eq,
    /// `Σ tr(A_b X_b) + Σ a_j u_j ≤ rhs`
    Le,
}

/// One trace-linear constraint across blocks and scalars.
#[derive(Debug, Clone)]
pub struct SdpConstraint {
    pub block_terms: Vec<(usize, DMatrix<f64>)>,
    pub scalar_terms: Vec<(usize, f64)>,
    pub rhs: f64,
    pub kind: ConstraintKind,
}

/// Minimize `Σ tr(C_b X_b) + dᵀu` over PSD blocks `X_b`, boxed scalars `u`,
/// and the given constraints.
#[derive(Debug, Clone)]
pub struct SdpProblem {
    pub block_dims: Vec<usize>,
    /// One cost matrix per block; must match `block_dims`.
    pub objective_blocks: Vec<DMatrix<f64>>,
    pub scalar_bounds: Vec<(f64, f64)>,
    pub objective_scalars: Vec<f64>,
    pub constraints: Vec<SdpConstraint>,
}

#[derive(Debug, Clone)]
pub struct SdpSolution {
    pub blocks: Vec<DMatrix<f64>>,
    pub scalars: Vec<f64>,
    pub objective: f64,
    pub status: SolveStatus,
    pub primal_residual: f64,
    pub dual_residual: f64,
    pub iterations: usize,
}

/// Splitting state that can seed the next solve of a nearby problem.
#[derive(Debug, Clone)]
pub struct SdpWarmStart {
    z: Vec<f64>,
    y: Vec<f64>,
    rho: f64,
}

/// One normalized constraint row in sparse form.
struct SparseRow {
    idx: Vec<u32>,
    val: Vec<f64>,
}

impl SparseRow {
    fn dot(&self, v: &DVector<f64>) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&i, &a)| a * v[i as usize]).sum()
    }

    fn axpy_into(&self, scale: f64, out: &mut DVector<f64>) {
        for (&i, &a) in self.idx.iter().zip(&self.val) {
            out[i as usize] += scale * a;
        }
    }
}

/// Constraint data preprocessed for repeated solves.
pub struct PreparedSdp {
    block_dims: Vec<usize>,
    scalar_bounds: Vec<(f64, f64)>,
    num_slacks: usize,
    block_offsets: Vec<usize>,
    scalar_offset: usize,
    slack_offset: usize,
    total: usize,
    rows: Vec<SparseRow>,
    b: DVector<f64>,
    /// Per-row normalization factors (original row norms).
    row_norms: Vec<f64>,
    factor: Option<Cholesky<f64, Dyn>>,
}

impl PreparedSdp {
    pub fn new(
        block_dims: Vec<usize>,
        scalar_bounds: Vec<(f64, f64)>,
        constraints: &[SdpConstraint],
    ) -> Self {
        let num_slacks = constraints.iter().filter(|c| c.kind == ConstraintKind::Le).count();
        let mut block_offsets = Vec::with_capacity(block_dims.len());
        let mut offset = 0;
        for &dim in &block_dims {
            block_offsets.push(offset);
            offset += svec_len(dim);
        }
        let scalar_offset = offset;
        let slack_offset = scalar_offset + scalar_bounds.len();
        let total = slack_offset + num_slacks;
        let m = constraints.len();

        let mut rows = Vec::with_capacity(m);
        let mut b = DVector::zeros(m);
        let mut row_norms = vec![1.0; m];
        let mut slack = 0usize;
        let mut scratch = vec![0.0; total];
        let mut dense = vec![0.0f64; total];
        for (row, c) in constraints.iter().enumerate() {
            dense.iter_mut().for_each(|v| *v = 0.0);
            for (blk, mat) in &c.block_terms {
                let dim = block_dims[*blk];
                assert_eq!(mat.nrows(), dim, "constraint matrix dim mismatch in block {blk}");
                svec_into(mat, &mut scratch[..svec_len(dim)]);
                for (i, &v) in scratch[..svec_len(dim)].iter().enumerate() {
                    dense[block_offsets[*blk] + i] += v;
                }
            }
            for &(j, v) in &c.scalar_terms {
                dense[scalar_offset + j] += v;
            }
            if c.kind == ConstraintKind::Le {
                dense[slack_offset + slack] = 1.0;
                slack += 1;
            }
            let norm = dense.iter().map(|v| v * v).sum::<f64>().sqrt();
            let scale = if norm > 1e-12 { norm } else { 1.0 };
            row_norms[row] = scale;
            b[row] = c.rhs / scale;
            let mut idx = Vec::new();
            let mut val = Vec::new();
            for (i, &v) in dense.iter().enumerate() {
                if v != 0.0 {
                    idx.push(i as u32);
                    val.push(v / scale);
                }
            }
            rows.push(SparseRow { idx, val });
        }

        let factor = if m > 0 {
            let mut gram = DMatrix::zeros(m, m);
            for i in 0..m {
                for j in 0..=i {
                    // two-pointer sparse dot over sorted index lists
                    let (ra, rb) = (&rows[i], &rows[j]);
                    let mut ai = 0usize;
                    let mut bi = 0usize;
                    let mut acc = 0.0;
                    while ai < ra.idx.len() && bi < rb.idx.len() {
                        match ra.idx[ai].cmp(&rb.idx[bi]) {
                            std::cmp::Ordering::Less => ai += 1,
                            std::cmp::Ordering::Greater => bi += 1,
                            std::cmp::Ordering::Equal => {
                                acc += ra.val[ai] * rb.val[bi];
                                ai += 1;
                                bi += 1;
                            }
                        }
                    }
                    gram[(i, j)] = acc;
                    gram[(j, i)] = acc;
                }
            }
            let mut jitter = 1e-12;
            loop {
                match gram.clone().cholesky() {
                    Some(ch) => break Some(ch),
                    None => {
                        for i in 0..m {
                            gram[(i, i)] += jitter;
                        }
                        jitter *= 10.0;
                        assert!(jitter < 1.0, "constraint Gram matrix is numerically singular");
                    }
                }
            }
        } else {
            None
        };

        Self {
            block_dims,
            scalar_bounds,
            num_slacks,
            block_offsets,
            scalar_offset,
            slack_offset,
            total,
            rows,
            b,
            row_norms,
            factor,
        }
    }

    fn project_affine(&self, v: &DVector<f64>) -> DVector<f64> {
        match &self.factor {
            Some(ch) => {
                let m = self.rows.len();
                let mut resid = DVector::zeros(m);
                for (i, row) in self.rows.iter().enumerate() {
                    resid[i] = row.dot(v) - self.b[i];
                }
                let w = ch.solve(&resid);
                let mut out = v.clone();
                for (i, row) in self.rows.iter().enumerate() {
                    row.axpy_into(-w[i], &mut out);
                }
                out
            }
            None => v.clone(),
        }
    }

    /// Build a warm start whose cone side matches the given block values and
    /// scalars, with slacks set to absorb any inequality slack. A good seed
    /// when the caller already has a nearly feasible configuration.
    pub fn warm_from_state(
        &self,
        blocks: &[DMatrix<f64>],
        scalars: &[f64],
        constraints: &[SdpConstraint],
    ) -> SdpWarmStart {
        assert_eq!(blocks.len(), self.block_dims.len());
        assert_eq!(scalars.len(), self.scalar_bounds.len());
        let mut z = DVector::zeros(self.total);
        let mut scratch = vec![0.0; self.total];
        for (blk, mat) in blocks.iter().enumerate() {
            let dim = self.block_dims[blk];
            svec_into(mat, &mut scratch[..svec_len(dim)]);
            z.as_mut_slice()[self.block_offsets[blk]..self.block_offsets[blk] + svec_len(dim)]
                .copy_from_slice(&scratch[..svec_len(dim)]);
        }
        for (j, &v) in scalars.iter().enumerate() {
            let (lo, hi) = self.scalar_bounds[j];
            z[self.scalar_offset + j] = v.clamp(lo, hi);
        }
        let mut slack = 0usize;
        for (row, c) in constraints.iter().enumerate() {
            if c.kind == ConstraintKind::Le {
                // row is normalized; its slack coefficient is 1/row_norm
                let idx = self.slack_offset + slack;
                let partial = self.rows[row].dot(&z); // slack entry is still zero
                let coeff = 1.0 / self.row_norms[row];
                z[idx] = ((self.b[row] - partial) / coeff).max(0.0);
                slack += 1;
            }
        }
        SdpWarmStart { z: z.as_slice().to_vec(), y: vec![0.0; self.total], rho: 1.0 }
    }

    fn project_cone(&self, v: &mut DVector<f64>, scratch: &mut Vec<f64>) {
        for (blk, &dim) in self.block_dims.iter().enumerate() {
            let len = svec_len(dim);
            let off = self.block_offsets[blk];
            let mat = unsvec(&v.as_slice()[off..off + len], dim);
            let proj = psd_project(&mat).expect("unsvec output is symmetric");
            scratch.resize(len, 0.0);
            svec_into(&proj, &mut scratch[..len]);
            v.as_mut_slice()[off..off + len].copy_from_slice(&scratch[..len]);
        }
        for (j, &(lo, hi)) in self.scalar_bounds.iter().enumerate() {
            let idx = self.scalar_offset + j;
            v[idx] = v[idx].clamp(lo, hi);
        }
        for s in 0..self.num_slacks {
            let idx = self.slack_offset + s;
            if v[idx] < 0.0 {
                v[idx] = 0.0;
            }
        }
    }

    fn cost_vector(
        &self,
        objective_blocks: &[DMatrix<f64>],
        objective_scalars: &[f64],
    ) -> DVector<f64> {
        assert_eq!(objective_blocks.len(), self.block_dims.len());
        assert_eq!(objective_scalars.len(), self.scalar_bounds.len());
        let mut cost = DVector::zeros(self.total);
        let mut scratch = vec![0.0; self.total];
        for (blk, mat) in objective_blocks.iter().enumerate() {
            let dim = self.block_dims[blk];
            svec_into(mat, &mut scratch[..svec_len(dim)]);
            for (i, &v) in scratch[..svec_len(dim)].iter().enumerate() {
                cost[self.block_offsets[blk] + i] = v;
            }
        }
        for (j, &v) in objective_scalars.iter().enumerate() {
            cost[self.scalar_offset + j] = v;
        }
        cost
    }

    /// Run the splitting iteration for the given objective.
    pub fn solve(
        &self,
        objective_blocks: &[DMatrix<f64>],
        objective_scalars: &[f64],
        tol: f64,
        max_iter: usize,
        warm: Option<&SdpWarmStart>,
    ) -> (SdpSolution, SdpWarmStart) {
        let n = self.total;
        let cost = self.cost_vector(objective_blocks, objective_scalars);

        let (mut z, mut y, mut rho) = match warm {
            Some(w) if w.z.len() == n => (
                DVector::from_column_slice(&w.z),
                DVector::from_column_slice(&w.y),
                w.rho,
            ),
            _ => (DVector::zeros(n), DVector::zeros(n), 1.0),
        };

        let trace = std::env::var("AIRSTAR_SDP_TRACE").is_ok();
        let alpha = 1.6; // over-relaxation
        let mut status = SolveStatus::MaxIter;
        let mut iterations = 0;
        let mut primal = f64::INFINITY;
        let mut dual = f64::INFINITY;
        let mut best_primal = f64::INFINITY;
        let mut last_improvement = 0usize;
        let mut scratch = Vec::new();

        for it in 0..max_iter {
            iterations = it + 1;
            let v = &z - &y - &cost * (1.0 / rho);
            let x = self.project_affine(&v);
            let x_relaxed = &x * alpha + &z * (1.0 - alpha);
            let z_prev = z.clone();
            z = &x_relaxed + &y;
            self.project_cone(&mut z, &mut scratch);
            y += &x_relaxed - &z;

            let mut affine_sq = 0.0;
            for (i, row) in self.rows.iter().enumerate() {
                let r = row.dot(&x) - self.b[i];
                affine_sq += r * r;
            }
            primal = ((&x - &z).norm_squared() + affine_sq).sqrt();
            dual = rho * (&z - &z_prev).norm();
            let eps_pri = tol * (n as f64).sqrt() + tol * x.norm().max(z.norm());
            let eps_dual = tol * (n as f64).sqrt() + tol * (rho * y.norm() + cost.norm());
            if trace && it % 250 == 0 {
                eprintln!(
                    "sdp it {it}: primal {primal:.3e} (eps {eps_pri:.3e}) dual {dual:.3e} (eps {eps_dual:.3e}) rho {rho:.2e}"
                );
            }
            if primal <= eps_pri && dual <= eps_dual {
                status = SolveStatus::Optimal;
                break;
            }

            if primal < 0.5 * best_primal {
                best_primal = primal;
                last_improvement = it;
            }
            if it > 600 && it - last_improvement > 600 && primal > 100.0 * eps_pri {
                status = SolveStatus::Infeasible { residual: primal };
                break;
            }

            if it % 20 == 19 {
                if primal > 5.0 * dual && rho < 1e4 {
                    rho *= 2.0;
                    y /= 2.0;
                } else if dual > 5.0 * primal && rho > 1e-4 {
                    rho /= 2.0;
                    y *= 2.0;
                }
            }
        }

        let blocks: Vec<DMatrix<f64>> = self
            .block_dims
            .iter()
            .enumerate()
            .map(|(blk, &dim)| {
                let len = svec_len(dim);
                let off = self.block_offsets[blk];
                unsvec(&z.as_slice()[off..off + len], dim)
            })
            .collect();
        let scalars: Vec<f64> =
            (0..self.scalar_bounds.len()).map(|j| z[self.scalar_offset + j]).collect();
        let objective = cost.dot(&z);

        let warm_out = SdpWarmStart { z: z.as_slice().to_vec(), y: y.as_slice().to_vec(), rho };
        (
            SdpSolution {
                blocks,
                scalars,
                objective,
                status,
                primal_residual: primal,
                dual_residual: dual,
                iterations,
            },
            warm_out,
        )
    }
}

/// One-shot convenience wrapper around [`PreparedSdp`].
pub fn solve_sdp(
    problem: &SdpProblem,
    tol: f64,
    max_iter: usize,
    warm: Option<&SdpWarmStart>,
) -> (SdpSolution, SdpWarmStart) {
    assert_eq!(problem.block_dims.len(), problem.objective_blocks.len());
    assert_eq!(problem.scalar_bounds.len(), problem.objective_scalars.len());
    let prepared = PreparedSdp::new(
        problem.block_dims.clone(),
        problem.scalar_bounds.clone(),
        &problem.constraints,
    );
    prepared.solve(&problem.objective_blocks, &problem.objective_scalars, tol, max_iter, warm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{self, Stream};
    use approx::assert_relative_eq;
    use rand::Rng;

    fn diag_constraint(block: usize, i: usize, dim: usize, rhs: f64) -> SdpConstraint {
        let mut e = DMatrix::zeros(dim, dim);
        e[(i, i)] = 1.0;
        SdpConstraint {
            block_terms: vec![(block, e)],
            scalar_terms: vec![],
            rhs,
            kind: ConstraintKind::Eq,
        }
    }

    #[test]
    fn identity_is_minimum_trace_with_unit_diagonal() {
        let problem = SdpProblem {
            block_dims: vec![2],
            objective_blocks: vec![DMatrix::identity(2, 2)],
            scalar_bounds: vec![],
            objective_scalars: vec![],
            constraints: vec![diag_constraint(0, 0, 2, 1.0), diag_constraint(0, 1, 2, 1.0)],
        };
        let (sol, _) = solve_sdp(&problem, 1e-8, 20_000, None);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_relative_eq!(sol.objective, 2.0, epsilon = 1e-5);
        assert!((&sol.blocks[0] - DMatrix::identity(2, 2)).norm() < 1e-4);
    }

    /// Slow augmented-Lagrangian reference: min tr(CX) s.t. diag(X) = d.
    fn reference_diag_sdp(c: &DMatrix<f64>, d: &[f64]) -> DMatrix<f64> {
        let n = c.nrows();
        let mut x = DMatrix::from_diagonal(&DVector::from_column_slice(d));
        let mut mu = vec![0.0f64; n];
        let mut rho = 1.0f64;
        for _ in 0..400 {
            let eta = 0.4 / (c.norm() + rho * 2.0);
            for _ in 0..400 {
                let mut g = c.clone();
                for i in 0..n {
                    g[(i, i)] += mu[i] + rho * (x[(i, i)] - d[i]);
                }
                x = psd_project(&(&x - g * eta)).unwrap();
            }
            for i in 0..n {
                mu[i] += rho * (x[(i, i)] - d[i]);
            }
            rho = (rho * 1.3).min(1e5);
            let viol: f64 = (0..n).map(|i| (x[(i, i)] - d[i]).abs()).fold(0.0, f64::max);
            if viol < 1e-10 {
                break;
            }
        }
        x
    }

    #[test]
    fn matches_reference_solver_on_random_3x3() {
        let mut rng = rng::stream(62, Stream::Custom(0));
        for _ in 0..4 {
            let raw = DMatrix::from_fn(3, 3, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let c = (&raw + raw.transpose()) * 0.5;
            let d: Vec<f64> = (0..3).map(|_| 0.5 + rng.gen::<f64>()).collect();
            let problem = SdpProblem {
                block_dims: vec![3],
                objective_blocks: vec![c.clone()],
                scalar_bounds: vec![],
                objective_scalars: vec![],
                constraints: (0..3).map(|i| diag_constraint(0, i, 3, d[i])).collect(),
            };
            let (sol, _) = solve_sdp(&problem, 1e-9, 60_000, None);
            assert_eq!(sol.status, SolveStatus::Optimal);
            let reference = reference_diag_sdp(&c, &d);
            let ref_obj = (&c * &reference).trace();
            assert!(
                (sol.objective - ref_obj).abs() <= 1e-3 * ref_obj.abs().max(1.0),
                "ours {} vs reference {ref_obj}",
                sol.objective
            );
        }
    }

    #[test]
    fn scalar_links_follow_closed_form() {
        // min tr(CX) s.t. X11 = u, X22 = 1 − u, u ∈ [0,1].
        // For fixed diag (a, c) the best off-diagonal is −sign(C12)·√(ac),
        // so the reduced objective is C11 a + C22 (1−a) − 2|C12|√(a(1−a)).
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.8, 0.8, 2.0]);
        let link = |i: usize, sign: f64, rhs: f64| {
            let mut e = DMatrix::zeros(2, 2);
            e[(i, i)] = 1.0;
            SdpConstraint {
                block_terms: vec![(0, e)],
                scalar_terms: vec![(0, sign)],
                rhs,
                kind: ConstraintKind::Eq,
            }
        };
        let problem = SdpProblem {
            block_dims: vec![2],
            objective_blocks: vec![c.clone()],
            scalar_bounds: vec![(0.0, 1.0)],
            objective_scalars: vec![0.0],
            constraints: vec![link(0, -1.0, 0.0), link(1, 1.0, 1.0)],
        };
        let (sol, _) = solve_sdp(&problem, 1e-9, 60_000, None);
        assert_eq!(sol.status, SolveStatus::Optimal);

        let mut best = f64::INFINITY;
        for i in 0..=1000 {
            let a = i as f64 / 1000.0;
            let val = 1.0 * a + 2.0 * (1.0 - a) - 2.0 * 0.8 * (a * (1.0 - a)).sqrt();
            best = best.min(val);
        }
        assert!(
            (sol.objective - best).abs() < 2e-3,
            "objective {} vs closed-form scan {best}",
            sol.objective
        );
        let u = sol.scalars[0];
        assert!((sol.blocks[0][(0, 0)] - u).abs() < 1e-4);
    }

    #[test]
    fn inequality_constraints_use_slack() {
        // min X11 s.t. X11 ≥ 1/2  (written as −X11 ≤ −1/2)
        let mut e = DMatrix::zeros(1, 1);
        e[(0, 0)] = -1.0;
        let problem = SdpProblem {
            block_dims: vec![1],
            objective_blocks: vec![DMatrix::identity(1, 1)],
            scalar_bounds: vec![],
            objective_scalars: vec![],
            constraints: vec![SdpConstraint {
                block_terms: vec![(0, e)],
                scalar_terms: vec![],
                rhs: -0.5,
                kind: ConstraintKind::Le,
            }],
        };
        let (sol, _) = solve_sdp(&problem, 1e-9, 20_000, None);
        assert_eq!(sol.status, SolveStatus::Optimal);
        assert_relative_eq!(sol.blocks[0][(0, 0)], 0.5, epsilon = 1e-5);
    }

    #[test]
    fn solver_is_deterministic() {
        let problem = SdpProblem {
            block_dims: vec![2],
            objective_blocks: vec![DMatrix::from_row_slice(2, 2, &[1.0, -0.3, -0.3, 0.5])],
            scalar_bounds: vec![],
            objective_scalars: vec![],
            constraints: vec![diag_constraint(0, 0, 2, 1.0), diag_constraint(0, 1, 2, 0.7)],
        };
        let (a, _) = solve_sdp(&problem, 1e-8, 20_000, None);
        let (b, _) = solve_sdp(&problem, 1e-8, 20_000, None);
        assert_eq!(a.blocks[0], b.blocks[0]);
        assert_eq!(a.iterations, b.iterations);
    }

    #[test]
    fn warm_start_reaches_the_same_solution_faster() {
        let problem = SdpProblem {
            block_dims: vec![3],
            objective_blocks: vec![DMatrix::from_row_slice(
                3,
                3,
                &[1.0, 0.2, 0.0, 0.2, 0.8, -0.1, 0.0, -0.1, 1.2],
            )],
            scalar_bounds: vec![],
            objective_scalars: vec![],
            constraints: (0..3).map(|i| diag_constraint(0, i, 3, 1.0)).collect(),
        };
        let (cold, warm) = solve_sdp(&problem, 1e-8, 40_000, None);
        let (hot, _) = solve_sdp(&problem, 1e-8, 40_000, Some(&warm));
        assert_eq!(hot.status, SolveStatus::Optimal);
        assert!(hot.iterations <= cold.iterations);
        assert!((&hot.blocks[0] - &cold.blocks[0]).norm() < 1e-5);
    }

    #[test]
    fn reports_infeasible_when_constraints_conflict() {
        // X11 = 1 and X11 = 2 cannot both hold
        let problem = SdpProblem {
            block_dims: vec![1],
            objective_blocks: vec![DMatrix::zeros(1, 1)],
            scalar_bounds: vec![],
            objective_scalars: vec![],
            constraints: vec![diag_constraint(0, 0, 1, 1.0), diag_constraint(0, 0, 1, 2.0)],
        };
        let (sol, _) = solve_sdp(&problem, 1e-8, 20_000, None);
        assert!(matches!(sol.status, SolveStatus::Infeasible { .. } | SolveStatus::MaxIter));
    }
}

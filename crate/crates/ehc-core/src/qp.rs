//! Dense convex QP solver.
//!
//! Solves `min 1/2 xᵀQx + cᵀx` subject to `A x = b` and `G x <= h` with a
//! dual active-set method (Goldfarb-Idnani). Q must be positive definite.
//! Problems here are tiny (15 variables, a few dozen rows), so the active-set
//! operators are formed by direct factorisation each iteration instead of the
//! classic incremental QR updates.

use nalgebra::{DMatrix, DVector};

use crate::{Error, Result};

/// A quadratic program in standard form.
#[derive(Debug, Clone)]
pub struct QpProblem {
    /// Symmetric positive definite cost matrix.
    pub q: DMatrix<f64>,
    /// Linear cost vector.
    pub c: DVector<f64>,
    /// Equality constraint matrix (may have zero rows).
    pub a_eq: DMatrix<f64>,
    pub b_eq: DVector<f64>,
    /// Inequality constraint matrix, `g x <= h`.
    pub g: DMatrix<f64>,
    pub h: DVector<f64>,
}

impl QpProblem {
    pub fn dims(&self) -> (usize, usize, usize) {
        (self.q.nrows(), self.a_eq.nrows(), self.g.nrows())
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.q.nrows();
        if self.q.ncols() != n || self.c.len() != n {
            return Err(Error::DimensionMismatch("Q/c".into()));
        }
        if self.a_eq.nrows() != self.b_eq.len() || (self.a_eq.nrows() > 0 && self.a_eq.ncols() != n) {
            return Err(Error::DimensionMismatch("A_eq/b_eq".into()));
        }
        if self.g.nrows() != self.h.len() || (self.g.nrows() > 0 && self.g.ncols() != n) {
            return Err(Error::DimensionMismatch("G/h".into()));
        }
        let sym = (&self.q - self.q.transpose()).abs().max();
        if sym > 1e-9 {
            return Err(Error::invalid(format!("Q not symmetric ({sym})")));
        }
        Ok(())
    }
}

/// Solver outcome.
#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    /// Multipliers of the equality constraints.
    pub eq_multipliers: DVector<f64>,
    /// Multipliers of the inequality constraints (zero if inactive).
    pub ineq_multipliers: DVector<f64>,
    pub objective: f64,
    pub iterations: usize,
}

impl QpSolution {
    /// Max elementwise violation of `G x <= h` (0 when feasible).
    pub fn inequality_violation(&self, p: &QpProblem) -> f64 {
        if p.g.nrows() == 0 {
            return 0.0;
        }
        (&p.g * &self.x - &p.h).iter().fold(0.0f64, |m, v| m.max(*v))
    }

    /// Infinity norm of the KKT stationarity residual
    /// `Qx + c + A_eqᵀ ν + Gᵀ λ`.
    pub fn stationarity_residual(&self, p: &QpProblem) -> f64 {
        let mut r = &p.q * &self.x + &p.c;
        if p.a_eq.nrows() > 0 {
            r += p.a_eq.transpose() * &self.eq_multipliers;
        }
        if p.g.nrows() > 0 {
            r += p.g.transpose() * &self.ineq_multipliers;
        }
        r.abs().max()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum QpError {
    /// The constraints admit no solution.
    Infeasible,
    /// Q failed the Cholesky factorisation.
    NotPositiveDefinite,
    /// Iteration safety cap hit (cycling); should not happen for PD Q.
    IterationLimit,
}

impl std::fmt::Display for QpError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            QpError::Infeasible => write!(f, "infeasible constraints"),
            QpError::NotPositiveDefinite => write!(f, "Q is not positive definite"),
            QpError::IterationLimit => write!(f, "iteration limit exceeded"),
        }
    }
}

impl std::error::Error for QpError {}

const ZERO_TOL: f64 = 1e-11;

/// Solves the QP by the dual active-set method.
///
/// Equality constraints are inserted first (their multipliers are free and
/// they are never dropped); inequality constraints then enter one violated
/// constraint at a time with the usual primal/dual step-length logic.
pub fn solve(p: &QpProblem) -> std::result::Result<QpSolution, QpError> {
    let n = p.q.nrows();
    let chol = p
        .q
        .clone()
        .cholesky()
        .ok_or(QpError::NotPositiveDefinite)?;
    let q_inv = chol.inverse();

    let n_eq = p.a_eq.nrows();
    let n_in = p.g.nrows();

    // Unconstrained minimum.
    let mut x = -(&q_inv * &p.c);

    // Active set: indices into the unified constraint list. Constraint i for
    // i < n_eq is the equality row i (nᵀx = b); i >= n_eq is inequality row
    // i - n_eq stored in the form nᵀx >= b with n = -g_row, b = -h_i.
    let normal = |i: usize| -> DVector<f64> {
        if i < n_eq {
            p.a_eq.row(i).transpose()
        } else {
            -p.g.row(i - n_eq).transpose()
        }
    };
    let rhs = |i: usize| -> f64 {
        if i < n_eq {
            p.b_eq[i]
        } else {
            -p.h[i - n_eq]
        }
    };

    let mut active: Vec<usize> = Vec::new();
    let mut multipliers: Vec<f64> = Vec::new(); // aligned with `active`
    // Sign flips applied to equality normals so each enters "violated below".
    let mut eq_sign = vec![1.0f64; n_eq];

    // Returns (z, r): primal step direction and multiplier sensitivities for
    // candidate normal `np` given the current active set.
    let step_dirs = |active: &[usize],
                     eq_sign: &[f64],
                     np: &DVector<f64>|
     -> (DVector<f64>, DVector<f64>) {
        if active.is_empty() {
            return (&q_inv * np, DVector::zeros(0));
        }
        let q_cnt = active.len();
        let mut nmat = DMatrix::zeros(n, q_cnt);
        for (k, &ci) in active.iter().enumerate() {
            let mut nk = normal(ci);
            if ci < n_eq {
                nk *= eq_sign[ci];
            }
            nmat.set_column(k, &nk);
        }
        let b_n = &q_inv * &nmat; // Q⁻¹ N
        let ntbn = nmat.transpose() * &b_n; // Nᵀ Q⁻¹ N
        let ntbn_inv = ntbn
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .unwrap_or_else(|| {
                ntbn.pseudo_inverse(1e-12)
                    .unwrap_or_else(|_| DMatrix::zeros(q_cnt, q_cnt))
            });
        let r = &ntbn_inv * (b_n.transpose() * np); // N* np
        let z = &q_inv * np - &b_n * &r; // H np
        (z, r)
    };

    let max_iter = 50 * (n + n_eq + n_in).max(10);
    let mut iterations = 0;

    // Phase 1: insert equality constraints.
    for ei in 0..n_eq {
        let mut np = normal(ei);
        let mut s = np.dot(&x) - rhs(ei);
        if s > 0.0 {
            // Flip so the constraint enters as "violated from below"; the
            // final multiplier sign is unflipped at extraction.
            eq_sign[ei] = -1.0;
            np = -np;
            s = -s;
        }
        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(QpError::IterationLimit);
            }
            let (z, _r) = step_dirs(&active, &eq_sign, &np);
            let ztn = z.dot(&np);
            if ztn <= ZERO_TOL {
                // Normal lies in the span of the active normals: dependent
                // equality. Consistent if already satisfied.
                if s.abs() <= 1e-8 {
                    break; // redundant, skip
                }
                return Err(QpError::Infeasible);
            }
            let t = -s / ztn;
            x += &z * t;
            // Equality phase never drops constraints: all active rows are
            // equalities whose multipliers are free.
            for m in multipliers.iter_mut() {
                // placeholder: multipliers of equalities updated at the end
                let _ = m;
            }
            active.push(ei);
            multipliers.push(t);
            break;
        }
    }

    // Recompute equality multipliers exactly once x satisfies A x = b.
    // (Cheaper and simpler than tracking dual steps through phase 1.)
    let recompute_eq_multipliers =
        |active: &[usize], eq_sign: &[f64], mults: &mut Vec<f64>, x: &DVector<f64>| {
            // Stationarity: Qx + c + Σ u_k (-n_k) = 0 in the >= convention.
            // Solve least squares for the active multipliers.
            if active.is_empty() {
                return;
            }
            let grad = &p.q * x + &p.c;
            let mut nmat = DMatrix::zeros(n, active.len());
            for (k, &ci) in active.iter().enumerate() {
                let mut nk = normal(ci);
                if ci < n_eq {
                    nk *= eq_sign[ci];
                }
                nmat.set_column(k, &nk);
            }
            let sol = nmat
                .clone()
                .svd(true, true)
                .solve(&grad, 1e-12)
                .unwrap_or_else(|_| DVector::zeros(active.len()));
            for (k, v) in sol.iter().enumerate() {
                mults[k] = *v;
            }
        };
    recompute_eq_multipliers(&active, &eq_sign, &mut multipliers, &x);

    // Phase 2: inequality constraints.
    loop {
        iterations += 1;
        if iterations > max_iter {
            return Err(QpError::IterationLimit);
        }
        // Most violated inequality (in the >= convention s = nᵀx - b < 0).
        let mut worst = None;
        let mut worst_s = -1e-10; // feasibility tolerance
        for ii in 0..n_in {
            let ci = n_eq + ii;
            if active.contains(&ci) {
                continue;
            }
            let s = normal(ci).dot(&x) - rhs(ci);
            if s < worst_s {
                worst_s = s;
                worst = Some(ci);
            }
        }
        let Some(p_idx) = worst else {
            break; // all satisfied: optimal
        };
        let np = normal(p_idx);
        let mut u_plus = 0.0f64;
        let mut s = normal(p_idx).dot(&x) - rhs(p_idx);

        loop {
            iterations += 1;
            if iterations > max_iter {
                return Err(QpError::IterationLimit);
            }
            let (z, r) = step_dirs(&active, &eq_sign, &np);
            // Partial step bound from active inequality multipliers.
            let mut t1 = f64::INFINITY;
            let mut drop_k = None;
            for (k, &ci) in active.iter().enumerate() {
                if ci >= n_eq && r[k] > ZERO_TOL {
                    let bound = multipliers[k] / r[k];
                    if bound < t1 {
                        t1 = bound;
                        drop_k = Some(k);
                    }
                }
            }
            let ztn = z.dot(&np);
            let t2 = if ztn > ZERO_TOL { -s / ztn } else { f64::INFINITY };
            let t = t1.min(t2);
            if !t.is_finite() {
                return Err(QpError::Infeasible);
            }

            if t2.is_finite() {
                x += &z * t;
            }
            for (k, m) in multipliers.iter_mut().enumerate() {
                *m -= t * r.get(k).copied().unwrap_or(0.0);
            }
            u_plus += t;

            if t2 <= t1 {
                // Full step: constraint p becomes active and satisfied.
                active.push(p_idx);
                multipliers.push(u_plus);
                break;
            }
            // Partial step: drop the blocking constraint and continue.
            let k = drop_k.expect("partial step requires a blocking index");
            active.remove(k);
            multipliers.remove(k);
            s = normal(p_idx).dot(&x) - rhs(p_idx);
        }
    }

    // Extract multipliers in the user's convention:
    //   stationarity Qx + c + A_eqᵀν + Gᵀλ = 0, λ >= 0.
    // Active normals entered as n (>= form); for inequalities n = -g_row, so
    // λ_i = u_k; for equalities ν_i = -sign * u_k.
    let mut eq_mult = DVector::zeros(n_eq);
    let mut in_mult = DVector::zeros(n_in);
    for (k, &ci) in active.iter().enumerate() {
        if ci < n_eq {
            eq_mult[ci] = -eq_sign[ci] * multipliers[k];
        } else {
            in_mult[ci - n_eq] = multipliers[k];
        }
    }
    let objective = 0.5 * (&p.q * &x).dot(&x) + p.c.dot(&x);
    Ok(QpSolution {
        x,
        eq_multipliers: eq_mult,
        ineq_multipliers: in_mult,
        objective,
        iterations,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    /// Slow reference solver: FISTA on the dual with multiplier projection.
    /// Independent of the active-set path; used as the objective oracle.
    pub(crate) fn reference_dual_solve(p: &QpProblem, iters: usize) -> DVector<f64> {
        let n_eq = p.a_eq.nrows();
        let n_in = p.g.nrows();
        let chol = p.q.clone().cholesky().expect("PD");
        let q_inv = chol.inverse();
        // Stack M = [A; G]; dual variable y = (nu, lambda), lambda >= 0.
        let m_rows = n_eq + n_in;
        if m_rows == 0 {
            return -(&q_inv * &p.c);
        }
        let mut m = DMatrix::zeros(m_rows, p.q.nrows());
        for i in 0..n_eq {
            m.row_mut(i).copy_from(&p.a_eq.row(i));
        }
        for i in 0..n_in {
            m.row_mut(n_eq + i).copy_from(&p.g.row(i));
        }
        let mut rhs = DVector::zeros(m_rows);
        for i in 0..n_eq {
            rhs[i] = p.b_eq[i];
        }
        for i in 0..n_in {
            rhs[n_eq + i] = p.h[i];
        }
        // Lipschitz constant of the dual gradient.
        let mqm = &m * &q_inv * m.transpose();
        let lip = mqm.norm() + 1e-12;
        let step = 1.0 / lip;

        let x_of = |y: &DVector<f64>| -(&q_inv * (&p.c + m.transpose() * y));
        let mut y = DVector::zeros(m_rows);
        let mut y_prev = y.clone();
        let mut tk = 1.0f64;
        for _ in 0..iters {
            let t_next = (1.0 + (1.0 + 4.0 * tk * tk).sqrt()) / 2.0;
            let beta = (tk - 1.0) / t_next;
            let mut v = &y + (&y - &y_prev) * beta;
            // Ascent on the dual: grad = M x(v) - rhs.
            let grad = &m * x_of(&v) - &rhs;
            v += grad * step;
            for i in n_eq..m_rows {
                if v[i] < 0.0 {
                    v[i] = 0.0;
                }
            }
            y_prev = y;
            y = v;
            tk = t_next;
        }
        x_of(&y)
    }

    fn objective(p: &QpProblem, x: &DVector<f64>) -> f64 {
        0.5 * (&p.q * x).dot(x) + p.c.dot(x)
    }

    #[test]
    fn unconstrained_minimum() {
        let p = QpProblem {
            q: DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0])),
            c: DVector::from_vec(vec![-2.0, -8.0]),
            a_eq: DMatrix::zeros(0, 2),
            b_eq: DVector::zeros(0),
            g: DMatrix::zeros(0, 2),
            h: DVector::zeros(0),
        };
        let s = solve(&p).unwrap();
        assert_abs_diff_eq!(s.x[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.x[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn equality_only_gives_least_norm_solution() {
        // Q = I, c = 0, A x = b: solution is the pseudo-inverse least-norm
        // point Aᵀ(AAᵀ)⁻¹ b.
        let a = DMatrix::from_row_slice(2, 4, &[1.0, 2.0, 0.0, -1.0, 0.0, 1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0, 2.0]);
        let p = QpProblem {
            q: DMatrix::identity(4, 4),
            c: DVector::zeros(4),
            a_eq: a.clone(),
            b_eq: b.clone(),
            g: DMatrix::zeros(0, 4),
            h: DVector::zeros(0),
        };
        let s = solve(&p).unwrap();
        let aat = &a * a.transpose();
        let expect = a.transpose() * aat.try_inverse().unwrap() * &b;
        assert_abs_diff_eq!(s.x, expect, epsilon = 1e-10);
        assert!(s.stationarity_residual(&p) < 1e-9);
    }

    #[test]
    fn two_variable_qp_with_active_inequality_matches_hand_kkt() {
        // min 1/2 (x1² + x2²) - x1 - x2  s.t. x1 + x2 <= 1.
        // Unconstrained optimum (1,1) violates; KKT with the constraint
        // active: x = (1/2, 1/2), lambda = 1/2.
        let p = QpProblem {
            q: DMatrix::identity(2, 2),
            c: DVector::from_vec(vec![-1.0, -1.0]),
            a_eq: DMatrix::zeros(0, 2),
            b_eq: DVector::zeros(0),
            g: DMatrix::from_row_slice(1, 2, &[1.0, 1.0]),
            h: DVector::from_vec(vec![1.0]),
        };
        let s = solve(&p).unwrap();
        assert_abs_diff_eq!(s.x[0], 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(s.x[1], 0.5, epsilon = 1e-10);
        assert_abs_diff_eq!(s.ineq_multipliers[0], 0.5, epsilon = 1e-10);
        assert!(s.stationarity_residual(&p) < 1e-10);
    }

    #[test]
    fn detects_infeasible_box() {
        let p = QpProblem {
            q: DMatrix::identity(1, 1),
            c: DVector::zeros(1),
            a_eq: DMatrix::zeros(0, 1),
            b_eq: DVector::zeros(0),
            // x <= -1 and -x <= -2 (x >= 2): empty.
            g: DMatrix::from_row_slice(2, 1, &[1.0, -1.0]),
            h: DVector::from_vec(vec![-1.0, -2.0]),
        };
        assert_eq!(solve(&p).unwrap_err(), QpError::Infeasible);
    }

    #[test]
    fn rejects_indefinite_q() {
        let p = QpProblem {
            q: DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -1.0])),
            c: DVector::zeros(2),
            a_eq: DMatrix::zeros(0, 2),
            b_eq: DVector::zeros(0),
            g: DMatrix::zeros(0, 2),
            h: DVector::zeros(0),
        };
        assert_eq!(solve(&p).unwrap_err(), QpError::NotPositiveDefinite);
    }

    pub(crate) fn random_problem(rng: &mut StdRng, n: usize, n_eq: usize, n_in: usize) -> QpProblem {
        // PD Q via LLᵀ plus a diagonal shift.
        let l = DMatrix::from_fn(n, n, |i, j| if j <= i { rng.gen_range(-1.0..1.0) } else { 0.0 });
        let q = &l * l.transpose() + DMatrix::identity(n, n) * rng.gen_range(0.1..1.0);
        let c = DVector::from_fn(n, |_, _| rng.gen_range(-1.0..1.0));
        let a_eq = DMatrix::from_fn(n_eq, n, |_, _| rng.gen_range(-1.0..1.0));
        let x_feas = DVector::from_fn(n, |_, _| rng.gen_range(-0.5..0.5));
        let b_eq = &a_eq * &x_feas;
        let g = DMatrix::from_fn(n_in, n, |_, _| rng.gen_range(-1.0..1.0));
        // Keep x_feas strictly feasible so the problem is solvable.
        let h = &g * &x_feas + DVector::from_fn(n_in, |_, _| rng.gen_range(0.05..1.0));
        QpProblem { q, c, a_eq, b_eq, g, h }
    }

    #[test]
    fn random_problems_match_reference_oracle() {
        let mut rng = StdRng::seed_from_u64(21);
        for trial in 0..60 {
            let n = rng.gen_range(2..10);
            let n_eq = rng.gen_range(0..n.min(4));
            let n_in = rng.gen_range(0..12);
            let p = random_problem(&mut rng, n, n_eq, n_in);
            let s = solve(&p).unwrap_or_else(|e| panic!("trial {trial}: {e}"));
            assert!(s.inequality_violation(&p) < 1e-8, "violation trial {trial}");
            assert!(s.stationarity_residual(&p) < 1e-7, "stationarity trial {trial}");
            let x_ref = reference_dual_solve(&p, 60_000);
            let obj_ref = objective(&p, &x_ref);
            assert!(
                s.objective <= obj_ref + 1e-6,
                "trial {trial}: active-set {} worse than reference {}",
                s.objective,
                obj_ref
            );
            // The reference itself should approach the same value.
            assert!(
                (s.objective - obj_ref).abs() < 1e-4,
                "trial {trial}: objective gap {} vs {}",
                s.objective,
                obj_ref
            );
        }
    }
}

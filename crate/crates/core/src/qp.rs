//! Dense strictly convex quadratic programming.
//!
//! Solves
//! ```text
//!     minimize    0.5 x' P x + q' x
//!     subject to  A x = b
//!                 l_i <= g_i' x <= u_i
//! ```
//! with `P` symmetric positive definite. Equality constraints are eliminated
//! by a null-space projection (rank-revealing Householder QR of `A'`); the
//! reduced problem is solved by a dual active-set method in the style of
//! Goldfarb and Idnani: start at the unconstrained minimum and repeatedly add
//! the most violated bound, taking partial dual steps when a multiplier would
//! go negative. Deterministic and finitely terminating for strictly convex
//! problems.
//!
//! [`PreparedQp`] caches everything that depends only on `P`, `A` and the
//! bound rows, so receding-horizon loops pay the factorizations once.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{Error, Result};

/// Relative tolerance for deciding the numerical row rank of the equality
/// constraint matrix.
const EQ_RANK_TOL: f64 = 1e-10;

/// Two-sided bound on an affine image of the decision variable:
/// `lower <= coeffs' x <= upper`. Either side may be infinite.
#[derive(Debug, Clone)]
pub struct LinearBound {
    pub coeffs: DVector<f64>,
    pub lower: f64,
    pub upper: f64,
}

impl LinearBound {
    /// Plain box bound on coordinate `i` of an `n`-dimensional variable.
    pub fn coordinate(n: usize, i: usize, lower: f64, upper: f64) -> Self {
        let mut coeffs = DVector::zeros(n);
        coeffs[i] = 1.0;
        Self {
            coeffs,
            lower,
            upper,
        }
    }
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    /// Symmetric positive definite cost matrix `P` of `0.5 x' P x + q' x`.
    pub hessian: DMatrix<f64>,
    pub linear: DVector<f64>,
    /// Equality constraint matrix (may have zero rows).
    pub eq_mat: DMatrix<f64>,
    pub eq_rhs: DVector<f64>,
    pub bounds: Vec<LinearBound>,
}

#[derive(Debug, Clone, Copy)]
pub struct SolveOptions {
    /// Feasibility / KKT tolerance.
    pub tol: f64,
    /// Cap on active-set changes.
    pub max_iter: usize,
}

impl Default for SolveOptions {
    fn default() -> Self {
        Self {
            tol: 1e-8,
            max_iter: 200,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum QpStatus {
    Converged,
    MaxIter,
    Infeasible,
}

impl std::fmt::Display for QpStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            QpStatus::Converged => "converged",
            QpStatus::MaxIter => "max-iter",
            QpStatus::Infeasible => "infeasible",
        };
        f.write_str(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BoundSide {
    Lower,
    Upper,
}

/// Active-set hint for warm-started solves.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ActiveBound {
    pub bound: usize,
    pub side: BoundSide,
}

#[derive(Debug, Clone)]
pub struct QpSolution {
    pub x: DVector<f64>,
    pub status: QpStatus,
    /// Number of active-set changes performed.
    pub iterations: usize,
    /// `0.5 x' P x + q' x` at the returned point.
    pub objective: f64,
    /// Multipliers of the equality constraints.
    pub eq_duals: DVector<f64>,
    /// `(lower-side, upper-side)` multipliers per bound, both nonnegative.
    pub bound_duals: Vec<(f64, f64)>,
    /// Bounds active at the solution, usable as a warm-start hint.
    pub active_set: Vec<ActiveBound>,
    /// Diagnostic set when `status == Infeasible`.
    pub infeasibility: Option<String>,
}

/// One-shot solve; use [`PreparedQp`] when solving many problems that share
/// `P`, `A` and the bound rows.
pub fn solve_qp(problem: &QpProblem, opts: &SolveOptions) -> Result<QpSolution> {
    let prepared = PreparedQp::new(&problem.hessian, &problem.eq_mat, &problem.bounds, opts)?;
    prepared.solve(&problem.linear, &problem.eq_rhs, &[])
}

// ---------------------------------------------------------------------------
// Rank-revealing Householder QR with column pivoting
// ---------------------------------------------------------------------------

/// Factorization `M * Pi = Q * R` of an `n x k` matrix with column pivoting.
/// Reflector `j` is `(v0[j], factors[j+1.., j])` with scale `betas[j]`;
/// `R` lives on and above the diagonal of `factors`.
struct PivotedQr {
    factors: DMatrix<f64>,
    v0: Vec<f64>,
    betas: Vec<f64>,
    perm: Vec<usize>,
    rank: usize,
}

impl PivotedQr {
    fn new(m: &DMatrix<f64>, rel_tol: f64) -> Self {
        let n = m.nrows();
        let k = m.ncols();
        let steps = n.min(k);
        let mut a = m.clone();
        let mut perm: Vec<usize> = (0..k).collect();
        let mut betas = vec![0.0; steps];
        let mut v0 = vec![0.0; steps];
        let mut first_norm = 0.0f64;
        let mut rank = 0;

        for j in 0..steps {
            let mut best = j;
            let mut best_norm = a.view((j, best), (n - j, 1)).norm();
            for c in j + 1..k {
                let nrm = a.view((j, c), (n - j, 1)).norm();
                if nrm > best_norm {
                    best = c;
                    best_norm = nrm;
                }
            }
            if best != j {
                a.swap_columns(j, best);
                perm.swap(j, best);
            }
            if j == 0 {
                first_norm = best_norm;
            }
            if best_norm <= rel_tol * first_norm.max(f64::MIN_POSITIVE) {
                break;
            }
            rank += 1;

            let mut v = a.view((j, j), (n - j, 1)).clone_owned();
            let alpha = if v[0] >= 0.0 { -best_norm } else { best_norm };
            v[0] -= alpha;
            let vnorm2 = v.norm_squared();
            betas[j] = if vnorm2 > 0.0 { 2.0 / vnorm2 } else { 0.0 };
            v0[j] = v[0];
            a[(j, j)] = alpha;
            for r in j + 1..n {
                a[(r, j)] = v[r - j];
            }
            for c in j + 1..k {
                let mut dot = 0.0;
                for r in j..n {
                    dot += v[r - j] * a[(r, c)];
                }
                let s = betas[j] * dot;
                for r in j..n {
                    a[(r, c)] -= s * v[r - j];
                }
            }
        }

        Self {
            factors: a,
            v0,
            betas,
            perm,
            rank,
        }
    }

    fn n(&self) -> usize {
        self.factors.nrows()
    }

    fn reflect(&self, j: usize, x: &mut DVector<f64>) {
        let beta = self.betas[j];
        if beta == 0.0 {
            return;
        }
        let n = self.n();
        let mut dot = self.v0[j] * x[j];
        for r in j + 1..n {
            dot += self.factors[(r, j)] * x[r];
        }
        let s = beta * dot;
        x[j] -= s * self.v0[j];
        for r in j + 1..n {
            x[r] -= s * self.factors[(r, j)];
        }
    }

    /// `x <- Q x` (reflectors in reverse order).
    fn apply_q(&self, x: &mut DVector<f64>) {
        for j in (0..self.rank).rev() {
            self.reflect(j, x);
        }
    }

    /// `x <- Q' x` (reflectors in forward order).
    fn apply_qt(&self, x: &mut DVector<f64>) {
        for j in 0..self.rank {
            self.reflect(j, x);
        }
    }

    /// Columns `rank..n` of `Q`: an orthonormal basis of the null space of `M'`.
    fn null_basis(&self) -> DMatrix<f64> {
        let n = self.n();
        let nz = n - self.rank;
        let mut z = DMatrix::zeros(n, nz);
        for (c, col) in (self.rank..n).enumerate() {
            let mut e = DVector::zeros(n);
            e[col] = 1.0;
            self.apply_q(&mut e);
            z.set_column(c, &e);
        }
        z
    }

    /// Columns `0..rank` of `Q`: orthonormal basis of the range of `M`.
    fn range_basis(&self) -> DMatrix<f64> {
        let n = self.n();
        let mut q1 = DMatrix::zeros(n, self.rank);
        for col in 0..self.rank {
            let mut e = DVector::zeros(n);
            e[col] = 1.0;
            self.apply_q(&mut e);
            q1.set_column(col, &e);
        }
        q1
    }

    /// Solves `R11' w = rhs` (forward substitution on the transposed leading
    /// upper triangle).
    fn solve_r11_transposed(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let r = self.rank;
        let mut w = DVector::zeros(r);
        for i in 0..r {
            let mut s = rhs[i];
            for j in 0..i {
                s -= self.factors[(j, i)] * w[j];
            }
            w[i] = s / self.factors[(i, i)];
        }
        w
    }

    /// Solves `R11 w = rhs` (back substitution on the leading upper triangle).
    fn solve_r11(&self, rhs: &DVector<f64>) -> DVector<f64> {
        let r = self.rank;
        let mut w = DVector::zeros(r);
        for i in (0..r).rev() {
            let mut s = rhs[i];
            for j in i + 1..r {
                s -= self.factors[(i, j)] * w[j];
            }
            w[i] = s / self.factors[(i, i)];
        }
        w
    }
}

// ---------------------------------------------------------------------------
// Prepared problem
// ---------------------------------------------------------------------------

struct EqElimination {
    qr: PivotedQr,
    /// Orthonormal null-space basis `Z` of the equality matrix (`n x nz`).
    z: DMatrix<f64>,
    /// First `rank` columns of `Q` (range of `A'`).
    q1: DMatrix<f64>,
    /// Copy of `A` for residual checks and dual recovery.
    a: DMatrix<f64>,
}

/// Factorization cache for repeated solves with fixed `P`, `A` and bound rows.
pub struct PreparedQp {
    n: usize,
    hessian: DMatrix<f64>,
    eq: Option<EqElimination>,
    /// Cholesky of the reduced Hessian `Z' P Z`.
    chol: Option<Cholesky<f64, Dyn>>,
    /// `Z' P`, used to shift the linear term by the particular solution.
    zt_p: Option<DMatrix<f64>>,
    bounds: Vec<LinearBound>,
    /// Bound rows mapped to the reduced space (`w_i = Z' g_i`).
    reduced_rows: Vec<DVector<f64>>,
    reduced_norms: Vec<f64>,
    opts: SolveOptions,
}

struct Active {
    bound: usize,
    side: BoundSide,
    /// `>=`-form normal in reduced space.
    normal: DVector<f64>,
    /// `>=`-form right-hand side.
    rhs: f64,
    /// `H^-1 normal`.
    hinv: DVector<f64>,
    mult: f64,
}

impl PreparedQp {
    pub fn new(
        hessian: &DMatrix<f64>,
        eq_mat: &DMatrix<f64>,
        bounds: &[LinearBound],
        opts: &SolveOptions,
    ) -> Result<Self> {
        let n = hessian.nrows();
        if hessian.ncols() != n {
            return Err(Error::Solver("hessian must be square".into()));
        }
        let scale = hessian.amax().max(f64::MIN_POSITIVE);
        for i in 0..n {
            for j in i + 1..n {
                if (hessian[(i, j)] - hessian[(j, i)]).abs() > 1e-7 * scale {
                    return Err(Error::Solver(format!(
                        "hessian is not symmetric at ({i},{j})"
                    )));
                }
            }
        }
        let mut h = hessian.clone();
        for i in 0..n {
            for j in i + 1..n {
                let v = 0.5 * (h[(i, j)] + h[(j, i)]);
                h[(i, j)] = v;
                h[(j, i)] = v;
            }
        }
        for b in bounds {
            if b.coeffs.len() != n {
                return Err(Error::Solver(format!(
                    "bound row has length {} but the problem has {n} variables",
                    b.coeffs.len()
                )));
            }
            if !(b.lower < b.upper) {
                return Err(Error::Solver(format!(
                    "bound requires lower < upper, got [{}, {}]",
                    b.lower, b.upper
                )));
            }
        }

        let eq = if eq_mat.nrows() > 0 {
            if eq_mat.ncols() != n {
                return Err(Error::Solver(format!(
                    "equality matrix has {} columns but the problem has {n} variables",
                    eq_mat.ncols()
                )));
            }
            let qr = PivotedQr::new(&eq_mat.transpose(), EQ_RANK_TOL);
            let z = qr.null_basis();
            let q1 = qr.range_basis();
            Some(EqElimination {
                qr,
                z,
                q1,
                a: eq_mat.clone(),
            })
        } else {
            None
        };

        let (chol, zt_p, reduced_rows) = match &eq {
            Some(e) if e.z.ncols() == 0 => (None, None, Vec::new()),
            Some(e) => {
                let zt_p = e.z.transpose() * &h;
                let reduced = &zt_p * &e.z;
                let chol = Cholesky::new(reduced).ok_or_else(|| {
                    Error::Solver(
                        "hessian is not positive definite on the equality null space".into(),
                    )
                })?;
                let rows = bounds
                    .iter()
                    .map(|b| e.z.transpose() * &b.coeffs)
                    .collect();
                (Some(chol), Some(zt_p), rows)
            }
            None => {
                let chol = Cholesky::new(h.clone())
                    .ok_or_else(|| Error::Solver("hessian is not positive definite".into()))?;
                let rows = bounds.iter().map(|b| b.coeffs.clone()).collect();
                (Some(chol), None, rows)
            }
        };
        let reduced_norms = reduced_rows.iter().map(|r: &DVector<f64>| r.norm()).collect();

        Ok(Self {
            n,
            hessian: h,
            eq,
            chol,
            zt_p,
            bounds: bounds.to_vec(),
            reduced_rows,
            reduced_norms,
            opts: *opts,
        })
    }

    pub fn num_vars(&self) -> usize {
        self.n
    }

    /// Solves with the cached factorizations. `warm_start` hints which bounds
    /// are likely active; it never changes the converged answer.
    pub fn solve(
        &self,
        linear: &DVector<f64>,
        eq_rhs: &DVector<f64>,
        warm_start: &[ActiveBound],
    ) -> Result<QpSolution> {
        if linear.len() != self.n {
            return Err(Error::Solver(format!(
                "linear term has length {} but the problem has {} variables",
                linear.len(),
                self.n
            )));
        }
        let tol = self.opts.tol;

        // Particular solution of the equalities + consistency check.
        let x_p = match &self.eq {
            Some(e) => {
                if eq_rhs.len() != e.a.nrows() {
                    return Err(Error::Solver(format!(
                        "equality rhs has length {} but there are {} equality rows",
                        eq_rhs.len(),
                        e.a.nrows()
                    )));
                }
                let mut bp = DVector::zeros(e.qr.rank);
                for j in 0..e.qr.rank {
                    bp[j] = eq_rhs[e.qr.perm[j]];
                }
                let w1 = e.qr.solve_r11_transposed(&bp);
                let x_p = &e.q1 * &w1;
                let residual = (&e.a * &x_p - eq_rhs).amax();
                let feas_tol = tol.max(1e-9) * (1.0 + eq_rhs.amax());
                if residual > feas_tol {
                    return Ok(self.infeasible_solution(
                        x_p,
                        linear,
                        format!(
                            "equality system inconsistent: residual {residual:.3e} exceeds {feas_tol:.3e}"
                        ),
                    ));
                }
                x_p
            }
            None => DVector::zeros(self.n),
        };

        // Fully determined by the equality constraints?
        let Some(chol) = &self.chol else {
            let mut violation = None;
            for (i, b) in self.bounds.iter().enumerate() {
                let v = b.coeffs.dot(&x_p);
                if v < b.lower - tol * (1.0 + b.lower.abs())
                    || v > b.upper + tol * (1.0 + b.upper.abs())
                {
                    violation = Some(i);
                    break;
                }
            }
            return Ok(match violation {
                Some(i) => self.infeasible_solution(
                    x_p,
                    linear,
                    format!("equalities pin the variable but violate bound {i}"),
                ),
                None => self.finish_reduced_status(
                    DVector::zeros(0),
                    x_p,
                    linear,
                    Vec::new(),
                    0,
                    QpStatus::Converged,
                    None,
                ),
            });
        };

        // Reduced linear term and unconstrained minimum.
        let q_red = match (&self.eq, &self.zt_p) {
            (Some(e), Some(zt_p)) => e.z.transpose() * linear + zt_p * &x_p,
            _ => linear.clone(),
        };
        let z_uc = chol.solve(&(-&q_red));
        let mut z = z_uc.clone();

        // Constant part g_i' x_p of each bound row.
        let g_xp: Vec<f64> = self.bounds.iter().map(|b| b.coeffs.dot(&x_p)).collect();

        let mut actives: Vec<Active> = Vec::new();
        let mut iterations = 0usize;

        // Warm start: pin the hinted bounds, then drop any with negative
        // multipliers so the dual iterate is valid before the main loop.
        if !warm_start.is_empty() {
            for hint in warm_start {
                if hint.bound >= self.bounds.len() {
                    continue;
                }
                if actives
                    .iter()
                    .any(|a| a.bound == hint.bound && a.side == hint.side)
                {
                    continue;
                }
                let Some((normal, rhs)) = self.ge_form(hint.bound, hint.side, &g_xp) else {
                    continue;
                };
                let hinv = chol.solve(&normal);
                let cand = Active {
                    bound: hint.bound,
                    side: hint.side,
                    normal,
                    rhs,
                    hinv,
                    mult: 0.0,
                };
                actives.push(cand);
                if factor_active_gram(&actives).is_none() {
                    actives.pop(); // dependent on the already-seeded set
                }
            }
            loop {
                if actives.is_empty() {
                    z = z_uc.clone();
                    break;
                }
                let k_chol = match factor_active_gram(&actives) {
                    Some(k) => k,
                    None => {
                        actives.pop();
                        continue;
                    }
                };
                let cz = DVector::from_iterator(
                    actives.len(),
                    actives.iter().map(|a| a.normal.dot(&z_uc)),
                );
                let d = DVector::from_iterator(actives.len(), actives.iter().map(|a| a.rhs));
                let u = k_chol.solve(&(d - cz));
                if let Some(worst) = (0..actives.len()).min_by(|&i, &j| {
                    u[i].partial_cmp(&u[j]).unwrap_or(std::cmp::Ordering::Equal)
                }) {
                    if u[worst] < 0.0 {
                        actives.remove(worst);
                        continue;
                    }
                }
                z = z_uc.clone();
                for (j, a) in actives.iter_mut().enumerate() {
                    a.mult = u[j];
                    z += &a.hinv * u[j];
                }
                break;
            }
        }

        // Main dual active-set loop.
        let status = loop {
            // Most violated inactive bound side, scaled by row norm.
            let mut pick: Option<(usize, BoundSide, f64)> = None;
            let mut fixed_violation: Option<String> = None;
            for (i, b) in self.bounds.iter().enumerate() {
                let row_fixed = self.reduced_norms[i] <= 1e-12 * (1.0 + b.coeffs.norm());
                for side in [BoundSide::Lower, BoundSide::Upper] {
                    let limit = match side {
                        BoundSide::Lower => b.lower,
                        BoundSide::Upper => b.upper,
                    };
                    if !limit.is_finite() {
                        continue;
                    }
                    if actives.iter().any(|a| a.bound == i && a.side == side) {
                        continue;
                    }
                    let Some((normal, rhs)) = self.ge_form(i, side, &g_xp) else {
                        continue;
                    };
                    let slack = normal.dot(&z) - rhs;
                    let tol_i = tol * (1.0 + rhs.abs());
                    if slack >= -tol_i {
                        continue;
                    }
                    if row_fixed {
                        fixed_violation = Some(format!(
                            "bound {i} lies in the equality row space and is violated by {:.3e}",
                            -slack
                        ));
                        continue;
                    }
                    let scaled = slack / self.reduced_norms[i];
                    if pick.map_or(true, |(_, _, best)| scaled < best) {
                        pick = Some((i, side, scaled));
                    }
                }
            }
            let Some((bi, side, _)) = pick else {
                if let Some(msg) = fixed_violation {
                    break Some(msg);
                }
                break None; // converged
            };

            let (normal, rhs) = self.ge_form(bi, side, &g_xp).expect("side is finite");
            let mut u_plus = 0.0f64;
            let added = loop {
                if iterations >= self.opts.max_iter {
                    break None;
                }
                let h = chol.solve(&normal);
                let (zdir, rv) = if actives.is_empty() {
                    (h.clone(), DVector::zeros(0))
                } else {
                    let k_chol = factor_active_gram(&actives).ok_or_else(|| {
                        Error::Solver("active-set gram matrix lost positive definiteness".into())
                    })?;
                    let wv = DVector::from_iterator(
                        actives.len(),
                        actives.iter().map(|a| a.normal.dot(&h)),
                    );
                    let rv = k_chol.solve(&wv);
                    let mut zdir = h.clone();
                    for (j, a) in actives.iter().enumerate() {
                        zdir -= &a.hinv * rv[j];
                    }
                    (zdir, rv)
                };

                let slack = normal.dot(&z) - rhs;
                let denom = normal.dot(&zdir);
                let denom_floor = 1e-14 * normal.norm() * h.norm().max(f64::MIN_POSITIVE);
                let t2 = if denom > denom_floor {
                    -slack / denom
                } else {
                    f64::INFINITY
                };
                let mut t1 = f64::INFINITY;
                let mut drop_idx = None;
                for (j, a) in actives.iter().enumerate() {
                    if rv.len() > j && rv[j] > 0.0 {
                        let step = a.mult / rv[j];
                        if step < t1 {
                            t1 = step;
                            drop_idx = Some(j);
                        }
                    }
                }
                if !t1.is_finite() && !t2.is_finite() {
                    return Ok(self.finish_reduced(
                        z,
                        x_p,
                        linear,
                        actives,
                        iterations,
                        Some(format!(
                            "bound {bi} cannot be satisfied together with the active set"
                        )),
                    ));
                }
                let t = t1.min(t2);
                z += &zdir * t;
                for (j, a) in actives.iter_mut().enumerate() {
                    if rv.len() > j {
                        a.mult -= t * rv[j];
                    }
                }
                u_plus += t;
                iterations += 1;
                if t2 <= t1 {
                    break Some(h);
                }
                let j = drop_idx.expect("partial step implies a dropped constraint");
                actives.remove(j);
            };
            match added {
                Some(hinv) => {
                    actives.push(Active {
                        bound: bi,
                        side,
                        normal,
                        rhs,
                        hinv,
                        mult: u_plus,
                    });
                }
                None => {
                    // iteration cap reached mid-add; report the best iterate
                    return Ok(self.finish_reduced_status(
                        z,
                        x_p,
                        linear,
                        actives,
                        iterations,
                        QpStatus::MaxIter,
                        None,
                    ));
                }
            }
            if iterations >= self.opts.max_iter {
                return Ok(self.finish_reduced_status(
                    z, x_p, linear, actives, iterations, QpStatus::MaxIter, None,
                ));
            }
        };

        match status {
            Some(msg) => Ok(self.finish_reduced(z, x_p, linear, actives, iterations, Some(msg))),
            None => Ok(self.finish_reduced_status(
                z,
                x_p,
                linear,
                actives,
                iterations,
                QpStatus::Converged,
                None,
            )),
        }
    }

    /// `>=`-form (normal, rhs) of one side of bound `i` in reduced space.
    fn ge_form(&self, i: usize, side: BoundSide, g_xp: &[f64]) -> Option<(DVector<f64>, f64)> {
        let b = &self.bounds[i];
        match side {
            BoundSide::Lower if b.lower.is_finite() => {
                Some((self.reduced_rows[i].clone(), b.lower - g_xp[i]))
            }
            BoundSide::Upper if b.upper.is_finite() => {
                Some((-&self.reduced_rows[i], g_xp[i] - b.upper))
            }
            _ => None,
        }
    }

    fn lift(&self, z: &DVector<f64>, x_p: &DVector<f64>) -> DVector<f64> {
        match &self.eq {
            Some(e) if e.z.ncols() > 0 => x_p + &e.z * z,
            Some(_) => x_p.clone(),
            None => z.clone(),
        }
    }

    fn finish_reduced(
        &self,
        z: DVector<f64>,
        x_p: DVector<f64>,
        linear: &DVector<f64>,
        actives: Vec<Active>,
        iterations: usize,
        infeasibility: Option<String>,
    ) -> QpSolution {
        let status = if infeasibility.is_some() {
            QpStatus::Infeasible
        } else {
            QpStatus::Converged
        };
        self.finish_reduced_status(z, x_p, linear, actives, iterations, status, infeasibility)
    }

    fn finish_reduced_status(
        &self,
        z: DVector<f64>,
        x_p: DVector<f64>,
        linear: &DVector<f64>,
        actives: Vec<Active>,
        iterations: usize,
        status: QpStatus,
        infeasibility: Option<String>,
    ) -> QpSolution {
        let x = self.lift(&z, &x_p);
        let mut bound_duals = vec![(0.0, 0.0); self.bounds.len()];
        let mut active_set = Vec::with_capacity(actives.len());
        for a in &actives {
            match a.side {
                BoundSide::Lower => bound_duals[a.bound].0 = a.mult,
                BoundSide::Upper => bound_duals[a.bound].1 = a.mult,
            }
            active_set.push(ActiveBound {
                bound: a.bound,
                side: a.side,
            });
        }
        let eq_duals = self.recover_eq_duals(&x, linear, &bound_duals);
        let objective = 0.5 * (&self.hessian * &x).dot(&x) + linear.dot(&x);
        QpSolution {
            x,
            status,
            iterations,
            objective,
            eq_duals,
            bound_duals,
            active_set,
            infeasibility,
        }
    }

    fn infeasible_solution(
        &self,
        x: DVector<f64>,
        linear: &DVector<f64>,
        message: String,
    ) -> QpSolution {
        let objective = 0.5 * (&self.hessian * &x).dot(&x) + linear.dot(&x);
        let n_eq = self.eq.as_ref().map_or(0, |e| e.a.nrows());
        QpSolution {
            x,
            status: QpStatus::Infeasible,
            iterations: 0,
            objective,
            eq_duals: DVector::zeros(n_eq),
            bound_duals: vec![(0.0, 0.0); self.bounds.len()],
            active_set: Vec::new(),
            infeasibility: Some(message),
        }
    }

    /// Least-squares multipliers for the equality constraints from the
    /// stationarity condition.
    fn recover_eq_duals(
        &self,
        x: &DVector<f64>,
        linear: &DVector<f64>,
        bound_duals: &[(f64, f64)],
    ) -> DVector<f64> {
        let Some(e) = &self.eq else {
            return DVector::zeros(0);
        };
        let mut rhs = -(&self.hessian * x) - linear;
        for (b, &(lo, up)) in self.bounds.iter().zip(bound_duals) {
            if lo != 0.0 {
                rhs += &b.coeffs * lo;
            }
            if up != 0.0 {
                rhs -= &b.coeffs * up;
            }
        }
        // A' nu = rhs with A' = Q R Pi': back-substitute on the leading triangle.
        let mut qtr = rhs;
        e.qr.apply_qt(&mut qtr);
        let w = e.qr.solve_r11(&qtr.rows(0, e.qr.rank).clone_owned());
        let mut nu = DVector::zeros(e.a.nrows());
        for j in 0..e.qr.rank {
            nu[e.qr.perm[j]] = w[j];
        }
        nu
    }
}

/// Cholesky of the active-set Gram matrix `C H^-1 C'`.
fn factor_active_gram(actives: &[Active]) -> Option<Cholesky<f64, Dyn>> {
    let na = actives.len();
    let mut k = DMatrix::zeros(na, na);
    for i in 0..na {
        for j in 0..na {
            k[(i, j)] = actives[i].normal.dot(&actives[j].hinv);
        }
    }
    // symmetrize against round-off
    for i in 0..na {
        for j in i + 1..na {
            let v = 0.5 * (k[(i, j)] + k[(j, i)]);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
    }
    Cholesky::new(k)
}

// ---------------------------------------------------------------------------
// KKT residuals
// ---------------------------------------------------------------------------

/// Karush-Kuhn-Tucker residuals of a candidate solution, computed directly
/// from the problem data (independent of the solver internals).
#[derive(Debug, Clone, Copy)]
pub struct KktReport {
    /// Infinity norm of the Lagrangian gradient.
    pub stationarity: f64,
    /// Infinity norm of `A x - b`.
    pub eq_residual: f64,
    /// Largest bound violation.
    pub bound_violation: f64,
    /// Largest complementary-slackness violation.
    pub complementarity: f64,
    /// Most negative inequality multiplier (as a positive number).
    pub dual_negativity: f64,
}

impl KktReport {
    pub fn max_residual(&self) -> f64 {
        self.stationarity
            .max(self.eq_residual)
            .max(self.bound_violation)
            .max(self.complementarity)
            .max(self.dual_negativity)
    }
}

pub fn kkt_residuals(problem: &QpProblem, sol: &QpSolution) -> KktReport {
    let mut grad = &problem.hessian * &sol.x + &problem.linear;
    if problem.eq_mat.nrows() > 0 {
        grad += problem.eq_mat.transpose() * &sol.eq_duals;
    }
    let mut bound_violation = 0.0f64;
    let mut complementarity = 0.0f64;
    let mut dual_negativity = 0.0f64;
    for (b, &(lo_mult, up_mult)) in problem.bounds.iter().zip(&sol.bound_duals) {
        let v = b.coeffs.dot(&sol.x);
        grad -= &b.coeffs * lo_mult;
        grad += &b.coeffs * up_mult;
        if b.lower.is_finite() {
            bound_violation = bound_violation.max(b.lower - v);
            complementarity = complementarity.max((lo_mult * (v - b.lower)).abs());
        }
        if b.upper.is_finite() {
            bound_violation = bound_violation.max(v - b.upper);
            complementarity = complementarity.max((up_mult * (b.upper - v)).abs());
        }
        dual_negativity = dual_negativity.max(-lo_mult).max(-up_mult);
    }
    let eq_residual = if problem.eq_mat.nrows() > 0 {
        (&problem.eq_mat * &sol.x - &problem.eq_rhs).amax()
    } else {
        0.0
    };
    KktReport {
        stationarity: grad.amax(),
        eq_residual,
        bound_violation: bound_violation.max(0.0),
        complementarity,
        dual_negativity: dual_negativity.max(0.0),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn unbounded() -> Vec<LinearBound> {
        Vec::new()
    }

    fn empty_eq(n: usize) -> (DMatrix<f64>, DVector<f64>) {
        (DMatrix::zeros(0, n), DVector::zeros(0))
    }

    #[test]
    fn one_dimensional_clamp() {
        // min (x-2)^2 s.t. x <= 1  ->  x = 1
        let (a, b) = empty_eq(1);
        let problem = QpProblem {
            hessian: DMatrix::from_element(1, 1, 2.0),
            linear: DVector::from_element(1, -4.0),
            eq_mat: a,
            eq_rhs: b,
            bounds: vec![LinearBound::coordinate(1, 0, f64::NEG_INFINITY, 1.0)],
        };
        let sol = solve_qp(&problem, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Converged);
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-10);
        assert!(sol.bound_duals[0].1 > 0.0);
        assert!(kkt_residuals(&problem, &sol).max_residual() < 1e-8);
    }

    #[test]
    fn unconstrained_matches_normal_equations() {
        let p = DMatrix::from_row_slice(3, 3, &[4.0, 1.0, 0.0, 1.0, 3.0, 0.5, 0.0, 0.5, 2.0]);
        let q = DVector::from_vec(vec![1.0, -2.0, 0.5]);
        let (a, b) = empty_eq(3);
        let problem = QpProblem {
            hessian: p.clone(),
            linear: q.clone(),
            eq_mat: a,
            eq_rhs: b,
            bounds: unbounded(),
        };
        let sol = solve_qp(&problem, &SolveOptions::default()).unwrap();
        let expected = p.lu().solve(&(-q)).unwrap();
        assert_relative_eq!(sol.x, expected, epsilon = 1e-10);
        assert_eq!(sol.iterations, 0);
    }

    #[test]
    fn equality_only_matches_kkt_oracle() {
        let p = DMatrix::from_row_slice(3, 3, &[3.0, 0.2, 0.0, 0.2, 2.0, 0.1, 0.0, 0.1, 1.5]);
        let q = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let a = DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]);
        let b = DVector::from_vec(vec![1.0]);
        let problem = QpProblem {
            hessian: p.clone(),
            linear: q.clone(),
            eq_mat: a.clone(),
            eq_rhs: b.clone(),
            bounds: unbounded(),
        };
        let sol = solve_qp(&problem, &SolveOptions::default()).unwrap();

        // dense KKT oracle
        let mut kkt = DMatrix::zeros(4, 4);
        kkt.view_mut((0, 0), (3, 3)).copy_from(&p);
        kkt.view_mut((0, 3), (3, 1)).copy_from(&a.transpose());
        kkt.view_mut((3, 0), (1, 3)).copy_from(&a);
        let mut rhs = DVector::zeros(4);
        rhs.rows_mut(0, 3).copy_from(&(-&q));
        rhs[3] = b[0];
        let xk = kkt.lu().solve(&rhs).unwrap();
        for i in 0..3 {
            assert_relative_eq!(sol.x[i], xk[i], epsilon = 1e-9);
        }
        assert_relative_eq!(sol.eq_duals[0], xk[3], epsilon = 1e-9);
        assert!(kkt_residuals(&problem, &sol).max_residual() < 1e-8);
    }

    #[test]
    fn affine_bound_activates() {
        // min ||x||^2 s.t. x1 + x2 >= 3  -> (1.5, 1.5)
        let (a, b) = empty_eq(2);
        let problem = QpProblem {
            hessian: DMatrix::identity(2, 2) * 2.0,
            linear: DVector::zeros(2),
            eq_mat: a,
            eq_rhs: b,
            bounds: vec![LinearBound {
                coeffs: DVector::from_vec(vec![1.0, 1.0]),
                lower: 3.0,
                upper: f64::INFINITY,
            }],
        };
        let sol = solve_qp(&problem, &SolveOptions::default()).unwrap();
        assert_relative_eq!(sol.x[0], 1.5, epsilon = 1e-9);
        assert_relative_eq!(sol.x[1], 1.5, epsilon = 1e-9);
        assert!(kkt_residuals(&problem, &sol).max_residual() < 1e-8);
    }

    #[test]
    fn inconsistent_equalities_report_infeasible() {
        let problem = QpProblem {
            hessian: DMatrix::identity(2, 2),
            linear: DVector::zeros(2),
            eq_mat: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 1.0, 0.0]),
            eq_rhs: DVector::from_vec(vec![0.0, 1.0]),
            bounds: unbounded(),
        };
        let sol = solve_qp(&problem, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
        assert!(sol.infeasibility.unwrap().contains("inconsistent"));
    }

    #[test]
    fn redundant_consistent_equalities_are_fine() {
        let problem = QpProblem {
            hessian: DMatrix::identity(2, 2),
            linear: DVector::from_vec(vec![0.0, -2.0]),
            eq_mat: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 2.0, 0.0]),
            eq_rhs: DVector::from_vec(vec![1.0, 2.0]),
            bounds: unbounded(),
        };
        let sol = solve_qp(&problem, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Converged);
        assert_relative_eq!(sol.x[0], 1.0, epsilon = 1e-10);
        assert_relative_eq!(sol.x[1], 2.0, epsilon = 1e-10);
    }

    #[test]
    fn conflicting_bounds_are_infeasible_not_a_crash() {
        // x >= 1 and x <= 0 expressed as two affine rows
        let (a, b) = empty_eq(1);
        let problem = QpProblem {
            hessian: DMatrix::from_element(1, 1, 2.0),
            linear: DVector::zeros(1),
            eq_mat: a,
            eq_rhs: b,
            bounds: vec![
                LinearBound {
                    coeffs: DVector::from_element(1, 1.0),
                    lower: 1.0,
                    upper: f64::INFINITY,
                },
                LinearBound {
                    coeffs: DVector::from_element(1, 1.0),
                    lower: f64::NEG_INFINITY,
                    upper: 0.0,
                },
            ],
        };
        let sol = solve_qp(&problem, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn equality_pins_bound_violation_is_infeasible() {
        // x = 2 forced by equality, but bound says x <= 1
        let problem = QpProblem {
            hessian: DMatrix::from_element(1, 1, 2.0),
            linear: DVector::zeros(1),
            eq_mat: DMatrix::from_element(1, 1, 1.0),
            eq_rhs: DVector::from_element(1, 2.0),
            bounds: vec![LinearBound::coordinate(1, 0, f64::NEG_INFINITY, 1.0)],
        };
        let sol = solve_qp(&problem, &SolveOptions::default()).unwrap();
        assert_eq!(sol.status, QpStatus::Infeasible);
    }

    #[test]
    fn max_iter_returns_best_iterate() {
        let (a, b) = empty_eq(1);
        let problem = QpProblem {
            hessian: DMatrix::from_element(1, 1, 2.0),
            linear: DVector::from_element(1, -4.0),
            eq_mat: a,
            eq_rhs: b,
            bounds: vec![LinearBound::coordinate(1, 0, f64::NEG_INFINITY, 1.0)],
        };
        let sol = solve_qp(
            &problem,
            &SolveOptions {
                tol: 1e-8,
                max_iter: 0,
            },
        )
        .unwrap();
        assert_eq!(sol.status, QpStatus::MaxIter);
        assert!(sol.x[0].is_finite());
    }

    #[test]
    fn warm_start_matches_cold_start() {
        let (a, b) = empty_eq(2);
        let problem = QpProblem {
            hessian: DMatrix::from_row_slice(2, 2, &[2.0, 0.3, 0.3, 1.0]),
            linear: DVector::from_vec(vec![-3.0, 1.0]),
            eq_mat: a,
            eq_rhs: b,
            bounds: vec![
                LinearBound::coordinate(2, 0, -0.5, 0.5),
                LinearBound::coordinate(2, 1, -0.5, 0.5),
            ],
        };
        let opts = SolveOptions::default();
        let cold = solve_qp(&problem, &opts).unwrap();
        let prepared =
            PreparedQp::new(&problem.hessian, &problem.eq_mat, &problem.bounds, &opts).unwrap();
        // seed with a deliberately wrong hint as well as the right one
        let warm = prepared
            .solve(
                &problem.linear,
                &problem.eq_rhs,
                &[
                    ActiveBound {
                        bound: 1,
                        side: BoundSide::Lower,
                    },
                    ActiveBound {
                        bound: 0,
                        side: BoundSide::Upper,
                    },
                ],
            )
            .unwrap();
        assert_eq!(warm.status, QpStatus::Converged);
        assert_relative_eq!(warm.x, cold.x, epsilon = 1e-9);
        assert!(kkt_residuals(&problem, &warm).max_residual() < 1e-8);
    }

    #[test]
    fn non_positive_definite_hessian_is_an_error() {
        let (a, b) = empty_eq(1);
        let problem = QpProblem {
            hessian: DMatrix::from_element(1, 1, -1.0),
            linear: DVector::zeros(1),
            eq_mat: a,
            eq_rhs: b,
            bounds: unbounded(),
        };
        assert!(solve_qp(&problem, &SolveOptions::default()).is_err());
    }

    #[test]
    fn deterministic_across_calls() {
        let problem = QpProblem {
            hessian: DMatrix::from_row_slice(2, 2, &[2.5, 0.4, 0.4, 1.2]),
            linear: DVector::from_vec(vec![0.7, -1.1]),
            eq_mat: DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
            eq_rhs: DVector::from_element(1, 0.25),
            bounds: vec![LinearBound::coordinate(2, 0, -0.3, 0.3)],
        };
        let s1 = solve_qp(&problem, &SolveOptions::default()).unwrap();
        let s2 = solve_qp(&problem, &SolveOptions::default()).unwrap();
        assert_eq!(s1.x.as_slice(), s2.x.as_slice());
        assert_eq!(s1.objective.to_bits(), s2.objective.to_bits());
    }
}

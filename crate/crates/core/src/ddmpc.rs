//! Data-driven MPC: predict with Hankel-matrix columns instead of a model and
//! solve a regularized tracking QP over the combination coefficients each step.
//!
//! The dictionary holds order `L+v` input/output Hankel matrices built from
//! one persistently exciting run. Every control step solves
//! ```text
//!   min_a  sum_k ||y_k - yref_k||_Q^2 + ||u_k - uref_k||_R^2 + lambda ||a||^2
//!   s.t.   [Up; Yp] a = recent history     (pins the internal state)
//!          u_min <= (Uf a)_k <= u_max      (input bounds)
//! ```
//! where `[u; y] = [Hu; Hy] a` splits into `v` past and `L` future steps,
//! and applies the first future input.

use std::time::Instant;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::hankel::{build_hankel, check_persistent_excitation, HankelMatrix, PeDiagnostic,
    DEFAULT_RANK_TOL};
use crate::qp::{
    ActiveBound, LinearBound, PreparedQp, QpProblem, QpSolution, QpStatus,
    SolveOptions,
};
use crate::signal::{Signal, TrajectoryData};

/// Weight of the soft-equality fallback used when the measured history is
/// inconsistent with the data span (possible with a nonlinear plant).
const RELAXATION_WEIGHT: f64 = 1e6;

/// Controller hyperparameters.
#[derive(Debug, Clone)]
pub struct DdmpcConfig {
    /// Basic prediction horizon `L` in steps.
    pub horizon: usize,
    /// Upper bound `v` on the (unknown) system order, in steps.
    pub order_bound: usize,
    /// Symmetric positive definite output tracking weight (`p x p`).
    pub output_weight: DMatrix<f64>,
    /// Symmetric positive definite input weight (`m x m`).
    pub input_weight: DMatrix<f64>,
    /// Regularization weight on the combination coefficients.
    pub lambda: f64,
    /// Componentwise input bounds (radians for steering).
    pub u_min: DVector<f64>,
    pub u_max: DVector<f64>,
    /// Optional symmetric bound on each combination coefficient.
    pub alpha_bound: Option<f64>,
    /// Optional componentwise output bounds over the future horizon.
    pub y_min: Option<DVector<f64>>,
    pub y_max: Option<DVector<f64>>,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
    /// Sample time the data and plant share, seconds.
    pub sample_time: f64,
}

impl DdmpcConfig {
    /// Steering defaults: `L = 24`, `v = 6`, `Q = I`, `R = 1e-2 I`,
    /// `lambda = 1e-3`, wheel angles bounded to +/- 5 degrees.
    pub fn steering_defaults() -> Self {
        let bound = 5.0_f64.to_radians();
        Self {
            horizon: 24,
            order_bound: 6,
            output_weight: DMatrix::identity(3, 3),
            input_weight: DMatrix::identity(2, 2) * 1e-2,
            lambda: 1e-3,
            u_min: DVector::from_element(2, -bound),
            u_max: DVector::from_element(2, bound),
            alpha_bound: None,
            y_min: None,
            y_max: None,
            solver_tol: 1e-8,
            solver_max_iter: 200,
            sample_time: 0.05,
        }
    }

    pub fn input_dim(&self) -> usize {
        self.input_weight.nrows()
    }

    pub fn output_dim(&self) -> usize {
        self.output_weight.nrows()
    }

    /// Window length `L + v` of the dictionary Hankel matrices.
    pub fn window(&self) -> usize {
        self.horizon + self.order_bound
    }

    /// Excitation order `L + 2v` the data must satisfy.
    pub fn pe_order(&self) -> usize {
        self.horizon + 2 * self.order_bound
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 || self.order_bound < 1 {
            return Err(Error::InvalidArgument(format!(
                "horizon and order bound must be >= 1, got L={}, v={}",
                self.horizon, self.order_bound
            )));
        }
        check_spd("output weight", &self.output_weight)?;
        check_spd("input weight", &self.input_weight)?;
        if !(self.lambda >= 0.0) {
            return Err(Error::InvalidArgument(format!(
                "lambda must be nonnegative, got {}",
                self.lambda
            )));
        }
        let m = self.input_dim();
        if self.u_min.len() != m || self.u_max.len() != m {
            return Err(Error::InvalidArgument(
                "input bounds must match the input dimension".into(),
            ));
        }
        for i in 0..m {
            if !(self.u_min[i] < self.u_max[i]) {
                return Err(Error::InvalidArgument(format!(
                    "input bound {i} requires u_min < u_max, got [{}, {}]",
                    self.u_min[i], self.u_max[i]
                )));
            }
        }
        if let Some(b) = self.alpha_bound {
            if !(b > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "alpha bound must be positive, got {b}"
                )));
            }
        }
        if !(self.solver_tol > 0.0) || self.solver_max_iter == 0 {
            return Err(Error::InvalidArgument(
                "solver tolerance must be positive and iteration cap nonzero".into(),
            ));
        }
        if !(self.sample_time > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "sample time must be positive, got {}",
                self.sample_time
            )));
        }
        Ok(())
    }

    fn solve_options(&self) -> SolveOptions {
        SolveOptions {
            tol: self.solver_tol,
            max_iter: self.solver_max_iter,
        }
    }
}

fn check_spd(name: &str, m: &DMatrix<f64>) -> Result<()> {
    if m.nrows() != m.ncols() || m.nrows() == 0 {
        return Err(Error::InvalidArgument(format!(
            "{name} must be a nonempty square matrix"
        )));
    }
    let scale = m.amax().max(f64::MIN_POSITIVE);
    for i in 0..m.nrows() {
        for j in i + 1..m.ncols() {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-9 * scale {
                return Err(Error::InvalidArgument(format!("{name} must be symmetric")));
            }
        }
    }
    if nalgebra::Cholesky::new(m.clone()).is_none() {
        return Err(Error::InvalidArgument(format!(
            "{name} must be positive definite"
        )));
    }
    Ok(())
}

/// Hankel-matrix predictor built from one recorded run.
#[derive(Debug, Clone)]
pub struct DataDictionary {
    hu: HankelMatrix,
    hy: HankelMatrix,
    input_dim: usize,
    output_dim: usize,
    data_len: usize,
    horizon: usize,
    order_bound: usize,
    pe_verified: bool,
    pe_diagnostic: PeDiagnostic,
}

impl DataDictionary {
    pub fn input_hankel(&self) -> &HankelMatrix {
        &self.hu
    }

    pub fn output_hankel(&self) -> &HankelMatrix {
        &self.hy
    }

    /// Number of columns, i.e. the dimension of the coefficient vector.
    pub fn columns(&self) -> usize {
        self.hu.ncols()
    }

    pub fn input_dim(&self) -> usize {
        self.input_dim
    }

    pub fn output_dim(&self) -> usize {
        self.output_dim
    }

    pub fn data_len(&self) -> usize {
        self.data_len
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn order_bound(&self) -> usize {
        self.order_bound
    }

    pub fn pe_verified(&self) -> bool {
        self.pe_verified
    }

    pub fn pe_diagnostic(&self) -> &PeDiagnostic {
        &self.pe_diagnostic
    }

    /// First `v` block rows of the input Hankel matrix.
    pub fn input_past(&self) -> DMatrix<f64> {
        let (past, _) = self.hu.split_past_future(self.order_bound).expect("v < L+v");
        past.clone_owned()
    }

    /// Last `L` block rows of the input Hankel matrix.
    pub fn input_future(&self) -> DMatrix<f64> {
        let (_, fut) = self.hu.split_past_future(self.order_bound).expect("v < L+v");
        fut.clone_owned()
    }

    pub fn output_past(&self) -> DMatrix<f64> {
        let (past, _) = self.hy.split_past_future(self.order_bound).expect("v < L+v");
        past.clone_owned()
    }

    pub fn output_future(&self) -> DMatrix<f64> {
        let (_, fut) = self.hy.split_past_future(self.order_bound).expect("v < L+v");
        fut.clone_owned()
    }
}

/// Packs a recorded run into order `L+v` Hankel matrices after verifying the
/// input is persistently exciting of order `L+2v`.
pub fn build_dictionary(data: &TrajectoryData, cfg: &DdmpcConfig) -> Result<DataDictionary> {
    cfg.validate()?;
    let m = data.input_dim();
    let p = data.output_dim();
    if m != cfg.input_dim() || p != cfg.output_dim() {
        return Err(Error::InvalidArgument(format!(
            "data dimensions (m={m}, p={p}) do not match the configuration (m={}, p={})",
            cfg.input_dim(),
            cfg.output_dim()
        )));
    }
    let n = data.len();
    let pe_order = cfg.pe_order();
    // rank m(L+2v) needs at least m(L+2v) columns: N - (L+2v) + 1 >= m(L+2v)
    let minimum = (m + 1) * pe_order - 1;
    if n < minimum {
        return Err(Error::InsufficientData {
            have: n,
            minimum,
            context: format!(
                "persistent excitation of order {pe_order} with {m} input(s) needs N >= (m+1)(L+2v) - 1"
            ),
        });
    }
    let (ok, diag) = check_persistent_excitation(&data.inputs, pe_order, DEFAULT_RANK_TOL)?;
    if !ok {
        return Err(Error::NotPersistentlyExciting(diag));
    }
    let window = cfg.window();
    Ok(DataDictionary {
        hu: build_hankel(&data.inputs, window)?,
        hy: build_hankel(&data.outputs, window)?,
        input_dim: m,
        output_dim: p,
        data_len: n,
        horizon: cfg.horizon,
        order_bound: cfg.order_bound,
        pe_verified: true,
        pe_diagnostic: diag,
    })
}

/// Evaluates `[Hu; Hy] alpha` as per-step input and output sequences over the
/// full `L+v` window.
pub fn predict_trajectory(dict: &DataDictionary, alpha: &DVector<f64>) -> Result<(Signal, Signal)> {
    if alpha.len() != dict.columns() {
        return Err(Error::InvalidArgument(format!(
            "alpha has length {} but the dictionary has {} columns",
            alpha.len(),
            dict.columns()
        )));
    }
    let u_stacked = dict.hu.data() * alpha;
    let v_stacked = dict.hy.data() * alpha;
    let window = dict.horizon + dict.order_bound;
    let unstack = |stacked: &DVector<f64>, d: usize| {
        let mut m = DMatrix::zeros(d, window);
        for k in 0..window {
            for i in 0..d {
                m[(i, k)] = stacked[k * d + i];
            }
        }
        Signal::new(m)
    };
    Ok((
        unstack(&u_stacked, dict.input_dim)?,
        unstack(&v_stacked, dict.output_dim)?,
    ))
}

/// Ring buffer of the most recent `v` applied-input / measured-output pairs.
#[derive(Debug, Clone)]
pub struct HistoryBuffer {
    capacity: usize,
    input_dim: usize,
    output_dim: usize,
    entries: std::collections::VecDeque<(DVector<f64>, DVector<f64>)>,
}

impl HistoryBuffer {
    pub fn new(capacity: usize, input_dim: usize, output_dim: usize) -> Self {
        Self {
            capacity,
            input_dim,
            output_dim,
            entries: std::collections::VecDeque::with_capacity(capacity + 1),
        }
    }

    pub fn push(&mut self, input: DVector<f64>, output: DVector<f64>) -> Result<()> {
        if input.len() != self.input_dim || output.len() != self.output_dim {
            return Err(Error::InvalidArgument(format!(
                "history entry dimensions ({}, {}) do not match (m={}, p={})",
                input.len(),
                output.len(),
                self.input_dim,
                self.output_dim
            )));
        }
        self.entries.push_back((input, output));
        while self.entries.len() > self.capacity {
            self.entries.pop_front();
        }
        Ok(())
    }

    pub fn is_warm(&self) -> bool {
        self.entries.len() == self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn entries(&self) -> impl Iterator<Item = &(DVector<f64>, DVector<f64>)> {
        self.entries.iter()
    }

    /// Inputs stacked oldest-first into one `m*v` vector.
    pub fn stacked_inputs(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.input_dim * self.entries.len());
        for (k, (u, _)) in self.entries.iter().enumerate() {
            v.rows_mut(k * self.input_dim, self.input_dim).copy_from(u);
        }
        v
    }

    /// Outputs stacked oldest-first into one `p*v` vector.
    pub fn stacked_outputs(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.output_dim * self.entries.len());
        for (k, (_, y)) in self.entries.iter().enumerate() {
            v.rows_mut(k * self.output_dim, self.output_dim).copy_from(y);
        }
        v
    }
}

fn stack_refs(refs: &[DVector<f64>], dim: usize, what: &str, horizon: usize) -> Result<DVector<f64>> {
    if refs.len() != horizon {
        return Err(Error::InvalidArgument(format!(
            "{what} reference has {} entries, expected the horizon {horizon}",
            refs.len()
        )));
    }
    let mut v = DVector::zeros(dim * horizon);
    for (k, r) in refs.iter().enumerate() {
        if r.len() != dim {
            return Err(Error::InvalidArgument(format!(
                "{what} reference entry {k} has dimension {}, expected {dim}",
                r.len()
            )));
        }
        v.rows_mut(k * dim, dim).copy_from(r);
    }
    Ok(v)
}

/// Applies the block-diagonal weight `I_L (x) W` to a stacked matrix.
fn blockwise_weight(w: &DMatrix<f64>, stacked: &DMatrix<f64>) -> DMatrix<f64> {
    let d = w.nrows();
    let blocks = stacked.nrows() / d;
    let mut out = DMatrix::zeros(stacked.nrows(), stacked.ncols());
    for k in 0..blocks {
        let rows = stacked.rows(k * d, d);
        out.rows_mut(k * d, d).copy_from(&(w * rows));
    }
    out
}

/// Condensed QP pieces that depend only on the dictionary and configuration.
struct CondensedForm {
    hessian: DMatrix<f64>,
    /// `(I (x) Q) Yf`, for the output part of the linear term.
    weighted_yf: DMatrix<f64>,
    /// `(I (x) R) Uf`, for the input part of the linear term.
    weighted_uf: DMatrix<f64>,
    eq_mat: DMatrix<f64>,
    bounds: Vec<LinearBound>,
    uf: DMatrix<f64>,
    yf: DMatrix<f64>,
}

fn condense(dict: &DataDictionary, cfg: &DdmpcConfig) -> Result<CondensedForm> {
    if dict.horizon != cfg.horizon || dict.order_bound != cfg.order_bound {
        return Err(Error::InvalidArgument(format!(
            "dictionary was built for (L={}, v={}) but the configuration has (L={}, v={})",
            dict.horizon, dict.order_bound, cfg.horizon, cfg.order_bound
        )));
    }
    let nc = dict.columns();
    let m = dict.input_dim;
    let p = dict.output_dim;
    let l = cfg.horizon;

    let uf = dict.input_future();
    let yf = dict.output_future();
    let up = dict.input_past();
    let yp = dict.output_past();

    let weighted_yf = blockwise_weight(&cfg.output_weight, &yf);
    let weighted_uf = blockwise_weight(&cfg.input_weight, &uf);

    let mut hessian = yf.transpose() * &weighted_yf + uf.transpose() * &weighted_uf;
    for i in 0..nc {
        hessian[(i, i)] += cfg.lambda;
    }
    hessian *= 2.0;

    let mut eq_mat = DMatrix::zeros(up.nrows() + yp.nrows(), nc);
    eq_mat.rows_mut(0, up.nrows()).copy_from(&up);
    eq_mat.rows_mut(up.nrows(), yp.nrows()).copy_from(&yp);

    let mut bounds = Vec::new();
    for k in 0..l {
        for i in 0..m {
            bounds.push(LinearBound {
                coeffs: uf.row(k * m + i).transpose(),
                lower: cfg.u_min[i],
                upper: cfg.u_max[i],
            });
        }
    }
    if let (Some(y_min), Some(y_max)) = (&cfg.y_min, &cfg.y_max) {
        for k in 0..l {
            for i in 0..p {
                bounds.push(LinearBound {
                    coeffs: yf.row(k * p + i).transpose(),
                    lower: y_min[i],
                    upper: y_max[i],
                });
            }
        }
    }
    if let Some(b) = cfg.alpha_bound {
        for j in 0..nc {
            bounds.push(LinearBound::coordinate(nc, j, -b, b));
        }
    }

    Ok(CondensedForm {
        hessian,
        weighted_yf,
        weighted_uf,
        eq_mat,
        bounds,
        uf,
        yf,
    })
}

impl CondensedForm {
    fn linear_term(&self, y_ref: &DVector<f64>, u_ref: &DVector<f64>) -> DVector<f64> {
        -2.0 * (self.weighted_yf.transpose() * y_ref + self.weighted_uf.transpose() * u_ref)
    }

    fn eq_rhs(&self, hist: &HistoryBuffer) -> DVector<f64> {
        let u = hist.stacked_inputs();
        let y = hist.stacked_outputs();
        let mut rhs = DVector::zeros(u.len() + y.len());
        rhs.rows_mut(0, u.len()).copy_from(&u);
        rhs.rows_mut(u.len(), y.len()).copy_from(&y);
        rhs
    }
}

/// Builds the condensed quadratic program for one control step.
pub fn assemble_qp(
    dict: &DataDictionary,
    cfg: &DdmpcConfig,
    hist: &HistoryBuffer,
    y_ref: &[DVector<f64>],
    u_ref: &[DVector<f64>],
) -> Result<QpProblem> {
    cfg.validate()?;
    if !hist.is_warm() {
        return Err(Error::InvalidArgument(format!(
            "history buffer holds {} of {} required entries",
            hist.len(),
            hist.capacity()
        )));
    }
    let y_s = stack_refs(y_ref, dict.output_dim, "output", cfg.horizon)?;
    let u_s = stack_refs(u_ref, dict.input_dim, "input", cfg.horizon)?;
    let form = condense(dict, cfg)?;
    let linear = form.linear_term(&y_s, &u_s);
    let eq_rhs = form.eq_rhs(hist);
    Ok(QpProblem {
        hessian: form.hessian,
        linear,
        eq_mat: form.eq_mat,
        eq_rhs,
        bounds: form.bounds,
    })
}

/// Result of one receding-horizon step.
#[derive(Debug, Clone)]
pub struct DdmpcSolution {
    /// First future input, to be applied to the plant.
    pub u_first: DVector<f64>,
    /// Predicted future inputs, `L` entries.
    pub u_seq: Vec<DVector<f64>>,
    /// Predicted future outputs, `L` entries.
    pub y_seq: Vec<DVector<f64>>,
    /// Combination coefficients.
    pub alpha: DVector<f64>,
    /// Tracking cost of the returned trajectory (nonnegative).
    pub cost: f64,
    pub status: QpStatus,
    /// Seconds spent assembling the step-dependent terms and solving.
    pub solve_time: f64,
    /// Active-set changes inside the solver.
    pub iterations: usize,
    /// True when the history could not be matched exactly and the initial
    /// constraint was enforced as a weighted penalty instead.
    pub equalities_relaxed: bool,
}

/// Direct evaluation of the tracking cost for a given coefficient vector.
pub fn evaluate_cost(
    dict: &DataDictionary,
    cfg: &DdmpcConfig,
    y_ref: &[DVector<f64>],
    u_ref: &[DVector<f64>],
    alpha: &DVector<f64>,
) -> Result<f64> {
    let y_s = stack_refs(y_ref, dict.output_dim, "output", cfg.horizon)?;
    let u_s = stack_refs(u_ref, dict.input_dim, "input", cfg.horizon)?;
    let du = dict.input_future() * alpha - u_s;
    let dy = dict.output_future() * alpha - y_s;
    let m = dict.input_dim;
    let p = dict.output_dim;
    let mut cost = cfg.lambda * alpha.norm_squared();
    for k in 0..cfg.horizon {
        let dyk = dy.rows(k * p, p);
        let duk = du.rows(k * m, m);
        cost += (&cfg.output_weight * dyk).dot(&dyk.clone_owned());
        cost += (&cfg.input_weight * duk).dot(&duk.clone_owned());
    }
    Ok(cost)
}

/// One-shot receding-horizon step: assemble, solve, extract the first input.
/// [`DdmpcController`] does the same with cached factorizations.
pub fn ddmpc_step(
    dict: &DataDictionary,
    cfg: &DdmpcConfig,
    hist: &HistoryBuffer,
    y_ref: &[DVector<f64>],
    u_ref: &[DVector<f64>],
) -> Result<DdmpcSolution> {
    let mut controller = DdmpcController::new(dict.clone(), cfg.clone())?;
    controller.hist = hist.clone();
    controller.step(y_ref, u_ref)
}

/// Stateful controller: owns the history buffer, caches the QP factorizations
/// and warm-starts each solve from the previous active set.
pub struct DdmpcController {
    dict: DataDictionary,
    cfg: DdmpcConfig,
    form: CondensedForm,
    prepared: PreparedQp,
    /// Soft-equality fallback, built on first use.
    relaxed: Option<PreparedQp>,
    hist: HistoryBuffer,
    previous_active: Vec<ActiveBound>,
}

impl DdmpcController {
    pub fn new(dict: DataDictionary, cfg: DdmpcConfig) -> Result<Self> {
        cfg.validate()?;
        let form = condense(&dict, &cfg)?;
        let prepared = PreparedQp::new(
            &form.hessian,
            &form.eq_mat,
            &form.bounds,
            &cfg.solve_options(),
        )?;
        let hist = HistoryBuffer::new(cfg.order_bound, dict.input_dim(), dict.output_dim());
        Ok(Self {
            dict,
            cfg,
            form,
            prepared,
            relaxed: None,
            hist,
            previous_active: Vec::new(),
        })
    }

    pub fn dictionary(&self) -> &DataDictionary {
        &self.dict
    }

    pub fn config(&self) -> &DdmpcConfig {
        &self.cfg
    }

    pub fn history(&self) -> &HistoryBuffer {
        &self.hist
    }

    pub fn push_history(&mut self, input: DVector<f64>, output: DVector<f64>) -> Result<()> {
        self.hist.push(input, output)
    }

    pub fn is_warm(&self) -> bool {
        self.hist.is_warm()
    }

    /// Solves the tracking problem for the given reference window and returns
    /// the receding-horizon solution. The caller applies `u_first`, measures
    /// the plant, pushes the pair into the history and repeats.
    pub fn step(
        &mut self,
        y_ref: &[DVector<f64>],
        u_ref: &[DVector<f64>],
    ) -> Result<DdmpcSolution> {
        let start = Instant::now();
        if !self.hist.is_warm() {
            return Err(Error::InvalidArgument(format!(
                "history buffer holds {} of {} required entries",
                self.hist.len(),
                self.hist.capacity()
            )));
        }
        let y_s = stack_refs(y_ref, self.dict.output_dim, "output", self.cfg.horizon)?;
        let u_s = stack_refs(u_ref, self.dict.input_dim, "input", self.cfg.horizon)?;
        let linear = self.form.linear_term(&y_s, &u_s);
        let eq_rhs = self.form.eq_rhs(&self.hist);

        let seed = self.shifted_seed();
        let mut relaxed_flag = false;
        let mut sol = self.prepared.solve(&linear, &eq_rhs, &seed)?;
        if sol_is_eq_inconsistent(&sol) {
            // plant drifted outside the data span: soften the initial
            // constraint into a heavily weighted penalty
            relaxed_flag = true;
            let relaxed = match &self.relaxed {
                Some(r) => r,
                None => {
                    let mut h = self.form.hessian.clone();
                    h += 2.0 * RELAXATION_WEIGHT
                        * self.form.eq_mat.transpose()
                        * &self.form.eq_mat;
                    let empty_eq = DMatrix::zeros(0, self.dict.columns());
                    let prepared = PreparedQp::new(
                        &h,
                        &empty_eq,
                        &self.form.bounds,
                        &self.cfg.solve_options(),
                    )?;
                    self.relaxed = Some(prepared);
                    self.relaxed.as_ref().unwrap()
                }
            };
            let relaxed_linear =
                &linear - 2.0 * RELAXATION_WEIGHT * self.form.eq_mat.transpose() * &eq_rhs;
            sol = relaxed.solve(&relaxed_linear, &DVector::zeros(0), &seed)?;
        }
        self.previous_active = sol.active_set.clone();

        let solution = self.compose(sol, y_ref, u_ref, relaxed_flag, start)?;
        Ok(solution)
    }

    /// Warm-start hint: the previous step's active input bounds shifted one
    /// step toward the present.
    fn shifted_seed(&self) -> Vec<ActiveBound> {
        let m = self.dict.input_dim;
        let input_rows = self.cfg.horizon * m;
        self.previous_active
            .iter()
            .filter_map(|a| {
                if a.bound < input_rows && a.bound >= m {
                    Some(ActiveBound {
                        bound: a.bound - m,
                        side: a.side,
                    })
                } else {
                    None
                }
            })
            .collect()
    }

    fn compose(
        &self,
        sol: QpSolution,
        y_ref: &[DVector<f64>],
        u_ref: &[DVector<f64>],
        equalities_relaxed: bool,
        start: Instant,
    ) -> Result<DdmpcSolution> {
        let m = self.dict.input_dim;
        let p = self.dict.output_dim;
        let l = self.cfg.horizon;
        let u_stacked = &self.form.uf * &sol.x;
        let y_stacked = &self.form.yf * &sol.x;
        let u_seq: Vec<DVector<f64>> = (0..l)
            .map(|k| u_stacked.rows(k * m, m).clone_owned())
            .collect();
        let y_seq: Vec<DVector<f64>> = (0..l)
            .map(|k| y_stacked.rows(k * p, p).clone_owned())
            .collect();
        let cost = evaluate_cost(&self.dict, &self.cfg, y_ref, u_ref, &sol.x)?;
        Ok(DdmpcSolution {
            u_first: u_seq[0].clone(),
            u_seq,
            y_seq,
            alpha: sol.x,
            cost,
            status: sol.status,
            solve_time: start.elapsed().as_secs_f64(),
            iterations: sol.iterations,
            equalities_relaxed,
        })
    }
}

fn sol_is_eq_inconsistent(sol: &QpSolution) -> bool {
    sol.status == QpStatus::Infeasible
        && sol
            .infeasibility
            .as_deref()
            .is_some_and(|msg| msg.contains("inconsistent"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn small_cfg(m: usize, p: usize, l: usize, v: usize) -> DdmpcConfig {
        DdmpcConfig {
            horizon: l,
            order_bound: v,
            output_weight: DMatrix::identity(p, p),
            input_weight: DMatrix::identity(m, m),
            lambda: 1e-3,
            u_min: DVector::from_element(m, -10.0),
            u_max: DVector::from_element(m, 10.0),
            alpha_bound: None,
            y_min: None,
            y_max: None,
            solver_tol: 1e-8,
            solver_max_iter: 200,
            sample_time: 0.1,
        }
    }

    fn random_data(m: usize, p: usize, n: usize, seed: u64) -> TrajectoryData {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let u = DMatrix::from_fn(m, n, |_, _| rng.random::<f64>() - 0.5);
        let y = DMatrix::from_fn(p, n, |_, _| rng.random::<f64>() - 0.5);
        TrajectoryData::new(Signal::new(u).unwrap(), Signal::new(y).unwrap(), 0.1).unwrap()
    }

    #[test]
    fn dictionary_shapes() {
        let cfg = small_cfg(1, 1, 4, 2);
        let data = random_data(1, 1, 40, 1);
        let dict = build_dictionary(&data, &cfg).unwrap();
        assert_eq!(dict.input_hankel().order(), 6);
        assert_eq!(dict.columns(), 35);
        assert!(dict.pe_verified());
        assert_eq!(dict.input_past().nrows(), 2);
        assert_eq!(dict.input_future().nrows(), 4);
    }

    #[test]
    fn constant_input_fails_pe() {
        let cfg = small_cfg(1, 1, 4, 2);
        let n = 40;
        let u = DMatrix::from_element(1, n, 0.7);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let y = DMatrix::from_fn(1, n, |_, _| rng.random::<f64>());
        let data =
            TrajectoryData::new(Signal::new(u).unwrap(), Signal::new(y).unwrap(), 0.1).unwrap();
        let err = build_dictionary(&data, &cfg).unwrap_err();
        assert!(matches!(err, Error::NotPersistentlyExciting(_)));
        assert!(err.to_string().contains("not persistently exciting"));
    }

    #[test]
    fn too_short_data_names_the_minimum() {
        let cfg = small_cfg(1, 1, 4, 2);
        // N = L + 2v exactly: one column, rank condition unattainable
        let data = random_data(1, 1, 8, 3);
        let err = build_dictionary(&data, &cfg).unwrap_err();
        match err {
            Error::InsufficientData { have, minimum, .. } => {
                assert_eq!(have, 8);
                assert_eq!(minimum, 15); // (m+1)(L+2v) - 1 = 2*8 - 1
            }
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn predict_zero_alpha_is_zero() {
        let cfg = small_cfg(1, 1, 4, 2);
        let data = random_data(1, 1, 40, 4);
        let dict = build_dictionary(&data, &cfg).unwrap();
        let (u, y) = predict_trajectory(&dict, &DVector::zeros(dict.columns())).unwrap();
        assert_eq!(u.len(), 6);
        assert!(u.as_matrix().iter().all(|&v| v == 0.0));
        assert!(y.as_matrix().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn predict_unit_alpha_reads_a_data_window() {
        let cfg = small_cfg(2, 1, 3, 2);
        let data = random_data(2, 1, 60, 5);
        let dict = build_dictionary(&data, &cfg).unwrap();
        let j = 7;
        let mut alpha = DVector::zeros(dict.columns());
        alpha[j] = 1.0;
        let (u, y) = predict_trajectory(&dict, &alpha).unwrap();
        for k in 0..5 {
            for i in 0..2 {
                assert_eq!(u.sample(k)[i], data.inputs.sample(j + k)[i]);
            }
            assert_eq!(y.sample(k)[0], data.outputs.sample(j + k)[0]);
        }
    }

    #[test]
    fn predict_length_mismatch() {
        let cfg = small_cfg(1, 1, 4, 2);
        let data = random_data(1, 1, 40, 6);
        let dict = build_dictionary(&data, &cfg).unwrap();
        assert!(predict_trajectory(&dict, &DVector::zeros(3)).is_err());
    }

    fn history_from_window(data: &TrajectoryData, start: usize, v: usize) -> HistoryBuffer {
        let mut hist = HistoryBuffer::new(v, data.input_dim(), data.output_dim());
        for k in start..start + v {
            hist.push(
                data.inputs.sample(k).clone_owned(),
                data.outputs.sample(k).clone_owned(),
            )
            .unwrap();
        }
        hist
    }

    #[test]
    fn equality_rows_count() {
        let cfg = small_cfg(2, 3, 4, 3);
        let data = random_data(2, 3, 80, 7);
        let dict = build_dictionary(&data, &cfg).unwrap();
        let hist = history_from_window(&data, 10, 3);
        let y_ref = vec![DVector::zeros(3); 4];
        let u_ref = vec![DVector::zeros(2); 4];
        let qp = assemble_qp(&dict, &cfg, &hist, &y_ref, &u_ref).unwrap();
        assert_eq!(qp.eq_mat.nrows(), (2 + 3) * 3);
        assert_eq!(qp.eq_rhs.len(), 15);
        // input bounds: one row per future step per channel
        assert_eq!(qp.bounds.len(), 4 * 2);
    }

    #[test]
    fn zero_problem_hessian_structure() {
        // lambda = 0, unit weights, zero references and history: the cost is
        // ||M alpha||^2 with M the stacked future blocks, so the half-form
        // hessian equals 2 M'M and alpha = 0 attains cost 0.
        let mut cfg = small_cfg(1, 1, 3, 2);
        cfg.lambda = 0.0;
        let data = random_data(1, 1, 40, 8);
        let dict = build_dictionary(&data, &cfg).unwrap();
        let mut hist = HistoryBuffer::new(2, 1, 1);
        for _ in 0..2 {
            hist.push(DVector::zeros(1), DVector::zeros(1)).unwrap();
        }
        let y_ref = vec![DVector::zeros(1); 3];
        let u_ref = vec![DVector::zeros(1); 3];
        let qp = assemble_qp(&dict, &cfg, &hist, &y_ref, &u_ref).unwrap();

        let uf = dict.input_future();
        let yf = dict.output_future();
        let expected = 2.0 * (uf.transpose() * &uf + yf.transpose() * &yf);
        assert_relative_eq!(qp.hessian, expected, epsilon = 1e-12);
        assert!(qp.linear.amax() == 0.0);

        let zero = DVector::zeros(dict.columns());
        assert_eq!(evaluate_cost(&dict, &cfg, &y_ref, &u_ref, &zero).unwrap(), 0.0);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..5 {
            let alpha = DVector::from_fn(dict.columns(), |_, _| rng.random::<f64>() - 0.5);
            assert!(evaluate_cost(&dict, &cfg, &y_ref, &u_ref, &alpha).unwrap() >= 0.0);
        }
    }

    #[test]
    fn assemble_requires_warm_history() {
        let cfg = small_cfg(1, 1, 4, 2);
        let data = random_data(1, 1, 40, 9);
        let dict = build_dictionary(&data, &cfg).unwrap();
        let hist = HistoryBuffer::new(2, 1, 1);
        let y_ref = vec![DVector::zeros(1); 4];
        let u_ref = vec![DVector::zeros(1); 4];
        assert!(assemble_qp(&dict, &cfg, &hist, &y_ref, &u_ref).is_err());
    }

    #[test]
    fn assemble_rejects_short_reference() {
        let cfg = small_cfg(1, 1, 4, 2);
        let data = random_data(1, 1, 40, 10);
        let dict = build_dictionary(&data, &cfg).unwrap();
        let hist = history_from_window(&data, 5, 2);
        let y_ref = vec![DVector::zeros(1); 3];
        let u_ref = vec![DVector::zeros(1); 4];
        assert!(assemble_qp(&dict, &cfg, &hist, &y_ref, &u_ref).is_err());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let cfg = small_cfg(2, 2, 4, 2);
        let data = random_data(2, 2, 60, 11);
        let dict = build_dictionary(&data, &cfg).unwrap();
        let hist = history_from_window(&data, 12, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let y_ref: Vec<_> = (0..4)
            .map(|_| DVector::from_fn(2, |_, _| rng.random::<f64>() - 0.5))
            .collect();
        let u_ref: Vec<_> = (0..4)
            .map(|_| DVector::from_fn(2, |_, _| rng.random::<f64>() - 0.5))
            .collect();
        let qp = assemble_qp(&dict, &cfg, &hist, &y_ref, &u_ref).unwrap();
        let alpha = DVector::from_fn(dict.columns(), |_, _| rng.random::<f64>() - 0.5);

        // analytic gradient of the assembled quadratic (constants drop out)
        let grad = &qp.hessian * &alpha + &qp.linear;
        let h = 1e-6;
        for j in (0..dict.columns()).step_by(7) {
            let mut plus = alpha.clone();
            plus[j] += h;
            let mut minus = alpha.clone();
            minus[j] -= h;
            let fp = evaluate_cost(&dict, &cfg, &y_ref, &u_ref, &plus).unwrap();
            let fm = evaluate_cost(&dict, &cfg, &y_ref, &u_ref, &minus).unwrap();
            let fd = (fp - fm) / (2.0 * h);
            assert_relative_eq!(grad[j], fd, max_relative = 1e-6, epsilon = 1e-8);
        }
    }

    #[test]
    fn zero_history_zero_reference_gives_zero_input() {
        let cfg = small_cfg(1, 1, 4, 2);
        let data = random_data(1, 1, 40, 13);
        let dict = build_dictionary(&data, &cfg).unwrap();
        let mut hist = HistoryBuffer::new(2, 1, 1);
        for _ in 0..2 {
            hist.push(DVector::zeros(1), DVector::zeros(1)).unwrap();
        }
        let y_ref = vec![DVector::zeros(1); 4];
        let u_ref = vec![DVector::zeros(1); 4];
        let sol = ddmpc_step(&dict, &cfg, &hist, &y_ref, &u_ref).unwrap();
        assert_eq!(sol.status, QpStatus::Converged);
        assert!(sol.u_first.amax() < 1e-10, "u_first = {}", sol.u_first);
        assert!(sol.cost < 1e-18);
    }

    #[test]
    fn history_is_pinned_by_the_equality_constraints() {
        let cfg = small_cfg(1, 1, 5, 3);
        let data = random_data(1, 1, 60, 14);
        let dict = build_dictionary(&data, &cfg).unwrap();
        let hist = history_from_window(&data, 20, 3);
        let y_ref = vec![DVector::zeros(1); 5];
        let u_ref = vec![DVector::zeros(1); 5];
        let sol = ddmpc_step(&dict, &cfg, &hist, &y_ref, &u_ref).unwrap();
        assert_eq!(sol.status, QpStatus::Converged);
        assert!(!sol.equalities_relaxed);
        let (u, y) = predict_trajectory(&dict, &sol.alpha).unwrap();
        for (k, (hu, hy)) in hist.entries().enumerate() {
            assert_relative_eq!(u.sample(k)[0], hu[0], epsilon = 1e-7);
            assert_relative_eq!(y.sample(k)[0], hy[0], epsilon = 1e-7);
        }
    }

    #[test]
    fn alpha_norm_shrinks_with_lambda() {
        let data = random_data(1, 1, 50, 15);
        let mut norms = Vec::new();
        for lambda in [1e-4, 1e-3, 1e-2] {
            let mut cfg = small_cfg(1, 1, 4, 2);
            cfg.lambda = lambda;
            let dict = build_dictionary(&data, &cfg).unwrap();
            let hist = history_from_window(&data, 9, 2);
            let y_ref = vec![DVector::from_element(1, 0.4); 4];
            let u_ref = vec![DVector::zeros(1); 4];
            let sol = ddmpc_step(&dict, &cfg, &hist, &y_ref, &u_ref).unwrap();
            assert_eq!(sol.status, QpStatus::Converged);
            norms.push(sol.alpha.norm());
        }
        assert!(norms[0] >= norms[1] - 1e-12);
        assert!(norms[1] >= norms[2] - 1e-12);
    }

    #[test]
    fn converged_inputs_respect_bounds() {
        let mut cfg = small_cfg(1, 1, 4, 2);
        cfg.u_min = DVector::from_element(1, -0.05);
        cfg.u_max = DVector::from_element(1, 0.05);
        let data = random_data(1, 1, 50, 16);
        let dict = build_dictionary(&data, &cfg).unwrap();
        let hist = history_from_window(&data, 11, 2);
        let y_ref = vec![DVector::from_element(1, 2.0); 4];
        let u_ref = vec![DVector::zeros(1); 4];
        let sol = ddmpc_step(&dict, &cfg, &hist, &y_ref, &u_ref).unwrap();
        assert_eq!(sol.status, QpStatus::Converged);
        for u in &sol.u_seq {
            assert!(u[0] <= 0.05 + cfg.solver_tol && u[0] >= -0.05 - cfg.solver_tol);
        }
    }

    #[test]
    fn controller_step_is_deterministic_and_matches_one_shot() {
        let cfg = small_cfg(1, 1, 4, 2);
        let data = random_data(1, 1, 50, 17);
        let dict = build_dictionary(&data, &cfg).unwrap();
        let hist = history_from_window(&data, 8, 2);
        let y_ref = vec![DVector::from_element(1, 0.3); 4];
        let u_ref = vec![DVector::zeros(1); 4];

        let a = ddmpc_step(&dict, &cfg, &hist, &y_ref, &u_ref).unwrap();
        let b = ddmpc_step(&dict, &cfg, &hist, &y_ref, &u_ref).unwrap();
        assert_eq!(a.alpha.as_slice(), b.alpha.as_slice());
        assert_eq!(a.u_first.as_slice(), b.u_first.as_slice());
        assert_eq!(a.cost.to_bits(), b.cost.to_bits());

        let mut controller = DdmpcController::new(dict, cfg).unwrap();
        for (u, y) in hist.entries() {
            controller.push_history(u.clone(), y.clone()).unwrap();
        }
        let c = controller.step(&y_ref, &u_ref).unwrap();
        assert_relative_eq!(c.u_first[0], a.u_first[0], epsilon = 1e-9);
    }
}

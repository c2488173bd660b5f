//! Model-based MPC baseline on the kinematic bicycle, linearized about the
//! reference path.
//!
//! Error states are the lateral deviation `e_y` and heading deviation `e_phi`
//! (vehicle minus reference). Linearized about small deviations and Euler
//! discretized at `dt`:
//! ```text
//!   e_y+   = e_y + V dt e_phi
//!   e_phi+ = e_phi + (V dt / wheelbase) delta - V dt kappa_k
//! ```
//! with `kappa_k` the reference curvature along the preview. The horizon cost
//! `sum e' Q e + R delta^2` is condensed over the steering sequence and solved
//! with the shared dense QP solver.

use nalgebra::{DMatrix, DVector, Matrix2, Vector2};

use crate::error::{Error, Result};
use crate::plant::{SteerCommand, VehicleParams};
use crate::qp::{solve_qp, LinearBound, QpProblem, QpStatus, SolveOptions};

#[derive(Debug, Clone)]
pub struct KinMpcConfig {
    /// Prediction horizon in steps.
    pub horizon: usize,
    /// Weight on squared lateral deviation.
    pub lateral_weight: f64,
    /// Weight on squared heading deviation.
    pub heading_weight: f64,
    /// Weight on squared steering angle.
    pub steer_weight: f64,
    /// Steering bounds, radians.
    pub steer_min: f64,
    pub steer_max: f64,
    pub dt: f64,
    pub solver_tol: f64,
    pub solver_max_iter: usize,
}

impl Default for KinMpcConfig {
    /// Horizon and weights mirroring the data-driven controller defaults.
    fn default() -> Self {
        Self {
            horizon: 30,
            lateral_weight: 1.0,
            heading_weight: 1.0,
            steer_weight: 1e-2,
            steer_min: -5.0_f64.to_radians(),
            steer_max: 5.0_f64.to_radians(),
            dt: 0.05,
            solver_tol: 1e-8,
            solver_max_iter: 200,
        }
    }
}

impl KinMpcConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon < 1 {
            return Err(Error::InvalidArgument("kin-mpc horizon must be >= 1".into()));
        }
        if !(self.lateral_weight > 0.0) || !(self.heading_weight > 0.0) || !(self.steer_weight > 0.0)
        {
            return Err(Error::InvalidArgument(
                "kin-mpc weights must be strictly positive".into(),
            ));
        }
        if !(self.steer_min < self.steer_max) {
            return Err(Error::InvalidArgument(format!(
                "kin-mpc steering bounds require min < max, got [{}, {}]",
                self.steer_min, self.steer_max
            )));
        }
        if !(self.dt > 0.0) {
            return Err(Error::InvalidArgument("kin-mpc dt must be positive".into()));
        }
        Ok(())
    }
}

/// Outcome of one kinematics-MPC step.
#[derive(Debug, Clone)]
pub struct KinMpcSolution {
    pub command: SteerCommand,
    pub steer_sequence: Vec<f64>,
    pub status: QpStatus,
    pub iterations: usize,
}

/// Discrete error dynamics matrices of the linearized model.
pub fn error_dynamics(params: &VehicleParams, dt: f64) -> (Matrix2<f64>, Vector2<f64>) {
    let v = params.speed;
    let a = Matrix2::new(1.0, v * dt, 0.0, 1.0);
    let b = Vector2::new(0.0, v * dt / params.wheelbase);
    (a, b)
}

/// Solves one receding-horizon step from the current deviation state and the
/// reference curvature preview (one value per horizon step).
pub fn kin_mpc_step(
    cfg: &KinMpcConfig,
    params: &VehicleParams,
    lateral_deviation: f64,
    heading_deviation: f64,
    curvature: &[f64],
) -> Result<KinMpcSolution> {
    cfg.validate()?;
    params.validate()?;
    let h = cfg.horizon;
    if curvature.len() != h {
        return Err(Error::InvalidArgument(format!(
            "curvature preview has {} entries, expected the horizon {h}",
            curvature.len()
        )));
    }
    let (a, b) = error_dynamics(params, cfg.dt);
    let z0 = Vector2::new(lateral_deviation, heading_deviation);

    // stack predicted states z_1..z_H: z = phi z0 + gamma delta + drift
    let mut phi = DMatrix::zeros(2 * h, 2);
    let mut gamma = DMatrix::zeros(2 * h, h);
    let mut drift = DVector::zeros(2 * h);
    let mut a_pow = a; // A^{k+1} for row block k
    let mut prev_drift = Vector2::zeros();
    for k in 0..h {
        phi.view_mut((2 * k, 0), (2, 2)).copy_from(&a_pow);
        a_pow = a * a_pow;
        // drift_k = A drift_{k-1} + w_k with w_k = [0, -V dt kappa_k]
        let w = Vector2::new(0.0, -params.speed * cfg.dt * curvature[k]);
        let d = a * prev_drift + w;
        drift.view_mut((2 * k, 0), (2, 1)).copy_from(&d);
        prev_drift = d;
        // gamma block (k, j) = A^{k-j} B
        let mut col = b;
        for row in k..h {
            gamma.view_mut((2 * row, k), (2, 1)).copy_from(&col);
            col = a * col;
        }
    }

    // weighted gamma: (I (x) Q) gamma with Q = diag(lateral, heading)
    let mut weighted = gamma.clone();
    for k in 0..h {
        let mut block = weighted.rows_mut(2 * k, 2);
        block.row_mut(0).scale_mut(cfg.lateral_weight);
        block.row_mut(1).scale_mut(cfg.heading_weight);
    }
    let mut hessian = gamma.transpose() * &weighted;
    for i in 0..h {
        hessian[(i, i)] += cfg.steer_weight;
    }
    hessian *= 2.0;
    let free = &phi * z0 + drift;
    let mut weighted_free = free.clone();
    for k in 0..h {
        weighted_free[2 * k] *= cfg.lateral_weight;
        weighted_free[2 * k + 1] *= cfg.heading_weight;
    }
    let linear = 2.0 * gamma.transpose() * weighted_free;

    let bounds = (0..h)
        .map(|k| LinearBound::coordinate(h, k, cfg.steer_min, cfg.steer_max))
        .collect();
    let problem = QpProblem {
        hessian,
        linear,
        eq_mat: DMatrix::zeros(0, h),
        eq_rhs: DVector::zeros(0),
        bounds,
    };
    let opts = SolveOptions {
        tol: cfg.solver_tol,
        max_iter: cfg.solver_max_iter,
    };
    let sol = solve_qp(&problem, &opts)?;
    let steer_sequence: Vec<f64> = sol.x.iter().copied().collect();
    Ok(KinMpcSolution {
        command: SteerCommand::parallel(steer_sequence[0]),
        steer_sequence,
        status: sol.status,
        iterations: sol.iterations,
    })
}

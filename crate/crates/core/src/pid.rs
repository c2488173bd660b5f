//! PID steering baseline on lateral and heading error.

use crate::error::{Error, Result};
use crate::plant::SteerCommand;

/// Gains and limits. Errors are passed in the "reference minus vehicle"
/// sense, so positive error means steer positive (left).
#[derive(Debug, Clone)]
pub struct PidConfig {
    /// rad per meter of lateral error.
    pub kp: f64,
    /// rad per meter-second of accumulated error.
    pub ki: f64,
    /// rad per meter/second of error rate.
    pub kd: f64,
    /// rad per rad of heading error.
    pub k_heading: f64,
    /// Saturation of the integral term, radians.
    pub integral_limit: f64,
    /// Output clamp, radians.
    pub output_limit: f64,
}

impl Default for PidConfig {
    /// Gains tuned by coarse grid search on the default dual-lane-switch
    /// scenario at 10 m/s (see the repository README for the search ranges).
    fn default() -> Self {
        Self {
            kp: 0.12,
            ki: 0.01,
            kd: 0.05,
            k_heading: 1.2,
            integral_limit: 2.0_f64.to_radians(),
            output_limit: 5.0_f64.to_radians(),
        }
    }
}

impl PidConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("kp", self.kp),
            ("ki", self.ki),
            ("kd", self.kd),
            ("k_heading", self.k_heading),
            ("integral_limit", self.integral_limit),
            ("output_limit", self.output_limit),
        ] {
            if !v.is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "pid gain {name} must be finite, got {v}"
                )));
            }
        }
        if !(self.output_limit > 0.0) {
            return Err(Error::InvalidArgument(
                "pid output limit must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Stateful PID: stores the integral and previous error only.
#[derive(Debug, Clone)]
pub struct PidController {
    cfg: PidConfig,
    integral: f64,
    prev_error: Option<f64>,
}

impl PidController {
    pub fn new(cfg: PidConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            cfg,
            integral: 0.0,
            prev_error: None,
        })
    }

    pub fn config(&self) -> &PidConfig {
        &self.cfg
    }

    pub fn reset(&mut self) {
        self.integral = 0.0;
        self.prev_error = None;
    }

    /// One control step. Both wheels receive the same angle.
    pub fn step(&mut self, lateral_error: f64, heading_error: f64, dt: f64) -> SteerCommand {
        debug_assert!(dt > 0.0);
        self.integral += lateral_error * dt;
        // anti-windup: keep the integral term within its saturation
        let mut integral_term = self.cfg.ki * self.integral;
        if integral_term.abs() > self.cfg.integral_limit {
            integral_term = integral_term.clamp(-self.cfg.integral_limit, self.cfg.integral_limit);
            if self.cfg.ki != 0.0 {
                self.integral = integral_term / self.cfg.ki;
            }
        }
        let derivative = match self.prev_error {
            Some(prev) => (lateral_error - prev) / dt,
            None => 0.0,
        };
        self.prev_error = Some(lateral_error);

        let raw = self.cfg.kp * lateral_error
            + integral_term
            + self.cfg.kd * derivative
            + self.cfg.k_heading * heading_error;
        let delta = raw.clamp(-self.cfg.output_limit, self.cfg.output_limit);
        SteerCommand::parallel(delta)
    }
}

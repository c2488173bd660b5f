//! Flat key-value configuration files.
//!
//! Format: `key = value` lines, `#` comments, blank lines ignored. Angles in
//! files are degrees for readability and are converted to radians at load.
//! Unknown keys are errors so typos surface immediately.

use std::fs;
use std::path::Path;

use nalgebra::{DMatrix, DVector};

use crate::ddmpc::DdmpcConfig;
use crate::error::{Error, Result};
use crate::kin_mpc::KinMpcConfig;
use crate::pid::PidConfig;
use crate::plant::{ExcitationKind, VehicleParams};

/// Full experiment configuration with steering defaults.
#[derive(Debug, Clone)]
pub struct AppConfig {
    // controller (keys: L, v, q_diag, r_diag, lambda, u_min_deg, u_max_deg,
    // solver_tol, solver_max_iter)
    pub horizon: usize,
    pub order_bound: usize,
    pub q_diag: Vec<f64>,
    pub r_diag: Vec<f64>,
    pub lambda: f64,
    pub u_min_deg: f64,
    pub u_max_deg: f64,
    pub solver_tol: f64,
    pub solver_max_iter: usize,

    // plant
    pub wheelbase_m: f64,
    pub sprung_mass_kg: f64,
    pub yaw_inertia_kgm2: f64,
    pub track_width_m: f64,
    pub speed_mps: f64,
    pub dt_s: f64,

    // open-loop data collection
    pub excitation_kind: ExcitationKind,
    pub excitation_len: usize,
    pub excitation_amplitude_deg: f64,
    pub outlier_z: f64,

    // pid baseline
    pub pid_kp: f64,
    pub pid_ki: f64,
    pub pid_kd: f64,
    pub pid_k_heading: f64,
    pub pid_integral_limit_deg: f64,
    pub pid_output_limit_deg: f64,

    // kinematics mpc baseline
    pub kin_horizon: usize,
    pub kin_lateral_weight: f64,
    pub kin_heading_weight: f64,
    pub kin_steer_weight: f64,
    pub kin_u_min_deg: f64,
    pub kin_u_max_deg: f64,

    // scenario
    pub lane_offset_m: f64,
    pub s1_m: f64,
    pub s2_m: f64,
    pub s3_m: f64,
    pub s4_m: f64,
    pub total_length_m: f64,
    pub warmup_steps: usize,
}

impl Default for AppConfig {
    fn default() -> Self {
        let pid = PidConfig::default();
        Self {
            horizon: 24,
            order_bound: 6,
            q_diag: vec![1.0, 1.0, 1.0],
            r_diag: vec![1e-2, 1e-2],
            lambda: 1e-3,
            u_min_deg: -5.0,
            u_max_deg: 5.0,
            solver_tol: 1e-8,
            solver_max_iter: 200,

            wheelbase_m: 2.91,
            sprung_mass_kg: 1370.0,
            yaw_inertia_kgm2: 2315.3,
            track_width_m: 2.162,
            speed_mps: 10.0,
            dt_s: 0.05,

            excitation_kind: ExcitationKind::Multisine,
            excitation_len: 646,
            excitation_amplitude_deg: 2.0,
            outlier_z: 3.0,

            pid_kp: pid.kp,
            pid_ki: pid.ki,
            pid_kd: pid.kd,
            pid_k_heading: pid.k_heading,
            pid_integral_limit_deg: pid.integral_limit.to_degrees(),
            pid_output_limit_deg: pid.output_limit.to_degrees(),

            kin_horizon: 30,
            kin_lateral_weight: 1.0,
            kin_heading_weight: 1.0,
            kin_steer_weight: 1e-2,
            kin_u_min_deg: -5.0,
            kin_u_max_deg: 5.0,

            lane_offset_m: 3.5,
            s1_m: 50.0,
            s2_m: 90.0,
            s3_m: 140.0,
            s4_m: 180.0,
            total_length_m: 250.0,
            warmup_steps: 6,
        }
    }
}

fn parse_f64(key: &str, value: &str, line: usize) -> Result<f64> {
    value.parse().map_err(|_| Error::Parse {
        line,
        message: format!("key {key}: not a number: {value:?}"),
    })
}

fn parse_usize(key: &str, value: &str, line: usize) -> Result<usize> {
    value.parse().map_err(|_| Error::Parse {
        line,
        message: format!("key {key}: not a nonnegative integer: {value:?}"),
    })
}

fn parse_list(key: &str, value: &str, line: usize) -> Result<Vec<f64>> {
    value
        .split(',')
        .map(|v| parse_f64(key, v.trim(), line))
        .collect()
}

impl AppConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        Self::parse_str(&text)
    }

    pub fn parse_str(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected `key = value`, found {line:?}"),
                });
            };
            cfg.apply(key.trim(), value.trim(), line_no)?;
        }
        cfg.check()?;
        Ok(cfg)
    }

    fn apply(&mut self, key: &str, value: &str, line: usize) -> Result<()> {
        match key {
            "L" => self.horizon = parse_usize(key, value, line)?,
            "v" => self.order_bound = parse_usize(key, value, line)?,
            "q_diag" => self.q_diag = parse_list(key, value, line)?,
            "r_diag" => self.r_diag = parse_list(key, value, line)?,
            "lambda" => self.lambda = parse_f64(key, value, line)?,
            "u_min_deg" => self.u_min_deg = parse_f64(key, value, line)?,
            "u_max_deg" => self.u_max_deg = parse_f64(key, value, line)?,
            "solver_tol" => self.solver_tol = parse_f64(key, value, line)?,
            "solver_max_iter" => self.solver_max_iter = parse_usize(key, value, line)?,

            "wheelbase_m" => self.wheelbase_m = parse_f64(key, value, line)?,
            "sprung_mass_kg" => self.sprung_mass_kg = parse_f64(key, value, line)?,
            "yaw_inertia_kgm2" => self.yaw_inertia_kgm2 = parse_f64(key, value, line)?,
            "track_width_m" => self.track_width_m = parse_f64(key, value, line)?,
            "speed_mps" => self.speed_mps = parse_f64(key, value, line)?,
            "dt_s" => self.dt_s = parse_f64(key, value, line)?,

            "excitation_kind" => self.excitation_kind = value.parse()?,
            "excitation_len" => self.excitation_len = parse_usize(key, value, line)?,
            "excitation_amplitude_deg" => {
                self.excitation_amplitude_deg = parse_f64(key, value, line)?
            }
            "outlier_z" => self.outlier_z = parse_f64(key, value, line)?,

            "pid_kp" => self.pid_kp = parse_f64(key, value, line)?,
            "pid_ki" => self.pid_ki = parse_f64(key, value, line)?,
            "pid_kd" => self.pid_kd = parse_f64(key, value, line)?,
            "pid_k_heading" => self.pid_k_heading = parse_f64(key, value, line)?,
            "pid_integral_limit_deg" => {
                self.pid_integral_limit_deg = parse_f64(key, value, line)?
            }
            "pid_output_limit_deg" => self.pid_output_limit_deg = parse_f64(key, value, line)?,

            "kin_horizon" => self.kin_horizon = parse_usize(key, value, line)?,
            "kin_lateral_weight" => self.kin_lateral_weight = parse_f64(key, value, line)?,
            "kin_heading_weight" => self.kin_heading_weight = parse_f64(key, value, line)?,
            "kin_steer_weight" => self.kin_steer_weight = parse_f64(key, value, line)?,
            "kin_u_min_deg" => self.kin_u_min_deg = parse_f64(key, value, line)?,
            "kin_u_max_deg" => self.kin_u_max_deg = parse_f64(key, value, line)?,

            "lane_offset_m" => self.lane_offset_m = parse_f64(key, value, line)?,
            "s1_m" => self.s1_m = parse_f64(key, value, line)?,
            "s2_m" => self.s2_m = parse_f64(key, value, line)?,
            "s3_m" => self.s3_m = parse_f64(key, value, line)?,
            "s4_m" => self.s4_m = parse_f64(key, value, line)?,
            "total_length_m" => self.total_length_m = parse_f64(key, value, line)?,
            "warmup_steps" => self.warmup_steps = parse_usize(key, value, line)?,

            other => {
                return Err(Error::Config(format!("unknown configuration key {other:?}")))
            }
        }
        Ok(())
    }

    fn check(&self) -> Result<()> {
        if self.q_diag.len() != 3 {
            return Err(Error::Config(format!(
                "q_diag must list 3 output weights, got {}",
                self.q_diag.len()
            )));
        }
        if self.r_diag.len() != 2 {
            return Err(Error::Config(format!(
                "r_diag must list 2 input weights, got {}",
                self.r_diag.len()
            )));
        }
        Ok(())
    }

    pub fn vehicle_params(&self) -> VehicleParams {
        VehicleParams {
            wheelbase: self.wheelbase_m,
            sprung_mass: self.sprung_mass_kg,
            yaw_inertia: self.yaw_inertia_kgm2,
            track_width: self.track_width_m,
            speed: self.speed_mps,
        }
    }

    pub fn ddmpc_config(&self) -> DdmpcConfig {
        DdmpcConfig {
            horizon: self.horizon,
            order_bound: self.order_bound,
            output_weight: DMatrix::from_diagonal(&DVector::from_vec(self.q_diag.clone())),
            input_weight: DMatrix::from_diagonal(&DVector::from_vec(self.r_diag.clone())),
            lambda: self.lambda,
            u_min: DVector::from_element(2, self.u_min_deg.to_radians()),
            u_max: DVector::from_element(2, self.u_max_deg.to_radians()),
            alpha_bound: None,
            y_min: None,
            y_max: None,
            solver_tol: self.solver_tol,
            solver_max_iter: self.solver_max_iter,
            sample_time: self.dt_s,
        }
    }

    pub fn pid_config(&self) -> PidConfig {
        PidConfig {
            kp: self.pid_kp,
            ki: self.pid_ki,
            kd: self.pid_kd,
            k_heading: self.pid_k_heading,
            integral_limit: self.pid_integral_limit_deg.to_radians(),
            output_limit: self.pid_output_limit_deg.to_radians(),
        }
    }

    pub fn kin_mpc_config(&self) -> KinMpcConfig {
        KinMpcConfig {
            horizon: self.kin_horizon,
            lateral_weight: self.kin_lateral_weight,
            heading_weight: self.kin_heading_weight,
            steer_weight: self.kin_steer_weight,
            steer_min: self.kin_u_min_deg.to_radians(),
            steer_max: self.kin_u_max_deg.to_radians(),
            dt: self.dt_s,
            solver_tol: self.solver_tol,
            solver_max_iter: self.solver_max_iter,
        }
    }

    pub fn reference_path(&self) -> Result<crate::reference::ReferencePath> {
        crate::reference::make_dual_lane_switch(
            self.lane_offset_m,
            self.s1_m,
            self.s2_m,
            self.s3_m,
            self.s4_m,
            self.total_length_m,
            self.dt_s,
            self.speed_mps,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_parse_empty() {
        let cfg = AppConfig::parse_str("").unwrap();
        assert_eq!(cfg.horizon, 24);
        assert_eq!(cfg.order_bound, 6);
        assert_eq!(cfg.excitation_len, 646);
    }

    #[test]
    fn keys_override_defaults() {
        let cfg = AppConfig::parse_str(
            "# comment\nL = 12\nv=3\nq_diag = 1, 2,3\nu_max_deg = 1.5\nu_min_deg = -1.5\n",
        )
        .unwrap();
        assert_eq!(cfg.horizon, 12);
        assert_eq!(cfg.order_bound, 3);
        assert_eq!(cfg.q_diag, vec![1.0, 2.0, 3.0]);
        let d = cfg.ddmpc_config();
        assert!((d.u_max[0] - 1.5_f64.to_radians()).abs() < 1e-15);
    }

    #[test]
    fn unknown_key_is_rejected() {
        let err = AppConfig::parse_str("horizon = 10\n").unwrap_err();
        assert!(err.to_string().contains("unknown configuration key"));
    }

    #[test]
    fn malformed_line_names_line_number() {
        let err = AppConfig::parse_str("L = 24\nnot a kv line\n").unwrap_err();
        match err {
            Error::Parse { line, .. } => assert_eq!(line, 2),
            other => panic!("unexpected {other}"),
        }
    }

    #[test]
    fn bad_value_is_rejected() {
        assert!(AppConfig::parse_str("lambda = abc\n").is_err());
        assert!(AppConfig::parse_str("q_diag = 1,2\n").is_err());
        assert!(AppConfig::parse_str("excitation_kind = square\n").is_err());
    }

    #[test]
    fn degrees_convert_to_radians() {
        let cfg = AppConfig::parse_str("pid_output_limit_deg = 10\n").unwrap();
        assert!((cfg.pid_config().output_limit - 10.0_f64.to_radians()).abs() < 1e-15);
    }
}

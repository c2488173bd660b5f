//! Closed-loop experiment harness: steps a controller and the plant in
//! lockstep along a reference path, logs every step, and compares controllers.

use std::fmt;
use std::time::Instant;

use nalgebra::DVector;

use crate::ddmpc::{DataDictionary, DdmpcConfig, DdmpcController};
use crate::error::{Error, Result};
use crate::kin_mpc::{kin_mpc_step, KinMpcConfig};
use crate::pid::{PidConfig, PidController};
use crate::plant::{step as plant_step, wrap_angle, SteerCommand, VehicleParams, VehicleState};
use crate::qp::QpStatus;
use crate::reference::ReferencePath;

/// Lateral error beyond which a run is aborted as diverged.
pub const DIVERGENCE_LIMIT: f64 = 10.0;

/// Everything a controller may use at one step. Deviations are vehicle minus
/// reference, left of the path positive.
pub struct StepContext<'a> {
    pub step: usize,
    pub state: &'a VehicleState,
    pub output: &'a DVector<f64>,
    pub path: &'a ReferencePath,
    pub station: f64,
    pub lateral_deviation: f64,
    pub heading_deviation: f64,
    pub dt: f64,
}

/// A controller's verdict for one step. `None` means it produced no usable
/// command and the harness holds the previous one.
pub struct ControlDecision {
    pub command: Option<SteerCommand>,
    pub status: QpStatus,
}

pub trait Controller {
    fn name(&self) -> &'static str;
    fn control(&mut self, ctx: &StepContext<'_>) -> ControlDecision;
    /// Called with the command actually applied and the output measured at
    /// this step (also during warmup pre-roll).
    fn observe(&mut self, _applied: &SteerCommand, _output: &DVector<f64>) {}
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ControllerKind {
    Ddmpc,
    Pid,
    KinMpc,
}

impl ControllerKind {
    pub fn name(&self) -> &'static str {
        match self {
            Self::Ddmpc => "ddmpc",
            Self::Pid => "pid",
            Self::KinMpc => "kin_mpc",
        }
    }

    pub fn all() -> [Self; 3] {
        [Self::Ddmpc, Self::Pid, Self::KinMpc]
    }
}

impl std::str::FromStr for ControllerKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "ddmpc" => Ok(Self::Ddmpc),
            "pid" => Ok(Self::Pid),
            "kin_mpc" | "kinmpc" => Ok(Self::KinMpc),
            other => Err(Error::InvalidArgument(format!(
                "unknown controller {other:?} (expected ddmpc, pid or kin-mpc)"
            ))),
        }
    }
}

impl fmt::Display for ControllerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

// ---------------------------------------------------------------------------
// Drivers adapting each controller to the harness interface
// ---------------------------------------------------------------------------

/// Receding-horizon driver around [`DdmpcController`]: builds the reference
/// window by arc-length lookahead and maintains the history buffer.
pub struct DdmpcDriver {
    inner: DdmpcController,
}

impl DdmpcDriver {
    pub fn new(dict: DataDictionary, cfg: DdmpcConfig) -> Result<Self> {
        Ok(Self {
            inner: DdmpcController::new(dict, cfg)?,
        })
    }

    pub fn controller(&self) -> &DdmpcController {
        &self.inner
    }
}

impl Controller for DdmpcDriver {
    fn name(&self) -> &'static str {
        ControllerKind::Ddmpc.name()
    }

    fn control(&mut self, ctx: &StepContext<'_>) -> ControlDecision {
        let cfg = self.inner.config();
        let horizon = cfg.horizon;
        let spacing = ctx.path.spacing();
        let m = cfg.input_dim();
        let y_ref: Vec<DVector<f64>> = (0..horizon)
            .map(|k| {
                let p = ctx.path.sample_at_station(ctx.station + k as f64 * spacing);
                DVector::from_vec(vec![p.x, p.y, p.phi])
            })
            .collect();
        let u_ref = vec![DVector::zeros(m); horizon];
        match self.inner.step(&y_ref, &u_ref) {
            Ok(sol) => {
                let command = match sol.status {
                    QpStatus::Infeasible => None,
                    _ => Some(SteerCommand::new(sol.u_first[0], sol.u_first[1])),
                };
                ControlDecision {
                    command,
                    status: sol.status,
                }
            }
            Err(_) => ControlDecision {
                command: None,
                status: QpStatus::Infeasible,
            },
        }
    }

    fn observe(&mut self, applied: &SteerCommand, output: &DVector<f64>) {
        let u = DVector::from_vec(vec![applied.delta_l, applied.delta_r]);
        // capacity eviction keeps the newest v entries
        let _ = self.inner.push_history(u, output.clone());
    }
}

pub struct PidDriver {
    inner: PidController,
}

impl PidDriver {
    pub fn new(cfg: PidConfig) -> Result<Self> {
        Ok(Self {
            inner: PidController::new(cfg)?,
        })
    }
}

impl Controller for PidDriver {
    fn name(&self) -> &'static str {
        ControllerKind::Pid.name()
    }

    fn control(&mut self, ctx: &StepContext<'_>) -> ControlDecision {
        // PID expects reference-minus-vehicle errors
        let cmd = self
            .inner
            .step(-ctx.lateral_deviation, -ctx.heading_deviation, ctx.dt);
        ControlDecision {
            command: Some(cmd),
            status: QpStatus::Converged,
        }
    }
}

pub struct KinMpcDriver {
    cfg: KinMpcConfig,
    params: VehicleParams,
}

impl KinMpcDriver {
    pub fn new(cfg: KinMpcConfig, params: VehicleParams) -> Result<Self> {
        cfg.validate()?;
        params.validate()?;
        Ok(Self { cfg, params })
    }
}

impl Controller for KinMpcDriver {
    fn name(&self) -> &'static str {
        ControllerKind::KinMpc.name()
    }

    fn control(&mut self, ctx: &StepContext<'_>) -> ControlDecision {
        let spacing = ctx.path.spacing();
        let kappa: Vec<f64> = (0..self.cfg.horizon)
            .map(|k| ctx.path.curvature_at_station(ctx.station + k as f64 * spacing))
            .collect();
        match kin_mpc_step(
            &self.cfg,
            &self.params,
            ctx.lateral_deviation,
            ctx.heading_deviation,
            &kappa,
        ) {
            Ok(sol) => ControlDecision {
                command: match sol.status {
                    QpStatus::Infeasible => None,
                    _ => Some(sol.command),
                },
                status: sol.status,
            },
            Err(_) => ControlDecision {
                command: None,
                status: QpStatus::Infeasible,
            },
        }
    }
}

// ---------------------------------------------------------------------------
// Run records and reports
// ---------------------------------------------------------------------------

#[derive(Debug, Clone)]
pub struct StepRecord {
    pub step: usize,
    pub t: f64,
    pub x_ref: f64,
    pub y_ref: f64,
    pub phi_ref: f64,
    pub x: f64,
    pub y: f64,
    pub phi: f64,
    pub delta_l: f64,
    pub delta_r: f64,
    pub lat_err: f64,
    pub solve_ms: f64,
    pub status: QpStatus,
}

/// Complete log of one closed-loop run.
#[derive(Debug, Clone)]
pub struct RunReport {
    pub controller: String,
    pub scenario: String,
    pub records: Vec<StepRecord>,
    /// Set when the run was aborted (plant divergence).
    pub aborted: Option<String>,
}

impl RunReport {
    pub fn completed(&self) -> bool {
        self.aborted.is_none()
    }

    pub fn rms_lateral_error(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let sum: f64 = self.records.iter().map(|r| r.lat_err * r.lat_err).sum();
        (sum / self.records.len() as f64).sqrt()
    }

    pub fn max_abs_lateral_error(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.lat_err.abs())
            .fold(0.0, f64::max)
    }

    pub fn min_lateral_error(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.lat_err)
            .fold(f64::INFINITY, f64::min)
    }

    pub fn max_lateral_error(&self) -> f64 {
        self.records
            .iter()
            .map(|r| r.lat_err)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn mean_solve_ms(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        self.records.iter().map(|r| r.solve_ms).sum::<f64>() / self.records.len() as f64
    }

    pub fn median_solve_ms(&self) -> f64 {
        if self.records.is_empty() {
            return 0.0;
        }
        let mut v: Vec<f64> = self.records.iter().map(|r| r.solve_ms).collect();
        v.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let n = v.len();
        if n % 2 == 1 {
            v[n / 2]
        } else {
            0.5 * (v[n / 2 - 1] + v[n / 2])
        }
    }

    pub fn max_solve_ms(&self) -> f64 {
        self.records.iter().map(|r| r.solve_ms).fold(0.0, f64::max)
    }

    /// CSV with the fixed header
    /// `step,t,x_ref,y_ref,phi_ref,x,y,phi,delta_l,delta_r,lat_err,solve_ms,status`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "step,t,x_ref,y_ref,phi_ref,x,y,phi,delta_l,delta_r,lat_err,solve_ms,status\n",
        );
        for r in &self.records {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{},{},{}\n",
                r.step,
                r.t,
                r.x_ref,
                r.y_ref,
                r.phi_ref,
                r.x,
                r.y,
                r.phi,
                r.delta_l,
                r.delta_r,
                r.lat_err,
                r.solve_ms,
                r.status
            ));
        }
        out
    }

    /// Parses the CSV format written by [`RunReport::to_csv`].
    pub fn from_csv(text: &str, controller: &str, scenario: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let header = lines
            .next()
            .ok_or(Error::Parse {
                line: 1,
                message: "empty run report".into(),
            })?
            .1;
        if header.trim()
            != "step,t,x_ref,y_ref,phi_ref,x,y,phi,delta_l,delta_r,lat_err,solve_ms,status"
        {
            return Err(Error::Parse {
                line: 1,
                message: format!("unexpected run report header: {header:?}"),
            });
        }
        let mut records = Vec::new();
        for (idx, line) in lines {
            let line_no = idx + 1;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 13 {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("expected 13 fields, found {}", f.len()),
                });
            }
            let num = |s: &str| -> Result<f64> {
                s.parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("not a number: {s:?}"),
                })
            };
            let status = match f[12] {
                "converged" => QpStatus::Converged,
                "max-iter" => QpStatus::MaxIter,
                "infeasible" => QpStatus::Infeasible,
                other => {
                    return Err(Error::Parse {
                        line: line_no,
                        message: format!("unknown status {other:?}"),
                    })
                }
            };
            records.push(StepRecord {
                step: f[0].parse().map_err(|_| Error::Parse {
                    line: line_no,
                    message: format!("not a step index: {:?}", f[0]),
                })?,
                t: num(f[1])?,
                x_ref: num(f[2])?,
                y_ref: num(f[3])?,
                phi_ref: num(f[4])?,
                x: num(f[5])?,
                y: num(f[6])?,
                phi: num(f[7])?,
                delta_l: num(f[8])?,
                delta_r: num(f[9])?,
                lat_err: num(f[10])?,
                solve_ms: num(f[11])?,
                status,
            });
        }
        Ok(Self {
            controller: controller.to_string(),
            scenario: scenario.to_string(),
            records,
            aborted: None,
        })
    }
}

// ---------------------------------------------------------------------------
// Closed loop
// ---------------------------------------------------------------------------

/// Runs `steps` control steps along `path`, preceded by `warmup` steps of
/// straight driving that end exactly at the path origin (these pre-roll steps
/// are fed to the controller's `observe` but not logged).
///
/// Solver failures hold the previous command and the run continues; lateral
/// divergence beyond [`DIVERGENCE_LIMIT`] aborts with a diagnostic.
pub fn run_closed_loop(
    controller: &mut dyn Controller,
    path: &ReferencePath,
    params: &VehicleParams,
    dt: f64,
    warmup: usize,
    steps: usize,
    scenario: &str,
) -> Result<RunReport> {
    params.validate()?;
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!("dt must be positive, got {dt}")));
    }
    let mut state = VehicleState::new(-(warmup as f64) * params.speed * dt, 0.0, 0.0);
    for _ in 0..warmup {
        let output = state.output();
        controller.observe(&SteerCommand::zero(), &output);
        state = plant_step(&state, &SteerCommand::zero(), params, dt);
    }

    let mut records = Vec::with_capacity(steps);
    let mut aborted = None;
    let mut prev_cmd = SteerCommand::zero();
    for k in 0..steps {
        let output = state.output();
        let proj = path.project(state.x, state.y);
        let heading_deviation = wrap_angle(state.phi - proj.heading);
        if proj.deviation.abs() > DIVERGENCE_LIMIT {
            aborted = Some(format!(
                "diverged at step {k}: lateral error {:.2} m exceeds {DIVERGENCE_LIMIT} m",
                proj.deviation
            ));
            break;
        }
        let ctx = StepContext {
            step: k,
            state: &state,
            output: &output,
            path,
            station: proj.station,
            lateral_deviation: proj.deviation,
            heading_deviation,
            dt,
        };
        let started = Instant::now();
        let decision = controller.control(&ctx);
        let solve_ms = started.elapsed().as_secs_f64() * 1e3;

        let cmd = decision.command.unwrap_or(prev_cmd);
        controller.observe(&cmd, &output);

        let ref_point = path.sample_at_station(proj.station);
        records.push(StepRecord {
            step: k,
            t: k as f64 * dt,
            x_ref: ref_point.x,
            y_ref: ref_point.y,
            phi_ref: ref_point.phi,
            x: state.x,
            y: state.y,
            phi: state.phi,
            delta_l: cmd.delta_l,
            delta_r: cmd.delta_r,
            lat_err: proj.deviation,
            solve_ms,
            status: decision.status,
        });
        state = plant_step(&state, &cmd, params, dt);
        prev_cmd = cmd;
    }

    Ok(RunReport {
        controller: controller.name().to_string(),
        scenario: scenario.to_string(),
        records,
        aborted,
    })
}

// ---------------------------------------------------------------------------
// Comparison
// ---------------------------------------------------------------------------

/// Configured pieces shared by the three controllers in a comparison.
pub struct ExperimentSetup {
    pub params: VehicleParams,
    pub ddmpc: DdmpcConfig,
    pub pid: PidConfig,
    pub kin: KinMpcConfig,
    /// Straight pre-roll steps (at least the history length for DDMPC).
    pub warmup: usize,
}

/// Builds the driver for one controller kind and runs it over the scenario.
pub fn run_controller(
    kind: ControllerKind,
    setup: &ExperimentSetup,
    dict: &DataDictionary,
    path: &ReferencePath,
    steps: usize,
    scenario: &str,
) -> Result<RunReport> {
    let dt = setup.ddmpc.sample_time;
    match kind {
        ControllerKind::Ddmpc => {
            let warmup = setup.warmup.max(setup.ddmpc.order_bound);
            let mut driver = DdmpcDriver::new(dict.clone(), setup.ddmpc.clone())?;
            run_closed_loop(&mut driver, path, &setup.params, dt, warmup, steps, scenario)
        }
        ControllerKind::Pid => {
            let mut driver = PidDriver::new(setup.pid.clone())?;
            run_closed_loop(
                &mut driver,
                path,
                &setup.params,
                dt,
                setup.warmup,
                steps,
                scenario,
            )
        }
        ControllerKind::KinMpc => {
            let mut driver = KinMpcDriver::new(setup.kin.clone(), setup.params.clone())?;
            run_closed_loop(
                &mut driver,
                path,
                &setup.params,
                dt,
                setup.warmup,
                steps,
                scenario,
            )
        }
    }
}

#[derive(Debug, Clone)]
pub struct SummaryRow {
    pub controller: String,
    pub steps: usize,
    pub completed: bool,
    pub rms_lat_err_m: f64,
    pub max_abs_lat_err_m: f64,
    pub min_lat_err_m: f64,
    pub max_lat_err_m: f64,
    pub mean_solve_ms: f64,
    pub median_solve_ms: f64,
    pub max_solve_ms: f64,
}

impl SummaryRow {
    pub fn from_report(report: &RunReport) -> Self {
        Self {
            controller: report.controller.clone(),
            steps: report.records.len(),
            completed: report.completed(),
            rms_lat_err_m: report.rms_lateral_error(),
            max_abs_lat_err_m: report.max_abs_lateral_error(),
            min_lat_err_m: report.min_lateral_error(),
            max_lat_err_m: report.max_lateral_error(),
            mean_solve_ms: report.mean_solve_ms(),
            median_solve_ms: report.median_solve_ms(),
            max_solve_ms: report.max_solve_ms(),
        }
    }
}

/// Side-by-side aggregate table over the compared controllers.
#[derive(Debug, Clone)]
pub struct ComparisonSummary {
    pub scenario: String,
    pub rows: Vec<SummaryRow>,
}

impl ComparisonSummary {
    pub fn row(&self, controller: &str) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.controller == controller)
    }

    /// Mean solve-time ratio of the data-driven controller to the
    /// kinematics MPC, when both are present.
    pub fn ddmpc_to_kin_mpc_time_ratio(&self) -> Option<f64> {
        let d = self.row(ControllerKind::Ddmpc.name())?;
        let k = self.row(ControllerKind::KinMpc.name())?;
        if k.mean_solve_ms > 0.0 {
            Some(d.mean_solve_ms / k.mean_solve_ms)
        } else {
            None
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "controller,steps,completed,rms_lat_err_m,max_abs_lat_err_m,min_lat_err_m,\
             max_lat_err_m,mean_solve_ms,median_solve_ms,max_solve_ms\n",
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                r.controller,
                r.steps,
                r.completed,
                r.rms_lat_err_m,
                r.max_abs_lat_err_m,
                r.min_lat_err_m,
                r.max_lat_err_m,
                r.mean_solve_ms,
                r.median_solve_ms,
                r.max_solve_ms
            ));
        }
        out
    }

    /// Fixed-width text table plus the solve-time ratio line.
    pub fn to_text(&self) -> String {
        let mut out = format!("scenario: {}\n", self.scenario);
        out.push_str(&format!(
            "{:<10} {:>6} {:>10} {:>12} {:>12} {:>12} {:>12} {:>12} {:>10}\n",
            "controller",
            "steps",
            "completed",
            "rms_err_m",
            "max|err|_m",
            "min_err_m",
            "mean_ms",
            "median_ms",
            "max_ms"
        ));
        for r in &self.rows {
            out.push_str(&format!(
                "{:<10} {:>6} {:>10} {:>12.4} {:>12.4} {:>12.4} {:>12.4} {:>12.4} {:>10.4}\n",
                r.controller,
                r.steps,
                if r.completed { "yes" } else { "ABORTED" },
                r.rms_lat_err_m,
                r.max_abs_lat_err_m,
                r.min_lat_err_m,
                r.mean_solve_ms,
                r.median_solve_ms,
                r.max_solve_ms
            ));
        }
        if let Some(ratio) = self.ddmpc_to_kin_mpc_time_ratio() {
            out.push_str(&format!(
                "ddmpc / kin_mpc mean solve-time ratio: {ratio:.3}\n"
            ));
        }
        out
    }
}

/// Runs all three controllers on identical scenarios and collates the
/// summary. Failed runs become failed rows, never a crash.
pub fn compare_controllers(
    setup: &ExperimentSetup,
    dict: &DataDictionary,
    path: &ReferencePath,
    steps: usize,
    scenario: &str,
) -> Result<(Vec<RunReport>, ComparisonSummary)> {
    let mut reports = Vec::new();
    for kind in ControllerKind::all() {
        let report = run_controller(kind, setup, dict, path, steps, scenario)?;
        reports.push(report);
    }
    let rows = reports.iter().map(SummaryRow::from_report).collect();
    Ok((
        reports,
        ComparisonSummary {
            scenario: scenario.to_string(),
            rows,
        },
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reference::default_dual_lane_switch;

    /// Test stub that always steers zero.
    struct ZeroController;

    impl Controller for ZeroController {
        fn name(&self) -> &'static str {
            "zero"
        }

        fn control(&mut self, _ctx: &StepContext<'_>) -> ControlDecision {
            ControlDecision {
                command: Some(SteerCommand::zero()),
                status: QpStatus::Converged,
            }
        }
    }

    /// Stub that fails on selected steps to exercise the fail-safe hold.
    struct FlakyController {
        fail_on: Vec<usize>,
        steer: f64,
    }

    impl Controller for FlakyController {
        fn name(&self) -> &'static str {
            "flaky"
        }

        fn control(&mut self, ctx: &StepContext<'_>) -> ControlDecision {
            if self.fail_on.contains(&ctx.step) {
                ControlDecision {
                    command: None,
                    status: QpStatus::Infeasible,
                }
            } else {
                ControlDecision {
                    command: Some(SteerCommand::parallel(self.steer)),
                    status: QpStatus::Converged,
                }
            }
        }
    }

    fn straight_path() -> ReferencePath {
        // a dual lane switch whose transitions start beyond the tested range
        crate::reference::make_dual_lane_switch(
            3.5, 400.0, 440.0, 490.0, 530.0, 600.0, 0.05, 10.0,
        )
        .unwrap()
    }

    #[test]
    fn zero_steer_on_straight_has_zero_error() {
        let params = VehicleParams::default();
        let path = straight_path();
        let mut c = ZeroController;
        let report = run_closed_loop(&mut c, &path, &params, 0.05, 3, 100, "straight").unwrap();
        assert!(report.completed());
        assert_eq!(report.records.len(), 100);
        for r in &report.records {
            assert_eq!(r.lat_err, 0.0);
            assert_eq!(r.y, 0.0);
        }
        assert_eq!(report.rms_lateral_error(), 0.0);
    }

    #[test]
    fn failed_step_holds_previous_command() {
        let params = VehicleParams::default();
        let path = straight_path();
        let mut c = FlakyController {
            fail_on: vec![5, 6],
            steer: 0.01,
        };
        let report = run_closed_loop(&mut c, &path, &params, 0.05, 0, 10, "straight").unwrap();
        assert_eq!(report.records[4].status, QpStatus::Converged);
        for k in [5usize, 6] {
            let r = &report.records[k];
            assert_eq!(r.status, QpStatus::Infeasible);
            assert_eq!(r.delta_l, report.records[4].delta_l);
            assert_eq!(r.delta_r, report.records[4].delta_r);
        }
    }

    #[test]
    fn divergence_aborts_with_diagnostic() {
        let params = VehicleParams::default();
        let path = straight_path();
        let mut c = FlakyController {
            fail_on: vec![],
            steer: 0.4,
        };
        let report = run_closed_loop(&mut c, &path, &params, 0.05, 0, 2000, "straight").unwrap();
        assert!(!report.completed());
        assert!(report.aborted.as_deref().unwrap().contains("diverged"));
        assert!(report.records.len() < 2000);
    }

    #[test]
    fn report_csv_round_trip_preserves_aggregates() {
        let params = VehicleParams::default();
        let path = straight_path();
        let mut c = FlakyController {
            fail_on: vec![3],
            steer: 0.005,
        };
        let report = run_closed_loop(&mut c, &path, &params, 0.05, 2, 50, "straight").unwrap();
        let csv = report.to_csv();
        let back = RunReport::from_csv(&csv, &report.controller, &report.scenario).unwrap();
        assert_eq!(back.records.len(), report.records.len());
        assert_eq!(back.rms_lateral_error(), report.rms_lateral_error());
        assert_eq!(back.mean_solve_ms(), report.mean_solve_ms());
        assert_eq!(back.records[3].status, QpStatus::Infeasible);
    }

    #[test]
    fn aggregates_match_recomputation() {
        let params = VehicleParams::default();
        let path = default_dual_lane_switch(0.05, 10.0).unwrap();
        let mut c = ZeroController;
        let report = run_closed_loop(&mut c, &path, &params, 0.05, 0, 300, "dls").unwrap();
        let n = report.records.len() as f64;
        let rms = (report.records.iter().map(|r| r.lat_err * r.lat_err).sum::<f64>() / n).sqrt();
        assert!((report.rms_lateral_error() - rms).abs() < 1e-12);
        let mean = report.records.iter().map(|r| r.solve_ms).sum::<f64>() / n;
        assert!((report.mean_solve_ms() - mean).abs() < 1e-12);
    }

    #[test]
    fn controller_kind_parsing() {
        assert_eq!("ddmpc".parse::<ControllerKind>().unwrap(), ControllerKind::Ddmpc);
        assert_eq!("kin-mpc".parse::<ControllerKind>().unwrap(), ControllerKind::KinMpc);
        assert_eq!("KIN_MPC".parse::<ControllerKind>().unwrap(), ControllerKind::KinMpc);
        assert!("lqr".parse::<ControllerKind>().is_err());
    }
}

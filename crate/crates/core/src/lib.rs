//! Data-driven model predictive control for vehicle steering.
//!
//! The crate predicts and controls a system directly from recorded
//! input-output data: one persistently exciting run is packed into block
//! Hankel matrices whose column span contains every trajectory of the
//! underlying linear system, and a regularized quadratic program selects the
//! combination that tracks a reference while pinning the prediction to the
//! most recent measurements. Around that core sit a kinematic bicycle plant
//! standing in for the real vehicle, PID and kinematics-MPC baselines, and a
//! scenario harness that runs dual-lane-switch tracking experiments and
//! reports errors, solve times and plots.

pub mod ddmpc;
pub mod error;
pub mod hankel;
pub mod kin_mpc;
pub mod pid;
pub mod plant;
pub mod preprocess;
pub mod qp;
pub mod reference;
pub mod signal;
pub mod trajectory_io;

pub use error::{Error, Result};

/// Placeholder while the CLI is under construction.
#[doc(hidden)]
pub fn cli_stub() -> i32 {
    0
}

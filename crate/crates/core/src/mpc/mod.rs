//! Kinematic MPC: parameters, prediction model, QP substrate and the
//! receding-horizon solve.

pub mod assemble;
pub mod model;
pub mod params;
pub mod qp;
pub mod solver;

pub use assemble::MpcSettings;
pub use params::{HorizonConfig, MpcParams, ParamError, ParamSchema, ParamSpec};
pub use qp::{solve_box_qp, BoxQp, QpResult, QpStatus};
pub use solver::{solve_mpc, MpcController, MpcError, MpcSolution, SolveStatus, WarmStart};

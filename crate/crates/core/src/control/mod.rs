//! Steady-state control: the UC program, its AGC variant without line
//! limits, the relaxation ladder, and the solvers behind them.

pub mod kkt;
pub mod phase_one;
mod problem;
pub mod qp;

pub use kkt::{control_residuals, qp_residuals, KktResiduals};
pub use problem::{
    mitigate, mitigate_problem, phase_one, relax, solve, solve_agc, solve_uc, ControlDuals,
    ControlError, ControlProblem, ControlSolution, ControlStatus, MitigationConfig,
    RelaxationLevel, SolveOptions,
};

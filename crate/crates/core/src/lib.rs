//! Minimum-fuel impulsive control of linear time-varying systems with
//! per-window caps on accumulated impulse magnitude.
//!
//! The dual of the magnitude-constrained moment problem is a semi-infinite
//! program over `n_x + N` variables. [`dual_sip::solve_dual`] solves it by
//! iterative grid discretization, and [`reconstruction`] turns the dual
//! optimum back into an impulsive control plan. [`oracle`] provides a dense
//! direct-transcription solver used to cross-check both.

pub mod conic;
pub mod dual_sip;
pub mod error;
pub mod grid;
pub mod norm;
pub mod oracle;
pub mod problem;
pub mod reconstruction;
pub mod roe;
pub mod system;

pub use conic::{solve_conic, ConicProgram, ConicSolution, SolveStatus, Tolerances};
pub use dual_sip::{solve_dual, DualSolution, DualStatus, SampleSet, SipOptions};
pub use error::{Error, Result};
pub use norm::{dual_norm_value, norm_value, NormKind};
pub use problem::{drift, influence_matrix, ControlWindow, DriftVector, TransferProblem};
pub use reconstruction::{propagate, reconstruct, strong_duality_gap, Impulse, ImpulsePlan, Trajectory};
pub use roe::{rn_separation, roe_stm, roe_system, roe_to_rtn, RoeModel, RtnState};
pub use system::{DoubleIntegrator, InputProfile, LtvSystem, OdeSystem};

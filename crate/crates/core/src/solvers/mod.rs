//! Reconstruction algorithms.

mod lsqr;
mod primal_dual;

pub use lsqr::{lsqr, lsqr_operator, lsqr_with, tikhonov, tikhonov_with, LsqrOutput};
pub use primal_dual::{
    chambolle_pock_a2tv, chambolle_pock_a2tv_observed, chambolle_pock_tvl1, chambolle_pock_tvl1_observed,
    objective_a2tv, objective_tvl1, prox_fstar, prox_fstar_in_place, EnergyTrace, PDState, SolverConfig,
    SolverOutput, StepMode, TraceRow,
};

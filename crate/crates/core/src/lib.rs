//! Primal-dual decomposition with constrained stochastic successive convex
//! approximation for two-stage stochastic optimization. The long-term
//! variables (x, λ) follow quadratic surrogates built from mini-batch
//! samples; the short-term variable y(ξ) comes from a pluggable iterative
//! solver unrolled for J iterations, differentiated in reverse through a
//! recorded tape.

pub mod apps;
pub mod error;
pub mod kkt;
pub mod longterm;
pub mod problem;
pub mod qcqp;
pub mod schedule;
pub mod shortterm;
pub mod surrogate;
pub mod unroll;

pub use error::Error;
pub use kkt::{kkt_report, KktReport};
pub use longterm::{
    outer_step, run, saa_evaluate, solve_feasibility_update, solve_objective_update,
    AlgorithmState, ConvexSubproblem, LongTermUpdate, RunOutcome, SolverConfig, TraceRecord,
    UpdateMode,
};
pub use problem::{
    evaluate_sample, short_term_objective, BoxDomain, GEval, HEval, LongTermIterate,
    ProblemDefinition, SecondOrder, State,
};
pub use qcqp::{IpmOptions, IpmSolution, ObjectiveOutcome, Quadratic, SmoothConvex};
pub use schedule::StepSchedule;
pub use shortterm::{
    run_short_term, short_term_kkt_errors, CmacClosedForm, GpSolver, GpStepRule, MmSolver,
    ShortTermResult, ShortTermSolver, WmmseSolver,
};
pub use surrogate::{build_surrogate, update_trackers, SurrogateModel, SurrogateTracker};
pub use unroll::{fd_oracle, grad_through, max_relative_error, UnrollTape};

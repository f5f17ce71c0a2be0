//! Test problems, closed-loop runs and the SAA convergence study.

pub mod closed_loop;
pub mod convergence;
pub mod functions;

pub use closed_loop::{
    initial_design, run_closed_loop, run_constrained, write_records_csv, Algorithm, FitOptions, OptimizerOptions, RunConfig,
    SuggestionMode, TrialRecord,
};
pub use convergence::{
    run_convergence_study, write_convergence_csv, ConvergenceConfig, ConvergenceResult, ConvergenceRow, Fixture,
    FixtureConfig, SlopeRow, StudyOptimizer,
};
pub use functions::{eval_test_function, FunctionName, Sense, TestFunction};

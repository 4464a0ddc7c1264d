//! Reference strategies: equal weight and long-only mean-variance, plus the
//! walk-forward backtester used to compare them with trained policies.

pub mod backtest;
pub mod mvo;
pub mod simplex;

pub use backtest::{backtest_strategy, BacktestConfig, BacktestResult, Strategy};
pub use mvo::{
    estimate_moments, lambda_for_appetite, mvo_allocate, mvo_solve, MvoInputs, MvoSolution, DEFAULT_ESTIMATION_WINDOW,
    DIAGONAL_LOADING, LAMBDA_MAX, LAMBDA_MIN, MVO_TOLERANCE,
};
pub use simplex::project_simplex;

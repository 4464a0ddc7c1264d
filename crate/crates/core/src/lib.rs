//! Core engine for a personalized portfolio advisor.
//!
//! The crate is split along the pipeline an advisory session runs through:
//!
//! * [`market`] generates or ingests price series and exposes the trading
//!   environment (reset/step) together with the state feature layout.
//! * [`risk`] maps dialogue text to a bounded five-dimensional risk vector,
//!   tracks a Beta posterior over risk appetite and applies feedback shifts.
//! * [`reward`] holds the composite step reward and the evaluation metrics
//!   (annualized return, Sharpe, drawdown, information and Calmar ratios,
//!   user alignment score).
//! * [`policy`] is a hand-differentiated actor-critic network trained with
//!   the clipped-ratio PPO objective.
//! * [`baselines`] provides equal-weight and long-only mean-variance
//!   strategies plus the walk-forward backtester.
//! * [`experiment`] wires the pieces into run configurations, training
//!   loops and strategy comparisons.

pub mod baselines;
pub mod config;
pub mod error;
pub mod experiment;
pub mod market;
pub mod pipeline;
pub mod policy;
pub mod reward;
pub mod risk;
pub mod stats;

pub use error::{Error, Result};
pub use market::{MarketConfig, MarketState, PriceSeries, StepOutcome, Universe};
pub use risk::{RiskDimension, RiskVector};

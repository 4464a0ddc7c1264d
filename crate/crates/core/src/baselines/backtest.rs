use rand::SeedableRng;
use serde::{Deserialize, Serialize};

use super::mvo::{estimate_moments, mvo_allocate, MvoInputs, DEFAULT_ESTIMATION_WINDOW};
use crate::error::{Error, Result};
use crate::market::{check_simplex, compute_state, Universe};
use crate::policy::{sample_action, ActionMode, PolicyParams};
use crate::reward::{alignment_sim, compute_metrics, equity_curve, exposure, MetricsReport, DEFAULT_PERIODS_PER_YEAR};
use crate::risk::RiskVector;

#[derive(Clone, Debug, PartialEq)]
pub enum Strategy {
    EqualWeight,
    Mvo { lambda_risk: f64 },
    /// Deterministic (mean-logit) actions of a trained policy.
    Policy(Box<PolicyParams>),
}

impl Strategy {
    pub fn name(&self) -> &'static str {
        match self {
            Strategy::EqualWeight => "equal_weight",
            Strategy::Mvo { .. } => "mvo",
            Strategy::Policy(_) => "policy",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BacktestConfig {
    /// Feature window for states (and the rolling vols behind alignment).
    pub window: usize,
    pub estimation_window: usize,
    /// First decision index; `None` starts as early as every input allows.
    pub start: Option<usize>,
    /// One past the last realized close; `None` runs to the end.
    pub end: Option<usize>,
    pub periods_per_year: f64,
}

impl Default for BacktestConfig {
    fn default() -> Self {
        Self {
            window: 20,
            estimation_window: DEFAULT_ESTIMATION_WINDOW,
            start: None,
            end: None,
            periods_per_year: DEFAULT_PERIODS_PER_YEAR,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BacktestResult {
    pub strategy: String,
    pub report: MetricsReport,
    pub equity: Vec<f64>,
    pub returns: Vec<f64>,
    pub benchmark_returns: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
    pub exposures: Vec<f64>,
    pub sims: Vec<f64>,
}

/// Walk-forward backtest: at each index `t` the strategy sees data up to
/// close `t - 1`, allocates, and earns the return from close `t - 1` to `t`.
/// The benchmark for the information ratio is the equal-weight portfolio.
pub fn backtest_strategy(
    strategy: &Strategy,
    universe: &Universe,
    risk: RiskVector,
    cfg: &BacktestConfig,
) -> Result<BacktestResult> {
    let n = universe.n_assets();
    let mut earliest = cfg.window + 1;
    if let Strategy::Mvo { .. } = strategy {
        if cfg.estimation_window < n + 2 {
            return Err(Error::Config(format!(
                "estimation window {} must be at least N + 2 = {}",
                cfg.estimation_window,
                n + 2
            )));
        }
        earliest = earliest.max(cfg.estimation_window + 1);
    }
    let start = cfg.start.unwrap_or(earliest).max(earliest);
    let end = cfg.end.unwrap_or(universe.len()).min(universe.len());
    if start >= end {
        return Err(Error::SeriesTooShort {
            required: start + 1,
            actual: universe.len(),
        });
    }
    if let Strategy::Policy(p) = strategy {
        if p.n_assets != n {
            return Err(Error::Dimension {
                context: "policy assets",
                expected: n,
                actual: p.n_assets,
            });
        }
    }

    let equal = vec![1.0 / n as f64; n];
    let mut out = BacktestResult {
        strategy: strategy.name().to_string(),
        report: MetricsReport {
            annualized_return: 0.0,
            sharpe: 0.0,
            max_drawdown: 0.0,
            info_ratio: 0.0,
            calmar: 0.0,
            calmar_capped: false,
            uas: 0.0,
            periods_per_year: cfg.periods_per_year,
        },
        equity: Vec::new(),
        returns: Vec::new(),
        benchmark_returns: Vec::new(),
        weights: Vec::new(),
        exposures: Vec::new(),
        sims: Vec::new(),
    };
    // Deterministic mode draws nothing; the generator only satisfies the signature.
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
    for t in start..end {
        let state = compute_state(universe, t, cfg.window, risk)?;
        let w = match strategy {
            Strategy::EqualWeight => equal.clone(),
            Strategy::Mvo { lambda_risk } => {
                let (mu, sigma) = estimate_moments(universe, t, cfg.estimation_window)?;
                mvo_allocate(&MvoInputs { mu, sigma, lambda_risk: *lambda_risk })?
            }
            Strategy::Policy(p) => {
                let out = p.forward(&p.state_features(&state))?;
                sample_action(&out, &mut rng, ActionMode::Deterministic).weights
            }
        };
        check_simplex(&w, n)?;
        let r = universe.returns_at(t);
        out.returns.push(w.iter().zip(&r).map(|(a, b)| a * b).sum());
        out.benchmark_returns.push(r.iter().sum::<f64>() / n as f64);
        out.exposures.push(exposure(&w, &state.rolling_vol));
        out.sims.push(alignment_sim(&risk, &w, &state.rolling_vol));
        out.weights.push(w);
    }
    out.report = compute_metrics(&out.returns, &out.benchmark_returns, &out.sims, cfg.periods_per_year)?;
    out.equity = equity_curve(&out.returns);
    Ok(out)
}

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{compute_state, MarketState, Universe};
use crate::error::{Error, Result};
use crate::risk::RiskVector;

pub const SIMPLEX_TOLERANCE: f64 = 1e-9;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvParams {
    #[serde(default = "EnvParams::default_window")]
    pub window: usize,
    #[serde(default = "EnvParams::default_episode_len")]
    pub episode_len: usize,
}

impl Default for EnvParams {
    fn default() -> Self {
        Self {
            window: Self::default_window(),
            episode_len: Self::default_episode_len(),
        }
    }
}

impl EnvParams {
    fn default_window() -> usize {
        20
    }

    fn default_episode_len() -> usize {
        252
    }

    /// Fewest closes a universe needs to host one episode.
    pub fn min_series_len(&self) -> usize {
        self.window + 1 + self.episode_len
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub realized_return: f64,
    pub per_asset_returns: Vec<f64>,
    pub done: bool,
}

/// Checks `w >= 0` and `|sum(w) - 1| <= 1e-9`.
pub fn check_simplex(weights: &[f64], n_assets: usize) -> Result<()> {
    if weights.len() != n_assets {
        return Err(Error::Dimension {
            context: "allocation weights",
            expected: n_assets,
            actual: weights.len(),
        });
    }
    if let Some(w) = weights.iter().find(|w| !(**w >= 0.0)) {
        return Err(Error::Contract(format!("allocation has negative or NaN weight {w}")));
    }
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > SIMPLEX_TOLERANCE {
        return Err(Error::Contract(format!("allocation weights sum to {total}, not 1")));
    }
    Ok(())
}

/// Episodic replay of a universe. Single-threaded; run independent
/// instances for parallel rollouts.
#[derive(Clone, Debug)]
pub struct PortfolioEnv {
    universe: Arc<Universe>,
    params: EnvParams,
    risk: RiskVector,
    start: usize,
    t: usize,
    steps: usize,
}

impl PortfolioEnv {
    pub fn new(universe: Arc<Universe>, params: EnvParams, risk: RiskVector) -> Result<Self> {
        let required = params.min_series_len();
        if universe.len() < required {
            return Err(Error::SeriesTooShort {
                required,
                actual: universe.len(),
            });
        }
        if params.episode_len == 0 {
            return Err(Error::Config("episode length must be positive".into()));
        }
        Ok(Self {
            start: params.window + 1,
            t: params.window + 1,
            steps: 0,
            universe,
            params,
            risk,
        })
    }

    pub fn universe(&self) -> &Arc<Universe> {
        &self.universe
    }

    pub fn params(&self) -> EnvParams {
        self.params
    }

    pub fn risk(&self) -> RiskVector {
        self.risk
    }

    pub fn set_risk(&mut self, risk: RiskVector) {
        self.risk = risk;
    }

    pub fn n_assets(&self) -> usize {
        self.universe.n_assets()
    }

    pub fn feature_len(&self) -> usize {
        super::feature_len(self.n_assets(), self.params.window, self.universe.macro_len())
    }

    /// Legal episode start offsets, inclusive.
    pub fn start_range(&self) -> (usize, usize) {
        (self.params.window + 1, self.universe.len() - self.params.episode_len)
    }

    pub fn start(&self) -> usize {
        self.start
    }

    pub fn t(&self) -> usize {
        self.t
    }

    /// Starts an episode at a seeded uniform offset.
    pub fn reset(&mut self, seed: u64) -> Result<MarketState> {
        let (lo, hi) = self.start_range();
        let start = ChaCha8Rng::seed_from_u64(seed).random_range(lo..=hi);
        self.reset_at(start)
    }

    pub fn reset_at(&mut self, start: usize) -> Result<MarketState> {
        let (lo, hi) = self.start_range();
        if !(lo..=hi).contains(&start) {
            return Err(Error::Input(format!("episode start {start} outside [{lo}, {hi}]")));
        }
        self.start = start;
        self.t = start;
        self.steps = 0;
        self.state()
    }

    pub fn state(&self) -> Result<MarketState> {
        compute_state(&self.universe, self.t, self.params.window, self.risk)
    }

    pub fn is_done(&self) -> bool {
        self.steps >= self.params.episode_len
    }

    /// Holds `weights` from close `t - 1` to close `t` and advances.
    pub fn step(&mut self, weights: &[f64]) -> Result<(MarketState, StepOutcome)> {
        if self.is_done() {
            return Err(Error::Contract("step called on a finished episode".into()));
        }
        check_simplex(weights, self.n_assets())?;
        let per_asset_returns = self.universe.returns_at(self.t);
        let realized_return = weights.iter().zip(&per_asset_returns).map(|(w, r)| w * r).sum();
        self.t += 1;
        self.steps += 1;
        let outcome = StepOutcome {
            realized_return,
            per_asset_returns,
            done: self.is_done(),
        };
        Ok((self.state()?, outcome))
    }
}

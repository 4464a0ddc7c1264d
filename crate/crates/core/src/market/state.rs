use serde::{Deserialize, Serialize};

use super::Universe;
use crate::error::{Error, Result};
use crate::risk::RiskVector;
use crate::stats::{mean, sample_std};

/// Observation at step `t`.
///
/// Feature layout (see [`MarketState::features`]):
/// `[returns of asset 0 (oldest..newest), ..., returns of asset N-1,
///   rolling vol per asset, macro channel, risk vector (5)]`,
/// i.e. `N * W + N + M + 5` values.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    pub t: usize,
    pub return_window: Vec<Vec<f64>>,
    pub rolling_vol: Vec<f64>,
    /// Cross-asset mean rolling volatility, then the latest simple return of
    /// each ingested macro column.
    pub macro_channel: Vec<f64>,
    pub risk_vector: RiskVector,
}

pub fn feature_len(n_assets: usize, window: usize, macro_len: usize) -> usize {
    n_assets * window + n_assets + macro_len + RiskVector::DIM
}

impl MarketState {
    pub fn n_assets(&self) -> usize {
        self.rolling_vol.len()
    }

    pub fn window(&self) -> usize {
        self.return_window.first().map_or(0, Vec::len)
    }

    pub fn feature_len(&self) -> usize {
        feature_len(self.n_assets(), self.window(), self.macro_channel.len())
    }

    pub fn features(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.feature_len());
        for w in &self.return_window {
            out.extend_from_slice(w);
        }
        out.extend_from_slice(&self.rolling_vol);
        out.extend_from_slice(&self.macro_channel);
        out.extend_from_slice(&self.risk_vector.to_array());
        out
    }

    /// Copy of this state conditioned on a different risk vector.
    pub fn with_risk(&self, risk: RiskVector) -> Self {
        let mut s = self.clone();
        s.risk_vector = risk;
        s
    }
}

/// Builds the state at `t` from closes `t - window - 1 ..= t - 1`.
pub fn compute_state(universe: &Universe, t: usize, window: usize, risk: RiskVector) -> Result<MarketState> {
    if window < 2 {
        return Err(Error::Config(format!("feature window {window} must be >= 2")));
    }
    if t < window + 1 {
        return Err(Error::Window { t, required: window + 1 });
    }
    if t > universe.len() {
        return Err(Error::SeriesTooShort {
            required: t,
            actual: universe.len(),
        });
    }
    let return_window: Vec<Vec<f64>> = universe
        .assets
        .iter()
        .map(|s| (t - window..t).map(|k| s.simple_return(k)).collect())
        .collect();
    let rolling_vol: Vec<f64> = return_window.iter().map(|r| sample_std(r)).collect();
    let mut macro_channel = vec![mean(&rolling_vol)];
    macro_channel.extend(universe.macros.iter().map(|m| m.simple_return(t - 1)));
    Ok(MarketState {
        t,
        return_window,
        rolling_vol,
        macro_channel,
        risk_vector: risk,
    })
}

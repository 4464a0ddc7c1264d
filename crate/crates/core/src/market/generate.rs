use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::{business_days, default_start_date, PriceSeries, Universe};
use crate::error::{Error, Result};

/// One market regime: per-step drift and volatility shared by all assets,
/// and the mean number of steps spent in the regime before switching.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Regime {
    pub drift: f64,
    pub volatility: f64,
    pub mean_duration: f64,
}

fn default_initial_price() -> f64 {
    100.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MarketConfig {
    pub n_assets: usize,
    pub n_steps: usize,
    pub regimes: Vec<Regime>,
    pub correlation: f64,
    pub seed: u64,
    #[serde(default = "default_initial_price")]
    pub initial_price: f64,
    /// Per-asset drift added to the regime drift.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asset_drift: Option<Vec<f64>>,
    /// Per-asset multiplier on the regime volatility.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub asset_vol_scale: Option<Vec<f64>>,
}

impl MarketConfig {
    pub fn load(path: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_assets == 0 {
            return Err(Error::Config("n_assets must be positive".into()));
        }
        if self.regimes.is_empty() {
            return Err(Error::Config("at least one regime is required".into()));
        }
        for (i, r) in self.regimes.iter().enumerate() {
            if !(r.volatility >= 0.0 && r.volatility.is_finite()) {
                return Err(Error::Config(format!("regime {i}: volatility {} must be >= 0", r.volatility)));
            }
            if !(r.mean_duration >= 1.0) {
                return Err(Error::Config(format!(
                    "regime {i}: mean duration {} must be >= 1",
                    r.mean_duration
                )));
            }
            if !r.drift.is_finite() {
                return Err(Error::Config(format!("regime {i}: drift must be finite")));
            }
        }
        if !(self.initial_price > 0.0 && self.initial_price.is_finite()) {
            return Err(Error::Config(format!("initial price {} must be positive", self.initial_price)));
        }
        for (name, v) in [("asset_drift", &self.asset_drift), ("asset_vol_scale", &self.asset_vol_scale)] {
            if let Some(v) = v {
                if v.len() != self.n_assets {
                    return Err(Error::Config(format!(
                        "{name} has {} entries for {} assets",
                        v.len(),
                        self.n_assets
                    )));
                }
            }
        }
        if let Some(s) = &self.asset_vol_scale {
            if s.iter().any(|x| !(*x >= 0.0)) {
                return Err(Error::Config("asset_vol_scale entries must be >= 0".into()));
            }
        }
        correlation_factor(self.n_assets, self.correlation).map(|_| ())
    }
}

/// Lower-triangular factor `L` with `L L^T` equal to the equicorrelation
/// matrix. Fails when the matrix is not positive semidefinite.
fn correlation_factor(n: usize, rho: f64) -> Result<DMatrix<f64>> {
    let lower = if n > 1 { -1.0 / (n as f64 - 1.0) } else { -1.0 };
    if !(-1.0..=1.0).contains(&rho) || rho < lower {
        return Err(Error::Config(format!(
            "correlation {rho} does not give a positive semidefinite matrix for {n} assets (allowed range [{lower}, 1])"
        )));
    }
    if rho == 0.0 || n == 1 {
        return Ok(DMatrix::identity(n, n));
    }
    let c = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else { rho });
    if let Some(ch) = c.clone().cholesky() {
        return Ok(ch.l());
    }
    // Singular boundary (rho = 1 or rho = -1/(n-1)): symmetric square root.
    let eig = c.symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt_vals))
}

/// A generated universe plus the regime index active at each step.
#[derive(Clone, Debug)]
pub struct GeneratedMarket {
    pub universe: Universe,
    pub regime_path: Vec<usize>,
}

/// Regime-switching geometric Brownian motion with unit step:
/// `p[t+1] = p[t] * exp((mu - sigma^2 / 2) + sigma * z[t])`, `z` correlated
/// across assets. After every step the regime switches with probability
/// `1 / mean_duration`, which gives geometric durations with that mean.
pub fn generate_universe(config: &MarketConfig) -> Result<Universe> {
    generate_with_regimes(config).map(|g| g.universe)
}

pub fn generate_with_regimes(config: &MarketConfig) -> Result<GeneratedMarket> {
    config.validate()?;
    let n = config.n_assets;
    let factor = correlation_factor(n, config.correlation)?;
    let drift_offset = config.asset_drift.clone().unwrap_or_else(|| vec![0.0; n]);
    let vol_scale = config.asset_vol_scale.clone().unwrap_or_else(|| vec![1.0; n]);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut log_level = vec![0.0f64; n];
    let mut closes = vec![Vec::with_capacity(config.n_steps); n];
    let mut regime = 0usize;
    let mut regime_path = Vec::with_capacity(config.n_steps);

    for _ in 0..config.n_steps {
        let reg = config.regimes[regime];
        regime_path.push(regime);
        let raw = DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)));
        let z = &factor * raw;
        for i in 0..n {
            let mu = reg.drift + drift_offset[i];
            let sigma = reg.volatility * vol_scale[i];
            log_level[i] += (mu - 0.5 * sigma * sigma) + sigma * z[i];
            closes[i].push(config.initial_price * log_level[i].exp());
        }
        if config.regimes.len() > 1 && rng.random::<f64>() < 1.0 / reg.mean_duration {
            regime = if config.regimes.len() == 2 {
                1 - regime
            } else {
                let k = rng.random_range(0..config.regimes.len() - 1);
                if k >= regime {
                    k + 1
                } else {
                    k
                }
            };
        }
    }

    let dates = business_days(default_start_date(), config.n_steps);
    let assets = closes
        .into_iter()
        .enumerate()
        .map(|(i, c)| PriceSeries::new(format!("A{i}"), c))
        .collect::<Result<Vec<_>>>()?;
    Ok(GeneratedMarket {
        universe: Universe::new(dates, assets, Vec::new())?,
        regime_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stats::sample_std;

    fn one_regime(drift: f64, vol: f64, n_assets: usize, n_steps: usize) -> MarketConfig {
        MarketConfig {
            n_assets,
            n_steps,
            regimes: vec![Regime { drift, volatility: vol, mean_duration: 1.0 }],
            correlation: 0.0,
            seed: 7,
            initial_price: 100.0,
            asset_drift: None,
            asset_vol_scale: None,
        }
    }

    #[test]
    fn zero_noise_is_exponential_growth() {
        let u = generate_universe(&one_regime(0.001, 0.0, 1, 3)).unwrap();
        let expected = [100.0 * 0.001f64.exp(), 100.0 * 0.002f64.exp(), 100.0 * 0.003f64.exp()];
        for (c, e) in u.assets[0].closes.iter().zip(expected) {
            assert!((c - e).abs() < 1e-12 * e, "{c} vs {e}");
        }
    }

    #[test]
    fn same_seed_is_bit_identical() {
        let mut cfg = one_regime(0.0005, 0.02, 4, 500);
        cfg.correlation = 0.4;
        cfg.regimes.push(Regime { drift: -0.001, volatility: 0.03, mean_duration: 20.0 });
        cfg.regimes[0].mean_duration = 50.0;
        let a = generate_universe(&cfg).unwrap();
        let b = generate_universe(&cfg).unwrap();
        assert_eq!(a, b);
        cfg.seed += 1;
        assert_ne!(a, generate_universe(&cfg).unwrap());
    }

    #[test]
    fn log_return_std_matches_volatility() {
        let u = generate_universe(&one_regime(0.0, 0.02, 1, 10_000)).unwrap();
        let c = &u.assets[0].closes;
        let logs: Vec<f64> = c.windows(2).map(|w| (w[1] / w[0]).ln()).collect();
        let s = sample_std(&logs);
        assert!((s / 0.02 - 1.0).abs() < 0.05, "std {s}");
    }

    #[test]
    fn non_psd_correlation_names_value() {
        let mut cfg = one_regime(0.0, 0.01, 4, 10);
        cfg.correlation = -0.5;
        let err = generate_universe(&cfg).unwrap_err().to_string();
        assert!(err.contains("-0.5"), "{err}");
        cfg.correlation = -1.0 / 3.0;
        assert!(generate_universe(&cfg).is_ok());
        cfg.correlation = 1.0;
        assert!(generate_universe(&cfg).is_ok());
    }

    #[test]
    fn full_correlation_moves_assets_together() {
        let mut cfg = one_regime(0.0, 0.01, 3, 200);
        cfg.correlation = 1.0;
        let u = generate_universe(&cfg).unwrap();
        for t in 0..200 {
            let c0 = u.assets[0].closes[t];
            assert!((u.assets[1].closes[t] - c0).abs() < 1e-9 * c0);
        }
    }

    #[test]
    fn regime_durations_have_configured_mean() {
        let mut cfg = one_regime(0.0, 0.01, 1, 200_000);
        cfg.regimes = vec![
            Regime { drift: 0.0, volatility: 0.01, mean_duration: 10.0 },
            Regime { drift: 0.0, volatility: 0.02, mean_duration: 40.0 },
        ];
        let g = generate_with_regimes(&cfg).unwrap();
        let mut runs: [Vec<usize>; 2] = [Vec::new(), Vec::new()];
        let mut len = 1;
        for w in g.regime_path.windows(2) {
            if w[1] == w[0] {
                len += 1;
            } else {
                runs[w[0]].push(len);
                len = 1;
            }
        }
        for (k, target) in [(0, 10.0), (1, 40.0)] {
            let m = runs[k].iter().sum::<usize>() as f64 / runs[k].len() as f64;
            assert!((m / target - 1.0).abs() < 0.1, "regime {k} mean {m}");
        }
    }

    #[test]
    fn per_asset_scales_apply() {
        let mut cfg = one_regime(0.0, 0.01, 2, 5_000);
        cfg.asset_vol_scale = Some(vec![1.0, 3.0]);
        let u = generate_universe(&cfg).unwrap();
        let s: Vec<f64> = u
            .assets
            .iter()
            .map(|a| sample_std(&a.closes.windows(2).map(|w| (w[1] / w[0]).ln()).collect::<Vec<_>>()))
            .collect();
        assert!((s[1] / s[0] - 3.0).abs() < 0.2);
        cfg.asset_drift = Some(vec![0.0]);
        assert!(cfg.validate().is_err());
    }
}

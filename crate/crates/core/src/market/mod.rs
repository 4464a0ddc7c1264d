//! Price data and the trading environment.
//!
//! Prices come either from a seeded regime-switching GBM generator
//! ([`generate_universe`]) or from a `date,asset_id,close` CSV
//! ([`ingest_csv`]). [`PortfolioEnv`] replays a universe as an episodic
//! environment whose observations are [`MarketState`]s.
//!
//! Time convention: the state at index `t` is built from closes
//! `t - W - 1 ..= t - 1`, and stepping at `t` realizes the simple return
//! from close `t - 1` to close `t`.

mod csv_io;
mod env;
mod generate;
mod state;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use csv_io::{ingest_csv, write_csv};
pub use env::{check_simplex, EnvParams, PortfolioEnv, StepOutcome, SIMPLEX_TOLERANCE};
pub use generate::{generate_universe, generate_with_regimes, GeneratedMarket, MarketConfig, Regime};
pub use state::{compute_state, feature_len, MarketState};

/// Prefix marking a CSV column as a macro channel rather than a tradable asset.
pub const MACRO_PREFIX: char = '^';

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PriceSeries {
    pub asset_id: String,
    /// Trading-day indices, strictly increasing.
    pub timestamps: Vec<usize>,
    pub closes: Vec<f64>,
}

impl PriceSeries {
    pub fn new(asset_id: impl Into<String>, closes: Vec<f64>) -> Result<Self> {
        let s = Self {
            asset_id: asset_id.into(),
            timestamps: (0..closes.len()).collect(),
            closes,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.timestamps.len() != self.closes.len() {
            return Err(Error::Input(format!(
                "series `{}`: {} timestamps for {} closes",
                self.asset_id,
                self.timestamps.len(),
                self.closes.len()
            )));
        }
        if let Some(i) = self.closes.iter().position(|c| !(c.is_finite() && *c > 0.0)) {
            return Err(Error::Input(format!(
                "series `{}`: close {} at index {i} is not strictly positive",
                self.asset_id, self.closes[i]
            )));
        }
        if self.timestamps.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Input(format!(
                "series `{}`: timestamps are not strictly increasing",
                self.asset_id
            )));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.closes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.closes.is_empty()
    }

    /// Simple return from close `t - 1` to close `t`.
    pub fn simple_return(&self, t: usize) -> f64 {
        (self.closes[t] - self.closes[t - 1]) / self.closes[t - 1]
    }
}

/// An aligned set of asset series (plus optional macro channels) sharing one
/// date axis.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Universe {
    pub dates: Vec<NaiveDate>,
    pub assets: Vec<PriceSeries>,
    #[serde(default)]
    pub macros: Vec<PriceSeries>,
}

impl Universe {
    pub fn new(dates: Vec<NaiveDate>, assets: Vec<PriceSeries>, macros: Vec<PriceSeries>) -> Result<Self> {
        if assets.is_empty() {
            return Err(Error::Empty("universe has no assets"));
        }
        for s in assets.iter().chain(&macros) {
            s.validate()?;
            if s.len() != dates.len() {
                return Err(Error::Input(format!(
                    "series `{}` has {} closes but the date axis has {}",
                    s.asset_id,
                    s.len(),
                    dates.len()
                )));
            }
        }
        if dates.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Input("dates are not strictly increasing".into()));
        }
        Ok(Self { dates, assets, macros })
    }

    /// Builds a universe from raw closes on a business-day calendar
    /// starting at 2015-01-02.
    pub fn from_closes(closes: Vec<(String, Vec<f64>)>) -> Result<Self> {
        let len = closes.first().map_or(0, |c| c.1.len());
        let dates = business_days(default_start_date(), len);
        let assets = closes
            .into_iter()
            .map(|(id, c)| PriceSeries::new(id, c))
            .collect::<Result<Vec<_>>>()?;
        Self::new(dates, assets, Vec::new())
    }

    pub fn n_assets(&self) -> usize {
        self.assets.len()
    }

    pub fn len(&self) -> usize {
        self.dates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dates.is_empty()
    }

    /// Per-asset simple returns realized between closes `t - 1` and `t`.
    pub fn returns_at(&self, t: usize) -> Vec<f64> {
        self.assets.iter().map(|s| s.simple_return(t)).collect()
    }

    /// Number of macro features appended to the state besides the
    /// cross-asset volatility proxy.
    pub fn macro_len(&self) -> usize {
        1 + self.macros.len()
    }

    /// Restricts the universe to closes `start..end`.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        if start >= end || end > self.len() {
            return Err(Error::Input(format!("invalid slice {start}..{end} of {}", self.len())));
        }
        let cut = |s: &PriceSeries| PriceSeries {
            asset_id: s.asset_id.clone(),
            timestamps: s.timestamps[start..end].to_vec(),
            closes: s.closes[start..end].to_vec(),
        };
        Ok(Self {
            dates: self.dates[start..end].to_vec(),
            assets: self.assets.iter().map(cut).collect(),
            macros: self.macros.iter().map(cut).collect(),
        })
    }
}

pub(crate) fn default_start_date() -> NaiveDate {
    NaiveDate::from_ymd_opt(2015, 1, 2).expect("valid date")
}

/// `n` consecutive weekdays starting at `start` (inclusive if a weekday).
pub(crate) fn business_days(start: NaiveDate, n: usize) -> Vec<NaiveDate> {
    use chrono::{Datelike, Weekday};
    let mut out = Vec::with_capacity(n);
    let mut d = start;
    while out.len() < n {
        if !matches!(d.weekday(), Weekday::Sat | Weekday::Sun) {
            out.push(d);
        }
        d = d.succ_opt().expect("date in range");
    }
    out
}

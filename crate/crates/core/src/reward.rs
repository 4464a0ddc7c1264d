//! Composite step reward and evaluation metrics.
//!
//! The step reward is `alpha * return - beta * risk + eta * sim`, where the
//! risk term is the sample standard deviation of the trailing portfolio
//! returns and `sim` scores how well the allocation's volatility exposure
//! matches the investor's risk appetite.
//!
//! Alignment is an artifact definition: exposure
//! `x = sum(w_i * vol_i) / max_i vol_i` and `sim = 1 - |x - appetite|`.
//! The user alignment score (UAS) is the mean per-step `sim`.

use std::collections::VecDeque;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::risk::RiskVector;
use crate::stats::{mean, sample_std};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub alpha: f64,
    pub beta: f64,
    pub eta: f64,
    #[serde(default = "RewardConfig::default_risk_window")]
    pub risk_window: usize,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            beta: 1.0,
            eta: 0.5,
            risk_window: Self::default_risk_window(),
        }
    }
}

impl RewardConfig {
    fn default_risk_window() -> usize {
        20
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("beta", self.beta), ("eta", self.eta)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("reward coefficient {name} = {v} must be >= 0")));
            }
        }
        if self.risk_window < 2 {
            return Err(Error::Config(format!("risk window {} must be >= 2", self.risk_window)));
        }
        Ok(())
    }
}

/// Normalized volatility exposure in `[0, 1]`; zero when every vol is zero.
pub fn exposure(weights: &[f64], asset_vols: &[f64]) -> f64 {
    let max = asset_vols.iter().cloned().fold(0.0, f64::max);
    if max <= 0.0 {
        return 0.0;
    }
    let x: f64 = weights.iter().zip(asset_vols).map(|(w, v)| w * v).sum::<f64>() / max;
    x.clamp(0.0, 1.0)
}

pub fn alignment_sim(risk: &RiskVector, weights: &[f64], asset_vols: &[f64]) -> f64 {
    1.0 - (exposure(weights, asset_vols) - risk.risk_appetite).abs()
}

/// Eq.-3-style reward from its three already-computed terms.
pub fn combine_reward(cfg: &RewardConfig, realized_return: f64, risk_term: f64, sim: f64) -> f64 {
    cfg.alpha * realized_return - cfg.beta * risk_term + cfg.eta * sim
}

/// Risk term over a trailing window: sample std, zero with fewer than two
/// returns.
pub fn trailing_risk(trailing: &[f64]) -> f64 {
    sample_std(trailing)
}

/// `trailing` must already include the current step's realized return.
pub fn compute_reward(
    realized_return: f64,
    trailing: &[f64],
    risk: &RiskVector,
    weights: &[f64],
    asset_vols: &[f64],
    cfg: &RewardConfig,
) -> f64 {
    combine_reward(cfg, realized_return, trailing_risk(trailing), alignment_sim(risk, weights, asset_vols))
}

/// Breakdown of one step's reward.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardTerms {
    pub realized_return: f64,
    pub risk: f64,
    pub sim: f64,
    pub reward: f64,
}

/// Keeps the trailing portfolio-return window for an episode.
#[derive(Clone, Debug)]
pub struct RewardTracker {
    cfg: RewardConfig,
    trailing: VecDeque<f64>,
}

impl RewardTracker {
    pub fn new(cfg: RewardConfig) -> Self {
        Self {
            cfg,
            trailing: VecDeque::with_capacity(cfg.risk_window),
        }
    }

    pub fn reset(&mut self) {
        self.trailing.clear();
    }

    /// Records the realized return and scores the step. `asset_vols` are the
    /// rolling vols the allocation was chosen against.
    pub fn step(&mut self, realized_return: f64, risk: &RiskVector, weights: &[f64], asset_vols: &[f64]) -> RewardTerms {
        if self.trailing.len() == self.cfg.risk_window {
            self.trailing.pop_front();
        }
        self.trailing.push_back(realized_return);
        let trailing: Vec<f64> = self.trailing.iter().copied().collect();
        let risk_term = trailing_risk(&trailing);
        let sim = alignment_sim(risk, weights, asset_vols);
        RewardTerms {
            realized_return,
            risk: risk_term,
            sim,
            reward: combine_reward(&self.cfg, realized_return, risk_term, sim),
        }
    }
}

/// Largest fractional peak-to-trough decline.
pub fn max_drawdown(values: &[f64]) -> Result<f64> {
    let first = *values.first().ok_or(Error::Empty("equity curve"))?;
    let mut peak = first;
    let mut mdd = 0.0f64;
    for &v in values {
        if v > peak {
            peak = v;
        }
        mdd = mdd.max((peak - v) / peak);
    }
    Ok(mdd)
}

/// Compounded equity curve starting at 1.
pub fn equity_curve(returns: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(returns.len() + 1);
    let mut v = 1.0;
    out.push(v);
    for r in returns {
        v *= 1.0 + r;
        out.push(v);
    }
    out
}

pub const CALMAR_CAP: f64 = 100.0;
pub const DEFAULT_PERIODS_PER_YEAR: f64 = 252.0;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub annualized_return: f64,
    pub sharpe: f64,
    pub max_drawdown: f64,
    pub info_ratio: f64,
    pub calmar: f64,
    /// Set when the curve never drew down while earning a positive return;
    /// `calmar` then holds [`CALMAR_CAP`].
    #[serde(default)]
    pub calmar_capped: bool,
    pub uas: f64,
    pub periods_per_year: f64,
}

fn annualized_ratio(xs: &[f64], periods_per_year: f64) -> f64 {
    let s = sample_std(xs);
    if s == 0.0 {
        0.0
    } else {
        mean(xs) / s * periods_per_year.sqrt()
    }
}

pub fn compute_metrics(returns: &[f64], benchmark: &[f64], sims: &[f64], periods_per_year: f64) -> Result<MetricsReport> {
    if returns.is_empty() {
        return Err(Error::Empty("return series"));
    }
    if benchmark.len() != returns.len() {
        return Err(Error::Dimension {
            context: "benchmark returns",
            expected: returns.len(),
            actual: benchmark.len(),
        });
    }
    if sims.len() != returns.len() {
        return Err(Error::Dimension {
            context: "alignment scores",
            expected: returns.len(),
            actual: sims.len(),
        });
    }
    let growth: f64 = returns.iter().map(|r| 1.0 + r).product();
    let annualized_return = if growth <= 0.0 {
        -1.0
    } else {
        growth.powf(periods_per_year / returns.len() as f64) - 1.0
    };
    let sharpe = annualized_ratio(returns, periods_per_year);
    let mdd = max_drawdown(&equity_curve(returns))?;
    let active: Vec<f64> = returns.iter().zip(benchmark).map(|(r, b)| r - b).collect();
    let info_ratio = annualized_ratio(&active, periods_per_year);
    let (calmar, calmar_capped) = if mdd > 0.0 {
        (annualized_return / mdd, false)
    } else if annualized_return > 0.0 {
        (CALMAR_CAP, true)
    } else {
        (0.0, false)
    };
    Ok(MetricsReport {
        annualized_return,
        sharpe,
        max_drawdown: mdd,
        info_ratio,
        calmar,
        calmar_capped,
        uas: mean(sims).clamp(0.0, 1.0),
        periods_per_year,
    })
}

pub const COMPARISON_COLUMNS: [&str; 6] = ["AR", "SR", "MDD", "IR", "CR", "UAS"];

/// One comparison-table row.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub strategy: String,
    pub report: MetricsReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cohort_mean_uas: Option<f64>,
}

/// Writes `strategy,AR,SR,MDD,IR,CR,UAS[,cohort_mean_UAS]`.
pub fn write_comparison_csv<W: Write>(rows: &[ComparisonRow], mut sink: W) -> Result<()> {
    let with_cohort = rows.iter().any(|r| r.cohort_mean_uas.is_some());
    let mut header = vec!["strategy"];
    header.extend(COMPARISON_COLUMNS);
    if with_cohort {
        header.push("cohort_mean_UAS");
    }
    writeln!(sink, "{}", header.join(","))?;
    for r in rows {
        let m = &r.report;
        let mut cells = vec![
            r.strategy.clone(),
            format!("{:.6}", m.annualized_return),
            format!("{:.6}", m.sharpe),
            format!("{:.6}", m.max_drawdown),
            format!("{:.6}", m.info_ratio),
            format!("{:.6}", m.calmar),
            format!("{:.6}", m.uas),
        ];
        if with_cohort {
            cells.push(r.cohort_mean_uas.map_or(String::new(), |u| format!("{u:.6}")));
        }
        writeln!(sink, "{}", cells.join(","))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sim_hand_values() {
        let r = RiskVector::with_appetite(0.5);
        let s = alignment_sim(&r, &[0.5, 0.5], &[0.01, 0.03]);
        assert!((s - 5.0 / 6.0).abs() < 1e-12);
        let r0 = RiskVector::with_appetite(0.0);
        assert_eq!(alignment_sim(&r0, &[0.0, 1.0], &[0.01, 0.03]), 0.0);
        let exact = RiskVector::with_appetite(1.0);
        assert_eq!(alignment_sim(&exact, &[0.0, 1.0], &[0.01, 0.03]), 1.0);
        // zero vols: exposure is defined as 0
        assert_eq!(exposure(&[0.5, 0.5], &[0.0, 0.0]), 0.0);
    }

    #[test]
    fn reward_substitution() {
        let cfg = RewardConfig { alpha: 1.0, beta: 0.0, eta: 0.0, risk_window: 20 };
        assert_eq!(combine_reward(&cfg, 0.02, 0.5, 0.3), 0.02);
        let cfg = RewardConfig { alpha: 1.0, beta: 1.0, eta: 1.0, risk_window: 20 };
        assert!((combine_reward(&cfg, 0.02, 0.01, 0.5) - 0.51).abs() < 1e-15);
        assert_eq!(trailing_risk(&[0.01; 7]), 0.0);
        assert_eq!(trailing_risk(&[0.01]), 0.0);
    }

    #[test]
    fn tracker_window_slides() {
        let cfg = RewardConfig { alpha: 0.0, beta: 1.0, eta: 0.0, risk_window: 2 };
        let mut t = RewardTracker::new(cfg);
        let r = RiskVector::neutral();
        assert_eq!(t.step(0.01, &r, &[1.0], &[0.1]).risk, 0.0);
        let s = t.step(0.03, &r, &[1.0], &[0.1]).risk;
        assert!((s - sample_std(&[0.01, 0.03])).abs() < 1e-15);
        let s = t.step(0.03, &r, &[1.0], &[0.1]).risk;
        assert_eq!(s, 0.0);
    }

    #[test]
    fn drawdown_examples() {
        assert_eq!(max_drawdown(&[1.0, 2.0, 3.0]).unwrap(), 0.0);
        assert_eq!(max_drawdown(&[100.0, 120.0, 90.0, 110.0]).unwrap(), 0.25);
        assert_eq!(max_drawdown(&[100.0, 50.0]).unwrap(), 0.5);
        assert!(max_drawdown(&[]).is_err());
    }

    #[test]
    fn metrics_examples() {
        let m = compute_metrics(&[0.1, -0.1], &[0.0, 0.0], &[0.5, 0.5], 2.0).unwrap();
        assert!((m.annualized_return - (1.1 * 0.9 - 1.0)).abs() < 1e-15);
        let m = compute_metrics(&[0.01, 0.02, 0.03], &[0.0; 3], &[0.0; 3], 1.0).unwrap();
        assert!((m.sharpe - 2.0).abs() < 1e-12);
        let rets = [0.01, -0.02, 0.005];
        let m = compute_metrics(&rets, &rets, &[0.89; 3], 252.0).unwrap();
        assert_eq!(m.info_ratio, 0.0);
        assert!((m.uas - 0.89).abs() < 1e-15);
    }

    #[test]
    fn calmar_conventions() {
        let up = compute_metrics(&[0.01, 0.02], &[0.0; 2], &[1.0; 2], 252.0).unwrap();
        assert!(up.calmar_capped);
        assert_eq!(up.calmar, CALMAR_CAP);
        let flat = compute_metrics(&[0.0, 0.0], &[0.0; 2], &[1.0; 2], 252.0).unwrap();
        assert_eq!((flat.calmar, flat.calmar_capped), (0.0, false));
        let dd = compute_metrics(&[0.1, -0.2, 0.05], &[0.0; 3], &[1.0; 3], 3.0).unwrap();
        assert!((dd.calmar - dd.annualized_return / dd.max_drawdown).abs() < 1e-15);
    }

    #[test]
    fn metrics_errors() {
        assert!(compute_metrics(&[], &[], &[], 252.0).is_err());
        assert!(compute_metrics(&[0.1], &[0.1, 0.2], &[1.0], 252.0).is_err());
    }

    #[test]
    fn comparison_header() {
        let m = compute_metrics(&[0.01], &[0.0], &[1.0], 252.0).unwrap();
        let rows = vec![ComparisonRow { strategy: "equal_weight".into(), report: m, cohort_mean_uas: None }];
        let mut buf = Vec::new();
        write_comparison_csv(&rows, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), "strategy,AR,SR,MDD,IR,CR,UAS");
    }
}

//! Desk-scale experiments: the seeded benchmark market, learning and
//! personalization checks, cohort evaluation and strategy comparison.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::{backtest_strategy, lambda_for_appetite, BacktestConfig, BacktestResult, Strategy};
use crate::error::{Error, Result};
use crate::market::{generate_universe, EnvParams, MarketConfig, PortfolioEnv, Regime, Universe};
use crate::policy::{
    evaluate_policy, ActionMode, Evaluation, OptimizerKind, PolicyParams, PpoConfig, RiskSampler, TrainSetup, Trainer,
    UpdateRecord,
};
use crate::reward::{ComparisonRow, RewardConfig};
use crate::risk::RiskVector;
use crate::stats::{mean, spearman};

/// Required relative gain of the trained policy over the random policy.
pub const LEARNING_GAIN: f64 = 0.2;
/// Required cohort-mean UAS gain of the personalized policy.
pub const PERSONALIZATION_GAIN: f64 = 0.10;
/// Largest per-user UAS loss tolerated for the personalized policy.
pub const PER_USER_SLACK: f64 = 0.02;
pub const MONOTONICITY_THRESHOLD: f64 = 0.8;
pub const LOSS_MA_WINDOW: usize = 50;
pub const LOSS_RATIO_THRESHOLD: f64 = 0.3;

/// Nine users with risk appetite 0.1, 0.2, ..., 0.9 and neutral elsewhere.
pub fn default_cohort() -> Vec<RiskVector> {
    cohort_from_appetites(&(1..=9).map(|k| k as f64 / 10.0).collect::<Vec<_>>())
}

pub fn cohort_from_appetites(appetites: &[f64]) -> Vec<RiskVector> {
    appetites.iter().map(|&a| RiskVector::with_appetite(a)).collect()
}

/// The seeded two-regime, five-asset, 5,000-step benchmark market. Assets
/// share the regime path but differ in volatility scale (and, slightly, in
/// drift), so allocation choices matter.
pub fn desk_market(seed: u64) -> MarketConfig {
    MarketConfig {
        n_assets: 5,
        n_steps: 5_000,
        regimes: vec![
            Regime { drift: 0.0004, volatility: 0.01, mean_duration: 250.0 },
            Regime { drift: -0.0006, volatility: 0.02, mean_duration: 100.0 },
        ],
        correlation: 0.3,
        seed,
        initial_price: 100.0,
        asset_drift: Some(vec![0.0, 0.0001, 0.0002, 0.0003, 0.0004]),
        asset_vol_scale: Some(vec![0.25, 0.5, 1.0, 1.5, 2.0]),
    }
}

/// Training hyperparameters for the benchmark.
pub fn desk_ppo(seed: u64) -> PpoConfig {
    PpoConfig {
        gamma: 0.9,
        gae_lambda: 0.95,
        learning_rate: 3e-3,
        optimizer: OptimizerKind::Adam,
        max_grad_norm: Some(1.0),
        epochs: 4,
        minibatch_size: 128,
        target_kl: 0.05,
        max_updates: 120,
        episodes_per_update: 4,
        hidden: vec![32, 32],
        seed,
        ..PpoConfig::default()
    }
}

pub fn desk_env() -> EnvParams {
    EnvParams { window: 20, episode_len: 128 }
}

pub fn desk_setup(seed: u64, sampler: RiskSampler, reward: RewardConfig, risk_conditioned: bool) -> TrainSetup {
    TrainSetup {
        env: desk_env(),
        reward,
        ppo: desk_ppo(seed),
        sampler,
        risk_conditioned,
    }
}

/// Appetite of the fixed user in the learning check.
pub const LEARNING_CHECK_APPETITE: f64 = 0.2;
pub const EVAL_EPISODES: usize = 16;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LearningCheck {
    pub seed: u64,
    pub trained: Evaluation,
    pub random: Evaluation,
    /// `(trained - random) / |random|`.
    pub relative_gain: f64,
    pub passed: bool,
    pub curve: Vec<UpdateRecord>,
}

/// Relative improvement used by the learning check; infinite when the
/// baseline is exactly zero and the policy improves on it.
pub fn relative_gain(trained: f64, random: f64) -> f64 {
    let diff = trained - random;
    if random == 0.0 {
        if diff > 0.0 {
            f64::INFINITY
        } else {
            0.0
        }
    } else {
        diff / random.abs()
    }
}

/// Trains on the benchmark with the default composite reward for a fixed
/// conservative user and compares the trained policy (deterministic actions)
/// with the untrained stochastic policy on identical evaluation episodes.
pub fn learning_check(seed: u64) -> Result<LearningCheck> {
    let universe = Arc::new(generate_universe(&desk_market(seed))?);
    let risk = RiskVector::with_appetite(LEARNING_CHECK_APPETITE);
    let setup = desk_setup(seed, RiskSampler::Fixed { risk }, RewardConfig::default(), true);
    let mut trainer = Trainer::new(universe.clone(), setup.clone())?;
    let initial = trainer.params().clone();
    trainer.run(|_| true)?;

    let mut env = PortfolioEnv::new(universe, setup.env, risk)?;
    let eval_seed = seed.wrapping_add(10_000);
    let gamma = setup.ppo.gamma;
    let (trained, _) = evaluate_policy(
        trainer.params(),
        &mut env,
        &setup.reward,
        EVAL_EPISODES,
        gamma,
        ActionMode::Deterministic,
        eval_seed,
    )?;
    let (random, _) = evaluate_policy(&initial, &mut env, &setup.reward, EVAL_EPISODES, gamma, ActionMode::Stochastic, eval_seed)?;
    let gain = relative_gain(trained.mean, random.mean);
    Ok(LearningCheck {
        seed,
        passed: gain >= LEARNING_GAIN,
        relative_gain: gain,
        trained,
        random,
        curve: trainer.history().to_vec(),
    })
}

/// Ratio of the mean of the last `window` total losses to the first one.
pub fn loss_end_ratio(curve: &[UpdateRecord], window: usize) -> Result<f64> {
    let first = curve.first().ok_or(Error::Empty("loss curve"))?.total_loss;
    if first == 0.0 {
        return Err(Error::Input("initial loss is zero".into()));
    }
    let tail: Vec<f64> = curve.iter().rev().take(window).map(|r| r.total_loss).collect();
    Ok(mean(&tail) / first.abs())
}

/// Per-user evaluation of one strategy over a cohort.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CohortReport {
    pub strategy: String,
    pub appetites: Vec<f64>,
    pub uas: Vec<f64>,
    pub exposures: Vec<f64>,
    pub mean_uas: f64,
    /// Spearman correlation of appetite and mean realized exposure.
    pub monotonicity: f64,
}

impl CohortReport {
    fn new(strategy: &str, cohort: &[RiskVector], uas: Vec<f64>, exposures: Vec<f64>) -> Self {
        let appetites: Vec<f64> = cohort.iter().map(|r| r.risk_appetite).collect();
        Self {
            strategy: strategy.to_string(),
            mean_uas: mean(&uas),
            monotonicity: spearman(&appetites, &exposures),
            appetites,
            uas,
            exposures,
        }
    }
}

/// Deterministic-mode episodes for every cohort member on shared seeds.
pub fn evaluate_cohort(
    strategy: &str,
    params: &PolicyParams,
    universe: Arc<Universe>,
    env_params: EnvParams,
    reward: &RewardConfig,
    cohort: &[RiskVector],
    episodes: usize,
    seed: u64,
) -> Result<CohortReport> {
    if cohort.is_empty() {
        return Err(Error::Empty("risk cohort"));
    }
    let mut uas = Vec::new();
    let mut exposures = Vec::new();
    for risk in cohort {
        let mut env = PortfolioEnv::new(universe.clone(), env_params, *risk)?;
        let (eval, _) = evaluate_policy(params, &mut env, reward, episodes, 1.0, ActionMode::Deterministic, seed)?;
        uas.push(eval.mean_sim);
        exposures.push(eval.mean_exposure);
    }
    Ok(CohortReport::new(strategy, cohort, uas, exposures))
}

/// The fallback engine's appetite-to-risk-aversion map, backtested for each
/// cohort member.
pub fn mvo_fallback_cohort(universe: &Universe, cohort: &[RiskVector], cfg: &BacktestConfig) -> Result<CohortReport> {
    if cohort.is_empty() {
        return Err(Error::Empty("risk cohort"));
    }
    let mut uas = Vec::new();
    let mut exposures = Vec::new();
    for risk in cohort {
        let strategy = Strategy::Mvo {
            lambda_risk: lambda_for_appetite(risk.risk_appetite),
        };
        let r = backtest_strategy(&strategy, universe, *risk, cfg)?;
        uas.push(r.report.uas);
        exposures.push(mean(&r.exposures));
    }
    Ok(CohortReport::new("mvo_fallback", cohort, uas, exposures))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PersonalizationCheck {
    pub seed: u64,
    pub personalized: CohortReport,
    pub baseline: CohortReport,
    pub mean_gain: f64,
    /// Most negative per-user `personalized - baseline` UAS difference.
    pub worst_user_delta: f64,
    pub passed: bool,
    pub personalized_curve: Vec<UpdateRecord>,
}

/// Trains the risk-conditioned policy (composite reward, cohort sampler) and
/// the risk-blind policy (no alignment term, no risk features) on the same
/// market, then scores both on every cohort member.
pub fn personalization_check(seed: u64, cohort: &[RiskVector]) -> Result<PersonalizationCheck> {
    let universe = Arc::new(generate_universe(&desk_market(seed))?);
    let sampler = RiskSampler::Cohort { members: cohort.to_vec() };
    let personalized_reward = RewardConfig::default();
    let blind_reward = RewardConfig { eta: 0.0, ..RewardConfig::default() };

    let mut personalized = desk_setup(seed, sampler.clone(), personalized_reward, true);
    personalized.ppo.max_updates = 400;
    personalized.ppo.episodes_per_update = cohort.len();
    let mut p_trainer = Trainer::new(universe.clone(), personalized.clone())?;
    p_trainer.run(|_| true)?;

    let blind = desk_setup(seed, sampler, blind_reward, false);
    let mut b_trainer = Trainer::new(universe.clone(), blind.clone())?;
    b_trainer.run(|_| true)?;

    let eval_seed = seed.wrapping_add(20_000);
    let p_report = evaluate_cohort(
        "ppo_personalized",
        p_trainer.params(),
        universe.clone(),
        personalized.env,
        &personalized_reward,
        cohort,
        EVAL_EPISODES,
        eval_seed,
    )?;
    let b_report = evaluate_cohort("ppo", b_trainer.params(), universe, blind.env, &personalized_reward, cohort, EVAL_EPISODES, eval_seed)?;
    let mean_gain = p_report.mean_uas - b_report.mean_uas;
    let worst_user_delta = p_report
        .uas
        .iter()
        .zip(&b_report.uas)
        .map(|(p, b)| p - b)
        .fold(f64::INFINITY, f64::min);
    Ok(PersonalizationCheck {
        seed,
        passed: mean_gain >= PERSONALIZATION_GAIN && worst_user_delta >= -PER_USER_SLACK,
        mean_gain,
        worst_user_delta,
        personalized: p_report,
        baseline: b_report,
        personalized_curve: p_trainer.history().to_vec(),
    })
}

/// Strategies the comparison table knows about.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyName {
    EqualWeight,
    Mvo,
    Ppo,
    PpoPersonalized,
}

impl StrategyName {
    pub const ALL: [StrategyName; 4] = [
        StrategyName::EqualWeight,
        StrategyName::Mvo,
        StrategyName::Ppo,
        StrategyName::PpoPersonalized,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StrategyName::EqualWeight => "equal_weight",
            StrategyName::Mvo => "mvo",
            StrategyName::Ppo => "ppo",
            StrategyName::PpoPersonalized => "ppo_personalized",
        }
    }

    pub fn parse(name: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|s| s.as_str() == name)
            .ok_or_else(|| Error::Config(format!("unknown strategy `{name}` (expected one of equal_weight, mvo, ppo, ppo_personalized)")))
    }
}

/// Inputs shared by every row of a comparison.
pub struct CompareInputs<'a> {
    pub universe: &'a Universe,
    pub risk: RiskVector,
    pub backtest: BacktestConfig,
    /// Cohort for the optional cohort-mean UAS column.
    pub cohort: Option<&'a [RiskVector]>,
    /// Trained policies for `ppo` (risk-blind) and `ppo_personalized`.
    pub ppo: Option<&'a PolicyParams>,
    pub ppo_personalized: Option<&'a PolicyParams>,
}

fn strategy_for(name: StrategyName, risk: &RiskVector, inputs: &CompareInputs) -> Result<Strategy> {
    let missing = |what: &str| Error::Config(format!("strategy `{what}` needs a trained policy"));
    Ok(match name {
        StrategyName::EqualWeight => Strategy::EqualWeight,
        StrategyName::Mvo => Strategy::Mvo {
            lambda_risk: lambda_for_appetite(risk.risk_appetite),
        },
        StrategyName::Ppo => Strategy::Policy(Box::new(inputs.ppo.ok_or_else(|| missing("ppo"))?.clone())),
        StrategyName::PpoPersonalized => Strategy::Policy(Box::new(
            inputs.ppo_personalized.ok_or_else(|| missing("ppo_personalized"))?.clone(),
        )),
    })
}

/// Walk-forward backtests of each strategy for the configured investor, plus
/// per-member backtests when a cohort is given.
pub fn compare(names: &[StrategyName], inputs: &CompareInputs) -> Result<(Vec<ComparisonRow>, Vec<BacktestResult>)> {
    let mut rows = Vec::new();
    let mut results = Vec::new();
    for &name in names {
        let strategy = strategy_for(name, &inputs.risk, inputs)?;
        let mut result = backtest_strategy(&strategy, inputs.universe, inputs.risk, &inputs.backtest)?;
        result.strategy = name.as_str().to_string();
        let cohort_mean_uas = match inputs.cohort {
            Some(members) if !members.is_empty() => {
                let mut uas = Vec::new();
                for m in members {
                    let s = strategy_for(name, m, inputs)?;
                    uas.push(backtest_strategy(&s, inputs.universe, *m, &inputs.backtest)?.report.uas);
                }
                Some(mean(&uas))
            }
            _ => None,
        };
        rows.push(ComparisonRow {
            strategy: name.as_str().to_string(),
            report: result.report.clone(),
            cohort_mean_uas,
        });
        results.push(result);
    }
    Ok((rows, results))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cohort_appetites() {
        let c = default_cohort();
        assert_eq!(c.len(), 9);
        assert!((c[0].risk_appetite - 0.1).abs() < 1e-12);
        assert!((c[8].risk_appetite - 0.9).abs() < 1e-12);
    }

    #[test]
    fn gain_definition() {
        assert!((relative_gain(1.2, 1.0) - 0.2).abs() < 1e-12);
        assert!((relative_gain(-0.8, -1.0) - 0.2).abs() < 1e-12);
        assert_eq!(relative_gain(0.0, 0.0), 0.0);
    }

    #[test]
    fn strategy_names_roundtrip() {
        for s in StrategyName::ALL {
            assert_eq!(StrategyName::parse(s.as_str()).unwrap(), s);
        }
        assert!(StrategyName::parse("bert_fa").is_err());
    }

    #[test]
    fn desk_market_is_valid() {
        desk_market(3).validate().unwrap();
    }
}

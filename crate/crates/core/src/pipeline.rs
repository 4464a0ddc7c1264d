//! End-to-end workflows behind the CLI commands and service jobs: train a
//! policy, backtest a strategy, compare strategies. Each writes its
//! artifacts under the run directory and reports progress via callbacks.

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::baselines::{BacktestConfig, BacktestResult};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::experiment::{compare, CompareInputs, StrategyName};
use crate::market::Universe;
use crate::policy::{write_loss_curve, Checkpoint, PolicyParams, Trainer, UpdateRecord};
use crate::reward::{write_comparison_csv, ComparisonRow};

pub const CHECKPOINT_FILE: &str = "checkpoint.json";
pub const LOSS_CURVE_FILE: &str = "loss_curve.csv";
pub const COMPARISON_FILE: &str = "comparison.csv";

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrainArtifacts {
    pub checkpoint: PathBuf,
    pub loss_curve: PathBuf,
    pub records: Vec<UpdateRecord>,
    #[serde(skip)]
    pub params: Option<PolicyParams>,
}

/// The full universe and the training prefix.
pub fn load_split(cfg: &RunConfig) -> Result<(Arc<Universe>, Arc<Universe>, usize)> {
    let full = cfg.universe()?;
    let split = cfg.split_index(full.len());
    let train = if split >= full.len() { full.clone() } else { full.slice(0, split)? };
    Ok((Arc::new(full), Arc::new(train), split))
}

fn policy_label(risk_conditioned: bool) -> &'static str {
    if risk_conditioned {
        StrategyName::PpoPersonalized.as_str()
    } else {
        StrategyName::Ppo.as_str()
    }
}

/// Trains on the training prefix and writes `<run>/<label>/checkpoint.json`
/// and `loss_curve.csv`. The callback may return false to stop early.
pub fn run_train(
    cfg: &RunConfig,
    risk_conditioned: bool,
    on_update: impl FnMut(&UpdateRecord) -> bool,
) -> Result<TrainArtifacts> {
    let (_, train, _) = load_split(cfg)?;
    let setup = cfg.train_setup(risk_conditioned)?;
    let mut trainer = Trainer::new(train, setup)?;
    trainer.run(on_update)?;

    let dir = cfg.run_dir().join(policy_label(risk_conditioned));
    std::fs::create_dir_all(&dir)?;
    let checkpoint = dir.join(CHECKPOINT_FILE);
    trainer.checkpoint().save(&checkpoint)?;
    let loss_curve = dir.join(LOSS_CURVE_FILE);
    write_loss_curve(trainer.history(), BufWriter::new(File::create(&loss_curve)?))?;
    Ok(TrainArtifacts {
        checkpoint,
        loss_curve,
        records: trainer.history().to_vec(),
        params: Some(trainer.params().clone()),
    })
}

/// Backtest settings for the out-of-sample suffix (or the whole series when
/// everything is used for training).
pub fn backtest_config(cfg: &RunConfig, split: usize, len: usize) -> BacktestConfig {
    BacktestConfig {
        window: cfg.env.window,
        start: cfg.backtest.start.or(if split < len { Some(split) } else { None }),
        ..cfg.backtest
    }
}

/// Loads the configured checkpoint for a policy strategy, or trains one.
pub fn policy_for(cfg: &RunConfig, name: StrategyName) -> Result<Option<PolicyParams>> {
    let (path, conditioned) = match name {
        StrategyName::Ppo => (&cfg.checkpoints.ppo, false),
        StrategyName::PpoPersonalized => (&cfg.checkpoints.ppo_personalized, true),
        _ => return Ok(None),
    };
    let params = match path {
        Some(p) => Checkpoint::load(p)?.policy()?,
        None => run_train(cfg, conditioned, |_| true)?
            .params
            .ok_or_else(|| Error::Contract("training returned no parameters".into()))?,
    };
    Ok(Some(params))
}

pub fn run_backtest(cfg: &RunConfig, name: StrategyName) -> Result<BacktestResult> {
    let (full, _, split) = load_split(cfg)?;
    let policy = policy_for(cfg, name)?;
    let inputs = CompareInputs {
        universe: &full,
        risk: cfg.risk.profile()?,
        backtest: backtest_config(cfg, split, full.len()),
        cohort: None,
        ppo: policy.as_ref(),
        ppo_personalized: policy.as_ref(),
    };
    let (_, mut results) = compare(&[name], &inputs)?;
    results.pop().ok_or(Error::Empty("backtest results"))
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompareOutput {
    pub rows: Vec<ComparisonRow>,
    pub csv: PathBuf,
}

/// Backtests every strategy on the out-of-sample period and writes
/// `<run>/comparison.csv`. `on_strategy` is told when each one starts.
pub fn run_compare(cfg: &RunConfig, names: &[StrategyName], mut on_strategy: impl FnMut(StrategyName)) -> Result<CompareOutput> {
    if names.is_empty() {
        return Err(Error::Config("no strategies to compare".into()));
    }
    let (full, _, split) = load_split(cfg)?;
    let cohort = cfg.risk.cohort()?;
    let mut ppo = None;
    let mut personalized = None;
    for &n in names {
        on_strategy(n);
        match n {
            StrategyName::Ppo => ppo = policy_for(cfg, n)?,
            StrategyName::PpoPersonalized => personalized = policy_for(cfg, n)?,
            _ => {}
        }
    }
    let inputs = CompareInputs {
        universe: &full,
        risk: cfg.risk.profile()?,
        backtest: backtest_config(cfg, split, full.len()),
        cohort: cohort.as_deref(),
        ppo: ppo.as_ref(),
        ppo_personalized: personalized.as_ref(),
    };
    let (rows, _) = compare(names, &inputs)?;
    std::fs::create_dir_all(cfg.run_dir())?;
    let csv = cfg.run_dir().join(COMPARISON_FILE);
    write_comparison_csv(&rows, BufWriter::new(File::create(&csv)?))?;
    Ok(CompareOutput { rows, csv })
}

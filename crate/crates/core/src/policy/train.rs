use std::io::Write;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::checkpoint::{Checkpoint, RngState, CHECKPOINT_VERSION};
use super::ppo::{ppo_update, OptimizerState, PpoConfig};
use super::rollout::{episode_seed, run_episode, RiskSampler};
use super::{gae_advantages, normalize_advantages, ActionMode, NetworkShape, PolicyParams, Transition};
use crate::error::{Error, Result};
use crate::market::{EnvParams, PortfolioEnv, Universe};
use crate::reward::RewardConfig;
use crate::risk::RiskVector;
use crate::stats::{mean, sample_std};

/// Everything that defines a training run besides the market data.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainSetup {
    #[serde(default)]
    pub env: EnvParams,
    #[serde(default)]
    pub reward: RewardConfig,
    #[serde(default)]
    pub ppo: PpoConfig,
    pub sampler: RiskSampler,
    /// False trains the risk-blind baseline.
    #[serde(default = "default_true")]
    pub risk_conditioned: bool,
}

fn default_true() -> bool {
    true
}

impl TrainSetup {
    pub fn new(sampler: RiskSampler) -> Self {
        Self {
            env: EnvParams::default(),
            reward: RewardConfig::default(),
            ppo: PpoConfig::default(),
            sampler,
            risk_conditioned: true,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.reward.validate()?;
        self.ppo.validate()
    }
}

/// One row of the loss curve.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UpdateRecord {
    pub update: usize,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total_loss: f64,
    pub mean_reward: f64,
    pub approx_kl: f64,
    pub epochs_run: usize,
}

pub const LOSS_CURVE_HEADER: &str = "update,policy_loss,value_loss,entropy,total_loss,mean_reward";

pub fn write_loss_curve<W: Write>(records: &[UpdateRecord], mut sink: W) -> Result<()> {
    writeln!(sink, "{LOSS_CURVE_HEADER}")?;
    for r in records {
        writeln!(
            sink,
            "{},{},{},{},{},{}",
            r.update, r.policy_loss, r.value_loss, r.entropy, r.total_loss, r.mean_reward
        )?;
    }
    Ok(())
}

/// Fixed input scaling: market features are divided by the pooled standard
/// deviation of one-step asset returns, the risk block is left as is.
pub fn input_scale_for(universe: &Universe, window: usize) -> Vec<f64> {
    let n = universe.n_assets();
    let mut rets = Vec::with_capacity(n * universe.len());
    for t in 1..universe.len() {
        rets.extend(universe.returns_at(t));
    }
    let s = sample_std(&rets);
    let scale = if s > 0.0 && s.is_finite() { 1.0 / s } else { 1.0 };
    let market = crate::market::feature_len(n, window, universe.macro_len()) - RiskVector::DIM;
    let mut out = vec![scale; market];
    out.extend([1.0; RiskVector::DIM]);
    out
}

/// Stateful PPO trainer. Rollouts run sequentially in a fixed order, so a
/// run is a pure function of the setup, the data and the seed.
pub struct Trainer {
    setup: TrainSetup,
    env: PortfolioEnv,
    params: PolicyParams,
    opt: OptimizerState,
    rng: ChaCha8Rng,
    updates_done: usize,
    history: Vec<UpdateRecord>,
}

impl Trainer {
    pub fn new(universe: Arc<Universe>, setup: TrainSetup) -> Result<Self> {
        setup.validate()?;
        let env = PortfolioEnv::new(universe.clone(), setup.env, RiskVector::neutral())?;
        let shape = NetworkShape {
            input_dim: env.feature_len(),
            n_assets: env.n_assets(),
            hidden: setup.ppo.hidden.clone(),
        };
        let mut params = PolicyParams::init(&shape, setup.ppo.init_log_std, setup.ppo.seed)
            .with_input_scale(input_scale_for(&universe, setup.env.window))?;
        params.risk_conditioned = setup.risk_conditioned;
        let rng = ChaCha8Rng::seed_from_u64(setup.ppo.seed.wrapping_add(1));
        Ok(Self {
            setup,
            env,
            params,
            opt: OptimizerState::default(),
            rng,
            updates_done: 0,
            history: Vec::new(),
        })
    }

    /// Resumes from a checkpoint; the universe must match the one trained on.
    pub fn from_checkpoint(universe: Arc<Universe>, ckpt: &Checkpoint) -> Result<Self> {
        let setup = TrainSetup {
            env: ckpt.env,
            reward: ckpt.reward,
            ppo: ckpt.ppo.clone(),
            sampler: ckpt.sampler.clone(),
            risk_conditioned: ckpt.risk_conditioned,
        };
        let env = PortfolioEnv::new(universe, setup.env, RiskVector::neutral())?;
        let params = ckpt.policy()?;
        if params.input_dim != env.feature_len() || params.n_assets != env.n_assets() {
            return Err(Error::Dimension {
                context: "checkpoint input dimension",
                expected: env.feature_len(),
                actual: params.input_dim,
            });
        }
        Ok(Self {
            setup,
            env,
            params,
            opt: ckpt.optimizer.clone(),
            rng: ckpt.rng.restore()?,
            updates_done: ckpt.updates_done,
            history: Vec::new(),
        })
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }

    pub fn setup(&self) -> &TrainSetup {
        &self.setup
    }

    pub fn updates_done(&self) -> usize {
        self.updates_done
    }

    pub fn history(&self) -> &[UpdateRecord] {
        &self.history
    }

    pub fn is_finished(&self) -> bool {
        self.updates_done >= self.setup.ppo.max_updates
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            version: CHECKPOINT_VERSION,
            shape: self.params.shape(),
            params: self.params.to_flat(),
            input_scale: self.params.input_scale.clone(),
            risk_conditioned: self.params.risk_conditioned,
            ppo: self.setup.ppo.clone(),
            reward: self.setup.reward,
            env: self.setup.env,
            sampler: self.setup.sampler.clone(),
            updates_done: self.updates_done,
            optimizer: self.opt.clone(),
            rng: RngState::capture(&self.rng),
        }
    }

    /// Collects one batch of episodes and applies one PPO update.
    pub fn step(&mut self) -> Result<UpdateRecord> {
        let cfg = &self.setup.ppo;
        let mut batch: Vec<Transition> = Vec::new();
        let mut rewards = Vec::new();
        for e in 0..cfg.episodes_per_update {
            let global = self.updates_done * cfg.episodes_per_update + e;
            let risk = self.setup.sampler.draw(global, &mut self.rng)?;
            self.env.set_risk(risk);
            let (mut traj, log) = run_episode(
                &mut self.env,
                &self.params,
                &self.setup.reward,
                episode_seed(cfg.seed, self.updates_done, e),
                ActionMode::Stochastic,
                &mut self.rng,
            )?;
            gae_advantages(&mut traj, cfg.gamma, cfg.gae_lambda)?;
            rewards.extend(log.rewards);
            batch.extend(traj.transitions);
        }
        if cfg.normalize_advantages {
            normalize_advantages(&mut batch);
        }
        let (next, stats) = ppo_update(&self.params, &batch, cfg, &mut self.opt, &mut self.rng)?;
        self.params = next;
        let record = UpdateRecord {
            update: self.updates_done,
            policy_loss: stats.losses.policy_loss,
            value_loss: stats.losses.value_loss,
            entropy: stats.losses.entropy,
            total_loss: stats.losses.total_loss,
            mean_reward: mean(&rewards),
            approx_kl: stats.final_kl,
            epochs_run: stats.epochs_run,
        };
        self.updates_done += 1;
        self.history.push(record);
        Ok(record)
    }

    /// Runs the remaining updates. The callback sees each record and may
    /// return false to stop early (cancellation).
    pub fn run(&mut self, mut on_update: impl FnMut(&UpdateRecord) -> bool) -> Result<()> {
        while !self.is_finished() {
            let r = self.step()?;
            if !on_update(&r) {
                break;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_universe() -> Arc<Universe> {
        let closes = (0..3)
            .map(|i| {
                let c: Vec<f64> = (0..80).map(|t| 100.0 * (1.0 + 0.01 * ((t * (i + 2)) as f64).sin())).collect();
                (format!("X{i}"), c)
            })
            .collect();
        Arc::new(Universe::from_closes(closes).unwrap())
    }

    fn setup() -> TrainSetup {
        let mut s = TrainSetup::new(RiskSampler::UniformAppetite { low: 0.0, high: 1.0 });
        s.env = EnvParams { window: 5, episode_len: 20 };
        s.ppo.hidden = vec![8];
        s.ppo.max_updates = 3;
        s.ppo.episodes_per_update = 2;
        s
    }

    #[test]
    fn seeded_runs_are_identical() {
        let run = || {
            let mut t = Trainer::new(tiny_universe(), setup()).unwrap();
            t.run(|_| true).unwrap();
            (t.params().clone(), t.history().to_vec())
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn resume_matches_uninterrupted_run() {
        let mut full = Trainer::new(tiny_universe(), setup()).unwrap();
        full.run(|_| true).unwrap();

        let mut first = Trainer::new(tiny_universe(), setup()).unwrap();
        first.step().unwrap();
        let json = serde_json::to_string(&first.checkpoint()).unwrap();
        let ckpt: Checkpoint = serde_json::from_str(&json).unwrap();
        let mut resumed = Trainer::from_checkpoint(tiny_universe(), &ckpt).unwrap();
        resumed.run(|_| true).unwrap();
        assert_eq!(resumed.params(), full.params());
        assert_eq!(resumed.history(), &full.history()[1..]);
    }

    #[test]
    fn loss_curve_has_header_and_rows() {
        let mut t = Trainer::new(tiny_universe(), setup()).unwrap();
        t.run(|_| true).unwrap();
        let mut buf = Vec::new();
        write_loss_curve(t.history(), &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().next().unwrap(), LOSS_CURVE_HEADER);
        assert_eq!(text.lines().count(), 4);
    }

    #[test]
    fn callback_can_cancel() {
        let mut t = Trainer::new(tiny_universe(), setup()).unwrap();
        t.run(|_| false).unwrap();
        assert_eq!(t.updates_done(), 1);
    }
}

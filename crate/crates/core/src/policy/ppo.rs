use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::distribution::{gaussian_entropy, gaussian_log_prob};
use super::{PolicyParams, Transition};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    /// Fixed-step gradient descent on the total loss.
    Sgd,
    Adam,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip_epsilon: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub learning_rate: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    /// Epochs stop early once the mean approximate KL exceeds this.
    pub target_kl: f64,
    pub max_updates: usize,
    pub episodes_per_update: usize,
    pub seed: u64,
    pub optimizer: OptimizerKind,
    pub max_grad_norm: Option<f64>,
    pub normalize_advantages: bool,
    pub hidden: Vec<usize>,
    pub init_log_std: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip_epsilon: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            entropy_coef: 0.01,
            value_coef: 0.5,
            learning_rate: 3e-4,
            epochs: 4,
            minibatch_size: 64,
            target_kl: 0.02,
            max_updates: 100,
            episodes_per_update: 8,
            seed: 0,
            optimizer: OptimizerKind::Sgd,
            max_grad_norm: None,
            normalize_advantages: true,
            hidden: vec![64, 64],
            init_log_std: -0.5,
        }
    }
}

impl PpoConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad(format!("clip epsilon {} must lie in (0, 1)", self.clip_epsilon));
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return bad(format!("gamma {} must lie in [0, 1]", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.gae_lambda) {
            return bad(format!("GAE lambda {} must lie in [0, 1]", self.gae_lambda));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate {} must be positive", self.learning_rate));
        }
        if self.entropy_coef < 0.0 || self.value_coef < 0.0 {
            return bad("entropy and value coefficients must be >= 0".into());
        }
        if self.epochs == 0 || self.minibatch_size == 0 || self.episodes_per_update == 0 {
            return bad("epochs, minibatch size and episodes per update must be positive".into());
        }
        if !(self.target_kl > 0.0) {
            return bad(format!("target KL {} must be positive", self.target_kl));
        }
        Ok(())
    }
}

/// Per-sample clipped surrogate `min(r A, clip(r, 1 - eps, 1 + eps) A)`.
pub fn clipped_surrogate(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    (ratio * advantage).min(clipped * advantage)
}

/// d(surrogate)/d(ratio): `A` while the unclipped branch is active, else 0.
fn surrogate_ratio_grad(ratio: f64, advantage: f64, epsilon: f64) -> f64 {
    if advantage.is_nan() || ratio.is_nan() {
        return f64::NAN;
    }
    let clipped = ratio.clamp(1.0 - epsilon, 1.0 + epsilon);
    if ratio * advantage <= clipped * advantage {
        advantage
    } else {
        0.0
    }
}

/// Loss components on a batch. `total = policy - entropy_coef * entropy +
/// value_coef * value`, where `policy` is the negated mean clipped
/// surrogate and `value` is half the mean squared return error.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub total_loss: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Total loss and its analytic gradient with respect to every parameter.
pub fn loss_and_grad(params: &PolicyParams, batch: &[Transition], cfg: &PpoConfig) -> Result<(LossBreakdown, PolicyParams)> {
    if batch.is_empty() {
        return Err(Error::Empty("PPO batch"));
    }
    let n = batch.len() as f64;
    let eps = cfg.clip_epsilon;
    let mut grad = params.zeros_like();
    let mut surrogate = 0.0;
    let mut value_loss = 0.0;
    let mut kl = 0.0;
    let mut clipped = 0usize;
    let inv_var: Vec<f64> = params.log_std.iter().map(|ls| (-2.0 * ls).exp()).collect();

    for tr in batch {
        let cache = params.forward_cached(&tr.features)?;
        let out = &cache.output;
        let logp = gaussian_log_prob(&tr.action.z, &out.logit_mean, &out.log_std);
        let ratio = (logp - tr.action.log_prob).exp();
        surrogate += clipped_surrogate(ratio, tr.advantage, eps);
        if (ratio - 1.0).abs() > eps {
            clipped += 1;
        }
        kl += (ratio - 1.0) - (logp - tr.action.log_prob);
        let verr = out.value - tr.return_to_go;
        value_loss += 0.5 * verr * verr;

        // d total / d logp for this sample
        let g_logp = -surrogate_ratio_grad(ratio, tr.advantage, eps) * ratio / n;
        let mut d_mean = vec![0.0; params.n_assets];
        let mut d_log_std = vec![0.0; params.n_assets];
        for k in 0..params.n_assets {
            let diff = tr.action.z[k] - out.logit_mean[k];
            d_mean[k] = g_logp * diff * inv_var[k];
            d_log_std[k] = g_logp * (diff * diff * inv_var[k] - 1.0);
        }
        let d_value = cfg.value_coef * verr / n;
        params.backward(&cache, &d_mean, d_value, &d_log_std, &mut grad);
    }

    let entropy = gaussian_entropy(&params.log_std);
    for g in &mut grad.log_std {
        *g -= cfg.entropy_coef;
    }
    let policy_loss = -surrogate / n;
    let value_loss = value_loss / n;
    let breakdown = LossBreakdown {
        policy_loss,
        value_loss,
        entropy,
        total_loss: policy_loss - cfg.entropy_coef * entropy + cfg.value_coef * value_loss,
        approx_kl: kl / n,
        clip_fraction: clipped as f64 / n,
    };
    Ok((breakdown, grad))
}

/// Total loss only (the quantity [`loss_and_grad`] differentiates).
pub fn total_loss(params: &PolicyParams, batch: &[Transition], cfg: &PpoConfig) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::Empty("PPO batch"));
    }
    let n = batch.len() as f64;
    let mut surrogate = 0.0;
    let mut value_loss = 0.0;
    for tr in batch {
        let out = params.forward(&tr.features)?;
        let logp = gaussian_log_prob(&tr.action.z, &out.logit_mean, &out.log_std);
        let ratio = (logp - tr.action.log_prob).exp();
        surrogate += clipped_surrogate(ratio, tr.advantage, cfg.clip_epsilon);
        value_loss += 0.5 * (out.value - tr.return_to_go).powi(2);
    }
    let entropy = gaussian_entropy(&params.log_std);
    Ok(-surrogate / n - cfg.entropy_coef * entropy + cfg.value_coef * value_loss / n)
}

/// Optimizer memory carried across updates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

fn apply_step(params: &mut PolicyParams, grad: &PolicyParams, cfg: &PpoConfig, state: &mut OptimizerState) -> Result<()> {
    if let Some(block) = grad.first_non_finite_block() {
        return Err(Error::NonFinite { block });
    }
    let mut g = grad.to_flat();
    if let Some(max_norm) = cfg.max_grad_norm {
        let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > max_norm {
            let s = max_norm / norm;
            g.iter_mut().for_each(|v| *v *= s);
        }
    }
    let mut flat = params.to_flat();
    state.step += 1;
    match cfg.optimizer {
        OptimizerKind::Sgd => {
            for (p, gi) in flat.iter_mut().zip(&g) {
                *p -= cfg.learning_rate * gi;
            }
        }
        OptimizerKind::Adam => {
            const B1: f64 = 0.9;
            const B2: f64 = 0.999;
            const EPS: f64 = 1e-8;
            if state.first_moment.len() != flat.len() {
                state.first_moment = vec![0.0; flat.len()];
                state.second_moment = vec![0.0; flat.len()];
            }
            let c1 = 1.0 - B1.powi(state.step as i32);
            let c2 = 1.0 - B2.powi(state.step as i32);
            for i in 0..flat.len() {
                let m = &mut state.first_moment[i];
                let v = &mut state.second_moment[i];
                *m = B1 * *m + (1.0 - B1) * g[i];
                *v = B2 * *v + (1.0 - B2) * g[i] * g[i];
                flat[i] -= cfg.learning_rate * (*m / c1) / ((*v / c2).sqrt() + EPS);
            }
        }
    }
    params.set_flat(&flat)?;
    if let Some(block) = params.first_non_finite_block() {
        return Err(Error::NonFinite { block });
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainStats {
    /// Mean loss components over the minibatch steps of the update.
    pub losses: LossBreakdown,
    pub epochs_run: usize,
    pub early_stopped: bool,
    /// Approximate KL between the behavior and final policy on the batch.
    pub final_kl: f64,
}

/// One PPO update: shuffled minibatch descent on the total loss for the
/// configured epochs, stopping early when the batch KL passes the target.
pub fn ppo_update(
    params: &PolicyParams,
    batch: &[Transition],
    cfg: &PpoConfig,
    opt: &mut OptimizerState,
    rng: &mut ChaCha8Rng,
) -> Result<(PolicyParams, TrainStats)> {
    if batch.is_empty() {
        return Err(Error::Empty("PPO batch"));
    }
    let mut current = params.clone();
    let mut sum = LossBreakdown::default();
    let mut steps = 0usize;
    let mut stats = TrainStats::default();
    let mut order: Vec<usize> = (0..batch.len()).collect();

    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.minibatch_size) {
            let mb: Vec<Transition> = chunk.iter().map(|&i| batch[i].clone()).collect();
            let (l, grad) = loss_and_grad(&current, &mb, cfg)?;
            apply_step(&mut current, &grad, cfg, opt)?;
            sum.policy_loss += l.policy_loss;
            sum.value_loss += l.value_loss;
            sum.entropy += l.entropy;
            sum.total_loss += l.total_loss;
            sum.approx_kl += l.approx_kl;
            sum.clip_fraction += l.clip_fraction;
            steps += 1;
        }
        stats.epochs_run += 1;
        let kl = batch_kl(&current, batch)?;
        stats.final_kl = kl;
        if kl > cfg.target_kl {
            stats.early_stopped = true;
            break;
        }
    }
    let k = steps.max(1) as f64;
    stats.losses = LossBreakdown {
        policy_loss: sum.policy_loss / k,
        value_loss: sum.value_loss / k,
        entropy: sum.entropy / k,
        total_loss: sum.total_loss / k,
        approx_kl: sum.approx_kl / k,
        clip_fraction: sum.clip_fraction / k,
    };
    Ok((current, stats))
}

/// Mean of `(r - 1) - ln r` over the batch, a non-negative KL estimate.
pub fn batch_kl(params: &PolicyParams, batch: &[Transition]) -> Result<f64> {
    let mut kl = 0.0;
    for tr in batch {
        let out = params.forward(&tr.features)?;
        let log_ratio = gaussian_log_prob(&tr.action.z, &out.logit_mean, &out.log_std) - tr.action.log_prob;
        kl += log_ratio.exp() - 1.0 - log_ratio;
    }
    Ok(kl / batch.len() as f64)
}

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::rollout::{episode_seed, run_episode, EpisodeLog};
use super::{ActionMode, PolicyParams};
use crate::error::Result;
use crate::market::PortfolioEnv;
use crate::reward::RewardConfig;
use crate::stats::{mean, sample_std};

/// `sum_t gamma^t R_t`.
pub fn discounted_return(rewards: &[f64], gamma: f64) -> f64 {
    let mut acc = 0.0;
    for r in rewards.iter().rev() {
        acc = r + gamma * acc;
    }
    acc
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub mean: f64,
    pub std: f64,
    pub per_episode: Vec<f64>,
    pub mean_sim: f64,
    pub mean_exposure: f64,
}

/// Estimates `J = E[sum_t gamma^t R_t]` over seeded episodes. Episode start
/// offsets depend only on `seed`, so two policies evaluated with the same
/// seed see the same market paths.
pub fn evaluate_policy(
    params: &PolicyParams,
    env: &mut PortfolioEnv,
    reward_cfg: &RewardConfig,
    n_episodes: usize,
    gamma: f64,
    mode: ActionMode,
    seed: u64,
) -> Result<(Evaluation, Vec<EpisodeLog>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_episode = Vec::with_capacity(n_episodes);
    let mut logs = Vec::with_capacity(n_episodes);
    for e in 0..n_episodes {
        let (_, log) = run_episode(env, params, reward_cfg, episode_seed(seed, usize::MAX >> 44, e), mode, &mut rng)?;
        per_episode.push(discounted_return(&log.rewards, gamma));
        logs.push(log);
    }
    let sims: Vec<f64> = logs.iter().flat_map(|l| l.sims.iter().copied()).collect();
    let exposures: Vec<f64> = logs.iter().flat_map(|l| l.exposures.iter().copied()).collect();
    Ok((
        Evaluation {
            mean: mean(&per_episode),
            std: sample_std(&per_episode),
            per_episode,
            mean_sim: mean(&sims),
            mean_exposure: mean(&exposures),
        },
        logs,
    ))
}

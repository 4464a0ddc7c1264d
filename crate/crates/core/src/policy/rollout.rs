use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{sample_action, ActionMode, PolicyParams, Trajectory, Transition};
use crate::error::{Error, Result};
use crate::market::PortfolioEnv;
use crate::reward::{exposure, RewardConfig, RewardTracker};
use crate::risk::RiskVector;

/// Which investor profile conditions each training episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum RiskSampler {
    Fixed { risk: RiskVector },
    /// Cycles through the cohort, one profile per episode.
    Cohort { members: Vec<RiskVector> },
    /// Neutral profile with risk appetite uniform on `[low, high]`.
    UniformAppetite { low: f64, high: f64 },
}

impl RiskSampler {
    pub fn draw(&self, episode: usize, rng: &mut ChaCha8Rng) -> Result<RiskVector> {
        match self {
            RiskSampler::Fixed { risk } => Ok(*risk),
            RiskSampler::Cohort { members } => members
                .get(episode % members.len().max(1))
                .copied()
                .ok_or(Error::Empty("risk cohort")),
            RiskSampler::UniformAppetite { low, high } => {
                if !(0.0 <= *low && low <= high && *high <= 1.0) {
                    return Err(Error::Config(format!("appetite range [{low}, {high}] is not inside [0, 1]")));
                }
                Ok(RiskVector::with_appetite(low + (high - low) * rng.random::<f64>()))
            }
        }
    }
}

/// Per-step record of an episode, in step order.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub risk: Option<RiskVector>,
    pub rewards: Vec<f64>,
    pub realized_returns: Vec<f64>,
    pub sims: Vec<f64>,
    pub exposures: Vec<f64>,
    pub weights: Vec<Vec<f64>>,
}

impl EpisodeLog {
    pub fn mean_reward(&self) -> f64 {
        crate::stats::mean(&self.rewards)
    }
}

/// Runs one episode from the environment's current state to the end.
pub fn run_episode(
    env: &mut PortfolioEnv,
    params: &PolicyParams,
    reward_cfg: &RewardConfig,
    start_seed: u64,
    mode: ActionMode,
    rng: &mut ChaCha8Rng,
) -> Result<(Trajectory, EpisodeLog)> {
    let risk = env.risk();
    let mut state = env.reset(start_seed)?;
    let mut tracker = RewardTracker::new(*reward_cfg);
    let mut traj = Trajectory::default();
    let mut log = EpisodeLog {
        risk: Some(risk),
        ..Default::default()
    };
    loop {
        let features = params.state_features(&state);
        let out = params.forward(&features)?;
        let action = sample_action(&out, rng, mode);
        let (next, outcome) = env.step(&action.weights)?;
        let terms = tracker.step(outcome.realized_return, &risk, &action.weights, &state.rolling_vol);
        log.rewards.push(terms.reward);
        log.realized_returns.push(outcome.realized_return);
        log.sims.push(terms.sim);
        log.exposures.push(exposure(&action.weights, &state.rolling_vol));
        log.weights.push(action.weights.clone());
        traj.transitions.push(Transition {
            features,
            value: out.value,
            action,
            reward: terms.reward,
            advantage: 0.0,
            return_to_go: 0.0,
        });
        state = next;
        if outcome.done {
            break;
        }
    }
    traj.bootstrap_value = params.forward(&params.state_features(&state))?.value;
    Ok((traj, log))
}

/// Derives a reproducible per-episode seed.
pub fn episode_seed(base: u64, update: usize, episode: usize) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(base ^ 0x9E37_79B9_7F4A_7C15);
    rng.set_stream(((update as u64) << 20) | episode as u64);
    rng.random()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cohort_cycles() {
        let members = vec![RiskVector::with_appetite(0.1), RiskVector::with_appetite(0.9)];
        let s = RiskSampler::Cohort { members };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert_eq!(s.draw(3, &mut rng).unwrap().risk_appetite, 0.9);
        assert_eq!(s.draw(4, &mut rng).unwrap().risk_appetite, 0.1);
        assert!(RiskSampler::Cohort { members: vec![] }.draw(0, &mut rng).is_err());
        assert!(RiskSampler::UniformAppetite { low: 0.5, high: 0.2 }.draw(0, &mut rng).is_err());
    }

    #[test]
    fn episode_seeds_differ() {
        assert_ne!(episode_seed(1, 0, 0), episode_seed(1, 0, 1));
        assert_ne!(episode_seed(1, 0, 0), episode_seed(1, 1, 0));
        assert_eq!(episode_seed(5, 2, 3), episode_seed(5, 2, 3));
    }
}

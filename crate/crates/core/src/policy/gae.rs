use serde::{Deserialize, Serialize};

use super::AllocationAction;
use crate::error::{Error, Result};

/// One PPO sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub features: Vec<f64>,
    pub action: AllocationAction,
    pub reward: f64,
    pub value: f64,
    pub advantage: f64,
    pub return_to_go: f64,
}

/// A contiguous run of transitions plus the value of the state after the
/// last one (episodes are time-truncated, so the tail is bootstrapped).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub transitions: Vec<Transition>,
    pub bootstrap_value: f64,
}

/// Generalized advantage estimation over plain slices. `values` holds one
/// entry per reward plus the bootstrap value. Returns `(advantages,
/// returns_to_go)`.
pub fn gae(rewards: &[f64], values: &[f64], gamma: f64, lambda: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if rewards.is_empty() {
        return Err(Error::Empty("trajectory"));
    }
    if values.len() != rewards.len() + 1 {
        return Err(Error::Dimension {
            context: "GAE values (rewards + bootstrap)",
            expected: rewards.len() + 1,
            actual: values.len(),
        });
    }
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut running = 0.0;
    for t in (0..n).rev() {
        let delta = rewards[t] + gamma * values[t + 1] - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
    }
    let returns = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    Ok((adv, returns))
}

/// Fills `advantage` and `return_to_go` on every transition.
pub fn gae_advantages(trajectory: &mut Trajectory, gamma: f64, lambda: f64) -> Result<()> {
    let rewards: Vec<f64> = trajectory.transitions.iter().map(|t| t.reward).collect();
    let mut values: Vec<f64> = trajectory.transitions.iter().map(|t| t.value).collect();
    values.push(trajectory.bootstrap_value);
    let (adv, ret) = gae(&rewards, &values, gamma, lambda)?;
    for ((t, a), r) in trajectory.transitions.iter_mut().zip(adv).zip(ret) {
        t.advantage = a;
        t.return_to_go = r;
    }
    Ok(())
}

/// Shifts and scales batch advantages to mean 0 and unit variance. A
/// constant batch is only centered.
pub fn normalize_advantages(batch: &mut [Transition]) {
    if batch.is_empty() {
        return;
    }
    let n = batch.len() as f64;
    let mean = batch.iter().map(|t| t.advantage).sum::<f64>() / n;
    let var = batch.iter().map(|t| (t.advantage - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for t in batch.iter_mut() {
        t.advantage -= mean;
        if std > 1e-12 {
            t.advantage /= std;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lambda_zero_is_td_error() {
        let r = [0.3, -0.1, 0.7];
        let v = [0.1, 0.2, -0.4, 0.5];
        let (adv, ret) = gae(&r, &v, 0.9, 0.0).unwrap();
        for t in 0..3 {
            assert_eq!(adv[t], r[t] + 0.9 * v[t + 1] - v[t]);
            assert_eq!(ret[t], adv[t] + v[t]);
        }
    }

    #[test]
    fn gamma_zero_is_myopic() {
        let r = [0.3, -0.1, 0.7];
        let v = [0.1, 0.2, -0.4, 0.5];
        let (adv, _) = gae(&r, &v, 0.0, 0.95).unwrap();
        for t in 0..3 {
            assert_eq!(adv[t], r[t] - v[t]);
        }
    }

    #[test]
    fn hand_recursion() {
        let (adv, _) = gae(&[1.0, 1.0], &[0.0, 0.0, 0.0], 0.5, 1.0).unwrap();
        assert_eq!(adv, vec![1.5, 1.0]);
    }

    #[test]
    fn errors() {
        assert!(gae(&[], &[0.0], 0.9, 0.9).is_err());
        assert!(gae(&[1.0], &[0.0], 0.9, 0.9).is_err());
    }
}

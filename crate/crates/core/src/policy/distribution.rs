use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::PolicyOutput;
use crate::stats::softmax;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// A sampled allocation: latent logits `z`, the simplex weights
/// `softmax(z)` and the Gaussian log-density of `z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AllocationAction {
    pub z: Vec<f64>,
    pub weights: Vec<f64>,
    pub log_prob: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    /// `z ~ N(mean, diag(exp(log_std)^2))`.
    Stochastic,
    /// `z = mean` (zero-noise limit); the density is evaluated at the mode.
    Deterministic,
}

/// Diagonal Gaussian log-density of `z`.
pub fn gaussian_log_prob(z: &[f64], mean: &[f64], log_std: &[f64]) -> f64 {
    z.iter()
        .zip(mean)
        .zip(log_std)
        .map(|((z, m), ls)| {
            let u = (z - m) * (-ls).exp();
            -0.5 * u * u - ls - HALF_LN_2PI
        })
        .sum()
}

/// Differential entropy of the diagonal Gaussian.
pub fn gaussian_entropy(log_std: &[f64]) -> f64 {
    log_std.iter().map(|ls| ls + 0.5 + HALF_LN_2PI).sum()
}

pub fn sample_action<R: Rng + ?Sized>(dist: &PolicyOutput, rng: &mut R, mode: ActionMode) -> AllocationAction {
    let z: Vec<f64> = match mode {
        ActionMode::Deterministic => dist.logit_mean.clone(),
        ActionMode::Stochastic => dist
            .logit_mean
            .iter()
            .zip(&dist.log_std)
            .map(|(m, ls)| m + ls.exp() * rng.sample::<f64, _>(StandardNormal))
            .collect(),
    };
    let log_prob = gaussian_log_prob(&z, &dist.logit_mean, &dist.log_std);
    AllocationAction {
        weights: softmax(&z),
        z,
        log_prob,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dist(mean: Vec<f64>, log_std: f64) -> PolicyOutput {
        let n = mean.len();
        PolicyOutput { logit_mean: mean, log_std: vec![log_std; n], value: 0.0 }
    }

    #[test]
    fn deterministic_uniform() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = sample_action(&dist(vec![0.0; 4], -3.0), &mut rng, ActionMode::Deterministic);
        assert!(a.weights.iter().all(|w| (w - 0.25).abs() < 1e-15));
    }

    #[test]
    fn deterministic_ln2_logit() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let a = sample_action(&dist(vec![2f64.ln(), 0.0, 0.0], 0.0), &mut rng, ActionMode::Deterministic);
        let expected = [0.5, 0.25, 0.25];
        for (w, e) in a.weights.iter().zip(expected) {
            assert!((w - e).abs() < 1e-15);
        }
    }

    #[test]
    fn log_prob_at_mode() {
        let log_std = [-0.7, 0.2, 1.1];
        let mean = [0.4, -1.0, 2.0];
        let lp = gaussian_log_prob(&mean, &mean, &log_std);
        let hand: f64 = log_std.iter().map(|ls| -ls - 0.5 * (2.0 * std::f64::consts::PI).ln()).sum();
        assert!((lp - hand).abs() < 1e-14);
    }

    #[test]
    fn stochastic_samples_are_seeded_and_on_simplex() {
        let d = dist(vec![3.0, -2.0, 0.5, 40.0], 1.0);
        let a = sample_action(&d, &mut ChaCha8Rng::seed_from_u64(9), ActionMode::Stochastic);
        let b = sample_action(&d, &mut ChaCha8Rng::seed_from_u64(9), ActionMode::Stochastic);
        assert_eq!(a, b);
        assert!((a.weights.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert_eq!(a.log_prob, gaussian_log_prob(&a.z, &d.logit_mean, &d.log_std));
    }

    #[test]
    fn entropy_of_standard_normal() {
        let h = gaussian_entropy(&[0.0]);
        assert!((h - 0.5 * (2.0 * std::f64::consts::PI * std::f64::consts::E).ln()).abs() < 1e-14);
    }
}

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ppo::{loss_and_grad, total_loss, PpoConfig};
use super::{sample_action, ActionMode, NetworkShape, PolicyParams, Transition};
use crate::error::Result;

/// Step of the five-point central stencil. Its truncation error is
/// O(h^4), so a step this large keeps rounding noise far below 1e-8 while
/// staying clear of the surrogate's clip kinks.
pub const FD_STEP: f64 = 5e-4;
/// Magnitude floor in the relative-error denominator, so that entries whose
/// true gradient is zero are judged on absolute error.
pub const REL_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_block: String,
    pub worst_index: usize,
    pub n_params: usize,
    pub tolerance: f64,
    pub passed: bool,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

/// Compares the analytic gradient of the total PPO loss with central finite
/// differences (five-point stencil) over every parameter.
pub fn grad_check(params: &PolicyParams, batch: &[Transition], cfg: &PpoConfig, tolerance: f64) -> Result<GradCheckReport> {
    let (_, grad) = loss_and_grad(params, batch, cfg)?;
    let analytic = grad.to_flat();
    let base = params.to_flat();
    let names: Vec<(String, usize)> = params.blocks().into_iter().map(|(n, b)| (n, b.len())).collect();

    let mut probe = params.clone();
    let mut flat = base.clone();
    let mut at = |i: usize, delta: f64| -> Result<f64> {
        flat[i] = base[i] + delta;
        probe.set_flat(&flat)?;
        let loss = total_loss(&probe, batch, cfg);
        flat[i] = base[i];
        loss
    };
    let mut worst = (0.0f64, 0usize);
    for i in 0..base.len() {
        let h = FD_STEP;
        let near = at(i, h)? - at(i, -h)?;
        let far = at(i, 2.0 * h)? - at(i, -2.0 * h)?;
        let numeric = (8.0 * near - far) / (12.0 * h);
        let err = relative_error(analytic[i], numeric);
        if err > worst.0 || err.is_nan() {
            worst = (err, i);
        }
    }

    let mut offset = worst.1;
    let mut worst_block = String::new();
    for (name, len) in &names {
        if offset < *len {
            worst_block = name.clone();
            break;
        }
        offset -= len;
    }
    Ok(GradCheckReport {
        max_rel_error: worst.0,
        worst_block,
        worst_index: offset,
        n_params: base.len(),
        tolerance,
        passed: worst.0 < tolerance,
    })
}

/// A seeded random `(params, batch)` pair for gradient checks. Behavior
/// log-probabilities are offset from the current ones so that ratios land
/// both inside the clip band and well outside it, but never within 0.05 of
/// a clip kink where finite differences are meaningless.
pub fn random_instance(shape: &NetworkShape, batch_size: usize, seed: u64) -> Result<(PolicyParams, Vec<Transition>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut params = PolicyParams::init(shape, -0.5, rng.random());
    let mut flat = params.to_flat();
    for v in &mut flat {
        *v += 0.3 * (rng.random::<f64>() * 2.0 - 1.0);
    }
    params.set_flat(&flat)?;
    let mut batch = Vec::with_capacity(batch_size);
    for _ in 0..batch_size {
        let features: Vec<f64> = (0..shape.input_dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let out = params.forward(&features)?;
        let mut action = sample_action(&out, &mut rng, ActionMode::Stochastic);
        let logp = action.log_prob;
        // ln(1.15) < 0.14 and ln(1.25) > 0.22 (eps = 0.2).
        let offset = if rng.random::<bool>() {
            rng.random_range(-0.1..0.1)
        } else {
            let m = rng.random_range(0.3..0.6);
            if rng.random::<bool>() { m } else { -m }
        };
        action.log_prob = logp - offset;
        batch.push(Transition {
            features,
            value: out.value,
            action,
            reward: 0.0,
            advantage: rng.random::<f64>() * 2.0 - 1.0,
            return_to_go: rng.random::<f64>() * 2.0 - 1.0,
        });
    }
    Ok((params, batch))
}

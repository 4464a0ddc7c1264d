use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::ppo::{OptimizerState, PpoConfig};
use super::rollout::RiskSampler;
use super::{NetworkShape, PolicyParams};
use crate::error::{Error, Result};
use crate::market::EnvParams;
use crate::reward::RewardConfig;

pub const CHECKPOINT_VERSION: u32 = 1;

/// Exact position of a ChaCha8 stream.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: [u8; 32],
    pub stream: u64,
    /// 128-bit word position, kept as a decimal string for JSON.
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self {
            seed: rng.get_seed(),
            stream: rng.get_stream(),
            word_pos: rng.get_word_pos().to_string(),
        }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        let pos: u128 = self
            .word_pos
            .parse()
            .map_err(|_| Error::Config(format!("bad rng word position `{}`", self.word_pos)))?;
        let mut rng = ChaCha8Rng::from_seed(self.seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(pos);
        Ok(rng)
    }
}

/// Everything needed to resume training bit-for-bit: network shape, flat
/// parameters, configuration, optimizer memory and RNG position.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub version: u32,
    pub shape: NetworkShape,
    pub params: Vec<f64>,
    pub input_scale: Vec<f64>,
    pub risk_conditioned: bool,
    pub ppo: PpoConfig,
    pub reward: RewardConfig,
    pub env: EnvParams,
    pub sampler: RiskSampler,
    pub updates_done: usize,
    pub optimizer: OptimizerState,
    pub rng: RngState,
}

impl Checkpoint {
    pub fn policy(&self) -> Result<PolicyParams> {
        let mut p = PolicyParams::zeros(&self.shape).with_input_scale(self.input_scale.clone())?;
        p.set_flat(&self.params)?;
        p.risk_conditioned = self.risk_conditioned;
        Ok(p)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, serde_json::to_string(self)?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if c.version != CHECKPOINT_VERSION {
            return Err(Error::Config(format!(
                "checkpoint version {} is not supported (expected {CHECKPOINT_VERSION})",
                c.version
            )));
        }
        c.policy()?;
        Ok(c)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn rng_state_roundtrip_continues_stream() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..37 {
            rng.random::<u64>();
        }
        let state = RngState::capture(&rng);
        let json = serde_json::to_string(&state).unwrap();
        let mut back = serde_json::from_str::<RngState>(&json).unwrap().restore().unwrap();
        for _ in 0..10 {
            assert_eq!(rng.random::<u64>(), back.random::<u64>());
        }
    }
}

//! Actor-critic allocation policy and its PPO training loop.
//!
//! The policy outputs a diagonal Gaussian over per-asset logits; the
//! allocation is the softmax of a sample, so weights always lie on the
//! simplex.

pub mod checkpoint;
pub mod distribution;
pub mod evaluate;
pub mod gae;
pub mod gradcheck;
pub mod network;
pub mod ppo;
pub mod rollout;
pub mod train;

pub use checkpoint::{Checkpoint, RngState, CHECKPOINT_VERSION};
pub use distribution::{gaussian_entropy, gaussian_log_prob, sample_action, ActionMode, AllocationAction};
pub use evaluate::{discounted_return, evaluate_policy, Evaluation};
pub use gae::{gae, gae_advantages, normalize_advantages, Trajectory, Transition};
pub use gradcheck::{grad_check, random_instance, relative_error, GradCheckReport, FD_STEP, REL_ERROR_FLOOR};
pub use network::{Dense, ForwardCache, NetworkShape, PolicyOutput, PolicyParams};
pub use ppo::{
    batch_kl, clipped_surrogate, loss_and_grad, ppo_update, total_loss, LossBreakdown, OptimizerKind,
    OptimizerState, PpoConfig, TrainStats,
};
pub use rollout::{episode_seed, run_episode, EpisodeLog, RiskSampler};
pub use train::{input_scale_for, write_loss_curve, TrainSetup, Trainer, UpdateRecord, LOSS_CURVE_HEADER};

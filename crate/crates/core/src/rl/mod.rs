//! Learning the clock step: the auction as an episodic decision process and
//! a proximal policy optimization trainer.

mod checkpoint;
mod env;
pub mod nn;
mod ppo;
mod train;

pub use checkpoint::{Checkpoint, CHECKPOINT_FORMAT, CHECKPOINT_VERSION};
pub use env::{DdaEnv, EnvConfig, EpisodeSummary, RewardMode, SellerGainClock, StepResult};
pub use ppo::{
    discounted_returns, gae_advantages, ppo_loss_and_grads, ppo_update, Batch, LossParts,
    PpoOptimizer, PpoParams, UpdateStats,
};
pub use train::{train, write_curves_csv, CurvePoint, TrainConfig, TrainOutput, SMOOTHING_WINDOW};

use nn::{log_softmax, softmax, Mlp};

/// Separate actor and critic networks over the same observation.
#[derive(Debug, Clone, PartialEq)]
pub struct ActorCritic {
    pub actor: Mlp,
    pub critic: Mlp,
}

impl ActorCritic {
    /// Actor output is scaled down so the initial policy is close to
    /// uniform.
    pub fn new(obs_dim: usize, hidden: &[usize], actions: usize, seed: u64) -> Self {
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend_from_slice(hidden);
        let mut critic_sizes = actor_sizes.clone();
        actor_sizes.push(actions);
        critic_sizes.push(1);
        Self {
            actor: Mlp::seeded(&actor_sizes, 0.01, seed),
            critic: Mlp::seeded(&critic_sizes, 1.0, seed.wrapping_add(0x9e37_79b9)),
        }
    }

    pub fn action_bound(&self) -> usize {
        self.actor.output_dim()
    }

    pub fn actor_logits(&self, x: &[f64]) -> Vec<f64> {
        self.actor.forward(x)
    }

    pub fn action_probs(&self, x: &[f64]) -> Vec<f64> {
        softmax(&self.actor.forward(x))
    }

    pub fn log_probs(&self, x: &[f64]) -> Vec<f64> {
        log_softmax(&self.actor.forward(x))
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.critic.forward(x)[0]
    }

    pub fn is_finite(&self) -> bool {
        self.actor
            .params
            .iter()
            .chain(&self.critic.params)
            .all(|p| p.is_finite())
    }
}

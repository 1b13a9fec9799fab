use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::nn::{clip_grad_norm, log_softmax, Adam};
use super::ActorCritic;
use crate::error::{DdaError, Result};
use crate::policy::OBS_DIM;

/// Discounted returns `G_t = r_t + gamma * G_{t+1}`, restarting after each
/// `done`. `bootstrap` stands in for the return after the final step when
/// the last episode was cut off.
pub fn discounted_returns(rewards: &[f64], dones: &[bool], gamma: f64, bootstrap: f64) -> Vec<f64> {
    assert_eq!(rewards.len(), dones.len());
    let mut out = vec![0.0; rewards.len()];
    let mut next = bootstrap;
    for t in (0..rewards.len()).rev() {
        if dones[t] {
            next = 0.0;
        }
        next = rewards[t] + gamma * next;
        out[t] = next;
    }
    out
}

/// Generalized advantage estimates; `values[t]` is the critic's estimate at
/// step `t` and `bootstrap` the estimate after the last step.
pub fn gae_advantages(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    gamma: f64,
    lambda: f64,
    bootstrap: f64,
) -> Vec<f64> {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut next_value = bootstrap;
    let mut running = 0.0;
    for t in (0..n).rev() {
        if dones[t] {
            next_value = 0.0;
            running = 0.0;
        }
        let delta = rewards[t] + gamma * next_value - values[t];
        running = delta + gamma * lambda * running;
        adv[t] = running;
        next_value = values[t];
    }
    adv
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoParams {
    pub clip_ratio: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub epochs: usize,
    pub minibatch_size: usize,
    pub max_grad_norm: f64,
}

impl Default for PpoParams {
    fn default() -> Self {
        Self {
            clip_ratio: 0.2,
            entropy_coef: 0.01,
            value_coef: 0.5,
            epochs: 10,
            minibatch_size: 64,
            max_grad_norm: 0.5,
        }
    }
}

/// Rollout data, with observations already normalized.
#[derive(Debug, Clone, Default)]
pub struct Batch {
    pub obs: Vec<[f64; OBS_DIM]>,
    pub actions: Vec<usize>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Loss terms averaged over a minibatch.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct LossParts {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

impl LossParts {
    pub fn total(&self, p: &PpoParams) -> f64 {
        self.policy_loss - p.entropy_coef * self.entropy + p.value_coef * self.value_loss
    }
}

/// Clipped-surrogate loss on `indices` of `batch`, with gradients of
/// `LossParts::total` for the actor and critic parameters.
pub fn ppo_loss_and_grads(
    net: &ActorCritic,
    batch: &Batch,
    indices: &[usize],
    p: &PpoParams,
) -> (LossParts, Vec<f64>, Vec<f64>) {
    let mut actor_grad = vec![0.0; net.actor.params.len()];
    let mut critic_grad = vec![0.0; net.critic.params.len()];
    let mut parts = LossParts::default();
    let n = indices.len() as f64;
    for &i in indices {
        let x = &batch.obs[i];
        let a = batch.actions[i];
        let adv = batch.advantages[i];

        let cache = net.actor.forward_cached(x);
        let logp = log_softmax(cache.output());
        let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
        let ratio = (logp[a] - batch.old_log_probs[i]).exp();
        let clipped = ratio.clamp(1.0 - p.clip_ratio, 1.0 + p.clip_ratio);
        let surr = (ratio * adv).min(clipped * adv);
        let entropy: f64 = -probs.iter().zip(&logp).map(|(q, l)| q * l).sum::<f64>();

        parts.policy_loss -= surr / n;
        parts.entropy += entropy / n;
        parts.approx_kl += (batch.old_log_probs[i] - logp[a]) / n;
        if (ratio - 1.0).abs() > p.clip_ratio {
            parts.clip_fraction += 1.0 / n;
        }

        // d surr / d logp[a]: the unclipped branch is active when it is the
        // minimum or when the ratio lies inside the clip band.
        let unclipped_active = ratio * adv <= clipped * adv
            || (ratio > 1.0 - p.clip_ratio && ratio < 1.0 + p.clip_ratio);
        let dsurr = if unclipped_active { adv * ratio } else { 0.0 };
        let g_logits: Vec<f64> = (0..probs.len())
            .map(|j| {
                let onehot = if j == a { 1.0 } else { 0.0 };
                let d_policy = -dsurr * (onehot - probs[j]);
                let d_entropy = -probs[j] * (logp[j] + entropy);
                (d_policy - p.entropy_coef * d_entropy) / n
            })
            .collect();
        net.actor.backward(&cache, &g_logits, &mut actor_grad);

        let vcache = net.critic.forward_cached(x);
        let v = vcache.output()[0];
        let err = v - batch.returns[i];
        parts.value_loss += err * err / n;
        net.critic
            .backward(&vcache, &[p.value_coef * 2.0 * err / n], &mut critic_grad);
    }
    (parts, actor_grad, critic_grad)
}

/// Adam state for both networks.
#[derive(Debug, Clone)]
pub struct PpoOptimizer {
    pub actor: Adam,
    pub critic: Adam,
}

impl PpoOptimizer {
    pub fn new(net: &ActorCritic, lr: f64) -> Self {
        Self {
            actor: Adam::new(net.actor.params.len(), lr),
            critic: Adam::new(net.critic.params.len(), lr),
        }
    }
}

/// Runs `p.epochs` passes of shuffled minibatch descent on the batch.
pub fn ppo_update(
    net: &mut ActorCritic,
    opt: &mut PpoOptimizer,
    batch: &Batch,
    p: &PpoParams,
    rng: &mut impl Rng,
) -> Result<UpdateStats> {
    let mut stats = UpdateStats::default();
    if batch.is_empty() {
        return Ok(stats);
    }
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut count = 0.0;
    for _ in 0..p.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(p.minibatch_size.max(1)) {
            let (parts, mut ga, mut gc) = ppo_loss_and_grads(net, batch, chunk, p);
            let total = parts.total(p);
            if !total.is_finite() || ga.iter().chain(&gc).any(|g| !g.is_finite()) {
                return Err(DdaError::NonFinite(format!(
                    "PPO loss became non-finite (policy {}, value {}, entropy {})",
                    parts.policy_loss, parts.value_loss, parts.entropy
                )));
            }
            if p.max_grad_norm > 0.0 {
                clip_grad_norm(&mut ga, p.max_grad_norm);
                clip_grad_norm(&mut gc, p.max_grad_norm);
            }
            opt.actor.step(&mut net.actor.params, &ga);
            opt.critic.step(&mut net.critic.params, &gc);
            stats.policy_loss += parts.policy_loss;
            stats.value_loss += parts.value_loss;
            stats.entropy += parts.entropy;
            stats.approx_kl += parts.approx_kl;
            stats.clip_fraction += parts.clip_fraction;
            count += 1.0;
        }
    }
    stats.policy_loss /= count;
    stats.value_loss /= count;
    stats.entropy /= count;
    stats.approx_kl /= count;
    stats.clip_fraction /= count;
    Ok(stats)
}

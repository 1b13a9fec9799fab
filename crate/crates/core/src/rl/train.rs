use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::env::{DdaEnv, EnvConfig};
use super::ppo::{discounted_returns, gae_advantages, ppo_update, Batch, PpoOptimizer, PpoParams};
use super::{ActorCritic, Checkpoint};
use crate::error::{invalid, Result};
use crate::policy::{sample_categorical, OBS_DIM};

/// Iterations averaged by `CurvePoint::smoothed_regret`.
pub const SMOOTHING_WINDOW: usize = 10;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub env: EnvConfig,
    pub learning_rate: f64,
    pub discount: f64,
    /// Environment steps collected per policy update.
    pub rollout_length: usize,
    /// Number of collect-then-update iterations.
    pub iterations: usize,
    pub ppo: PpoParams,
    /// GAE(lambda) when set; plain return minus value otherwise.
    pub gae_lambda: Option<f64>,
    pub normalize_advantages: bool,
    pub hidden: Vec<usize>,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            env: EnvConfig::default(),
            learning_rate: 0.001,
            discount: 0.5,
            rollout_length: 2048,
            iterations: 244,
            ppo: PpoParams::default(),
            gae_lambda: None,
            normalize_advantages: true,
            hidden: vec![64, 64],
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.discount) {
            return Err(invalid("discount must lie in [0, 1]"));
        }
        if self.rollout_length < 1 {
            return Err(invalid("rollout_length must be >= 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(invalid("learning rate must be positive"));
        }
        if self.ppo.epochs < 1 || self.ppo.minibatch_size < 1 {
            return Err(invalid("epochs and minibatch size must be >= 1"));
        }
        if let Some(l) = self.gae_lambda {
            if !(0.0..=1.0).contains(&l) {
                return Err(invalid("gae_lambda must lie in [0, 1]"));
            }
        }
        if self.hidden.contains(&0) {
            return Err(invalid("hidden layer sizes must be positive"));
        }
        Ok(())
    }
}

/// Per-iteration training statistics; episode metrics are means over the
/// episodes that finished during the iteration's rollout.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurvePoint {
    pub iteration: usize,
    pub env_steps: u64,
    pub episodes: usize,
    pub regret: f64,
    pub sw_paper: f64,
    pub sw_econ: f64,
    pub cost: f64,
    pub mean_episode_length: f64,
    pub mean_step: f64,
    pub smoothed_regret: f64,
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub checkpoint: Checkpoint,
    pub curves: Vec<CurvePoint>,
}

#[derive(Default)]
struct EpisodeAccum {
    n: usize,
    regret: f64,
    sw_paper: f64,
    sw_econ: f64,
    cost: f64,
    length: f64,
}

/// Trains an auctioneer with PPO. Single-threaded and fully determined by
/// `config.seed`.
pub fn train(config: &TrainConfig) -> Result<TrainOutput> {
    config.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let k_max = config.env.action_bound as usize;
    let mut net = ActorCritic::new(OBS_DIM, &config.hidden, k_max, master.random());
    let mut action_rng = ChaCha8Rng::seed_from_u64(master.random());
    let mut update_rng = ChaCha8Rng::seed_from_u64(master.random());
    let mut opt = PpoOptimizer::new(&net, config.learning_rate);
    let norm = config.env.normalization();
    let mut env = DdaEnv::new(config.env.clone())?;
    let mut obs = env.reset(master.random())?;

    let mut curves: Vec<CurvePoint> = Vec::with_capacity(config.iterations);
    let mut env_steps = 0u64;
    let n = config.rollout_length;

    for iteration in 0..config.iterations {
        let mut batch = Batch::default();
        let mut rewards = Vec::with_capacity(n);
        let mut dones = Vec::with_capacity(n);
        let mut values = Vec::with_capacity(n);
        let mut acc = EpisodeAccum::default();
        let mut step_sum = 0.0;

        for _ in 0..n {
            let x = obs.normalized(&norm);
            let logp = net.log_probs(&x);
            let probs: Vec<f64> = logp.iter().map(|l| l.exp()).collect();
            let a = sample_categorical(&probs, &mut action_rng);
            values.push(net.value(&x));
            let res = env.step(a as u32 + 1)?;
            step_sum += (a + 1) as f64;
            batch.obs.push(x);
            batch.actions.push(a);
            batch.old_log_probs.push(logp[a]);
            rewards.push(res.reward);
            dones.push(res.done);
            if res.done {
                let s = env.summary().expect("finished episode has a summary");
                acc.n += 1;
                acc.regret += s.report.total_regret;
                acc.sw_paper += s.report.social_welfare_paper;
                acc.sw_econ += s.report.social_welfare_econ;
                acc.cost += s.report.broadcast_cost;
                acc.length += f64::from(s.length);
                obs = env.reset(master.random())?;
            } else {
                obs = res.obs;
            }
        }
        env_steps += n as u64;

        let bootstrap = if *dones.last().expect("n >= 1") {
            0.0
        } else {
            net.value(&obs.normalized(&norm))
        };
        batch.returns = discounted_returns(&rewards, &dones, config.discount, bootstrap);
        let mut adv = match config.gae_lambda {
            Some(lambda) => gae_advantages(
                &rewards,
                &values,
                &dones,
                config.discount,
                lambda,
                bootstrap,
            ),
            None => batch
                .returns
                .iter()
                .zip(&values)
                .map(|(g, v)| g - v)
                .collect(),
        };
        if config.normalize_advantages && adv.len() > 1 {
            let mean = adv.iter().sum::<f64>() / adv.len() as f64;
            let var = adv.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / adv.len() as f64;
            let sd = var.sqrt();
            adv.iter_mut().for_each(|a| *a = (*a - mean) / (sd + 1e-8));
        }
        batch.advantages = adv;

        let stats = ppo_update(&mut net, &mut opt, &batch, &config.ppo, &mut update_rng)?;

        let mean = |v: f64| {
            if acc.n > 0 {
                v / acc.n as f64
            } else {
                f64::NAN
            }
        };
        let mut point = CurvePoint {
            iteration,
            env_steps,
            episodes: acc.n,
            regret: mean(acc.regret),
            sw_paper: mean(acc.sw_paper),
            sw_econ: mean(acc.sw_econ),
            cost: mean(acc.cost),
            mean_episode_length: mean(acc.length),
            mean_step: step_sum / n as f64,
            smoothed_regret: f64::NAN,
            policy_loss: stats.policy_loss,
            value_loss: stats.value_loss,
            entropy: stats.entropy,
        };
        curves.push(point);
        point.smoothed_regret = smoothed(&curves, |c| c.regret);
        *curves.last_mut().expect("just pushed") = point;
    }

    let mut checkpoint = Checkpoint::new(&net, norm);
    checkpoint.iterations = config.iterations as u64;
    checkpoint.env_steps = env_steps;
    checkpoint.seed = config.seed;
    Ok(TrainOutput { checkpoint, curves })
}

/// Mean of `f` over the trailing window, skipping iterations without
/// finished episodes.
fn smoothed(curves: &[CurvePoint], f: impl Fn(&CurvePoint) -> f64) -> f64 {
    let start = curves.len().saturating_sub(SMOOTHING_WINDOW);
    let vals: Vec<f64> = curves[start..]
        .iter()
        .map(f)
        .filter(|v| v.is_finite())
        .collect();
    if vals.is_empty() {
        f64::NAN
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

pub fn write_curves_csv(curves: &[CurvePoint], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    if curves.is_empty() {
        w.write_record([
            "iteration",
            "env_steps",
            "episodes",
            "regret",
            "sw_paper",
            "sw_econ",
            "cost",
            "mean_episode_length",
            "mean_step",
            "smoothed_regret",
            "policy_loss",
            "value_loss",
            "entropy",
        ])?;
    }
    for c in curves {
        w.serialize(c)?;
    }
    w.flush()?;
    Ok(())
}

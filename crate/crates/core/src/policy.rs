//! Auctioneer policies: how far to move the clock each round.

use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::auction::StepSize;
use crate::error::{invalid, DdaError, Result};
use crate::market::PriceGrid;
use crate::rl::{ActorCritic, Checkpoint};

/// Default largest step multiple shared by the random and learned policies.
pub const DEFAULT_ACTION_BOUND: u32 = 20;

pub const OBS_DIM: usize = 6;

/// What the auctioneer sees at the start of a round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub flag: u8,
    pub round: u32,
    pub buyer_clock: f64,
    pub seller_clock: f64,
    pub num_winning_buyers: usize,
    pub num_winning_sellers: usize,
}

/// Scales raw observations into network inputs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObsNormalization {
    pub price_offset: f64,
    pub price_scale: f64,
    pub round_scale: f64,
    pub count_scale: f64,
}

impl ObsNormalization {
    pub fn new(grid: &PriceGrid, market_size: usize) -> Self {
        Self {
            price_offset: grid.p_min,
            price_scale: grid.range(),
            round_scale: f64::from(grid.round_bound()),
            count_scale: market_size.max(1) as f64,
        }
    }
}

impl Observation {
    pub fn normalized(&self, n: &ObsNormalization) -> [f64; OBS_DIM] {
        [
            f64::from(self.flag),
            f64::from(self.round) / n.round_scale,
            (self.buyer_clock - n.price_offset) / n.price_scale,
            (self.seller_clock - n.price_offset) / n.price_scale,
            self.num_winning_buyers as f64 / n.count_scale,
            self.num_winning_sellers as f64 / n.count_scale,
        ]
    }
}

pub trait ClockPolicy {
    fn step(&mut self, obs: &Observation) -> Result<StepSize>;
    fn label(&self) -> String;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct VanillaPolicy;

impl ClockPolicy for VanillaPolicy {
    fn step(&mut self, _obs: &Observation) -> Result<StepSize> {
        Ok(StepSize::ONE)
    }
    fn label(&self) -> String {
        "vanilla".into()
    }
}

/// Uniform step multiple in `k_min..=k_max`.
#[derive(Debug, Clone)]
pub struct RandomPolicy {
    k_min: u32,
    k_max: u32,
    rng: ChaCha8Rng,
}

impl RandomPolicy {
    pub fn new(k_min: u32, k_max: u32, seed: u64) -> Result<Self> {
        if k_min < 1 || k_min > k_max {
            return Err(invalid(format!(
                "random policy needs 1 <= k_min <= k_max, got {k_min}..{k_max}"
            )));
        }
        Ok(Self {
            k_min,
            k_max,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

impl ClockPolicy for RandomPolicy {
    fn step(&mut self, _obs: &Observation) -> Result<StepSize> {
        StepSize::new(self.rng.random_range(self.k_min..=self.k_max))
    }
    fn label(&self) -> String {
        "random".into()
    }
}

#[derive(Debug, Clone)]
pub enum ActionMode {
    /// Most probable action, lowest index on ties.
    Greedy,
    Sample(ChaCha8Rng),
}

/// Actor network loaded from a checkpoint.
#[derive(Debug, Clone)]
pub struct LearnedPolicy {
    net: ActorCritic,
    norm: ObsNormalization,
    mode: ActionMode,
}

impl LearnedPolicy {
    pub fn new(net: ActorCritic, norm: ObsNormalization, mode: ActionMode) -> Self {
        Self { net, norm, mode }
    }

    pub fn from_checkpoint(ck: &Checkpoint, mode: ActionMode) -> Result<Self> {
        Ok(Self::new(ck.network()?, ck.normalization, mode))
    }

    pub fn load(path: &Path, mode: ActionMode) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?, mode)
    }

    pub fn action_bound(&self) -> u32 {
        self.net.action_bound() as u32
    }

    pub fn probabilities(&self, obs: &Observation) -> Vec<f64> {
        self.net.action_probs(&obs.normalized(&self.norm))
    }
}

pub(crate) fn argmax_lowest(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

pub(crate) fn sample_categorical(probs: &[f64], rng: &mut impl Rng) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

impl ClockPolicy for LearnedPolicy {
    fn step(&mut self, obs: &Observation) -> Result<StepSize> {
        let x = obs.normalized(&self.norm);
        let index = match &mut self.mode {
            ActionMode::Greedy => argmax_lowest(&self.net.actor_logits(&x)),
            ActionMode::Sample(rng) => sample_categorical(&self.net.action_probs(&x), rng),
        };
        StepSize::new(index as u32 + 1)
    }
    fn label(&self) -> String {
        "learned".into()
    }
}

/// Replays a fixed sequence of steps.
#[derive(Debug, Clone)]
pub struct ScriptedPolicy {
    steps: Vec<StepSize>,
    next: usize,
}

impl ScriptedPolicy {
    pub fn new(steps: Vec<StepSize>) -> Self {
        Self { steps, next: 0 }
    }
}

impl ClockPolicy for ScriptedPolicy {
    fn step(&mut self, _obs: &Observation) -> Result<StepSize> {
        let s = self
            .steps
            .get(self.next)
            .copied()
            .ok_or_else(|| DdaError::State("scripted policy ran out of steps".into()))?;
        self.next += 1;
        Ok(s)
    }
    fn label(&self) -> String {
        "scripted".into()
    }
}

/// Declarative description of a policy, as found in experiment configs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PolicySpec {
    Vanilla,
    Random {
        #[serde(default = "one")]
        k_min: u32,
        #[serde(default = "default_bound")]
        k_max: u32,
        #[serde(default)]
        seed: u64,
    },
    Learned {
        checkpoint: PathBuf,
    },
}

fn one() -> u32 {
    1
}
fn default_bound() -> u32 {
    DEFAULT_ACTION_BOUND
}

impl PolicySpec {
    pub fn name(&self) -> &'static str {
        match self {
            PolicySpec::Vanilla => "vanilla",
            PolicySpec::Random { .. } => "random",
            PolicySpec::Learned { .. } => "learned",
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            PolicySpec::Vanilla => Ok(()),
            PolicySpec::Random { k_min, k_max, .. } => {
                if *k_min < 1 || k_min > k_max || *k_max > DEFAULT_ACTION_BOUND {
                    return Err(invalid(format!(
                        "random policy needs 1 <= k_min <= k_max <= {DEFAULT_ACTION_BOUND}"
                    )));
                }
                Ok(())
            }
            PolicySpec::Learned { checkpoint } => {
                if !checkpoint.exists() {
                    return Err(DdaError::Config(format!(
                        "checkpoint {} not found",
                        checkpoint.display()
                    )));
                }
                Ok(())
            }
        }
    }
}

/// A ready-to-run policy built from a [`PolicySpec`].
#[derive(Debug, Clone)]
pub enum Policy {
    Vanilla(VanillaPolicy),
    Random(RandomPolicy),
    Learned(LearnedPolicy),
}

impl Policy {
    pub fn from_spec(spec: &PolicySpec) -> Result<Self> {
        spec.validate()?;
        Ok(match spec {
            PolicySpec::Vanilla => Policy::Vanilla(VanillaPolicy),
            PolicySpec::Random { k_min, k_max, seed } => {
                Policy::Random(RandomPolicy::new(*k_min, *k_max, *seed)?)
            }
            PolicySpec::Learned { checkpoint } => {
                Policy::Learned(LearnedPolicy::load(checkpoint, ActionMode::Greedy)?)
            }
        })
    }

    /// Fresh copy whose random stream (if any) is keyed by `seed`.
    pub fn reseeded(&self, seed: u64) -> Self {
        match self {
            Policy::Random(r) => Policy::Random(RandomPolicy {
                rng: ChaCha8Rng::seed_from_u64(seed),
                ..r.clone()
            }),
            other => other.clone(),
        }
    }
}

impl ClockPolicy for Policy {
    fn step(&mut self, obs: &Observation) -> Result<StepSize> {
        match self {
            Policy::Vanilla(p) => p.step(obs),
            Policy::Random(p) => p.step(obs),
            Policy::Learned(p) => p.step(obs),
        }
    }
    fn label(&self) -> String {
        match self {
            Policy::Vanilla(p) => p.label(),
            Policy::Random(p) => p.label(),
            Policy::Learned(p) => p.label(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rl::ActorCritic;

    fn obs(flag: u8, round: u32) -> Observation {
        Observation {
            flag,
            round,
            buyer_clock: 80.0,
            seller_clock: 20.0,
            num_winning_buyers: 2,
            num_winning_sellers: 1,
        }
    }

    #[test]
    fn vanilla_is_constant_one() {
        let mut p = VanillaPolicy;
        assert_eq!(p.step(&obs(0, 0)).unwrap().k(), 1);
        assert_eq!(p.step(&obs(1, 17)).unwrap().k(), 1);
        let grid = PriceGrid::default();
        assert_eq!(StepSize::ONE.value(&grid), grid.p_star);
    }

    #[test]
    fn random_is_uniform_and_reproducible() {
        let mut a = RandomPolicy::new(1, 20, 42).unwrap();
        let mut b = RandomPolicy::new(1, 20, 42).unwrap();
        let n = 10_000usize;
        let mut counts = [0usize; 20];
        for _ in 0..n {
            let ka = a.step(&obs(0, 0)).unwrap().k();
            assert_eq!(ka, b.step(&obs(0, 0)).unwrap().k());
            assert!((1..=20).contains(&ka));
            counts[ka as usize - 1] += 1;
        }
        // Each cell is Binomial(n, 1/20); 3 sigma band around n/20.
        let p = 1.0 / 20.0;
        let sigma = (n as f64 * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n as f64 * p).abs() < 3.0 * sigma, "count {c}");
        }
        let chi2: f64 = counts
            .iter()
            .map(|&c| (c as f64 - n as f64 * p).powi(2) / (n as f64 * p))
            .sum();
        // chi-squared with 19 dof, 99.9th percentile.
        assert!(chi2 < 43.82, "chi2 = {chi2}");
    }

    #[test]
    fn random_rejects_bad_ranges() {
        assert!(RandomPolicy::new(0, 3, 1).is_err());
        assert!(RandomPolicy::new(5, 3, 1).is_err());
    }

    #[test]
    fn uniform_logits_pick_lowest_step() {
        let mut net = ActorCritic::new(OBS_DIM, &[8, 8], 20, 1);
        net.actor.zero_output_layer();
        let norm = ObsNormalization::new(&PriceGrid::default(), 10);
        let mut p = LearnedPolicy::new(net, norm, ActionMode::Greedy);
        assert_eq!(p.step(&obs(0, 3)).unwrap().k(), 1);
        assert_eq!(p.step(&obs(1, 9)).unwrap().k(), 1);
    }

    #[test]
    fn learned_steps_stay_in_bounds_and_are_deterministic() {
        let net = ActorCritic::new(OBS_DIM, &[16, 16], 20, 7);
        let norm = ObsNormalization::new(&PriceGrid::default(), 10);
        let mut greedy = LearnedPolicy::new(net.clone(), norm, ActionMode::Greedy);
        let mut sampled =
            LearnedPolicy::new(net, norm, ActionMode::Sample(ChaCha8Rng::seed_from_u64(3)));
        for r in 0..50 {
            let o = obs((r % 2) as u8, r);
            let k1 = greedy.step(&o).unwrap().k();
            assert_eq!(k1, greedy.step(&o).unwrap().k());
            assert!((1..=20).contains(&k1));
            assert!((1..=20).contains(&sampled.step(&o).unwrap().k()));
            let probs = greedy.probabilities(&o);
            assert!((probs.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn normalization() {
        let n = ObsNormalization::new(&PriceGrid::default(), 10);
        let x = obs(1, 101).normalized(&n);
        assert_eq!(x, [1.0, 0.5, 0.8, 0.2, 0.2, 0.1]);
    }

    #[test]
    fn spec_toml_shapes() {
        let s: PolicySpec = toml::from_str("kind = \"random\"\nseed = 3").unwrap();
        assert_eq!(
            s,
            PolicySpec::Random {
                k_min: 1,
                k_max: 20,
                seed: 3
            }
        );
        let missing = PolicySpec::Learned {
            checkpoint: "/nonexistent/ck.json".into(),
        };
        assert!(matches!(missing.validate(), Err(DdaError::Config(_))));
    }
}

use serde::{Deserialize, Serialize};

use crate::auction::{AuctionFlag, AuctionState, StepSize};
use crate::error::{invalid, DdaError, Result};
use crate::market::{generate_market, MarketConfig, MarketInstance};
use crate::metrics::{social_welfare, EfficiencyReport};
use crate::policy::{ObsNormalization, Observation, DEFAULT_ACTION_BOUND};

/// Sign of the broadcast term in the per-round reward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// `-u + t * k_p * p_C`, exactly as the reward is written.
    CostAdded,
    /// `-u - k_p * t * p_C`: broadcast cost is a penalty.
    #[default]
    PenaltySubtracted,
}

/// Which clock the seller-round utility gain is measured against.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SellerGainClock {
    #[default]
    SellerClock,
    /// The buyer clock, as the gain formula literally reads.
    BuyerClock,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub market_size: usize,
    pub market: MarketConfig,
    pub penalty_factor: f64,
    pub reward_mode: RewardMode,
    pub seller_gain_clock: SellerGainClock,
    pub action_bound: u32,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            market_size: 10,
            market: MarketConfig::default(),
            penalty_factor: 0.01,
            reward_mode: RewardMode::default(),
            seller_gain_clock: SellerGainClock::default(),
            action_bound: DEFAULT_ACTION_BOUND,
        }
    }
}

impl EnvConfig {
    pub fn normalization(&self) -> ObsNormalization {
        ObsNormalization::new(&self.market.grid, self.market_size)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    /// Utility gain `u^t` of the participants who accepted this round.
    pub utility_gain: f64,
    pub owner: AuctionFlag,
    /// Broadcast cost `p_C^t` of this round.
    pub cost: f64,
}

/// Per-episode totals, available once the auction has terminated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeSummary {
    pub report: EfficiencyReport,
    pub buyer_gain: f64,
    pub seller_gain: f64,
    pub length: u32,
}

/// One auction per episode on a freshly generated market.
#[derive(Debug, Clone)]
pub struct DdaEnv {
    config: EnvConfig,
    market: Option<MarketInstance>,
    state: Option<AuctionState>,
    done: bool,
    buyer_gain: f64,
    seller_gain: f64,
    summary: Option<EpisodeSummary>,
}

impl DdaEnv {
    pub fn new(config: EnvConfig) -> Result<Self> {
        if config.market_size < 1 {
            return Err(invalid("market size must be >= 1"));
        }
        if config.action_bound < 1 {
            return Err(invalid("action bound must be >= 1"));
        }
        config.market.validate()?;
        Ok(Self {
            config,
            market: None,
            state: None,
            done: true,
            buyer_gain: 0.0,
            seller_gain: 0.0,
            summary: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn market(&self) -> Option<&MarketInstance> {
        self.market.as_ref()
    }

    pub fn state(&self) -> Option<&AuctionState> {
        self.state.as_ref()
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn summary(&self) -> Option<&EpisodeSummary> {
        self.summary.as_ref()
    }

    pub fn reset(&mut self, seed: u64) -> Result<Observation> {
        let market = generate_market(self.config.market_size, seed, &self.config.market)?;
        self.reset_with_market(market)
    }

    pub fn reset_with_market(&mut self, market: MarketInstance) -> Result<Observation> {
        let state = AuctionState::new(&market)?;
        let obs = state.observation();
        self.done = state.is_terminated();
        self.market = Some(market);
        self.state = Some(state);
        self.buyer_gain = 0.0;
        self.seller_gain = 0.0;
        self.summary = None;
        if self.done {
            self.finish()?;
        }
        Ok(obs)
    }

    /// Plays one auction round with clock step `k * p_star`.
    pub fn step(&mut self, k: u32) -> Result<StepResult> {
        if self.done {
            return Err(DdaError::State("step called on a finished episode".into()));
        }
        if k < 1 || k > self.config.action_bound {
            return Err(invalid(format!(
                "action {k} outside 1..={}",
                self.config.action_bound
            )));
        }
        let market = self.market.as_ref().expect("reset before step");
        let state = self.state.as_mut().expect("reset before step");
        let t = state.round();
        let owner = state.flag();
        let (buyer_clock, seller_clock) = (state.buyer_clock(), state.seller_clock());
        let record = state.play_round(StepSize::new(k)?)?;

        let utility_gain: f64 = match owner {
            AuctionFlag::BuyerRound => record
                .acceptors
                .iter()
                .map(|&m| market.buyers[m].valuation - buyer_clock)
                .sum(),
            AuctionFlag::SellerRound => {
                let clock = match self.config.seller_gain_clock {
                    SellerGainClock::SellerClock => seller_clock,
                    SellerGainClock::BuyerClock => buyer_clock,
                };
                record
                    .acceptors
                    .iter()
                    .map(|&n| clock - market.sellers[n].valuation)
                    .sum()
            }
        };
        match owner {
            AuctionFlag::BuyerRound => self.buyer_gain += utility_gain,
            AuctionFlag::SellerRound => self.seller_gain += utility_gain,
        }
        let cost = market.broadcast_unit_cost * f64::from(record.audience);
        let penalty = self.config.penalty_factor * f64::from(t) * cost;
        let reward = match self.config.reward_mode {
            RewardMode::CostAdded => -utility_gain + penalty,
            RewardMode::PenaltySubtracted => -utility_gain - penalty,
        };
        let obs = state.observation();
        self.done = record.terminated;
        if self.done {
            self.finish()?;
        }
        Ok(StepResult {
            obs,
            reward,
            done: self.done,
            utility_gain,
            owner,
            cost,
        })
    }

    fn finish(&mut self) -> Result<()> {
        let market = self.market.as_ref().expect("market set");
        let state = self.state.as_ref().expect("state set");
        let outcome = state.determine_winners()?;
        let report = social_welfare(&outcome, market, market.broadcast_unit_cost);
        self.summary = Some(EpisodeSummary {
            report,
            buyer_gain: self.buyer_gain,
            seller_gain: self.seller_gain,
            length: outcome.rounds_played,
        });
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metrics::regret_breakdown;

    fn env(k_p: f64, unit_cost: f64) -> DdaEnv {
        let mut cfg = EnvConfig {
            penalty_factor: k_p,
            ..EnvConfig::default()
        };
        cfg.market.broadcast_unit_cost = unit_cost;
        DdaEnv::new(cfg).unwrap()
    }

    #[test]
    fn reset_gives_initial_observation() {
        let mut e = env(0.01, 1.0);
        let o = e.reset(5).unwrap();
        assert_eq!(o.flag, 0);
        assert_eq!(o.round, 0);
        assert_eq!(o.buyer_clock, 100.0);
        assert_eq!(o.seller_clock, 0.0);
        assert_eq!((o.num_winning_buyers, o.num_winning_sellers), (0, 0));
        let mut e2 = env(0.01, 1.0);
        assert_eq!(e2.reset(5).unwrap(), o);
        assert_eq!(e.config().normalization().count_scale, 10.0);
    }

    #[test]
    fn penalty_only_round() {
        // Three quiet rounds, then a fourth at t = 3 with five listeners.
        let mut e = env(0.01, 1.0);
        let mut m = generate_market(5, 1, &e.config().market).unwrap();
        for b in &mut m.buyers {
            b.valuation = 50.0;
            b.bid = 50.0;
        }
        for s in &mut m.sellers {
            s.valuation = 40.0;
            s.bid = 40.0;
        }
        e.reset_with_market(m).unwrap();
        for _ in 0..3 {
            e.step(1).unwrap();
        }
        let r = e.step(1).unwrap();
        assert_eq!(r.utility_gain, 0.0);
        assert!((r.reward - (-0.15)).abs() < 1e-12, "{}", r.reward);

        let mut lit = env(0.01, 1.0);
        lit.config.reward_mode = RewardMode::CostAdded;
        let mut m = generate_market(5, 1, &lit.config().market).unwrap();
        m.buyers
            .iter_mut()
            .for_each(|b| (b.valuation, b.bid) = (50.0, 50.0));
        m.sellers
            .iter_mut()
            .for_each(|s| (s.valuation, s.bid) = (40.0, 40.0));
        lit.reset_with_market(m).unwrap();
        for _ in 0..3 {
            lit.step(1).unwrap();
        }
        assert!((lit.step(1).unwrap().reward - 0.15).abs() < 1e-12);
    }

    #[test]
    fn zero_penalty_quiet_round_is_zero() {
        let mut e = env(0.0, 1.0);
        e.reset(2).unwrap();
        let r = e.step(1).unwrap();
        if r.utility_gain == 0.0 {
            assert_eq!(r.reward, 0.0);
        }
    }

    #[test]
    fn buyer_gain_reward() {
        let mut e = env(0.0, 1.0);
        let mut m = generate_market(1, 1, &MarketConfig::default()).unwrap();
        (m.buyers[0].valuation, m.buyers[0].bid) = (10.0, 10.0);
        (m.sellers[0].valuation, m.sellers[0].bid) = (95.0, 95.0);
        e.reset_with_market(m).unwrap();
        // Buyer clock 100 -> 91 in one buyer round, one seller round in between.
        e.step(9).unwrap();
        e.step(1).unwrap();
        assert_eq!(e.state().unwrap().buyer_clock(), 91.0);
        // Drop to 9: buyer with value 10 accepts at 9 in the round after.
        e.step(82).unwrap_err();
        e.step(20).unwrap();
        e.step(1).unwrap();
        e.step(20).unwrap();
        e.step(1).unwrap();
        e.step(20).unwrap();
        e.step(1).unwrap();
        e.step(20).unwrap();
        e.step(1).unwrap();
        assert_eq!(e.state().unwrap().buyer_clock(), 11.0);
        e.step(2).unwrap();
        e.step(1).unwrap();
        let r = e.step(1).unwrap();
        assert_eq!(r.owner, AuctionFlag::BuyerRound);
        assert_eq!(r.utility_gain, 1.0);
        assert_eq!(r.reward, -1.0);
    }

    #[test]
    fn step_errors() {
        let mut e = env(0.01, 1.0);
        assert!(e.step(1).is_err());
        e.reset(1).unwrap();
        assert!(e.step(0).is_err());
        assert!(e.step(21).is_err());
        while !e.is_done() {
            e.step(20).unwrap();
        }
        assert!(matches!(e.step(1), Err(DdaError::State(_))));
    }

    #[test]
    fn gains_match_regret() {
        let mut e = env(0.01, 1.0);
        for seed in 0..20 {
            e.reset(seed).unwrap();
            let mut k = 1 + (seed as u32 % 7);
            while !e.is_done() {
                e.step(k).unwrap();
                k = k % 20 + 1;
            }
            let s = *e.summary().unwrap();
            let outcome = e.state().unwrap().determine_winners().unwrap();
            let r = regret_breakdown(&outcome, e.market().unwrap());
            assert!((s.buyer_gain - r.buyer).abs() < 1e-9);
            assert!((s.seller_gain - r.seller).abs() < 1e-9);
        }
    }
}

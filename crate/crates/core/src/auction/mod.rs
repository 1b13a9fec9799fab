//! Double Dutch auction state machine.
//!
//! Each round the auctioneer broadcasts one clock to the side that owns the
//! round, collects acceptances, records the acceptors as winners, moves the
//! owner's clock by the chosen step and checks for termination. Clocks are
//! kept as integer grid indices so that every comparison is exact.

mod trace;

pub use trace::{replay_trace, run_auction, AuctionTrace, RoundRecord, TRACE_SCHEMA_VERSION};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, DdaError, Result};
use crate::market::{MarketInstance, PriceGrid};
use crate::policy::Observation;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(into = "u8", try_from = "u8")]
pub enum AuctionFlag {
    #[default]
    BuyerRound,
    SellerRound,
}

impl AuctionFlag {
    pub fn as_u8(self) -> u8 {
        match self {
            AuctionFlag::BuyerRound => 0,
            AuctionFlag::SellerRound => 1,
        }
    }
}

impl From<AuctionFlag> for u8 {
    fn from(f: AuctionFlag) -> u8 {
        f.as_u8()
    }
}

impl TryFrom<u8> for AuctionFlag {
    type Error = String;
    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            0 => Ok(AuctionFlag::BuyerRound),
            1 => Ok(AuctionFlag::SellerRound),
            _ => Err(format!("auction flag must be 0 or 1, got {v}")),
        }
    }
}

/// Why the auction stopped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerminationReason {
    /// No active participant is left on either side (or a side was empty
    /// from the start).
    Exhausted,
    /// The buyer clock fell below the seller clock.
    Crossed,
}

/// Clock step as a positive multiple of the minimum price interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct StepSize {
    k: u32,
}

impl StepSize {
    pub const ONE: StepSize = StepSize { k: 1 };

    pub fn new(k: u32) -> Result<Self> {
        if k == 0 {
            return Err(invalid("step multiple must be >= 1"));
        }
        Ok(Self { k })
    }

    pub fn k(self) -> u32 {
        self.k
    }

    pub fn value(self, grid: &PriceGrid) -> f64 {
        f64::from(self.k) * grid.p_star
    }
}

/// Terminal result of an auction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionOutcome {
    /// (buyer id, seller id) in rank order.
    pub pairs: Vec<(usize, usize)>,
    pub num_pairs: usize,
    pub clearing_price: f64,
    /// Clock midpoint named by the winner rule, before it is bounded by the
    /// matched acceptance prices.
    pub midpoint_price: f64,
    /// Round index `T` at which the auction terminated.
    pub final_round: u32,
    /// Number of rounds actually played (length of the audience log).
    pub rounds_played: u32,
    pub terminal_flag: AuctionFlag,
    pub termination: TerminationReason,
    pub audience_log: Vec<u32>,
    pub winning_buyers: Vec<usize>,
    pub winning_sellers: Vec<usize>,
    pub accepted_buy_prices: Vec<f64>,
    pub accepted_sell_prices: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AuctionState {
    grid: PriceGrid,
    buyer_bids: Vec<i64>,
    seller_bids: Vec<i64>,
    flag: AuctionFlag,
    round: u32,
    buyer_clock: i64,
    seller_clock: i64,
    active_buyers: Vec<usize>,
    active_sellers: Vec<usize>,
    winning_buyers: Vec<usize>,
    winning_sellers: Vec<usize>,
    accepted_buy: Vec<i64>,
    accepted_sell: Vec<i64>,
    audience_log: Vec<u32>,
    terminated: bool,
    termination: Option<TerminationReason>,
    total_rounds: u32,
    // Owner and clocks as they stood when the current round was broadcast.
    round_owner: AuctionFlag,
    round_start_clocks: (i64, i64),
    in_round: bool,
}

/// Indices of `bids` ordered by bid (descending when `descending`), ties by
/// ascending id.
fn rank(bids: &[i64], descending: bool) -> Vec<usize> {
    let mut ids: Vec<usize> = (0..bids.len()).collect();
    ids.sort_by(|&a, &b| {
        let ord = bids[a].cmp(&bids[b]);
        let ord = if descending { ord.reverse() } else { ord };
        ord.then(a.cmp(&b))
    });
    ids
}

impl AuctionState {
    /// Sets up the auction: buyers ranked by non-increasing bid, sellers by
    /// non-decreasing bid, the buyer clock at `p_max` and the seller clock at
    /// `p_min`. A market with an empty side can never form a pair and is
    /// terminated immediately.
    pub fn new(market: &MarketInstance) -> Result<Self> {
        market.validate()?;
        let grid = market.grid;
        let buyer_bids: Vec<i64> = market.buyers.iter().map(|b| grid.ticks_of(b.bid)).collect();
        let seller_bids: Vec<i64> = market
            .sellers
            .iter()
            .map(|s| grid.ticks_of(s.bid))
            .collect();
        let active_buyers = rank(&buyer_bids, true);
        let active_sellers = rank(&seller_bids, false);
        let terminated = active_buyers.is_empty() || active_sellers.is_empty();
        let buyer_clock = grid.ticks();
        Ok(Self {
            grid,
            buyer_bids,
            seller_bids,
            flag: AuctionFlag::BuyerRound,
            round: 0,
            buyer_clock,
            seller_clock: 0,
            active_buyers,
            active_sellers,
            winning_buyers: Vec::new(),
            winning_sellers: Vec::new(),
            accepted_buy: Vec::new(),
            accepted_sell: Vec::new(),
            audience_log: Vec::new(),
            terminated,
            termination: terminated.then_some(TerminationReason::Exhausted),
            total_rounds: 0,
            round_owner: AuctionFlag::BuyerRound,
            round_start_clocks: (buyer_clock, 0),
            in_round: false,
        })
    }

    pub fn grid(&self) -> &PriceGrid {
        &self.grid
    }
    pub fn flag(&self) -> AuctionFlag {
        self.flag
    }
    pub fn round(&self) -> u32 {
        self.round
    }
    pub fn buyer_clock(&self) -> f64 {
        self.grid.price(self.buyer_clock)
    }
    pub fn seller_clock(&self) -> f64 {
        self.grid.price(self.seller_clock)
    }
    pub fn buyer_clock_ticks(&self) -> i64 {
        self.buyer_clock
    }
    pub fn seller_clock_ticks(&self) -> i64 {
        self.seller_clock
    }
    pub fn active_buyers(&self) -> &[usize] {
        &self.active_buyers
    }
    pub fn active_sellers(&self) -> &[usize] {
        &self.active_sellers
    }
    pub fn winning_buyers(&self) -> &[usize] {
        &self.winning_buyers
    }
    pub fn winning_sellers(&self) -> &[usize] {
        &self.winning_sellers
    }
    pub fn accepted_buy_prices(&self) -> Vec<f64> {
        self.accepted_buy
            .iter()
            .map(|&t| self.grid.price(t))
            .collect()
    }
    pub fn accepted_sell_prices(&self) -> Vec<f64> {
        self.accepted_sell
            .iter()
            .map(|&t| self.grid.price(t))
            .collect()
    }
    pub fn audience_log(&self) -> &[u32] {
        &self.audience_log
    }
    pub fn is_terminated(&self) -> bool {
        self.terminated
    }
    pub fn termination(&self) -> Option<TerminationReason> {
        self.termination
    }
    pub fn total_rounds(&self) -> u32 {
        self.total_rounds
    }
    pub fn round_owner(&self) -> AuctionFlag {
        self.round_owner
    }
    pub fn num_buyers(&self) -> usize {
        self.buyer_bids.len()
    }
    pub fn num_sellers(&self) -> usize {
        self.seller_bids.len()
    }

    pub fn observation(&self) -> Observation {
        Observation {
            flag: self.flag.as_u8(),
            round: self.round,
            buyer_clock: self.buyer_clock(),
            seller_clock: self.seller_clock(),
            num_winning_buyers: self.winning_buyers.len(),
            num_winning_sellers: self.winning_sellers.len(),
        }
    }

    fn ensure_running(&self, op: &str) -> Result<()> {
        if self.terminated {
            return Err(DdaError::State(format!("{op} called after termination")));
        }
        Ok(())
    }

    /// Broadcasts the owner's clock and logs the audience size.
    pub fn broadcast(&mut self) -> Result<u32> {
        self.ensure_running("broadcast")?;
        self.round_owner = self.flag;
        self.round_start_clocks = (self.buyer_clock, self.seller_clock);
        self.in_round = true;
        let audience = match self.flag {
            AuctionFlag::BuyerRound => self.active_buyers.len(),
            AuctionFlag::SellerRound => self.active_sellers.len(),
        } as u32;
        self.audience_log.push(audience);
        Ok(audience)
    }

    /// Active participants of the owning side whose bid admits the current
    /// clock, in rank order. Boundary prices are accepted.
    pub fn collect_acceptances(&self) -> Result<Vec<usize>> {
        self.ensure_running("collect_acceptances")?;
        Ok(match self.flag {
            AuctionFlag::BuyerRound => self
                .active_buyers
                .iter()
                .copied()
                .filter(|&m| self.buyer_clock <= self.buyer_bids[m])
                .collect(),
            AuctionFlag::SellerRound => self
                .active_sellers
                .iter()
                .copied()
                .filter(|&n| self.seller_clock >= self.seller_bids[n])
                .collect(),
        })
    }

    /// Moves acceptors from active to winning, logs the clock price once
    /// per acceptor and hands the next round to the other side if it still
    /// has active participants.
    pub fn record_acceptances(&mut self, accepted: &[usize]) -> Result<()> {
        self.ensure_running("record_acceptances")?;
        let (active, winning, log, clock) = match self.flag {
            AuctionFlag::BuyerRound => (
                &mut self.active_buyers,
                &mut self.winning_buyers,
                &mut self.accepted_buy,
                self.buyer_clock,
            ),
            AuctionFlag::SellerRound => (
                &mut self.active_sellers,
                &mut self.winning_sellers,
                &mut self.accepted_sell,
                self.seller_clock,
            ),
        };
        for (i, id) in accepted.iter().enumerate() {
            if !active.contains(id) || accepted[..i].contains(id) {
                return Err(DdaError::Protocol(format!(
                    "participant {id} is not active on the {:?} side",
                    self.flag
                )));
            }
        }
        // Preserve rank order among movers regardless of input order.
        let movers: Vec<usize> = active
            .iter()
            .copied()
            .filter(|id| accepted.contains(id))
            .collect();
        active.retain(|id| !movers.contains(id));
        for id in movers {
            winning.push(id);
            log.push(clock);
        }
        self.flag = match self.flag {
            AuctionFlag::BuyerRound if !self.active_sellers.is_empty() => AuctionFlag::SellerRound,
            AuctionFlag::SellerRound if !self.active_buyers.is_empty() => AuctionFlag::BuyerRound,
            f => f,
        };
        Ok(())
    }

    /// Moves the clock of the side that owned this round by `step`,
    /// clamped to the price range.
    pub fn adjust_clock(&mut self, step: StepSize) -> Result<()> {
        self.ensure_running("adjust_clock")?;
        let owner = if self.in_round {
            self.round_owner
        } else {
            self.flag
        };
        let delta = i64::from(step.k());
        match owner {
            AuctionFlag::BuyerRound => {
                self.buyer_clock = (self.buyer_clock - delta).max(0);
            }
            AuctionFlag::SellerRound => {
                self.seller_clock = (self.seller_clock + delta).min(self.grid.ticks());
            }
        }
        Ok(())
    }

    /// Ends the round. Returns true when both sides are exhausted or the
    /// clocks have crossed; otherwise advances the round counter.
    pub fn check_termination(&mut self) -> bool {
        if self.terminated {
            return true;
        }
        self.in_round = false;
        let exhausted = self.active_buyers.is_empty() && self.active_sellers.is_empty();
        if exhausted || self.buyer_clock < self.seller_clock {
            self.terminated = true;
            self.termination = Some(if exhausted {
                TerminationReason::Exhausted
            } else {
                TerminationReason::Crossed
            });
            self.total_rounds = self.round;
        } else {
            self.round += 1;
        }
        self.terminated
    }

    /// Plays one full round with the given step.
    pub fn play_round(&mut self, step: StepSize) -> Result<RoundRecord> {
        let round = self.round;
        let flag = self.flag;
        let (buyer_clock, seller_clock) = (self.buyer_clock(), self.seller_clock());
        let audience = self.broadcast()?;
        let acceptors = self.collect_acceptances()?;
        self.record_acceptances(&acceptors)?;
        self.adjust_clock(step)?;
        let terminated = self.check_termination();
        Ok(RoundRecord {
            round,
            flag,
            buyer_clock,
            seller_clock,
            step: step.k(),
            acceptors,
            audience,
            terminated,
        })
    }

    /// Applies the winner determination rule.
    ///
    /// With `w = min(|W_B|, |W_S|)`: a seller-owned terminal round prices at
    /// the midpoint of the round-start clocks, a buyer-owned one at the
    /// midpoint of the adjusted clocks. When the clocks crossed in a
    /// seller-owned round only the first `w - 1` pairs trade; otherwise the
    /// first `w` do. The price is then bounded to `[O_S(w'), O_B(w')]`, the
    /// marginal matched acceptance prices, which keeps every matched
    /// participant individually rational when a large step overshoots.
    pub fn determine_winners(&self) -> Result<AuctionOutcome> {
        if !self.terminated {
            return Err(DdaError::State(
                "determine_winners called before termination".into(),
            ));
        }
        let w = self.winning_buyers.len().min(self.winning_sellers.len());
        let crossed = self.termination == Some(TerminationReason::Crossed);
        let (num_pairs, half_ticks) = match self.round_owner {
            AuctionFlag::SellerRound => (
                if crossed { w.saturating_sub(1) } else { w },
                self.round_start_clocks.0 + self.round_start_clocks.1,
            ),
            AuctionFlag::BuyerRound => (w, self.buyer_clock + self.seller_clock),
        };
        let midpoint_price = self.grid.price_of_half_ticks(half_ticks);
        let mut clearing_half_ticks = half_ticks;
        if num_pairs > 0 {
            let lo = 2 * self.accepted_sell[num_pairs - 1];
            let hi = 2 * self.accepted_buy[num_pairs - 1];
            debug_assert!(lo <= hi, "matched acceptance band is empty");
            clearing_half_ticks = clearing_half_ticks.clamp(lo, hi.max(lo));
        }
        let pairs: Vec<(usize, usize)> = self.winning_buyers[..num_pairs]
            .iter()
            .copied()
            .zip(self.winning_sellers[..num_pairs].iter().copied())
            .collect();
        Ok(AuctionOutcome {
            pairs,
            num_pairs,
            clearing_price: self.grid.price_of_half_ticks(clearing_half_ticks),
            midpoint_price,
            final_round: self.total_rounds,
            rounds_played: self.audience_log.len() as u32,
            terminal_flag: self.round_owner,
            termination: self.termination.unwrap_or(TerminationReason::Exhausted),
            audience_log: self.audience_log.clone(),
            winning_buyers: self.winning_buyers.clone(),
            winning_sellers: self.winning_sellers.clone(),
            accepted_buy_prices: self.accepted_buy_prices(),
            accepted_sell_prices: self.accepted_sell_prices(),
        })
    }

    /// Test hook: overrides the clocks (grid indices) and flag.
    #[doc(hidden)]
    pub fn set_clocks_for_test(&mut self, buyer: i64, seller: i64, flag: AuctionFlag) {
        self.buyer_clock = buyer;
        self.seller_clock = seller;
        self.flag = flag;
    }
}

//! Market efficiency of a finished auction.
//!
//! Two welfare figures are reported. `social_welfare_paper` follows the
//! utility formulas literally: each matched buyer's utility is its valuation
//! minus the clock price it accepted, each matched seller's is the accepted
//! price minus its valuation. Under unit steps these gaps are zero, so the
//! literal welfare is roughly minus the broadcast cost. `social_welfare_econ`
//! is the gains from trade of the matched pairs, which does not depend on
//! the clearing price, minus the same cost.

use serde::{Deserialize, Serialize};

use crate::auction::AuctionOutcome;
use crate::market::MarketInstance;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyReport {
    pub buyer_utility: f64,
    pub seller_utility: f64,
    pub broadcast_cost: f64,
    pub social_welfare_paper: f64,
    pub social_welfare_econ: f64,
    pub total_regret: f64,
    pub num_pairs: usize,
    pub rounds: u32,
}

/// Regret split by side, over every accepting participant.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RegretBreakdown {
    pub buyer: f64,
    pub seller: f64,
}

impl RegretBreakdown {
    pub fn total(&self) -> f64 {
        self.buyer + self.seller
    }
}

pub fn buyer_utility(outcome: &AuctionOutcome, market: &MarketInstance) -> f64 {
    (0..outcome.num_pairs)
        .map(|i| {
            market.buyers[outcome.winning_buyers[i]].valuation - outcome.accepted_buy_prices[i]
        })
        .sum()
}

pub fn seller_utility(outcome: &AuctionOutcome, market: &MarketInstance) -> f64 {
    (0..outcome.num_pairs)
        .map(|i| {
            outcome.accepted_sell_prices[i] - market.sellers[outcome.winning_sellers[i]].valuation
        })
        .sum()
}

pub fn broadcast_cost(outcome: &AuctionOutcome, unit_cost: f64) -> f64 {
    unit_cost
        * outcome
            .audience_log
            .iter()
            .map(|&n| f64::from(n))
            .sum::<f64>()
}

pub fn regret_breakdown(outcome: &AuctionOutcome, market: &MarketInstance) -> RegretBreakdown {
    let buyer = outcome
        .winning_buyers
        .iter()
        .zip(&outcome.accepted_buy_prices)
        .map(|(&m, p)| market.buyers[m].valuation - p)
        .sum();
    let seller = outcome
        .winning_sellers
        .iter()
        .zip(&outcome.accepted_sell_prices)
        .map(|(&n, p)| p - market.sellers[n].valuation)
        .sum();
    RegretBreakdown { buyer, seller }
}

pub fn regret(outcome: &AuctionOutcome, market: &MarketInstance) -> f64 {
    regret_breakdown(outcome, market).total()
}

/// Gains from trade of the matched pairs, before broadcast cost.
pub fn gross_surplus(outcome: &AuctionOutcome, market: &MarketInstance) -> f64 {
    outcome
        .pairs
        .iter()
        .map(|&(m, n)| market.buyers[m].valuation - market.sellers[n].valuation)
        .sum()
}

pub fn social_welfare(
    outcome: &AuctionOutcome,
    market: &MarketInstance,
    unit_cost: f64,
) -> EfficiencyReport {
    let u_b = buyer_utility(outcome, market);
    let u_s = seller_utility(outcome, market);
    let p_c = broadcast_cost(outcome, unit_cost);
    EfficiencyReport {
        buyer_utility: u_b,
        seller_utility: u_s,
        broadcast_cost: p_c,
        social_welfare_paper: u_b + u_s - p_c,
        social_welfare_econ: gross_surplus(outcome, market) - p_c,
        total_regret: regret(outcome, market),
        num_pairs: outcome.num_pairs,
        rounds: outcome.rounds_played,
    }
}

/// Economic utility of each participant: matched buyers earn
/// `valuation - clearing_price`, matched sellers `clearing_price -
/// valuation`, everyone else zero.
pub fn participant_utilities(
    outcome: &AuctionOutcome,
    market: &MarketInstance,
) -> (Vec<f64>, Vec<f64>) {
    let mut buyers = vec![0.0; market.buyers.len()];
    let mut sellers = vec![0.0; market.sellers.len()];
    for &(m, n) in &outcome.pairs {
        buyers[m] = market.buyers[m].valuation - outcome.clearing_price;
        sellers[n] = outcome.clearing_price - market.sellers[n].valuation;
    }
    (buyers, sellers)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auction::{AuctionFlag, TerminationReason};
    use crate::market::{generate_market, MarketConfig};

    fn market_with(buyers: &[f64], sellers: &[f64]) -> MarketInstance {
        let mut m = generate_market(
            buyers.len().max(sellers.len()).max(1),
            1,
            &MarketConfig::default(),
        )
        .unwrap();
        m.buyers.truncate(buyers.len());
        m.sellers.truncate(sellers.len());
        for (b, v) in m.buyers.iter_mut().zip(buyers) {
            b.valuation = *v;
            b.bid = *v;
        }
        for (s, v) in m.sellers.iter_mut().zip(sellers) {
            s.valuation = *v;
            s.bid = *v;
        }
        m
    }

    fn outcome(
        pairs: usize,
        wb: Vec<usize>,
        ob: Vec<f64>,
        ws: Vec<usize>,
        os: Vec<f64>,
        log: Vec<u32>,
    ) -> AuctionOutcome {
        AuctionOutcome {
            pairs: wb
                .iter()
                .copied()
                .zip(ws.iter().copied())
                .take(pairs)
                .collect(),
            num_pairs: pairs,
            clearing_price: 5.0,
            midpoint_price: 5.0,
            final_round: log.len().saturating_sub(1) as u32,
            rounds_played: log.len() as u32,
            terminal_flag: AuctionFlag::BuyerRound,
            termination: TerminationReason::Exhausted,
            audience_log: log,
            winning_buyers: wb,
            winning_sellers: ws,
            accepted_buy_prices: ob,
            accepted_sell_prices: os,
        }
    }

    #[test]
    fn zero_pairs_zero_everything() {
        let m = market_with(&[10.0], &[2.0]);
        let o = outcome(0, vec![], vec![], vec![], vec![], vec![]);
        let r = social_welfare(&o, &m, 1.0);
        assert_eq!(r.buyer_utility, 0.0);
        assert_eq!(r.seller_utility, 0.0);
        assert_eq!(r.broadcast_cost, 0.0);
        assert_eq!(r.social_welfare_paper, 0.0);
        assert_eq!(r.social_welfare_econ, 0.0);
        assert_eq!(r.total_regret, 0.0);
    }

    #[test]
    fn single_pair_utilities() {
        let m = market_with(&[10.0], &[2.0]);
        let o = outcome(1, vec![0], vec![9.0], vec![0], vec![3.0], vec![1, 1]);
        assert_eq!(buyer_utility(&o, &m), 1.0);
        assert_eq!(seller_utility(&o, &m), 1.0);
        let r = social_welfare(&o, &m, 0.25);
        assert_eq!(r.broadcast_cost, 0.5);
        assert_eq!(r.social_welfare_paper, 1.5);
        assert_eq!(r.social_welfare_econ, 8.0 - 0.5);
    }

    #[test]
    fn broadcast_cost_sums_and_scales() {
        let o = outcome(0, vec![], vec![], vec![], vec![], vec![4, 4, 3]);
        assert_eq!(broadcast_cost(&o, 1.0), 11.0);
        assert_eq!(broadcast_cost(&o, 2.0), 22.0);
    }

    #[test]
    fn regret_counts_unmatched_winners() {
        let m = market_with(&[10.0, 8.0], &[2.0]);
        let o = outcome(
            1,
            vec![0, 1],
            vec![9.0, 6.0],
            vec![0],
            vec![3.0],
            vec![2, 1, 1],
        );
        let r = regret_breakdown(&o, &m);
        assert_eq!(r.buyer, 1.0 + 2.0);
        assert_eq!(r.seller, 1.0);
        assert_eq!(regret(&o, &m), 4.0);
        assert_eq!(buyer_utility(&o, &m), 1.0);
    }

    #[test]
    fn participant_utilities_use_clearing_price() {
        let m = market_with(&[10.0, 8.0], &[2.0, 4.0]);
        let o = outcome(
            1,
            vec![0, 1],
            vec![9.0, 6.0],
            vec![0, 1],
            vec![3.0, 4.0],
            vec![],
        );
        let (ub, us) = participant_utilities(&o, &m);
        assert_eq!(ub, vec![5.0, 0.0]);
        assert_eq!(us, vec![3.0, 0.0]);
    }
}

//! Randomized checks of the auction's protocol and economic properties.
//!
//! Every suite draws its markets from a single master seed so a failing
//! instance can be regenerated from the seed printed in its report.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::auction::{AuctionOutcome, AuctionState};
use crate::error::{invalid, Result};
use crate::market::{generate_market, MarketConfig, MarketInstance};
use crate::metrics::{gross_surplus, participant_utilities, regret};
use crate::policy::{
    ActionMode, ClockPolicy, LearnedPolicy, RandomPolicy, VanillaPolicy, DEFAULT_ACTION_BOUND,
    OBS_DIM,
};
use crate::rl::ActorCritic;

/// Tolerance for floating-point price comparisons.
const EPS: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub market_seed: u64,
    pub market_size: usize,
    pub policy: String,
    pub property: String,
    pub detail: String,
}

/// Plays `market` to the end under `policy`, checking every per-round
/// protocol property and the terminal IR and budget-balance properties.
pub fn check_auction(
    market: &MarketInstance,
    policy: &mut dyn ClockPolicy,
) -> Result<Vec<Violation>> {
    let mut found: Vec<(&'static str, String)> = Vec::new();
    let mut flag = |property: &'static str, detail: String| found.push((property, detail));
    let grid = market.grid;
    let bound = grid.round_bound();
    let mut state = AuctionState::new(market)?;
    let (nb, ns) = (market.buyers.len(), market.sellers.len());
    let mut rounds = 0u32;
    let (mut last_b, mut last_s) = (state.buyer_clock_ticks(), state.seller_clock_ticks());
    while !state.is_terminated() {
        if rounds >= bound {
            flag(
                "termination",
                format!("no termination within {bound} rounds"),
            );
            break;
        }
        let step = policy.step(&state.observation())?;
        state.play_round(step)?;
        rounds += 1;

        if !is_partition(state.active_buyers(), state.winning_buyers(), nb) {
            flag("partition", format!("buyer sets broken in round {rounds}"));
        }
        if !is_partition(state.active_sellers(), state.winning_sellers(), ns) {
            flag("partition", format!("seller sets broken in round {rounds}"));
        }
        let (b, s) = (state.buyer_clock_ticks(), state.seller_clock_ticks());
        if b > last_b || s < last_s {
            flag(
                "monotonicity",
                format!("clocks moved from ({last_b}, {last_s}) to ({b}, {s})"),
            );
        }
        if !(0..=grid.ticks()).contains(&b) || !(0..=grid.ticks()).contains(&s) {
            flag("grid", format!("clock index out of range: ({b}, {s})"));
        }
        if !grid.is_aligned(state.buyer_clock()) || !grid.is_aligned(state.seller_clock()) {
            flag("grid", format!("clock off grid in round {rounds}"));
        }
        (last_b, last_s) = (b, s);
    }
    if state.is_terminated() {
        let o = state.determine_winners()?;
        check_outcome(market, &o, &mut flag);
    }
    let label = policy.label();
    Ok(found
        .into_iter()
        .map(|(property, detail)| Violation {
            market_seed: market.rng_seed,
            market_size: market.size(),
            policy: label.clone(),
            property: property.into(),
            detail,
        })
        .collect())
}

fn check_outcome(
    market: &MarketInstance,
    o: &AuctionOutcome,
    flag: &mut impl FnMut(&'static str, String),
) {
    let grid = market.grid;
    for &(m, n) in &o.pairs {
        let (vb, vs) = (market.buyers[m].valuation, market.sellers[n].valuation);
        if vb < o.clearing_price - EPS || vs > o.clearing_price + EPS {
            flag(
                "individual_rationality",
                format!(
                    "pair ({m}, {n}) values ({vb}, {vs}) at price {}",
                    o.clearing_price
                ),
            );
        }
    }
    if !(grid.p_min..=grid.p_max).contains(&o.clearing_price) {
        flag(
            "clearing_price",
            format!("{} outside price range", o.clearing_price),
        );
    }
    let (ub, us) = participant_utilities(o, market);
    if ub.iter().chain(&us).any(|u| *u < -EPS) {
        flag(
            "individual_rationality",
            "negative participant utility".into(),
        );
    }
    let mut payers: Vec<usize> = o.pairs.iter().map(|p| p.0).collect();
    let mut payees: Vec<usize> = o.pairs.iter().map(|p| p.1).collect();
    payers.sort_unstable();
    payers.dedup();
    payees.sort_unstable();
    payees.dedup();
    let paid = payers.len() as f64 * o.clearing_price;
    let received = payees.len() as f64 * o.clearing_price;
    if paid != received || payers.len() != o.num_pairs {
        flag(
            "budget_balance",
            format!("paid {paid}, received {received}"),
        );
    }
    if o.pairs.len() != o.num_pairs
        || o.num_pairs > o.winning_buyers.len().min(o.winning_sellers.len())
    {
        flag(
            "pairs",
            format!(
                "{} pairs from {} and {} winners",
                o.num_pairs,
                o.winning_buyers.len(),
                o.winning_sellers.len()
            ),
        );
    }
}

fn is_partition(active: &[usize], winning: &[usize], n: usize) -> bool {
    let mut seen = vec![false; n];
    for &id in active.iter().chain(winning) {
        if id >= n || seen[id] {
            return false;
        }
        seen[id] = true;
    }
    seen.into_iter().all(|s| s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InvariantSuiteConfig {
    pub markets: usize,
    pub min_size: usize,
    pub max_size: usize,
    pub seed: u64,
    pub market: MarketConfig,
}

impl Default for InvariantSuiteConfig {
    fn default() -> Self {
        Self {
            markets: 1000,
            min_size: 2,
            max_size: 50,
            seed: 0,
            market: MarketConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub auctions: usize,
    pub violations: Vec<Violation>,
}

impl InvariantReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Runs every market under Vanilla, Random and an untrained learned policy.
pub fn run_invariant_suite(cfg: &InvariantSuiteConfig) -> Result<InvariantReport> {
    if cfg.min_size < 1 || cfg.min_size > cfg.max_size {
        return Err(invalid("invariant suite needs 1 <= min_size <= max_size"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = InvariantReport {
        auctions: 0,
        violations: Vec::new(),
    };
    for _ in 0..cfg.markets {
        let size = rng.random_range(cfg.min_size..=cfg.max_size);
        let market = generate_market(size, rng.random(), &cfg.market)?;
        let norm = crate::policy::ObsNormalization::new(&market.grid, size);
        let net = ActorCritic::new(
            OBS_DIM,
            &[64, 64],
            DEFAULT_ACTION_BOUND as usize,
            rng.random(),
        );
        let mut policies: Vec<Box<dyn ClockPolicy>> = vec![
            Box::new(VanillaPolicy),
            Box::new(RandomPolicy::new(1, DEFAULT_ACTION_BOUND, rng.random())?),
            Box::new(LearnedPolicy::new(net, norm, ActionMode::Greedy)),
        ];
        for p in &mut policies {
            report
                .violations
                .extend(check_auction(&market, p.as_mut())?);
            report.auctions += 1;
        }
    }
    Ok(report)
}

/// Greedy matching of sorted valuations: the largest `k` with the `k`-th
/// highest buyer value at least the `k`-th lowest seller value, and the
/// gains from trade of those `k` pairs.
pub fn greedy_oracle(market: &MarketInstance) -> (usize, f64) {
    let mut b: Vec<f64> = market.buyers.iter().map(|x| x.valuation).collect();
    let mut s: Vec<f64> = market.sellers.iter().map(|x| x.valuation).collect();
    b.sort_by(|x, y| y.total_cmp(x));
    s.sort_by(|x, y| x.total_cmp(y));
    let k = b.iter().zip(&s).take_while(|(vb, vs)| vb >= vs).count();
    let gross = b.iter().zip(&s).take(k).map(|(vb, vs)| vb - vs).sum();
    (k, gross)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleCase {
    pub market_seed: u64,
    pub market_size: usize,
    pub pairs: usize,
    pub oracle_pairs: usize,
    pub gross: f64,
    pub oracle_gross: f64,
    pub regret: f64,
    pub winners: usize,
    pub pairs_ok: bool,
    pub welfare_ok: bool,
    pub regret_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleReport {
    pub cases: Vec<OracleCase>,
}

impl OracleReport {
    pub fn oracle_failures(&self) -> Vec<&OracleCase> {
        self.cases
            .iter()
            .filter(|c| !(c.pairs_ok && c.welfare_ok))
            .collect()
    }
    pub fn regret_failures(&self) -> Vec<&OracleCase> {
        self.cases.iter().filter(|c| !c.regret_ok).collect()
    }
    pub fn passed(&self) -> bool {
        self.oracle_failures().is_empty() && self.regret_failures().is_empty()
    }
}

/// Compares Vanilla against the greedy oracle on `markets` random markets
/// of size `1..=max_size`, and checks its regret stays below one grid step
/// per winner.
pub fn run_oracle_suite(
    markets: usize,
    max_size: usize,
    seed: u64,
    config: &MarketConfig,
) -> Result<OracleReport> {
    if max_size < 1 {
        return Err(invalid("oracle suite needs max_size >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut cases = Vec::with_capacity(markets);
    for _ in 0..markets {
        let size = rng.random_range(1..=max_size);
        let market = generate_market(size, rng.random(), config)?;
        cases.push(oracle_case(&market)?);
    }
    Ok(OracleReport { cases })
}

pub fn oracle_case(market: &MarketInstance) -> Result<OracleCase> {
    let p_star = market.grid.p_star;
    let (o, _) = crate::auction::run_auction(market, &mut VanillaPolicy)?;
    let (k, oracle_gross) = greedy_oracle(market);
    let gross = gross_surplus(&o, market);
    let r = regret(&o, market);
    let winners = o.winning_buyers.len() + o.winning_sellers.len();
    Ok(OracleCase {
        market_seed: market.rng_seed,
        market_size: market.size(),
        pairs: o.num_pairs,
        oracle_pairs: k,
        gross,
        oracle_gross,
        regret: r,
        winners,
        pairs_ok: o.num_pairs.abs_diff(k) <= 1,
        welfare_ok: (gross - oracle_gross).abs() <= o.num_pairs as f64 * 2.0 * p_star + EPS,
        regret_ok: r == 0.0 || r < winners as f64 * p_star,
    })
}

/// Which side a probed participant is on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Buyer,
    Seller,
}

/// A unilateral misreport that strictly raised the deviator's utility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Deviation {
    pub market_seed: u64,
    pub market_size: usize,
    pub side: Side,
    pub participant: usize,
    pub valuation: f64,
    pub misreport: f64,
    pub truthful_utility: f64,
    pub deviant_utility: f64,
    pub truthful_pairs: usize,
    pub deviant_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ProbeConfig {
    pub markets: usize,
    pub min_size: usize,
    pub max_size: usize,
    /// Alternatives tried: every `coarse_stride`-th grid price plus the
    /// prices within `fine_radius` ticks of the true valuation.
    pub coarse_stride: i64,
    pub fine_radius: i64,
    pub seed: u64,
    pub market: MarketConfig,
}

impl Default for ProbeConfig {
    fn default() -> Self {
        Self {
            markets: 500,
            min_size: 2,
            max_size: 6,
            coarse_stride: 5,
            fine_radius: 3,
            seed: 0,
            market: MarketConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbeReport {
    pub markets: usize,
    pub misreports_tried: usize,
    pub deviating_markets: usize,
    pub buyer_deviations: usize,
    pub seller_deviations: usize,
    pub max_gain: f64,
    pub deviations: Vec<Deviation>,
}

impl ProbeReport {
    pub fn passed(&self) -> bool {
        self.deviations.is_empty()
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }
}

fn vanilla_utilities(market: &MarketInstance) -> Result<(Vec<f64>, Vec<f64>, usize)> {
    let (o, _) = crate::auction::run_auction(market, &mut VanillaPolicy)?;
    let (b, s) = participant_utilities(&o, market);
    Ok((b, s, o.num_pairs))
}

fn alternatives(market: &MarketInstance, truth: f64, cfg: &ProbeConfig) -> Vec<f64> {
    let grid = market.grid;
    let t = grid.ticks_of(truth);
    let mut ticks: Vec<i64> = (0..=grid.ticks())
        .step_by(cfg.coarse_stride.max(1) as usize)
        .collect();
    ticks.extend((t - cfg.fine_radius)..=(t + cfg.fine_radius));
    ticks.push(grid.ticks());
    ticks.retain(|&k| k != t && (0..=grid.ticks()).contains(&k));
    ticks.sort_unstable();
    ticks.dedup();
    ticks.into_iter().map(|k| grid.price(k)).collect()
}

/// Searches for profitable unilateral misreports under Vanilla. Utility is
/// `valuation - p^c` for a matched buyer, `p^c - valuation` for a matched
/// seller and zero otherwise, always measured at the true valuation.
pub fn truthfulness_probe(cfg: &ProbeConfig) -> Result<ProbeReport> {
    if cfg.min_size < 1 || cfg.min_size > cfg.max_size {
        return Err(invalid("probe needs 1 <= min_size <= max_size"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut report = ProbeReport {
        markets: 0,
        misreports_tried: 0,
        deviating_markets: 0,
        buyer_deviations: 0,
        seller_deviations: 0,
        max_gain: 0.0,
        deviations: Vec::new(),
    };
    for _ in 0..cfg.markets {
        let size = rng.random_range(cfg.min_size..=cfg.max_size);
        let market = generate_market(size, rng.random(), &cfg.market)?.truthful();
        let (ub, us, pairs) = vanilla_utilities(&market)?;
        let before = report.deviations.len();
        for side in [Side::Buyer, Side::Seller] {
            let n = match side {
                Side::Buyer => market.buyers.len(),
                Side::Seller => market.sellers.len(),
            };
            for i in 0..n {
                let (truth, base) = match side {
                    Side::Buyer => (market.buyers[i].valuation, ub[i]),
                    Side::Seller => (market.sellers[i].valuation, us[i]),
                };
                let mut best: Option<Deviation> = None;
                for alt in alternatives(&market, truth, cfg) {
                    let mut m = market.clone();
                    match side {
                        Side::Buyer => m.buyers[i].bid = alt,
                        Side::Seller => m.sellers[i].bid = alt,
                    }
                    let (db, ds, dp) = vanilla_utilities(&m)?;
                    report.misreports_tried += 1;
                    let u = match side {
                        Side::Buyer => db[i],
                        Side::Seller => ds[i],
                    };
                    if u > base + EPS && best.as_ref().is_none_or(|d| u > d.deviant_utility) {
                        best = Some(Deviation {
                            market_seed: market.rng_seed,
                            market_size: size,
                            side,
                            participant: i,
                            valuation: truth,
                            misreport: alt,
                            truthful_utility: base,
                            deviant_utility: u,
                            truthful_pairs: pairs,
                            deviant_pairs: dp,
                        });
                    }
                }
                if let Some(d) = best {
                    report.max_gain = report.max_gain.max(d.deviant_utility - d.truthful_utility);
                    match side {
                        Side::Buyer => report.buyer_deviations += 1,
                        Side::Seller => report.seller_deviations += 1,
                    }
                    report.deviations.push(d);
                }
            }
        }
        if report.deviations.len() > before {
            report.deviating_markets += 1;
        }
        report.markets += 1;
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn with_values(buyers: &[f64], sellers: &[f64]) -> MarketInstance {
        let mut m =
            generate_market(buyers.len().max(sellers.len()), 3, &MarketConfig::default()).unwrap();
        m.buyers.truncate(buyers.len());
        m.sellers.truncate(sellers.len());
        for (b, v) in m.buyers.iter_mut().zip(buyers) {
            (b.valuation, b.bid) = (*v, *v);
        }
        for (s, v) in m.sellers.iter_mut().zip(sellers) {
            (s.valuation, s.bid) = (*v, *v);
        }
        m
    }

    #[test]
    fn oracle_on_hand_cases() {
        assert_eq!(
            greedy_oracle(&with_values(&[10.0, 8.0], &[2.0, 4.0])),
            (2, 12.0)
        );
        assert_eq!(
            greedy_oracle(&with_values(&[10.0, 3.0], &[2.0, 4.0])),
            (1, 8.0)
        );
        assert_eq!(greedy_oracle(&with_values(&[1.0], &[2.0])), (0, 0.0));
        assert_eq!(
            greedy_oracle(&with_values(&[5.0, 9.0, 7.0], &[6.0, 7.0, 1.0])),
            (2, 8.0 + 1.0)
        );
    }

    /// Brute force over every k.
    fn brute_oracle(m: &MarketInstance) -> usize {
        let mut b: Vec<f64> = m.buyers.iter().map(|x| x.valuation).collect();
        let mut s: Vec<f64> = m.sellers.iter().map(|x| x.valuation).collect();
        b.sort_by(|x, y| y.total_cmp(x));
        s.sort_by(|x, y| x.total_cmp(y));
        (0..=b.len().min(s.len()))
            .filter(|&k| (0..k).all(|i| b[i] >= s[i]))
            .max()
            .unwrap_or(0)
    }

    #[test]
    fn greedy_matches_brute_force() {
        for seed in 0..200 {
            let m =
                generate_market(1 + seed as usize % 12, seed, &MarketConfig::default()).unwrap();
            assert_eq!(greedy_oracle(&m).0, brute_oracle(&m));
        }
    }

    #[test]
    fn partition_check() {
        assert!(is_partition(&[2, 0], &[1], 3));
        assert!(!is_partition(&[2, 0], &[0], 3));
        assert!(!is_partition(&[2], &[1], 3));
        assert!(!is_partition(&[3], &[0, 1, 2], 3));
    }

    #[test]
    fn small_invariant_suite_passes() {
        let cfg = InvariantSuiteConfig {
            markets: 20,
            max_size: 12,
            seed: 11,
            ..InvariantSuiteConfig::default()
        };
        let r = run_invariant_suite(&cfg).unwrap();
        assert_eq!(r.auctions, 60);
        assert!(r.passed(), "{:?}", r.violations);
    }

    #[test]
    fn hand_market_oracle_case() {
        let c = oracle_case(&with_values(&[10.0, 8.0], &[2.0, 4.0])).unwrap();
        assert_eq!((c.pairs, c.oracle_pairs), (2, 2));
        assert_eq!(c.gross, 12.0);
        assert!(c.pairs_ok && c.welfare_ok && c.regret_ok);
    }

    #[test]
    fn alternatives_exclude_truth_and_stay_in_range() {
        let m = with_values(&[1.0], &[99.0]);
        let alts = alternatives(&m, 1.0, &ProbeConfig::default());
        assert!(!alts.contains(&1.0));
        assert!(alts.contains(&0.0) && alts.contains(&4.0) && alts.contains(&100.0));
        assert!(alts.iter().all(|p| (0.0..=100.0).contains(p)));
    }

    #[test]
    fn probe_is_reproducible() {
        let cfg = ProbeConfig {
            markets: 10,
            max_size: 3,
            seed: 5,
            ..ProbeConfig::default()
        };
        let a = truthfulness_probe(&cfg).unwrap();
        let b = truthfulness_probe(&cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.markets, 10);
        assert!(a.misreports_tried > 0);
        for d in &a.deviations {
            assert!(d.deviant_utility > d.truthful_utility);
        }
    }
}

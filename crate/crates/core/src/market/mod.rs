//! Market participants, the price grid and market instances.
//!
//! Buyers are viewers of a holographic digital twin; sellers are the
//! providers that render and stream it. Each participant carries a true
//! `valuation` (used by every metric) and a reported `bid` (the value the
//! auction engine sees). Truthful participants have `bid == valuation`.

mod generate;
mod valuation;

pub use generate::{generate_market, Distributions, MarketConfig};
pub use valuation::{
    buyer_raw_value, buyer_valuation, opinion_score, score_for_bitrate, seller_raw_costs,
    seller_valuation, voi, Resolution, SellerCostMap, ValuationMaps, OPINION_TABLE,
};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

/// Current version of the market JSON document.
pub const MARKET_SCHEMA_VERSION: u32 = 1;

/// Discrete price range of the auction.
///
/// Valid prices are `p_min + k * p_star` for `k = 0..=ticks()`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PriceGrid {
    pub p_min: f64,
    pub p_max: f64,
    pub p_star: f64,
}

impl Default for PriceGrid {
    fn default() -> Self {
        Self {
            p_min: 0.0,
            p_max: 100.0,
            p_star: 1.0,
        }
    }
}

impl PriceGrid {
    pub fn new(p_min: f64, p_max: f64, p_star: f64) -> Result<Self> {
        let grid = Self {
            p_min,
            p_max,
            p_star,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.p_min.is_finite() && self.p_max.is_finite() && self.p_star.is_finite()) {
            return Err(invalid("price grid bounds must be finite"));
        }
        if self.p_min >= self.p_max {
            return Err(invalid(format!(
                "p_min ({}) must be below p_max ({})",
                self.p_min, self.p_max
            )));
        }
        if self.p_star <= 0.0 {
            return Err(invalid("p_star must be positive"));
        }
        let steps = (self.p_max - self.p_min) / self.p_star;
        if (steps - steps.round()).abs() > 1e-9 * steps.max(1.0) {
            return Err(invalid(format!(
                "price range {} is not a multiple of p_star {}",
                self.p_max - self.p_min,
                self.p_star
            )));
        }
        Ok(())
    }

    /// Number of `p_star` intervals between `p_min` and `p_max`.
    pub fn ticks(&self) -> i64 {
        ((self.p_max - self.p_min) / self.p_star).round() as i64
    }

    pub fn range(&self) -> f64 {
        self.p_max - self.p_min
    }

    /// Price of grid point `ticks` (not clamped).
    pub fn price(&self, ticks: i64) -> f64 {
        self.p_min + ticks as f64 * self.p_star
    }

    /// Price of a possibly fractional tick position, e.g. a clock midpoint.
    pub fn price_of_half_ticks(&self, half_ticks: i64) -> f64 {
        self.p_min + half_ticks as f64 * self.p_star / 2.0
    }

    /// Nearest grid index to `price`, rounding half away from zero and
    /// clamping to `[0, ticks()]`.
    pub fn ticks_of(&self, price: f64) -> i64 {
        let raw = ((price - self.p_min) / self.p_star).round();
        (raw as i64).clamp(0, self.ticks())
    }

    pub fn snap(&self, price: f64) -> f64 {
        self.price(self.ticks_of(price))
    }

    pub fn is_aligned(&self, price: f64) -> bool {
        let k = (price - self.p_min) / self.p_star;
        (k - k.round()).abs() < 1e-9 && price >= self.p_min - 1e-9 && price <= self.p_max + 1e-9
    }

    /// Upper bound on the number of rounds any policy with `k >= 1` needs.
    pub fn round_bound(&self) -> u32 {
        let ceil = ((self.p_max - self.p_min) / self.p_star).ceil() as u32;
        2 * ceil + 2
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BuyerProfile {
    pub id: usize,
    pub resolution: Resolution,
    /// Interest per viewpoint.
    pub interest: Vec<f64>,
    /// Viewing duration in time steps.
    pub duration: u32,
    /// Interest decay exponent; smaller values decay faster.
    pub decay: f64,
    pub valuation: f64,
    pub bid: f64,
}

impl BuyerProfile {
    pub fn validate(&self) -> Result<()> {
        if self.interest.iter().any(|a| !a.is_finite() || *a < 0.0) {
            return Err(invalid(format!("buyer {}: negative interest", self.id)));
        }
        if self.duration < 1 {
            return Err(invalid(format!("buyer {}: duration must be >= 1", self.id)));
        }
        if !(self.decay > 0.0) {
            return Err(invalid(format!("buyer {}: decay must be > 0", self.id)));
        }
        opinion_score(&self.resolution)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SellerProfile {
    pub id: usize,
    pub base_rate: f64,
    pub spectrum_eff: f64,
    /// CPU cycles per unit of data.
    pub cpu_cycles: f64,
    /// CPU cycles per second.
    pub cpu_freq: f64,
    /// Supplied angular resolution (number of viewpoints).
    pub angular_res: u32,
    pub duration: u32,
    pub valuation: f64,
    pub bid: f64,
}

impl SellerProfile {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("base_rate", self.base_rate),
            ("spectrum_eff", self.spectrum_eff),
            ("cpu_cycles", self.cpu_cycles),
            ("cpu_freq", self.cpu_freq),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!(
                    "seller {}: {name} must be positive, got {v}",
                    self.id
                )));
            }
        }
        Ok(())
    }
}

/// A complete market: participants, price grid and generation metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarketInstance {
    pub schema_version: u32,
    pub rng_seed: u64,
    pub grid: PriceGrid,
    /// Cost of delivering one broadcast message to one receiver.
    pub broadcast_unit_cost: f64,
    pub maps: ValuationMaps,
    pub distributions: Distributions,
    pub buyers: Vec<BuyerProfile>,
    pub sellers: Vec<SellerProfile>,
}

impl MarketInstance {
    /// Checks structural invariants. Participant ids must equal their
    /// position in the corresponding sequence.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != MARKET_SCHEMA_VERSION {
            return Err(invalid(format!(
                "unsupported market schema version {}",
                self.schema_version
            )));
        }
        self.grid.validate()?;
        if !(self.broadcast_unit_cost >= 0.0) {
            return Err(invalid("broadcast unit cost must be non-negative"));
        }
        for (i, b) in self.buyers.iter().enumerate() {
            if b.id != i {
                return Err(invalid(format!("buyer at position {i} has id {}", b.id)));
            }
            b.validate()?;
            self.check_price("buyer", i, b.valuation)?;
            self.check_price("buyer", i, b.bid)?;
        }
        for (i, s) in self.sellers.iter().enumerate() {
            if s.id != i {
                return Err(invalid(format!("seller at position {i} has id {}", s.id)));
            }
            s.validate()?;
            self.check_price("seller", i, s.valuation)?;
            self.check_price("seller", i, s.bid)?;
        }
        Ok(())
    }

    fn check_price(&self, side: &str, id: usize, price: f64) -> Result<()> {
        if !self.grid.is_aligned(price) {
            return Err(invalid(format!(
                "{side} {id}: price {price} is not on the grid"
            )));
        }
        Ok(())
    }

    pub fn size(&self) -> usize {
        self.buyers.len().max(self.sellers.len())
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let market: Self = serde_json::from_str(s)?;
        market.validate()?;
        Ok(market)
    }

    /// Clone with all reported bids reset to the true valuations.
    pub fn truthful(&self) -> Self {
        let mut m = self.clone();
        for b in &mut m.buyers {
            b.bid = b.valuation;
        }
        for s in &mut m.sellers {
            s.bid = s.valuation;
        }
        m
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_validation() {
        assert!(PriceGrid::new(0.0, 100.0, 1.0).is_ok());
        assert!(PriceGrid::new(0.0, 10.0, 3.0).is_err());
        assert!(PriceGrid::new(5.0, 5.0, 1.0).is_err());
        assert!(PriceGrid::new(0.0, 10.0, 0.0).is_err());
        assert!(PriceGrid::new(0.0, 1.0, 0.25).is_ok());
    }

    #[test]
    fn snapping_rounds_half_away_and_clamps() {
        let g = PriceGrid::default();
        assert_eq!(g.snap(7.5), 8.0);
        assert_eq!(g.snap(7.49), 7.0);
        assert_eq!(g.snap(-3.0), 0.0);
        assert_eq!(g.snap(250.0), 100.0);
        let q = PriceGrid::new(10.0, 20.0, 2.0).unwrap();
        assert_eq!(q.snap(13.0), 14.0);
        assert_eq!(q.snap(12.9), 12.0);
        assert!(q.is_aligned(14.0));
        assert!(!q.is_aligned(15.0));
    }

    #[test]
    fn round_bound_matches_formula() {
        assert_eq!(PriceGrid::default().round_bound(), 202);
        assert_eq!(PriceGrid::new(0.0, 10.0, 2.5).unwrap().round_bound(), 10);
    }
}

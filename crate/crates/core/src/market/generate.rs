use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::valuation::{buyer_valuation, seller_valuation, ValuationMaps, OPINION_TABLE};
use super::{BuyerProfile, MarketInstance, PriceGrid, SellerProfile, MARKET_SCHEMA_VERSION};
use crate::error::{invalid, Result};

/// Sampling distributions for random markets.
///
/// Half-normal draws are `center + |N(0, variance)|`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Distributions {
    pub interest_dim: usize,
    pub interest_center: f64,
    pub interest_variance: f64,
    pub duration_min: u32,
    pub duration_max: u32,
    pub decay_center: f64,
    pub decay_variance: f64,
    /// Class values for base rate, CPU cycles, CPU frequency and spectrum
    /// efficiency.
    pub seller_classes: Vec<f64>,
    pub seller_angular_res: u32,
    pub seller_duration: u32,
}

impl Default for Distributions {
    fn default() -> Self {
        Self {
            interest_dim: 16,
            interest_center: 1.0,
            interest_variance: 4.0,
            duration_min: 3,
            duration_max: 30,
            decay_center: 1.0,
            decay_variance: 4.0,
            seller_classes: vec![1.0, 2.0, 3.0],
            seller_angular_res: 16,
            seller_duration: 15,
        }
    }
}

impl Distributions {
    pub fn validate(&self) -> Result<()> {
        if self.duration_min < 1 || self.duration_min > self.duration_max {
            return Err(invalid("duration range must satisfy 1 <= min <= max"));
        }
        if !(self.interest_center >= 0.0) || !(self.interest_variance >= 0.0) {
            return Err(invalid("interest center and variance must be non-negative"));
        }
        if !(self.decay_center > 0.0) || !(self.decay_variance >= 0.0) {
            return Err(invalid("decay center must be positive"));
        }
        if self.seller_classes.is_empty() || self.seller_classes.iter().any(|c| !(*c > 0.0)) {
            return Err(invalid("seller classes must be non-empty and positive"));
        }
        Ok(())
    }
}

/// Everything needed to generate a market besides its size and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MarketConfig {
    pub grid: PriceGrid,
    pub broadcast_unit_cost: f64,
    pub maps: ValuationMaps,
    pub distributions: Distributions,
}

impl Default for MarketConfig {
    fn default() -> Self {
        Self {
            grid: PriceGrid::default(),
            broadcast_unit_cost: 0.01,
            maps: ValuationMaps::default(),
            distributions: Distributions::default(),
        }
    }
}

impl MarketConfig {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        self.maps.validate()?;
        self.distributions.validate()?;
        if !(self.broadcast_unit_cost >= 0.0) {
            return Err(invalid("broadcast unit cost must be non-negative"));
        }
        Ok(())
    }
}

fn half_normal(rng: &mut impl Rng, center: f64, variance: f64) -> f64 {
    let normal = Normal::new(0.0, variance.sqrt()).expect("variance validated");
    center + normal.sample(rng).abs()
}

/// Samples a market with `size` buyers and `size` sellers.
pub fn generate_market(size: usize, seed: u64, config: &MarketConfig) -> Result<MarketInstance> {
    if size < 1 {
        return Err(invalid("market size must be >= 1"));
    }
    config.validate()?;
    let dist = &config.distributions;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    let mut buyers = Vec::with_capacity(size);
    for id in 0..size {
        let interest = (0..dist.interest_dim)
            .map(|_| half_normal(&mut rng, dist.interest_center, dist.interest_variance))
            .collect();
        let resolution = OPINION_TABLE[rng.random_range(0..OPINION_TABLE.len())].1;
        let duration = rng.random_range(dist.duration_min..=dist.duration_max);
        let decay = half_normal(&mut rng, dist.decay_center, dist.decay_variance);
        let mut b = BuyerProfile {
            id,
            resolution,
            interest,
            duration,
            decay,
            valuation: 0.0,
            bid: 0.0,
        };
        b.valuation = buyer_valuation(&b, &config.grid, &config.maps)?;
        b.bid = b.valuation;
        buyers.push(b);
    }

    let mut sellers = Vec::with_capacity(size);
    for id in 0..size {
        let mut class = || {
            *dist
                .seller_classes
                .choose(&mut rng)
                .expect("validated non-empty")
        };
        let (base_rate, cpu_cycles, cpu_freq, spectrum_eff) = (class(), class(), class(), class());
        let mut s = SellerProfile {
            id,
            base_rate,
            spectrum_eff,
            cpu_cycles,
            cpu_freq,
            angular_res: dist.seller_angular_res,
            duration: dist.seller_duration,
            valuation: 0.0,
            bid: 0.0,
        };
        s.valuation = seller_valuation(&s, &config.grid, &config.maps)?;
        s.bid = s.valuation;
        sellers.push(s);
    }

    Ok(MarketInstance {
        schema_version: MARKET_SCHEMA_VERSION,
        rng_seed: seed,
        grid: config.grid,
        broadcast_unit_cost: config.broadcast_unit_cost,
        maps: config.maps,
        distributions: config.distributions.clone(),
        buyers,
        sellers,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn deterministic_under_seed() {
        let cfg = MarketConfig::default();
        let a = generate_market(12, 99, &cfg).unwrap();
        let b = generate_market(12, 99, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_json().unwrap(), b.to_json().unwrap());
        let c = generate_market(12, 100, &cfg).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn sizes_and_ranges() {
        let cfg = MarketConfig::default();
        let m = generate_market(10, 3, &cfg).unwrap();
        assert_eq!(m.buyers.len(), 10);
        assert_eq!(m.sellers.len(), 10);
        m.validate().unwrap();
        for b in &m.buyers {
            assert_eq!(b.interest.len(), 16);
            assert!(b.interest.iter().all(|a| *a >= 1.0));
            assert!((3..=30).contains(&b.duration));
            assert!(b.decay >= 1.0);
        }
        for s in &m.sellers {
            assert_eq!((s.angular_res, s.duration), (16, 15));
            for v in [s.base_rate, s.cpu_cycles, s.cpu_freq, s.spectrum_eff] {
                assert!([1.0, 2.0, 3.0].contains(&v));
            }
        }
        assert!(generate_market(0, 1, &cfg).is_err());
    }

    #[test]
    fn json_round_trip() {
        let m = generate_market(4, 8, &MarketConfig::default()).unwrap();
        let back = MarketInstance::from_json(&m.to_json().unwrap()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn valuations_on_grid_for_many_seeds() {
        let cfg = MarketConfig::default();
        for seed in 0..50 {
            let m = generate_market(8, seed, &cfg).unwrap();
            for v in m
                .buyers
                .iter()
                .map(|b| b.valuation)
                .chain(m.sellers.iter().map(|s| s.valuation))
            {
                assert!(cfg.grid.is_aligned(v), "{v} off grid");
            }
        }
    }
}

use serde::{Deserialize, Serialize};

use super::{BuyerProfile, PriceGrid, SellerProfile};
use crate::error::{invalid, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Resolution {
    pub width: u32,
    pub height: u32,
    pub fps: u32,
}

impl Resolution {
    pub const fn new(width: u32, height: u32, fps: u32) -> Self {
        Self { width, height, fps }
    }
}

impl std::fmt::Display for Resolution {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}x{}@{}", self.width, self.height, self.fps)
    }
}

/// Opinion-score tiers: (minimum bitrate in Mbps, resolution, score).
pub const OPINION_TABLE: [(f64, Resolution, u8); 5] = [
    (21.0, Resolution::new(720, 480, 60), 1),
    (55.0, Resolution::new(1280, 720, 60), 2),
    (125.0, Resolution::new(1920, 1080, 60), 3),
    (221.0, Resolution::new(2560, 1440, 60), 4),
    (529.0, Resolution::new(4080, 2160, 30), 5),
];

pub fn opinion_score(resolution: &Resolution) -> Result<u8> {
    OPINION_TABLE
        .iter()
        .find(|(_, r, _)| r == resolution)
        .map(|&(_, _, s)| s)
        .ok_or_else(|| invalid(format!("resolution {resolution} has no opinion score")))
}

/// Highest score whose bitrate threshold is met; 0 below the lowest tier.
pub fn score_for_bitrate(mbps: f64) -> u8 {
    OPINION_TABLE
        .iter()
        .rev()
        .find(|(min, _, _)| mbps >= *min)
        .map_or(0, |&(_, _, s)| s)
}

/// Volume of interest: total interest across viewpoints, weighted by the
/// decaying factor `1 - (t/d)^decay` for `t = 1..=d`.
pub fn voi(interest: &[f64], duration: u32, decay: f64) -> Result<f64> {
    if duration < 1 {
        return Err(invalid("duration must be >= 1"));
    }
    if !(decay > 0.0) {
        return Err(invalid(format!("decay must be > 0, got {decay}")));
    }
    if interest.iter().any(|a| !(*a >= 0.0)) {
        return Err(invalid("interest components must be non-negative"));
    }
    let d = f64::from(duration);
    let weight: f64 = (1..=duration)
        .map(|t| 1.0 - (f64::from(t) / d).powf(decay))
        .sum();
    Ok(interest.iter().sum::<f64>() * weight)
}

/// How a seller's raw cost is turned into a price contribution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SellerCostMap {
    /// `half_range * (1 - exp(-x / kappa))`: higher cost, higher ask.
    #[default]
    Saturating,
    /// `half_range * exp(-x / kappa)`: decreasing and convex in cost.
    DecreasingConvex,
}

/// Scale constants of the maps from raw values onto the price range.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ValuationMaps {
    pub kappa_buyer: f64,
    pub kappa_com: f64,
    pub kappa_cmp: f64,
    #[serde(default)]
    pub seller_map: SellerCostMap,
}

impl Default for ValuationMaps {
    fn default() -> Self {
        // Calibrated against the default distributions so that the median
        // raw buyer value lands mid-range and sellers sit below it.
        Self {
            kappa_buyer: 1500.0,
            kappa_com: 600.0,
            kappa_cmp: 1200.0,
            seller_map: SellerCostMap::Saturating,
        }
    }
}

impl ValuationMaps {
    pub fn validate(&self) -> Result<()> {
        for (name, k) in [
            ("kappa_buyer", self.kappa_buyer),
            ("kappa_com", self.kappa_com),
            ("kappa_cmp", self.kappa_cmp),
        ] {
            if !(k.is_finite() && k > 0.0) {
                return Err(invalid(format!("{name} must be positive, got {k}")));
            }
        }
        Ok(())
    }

    /// Increasing, concave and bounded map of a raw buyer value.
    pub fn buyer_map(&self, raw: f64, grid: &PriceGrid) -> f64 {
        grid.p_min + grid.range() * (1.0 - (-raw / self.kappa_buyer).exp())
    }

    fn seller_term(&self, raw: f64, kappa: f64, grid: &PriceGrid) -> f64 {
        let half = grid.range() / 2.0;
        match self.seller_map {
            SellerCostMap::Saturating => half * (1.0 - (-raw / kappa).exp()),
            SellerCostMap::DecreasingConvex => half * (-raw / kappa).exp(),
        }
    }

    pub fn seller_map(&self, com: f64, cmp: f64, grid: &PriceGrid) -> f64 {
        grid.p_min
            + self.seller_term(com, self.kappa_com, grid)
            + self.seller_term(cmp, self.kappa_cmp, grid)
    }
}

/// Opinion score times volume of interest, before mapping to prices.
pub fn buyer_raw_value(b: &BuyerProfile) -> Result<f64> {
    let score = opinion_score(&b.resolution)?;
    Ok(f64::from(score) * voi(&b.interest, b.duration, b.decay)?)
}

pub fn buyer_valuation(b: &BuyerProfile, grid: &PriceGrid, maps: &ValuationMaps) -> Result<f64> {
    let raw = buyer_raw_value(b)?;
    Ok(grid.snap(maps.buyer_map(raw, grid)))
}

/// Raw (communication, computation) costs of a seller's default offer.
pub fn seller_raw_costs(s: &SellerProfile) -> Result<(f64, f64)> {
    if s.spectrum_eff == 0.0 || s.cpu_freq == 0.0 {
        return Err(invalid(format!(
            "seller {}: spectrum efficiency and CPU frequency must be non-zero",
            s.id
        )));
    }
    let volume = f64::from(s.angular_res) * f64::from(s.duration);
    let com = s.base_rate / s.spectrum_eff * volume;
    let cmp = s.base_rate * s.cpu_cycles / s.cpu_freq * volume;
    Ok((com, cmp))
}

pub fn seller_valuation(s: &SellerProfile, grid: &PriceGrid, maps: &ValuationMaps) -> Result<f64> {
    let (com, cmp) = seller_raw_costs(s)?;
    Ok(grid.snap(maps.seller_map(com, cmp, grid)))
}

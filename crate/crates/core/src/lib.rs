//! Double Dutch auction simulator for a holographic digital twin market.
//!
//! Buyers and sellers are generated with valuations derived from viewing
//! demand and rendering cost, matched by a two-clock descending/ascending
//! auction, and scored for welfare, regret and broadcast cost. The
//! auctioneer's clock step can be fixed, random, or chosen by a network
//! trained with PPO.

pub mod auction;
pub mod error;
pub mod harness;
pub mod market;
pub mod metrics;
pub mod policy;
pub mod rl;
pub mod verify;

pub use error::{DdaError, Result};

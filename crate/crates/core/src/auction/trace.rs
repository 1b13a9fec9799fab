use serde::{Deserialize, Serialize};

use super::{AuctionFlag, AuctionOutcome, AuctionState, StepSize};
use crate::error::{DdaError, Result};
use crate::market::MarketInstance;
use crate::policy::{ClockPolicy, ScriptedPolicy};

pub const TRACE_SCHEMA_VERSION: u32 = 1;

/// One played round. Clocks are the values broadcast at the start of the
/// round; `step` is the multiple applied afterwards.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: u32,
    pub flag: AuctionFlag,
    pub buyer_clock: f64,
    pub seller_clock: f64,
    pub step: u32,
    pub acceptors: Vec<usize>,
    pub audience: u32,
    pub terminated: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuctionTrace {
    pub schema_version: u32,
    pub market_seed: u64,
    pub policy: String,
    pub rounds: Vec<RoundRecord>,
    pub outcome: AuctionOutcome,
}

impl AuctionTrace {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }

    pub fn steps(&self) -> Vec<u32> {
        self.rounds.iter().map(|r| r.step).collect()
    }
}

/// Runs the auction to completion, asking `policy` for a step at the start
/// of every round.
pub fn run_auction(
    market: &MarketInstance,
    policy: &mut dyn ClockPolicy,
) -> Result<(AuctionOutcome, AuctionTrace)> {
    let mut state = AuctionState::new(market)?;
    let bound = market.grid.round_bound();
    let mut rounds = Vec::new();
    while !state.is_terminated() {
        if rounds.len() as u32 >= bound {
            return Err(DdaError::State(format!(
                "auction exceeded the {bound}-round bound"
            )));
        }
        let step = policy.step(&state.observation())?;
        rounds.push(state.play_round(step)?);
    }
    let outcome = state.determine_winners()?;
    let trace = AuctionTrace {
        schema_version: TRACE_SCHEMA_VERSION,
        market_seed: market.rng_seed,
        policy: policy.label(),
        rounds,
        outcome: outcome.clone(),
    };
    Ok((outcome, trace))
}

/// Re-runs `trace` on `market` with its recorded steps and checks the
/// result is identical.
pub fn replay_trace(market: &MarketInstance, trace: &AuctionTrace) -> Result<AuctionTrace> {
    let mut scripted = ScriptedPolicy::new(
        trace
            .steps()
            .into_iter()
            .map(StepSize::new)
            .collect::<Result<_>>()?,
    );
    let (_, mut replayed) = run_auction(market, &mut scripted)?;
    replayed.policy = trace.policy.clone();
    if &replayed != trace {
        return Err(DdaError::State("trace replay diverged".into()));
    }
    Ok(replayed)
}

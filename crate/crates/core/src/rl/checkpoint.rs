//! Checkpoint container for trained auctioneers.
//!
//! A checkpoint is a UTF-8 JSON object:
//!
//! ```text
//! {
//!   "format": "dda-actor-critic",
//!   "version": 1,
//!   "activation": "tanh",
//!   "action_bound": K,
//!   "normalization": { "price_offset", "price_scale", "round_scale", "count_scale" },
//!   "actor":  { "sizes": [6, h1, ..., K], "params": [...] },
//!   "critic": { "sizes": [6, h1, ..., 1], "params": [...] },
//!   "iterations": n, "env_steps": n, "seed": s
//! }
//! ```
//!
//! Parameters are IEEE-754 doubles, layer by layer: the `out x in` weight
//! matrix in row-major order followed by the `out` biases. Hidden layers
//! apply tanh, the output layer is linear. Action index `i` means a clock
//! step of `(i + 1) * p_star`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::nn::Mlp;
use super::ActorCritic;
use crate::error::{DdaError, Result};
use crate::policy::{ObsNormalization, OBS_DIM};

pub const CHECKPOINT_FORMAT: &str = "dda-actor-critic";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub activation: String,
    pub action_bound: u32,
    pub normalization: ObsNormalization,
    pub actor: Mlp,
    pub critic: Mlp,
    #[serde(default)]
    pub iterations: u64,
    #[serde(default)]
    pub env_steps: u64,
    #[serde(default)]
    pub seed: u64,
}

fn bad(msg: impl Into<String>) -> DdaError {
    DdaError::Checkpoint(msg.into())
}

impl Checkpoint {
    pub fn new(net: &ActorCritic, normalization: ObsNormalization) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            activation: "tanh".into(),
            action_bound: net.action_bound() as u32,
            normalization,
            actor: net.actor.clone(),
            critic: net.critic.clone(),
            iterations: 0,
            env_steps: 0,
            seed: 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("unknown format {:?}", self.format)));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(bad(format!("unsupported version {}", self.version)));
        }
        if self.activation != "tanh" {
            return Err(bad(format!("unsupported activation {:?}", self.activation)));
        }
        for (name, net, out) in [
            ("actor", &self.actor, self.action_bound as usize),
            ("critic", &self.critic, 1),
        ] {
            if !net.is_consistent() {
                return Err(bad(format!(
                    "{name}: parameter count does not match layer sizes"
                )));
            }
            if net.input_dim() != OBS_DIM || net.output_dim() != out {
                return Err(bad(format!(
                    "{name}: expected {OBS_DIM} inputs and {out} outputs, found {:?}",
                    net.sizes
                )));
            }
            if net.params.iter().any(|p| !p.is_finite()) {
                return Err(bad(format!("{name}: non-finite weights")));
            }
        }
        if self.action_bound == 0 {
            return Err(bad("action bound must be >= 1"));
        }
        let n = &self.normalization;
        if !(n.price_scale > 0.0 && n.round_scale > 0.0 && n.count_scale > 0.0) {
            return Err(bad("normalization scales must be positive"));
        }
        Ok(())
    }

    pub fn network(&self) -> Result<ActorCritic> {
        self.validate()?;
        Ok(ActorCritic {
            actor: self.actor.clone(),
            critic: self.critic.clone(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let ck: Self = serde_json::from_str(s).map_err(|e| bad(format!("parse: {e}")))?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text =
            std::fs::read_to_string(path).map_err(|e| bad(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::market::PriceGrid;

    fn sample() -> Checkpoint {
        let net = ActorCritic::new(OBS_DIM, &[8, 8], 20, 11);
        Checkpoint::new(&net, ObsNormalization::new(&PriceGrid::default(), 10))
    }

    #[test]
    fn json_round_trip_is_exact() {
        let ck = sample();
        let back = Checkpoint::from_json(&ck.to_json().unwrap()).unwrap();
        assert_eq!(ck, back);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let mut ck = sample();
        ck.actor.params.pop();
        assert!(matches!(ck.validate(), Err(DdaError::Checkpoint(_))));
        let mut ck = sample();
        ck.action_bound = 19;
        assert!(ck.validate().is_err());
        let mut ck = sample();
        ck.critic.sizes[0] = 5;
        assert!(ck.validate().is_err());
    }

    #[test]
    fn rejects_corrupt_text() {
        assert!(matches!(
            Checkpoint::from_json("{\"format\": 3"),
            Err(DdaError::Checkpoint(_))
        ));
        let mut ck = sample();
        ck.format = "other".into();
        assert!(Checkpoint::from_json(&ck.to_json().unwrap()).is_err());
    }

    #[test]
    fn save_and_load() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ck.json");
        let ck = sample();
        ck.save(&path).unwrap();
        assert_eq!(Checkpoint::load(&path).unwrap(), ck);
        assert!(Checkpoint::load(&dir.path().join("missing.json")).is_err());
    }
}

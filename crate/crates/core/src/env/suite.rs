//! Named reference tasks.

use super::{ContinuousSpreadEnv, Environment, TabularDecPOMDP};
use crate::error::{Error, Result};

pub const GAMMA: f64 = 0.995;

/// Per-agent payoffs of the additive game; the optimum 2.0 is `(a0, a1) = (1, 2)`.
pub const ADDITIVE_PAYOFF: [[f64; 3]; 2] = [[0.0, 1.0, 0.3], [0.5, 0.0, 1.0]];

/// Climbing-game joint payoff, scaled by 1/10; not expressible as a sum of per-agent terms.
pub const COORDINATION_PAYOFF: [f64; 9] = [1.1, -3.0, 0.0, -3.0, 0.7, 0.6, 0.0, 0.0, 0.5];

pub const CHAIN_STATES: usize = 5;
pub const CHAIN_HORIZON: usize = 10;
pub const CHAIN_STEP_REWARD: f64 = -2.0;
pub const CHAIN_BONUS: [f64; 3] = [0.0, 0.5, -0.5];

#[derive(Debug, Clone)]
pub struct ReferenceSuite {
    pub additive_game: TabularDecPOMDP,
    pub coordination_game: TabularDecPOMDP,
    pub chain: TabularDecPOMDP,
    pub spread: ContinuousSpreadEnv,
}

impl ReferenceSuite {
    /// Tasks used for offline training: the additive game, the chain and the spread task.
    pub fn trainable(&self) -> Vec<&dyn Environment> {
        vec![&self.additive_game, &self.chain, &self.spread]
    }
}

pub fn make_reference_envs() -> Result<ReferenceSuite> {
    let additive: Vec<Vec<f64>> = ADDITIVE_PAYOFF.iter().map(|p| p.to_vec()).collect();
    Ok(ReferenceSuite {
        additive_game: TabularDecPOMDP::additive_matrix_game("additive_game", &additive, GAMMA)?,
        coordination_game: TabularDecPOMDP::matrix_game("coordination_game", 2, 3, COORDINATION_PAYOFF.to_vec(), GAMMA)?,
        chain: TabularDecPOMDP::chain(CHAIN_STATES, CHAIN_HORIZON, CHAIN_STEP_REWARD, CHAIN_BONUS, GAMMA)?,
        spread: ContinuousSpreadEnv::new(2),
    })
}

pub const ENV_NAMES: [&str; 4] = ["additive_game", "coordination_game", "chain", "spread"];

pub fn env_by_name(name: &str) -> Result<Box<dyn Environment>> {
    let s = make_reference_envs()?;
    Ok(match name {
        "additive_game" => Box::new(s.additive_game),
        "coordination_game" => Box::new(s.coordination_game),
        "chain" => Box::new(s.chain),
        "spread" => Box::new(s.spread),
        other => {
            return Err(Error::arg(format!(
                "unknown environment `{other}` (expected one of {})",
                ENV_NAMES.join(", ")
            )))
        }
    })
}

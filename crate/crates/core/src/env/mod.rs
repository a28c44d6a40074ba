//! Desk-scale cooperative environments and offline dataset generation.
//!
//! Every environment exposes per-agent observation vectors (local features followed by
//! a one-hot agent id) and consumes per-agent action vectors in the encoding given by
//! its [`ActionSpace`]: one-hot rows for discrete actions, raw coordinates otherwise.

pub mod dataset;
pub mod spread;
pub mod suite;
pub mod tabular;

pub use dataset::{generate_offline_dataset, BehaviorSpec, DatasetManifest, OfflineDataset, StepRecord, Tier};
pub use spread::ContinuousSpreadEnv;
pub use suite::{env_by_name, make_reference_envs, ReferenceSuite, ENV_NAMES};
pub use tabular::TabularDecPOMDP;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};
use std::fmt;

/// Environment state: the step counter plus a flat numeric payload
/// (a state index for tabular tasks, agent positions for the spread task).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    pub t: usize,
    pub values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub state: EnvState,
    pub obs: Vec<Vec<f64>>,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionSpace {
    Discrete { n: usize },
    Continuous { dim: usize, low: f64, high: f64 },
}

impl ActionSpace {
    /// Width of the encoded action vector.
    pub fn dim(&self) -> usize {
        match *self {
            ActionSpace::Discrete { n } => n,
            ActionSpace::Continuous { dim, .. } => dim,
        }
    }

    pub fn is_discrete(&self) -> bool {
        matches!(self, ActionSpace::Discrete { .. })
    }

    pub fn one_hot(&self, index: usize) -> Vec<f64> {
        let mut v = vec![0.0; self.dim()];
        v[index] = 1.0;
        v
    }

    /// Maps an arbitrary vector (e.g. a flow sample) to a valid encoded action:
    /// the one-hot of its argmax, or a clamp to the box.
    pub fn project(&self, raw: &[f64]) -> Vec<f64> {
        match *self {
            ActionSpace::Discrete { .. } => self.one_hot(argmax(raw)),
            ActionSpace::Continuous { low, high, .. } => raw.iter().map(|x| x.clamp(low, high)).collect(),
        }
    }

    pub fn project_rows(&self, raw: &Tensor) -> Tensor {
        let rows: Vec<Vec<f64>> = (0..raw.rows()).map(|i| self.project(raw.row(i))).collect();
        if rows.is_empty() {
            return Tensor::zeros(&[0, self.dim()]);
        }
        Tensor::from_rows(&rows).expect("projected rows share a width")
    }

    pub fn sample_uniform(&self, rng: &mut dyn RngCore) -> Vec<f64> {
        match *self {
            ActionSpace::Discrete { n } => self.one_hot(rng.random_range(0..n)),
            ActionSpace::Continuous { dim, low, high } => (0..dim).map(|_| rng.random_range(low..high)).collect(),
        }
    }

    pub(crate) fn check(&self, action: &[f64], agent: usize) -> Result<()> {
        if action.len() != self.dim() {
            return Err(Error::dim(format!("action of agent {agent}"), self.dim(), action.len()));
        }
        if let Some(&bad) = action.iter().find(|x| !x.is_finite()) {
            return Err(Error::NonFinite {
                context: format!("action of agent {agent}"),
                value: bad,
            });
        }
        Ok(())
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// `one_hot(local, n_local) ++ one_hot(agent, n_agents)`
pub fn encode_observation(local: usize, n_local: usize, agent: usize, n_agents: usize) -> Vec<f64> {
    let mut v = vec![0.0; n_local + n_agents];
    v[local] = 1.0;
    v[n_local + agent] = 1.0;
    v
}

pub trait Environment: Send + Sync + fmt::Debug {
    fn name(&self) -> &str;
    fn n_agents(&self) -> usize;
    /// Width of each agent's observation vector.
    fn obs_dim(&self) -> usize;
    fn action_space(&self) -> ActionSpace;
    fn horizon(&self) -> usize;
    fn reset(&self, rng: &mut dyn RngCore) -> EnvState;
    fn observe(&self, state: &EnvState) -> Vec<Vec<f64>>;
    fn step(&self, state: &EnvState, actions: &[Vec<f64>], rng: &mut dyn RngCore) -> Result<Transition>;
    /// Encoded action of the task's expert behaviour policy.
    fn expert_action(&self, state: &EnvState, agent: usize) -> Vec<f64>;
    /// Documented optimal expected team return from the initial distribution.
    fn optimal_return(&self) -> f64;
    fn is_deterministic(&self) -> bool;

    fn check_actions(&self, actions: &[Vec<f64>]) -> Result<()> {
        if actions.len() != self.n_agents() {
            return Err(Error::arg(format!(
                "expected {} agent actions, got {}",
                self.n_agents(),
                actions.len()
            )));
        }
        let space = self.action_space();
        for (i, a) in actions.iter().enumerate() {
            space.check(a, i)?;
        }
        Ok(())
    }
}

/// Undiscounted team return of one episode driven by `policy(agent, obs, rng)`.
pub fn rollout<F>(env: &dyn Environment, rng: &mut dyn RngCore, mut policy: F) -> Result<f64>
where
    F: FnMut(usize, &[f64]) -> Result<Vec<f64>>,
{
    let mut state = env.reset(rng);
    let mut obs = env.observe(&state);
    let mut total = 0.0;
    for _ in 0..env.horizon() {
        let actions = (0..env.n_agents())
            .map(|i| policy(i, &obs[i]))
            .collect::<Result<Vec<_>>>()?;
        let tr = env.step(&state, &actions, rng)?;
        total += tr.reward;
        state = tr.state;
        obs = tr.obs;
        if tr.done {
            break;
        }
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1.0, 3.0, 3.0]), 1);
        assert_eq!(argmax(&[0.0, 0.0]), 0);
        assert_eq!(argmax(&[-1.0, -0.5, -2.0]), 1);
    }

    #[test]
    fn projection() {
        let d = ActionSpace::Discrete { n: 3 };
        assert_eq!(d.project(&[0.2, -1.0, 0.9]), vec![0.0, 0.0, 1.0]);
        let c = ActionSpace::Continuous {
            dim: 2,
            low: -1.0,
            high: 1.0,
        };
        assert_eq!(c.project(&[2.0, -0.3]), vec![1.0, -0.3]);
        assert!(c.check(&[0.0], 0).is_err());
        assert!(c.check(&[0.0, f64::NAN], 0).is_err());
    }

    #[test]
    fn observation_encoding() {
        assert_eq!(encode_observation(1, 3, 0, 2), vec![0.0, 1.0, 0.0, 1.0, 0.0]);
    }
}

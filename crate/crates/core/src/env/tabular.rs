//! Finite Dec-POMDPs given by explicit tables.
//!
//! Joint actions are indexed in mixed radix with agent 0 as the most significant digit,
//! so for two agents with three actions `(a0, a1) ↦ 3 a0 + a1`.

use super::{argmax, encode_observation, ActionSpace, EnvState, Environment, Transition};
use crate::error::{Error, Result};
use rand::{Rng, RngCore};

#[derive(Debug, Clone, PartialEq)]
pub struct TabularDecPOMDP {
    pub name: String,
    pub n_agents: usize,
    pub n_states: usize,
    /// Actions per agent, shared by all agents.
    pub n_actions: usize,
    /// Local observation count, shared by all agents.
    pub n_observations: usize,
    /// `observation[agent][state]`
    pub observation: Vec<Vec<usize>>,
    /// `transition[s * n_joint + ja][s']`
    pub transition: Vec<Vec<f64>>,
    /// `reward[s * n_joint + ja]`
    pub reward: Vec<f64>,
    /// Terminal states absorb and yield no further reward.
    pub terminal: Vec<bool>,
    pub gamma: f64,
    pub initial: Vec<f64>,
    pub horizon: usize,
    /// `expert[agent][state]`
    pub expert: Vec<Vec<usize>>,
}

impl TabularDecPOMDP {
    pub fn n_joint(&self) -> usize {
        self.n_actions.pow(self.n_agents as u32)
    }

    pub fn joint_index(&self, actions: &[usize]) -> usize {
        actions.iter().fold(0, |acc, &a| acc * self.n_actions + a)
    }

    pub fn joint_actions(&self, mut index: usize) -> Vec<usize> {
        let mut out = vec![0; self.n_agents];
        for slot in out.iter_mut().rev() {
            *slot = index % self.n_actions;
            index /= self.n_actions;
        }
        out
    }

    pub fn state_index(&self, state: &EnvState) -> usize {
        state.values[0] as usize
    }

    pub fn validate(&self) -> Result<()> {
        let nj = self.n_joint();
        let rows = self.n_states * nj;
        if self.transition.len() != rows || self.reward.len() != rows {
            return Err(Error::dim("transition/reward rows", rows, self.transition.len()));
        }
        for (row, probs) in self.transition.iter().enumerate() {
            if probs.len() != self.n_states {
                return Err(Error::dim(format!("transition row {row}"), self.n_states, probs.len()));
            }
            if probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::arg(format!("transition row {row} has invalid probabilities")));
            }
            let total: f64 = probs.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::arg(format!("transition row {row} sums to {total}")));
            }
        }
        if self.reward.iter().any(|r| !r.is_finite()) {
            return Err(Error::arg("reward table has non-finite entries"));
        }
        let total: f64 = self.initial.iter().sum();
        if self.initial.len() != self.n_states || (total - 1.0).abs() > 1e-12 {
            return Err(Error::arg("initial distribution is not a probability vector"));
        }
        if self.observation.len() != self.n_agents || self.expert.len() != self.n_agents {
            return Err(Error::dim("per-agent tables", self.n_agents, self.observation.len()));
        }
        for i in 0..self.n_agents {
            if self.observation[i].iter().any(|&o| o >= self.n_observations)
                || self.expert[i].iter().any(|&a| a >= self.n_actions)
            {
                return Err(Error::arg(format!("agent {i} observation or expert table out of range")));
            }
        }
        if !(0.0..=1.0).contains(&self.gamma) {
            return Err(Error::arg(format!("gamma {} outside [0, 1]", self.gamma)));
        }
        Ok(())
    }

    /// Steps with explicit action indices.
    pub fn step_indices(&self, state: &EnvState, actions: &[usize], rng: &mut dyn RngCore) -> Result<Transition> {
        if actions.len() != self.n_agents {
            return Err(Error::arg(format!("expected {} actions, got {}", self.n_agents, actions.len())));
        }
        if let Some((i, &a)) = actions.iter().enumerate().find(|(_, &a)| a >= self.n_actions) {
            return Err(Error::arg(format!("agent {i} action index {a} out of range 0..{}", self.n_actions)));
        }
        let s = self.state_index(state);
        let row = s * self.n_joint() + self.joint_index(actions);
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut next = self.n_states - 1;
        for (sp, &p) in self.transition[row].iter().enumerate() {
            acc += p;
            if u < acc {
                next = sp;
                break;
            }
        }
        let next_state = EnvState {
            t: state.t + 1,
            values: vec![next as f64],
        };
        Ok(Transition {
            obs: self.observe(&next_state),
            done: self.terminal[next] || next_state.t >= self.horizon,
            reward: self.reward[row],
            state: next_state,
        })
    }

    /// Exact finite-horizon optimum of the undiscounted team return, by backward induction.
    pub fn optimal_finite_horizon_return(&self) -> f64 {
        let nj = self.n_joint();
        let mut v = vec![0.0; self.n_states];
        for _ in 0..self.horizon {
            let mut next = vec![0.0; self.n_states];
            for s in 0..self.n_states {
                if self.terminal[s] {
                    continue;
                }
                next[s] = (0..nj)
                    .map(|ja| {
                        let row = s * nj + ja;
                        self.reward[row] + self.transition[row].iter().zip(&v).map(|(p, x)| p * x).sum::<f64>()
                    })
                    .fold(f64::NEG_INFINITY, f64::max);
            }
            v = next;
        }
        self.initial.iter().zip(&v).map(|(p, x)| p * x).sum()
    }

    /// Expected undiscounted return of the expert policy over the horizon.
    pub fn expert_finite_horizon_return(&self) -> f64 {
        let nj = self.n_joint();
        let mut v = vec![0.0; self.n_states];
        for _ in 0..self.horizon {
            let mut next = vec![0.0; self.n_states];
            for s in 0..self.n_states {
                if self.terminal[s] {
                    continue;
                }
                let acts: Vec<usize> = (0..self.n_agents).map(|i| self.expert[i][s]).collect();
                let row = s * nj + self.joint_index(&acts);
                next[s] = self.reward[row] + self.transition[row].iter().zip(&v).map(|(p, x)| p * x).sum::<f64>();
            }
            v = next;
        }
        self.initial.iter().zip(&v).map(|(p, x)| p * x).sum()
    }

    /// One-step game on a single start state; `payoff[joint action]` is the team reward.
    pub fn matrix_game(name: &str, n_agents: usize, n_actions: usize, payoff: Vec<f64>, gamma: f64) -> Result<Self> {
        let nj = n_actions.pow(n_agents as u32);
        if payoff.len() != nj {
            return Err(Error::dim("matrix game payoff", nj, payoff.len()));
        }
        let best = argmax(&payoff);
        let mut game = Self {
            name: name.to_string(),
            n_agents,
            n_states: 2,
            n_actions,
            n_observations: 1,
            observation: vec![vec![0, 0]; n_agents],
            transition: [vec![vec![0.0, 1.0]; nj], vec![vec![0.0, 1.0]; nj]].concat(),
            reward: [payoff, vec![0.0; nj]].concat(),
            terminal: vec![false, true],
            gamma,
            initial: vec![1.0, 0.0],
            horizon: 1,
            expert: vec![],
        };
        let best_tuple = game.joint_actions(best);
        game.expert = best_tuple.iter().map(|&a| vec![a, a]).collect();
        game.validate()?;
        Ok(game)
    }

    /// Additive game `R(a) = Σ_i p_i[a_i]`.
    pub fn additive_matrix_game(name: &str, per_agent: &[Vec<f64>], gamma: f64) -> Result<Self> {
        let n_agents = per_agent.len();
        let n_actions = per_agent.first().map_or(0, Vec::len);
        if n_agents == 0 || n_actions == 0 || per_agent.iter().any(|p| p.len() != n_actions) {
            return Err(Error::arg("additive payoffs need equal, non-empty action sets"));
        }
        let nj = n_actions.pow(n_agents as u32);
        let mut payoff = Vec::with_capacity(nj);
        for ja in 0..nj {
            let mut rest = ja;
            let mut acts = vec![0; n_agents];
            for slot in acts.iter_mut().rev() {
                *slot = rest % n_actions;
                rest /= n_actions;
            }
            payoff.push(acts.iter().enumerate().map(|(i, &a)| per_agent[i][a]).sum());
        }
        Self::matrix_game(name, n_agents, n_actions, payoff, gamma)
    }

    /// Two-agent chain with an absorbing goal at the last state.
    ///
    /// Agent 0 moves the state: action 0 advances, 1 stays, 2 steps back. Agent 1 never
    /// affects the dynamics but adds `bonus[a1]` to the per-step cost `step_reward`. The
    /// expert always advances and plays `a1 = 0`, which is optimal for agent 0 only.
    pub fn chain(n_states: usize, horizon: usize, step_reward: f64, bonus: [f64; 3], gamma: f64) -> Result<Self> {
        if n_states < 2 {
            return Err(Error::arg("chain needs at least two states"));
        }
        let n_actions = 3;
        let nj = n_actions * n_actions;
        let goal = n_states - 1;
        let mut transition = Vec::with_capacity(n_states * nj);
        let mut reward = Vec::with_capacity(n_states * nj);
        for s in 0..n_states {
            for ja in 0..nj {
                let (a0, a1) = (ja / n_actions, ja % n_actions);
                let mut probs = vec![0.0; n_states];
                if s == goal {
                    probs[goal] = 1.0;
                    reward.push(0.0);
                } else {
                    let next = match a0 {
                        0 => s + 1,
                        1 => s,
                        _ => s.saturating_sub(1),
                    };
                    probs[next] = 1.0;
                    reward.push(step_reward + bonus[a1]);
                }
                transition.push(probs);
            }
        }
        let mut initial = vec![0.0; n_states];
        initial[0] = 1.0;
        let env = Self {
            name: "chain".to_string(),
            n_agents: 2,
            n_states,
            n_actions,
            n_observations: n_states,
            observation: vec![(0..n_states).collect(); 2],
            transition,
            reward,
            terminal: (0..n_states).map(|s| s == goal).collect(),
            gamma,
            initial,
            horizon,
            expert: vec![vec![0; n_states]; 2],
        };
        env.validate()?;
        Ok(env)
    }
}

impl Environment for TabularDecPOMDP {
    fn name(&self) -> &str {
        &self.name
    }

    fn n_agents(&self) -> usize {
        self.n_agents
    }

    fn obs_dim(&self) -> usize {
        self.n_observations + self.n_agents
    }

    fn action_space(&self) -> ActionSpace {
        ActionSpace::Discrete { n: self.n_actions }
    }

    fn horizon(&self) -> usize {
        self.horizon
    }

    fn reset(&self, rng: &mut dyn RngCore) -> EnvState {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let mut s0 = 0;
        for (s, &p) in self.initial.iter().enumerate() {
            acc += p;
            if u < acc {
                s0 = s;
                break;
            }
        }
        EnvState {
            t: 0,
            values: vec![s0 as f64],
        }
    }

    fn observe(&self, state: &EnvState) -> Vec<Vec<f64>> {
        let s = self.state_index(state);
        (0..self.n_agents)
            .map(|i| encode_observation(self.observation[i][s], self.n_observations, i, self.n_agents))
            .collect()
    }

    fn step(&self, state: &EnvState, actions: &[Vec<f64>], rng: &mut dyn RngCore) -> Result<Transition> {
        self.check_actions(actions)?;
        let idx: Vec<usize> = actions.iter().map(|a| argmax(a)).collect();
        self.step_indices(state, &idx, rng)
    }

    fn expert_action(&self, state: &EnvState, agent: usize) -> Vec<f64> {
        self.action_space().one_hot(self.expert[agent][self.state_index(state)])
    }

    fn optimal_return(&self) -> f64 {
        self.optimal_finite_horizon_return()
    }

    fn is_deterministic(&self) -> bool {
        self.transition.iter().all(|row| row.iter().all(|&p| p == 0.0 || p == 1.0))
            && self.initial.iter().all(|&p| p == 0.0 || p == 1.0)
    }
}

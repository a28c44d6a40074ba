//! Per-agent Q networks summed into a team value, trained by joint or independent TD.

use crate::error::{ensure_finite, Error, Result};
use crate::mlp::{Activation, Layer, MlpParams, ParamTensors};
use crate::tensor::Tensor;

/// Aligned per-agent transitions sharing a team reward.
#[derive(Debug, Clone, PartialEq)]
pub struct JointTransitionBatch {
    pub obs: Vec<Tensor>,
    pub actions: Vec<Tensor>,
    pub next_obs: Vec<Tensor>,
    pub reward: Vec<f64>,
    pub done: Vec<f64>,
}

impl JointTransitionBatch {
    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }

    pub fn n_agents(&self) -> usize {
        self.obs.len()
    }

    fn validate(&self, n_agents: usize) -> Result<()> {
        if self.obs.len() != n_agents || self.actions.len() != n_agents || self.next_obs.len() != n_agents {
            return Err(Error::arg(format!(
                "batch carries {} agents, ensemble has {n_agents}",
                self.obs.len()
            )));
        }
        let n = self.len();
        if self.done.len() != n {
            return Err(Error::dim("done flags", n, self.done.len()));
        }
        for i in 0..n_agents {
            for (what, t) in [("obs", &self.obs[i]), ("actions", &self.actions[i]), ("next_obs", &self.next_obs[i])] {
                if t.rows() != n {
                    return Err(Error::dim(format!("agent {i} {what} rows"), n, t.rows()));
                }
            }
        }
        Ok(())
    }
}

/// Which TD objective trains the ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QLossMode {
    Joint,
    Independent,
}

impl QLossMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "joint" => Ok(QLossMode::Joint),
            "independent" => Ok(QLossMode::Independent),
            other => Err(Error::arg(format!("unknown q-loss mode `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            QLossMode::Joint => "joint",
            QLossMode::Independent => "independent",
        }
    }
}

/// `Q_i(o_i, a_i)` networks over `concat(o_i, a_i)`; a single network is shared by all agents.
#[derive(Debug, Clone, PartialEq)]
pub struct QEnsemble {
    pub q_nets: Vec<MlpParams>,
    pub target_nets: Vec<MlpParams>,
    pub n_agents: usize,
    pub gamma: f64,
}

impl QEnsemble {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        n_agents: usize,
        obs_dim: usize,
        action_dim: usize,
        hidden: &[usize],
        activation: Activation,
        gamma: f64,
        shared: bool,
        seed: u64,
    ) -> Result<Self> {
        let mut dims = vec![obs_dim + action_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let acts = vec![activation; hidden.len()];
        let count = if shared { 1 } else { n_agents };
        let nets = (0..count)
            .map(|i| MlpParams::init(&dims, &acts, seed.wrapping_add(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        Self::from_nets(nets, n_agents, gamma)
    }

    /// Targets start as copies of the online networks.
    pub fn from_nets(q_nets: Vec<MlpParams>, n_agents: usize, gamma: f64) -> Result<Self> {
        if n_agents == 0 || !(q_nets.len() == 1 || q_nets.len() == n_agents) {
            return Err(Error::arg(format!(
                "{} Q networks for {n_agents} agents; expected 1 or {n_agents}",
                q_nets.len()
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::arg(format!("gamma must lie in [0, 1), got {gamma}")));
        }
        if let Some(bad) = q_nets.iter().find(|n| n.out_dim() != 1) {
            return Err(Error::dim("Q network output", 1, bad.out_dim()));
        }
        Ok(Self {
            target_nets: q_nets.clone(),
            q_nets,
            n_agents,
            gamma,
        })
    }

    pub fn shared(&self) -> bool {
        self.q_nets.len() == 1
    }

    pub fn net_index(&self, agent: usize) -> usize {
        if self.shared() {
            0
        } else {
            agent
        }
    }

    fn eval(net: &MlpParams, obs: &Tensor, act: &Tensor) -> Result<Vec<f64>> {
        Ok(net.forward(&Tensor::hcat(&[obs, act])?)?.into_data())
    }

    pub fn q_values(&self, agent: usize, obs: &Tensor, act: &Tensor) -> Result<Vec<f64>> {
        Self::eval(&self.q_nets[self.net_index(agent)], obs, act)
    }

    pub fn target_values(&self, agent: usize, obs: &Tensor, act: &Tensor) -> Result<Vec<f64>> {
        Self::eval(&self.target_nets[self.net_index(agent)], obs, act)
    }

    /// `Q^tot = Σ_i Q_i(o_i, a_i)` per row.
    pub fn q_tot(&self, obs: &[Tensor], actions: &[Tensor]) -> Result<Vec<f64>> {
        if obs.len() != self.n_agents || actions.len() != self.n_agents {
            return Err(Error::arg("q_tot needs one observation and action tensor per agent"));
        }
        let mut total = vec![0.0; obs[0].rows()];
        for i in 0..self.n_agents {
            for (t, q) in total.iter_mut().zip(self.q_values(i, &obs[i], &actions[i])?) {
                *t += q;
            }
        }
        Ok(total)
    }

    fn check_next(&self, batch: &JointTransitionBatch, next_actions: &[Tensor]) -> Result<()> {
        batch.validate(self.n_agents)?;
        if next_actions.len() != self.n_agents {
            return Err(Error::arg(format!(
                "{} next-action tensors for {} agents",
                next_actions.len(),
                self.n_agents
            )));
        }
        Ok(())
    }

    /// Bootstrap term `γ (1 − done) Q̄_i(o'_i, a'_i)` for each agent.
    fn bootstraps(&self, batch: &JointTransitionBatch, next_actions: &[Tensor]) -> Result<Vec<Vec<f64>>> {
        (0..self.n_agents)
            .map(|i| {
                let q = self.target_values(i, &batch.next_obs[i], &next_actions[i])?;
                Ok(q.iter()
                    .zip(&batch.done)
                    .map(|(q, d)| self.gamma * (1.0 - d) * q)
                    .collect())
            })
            .collect()
    }

    /// Mean over rows of `[Σ_i Q_i − (r + γ (1 − done) Σ_i Q̄_i(o', a'))]²`.
    pub fn joint_td_loss(&self, batch: &JointTransitionBatch, next_actions: &[Tensor]) -> Result<f64> {
        Ok(self.joint_td_loss_grad(batch, next_actions)?.0)
    }

    /// Joint TD loss and its gradient for each online network; targets get none.
    pub fn joint_td_loss_grad(
        &self,
        batch: &JointTransitionBatch,
        next_actions: &[Tensor],
    ) -> Result<(f64, Vec<MlpParams>)> {
        self.check_next(batch, next_actions)?;
        let n = batch.len();
        let boot = self.bootstraps(batch, next_actions)?;
        let mut caches = Vec::with_capacity(self.n_agents);
        let mut residual: Vec<f64> = batch.reward.iter().map(|r| -r).collect();
        for i in 0..self.n_agents {
            let net = &self.q_nets[self.net_index(i)];
            let cache = net.forward_cached(&Tensor::hcat(&[&batch.obs[i], &batch.actions[i]])?)?;
            for (row, res) in residual.iter_mut().enumerate() {
                *res += cache.output().data()[row] - boot[i][row];
            }
            caches.push(cache);
        }
        let loss = residual.iter().map(|e| e * e).sum::<f64>() / n as f64;
        ensure_finite("joint TD loss", loss)?;
        let d_out = Tensor::new(vec![n, 1], residual.iter().map(|e| 2.0 * e / n as f64).collect())?;
        let mut grads: Vec<MlpParams> = self.q_nets.iter().map(MlpParams::zeros_like).collect();
        for (i, cache) in caches.iter().enumerate() {
            let k = self.net_index(i);
            let (g, _) = self.q_nets[k].backward(cache, &d_out)?;
            grads[k].add_scaled(1.0, &g)?;
        }
        Ok((loss, grads))
    }

    /// Single-agent TD loss `mean [Q_i − (r + γ (1 − done) Q̄_i(o'_i, a'_i))]²` with the team reward.
    pub fn independent_td_loss(&self, agent: usize, batch: &JointTransitionBatch, next_action: &Tensor) -> Result<f64> {
        Ok(self.independent_agent_grad(agent, batch, next_action)?.0)
    }

    fn independent_agent_grad(
        &self,
        agent: usize,
        batch: &JointTransitionBatch,
        next_action: &Tensor,
    ) -> Result<(f64, MlpParams)> {
        batch.validate(self.n_agents)?;
        if agent >= self.n_agents {
            return Err(Error::arg(format!("agent {agent} out of range")));
        }
        let n = batch.len();
        let net = &self.q_nets[self.net_index(agent)];
        let boot = self.target_values(agent, &batch.next_obs[agent], next_action)?;
        let cache = net.forward_cached(&Tensor::hcat(&[&batch.obs[agent], &batch.actions[agent]])?)?;
        let residual: Vec<f64> = (0..n)
            .map(|row| {
                cache.output().data()[row] - (batch.reward[row] + self.gamma * (1.0 - batch.done[row]) * boot[row])
            })
            .collect();
        let loss = residual.iter().map(|e| e * e).sum::<f64>() / n as f64;
        ensure_finite("independent TD loss", loss)?;
        let d_out = Tensor::new(vec![n, 1], residual.iter().map(|e| 2.0 * e / n as f64).collect())?;
        let (g, _) = net.backward(&cache, &d_out)?;
        Ok((loss, g))
    }

    /// Sum over agents of the independent TD losses and the gradient of that sum.
    pub fn independent_td_loss_grad(
        &self,
        batch: &JointTransitionBatch,
        next_actions: &[Tensor],
    ) -> Result<(f64, Vec<MlpParams>)> {
        self.check_next(batch, next_actions)?;
        let mut grads: Vec<MlpParams> = self.q_nets.iter().map(MlpParams::zeros_like).collect();
        let mut total = 0.0;
        for (i, next_action) in next_actions.iter().enumerate() {
            let (l, g) = self.independent_agent_grad(i, batch, next_action)?;
            total += l;
            grads[self.net_index(i)].add_scaled(1.0, &g)?;
        }
        Ok((total, grads))
    }

    pub fn td_loss_grad(
        &self,
        mode: QLossMode,
        batch: &JointTransitionBatch,
        next_actions: &[Tensor],
    ) -> Result<(f64, Vec<MlpParams>)> {
        match mode {
            QLossMode::Joint => self.joint_td_loss_grad(batch, next_actions),
            QLossMode::Independent => self.independent_td_loss_grad(batch, next_actions),
        }
    }

    /// Polyak update `target ← τ online + (1 − τ) target`.
    pub fn target_update(&mut self, tau: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::arg(format!("tau must lie in [0, 1], got {tau}")));
        }
        for (target, online) in self.target_nets.iter_mut().zip(&self.q_nets) {
            for (t, o) in target.tensors_mut().into_iter().zip(online.tensors()) {
                for (x, &y) in t.data_mut().iter_mut().zip(o.data()) {
                    *x = tau * y + (1.0 - tau) * *x;
                }
            }
        }
        Ok(())
    }

    /// `A_i = Q_i(o_i, a_data) − Q_i(o_i, a_policy)` per row.
    pub fn advantage(&self, agent: usize, obs: &Tensor, a_data: &Tensor, a_policy: &Tensor) -> Result<Vec<f64>> {
        let q_data = self.q_values(agent, obs, a_data)?;
        let q_pol = self.q_values(agent, obs, a_policy)?;
        Ok(q_data.iter().zip(&q_pol).map(|(a, b)| a - b).collect())
    }
}

/// A one-hidden-layer ReLU network that reproduces a lookup table exactly on one-hot
/// inputs. Each entry `(active, value)` lists the input coordinates that must all be 1;
/// its hidden unit fires with height 1 only then and contributes `value`.
pub fn lookup_table_mlp(in_dim: usize, entries: &[(Vec<usize>, f64)]) -> Result<MlpParams> {
    let h = entries.len();
    let mut w0 = vec![0.0; h * in_dim];
    let mut b0 = vec![0.0; h];
    let mut w1 = vec![0.0; h];
    for (u, (active, value)) in entries.iter().enumerate() {
        if let Some(&bad) = active.iter().find(|&&j| j >= in_dim) {
            return Err(Error::arg(format!("lookup entry index {bad} exceeds input width {in_dim}")));
        }
        for &j in active {
            w0[u * in_dim + j] = 1.0;
        }
        b0[u] = 1.0 - active.len() as f64;
        w1[u] = *value;
    }
    MlpParams::from_layers(
        vec![
            Layer::new(Tensor::new(vec![h, in_dim], w0)?, Tensor::vector(b0))?,
            Layer::new(Tensor::new(vec![1, h], w1)?, Tensor::vector(vec![0.0]))?,
        ],
        vec![Activation::Relu],
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{Environment, TabularDecPOMDP};
    use crate::oracle::{exact_q_evaluation, ExactPolicy};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn one_hot_rows(idx: &[usize], width: usize) -> Tensor {
        let rows: Vec<Vec<f64>> = idx
            .iter()
            .map(|&i| {
                let mut v = vec![0.0; width];
                v[i] = 1.0;
                v
            })
            .collect();
        Tensor::from_rows(&rows).unwrap()
    }

    /// Shared lookup net over `[obs one-hot (n_obs) ++ action one-hot (n_act)]`.
    fn table_net(table: &[Vec<f64>]) -> MlpParams {
        let n_obs = table.len();
        let n_act = table[0].len();
        let mut entries = Vec::new();
        for (o, row) in table.iter().enumerate() {
            for (a, &v) in row.iter().enumerate() {
                entries.push((vec![o, n_obs + a], v));
            }
        }
        lookup_table_mlp(n_obs + n_act, &entries).unwrap()
    }

    fn random_batch(n_agents: usize, n: usize, n_obs: usize, n_act: usize, seed: u64) -> JointTransitionBatch {
        let mut g = rng(seed);
        let mut draw = |w: usize| one_hot_rows(&(0..n).map(|_| g.random_range(0..w)).collect::<Vec<_>>(), w);
        let obs = (0..n_agents).map(|_| draw(n_obs)).collect();
        let actions = (0..n_agents).map(|_| draw(n_act)).collect();
        let next_obs = (0..n_agents).map(|_| draw(n_obs)).collect();
        let mut g = rng(seed + 100);
        JointTransitionBatch {
            obs,
            actions,
            next_obs,
            reward: (0..n).map(|_| g.random_range(-1.0..1.0)).collect(),
            done: (0..n).map(|_| if g.random::<f64>() < 0.2 { 1.0 } else { 0.0 }).collect(),
        }
    }

    #[test]
    fn lookup_net_reproduces_table() {
        let table = vec![vec![1.0, -2.0, 0.5], vec![3.0, 0.0, -1.0]];
        let net = table_net(&table);
        for o in 0..2 {
            for a in 0..3 {
                let mut x = vec![0.0; 5];
                x[o] = 1.0;
                x[2 + a] = 1.0;
                assert_eq!(net.forward(&Tensor::vector(x)).unwrap().data()[0], table[o][a]);
            }
        }
    }

    #[test]
    fn zero_discount_exact_fit_has_zero_loss() {
        // Q_0 = r, Q_1 = 0 on a single-observation batch with γ = 0.
        let n = 6;
        let mut b = random_batch(2, n, 1, 3, 1);
        b.reward = (0..n).map(|i| b.actions[0].row(i).iter().position(|&x| x == 1.0).unwrap() as f64).collect();
        let q0 = table_net(&[vec![0.0, 1.0, 2.0]]);
        let q1 = table_net(&[vec![0.0, 0.0, 0.0]]);
        let q = QEnsemble::from_nets(vec![q0, q1], 2, 0.0).unwrap();
        let next = b.actions.clone();
        assert!(q.joint_td_loss(&b, &next).unwrap() <= 1e-24);
    }

    #[test]
    fn single_agent_joint_equals_independent() {
        let q = QEnsemble::new(1, 4, 3, &[8], Activation::Tanh, 0.9, true, 3).unwrap();
        let b = random_batch(1, 32, 4, 3, 2);
        let next = vec![b.actions[0].clone()];
        let j = q.joint_td_loss(&b, &next).unwrap();
        let i = q.independent_td_loss(0, &b, &next[0]).unwrap();
        assert_eq!(j, i);
        let (is, _) = q.independent_td_loss_grad(&b, &next).unwrap();
        assert_eq!(is, j);
    }

    #[test]
    fn agent_count_mismatch_is_rejected() {
        let q = QEnsemble::new(2, 4, 3, &[8], Activation::Tanh, 0.9, true, 3).unwrap();
        let b = random_batch(1, 8, 4, 3, 2);
        assert!(q.joint_td_loss(&b, &[b.actions[0].clone()]).is_err());
        let b = random_batch(2, 8, 4, 3, 2);
        assert!(q.joint_td_loss(&b, &[b.actions[0].clone()]).is_err());
    }

    #[test]
    fn additivity_of_team_value() {
        let q = QEnsemble::new(3, 4, 2, &[8, 8], Activation::Tanh, 0.9, false, 5).unwrap();
        let b = random_batch(3, 16, 4, 2, 6);
        let tot = q.q_tot(&b.obs, &b.actions).unwrap();
        for row in 0..16 {
            let parts: f64 = (0..3).map(|i| q.q_values(i, &b.obs[i], &b.actions[i]).unwrap()[row]).sum();
            assert!((tot[row] - parts).abs() <= 1e-12);
        }
    }

    /// Exact Q of a deterministic joint policy on the additive chain, split into per-agent
    /// lookup tables, is a fixed point of the joint TD loss.
    #[test]
    fn joint_td_fixed_point_on_tabular_chain() {
        let bonus = [0.0, 0.4, -0.4];
        let env = TabularDecPOMDP::chain(5, 10, -1.0, bonus, 0.9).unwrap();
        let nj = env.n_joint();
        // agent 0: advance except stay in state 2; agent 1: action 1 except action 2 in state 0
        let pi0 = [0, 0, 1, 0, 0];
        let pi1 = [2, 1, 1, 1, 1];
        let mut probs = vec![vec![0.0; nj]; env.n_states];
        for s in 0..env.n_states {
            probs[s][env.joint_index(&[pi0[s], pi1[s]])] = 1.0;
        }
        let q = exact_q_evaluation(&env, &ExactPolicy::new(probs).unwrap()).unwrap();
        // only agent 0 moves the state, so Q(s, a0, a1) = bonus[a1] + h(s, a0)
        let mut q0 = vec![vec![0.0; 3]; 5];
        let mut q1 = vec![vec![0.0; 3]; 5];
        for s in 0..4 {
            for a in 0..3 {
                q0[s][a] = q.values[s][env.joint_index(&[a, 0])];
                q1[s][a] = bonus[a];
            }
            for ja in 0..nj {
                let acts = env.joint_actions(ja);
                assert!((q.values[s][ja] - q0[s][acts[0]] - q1[s][acts[1]]).abs() < 1e-12);
            }
        }
        // observation = state one-hot (5) ++ agent id (2), then the action one-hot (3)
        let mut entries = Vec::new();
        for s in 0..5 {
            for a in 0..3 {
                entries.push((vec![s, 5, 7 + a], q0[s][a]));
                entries.push((vec![s, 6, 7 + a], q1[s][a]));
            }
        }
        let ens = QEnsemble::from_nets(vec![lookup_table_mlp(10, &entries).unwrap()], 2, env.gamma).unwrap();

        let space = env.action_space();
        let state = |s: usize| crate::env::EnvState { t: 0, values: vec![s as f64] };
        let mut cols: Vec<Vec<Vec<Vec<f64>>>> = vec![vec![Vec::new(), Vec::new()]; 4];
        let (mut reward, mut done) = (Vec::new(), Vec::new());
        let mut g = rng(0);
        for _ in 0..200 {
            let s = g.random_range(0..4);
            let ja = g.random_range(0..nj);
            let acts = env.joint_actions(ja);
            let sp = env.transition[s * nj + ja].iter().position(|&p| p == 1.0).unwrap();
            for i in 0..2 {
                cols[0][i].push(env.observe(&state(s))[i].clone());
                cols[1][i].push(space.one_hot(acts[i]));
                cols[2][i].push(env.observe(&state(sp))[i].clone());
                cols[3][i].push(space.one_hot([pi0[sp], pi1[sp]][i]));
            }
            reward.push(env.reward[s * nj + ja]);
            done.push(if env.terminal[sp] { 1.0 } else { 0.0 });
        }
        let stack = |c: &Vec<Vec<Vec<f64>>>| c.iter().map(|r| Tensor::from_rows(r).unwrap()).collect::<Vec<_>>();
        let batch = JointTransitionBatch {
            obs: stack(&cols[0]),
            actions: stack(&cols[1]),
            next_obs: stack(&cols[2]),
            reward,
            done,
        };
        let loss = ens.joint_td_loss(&batch, &stack(&cols[3])).unwrap();
        assert!(loss <= 1e-10, "{loss}");
    }

    #[test]
    fn target_update_cases() {
        let mut q = QEnsemble::new(2, 3, 2, &[4], Activation::Tanh, 0.9, false, 1).unwrap();
        let other = QEnsemble::new(2, 3, 2, &[4], Activation::Tanh, 0.9, false, 99).unwrap();
        q.target_nets = other.q_nets.clone();
        let before = q.clone();
        q.target_update(0.0).unwrap();
        assert_eq!(q, before);
        q.target_update(0.005).unwrap();
        for (k, t) in q.target_nets.iter().enumerate() {
            for (ti, (a, (o, b))) in t
                .tensors()
                .iter()
                .zip(before.q_nets[k].tensors().iter().zip(before.target_nets[k].tensors()))
                .enumerate()
            {
                for j in 0..a.len() {
                    let expect = 0.005 * o.data()[j] + 0.995 * b.data()[j];
                    assert!((a.data()[j] - expect).abs() <= 1e-12, "tensor {ti}");
                }
            }
        }
        q.target_update(1.0).unwrap();
        for (t, o) in q.target_nets.iter().zip(&q.q_nets) {
            assert_eq!(t.tensors(), o.tensors());
        }
        assert!(q.target_update(1.5).is_err());
        assert!(q.target_update(-0.1).is_err());
    }

    #[test]
    fn advantage_cases() {
        let table = vec![vec![2.0, 1.0, -0.5], vec![0.0, 4.0, 1.0]];
        let q = QEnsemble::from_nets(vec![table_net(&table)], 1, 0.9).unwrap();
        let obs = one_hot_rows(&[0], 2);
        let a = q.advantage(0, &obs, &one_hot_rows(&[0], 3), &one_hot_rows(&[1], 3)).unwrap();
        assert_eq!(a, vec![1.0]);
        let same = one_hot_rows(&[2], 3);
        assert_eq!(q.advantage(0, &obs, &same, &same).unwrap(), vec![0.0]);

        let mut g = rng(4);
        let o: Vec<usize> = (0..50).map(|_| g.random_range(0..2)).collect();
        let ad: Vec<usize> = (0..50).map(|_| g.random_range(0..3)).collect();
        let ap: Vec<usize> = (0..50).map(|_| g.random_range(0..3)).collect();
        let adv = q
            .advantage(0, &one_hot_rows(&o, 2), &one_hot_rows(&ad, 3), &one_hot_rows(&ap, 3))
            .unwrap();
        for k in 0..50 {
            assert_eq!(adv[k], table[o[k]][ad[k]] - table[o[k]][ap[k]]);
        }
    }

    #[test]
    fn gradients_match_finite_differences_and_skip_targets() {
        for mode in [QLossMode::Joint, QLossMode::Independent] {
            for shared in [true, false] {
                let mut q = QEnsemble::new(2, 4, 3, &[6], Activation::Tanh, 0.9, shared, 7).unwrap();
                q.target_nets = QEnsemble::new(2, 4, 3, &[6], Activation::Tanh, 0.9, shared, 70).unwrap().q_nets;
                let b = random_batch(2, 12, 4, 3, 8);
                let next = random_batch(2, 12, 4, 3, 9).actions;
                let (_, grads) = q.td_loss_grad(mode, &b, &next).unwrap();
                assert_eq!(grads.len(), q.q_nets.len());
                let h = 1e-6;
                for k in 0..q.q_nets.len() {
                    for t in 0..grads[k].tensors().len() {
                        let mut up = q.clone();
                        up.q_nets[k].tensors_mut()[t].data_mut()[0] += h;
                        let mut dn = q.clone();
                        dn.q_nets[k].tensors_mut()[t].data_mut()[0] -= h;
                        let fd = (up.td_loss_grad(mode, &b, &next).unwrap().0 - dn.td_loss_grad(mode, &b, &next).unwrap().0)
                            / (2.0 * h);
                        let g = grads[k].tensors()[t].data()[0];
                        assert!((fd - g).abs() <= 1e-6 * (1.0 + g.abs()), "{mode:?} shared={shared}: {fd} vs {g}");
                    }
                }
            }
        }
    }
}

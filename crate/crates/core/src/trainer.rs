//! Centralized training (Q update, advantage labels, guided MeanFlow policy update),
//! decentralized one-step execution, evaluation rollouts, and the unconditional
//! Flow Matching / MeanFlow behaviour-cloning baselines.

use crate::adam::AdamState;
use crate::checkpoint::Checkpoint;
use crate::env::dataset::DatasetArrays;
use crate::env::{ActionSpace, Environment};
use crate::error::{Error, Result};
use crate::flow::{make_flow_batch, sample_multi_step, sample_one_step, AvgVelocityNet, Condition, FlowLayout};
use crate::mlp::{Activation, MlpParams, ParamTensors};
use crate::tensor::Tensor;
use crate::value::{JointTransitionBatch, QEnsemble, QLossMode};
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Vgm2p,
    BcFm,
    BcMf,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::Vgm2p => "vgm2p",
            Method::BcFm => "bc-fm",
            Method::BcMf => "bc-mf",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "vgm2p" => Ok(Method::Vgm2p),
            "bc-fm" => Ok(Method::BcFm),
            "bc-mf" => Ok(Method::BcMf),
            other => Err(Error::arg(format!("unknown method `{other}` (vgm2p, bc-fm, bc-mf)"))),
        }
    }

    pub fn layout(self) -> FlowLayout {
        match self {
            Method::Vgm2p => FlowLayout::Conditional,
            Method::BcFm => FlowLayout::Instantaneous,
            Method::BcMf => FlowLayout::Average,
        }
    }

    /// Sampler used at execution: one step except for Flow Matching.
    pub fn sampler(self, fm_steps: usize) -> Sampler {
        match self {
            Method::BcFm => Sampler { c: 1, steps: fm_steps },
            _ => Sampler { c: 1, steps: 1 },
        }
    }
}

/// Policy learning-rate schedule over `gradient_steps`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    Constant,
    /// `lr · ½ (1 + cos(π t / T))`
    Cosine,
}

impl LrSchedule {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            other => Err(Error::arg(format!("unknown lr schedule `{other}`"))),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            LrSchedule::Constant => "constant",
            LrSchedule::Cosine => "cosine",
        }
    }

    pub fn rate(self, base: f64, step: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base,
            LrSchedule::Cosine => {
                let frac = (step as f64 / total.max(1) as f64).min(1.0);
                base * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub method: Method,
    pub q_loss: QLossMode,
    /// Temperature of the closed-form optimal policy; the neural trainer never reads it.
    pub lambda_temp: f64,
    pub omega: f64,
    pub gamma: f64,
    pub lr: f64,
    /// Critic learning rate; falls back to `lr`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub q_lr: Option<f64>,
    pub lr_schedule: LrSchedule,
    pub batch_size: usize,
    pub gradient_steps: usize,
    pub hidden_dims: Vec<usize>,
    pub activation: Activation,
    pub embed_dim: usize,
    pub tau: f64,
    pub r_equals_k_fraction: f64,
    pub shared_params: bool,
    /// Decay of an exponential moving average of policy weights used for evaluation and
    /// checkpoints; 0 disables it.
    pub policy_ema: f64,
    pub eval_every: usize,
    pub eval_episodes: usize,
    pub fm_sampling_steps: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            method: Method::Vgm2p,
            q_loss: QLossMode::Joint,
            lambda_temp: 1.0,
            omega: 5.0,
            gamma: 0.995,
            lr: 3e-4,
            q_lr: None,
            lr_schedule: LrSchedule::Constant,
            batch_size: 64,
            gradient_steps: 20_000,
            hidden_dims: vec![64, 64],
            activation: Activation::Tanh,
            embed_dim: 8,
            tau: 0.005,
            r_equals_k_fraction: 0.25,
            shared_params: true,
            policy_ema: 0.0,
            eval_every: 500,
            eval_episodes: 10,
            fm_sampling_steps: 10,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::arg(format!("invalid config: {what}")));
        if !(self.lambda_temp > 0.0) {
            return bad("lambda_temp must be positive");
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.lr >= 0.0) || !(self.q_lr() >= 0.0) || !self.omega.is_finite() {
            return bad("learning rates must be non-negative and omega finite");
        }
        if self.batch_size == 0 || self.hidden_dims.contains(&0) {
            return bad("batch_size and hidden widths must be positive");
        }
        if !(0.0..=1.0).contains(&self.tau) || !(0.0..=1.0).contains(&self.r_equals_k_fraction) {
            return bad("tau and r_equals_k_fraction must lie in [0, 1]");
        }
        if !(0.0..1.0).contains(&self.policy_ema) {
            return bad("policy_ema must lie in [0, 1)");
        }
        if self.eval_episodes == 0 || self.fm_sampling_steps == 0 {
            return bad("eval_episodes and fm_sampling_steps must be positive");
        }
        Ok(())
    }

    pub fn q_lr(&self) -> f64 {
        self.q_lr.unwrap_or(self.lr)
    }

    pub fn sampler(&self) -> Sampler {
        self.method.sampler(self.fm_sampling_steps)
    }
}

/// Condition label and step count used to draw actions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Sampler {
    pub c: Condition,
    pub steps: usize,
}

/// Policy networks: one shared across agents, or one per agent.
#[derive(Debug, Clone, PartialEq)]
pub struct Policies {
    pub nets: Vec<AvgVelocityNet>,
    pub n_agents: usize,
}

impl Policies {
    pub fn new(n_agents: usize, obs_dim: usize, space: ActionSpace, cfg: &TrainConfig) -> Result<Self> {
        let count = if cfg.shared_params { 1 } else { n_agents };
        let nets = (0..count)
            .map(|i| {
                AvgVelocityNet::new(
                    cfg.method.layout(),
                    space.dim(),
                    obs_dim,
                    &cfg.hidden_dims,
                    cfg.activation,
                    cfg.embed_dim,
                    cfg.seed.wrapping_mul(7919).wrapping_add(i as u64),
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { nets, n_agents })
    }

    pub fn net(&self, agent: usize) -> &AvgVelocityNet {
        &self.nets[if self.nets.len() == 1 { 0 } else { agent }]
    }

    pub fn sample(&self, agent: usize, obs: &Tensor, sampler: Sampler, rng: &mut dyn RngCore) -> Result<Tensor> {
        let net = self.net(agent);
        if sampler.steps == 1 {
            sample_one_step(net, obs, sampler.c, rng)
        } else {
            sample_multi_step(net, obs, sampler.c, sampler.steps, rng)
        }
    }
}

/// `c = 1` where `A ≥ 0`, else `0`.
pub fn condition_label(advantages: &[f64]) -> Vec<Condition> {
    advantages.iter().map(|&a| Condition::from(a >= 0.0)).collect()
}

/// Decentralized execution: agent `i` sees only `obs[i]` and draws from `rngs[i]`.
pub fn execute(
    policies: &Policies,
    sampler: Sampler,
    obs: &[Vec<f64>],
    rngs: &mut [ChaCha8Rng],
) -> Result<Vec<Vec<f64>>> {
    if obs.len() != policies.n_agents || rngs.len() != policies.n_agents {
        return Err(Error::arg(format!(
            "execution needs {} observations and rng streams",
            policies.n_agents
        )));
    }
    obs.iter()
        .zip(rngs.iter_mut())
        .enumerate()
        .map(|(i, (o, rng))| Ok(policies.sample(i, &Tensor::vector(o.clone()), sampler, rng)?.into_data()))
        .collect()
}

/// Per-agent rng streams derived from one seed.
pub fn agent_rngs(seed: u64, n_agents: usize) -> Vec<ChaCha8Rng> {
    (0..n_agents)
        .map(|i| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(i as u64 + 1);
            r
        })
        .collect()
}

/// Mean and population standard deviation of undiscounted team returns.
pub fn evaluate_with<F>(env: &dyn Environment, n_episodes: usize, seed: u64, mut actor: F) -> Result<(f64, f64)>
where
    F: FnMut(usize, &[f64], &mut ChaCha8Rng) -> Result<Vec<f64>>,
{
    if n_episodes == 0 {
        return Err(Error::arg("n_episodes must be at least 1"));
    }
    let mut env_rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rngs = agent_rngs(seed, env.n_agents());
    let mut returns = Vec::with_capacity(n_episodes);
    for _ in 0..n_episodes {
        returns.push(crate::env::rollout(env, &mut env_rng, |i, o| actor(i, o, &mut rngs[i]))?);
    }
    let mean = returns.iter().sum::<f64>() / n_episodes as f64;
    let var = returns.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n_episodes as f64;
    Ok((mean, var.sqrt()))
}

pub fn evaluate(
    policies: &Policies,
    sampler: Sampler,
    env: &dyn Environment,
    n_episodes: usize,
    seed: u64,
) -> Result<(f64, f64)> {
    evaluate_with(env, n_episodes, seed, |i, o, rng| {
        Ok(policies.sample(i, &Tensor::vector(o.to_vec()), sampler, rng)?.into_data())
    })
}

/// Static description of the task a learner trains for.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TaskSpec {
    pub n_agents: usize,
    pub obs_dim: usize,
    pub space: ActionSpace,
}

impl TaskSpec {
    pub fn of(env: &dyn Environment) -> Self {
        Self {
            n_agents: env.n_agents(),
            obs_dim: env.obs_dim(),
            space: env.action_space(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLosses {
    pub policy_loss: f64,
    /// Zero for the behaviour-cloning baselines.
    pub q_loss: f64,
    pub wall_ms_policy: f64,
    pub wall_ms_q: f64,
}

/// All mutable training state; owned by one loop.
#[derive(Debug, Clone)]
pub struct Learner {
    pub cfg: TrainConfig,
    pub task: TaskSpec,
    pub policies: Policies,
    /// Averaged copy of `policies` when `policy_ema > 0`.
    pub ema: Option<Policies>,
    pub q: Option<QEnsemble>,
    policy_opt: Vec<AdamState>,
    q_opt: Vec<AdamState>,
    rng: ChaCha8Rng,
    pub step: usize,
}

impl Learner {
    pub fn new(cfg: TrainConfig, task: TaskSpec) -> Result<Self> {
        cfg.validate()?;
        let policies = Policies::new(task.n_agents, task.obs_dim, task.space, &cfg)?;
        let q = if cfg.method == Method::Vgm2p {
            Some(QEnsemble::new(
                task.n_agents,
                task.obs_dim,
                task.space.dim(),
                &cfg.hidden_dims,
                cfg.activation,
                cfg.gamma,
                cfg.shared_params,
                cfg.seed.wrapping_mul(104_729).wrapping_add(17),
            )?)
        } else {
            None
        };
        let policy_opt = policies.nets.iter().map(|n| AdamState::new(n, cfg.lr)).collect();
        let q_opt = q
            .as_ref()
            .map(|q| q.q_nets.iter().map(|n| AdamState::new(n, cfg.q_lr())).collect())
            .unwrap_or_default();
        Ok(Self {
            rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            ema: (cfg.policy_ema > 0.0).then(|| policies.clone()),
            cfg,
            task,
            policies,
            q,
            policy_opt,
            q_opt,
            step: 0,
        })
    }

    fn policy_actions(&mut self, obs: &[Tensor]) -> Result<Vec<Tensor>> {
        let sampler = Sampler { c: 1, steps: 1 };
        (0..self.task.n_agents)
            .map(|i| {
                let raw = self.policies.sample(i, &obs[i], sampler, &mut self.rng)?;
                Ok(self.task.space.project_rows(&raw))
            })
            .collect()
    }

    /// Advantage-thresholded labels for every agent, drawing `â` from the c = 1 policy.
    pub fn advantage_labels(&mut self, batch: &JointTransitionBatch) -> Result<Vec<Vec<Condition>>> {
        let a_hat = self.policy_actions(&batch.obs)?;
        let q = self.q.as_ref().ok_or_else(|| Error::arg("baseline learners have no Q ensemble"))?;
        (0..self.task.n_agents)
            .map(|i| Ok(condition_label(&q.advantage(i, &batch.obs[i], &batch.actions[i], &a_hat[i])?)))
            .collect()
    }

    /// One iteration: (i) next actions with c = 1, TD update, Polyak target update;
    /// (ii) current policy actions, advantages, labels; (iii) guided MeanFlow update.
    pub fn train_step(&mut self, batch: &JointTransitionBatch) -> Result<StepLosses> {
        // the schedule anneals the policy only; the critic tracks a moving target
        let lr = self.cfg.lr_schedule.rate(self.cfg.lr, self.step, self.cfg.gradient_steps);
        for opt in &mut self.policy_opt {
            opt.lr = lr;
        }
        for opt in &mut self.q_opt {
            opt.lr = self.cfg.q_lr();
        }
        let t0 = Instant::now();
        let mut q_loss = 0.0;
        let mut labels: Vec<Vec<Condition>> = vec![vec![1; batch.len()]; self.task.n_agents];
        if self.cfg.method == Method::Vgm2p {
            let next = self.policy_actions(&batch.next_obs)?;
            let q = self.q.as_mut().expect("vgm2p learners own a Q ensemble");
            let (loss, grads) = q.td_loss_grad(self.cfg.q_loss, batch, &next)?;
            for ((net, g), opt) in q.q_nets.iter_mut().zip(&grads).zip(&mut self.q_opt) {
                opt.step(net, g)?;
            }
            q.target_update(self.cfg.tau)?;
            q_loss = loss;
            labels = self.advantage_labels(batch)?;
        }
        let wall_ms_q = t0.elapsed().as_secs_f64() * 1e3;

        let t1 = Instant::now();
        let groups: Vec<Vec<usize>> = if self.policies.nets.len() == 1 {
            vec![(0..self.task.n_agents).collect()]
        } else {
            (0..self.task.n_agents).map(|i| vec![i]).collect()
        };
        let mut policy_loss = 0.0;
        for (k, agents) in groups.iter().enumerate() {
            let obs: Vec<&Tensor> = agents.iter().map(|&i| &batch.obs[i]).collect();
            let act: Vec<&Tensor> = agents.iter().map(|&i| &batch.actions[i]).collect();
            let c: Vec<Condition> = agents.iter().flat_map(|&i| labels[i].iter().copied()).collect();
            let fb = make_flow_batch(
                &Tensor::vcat(&obs)?,
                &Tensor::vcat(&act)?,
                &c,
                &mut self.rng,
                self.cfg.r_equals_k_fraction,
            )?;
            let net = &self.policies.nets[k];
            let (loss, grads) = match self.cfg.method {
                Method::Vgm2p => net.vgmp_loss_grad(&fb, self.cfg.omega)?,
                Method::BcMf => net.mf_loss_grad(&fb)?,
                Method::BcFm => net.fm_loss_grad(&fb)?,
            };
            self.policy_opt[k].step(&mut self.policies.nets[k], &grads)?;
            if let Some(ema) = &mut self.ema {
                let d = self.cfg.policy_ema;
                for t in ema.nets[k].tensors_mut() {
                    for v in t.data_mut() {
                        *v *= d;
                    }
                }
                ema.nets[k].add_scaled(1.0 - d, &self.policies.nets[k])?;
            }
            policy_loss += loss / groups.len() as f64;
        }
        let wall_ms_policy = t1.elapsed().as_secs_f64() * 1e3;
        self.step += 1;
        if !policy_loss.is_finite() || !q_loss.is_finite() {
            return Err(Error::NonFinite {
                context: format!(
                    "training step {} (policy loss {policy_loss}, q loss {q_loss})",
                    self.step
                ),
                value: if policy_loss.is_finite() { q_loss } else { policy_loss },
            });
        }
        Ok(StepLosses {
            policy_loss,
            q_loss,
            wall_ms_policy,
            wall_ms_q,
        })
    }

    /// The averaged policies if enabled, else the trained ones.
    pub fn eval_policies(&self) -> &Policies {
        self.ema.as_ref().unwrap_or(&self.policies)
    }

    pub fn sample_batch(&mut self, data: &DatasetArrays) -> JointTransitionBatch {
        data.sample(self.cfg.batch_size, &mut self.rng)
    }

    pub fn evaluate(&self, env: &dyn Environment, seed: u64) -> Result<(f64, f64)> {
        evaluate(self.eval_policies(), self.cfg.sampler(), env, self.cfg.eval_episodes, seed)
    }

    /// Policy and Q networks as named checkpoints.
    pub fn checkpoints(&self, config_hash: &str) -> Vec<(String, Checkpoint)> {
        let mut out = Vec::new();
        for (k, net) in self.eval_policies().nets.iter().enumerate() {
            out.push((format!("policy{k}"), policy_checkpoint(net, config_hash)));
        }
        if let Some(q) = &self.q {
            for (k, net) in q.q_nets.iter().enumerate() {
                out.push((format!("q{k}"), Checkpoint::from_mlp("q_network", net, config_hash)));
            }
        }
        out
    }
}

pub fn policy_checkpoint(net: &AvgVelocityNet, config_hash: &str) -> Checkpoint {
    let mut ck = Checkpoint::from_mlp("policy", &net.net, config_hash);
    ck.meta.insert("layout".into(), net.layout.as_str().into());
    ck.meta.insert("action_dim".into(), net.action_dim.to_string());
    ck.meta.insert("obs_dim".into(), net.obs_dim.to_string());
    if !net.embedding.is_empty() {
        ck.tensors.push(("embedding".into(), net.embedding.clone()));
    }
    ck
}

pub fn policy_from_checkpoint(ck: &Checkpoint) -> Result<AvgVelocityNet> {
    let layout = FlowLayout::parse(
        ck.meta
            .get("layout")
            .ok_or_else(|| Error::format("checkpoint", "missing meta `layout`"))?,
    )?;
    let net: MlpParams = ck.to_mlp()?;
    let embedding = ck.tensor("embedding").cloned().unwrap_or_else(|| Tensor::zeros(&[0, 0]));
    Ok(AvgVelocityNet {
        net,
        embedding,
        action_dim: ck.meta_usize("action_dim")?,
        obs_dim: ck.meta_usize("obs_dim")?,
        layout,
    })
}

/// One CSV row; evaluation cells are empty between evaluations.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub step: usize,
    pub policy_loss: f64,
    pub q_loss: f64,
    pub eval: Option<(f64, f64)>,
    pub wall_ms_policy: f64,
    pub wall_ms_q: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrainReport {
    pub rows: Vec<ReportRow>,
}

impl TrainReport {
    pub const HEADER: &'static str = "step,policy_loss,q_loss,eval_return_mean,eval_return_std,wall_ms_policy,wall_ms_q";
    pub const LOSS_HEADER: &'static str = "step,policy_loss,q_loss,eval_return_mean,eval_return_std";

    fn render(&self, timing: bool) -> String {
        let mut out = String::from(if timing { Self::HEADER } else { Self::LOSS_HEADER });
        out.push('\n');
        for r in &self.rows {
            let (m, s) = r
                .eval
                .map(|(m, s)| (m.to_string(), s.to_string()))
                .unwrap_or_default();
            write!(out, "{},{},{},{},{}", r.step, r.policy_loss, r.q_loss, m, s).expect("string write");
            if timing {
                write!(out, ",{:.4},{:.4}", r.wall_ms_policy, r.wall_ms_q).expect("string write");
            }
            out.push('\n');
        }
        out
    }

    pub fn to_csv(&self) -> String {
        self.render(true)
    }

    /// The report without timing columns: reproducible byte for byte.
    pub fn losses_csv(&self) -> String {
        self.render(false)
    }

    pub fn evaluations(&self) -> Vec<(usize, f64, f64)> {
        self.rows.iter().filter_map(|r| r.eval.map(|(m, s)| (r.step, m, s))).collect()
    }

    pub fn final_eval(&self) -> Option<(f64, f64)> {
        self.rows.iter().rev().find_map(|r| r.eval)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join("report.csv"), self.to_csv())?;
        std::fs::write(dir.join("losses.csv"), self.losses_csv())?;
        Ok(())
    }
}

/// Evaluation episodes use this seed at every checkpoint so curves are comparable.
pub fn eval_seed(train_seed: u64) -> u64 {
    train_seed ^ 0x00e7_a1a5_eed0_0000
}

/// Runs `gradient_steps` iterations with periodic and final evaluation.
pub fn train(cfg: &TrainConfig, env: &dyn Environment, data: &DatasetArrays) -> Result<(Learner, TrainReport)> {
    if data.is_empty() {
        return Err(Error::arg("cannot train on an empty dataset"));
    }
    let mut learner = Learner::new(cfg.clone(), TaskSpec::of(env))?;
    let mut report = TrainReport::default();
    let seed = eval_seed(cfg.seed);
    for step in 1..=cfg.gradient_steps {
        let batch = learner.sample_batch(data);
        let l = learner.train_step(&batch)?;
        let due = (cfg.eval_every > 0 && step % cfg.eval_every == 0) || step == cfg.gradient_steps;
        report.rows.push(ReportRow {
            step,
            policy_loss: l.policy_loss,
            q_loss: l.q_loss,
            eval: if due { Some(learner.evaluate(env, seed)?) } else { None },
            wall_ms_policy: l.wall_ms_policy,
            wall_ms_q: l.wall_ms_q,
        });
    }
    Ok((learner, report))
}

/// Unconditional behaviour cloning with Flow Matching or MeanFlow; no Q, no labels.
pub fn train_bc_baseline(
    mode: Method,
    env: &dyn Environment,
    data: &DatasetArrays,
    cfg: &TrainConfig,
) -> Result<(Learner, TrainReport)> {
    if mode == Method::Vgm2p {
        return Err(Error::arg("baseline mode must be bc-fm or bc-mf"));
    }
    train(&TrainConfig { method: mode, ..cfg.clone() }, env, data)
}

/// Named scalar summary of a finished run.
pub fn summary(cfg: &TrainConfig, report: &TrainReport) -> BTreeMap<&'static str, String> {
    let (m, s) = report.final_eval().unwrap_or((f64::NAN, f64::NAN));
    BTreeMap::from([
        ("method", cfg.method.as_str().to_string()),
        ("q_loss_mode", cfg.q_loss.as_str().to_string()),
        ("omega", cfg.omega.to_string()),
        ("seed", cfg.seed.to_string()),
        ("steps", cfg.gradient_steps.to_string()),
        ("final_return_mean", m.to_string()),
        ("final_return_std", s.to_string()),
    ])
}

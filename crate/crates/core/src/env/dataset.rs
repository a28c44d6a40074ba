//! Offline datasets at controllable quality tiers, stored as NDJSON with a JSON manifest.

use super::{EnvState, Environment};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::value::JointTransitionBatch;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use std::fs;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Tier {
    Expert,
    Medium,
    Poor,
    Mixed,
}

impl Tier {
    pub fn as_str(self) -> &'static str {
        match self {
            Tier::Expert => "expert",
            Tier::Medium => "medium",
            Tier::Poor => "poor",
            Tier::Mixed => "mixed",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "expert" => Ok(Tier::Expert),
            "medium" => Ok(Tier::Medium),
            "poor" => Ok(Tier::Poor),
            "mixed" => Ok(Tier::Mixed),
            other => Err(Error::arg(format!("unknown tier `{other}`"))),
        }
    }
}

/// Per-episode behaviour: expert tables, a noisy expert, or uniform play.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Behavior {
    Expert,
    NoisyExpert,
    Uniform,
}

impl Behavior {
    pub fn as_str(self) -> &'static str {
        match self {
            Behavior::Expert => "expert",
            Behavior::NoisyExpert => "noisy_expert",
            Behavior::Uniform => "uniform",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviorSpec {
    pub tier: Tier,
    /// Probability that a mixed-tier episode is an expert episode.
    pub expert_fraction: f64,
    /// Medium tier: uniform-action probability (discrete) or Gaussian std (continuous).
    pub noise: f64,
}

impl BehaviorSpec {
    pub fn new(tier: Tier) -> Self {
        Self {
            tier,
            expert_fraction: 0.3,
            noise: 0.3,
        }
    }

    pub fn describe(&self) -> String {
        match self.tier {
            Tier::Expert => "expert policy".to_string(),
            Tier::Medium => format!("noisy expert (noise {})", self.noise),
            Tier::Poor => "uniform policy".to_string(),
            Tier::Mixed => format!(
                "episode mixture: {} expert / {} uniform",
                self.expert_fraction,
                1.0 - self.expert_fraction
            ),
        }
    }

    fn episode_behavior(&self, rng: &mut dyn RngCore) -> Behavior {
        match self.tier {
            Tier::Expert => Behavior::Expert,
            Tier::Medium => Behavior::NoisyExpert,
            Tier::Poor => Behavior::Uniform,
            Tier::Mixed => {
                if rng.random::<f64>() < self.expert_fraction {
                    Behavior::Expert
                } else {
                    Behavior::Uniform
                }
            }
        }
    }

    fn act(&self, env: &dyn Environment, behavior: Behavior, state: &EnvState, agent: usize, rng: &mut dyn RngCore) -> Vec<f64> {
        let space = env.action_space();
        match behavior {
            Behavior::Expert => env.expert_action(state, agent),
            Behavior::Uniform => space.sample_uniform(rng),
            Behavior::NoisyExpert => {
                if space.is_discrete() {
                    if rng.random::<f64>() < self.noise {
                        space.sample_uniform(rng)
                    } else {
                        env.expert_action(state, agent)
                    }
                } else {
                    let raw: Vec<f64> = env
                        .expert_action(state, agent)
                        .iter()
                        .map(|x| x + self.noise * rng.sample::<f64, _>(StandardNormal))
                        .collect();
                    space.project(&raw)
                }
            }
        }
    }
}

/// One joint timestep. `obs`, `act`, `next_obs` are agent-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub episode: usize,
    pub t: usize,
    pub behavior: String,
    pub state: Vec<f64>,
    pub obs: Vec<Vec<f64>>,
    pub act: Vec<Vec<f64>>,
    pub next_obs: Vec<Vec<f64>>,
    pub reward: f64,
    pub done: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub tier: Tier,
    pub seed: u64,
    pub env: String,
    pub n_agents: usize,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub n_transitions: usize,
    pub n_episodes: usize,
    pub generator: String,
    /// SHA-256 of the NDJSON body.
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OfflineDataset {
    pub manifest: DatasetManifest,
    pub records: Vec<StepRecord>,
}

/// Rolls out the tier's behaviour until `n_transitions` joint steps are stored; the last
/// episode may be cut short.
pub fn generate_offline_dataset(
    env: &dyn Environment,
    spec: &BehaviorSpec,
    n_transitions: usize,
    seed: u64,
) -> Result<OfflineDataset> {
    if n_transitions == 0 {
        return Err(Error::arg("n_transitions must be positive"));
    }
    if !(0.0..=1.0).contains(&spec.expert_fraction) || spec.noise < 0.0 {
        return Err(Error::arg("behaviour mixture weights out of range"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n_transitions);
    let mut episode = 0;
    while records.len() < n_transitions {
        let behavior = spec.episode_behavior(&mut rng);
        let mut state = env.reset(&mut rng);
        let mut obs = env.observe(&state);
        for t in 0..env.horizon() {
            let act: Vec<Vec<f64>> = (0..env.n_agents())
                .map(|i| spec.act(env, behavior, &state, i, &mut rng))
                .collect();
            let tr = env.step(&state, &act, &mut rng)?;
            records.push(StepRecord {
                episode,
                t,
                behavior: behavior.as_str().to_string(),
                state: state.values.clone(),
                obs: obs.clone(),
                act,
                next_obs: tr.obs.clone(),
                reward: tr.reward,
                done: tr.done,
            });
            if records.len() == n_transitions || tr.done {
                break;
            }
            state = tr.state;
            obs = tr.obs;
        }
        episode += 1;
    }
    let mut ds = OfflineDataset {
        manifest: DatasetManifest {
            tier: spec.tier,
            seed,
            env: env.name().to_string(),
            n_agents: env.n_agents(),
            obs_dim: env.obs_dim(),
            action_dim: env.action_space().dim(),
            n_transitions,
            n_episodes: episode,
            generator: spec.describe(),
            sha256: String::new(),
        },
        records,
    };
    ds.manifest.sha256 = sha256_hex(ds.to_ndjson()?.as_bytes());
    Ok(ds)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// `data.ndjson` ↦ `data.manifest.json`
pub fn manifest_path(data_path: &Path) -> PathBuf {
    data_path.with_extension("manifest.json")
}

/// Dense per-agent arrays for minibatch sampling.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetArrays {
    pub obs: Vec<Tensor>,
    pub actions: Vec<Tensor>,
    pub next_obs: Vec<Tensor>,
    pub reward: Vec<f64>,
    pub done: Vec<f64>,
}

impl DatasetArrays {
    pub fn len(&self) -> usize {
        self.reward.len()
    }

    pub fn is_empty(&self) -> bool {
        self.reward.is_empty()
    }

    pub fn gather(&self, indices: &[usize]) -> JointTransitionBatch {
        let pick = |t: &Tensor| {
            let w = t.cols();
            let mut data = Vec::with_capacity(indices.len() * w);
            for &i in indices {
                data.extend_from_slice(t.row(i));
            }
            Tensor::new(vec![indices.len(), w], data).expect("gather shape")
        };
        JointTransitionBatch {
            obs: self.obs.iter().map(pick).collect(),
            actions: self.actions.iter().map(pick).collect(),
            next_obs: self.next_obs.iter().map(pick).collect(),
            reward: indices.iter().map(|&i| self.reward[i]).collect(),
            done: indices.iter().map(|&i| self.done[i]).collect(),
        }
    }

    /// Uniform sampling with replacement.
    pub fn sample<R: Rng>(&self, batch_size: usize, rng: &mut R) -> JointTransitionBatch {
        let idx: Vec<usize> = (0..batch_size).map(|_| rng.random_range(0..self.len())).collect();
        self.gather(&idx)
    }
}

impl OfflineDataset {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn to_ndjson(&self) -> Result<String> {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r)?);
            out.push('\n');
        }
        Ok(out)
    }

    /// Writes the records to `path` and the manifest beside it.
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::write(path, self.to_ndjson()?)?;
        fs::write(manifest_path(path), serde_json::to_string_pretty(&self.manifest)? + "\n")?;
        Ok(())
    }

    /// Loads records and manifest and checks the content hash.
    pub fn load(path: &Path) -> Result<Self> {
        let body = fs::read_to_string(path)?;
        let manifest: DatasetManifest = serde_json::from_str(&fs::read_to_string(manifest_path(path))?)?;
        let hash = sha256_hex(body.as_bytes());
        if hash != manifest.sha256 {
            return Err(Error::format(
                "dataset",
                format!("content hash {hash} does not match manifest {}", manifest.sha256),
            ));
        }
        let records = body
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<std::result::Result<Vec<StepRecord>, _>>()?;
        if records.len() != manifest.n_transitions {
            return Err(Error::format(
                "dataset",
                format!("{} records, manifest says {}", records.len(), manifest.n_transitions),
            ));
        }
        Ok(Self { manifest, records })
    }

    pub fn arrays(&self) -> Result<DatasetArrays> {
        let n = self.manifest.n_agents;
        let mut obs = vec![Vec::new(); n];
        let mut actions = vec![Vec::new(); n];
        let mut next_obs = vec![Vec::new(); n];
        for r in &self.records {
            if r.obs.len() != n || r.act.len() != n || r.next_obs.len() != n {
                return Err(Error::format("dataset", format!("record at episode {} has wrong agent count", r.episode)));
            }
            for i in 0..n {
                obs[i].push(r.obs[i].clone());
                actions[i].push(r.act[i].clone());
                next_obs[i].push(r.next_obs[i].clone());
            }
        }
        let stack = |rows: Vec<Vec<Vec<f64>>>| rows.iter().map(|r| Tensor::from_rows(r)).collect::<Result<Vec<_>>>();
        Ok(DatasetArrays {
            obs: stack(obs)?,
            actions: stack(actions)?,
            next_obs: stack(next_obs)?,
            reward: self.records.iter().map(|r| r.reward).collect(),
            done: self.records.iter().map(|r| if r.done { 1.0 } else { 0.0 }).collect(),
        })
    }

    /// Undiscounted return of each episode, in order.
    pub fn episode_returns(&self) -> Vec<f64> {
        let mut out: Vec<f64> = Vec::new();
        let mut current = None;
        for r in &self.records {
            if current != Some(r.episode) {
                out.push(0.0);
                current = Some(r.episode);
            }
            *out.last_mut().expect("pushed above") += r.reward;
        }
        out
    }

    pub fn mean_return(&self) -> f64 {
        let rets = self.episode_returns();
        rets.iter().sum::<f64>() / rets.len().max(1) as f64
    }

    /// Behaviour tag of each episode, in order.
    pub fn episode_behaviors(&self) -> Vec<&str> {
        let mut out = Vec::new();
        let mut current = None;
        for r in &self.records {
            if current != Some(r.episode) {
                out.push(r.behavior.as_str());
                current = Some(r.episode);
            }
        }
        out
    }

    /// Re-steps every stored `(state, action)` through a deterministic environment and
    /// checks that the stored next observation, reward and done flag come back exactly.
    pub fn replay_check(&self, env: &dyn Environment) -> Result<()> {
        if !env.is_deterministic() {
            return Err(Error::arg("replay needs a deterministic environment"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for (k, r) in self.records.iter().enumerate() {
            let state = EnvState {
                t: r.t,
                values: r.state.clone(),
            };
            if env.observe(&state) != r.obs {
                return Err(Error::format("dataset replay", format!("record {k}: observation mismatch")));
            }
            let tr = env.step(&state, &r.act, &mut rng)?;
            if tr.obs != r.next_obs || tr.reward != r.reward || tr.done != r.done {
                return Err(Error::format("dataset replay", format!("record {k}: transition mismatch")));
            }
        }
        Ok(())
    }
}

/// Checks `expert ≥ mixed ≥ poor` with each gap at least 10% of the expert return's magnitude.
pub fn check_tier_ordering(expert: f64, mixed: f64, poor: f64) -> Result<()> {
    let margin = 0.1 * expert.abs();
    if expert - mixed < margin || mixed - poor < margin {
        return Err(Error::arg(format!(
            "tier ordering violated: expert {expert:.4}, mixed {mixed:.4}, poor {poor:.4} (margin {margin:.4})"
        )));
    }
    Ok(())
}

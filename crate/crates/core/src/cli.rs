//! Command-line front end. [`run`] parses argv, executes one subcommand and returns the
//! process exit code: 0 on success, 1 when a check fails or a command errors, 2 on
//! usage errors.
//!
//! Run directories produced by `train` hold `config.toml` (the resolved [`RunConfig`]),
//! `report.csv`, `losses.csv`, one checkpoint per network and `manifest.json`.

use crate::checkpoint::Checkpoint;
use crate::env::dataset::sha256_hex;
use crate::env::{env_by_name, generate_offline_dataset, BehaviorSpec, Environment, OfflineDataset, Tier};
use crate::error::{Error, Result};
use crate::flow::{sample_multi_step, sample_one_step, AvgVelocityNet, FlowLayout};
use crate::mlp::{jvp_check, Activation, JVP_TOLERANCE};
use crate::oracle::{
    igm_check, non_additive_counterexample, prop1_instance, prop2_instance, proposition_1_gap, random_q,
    verify_factorization, verify_proposition_2, VerificationReport, ENUMERATION_CAP, LAMBDAS,
};
use crate::tensor::Tensor;
use crate::trainer::{
    eval_seed, evaluate, policy_checkpoint, policy_from_checkpoint, summary, train, Learner, LrSchedule, Method,
    Policies, Sampler, TrainConfig, TrainReport,
};
use crate::value::QLossMode;
use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

/// Where training data comes from: a saved dataset, or one generated in memory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DataConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
    pub tier: Tier,
    pub transitions: usize,
    pub seed: u64,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            path: None,
            tier: Tier::Mixed,
            transitions: 5000,
            seed: 0,
        }
    }
}

/// Resolved configuration of one training run, stored as TOML beside its outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub env: String,
    pub out: PathBuf,
    pub data: DataConfig,
    pub train: TrainConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            env: "additive_game".into(),
            out: PathBuf::from("runs/default"),
            data: DataConfig::default(),
            train: TrainConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::format("run config", e.to_string()))
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::format("run config", e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    /// Hash of everything that determines the outputs; the output directory is excluded.
    pub fn config_hash(&self) -> Result<String> {
        let canonical = RunConfig {
            out: PathBuf::new(),
            ..self.clone()
        };
        Ok(sha256_hex(canonical.to_toml()?.as_bytes()))
    }
}

/// Written next to every artifact set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub config_hash: String,
    pub config: serde_json::Value,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub summary: BTreeMap<String, String>,
}

impl RunManifest {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(self)? + "\n")?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        Ok(serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Check {
    Prop1,
    Prop2,
    Igm,
    Jvp,
}

impl Check {
    pub fn as_str(self) -> &'static str {
        match self {
            Check::Prop1 => "prop1",
            Check::Prop2 => "prop2",
            Check::Igm => "igm",
            Check::Jvp => "jvp",
        }
    }
}

/// Random additive per-agent tables with at most 10⁴ joint actions.
pub fn igm_instance(seed: u64) -> Vec<crate::oracle::ExactQ> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n_agents = rng.random_range(2..=4);
    let max_actions = match n_agents {
        2 => 100,
        3 => 21,
        _ => 10,
    };
    (0..n_agents)
        .map(|_| {
            let n = rng.random_range(2..=max_actions);
            random_q(1, n, 5.0, 1.0, &mut rng)
        })
        .collect()
}

/// One report per instance seed `0..seeds`. `tv_distance` carries the check's deviation:
/// the worst TV over λ for the propositions, the joint/per-agent mismatch indicator for
/// IGM, and the relative tangent error for JVP.
pub fn verification_reports(check: Check, seeds: u64) -> Result<Vec<VerificationReport>> {
    let mut out = Vec::with_capacity(seeds as usize + 1);
    for seed in 0..seeds {
        let (metric, pass) = match check {
            Check::Prop1 => {
                let mut worst: f64 = 0.0;
                for lambda in LAMBDAS {
                    let (beta, q) = prop1_instance(seed, lambda);
                    worst = worst.max(proposition_1_gap(&beta, &q, lambda)?);
                }
                (worst, worst <= crate::oracle::PROP1_TOLERANCE)
            }
            Check::Prop2 => {
                let mut worst: f64 = 0.0;
                for lambda in LAMBDAS {
                    let (betas, qs) = prop2_instance(seed, lambda);
                    worst = worst.max(verify_proposition_2(&betas, &qs, lambda, ENUMERATION_CAP)?.tv_distance);
                }
                (worst, worst <= crate::oracle::PROP2_TOLERANCE)
            }
            Check::Igm => {
                let report = igm_check(&igm_instance(seed), 0)?;
                (if report.consistent { 0.0 } else { 1.0 }, report.consistent)
            }
            Check::Jvp => {
                let c = jvp_check(seed)?;
                (c.relative_error, c.relative_error <= JVP_TOLERANCE)
            }
        };
        out.push(VerificationReport {
            check: check.as_str().into(),
            instance_seed: seed,
            tv_distance: metric,
            pass,
        });
    }
    if check == Check::Prop2 {
        // the oracle must also see through a coupled payoff
        let (betas, qs, joint) = non_additive_counterexample();
        let tv = verify_factorization(&betas, &qs, &joint, 1.0, ENUMERATION_CAP)?.tv_distance;
        out.push(VerificationReport {
            check: "prop2_counterexample".into(),
            instance_seed: 0,
            tv_distance: tv,
            pass: tv > 1e-3,
        });
    }
    Ok(out)
}

/// Wall-clock of one sampler configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub steps: usize,
    pub actions: usize,
    pub total_ms: f64,
    pub us_per_action: f64,
}

/// Draws `n_actions` actions from `net` with `steps` sampling steps, `batch` rows per call.
pub fn bench_sampler(net: &AvgVelocityNet, steps: usize, n_actions: usize, batch: usize, seed: u64) -> Result<BenchRow> {
    if steps == 0 || n_actions == 0 || batch == 0 {
        return Err(Error::arg("steps, actions and batch must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let calls = n_actions.div_ceil(batch);
    let obs: Vec<Tensor> = (0..calls)
        .map(|_| {
            let data = (0..batch * net.obs_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            Tensor::new(vec![batch, net.obs_dim], data)
        })
        .collect::<Result<_>>()?;
    let mut checksum = 0.0;
    let t = Instant::now();
    for o in &obs {
        let a = if steps == 1 {
            sample_one_step(net, o, 1, &mut rng)?
        } else {
            sample_multi_step(net, o, 1, steps, &mut rng)?
        };
        checksum += a.data()[0];
    }
    let total_ms = t.elapsed().as_secs_f64() * 1e3;
    std::hint::black_box(checksum);
    let actions = calls * batch;
    Ok(BenchRow {
        steps,
        actions,
        total_ms,
        us_per_action: total_ms * 1e3 / actions as f64,
    })
}

#[derive(Parser, Debug)]
#[command(name = "vgm2p", version, about = "Advantage-conditioned one-step flow policies for cooperative offline multi-agent RL")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Roll out a behaviour tier and save the dataset with its manifest.
    GenData(GenDataArgs),
    /// Train a policy (VGM2P or a BC baseline) and write a run directory.
    Train(Box<TrainArgs>),
    /// Evaluate a run's policies with decentralized execution.
    Eval(EvalArgs),
    /// Run the oracle and autodiff verification suite.
    Verify(VerifyArgs),
    /// Time one-step against multi-step sampling.
    Bench(BenchArgs),
    /// Collect training curves and final returns of several runs into CSV.
    ExportPlots(ExportArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long, default_value = "additive_game")]
    env: String,
    #[arg(long, default_value = "mixed", value_parser = parse_tier)]
    tier: Tier,
    #[arg(long, default_value_t = 5000)]
    transitions: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Dataset path; the manifest goes to `<stem>.manifest.json`.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// TOML run config; flags given on the command line override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    env: Option<String>,
    /// Saved dataset; without it a dataset is generated from the data settings.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, value_parser = parse_tier)]
    tier: Option<Tier>,
    #[arg(long)]
    transitions: Option<usize>,
    #[arg(long)]
    data_seed: Option<u64>,
    #[arg(long, value_parser = parse_method)]
    method: Option<Method>,
    #[arg(long, value_parser = parse_q_loss)]
    q_loss: Option<QLossMode>,
    #[arg(long)]
    omega: Option<f64>,
    #[arg(long)]
    gamma: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    q_lr: Option<f64>,
    #[arg(long, value_parser = parse_schedule)]
    lr_schedule: Option<LrSchedule>,
    #[arg(long)]
    batch_size: Option<usize>,
    /// Hidden widths, comma separated.
    #[arg(long, value_delimiter = ',')]
    hidden: Option<Vec<usize>>,
    #[arg(long, value_parser = parse_activation)]
    activation: Option<Activation>,
    /// Gradient steps.
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    tau: Option<f64>,
    /// Decay of the evaluation-time policy weight average; 0 disables it.
    #[arg(long)]
    policy_ema: Option<f64>,
    #[arg(long)]
    eval_every: Option<usize>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    episodes: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sampling steps; defaults to the method's own sampler.
    #[arg(long)]
    sampler_steps: Option<usize>,
}

#[derive(Args, Debug)]
struct VerifyArgs {
    #[arg(long, value_enum)]
    check: Check,
    #[arg(long, default_value_t = 100)]
    seeds: u64,
}

#[derive(Args, Debug)]
struct BenchArgs {
    /// Run directory whose first policy is timed; otherwise a fresh network is used.
    #[arg(long)]
    run: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "1,10")]
    steps: Vec<usize>,
    #[arg(long, default_value_t = 10_000)]
    actions: usize,
    /// Rows per sampler call; 1 matches per-agent execution.
    #[arg(long, default_value_t = 1)]
    batch: usize,
    #[arg(long, value_delimiter = ',', default_value = "64,64")]
    hidden: Vec<usize>,
    #[arg(long, default_value_t = 4)]
    obs_dim: usize,
    #[arg(long, default_value_t = 2)]
    action_dim: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Write the timings as CSV here as well.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// Run directories.
    #[arg(long, num_args = 1.., required = true)]
    runs: Vec<PathBuf>,
    /// Output directory for `curves.csv` and `ablation.csv`.
    #[arg(long)]
    out: PathBuf,
}

fn parse_tier(s: &str) -> std::result::Result<Tier, String> {
    Tier::parse(s).map_err(|e| e.to_string())
}

fn parse_method(s: &str) -> std::result::Result<Method, String> {
    Method::parse(s).map_err(|e| e.to_string())
}

fn parse_q_loss(s: &str) -> std::result::Result<QLossMode, String> {
    QLossMode::parse(s).map_err(|e| e.to_string())
}

fn parse_schedule(s: &str) -> std::result::Result<LrSchedule, String> {
    LrSchedule::parse(s).map_err(|e| e.to_string())
}

fn parse_activation(s: &str) -> std::result::Result<Activation, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

enum Failure {
    Check,
    Usage(String),
    Runtime(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Argument(msg) => Failure::Usage(msg),
            other => Failure::Runtime(other),
        }
    }
}

/// Entry point of the binary: prints to stdout/stderr and returns the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with(argv, &mut std::io::stdout(), &mut std::io::stderr())
}

/// [`run`] with explicit output streams.
pub fn run_with<I, T>(argv: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let text = e.render().to_string();
            let _ = if code == 0 { write!(out, "{text}") } else { write!(err, "{text}") };
            return code;
        }
    };
    match dispatch(cli.command, out) {
        Ok(()) => 0,
        Err(Failure::Check) => 1,
        Err(Failure::Usage(msg)) => {
            let _ = writeln!(err, "error: {msg}");
            2
        }
        Err(Failure::Runtime(e)) => {
            let _ = writeln!(err, "error: {e}");
            1
        }
    }
}

fn dispatch(cmd: Command, out: &mut dyn Write) -> std::result::Result<(), Failure> {
    match cmd {
        Command::GenData(a) => gen_data(a, out).map_err(Failure::from),
        Command::Train(a) => train_cmd(*a, out).map_err(Failure::from),
        Command::Eval(a) => eval_cmd(a, out).map_err(Failure::from),
        Command::Verify(a) => {
            let reports = verification_reports(a.check, a.seeds)?;
            for r in &reports {
                writeln!(out, "{}", r.to_json_line()).map_err(Error::from)?;
            }
            if reports.iter().all(|r| r.pass) {
                Ok(())
            } else {
                Err(Failure::Check)
            }
        }
        Command::Bench(a) => bench_cmd(a, out).map_err(Failure::from),
        Command::ExportPlots(a) => export_plots(a, out).map_err(Failure::from),
    }
}

fn gen_data(a: GenDataArgs, out: &mut dyn Write) -> Result<()> {
    let env = env_by_name(&a.env)?;
    let ds = generate_offline_dataset(env.as_ref(), &BehaviorSpec::new(a.tier), a.transitions, a.seed)?;
    ds.save(&a.out)?;
    writeln!(
        out,
        "wrote {} transitions ({} episodes, mean return {:.4}) to {} sha256 {}",
        ds.len(),
        ds.manifest.n_episodes,
        ds.mean_return(),
        a.out.display(),
        ds.manifest.sha256
    )?;
    Ok(())
}

/// Applies `--config` and then every explicit flag on top of the defaults.
fn resolve_run_config(a: &TrainArgs) -> Result<RunConfig> {
    let mut rc = match &a.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    macro_rules! set {
        ($field:expr, $value:expr) => {
            if let Some(v) = $value.clone() {
                $field = v;
            }
        };
    }
    set!(rc.env, a.env);
    set!(rc.out, a.out);
    if a.data.is_some() {
        rc.data.path = a.data.clone();
    }
    set!(rc.data.tier, a.tier);
    set!(rc.data.transitions, a.transitions);
    set!(rc.data.seed, a.data_seed);
    let t = &mut rc.train;
    set!(t.method, a.method);
    set!(t.q_loss, a.q_loss);
    set!(t.omega, a.omega);
    set!(t.gamma, a.gamma);
    set!(t.lr, a.lr);
    if a.q_lr.is_some() {
        t.q_lr = a.q_lr;
    }
    set!(t.lr_schedule, a.lr_schedule);
    set!(t.batch_size, a.batch_size);
    set!(t.hidden_dims, a.hidden);
    set!(t.activation, a.activation);
    set!(t.gradient_steps, a.steps);
    set!(t.tau, a.tau);
    set!(t.policy_ema, a.policy_ema);
    set!(t.eval_every, a.eval_every);
    set!(t.eval_episodes, a.eval_episodes);
    set!(t.seed, a.seed);
    if a.config.is_none() && a.out.is_none() {
        return Err(Error::arg("train needs --out or a --config naming an output directory"));
    }
    rc.train.validate()?;
    Ok(rc)
}

fn load_or_generate(rc: &RunConfig, env: &dyn Environment) -> Result<OfflineDataset> {
    let ds = match &rc.data.path {
        Some(p) => OfflineDataset::load(p)?,
        None => generate_offline_dataset(env, &BehaviorSpec::new(rc.data.tier), rc.data.transitions, rc.data.seed)?,
    };
    if ds.manifest.env != env.name() {
        return Err(Error::arg(format!(
            "dataset was generated on `{}` but the run targets `{}`",
            ds.manifest.env,
            env.name()
        )));
    }
    Ok(ds)
}

/// Builds the environment and dataset of `rc` and trains on them.
pub fn train_run(rc: &RunConfig) -> Result<(OfflineDataset, Learner, TrainReport)> {
    let env = env_by_name(&rc.env)?;
    let ds = load_or_generate(rc, env.as_ref())?;
    let (learner, report) = train(&rc.train, env.as_ref(), &ds.arrays()?)?;
    Ok((ds, learner, report))
}

fn train_cmd(a: TrainArgs, out: &mut dyn Write) -> Result<()> {
    let rc = resolve_run_config(&a)?;
    let (ds, learner, report) = train_run(&rc)?;

    let dir = &rc.out;
    fs::create_dir_all(dir)?;
    let hash = rc.config_hash()?;
    let mut outputs = BTreeMap::new();
    let mut put = |name: &str, bytes: &[u8]| -> Result<()> {
        fs::write(dir.join(name), bytes)?;
        outputs.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    };
    put("config.toml", rc.to_toml()?.as_bytes())?;
    put("losses.csv", report.losses_csv().as_bytes())?;
    for (name, ck) in learner.checkpoints(&hash) {
        let mut bytes = Vec::new();
        ck.write_to(&mut bytes)?;
        put(&format!("{name}.ckpt"), &bytes)?;
    }
    // timing columns differ between runs, so the full report stays out of the hash list
    fs::write(dir.join("report.csv"), report.to_csv())?;

    let summary: BTreeMap<String, String> = summary(&rc.train, &report)
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
    let manifest = RunManifest {
        command: "train".into(),
        config_hash: hash,
        config: serde_json::to_value(&rc)?,
        inputs: BTreeMap::from([("dataset".to_string(), ds.manifest.sha256.clone())]),
        outputs,
        summary: summary.clone(),
    };
    manifest.save(dir)?;
    writeln!(out, "{}", serde_json::to_string(&summary)?)?;
    Ok(())
}

/// Loads the config and policy networks of a run directory.
pub fn load_run(dir: &Path) -> Result<(RunConfig, Policies)> {
    let rc = RunConfig::load(&dir.join("config.toml"))?;
    let env = env_by_name(&rc.env)?;
    let count = if rc.train.shared_params { 1 } else { env.n_agents() };
    let nets = (0..count)
        .map(|k| policy_from_checkpoint(&Checkpoint::load(&dir.join(format!("policy{k}.ckpt")))?))
        .collect::<Result<Vec<_>>>()?;
    Ok((
        rc,
        Policies {
            nets,
            n_agents: env.n_agents(),
        },
    ))
}

fn eval_cmd(a: EvalArgs, out: &mut dyn Write) -> Result<()> {
    let (rc, policies) = load_run(&a.run)?;
    let env = env_by_name(&rc.env)?;
    let mut sampler = rc.train.sampler();
    if let Some(s) = a.sampler_steps {
        sampler = Sampler { c: sampler.c, steps: s };
    }
    let episodes = a.episodes.unwrap_or(rc.train.eval_episodes);
    let seed = a.seed.unwrap_or_else(|| eval_seed(rc.train.seed));
    let (mean, std) = evaluate(&policies, sampler, env.as_ref(), episodes, seed)?;
    let line = serde_json::json!({
        "env": rc.env,
        "episodes": episodes,
        "sampler_steps": sampler.steps,
        "return_mean": mean,
        "return_std": std,
        "optimal_return": env.optimal_return(),
    });
    writeln!(out, "{line}")?;
    Ok(())
}

fn bench_cmd(a: BenchArgs, out: &mut dyn Write) -> Result<()> {
    let net = match &a.run {
        Some(dir) => load_run(dir)?.1.nets.swap_remove(0),
        None => AvgVelocityNet::new(
            FlowLayout::Conditional,
            a.action_dim,
            a.obs_dim,
            &a.hidden,
            Activation::Tanh,
            8,
            a.seed,
        )?,
    };
    let rows = a
        .steps
        .iter()
        .map(|&s| bench_sampler(&net, s, a.actions, a.batch, a.seed))
        .collect::<Result<Vec<_>>>()?;
    let mut csv = String::from("steps,actions,total_ms,us_per_action\n");
    for r in &rows {
        csv.push_str(&format!("{},{},{:.3},{:.3}\n", r.steps, r.actions, r.total_ms, r.us_per_action));
    }
    write!(out, "{csv}")?;
    if let Some(path) = &a.out {
        fs::write(path, &csv)?;
        // keep the network next to its timings so the numbers can be reproduced
        let mut bytes = Vec::new();
        policy_checkpoint(&net, "bench").write_to(&mut bytes)?;
        fs::write(path.with_extension("ckpt"), bytes)?;
    }
    Ok(())
}

fn export_plots(a: ExportArgs, out: &mut dyn Write) -> Result<()> {
    fs::create_dir_all(&a.out)?;
    let mut curves = csv::Writer::from_writer(Vec::new());
    let mut ablation = csv::Writer::from_writer(Vec::new());
    let csv_err = |e: csv::Error| Error::format("csv", e.to_string());
    curves
        .write_record(["run", "env", "method", "q_loss", "omega", "seed", "step", "eval_return_mean", "eval_return_std"])
        .map_err(csv_err)?;
    ablation
        .write_record(["run", "env", "method", "q_loss", "omega", "seed", "final_return_mean", "final_return_std"])
        .map_err(csv_err)?;
    let mut inputs = BTreeMap::new();
    for dir in &a.runs {
        let rc = RunConfig::load(&dir.join("config.toml"))?;
        let losses = fs::read(dir.join("losses.csv"))?;
        inputs.insert(dir.display().to_string(), sha256_hex(&losses));
        let t = &rc.train;
        let label = dir.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        let head = [
            label,
            rc.env.clone(),
            t.method.as_str().to_string(),
            t.q_loss.as_str().to_string(),
            t.omega.to_string(),
            t.seed.to_string(),
        ];
        let mut reader = csv::Reader::from_reader(losses.as_slice());
        let mut last: Option<(String, String)> = None;
        for rec in reader.records() {
            let rec = rec.map_err(csv_err)?;
            let (step, mean, std) = (&rec[0], &rec[3], &rec[4]);
            if mean.is_empty() {
                continue;
            }
            let mut row: Vec<String> = head.to_vec();
            row.extend([step.to_string(), mean.to_string(), std.to_string()]);
            curves.write_record(&row).map_err(csv_err)?;
            last = Some((mean.to_string(), std.to_string()));
        }
        let (m, s) = last.ok_or_else(|| Error::format("losses.csv", format!("{} has no evaluations", dir.display())))?;
        let mut row: Vec<String> = head.to_vec();
        row.extend([m, s]);
        ablation.write_record(&row).map_err(csv_err)?;
    }
    let mut outputs = BTreeMap::new();
    for (name, w) in [("curves.csv", curves), ("ablation.csv", ablation)] {
        let bytes = w.into_inner().map_err(|e| Error::format("csv", e.to_string()))?;
        fs::write(a.out.join(name), &bytes)?;
        outputs.insert(name.to_string(), sha256_hex(&bytes));
    }
    let manifest = RunManifest {
        command: "export-plots".into(),
        config_hash: sha256_hex(serde_json::to_string(&inputs)?.as_bytes()),
        config: serde_json::json!({ "runs": a.runs }),
        inputs,
        outputs,
        summary: BTreeMap::from([("runs".to_string(), a.runs.len().to_string())]),
    };
    manifest.save(&a.out)?;
    writeln!(out, "wrote curves.csv and ablation.csv for {} runs to {}", a.runs.len(), a.out.display())?;
    Ok(())
}

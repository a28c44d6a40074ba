//! Acceptance suite: one PASS/FAIL line per criterion, non-zero exit if any fails.
//! Runs without the libtest harness so the lines always reach the terminal.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::path::Path;
use std::time::{Duration, Instant};
use vgm2p::cli::{bench_sampler, run_with, train_run, verification_reports, Check, RunConfig};
use vgm2p::env::dataset::DatasetArrays;
use vgm2p::env::{env_by_name, ActionSpace};
use vgm2p::flow::{make_flow_batch, mf_loss, sample_one_step, AvgVelocityNet, FlowLayout, PointMassField};
use vgm2p::mlp::Activation;
use vgm2p::tensor::Tensor;
use vgm2p::trainer::{Learner, LrSchedule, Method, TaskSpec, TrainConfig};
use vgm2p::value::QLossMode;

const SEEDS: u64 = 6;
const X0: [f64; 2] = [0.4, -0.3];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn secs(d: Duration) -> f64 {
    d.as_secs_f64()
}

fn desk_config(env: &str) -> RunConfig {
    let path = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(format!("{env}.toml"));
    RunConfig::load(&path).expect("desk config")
}

/// Mean final evaluation return over `SEEDS` training seeds.
fn mean_return(base: &RunConfig, tweak: impl Fn(&mut TrainConfig)) -> f64 {
    let mut total = 0.0;
    for seed in 0..SEEDS {
        let mut rc = base.clone();
        rc.train.seed = seed;
        tweak(&mut rc.train);
        let (_, _, report) = train_run(&rc).expect("training run");
        total += report.final_eval().expect("final evaluation").0;
    }
    total / SEEDS as f64
}

fn check_reports(check: Check, seeds: u64, budget: Option<f64>) -> Outcome {
    let t = Instant::now();
    let reports = verification_reports(check, seeds).expect("verification");
    let elapsed = secs(t.elapsed());
    let main: Vec<_> = reports.iter().filter(|r| r.check == check.as_str()).collect();
    let worst = main.iter().map(|r| r.tv_distance).fold(0.0, f64::max);
    let passed = main.iter().filter(|r| r.pass).count();
    let extra = reports.iter().find(|r| r.check.ends_with("counterexample"));
    let mut ok = passed == seeds as usize && budget.is_none_or(|b| elapsed < b);
    let mut detail = format!("{passed}/{seeds} instances pass, worst {worst:.3e}, {elapsed:.2}s");
    if let Some(b) = budget {
        detail.push_str(&format!(" (< {b}s)"));
    }
    if let Some(c) = extra {
        ok &= c.pass;
        detail.push_str(&format!(", counterexample TV {:.4} (> 1e-3)", c.tv_distance));
    }
    outcome(ok, detail)
}

fn criterion_2() -> Outcome {
    let t = Instant::now();
    let field = PointMassField { x0: X0.to_vec() };
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst_loss: f64 = 0.0;
    for _ in 0..20 {
        let obs = Tensor::zeros(&[256, 0]);
        let act = Tensor::from_rows(&vec![X0.to_vec(); 256]).unwrap();
        let fb = make_flow_batch(&obs, &act, &[1; 256], &mut rng, 0.25).unwrap();
        worst_loss = worst_loss.max(mf_loss(&field, &fb).unwrap());
    }

    let cfg = TrainConfig {
        method: Method::BcMf,
        lr: 1e-2,
        lr_schedule: LrSchedule::Cosine,
        batch_size: 128,
        hidden_dims: vec![64, 64, 64],
        gradient_steps: 5000,
        ..TrainConfig::default()
    };
    let task = TaskSpec {
        n_agents: 1,
        obs_dim: 0,
        space: ActionSpace::Continuous { dim: 2, low: -1.0, high: 1.0 },
    };
    let n = 256;
    let obs = Tensor::zeros(&[n, 0]);
    let data = DatasetArrays {
        obs: vec![obs.clone()],
        actions: vec![Tensor::from_rows(&vec![X0.to_vec(); n]).unwrap()],
        next_obs: vec![obs],
        reward: vec![0.0; n],
        done: vec![1.0; n],
    };
    let mut learner = Learner::new(cfg, task).unwrap();
    for _ in 0..5000 {
        let b = learner.sample_batch(&data);
        learner.train_step(&b).unwrap();
    }
    let a = sample_one_step(learner.policies.net(0), &Tensor::zeros(&[1000, 0]), 1, &mut rng).unwrap();
    let err = (0..1000)
        .map(|i| a.row(i).iter().zip(X0).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
        .sum::<f64>()
        / 1000.0;
    let elapsed = secs(t.elapsed());
    outcome(
        worst_loss <= 1e-20 && err <= 1e-2 && elapsed < 60.0,
        format!("exact-field loss {worst_loss:.2e} (<= 1e-20), one-step error {err:.4} (<= 1e-2), {elapsed:.1}s (< 60s)"),
    )
}

fn criterion_6() -> (Outcome, f64) {
    let t = Instant::now();
    let mut ok = true;
    let mut parts = Vec::new();
    let mut spread_vgm2p = f64::NAN;
    for env_name in ["additive_game", "spread"] {
        let base = desk_config(env_name);
        let optimum = env_by_name(env_name).unwrap().optimal_return();
        let vg = mean_return(&base, |_| {});
        let bc = mean_return(&base, |c| c.method = Method::BcMf);
        let closed = (vg - bc) / (optimum - bc);
        ok &= vg > bc && closed >= 0.5;
        parts.push(format!("{env_name}: vgm2p {vg:.3} vs bc-mf {bc:.3}, optimum {optimum:.3}, gap closed {:.0}%", 100.0 * closed));
        if env_name == "spread" {
            spread_vgm2p = vg;
        }
    }
    let elapsed = secs(t.elapsed());
    ok &= elapsed < 900.0;
    parts.push(format!("{elapsed:.0}s (< 900s)"));
    (outcome(ok, parts.join("; ")), spread_vgm2p)
}

fn criterion_7() -> Outcome {
    let t = Instant::now();
    let base = desk_config("chain");
    let joint = mean_return(&base, |c| c.q_loss = QLossMode::Joint);
    let indep = mean_return(&base, |c| c.q_loss = QLossMode::Independent);
    let elapsed = secs(t.elapsed());
    outcome(
        joint >= indep && joint - indep > 0.0 && elapsed < 600.0,
        format!("joint {joint:.3} vs independent {indep:.3}, gap {:.3}, {elapsed:.0}s (< 600s)", joint - indep),
    )
}

fn criterion_8(omega5: f64) -> Outcome {
    let base = desk_config("spread");
    let mut returns = vec![(5.0, omega5)];
    for omega in [3.0, 10.0, 20.0] {
        returns.push((omega, mean_return(&base, |c| c.omega = omega)));
    }
    returns.sort_by(|a, b| a.0.total_cmp(&b.0));
    let best = returns.iter().map(|r| r.1).fold(f64::NEG_INFINITY, f64::max);
    let band = 0.15 * best.abs();
    let ok = returns.iter().all(|&(_, r)| best - r <= band);
    let list: Vec<String> = returns.iter().map(|(o, r)| format!("omega {o}: {r:.3}")).collect();
    outcome(ok, format!("{}; best {best:.3}, band {band:.3}", list.join(", ")))
}

fn criterion_9() -> Outcome {
    let hidden = [64, 64];
    let mf = AvgVelocityNet::new(FlowLayout::Conditional, 2, 4, &hidden, Activation::Tanh, 8, 9).unwrap();
    let fm = AvgVelocityNet::new(FlowLayout::Instantaneous, 2, 4, &hidden, Activation::Tanh, 0, 9).unwrap();
    let one = bench_sampler(&mf, 1, 10_000, 1, 0).unwrap();
    let ten = bench_sampler(&fm, 10, 10_000, 1, 0).unwrap();
    let ratio = ten.us_per_action / one.us_per_action;
    outcome(
        ratio >= 5.0 && one.actions >= 10_000,
        format!(
            "one-step {:.2}us vs 10-step {:.2}us per action over {} actions, speedup {ratio:.1}x (>= 5x)",
            one.us_per_action, ten.us_per_action, one.actions
        ),
    )
}

fn cli(args: &[&str]) -> i32 {
    let mut sink = Vec::new();
    let mut err = Vec::new();
    let code = run_with(std::iter::once("vgm2p").chain(args.iter().copied()), &mut sink, &mut err);
    if code != 0 {
        eprintln!("{}", String::from_utf8_lossy(&err));
    }
    code
}

fn criterion_10() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    let mut codes = Vec::new();
    for name in ["a", "b"] {
        codes.push(cli(&["gen-data", "--env", "spread", "--transitions", "2000", "--seed", "0", "--out", &p(&format!("{name}.ndjson"))]));
        codes.push(cli(&["train", "--env", "chain", "--seed", "0", "--steps", "300", "--eval-every", "100", "--out", &p(name)]));
    }
    let read = |s: &str| std::fs::read(dir.path().join(s)).unwrap_or_default();
    let data_same = read("a.ndjson") == read("b.ndjson") && !read("a.ndjson").is_empty();
    let manifest_same = read("a.manifest.json") == read("b.manifest.json");
    let losses_same = read("a/losses.csv") == read("b/losses.csv") && !read("a/losses.csv").is_empty();
    let ckpt_same = read("a/policy0.ckpt") == read("b/policy0.ckpt");
    outcome(
        codes.iter().all(|&c| c == 0) && data_same && manifest_same && losses_same && ckpt_same,
        format!("exit codes {codes:?}, dataset identical {data_same}, manifest identical {manifest_same}, losses.csv identical {losses_same}, checkpoint identical {ckpt_same}"),
    )
}

fn main() {
    let mut failed = 0;
    let mut report = |id: usize, name: &str, o: Outcome| {
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("[{tag}] {id:>2} {name}: {}", o.detail);
        failed += usize::from(!o.pass);
    };
    report(1, "jvp matches central differences", check_reports(Check::Jvp, 200, Some(10.0)));
    report(2, "meanflow point-mass fixed point", criterion_2());
    report(3, "proposition 1 oracle", check_reports(Check::Prop1, 100, Some(5.0)));
    report(4, "proposition 2 oracle", check_reports(Check::Prop2, 100, Some(10.0)));
    report(5, "igm consistency", check_reports(Check::Igm, 100, None));
    let (c6, spread_omega5) = criterion_6();
    report(6, "value guidance beats unconditional bc", c6);
    report(7, "joint td beats independent td", criterion_7());
    report(8, "guidance-weight insensitivity", criterion_8(spread_omega5));
    report(9, "one-step sampling speedup", criterion_9());
    report(10, "determinism", criterion_10());
    println!("{} of 10 criteria pass", 10 - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

use std::fs;
use std::path::Path;
use vgm2p::cli::{run_with, RunConfig, RunManifest};
use vgm2p::env::dataset::sha256_hex;
use vgm2p::oracle::VerificationReport;

fn run(args: &[&str]) -> (i32, String) {
    let mut out = Vec::new();
    let mut err = Vec::new();
    let code = run_with(std::iter::once("vgm2p").chain(args.iter().copied()), &mut out, &mut err);
    (code, String::from_utf8(out).unwrap() + &String::from_utf8(err).unwrap())
}

fn path(dir: &Path, name: &str) -> String {
    dir.join(name).to_string_lossy().into_owned()
}

#[test]
fn verify_prop1_prints_a_hundred_pass_lines() {
    let (code, out) = run(&["verify", "--check", "prop1", "--seeds", "100"]);
    assert_eq!(code, 0);
    let reports: Vec<VerificationReport> = out.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(reports.len(), 100);
    assert!(reports.iter().all(|r| r.pass));
    let seeds: Vec<u64> = reports.iter().map(|r| r.instance_seed).collect();
    assert_eq!(seeds, (0..100).collect::<Vec<_>>());
}

#[test]
fn verify_needs_a_known_check() {
    assert_eq!(run(&["verify", "--check", "prop3"]).0, 2);
    assert_eq!(run(&["verify"]).0, 2);
}

#[test]
fn gen_train_eval_export_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "data/game.ndjson");
    let (code, out) = run(&["gen-data", "--env", "additive_game", "--transitions", "400", "--out", &data]);
    assert_eq!(code, 0, "{out}");
    assert!(dir.path().join("data/game.manifest.json").exists());

    let run_dir = path(dir.path(), "run");
    let (code, out) = run(&[
        "train", "--env", "additive_game", "--data", &data, "--steps", "60", "--eval-every", "30",
        "--hidden", "8", "--omega", "3", "--out", &run_dir,
    ]);
    assert_eq!(code, 0, "{out}");
    let summary: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(summary["method"], "vgm2p");

    let rc = RunConfig::load(&dir.path().join("run/config.toml")).unwrap();
    assert_eq!(rc.train.omega, 3.0);
    assert_eq!(rc.train.hidden_dims, vec![8]);
    let manifest = RunManifest::load(&dir.path().join("run")).unwrap();
    assert_eq!(manifest.config_hash, rc.config_hash().unwrap());
    let dataset_manifest: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("data/game.manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest.inputs["dataset"], dataset_manifest["sha256"]);
    for (name, hash) in &manifest.outputs {
        assert_eq!(&sha256_hex(&fs::read(dir.path().join("run").join(name)).unwrap()), hash, "{name}");
    }
    let report = fs::read_to_string(dir.path().join("run/report.csv")).unwrap();
    assert!(report.starts_with("step,policy_loss,q_loss,eval_return_mean,eval_return_std,wall_ms_policy,wall_ms_q\n"));
    assert_eq!(report.lines().count(), 61);

    let (code, out) = run(&["eval", "--run", &run_dir, "--episodes", "5"]);
    assert_eq!(code, 0, "{out}");
    let eval: serde_json::Value = serde_json::from_str(out.trim()).unwrap();
    assert_eq!(eval["episodes"], 5);
    assert!(eval["return_mean"].as_f64().unwrap().is_finite());

    let plots = path(dir.path(), "plots");
    let (code, out) = run(&["export-plots", "--runs", &run_dir, "--out", &plots]);
    assert_eq!(code, 0, "{out}");
    let curves = fs::read_to_string(dir.path().join("plots/curves.csv")).unwrap();
    assert_eq!(curves.lines().count(), 3, "{curves}");
    let ablation = fs::read_to_string(dir.path().join("plots/ablation.csv")).unwrap();
    assert!(ablation.lines().nth(1).unwrap().starts_with("run,additive_game,vgm2p,joint,3,0,"));
}

#[test]
fn rerunning_a_resolved_config_reproduces_every_hashed_output() {
    let dir = tempfile::tempdir().unwrap();
    let first = path(dir.path(), "first");
    let (code, out) = run(&["train", "--env", "chain", "--transitions", "500", "--steps", "40", "--hidden", "8", "--out", &first]);
    assert_eq!(code, 0, "{out}");
    let second = path(dir.path(), "second");
    let config = path(dir.path(), "first/config.toml");
    assert_eq!(run(&["train", "--config", &config, "--out", &second]).0, 0);
    let a = RunManifest::load(&dir.path().join("first")).unwrap();
    let b = RunManifest::load(&dir.path().join("second")).unwrap();
    assert_eq!(a.config_hash, b.config_hash);
    let strip = |m: &RunManifest| {
        let mut o = m.outputs.clone();
        o.remove("config.toml");
        o
    };
    assert_eq!(strip(&a), strip(&b));
    assert_eq!(a.inputs, b.inputs);
}

#[test]
fn baselines_train_without_a_critic() {
    let dir = tempfile::tempdir().unwrap();
    for method in ["bc-fm", "bc-mf"] {
        let out_dir = path(dir.path(), method);
        let (code, out) = run(&["train", "--method", method, "--env", "spread", "--transitions", "300", "--steps", "20", "--hidden", "8", "--out", &out_dir]);
        assert_eq!(code, 0, "{out}");
        assert!(!dir.path().join(method).join("q0.ckpt").exists());
        assert_eq!(run(&["eval", "--run", &out_dir, "--episodes", "2"]).0, 0);
    }
}

#[test]
fn invalid_values_are_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = path(dir.path(), "r");
    assert_eq!(run(&["train", "--gamma", "1.5", "--out", &out_dir]).0, 2);
    assert_eq!(run(&["train", "--env", "nowhere", "--out", &out_dir]).0, 2);
    assert_eq!(run(&["gen-data", "--tier", "legendary", "--out", &out_dir]).0, 2);
    assert_eq!(run(&["bench", "--steps", "0"]).0, 2);
}

#[test]
fn dataset_env_must_match_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let data = path(dir.path(), "chain.ndjson");
    assert_eq!(run(&["gen-data", "--env", "chain", "--transitions", "100", "--out", &data]).0, 0);
    let out_dir = path(dir.path(), "r");
    let (code, out) = run(&["train", "--env", "spread", "--data", &data, "--steps", "1", "--out", &out_dir]);
    assert_eq!(code, 2, "{out}");
}

#[test]
fn bench_on_a_trained_run() {
    let dir = tempfile::tempdir().unwrap();
    let out_dir = path(dir.path(), "r");
    assert_eq!(run(&["train", "--env", "spread", "--transitions", "200", "--steps", "5", "--hidden", "8", "--out", &out_dir]).0, 0);
    let csv = path(dir.path(), "bench.csv");
    let (code, out) = run(&["bench", "--run", &out_dir, "--steps", "1,10", "--actions", "200", "--out", &csv]);
    assert_eq!(code, 0, "{out}");
    assert_eq!(fs::read_to_string(&csv).unwrap(), out);
    assert!(dir.path().join("bench.ckpt").exists());
}

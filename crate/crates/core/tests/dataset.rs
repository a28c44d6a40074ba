use vgm2p::env::dataset::{check_tier_ordering, manifest_path};
use vgm2p::env::{env_by_name, generate_offline_dataset, BehaviorSpec, OfflineDataset, Tier, ENV_NAMES};
use vgm2p::Error;

#[test]
fn saved_datasets_load_back_identically() {
    let dir = tempfile::tempdir().unwrap();
    for name in ENV_NAMES {
        let env = env_by_name(name).unwrap();
        let ds = generate_offline_dataset(env.as_ref(), &BehaviorSpec::new(Tier::Mixed), 300, 11).unwrap();
        let path = dir.path().join(format!("{name}.ndjson"));
        ds.save(&path).unwrap();
        assert!(manifest_path(&path).exists());
        let back = OfflineDataset::load(&path).unwrap();
        assert_eq!(back, ds);
        back.replay_check(env.as_ref()).unwrap();
        let arrays = back.arrays().unwrap();
        assert_eq!(arrays.len(), 300);
        assert_eq!(arrays.obs.len(), env.n_agents());
        assert_eq!(arrays.actions[0].cols(), env.action_space().dim());
    }
}

#[test]
fn tampered_records_fail_the_hash_check() {
    let dir = tempfile::tempdir().unwrap();
    let env = env_by_name("chain").unwrap();
    let ds = generate_offline_dataset(env.as_ref(), &BehaviorSpec::new(Tier::Poor), 50, 3).unwrap();
    let path = dir.path().join("chain.ndjson");
    ds.save(&path).unwrap();
    let body = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, body.replacen("\"reward\":-", "\"reward\":-1", 1)).unwrap();
    assert!(matches!(OfflineDataset::load(&path), Err(Error::Format { .. })));
}

#[test]
fn tiers_are_ordered_on_every_trainable_environment() {
    for name in ["additive_game", "chain", "spread"] {
        let env = env_by_name(name).unwrap();
        let mean = |tier| {
            generate_offline_dataset(env.as_ref(), &BehaviorSpec::new(tier), 4000, 5)
                .unwrap()
                .mean_return()
        };
        let (expert, mixed, poor) = (mean(Tier::Expert), mean(Tier::Mixed), mean(Tier::Poor));
        check_tier_ordering(expert, mixed, poor).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(expert <= env.optimal_return() + 1e-9 || name == "spread", "{name}");
    }
}

#[test]
fn mixed_tier_blends_expert_and_uniform_episodes() {
    let env = env_by_name("additive_game").unwrap();
    let ds = generate_offline_dataset(env.as_ref(), &BehaviorSpec::new(Tier::Mixed), 5000, 0).unwrap();
    let tags = ds.episode_behaviors();
    let expert = tags.iter().filter(|t| **t == "expert").count() as f64 / tags.len() as f64;
    assert!((expert - 0.3).abs() < 0.03, "{expert}");
}

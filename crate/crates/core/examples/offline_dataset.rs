//! Behaviour tiers on every reference environment, and a dataset written with its manifest.

use vgm2p::env::{env_by_name, generate_offline_dataset, BehaviorSpec, OfflineDataset, Tier, ENV_NAMES};

fn main() -> vgm2p::Result<()> {
    for name in ENV_NAMES {
        let env = env_by_name(name)?;
        let means: Vec<String> = [Tier::Expert, Tier::Medium, Tier::Mixed, Tier::Poor]
            .into_iter()
            .map(|tier| {
                let ds = generate_offline_dataset(env.as_ref(), &BehaviorSpec::new(tier), 2000, 0)?;
                Ok(format!("{} {:.3}", tier.as_str(), ds.mean_return()))
            })
            .collect::<vgm2p::Result<_>>()?;
        println!("{name:<18} optimum {:.3} | {}", env.optimal_return(), means.join(", "));
    }
    let dir = std::env::temp_dir().join("vgm2p-example");
    let path = dir.join("spread_mixed.ndjson");
    let env = env_by_name("spread")?;
    generate_offline_dataset(env.as_ref(), &BehaviorSpec::new(Tier::Mixed), 1000, 7)?.save(&path)?;
    let back = OfflineDataset::load(&path)?;
    back.replay_check(env.as_ref())?;
    println!("saved {} and reloaded {} transitions, sha256 {}", path.display(), back.len(), back.manifest.sha256);
    Ok(())
}

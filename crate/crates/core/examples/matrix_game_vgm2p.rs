//! Value guidance against unconditional MeanFlow BC on the mixed-tier additive game.

use vgm2p::cli::{train_run, RunConfig};
use vgm2p::env::env_by_name;
use vgm2p::trainer::Method;

fn main() -> vgm2p::Result<()> {
    let base = RunConfig::load(std::path::Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/additive_game.toml")))?;
    let optimum = env_by_name(&base.env)?.optimal_return();
    for method in [Method::Vgm2p, Method::BcMf, Method::BcFm] {
        let mut total = 0.0;
        for seed in 0..3 {
            let mut rc = base.clone();
            rc.train.method = method;
            rc.train.seed = seed;
            let (ds, _, report) = train_run(&rc)?;
            if seed == 0 && method == Method::Vgm2p {
                println!("dataset mean return {:.3}, optimum {optimum:.3}", ds.mean_return());
            }
            total += report.final_eval().map(|e| e.0).unwrap_or(f64::NAN);
        }
        println!("{:>6}: mean final return {:.3}", method.as_str(), total / 3.0);
    }
    Ok(())
}

//! Final returns on the continuous spread task across guidance weights.

use vgm2p::cli::{train_run, RunConfig};

fn main() -> vgm2p::Result<()> {
    let base = RunConfig::load(std::path::Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/spread.toml")))?;
    let seeds = 2;
    println!("omega,mean_return");
    for omega in [1.0, 3.0, 5.0, 10.0, 20.0] {
        let mut total = 0.0;
        for seed in 0..seeds {
            let mut rc = base.clone();
            rc.train.omega = omega;
            rc.train.seed = seed;
            total += train_run(&rc)?.2.final_eval().map(|e| e.0).unwrap_or(f64::NAN);
        }
        println!("{omega},{:.3}", total / seeds as f64);
    }
    Ok(())
}

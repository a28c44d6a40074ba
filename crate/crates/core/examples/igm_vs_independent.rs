//! Joint (summed) TD against per-agent TD on the chain, where one agent's action shifts the
//! team reward and independent critics misattribute it.

use vgm2p::cli::{train_run, RunConfig};
use vgm2p::value::QLossMode;

fn main() -> vgm2p::Result<()> {
    let base = RunConfig::load(std::path::Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/chain.toml")))?;
    for mode in [QLossMode::Joint, QLossMode::Independent] {
        let returns: Vec<f64> = (0..3)
            .map(|seed| {
                let mut rc = base.clone();
                rc.train.q_loss = mode;
                rc.train.seed = seed;
                Ok(train_run(&rc)?.2.final_eval().map(|e| e.0).unwrap_or(f64::NAN))
            })
            .collect::<vgm2p::Result<_>>()?;
        let mean = returns.iter().sum::<f64>() / returns.len() as f64;
        println!("{:>11}: {returns:?} mean {mean:.3}", mode.as_str());
    }
    Ok(())
}

//! Per-action latency of one-step MeanFlow sampling against multi-step Euler sampling.

use vgm2p::cli::bench_sampler;
use vgm2p::flow::{AvgVelocityNet, FlowLayout};
use vgm2p::mlp::Activation;

fn main() -> vgm2p::Result<()> {
    let mf = AvgVelocityNet::new(FlowLayout::Conditional, 2, 4, &[64, 64], Activation::Tanh, 8, 1)?;
    let fm = AvgVelocityNet::new(FlowLayout::Instantaneous, 2, 4, &[64, 64], Activation::Tanh, 0, 1)?;
    let one = bench_sampler(&mf, 1, 10_000, 1, 0)?;
    println!("meanflow 1 step : {:.2} us/action", one.us_per_action);
    for steps in [2, 5, 10, 20] {
        let r = bench_sampler(&fm, steps, 10_000, 1, 0)?;
        println!("flow {steps:>2} steps   : {:.2} us/action ({:.1}x)", r.us_per_action, r.us_per_action / one.us_per_action);
    }
    Ok(())
}

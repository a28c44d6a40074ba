//! Forward-mode tangents of random MLPs against central finite differences.

use vgm2p::mlp::{jvp_check, JVP_TOLERANCE};

fn main() -> vgm2p::Result<()> {
    let mut worst: f64 = 0.0;
    for seed in 0..200 {
        let c = jvp_check(seed)?;
        if seed < 5 {
            println!("seed {seed}: dims {:?}, relative error {:.2e}", c.dims, c.relative_error);
        }
        worst = worst.max(c.relative_error);
    }
    println!("worst relative error over 200 networks: {worst:.2e} (tolerance {JVP_TOLERANCE:e})");
    Ok(())
}

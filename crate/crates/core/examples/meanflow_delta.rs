//! MeanFlow on a single-point target: the exact average velocity has zero loss, and a
//! trained network reproduces the point with one sampling step.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use vgm2p::env::dataset::DatasetArrays;
use vgm2p::env::ActionSpace;
use vgm2p::flow::{make_flow_batch, mf_loss, sample_multi_step, sample_one_step, PointMassField};
use vgm2p::tensor::Tensor;
use vgm2p::trainer::{Learner, LrSchedule, Method, TaskSpec, TrainConfig};

const X0: [f64; 2] = [0.4, -0.3];

fn mean_error(a: &Tensor) -> f64 {
    (0..a.rows())
        .map(|i| a.row(i).iter().zip(X0).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt())
        .sum::<f64>()
        / a.rows() as f64
}

fn main() -> vgm2p::Result<()> {
    let n = 256;
    let obs = Tensor::zeros(&[n, 0]);
    let act = Tensor::from_rows(&vec![X0.to_vec(); n])?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let batch = make_flow_batch(&obs, &act, &vec![1; n], &mut rng, 0.25)?;
    let exact = mf_loss(&PointMassField { x0: X0.to_vec() }, &batch)?;
    println!("loss of the exact field (x - x0)/k: {exact:e}");

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
    let data = DatasetArrays {
        obs: vec![obs.clone()],
        actions: vec![act],
        next_obs: vec![obs],
        reward: vec![0.0; n],
        done: vec![1.0; n],
    };
    let mut learner = Learner::new(cfg, task)?;
    for step in 1..=5000 {
        let b = learner.sample_batch(&data);
        let l = learner.train_step(&b)?;
        if step % 1000 == 0 {
            println!("step {step}: loss {:.5}", l.policy_loss);
        }
    }
    let draws = Tensor::zeros(&[1000, 0]);
    let net = learner.policies.net(0);
    let one = sample_one_step(net, &draws, 1, &mut rng)?;
    let ten = sample_multi_step(net, &draws, 1, 10, &mut rng)?;
    println!("mean |a - x0|: one step {:.4}, ten steps {:.4}", mean_error(&one), mean_error(&ten));
    Ok(())
}

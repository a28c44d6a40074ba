use vgm2p::cli::{train_run, RunConfig};
use vgm2p::trainer::Method;

fn small(env: &str, method: Method, seed: u64) -> RunConfig {
    let mut rc = RunConfig { env: env.into(), ..RunConfig::default() };
    rc.data.transitions = 600;
    rc.train.method = method;
    rc.train.seed = seed;
    rc.train.gradient_steps = 80;
    rc.train.eval_every = 40;
    rc.train.hidden_dims = vec![16];
    rc
}

#[test]
fn same_seed_gives_byte_identical_losses_and_checkpoints() {
    for method in [Method::Vgm2p, Method::BcFm, Method::BcMf] {
        let rc = small("spread", method, 4);
        let (_, la, ra) = train_run(&rc).unwrap();
        let (_, lb, rb) = train_run(&rc).unwrap();
        assert_eq!(ra.losses_csv(), rb.losses_csv(), "{method:?}");
        let bytes = |l: &vgm2p::trainer::Learner| {
            l.checkpoints("h")
                .into_iter()
                .map(|(_, ck)| {
                    let mut b = Vec::new();
                    ck.write_to(&mut b).unwrap();
                    b
                })
                .collect::<Vec<_>>()
        };
        assert_eq!(bytes(&la), bytes(&lb));
    }
}

#[test]
fn different_seeds_give_different_runs() {
    let (_, _, a) = train_run(&small("chain", Method::Vgm2p, 0)).unwrap();
    let (_, _, b) = train_run(&small("chain", Method::Vgm2p, 1)).unwrap();
    assert_ne!(a.losses_csv(), b.losses_csv());
}

#[test]
fn dataset_seed_changes_only_the_data() {
    let mut rc = small("additive_game", Method::Vgm2p, 0);
    let (da, _, _) = train_run(&rc).unwrap();
    rc.data.seed = 9;
    let (db, _, _) = train_run(&rc).unwrap();
    assert_ne!(da.manifest.sha256, db.manifest.sha256);
    assert_eq!(da.manifest.n_transitions, db.manifest.n_transitions);
}

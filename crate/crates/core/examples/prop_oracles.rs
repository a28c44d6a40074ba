//! Exact tabular oracles: conditioned behaviour policies against the closed-form optimum,
//! the factorization over agents, and the IGM argmax check.

use vgm2p::cli::{verification_reports, Check};
use vgm2p::oracle::{condition_posterior, conditional_behavior_policy, exact_optimal_policy, policy_tv, prop1_instance, state_values, LAMBDAS};

fn main() -> vgm2p::Result<()> {
    for check in [Check::Prop1, Check::Prop2, Check::Igm] {
        let reports = verification_reports(check, 100)?;
        let worst = reports.iter().filter(|r| r.check == check.as_str()).map(|r| r.tv_distance).fold(0.0, f64::max);
        let passed = reports.iter().filter(|r| r.pass).count();
        println!("{}: {passed}/{} pass, worst deviation {worst:.2e}", check.as_str(), reports.len());
        if let Some(c) = reports.iter().find(|r| r.check.ends_with("counterexample")) {
            println!("  coupled payoff: TV {:.4}", c.tv_distance);
        }
    }

    // the sigmoid posterior only approximates exp(Q/λ), so its gap is measured, not bounded
    for lambda in LAMBDAS {
        let (beta, q) = prop1_instance(0, lambda);
        let v = state_values(&q, &beta);
        let conditioned = conditional_behavior_policy(&beta, &condition_posterior(&q, &v, lambda)?)?;
        let gap = policy_tv(&conditioned, &exact_optimal_policy(&q, &beta, lambda)?);
        println!("sigmoid posterior, lambda {lambda}: TV to optimum {gap:.4}");
    }
    Ok(())
}

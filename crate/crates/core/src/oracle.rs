//! Brute-force exact computations on tabular instances: policy evaluation, the
//! temperature-λ optimal policy, the condition posterior, Bayes-conditioned behaviour
//! policies, and the factorization / IGM checks.

use crate::env::{argmax, TabularDecPOMDP};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub const ENUMERATION_CAP: usize = 1_000_000;

/// `π(a | o)`: one probability row per observation (or state).
#[derive(Debug, Clone, PartialEq)]
pub struct ExactPolicy {
    pub probs: Vec<Vec<f64>>,
}

impl ExactPolicy {
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        for (o, row) in probs.iter().enumerate() {
            if row.is_empty() || row.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(Error::arg(format!("policy row {o} has invalid entries")));
            }
            let total: f64 = row.iter().sum();
            if (total - 1.0).abs() > 1e-12 {
                return Err(Error::arg(format!("policy row {o} sums to {total}")));
            }
        }
        Ok(Self { probs })
    }

    pub fn uniform(rows: usize, actions: usize) -> Self {
        Self {
            probs: vec![vec![1.0 / actions as f64; actions]; rows],
        }
    }

    pub fn n_rows(&self) -> usize {
        self.probs.len()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    /// Number of non-zero entries in each row.
    pub fn support_sizes(&self) -> Vec<usize> {
        self.probs.iter().map(|r| r.iter().filter(|&&p| p > 0.0).count()).collect()
    }

    /// Joint state-indexed policy `Π_i π_i(a_i | Ω(s, i))` from per-agent local policies.
    pub fn from_local(env: &TabularDecPOMDP, locals: &[ExactPolicy]) -> Result<Self> {
        if locals.len() != env.n_agents {
            return Err(Error::arg(format!("{} local policies for {} agents", locals.len(), env.n_agents)));
        }
        let nj = env.n_joint();
        let probs = (0..env.n_states)
            .map(|s| {
                (0..nj)
                    .map(|ja| {
                        env.joint_actions(ja)
                            .iter()
                            .enumerate()
                            .map(|(i, &a)| locals[i].probs[env.observation[i][s]][a])
                            .product()
                    })
                    .collect()
            })
            .collect();
        Ok(Self { probs })
    }
}

/// Exact `Q(o, a)` table and the temperature it is paired with.
#[derive(Debug, Clone, PartialEq)]
pub struct ExactQ {
    pub values: Vec<Vec<f64>>,
    pub lambda_temp: f64,
}

impl ExactQ {
    pub fn new(values: Vec<Vec<f64>>, lambda_temp: f64) -> Result<Self> {
        if values.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::arg("Q table has non-finite entries"));
        }
        Ok(Self { values, lambda_temp })
    }

    pub fn n_actions(&self) -> usize {
        self.values.first().map_or(0, Vec::len)
    }

    /// `Σ_i Q_i` over the joint action space of one shared context row.
    pub fn additive_joint(tables: &[ExactQ], cap: usize) -> Result<ExactQ> {
        let dims: Vec<usize> = tables.iter().map(ExactQ::n_actions).collect();
        let size = joint_size(&dims, cap)?;
        let rows = tables.first().map_or(0, |t| t.values.len());
        let values = (0..rows)
            .map(|o| {
                (0..size)
                    .map(|ja| {
                        unravel(ja, &dims)
                            .iter()
                            .enumerate()
                            .map(|(i, &a)| tables[i].values[o][a])
                            .sum()
                    })
                    .collect()
            })
            .collect();
        Ok(ExactQ {
            values,
            lambda_temp: tables.first().map_or(1.0, |t| t.lambda_temp),
        })
    }
}

fn joint_size(dims: &[usize], cap: usize) -> Result<usize> {
    let mut size: usize = 1;
    for &d in dims {
        size = size.saturating_mul(d);
    }
    if size > cap {
        return Err(Error::EnumerationCap { size, cap });
    }
    Ok(size)
}

/// Mixed-radix digits of a joint index, agent 0 most significant.
pub fn unravel(mut index: usize, dims: &[usize]) -> Vec<usize> {
    let mut out = vec![0; dims.len()];
    for (slot, &d) in out.iter_mut().zip(dims).rev() {
        *slot = index % d;
        index /= d;
    }
    out
}

/// Exact discounted `Q^π(s, a)` by solving `(I − γ P_π) V = R_π` over non-terminal states.
/// Rows index states, columns joint actions; terminal rows are zero.
pub fn exact_q_evaluation(env: &TabularDecPOMDP, policy: &ExactPolicy) -> Result<ExactQ> {
    env.validate()?;
    let nj = env.n_joint();
    if policy.n_rows() != env.n_states || policy.n_actions() != nj {
        return Err(Error::dim("joint policy table", env.n_states * nj, policy.n_rows() * policy.n_actions()));
    }
    let live: Vec<usize> = (0..env.n_states).filter(|&s| !env.terminal[s]).collect();
    let pos = |s: usize| live.iter().position(|&x| x == s);
    let m = live.len();
    let mut a = DMatrix::<f64>::identity(m, m);
    let mut b = DVector::<f64>::zeros(m);
    for (r, &s) in live.iter().enumerate() {
        for ja in 0..nj {
            let p = policy.probs[s][ja];
            if p == 0.0 {
                continue;
            }
            let row = s * nj + ja;
            b[r] += p * env.reward[row];
            for (sp, &t) in env.transition[row].iter().enumerate() {
                if let Some(c) = pos(sp) {
                    a[(r, c)] -= env.gamma * p * t;
                }
            }
        }
    }
    let lu = a.lu();
    let min_pivot = lu.u().diagonal().iter().fold(f64::INFINITY, |m, x| m.min(x.abs()));
    if m > 0 && min_pivot < 1e-12 {
        return Err(Error::Singular(format!(
            "policy evaluation matrix has pivot {min_pivot:e} (gamma = {})",
            env.gamma
        )));
    }
    let v = if m > 0 {
        lu.solve(&b)
            .ok_or_else(|| Error::Singular("policy evaluation matrix is not invertible".into()))?
    } else {
        DVector::zeros(0)
    };
    let mut values = vec![vec![0.0; nj]; env.n_states];
    for &s in &live {
        for ja in 0..nj {
            let row = s * nj + ja;
            let boot: f64 = env.transition[row]
                .iter()
                .enumerate()
                .filter_map(|(sp, &t)| pos(sp).map(|c| t * v[c]))
                .sum();
            values[s][ja] = env.reward[row] + env.gamma * boot;
        }
    }
    ExactQ::new(values, 1.0)
}

/// Largest `|Q(s, a) − R(s, a) − γ Σ T(s'|s, a) Σ π(a'|s') Q(s', a')|` over non-terminal rows.
pub fn bellman_residual(env: &TabularDecPOMDP, policy: &ExactPolicy, q: &ExactQ) -> f64 {
    let nj = env.n_joint();
    let v = state_values(q, policy);
    let mut worst: f64 = 0.0;
    for s in (0..env.n_states).filter(|&s| !env.terminal[s]) {
        for ja in 0..nj {
            let row = s * nj + ja;
            let boot: f64 = env.transition[row].iter().zip(&v).map(|(t, v)| t * v).sum();
            worst = worst.max((q.values[s][ja] - env.reward[row] - env.gamma * boot).abs());
        }
    }
    worst
}

/// `V(o) = Σ_a π(a|o) Q(o, a)`
pub fn state_values(q: &ExactQ, policy: &ExactPolicy) -> Vec<f64> {
    q.values
        .iter()
        .zip(&policy.probs)
        .map(|(qr, pr)| qr.iter().zip(pr).map(|(q, p)| q * p).sum())
        .collect()
}

fn log_sum_exp(xs: &[f64]) -> f64 {
    let m = xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return m;
    }
    m + xs.iter().map(|x| (x - m).exp()).sum::<f64>().ln()
}

/// Normalizes a row of log-weights; zero-probability entries stay exactly zero.
fn normalize_logs(logs: &[f64]) -> Vec<f64> {
    let z = log_sum_exp(logs);
    logs.iter().map(|l| if *l == f64::NEG_INFINITY { 0.0 } else { (l - z).exp() }).collect()
}

/// `π*(a|o) ∝ β(a|o) exp(Q(o, a) / λ)`, evaluated in log space.
pub fn exact_optimal_policy(q: &ExactQ, beta: &ExactPolicy, lambda_temp: f64) -> Result<ExactPolicy> {
    if !(lambda_temp > 0.0) {
        return Err(Error::arg(format!("lambda must be positive, got {lambda_temp}")));
    }
    check_shapes(&q.values, &beta.probs)?;
    let probs = q
        .values
        .iter()
        .zip(&beta.probs)
        .map(|(qr, br)| {
            let logs: Vec<f64> = qr.iter().zip(br).map(|(q, b)| b.ln() + q / lambda_temp).collect();
            normalize_logs(&logs)
        })
        .collect();
    Ok(ExactPolicy { probs })
}

fn check_shapes(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::dim("table rows", a.len(), b.len()));
    }
    for (o, (x, y)) in a.iter().zip(b).enumerate() {
        if x.len() != y.len() {
            return Err(Error::dim(format!("table row {o}"), x.len(), y.len()));
        }
    }
    Ok(())
}

/// `p(c = 1 | o, a) = σ((Q(o, a) − V(o)) / λ)`
pub fn condition_posterior(q: &ExactQ, v: &[f64], lambda_temp: f64) -> Result<Vec<Vec<f64>>> {
    if !(lambda_temp > 0.0) {
        return Err(Error::arg(format!("lambda must be positive, got {lambda_temp}")));
    }
    if v.len() != q.values.len() {
        return Err(Error::dim("value table", q.values.len(), v.len()));
    }
    Ok(q.values
        .iter()
        .zip(v)
        .map(|(row, &vo)| {
            row.iter()
                .map(|&qa| {
                    let z = (qa - vo) / lambda_temp;
                    if z >= 0.0 {
                        1.0 / (1.0 + (-z).exp())
                    } else {
                        let e = z.exp();
                        e / (1.0 + e)
                    }
                })
                .collect()
        })
        .collect())
}

/// Posterior exactly proportional to `exp(Q/λ)` in `a`, scaled per row into `(0, 1]`.
pub fn proportional_posterior(q: &ExactQ, lambda_temp: f64) -> Vec<Vec<f64>> {
    q.values
        .iter()
        .map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            row.iter().map(|x| ((x - m) / lambda_temp).exp()).collect()
        })
        .collect()
}

/// Bayes rule `π_β(a|o, c) ∝ p(c|o, a) β(a|o)`.
pub fn conditional_behavior_policy(beta: &ExactPolicy, posterior: &[Vec<f64>]) -> Result<ExactPolicy> {
    check_shapes(&beta.probs, posterior)?;
    let mut probs = Vec::with_capacity(beta.n_rows());
    for (o, (br, pr)) in beta.probs.iter().zip(posterior).enumerate() {
        if pr.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::arg(format!("posterior row {o} leaves [0, 1]")));
        }
        let w: Vec<f64> = br.iter().zip(pr).map(|(b, p)| b * p).collect();
        let total: f64 = w.iter().sum();
        if total <= 0.0 {
            return Err(Error::DegenerateCondition { observation: o });
        }
        probs.push(w.iter().map(|x| x / total).collect());
    }
    Ok(ExactPolicy { probs })
}

/// `½ Σ |p − q|`
pub fn tv_distance(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

/// Largest row-wise TV distance.
pub fn policy_tv(a: &ExactPolicy, b: &ExactPolicy) -> f64 {
    a.probs.iter().zip(&b.probs).map(|(x, y)| tv_distance(x, y)).fold(0.0, f64::max)
}

/// One structured verification line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationReport {
    pub check: String,
    pub instance_seed: u64,
    pub tv_distance: f64,
    pub pass: bool,
}

impl VerificationReport {
    pub fn to_json_line(&self) -> String {
        serde_json::to_string(self).expect("report serializes")
    }
}

pub const PROP1_TOLERANCE: f64 = 1e-10;
pub const PROP2_TOLERANCE: f64 = 1e-10;

/// Largest TV between the behaviour policy conditioned with an `exp(Q/λ)`-proportional
/// posterior and the optimal policy.
pub fn proposition_1_gap(beta: &ExactPolicy, q: &ExactQ, lambda_temp: f64) -> Result<f64> {
    let conditioned = conditional_behavior_policy(beta, &proportional_posterior(q, lambda_temp))?;
    Ok(policy_tv(&conditioned, &exact_optimal_policy(q, beta, lambda_temp)?))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorizationReport {
    pub tv_distance: f64,
    pub pass: bool,
}

/// Compares `Π_i π^i_β(a_i | o, c*)` (posterior ∝ `exp(Q_i/λ)`) with the optimal policy of
/// `joint_q` under the product behaviour policy, enumerating every joint action.
/// Tables share their context rows.
pub fn verify_factorization(
    betas: &[ExactPolicy],
    qs: &[ExactQ],
    joint_q: &ExactQ,
    lambda_temp: f64,
    cap: usize,
) -> Result<FactorizationReport> {
    if betas.is_empty() || betas.len() != qs.len() {
        return Err(Error::arg(format!("{} behaviour policies for {} Q tables", betas.len(), qs.len())));
    }
    let dims: Vec<usize> = betas.iter().map(ExactPolicy::n_actions).collect();
    let size = joint_size(&dims, cap)?;
    let rows = betas[0].n_rows();
    let conditioned = betas
        .iter()
        .zip(qs)
        .map(|(b, q)| conditional_behavior_policy(b, &proportional_posterior(q, lambda_temp)))
        .collect::<Result<Vec<_>>>()?;
    let product = |tables: &[ExactPolicy]| -> Vec<Vec<f64>> {
        (0..rows)
            .map(|o| {
                (0..size)
                    .map(|ja| {
                        unravel(ja, &dims)
                            .iter()
                            .enumerate()
                            .map(|(i, &a)| tables[i].probs[o][a])
                            .product()
                    })
                    .collect()
            })
            .collect()
    };
    let factored = ExactPolicy {
        probs: product(&conditioned),
    };
    let joint_beta = ExactPolicy { probs: product(betas) };
    let optimal = exact_optimal_policy(joint_q, &joint_beta, lambda_temp)?;
    let tv = policy_tv(&factored, &optimal);
    Ok(FactorizationReport {
        tv_distance: tv,
        pass: tv <= PROP2_TOLERANCE,
    })
}

/// Factorization check with the additive joint value `Σ_i Q_i`.
pub fn verify_proposition_2(
    betas: &[ExactPolicy],
    qs: &[ExactQ],
    lambda_temp: f64,
    cap: usize,
) -> Result<FactorizationReport> {
    let joint = ExactQ::additive_joint(qs, cap)?;
    verify_factorization(betas, qs, &joint, lambda_temp, cap)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IgmReport {
    pub joint_argmax: Vec<usize>,
    pub per_agent_argmaxes: Vec<usize>,
    pub consistent: bool,
}

/// Argmax of `Σ_i Q_i(o, ·)` by enumeration against the per-agent argmaxes.
pub fn igm_check(qs: &[ExactQ], observation: usize) -> Result<IgmReport> {
    let joint = ExactQ::additive_joint(qs, ENUMERATION_CAP)?;
    igm_check_joint(&joint.values[observation], qs, observation)
}

/// As [`igm_check`] but against an arbitrary joint table over the same joint space.
pub fn igm_check_joint(joint: &[f64], qs: &[ExactQ], observation: usize) -> Result<IgmReport> {
    let dims: Vec<usize> = qs.iter().map(ExactQ::n_actions).collect();
    let size = joint_size(&dims, ENUMERATION_CAP)?;
    if joint.len() != size {
        return Err(Error::dim("joint Q row", size, joint.len()));
    }
    let joint_argmax = unravel(argmax(joint), &dims);
    let per_agent_argmaxes: Vec<usize> = qs.iter().map(|q| argmax(&q.values[observation])).collect();
    Ok(IgmReport {
        consistent: joint_argmax == per_agent_argmaxes,
        joint_argmax,
        per_agent_argmaxes,
    })
}

/// Random strictly positive policy rows.
pub fn random_policy<R: Rng>(rows: usize, actions: usize, rng: &mut R) -> ExactPolicy {
    let probs = (0..rows)
        .map(|_| {
            let w: Vec<f64> = (0..actions).map(|_| rng.random_range(0.05..1.0)).collect();
            let t: f64 = w.iter().sum();
            w.iter().map(|x| x / t).collect()
        })
        .collect();
    ExactPolicy { probs }
}

pub fn random_q<R: Rng>(rows: usize, actions: usize, scale: f64, lambda_temp: f64, rng: &mut R) -> ExactQ {
    ExactQ {
        values: (0..rows)
            .map(|_| (0..actions).map(|_| rng.random_range(-scale..scale)).collect())
            .collect(),
        lambda_temp,
    }
}

pub const LAMBDAS: [f64; 3] = [0.1, 1.0, 10.0];

/// Single-agent instance for seed `seed`: `(β, Q)` over 4 observations × 5 actions.
pub fn prop1_instance(seed: u64, lambda_temp: f64) -> (ExactPolicy, ExactQ) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (random_policy(4, 5, &mut rng), random_q(4, 5, 2.0, lambda_temp, &mut rng))
}

/// Two agents × three actions on one shared observation.
pub fn prop2_instance(seed: u64, lambda_temp: f64) -> (Vec<ExactPolicy>, Vec<ExactQ>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let betas = (0..2).map(|_| random_policy(1, 3, &mut rng)).collect();
    let qs = (0..2).map(|_| random_q(1, 3, 2.0, lambda_temp, &mut rng)).collect();
    (betas, qs)
}

/// A coupled two-agent payoff (climbing-game shape) and its best additive fit.
pub fn non_additive_counterexample() -> (Vec<ExactPolicy>, Vec<ExactQ>, ExactQ) {
    let joint = vec![1.1, -3.0, 0.0, -3.0, 0.7, 0.6, 0.0, 0.0, 0.5];
    // least-squares additive fit: row means + column means − grand mean, split evenly
    let grand: f64 = joint.iter().sum::<f64>() / 9.0;
    let row_mean: Vec<f64> = (0..3).map(|a| (0..3).map(|b| joint[3 * a + b]).sum::<f64>() / 3.0).collect();
    let col_mean: Vec<f64> = (0..3).map(|b| (0..3).map(|a| joint[3 * a + b]).sum::<f64>() / 3.0).collect();
    let q0 = row_mean.iter().map(|m| m - grand / 2.0).collect();
    let q1 = col_mean.iter().map(|m| m - grand / 2.0).collect();
    (
        vec![ExactPolicy::uniform(1, 3), ExactPolicy::uniform(1, 3)],
        vec![
            ExactQ { values: vec![q0], lambda_temp: 1.0 },
            ExactQ { values: vec![q1], lambda_temp: 1.0 },
        ],
        ExactQ { values: vec![joint], lambda_temp: 1.0 },
    )
}

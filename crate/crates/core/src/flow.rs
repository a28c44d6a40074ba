//! Flow Matching and MeanFlow velocity models, their regression losses, the
//! classifier-free-guidance target, and the one-step / multi-step samplers.
//!
//! Time runs from data (`k = 0`) to noise (`k = 1`) along the linear path
//! `a_k = (1 − k) a + k ε`, whose sample-conditional velocity is `ε − a`.
//! An average-velocity model `u(a_k, r, k | o, c)` predicts the mean velocity over
//! `[r, k]`, so one step `a_r = a_k − (k − r) u` jumps straight from `k` to `r`.

use crate::error::{ensure_finite, Error, Result};
use crate::mlp::{mean_squared_error, Activation, MlpParams, ParamTensors};
use crate::tensor::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

/// Guidance condition: `1` marks non-negative advantage.
pub type Condition = u8;

/// Which time/condition inputs the network sees.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowLayout {
    /// `v(a_k, k | o)`: Flow Matching's instantaneous field.
    Instantaneous,
    /// `u(a_k, r, k | o)`: unconditional MeanFlow.
    Average,
    /// `u(a_k, r, k | o, c)` with a learned two-row condition embedding.
    Conditional,
}

impl FlowLayout {
    pub fn as_str(self) -> &'static str {
        match self {
            FlowLayout::Instantaneous => "instantaneous",
            FlowLayout::Average => "average",
            FlowLayout::Conditional => "conditional",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "instantaneous" => Ok(FlowLayout::Instantaneous),
            "average" => Ok(FlowLayout::Average),
            "conditional" => Ok(FlowLayout::Conditional),
            other => Err(Error::arg(format!("unknown flow layout `{other}`"))),
        }
    }
}

/// Batched arguments of a velocity model.
#[derive(Debug, Clone, Copy)]
pub struct FlowQuery<'a> {
    /// `[B, action_dim]`
    pub x: &'a Tensor,
    pub r: &'a [f64],
    pub k: &'a [f64],
    /// `[B, obs_dim]`
    pub obs: &'a Tensor,
    pub c: &'a [Condition],
}

/// Anything that can play the role of `u(x, r, k | o, c)`.
pub trait VelocityModel {
    fn action_dim(&self) -> usize;

    fn velocity(&self, q: &FlowQuery) -> Result<Tensor>;

    /// Returns `u` and its total derivative along `(dx/dk, dr/dk, dk/dk) = (x_tangent, 0, 1)`.
    fn velocity_with_derivative(&self, q: &FlowQuery, x_tangent: &Tensor) -> Result<(Tensor, Tensor)>;
}

/// The model houses both the velocity MLP and the condition embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct AvgVelocityNet {
    pub net: MlpParams,
    /// `[2, embed_dim]`; empty for unconditional layouts.
    pub embedding: Tensor,
    pub action_dim: usize,
    pub obs_dim: usize,
    pub layout: FlowLayout,
}

impl AvgVelocityNet {
    pub fn new(
        layout: FlowLayout,
        action_dim: usize,
        obs_dim: usize,
        hidden: &[usize],
        activation: Activation,
        embed_dim: usize,
        seed: u64,
    ) -> Result<Self> {
        let embed_dim = if layout == FlowLayout::Conditional {
            if embed_dim == 0 {
                return Err(Error::arg("conditional layout needs a non-empty embedding"));
            }
            embed_dim
        } else {
            0
        };
        let time_inputs = if layout == FlowLayout::Instantaneous { 1 } else { 2 };
        let mut dims = vec![action_dim + time_inputs + obs_dim + embed_dim];
        dims.extend_from_slice(hidden);
        dims.push(action_dim);
        let net = MlpParams::init(&dims, &vec![activation; hidden.len()], seed)?;
        let embedding = if embed_dim > 0 {
            let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
            let data = (0..2 * embed_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
            Tensor::new(vec![2, embed_dim], data)?
        } else {
            Tensor::zeros(&[0, 0])
        };
        Ok(Self {
            net,
            embedding,
            action_dim,
            obs_dim,
            layout,
        })
    }

    pub fn embed_dim(&self) -> usize {
        if self.layout == FlowLayout::Conditional {
            self.embedding.cols()
        } else {
            0
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            net: self.net.zeros_like(),
            embedding: Tensor::zeros(self.embedding.shape()),
            ..self.clone()
        }
    }

    fn embed_offset(&self) -> usize {
        self.action_dim + 2 + self.obs_dim
    }

    fn check_query(&self, q: &FlowQuery) -> Result<usize> {
        let rows = q.x.rows();
        if q.x.cols() != self.action_dim {
            return Err(Error::dim("flow action input", self.action_dim, q.x.cols()));
        }
        if q.obs.cols() != self.obs_dim && !(self.obs_dim == 0 && q.obs.is_empty()) {
            return Err(Error::dim("flow observation input", self.obs_dim, q.obs.cols()));
        }
        if q.obs.rows() != rows && self.obs_dim > 0 {
            return Err(Error::dim("flow observation rows", rows, q.obs.rows()));
        }
        if q.k.len() != rows || q.r.len() != rows {
            return Err(Error::dim("flow time inputs", rows, q.k.len().min(q.r.len())));
        }
        if self.layout == FlowLayout::Conditional {
            if q.c.len() != rows {
                return Err(Error::dim("flow condition labels", rows, q.c.len()));
            }
            if let Some(bad) = q.c.iter().find(|&&c| c > 1) {
                return Err(Error::arg(format!("condition label {bad} is not 0 or 1")));
            }
        }
        Ok(rows)
    }

    /// Row layout `[x, k, (r), o, (embedding[c])]`.
    fn build_input(&self, q: &FlowQuery) -> Result<Tensor> {
        let rows = self.check_query(q)?;
        let width = self.net.in_dim();
        let mut data = Vec::with_capacity(rows * width);
        for i in 0..rows {
            data.extend_from_slice(q.x.row(i));
            data.push(q.k[i]);
            if self.layout != FlowLayout::Instantaneous {
                data.push(q.r[i]);
            }
            if self.obs_dim > 0 {
                data.extend_from_slice(q.obs.row(i));
            }
            if self.layout == FlowLayout::Conditional {
                data.extend_from_slice(self.embedding.row(q.c[i] as usize));
            }
        }
        Tensor::new(vec![rows, width], data)
    }

    /// Input tangent `(x_tangent, dk = 1, dr = 0, 0, 0)`.
    fn build_tangent(&self, x_tangent: &Tensor) -> Result<Tensor> {
        let rows = x_tangent.rows();
        let width = self.net.in_dim();
        if x_tangent.cols() != self.action_dim {
            return Err(Error::dim("flow tangent", self.action_dim, x_tangent.cols()));
        }
        let mut data = vec![0.0; rows * width];
        for i in 0..rows {
            let row = &mut data[i * width..(i + 1) * width];
            row[..self.action_dim].copy_from_slice(x_tangent.row(i));
            row[self.action_dim] = 1.0;
        }
        Tensor::new(vec![rows, width], data)
    }

    /// Regresses `u(q)` onto a detached `target`; gradients reach the MLP and the
    /// embedding rows selected by `q.c`.
    fn regression_grad(
        &self,
        q: &FlowQuery,
        cache: &crate::mlp::ForwardCache,
        target: &Tensor,
    ) -> Result<(f64, AvgVelocityNet)> {
        let (loss, d_out) = mean_squared_error(cache.output(), target)?;
        ensure_finite("flow regression loss", loss)?;
        let (net_grads, d_in) = self.net.backward(cache, &d_out)?;
        let mut grads = AvgVelocityNet {
            net: net_grads,
            embedding: Tensor::zeros(self.embedding.shape()),
            ..self.clone()
        };
        if self.layout == FlowLayout::Conditional {
            let off = self.embed_offset();
            let e = self.embed_dim();
            for (i, &c) in q.c.iter().enumerate() {
                let src = &d_in.row(i)[off..off + e];
                for (g, s) in grads.embedding.row_mut(c as usize).iter_mut().zip(src) {
                    *g += s;
                }
            }
        }
        Ok((loss, grads))
    }
}

impl ParamTensors for AvgVelocityNet {
    fn tensors(&self) -> Vec<&Tensor> {
        let mut v = self.net.tensors();
        if !self.embedding.is_empty() {
            v.push(&self.embedding);
        }
        v
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let has_embedding = !self.embedding.is_empty();
        let mut v = self.net.tensors_mut();
        if has_embedding {
            v.push(&mut self.embedding);
        }
        v
    }
}

impl VelocityModel for AvgVelocityNet {
    fn action_dim(&self) -> usize {
        self.action_dim
    }

    fn velocity(&self, q: &FlowQuery) -> Result<Tensor> {
        self.net.forward(&self.build_input(q)?)
    }

    fn velocity_with_derivative(&self, q: &FlowQuery, x_tangent: &Tensor) -> Result<(Tensor, Tensor)> {
        let input = self.build_input(q)?;
        let tangent = self.build_tangent(x_tangent)?;
        let (cache, du) = self.net.forward_cached_jvp(&input, &tangent)?;
        Ok((cache.output().clone(), du))
    }
}

/// Exact average velocity of a point-mass target at `x0`: `u(x, r, k) = (x − x0) / k`.
#[derive(Debug, Clone, PartialEq)]
pub struct PointMassField {
    pub x0: Vec<f64>,
}

impl VelocityModel for PointMassField {
    fn action_dim(&self) -> usize {
        self.x0.len()
    }

    fn velocity(&self, q: &FlowQuery) -> Result<Tensor> {
        Ok(self.velocity_with_derivative(q, q.x)?.0)
    }

    fn velocity_with_derivative(&self, q: &FlowQuery, x_tangent: &Tensor) -> Result<(Tensor, Tensor)> {
        let d = self.x0.len();
        if q.x.cols() != d {
            return Err(Error::dim("point-mass field input", d, q.x.cols()));
        }
        let rows = q.x.rows();
        let mut u = Vec::with_capacity(rows * d);
        let mut du = Vec::with_capacity(rows * d);
        for i in 0..rows {
            let k = q.k[i];
            for j in 0..d {
                let disp = q.x.row(i)[j] - self.x0[j];
                u.push(disp / k);
                // d/dk [(x(k) − x0) / k] with dx/dk = tangent
                du.push(x_tangent.row(i)[j] / k - disp / (k * k));
            }
        }
        Ok((
            Tensor::new(vec![rows, d], u)?,
            Tensor::new(vec![rows, d], du)?,
        ))
    }
}

/// One minibatch of the flow regression problem.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowBatch {
    pub obs: Tensor,
    pub action: Tensor,
    pub epsilon: Tensor,
    pub k: Vec<f64>,
    pub r: Vec<f64>,
    pub c: Vec<Condition>,
}

impl FlowBatch {
    pub fn len(&self) -> usize {
        self.k.len()
    }

    pub fn is_empty(&self) -> bool {
        self.k.is_empty()
    }

    /// `a_k = (1 − k) a + k ε`
    pub fn noisy_action(&self) -> Tensor {
        let d = self.action.cols();
        let mut out = Vec::with_capacity(self.action.len());
        for i in 0..self.len() {
            let k = self.k[i];
            for j in 0..d {
                out.push((1.0 - k) * self.action.row(i)[j] + k * self.epsilon.row(i)[j]);
            }
        }
        Tensor::new(vec![self.len(), d], out).expect("noisy action shape")
    }

    /// `ε − a`
    pub fn conditional_velocity(&self) -> Tensor {
        self.epsilon.sub(&self.action).expect("batch shapes agree")
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.len();
        if n == 0 {
            return Err(Error::arg("empty flow batch"));
        }
        if self.action.rows() != n || self.epsilon.rows() != n || self.r.len() != n || self.c.len() != n {
            return Err(Error::dim("flow batch rows", n, self.action.rows()));
        }
        for i in 0..n {
            if !(0.0 <= self.r[i] && self.r[i] <= self.k[i] && self.k[i] <= 1.0) {
                return Err(Error::arg(format!(
                    "row {i} violates 0 <= r <= k <= 1 (r = {}, k = {})",
                    self.r[i], self.k[i]
                )));
            }
        }
        Ok(())
    }
}

/// Samples `(k, r, ε)` for dataset rows. `k, r ~ U[0, 1]` are ordered by swapping, then
/// each row independently has `r := k` with probability `r_equals_k_fraction`.
pub fn make_flow_batch<R: Rng>(
    obs: &Tensor,
    action: &Tensor,
    c_labels: &[Condition],
    rng: &mut R,
    r_equals_k_fraction: f64,
) -> Result<FlowBatch> {
    let n = action.rows();
    if action.is_empty() || n == 0 {
        return Err(Error::arg("empty flow batch"));
    }
    if obs.rows() != n && !obs.is_empty() {
        return Err(Error::dim("flow batch observation rows", n, obs.rows()));
    }
    if c_labels.len() != n {
        return Err(Error::dim("flow batch condition labels", n, c_labels.len()));
    }
    if !(0.0..=1.0).contains(&r_equals_k_fraction) {
        return Err(Error::arg(format!(
            "r_equals_k_fraction must lie in [0, 1], got {r_equals_k_fraction}"
        )));
    }
    let d = action.cols();
    let mut k = Vec::with_capacity(n);
    let mut r = Vec::with_capacity(n);
    for _ in 0..n {
        // 1 − U keeps k away from zero.
        let a: f64 = 1.0 - rng.random::<f64>();
        let b: f64 = 1.0 - rng.random::<f64>();
        let (lo, hi) = if b <= a { (b, a) } else { (a, b) };
        let equal = rng.random::<f64>() < r_equals_k_fraction;
        k.push(hi);
        r.push(if equal { hi } else { lo });
    }
    let eps: Vec<f64> = (0..n * d).map(|_| rng.sample(StandardNormal)).collect();
    Ok(FlowBatch {
        obs: obs.as_matrix(),
        action: action.as_matrix(),
        epsilon: Tensor::new(vec![n, d], eps)?,
        k,
        r,
        c: c_labels.to_vec(),
    })
}

fn query<'a>(batch: &'a FlowBatch, x: &'a Tensor, r: &'a [f64], c: &'a [Condition]) -> FlowQuery<'a> {
    FlowQuery {
        x,
        r,
        k: &batch.k,
        obs: &batch.obs,
        c,
    }
}

/// `field − (k − r) · du/dk`, with `du/dk` the derivative along `(field, 0, 1)`.
fn mean_flow_target_from(batch: &FlowBatch, field: &Tensor, du: &Tensor) -> Result<Tensor> {
    let d = field.cols();
    let mut out = field.clone();
    for i in 0..batch.len() {
        let gap = batch.k[i] - batch.r[i];
        if gap == 0.0 {
            continue;
        }
        for j in 0..d {
            out.row_mut(i)[j] -= gap * du.row(i)[j];
        }
    }
    if !out.all_finite() {
        return Err(Error::NonFinite {
            context: "mean flow target".into(),
            value: f64::NAN,
        });
    }
    Ok(out)
}

/// Flow Matching regression `E ‖v(a_k, k | o) − (ε − a)‖²`.
pub fn fm_loss<M: VelocityModel>(model: &M, batch: &FlowBatch) -> Result<f64> {
    batch.validate()?;
    let x = batch.noisy_action();
    let pred = model.velocity(&query(batch, &x, &batch.k, &batch.c))?;
    let (loss, _) = mean_squared_error(&pred, &batch.conditional_velocity())?;
    ensure_finite("fm loss", loss)
}

/// Detached MeanFlow target `(ε − a) − (k − r) du/dk`.
pub fn mf_target<M: VelocityModel>(model: &M, batch: &FlowBatch) -> Result<Tensor> {
    batch.validate()?;
    let x = batch.noisy_action();
    let v = batch.conditional_velocity();
    let (_, du) = model.velocity_with_derivative(&query(batch, &x, &batch.r, &batch.c), &v)?;
    mean_flow_target_from(batch, &v, &du)
}

/// MeanFlow behaviour-cloning loss `E ‖u(a_k, r, k | o) − sg(u_tgt)‖²`.
pub fn mf_loss<M: VelocityModel>(model: &M, batch: &FlowBatch) -> Result<f64> {
    batch.validate()?;
    let x = batch.noisy_action();
    let v = batch.conditional_velocity();
    let (u, du) = model.velocity_with_derivative(&query(batch, &x, &batch.r, &batch.c), &v)?;
    let target = mean_flow_target_from(batch, &v, &du)?;
    let (loss, _) = mean_squared_error(&u, &target)?;
    ensure_finite("mf loss", loss)
}

/// Guided field `ω (ε − a) + (1 − ω) u(a_k, k, k | o, c = 1)`.
pub fn cfg_field<M: VelocityModel>(model: &M, batch: &FlowBatch, omega: f64) -> Result<Tensor> {
    batch.validate()?;
    let x = batch.noisy_action();
    let ones = vec![1; batch.len()];
    let inst = model.velocity(&query(batch, &x, &batch.k, &ones))?;
    let v = batch.conditional_velocity();
    let mut out = v.scale(omega);
    out.axpy(1.0 - omega, &inst)?;
    Ok(out)
}

/// Detached guided target `v_cfg − (k − r) du/dk`, derivative along `(v_cfg, 0, 1)`
/// through the conditional model.
pub fn vgmp_target<M: VelocityModel>(model: &M, batch: &FlowBatch, omega: f64) -> Result<Tensor> {
    let field = cfg_field(model, batch, omega)?;
    let x = batch.noisy_action();
    let (_, du) = model.velocity_with_derivative(&query(batch, &x, &batch.r, &batch.c), &field)?;
    mean_flow_target_from(batch, &field, &du)
}

/// Guided MeanFlow loss `E ‖u(a_k, r, k | o, c) − sg(u_tgt^cfg)‖²`.
pub fn vgmp_loss<M: VelocityModel>(model: &M, batch: &FlowBatch, omega: f64) -> Result<f64> {
    let field = cfg_field(model, batch, omega)?;
    let x = batch.noisy_action();
    let (u, du) = model.velocity_with_derivative(&query(batch, &x, &batch.r, &batch.c), &field)?;
    let target = mean_flow_target_from(batch, &field, &du)?;
    let (loss, _) = mean_squared_error(&u, &target)?;
    ensure_finite("vgmp loss", loss)
}

impl AvgVelocityNet {
    /// Flow Matching loss and its parameter gradient.
    pub fn fm_loss_grad(&self, batch: &FlowBatch) -> Result<(f64, AvgVelocityNet)> {
        batch.validate()?;
        let x = batch.noisy_action();
        let q = query(batch, &x, &batch.k, &batch.c);
        let cache = self.net.forward_cached(&self.build_input(&q)?)?;
        self.regression_grad(&q, &cache, &batch.conditional_velocity())
    }

    /// MeanFlow loss and its parameter gradient; the target carries no gradient.
    pub fn mf_loss_grad(&self, batch: &FlowBatch) -> Result<(f64, AvgVelocityNet)> {
        batch.validate()?;
        let v = batch.conditional_velocity();
        self.mean_flow_grad(batch, &v)
    }

    /// Guided MeanFlow loss and its parameter gradient; the target carries no gradient.
    pub fn vgmp_loss_grad(&self, batch: &FlowBatch, omega: f64) -> Result<(f64, AvgVelocityNet)> {
        let field = cfg_field(self, batch, omega)?;
        self.mean_flow_grad(batch, &field)
    }

    fn mean_flow_grad(&self, batch: &FlowBatch, field: &Tensor) -> Result<(f64, AvgVelocityNet)> {
        let x = batch.noisy_action();
        let q = query(batch, &x, &batch.r, &batch.c);
        let input = self.build_input(&q)?;
        let tangent = self.build_tangent(field)?;
        let (cache, du) = self.net.forward_cached_jvp(&input, &tangent)?;
        let target = mean_flow_target_from(batch, field, &du)?;
        self.regression_grad(&q, &cache, &target)
    }
}

fn standard_normal<R: Rng + ?Sized>(rows: usize, d: usize, rng: &mut R) -> Tensor {
    let data = (0..rows * d).map(|_| rng.sample(StandardNormal)).collect();
    Tensor::new(vec![rows, d], data).expect("normal draw shape")
}

/// `a = a₁ − u(a₁, 0, 1 | o, c)` with `a₁ ~ N(0, I)`, one row per observation row.
pub fn sample_one_step<M: VelocityModel, R: Rng + ?Sized>(
    model: &M,
    obs: &Tensor,
    c: Condition,
    rng: &mut R,
) -> Result<Tensor> {
    let rows = obs.rows();
    let a1 = standard_normal(rows, model.action_dim(), rng);
    let zeros = vec![0.0; rows];
    let ones = vec![1.0; rows];
    let cs = vec![c; rows];
    let u = model.velocity(&FlowQuery {
        x: &a1,
        r: &zeros,
        k: &ones,
        obs,
        c: &cs,
    })?;
    a1.sub(&u)
}

/// Uniform grid from `k = 1` to `0`: `a_r = a_k − (k − r) u(a_k, r, k | o, c)`.
pub fn sample_multi_step<M: VelocityModel, R: Rng + ?Sized>(
    model: &M,
    obs: &Tensor,
    c: Condition,
    n_steps: usize,
    rng: &mut R,
) -> Result<Tensor> {
    if n_steps == 0 {
        return Err(Error::arg("n_steps must be at least 1"));
    }
    let rows = obs.rows();
    let mut a = standard_normal(rows, model.action_dim(), rng);
    let cs = vec![c; rows];
    for j in 0..n_steps {
        let k = 1.0 - j as f64 / n_steps as f64;
        let r = 1.0 - (j + 1) as f64 / n_steps as f64;
        let ks = vec![k; rows];
        let rs = vec![r; rows];
        let u = model.velocity(&FlowQuery {
            x: &a,
            r: &rs,
            k: &ks,
            obs,
            c: &cs,
        })?;
        a.axpy(-(k - r), &u)?;
    }
    Ok(a)
}

//! Multilayer perceptrons: forward pass, reverse-mode gradients and forward-mode
//! Jacobian-vector products.
//!
//! Every layer computes `z = W x + b` with `W` stored `[out, in]`. Hidden layers apply
//! their activation; the output layer is always affine. Inputs are matrices whose rows
//! are independent samples.

use crate::error::{ensure_finite, Error, Result};
use crate::tensor::{DualTensor, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use std::str::FromStr;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation.
    #[inline]
    fn slope(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Tanh => "tanh",
            Activation::Relu => "relu",
            Activation::Identity => "identity",
        })
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::arg(format!("unknown activation `{other}`"))),
        }
    }
}

/// One affine layer.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    /// `[out, in]`
    pub weight: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl Layer {
    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 {
            return Err(Error::arg("layer weight must be a matrix"));
        }
        if bias.len() != weight.shape()[0] {
            return Err(Error::dim("layer bias", weight.shape()[0], bias.len()));
        }
        Ok(Self { weight, bias })
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[0]
    }

    /// `out[b] = W x[b] + bias`
    fn affine(&self, x: &Tensor) -> Tensor {
        let (n_in, n_out) = (self.in_dim(), self.out_dim());
        let rows = x.rows();
        let w = self.weight.data();
        let bias = self.bias.data();
        let xs = x.data();
        let mut out = vec![0.0; rows * n_out];
        for r in 0..rows {
            let xr = &xs[r * n_in..(r + 1) * n_in];
            let or = &mut out[r * n_out..(r + 1) * n_out];
            for (o, slot) in or.iter_mut().enumerate() {
                let wr = &w[o * n_in..(o + 1) * n_in];
                *slot = bias[o] + dot(wr, xr);
            }
        }
        Tensor::new(vec![rows, n_out], out).expect("affine shape")
    }

    /// `out[b] = W t[b]` (tangent map, no bias).
    fn linear(&self, t: &Tensor) -> Tensor {
        let (n_in, n_out) = (self.in_dim(), self.out_dim());
        let rows = t.rows();
        let w = self.weight.data();
        let ts = t.data();
        let mut out = vec![0.0; rows * n_out];
        for r in 0..rows {
            let tr = &ts[r * n_in..(r + 1) * n_in];
            let or = &mut out[r * n_out..(r + 1) * n_out];
            for (o, slot) in or.iter_mut().enumerate() {
                *slot = dot(&w[o * n_in..(o + 1) * n_in], tr);
            }
        }
        Tensor::new(vec![rows, n_out], out).expect("linear shape")
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// Parameters of a fully connected network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParams {
    pub layers: Vec<Layer>,
    /// One activation per hidden layer (`layers.len() - 1` entries).
    pub activations: Vec<Activation>,
    pub seed: u64,
}

/// Intermediate values kept by [`MlpParams::forward_cached`] for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    /// Input to each layer.
    inputs: Vec<Tensor>,
    /// Pre-activation of each layer.
    pre: Vec<Tensor>,
}

impl ForwardCache {
    pub fn output(&self) -> &Tensor {
        self.pre.last().expect("non-empty network")
    }
}

impl MlpParams {
    /// Glorot-uniform weights, zero biases. `dims` lists every width from input to output.
    pub fn init(dims: &[usize], activations: &[Activation], seed: u64) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::arg("an MLP needs at least input and output widths"));
        }
        if activations.len() != dims.len() - 2 {
            return Err(Error::dim(
                "activation list",
                dims.len() - 2,
                activations.len(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for pair in dims.windows(2) {
            let (fan_in, fan_out) = (pair[0], pair[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let w: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.random_range(-limit..=limit))
                .collect();
            layers.push(Layer {
                weight: Tensor::new(vec![fan_out, fan_in], w)?,
                bias: Tensor::zeros(&[fan_out]),
            });
        }
        Ok(Self {
            layers,
            activations: activations.to_vec(),
            seed,
        })
    }

    /// Builds from explicit layers; used for hand-constructed networks.
    pub fn from_layers(layers: Vec<Layer>, activations: Vec<Activation>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::arg("an MLP needs at least one layer"));
        }
        if activations.len() != layers.len() - 1 {
            return Err(Error::dim(
                "activation list",
                layers.len() - 1,
                activations.len(),
            ));
        }
        for (i, pair) in layers.windows(2).enumerate() {
            if pair[0].out_dim() != pair[1].in_dim() {
                return Err(Error::dim(
                    format!("layer {} input", i + 1),
                    pair[0].out_dim(),
                    pair[1].in_dim(),
                ));
            }
        }
        Ok(Self {
            layers,
            activations,
            seed: 0,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().expect("non-empty network").out_dim()
    }

    /// Layer widths from input to output.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.in_dim()];
        dims.extend(self.layers.iter().map(Layer::out_dim));
        dims
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// A network of the same shape with every parameter zero.
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Layer {
                    weight: Tensor::zeros(l.weight.shape()),
                    bias: Tensor::zeros(l.bias.shape()),
                })
                .collect(),
            activations: self.activations.clone(),
            seed: self.seed,
        }
    }

    fn check_input(&self, input: &Tensor) -> Result<()> {
        if input.cols() != self.in_dim() {
            return Err(Error::dim("layer 0 input", self.in_dim(), input.cols()));
        }
        Ok(())
    }

    fn is_hidden(&self, layer: usize) -> bool {
        layer + 1 < self.layers.len()
    }

    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        self.check_input(input)?;
        let mut x = input.as_matrix();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&x);
            x = if self.is_hidden(l) {
                let act = self.activations[l];
                z.map(|v| act.apply(v))
            } else {
                z
            };
        }
        if !x.all_finite() {
            return Err(Error::NonFinite {
                context: "mlp forward output".into(),
                value: x.data().iter().copied().find(|v| !v.is_finite()).unwrap_or(f64::NAN),
            });
        }
        Ok(x)
    }

    pub fn forward_cached(&self, input: &Tensor) -> Result<ForwardCache> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.as_matrix();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&x);
            let next = if self.is_hidden(l) {
                let act = self.activations[l];
                z.map(|v| act.apply(v))
            } else {
                Tensor::zeros(&[0])
            };
            inputs.push(std::mem::replace(&mut x, next));
            pre.push(z);
        }
        Ok(ForwardCache { inputs, pre })
    }

    /// Forward pass with a tangent riding along: returns the backward cache and the
    /// output tangent `J(input) · tangent`.
    pub fn forward_cached_jvp(
        &self,
        input: &Tensor,
        tangent: &Tensor,
    ) -> Result<(ForwardCache, Tensor)> {
        self.check_input(input)?;
        if tangent.len() != input.len() {
            return Err(Error::dim("jvp tangent", input.len(), tangent.len()));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut x = input.as_matrix();
        let mut t = tangent.as_matrix();
        for (l, layer) in self.layers.iter().enumerate() {
            let z = layer.affine(&x);
            let mut tz = layer.linear(&t);
            let next = if self.is_hidden(l) {
                let act = self.activations[l];
                for (tv, &zv) in tz.data_mut().iter_mut().zip(z.data()) {
                    *tv *= act.slope(zv);
                }
                z.map(|v| act.apply(v))
            } else {
                Tensor::zeros(&[0])
            };
            t = tz;
            inputs.push(std::mem::replace(&mut x, next));
            pre.push(z);
        }
        if !t.all_finite() {
            return Err(Error::NonFinite {
                context: "jvp tangent".into(),
                value: f64::NAN,
            });
        }
        Ok((ForwardCache { inputs, pre }, t))
    }

    /// Forward-mode directional derivative through every layer.
    pub fn jvp(&self, input: &DualTensor) -> Result<DualTensor> {
        let (cache, tangent) = self.forward_cached_jvp(&input.primal, &input.tangent)?;
        let primal = cache.output().clone();
        Ok(DualTensor { primal, tangent })
    }

    /// Reverse pass. `d_output` is dL/d(output) with the output's shape. Returns the
    /// parameter gradient (same structure as `self`) and dL/d(input).
    pub fn backward(&self, cache: &ForwardCache, d_output: &Tensor) -> Result<(MlpParams, Tensor)> {
        let out = cache.output();
        if d_output.len() != out.len() {
            return Err(Error::dim("backward seed", out.len(), d_output.len()));
        }
        let mut grads = self.zeros_like();
        let mut delta = d_output.as_matrix();
        for l in (0..self.layers.len()).rev() {
            if self.is_hidden(l) {
                let act = self.activations[l];
                for (d, &z) in delta.data_mut().iter_mut().zip(cache.pre[l].data()) {
                    *d *= act.slope(z);
                }
            }
            let layer = &self.layers[l];
            let n_in = layer.in_dim();
            let x = cache.inputs[l].data();
            let rows = delta.rows();
            let g = &mut grads.layers[l];
            {
                let gw = g.weight.data_mut();
                for r in 0..rows {
                    let dr = delta.row(r);
                    let xr = &x[r * n_in..(r + 1) * n_in];
                    for (o, &d) in dr.iter().enumerate() {
                        if d == 0.0 {
                            continue;
                        }
                        let gwr = &mut gw[o * n_in..(o + 1) * n_in];
                        for (gv, &xv) in gwr.iter_mut().zip(xr) {
                            *gv += d * xv;
                        }
                    }
                }
            }
            {
                let gb = g.bias.data_mut();
                for r in 0..rows {
                    for (gv, &d) in gb.iter_mut().zip(delta.row(r)) {
                        *gv += d;
                    }
                }
            }
            let w = layer.weight.data();
            let mut prev = vec![0.0; rows * n_in];
            for r in 0..rows {
                let pr = &mut prev[r * n_in..(r + 1) * n_in];
                for (o, &d) in delta.row(r).iter().enumerate() {
                    if d == 0.0 {
                        continue;
                    }
                    for (pv, &wv) in pr.iter_mut().zip(&w[o * n_in..(o + 1) * n_in]) {
                        *pv += d * wv;
                    }
                }
            }
            delta = Tensor::new(vec![rows, n_in], prev)?;
        }
        Ok((grads, delta))
    }

    /// Value and parameter gradient of `loss(self.forward(input))`.
    ///
    /// `loss` maps the network output to the scalar loss and its gradient with
    /// respect to that output.
    pub fn loss_grad<F>(&self, input: &Tensor, loss: F) -> Result<(f64, MlpParams)>
    where
        F: FnOnce(&Tensor) -> Result<(f64, Tensor)>,
    {
        let cache = self.forward_cached(input)?;
        let (value, d_out) = loss(cache.output())?;
        ensure_finite("loss", value)?;
        let (grads, _) = self.backward(&cache, &d_out)?;
        Ok((value, grads))
    }
}

/// Access to every trainable tensor in a fixed order.
pub trait ParamTensors {
    fn tensors(&self) -> Vec<&Tensor>;
    fn tensors_mut(&mut self) -> Vec<&mut Tensor>;

    /// `self += alpha * other`, tensor by tensor.
    fn add_scaled(&mut self, alpha: f64, other: &Self) -> Result<()>
    where
        Self: Sized,
    {
        let src = other.tensors();
        let dst = self.tensors_mut();
        if src.len() != dst.len() {
            return Err(Error::dim("parameter tensor count", dst.len(), src.len()));
        }
        for (d, s) in dst.into_iter().zip(src) {
            d.axpy(alpha, s)?;
        }
        Ok(())
    }
}

impl ParamTensors for MlpParams {
    fn tensors(&self) -> Vec<&Tensor> {
        self.layers
            .iter()
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.layers
            .iter_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }
}

/// Outcome of [`jvp_check`] on one random network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JvpCheck {
    pub seed: u64,
    pub dims: Vec<usize>,
    pub relative_error: f64,
}

pub const JVP_TOLERANCE: f64 = 1e-4;

/// Forward-mode tangent of a random tanh MLP (1 to 4 layers, widths up to 64) against a
/// central difference along a random direction.
pub fn jvp_check(seed: u64) -> Result<JvpCheck> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let depth = rng.random_range(1..=4);
    let dims: Vec<usize> = (0..=depth).map(|_| rng.random_range(1..=64)).collect();
    let net = MlpParams::init(&dims, &vec![Activation::Tanh; depth - 1], seed)?;
    let rows = 4;
    let mut draw = |n: usize| -> Result<Tensor> {
        Tensor::new(vec![rows, n], (0..rows * n).map(|_| rng.random_range(-1.0..1.0)).collect())
    };
    let x = draw(dims[0])?;
    let v = draw(dims[0])?;
    let y = net.jvp(&DualTensor::new(x.clone(), v.clone())?)?;
    let h = 1e-5;
    let mut plus = x.clone();
    plus.axpy(h, &v)?;
    let mut minus = x;
    minus.axpy(-h, &v)?;
    let fd = net.forward(&plus)?.sub(&net.forward(&minus)?)?.scale(0.5 / h);
    let relative_error = y.tangent.sub(&fd)?.norm() / fd.norm().max(1e-12);
    Ok(JvpCheck { seed, dims, relative_error })
}

/// Squared error `Σ_rows Σ_cols (pred − target)² / rows` and its gradient.
pub fn mean_squared_error(pred: &Tensor, target: &Tensor) -> Result<(f64, Tensor)> {
    if pred.len() != target.len() {
        return Err(Error::dim("mse target", pred.len(), target.len()));
    }
    let rows = pred.rows().max(1) as f64;
    let mut grad = Vec::with_capacity(pred.len());
    let mut total = 0.0;
    for (&p, &t) in pred.data().iter().zip(target.data()) {
        let e = p - t;
        total += e * e;
        grad.push(2.0 * e / rows);
    }
    Ok((total / rows, Tensor::new(pred.shape().to_vec(), grad)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn random_input(rows: usize, cols: usize, seed: u64) -> Tensor {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data = (0..rows * cols).map(|_| rng.random_range(-1.5..1.5)).collect();
        Tensor::new(vec![rows, cols], data).unwrap()
    }

    /// Second evaluator written independently of `Layer::affine`.
    fn naive_forward(p: &MlpParams, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (l, layer) in p.layers.iter().enumerate() {
            let w = layer.weight.data();
            let (o_dim, i_dim) = (layer.out_dim(), layer.in_dim());
            let mut z = layer.bias.data().to_vec();
            for i in 0..i_dim {
                for o in 0..o_dim {
                    z[o] += w[o * i_dim + i] * h[i];
                }
            }
            if l + 1 < p.layers.len() {
                for v in &mut z {
                    *v = match p.activations[l] {
                        Activation::Tanh => v.tanh(),
                        Activation::Relu => v.max(0.0),
                        Activation::Identity => *v,
                    };
                }
            }
            h = z;
        }
        h
    }

    #[test]
    fn identity_layer_passes_input_through() {
        let w = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let net = MlpParams::from_layers(vec![Layer::new(w, Tensor::zeros(&[2])).unwrap()], vec![])
            .unwrap();
        let y = net.forward(&Tensor::vector(vec![3.0, -1.0])).unwrap();
        assert_eq!(y.data(), &[3.0, -1.0]);
    }

    #[test]
    fn scalar_affine_layer() {
        let layer = Layer::new(
            Tensor::new(vec![1, 1], vec![2.0]).unwrap(),
            Tensor::vector(vec![1.0]),
        )
        .unwrap();
        let net = MlpParams::from_layers(vec![layer], vec![]).unwrap();
        assert_eq!(net.forward(&Tensor::vector(vec![3.0])).unwrap().data(), &[7.0]);
    }

    #[test]
    fn forward_matches_naive_evaluator() {
        let net = MlpParams::init(&[4, 16, 3], &[Activation::Tanh], 11).unwrap();
        let x = random_input(5, 4, 3);
        let y = net.forward(&x).unwrap();
        for r in 0..5 {
            let expect = naive_forward(&net, x.row(r));
            for (a, b) in y.row(r).iter().zip(&expect) {
                assert!((a - b).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn input_width_mismatch_names_layer() {
        let net = MlpParams::init(&[3, 4, 1], &[Activation::Relu], 0).unwrap();
        let err = net.forward(&Tensor::zeros(&[2, 5])).unwrap_err();
        assert!(err.to_string().contains("layer 0"), "{err}");
    }

    #[test]
    fn mismatched_layers_are_rejected() {
        let a = Layer::new(Tensor::zeros(&[3, 2]), Tensor::zeros(&[3])).unwrap();
        let b = Layer::new(Tensor::zeros(&[1, 4]), Tensor::zeros(&[1])).unwrap();
        let err = MlpParams::from_layers(vec![a, b], vec![Activation::Tanh]).unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
    }

    #[test]
    fn init_is_deterministic() {
        let a = MlpParams::init(&[5, 8, 8, 2], &[Activation::Tanh, Activation::Relu], 9).unwrap();
        let b = MlpParams::init(&[5, 8, 8, 2], &[Activation::Tanh, Activation::Relu], 9).unwrap();
        assert_eq!(a, b);
        let c = MlpParams::init(&[5, 8, 8, 2], &[Activation::Tanh, Activation::Relu], 10).unwrap();
        assert_ne!(a, c);
        for layer in &a.layers {
            let limit = (6.0 / (layer.in_dim() + layer.out_dim()) as f64).sqrt();
            assert!(layer.weight.max_abs() <= limit);
        }
    }

    #[test]
    fn jvp_of_affine_map_is_weight_times_tangent() {
        let w = Tensor::from_rows(&[vec![1.0, 2.0], vec![-3.0, 0.5]]).unwrap();
        let net = MlpParams::from_layers(
            vec![Layer::new(w, Tensor::vector(vec![0.3, -0.2])).unwrap()],
            vec![],
        )
        .unwrap();
        let x = DualTensor::new(
            Tensor::vector(vec![0.7, -1.1]),
            Tensor::vector(vec![2.0, 1.0]),
        )
        .unwrap();
        let y = net.jvp(&x).unwrap();
        assert_eq!(y.tangent.data(), &[4.0, -5.5]);
    }

    #[test]
    fn zero_tangent_gives_zero_output_tangent() {
        let net = MlpParams::init(&[3, 8, 2], &[Activation::Tanh], 1).unwrap();
        let y = net.jvp(&DualTensor::constant(random_input(4, 3, 2))).unwrap();
        assert_eq!(y.tangent.max_abs(), 0.0);
    }

    #[test]
    fn jvp_matches_central_differences() {
        let net = MlpParams::init(&[3, 12, 12, 2], &[Activation::Tanh, Activation::Tanh], 5)
            .unwrap();
        let x = random_input(3, 3, 6);
        let v = random_input(3, 3, 7);
        let y = net.jvp(&DualTensor::new(x.clone(), v.clone()).unwrap()).unwrap();
        let h = 1e-5;
        let mut plus = x.clone();
        plus.axpy(h, &v).unwrap();
        let mut minus = x.clone();
        minus.axpy(-h, &v).unwrap();
        let fd = net
            .forward(&plus)
            .unwrap()
            .sub(&net.forward(&minus).unwrap())
            .unwrap()
            .scale(0.5 / h);
        let err = y.tangent.sub(&fd).unwrap().norm() / fd.norm();
        assert!(err <= 1e-4, "relative error {err}");
        assert_eq!(y.primal, net.forward(&x).unwrap());
    }

    #[test]
    fn zero_residual_least_squares_has_zero_gradient() {
        let net = MlpParams::init(&[2, 1], &[], 3).unwrap();
        let x = random_input(6, 2, 1);
        let target = net.forward(&x).unwrap();
        let (loss, g) = net.loss_grad(&x, |y| mean_squared_error(y, &target)).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.tensors().iter().all(|t| t.max_abs() == 0.0));
    }

    #[test]
    fn linear_least_squares_gradient_is_analytic() {
        // L = ||W x − y||², dL/dW = 2 (W x − y) xᵀ
        let w = Tensor::from_rows(&[vec![1.0, -2.0, 0.5], vec![0.0, 3.0, 1.0]]).unwrap();
        let net = MlpParams::from_layers(vec![Layer::new(w.clone(), Tensor::zeros(&[2])).unwrap()], vec![])
            .unwrap();
        let x = [0.4, -1.2, 2.0];
        let y = [1.0, -1.0];
        let input = Tensor::vector(x.to_vec());
        let target = Tensor::vector(y.to_vec());
        let (_, g) = net.loss_grad(&input, |p| mean_squared_error(p, &target)).unwrap();
        let wx = net.forward(&input).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                let expect = 2.0 * (wx.data()[o] - y[o]) * x[i];
                assert!((g.layers[0].weight.data()[o * 3 + i] - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn non_finite_loss_is_reported() {
        let net = MlpParams::init(&[2, 1], &[], 3).unwrap();
        let err = net
            .loss_grad(&Tensor::zeros(&[1, 2]), |y| Ok((f64::NAN, Tensor::zeros(y.shape()))))
            .unwrap_err();
        assert!(matches!(err, Error::NonFinite { .. }));
    }

    proptest! {
        #[test]
        fn jvp_is_linear_in_tangent(seed in 0u64..500, alpha in -2.0f64..2.0, beta in -2.0f64..2.0) {
            let net = MlpParams::init(&[3, 10, 2], &[Activation::Tanh], seed).unwrap();
            let x = random_input(2, 3, seed + 1);
            let u = random_input(2, 3, seed + 2);
            let v = random_input(2, 3, seed + 3);
            let mut combo = u.scale(alpha);
            combo.axpy(beta, &v).unwrap();
            let ju = net.jvp(&DualTensor::new(x.clone(), u).unwrap()).unwrap().tangent;
            let jv = net.jvp(&DualTensor::new(x.clone(), v).unwrap()).unwrap().tangent;
            let jc = net.jvp(&DualTensor::new(x, combo).unwrap()).unwrap().tangent;
            let mut expect = ju.scale(alpha);
            expect.axpy(beta, &jv).unwrap();
            prop_assert!(jc.sub(&expect).unwrap().max_abs() <= 1e-10);
        }

        #[test]
        fn input_gradient_agrees_with_jvp(seed in 0u64..500) {
            let net = MlpParams::init(&[4, 9, 9, 1], &[Activation::Tanh, Activation::Relu], seed).unwrap();
            let x = random_input(1, 4, seed + 10);
            let v = random_input(1, 4, seed + 11);
            let cache = net.forward_cached(&x).unwrap();
            let (_, d_in) = net.backward(&cache, &Tensor::full(&[1, 1], 1.0)).unwrap();
            let jvp = net.jvp(&DualTensor::new(x, v.clone()).unwrap()).unwrap().tangent;
            prop_assert!((d_in.dot(&v).unwrap() - jvp.data()[0]).abs() <= 1e-8);
        }
    }
}

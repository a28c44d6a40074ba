//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::mlp::ParamTensors;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Tensor>,
    pub v: Vec<Tensor>,
    pub step_count: u64,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    /// Fresh moments shaped like `params`, with the usual `(0.9, 0.999, 1e-8)` constants.
    pub fn new<P: ParamTensors>(params: &P, lr: f64) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|t| Tensor::zeros(t.shape()))
            .collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            step_count: 0,
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// Applies one update in place.
    pub fn step<P: ParamTensors>(&mut self, params: &mut P, grads: &P) -> Result<()> {
        let gs = grads.tensors();
        let ps = params.tensors_mut();
        if gs.len() != self.m.len() || ps.len() != self.m.len() {
            return Err(Error::dim("adam tensor count", self.m.len(), gs.len()));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (((p, g), m), v) in ps.into_iter().zip(gs).zip(&mut self.m).zip(&mut self.v) {
            if p.len() != g.len() || m.len() != g.len() {
                return Err(Error::dim("adam tensor", p.len(), g.len()));
            }
            let pd = p.data_mut();
            let md = m.data_mut();
            let vd = v.data_mut();
            for (i, &gi) in g.data().iter().enumerate() {
                md[i] = self.beta1 * md[i] + (1.0 - self.beta1) * gi;
                vd[i] = self.beta2 * vd[i] + (1.0 - self.beta2) * gi * gi;
                let m_hat = md[i] / c1;
                let v_hat = vd[i] / c2;
                pd[i] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Functional form: returns updated copies of the parameters and state.
pub fn adam_step<P: ParamTensors + Clone>(
    params: &P,
    grads: &P,
    state: &AdamState,
) -> Result<(P, AdamState)> {
    let mut p = params.clone();
    let mut s = state.clone();
    s.step(&mut p, grads)?;
    Ok((p, s))
}

use serde::{Deserialize, Serialize};

use super::params::ModelParams;

/// Parameter containers Adam can update.
pub trait Tensors {
    fn tensors(&self) -> Vec<&[f64]>;
    fn tensors_mut(&mut self) -> Vec<&mut [f64]>;
    fn zeros_like(&self) -> Self;
}

impl Tensors for ModelParams {
    fn tensors(&self) -> Vec<&[f64]> {
        ModelParams::tensors(self)
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        ModelParams::tensors_mut(self)
    }

    fn zeros_like(&self) -> Self {
        ModelParams::zeros_like(self)
    }
}

impl Tensors for Vec<f64> {
    fn tensors(&self) -> Vec<&[f64]> {
        vec![self.as_slice()]
    }

    fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        vec![self.as_mut_slice()]
    }

    fn zeros_like(&self) -> Self {
        vec![0.0; self.len()]
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Debug)]
pub struct AdamState<P = ModelParams> {
    pub t: u64,
    pub m: P,
    pub v: P,
    pub hyper: AdamHyper,
}

impl<P: Tensors> AdamState<P> {
    pub fn new(params: &P, hyper: AdamHyper) -> Self {
        AdamState {
            t: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
            hyper,
        }
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut P, grad: &P) {
        self.t += 1;
        let AdamHyper {
            lr,
            beta1,
            beta2,
            eps,
        } = self.hyper;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for (((w, g), m), v) in tensors {
            for i in 0..w.len() {
                let gi = g[i];
                m[i] = beta1 * m[i] + (1.0 - beta1) * gi;
                v[i] = beta2 * v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                w[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

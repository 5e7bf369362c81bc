//! AdamW with decoupled weight decay and bias-corrected moments.
use alloc::collections::BTreeMap;
use alloc::string::String;

use crate::error::{contract_err, dim_err, Result};
use crate::params::ParamStore;
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPS: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct AdamW {
    pub lr: f64,
    pub weight_decay: f64,
    /// Updates applied so far.
    pub t: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl AdamW {
    pub fn new(lr: f64, weight_decay: f64) -> Result<Self> {
        if !(lr > 0.0) || !(weight_decay >= 0.0) {
            return Err(contract_err!("AdamW needs lr > 0 and weight decay >= 0, got {} and {}", lr, weight_decay));
        }
        Ok(Self { lr, weight_decay, t: 0, m: BTreeMap::new(), v: BTreeMap::new() })
    }

    /// One update. Parameters without an entry in `grads` are left untouched.
    /// Every gradient is checked before anything is modified.
    pub fn step(&mut self, params: &mut ParamStore, grads: &BTreeMap<String, Tensor>) -> Result<()> {
        for (name, g) in grads {
            let p = params.get(name)?;
            if p.shape() != g.shape() {
                return Err(dim_err!("gradient for `{}` is {:?} but the parameter is {:?}", name, g.shape(), p.shape()));
            }
            if !g.is_finite() {
                return Err(contract_err!("non-finite gradient for parameter `{}`", name));
            }
        }
        self.t += 1;
        let t = self.t as i32;
        let c1 = 1.0 - libm::pow(BETA1, t as f64);
        let c2 = 1.0 - libm::pow(BETA2, t as f64);
        let shrink = 1.0 - self.lr * self.weight_decay;
        for (name, g) in grads {
            let p = params.get_mut(name)?;
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(g.shape()));
            for (((w, &gi), mi), vi) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut().iter_mut())
                .zip(v.data_mut().iter_mut())
            {
                *mi = BETA1 * *mi + (1.0 - BETA1) * gi;
                *vi = BETA2 * *vi + (1.0 - BETA2) * gi * gi;
                let mhat = *mi / c1;
                let vhat = *vi / c2;
                *w = *w * shrink - self.lr * mhat / (libm::sqrt(vhat) + EPS);
            }
        }
        Ok(())
    }
}

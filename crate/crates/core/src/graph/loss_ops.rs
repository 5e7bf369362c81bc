//! Fused scalar losses. Targets are plain tensors, never differentiated.
use alloc::vec::Vec;

use super::nn::sigmoid;
use super::{Graph, NodeId, Op};
use crate::error::{contract_err, dim_err, Result};
use crate::tensor::Tensor;

pub const DICE_SMOOTH: f64 = 1.0;
/// Probability clamp used by the probability-space BCE.
pub const PROB_CLAMP: f64 = 1e-7;

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let m = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    m + libm::log(xs.map(|x| libm::exp(x - m)).sum::<f64>())
}

impl Graph {
    fn check_target(&self, name: &str, x: NodeId, target: &Tensor) -> Result<()> {
        if self.shape(x) != target.shape() {
            return Err(dim_err!("{}: prediction {:?} vs target {:?}", name, self.shape(x), target.shape()));
        }
        Ok(())
    }

    /// Soft Dice on `sigmoid(logits)`, one term per `[b, k]` plane, averaged:
    /// `1 − (2·Σp·m + 1) / (Σp + Σm + 1)`.
    pub fn dice_loss(&mut self, logits: NodeId, target: &Tensor) -> Result<NodeId> {
        self.check_target("dice_loss", logits, target)?;
        let [_, _, h, w] = self.value(logits).dims4()?;
        let hw = h * w;
        let lv = self.value(logits).data();
        let mut total = 0.0;
        let planes = lv.len() / hw;
        for (lp, mp) in lv.chunks_exact(hw).zip(target.data().chunks_exact(hw)) {
            let (mut inter, mut ps, mut ms) = (0.0, 0.0, 0.0);
            for (&l, &m) in lp.iter().zip(mp) {
                let p = sigmoid(l);
                inter += p * m;
                ps += p;
                ms += m;
            }
            total += 1.0 - (2.0 * inter + DICE_SMOOTH) / (ps + ms + DICE_SMOOTH);
        }
        self.charge(0, 4 * lv.len());
        let t = Tensor::scalar(total / planes as f64);
        self.emit("dice_loss", t, Op::Dice { logits, target: target.clone() }, &[logits])
    }

    pub(super) fn back_dice(&self, logits: NodeId, target: &Tensor, g: f64, grads: &mut [Option<Vec<f64>>]) {
        let [_, _, h, w] = self.value(logits).dims4().expect("checked in forward");
        let hw = h * w;
        let lv = self.value(logits).data();
        let planes = lv.len() / hw;
        self.accumulate(logits, grads, |d| {
            for ((dp, lp), mp) in d.chunks_exact_mut(hw).zip(lv.chunks_exact(hw)).zip(target.data().chunks_exact(hw)) {
                let (mut inter, mut ps, mut ms) = (0.0, 0.0, 0.0);
                for (&l, &m) in lp.iter().zip(mp) {
                    let p = sigmoid(l);
                    inter += p * m;
                    ps += p;
                    ms += m;
                }
                let num = 2.0 * inter + DICE_SMOOTH;
                let den = ps + ms + DICE_SMOOTH;
                for ((d, &l), &m) in dp.iter_mut().zip(lp).zip(mp) {
                    let p = sigmoid(l);
                    let dl_dp = -(2.0 * m * den - num) / (den * den);
                    *d += g * dl_dp * p * (1.0 - p) / planes as f64;
                }
            }
        });
    }

    /// Mean binary cross-entropy on logits, `max(l,0) − l·y + ln(1 + e^{−|l|})`.
    pub fn bce_with_logits(&mut self, logits: NodeId, target: &Tensor) -> Result<NodeId> {
        self.check_target("bce_loss", logits, target)?;
        let lv = self.value(logits).data();
        let s: f64 = lv
            .iter()
            .zip(target.data())
            .map(|(&l, &y)| l.max(0.0) - l * y + libm::log1p(libm::exp(-l.abs())))
            .sum();
        let n = lv.len();
        self.charge(0, 4 * n);
        let t = Tensor::scalar(s / n as f64);
        self.emit("bce_loss", t, Op::BceLogits { logits, target: target.clone() }, &[logits])
    }

    pub(super) fn back_bce_logits(&self, logits: NodeId, target: &Tensor, g: f64, grads: &mut [Option<Vec<f64>>]) {
        let lv = self.value(logits).data();
        let n = lv.len() as f64;
        self.accumulate(logits, grads, |d| {
            for ((d, &l), &y) in d.iter_mut().zip(lv).zip(target.data()) {
                *d += g * (sigmoid(l) - y) / n;
            }
        });
    }

    /// Mean binary cross-entropy on probabilities clamped to `[1e-7, 1 − 1e-7]`.
    pub fn bce_prob(&mut self, probs: NodeId, target: &Tensor) -> Result<NodeId> {
        self.check_target("bce_prob", probs, target)?;
        let pv = self.value(probs).data();
        let s: f64 = pv
            .iter()
            .zip(target.data())
            .map(|(&p, &y)| {
                let p = p.clamp(PROB_CLAMP, 1.0 - PROB_CLAMP);
                -(y * libm::log(p) + (1.0 - y) * libm::log(1.0 - p))
            })
            .sum();
        let n = pv.len();
        self.charge(0, 4 * n);
        let t = Tensor::scalar(s / n as f64);
        self.emit("bce_prob", t, Op::BceProb { probs, target: target.clone() }, &[probs])
    }

    pub(super) fn back_bce_prob(&self, probs: NodeId, target: &Tensor, g: f64, grads: &mut [Option<Vec<f64>>]) {
        let pv = self.value(probs).data();
        let n = pv.len() as f64;
        self.accumulate(probs, grads, |d| {
            for ((d, &p), &y) in d.iter_mut().zip(pv).zip(target.data()) {
                if p > PROB_CLAMP && p < 1.0 - PROB_CLAMP {
                    *d += g * (-y / p + (1.0 - y) / (1.0 - p)) / n;
                }
            }
        });
    }

    /// Pixelwise softmax cross-entropy over `[background, class_1..class_K]`,
    /// where the background logit is fixed at zero. `masks` is `[B,K,H,W]`
    /// one-hot; pixels with no class set are background.
    pub fn softmax_ce(&mut self, logits: NodeId, masks: &Tensor) -> Result<NodeId> {
        self.check_target("softmax_ce", logits, masks)?;
        let [bs, k, h, w] = self.value(logits).dims4()?;
        let hw = h * w;
        let md = masks.data();
        let mut classes = Vec::with_capacity(bs * hw);
        for b in 0..bs {
            for p in 0..hw {
                let c = (0..k).find(|&c| md[(b * k + c) * hw + p] > 0.5).map_or(0, |c| c + 1);
                classes.push(c);
            }
        }
        let lv = self.value(logits).data();
        let mut s = 0.0;
        for b in 0..bs {
            for p in 0..hw {
                let z = |c: usize| if c == 0 { 0.0 } else { lv[(b * k + c - 1) * hw + p] };
                let lse = log_sum_exp((0..=k).map(z));
                s += lse - z(classes[b * hw + p]);
            }
        }
        self.charge(0, 3 * lv.len());
        let t = Tensor::scalar(s / (bs * hw) as f64);
        self.emit("softmax_ce", t, Op::SoftmaxCe { logits, classes }, &[logits])
    }

    pub(super) fn back_softmax_ce(&self, logits: NodeId, classes: &[usize], g: f64, grads: &mut [Option<Vec<f64>>]) {
        let [bs, k, h, w] = self.value(logits).dims4().expect("checked in forward");
        let hw = h * w;
        let lv = self.value(logits).data();
        let n = (bs * hw) as f64;
        self.accumulate(logits, grads, |d| {
            for b in 0..bs {
                for p in 0..hw {
                    let z = |c: usize| if c == 0 { 0.0 } else { lv[(b * k + c - 1) * hw + p] };
                    let lse = log_sum_exp((0..=k).map(z));
                    for c in 1..=k {
                        let soft = libm::exp(z(c) - lse);
                        let hit = if classes[b * hw + p] == c { 1.0 } else { 0.0 };
                        d[(b * k + c - 1) * hw + p] += g * (soft - hit) / n;
                    }
                }
            }
        });
    }

    /// `KL(q ‖ softmax(s))` per frame, with `q` the target mask normalised to
    /// unit mass. Frames with an empty target are skipped; the result is the
    /// mean over the remaining frames, or zero when there are none.
    pub fn spatial_kl(&mut self, scores: NodeId, target: &Tensor) -> Result<NodeId> {
        self.check_target("spatial_kl", scores, target)?;
        let [_, c, h, w] = self.value(scores).dims4()?;
        if c != 1 {
            return Err(contract_err!("spatial_kl expects one channel, got {}", c));
        }
        let hw = h * w;
        let sv = self.value(scores).data();
        let (mut s, mut frames) = (0.0, 0usize);
        for (sp, mp) in sv.chunks_exact(hw).zip(target.data().chunks_exact(hw)) {
            let mass: f64 = mp.iter().sum();
            if mass <= 0.0 {
                continue;
            }
            frames += 1;
            let lse = log_sum_exp(sp.iter().copied());
            for (&x, &m) in sp.iter().zip(mp) {
                if m > 0.0 {
                    let q = m / mass;
                    s += q * (libm::log(q) - (x - lse));
                }
            }
        }
        self.charge(0, 4 * sv.len());
        let t = Tensor::scalar(if frames == 0 { 0.0 } else { s / frames as f64 });
        self.emit("spatial_kl", t, Op::SpatialKl { scores, target: target.clone() }, &[scores])
    }

    pub(super) fn back_spatial_kl(&self, scores: NodeId, target: &Tensor, g: f64, grads: &mut [Option<Vec<f64>>]) {
        let [_, _, h, w] = self.value(scores).dims4().expect("checked in forward");
        let hw = h * w;
        let sv = self.value(scores).data();
        let frames = target.data().chunks_exact(hw).filter(|m| m.iter().sum::<f64>() > 0.0).count();
        if frames == 0 {
            return;
        }
        self.accumulate(scores, grads, |d| {
            for ((dp, sp), mp) in d.chunks_exact_mut(hw).zip(sv.chunks_exact(hw)).zip(target.data().chunks_exact(hw)) {
                let mass: f64 = mp.iter().sum();
                if mass <= 0.0 {
                    continue;
                }
                let lse = log_sum_exp(sp.iter().copied());
                for ((d, &x), &m) in dp.iter_mut().zip(sp).zip(mp) {
                    *d += g * (libm::exp(x - lse) - m / mass) / frames as f64;
                }
            }
        });
    }
}

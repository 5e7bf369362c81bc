use alloc::vec;
use alloc::vec::Vec;

use super::nn::{matmul_acc, matmul_at_acc, matmul_bt_acc};
use super::{Graph, NodeId, Op};
use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

/// Channel-major `[d, N]` block to token-major `[N, d]`.
fn transpose(src: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = src[r * cols + c];
        }
    }
    out
}

impl Graph {
    /// Single-head scaled dot-product attention over the `N = H·W` spatial
    /// tokens of each frame: `softmax(Q Kᵀ / √d) V`.
    ///
    /// Charged as `2N²d` for the scores plus `2N²d` for the value mix,
    /// with the softmax counted elementwise.
    pub fn attention(&mut self, q: NodeId, k: NodeId, v: NodeId) -> Result<NodeId> {
        let [bs, d, h, w] = self.value(q).dims4()?;
        let [bk, dk, hk, wk] = self.value(k).dims4()?;
        let [bv, dv, hv, wv] = self.value(v).dims4()?;
        if (bk, dk, hk, wk) != (bs, d, h, w) || (bv, hv, wv) != (bs, h, w) {
            return Err(dim_err!(
                "attention: q {:?}, k {:?}, v {:?} are inconsistent",
                self.shape(q),
                self.shape(k),
                self.shape(v)
            ));
        }
        let n = h * w;
        let inv = 1.0 / libm::sqrt(d as f64);
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        let mut probs = vec![0.0; bs * n * n];
        let mut out = vec![0.0; bs * dv * n];
        for b in 0..bs {
            let qt = transpose(&qv[b * d * n..(b + 1) * d * n], d, n);
            let kt = transpose(&kv[b * d * n..(b + 1) * d * n], d, n);
            let p = &mut probs[b * n * n..(b + 1) * n * n];
            matmul_bt_acc(&qt, &kt, p, n, d, n);
            for row in p.chunks_exact_mut(n) {
                let m = row.iter().fold(f64::NEG_INFINITY, |a, &x| a.max(x * inv));
                let mut z = 0.0;
                for x in row.iter_mut() {
                    *x = libm::exp(*x * inv - m);
                    z += *x;
                }
                row.iter_mut().for_each(|x| *x /= z);
            }
            // out[j, n] = Σ_m v[j, m] P[n, m]
            matmul_bt_acc(&vv[b * dv * n..(b + 1) * dv * n], p, &mut out[b * dv * n..(b + 1) * dv * n], dv, n, n);
        }
        let t = Tensor::new(vec![bs, dv, h, w], out)?;
        self.charge(bs * (2 * n * n * d + 2 * n * n * dv), 3 * bs * n * n);
        self.emit("attention", t, Op::Attention { q, k, v, probs }, &[q, k, v])
    }

    pub(super) fn back_attention(
        &self,
        q: NodeId,
        k: NodeId,
        v: NodeId,
        probs: &[f64],
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let [bs, d, h, w] = self.value(q).dims4().expect("checked in forward");
        let dv = self.shape(v)[1];
        let n = h * w;
        let inv = 1.0 / libm::sqrt(d as f64);
        let (qv, kv, vv) = (self.value(q).data(), self.value(k).data(), self.value(v).data());
        for b in 0..bs {
            let p = &probs[b * n * n..(b + 1) * n * n];
            let go = &g[b * dv * n..(b + 1) * dv * n];
            // dV[j, m] = Σ_n dO[j, n] P[n, m]
            self.accumulate(v, grads, |dvv| matmul_acc(go, p, &mut dvv[b * dv * n..(b + 1) * dv * n], dv, n, n));
            // dP[n, m] = Σ_j dO[j, n] v[j, m]
            let mut dp = vec![0.0; n * n];
            matmul_at_acc(go, &vv[b * dv * n..(b + 1) * dv * n], &mut dp, dv, n, n);
            // dS = P ⊙ (dP − rowsum(P ⊙ dP)), then fold in the 1/√d scale.
            for (drow, prow) in dp.chunks_exact_mut(n).zip(p.chunks_exact(n)) {
                let dot: f64 = drow.iter().zip(prow).map(|(a, b)| a * b).sum();
                for (ds, &pp) in drow.iter_mut().zip(prow) {
                    *ds = pp * (*ds - dot) * inv;
                }
            }
            let qb = &qv[b * d * n..(b + 1) * d * n];
            let kb = &kv[b * d * n..(b + 1) * d * n];
            // dQ[j, n] = Σ_m dS[n, m] k[j, m]
            self.accumulate(q, grads, |dq| matmul_bt_acc(kb, &dp, &mut dq[b * d * n..(b + 1) * d * n], d, n, n));
            // dK[j, m] = Σ_n dS[n, m] q[j, n]
            self.accumulate(k, grads, |dk| matmul_acc(qb, &dp, &mut dk[b * d * n..(b + 1) * d * n], d, n, n));
        }
    }
}

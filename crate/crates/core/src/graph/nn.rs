use alloc::vec;
use alloc::vec::Vec;

use super::{add_into, Graph, NodeId, Op};
use crate::error::{dim_err, Result};
use crate::tensor::Tensor;

/// `c[m×n] += a[m×k] · b[k×n]`, all row-major.
pub(crate) fn matmul_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (c, &b) in crow.iter_mut().zip(brow) {
                *c += av * b;
            }
        }
    }
}

/// `c[m×n] += a[m×k] · b[n×k]ᵀ`.
pub(crate) fn matmul_bt_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            c[i * n + j] += arow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
        }
    }
}

/// `c[k×n] += a[m×k]ᵀ · b[m×n]`.
pub(crate) fn matmul_at_acc(a: &[f64], b: &[f64], c: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let crow = &mut c[p * n..(p + 1) * n];
            for (c, &b) in crow.iter_mut().zip(brow) {
                *c += av * b;
            }
        }
    }
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl ConvGeom {
    fn im2col(&self, x: &[f64], cols: &mut [f64]) {
        let p = self.ho * self.wo;
        for c in 0..self.c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            dst[oy * self.wo + ox] = if iy >= 0
                                && ix >= 0
                                && (iy as usize) < self.h
                                && (ix as usize) < self.w
                            {
                                x[(c * self.h + iy as usize) * self.w + ix as usize]
                            } else {
                                0.0
                            };
                        }
                    }
                }
            }
        }
    }

    fn col2im(&self, cols: &[f64], dx: &mut [f64]) {
        let p = self.ho * self.wo;
        for c in 0..self.c {
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy as usize >= self.h {
                            continue;
                        }
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix < 0 || ix as usize >= self.w {
                                continue;
                            }
                            dx[(c * self.h + iy as usize) * self.w + ix as usize] +=
                                src[oy * self.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Source index pair and weight of the upper neighbour for half-pixel-centre
/// bilinear sampling along one axis.
pub(crate) fn bilinear_taps(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let pos = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (src - 1) as f64);
            let lo = libm::floor(pos) as usize;
            let hi = (lo + 1).min(src - 1);
            (lo, hi, pos - lo as f64)
        })
        .collect()
}

impl Graph {
    /// 1×1 convolution: `out[b,o,h,w] = Σ_c weight[o,c]·x[b,c,h,w] + bias[o]`.
    pub fn pointwise_linear(&mut self, x: NodeId, weight: NodeId, bias: NodeId) -> Result<NodeId> {
        let [bs, cin, h, w] = self.value(x).dims4()?;
        let ws = self.shape(weight);
        if ws.len() != 2 || ws[1] != cin {
            return Err(dim_err!(
                "pointwise_linear: weight {:?} incompatible with input {:?}",
                ws,
                self.shape(x)
            ));
        }
        let cout = ws[0];
        if self.shape(bias) != [cout] {
            return Err(dim_err!(
                "pointwise_linear: bias {:?} does not match weight {:?}",
                self.shape(bias),
                ws
            ));
        }
        let (xv, wv, bv) = (self.value(x).data(), self.value(weight).data(), self.value(bias).data());
        let hw = h * w;
        let mut out = vec![0.0; bs * cout * hw];
        for b in 0..bs {
            let xs = &xv[b * cin * hw..(b + 1) * cin * hw];
            let os = &mut out[b * cout * hw..(b + 1) * cout * hw];
            for (o, bias) in bv.iter().enumerate() {
                os[o * hw..(o + 1) * hw].fill(*bias);
            }
            matmul_acc(wv, xs, os, cout, cin, hw);
        }
        let t = Tensor::new(vec![bs, cout, h, w], out)?;
        self.charge(bs * cout * cin * hw, 0);
        self.emit("pointwise_linear", t, Op::PointwiseLinear { x, w: weight, b: bias }, &[x, weight, bias])
    }

    pub(super) fn back_pointwise_linear(
        &self,
        x: NodeId,
        weight: NodeId,
        bias: NodeId,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let [bs, cin, h, w] = self.value(x).dims4().expect("checked in forward");
        let cout = self.shape(weight)[0];
        let hw = h * w;
        let (xv, wv) = (self.value(x).data(), self.value(weight).data());
        self.accumulate(x, grads, |dx| {
            for b in 0..bs {
                matmul_at_acc(
                    wv,
                    &g[b * cout * hw..(b + 1) * cout * hw],
                    &mut dx[b * cin * hw..(b + 1) * cin * hw],
                    cout,
                    cin,
                    hw,
                );
            }
        });
        self.accumulate(weight, grads, |dw| {
            for b in 0..bs {
                matmul_bt_acc(
                    &g[b * cout * hw..(b + 1) * cout * hw],
                    &xv[b * cin * hw..(b + 1) * cin * hw],
                    dw,
                    cout,
                    hw,
                    cin,
                );
            }
        });
        self.accumulate(bias, grads, |db| {
            for b in 0..bs {
                for (o, d) in db.iter_mut().enumerate() {
                    *d += g[(b * cout + o) * hw..(b * cout + o + 1) * hw].iter().sum::<f64>();
                }
            }
        });
    }

    /// Square-kernel convolution with zero padding. `weight` is `[O, C, k, k]`.
    pub fn conv2d(
        &mut self,
        x: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
    ) -> Result<NodeId> {
        let [bs, c, h, w] = self.value(x).dims4()?;
        let ws = self.shape(weight).to_vec();
        if ws.len() != 4 || ws[1] != c || ws[2] != ws[3] {
            return Err(dim_err!(
                "conv2d: weight {:?} incompatible with input {:?}",
                ws,
                self.shape(x)
            ));
        }
        let (o, k) = (ws[0], ws[2]);
        if self.shape(bias) != [o] {
            return Err(dim_err!("conv2d: bias {:?} does not match weight {:?}", self.shape(bias), ws));
        }
        if h + 2 * pad < k || w + 2 * pad < k || stride == 0 {
            return Err(dim_err!("conv2d: kernel {} too large for input {:?}", k, self.shape(x)));
        }
        let geom = ConvGeom {
            c,
            h,
            w,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        };
        let p = geom.ho * geom.wo;
        let ckk = c * k * k;
        let (xv, wv, bv) = (self.value(x).data(), self.value(weight).data(), self.value(bias).data());
        let mut cols = vec![0.0; ckk * p];
        let mut out = vec![0.0; bs * o * p];
        for b in 0..bs {
            geom.im2col(&xv[b * c * h * w..(b + 1) * c * h * w], &mut cols);
            let os = &mut out[b * o * p..(b + 1) * o * p];
            for (oc, bias) in bv.iter().enumerate() {
                os[oc * p..(oc + 1) * p].fill(*bias);
            }
            matmul_acc(wv, &cols, os, o, ckk, p);
        }
        let t = Tensor::new(vec![bs, o, geom.ho, geom.wo], out)?;
        self.charge(bs * o * ckk * p, 0);
        self.emit("conv2d", t, Op::Conv2d { x, w: weight, b: bias, stride, pad }, &[x, weight, bias])
    }

    #[allow(clippy::too_many_arguments)]
    pub(super) fn back_conv2d(
        &self,
        x: NodeId,
        weight: NodeId,
        bias: NodeId,
        stride: usize,
        pad: usize,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let [bs, c, h, w] = self.value(x).dims4().expect("checked in forward");
        let ws = self.shape(weight);
        let (o, k) = (ws[0], ws[2]);
        let geom = ConvGeom {
            c,
            h,
            w,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        };
        let p = geom.ho * geom.wo;
        let ckk = c * k * k;
        let (xv, wv) = (self.value(x).data(), self.value(weight).data());
        let need_w = self.requires_grad(weight);
        let need_x = self.requires_grad(x);
        let mut cols = vec![0.0; ckk * p];
        for b in 0..bs {
            let gb = &g[b * o * p..(b + 1) * o * p];
            if need_w {
                geom.im2col(&xv[b * c * h * w..(b + 1) * c * h * w], &mut cols);
                self.accumulate(weight, grads, |dw| matmul_bt_acc(gb, &cols, dw, o, p, ckk));
            }
            if need_x {
                cols.fill(0.0);
                matmul_at_acc(wv, gb, &mut cols, o, ckk, p);
                self.accumulate(x, grads, |dx| {
                    geom.col2im(&cols, &mut dx[b * c * h * w..(b + 1) * c * h * w])
                });
            }
        }
        self.accumulate(bias, grads, |db| {
            for b in 0..bs {
                for (oc, d) in db.iter_mut().enumerate() {
                    *d += g[(b * o + oc) * p..(b * o + oc + 1) * p].iter().sum::<f64>();
                }
            }
        });
    }

    /// Spatial max to `[B, C, 1, 1]`. Ties resolve to the first position in
    /// row-major order, which is also where the gradient is routed.
    pub fn global_max_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let [bs, c, h, w] = self.value(x).dims4()?;
        let hw = h * w;
        let xv = self.value(x).data();
        let mut out = Vec::with_capacity(bs * c);
        let mut argmax = Vec::with_capacity(bs * c);
        for row in xv.chunks_exact(hw) {
            let (mut best, mut at) = (row[0], 0);
            for (i, &v) in row.iter().enumerate().skip(1) {
                if v > best {
                    best = v;
                    at = i;
                }
            }
            out.push(best);
            argmax.push(at);
        }
        let t = Tensor::new(vec![bs, c, 1, 1], out)?;
        self.charge(0, bs * c * hw);
        self.emit("global_max_pool", t, Op::GlobalMaxPool { x, argmax }, &[x])
    }

    pub(super) fn back_max_pool(&self, x: NodeId, argmax: &[usize], g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let [_, _, h, w] = self.value(x).dims4().expect("checked in forward");
        self.accumulate(x, grads, |dx| {
            for (row, (&at, &g)) in argmax.iter().zip(g).enumerate() {
                dx[row * h * w + at] += g;
            }
        });
    }

    /// Spatial mean to `[B, C, 1, 1]`.
    pub fn global_avg_pool(&mut self, x: NodeId) -> Result<NodeId> {
        let [bs, c, h, w] = self.value(x).dims4()?;
        let hw = h * w;
        let out: Vec<f64> = self
            .value(x)
            .data()
            .chunks_exact(hw)
            .map(|r| r.iter().sum::<f64>() / hw as f64)
            .collect();
        let t = Tensor::new(vec![bs, c, 1, 1], out)?;
        self.charge(0, bs * c * hw);
        self.emit("global_avg_pool", t, Op::GlobalAvgPool { x }, &[x])
    }

    pub(super) fn back_avg_pool(&self, x: NodeId, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let [_, _, h, w] = self.value(x).dims4().expect("checked in forward");
        let hw = h * w;
        self.accumulate(x, grads, |dx| {
            for (row, &g) in dx.chunks_exact_mut(hw).zip(g) {
                row.iter_mut().for_each(|d| *d += g / hw as f64);
            }
        });
    }

    fn unary(&mut self, name: &'static str, x: NodeId, f: impl Fn(f64) -> f64, op: Op) -> Result<NodeId> {
        let t = self.value(x).map(f);
        self.charge(0, t.numel());
        self.emit(name, t, op, &[x])
    }

    /// Hard sigmoid `clamp((x + 3) / 6, 0, 1)`.
    pub fn hsigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("hsigmoid", x, hsigmoid, Op::HSigmoid { x })
    }

    pub fn sigmoid(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("sigmoid", x, sigmoid, Op::Sigmoid { x })
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.unary("relu", x, |v| v.max(0.0), Op::Relu { x })
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.unary("scale", x, |v| v * c, Op::Scale { x, c })
    }

    fn same_shape(&self, name: &str, a: NodeId, b: NodeId) -> Result<()> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err!("{}: shapes {:?} and {:?} differ", name, self.shape(a), self.shape(b)));
        }
        Ok(())
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("elementwise_mul", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x * y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.charge(0, t.numel());
        self.emit("elementwise_mul", t, Op::Mul { a, b }, &[a, b])
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.same_shape("add", a, b)?;
        let data = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        let t = Tensor::new(self.shape(a).to_vec(), data)?;
        self.charge(0, t.numel());
        self.emit("add", t, Op::Add { a, b }, &[a, b])
    }

    /// `x[b,c,h,w] + g[b,c]`: a per-channel bias broadcast over space.
    pub fn broadcast_add(&mut self, x: NodeId, g: NodeId) -> Result<NodeId> {
        let [bs, c, h, w] = self.value(x).dims4()?;
        if self.shape(g) != [bs, c, 1, 1] {
            return Err(dim_err!(
                "broadcast_add: {:?} cannot broadcast over {:?}",
                self.shape(g),
                self.shape(x)
            ));
        }
        let hw = h * w;
        let gv = self.value(g).data();
        let mut data = self.value(x).data().to_vec();
        for (row, &bias) in data.chunks_exact_mut(hw).zip(gv) {
            row.iter_mut().for_each(|v| *v += bias);
        }
        let t = Tensor::new(vec![bs, c, h, w], data)?;
        self.charge(0, bs * c * hw);
        self.emit("broadcast_add", t, Op::BroadcastAdd { x, g }, &[x, g])
    }

    pub(super) fn back_broadcast_add(&self, x: NodeId, bias: NodeId, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let [_, _, h, w] = self.value(x).dims4().expect("checked in forward");
        self.accumulate(x, grads, |dx| add_into(dx, g));
        self.accumulate(bias, grads, |db| {
            for (d, row) in db.iter_mut().zip(g.chunks_exact(h * w)) {
                *d += row.iter().sum::<f64>();
            }
        });
    }

    /// `[a, b]` along the channel axis.
    pub fn concat_channels(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let [ba, ca, ha, wa] = self.value(a).dims4()?;
        let [bb, cb, hb, wb] = self.value(b).dims4()?;
        if (ba, ha, wa) != (bb, hb, wb) {
            return Err(dim_err!(
                "concat_channels: {:?} and {:?} differ outside the channel axis",
                self.shape(a),
                self.shape(b)
            ));
        }
        let hw = ha * wa;
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut data = Vec::with_capacity(ba * (ca + cb) * hw);
        for i in 0..ba {
            data.extend_from_slice(&av[i * ca * hw..(i + 1) * ca * hw]);
            data.extend_from_slice(&bv[i * cb * hw..(i + 1) * cb * hw]);
        }
        let t = Tensor::new(vec![ba, ca + cb, ha, wa], data)?;
        self.emit("concat_channels", t, Op::ConcatChannels { a, b }, &[a, b])
    }

    pub(super) fn back_concat(&self, a: NodeId, b: NodeId, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let [bs, ca, h, w] = self.value(a).dims4().expect("checked in forward");
        let cb = self.shape(b)[1];
        let hw = h * w;
        let stride = (ca + cb) * hw;
        self.accumulate(a, grads, |d| {
            for i in 0..bs {
                add_into(&mut d[i * ca * hw..(i + 1) * ca * hw], &g[i * stride..i * stride + ca * hw]);
            }
        });
        self.accumulate(b, grads, |d| {
            for i in 0..bs {
                add_into(&mut d[i * cb * hw..(i + 1) * cb * hw], &g[i * stride + ca * hw..(i + 1) * stride]);
            }
        });
    }

    /// `x / (‖x‖₂ + eps)` where the norm runs along `axis`.
    pub fn l2_normalize(&mut self, x: NodeId, axis: usize, eps: f64) -> Result<NodeId> {
        let shape = self.shape(x).to_vec();
        if axis >= shape.len() {
            return Err(dim_err!("l2_normalize: axis {} out of range for {:?}", axis, shape));
        }
        let (outer, len, inner) = split_axis(&shape, axis);
        let xv = self.value(x).data();
        let mut out = vec![0.0; xv.len()];
        for o in 0..outer {
            for i in 0..inner {
                let idx = |c: usize| (o * len + c) * inner + i;
                let norm = libm::sqrt((0..len).map(|c| xv[idx(c)] * xv[idx(c)]).sum::<f64>());
                for c in 0..len {
                    out[idx(c)] = xv[idx(c)] / (norm + eps);
                }
            }
        }
        let t = Tensor::new(shape, out)?;
        self.charge(0, 3 * t.numel());
        self.emit("l2_normalize", t, Op::L2Normalize { x, axis, eps }, &[x])
    }

    pub(super) fn back_l2_normalize(
        &self,
        x: NodeId,
        axis: usize,
        eps: f64,
        g: &[f64],
        grads: &mut [Option<Vec<f64>>],
    ) {
        let (outer, len, inner) = split_axis(self.shape(x), axis);
        let xv = self.value(x).data();
        self.accumulate(x, grads, |dx| {
            for o in 0..outer {
                for i in 0..inner {
                    let idx = |c: usize| (o * len + c) * inner + i;
                    let norm = libm::sqrt((0..len).map(|c| xv[idx(c)] * xv[idx(c)]).sum::<f64>());
                    let den = norm + eps;
                    let gx: f64 = (0..len).map(|c| g[idx(c)] * xv[idx(c)]).sum();
                    for c in 0..len {
                        let mut d = g[idx(c)] / den;
                        if norm > 0.0 {
                            d -= xv[idx(c)] * gx / (den * den * norm);
                        }
                        dx[idx(c)] += d;
                    }
                }
            }
        });
    }

    /// Per-position inner product with a global vector: `Σ_c v[b,c,h,w]·a[b,c]`,
    /// giving `[B, 1, H, W]`.
    pub fn channel_dot(&mut self, v: NodeId, a: NodeId) -> Result<NodeId> {
        let [bs, c, h, w] = self.value(v).dims4()?;
        if self.shape(a) != [bs, c, 1, 1] {
            return Err(dim_err!("channel_dot: {:?} does not pair with {:?}", self.shape(a), self.shape(v)));
        }
        let hw = h * w;
        let (vv, av) = (self.value(v).data(), self.value(a).data());
        let mut out = vec![0.0; bs * hw];
        for b in 0..bs {
            let os = &mut out[b * hw..(b + 1) * hw];
            for ch in 0..c {
                let s = av[b * c + ch];
                for (o, &x) in os.iter_mut().zip(&vv[(b * c + ch) * hw..(b * c + ch + 1) * hw]) {
                    *o += s * x;
                }
            }
        }
        let t = Tensor::new(vec![bs, 1, h, w], out)?;
        self.charge(bs * c * hw, 0);
        self.emit("channel_dot", t, Op::ChannelDot { v, a }, &[v, a])
    }

    pub(super) fn back_channel_dot(&self, v: NodeId, a: NodeId, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let [bs, c, h, w] = self.value(v).dims4().expect("checked in forward");
        let hw = h * w;
        let (vv, av) = (self.value(v).data(), self.value(a).data());
        self.accumulate(v, grads, |dv| {
            for b in 0..bs {
                for ch in 0..c {
                    let s = av[b * c + ch];
                    let row = &mut dv[(b * c + ch) * hw..(b * c + ch + 1) * hw];
                    for (d, &g) in row.iter_mut().zip(&g[b * hw..(b + 1) * hw]) {
                        *d += s * g;
                    }
                }
            }
        });
        self.accumulate(a, grads, |da| {
            for b in 0..bs {
                for ch in 0..c {
                    da[b * c + ch] += vv[(b * c + ch) * hw..(b * c + ch + 1) * hw]
                        .iter()
                        .zip(&g[b * hw..(b + 1) * hw])
                        .map(|(x, y)| x * y)
                        .sum::<f64>();
                }
            }
        });
    }

    /// Bilinear resize to `height × width` with half-pixel centres:
    /// source coordinate `(dst + 0.5)·(src/dst) − 0.5`, clamped to the grid.
    pub fn bilinear_upsample(&mut self, x: NodeId, height: usize, width: usize) -> Result<NodeId> {
        let [bs, c, h, w] = self.value(x).dims4()?;
        if height == 0 || width == 0 {
            return Err(dim_err!("bilinear_upsample: zero target extent {}x{}", height, width));
        }
        if height < h || width < w {
            return Err(dim_err!(
                "bilinear_upsample: target {}x{} smaller than input {:?}",
                height,
                width,
                self.shape(x)
            ));
        }
        let (ty, tx) = (bilinear_taps(h, height), bilinear_taps(w, width));
        let xv = self.value(x).data();
        let mut out = vec![0.0; bs * c * height * width];
        for (plane, dst) in xv.chunks_exact(h * w).zip(out.chunks_exact_mut(height * width)) {
            for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
                    let bot = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
                    dst[oy * width + ox] = top * (1.0 - fy) + bot * fy;
                }
            }
        }
        let t = Tensor::new(vec![bs, c, height, width], out)?;
        self.charge(4 * t.numel(), 0);
        self.emit("bilinear_upsample", t, Op::Upsample { x }, &[x])
    }

    pub(super) fn back_upsample(&self, x: NodeId, out_shape: &[usize], g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let [_, _, h, w] = self.value(x).dims4().expect("checked in forward");
        let (height, width) = (out_shape[2], out_shape[3]);
        let (ty, tx) = (bilinear_taps(h, height), bilinear_taps(w, width));
        self.accumulate(x, grads, |dx| {
            for (plane, src) in dx.chunks_exact_mut(h * w).zip(g.chunks_exact(height * width)) {
                for (oy, &(y0, y1, fy)) in ty.iter().enumerate() {
                    for (ox, &(x0, x1, fx)) in tx.iter().enumerate() {
                        let gv = src[oy * width + ox];
                        plane[y0 * w + x0] += gv * (1.0 - fy) * (1.0 - fx);
                        plane[y0 * w + x1] += gv * (1.0 - fy) * fx;
                        plane[y1 * w + x0] += gv * fy * (1.0 - fx);
                        plane[y1 * w + x1] += gv * fy * fx;
                    }
                }
            }
        });
    }

    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        let s = self.value(x).sum();
        self.charge(0, self.value(x).numel());
        self.emit("sum", Tensor::scalar(s), Op::Sum { x }, &[x])
    }

    /// Arithmetic mean of scalar nodes, `(Σ v_i) / n`.
    pub fn mean_of(&mut self, items: &[NodeId]) -> Result<NodeId> {
        if items.is_empty() {
            return Err(crate::error::contract_err!("mean_of: no items"));
        }
        let mut s = 0.0;
        for &i in items {
            s += self.value(i).item()?;
        }
        let t = Tensor::scalar(s / items.len() as f64);
        self.emit("mean_of", t, Op::MeanOf { items: items.to_vec() }, items)
    }
}

pub fn hsigmoid(x: f64) -> f64 {
    ((x + 3.0) / 6.0).clamp(0.0, 1.0)
}

/// Logistic function, evaluated through `exp(x)` for negative inputs.
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + libm::exp(-x))
    } else {
        let e = libm::exp(x);
        e / (1.0 + e)
    }
}

fn split_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

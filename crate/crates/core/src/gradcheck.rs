//! Central-difference verification of the tape's gradients.
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::backbone::BackboneConfig;
use crate::error::Result;
use crate::loss::{model_loss, LossVariant, DEFAULT_LAMBDA, DEFAULT_TAU};
use crate::model::{forward, ModelConfig};
use crate::rng::RngState;
use crate::graph::{Graph, NodeId};
use crate::tensor::Tensor;

/// Builds a scalar loss from an input node on a fresh graph.
pub trait ScalarFn: Fn(&mut Graph, NodeId) -> Result<NodeId> {}
impl<F: Fn(&mut Graph, NodeId) -> Result<NodeId>> ScalarFn for F {}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub tol: f64,
    /// Step is `step_scale · max(1, |x_i|)`.
    pub step_scale: f64,
    /// Coordinates to probe; `None` probes all of them.
    pub coords: Option<Vec<usize>>,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            tol: 1e-4,
            step_scale: 1e-3,
            coords: None,
        }
    }
}

impl GradCheckOptions {
    pub fn with_tol(tol: f64) -> Self {
        Self {
            tol,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CoordCheck {
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
    /// Finite-difference step actually used.
    pub step: f64,
    pub pass: bool,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub tol: f64,
    pub coords: Vec<CoordCheck>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.coords.iter().all(|c| c.pass)
    }

    pub fn failures(&self) -> impl Iterator<Item = &CoordCheck> {
        self.coords.iter().filter(|c| !c.pass)
    }
}

/// Denominator floor of [`relative_error`]. Below it the finite-difference
/// noise of an order-one loss in f64 dominates, so errors are absolute.
pub const REL_FLOOR: f64 = 1e-6;

/// `|a − n| / max(|a|, |n|, REL_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_FLOOR)
}

/// Step reductions tried when a probe crosses a branch switch.
const MAX_SHRINKS: u32 = 6;

fn eval(f: &impl ScalarFn, x: &Tensor) -> Result<(f64, u64)> {
    let mut g = Graph::new();
    let id = g.constant(x.clone())?;
    let out = f(&mut g, id)?;
    Ok((g.value(out).item()?, g.branch_signature()))
}

/// Compares the reverse-mode gradient of `f` at `x` with the five-point
/// central difference `(−f(x+2h) + 8f(x+h) − 8f(x−h) + f(x−2h)) / 12h`.
///
/// When `x ± h` takes a different piecewise branch than `x` (a ReLU or
/// hard-sigmoid flips, a max-pool winner changes) the step is cut by 10×, up
/// to six times, so the difference quotient stays on the smooth piece the
/// analytic gradient belongs to.
pub fn grad_check(f: impl ScalarFn, x: &Tensor, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let mut g = Graph::new();
    let id = g.param(x.clone())?;
    let out = f(&mut g, id)?;
    let base_sig = g.branch_signature();
    g.backward(out)?;
    let analytic = g.grad(id).unwrap_or_else(|| Tensor::zeros(x.shape()));

    let all: Vec<usize>;
    let coords = match &opts.coords {
        Some(c) => c.as_slice(),
        None => {
            all = (0..x.numel()).collect();
            &all
        }
    };
    let mut probe = x.clone();
    let mut results = Vec::with_capacity(coords.len());
    let mut max_rel_err: f64 = 0.0;
    for &i in coords {
        let x0 = x.data()[i];
        let mut h = opts.step_scale * x0.abs().max(1.0);
        let mut shrinks = 0;
        let numeric = loop {
            let mut vals = [0.0; 4];
            let mut same = true;
            for (v, k) in vals.iter_mut().zip([2.0, 1.0, -1.0, -2.0]) {
                probe.data_mut()[i] = x0 + k * h;
                let (y, sig) = eval(&f, &probe)?;
                *v = y;
                same &= sig == base_sig;
            }
            probe.data_mut()[i] = x0;
            if same || shrinks == MAX_SHRINKS {
                break (-vals[0] + 8.0 * vals[1] - 8.0 * vals[2] + vals[3]) / (12.0 * h);
            }
            h /= 10.0;
            shrinks += 1;
        };
        let a = analytic.data()[i];
        let rel_err = relative_error(a, numeric);
        max_rel_err = max_rel_err.max(rel_err);
        results.push(CoordCheck {
            index: i,
            analytic: a,
            numeric,
            rel_err,
            step: h,
            pass: rel_err < opts.tol,
        });
    }
    Ok(GradCheckReport {
        max_rel_err,
        tol: opts.tol,
        coords: results,
    })
}

/// One named check of a suite.
#[derive(Clone, Debug)]
pub struct SuiteEntry {
    pub name: String,
    pub report: GradCheckReport,
}

fn entry(name: &str, f: impl ScalarFn, x: &Tensor, opts: &GradCheckOptions) -> Result<SuiteEntry> {
    Ok(SuiteEntry { name: String::from(name), report: grad_check(f, x, opts)? })
}

fn random(shape: &[usize], rng: &mut RngState, lo: f64, hi: f64) -> Tensor {
    Tensor::from_fn(shape, |_| rng.uniform(lo, hi))
}

/// Reduces an arbitrary tensor to a scalar with fixed random weights so
/// every output element contributes a distinct gradient.
fn probe(g: &mut Graph, y: NodeId, seed: u64) -> Result<NodeId> {
    let mut rng = RngState::new(seed);
    let w = random(g.shape(y), &mut rng, -1.0, 1.0);
    let w = g.constant(w)?;
    let p = g.mul(y, w)?;
    g.sum(p)
}

/// Every differentiable op on small random inputs, kept away from kinks.
pub fn op_checks(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut rng = RngState::new(seed);
    let o = GradCheckOptions::default();
    let x = random(&[2, 3, 3, 3], &mut rng, -1.0, 1.0);
    let w = random(&[4, 3], &mut rng, -1.0, 1.0);
    let bias = random(&[4], &mut rng, -1.0, 1.0);
    let kw = random(&[4, 3, 3, 3], &mut rng, -1.0, 1.0);
    let a = random(&[2, 3, 1, 1], &mut rng, -1.0, 1.0);
    let q = random(&[1, 2, 2, 2], &mut rng, -1.0, 1.0);
    let mask = Tensor::from_fn(&[2, 1, 3, 3], |i| ((i * 7) % 3 == 0) as u8 as f64);
    let onehot = Tensor::from_fn(&[2, 3, 3, 3], |i| ((i / 9) % 3 == (i % 9) % 3) as u8 as f64);
    // values bounded away from 0 and ±3 for relu/hsigmoid
    let smooth = x.map(|v| if v >= 0.0 { 0.2 + v } else { -0.2 + v });

    let mut out = Vec::new();
    out.push(entry("pointwise_linear/x", |g: &mut Graph, x| {
        let (w, b) = (g.constant(w.clone())?, g.constant(bias.clone())?);
        let y = g.pointwise_linear(x, w, b)?;
        probe(g, y, 1)
    }, &x, &o)?);
    out.push(entry("pointwise_linear/w", |g: &mut Graph, w| {
        let (x, b) = (g.constant(x.clone())?, g.constant(bias.clone())?);
        let y = g.pointwise_linear(x, w, b)?;
        probe(g, y, 2)
    }, &w, &o)?);
    out.push(entry("pointwise_linear/b", |g: &mut Graph, b| {
        let (x, w) = (g.constant(x.clone())?, g.constant(w.clone())?);
        let y = g.pointwise_linear(x, w, b)?;
        probe(g, y, 3)
    }, &bias, &o)?);
    out.push(entry("conv2d/x", |g: &mut Graph, x| {
        let (w, b) = (g.constant(kw.clone())?, g.constant(bias.clone())?);
        let y = g.conv2d(x, w, b, 2, 1)?;
        probe(g, y, 4)
    }, &x, &o)?);
    out.push(entry("conv2d/w", |g: &mut Graph, w| {
        let (x, b) = (g.constant(x.clone())?, g.constant(bias.clone())?);
        let y = g.conv2d(x, w, b, 1, 1)?;
        probe(g, y, 5)
    }, &kw, &o)?);
    out.push(entry("global_max_pool", |g: &mut Graph, x| {
        let y = g.global_max_pool(x)?;
        probe(g, y, 6)
    }, &x, &o)?);
    out.push(entry("global_avg_pool", |g: &mut Graph, x| {
        let y = g.global_avg_pool(x)?;
        probe(g, y, 7)
    }, &x, &o)?);
    out.push(entry("relu", |g: &mut Graph, x| {
        let y = g.relu(x)?;
        probe(g, y, 8)
    }, &smooth, &o)?);
    out.push(entry("hsigmoid", |g: &mut Graph, x| {
        let y = g.hsigmoid(x)?;
        probe(g, y, 9)
    }, &smooth, &o)?);
    out.push(entry("sigmoid", |g: &mut Graph, x| {
        let y = g.sigmoid(x)?;
        probe(g, y, 10)
    }, &x, &o)?);
    out.push(entry("mul_scale_add", |g: &mut Graph, x| {
        let s = g.scale(x, 1.7)?;
        let m = g.mul(s, x)?;
        let y = g.add(m, x)?;
        probe(g, y, 11)
    }, &x, &o)?);
    out.push(entry("broadcast_add", |g: &mut Graph, a| {
        let x = g.constant(x.clone())?;
        let y = g.broadcast_add(x, a)?;
        let y = g.mul(y, y)?;
        probe(g, y, 12)
    }, &a, &o)?);
    out.push(entry("concat_channels", |g: &mut Graph, x| {
        let y = g.concat_channels(x, x)?;
        probe(g, y, 13)
    }, &x, &o)?);
    out.push(entry("l2_normalize", |g: &mut Graph, x| {
        let y = g.l2_normalize(x, 1, 1e-6)?;
        probe(g, y, 14)
    }, &x, &o)?);
    out.push(entry("channel_dot", |g: &mut Graph, a| {
        let x = g.constant(x.clone())?;
        let y = g.channel_dot(x, a)?;
        probe(g, y, 15)
    }, &a, &o)?);
    out.push(entry("bilinear_upsample", |g: &mut Graph, x| {
        let y = g.bilinear_upsample(x, 7, 5)?;
        probe(g, y, 16)
    }, &x, &o)?);
    out.push(entry("attention", |g: &mut Graph, q| {
        let k = g.scale(q, -0.5)?;
        let v = g.mul(q, q)?;
        let y = g.attention(q, k, v)?;
        probe(g, y, 17)
    }, &q, &o)?);
    let logits = random(&[2, 1, 3, 3], &mut rng, -2.0, 2.0);
    out.push(entry("dice_loss", |g: &mut Graph, l| g.dice_loss(l, &mask), &logits, &o)?);
    out.push(entry("bce_with_logits", |g: &mut Graph, l| g.bce_with_logits(l, &mask), &logits, &o)?);
    let probs = logits.map(|v| 0.5 + 0.2 * v);
    out.push(entry("bce_prob", |g: &mut Graph, p| g.bce_prob(p, &mask), &probs, &o)?);
    out.push(entry("spatial_kl", |g: &mut Graph, s| g.spatial_kl(s, &mask), &probs, &o)?);
    out.push(entry("softmax_ce", |g: &mut Graph, l| g.softmax_ce(l, &onehot), &x, &o)?);
    out.push(entry("mean_of", |g: &mut Graph, x| {
        let a = g.sum(x)?;
        let sq = g.mul(x, x)?;
        let b = g.sum(sq)?;
        g.mean_of(&[a, b])
    }, &x, &o)?);
    Ok(out)
}

/// Step scale of [`model_checks`] in [`full_suite`].
pub const MODEL_STEP: f64 = 1e-3;

/// Small model used by the end-to-end gradient check.
pub fn toy_model_config() -> ModelConfig {
    ModelConfig {
        backbone: BackboneConfig {
            stage_channels: alloc::vec![4, 6, 8, 8],
            audio_channels: 8,
            audio_hidden: 8,
            input_hw: 32,
        },
        ..ModelConfig::default()
    }
}

/// Full encoder, decoder and total loss on a `1×3×32×32` input: gradients
/// with respect to the frames, the audio input and a few whole parameters.
/// Uses a smaller step than the op checks so that perturbations rarely cross
/// a ReLU or max-pool switch.
pub fn model_checks(seed: u64, step_scale: f64) -> Result<Vec<SuiteEntry>> {
    let cfg = toy_model_config();
    let params = cfg.init_params(seed)?;
    let mut rng = RngState::new(seed).fork(7);
    let frames = random(&[1, 3, 32, 32], &mut rng, 0.0, 1.0);
    let audio = random(&[1, 64, 96, 1], &mut rng, -2.0, 0.0);
    let masks = Tensor::from_fn(&[1, 1, 32, 32], |i| {
        let (y, x) = (i / 32, i % 32);
        (x.abs_diff(10) <= 6 && y.abs_diff(16) <= 6) as u8 as f64
    });
    let opts = GradCheckOptions { step_scale, ..GradCheckOptions::default() };
    let loss = |g: &mut Graph, p: &crate::params::Bound, f: NodeId, a: NodeId| -> Result<NodeId> {
        let out = forward(g, &cfg, p, f, a, false)?;
        Ok(model_loss(g, &out, &masks, DEFAULT_LAMBDA, DEFAULT_TAU, LossVariant::SegMsa)?.total)
    };
    let mut out = Vec::new();
    out.push(entry("model/frames", |g: &mut Graph, f| {
        let p = params.bind(g, |_| false)?;
        let a = g.constant(audio.clone())?;
        loss(g, &p, f, a)
    }, &frames, &opts)?);
    out.push(entry("model/audio", |g: &mut Graph, a| {
        let p = params.bind(g, |_| false)?;
        let f = g.constant(frames.clone())?;
        loss(g, &p, f, a)
    }, &audio, &GradCheckOptions { coords: Some((0..audio.numel()).step_by(7).collect()), ..opts.clone() })?);
    for name in [
        "audio/fc2_w",
        "visual/stem_w",
        "encoder/stage2/gate_map_w",
        "encoder/stage4/audio_map_w",
        "decoder/stage3/fuse_w",
        "decoder/stage2/inject_b",
        "decoder/lateral1_w",
        "decoder/head_w",
    ] {
        let value = params.get(name)?.clone();
        out.push(entry(&alloc::format!("model/{name}"), |g: &mut Graph, w| {
            let mut over = BTreeMap::new();
            over.insert(String::from(name), w);
            let p = params.bind_with(g, |_| false, &over)?;
            let f = g.constant(frames.clone())?;
            let a = g.constant(audio.clone())?;
            loss(g, &p, f, a)
        }, &value, &opts)?);
    }
    Ok(out)
}

/// [`op_checks`] followed by [`model_checks`].
pub fn full_suite(seed: u64) -> Result<Vec<SuiteEntry>> {
    let mut all = op_checks(seed)?;
    all.extend(model_checks(seed, MODEL_STEP)?);
    Ok(all)
}

//! Dense audio-conditioned cross-attention, the quadratic reference block,
//! and the FLOP scaling sweep that compares it with the linear fusion path.
use alloc::string::String;
use alloc::vec::Vec;

use crate::backbone::AudioState;
use crate::decoder::{audio_state_update, visual_inject, DecoderStageParams};
use crate::encoder::{agve_step, har_step, EncoderStageParams, SCOPE_SPATIAL};
use crate::error::{contract_err, dim_err, Result};
use crate::flops::{FlopCounter, FlopReport, SweepPoint};
use crate::graph::{Graph, NodeId};
use crate::params::{Bound, ParamStore};
use crate::rng::RngState;
use crate::tensor::Tensor;

pub const SCOPE_CORE: &str = "xattn_core";
pub const SCOPE_PROJECTION: &str = "xattn_projection";

/// Query/key/value/output maps of one attention head.
#[derive(Clone, Copy, Debug)]
pub struct AttentionParams {
    pub query: (NodeId, NodeId),
    pub key: (NodeId, NodeId),
    pub value: (NodeId, NodeId),
    pub output: (NodeId, NodeId),
}

impl AttentionParams {
    pub fn init(store: &mut ParamStore, channels: usize, d: usize, rng: &mut RngState) {
        store.init_linear("xattn/query", channels, d, rng);
        store.init_linear("xattn/key", channels, d, rng);
        store.init_linear("xattn/value", channels, d, rng);
        store.init_linear("xattn/output", d, channels, rng);
    }

    pub fn bind(p: &Bound) -> Result<Self> {
        Ok(Self {
            query: p.pair("xattn/query")?,
            key: p.pair("xattn/key")?,
            value: p.pair("xattn/value")?,
            output: p.pair("xattn/output")?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AttentionOutput {
    pub out: NodeId,
    /// The attention node; its row-softmax weights are available through
    /// [`Graph::attention_weights`].
    pub attn: NodeId,
}

/// `out(softmax(q(v + B(a)) k(v)ᵀ / √d) val(v))` over the `H·W` tokens.
pub fn dense_attention(g: &mut Graph, v: NodeId, audio: AudioState, p: &AttentionParams) -> Result<AttentionOutput> {
    let (vc, ac) = (g.shape(v).get(1).copied(), g.shape(audio.value).get(1).copied());
    if vc != ac {
        return Err(dim_err!(
            "dense_attention: audio {:?} does not match visual {:?}",
            g.shape(audio.value),
            g.shape(v)
        ));
    }
    let (q, k, val) = g.scoped(SCOPE_PROJECTION, |g| {
        let cond = g.broadcast_add(v, audio.value)?;
        let q = g.pointwise_linear(cond, p.query.0, p.query.1)?;
        let k = g.pointwise_linear(v, p.key.0, p.key.1)?;
        let val = g.pointwise_linear(v, p.value.0, p.value.1)?;
        Ok::<_, crate::Error>((q, k, val))
    })?;
    let attn = g.scoped(SCOPE_CORE, |g| g.attention(q, k, val))?;
    let out = g.scoped(SCOPE_PROJECTION, |g| g.pointwise_linear(attn, p.output.0, p.output.1))?;
    Ok(AttentionOutput { out, attn })
}

/// Module measured by [`scaling_sweep`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepModule {
    /// One encoder interaction (HAR + AGVE) and one decoder interaction
    /// (state update + injection) on the same feature grid.
    Fusion,
    /// [`dense_attention`] on the feature grid.
    Xattn,
}

impl SweepModule {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepModule::Fusion => "fusion",
            SweepModule::Xattn => "xattn",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fusion" => Ok(SweepModule::Fusion),
            "xattn" => Ok(SweepModule::Xattn),
            other => Err(contract_err!("unknown module `{}` (fusion, xattn)", other)),
        }
    }

    /// Scope whose count is fitted against `N`.
    pub fn scaling_scope(self) -> &'static str {
        match self {
            SweepModule::Fusion => SCOPE_SPATIAL,
            SweepModule::Xattn => SCOPE_CORE,
        }
    }
}

/// A module with fixed random weights, run on square grids of varying side.
#[derive(Clone, Debug)]
pub struct SweepBench {
    pub module: SweepModule,
    pub channels: usize,
    pub head_dim: usize,
    params: ParamStore,
    seed: u64,
}

impl SweepBench {
    pub fn new(module: SweepModule, channels: usize, head_dim: usize, seed: u64) -> Self {
        let mut rng = RngState::new(seed);
        let mut params = ParamStore::new();
        match module {
            SweepModule::Fusion => {
                EncoderStageParams::init(&mut params, 1, channels, channels, &mut rng);
                DecoderStageParams::init(&mut params, 1, channels, channels, &mut rng);
            }
            SweepModule::Xattn => AttentionParams::init(&mut params, channels, head_dim, &mut rng),
        }
        Self { module, channels, head_dim, params, seed }
    }

    /// One forward pass on a `side × side` grid; returns the FLOP counter.
    pub fn run(&self, side: usize) -> Result<FlopCounter> {
        if side == 0 {
            return Err(contract_err!("grid side must be positive"));
        }
        let mut rng = RngState::new(self.seed).fork(side as u64);
        let c = self.channels;
        let v = Tensor::from_fn(&[1, c, side, side], |_| rng.uniform(-1.0, 1.0));
        let a = Tensor::from_fn(&[1, c, 1, 1], |_| rng.uniform(-1.0, 1.0));
        let mut g = Graph::new();
        let p = self.params.bind(&mut g, |_| false)?;
        let v = g.constant(v)?;
        let a = AudioState { value: g.constant(a)?, stage: 1 };
        match self.module {
            SweepModule::Fusion => {
                let ep = EncoderStageParams::bind(&p, 1)?;
                let dp = DecoderStageParams::bind(&p, 1)?;
                let h = har_step(&mut g, a, v, ep.audio_map, ep.gate_map)?;
                let enhanced = agve_step(&mut g, v, h.state)?;
                let upd = audio_state_update(&mut g, a, h.state, enhanced, &dp)?;
                visual_inject(&mut g, enhanced, upd.a_hat, dp.inject)?;
            }
            SweepModule::Xattn => {
                let ap = AttentionParams::bind(&p)?;
                dense_attention(&mut g, v, a, &ap)?;
            }
        }
        Ok(g.flops().clone())
    }

    /// Sweep point from a counter produced by [`SweepBench::run`].
    pub fn point(&self, side: usize, counter: &FlopCounter, wall_ms: Option<f64>) -> SweepPoint {
        SweepPoint {
            n: (side * side) as u64,
            flops: counter.segment_total(self.module.scaling_scope()).total(),
            total_flops: counter.total().total(),
            wall_ms,
        }
    }
}

/// Grid sides must be strictly increasing and nonzero, with at least two.
pub fn check_grid(grid_sides: &[usize]) -> Result<()> {
    if grid_sides.len() < 2 {
        return Err(contract_err!("a sweep needs at least two grid sizes, got {}", grid_sides.len()));
    }
    if grid_sides[0] == 0 || grid_sides.windows(2).any(|w| w[0] >= w[1]) {
        return Err(contract_err!("grid sizes {:?} must be positive and strictly increasing", grid_sides));
    }
    Ok(())
}

/// Counted FLOPs per grid side and the fitted log-log slope. Wall times are
/// left empty; the std harness fills them.
pub fn scaling_sweep(bench: &SweepBench, grid_sides: &[usize]) -> Result<FlopReport> {
    check_grid(grid_sides)?;
    let points = grid_sides
        .iter()
        .map(|&s| Ok(bench.point(s, &bench.run(s)?, None)))
        .collect::<Result<Vec<_>>>()?;
    Ok(FlopReport::new(bench.module.as_str(), points))
}

/// `4N²d + 4NdC`, the counted multiply-adds of [`dense_attention`].
pub fn xattn_closed_form(n: u64, d: u64, c: u64) -> u64 {
    4 * n * n * d + 4 * n * d * c
}

pub fn module_names() -> Vec<String> {
    [SweepModule::Fusion, SweepModule::Xattn].iter().map(|m| String::from(m.as_str())).collect()
}

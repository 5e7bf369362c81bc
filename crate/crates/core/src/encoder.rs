//! Reciprocal audio-visual encoder.
//!
//! Each stage refines the global audio state under a max-pooled visual gate
//! (hierarchical audio refinement) and adds it back to the visual features as
//! a per-channel bias (audio-guided visual enhancement). The next visual stage
//! consumes the enhanced features.
//!
//! FLOPs that scale with the spatial grid (pooling, broadcast add) are charged
//! to an `interaction` scope; the 1×1 maps on pooled descriptors and audio
//! states are grid-independent and go to `interaction_global`.
use alloc::format;
use alloc::vec::Vec;

use crate::backbone::{project_audio_to_stage, visual_stage, visual_stem, AudioState, FeaturePyramid};
use crate::error::{contract_err, dim_err, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{Bound, ParamStore};
use crate::rng::RngState;

pub const SCOPE_SPATIAL: &str = "interaction";
pub const SCOPE_GLOBAL: &str = "interaction_global";

/// Which encoder interactions are active.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderFlags {
    /// Add the audio state to the visual features.
    pub agve: bool,
    /// Gate the audio state with the pooled visual descriptor. When off the
    /// state is only projected and mapped, i.e. a static audio prior.
    pub har: bool,
}

impl Default for EncoderFlags {
    fn default() -> Self {
        Self { agve: true, har: true }
    }
}

/// `(weight, bias)` nodes for one encoder stage.
#[derive(Clone, Copy, Debug)]
pub struct EncoderStageParams {
    pub project: (NodeId, NodeId),
    pub audio_map: (NodeId, NodeId),
    pub gate_map: (NodeId, NodeId),
}

impl EncoderStageParams {
    pub fn bind(p: &Bound, stage: usize) -> Result<Self> {
        Ok(Self {
            project: p.pair(&format!("encoder/stage{stage}/project"))?,
            audio_map: p.pair(&format!("encoder/stage{stage}/audio_map"))?,
            gate_map: p.pair(&format!("encoder/stage{stage}/gate_map"))?,
        })
    }

    pub fn init(store: &mut ParamStore, stage: usize, c_prev: usize, c: usize, rng: &mut RngState) {
        store.init_linear(&format!("encoder/stage{stage}/project"), c_prev, c, rng);
        store.init_linear(&format!("encoder/stage{stage}/audio_map"), c, c, rng);
        store.init_linear(&format!("encoder/stage{stage}/gate_map"), c, c, rng);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct HarOutput {
    pub state: AudioState,
    /// `σ_h` gate values, `[T, C, 1, 1]`, each in `[0, 1]`.
    pub gate: NodeId,
}

/// `A_i = map(A_{i−1}) ⊙ σ_h(gate_map(maxpool(V_i)))`.
pub fn har_step(
    g: &mut Graph,
    a_prev: AudioState,
    v: NodeId,
    audio_map: (NodeId, NodeId),
    gate_map: (NodeId, NodeId),
) -> Result<HarOutput> {
    let frames = g.shape(v)[0];
    if g.shape(a_prev.value)[0] != frames {
        return Err(contract_err!(
            "har_step: {} audio rows for {} visual frames",
            g.shape(a_prev.value)[0],
            frames
        ));
    }
    let pooled = g.scoped(SCOPE_SPATIAL, |g| g.global_max_pool(v))?;
    g.scoped(SCOPE_GLOBAL, |g| {
        let mapped = g.pointwise_linear(a_prev.value, audio_map.0, audio_map.1)?;
        let pre = g.pointwise_linear(pooled, gate_map.0, gate_map.1)?;
        let gate = g.hsigmoid(pre)?;
        let value = g.mul(mapped, gate)?;
        Ok(HarOutput {
            state: AudioState {
                value,
                stage: a_prev.stage,
            },
            gate,
        })
    })
}

/// `Ṽ_i = V_i + B(A_i)`; no parameters.
pub fn agve_step(g: &mut Graph, v: NodeId, a: AudioState) -> Result<NodeId> {
    let (vc, ac) = (g.shape(v).get(1).copied(), g.shape(a.value).get(1).copied());
    if vc != ac {
        return Err(dim_err!(
            "agve_step: audio {:?} does not match visual {:?}",
            g.shape(a.value),
            g.shape(v)
        ));
    }
    g.scoped(SCOPE_SPATIAL, |g| g.broadcast_add(v, a.value))
}

#[derive(Clone, Debug)]
pub struct EncoderOutput {
    /// Audio-enhanced features `Ṽ_i^enc`, shallowest first.
    pub enhanced: FeaturePyramid,
    /// Backbone features `V_i` before enhancement.
    pub visual: FeaturePyramid,
    /// `A_1..A_N`.
    pub audio_states: Vec<AudioState>,
    /// HAR gates per stage (empty when HAR is off).
    pub gates: Vec<NodeId>,
}

/// Runs the stem and every stage, interleaving HAR and AGVE:
/// `V_i = stage(Ṽ_{i−1})`, `A_i = HAR(project(A_{i−1}), V_i)`, `Ṽ_i = V_i + B(A_i)`.
pub fn encoder_forward(
    g: &mut Graph,
    frames: NodeId,
    a0: AudioState,
    stages: usize,
    flags: EncoderFlags,
    p: &Bound,
) -> Result<EncoderOutput> {
    let mut x = g.scoped("visual", |g| visual_stem(g, frames, p))?;
    let mut a = a0;
    let mut out = EncoderOutput {
        enhanced: FeaturePyramid { stages: Vec::new() },
        visual: FeaturePyramid { stages: Vec::new() },
        audio_states: Vec::new(),
        gates: Vec::new(),
    };
    for i in 1..=stages {
        let v = g.scoped("visual", |g| visual_stage(g, x, i, p))?;
        let sp = EncoderStageParams::bind(p, i)?;
        g.push_scope(&format!("encoder/stage{i}"));
        let step = (|| {
            let projected = g.scoped(SCOPE_GLOBAL, |g| project_audio_to_stage(g, a, sp.project.0, sp.project.1))?;
            let state = if flags.har {
                let h = har_step(g, projected, v, sp.audio_map, sp.gate_map)?;
                out.gates.push(h.gate);
                h.state
            } else {
                let value = g.scoped(SCOPE_GLOBAL, |g| g.pointwise_linear(projected.value, sp.audio_map.0, sp.audio_map.1))?;
                AudioState { value, stage: i }
            };
            let enhanced = if flags.agve { agve_step(g, v, state)? } else { v };
            Ok::<_, crate::Error>((state, enhanced))
        })();
        g.pop_scope();
        let (state, enhanced) = step?;
        out.visual.stages.push(v);
        out.enhanced.stages.push(enhanced);
        out.audio_states.push(state);
        a = state;
        x = enhanced;
    }
    Ok(out)
}

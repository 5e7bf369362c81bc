//! Cross-modal fusion decoder.
//!
//! Walks the pyramid from the deepest stage up. On each of the last `S`
//! stages it updates a recurrent audio state from the previous decoder state
//! and the encoder state of that stage, gates it with the pooled visual
//! descriptor, and injects it into the encoder features as a channel bias.
//! Stages are merged top-down FPN style: the deeper merged map is aligned to
//! the shallower width by a pointwise map, bilinearly upsampled and added.
use alloc::format;
use alloc::vec::Vec;

use crate::backbone::AudioState;
use crate::encoder::{EncoderOutput, SCOPE_GLOBAL, SCOPE_SPATIAL};
use crate::error::{contract_err, dim_err, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{Bound, ParamStore};
use crate::rng::RngState;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecoderFlags {
    /// Audio state path and injection. Off gives a purely visual FPN decode.
    pub cmfd: bool,
    /// Feed the previous decoder state into each update. Off substitutes zeros.
    pub recurrent: bool,
}

impl Default for DecoderFlags {
    fn default() -> Self {
        Self {
            cmfd: true,
            recurrent: true,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct DecoderStageParams {
    pub proj_prev: (NodeId, NodeId),
    pub proj_enc: (NodeId, NodeId),
    pub fuse: (NodeId, NodeId),
    pub gate: (NodeId, NodeId),
    pub inject: (NodeId, NodeId),
}

impl DecoderStageParams {
    pub fn bind(p: &Bound, stage: usize) -> Result<Self> {
        let name = |s: &str| format!("decoder/stage{stage}/{s}");
        Ok(Self {
            proj_prev: p.pair(&name("proj_prev"))?,
            proj_enc: p.pair(&name("proj_enc"))?,
            fuse: p.pair(&name("fuse"))?,
            gate: p.pair(&name("gate"))?,
            inject: p.pair(&name("inject"))?,
        })
    }

    /// `c_prev` is the width of the incoming decoder state, `c` the stage width.
    pub fn init(store: &mut ParamStore, stage: usize, c_prev: usize, c: usize, rng: &mut RngState) {
        let name = |s: &str| format!("decoder/stage{stage}/{s}");
        store.init_linear(&name("proj_prev"), c_prev, c, rng);
        store.init_linear(&name("proj_enc"), c, c, rng);
        store.init_linear(&name("fuse"), 2 * c, c, rng);
        store.init_linear(&name("gate"), c, c, rng);
        store.init_linear(&name("inject"), c, c, rng);
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AudioUpdate {
    /// `Â_i`, nonnegative.
    pub a_hat: AudioState,
    /// `A_i*` before gating.
    pub a_star: NodeId,
    pub gate: NodeId,
}

/// `A* = ReLU(fuse([proj_prev(A_{i−1}), proj_enc(A_i)]))`, then
/// `Â = A* ⊙ σ_h(gate(maxpool(Ṽ_i^enc)))`.
pub fn audio_state_update(
    g: &mut Graph,
    a_prev_dec: AudioState,
    a_enc: AudioState,
    v_enc: NodeId,
    p: &DecoderStageParams,
) -> Result<AudioUpdate> {
    let frames = g.shape(v_enc)[0];
    if g.shape(a_enc.value)[0] != frames || g.shape(a_prev_dec.value)[0] != frames {
        return Err(contract_err!("audio_state_update: audio rows do not match {} frames", frames));
    }
    let pooled = g.scoped(SCOPE_SPATIAL, |g| g.global_max_pool(v_enc))?;
    g.scoped(SCOPE_GLOBAL, |g| {
        let prev = g.pointwise_linear(a_prev_dec.value, p.proj_prev.0, p.proj_prev.1)?;
        let enc = g.pointwise_linear(a_enc.value, p.proj_enc.0, p.proj_enc.1)?;
        let cat = g.concat_channels(prev, enc)?;
        let fused = g.pointwise_linear(cat, p.fuse.0, p.fuse.1)?;
        let a_star = g.relu(fused)?;
        let pre = g.pointwise_linear(pooled, p.gate.0, p.gate.1)?;
        let gate = g.hsigmoid(pre)?;
        let value = g.mul(a_star, gate)?;
        Ok(AudioUpdate {
            a_hat: AudioState {
                value,
                stage: a_enc.stage,
            },
            a_star,
            gate,
        })
    })
}

/// `Ṽ_i^dec = Ṽ_i^enc + B(inject(Â_i))`.
pub fn visual_inject(g: &mut Graph, v_enc: NodeId, a_hat: AudioState, inject: (NodeId, NodeId)) -> Result<NodeId> {
    if g.shape(inject.0)[0] != g.shape(v_enc)[1] {
        return Err(dim_err!(
            "visual_inject: map {:?} does not produce the width of {:?}",
            g.shape(inject.0),
            g.shape(v_enc)
        ));
    }
    let bias = g.scoped(SCOPE_GLOBAL, |g| g.pointwise_linear(a_hat.value, inject.0, inject.1))?;
    g.scoped(SCOPE_SPATIAL, |g| g.broadcast_add(v_enc, bias))
}

pub fn init_topdown(store: &mut ParamStore, stage_channels: &[usize], num_classes: usize, rng: &mut RngState) {
    for i in 1..stage_channels.len() {
        store.init_linear(&format!("decoder/lateral{i}"), stage_channels[i], stage_channels[i - 1], rng);
    }
    store.init_linear("decoder/head", stage_channels[0], num_classes, rng);
}

#[derive(Clone, Debug)]
pub struct SegOutput {
    /// `[B, K, H, W]` at input resolution.
    pub logits: NodeId,
    /// `Ṽ_i^dec` for the supervised stages, deepest first.
    pub per_stage_features: Vec<NodeId>,
    /// Audio paired with each entry of `per_stage_features` (`Â_i`, or the
    /// encoder state when the decoder audio path is off).
    pub per_stage_audio: Vec<NodeId>,
    /// Pyramid stage index of each supervised entry.
    pub stage_index: Vec<usize>,
}

/// Decodes the encoder pyramid into logits of size `out_hw`, supervising the
/// deepest `supervised` stages with the audio path. The recurrence starts
/// from the deepest encoder state `A_N`.
pub fn decoder_forward(
    g: &mut Graph,
    enc: &EncoderOutput,
    out_hw: (usize, usize),
    supervised: usize,
    flags: DecoderFlags,
    p: &Bound,
) -> Result<SegOutput> {
    let n = enc.enhanced.stages.len();
    if supervised == 0 || supervised > n || enc.audio_states.len() != n {
        return Err(contract_err!("decoder needs 1..={} supervised stages and one audio state per stage", n));
    }
    let mut a_prev = enc.audio_states[n - 1];
    let mut merged: Option<NodeId> = None;
    let mut out = SegOutput {
        logits: merged.unwrap_or(enc.enhanced.stages[0]),
        per_stage_features: Vec::new(),
        per_stage_audio: Vec::new(),
        stage_index: Vec::new(),
    };
    for i in (1..=n).rev() {
        let v_enc = enc.enhanced.stages[i - 1];
        let v_dec = if i + supervised > n {
            let a_enc = enc.audio_states[i - 1];
            if flags.cmfd {
                let sp = DecoderStageParams::bind(p, i)?;
                g.push_scope(&format!("decoder/stage{i}"));
                let step = (|| {
                    let prev = if flags.recurrent {
                        a_prev
                    } else {
                        let zeros = Tensor::zeros(g.shape(a_prev.value));
                        AudioState { value: g.constant(zeros)?, stage: a_prev.stage }
                    };
                    let up = audio_state_update(g, prev, a_enc, v_enc, &sp)?;
                    let v = visual_inject(g, v_enc, up.a_hat, sp.inject)?;
                    Ok::<_, crate::Error>((up, v))
                })();
                g.pop_scope();
                let (up, v) = step?;
                a_prev = up.a_hat;
                out.per_stage_audio.push(up.a_hat.value);
                v
            } else {
                out.per_stage_audio.push(a_enc.value);
                v_enc
            }
        } else {
            v_enc
        };
        if i + supervised > n {
            out.per_stage_features.push(v_dec);
            out.stage_index.push(i);
        }
        merged = Some(match merged {
            None => v_dec,
            Some(deeper) => g.scoped("decoder/topdown", |g| {
                let (lw, lb) = p.pair(&format!("decoder/lateral{i}"))?;
                let aligned = g.pointwise_linear(deeper, lw, lb)?;
                let [_, _, h, w] = g.value(v_dec).dims4()?;
                let up = g.bilinear_upsample(aligned, h, w)?;
                g.add(v_dec, up)
            })?,
        });
    }
    let top = merged.expect("at least one stage");
    out.logits = g.scoped("decoder/head", |g| {
        let (hw, hb) = p.pair("decoder/head")?;
        let y = g.pointwise_linear(top, hw, hb)?;
        g.bilinear_upsample(y, out_hw.0, out_hw.1)
    })?;
    Ok(out)
}

//! Toy visual and audio backbones.
//!
//! The visual side is a stride-2 stem followed by `N` stages, each a stride-2
//! 3×3 convolution, ReLU and a pointwise mixing map, so stage `i` sits at
//! stride `2^{i+1}`. The audio side mean-pools each 96×64 log-mel window over
//! time and applies a two-layer channel map, giving one `C_a`-wide state row
//! per visual frame.
use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::audio::{Spectrogram, FRAMES_PER_WINDOW, MEL_BINS};
use crate::error::{contract_err, dim_err, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{Bound, ParamStore};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Multiplier applied to log-mel values before the audio embedding, bringing
/// `ln` energies (floor ≈ −23) to order one.
pub const AUDIO_INPUT_SCALE: f64 = 0.1;

/// Prefix shared by every audio-backbone parameter.
pub const AUDIO_PREFIX: &str = "audio/";

#[derive(Clone, Debug, PartialEq)]
pub struct BackboneConfig {
    pub stage_channels: Vec<usize>,
    pub audio_channels: usize,
    pub audio_hidden: usize,
    pub input_hw: usize,
}

impl Default for BackboneConfig {
    fn default() -> Self {
        Self {
            stage_channels: vec![16, 32, 64, 128],
            audio_channels: 128,
            audio_hidden: 128,
            input_hw: 224,
        }
    }
}

impl BackboneConfig {
    pub fn stages(&self) -> usize {
        self.stage_channels.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.stage_channels.is_empty() || self.stage_channels.contains(&0) {
            return Err(contract_err!("stage_channels must be non-empty and positive"));
        }
        if self.stage_channels.windows(2).any(|w| w[1] < w[0]) {
            return Err(contract_err!("stage_channels must be non-decreasing: {:?}", self.stage_channels));
        }
        if self.audio_channels == 0 || self.audio_hidden == 0 || self.input_hw == 0 {
            return Err(contract_err!("audio widths and input size must be positive"));
        }
        Ok(())
    }

    /// Spatial extent of stage `i` (1-based) for an input of `hw`: `ceil(hw / 2^{i+1})`.
    pub fn stage_extent(hw: usize, i: usize) -> usize {
        hw.div_ceil(1 << (i + 1))
    }

    pub fn init_params(&self, store: &mut ParamStore, rng: &mut RngState) {
        let c = &self.stage_channels;
        store.init_conv("visual/stem", 3, c[0], 3, rng);
        let mut prev = c[0];
        for (i, &ci) in c.iter().enumerate() {
            store.init_conv(&format!("visual/stage{}/conv", i + 1), prev, ci, 3, rng);
            store.init_linear(&format!("visual/stage{}/mix", i + 1), ci, ci, rng);
            prev = ci;
        }
        store.init_linear("audio/fc1", MEL_BINS, self.audio_hidden, rng);
        store.init_linear("audio/fc2", self.audio_hidden, self.audio_channels, rng);
    }
}

/// Visual feature maps, shallowest first. Stage `i` (1-based) has stride `2^{i+1}`.
#[derive(Clone, Debug)]
pub struct FeaturePyramid {
    pub stages: Vec<NodeId>,
}

impl FeaturePyramid {
    pub fn strides(&self) -> Vec<usize> {
        (1..=self.stages.len()).map(|i| 1 << (i + 1)).collect()
    }
}

/// Global per-frame audio embedding, `[T, C, 1, 1]`.
#[derive(Clone, Copy, Debug)]
pub struct AudioState {
    pub value: NodeId,
    pub stage: usize,
}

/// Stride-2 3×3 stem, halving the input once before the first stage.
pub fn visual_stem(g: &mut Graph, frames: NodeId, p: &Bound) -> Result<NodeId> {
    let (w, b) = p.pair("visual/stem")?;
    let y = g.conv2d(frames, w, b, 2, 1)?;
    g.relu(y)
}

/// One visual stage: stride-2 conv, ReLU, pointwise mix. Halves `H` and `W`
/// (rounding up) and maps to the stage width.
pub fn visual_stage(g: &mut Graph, x: NodeId, stage: usize, p: &Bound) -> Result<NodeId> {
    let (cw, cb) = p.pair(&format!("visual/stage{stage}/conv"))?;
    let expect = g.shape(cw)[1];
    if g.shape(x).get(1) != Some(&expect) {
        return Err(dim_err!(
            "visual_stage {}: input {:?} but stage expects {} channels",
            stage,
            g.shape(x),
            expect
        ));
    }
    let y = g.conv2d(x, cw, cb, 2, 1)?;
    let y = g.relu(y)?;
    let (mw, mb) = p.pair(&format!("visual/stage{stage}/mix"))?;
    g.pointwise_linear(y, mw, mb)
}

/// Plain backbone pyramid with no audio interaction.
pub fn visual_pyramid(g: &mut Graph, frames: NodeId, stages: usize, p: &Bound) -> Result<FeaturePyramid> {
    let mut x = visual_stem(g, frames, p)?;
    let mut out = Vec::with_capacity(stages);
    for i in 1..=stages {
        x = visual_stage(g, x, i, p)?;
        out.push(x);
    }
    Ok(FeaturePyramid { stages: out })
}

/// Rearranges `[T, 96, 64]` log-mel windows to `[T, 64, 96, 1]` so the mel
/// axis becomes the channel axis, scaled by [`AUDIO_INPUT_SCALE`].
pub fn spectrogram_input(s: &Spectrogram) -> Result<Tensor> {
    let src = s.windows();
    let t = s.num_windows();
    let mut data = vec![0.0; src.numel()];
    for w in 0..t {
        for f in 0..FRAMES_PER_WINDOW {
            for m in 0..MEL_BINS {
                data[(w * MEL_BINS + m) * FRAMES_PER_WINDOW + f] =
                    AUDIO_INPUT_SCALE * src.data()[(w * FRAMES_PER_WINDOW + f) * MEL_BINS + m];
            }
        }
    }
    Tensor::new(vec![t, MEL_BINS, FRAMES_PER_WINDOW, 1], data)
}

/// Initial audio state `A_0`: time-averaged mel profile through two channel
/// maps with a ReLU between, `[T, C_a, 1, 1]`.
pub fn audio_embed(g: &mut Graph, mel: NodeId, p: &Bound) -> Result<AudioState> {
    let pooled = g.global_avg_pool(mel)?;
    let (w1, b1) = p.pair("audio/fc1")?;
    let h = g.pointwise_linear(pooled, w1, b1)?;
    let h = g.relu(h)?;
    let (w2, b2) = p.pair("audio/fc2")?;
    let value = g.pointwise_linear(h, w2, b2)?;
    Ok(AudioState { value, stage: 0 })
}

/// Channel projection of an audio state to the width of the next stage.
pub fn project_audio_to_stage(g: &mut Graph, a: AudioState, weight: NodeId, bias: NodeId) -> Result<AudioState> {
    let value = g.pointwise_linear(a.value, weight, bias)?;
    Ok(AudioState {
        value,
        stage: a.stage + 1,
    })
}

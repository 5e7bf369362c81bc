//! Full network: backbones, reciprocal encoder, fusion decoder.
use alloc::vec::Vec;

use crate::audio::Spectrogram;
use crate::backbone::{audio_embed, spectrogram_input, AudioState, BackboneConfig, AUDIO_PREFIX};
use crate::decoder::{decoder_forward, init_topdown, DecoderFlags, DecoderStageParams, SegOutput};
use crate::encoder::{encoder_forward, EncoderFlags, EncoderOutput, EncoderStageParams};
use crate::error::{contract_err, dim_err, Result};
use crate::graph::{Graph, NodeId};
use crate::params::{Bound, ParamStore};
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Component toggles for ablations. Everything on is the full model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ablation {
    pub agve: bool,
    pub har: bool,
    pub cmfd: bool,
    pub recurrent: bool,
}

impl Default for Ablation {
    fn default() -> Self {
        Self {
            agve: true,
            har: true,
            cmfd: true,
            recurrent: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub backbone: BackboneConfig,
    /// `1` for binary masks, otherwise the number of semantic classes.
    pub num_classes: usize,
    /// Deepest stages carrying the decoder audio path and alignment loss.
    pub supervised_stages: usize,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: BackboneConfig::default(),
            num_classes: 1,
            supervised_stages: 3,
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        self.backbone.validate()?;
        if self.num_classes == 0 {
            return Err(contract_err!("num_classes must be positive"));
        }
        if self.supervised_stages == 0 || self.supervised_stages > self.backbone.stages() {
            return Err(contract_err!(
                "supervised_stages {} must lie in 1..={}",
                self.supervised_stages,
                self.backbone.stages()
            ));
        }
        Ok(())
    }

    /// Fresh parameters: Glorot-uniform weights, zero biases.
    pub fn init_params(&self, seed: u64) -> Result<ParamStore> {
        self.validate()?;
        let mut rng = RngState::new(seed);
        let mut store = ParamStore::new();
        let b = &self.backbone;
        b.init_params(&mut store, &mut rng);
        let c = &b.stage_channels;
        let n = c.len();
        let mut prev = b.audio_channels;
        for (i, &ci) in c.iter().enumerate() {
            EncoderStageParams::init(&mut store, i + 1, prev, ci, &mut rng);
            prev = ci;
        }
        let mut prev = c[n - 1];
        for i in (n + 1 - self.supervised_stages..=n).rev() {
            DecoderStageParams::init(&mut store, i, prev, c[i - 1], &mut rng);
            prev = c[i - 1];
        }
        init_topdown(&mut store, c, self.num_classes, &mut rng);
        Ok(store)
    }

    /// Checks that `params` has exactly the names and shapes this config builds.
    pub fn check_params(&self, params: &ParamStore) -> Result<()> {
        let expect = self.init_params(0)?;
        for (name, t) in expect.iter() {
            let got = params
                .get(name)
                .map_err(|_| contract_err!("checkpoint is missing parameter `{}` required by the config", name))?;
            if got.shape() != t.shape() {
                return Err(dim_err!(
                    "parameter `{}` has shape {:?} but the config needs {:?}",
                    name,
                    got.shape(),
                    t.shape()
                ));
            }
        }
        if params.len() != expect.len() {
            let extra = params.iter().find(|(n, _)| expect.get(n).is_err()).map(|(n, _)| n).unwrap_or("?");
            return Err(contract_err!("checkpoint has parameter `{}` unknown to the config", extra));
        }
        Ok(())
    }
}

/// Whether `name` belongs to the audio backbone.
pub fn is_audio_backbone(name: &str) -> bool {
    name.starts_with(AUDIO_PREFIX)
}

/// One batch of frames with their aligned audio windows.
#[derive(Clone, Debug, PartialEq)]
pub struct Batch {
    /// `[B, 3, H, W]` in `[0, 1]`.
    pub frames: Tensor,
    /// `[B, 64, 96, 1]` model-ready audio (see [`spectrogram_input`]).
    pub audio: Tensor,
    /// `[B, K, H, W]` masks.
    pub masks: Tensor,
}

impl Batch {
    pub fn new(frames: Tensor, spec: &Spectrogram, masks: Tensor) -> Result<Self> {
        let audio = spectrogram_input(spec)?;
        let b = frames.dims4()?[0];
        if audio.shape()[0] != b || masks.dims4()?[0] != b {
            return Err(contract_err!(
                "batch misaligned: {} frames, {} audio windows, {} masks",
                b,
                audio.shape()[0],
                masks.shape()[0]
            ));
        }
        Ok(Self { frames, audio, masks })
    }

    pub fn len(&self) -> usize {
        self.frames.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn concat(parts: &[&Batch]) -> Result<Self> {
        let f: Vec<&Tensor> = parts.iter().map(|b| &b.frames).collect();
        let a: Vec<&Tensor> = parts.iter().map(|b| &b.audio).collect();
        let m: Vec<&Tensor> = parts.iter().map(|b| &b.masks).collect();
        Ok(Self {
            frames: Tensor::concat_batch(&f)?,
            audio: Tensor::concat_batch(&a)?,
            masks: Tensor::concat_batch(&m)?,
        })
    }
}

#[derive(Clone, Debug)]
pub struct ModelOutput {
    pub a0: AudioState,
    pub encoder: EncoderOutput,
    pub seg: SegOutput,
}

/// Forward pass on graph `g`. With `mute_audio` the initial audio state is
/// replaced by zeros.
pub fn forward(
    g: &mut Graph,
    cfg: &ModelConfig,
    p: &Bound,
    frames: NodeId,
    audio: NodeId,
    mute_audio: bool,
) -> Result<ModelOutput> {
    let [_, _, h, w] = g.value(frames).dims4()?;
    let mut a0 = g.scoped("audio", |g| audio_embed(g, audio, p))?;
    if mute_audio {
        let zeros = Tensor::zeros(g.shape(a0.value));
        a0.value = g.constant(zeros)?;
    }
    let ab = cfg.ablation;
    let encoder = encoder_forward(
        g,
        frames,
        a0,
        cfg.backbone.stages(),
        EncoderFlags { agve: ab.agve, har: ab.har },
        p,
    )?;
    let seg = decoder_forward(
        g,
        &encoder,
        (h, w),
        cfg.supervised_stages,
        DecoderFlags { cmfd: ab.cmfd, recurrent: ab.recurrent },
        p,
    )?;
    Ok(ModelOutput { a0, encoder, seg })
}

/// Convenience: binds `params` as constants and runs a forward pass.
pub fn infer(cfg: &ModelConfig, params: &ParamStore, batch: &Batch, mute_audio: bool) -> Result<(Graph, ModelOutput)> {
    let mut g = Graph::new();
    let p = params.bind(&mut g, |_| false)?;
    let frames = g.constant(batch.frames.clone())?;
    let audio = g.constant(batch.audio.clone())?;
    let out = forward(&mut g, cfg, &p, frames, audio, mute_audio)?;
    Ok((g, out))
}

//! Training loop and evaluation.
use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{contract_err, Result};
use crate::graph::Graph;
use crate::loss::{model_loss, LossReport, LossVariant, DEFAULT_LAMBDA, DEFAULT_TAU};
use crate::metrics::{binarize_logits, fscore_per_frame, iou_per_frame, semantic_argmax};
use crate::model::{forward, infer, is_audio_backbone, Batch, ModelConfig};
use crate::optim::AdamW;
use crate::params::ParamStore;
use crate::rng::RngState;
use crate::tensor::Tensor;

/// Stream of the parameter initialisation within the run seed.
const INIT_STREAM: u64 = 1;
/// Base stream for the per-epoch data order.
const ORDER_STREAM: u64 = 1 << 32;

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub lambda: f64,
    pub tau: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub freeze_audio_backbone: bool,
    pub loss_variant: LossVariant,
    /// Log every this many steps (0 disables).
    pub log_every: u64,
    /// Checkpoint every this many steps (0: only at the end).
    pub ckpt_every: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            batch_size: 8,
            steps: 1000,
            lambda: DEFAULT_LAMBDA,
            tau: DEFAULT_TAU,
            weight_decay: 1e-2,
            seed: 0,
            freeze_audio_backbone: true,
            loss_variant: LossVariant::SegMsa,
            log_every: 1,
            ckpt_every: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) {
            return Err(contract_err!("lr must be positive, got {}", self.lr));
        }
        if !(self.lambda >= 0.0) || !(self.tau > 0.0) || !(self.weight_decay >= 0.0) {
            return Err(contract_err!(
                "need lambda >= 0, tau > 0 and weight_decay >= 0 (got {}, {}, {})",
                self.lambda,
                self.tau,
                self.weight_decay
            ));
        }
        if self.batch_size == 0 {
            return Err(contract_err!("batch_size must be positive"));
        }
        Ok(())
    }
}

/// Full training state: everything a checkpoint has to carry.
#[derive(Clone, Debug)]
pub struct Trainer {
    pub model: ModelConfig,
    pub config: TrainConfig,
    pub params: ParamStore,
    pub optim: AdamW,
    pub step: u64,
    /// Spare stream for stochastic extensions; saved with checkpoints.
    pub rng: RngState,
}

impl Trainer {
    pub fn new(model: ModelConfig, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let params = model.init_params(RngState::new(config.seed).fork(INIT_STREAM).next_u64())?;
        let optim = AdamW::new(config.lr, config.weight_decay)?;
        let rng = RngState::new(config.seed).fork(2);
        Ok(Self { model, config, params, optim, step: 0, rng })
    }

    pub fn is_trainable(&self, name: &str) -> bool {
        !(self.config.freeze_audio_backbone && is_audio_backbone(name))
    }

    /// Scene indices for `step`: consecutive slices of per-epoch permutations.
    pub fn batch_indices(&self, step: u64, n_scenes: usize) -> Vec<usize> {
        let b = self.config.batch_size;
        let mut out = Vec::with_capacity(b);
        let mut pos = step as usize * b;
        let mut cached: Option<(usize, Vec<usize>)> = None;
        while out.len() < b {
            let (epoch, k) = (pos / n_scenes, pos % n_scenes);
            if cached.as_ref().map(|c| c.0) != Some(epoch) {
                cached = Some((epoch, epoch_order(self.config.seed, epoch, n_scenes)));
            }
            out.push(cached.as_ref().map(|c| c.1[k]).unwrap_or(0));
            pos += 1;
        }
        out
    }

    /// Forward, loss, backward and one optimizer update on `batch`.
    pub fn train_step(&mut self, batch: &Batch) -> Result<LossReport> {
        let mut g = Graph::new();
        let trainable: Vec<String> = self.params.iter().map(|(n, _)| String::from(n)).filter(|n| self.is_trainable(n)).collect();
        let bound = self.params.bind(&mut g, |n| trainable.iter().any(|t| t == n))?;
        let frames = g.constant(batch.frames.clone())?;
        let audio = g.constant(batch.audio.clone())?;
        let out = forward(&mut g, &self.model, &bound, frames, audio, false)?;
        let c = &self.config;
        let loss = model_loss(&mut g, &out, &batch.masks, c.lambda, c.tau, c.loss_variant)?;
        let report = loss.report(&g);
        g.backward(loss.total)?;
        let mut grads = BTreeMap::new();
        for name in &trainable {
            let id = bound.get(name)?;
            let grad = g.grad(id).unwrap_or_else(|| Tensor::zeros(g.shape(id)));
            grads.insert(name.clone(), grad);
        }
        self.optim.step(&mut self.params, &grads)?;
        self.step += 1;
        Ok(report)
    }

    /// Trains until `config.steps`, calling `on_step` after each update with
    /// the report of that step.
    pub fn run(
        &mut self,
        data: &[Batch],
        mut on_step: impl FnMut(&Trainer, &LossReport) -> Result<()>,
    ) -> Result<()> {
        if data.is_empty() {
            return Err(contract_err!("training dataset is empty"));
        }
        while self.step < self.config.steps {
            let idx = self.batch_indices(self.step, data.len());
            let parts: Vec<&Batch> = idx.iter().map(|&i| &data[i]).collect();
            let batch = Batch::concat(&parts)?;
            let report = self.train_step(&batch)?;
            on_step(self, &report)?;
        }
        Ok(())
    }
}

fn epoch_order(seed: u64, epoch: usize, n: usize) -> Vec<usize> {
    let mut rng = RngState::new(seed).fork(ORDER_STREAM + epoch as u64);
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        let j = rng.below(i as u64 + 1) as usize;
        order.swap(i, j);
    }
    order
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneScore {
    pub miou: f64,
    pub fscore: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub miou: f64,
    pub fscore: f64,
    pub per_scene: Vec<SceneScore>,
}

/// Predicted masks of one scene: `[T, 1, H, W]` 0/1 for a binary head, class
/// indices (0 = background) for a semantic head.
pub fn predict(cfg: &ModelConfig, params: &ParamStore, scene: &Batch, mute_audio: bool) -> Result<Tensor> {
    let (g, out) = infer(cfg, params, scene, mute_audio)?;
    let logits = g.value(out.seg.logits);
    if cfg.num_classes == 1 { Ok(binarize_logits(logits)) } else { semantic_argmax(logits) }
}

/// Frame-averaged scores of one scene. Semantic heads are scored per class,
/// skipping classes absent from both prediction and ground truth.
pub fn score_scene(pred: &Tensor, masks: &Tensor) -> Result<SceneScore> {
    let [t, k, h, w] = masks.dims4()?;
    if k == 1 {
        let ious = iou_per_frame(pred, masks)?;
        let fs = fscore_per_frame(pred, masks)?;
        return Ok(SceneScore { miou: mean(&ious), fscore: mean(&fs) });
    }
    let (mut ious, mut fs) = (Vec::new(), Vec::new());
    let hw = h * w;
    for c in 0..k {
        let p = Tensor::from_fn(&[t, 1, h, w], |i| (pred.data()[i] as usize == c + 1) as u8 as f64);
        let gt = Tensor::from_fn(&[t, 1, h, w], |i| masks.data()[(i / hw * k + c) * hw + i % hw]);
        let present = iou_per_frame(&p, &gt)?;
        let f = fscore_per_frame(&p, &gt)?;
        for fi in 0..t {
            let any = p.data()[fi * hw..(fi + 1) * hw].iter().chain(&gt.data()[fi * hw..(fi + 1) * hw]).any(|&v| v > 0.0);
            if any {
                ious.push(present[fi]);
                fs.push(f[fi]);
            }
        }
    }
    if ious.is_empty() {
        return Ok(SceneScore { miou: 1.0, fscore: 1.0 });
    }
    Ok(SceneScore { miou: mean(&ious), fscore: mean(&fs) })
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Scene-averaged metrics.
pub fn summarize(per_scene: Vec<SceneScore>) -> EvalReport {
    let n = per_scene.len().max(1) as f64;
    EvalReport {
        miou: per_scene.iter().map(|s| s.miou).sum::<f64>() / n,
        fscore: per_scene.iter().map(|s| s.fscore).sum::<f64>() / n,
        per_scene,
    }
}

/// Sequential evaluation over `scenes`.
pub fn evaluate(cfg: &ModelConfig, params: &ParamStore, scenes: &[Batch], mute_audio: bool) -> Result<EvalReport> {
    cfg.check_params(params)?;
    if scenes.is_empty() {
        return Err(contract_err!("evaluation dataset is empty"));
    }
    let per = scenes
        .iter()
        .map(|s| score_scene(&predict(cfg, params, s, mute_audio)?, &s.masks))
        .collect::<Result<Vec<_>>>()?;
    Ok(summarize(per))
}

//! Segmentation and alignment objectives.
use alloc::vec::Vec;

use crate::error::{contract_err, Result};
use crate::graph::{Graph, NodeId};
use crate::model::ModelOutput;
use crate::tensor::Tensor;

/// `ε` in the ℓ₂ normalisation of alignment features.
pub const L2_EPS: f64 = 1e-6;
pub const DEFAULT_LAMBDA: f64 = 0.5;
pub const DEFAULT_TAU: f64 = 0.1;

/// Auxiliary objective added to the segmentation loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum LossVariant {
    /// Dice + BCE only.
    Seg,
    /// Plus the multi-scale alignment BCE.
    SegMsa,
    /// Plus a spatial KL between the alignment maps and the mask.
    SegAvm,
}

impl LossVariant {
    pub fn as_str(self) -> &'static str {
        match self {
            LossVariant::Seg => "seg",
            LossVariant::SegMsa => "seg+msa",
            LossVariant::SegAvm => "seg+avm",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "seg" => Ok(LossVariant::Seg),
            "seg+msa" => Ok(LossVariant::SegMsa),
            "seg+avm" => Ok(LossVariant::SegAvm),
            other => Err(contract_err!("unknown loss variant `{}` (seg, seg+msa, seg+avm)", other)),
        }
    }
}

/// `M = 1(Σ_k Y_k > 0)`, `[B, 1, H, W]`. Fails on non-binary input.
pub fn foreground_mask(y: &Tensor) -> Result<Tensor> {
    let [b, k, h, w] = y.dims4()?;
    if let Some(v) = y.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
        return Err(contract_err!("mask value {} is not binary", v));
    }
    let hw = h * w;
    Tensor::new(
        alloc::vec![b, 1, h, w],
        (0..b * hw)
            .map(|i| {
                let (bi, p) = (i / hw, i % hw);
                let any = (0..k).any(|c| y.data()[(bi * k + c) * hw + p] > 0.0);
                if any { 1.0 } else { 0.0 }
            })
            .collect(),
    )
}

#[derive(Clone, Debug)]
pub struct AlignmentMaps {
    /// Cosine similarity maps, `[B, 1, H_i, W_i]`.
    pub sim: Vec<NodeId>,
    /// `sigmoid(sim / τ)` at native resolution.
    pub s: Vec<NodeId>,
    /// `s` bilinearly resized to the mask resolution.
    pub s_up: Vec<NodeId>,
}

/// Per-scale alignment scores between decoder features and the paired audio.
pub fn alignment_maps(
    g: &mut Graph,
    features: &[NodeId],
    audio: &[NodeId],
    tau: f64,
    height: usize,
    width: usize,
) -> Result<AlignmentMaps> {
    if !(tau > 0.0) {
        return Err(contract_err!("temperature must be positive, got {}", tau));
    }
    if features.len() != audio.len() || features.is_empty() {
        return Err(contract_err!("{} feature maps for {} audio states", features.len(), audio.len()));
    }
    let mut maps = AlignmentMaps { sim: Vec::new(), s: Vec::new(), s_up: Vec::new() };
    g.scoped("alignment", |g| {
        for (&v, &a) in features.iter().zip(audio) {
            let vn = g.l2_normalize(v, 1, L2_EPS)?;
            let an = g.l2_normalize(a, 1, L2_EPS)?;
            let sim = g.channel_dot(vn, an)?;
            let sharp = g.scale(sim, 1.0 / tau)?;
            let s = g.sigmoid(sharp)?;
            let s_up = g.bilinear_upsample(s, height, width)?;
            maps.sim.push(sim);
            maps.s.push(s);
            maps.s_up.push(s_up);
        }
        Ok::<_, crate::Error>(())
    })?;
    Ok(maps)
}

/// `(1/S) Σ_i BCE(ŝ_i, M)` plus the per-scale terms.
pub fn msa_loss(g: &mut Graph, maps: &AlignmentMaps, m: &Tensor) -> Result<(NodeId, Vec<NodeId>)> {
    let per: Vec<NodeId> = maps
        .s_up
        .iter()
        .map(|&s| g.bce_prob(s, m))
        .collect::<Result<_>>()?;
    Ok((g.mean_of(&per)?, per))
}

/// Mean over scales of `KL(M / ΣM ‖ softmax(ŝ_i))`.
pub fn avm_loss(g: &mut Graph, maps: &AlignmentMaps, m: &Tensor) -> Result<NodeId> {
    let per: Vec<NodeId> = maps
        .s_up
        .iter()
        .map(|&s| g.spatial_kl(s, m))
        .collect::<Result<_>>()?;
    g.mean_of(&per)
}

/// Values of one loss evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct LossReport {
    pub dice: f64,
    /// Binary cross-entropy, or softmax cross-entropy for semantic heads.
    pub bce: f64,
    pub msa: f64,
    pub avm: Option<f64>,
    /// Weight actually applied to the auxiliary term (zero for `seg`).
    pub lambda: f64,
    pub total: f64,
    pub per_scale_msa: Vec<f64>,
}

impl LossReport {
    /// The auxiliary value multiplied by `lambda` in `total`.
    pub fn aux(&self) -> f64 {
        self.avm.unwrap_or(self.msa)
    }
}

#[derive(Clone, Debug)]
pub struct LossNodes {
    pub dice: NodeId,
    pub bce: NodeId,
    pub msa: NodeId,
    pub avm: Option<NodeId>,
    pub total: NodeId,
    pub per_scale_msa: Vec<NodeId>,
    pub maps: AlignmentMaps,
    pub lambda: f64,
}

impl LossNodes {
    pub fn report(&self, g: &Graph) -> LossReport {
        let v = |id: NodeId| g.value(id).data()[0];
        LossReport {
            dice: v(self.dice),
            bce: v(self.bce),
            msa: v(self.msa),
            avm: self.avm.map(v),
            lambda: self.lambda,
            total: v(self.total),
            per_scale_msa: self.per_scale_msa.iter().map(|&i| v(i)).collect(),
        }
    }
}

/// Segmentation loss: Dice + BCE on a binary head, per-class Dice + softmax
/// cross-entropy (zero background logit) on a semantic head.
pub fn seg_loss(g: &mut Graph, logits: NodeId, y: &Tensor) -> Result<(NodeId, NodeId)> {
    let dice = g.dice_loss(logits, y)?;
    let ce = if g.shape(logits)[1] == 1 { g.bce_with_logits(logits, y)? } else { g.softmax_ce(logits, y)? };
    Ok((dice, ce))
}

/// `L = L_seg + λ·L_aux` from raw pieces.
#[allow(clippy::too_many_arguments)]
pub fn total_loss(
    g: &mut Graph,
    logits: NodeId,
    features: &[NodeId],
    audio: &[NodeId],
    y: &Tensor,
    lambda: f64,
    tau: f64,
    variant: LossVariant,
) -> Result<LossNodes> {
    if !(lambda >= 0.0) {
        return Err(contract_err!("balance weight must be nonnegative, got {}", lambda));
    }
    let [_, _, h, w] = y.dims4()?;
    let m = foreground_mask(y)?;
    g.push_scope("loss");
    let built = (|| {
        let (dice, bce) = seg_loss(g, logits, y)?;
        let maps = alignment_maps(g, features, audio, tau, h, w)?;
        let (msa, per_scale_msa) = msa_loss(g, &maps, &m)?;
        let avm = match variant {
            LossVariant::SegAvm => Some(avm_loss(g, &maps, &m)?),
            _ => None,
        };
        let lambda_eff = if variant == LossVariant::Seg { 0.0 } else { lambda };
        let seg = g.add(dice, bce)?;
        let weighted = g.scale(avm.unwrap_or(msa), lambda_eff)?;
        let total = g.add(seg, weighted)?;
        Ok(LossNodes { dice, bce, msa, avm, total, per_scale_msa, maps, lambda: lambda_eff })
    })();
    g.pop_scope();
    built
}

/// [`total_loss`] on a model output.
pub fn model_loss(
    g: &mut Graph,
    out: &ModelOutput,
    y: &Tensor,
    lambda: f64,
    tau: f64,
    variant: LossVariant,
) -> Result<LossNodes> {
    total_loss(
        g,
        out.seg.logits,
        &out.seg.per_stage_features,
        &out.seg.per_stage_audio,
        y,
        lambda,
        tau,
        variant,
    )
}

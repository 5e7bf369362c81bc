//! Region metrics on binary masks: Jaccard (IoU) and F_β with β² = 0.3.
use alloc::vec::Vec;

use crate::error::{dim_err, Result};
use crate::graph::nn_sigmoid;
use crate::tensor::Tensor;

pub const F_BETA_SQ: f64 = 0.3;
pub const THRESHOLD: f64 = 0.5;

/// `sigmoid(logits) > 0.5` as a 0/1 tensor.
pub fn binarize_logits(logits: &Tensor) -> Tensor {
    logits.map(|l| if nn_sigmoid(l) > THRESHOLD { 1.0 } else { 0.0 })
}

/// Class index per pixel for a semantic head (`0` = background), `[B,1,H,W]`.
pub fn semantic_argmax(logits: &Tensor) -> Result<Tensor> {
    let [b, k, h, w] = logits.dims4()?;
    let hw = h * w;
    let d = logits.data();
    let out = (0..b * hw)
        .map(|i| {
            let (bi, p) = (i / hw, i % hw);
            let (mut best, mut arg) = (0.0, 0usize);
            for c in 0..k {
                let v = d[(bi * k + c) * hw + p];
                if v > best {
                    best = v;
                    arg = c + 1;
                }
            }
            arg as f64
        })
        .collect();
    Tensor::new(alloc::vec![b, 1, h, w], out)
}

fn frame_counts(pred: &Tensor, gt: &Tensor) -> Result<Vec<(usize, usize, usize)>> {
    if pred.shape() != gt.shape() {
        return Err(dim_err!("prediction {:?} vs ground truth {:?}", pred.shape(), gt.shape()));
    }
    let frames = pred.shape()[0];
    let per = pred.numel() / frames;
    Ok(pred
        .data()
        .chunks_exact(per)
        .zip(gt.data().chunks_exact(per))
        .map(|(p, g)| {
            let mut inter = 0;
            let mut np = 0;
            let mut ng = 0;
            for (&a, &b) in p.iter().zip(g) {
                let (a, b) = (a > 0.5, b > 0.5);
                inter += (a && b) as usize;
                np += a as usize;
                ng += b as usize;
            }
            (inter, np, ng)
        })
        .collect())
}

/// Per-frame IoU; a frame where both masks are empty scores 1.
pub fn iou_per_frame(pred: &Tensor, gt: &Tensor) -> Result<Vec<f64>> {
    Ok(frame_counts(pred, gt)?
        .into_iter()
        .map(|(i, p, g)| {
            let union = p + g - i;
            if union == 0 { 1.0 } else { i as f64 / union as f64 }
        })
        .collect())
}

/// Per-frame `(1+β²)·P·R / (β²·P + R)`. Both masks empty scores 1; an empty
/// prediction or ground truth against a nonempty one scores 0.
pub fn fscore_per_frame(pred: &Tensor, gt: &Tensor) -> Result<Vec<f64>> {
    Ok(frame_counts(pred, gt)?
        .into_iter()
        .map(|(i, p, g)| {
            if p == 0 && g == 0 {
                return 1.0;
            }
            if i == 0 {
                return 0.0;
            }
            let prec = i as f64 / p as f64;
            let rec = i as f64 / g as f64;
            (1.0 + F_BETA_SQ) * prec * rec / (F_BETA_SQ * prec + rec)
        })
        .collect())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Mean Jaccard index over frames.
pub fn miou(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    Ok(mean(&iou_per_frame(pred, gt)?))
}

/// Mean F_β over frames.
pub fn fscore(pred: &Tensor, gt: &Tensor) -> Result<f64> {
    Ok(mean(&fscore_per_frame(pred, gt)?))
}

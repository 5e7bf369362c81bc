mod common;

use common::{random_mask, t};
use lightavseg_core::metrics::*;
use lightavseg_core::{Error, Tensor};

/// Pixel-count oracle over boolean grids.
fn oracle(p: &[bool], g: &[bool]) -> (f64, f64) {
    let tp = p.iter().zip(g).filter(|(a, b)| **a && **b).count();
    let fp = p.iter().zip(g).filter(|(a, b)| **a && !**b).count();
    let fn_ = p.iter().zip(g).filter(|(a, b)| !**a && **b).count();
    let iou = if tp + fp + fn_ == 0 { 1.0 } else { tp as f64 / (tp + fp + fn_) as f64 };
    let f = if tp + fp + fn_ == 0 {
        1.0
    } else if tp == 0 {
        0.0
    } else {
        let prec = tp as f64 / (tp + fp) as f64;
        let rec = tp as f64 / (tp + fn_) as f64;
        (1.0 + 0.3) * prec * rec / (0.3 * prec + rec)
    };
    (iou, f)
}

fn bools(x: &Tensor) -> Vec<bool> {
    x.data().iter().map(|&v| v > 0.5).collect()
}

#[test]
fn matches_pixel_count_oracle_on_100_pairs() {
    for seed in 0..100u64 {
        let density = 0.05 + 0.9 * ((seed * 37) % 100) as f64 / 100.0;
        let p = random_mask(&[1, 1, 8, 8], density, 2 * seed);
        let g = random_mask(&[1, 1, 8, 8], 1.0 - density, 2 * seed + 1);
        let (iou, f) = oracle(&bools(&p), &bools(&g));
        assert_eq!(miou(&p, &g).unwrap(), iou, "seed {seed}");
        assert_eq!(fscore(&p, &g).unwrap(), f, "seed {seed}");
    }
}

#[test]
fn half_cover_hand_case() {
    let g = Tensor::from_fn(&[1, 1, 8, 8], |i| (i < 32) as u8 as f64);
    let p = Tensor::from_fn(&[1, 1, 8, 8], |i| (i < 16) as u8 as f64);
    assert_eq!(miou(&p, &g).unwrap(), 0.5);
    assert_eq!(fscore(&p, &g).unwrap(), 0.8125);
}

#[test]
fn identical_disjoint_and_empty() {
    let g = random_mask(&[1, 1, 8, 8], 0.4, 3);
    assert_eq!(miou(&g, &g).unwrap(), 1.0);
    assert_eq!(fscore(&g, &g).unwrap(), 1.0);
    let inv = g.map(|v| 1.0 - v);
    assert_eq!(miou(&inv, &g).unwrap(), 0.0);
    assert_eq!(fscore(&inv, &g).unwrap(), 0.0);
    let empty = Tensor::zeros(&[1, 1, 8, 8]);
    assert_eq!(miou(&empty, &g).unwrap(), 0.0);
    assert_eq!(miou(&empty, &empty).unwrap(), 1.0);
    assert_eq!(fscore(&empty, &empty).unwrap(), 1.0);
}

#[test]
fn averages_over_frames() {
    let g = t(&[2, 1, 1, 2], &[1.0, 1.0, 1.0, 0.0]);
    let p = t(&[2, 1, 1, 2], &[1.0, 0.0, 1.0, 0.0]);
    assert_eq!(iou_per_frame(&p, &g).unwrap(), vec![0.5, 1.0]);
    assert_eq!(miou(&p, &g).unwrap(), 0.75);
}

#[test]
fn shape_mismatch_is_a_dimension_error() {
    let a = Tensor::zeros(&[1, 1, 4, 4]);
    let b = Tensor::zeros(&[1, 1, 4, 5]);
    assert!(matches!(miou(&a, &b), Err(Error::Dimension(_))));
}

#[test]
fn binarization_threshold() {
    let l = t(&[1, 1, 1, 4], &[-1.0, 0.0, 1e-9, 3.0]);
    assert_eq!(binarize_logits(&l).data(), &[0.0, 0.0, 1.0, 1.0]);
    let s = t(&[1, 2, 1, 2], &[-1.0, 2.0, 0.5, 1.0]);
    assert_eq!(semantic_argmax(&s).unwrap().data(), &[2.0, 1.0]);
}

mod common;

use common::{random, random_mask, t};
use lightavseg_core::gradcheck::{grad_check, GradCheckOptions};
use lightavseg_core::loss::*;
use lightavseg_core::rng::RngState;
use lightavseg_core::{Error, Graph, NodeId, Tensor};
use proptest::prelude::*;

const LN2: f64 = std::f64::consts::LN_2;

fn scalar(g: &Graph, id: NodeId) -> f64 {
    g.value(id).item().unwrap()
}

#[test]
fn dice_hand_case_and_limits() {
    let mut g = Graph::new();
    let logits = g.constant(t(&[1, 1, 2, 2], &[40.0, -40.0, -40.0, -40.0])).unwrap();
    let m = t(&[1, 1, 2, 2], &[1.0, 1.0, 0.0, 0.0]);
    let d = g.dice_loss(logits, &m).unwrap();
    let d = scalar(&g, d);
    assert!((d - 0.25).abs() < 1e-15, "{d}");

    let mask = random_mask(&[1, 1, 16, 16], 0.4, 1);
    let perfect = g.constant(mask.map(|v| if v > 0.0 { 30.0 } else { -30.0 })).unwrap();
    let d = g.dice_loss(perfect, &mask).unwrap();
    assert!(scalar(&g, d) < 1e-3);

    let mut last = 0.0;
    for side in [4usize, 16, 64] {
        let m = Tensor::from_fn(&[1, 1, side, side], |i| (i % side < side / 2) as u8 as f64);
        let miss = g.constant(m.map(|v| if v > 0.0 { -30.0 } else { 30.0 })).unwrap();
        let d = g.dice_loss(miss, &m).unwrap();
        let v = scalar(&g, d);
        assert!(v > last && v < 1.0);
        last = v;
    }
    assert!(last > 0.999, "{last}");
}

#[test]
fn bce_closed_forms() {
    let mut g = Graph::new();
    let m = random_mask(&[2, 1, 5, 5], 0.5, 3);
    let zero = g.constant(Tensor::zeros(&[2, 1, 5, 5])).unwrap();
    let b = g.bce_with_logits(zero, &m).unwrap();
    assert!((scalar(&g, b) - LN2).abs() <= 1e-9);

    let sure = g.constant(m.map(|v| if v > 0.0 { 40.0 } else { -40.0 })).unwrap();
    let b = g.bce_with_logits(sure, &m).unwrap();
    assert!(scalar(&g, b) < 1e-6);

    let one = g.constant(Tensor::zeros(&[1, 1, 1, 1])).unwrap();
    let b = g.bce_with_logits(one, &t(&[1, 1, 1, 1], &[1.0])).unwrap();
    assert!((scalar(&g, b) - LN2).abs() <= 1e-12);
}

fn maps_from(g: &mut Graph, probs: &[Tensor]) -> AlignmentMaps {
    let ids: Vec<NodeId> = probs.iter().map(|p| g.constant(p.clone()).unwrap()).collect();
    AlignmentMaps { sim: ids.clone(), s: ids.clone(), s_up: ids }
}

#[test]
fn alignment_scores_for_parallel_orthogonal_and_opposite() {
    let sigmoid10 = 0.999_954_602_131_297_6;
    let mut g = Graph::new();
    // norms of 1e4 push the ε of the normalisation below 1e-12 in the score
    let v = g.constant(t(&[1, 2, 1, 3], &[3e4, 4e4, -3e4, 4e4, -3e4, -4e4])).unwrap();
    let par = g.constant(t(&[1, 2, 1, 1], &[3e4, 4e4])).unwrap();
    let maps = alignment_maps(&mut g, &[v], &[par], 0.1, 1, 3).unwrap();
    let s = g.value(maps.s[0]).data().to_vec();
    assert!((s[0] - sigmoid10).abs() < 1e-12, "{}", s[0]);
    assert!((s[1] - 0.5).abs() < 1e-15, "{}", s[1]);
    assert!((s[2] - (1.0 - sigmoid10)).abs() < 1e-12, "{}", s[2]);
    assert!((s[2] - 4.539_786_870_243_439e-5).abs() < 1e-12);
}

#[test]
fn nonpositive_temperature_is_a_contract_error() {
    let mut g = Graph::new();
    let v = g.constant(random(&[1, 2, 2, 2], 1)).unwrap();
    let a = g.constant(random(&[1, 2, 1, 1], 2)).unwrap();
    for tau in [0.0, -0.1] {
        assert!(matches!(alignment_maps(&mut g, &[v], &[a], tau, 4, 4), Err(Error::Contract(_))));
    }
}

#[test]
fn msa_cases() {
    let mut g = Graph::new();
    let m = random_mask(&[2, 1, 6, 6], 0.3, 5);
    let maps = maps_from(&mut g, &[m.clone(), m.clone(), m.clone()]);
    let (msa, _) = msa_loss(&mut g, &maps, &m).unwrap();
    assert!(scalar(&g, msa) < 2e-6);

    let half = Tensor::full(&[2, 1, 6, 6], 0.5);
    let maps = maps_from(&mut g, &[half.clone(), half.clone(), half]);
    let (msa, _) = msa_loss(&mut g, &maps, &m).unwrap();
    assert!((scalar(&g, msa) - LN2).abs() < 1e-12);

    let parts: Vec<Tensor> = (0..3).map(|i| random(&[2, 1, 6, 6], 10 + i).map(|v| 0.5 + 0.4 * v)).collect();
    let maps = maps_from(&mut g, &parts);
    let (msa, per) = msa_loss(&mut g, &maps, &m).unwrap();
    let (a, b, c) = (scalar(&g, per[0]), scalar(&g, per[1]), scalar(&g, per[2]));
    assert!((scalar(&g, msa) - (a + b + c) / 3.0).abs() < 1e-15);
}

#[test]
fn msa_constant_minimiser_is_the_mask_mean() {
    for seed in 0..10u64 {
        let m = random_mask(&[1, 1, 4, 4], 0.15 + 0.07 * seed as f64, seed);
        let mean = m.sum() / 16.0;
        let loss_at = |c: f64| {
            let mut g = Graph::new();
            let p = Tensor::full(&[1, 1, 4, 4], c);
            let maps = maps_from(&mut g, &[p.clone(), p.clone(), p]);
            let (msa, _) = msa_loss(&mut g, &maps, &m).unwrap();
            scalar(&g, msa)
        };
        let best = loss_at(mean.clamp(1e-7, 1.0 - 1e-7));
        for k in 1..1000 {
            let c = k as f64 / 1000.0;
            assert!(best <= loss_at(c) + 1e-12, "seed {seed}: mean {mean} beaten by {c}");
        }
    }
}

#[test]
fn foreground_mask_cases() {
    assert_eq!(foreground_mask(&Tensor::zeros(&[1, 3, 2, 2])).unwrap(), Tensor::zeros(&[1, 1, 2, 2]));
    let y = random_mask(&[2, 1, 3, 3], 0.5, 1);
    assert_eq!(foreground_mask(&y).unwrap(), y);
    let two = t(&[1, 2, 2, 2], &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
    assert_eq!(foreground_mask(&two).unwrap().data(), &[1.0, 0.0, 1.0, 0.0]);
    assert!(matches!(foreground_mask(&t(&[1, 1, 1, 2], &[0.0, 0.5])), Err(Error::Contract(_))));
}

struct Inputs {
    logits: Tensor,
    features: Vec<Tensor>,
    audio: Vec<Tensor>,
    y: Tensor,
    lambda: f64,
}

fn inputs(seed: u64) -> Inputs {
    let mut rng = RngState::new(seed);
    let b = 1 + rng.below(2) as usize;
    let c = 2 + rng.below(4) as usize;
    Inputs {
        logits: random(&[b, 1, 8, 8], seed).map(|v| 4.0 * v),
        features: [2usize, 4, 8].iter().map(|&s| random(&[b, c, s, s], seed + s as u64)).collect(),
        audio: (0..3).map(|i| random(&[b, c, 1, 1], seed + 100 + i)).collect(),
        y: random_mask(&[b, 1, 8, 8], rng.uniform(0.05, 0.6), seed + 7),
        lambda: rng.uniform(0.0, 2.0),
    }
}

fn run(inp: &Inputs, variant: LossVariant) -> LossReport {
    let mut g = Graph::new();
    let l = g.constant(inp.logits.clone()).unwrap();
    let f: Vec<NodeId> = inp.features.iter().map(|x| g.constant(x.clone()).unwrap()).collect();
    let a: Vec<NodeId> = inp.audio.iter().map(|x| g.constant(x.clone()).unwrap()).collect();
    let nodes = total_loss(&mut g, l, &f, &a, &inp.y, inp.lambda, 0.1, variant).unwrap();
    nodes.report(&g)
}

#[test]
fn total_is_dice_plus_bce_plus_weighted_msa() {
    for seed in 0..50 {
        let inp = inputs(seed);
        let r = run(&inp, LossVariant::SegMsa);
        assert_eq!(r.lambda, inp.lambda);
        assert!((r.total - (r.dice + r.bce + r.lambda * r.msa)).abs() <= 1e-12, "seed {seed}");
        assert!(r.dice >= 0.0 && r.bce >= 0.0 && r.msa >= 0.0);
        assert_eq!(r.per_scale_msa.len(), 3);
    }
}

#[test]
fn variants_weight_the_right_term() {
    let inp = inputs(3);
    let seg = run(&inp, LossVariant::Seg);
    assert_eq!(seg.lambda, 0.0);
    assert_eq!(seg.total, seg.dice + seg.bce);
    let avm = run(&inp, LossVariant::SegAvm);
    let kl = avm.avm.unwrap();
    assert!(kl >= 0.0);
    assert!((avm.total - (avm.dice + avm.bce + inp.lambda * kl)).abs() <= 1e-12);
    let zero = run(&Inputs { lambda: 0.0, ..inp }, LossVariant::SegMsa);
    assert_eq!(zero.total, zero.dice + zero.bce);
    assert_eq!(LossVariant::parse("seg+msa").unwrap(), LossVariant::SegMsa);
    assert!(LossVariant::parse("mix").is_err());
}

#[test]
fn total_loss_gradients() {
    let inp = inputs(11);
    let y = inp.y.clone();
    let opts = GradCheckOptions::default();
    let r = grad_check(
        |g: &mut Graph, l| {
            let f: Vec<NodeId> = inp.features.iter().map(|x| g.constant(x.clone()).unwrap()).collect();
            let a: Vec<NodeId> = inp.audio.iter().map(|x| g.constant(x.clone()).unwrap()).collect();
            Ok(total_loss(g, l, &f, &a, &y, 0.5, 0.1, LossVariant::SegMsa)?.total)
        },
        &inp.logits,
        &opts,
    )
    .unwrap();
    assert!(r.passed(), "{}", r.max_rel_err);
    for scale in 0..3 {
        let r = grad_check(
            |g: &mut Graph, x| {
                let l = g.constant(inp.logits.clone())?;
                let mut f: Vec<NodeId> = inp.features.iter().map(|x| g.constant(x.clone()).unwrap()).collect();
                f[scale] = x;
                let a: Vec<NodeId> = inp.audio.iter().map(|x| g.constant(x.clone()).unwrap()).collect();
                Ok(total_loss(g, l, &f, &a, &y, 0.5, 0.1, LossVariant::SegMsa)?.total)
            },
            &inp.features[scale],
            &opts,
        )
        .unwrap();
        assert!(r.passed(), "scale {scale}: {}", r.max_rel_err);
    }
}

#[test]
fn semantic_seg_loss_uses_cross_entropy() {
    let mut g = Graph::new();
    let y = t(&[1, 2, 1, 2], &[1.0, 0.0, 0.0, 0.0]);
    let l = g.constant(Tensor::zeros(&[1, 2, 1, 2])).unwrap();
    let (_, ce) = seg_loss(&mut g, l, &y).unwrap();
    // three equal logits per pixel
    assert!((scalar(&g, ce) - 3f64.ln()).abs() < 1e-15);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn similarities_and_scores_stay_in_range(seed in 0u64..10_000, scale in -6i32..6) {
        let k = 10f64.powi(scale);
        let mut g = Graph::new();
        let v = g.constant(random(&[2, 3, 4, 4], seed).map(|x| k * x)).unwrap();
        let a = g.constant(random(&[2, 3, 1, 1], seed + 1).map(|x| k * x)).unwrap();
        let maps = alignment_maps(&mut g, &[v], &[a], 0.1, 8, 8).unwrap();
        prop_assert!(g.value(maps.sim[0]).data().iter().all(|&s| (-1.0 - 1e-9..=1.0 + 1e-9).contains(&s)));
        prop_assert!(g.value(maps.s[0]).data().iter().all(|&s| s > 0.0 && s < 1.0));
        prop_assert_eq!(g.shape(maps.s_up[0]), &[2, 1, 8, 8]);
    }
}

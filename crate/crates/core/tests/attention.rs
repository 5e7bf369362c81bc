mod common;

use common::{random, t};
use lightavseg_core::attention::*;
use lightavseg_core::backbone::AudioState;
use lightavseg_core::gradcheck::{grad_check, GradCheckOptions};
use lightavseg_core::params::ParamStore;
use lightavseg_core::rng::RngState;
use lightavseg_core::{Error, Graph, NodeId, Tensor};

fn setup(g: &mut Graph, c: usize, d: usize, seed: u64) -> AttentionParams {
    let mut store = ParamStore::new();
    AttentionParams::init(&mut store, c, d, &mut RngState::new(seed));
    let p = store.bind(g, |_| false).unwrap();
    AttentionParams::bind(&p).unwrap()
}

fn audio(g: &mut Graph, x: Tensor) -> AudioState {
    AudioState { value: g.constant(x).unwrap(), stage: 0 }
}

#[test]
fn single_token_has_unit_weight() {
    let mut g = Graph::new();
    let p = setup(&mut g, 3, 4, 1);
    let v = g.constant(random(&[1, 3, 1, 1], 2)).unwrap();
    let a = audio(&mut g, random(&[1, 3, 1, 1], 3));
    let out = dense_attention(&mut g, v, a, &p).unwrap();
    assert_eq!(g.attention_weights(out.attn).unwrap(), &[1.0]);
    let val = g.pointwise_linear(v, p.value.0, p.value.1).unwrap();
    let expect = g.pointwise_linear(val, p.output.0, p.output.1).unwrap();
    assert_eq!(g.value(out.out), g.value(expect));
}

#[test]
fn identical_tokens_attend_uniformly() {
    let mut g = Graph::new();
    let p = setup(&mut g, 2, 3, 4);
    let v = g.constant(Tensor::from_fn(&[1, 2, 3, 3], |i| if i < 9 { 0.3 } else { -0.7 })).unwrap();
    let a = audio(&mut g, t(&[1, 2, 1, 1], &[0.1, 0.2]));
    let out = dense_attention(&mut g, v, a, &p).unwrap();
    assert!(g.attention_weights(out.attn).unwrap().iter().all(|&w| (w - 1.0 / 9.0).abs() < 1e-15));
    for ch in g.value(out.out).data().chunks(9) {
        assert!(ch.iter().all(|&x| x == ch[0]));
    }
}

#[test]
fn softmax_rows_sum_to_one() {
    let mut g = Graph::new();
    let p = setup(&mut g, 4, 5, 7);
    let v = g.constant(random(&[2, 4, 5, 6], 8).map(|x| 6.0 * x)).unwrap();
    let a = audio(&mut g, random(&[2, 4, 1, 1], 9));
    let out = dense_attention(&mut g, v, a, &p).unwrap();
    for row in g.attention_weights(out.attn).unwrap().chunks(30) {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
    }
}

#[test]
fn counted_flops_match_closed_form() {
    let mut g = Graph::new();
    let p = setup(&mut g, 64, 64, 1);
    let v = g.constant(random(&[1, 64, 14, 14], 2)).unwrap();
    let a = audio(&mut g, random(&[1, 64, 1, 1], 3));
    dense_attention(&mut g, v, a, &p).unwrap();
    let core = g.flops().segment_total(SCOPE_CORE).macs;
    assert_eq!(core, 4 * 196 * 196 * 64);
    assert_eq!(core, 9_834_496);
    assert_eq!(g.flops().total().macs, xattn_closed_form(196, 64, 64));
}

#[test]
fn width_mismatch_is_a_dimension_error() {
    let mut g = Graph::new();
    let p = setup(&mut g, 3, 2, 1);
    let v = g.constant(random(&[1, 3, 2, 2], 2)).unwrap();
    let a = audio(&mut g, random(&[1, 4, 1, 1], 3));
    assert!(matches!(dense_attention(&mut g, v, a, &p), Err(Error::Dimension(_))));
}

#[test]
fn gradients_through_dense_attention() {
    let mut store = ParamStore::new();
    AttentionParams::init(&mut store, 3, 4, &mut RngState::new(5));
    let a0 = random(&[1, 3, 1, 1], 6);
    let loss = |g: &mut Graph, v: NodeId, a: NodeId| {
        let p = AttentionParams::bind(&store.bind(g, |_| false)?)?;
        let out = dense_attention(g, v, AudioState { value: a, stage: 0 }, &p)?;
        common::probe(g, out.out, 7)
    };
    let r = grad_check(
        |g: &mut Graph, v| {
            let a = g.constant(a0.clone())?;
            loss(g, v, a)
        },
        &random(&[1, 3, 4, 4], 8),
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(r.passed(), "{}", r.max_rel_err);
    let v0 = random(&[1, 3, 4, 4], 8);
    let r = grad_check(
        |g: &mut Graph, a| {
            let v = g.constant(v0.clone())?;
            loss(g, v, a)
        },
        &a0,
        &GradCheckOptions::default(),
    )
    .unwrap();
    assert!(r.passed(), "{}", r.max_rel_err);
}

#[test]
fn fusion_sweep_is_linear() {
    let bench = SweepBench::new(SweepModule::Fusion, 64, 64, 0);
    let r = scaling_sweep(&bench, &[28, 56, 112, 224]).unwrap();
    assert!((r.slope - 1.0).abs() <= 0.01, "{}", r.slope);
    for w in r.points.windows(2) {
        let ratio = w[1].flops as f64 / w[0].flops as f64;
        assert!((ratio - 4.0).abs() <= 0.08, "{ratio}");
    }
}

#[test]
fn xattn_sweep_is_quadratic() {
    let bench = SweepBench::new(SweepModule::Xattn, 8, 8, 0);
    let r = scaling_sweep(&bench, &[7, 14, 28]).unwrap();
    assert!((r.slope - 2.0).abs() <= 0.01, "{}", r.slope);
    assert!(r.total_slope < r.slope);
    for w in r.points.windows(2) {
        let lead = |n: u64| 4 * n * n * 8;
        assert_eq!(lead(w[1].n), 16 * lead(w[0].n));
    }
}

#[test]
fn sweep_grid_must_increase() {
    let bench = SweepBench::new(SweepModule::Fusion, 4, 4, 0);
    assert!(matches!(scaling_sweep(&bench, &[8, 8]), Err(Error::Contract(_))));
    assert!(matches!(scaling_sweep(&bench, &[16, 8]), Err(Error::Contract(_))));
    assert!(matches!(scaling_sweep(&bench, &[8]), Err(Error::Contract(_))));
    assert_eq!(SweepModule::parse("xattn").unwrap(), SweepModule::Xattn);
    assert!(SweepModule::parse("conv").is_err());
}

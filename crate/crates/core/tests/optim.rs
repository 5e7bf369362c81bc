mod common;

use common::random;
use lightavseg_core::optim::AdamW;
use lightavseg_core::params::ParamStore;
use lightavseg_core::{Error, Tensor};
use std::collections::BTreeMap;

fn store() -> ParamStore {
    let mut s = ParamStore::new();
    s.insert("a", random(&[3, 2], 1));
    s.insert("b", random(&[4], 2));
    s
}

fn grads(pairs: &[(&str, Tensor)]) -> BTreeMap<String, Tensor> {
    pairs.iter().map(|(n, t)| (n.to_string(), t.clone())).collect()
}

#[test]
fn zero_gradient_without_decay_is_a_no_op() {
    let mut p = store();
    let before = p.clone();
    let mut opt = AdamW::new(1e-3, 0.0).unwrap();
    for _ in 0..10 {
        opt.step(&mut p, &grads(&[("a", Tensor::zeros(&[3, 2])), ("b", Tensor::zeros(&[4]))])).unwrap();
    }
    assert_eq!(p, before);
}

#[test]
fn constant_gradient_moves_by_lr_per_step() {
    let mut p = store();
    let lr = 1e-3;
    let mut opt = AdamW::new(lr, 0.0).unwrap();
    let g = Tensor::from_fn(&[4], |i| [0.5, -2.0, 1e-3, 7.0][i]);
    for step in 0..1000 {
        let before = p.get("b").unwrap().clone();
        opt.step(&mut p, &grads(&[("b", g.clone())])).unwrap();
        if step % 100 == 99 {
            for ((x, y), gi) in p.get("b").unwrap().data().iter().zip(before.data()).zip(g.data()) {
                let delta = y - x;
                // |Δ| = lr·|g|/(|g|+ε)
                let expect = lr * gi / (gi.abs() + 1e-8);
                assert!((delta - expect).abs() <= 1e-9 * lr, "{delta} vs {expect}");
            }
        }
    }
    assert_eq!(opt.t, 1000);
}

#[test]
fn decay_alone_shrinks_multiplicatively() {
    let mut p = store();
    let (lr, wd) = (1e-2, 0.1);
    let mut opt = AdamW::new(lr, wd).unwrap();
    for _ in 0..5 {
        let before = p.get("a").unwrap().clone();
        opt.step(&mut p, &grads(&[("a", Tensor::zeros(&[3, 2]))])).unwrap();
        let expect = before.map(|v| v * (1.0 - lr * wd));
        assert_eq!(p.get("a").unwrap(), &expect);
    }
}

#[test]
fn parameters_without_gradients_are_untouched() {
    let mut p = store();
    let b = p.get("b").unwrap().clone();
    let mut opt = AdamW::new(1e-2, 0.5).unwrap();
    opt.step(&mut p, &grads(&[("a", random(&[3, 2], 3))])).unwrap();
    assert_eq!(p.get("b").unwrap(), &b);
    assert!(!opt.m.contains_key("b"));
}

#[test]
fn non_finite_gradient_names_the_parameter() {
    let mut p = store();
    let before = p.clone();
    let mut opt = AdamW::new(1e-3, 0.0).unwrap();
    let mut bad = Tensor::zeros(&[4]);
    bad.data_mut()[2] = f64::NAN;
    match opt.step(&mut p, &grads(&[("a", random(&[3, 2], 4)), ("b", bad)])) {
        Err(Error::Contract(msg)) => assert!(msg.contains("`b`"), "{msg}"),
        other => panic!("{other:?}"),
    }
    assert_eq!(p, before);
    assert_eq!(opt.t, 0);
}

#[test]
fn invalid_settings_and_shapes() {
    assert!(AdamW::new(0.0, 0.0).is_err());
    assert!(AdamW::new(1e-3, -1.0).is_err());
    let mut p = store();
    let mut opt = AdamW::new(1e-3, 0.0).unwrap();
    assert!(matches!(opt.step(&mut p, &grads(&[("b", Tensor::zeros(&[5]))])), Err(Error::Dimension(_))));
}

#![allow(dead_code)]
use lightavseg_core::rng::RngState;
use lightavseg_core::{Graph, NodeId, Result, Tensor};

pub fn t(shape: &[usize], data: &[f64]) -> Tensor {
    Tensor::new(shape.to_vec(), data.to_vec()).unwrap()
}

pub fn random(shape: &[usize], seed: u64) -> Tensor {
    let mut rng = RngState::new(seed);
    Tensor::from_fn(shape, |_| rng.uniform(-1.0, 1.0))
}

pub fn hsig(x: f64) -> f64 {
    ((x + 3.0) / 6.0).clamp(0.0, 1.0)
}

/// Weighted sum of `y` with fixed random weights.
pub fn probe(g: &mut Graph, y: NodeId, seed: u64) -> Result<NodeId> {
    let w = random(g.shape(y), seed);
    let w = g.constant(w)?;
    let p = g.mul(y, w)?;
    g.sum(p)
}

/// Random binary mask with roughly `density` ones.
pub fn random_mask(shape: &[usize], density: f64, seed: u64) -> Tensor {
    let mut rng = RngState::new(seed);
    Tensor::from_fn(shape, |_| (rng.unit() < density) as u8 as f64)
}

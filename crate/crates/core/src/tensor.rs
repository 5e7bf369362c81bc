use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{dim_err, Error, Result};

/// Dense row-major array of `f64` values (last axis fastest).
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(dim_err!("zero extent in shape {:?}", shape));
        }
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(dim_err!(
                "shape {:?} implies {} elements, got {}",
                shape,
                n,
                data.len()
            ));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn full(shape: &[usize], value: f64) -> Self {
        let n = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// `n×n` identity, used as a weight for channel maps.
    pub fn eye(n: usize) -> Self {
        Self::from_fn(&[n, n], |i| if i / n == i % n { 1.0 } else { 0.0 })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    /// Value of a one-element tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() != 1 {
            return Err(dim_err!("item() on tensor of shape {:?}", self.shape));
        }
        Ok(self.data[0])
    }

    /// Extents of a rank-4 `[B, C, H, W]` tensor.
    pub fn dims4(&self) -> Result<[usize; 4]> {
        match self.shape[..] {
            [b, c, h, w] => Ok([b, c, h, w]),
            _ => Err(dim_err!("expected [B,C,H,W], got {:?}", self.shape)),
        }
    }

    pub fn at4(&self, b: usize, c: usize, h: usize, w: usize) -> f64 {
        let [_, cs, hs, ws] = self.dims4().expect("rank-4 tensor");
        self.data[((b * cs + c) * hs + h) * ws + w]
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        Self::new(shape.to_vec(), self.data)
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn sum(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_abs_diff(&self, other: &Tensor) -> f64 {
        self.data
            .iter()
            .zip(&other.data)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }

    /// Frames `[start, start+len)` along the leading axis.
    pub fn slice_batch(&self, start: usize, len: usize) -> Result<Self> {
        let lead = self.shape[0];
        if len == 0 || start + len > lead {
            return Err(dim_err!(
                "batch slice {}..{} out of range for {:?}",
                start,
                start + len,
                self.shape
            ));
        }
        let per = self.data.len() / lead;
        let mut shape = self.shape.clone();
        shape[0] = len;
        Ok(Self {
            shape,
            data: self.data[start * per..(start + len) * per].to_vec(),
        })
    }

    /// Stacks tensors of identical trailing shape along the leading axis.
    pub fn concat_batch(parts: &[&Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Contract("concat of zero tensors".into()))?;
        let tail = &first.shape[1..];
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(dim_err!(
                    "cannot stack {:?} with {:?}",
                    first.shape,
                    p.shape
                ));
            }
            lead += p.shape[0];
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = lead;
        Ok(Self { shape, data })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_mismatched_data() {
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::Dimension(_))
        ));
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn batch_slice_and_stack() {
        let t = Tensor::from_fn(&[3, 2], |i| i as f64);
        let a = t.slice_batch(0, 1).unwrap();
        let b = t.slice_batch(1, 2).unwrap();
        assert_eq!(Tensor::concat_batch(&[&a, &b]).unwrap(), t);
        assert!(t.slice_batch(2, 2).is_err());
    }
}

//! Dense row-major `f32` tensors and the small set of neural-network
//! primitives the rest of the crate is built from.
//!
//! Feature maps are stored as `[H, W, C]`, which is byte-for-byte the same
//! layout as an `(H*W) x C` token matrix, so the sequence view used by the
//! scan and attention branches is just a reshape.

mod io;
pub mod nn;
pub mod ops;

pub use io::{read_tensor, write_tensor, TENSOR_MAGIC};
pub use nn::{Conv2d, DepthwiseConv2d, LayerNorm, Linear, SqueezeExcite};
pub use ops::{
    conv2d, depthwise_conv2d, gelu, global_avg_pool, layer_norm, layer_norm_rows, matmul, se_gate,
    sigmoid, silu, softmax_in_place, softmax_rows, softplus,
};

use rand::Rng;

use crate::error::{Error, Result};

pub const MAX_RANK: usize = 4;

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() || shape.len() > MAX_RANK {
        return Err(Error::Dimension(format!(
            "rank must be 1..={MAX_RANK}, got {}",
            shape.len()
        )));
    }
    if let Some(pos) = shape.iter().position(|&d| d == 0) {
        return Err(Error::Dimension(format!(
            "dimension {pos} of {shape:?} is zero"
        )));
    }
    Ok(shape.iter().product())
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n = check_shape(&shape)?;
        if n != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape:?} holds {n} elements but {} were given",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    /// Panics on an invalid shape; use [`Tensor::new`] for untrusted input.
    pub fn full(shape: &[usize], value: f32) -> Self {
        let n = check_shape(shape).expect("invalid tensor shape");
        Self {
            shape: shape.to_vec(),
            data: vec![value; n],
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, 0.0)
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f32) -> Self {
        let n = check_shape(shape).expect("invalid tensor shape");
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Uniform samples in `[-bound, bound]`.
    pub fn uniform<R: Rng + ?Sized>(shape: &[usize], bound: f32, rng: &mut R) -> Self {
        if bound == 0.0 {
            return Self::zeros(shape);
        }
        Self::from_fn(shape, |_| rng.random_range(-bound..=bound))
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let n = check_shape(shape)?;
        if n != self.data.len() {
            return Err(Error::Dimension(format!(
                "cannot reshape {:?} into {shape:?}",
                self.shape
            )));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape[..] {
            [a, b] => Ok((a, b)),
            _ => Err(Error::Dimension(format!(
                "expected rank 2, got {:?}",
                self.shape
            ))),
        }
    }

    pub fn dims3(&self) -> Result<(usize, usize, usize)> {
        match self.shape[..] {
            [a, b, c] => Ok((a, b, c)),
            _ => Err(Error::Dimension(format!(
                "expected rank 3, got {:?}",
                self.shape
            ))),
        }
    }

    pub fn map(&self, f: impl Fn(f32) -> f32) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    fn zip_with(&self, other: &Self, what: &str, f: impl Fn(f32, f32) -> f32) -> Result<Self> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "{what}: {:?} vs {:?}",
                self.shape, other.shape
            )));
        }
        Ok(Self {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect(),
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "add", |a, b| a + b)
    }

    pub fn mul(&self, other: &Self) -> Result<Self> {
        self.zip_with(other, "mul", |a, b| a * b)
    }

    pub fn scale(&self, s: f32) -> Self {
        self.map(|v| v * s)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Copies channels `start..start + count` of a `[.., C]` tensor.
    pub fn channel_slice(&self, start: usize, count: usize) -> Result<Self> {
        let c = *self.shape.last().unwrap();
        if start + count > c || count == 0 {
            return Err(Error::Dimension(format!(
                "channel slice {start}..{} out of {c}",
                start + count
            )));
        }
        let rows = self.data.len() / c;
        let mut data = Vec::with_capacity(rows * count);
        for r in 0..rows {
            data.extend_from_slice(&self.data[r * c + start..r * c + start + count]);
        }
        let mut shape = self.shape.clone();
        *shape.last_mut().unwrap() = count;
        Self::new(shape, data)
    }

    /// Concatenates along the last axis; all leading dims must agree.
    pub fn concat_channels(parts: &[&Tensor]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Dimension("concat of zero tensors".into()))?;
        let lead = &first.shape[..first.rank() - 1];
        for p in parts {
            if &p.shape[..p.rank() - 1] != lead {
                return Err(Error::Dimension(format!(
                    "concat: leading dims {:?} vs {lead:?}",
                    p.shape
                )));
            }
        }
        let rows: usize = lead.iter().product();
        let total: usize = parts.iter().map(|p| *p.shape.last().unwrap()).sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                let c = *p.shape.last().unwrap();
                data.extend_from_slice(&p.data[r * c..(r + 1) * c]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        Self::new(shape, data)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_bad_shapes() {
        assert!(Tensor::new(vec![], vec![]).is_err());
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::new(vec![1, 1, 1, 1, 1], vec![1.0]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1.0; 3]).is_err());
        assert!(Tensor::new(vec![2, 2], vec![1.0; 4]).is_ok());
    }

    #[test]
    fn channel_split_and_concat_invert() {
        let t = Tensor::from_fn(&[2, 3, 4], |i| i as f32);
        let a = t.channel_slice(0, 2).unwrap();
        let b = t.channel_slice(2, 2).unwrap();
        assert_eq!(a.data()[..4], [0.0, 1.0, 4.0, 5.0]);
        let back = Tensor::concat_channels(&[&a, &b]).unwrap();
        assert_eq!(back, t);
    }
}

//! Parameter containers for the layers used throughout the model.

use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};

/// Walks every learnable tensor under a dotted path prefix.
pub trait Parameters {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor));

    fn num_params(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }
}

pub fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

fn fan_in_bound(fan_in: usize) -> f32 {
    1.0 / (fan_in as f32).sqrt()
}

/// `y = x W^T + b` applied to every row of a `[.., in]` tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Linear {
    /// `[out, in]`
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

impl Linear {
    pub fn init<R: Rng + ?Sized>(d_in: usize, d_out: usize, bias: bool, rng: &mut R) -> Self {
        let b = fan_in_bound(d_in);
        Self {
            weight: Tensor::uniform(&[d_out, d_in], b, rng),
            bias: bias.then(|| Tensor::uniform(&[d_out], b, rng)),
        }
    }

    pub fn zeros(d_in: usize, d_out: usize, bias: bool) -> Self {
        Self {
            weight: Tensor::zeros(&[d_out, d_in]),
            bias: bias.then(|| Tensor::zeros(&[d_out])),
        }
    }

    /// Square identity map without bias.
    pub fn identity(d: usize) -> Self {
        Self {
            weight: Tensor::from_fn(&[d, d], |i| if i / d == i % d { 1.0 } else { 0.0 }),
            bias: None,
        }
    }

    pub fn d_in(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn d_out(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        let (d_out, d_in) = (self.d_out(), self.d_in());
        let last = *x.shape().last().unwrap();
        if last != d_in {
            return Err(Error::Dimension(format!(
                "linear expects {d_in} input features, got {:?}",
                x.shape()
            )));
        }
        let rows = x.len() / d_in;
        let w = self.weight.data();
        let mut out = vec![0.0f32; rows * d_out];
        for (xr, yr) in x.data().chunks_exact(d_in).zip(out.chunks_exact_mut(d_out)) {
            for (o, y) in yr.iter_mut().enumerate() {
                let wr = &w[o * d_in..(o + 1) * d_in];
                let mut acc = 0.0f32;
                for (a, b) in xr.iter().zip(wr) {
                    acc += a * b;
                }
                *y = acc;
            }
            if let Some(b) = &self.bias {
                for (y, bb) in yr.iter_mut().zip(b.data()) {
                    *y += bb;
                }
            }
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = d_out;
        Tensor::new(shape, out)
    }
}

impl Parameters for Linear {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

/// Dense 2-D convolution over `[H, W, C_in]` maps with zero padding.
#[derive(Clone, Debug, PartialEq)]
pub struct Conv2d {
    /// `[c_out, k, k, c_in]`
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub pad: usize,
}

impl Conv2d {
    pub fn init<R: Rng + ?Sized>(
        c_in: usize,
        c_out: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let b = fan_in_bound(c_in * kernel * kernel);
        Self {
            weight: Tensor::uniform(&[c_out, kernel, kernel, c_in], b, rng),
            bias: Some(Tensor::uniform(&[c_out], b, rng)),
            stride,
            pad,
        }
    }

    /// 3x3, stride 1, padding 1: output keeps the input's spatial size.
    pub fn same3x3<R: Rng + ?Sized>(c_in: usize, c_out: usize, rng: &mut R) -> Self {
        Self::init(c_in, c_out, 3, 1, 1, rng)
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn c_in(&self) -> usize {
        self.weight.shape()[3]
    }

    pub fn c_out(&self) -> usize {
        self.weight.shape()[0]
    }
}

impl Parameters for Conv2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

/// One `k x k` filter per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct DepthwiseConv2d {
    /// `[k, k, c]`
    pub weight: Tensor,
    pub bias: Option<Tensor>,
    pub stride: usize,
    pub pad: usize,
}

impl DepthwiseConv2d {
    pub fn init<R: Rng + ?Sized>(
        channels: usize,
        kernel: usize,
        stride: usize,
        pad: usize,
        rng: &mut R,
    ) -> Self {
        let b = fan_in_bound(kernel * kernel);
        Self {
            weight: Tensor::uniform(&[kernel, kernel, channels], b, rng),
            bias: Some(Tensor::uniform(&[channels], b, rng)),
            stride,
            pad,
        }
    }

    pub fn same3x3<R: Rng + ?Sized>(channels: usize, rng: &mut R) -> Self {
        Self::init(channels, 3, 1, 1, rng)
    }

    /// Centre tap 1, everything else 0.
    pub fn identity(channels: usize, kernel: usize) -> Self {
        let mid = kernel / 2;
        Self {
            weight: Tensor::from_fn(&[kernel, kernel, channels], |i| {
                let ky = i / (kernel * channels);
                let kx = (i / channels) % kernel;
                if ky == mid && kx == mid {
                    1.0
                } else {
                    0.0
                }
            }),
            bias: None,
            stride: 1,
            pad: mid,
        }
    }

    pub fn kernel(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.weight.shape()[2]
    }
}

impl Parameters for DepthwiseConv2d {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            f(&join(prefix, "bias"), b);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "weight"), &mut self.weight);
        if let Some(b) = &mut self.bias {
            f(&join(prefix, "bias"), b);
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerNorm {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub eps: f32,
}

impl LayerNorm {
    pub const DEFAULT_EPS: f32 = 1e-5;

    pub fn new(d: usize) -> Self {
        Self {
            gamma: Tensor::full(&[d], 1.0),
            beta: Tensor::zeros(&[d]),
            eps: Self::DEFAULT_EPS,
        }
    }

    pub fn dim(&self) -> usize {
        self.gamma.len()
    }
}

impl Parameters for LayerNorm {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        f(&join(prefix, "gamma"), &self.gamma);
        f(&join(prefix, "beta"), &self.beta);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        f(&join(prefix, "gamma"), &mut self.gamma);
        f(&join(prefix, "beta"), &mut self.beta);
    }
}

/// Channel gate: `s = FC2(FC1(GAP(x)))`, optionally squashed by a sigmoid,
/// then `x * s` per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct SqueezeExcite {
    pub fc1: Linear,
    pub fc2: Linear,
    pub sigmoid: bool,
}

impl SqueezeExcite {
    pub fn init<R: Rng + ?Sized>(
        d: usize,
        ratio: usize,
        sigmoid: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let hidden = Self::hidden_width(d, ratio)?;
        Ok(Self {
            fc1: Linear::init(d, hidden, true, rng),
            fc2: Linear::init(hidden, d, true, rng),
            sigmoid,
        })
    }

    pub fn hidden_width(d: usize, ratio: usize) -> Result<usize> {
        if ratio == 0 || !d.is_multiple_of(ratio) {
            return Err(Error::Config(format!(
                "squeeze-excite width {d} is not divisible by reduction {ratio}"
            )));
        }
        Ok(d / ratio)
    }
}

impl Parameters for SqueezeExcite {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_param_count_with_bias() {
        let l = Linear::zeros(2, 3, true);
        assert_eq!(l.num_params(), 9);
    }

    #[test]
    fn linear_identity_is_identity() {
        let x = Tensor::from_fn(&[3, 4], |i| i as f32 - 5.0);
        assert_eq!(Linear::identity(4).forward(&x).unwrap(), x);
    }

    #[test]
    fn se_rejects_indivisible_width() {
        let mut rng = rand::rng();
        assert!(matches!(
            SqueezeExcite::init(6, 4, true, &mut rng),
            Err(Error::Config(_))
        ));
    }
}

//! Multi-head self-attention with spatially reduced keys and values.
//!
//! Keys and values are computed from a stride-`k` depthwise `k x k`
//! convolution of the input map, so a map of `HW` tokens attends over
//! `HW / k^2` reduced tokens. Each head adds its own learnable bias matrix to
//! the scaled scores before the softmax.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::nn::{join, DepthwiseConv2d, Linear, Parameters};
use crate::tensor::{depthwise_conv2d, softmax_in_place, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct LsaParams {
    pub q_proj: Linear,
    pub k_proj: Linear,
    pub v_proj: Linear,
    pub out_proj: Linear,
    /// Stride-`k` depthwise reduction; absent when `k == 1`.
    pub kv_down: Option<DepthwiseConv2d>,
    /// `[heads, HW, HW / k^2]`
    pub bias: Tensor,
    pub heads: usize,
    pub stride: usize,
}

impl LsaParams {
    /// Parameters for a `height x width x dim` map. Score biases start at zero.
    pub fn init<R: Rng + ?Sized>(
        dim: usize,
        heads: usize,
        stride: usize,
        height: usize,
        width: usize,
        rng: &mut R,
    ) -> Result<Self> {
        Self::check_geometry(dim, heads, stride, height, width)?;
        let reduced = (height / stride) * (width / stride);
        Ok(Self {
            q_proj: Linear::init(dim, dim, true, rng),
            k_proj: Linear::init(dim, dim, true, rng),
            v_proj: Linear::init(dim, dim, true, rng),
            out_proj: Linear::init(dim, dim, true, rng),
            kv_down: (stride > 1).then(|| DepthwiseConv2d::init(dim, stride, stride, 0, rng)),
            bias: Tensor::zeros(&[heads, height * width, reduced]),
            heads,
            stride,
        })
    }

    pub fn check_geometry(
        dim: usize,
        heads: usize,
        stride: usize,
        height: usize,
        width: usize,
    ) -> Result<()> {
        if heads == 0 || !dim.is_multiple_of(heads) {
            return Err(Error::Config(format!(
                "{heads} heads do not divide attention width {dim}"
            )));
        }
        if stride == 0 || !height.is_multiple_of(stride) || !width.is_multiple_of(stride) {
            return Err(Error::Geometry(format!(
                "{height}x{width} map is not divisible by key/value stride {stride}"
            )));
        }
        Ok(())
    }

    pub fn dim(&self) -> usize {
        self.q_proj.d_in()
    }

    pub fn head_dim(&self) -> usize {
        self.dim() / self.heads
    }
}

impl Parameters for LsaParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.q_proj.visit(&join(prefix, "q_proj"), f);
        self.k_proj.visit(&join(prefix, "k_proj"), f);
        self.v_proj.visit(&join(prefix, "v_proj"), f);
        self.out_proj.visit(&join(prefix, "out_proj"), f);
        if let Some(dw) = &self.kv_down {
            dw.visit(&join(prefix, "kv_down"), f);
        }
        f(&join(prefix, "bias"), &self.bias);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.q_proj.visit_mut(&join(prefix, "q_proj"), f);
        self.k_proj.visit_mut(&join(prefix, "k_proj"), f);
        self.v_proj.visit_mut(&join(prefix, "v_proj"), f);
        self.out_proj.visit_mut(&join(prefix, "out_proj"), f);
        if let Some(dw) = &mut self.kv_down {
            dw.visit_mut(&join(prefix, "kv_down"), f);
        }
        f(&join(prefix, "bias"), &mut self.bias);
    }
}

/// Spatial reduction of an `[H, W, d]` map by `k` in each direction.
pub fn downsample_kv(x: &Tensor, dw: Option<&DepthwiseConv2d>, k: usize) -> Result<Tensor> {
    let (h, w, _) = x.dims3()?;
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(Error::Geometry(format!(
            "{h}x{w} map is not divisible by stride {k}"
        )));
    }
    match dw {
        None if k == 1 => Ok(x.clone()),
        None => Err(Error::Config(format!(
            "stride {k} needs a reduction kernel"
        ))),
        Some(dw) => {
            if dw.kernel() != k || dw.stride != k || dw.pad != 0 {
                return Err(Error::Config(format!(
                    "reduction kernel must be {k}x{k}, stride {k}, no padding"
                )));
            }
            depthwise_conv2d(x, dw)
        }
    }
}

/// Attention output before the output projection, plus optionally the
/// per-head attention matrices `[heads][HW x M]`.
fn attend(x: &Tensor, p: &LsaParams, mut keep: Option<&mut Vec<Tensor>>) -> Result<Tensor> {
    let (h, w, d) = x.dims3()?;
    if d != p.dim() {
        return Err(Error::Dimension(format!(
            "attention built for width {}, input has {d}",
            p.dim()
        )));
    }
    LsaParams::check_geometry(d, p.heads, p.stride, h, w)?;
    let n = h * w;
    let m = n / (p.stride * p.stride);
    if p.bias.shape() != [p.heads, n, m] {
        return Err(Error::Dimension(format!(
            "score bias is {:?}, map needs {:?}",
            p.bias.shape(),
            [p.heads, n, m]
        )));
    }
    let q = p.q_proj.forward(x)?;
    let reduced = downsample_kv(x, p.kv_down.as_ref(), p.stride)?;
    let k = p.k_proj.forward(&reduced)?;
    let v = p.v_proj.forward(&reduced)?;
    if !q.is_finite() || !k.is_finite() || !v.is_finite() {
        return Err(Error::Numeric("attention projections".into()));
    }
    let dk = p.head_dim();
    let scale = 1.0 / (dk as f32).sqrt();
    let (qd, kd, vd, bd) = (q.data(), k.data(), v.data(), p.bias.data());

    let mut out = vec![0.0f32; n * d];
    let mut scores = vec![0.0f32; m];
    for head in 0..p.heads {
        let off = head * dk;
        let mut weights = keep.as_ref().map(|_| Vec::with_capacity(n * m));
        for i in 0..n {
            let qi = &qd[i * d + off..i * d + off + dk];
            let brow = &bd[(head * n + i) * m..(head * n + i + 1) * m];
            for (j, s) in scores.iter_mut().enumerate() {
                let kj = &kd[j * d + off..j * d + off + dk];
                let mut dot = 0.0f32;
                for (a, b) in qi.iter().zip(kj) {
                    dot += a * b;
                }
                *s = dot * scale + brow[j];
            }
            softmax_in_place(&mut scores);
            let oi = &mut out[i * d + off..i * d + off + dk];
            for (j, &a) in scores.iter().enumerate() {
                let vj = &vd[j * d + off..j * d + off + dk];
                for (o, vv) in oi.iter_mut().zip(vj) {
                    *o += a * vv;
                }
            }
            if let Some(wt) = weights.as_mut() {
                wt.extend_from_slice(&scores);
            }
        }
        if let (Some(dst), Some(wt)) = (keep.as_deref_mut(), weights) {
            dst.push(Tensor::new(vec![n, m], wt)?);
        }
    }
    Tensor::new(vec![h, w, d], out)
}

pub fn lsa(x: &Tensor, p: &LsaParams) -> Result<Tensor> {
    p.out_proj.forward(&attend(x, p, None)?)
}

/// Per-head attention matrices, each `[HW, HW / k^2]` with stochastic rows.
pub fn attention_weights(x: &Tensor, p: &LsaParams) -> Result<Vec<Tensor>> {
    let mut w = Vec::with_capacity(p.heads);
    attend(x, p, Some(&mut w))?;
    Ok(w)
}

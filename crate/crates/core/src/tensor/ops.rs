use super::nn::{Conv2d, DepthwiseConv2d, LayerNorm, SqueezeExcite};
use super::Tensor;
use crate::error::{Error, Result};

/// `a [m x k] * b [k x n]`, accumulated left to right along `k`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = a.dims2()?;
    let (k2, n) = b.dims2()?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner dims differ: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0f32; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            for (o, bv) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    Tensor::new(vec![m, n], out)
}

/// Max-subtracted softmax over one slice. Inputs must be finite.
pub fn softmax_in_place(row: &mut [f32]) {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let mut sum = 0.0f32;
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    let inv = 1.0 / sum;
    for v in row.iter_mut() {
        *v *= inv;
    }
}

pub fn softmax_rows(m: &Tensor) -> Result<Tensor> {
    let (_, cols) = m.dims2()?;
    if !m.is_finite() {
        return Err(Error::Numeric("softmax input".into()));
    }
    let mut out = m.clone();
    for row in out.data_mut().chunks_exact_mut(cols) {
        softmax_in_place(row);
    }
    Ok(out)
}

fn normalize_into(x: &[f32], ln: &LayerNorm, out: &mut [f32]) {
    let d = x.len() as f32;
    let mean = x.iter().sum::<f32>() / d;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d;
    let inv = 1.0 / (var + ln.eps).sqrt();
    for (((o, &v), g), b) in out
        .iter_mut()
        .zip(x)
        .zip(ln.gamma.data())
        .zip(ln.beta.data())
    {
        *o = (v - mean) * inv * g + b;
    }
}

/// Normalizes a single `d`-vector (biased variance).
pub fn layer_norm(x: &[f32], ln: &LayerNorm) -> Result<Vec<f32>> {
    if x.len() != ln.dim() {
        return Err(Error::Dimension(format!(
            "layer norm over {} channels applied to {}",
            ln.dim(),
            x.len()
        )));
    }
    let mut out = vec![0.0; x.len()];
    normalize_into(x, ln, &mut out);
    Ok(out)
}

/// Layer norm over the last axis of every row.
pub fn layer_norm_rows(x: &Tensor, ln: &LayerNorm) -> Result<Tensor> {
    let d = ln.dim();
    if *x.shape().last().unwrap() != d {
        return Err(Error::Dimension(format!(
            "layer norm over {d} channels applied to {:?}",
            x.shape()
        )));
    }
    let mut out = Tensor::zeros(x.shape());
    for (xr, or) in x
        .data()
        .chunks_exact(d)
        .zip(out.data_mut().chunks_exact_mut(d))
    {
        normalize_into(xr, ln, or);
    }
    Ok(out)
}

fn out_extent(size: usize, kernel: usize, stride: usize, pad: usize) -> Result<usize> {
    if stride == 0 || kernel == 0 || size + 2 * pad < kernel {
        return Err(Error::Geometry(format!(
            "extent {size} with kernel {kernel}, stride {stride}, pad {pad}"
        )));
    }
    Ok((size + 2 * pad - kernel) / stride + 1)
}

pub fn conv2d(x: &Tensor, p: &Conv2d) -> Result<Tensor> {
    let (h, w, c_in) = x.dims3()?;
    let (c_out, k) = (p.c_out(), p.kernel());
    if c_in != p.c_in() {
        return Err(Error::Dimension(format!(
            "conv expects {} input channels, got {c_in}",
            p.c_in()
        )));
    }
    let oh = out_extent(h, k, p.stride, p.pad)?;
    let ow = out_extent(w, k, p.stride, p.pad)?;
    let (xd, wd) = (x.data(), p.weight.data());
    let mut out = vec![0.0f32; oh * ow * c_out];
    for oy in 0..oh {
        for ox in 0..ow {
            let dst = &mut out[(oy * ow + ox) * c_out..(oy * ow + ox + 1) * c_out];
            if let Some(b) = &p.bias {
                dst.copy_from_slice(b.data());
            }
            for ky in 0..k {
                let iy = (oy * p.stride + ky) as isize - p.pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * p.stride + kx) as isize - p.pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = &xd[(iy as usize * w + ix as usize) * c_in..][..c_in];
                    for (co, o) in dst.iter_mut().enumerate() {
                        let wr = &wd[((co * k + ky) * k + kx) * c_in..][..c_in];
                        let mut acc = 0.0f32;
                        for (a, b) in src.iter().zip(wr) {
                            acc += a * b;
                        }
                        *o += acc;
                    }
                }
            }
        }
    }
    Tensor::new(vec![oh, ow, c_out], out)
}

pub fn depthwise_conv2d(x: &Tensor, p: &DepthwiseConv2d) -> Result<Tensor> {
    let (h, w, c) = x.dims3()?;
    let k = p.kernel();
    if c != p.channels() {
        return Err(Error::Dimension(format!(
            "depthwise conv has {} channels, input has {c}",
            p.channels()
        )));
    }
    let oh = out_extent(h, k, p.stride, p.pad)?;
    let ow = out_extent(w, k, p.stride, p.pad)?;
    let (xd, wd) = (x.data(), p.weight.data());
    let mut out = vec![0.0f32; oh * ow * c];
    for oy in 0..oh {
        for ox in 0..ow {
            let dst = &mut out[(oy * ow + ox) * c..(oy * ow + ox + 1) * c];
            if let Some(b) = &p.bias {
                dst.copy_from_slice(b.data());
            }
            for ky in 0..k {
                let iy = (oy * p.stride + ky) as isize - p.pad as isize;
                if iy < 0 || iy >= h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * p.stride + kx) as isize - p.pad as isize;
                    if ix < 0 || ix >= w as isize {
                        continue;
                    }
                    let src = &xd[(iy as usize * w + ix as usize) * c..][..c];
                    let wr = &wd[(ky * k + kx) * c..][..c];
                    for ((o, a), b) in dst.iter_mut().zip(src).zip(wr) {
                        *o += a * b;
                    }
                }
            }
        }
    }
    Tensor::new(vec![oh, ow, c], out)
}

/// Mean over all spatial positions of an `[H, W, d]` map.
pub fn global_avg_pool(x: &Tensor) -> Result<Vec<f32>> {
    let (h, w, d) = x.dims3()?;
    let mut acc = vec![0.0f64; d];
    for px in x.data().chunks_exact(d) {
        for (a, &v) in acc.iter_mut().zip(px) {
            *a += v as f64;
        }
    }
    let n = (h * w) as f64;
    Ok(acc.into_iter().map(|a| (a / n) as f32).collect())
}

/// Per-channel gate values for `x`, in `(0, 1)` when the sigmoid is on.
pub fn se_scales(x: &Tensor, p: &SqueezeExcite) -> Result<Vec<f32>> {
    let (_, _, d) = x.dims3()?;
    let pooled = Tensor::new(vec![1, d], global_avg_pool(x)?)?;
    let logits = p.fc2.forward(&p.fc1.forward(&pooled)?)?;
    if logits.len() != d {
        return Err(Error::Dimension(format!(
            "squeeze-excite produces {} gates for {d} channels",
            logits.len()
        )));
    }
    Ok(if p.sigmoid {
        logits.data().iter().map(|&v| sigmoid(v)).collect()
    } else {
        logits.into_data()
    })
}

pub fn se_gate(x: &Tensor, p: &SqueezeExcite) -> Result<Tensor> {
    let d = x.dims3()?.2;
    let scales = se_scales(x, p)?;
    let mut out = x.clone();
    for px in out.data_mut().chunks_exact_mut(d) {
        for (v, s) in px.iter_mut().zip(&scales) {
            *v *= s;
        }
    }
    Ok(out)
}

pub fn sigmoid(v: f32) -> f32 {
    1.0 / (1.0 + (-v).exp())
}

pub fn softplus(v: f32) -> f32 {
    if v > 20.0 {
        v
    } else {
        v.exp().ln_1p()
    }
}

pub fn silu(v: f32) -> f32 {
    v * sigmoid(v)
}

/// tanh approximation of GELU.
pub fn gelu(v: f32) -> f32 {
    const C: f32 = 0.797_884_6; // sqrt(2/pi)
    0.5 * v * (1.0 + (C * (v + 0.044_715 * v * v * v)).tanh())
}

use rand::Rng;

use super::directions::{multi_direction_flatten, unflatten};
use super::{selective_scan, SsmParams};
use crate::error::{Error, Result};
use crate::tensor::nn::{join, DepthwiseConv2d, LayerNorm, Linear, Parameters};
use crate::tensor::{depthwise_conv2d, layer_norm_rows, silu, Tensor};

/// Scans an `[H, W, C]` map along all four raster directions with shared
/// parameters and averages the re-aligned outputs.
pub fn vssm(x: &Tensor, p: &SsmParams) -> Result<Tensor> {
    let seqs = multi_direction_flatten(x)?;
    let (h, w) = (seqs.height, seqs.width);
    let mut acc: Option<Tensor> = None;
    for (order, seq) in seqs.orders.iter().zip(&seqs.sequences) {
        let y = unflatten(&selective_scan(seq, p)?, order, h, w)?;
        acc = Some(match acc {
            None => y,
            Some(a) => a.add(&y)?,
        });
    }
    Ok(acc.expect("four directions").scale(0.25))
}

/// Multi-direction gated scan branch:
/// `gate(x) * LN(VSSM(DW(in_proj(x))))`.
#[derive(Clone, Debug, PartialEq)]
pub struct MdmParams {
    pub in_proj: Linear,
    pub gate_proj: Linear,
    pub dw: DepthwiseConv2d,
    pub ssm: SsmParams,
    pub norm: LayerNorm,
    /// Applies SiLU to the gate branch. Off by default, leaving the gate linear.
    pub gate_silu: bool,
}

impl MdmParams {
    pub fn init<R: Rng + ?Sized>(channels: usize, state_size: usize, rng: &mut R) -> Self {
        Self {
            in_proj: Linear::init(channels, channels, true, rng),
            gate_proj: Linear::init(channels, channels, true, rng),
            dw: DepthwiseConv2d::same3x3(channels, rng),
            ssm: SsmParams::init(channels, state_size, rng),
            norm: LayerNorm::new(channels),
            gate_silu: false,
        }
    }

    pub fn channels(&self) -> usize {
        self.in_proj.d_in()
    }
}

impl Parameters for MdmParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.in_proj.visit(&join(prefix, "in_proj"), f);
        self.gate_proj.visit(&join(prefix, "gate_proj"), f);
        self.dw.visit(&join(prefix, "dw"), f);
        self.ssm.visit(&join(prefix, "ssm"), f);
        self.norm.visit(&join(prefix, "norm"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.in_proj.visit_mut(&join(prefix, "in_proj"), f);
        self.gate_proj.visit_mut(&join(prefix, "gate_proj"), f);
        self.dw.visit_mut(&join(prefix, "dw"), f);
        self.ssm.visit_mut(&join(prefix, "ssm"), f);
        self.norm.visit_mut(&join(prefix, "norm"), f);
    }
}

pub fn mdm(x: &Tensor, p: &MdmParams) -> Result<Tensor> {
    let (_, _, c) = x.dims3()?;
    if c != p.channels() {
        return Err(Error::Dimension(format!(
            "MDM built for {} channels, input has {c}",
            p.channels()
        )));
    }
    let mut gate = p.gate_proj.forward(x)?;
    if p.gate_silu {
        gate = gate.map(silu);
    }
    let inner = depthwise_conv2d(&p.in_proj.forward(x)?, &p.dw)?;
    let scanned = layer_norm_rows(&vssm(&inner, &p.ssm)?, &p.norm)?;
    gate.mul(&scanned)
}

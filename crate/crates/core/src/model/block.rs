//! The hybrid block and its four sub-modules.
//!
//! ```text
//! Y  = SCEM(X)
//! Z  = DSDA(LN(Y)) + MBEM(Y)
//! X' = LFFN(LN(Z)) + Z
//! ```

use rand::Rng;

use crate::attention::{lsa, LsaParams};
use crate::error::{Error, Result};
use crate::ssm::{mdm, MdmParams};
use crate::tensor::nn::{join, Conv2d, DepthwiseConv2d, LayerNorm, Parameters, SqueezeExcite};
use crate::tensor::{conv2d, depthwise_conv2d, layer_norm_rows, se_gate, Tensor};

/// Spatial-channel enhancement: `Conv(SE(DW(Conv(x)))) + x`.
#[derive(Clone, Debug, PartialEq)]
pub struct ScemParams {
    pub conv_in: Conv2d,
    pub dw: DepthwiseConv2d,
    pub se: SqueezeExcite,
    pub conv_out: Conv2d,
}

impl ScemParams {
    pub fn init<R: Rng + ?Sized>(
        d: usize,
        se_ratio: usize,
        se_sigmoid: bool,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            conv_in: Conv2d::same3x3(d, d, rng),
            dw: DepthwiseConv2d::same3x3(d, rng),
            se: SqueezeExcite::init(d, se_ratio, se_sigmoid, rng)?,
            conv_out: Conv2d::same3x3(d, d, rng),
        })
    }
}

impl Parameters for ScemParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.conv_in.visit(&join(prefix, "conv_in"), f);
        self.dw.visit(&join(prefix, "dw"), f);
        self.se.visit(&join(prefix, "se"), f);
        self.conv_out.visit(&join(prefix, "conv_out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.conv_in.visit_mut(&join(prefix, "conv_in"), f);
        self.dw.visit_mut(&join(prefix, "dw"), f);
        self.se.visit_mut(&join(prefix, "se"), f);
        self.conv_out.visit_mut(&join(prefix, "conv_out"), f);
    }
}

pub fn scem(x: &Tensor, p: &ScemParams) -> Result<Tensor> {
    let y = conv2d(x, &p.conv_in)?;
    let y = depthwise_conv2d(&y, &p.dw)?;
    let y = se_gate(&y, &p.se)?;
    conv2d(&y, &p.conv_out)?.add(x)
}

/// Multi-branch enhancement: `DW(x) + SE(x) + x`.
#[derive(Clone, Debug, PartialEq)]
pub struct MbemParams {
    pub dw: DepthwiseConv2d,
    pub se: SqueezeExcite,
}

impl MbemParams {
    pub fn init<R: Rng + ?Sized>(
        d: usize,
        se_ratio: usize,
        se_sigmoid: bool,
        rng: &mut R,
    ) -> Result<Self> {
        Ok(Self {
            dw: DepthwiseConv2d::same3x3(d, rng),
            se: SqueezeExcite::init(d, se_ratio, se_sigmoid, rng)?,
        })
    }
}

impl Parameters for MbemParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.dw.visit(&join(prefix, "dw"), f);
        self.se.visit(&join(prefix, "se"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.dw.visit_mut(&join(prefix, "dw"), f);
        self.se.visit_mut(&join(prefix, "se"), f);
    }
}

pub fn mbem(x: &Tensor, p: &MbemParams) -> Result<Tensor> {
    depthwise_conv2d(x, &p.dw)?.add(&se_gate(x, &p.se)?)?.add(x)
}

/// Feed-forward: `Conv(DW(u) + u)` with `u = Conv(x)` at the expanded width.
#[derive(Clone, Debug, PartialEq)]
pub struct LffnParams {
    pub conv_in: Conv2d,
    pub dw: DepthwiseConv2d,
    pub conv_out: Conv2d,
}

impl LffnParams {
    pub fn init<R: Rng + ?Sized>(d: usize, ratio: usize, rng: &mut R) -> Self {
        let hidden = d * ratio;
        Self {
            conv_in: Conv2d::same3x3(d, hidden, rng),
            dw: DepthwiseConv2d::same3x3(hidden, rng),
            conv_out: Conv2d::same3x3(hidden, d, rng),
        }
    }
}

impl Parameters for LffnParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.conv_in.visit(&join(prefix, "conv_in"), f);
        self.dw.visit(&join(prefix, "dw"), f);
        self.conv_out.visit(&join(prefix, "conv_out"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.conv_in.visit_mut(&join(prefix, "conv_in"), f);
        self.dw.visit_mut(&join(prefix, "dw"), f);
        self.conv_out.visit_mut(&join(prefix, "conv_out"), f);
    }
}

pub fn lffn(x: &Tensor, p: &LffnParams) -> Result<Tensor> {
    let u = conv2d(x, &p.conv_in)?;
    let f = depthwise_conv2d(&u, &p.dw)?.add(&u)?;
    conv2d(&f, &p.conv_out)
}

/// Channel-split dual branch: scan on the first half, attention on the second.
#[derive(Clone, Debug, PartialEq)]
pub struct DsdaParams {
    pub mdm: MdmParams,
    pub lsa: LsaParams,
}

impl DsdaParams {
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng + ?Sized>(
        d: usize,
        heads: usize,
        kv_stride: usize,
        state_size: usize,
        height: usize,
        width: usize,
        gate_silu: bool,
        rng: &mut R,
    ) -> Result<Self> {
        if !d.is_multiple_of(2) {
            return Err(Error::Config(format!("dual-branch width {d} is odd")));
        }
        let mut mdm = MdmParams::init(d / 2, state_size, rng);
        mdm.gate_silu = gate_silu;
        Ok(Self {
            mdm,
            lsa: LsaParams::init(d / 2, heads, kv_stride, height, width, rng)?,
        })
    }
}

impl Parameters for DsdaParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.mdm.visit(&join(prefix, "mdm"), f);
        self.lsa.visit(&join(prefix, "lsa"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.mdm.visit_mut(&join(prefix, "mdm"), f);
        self.lsa.visit_mut(&join(prefix, "lsa"), f);
    }
}

pub fn dsda(x: &Tensor, p: &DsdaParams) -> Result<Tensor> {
    let (_, _, d) = x.dims3()?;
    if d % 2 != 0 {
        return Err(Error::Config(format!("dual-branch width {d} is odd")));
    }
    let half = d / 2;
    let scan = mdm(&x.channel_slice(0, half)?, &p.mdm)?;
    let attn = lsa(&x.channel_slice(half, half)?, &p.lsa)?;
    Tensor::concat_channels(&[&scan, &attn])
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub scem: ScemParams,
    pub norm1: LayerNorm,
    pub dsda: DsdaParams,
    pub mbem: MbemParams,
    pub norm2: LayerNorm,
    pub lffn: LffnParams,
}

impl Parameters for BlockParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.scem.visit(&join(prefix, "scem"), f);
        self.norm1.visit(&join(prefix, "norm1"), f);
        self.dsda.visit(&join(prefix, "dsda"), f);
        self.mbem.visit(&join(prefix, "mbem"), f);
        self.norm2.visit(&join(prefix, "norm2"), f);
        self.lffn.visit(&join(prefix, "lffn"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.scem.visit_mut(&join(prefix, "scem"), f);
        self.norm1.visit_mut(&join(prefix, "norm1"), f);
        self.dsda.visit_mut(&join(prefix, "dsda"), f);
        self.mbem.visit_mut(&join(prefix, "mbem"), f);
        self.norm2.visit_mut(&join(prefix, "norm2"), f);
        self.lffn.visit_mut(&join(prefix, "lffn"), f);
    }
}

pub fn dsdformer_block(x: &Tensor, p: &BlockParams) -> Result<Tensor> {
    let y = scem(x, &p.scem)?;
    let z = dsda(&layer_norm_rows(&y, &p.norm1)?, &p.dsda)?.add(&mbem(&y, &p.mbem)?)?;
    lffn(&layer_norm_rows(&z, &p.norm2)?, &p.lffn)?.add(&z)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::nn::Linear;
    use crate::tensor::sigmoid;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn zero_conv(c_in: usize, c_out: usize) -> Conv2d {
        Conv2d {
            weight: Tensor::zeros(&[c_out, 3, 3, c_in]),
            bias: Some(Tensor::zeros(&[c_out])),
            stride: 1,
            pad: 1,
        }
    }

    fn zero_dw(c: usize) -> DepthwiseConv2d {
        DepthwiseConv2d {
            weight: Tensor::zeros(&[3, 3, c]),
            bias: Some(Tensor::zeros(&[c])),
            stride: 1,
            pad: 1,
        }
    }

    fn zero_se(d: usize) -> SqueezeExcite {
        SqueezeExcite {
            fc1: Linear::zeros(d, d / 2, true),
            fc2: Linear::zeros(d / 2, d, true),
            sigmoid: true,
        }
    }

    fn assert_close(a: &Tensor, b: &Tensor, tol: f32) {
        assert_eq!(a.shape(), b.shape());
        for (x, y) in a.data().iter().zip(b.data()) {
            assert!((x - y).abs() <= tol * (1.0 + y.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn scem_zero_branch_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut p = ScemParams::init(4, 2, true, &mut rng).unwrap();
        p.conv_in = zero_conv(4, 4);
        p.conv_out = zero_conv(4, 4);
        let x = Tensor::uniform(&[3, 5, 4], 3.0, &mut rng);
        assert_eq!(scem(&x, &p).unwrap(), x);
    }

    #[test]
    fn scem_single_pixel_hand_case() {
        // 1x1x2 map: with padding only the centre tap of each 3x3 kernel sees data
        let mut conv_in = zero_conv(2, 2);
        let mut conv_out = zero_conv(2, 2);
        let mut dw = zero_dw(2);
        let centre = |co: usize, ci: usize| ((co * 3 + 1) * 3 + 1) * 2 + ci;
        // conv_in = [[1, 2], [0, -1]] + bias [0.5, 0]
        conv_in.weight.data_mut()[centre(0, 0)] = 1.0;
        conv_in.weight.data_mut()[centre(0, 1)] = 2.0;
        conv_in.weight.data_mut()[centre(1, 1)] = -1.0;
        conv_in.bias = Some(Tensor::new(vec![2], vec![0.5, 0.0]).unwrap());
        // dw centre taps [2, 3]
        dw.weight.data_mut()[(3 + 1) * 2] = 2.0;
        dw.weight.data_mut()[(3 + 1) * 2 + 1] = 3.0;
        // conv_out = identity
        conv_out.weight.data_mut()[centre(0, 0)] = 1.0;
        conv_out.weight.data_mut()[centre(1, 1)] = 1.0;
        let mut se = zero_se(2);
        se.fc2.bias = Some(Tensor::new(vec![2], vec![1.0, -1.0]).unwrap());
        let p = ScemParams {
            conv_in,
            dw,
            se,
            conv_out,
        };

        let x = Tensor::new(vec![1, 1, 2], vec![1.0, 2.0]).unwrap();
        // conv_in: [1 + 4 + 0.5, -2] = [5.5, -2]; dw: [11, -6]
        // se gates: sigmoid(1), sigmoid(-1); plus residual
        let expect = [11.0 * sigmoid(1.0) + 1.0, -6.0 * sigmoid(-1.0) + 2.0];
        let y = scem(&x, &p).unwrap();
        assert_abs_diff_eq!(y.data()[0], expect[0], epsilon = 1e-5);
        assert_abs_diff_eq!(y.data()[1], expect[1], epsilon = 1e-5);
    }

    #[test]
    fn mbem_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = MbemParams::init(4, 2, true, &mut rng).unwrap();
        let z = Tensor::zeros(&[2, 2, 4]);
        // zero input: DW gives its bias, so zero both biases for the x = 0 case
        let mut q = p.clone();
        q.dw.bias = None;
        assert_eq!(mbem(&z, &q).unwrap(), z);

        let x = Tensor::uniform(&[3, 3, 4], 1.0, &mut rng);
        let mut r = p.clone();
        r.dw = zero_dw(4);
        let expect = se_gate(&x, &r.se).unwrap().add(&x).unwrap();
        assert_eq!(mbem(&x, &r).unwrap(), expect);

        // 1x1x2 hand case: DW centre taps [2, -1], SE gate logits [0, 0] -> 0.5
        let hand = MbemParams {
            dw: {
                let mut dw = zero_dw(2);
                dw.weight.data_mut()[8] = 2.0;
                dw.weight.data_mut()[9] = -1.0;
                dw
            },
            se: zero_se(2),
        };
        let x = Tensor::new(vec![1, 1, 2], vec![3.0, 4.0]).unwrap();
        let y = mbem(&x, &hand).unwrap();
        assert_eq!(y.data(), &[6.0 + 1.5 + 3.0, -4.0 + 2.0 + 4.0]);
    }

    #[test]
    fn lffn_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = LffnParams::init(4, 2, &mut rng);
        let x = Tensor::uniform(&[3, 4, 4], 1.0, &mut rng);
        assert_eq!(lffn(&x, &p).unwrap().shape(), &[3, 4, 4]);

        p.dw = zero_dw(8);
        let expect = conv2d(&conv2d(&x, &p.conv_in).unwrap(), &p.conv_out).unwrap();
        assert_close(&lffn(&x, &p).unwrap(), &expect, 1e-6);

        // 1x1x1 hand case, expansion 1: conv_in 2x + 1, dw centre 3, conv_out -x
        let mut conv_in = zero_conv(1, 1);
        conv_in.weight.data_mut()[4] = 2.0;
        conv_in.bias = Some(Tensor::new(vec![1], vec![1.0]).unwrap());
        let mut dw = zero_dw(1);
        dw.weight.data_mut()[4] = 3.0;
        let mut conv_out = zero_conv(1, 1);
        conv_out.weight.data_mut()[4] = -1.0;
        let hand = LffnParams {
            conv_in,
            dw,
            conv_out,
        };
        let x = Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap();
        // u = 5; F = 15 + 5 = 20; out = -20
        assert_eq!(lffn(&x, &hand).unwrap().data(), &[-20.0]);
    }

    #[test]
    fn dsda_halves_are_independent() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let p = DsdaParams::init(8, 2, 2, 4, 4, 4, false, &mut rng).unwrap();
        let x = Tensor::uniform(&[4, 4, 8], 1.0, &mut rng);
        let y = dsda(&x, &p).unwrap();
        assert_eq!(y.shape(), &[4, 4, 8]);

        let mut x2 = x.clone();
        for px in x2.data_mut().chunks_mut(8) {
            for v in &mut px[4..] {
                *v += 1.0;
            }
        }
        let y2 = dsda(&x2, &p).unwrap();
        for (a, b) in y.data().chunks(8).zip(y2.data().chunks(8)) {
            assert_eq!(a[..4], b[..4]);
        }

        let mut x3 = x.clone();
        for px in x3.data_mut().chunks_mut(8) {
            px[0] -= 0.5;
        }
        let y3 = dsda(&x3, &p).unwrap();
        for (a, b) in y.data().chunks(8).zip(y3.data().chunks(8)) {
            assert_eq!(a[4..], b[4..]);
        }

        let expect = Tensor::concat_channels(&[
            &mdm(&x.channel_slice(0, 4).unwrap(), &p.mdm).unwrap(),
            &lsa(&x.channel_slice(4, 4).unwrap(), &p.lsa).unwrap(),
        ])
        .unwrap();
        assert_eq!(y, expect);
    }

    #[test]
    fn dsda_rejects_odd_width() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        assert!(matches!(
            DsdaParams::init(7, 1, 1, 2, 2, 2, false, &mut rng),
            Err(Error::Config(_))
        ));
    }
}

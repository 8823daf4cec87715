//! The full backbone: stem, four hierarchical stages of hybrid blocks, and a
//! projection head.

pub mod block;
pub mod config;
pub mod store;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub use block::{
    dsda, dsdformer_block, lffn, mbem, scem, BlockParams, DsdaParams, LffnParams, MbemParams,
    ScemParams,
};
pub use config::{ModelConfig, StageConfig};
pub use store::{load_weights, save_weights};

use crate::error::{Error, Result};
use crate::tensor::nn::{join, Conv2d, LayerNorm, Linear, Parameters};
use crate::tensor::{conv2d, gelu, global_avg_pool, softmax_in_place, Tensor};

/// Three 3x3 convolutions with GELU: the first halves the resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct StemParams {
    pub conv1: Conv2d,
    pub conv2: Conv2d,
    pub conv3: Conv2d,
}

impl Parameters for StemParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.conv1.visit(&join(prefix, "conv1"), f);
        self.conv2.visit(&join(prefix, "conv2"), f);
        self.conv3.visit(&join(prefix, "conv3"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.conv1.visit_mut(&join(prefix, "conv1"), f);
        self.conv2.visit_mut(&join(prefix, "conv2"), f);
        self.conv3.visit_mut(&join(prefix, "conv3"), f);
    }
}

pub fn stem(image: &Tensor, p: &StemParams) -> Result<Tensor> {
    let x = conv2d(image, &p.conv1)?.map(gelu);
    let x = conv2d(&x, &p.conv2)?.map(gelu);
    Ok(conv2d(&x, &p.conv3)?.map(gelu))
}

#[derive(Clone, Debug, PartialEq)]
pub struct StageParams {
    /// Strided 3x3 convolution that downsamples and widens, followed by GELU.
    pub entry: Conv2d,
    pub blocks: Vec<BlockParams>,
}

impl Parameters for StageParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.entry.visit(&join(prefix, "entry"), f);
        for (i, b) in self.blocks.iter().enumerate() {
            b.visit(&join(prefix, &format!("blocks.{i}")), f);
        }
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.entry.visit_mut(&join(prefix, "entry"), f);
        for (i, b) in self.blocks.iter_mut().enumerate() {
            b.visit_mut(&join(prefix, &format!("blocks.{i}")), f);
        }
    }
}

pub fn stage(x: &Tensor, p: &StageParams) -> Result<Tensor> {
    let mut x = conv2d(x, &p.entry)?.map(gelu);
    for b in &p.blocks {
        x = dsdformer_block(&x, b)?;
    }
    Ok(x)
}

/// Per-pixel linear, global average pool, then a linear classifier.
#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub fc1: Linear,
    pub fc2: Linear,
}

impl Parameters for HeadParams {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.fc1.visit(&join(prefix, "fc1"), f);
        self.fc2.visit(&join(prefix, "fc2"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.fc1.visit_mut(&join(prefix, "fc1"), f);
        self.fc2.visit_mut(&join(prefix, "fc2"), f);
    }
}

/// Logits for an `[H, W, d]` feature map.
pub fn projection_head(x: &Tensor, p: &HeadParams) -> Result<Vec<f32>> {
    let pooled = global_avg_pool(&p.fc1.forward(x)?)?;
    let n = pooled.len();
    let logits = p.fc2.forward(&Tensor::new(vec![n], pooled)?)?;
    Ok(logits.into_data())
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub stem: StemParams,
    pub stages: Vec<StageParams>,
    pub head: HeadParams,
}

impl Parameters for ModelWeights {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor)) {
        self.stem.visit(&join(prefix, "stem"), f);
        for (i, s) in self.stages.iter().enumerate() {
            s.visit(&join(prefix, &format!("stages.{i}")), f);
        }
        self.head.visit(&join(prefix, "head"), f);
    }

    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor)) {
        self.stem.visit_mut(&join(prefix, "stem"), f);
        for (i, s) in self.stages.iter_mut().enumerate() {
            s.visit_mut(&join(prefix, &format!("stages.{i}")), f);
        }
        self.head.visit_mut(&join(prefix, "head"), f);
    }
}

impl ModelWeights {
    /// Seeded initialization: uniform in `±1/sqrt(fan_in)`, unit LayerNorm.
    pub fn init(config: &ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::init_with(config, &mut rng)
    }

    pub fn init_with<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let ds = config.stage_downsample;
        let strided = |c_in, c_out, rng: &mut R| Conv2d::init(c_in, c_out, 3, ds, 1, rng);
        let d1 = config.stem_width();
        let stem = StemParams {
            conv1: strided(config.input_channels, d1, rng),
            conv2: Conv2d::same3x3(d1, d1, rng),
            conv3: Conv2d::same3x3(d1, d1, rng),
        };
        let mut stages = Vec::with_capacity(config.stages.len());
        let mut prev = d1;
        for (i, s) in config.stages.iter().enumerate() {
            let (h, w) = config.stage_resolution(i);
            let entry = strided(prev, s.width, rng);
            let mut blocks = Vec::with_capacity(s.depth);
            for _ in 0..s.depth {
                blocks.push(BlockParams {
                    scem: ScemParams::init(s.width, config.se_ratio, config.se_sigmoid, rng)?,
                    norm1: LayerNorm::new(s.width),
                    dsda: DsdaParams::init(
                        s.width,
                        s.heads,
                        s.kv_stride,
                        s.state_size,
                        h,
                        w,
                        config.gate_silu,
                        rng,
                    )?,
                    mbem: MbemParams::init(s.width, config.se_ratio, config.se_sigmoid, rng)?,
                    norm2: LayerNorm::new(s.width),
                    lffn: LffnParams::init(s.width, config.ffn_ratio, rng),
                });
            }
            stages.push(StageParams { entry, blocks });
            prev = s.width;
        }
        let hidden = config.head_hidden();
        let head = HeadParams {
            fc1: Linear::init(prev, hidden, true, rng),
            fc2: Linear::init(hidden, config.num_classes, true, rng),
        };
        Ok(Self { stem, stages, head })
    }

    /// Every learnable tensor as `(path, shape)` in visiting order.
    pub fn shapes(&self) -> Vec<(String, Vec<usize>)> {
        let mut out = Vec::new();
        self.visit("", &mut |path, t| {
            out.push((path.to_string(), t.shape().to_vec()))
        });
        out
    }

    /// Checks that these weights have exactly the layout `config` implies.
    pub fn check_against(&self, config: &ModelConfig) -> Result<()> {
        let expected = ModelWeights::init(config, 0)?;
        check_layout(&expected, self)?;
        for (i, (a, b)) in expected.stages.iter().zip(&self.stages).enumerate() {
            for (j, (ba, bb)) in a.blocks.iter().zip(&b.blocks).enumerate() {
                let lsa = (&ba.dsda.lsa, &bb.dsda.lsa);
                if lsa.0.heads != lsa.1.heads || lsa.0.stride != lsa.1.stride {
                    return Err(Error::Validation {
                        path: format!("stages.{i}.blocks.{j}.dsda.lsa"),
                        reason: format!(
                            "heads/stride {}/{} but config says {}/{}",
                            lsa.1.heads, lsa.1.stride, lsa.0.heads, lsa.0.stride
                        ),
                    });
                }
            }
        }
        Ok(())
    }
}

/// Compares two weight sets path by path and names the first disagreement.
pub(crate) fn check_layout(expected: &ModelWeights, got: &ModelWeights) -> Result<()> {
    let want = expected.shapes();
    let have = got.shapes();
    for (i, (path, shape)) in want.iter().enumerate() {
        match have.get(i) {
            Some((p, s)) if p == path && s == shape => {}
            Some((p, s)) if p == path => {
                return Err(Error::Validation {
                    path: path.clone(),
                    reason: format!("shape {s:?}, expected {shape:?}"),
                })
            }
            _ => {
                return Err(Error::Validation {
                    path: path.clone(),
                    reason: "missing".into(),
                })
            }
        }
    }
    if let Some((path, _)) = have.get(want.len()) {
        return Err(Error::Validation {
            path: path.clone(),
            reason: "not part of this configuration".into(),
        });
    }
    Ok(())
}

/// Class probabilities for one `[H0, W0, C]` image.
pub fn forward(image: &Tensor, config: &ModelConfig, weights: &ModelWeights) -> Result<Vec<f32>> {
    weights.check_against(config)?;
    forward_unchecked(image, config, weights)
}

/// [`forward`] without the weight-layout check, for repeated calls on
/// weights already known to match.
pub fn forward_unchecked(
    image: &Tensor,
    config: &ModelConfig,
    weights: &ModelWeights,
) -> Result<Vec<f32>> {
    let want = [
        config.input_height,
        config.input_width,
        config.input_channels,
    ];
    if image.shape() != want {
        return Err(Error::Dimension(format!(
            "image shape {:?}, expected {want:?}",
            image.shape()
        )));
    }
    let mut x = stem(image, &weights.stem)?;
    for s in &weights.stages {
        x = stage(&x, s)?;
    }
    let mut p = projection_head(&x, &weights.head)?;
    if p.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite logits".into()));
    }
    softmax_in_place(&mut p);
    Ok(p)
}

/// Feature-map shape after the stem and after each stage, in order.
pub fn stage_shapes(image: &Tensor, weights: &ModelWeights) -> Result<Vec<Vec<usize>>> {
    let mut x = stem(image, &weights.stem)?;
    let mut out = vec![x.shape().to_vec()];
    for s in &weights.stages {
        x = stage(&x, s)?;
        out.push(x.shape().to_vec());
    }
    Ok(out)
}

fn conv_count(c_in: usize, c_out: usize, k: usize) -> usize {
    c_out * k * k * c_in + c_out
}

fn dw_count(c: usize, k: usize) -> usize {
    k * k * c + c
}

fn linear_count(d_in: usize, d_out: usize) -> usize {
    d_out * d_in + d_out
}

/// Closed-form number of learnable scalars for `config`.
pub fn count_params(config: &ModelConfig) -> Result<usize> {
    config.validate()?;
    let r = config.se_ratio;
    let se = |d: usize| linear_count(d, d / r) + linear_count(d / r, d);
    let d1 = config.stem_width();
    let mut total = conv_count(config.input_channels, d1, 3) + 2 * conv_count(d1, d1, 3);
    let mut prev = d1;
    for (i, s) in config.stages.iter().enumerate() {
        let (h, w) = config.stage_resolution(i);
        let d = s.width;
        let c = d / 2;
        let n = s.state_size;
        let k = s.kv_stride;

        let scem = 2 * conv_count(d, d, 3) + dw_count(d, 3) + se(d);
        let ssm = c * n + 2 * n * c + linear_count(c, c) + c;
        let mdm = 2 * linear_count(c, c) + dw_count(c, 3) + ssm + 2 * c;
        let tokens = h * w;
        let lsa = 4 * linear_count(c, c)
            + if k > 1 { dw_count(c, k) } else { 0 }
            + s.heads * tokens * (tokens / (k * k));
        let mbem = dw_count(d, 3) + se(d);
        let hidden = d * config.ffn_ratio;
        let lffn = conv_count(d, hidden, 3) + dw_count(hidden, 3) + conv_count(hidden, d, 3);
        let block = scem + 2 * d + mdm + lsa + mbem + 2 * d + lffn;

        total += conv_count(prev, d, 3) + s.depth * block;
        prev = d;
    }
    let hidden = config.head_hidden();
    total += linear_count(prev, hidden) + linear_count(hidden, config.num_classes);
    Ok(total)
}

#[cfg(test)]
mod tests;

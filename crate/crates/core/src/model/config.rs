use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StageConfig {
    /// Number of blocks.
    pub depth: usize,
    /// Channel width; the scan and attention branches get half each.
    pub width: usize,
    /// Attention heads over the `width / 2` attention channels.
    pub heads: usize,
    /// Key/value spatial reduction factor.
    pub kv_stride: usize,
    /// Scan state size per channel.
    pub state_size: usize,
}

fn default_channels() -> usize {
    3
}
fn default_se_ratio() -> usize {
    4
}
fn default_ffn_ratio() -> usize {
    4
}
fn default_downsample() -> usize {
    2
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_height: usize,
    pub input_width: usize,
    #[serde(default = "default_channels")]
    pub input_channels: usize,
    pub num_classes: usize,
    pub stages: Vec<StageConfig>,
    #[serde(default = "default_se_ratio")]
    pub se_ratio: usize,
    #[serde(default = "default_ffn_ratio")]
    pub ffn_ratio: usize,
    /// Spatial reduction of the stem and of every stage entry.
    #[serde(default = "default_downsample")]
    pub stage_downsample: usize,
    /// Width of the head's first linear layer; defaults to the last stage width.
    #[serde(default)]
    pub head_hidden: Option<usize>,
    #[serde(default = "default_true")]
    pub se_sigmoid: bool,
    #[serde(default)]
    pub gate_silu: bool,
}

impl ModelConfig {
    /// Four-stage desk-scale configuration: 64x64 input, widths 16/32/64/128,
    /// depths 1/1/2/1.
    pub fn toy() -> Self {
        let stage = |depth, width, heads, kv_stride| StageConfig {
            depth,
            width,
            heads,
            kv_stride,
            state_size: 16,
        };
        Self {
            input_height: 64,
            input_width: 64,
            input_channels: 3,
            num_classes: 10,
            stages: vec![
                stage(1, 16, 2, 8),
                stage(1, 32, 4, 4),
                stage(2, 64, 8, 2),
                stage(1, 128, 16, 1),
            ],
            se_ratio: 4,
            ffn_ratio: 4,
            stage_downsample: 2,
            head_hidden: None,
            se_sigmoid: true,
            gate_silu: false,
        }
    }

    pub fn stem_width(&self) -> usize {
        self.stages[0].width
    }

    pub fn head_hidden(&self) -> usize {
        self.head_hidden
            .unwrap_or_else(|| self.stages.last().map_or(0, |s| s.width))
    }

    /// Spatial size of the stem output.
    pub fn stem_resolution(&self) -> (usize, usize) {
        (
            self.input_height / self.stage_downsample,
            self.input_width / self.stage_downsample,
        )
    }

    /// Spatial size inside stage `i`, after its entry downsample.
    pub fn stage_resolution(&self, i: usize) -> (usize, usize) {
        let f = self.stage_downsample.pow(i as u32 + 2);
        (self.input_height / f, self.input_width / f)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.num_classes < 2 {
            return bad(format!("need at least 2 classes, got {}", self.num_classes));
        }
        if self.stages.is_empty() {
            return bad("no stages".into());
        }
        if self.input_channels == 0 || self.stage_downsample == 0 {
            return bad("input channels and downsample factor must be positive".into());
        }
        if self.se_ratio == 0 || self.ffn_ratio == 0 {
            return bad("squeeze-excite and feed-forward ratios must be positive".into());
        }
        let total = self.stage_downsample.pow(self.stages.len() as u32 + 1);
        if !self.input_height.is_multiple_of(total) || !self.input_width.is_multiple_of(total) {
            return bad(format!(
                "input {}x{} is not divisible by the cumulative stride {total}",
                self.input_height, self.input_width
            ));
        }
        if self.head_hidden() == 0 {
            return bad("head hidden width is zero".into());
        }
        for (i, s) in self.stages.iter().enumerate() {
            let name = format!("stage {}", i + 1);
            if s.depth == 0 {
                return bad(format!("{name} has no blocks"));
            }
            if s.width == 0 || s.width % 2 != 0 {
                return bad(format!("{name} width {} must be even", s.width));
            }
            if s.width % self.se_ratio != 0 {
                return bad(format!(
                    "{name} width {} is not divisible by squeeze-excite ratio {}",
                    s.width, self.se_ratio
                ));
            }
            if s.heads == 0 || (s.width / 2) % s.heads != 0 {
                return bad(format!(
                    "{name}: {} heads do not divide attention width {}",
                    s.heads,
                    s.width / 2
                ));
            }
            if s.state_size == 0 {
                return bad(format!("{name} state size is zero"));
            }
            let (h, w) = self.stage_resolution(i);
            if s.kv_stride == 0 || h % s.kv_stride != 0 || w % s.kv_stride != 0 {
                return bad(format!(
                    "{name} resolution {h}x{w} is not divisible by key/value stride {}",
                    s.kv_stride
                ));
            }
        }
        Ok(())
    }
}

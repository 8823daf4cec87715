use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which confident-learning rule picks the noisy set.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "u8", into = "u8")]
pub enum Strategy {
    /// Every off-diagonal member of the confusion counts.
    OffDiagonal,
    /// Per class, the lowest self-confidence samples.
    LowestSelfConfidence,
    /// Per class pair, the largest `p_j - p_i` margins.
    LargestMargin,
    /// Combination of the previous two.
    #[default]
    Hybrid,
}

impl TryFrom<u8> for Strategy {
    type Error = String;

    fn try_from(v: u8) -> std::result::Result<Self, String> {
        match v {
            1 => Ok(Self::OffDiagonal),
            2 => Ok(Self::LowestSelfConfidence),
            3 => Ok(Self::LargestMargin),
            4 => Ok(Self::Hybrid),
            _ => Err(format!("strategy must be 1-4, got {v}")),
        }
    }
}

impl From<Strategy> for u8 {
    fn from(s: Strategy) -> u8 {
        match s {
            Strategy::OffDiagonal => 1,
            Strategy::LowestSelfConfidence => 2,
            Strategy::LargestMargin => 3,
            Strategy::Hybrid => 4,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CombineMode {
    #[default]
    Intersection,
    Union,
}

/// How fractional selection counts `n * Q` become integers.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Rounding {
    #[default]
    HalfAwayFromZero,
    HalfToEven,
    Floor,
}

impl Rounding {
    /// Rounds the non-negative rational `num / den` exactly.
    pub fn apply(self, num: u128, den: u128) -> u128 {
        let q = num / den;
        let r = num % den;
        match self {
            Rounding::Floor => q,
            Rounding::HalfAwayFromZero => q + u128::from(2 * r >= den),
            Rounding::HalfToEven => {
                if 2 * r > den || (2 * r == den && q % 2 == 1) {
                    q + 1
                } else {
                    q
                }
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleaningConfig {
    pub strategy: Strategy,
    pub combine_mode: CombineMode,
    pub alpha: f64,
    pub iterations: usize,
    pub protected_classes: BTreeSet<usize>,
    pub rounding: Rounding,
}

impl Default for CleaningConfig {
    fn default() -> Self {
        Self {
            strategy: Strategy::Hybrid,
            combine_mode: CombineMode::Intersection,
            alpha: 0.1,
            iterations: 1,
            protected_classes: BTreeSet::new(),
            rounding: Rounding::HalfAwayFromZero,
        }
    }
}

impl CleaningConfig {
    pub fn validate(&self, num_classes: usize) -> Result<()> {
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            return Err(Error::Config(format!(
                "alpha must be >= 0, got {}",
                self.alpha
            )));
        }
        if self.iterations == 0 {
            return Err(Error::Config("iterations must be >= 1".into()));
        }
        if let Some(c) = self.protected_classes.iter().find(|&&c| c >= num_classes) {
            return Err(Error::Config(format!(
                "protected class {c} outside [0, {num_classes})"
            )));
        }
        Ok(())
    }
}

//! Confident learning over teacher predictions, refined by boosting the
//! suggested class on the temporal neighbours of every flagged frame.

pub mod cl;
pub mod config;
pub mod table;

use std::collections::{BTreeSet, HashSet};

use serde::{Deserialize, Serialize};

pub use cl::{
    build_confusion, compute_thresholds, confident_learning, flagged_ids, identify_noise,
    joint_distribution, off_diagonal_counts, selection_counts, ClPass, Flagged,
};
pub use config::{CleaningConfig, CombineMode, Rounding, Strategy};
pub use table::{argmax, argmax_except, PredictionRow, PredictionTable, ROW_SUM_TOL};

use crate::error::{Error, Result};

/// Multiplies `p[y*]` by `1 + alpha` on the previous and next frame of every
/// flagged sample, clipping at 1. Each (frame, class) entry is boosted at
/// most once; rows are not renormalised.
pub fn temporal_adjust(
    table: &PredictionTable,
    flagged: &[Flagged],
    alpha: f64,
) -> Result<PredictionTable> {
    if !(alpha.is_finite() && alpha >= 0.0) {
        return Err(Error::Config(format!("alpha must be >= 0, got {alpha}")));
    }
    let rows = table.rows();
    let row_of: std::collections::HashMap<u64, usize> = rows
        .iter()
        .enumerate()
        .map(|(i, r)| (r.sample_id, i))
        .collect();
    let neighbors = table.neighbors();
    let mut targets: HashSet<(usize, usize)> = HashSet::new();
    for f in flagged {
        let Some(&i) = row_of.get(&f.sample_id) else {
            return Err(Error::Validation {
                path: format!("sample {}", f.sample_id),
                reason: "flagged sample not in table".into(),
            });
        };
        let (prev, next) = neighbors[i];
        for nb in [prev, next].into_iter().flatten() {
            targets.insert((nb, f.suggested_label));
        }
    }
    let mut probs: Vec<Vec<f64>> = rows.iter().map(|r| r.probs.clone()).collect();
    for (row, j) in targets {
        let p = &mut probs[row][j];
        *p = (*p * (1.0 + alpha)).min(1.0);
    }
    Ok(table.with_probs(probs))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct IterationSummary {
    pub flagged_count: usize,
}

/// Final flagged set plus the diagnostics of the pass that produced it.
/// `iterations[0]` is the plain confident-learning pass.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseReport {
    pub flagged: Vec<Flagged>,
    pub thresholds: Vec<f64>,
    pub confusion: Vec<Vec<u64>>,
    pub joint: Vec<Vec<f64>>,
    pub config: CleaningConfig,
    pub iterations: Vec<IterationSummary>,
}

impl NoiseReport {
    pub fn flagged_ids(&self) -> BTreeSet<u64> {
        flagged_ids(&self.flagged)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Ok(serde_json::from_str(s)?)
    }
}

fn report(pass: ClPass, cfg: &CleaningConfig, iterations: Vec<IterationSummary>) -> NoiseReport {
    NoiseReport {
        flagged: pass.flagged,
        thresholds: pass.thresholds,
        confusion: pass.confusion,
        joint: pass.joint,
        config: cfg.clone(),
        iterations,
    }
}

/// Plain confident learning, no temporal refinement.
pub fn cl_report(table: &PredictionTable, cfg: &CleaningConfig) -> Result<NoiseReport> {
    cfg.validate(table.num_classes())?;
    let pass = confident_learning(table, cfg)?;
    let it = vec![IterationSummary {
        flagged_count: pass.flagged.len(),
    }];
    Ok(report(pass, cfg, it))
}

/// Confident learning followed by `cfg.iterations` rounds of neighbour
/// adjustment and re-identification. Adjustments accumulate across rounds.
pub fn trcl_pipeline(table: &PredictionTable, cfg: &CleaningConfig) -> Result<NoiseReport> {
    cfg.validate(table.num_classes())?;
    let mut pass = confident_learning(table, cfg)?;
    let mut history = vec![IterationSummary {
        flagged_count: pass.flagged.len(),
    }];
    let mut current = table.clone();
    for _ in 0..cfg.iterations {
        current = temporal_adjust(&current, &pass.flagged, cfg.alpha)?;
        pass = confident_learning(&current, cfg)?;
        history.push(IterationSummary {
            flagged_count: pass.flagged.len(),
        });
    }
    Ok(report(pass, cfg, history))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CleaningMetrics {
    /// Remaining noise as a percentage of all true noise.
    pub noise_pct: f64,
    /// Share of flagged samples that really were noisy; absent if none flagged.
    pub nca_pct: Option<f64>,
    pub remaining: usize,
    pub total_noise: usize,
    pub flagged: usize,
}

pub fn cleaning_metrics(flagged: &BTreeSet<u64>, truth: &BTreeSet<u64>) -> CleaningMetrics {
    let correct = flagged.intersection(truth).count();
    let remaining = truth.len() - correct;
    let noise_pct = if truth.is_empty() {
        0.0
    } else {
        remaining as f64 / truth.len() as f64 * 100.0
    };
    let nca_pct = (!flagged.is_empty()).then(|| correct as f64 / flagged.len() as f64 * 100.0);
    CleaningMetrics {
        noise_pct,
        nca_pct,
        remaining,
        total_noise: truth.len(),
        flagged: flagged.len(),
    }
}

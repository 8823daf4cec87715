//! Plain confident learning: thresholds, confusion counts, joint estimate,
//! and the four noisy-set selection rules.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::config::{CleaningConfig, CombineMode, Rounding, Strategy};
use super::table::{argmax, argmax_except, PredictionTable};
use crate::error::{Error, Result};

/// Per-class mean self-confidence over the samples carrying that label.
pub fn compute_thresholds(table: &PredictionTable) -> Result<Vec<f64>> {
    let m = table.num_classes();
    let mut sum = vec![0.0f64; m];
    let mut count = vec![0usize; m];
    // summing in id order keeps the result independent of row order
    for i in table.id_order() {
        let r = &table.rows()[i];
        sum[r.noisy_label] += r.probs[r.noisy_label];
        count[r.noisy_label] += 1;
    }
    (0..m)
        .map(|j| match count[j] {
            0 => Err(Error::EmptyClass { class: j }),
            c => Ok(sum[j] / c as f64),
        })
        .collect()
}

/// Predicted class of a row if it clears that class's threshold.
pub fn confident_class(probs: &[f64], thresholds: &[f64]) -> Option<usize> {
    let j = argmax(probs);
    (probs[j] >= thresholds[j]).then_some(j)
}

/// `C[i][j]`: samples labelled `i` whose argmax `j` clears `t_j`.
pub fn build_confusion(table: &PredictionTable, thresholds: &[f64]) -> Vec<Vec<u64>> {
    let m = table.num_classes();
    let mut c = vec![vec![0u64; m]; m];
    for r in table.rows() {
        if let Some(j) = confident_class(&r.probs, thresholds) {
            c[r.noisy_label][j] += 1;
        }
    }
    c
}

fn check_counts(confusion: &[Vec<u64>]) -> Result<()> {
    if confusion.iter().flatten().all(|&v| v == 0) {
        return Err(Error::Degenerate(
            "no sample clears its predicted class threshold".into(),
        ));
    }
    Ok(())
}

/// Row-normalise `C`, scale row `i` by `|V_i|`, divide by the total.
/// All-zero rows stay zero.
pub fn joint_distribution(confusion: &[Vec<u64>], class_sizes: &[usize]) -> Result<Vec<Vec<f64>>> {
    check_counts(confusion)?;
    let mut q: Vec<Vec<f64>> = confusion
        .iter()
        .zip(class_sizes)
        .map(|(row, &size)| {
            let s: u64 = row.iter().sum();
            row.iter()
                .map(|&v| {
                    if s == 0 {
                        0.0
                    } else {
                        v as f64 / s as f64 * size as f64
                    }
                })
                .collect()
        })
        .collect();
    let total: f64 = q.iter().flatten().sum();
    for v in q.iter_mut().flatten() {
        *v /= total;
    }
    Ok(q)
}

/// Exact integer targets `round(n * Q[i][j])` for every cell.
///
/// Evaluated on the rational form of `Q` so that exact halves are not lost
/// to floating-point error.
pub fn selection_counts(
    confusion: &[Vec<u64>],
    class_sizes: &[usize],
    n: usize,
    rounding: Rounding,
) -> Result<Vec<Vec<usize>>> {
    check_counts(confusion)?;
    let row_sums: Vec<u128> = confusion
        .iter()
        .map(|r| r.iter().map(|&v| v as u128).sum())
        .collect();
    let z: u128 = row_sums
        .iter()
        .zip(class_sizes)
        .filter(|(&s, _)| s > 0)
        .map(|(_, &size)| size as u128)
        .sum();
    Ok(confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .map(|&c| {
                    if row_sums[i] == 0 {
                        return 0;
                    }
                    let num = n as u128 * c as u128 * class_sizes[i] as u128;
                    rounding.apply(num, row_sums[i] * z) as usize
                })
                .collect()
        })
        .collect())
}

/// Per-class target for the lowest-self-confidence rule,
/// `round(n * sum_{j != i} Q[i][j])`.
pub fn off_diagonal_counts(
    confusion: &[Vec<u64>],
    class_sizes: &[usize],
    n: usize,
    rounding: Rounding,
) -> Result<Vec<usize>> {
    check_counts(confusion)?;
    let z: u128 = confusion
        .iter()
        .zip(class_sizes)
        .filter(|(r, _)| r.iter().any(|&v| v > 0))
        .map(|(_, &size)| size as u128)
        .sum();
    Ok(confusion
        .iter()
        .enumerate()
        .map(|(i, row)| {
            let s: u128 = row.iter().map(|&v| v as u128).sum();
            if s == 0 {
                return 0;
            }
            let off = s - row[i] as u128;
            rounding.apply(n as u128 * off * class_sizes[i] as u128, s * z) as usize
        })
        .collect())
}

/// A sample chosen as mislabelled, with the label it probably should carry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Flagged {
    pub sample_id: u64,
    pub noisy_label: usize,
    pub suggested_label: usize,
    /// `p[suggested] - p[noisy]` under the probabilities used for selection.
    pub margin: f64,
}

/// Everything computed in one confident-learning pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ClPass {
    pub thresholds: Vec<f64>,
    pub confusion: Vec<Vec<u64>>,
    pub joint: Vec<Vec<f64>>,
    pub flagged: Vec<Flagged>,
}

type Picks = BTreeMap<u64, (usize, usize)>;

fn off_diagonal_members(
    table: &PredictionTable,
    thresholds: &[f64],
    cfg: &CleaningConfig,
) -> Picks {
    let mut out = Picks::new();
    for (row, r) in table.rows().iter().enumerate() {
        if cfg.protected_classes.contains(&r.noisy_label) {
            continue;
        }
        if let Some(j) = confident_class(&r.probs, thresholds) {
            if j != r.noisy_label {
                out.insert(r.sample_id, (row, j));
            }
        }
    }
    out
}

fn members_by_class(table: &PredictionTable) -> Vec<Vec<usize>> {
    let mut by_class = vec![Vec::new(); table.num_classes()];
    for i in table.id_order() {
        by_class[table.rows()[i].noisy_label].push(i);
    }
    by_class
}

fn lowest_self_confidence(
    table: &PredictionTable,
    counts: &[usize],
    cfg: &CleaningConfig,
) -> Picks {
    let rows = table.rows();
    let mut out = Picks::new();
    for (i, mut members) in members_by_class(table).into_iter().enumerate() {
        if cfg.protected_classes.contains(&i) {
            continue;
        }
        // stable sort over id order: ties stay by sample id
        members.sort_by(|&a, &b| rows[a].probs[i].total_cmp(&rows[b].probs[i]));
        for &row in members.iter().take(counts[i]) {
            out.insert(
                rows[row].sample_id,
                (row, argmax_except(&rows[row].probs, i)),
            );
        }
    }
    out
}

fn largest_margin(table: &PredictionTable, counts: &[Vec<usize>], cfg: &CleaningConfig) -> Picks {
    let rows = table.rows();
    let m = table.num_classes();
    // sample id -> (row, class, margin); a sample picked for several pairs
    // keeps the pair with the larger margin, then the lower class
    let mut best: BTreeMap<u64, (usize, usize, f64)> = BTreeMap::new();
    for (i, members) in members_by_class(table).into_iter().enumerate() {
        if cfg.protected_classes.contains(&i) {
            continue;
        }
        for j in (0..m).filter(|&j| j != i) {
            if counts[i][j] == 0 {
                continue;
            }
            let mut ranked = members.clone();
            let margin = |r: usize| rows[r].probs[j] - rows[r].probs[i];
            ranked.sort_by(|&a, &b| margin(b).total_cmp(&margin(a)));
            for &row in ranked.iter().take(counts[i][j]) {
                let mg = margin(row);
                let e = best.entry(rows[row].sample_id).or_insert((row, j, mg));
                if mg > e.2 {
                    *e = (row, j, mg);
                }
            }
        }
    }
    best.into_iter()
        .map(|(id, (row, j, _))| (id, (row, j)))
        .collect()
}

fn to_flagged(table: &PredictionTable, picks: &Picks) -> Vec<Flagged> {
    picks
        .iter()
        .map(|(&sample_id, &(row, j))| {
            let r = &table.rows()[row];
            Flagged {
                sample_id,
                noisy_label: r.noisy_label,
                suggested_label: j,
                margin: r.probs[j] - r.probs[r.noisy_label],
            }
        })
        .collect()
}

/// Applies the configured selection rule, returning flagged samples in
/// sample-id order.
pub fn identify_noise(
    table: &PredictionTable,
    thresholds: &[f64],
    confusion: &[Vec<u64>],
    cfg: &CleaningConfig,
) -> Result<Vec<Flagged>> {
    let sizes = table.class_sizes();
    let n = table.len();
    let picks = match cfg.strategy {
        Strategy::OffDiagonal => off_diagonal_members(table, thresholds, cfg),
        Strategy::LowestSelfConfidence => {
            let k = off_diagonal_counts(confusion, &sizes, n, cfg.rounding)?;
            lowest_self_confidence(table, &k, cfg)
        }
        Strategy::LargestMargin => {
            let k = selection_counts(confusion, &sizes, n, cfg.rounding)?;
            largest_margin(table, &k, cfg)
        }
        Strategy::Hybrid => {
            let s2 = lowest_self_confidence(
                table,
                &off_diagonal_counts(confusion, &sizes, n, cfg.rounding)?,
                cfg,
            );
            let s3 = largest_margin(
                table,
                &selection_counts(confusion, &sizes, n, cfg.rounding)?,
                cfg,
            );
            combine(s2, s3, cfg.combine_mode)
        }
    };
    Ok(to_flagged(table, &picks))
}

fn combine(s2: Picks, s3: Picks, mode: CombineMode) -> Picks {
    match mode {
        CombineMode::Intersection => s3
            .into_iter()
            .filter(|(id, _)| s2.contains_key(id))
            .collect(),
        CombineMode::Union => {
            let mut out = s2;
            // the margin rule's suggestion wins where both fire
            out.extend(s3);
            out
        }
    }
}

/// Thresholds, counts, joint and flagged set for one table.
pub fn confident_learning(table: &PredictionTable, cfg: &CleaningConfig) -> Result<ClPass> {
    let thresholds = compute_thresholds(table)?;
    let confusion = build_confusion(table, &thresholds);
    let joint = joint_distribution(&confusion, &table.class_sizes())?;
    let flagged = identify_noise(table, &thresholds, &confusion, cfg)?;
    Ok(ClPass {
        thresholds,
        confusion,
        joint,
        flagged,
    })
}

pub fn flagged_ids(flagged: &[Flagged]) -> BTreeSet<u64> {
    flagged.iter().map(|f| f.sample_id).collect()
}

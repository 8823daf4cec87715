use std::collections::{BTreeMap, HashSet};

use crate::error::{Error, Result};

/// Tolerance on the sum of each input probability row.
pub const ROW_SUM_TOL: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct PredictionRow {
    pub sample_id: u64,
    pub video_id: String,
    pub frame_idx: i64,
    pub noisy_label: usize,
    pub probs: Vec<f64>,
}

/// Teacher predictions for `n` frames over `m` classes.
///
/// Rows keep their input order; anything order-sensitive (neighbours,
/// tie-breaking) goes through frame order or sample id instead.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionTable {
    num_classes: usize,
    rows: Vec<PredictionRow>,
}

fn invalid(id: u64, reason: String) -> Error {
    Error::Validation {
        path: format!("sample {id}"),
        reason,
    }
}

impl PredictionTable {
    pub fn new(num_classes: usize, rows: Vec<PredictionRow>) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::Config(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        let mut ids = HashSet::with_capacity(rows.len());
        let mut frames: HashSet<(&str, i64)> = HashSet::with_capacity(rows.len());
        for r in &rows {
            if !ids.insert(r.sample_id) {
                return Err(invalid(r.sample_id, "duplicate sample id".into()));
            }
            if !frames.insert((&r.video_id, r.frame_idx)) {
                return Err(invalid(
                    r.sample_id,
                    format!("frame {} repeated in video {:?}", r.frame_idx, r.video_id),
                ));
            }
            if r.noisy_label >= num_classes {
                return Err(invalid(
                    r.sample_id,
                    format!("label {} outside [0, {num_classes})", r.noisy_label),
                ));
            }
            if r.probs.len() != num_classes {
                return Err(invalid(
                    r.sample_id,
                    format!("{} probabilities for {num_classes} classes", r.probs.len()),
                ));
            }
            if r.probs.iter().any(|p| !p.is_finite() || *p < 0.0) {
                return Err(invalid(
                    r.sample_id,
                    "negative or non-finite probability".into(),
                ));
            }
            let s: f64 = r.probs.iter().sum();
            if (s - 1.0).abs() > ROW_SUM_TOL {
                return Err(invalid(r.sample_id, format!("probabilities sum to {s}")));
            }
        }
        Ok(Self { num_classes, rows })
    }

    /// Same rows with new probabilities; no row-sum check.
    pub(crate) fn with_probs(&self, probs: Vec<Vec<f64>>) -> Self {
        let rows = self
            .rows
            .iter()
            .zip(probs)
            .map(|(r, p)| PredictionRow {
                probs: p,
                ..r.clone()
            })
            .collect();
        Self {
            num_classes: self.num_classes,
            rows,
        }
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn rows(&self) -> &[PredictionRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn into_rows(self) -> Vec<PredictionRow> {
        self.rows
    }

    /// `|V_i|` for every class.
    pub fn class_sizes(&self) -> Vec<usize> {
        let mut n = vec![0; self.num_classes];
        for r in &self.rows {
            n[r.noisy_label] += 1;
        }
        n
    }

    /// Row indices sorted by sample id.
    pub fn id_order(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.rows.len()).collect();
        idx.sort_by_key(|&i| self.rows[i].sample_id);
        idx
    }

    /// Previous and next row of each row within its own video, by frame index.
    pub fn neighbors(&self) -> Vec<(Option<usize>, Option<usize>)> {
        let mut videos: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
        for (i, r) in self.rows.iter().enumerate() {
            videos.entry(&r.video_id).or_default().push(i);
        }
        let mut out = vec![(None, None); self.rows.len()];
        for idx in videos.values_mut() {
            idx.sort_by_key(|&i| self.rows[i].frame_idx);
            for (k, &i) in idx.iter().enumerate() {
                out[i] = (k.checked_sub(1).map(|p| idx[p]), idx.get(k + 1).copied());
            }
        }
        out
    }
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in p.iter().enumerate().skip(1) {
        if v > p[best] {
            best = j;
        }
    }
    best
}

/// Largest entry other than `skip`; ties go to the lowest index.
pub fn argmax_except(p: &[f64], skip: usize) -> usize {
    let mut best: Option<usize> = None;
    for (j, &v) in p.iter().enumerate() {
        if j != skip && best.is_none_or(|b| v > p[b]) {
            best = Some(j);
        }
    }
    best.expect("at least two classes")
}

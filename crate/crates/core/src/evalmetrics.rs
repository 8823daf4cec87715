//! One-vs-rest classification metrics with macro averaging.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutcomeCounts {
    pub tp: u64,
    pub fp: u64,
    pub tn: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
}

impl OutcomeCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.tn + self.fn_
    }
}

fn check_lengths(preds: &[usize], labels: &[usize]) -> Result<()> {
    if preds.len() != labels.len() {
        return Err(Error::Dimension(format!(
            "{} predictions for {} labels",
            preds.len(),
            labels.len()
        )));
    }
    Ok(())
}

pub fn outcome_counts(preds: &[usize], labels: &[usize], class: usize) -> Result<OutcomeCounts> {
    check_lengths(preds, labels)?;
    let mut c = OutcomeCounts::default();
    for (&p, &l) in preds.iter().zip(labels) {
        match (p == class, l == class) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

fn pct(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64 * 100.0)
}

/// Per-class precision, recall and F1 in percent; `None` where a ratio is 0/0.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub counts: OutcomeCounts,
    pub pre: Option<f64>,
    pub rec: Option<f64>,
    pub f1: Option<f64>,
}

impl ClassMetrics {
    pub fn from_counts(class: usize, counts: OutcomeCounts) -> Self {
        let pre = pct(counts.tp, counts.tp + counts.fp);
        let rec = pct(counts.tp, counts.tp + counts.fn_);
        let f1 = match (pre, rec) {
            (Some(p), Some(r)) if p + r > 0.0 => Some(2.0 * p * r / (p + r)),
            (Some(_), Some(_)) => Some(0.0),
            _ => None,
        };
        Self {
            class,
            counts,
            pre,
            rec,
            f1,
        }
    }
}

/// Unweighted means over the classes where each metric is defined.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroMetrics {
    pub acc: Option<f64>,
    pub pre: Option<f64>,
    pub rec: Option<f64>,
    pub f1: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub per_class: Vec<ClassMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: MacroMetrics,
}

fn mean(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let present: Vec<f64> = values.flatten().collect();
    (!present.is_empty()).then(|| present.iter().sum::<f64>() / present.len() as f64)
}

/// Percentage of exact matches; absent for empty input.
pub fn accuracy(preds: &[usize], labels: &[usize]) -> Result<Option<f64>> {
    check_lengths(preds, labels)?;
    let correct = preds.iter().zip(labels).filter(|(p, l)| p == l).count();
    Ok(pct(correct as u64, preds.len() as u64))
}

pub fn precision_recall_f1_accuracy(
    preds: &[usize],
    labels: &[usize],
    num_classes: usize,
) -> Result<MetricsReport> {
    check_lengths(preds, labels)?;
    if let Some(&bad) = preds.iter().chain(labels).find(|&&c| c >= num_classes) {
        return Err(Error::Domain(format!(
            "class {bad} outside [0, {num_classes})"
        )));
    }
    let per_class = (0..num_classes)
        .map(|c| {
            Ok(ClassMetrics::from_counts(
                c,
                outcome_counts(preds, labels, c)?,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let macro_avg = MacroMetrics {
        acc: accuracy(preds, labels)?,
        pre: mean(per_class.iter().map(|m| m.pre)),
        rec: mean(per_class.iter().map(|m| m.rec)),
        f1: mean(per_class.iter().map(|m| m.f1)),
    };
    Ok(MetricsReport {
        per_class,
        macro_avg,
    })
}

/// `(old - new) / old * 100`; absent when the old error is zero.
pub fn relative_error_reduction(err_old: f64, err_new: f64) -> Option<f64> {
    (err_old != 0.0).then(|| (err_old - err_new) / err_old * 100.0)
}

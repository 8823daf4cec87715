//! Independent oracles shared by the integration and acceptance tests.
//! Everything here is written from the definitions, not from the library.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

use dsdkit_core::ssm::{InputDiscretization, SsmParams};
use dsdkit_core::trcl::{CleaningConfig, CombineMode, PredictionRow, PredictionTable, Strategy};
use dsdkit_core::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scan recomputed in f64 from the projected token parameters.
pub fn scan_oracle_f64(x: &Tensor, p: &SsmParams) -> Vec<f64> {
    let (len, d) = x.dims2().unwrap();
    let n = p.state_size();
    let tok = p.token_params(x).unwrap();
    let mut y = vec![0.0f64; len * d];
    for ch in 0..d {
        let mut h = vec![0.0f64; n];
        for t in 0..len {
            let dt = tok.delta.data()[t * d + ch] as f64;
            let xv = x.data()[t * d + ch] as f64;
            let mut acc = 0.0;
            for s in 0..n {
                let a = -(p.log_a.data()[ch * n + s] as f64).exp();
                let b = tok.b.data()[t * n + s] as f64;
                let bbar = match p.discretization {
                    InputDiscretization::Euler => dt * b,
                    InputDiscretization::ExactZoh => ((dt * a).exp() - 1.0) / a * b,
                };
                h[s] = (dt * a).exp() * h[s] + bbar * xv;
                acc += tok.c.data()[t * n + s] as f64 * h[s];
            }
            y[t * d + ch] = acc + p.d_skip.data()[ch] as f64 * xv;
        }
    }
    y
}

/// `max |a - b| / max |b|`.
pub fn rel_err(a: &[f32], b: &[f64]) -> f64 {
    let scale = b
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(f64::MIN_POSITIVE);
    a.iter()
        .zip(b)
        .fold(0.0f64, |m, (x, y)| m.max((*x as f64 - y).abs()))
        / scale
}

/// Random table with every class present. Roughly half the tables use
/// coarse probability grids so that argmax and ranking ties actually occur.
pub fn random_table(seed: u64, max_n: usize, max_m: usize) -> PredictionTable {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    loop {
        let m = rng.random_range(2..=max_m);
        let n = rng.random_range(m.max(4)..=max_n);
        let coarse = rng.random_bool(0.5);
        let videos = rng.random_range(1..=4);
        let mut rows = Vec::with_capacity(n);
        for i in 0..n {
            let label = rng.random_range(0..m);
            let mut w: Vec<f64> = (0..m)
                .map(|_| {
                    if coarse {
                        rng.random_range(0..4) as f64
                    } else {
                        rng.random_range(0.0..1.0)
                    }
                })
                .collect();
            // lean towards the label so the confusion has a diagonal
            if rng.random_bool(0.7) {
                w[label] += if coarse { 3.0 } else { 1.5 };
            }
            let s: f64 = w.iter().sum();
            let probs = if s == 0.0 {
                vec![1.0 / m as f64; m]
            } else {
                w.iter().map(|v| v / s).collect()
            };
            rows.push(PredictionRow {
                sample_id: (i as u64) * 3 + 7,
                video_id: format!("v{}", i % videos),
                frame_idx: (i / videos) as i64,
                noisy_label: label,
                probs,
            });
        }
        let t = PredictionTable::new(m, rows).unwrap();
        let sizes = t.class_sizes();
        if sizes.iter().all(|&c| c > 0) {
            return t;
        }
    }
}

pub struct OracleCl {
    pub thresholds: Vec<f64>,
    pub confusion: Vec<Vec<u64>>,
    pub joint: Vec<Vec<f64>>,
    /// sample id -> suggested label
    pub flagged: BTreeMap<u64, usize>,
}

fn is_argmax(p: &[f64], j: usize) -> bool {
    (0..p.len()).all(|k| if k < j { p[k] < p[j] } else { p[k] <= p[j] })
}

fn round_half_away(num: u128, den: u128) -> usize {
    ((2 * num + den) / (2 * den)) as usize
}

/// Brute-force confident learning straight from the definitions. Returns
/// `None` when every confusion cell is empty.
pub fn oracle_cl(t: &PredictionTable, cfg: &CleaningConfig) -> Option<OracleCl> {
    let m = t.num_classes();
    let rows = t.rows();
    let n = rows.len();
    let mut by_id: Vec<&PredictionRow> = rows.iter().collect();
    by_id.sort_by_key(|r| r.sample_id);

    let thresholds: Vec<f64> = (0..m)
        .map(|j| {
            let own: Vec<f64> = by_id
                .iter()
                .filter(|r| r.noisy_label == j)
                .map(|r| r.probs[j])
                .collect();
            own.iter().fold(0.0, |a, b| a + b) / own.len() as f64
        })
        .collect();

    let counted =
        |r: &PredictionRow, j: usize| is_argmax(&r.probs, j) && r.probs[j] >= thresholds[j];
    let mut confusion = vec![vec![0u64; m]; m];
    for i in 0..m {
        for j in 0..m {
            confusion[i][j] = rows
                .iter()
                .filter(|r| r.noisy_label == i && counted(r, j))
                .count() as u64;
        }
    }
    if confusion.iter().flatten().all(|&c| c == 0) {
        return None;
    }
    let size: Vec<u128> = (0..m)
        .map(|i| rows.iter().filter(|r| r.noisy_label == i).count() as u128)
        .collect();
    let row_sum: Vec<u128> = confusion
        .iter()
        .map(|r| r.iter().map(|&c| c as u128).sum())
        .collect();
    let z: u128 = (0..m).filter(|&i| row_sum[i] > 0).map(|i| size[i]).sum();

    let mut joint = vec![vec![0.0; m]; m];
    let mut total = 0.0;
    for i in 0..m {
        for j in 0..m {
            if row_sum[i] > 0 {
                joint[i][j] = confusion[i][j] as f64 / row_sum[i] as f64 * size[i] as f64;
                total += joint[i][j];
            }
        }
    }
    for v in joint.iter_mut().flatten() {
        *v /= total;
    }

    let protected = |i: usize| cfg.protected_classes.contains(&i);

    // S1
    let mut s1 = BTreeMap::new();
    for r in rows {
        if protected(r.noisy_label) {
            continue;
        }
        for j in 0..m {
            if j != r.noisy_label && counted(r, j) {
                s1.insert(r.sample_id, j);
            }
        }
    }

    // S2: rank inside the class by (p_i, id)
    let mut s2 = BTreeMap::new();
    for i in (0..m).filter(|&i| !protected(i) && row_sum[i] > 0) {
        let off = row_sum[i] - confusion[i][i] as u128;
        let k = round_half_away(n as u128 * off * size[i], row_sum[i] * z);
        let members: Vec<&PredictionRow> = rows.iter().filter(|r| r.noisy_label == i).collect();
        for r in &members {
            let rank = members
                .iter()
                .filter(|o| (o.probs[i], o.sample_id) < (r.probs[i], r.sample_id))
                .count();
            if rank < k {
                let mut best = if i == 0 { 1 } else { 0 };
                for j in 0..m {
                    if j != i && r.probs[j] > r.probs[best] {
                        best = j;
                    }
                }
                s2.insert(r.sample_id, best);
            }
        }
    }

    // S3: rank by (-margin, id) per pair, then keep the widest margin
    let mut picks: BTreeMap<u64, Vec<(f64, usize)>> = BTreeMap::new();
    for i in (0..m).filter(|&i| !protected(i) && row_sum[i] > 0) {
        let members: Vec<&PredictionRow> = rows.iter().filter(|r| r.noisy_label == i).collect();
        for j in (0..m).filter(|&j| j != i) {
            let k = round_half_away(
                n as u128 * confusion[i][j] as u128 * size[i],
                row_sum[i] * z,
            );
            for r in &members {
                let mr = r.probs[j] - r.probs[i];
                let rank = members
                    .iter()
                    .filter(|o| {
                        let mo = o.probs[j] - o.probs[i];
                        mo > mr || (mo == mr && o.sample_id < r.sample_id)
                    })
                    .count();
                if rank < k {
                    picks.entry(r.sample_id).or_default().push((mr, j));
                }
            }
        }
    }
    let s3: BTreeMap<u64, usize> = picks
        .into_iter()
        .map(|(id, c)| {
            let top = c.iter().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max);
            let j = c.iter().filter(|x| x.0 == top).map(|x| x.1).min().unwrap();
            (id, j)
        })
        .collect();

    let flagged = match cfg.strategy {
        Strategy::OffDiagonal => s1,
        Strategy::LowestSelfConfidence => s2,
        Strategy::LargestMargin => s3,
        Strategy::Hybrid => match cfg.combine_mode {
            CombineMode::Intersection => s3
                .into_iter()
                .filter(|(id, _)| s2.contains_key(id))
                .collect(),
            CombineMode::Union => {
                let mut u = s2;
                for (id, j) in s3 {
                    u.insert(id, j);
                }
                u
            }
        },
    };
    Some(OracleCl {
        thresholds,
        confusion,
        joint,
        flagged,
    })
}

pub fn id_set<'a>(ids: impl IntoIterator<Item = &'a u64>) -> BTreeSet<u64> {
    ids.into_iter().copied().collect()
}

pub const ALL_STRATEGIES: [Strategy; 4] = [
    Strategy::OffDiagonal,
    Strategy::LowestSelfConfidence,
    Strategy::LargestMargin,
    Strategy::Hybrid,
];

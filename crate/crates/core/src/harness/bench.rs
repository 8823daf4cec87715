//! Wall-clock growth of the selective scan against full self-attention.

use std::hint::black_box;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::attention::{lsa, LsaParams};
use crate::error::{Error, Result};
use crate::ssm::{selective_scan, SsmParams};
use crate::tensor::Tensor;

pub const WARMUP_ROUNDS: usize = 2;
pub const MIN_REPEATS: usize = 5;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub lengths: Vec<usize>,
    pub repeats: usize,
    pub channels: usize,
    pub state_size: usize,
    pub seed: u64,
    /// Lower bound on the duration of one timed sample; short calls are
    /// looped to reach it.
    pub min_sample_secs: f64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            lengths: vec![256, 512, 1024],
            repeats: 7,
            channels: 16,
            state_size: 16,
            seed: 0,
            min_sample_secs: 0.002,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchEntry {
    pub op: String,
    pub length: usize,
    pub median_secs: f64,
    pub min_secs: f64,
    pub flops: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub entries: Vec<BenchEntry>,
    pub scan_exponent: f64,
    pub attention_exponent: f64,
    /// Median-time ratio between consecutive lengths.
    pub scan_ratios: Vec<f64>,
    pub attention_ratios: Vec<f64>,
}

/// Multiply count of the attention score and mixing terms, `(HW)^2 * d`.
pub fn attention_flops(length: usize, channels: usize) -> u64 {
    (length as u64).pow(2) * channels as u64
}

/// Multiply count of the state update, `HW * N * d`.
pub fn scan_flops(length: usize, state_size: usize, channels: usize) -> u64 {
    length as u64 * state_size as u64 * channels as u64
}

/// Most square `h x w` factorisation of `length` with `h <= w`.
pub fn grid_for(length: usize) -> (usize, usize) {
    let mut h = (length as f64).sqrt() as usize;
    while h > 1 && !length.is_multiple_of(h) {
        h -= 1;
    }
    (h.max(1), length / h.max(1))
}

/// Least-squares slope of `ln y` against `ln x`.
pub fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let sxy: f64 = lx.iter().zip(&ly).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = lx.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    let k = v.len();
    if k % 2 == 1 {
        v[k / 2]
    } else {
        0.5 * (v[k / 2 - 1] + v[k / 2])
    }
}

fn loop_count(single: f64, min_secs: f64) -> usize {
    ((min_secs / single.max(1e-9)).ceil() as usize).max(1)
}

type Job<'a> = Box<dyn Fn() -> Result<()> + 'a>;

/// Per-call seconds of one timed sample of `inner` calls.
fn sample(f: &Job<'_>, inner: usize) -> Result<f64> {
    let t = Instant::now();
    for _ in 0..inner {
        f()?;
    }
    Ok(t.elapsed().as_secs_f64() / inner as f64)
}

pub fn bench_scan_vs_attention(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.repeats < MIN_REPEATS {
        return Err(Error::Config(format!(
            "need at least {MIN_REPEATS} repeats"
        )));
    }
    if cfg.lengths.len() < 2 || cfg.lengths.windows(2).any(|w| w[0] >= w[1]) || cfg.lengths[0] == 0
    {
        return Err(Error::Config(
            "lengths must be positive and strictly ascending".into(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let d = cfg.channels;
    let ssm = SsmParams::init(d, cfg.state_size, &mut rng);

    let mut inputs = Vec::new();
    for &len in &cfg.lengths {
        let x = Tensor::uniform(&[len, d], 1.0, &mut rng);
        let (h, w) = grid_for(len);
        let attn = LsaParams::init(d, 1, 1, h, w, &mut rng)?;
        let map = x.clone().reshape(&[h, w, d])?;
        inputs.push((x, map, attn));
    }
    // (op, length index, job)
    let mut jobs: Vec<(&str, usize, Job<'_>)> = Vec::new();
    for (k, (x, map, attn)) in inputs.iter().enumerate() {
        let ssm = &ssm;
        jobs.push((
            "scan",
            k,
            Box::new(move || selective_scan(black_box(x), ssm).map(|y| drop(black_box(y)))),
        ));
        jobs.push((
            "attention",
            k,
            Box::new(move || lsa(black_box(map), attn).map(|y| drop(black_box(y)))),
        ));
    }

    for _ in 0..WARMUP_ROUNDS {
        for (_, _, f) in &jobs {
            f()?;
        }
    }
    // loop counts are fixed per op at the shortest length so ratios stay honest
    let mut inner = Vec::with_capacity(jobs.len());
    for (op, _, f) in &jobs {
        let first = jobs.iter().position(|j| j.0 == *op).expect("op present");
        if first == inner.len() {
            let t = Instant::now();
            f()?;
            inner.push(loop_count(t.elapsed().as_secs_f64(), cfg.min_sample_secs));
        } else {
            inner.push(inner[first]);
        }
    }
    // round-robin over every (op, length) so slow periods hit all of them
    let mut samples = vec![Vec::with_capacity(cfg.repeats); jobs.len()];
    for _ in 0..cfg.repeats {
        for (i, (_, _, f)) in jobs.iter().enumerate() {
            samples[i].push(sample(f, inner[i])?);
        }
    }

    let entries: Vec<BenchEntry> = jobs
        .iter()
        .zip(samples)
        .map(|((op, k, _), s)| {
            let len = cfg.lengths[*k];
            BenchEntry {
                op: op.to_string(),
                length: len,
                median_secs: median(s.clone()),
                min_secs: s.iter().copied().fold(f64::INFINITY, f64::min),
                flops: if *op == "scan" {
                    scan_flops(len, cfg.state_size, d)
                } else {
                    attention_flops(len, d)
                },
            }
        })
        .collect();

    let series = |op: &str| -> Vec<f64> {
        entries
            .iter()
            .filter(|e| e.op == op)
            .map(|e| e.median_secs)
            .collect()
    };
    let xs: Vec<f64> = cfg.lengths.iter().map(|&l| l as f64).collect();
    let ratios = |v: &[f64]| v.windows(2).map(|w| w[1] / w[0]).collect::<Vec<_>>();
    let (s, a) = (series("scan"), series("attention"));
    Ok(BenchReport {
        config: cfg.clone(),
        scan_exponent: loglog_slope(&xs, &s),
        attention_exponent: loglog_slope(&xs, &a),
        scan_ratios: ratios(&s),
        attention_ratios: ratios(&a),
        entries,
    })
}

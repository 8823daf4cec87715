//! Self-check suite run by the `verify` command: a fast sweep of the
//! library's invariants on seeded random inputs.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::io::{predictions_to_string, read_predictions};
use super::synth::{shuffled, synth_dataset, SynthConfig};
use crate::attention::{attention_weights, LsaParams};
use crate::error::Result;
use crate::evalmetrics::{outcome_counts, precision_recall_f1_accuracy};
use crate::model::{count_params, forward, scem, stage_shapes, ModelConfig, ModelWeights};
use crate::ssm::{
    multi_direction_flatten, reference_scan, selective_scan, unflatten, InputDiscretization,
    SsmParams,
};
use crate::tensor::nn::Parameters;
use crate::tensor::{softmax_rows, Tensor};
use crate::trcl::{
    build_confusion, cl_report, compute_thresholds, joint_distribution, temporal_adjust,
    trcl_pipeline, CleaningConfig, NoiseReport, PredictionTable, Strategy,
};

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    pub detail: String,
    pub secs: f64,
}

type Outcome = std::result::Result<String, String>;

fn ensure(cond: bool, msg: impl FnOnce() -> String) -> std::result::Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn lift<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn scan_matches_recurrence(rng: &mut ChaCha8Rng) -> Outcome {
    let mut worst = 0.0f32;
    for _ in 0..30 {
        let (len, n, d) = (
            rng.random_range(1..=64),
            rng.random_range(1..=16),
            rng.random_range(1..=8),
        );
        let mut p = SsmParams::init(d, n, rng);
        if rng.random_bool(0.5) {
            p.discretization = InputDiscretization::ExactZoh;
        }
        let x = Tensor::uniform(&[len, d], 2.0, rng);
        let fast = lift(selective_scan(&x, &p))?;
        let slow = lift(reference_scan(&x, &p))?;
        let scale = slow
            .data()
            .iter()
            .fold(0.0f32, |m, v| m.max(v.abs()))
            .max(f32::MIN_POSITIVE);
        let err = fast
            .data()
            .iter()
            .zip(slow.data())
            .fold(0.0f32, |m, (a, b)| m.max((a - b).abs()))
            / scale;
        worst = worst.max(err);
    }
    ensure(worst <= 1e-5, || format!("relative error {worst:e}"))?;
    Ok(format!("30 configs, worst relative error {worst:.2e}"))
}

fn directions_invert(rng: &mut ChaCha8Rng) -> Outcome {
    for _ in 0..10 {
        let (h, w) = (rng.random_range(1..6), rng.random_range(1..6));
        let x = Tensor::uniform(&[h, w, 3], 1.0, rng);
        let s = lift(multi_direction_flatten(&x))?;
        for (order, seq) in s.orders.iter().zip(&s.sequences) {
            ensure(lift(unflatten(seq, order, h, w))? == x, || {
                format!("{h}x{w} order {order:?}")
            })?;
        }
    }
    Ok("10 maps, 4 orders each".into())
}

fn softmax_and_attention_rows(rng: &mut ChaCha8Rng) -> Outcome {
    let m = Tensor::uniform(&[6, 9], 20.0, rng);
    for row in lift(softmax_rows(&m))?.data().chunks(9) {
        let s: f32 = row.iter().sum();
        ensure((s - 1.0).abs() <= 1e-6, || {
            format!("softmax row sums to {s}")
        })?;
    }
    let mut p = lift(LsaParams::init(4, 2, 2, 4, 4, rng))?;
    p.bias = Tensor::uniform(p.bias.shape(), 1.0, rng);
    let x = Tensor::uniform(&[4, 4, 4], 1.0, rng);
    for head in lift(attention_weights(&x, &p))? {
        for row in head.data().chunks(4) {
            let s: f32 = row.iter().sum();
            ensure(
                row.iter().all(|&v| v >= 0.0) && (s - 1.0).abs() <= 1e-6,
                || format!("attention row {row:?}"),
            )?;
        }
    }
    Ok("rows are probability vectors".into())
}

fn tables(seed: u64, count: usize) -> std::result::Result<Vec<PredictionTable>, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut k = 0u64;
    while out.len() < count {
        k += 1;
        let cfg = SynthConfig {
            seed: seed.wrapping_add(k),
            num_videos: rng.random_range(1..=4),
            frames_per_video: rng.random_range(20..=50),
            num_classes: rng.random_range(3..=6),
            noise_rate: rng.random_range(0.0..0.3),
            burst_min: 2,
            burst_max: 8,
            segment_min: 5,
            segment_max: 20,
            teacher_sharpness: rng.random_range(0.5..3.0),
            protected_class: None,
            ..Default::default()
        };
        let t = lift(synth_dataset(&cfg))?.table;
        // thresholds need every class present
        if t.class_sizes().iter().all(|&c| c > 0) {
            out.push(t);
        }
    }
    Ok(out)
}

fn joint_is_normalised(seed: u64) -> Outcome {
    for t in tables(seed, 20)? {
        let th = lift(compute_thresholds(&t))?;
        let c = build_confusion(&t, &th);
        let q = lift(joint_distribution(&c, &t.class_sizes()))?;
        let total: f64 = q.iter().flatten().sum();
        ensure((total - 1.0).abs() <= 1e-9, || {
            format!("joint sums to {total}")
        })?;
        if c.iter().all(|r| r.iter().any(|&v| v > 0)) {
            for (i, row) in q.iter().enumerate() {
                let want = t.class_sizes()[i] as f64 / t.len() as f64;
                let got: f64 = row.iter().sum();
                ensure((got - want).abs() <= 1e-12, || {
                    format!("row {i} marginal {got} vs {want}")
                })?;
            }
        }
    }
    Ok("20 tables".into())
}

fn zero_alpha_is_plain_cl(seed: u64) -> Outcome {
    for t in tables(seed, 10)? {
        for s in [
            Strategy::OffDiagonal,
            Strategy::LowestSelfConfidence,
            Strategy::LargestMargin,
            Strategy::Hybrid,
        ] {
            let cfg = CleaningConfig {
                strategy: s,
                alpha: 0.0,
                ..Default::default()
            };
            let a = lift(trcl_pipeline(&t, &cfg))?.flagged;
            let b = lift(cl_report(&t, &cfg))?.flagged;
            ensure(a == b, || format!("strategy {s:?} differs"))?;
        }
    }
    Ok("10 tables x 4 strategies".into())
}

fn adjustment_is_local_and_monotone(seed: u64) -> Outcome {
    for t in tables(seed, 10)? {
        let r = lift(cl_report(&t, &CleaningConfig::default()))?;
        let a = lift(temporal_adjust(&t, &r.flagged, 0.15))?;
        let nb = t.neighbors();
        let flagged_rows: std::collections::HashSet<usize> = t
            .rows()
            .iter()
            .enumerate()
            .filter(|(_, row)| r.flagged.iter().any(|f| f.sample_id == row.sample_id))
            .map(|(i, _)| i)
            .collect();
        for (i, (old, new)) in t.rows().iter().zip(a.rows()).enumerate() {
            let near = flagged_rows
                .iter()
                .any(|&f| nb[f].0 == Some(i) || nb[f].1 == Some(i));
            for (p, q) in old.probs.iter().zip(&new.probs) {
                ensure(q >= p, || format!("sample {} decreased", old.sample_id))?;
                ensure(near || p == q, || {
                    format!(
                        "sample {} changed without a flagged neighbour",
                        old.sample_id
                    )
                })?;
                ensure(*q <= 1.0 || q == p, || {
                    format!("sample {} above 1", old.sample_id)
                })?;
            }
        }
    }
    Ok("10 tables".into())
}

fn protected_and_order_invariance(seed: u64) -> Outcome {
    for (k, t) in tables(seed, 10)?.into_iter().enumerate() {
        let mut cfg = CleaningConfig::default();
        cfg.protected_classes.insert(k % t.num_classes());
        let r = lift(trcl_pipeline(&t, &cfg))?;
        ensure(
            r.flagged
                .iter()
                .all(|f| !cfg.protected_classes.contains(&f.noisy_label)),
            || "protected class flagged".into(),
        )?;
        ensure(
            r.flagged.iter().all(|f| f.suggested_label != f.noisy_label),
            || "suggestion equals label".into(),
        )?;
        let perm = lift(PredictionTable::new(
            t.num_classes(),
            shuffled(t.rows(), seed + k as u64),
        ))?;
        let r2 = lift(trcl_pipeline(&perm, &cfg))?;
        ensure(r.flagged_ids() == r2.flagged_ids(), || {
            "row order changed the flagged set".into()
        })?;
    }
    Ok("10 tables".into())
}

fn metrics_match_counting(rng: &mut ChaCha8Rng) -> Outcome {
    for _ in 0..200 {
        let m = rng.random_range(2..6);
        let n = rng.random_range(1..40);
        let preds: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.random_range(0..m)).collect();
        let rep = lift(precision_recall_f1_accuracy(&preds, &labels, m))?;
        for c in 0..m {
            let cnt = lift(outcome_counts(&preds, &labels, c))?;
            let tp = (0..n).filter(|&i| preds[i] == c && labels[i] == c).count() as u64;
            let fp = (0..n).filter(|&i| preds[i] == c && labels[i] != c).count() as u64;
            ensure(
                cnt.tp == tp && cnt.fp == fp && cnt.total() == n as u64,
                || format!("class {c} counts"),
            )?;
            ensure(rep.per_class[c].counts == cnt, || "report counts".into())?;
        }
    }
    Ok("200 random cases".into())
}

fn forward_integrity(seed: u64) -> Outcome {
    let cfg = ModelConfig::toy();
    let w = lift(ModelWeights::init(&cfg, seed))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let img = Tensor::uniform(&[64, 64, 3], 1.0, &mut rng);
    let p = lift(forward(&img, &cfg, &w))?;
    let q = lift(forward(&img, &cfg, &w))?;
    ensure(p == q, || "forward not deterministic".into())?;
    let s: f64 = p.iter().map(|&v| v as f64).sum();
    ensure((s - 1.0).abs() <= 1e-6, || {
        format!("probabilities sum to {s}")
    })?;
    let shapes = lift(stage_shapes(&img, &w))?;
    let widths: Vec<usize> = shapes.iter().map(|s| s[2]).collect();
    ensure(widths == [16, 16, 32, 64, 128], || {
        format!("stage widths {widths:?}")
    })?;
    let counted = lift(count_params(&cfg))?;
    ensure(counted == w.num_params(), || {
        format!("count {counted} vs {}", w.num_params())
    })?;
    let mut sc = w.stages[0].blocks[0].scem.clone();
    sc.conv_out
        .visit_mut("", &mut |_, t| t.data_mut().fill(0.0));
    let x = Tensor::uniform(&[16, 16, 16], 1.0, &mut rng);
    ensure(lift(scem(&x, &sc))? == x, || {
        "zeroed SCEM is not the identity".into()
    })?;
    Ok(format!("{counted} parameters"))
}

fn round_trips(seed: u64) -> Outcome {
    let t = tables(seed, 1)?.remove(0);
    let s = lift(predictions_to_string(&t))?;
    let back = lift(read_predictions(s.as_bytes(), "memory"))?;
    ensure(
        back == t && lift(predictions_to_string(&back))? == s,
        || "CSV round trip".into(),
    )?;
    let r = lift(trcl_pipeline(&t, &CleaningConfig::default()))?;
    let j = lift(r.to_json())?;
    ensure(
        lift(lift(NoiseReport::from_json(&j))?.to_json())? == j,
        || "report round trip".into(),
    )?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for rank in 1..=4 {
        let shape: Vec<usize> = (0..rank).map(|_| rng.random_range(1..5)).collect();
        let x = Tensor::uniform(&shape, 1.0, &mut rng);
        ensure(Tensor::from_bytes(&x.to_bytes()).as_ref() == Ok(&x), || {
            format!("rank {rank} tensor")
        })?;
    }
    Ok("csv, report json, tensor ranks 1-4".into())
}

fn synth_mask_consistent(seed: u64) -> Outcome {
    let d = lift(synth_dataset(&SynthConfig {
        seed,
        ..Default::default()
    }))?;
    for ((r, &t), &m) in d.table.rows().iter().zip(&d.true_labels).zip(&d.noise_mask) {
        ensure(m == (r.noisy_label != t), || {
            format!("sample {}", r.sample_id)
        })?;
    }
    let count = d.noise_mask.iter().filter(|&&b| b).count();
    ensure(count == 400, || format!("{count} noisy frames"))?;
    Ok("mask matches flips".into())
}

/// Runs every check; never panics on a failing check.
pub fn run_checks(seed: u64) -> Vec<CheckResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    let mut run = |name: &str, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let res = f();
        out.push(CheckResult {
            name: name.into(),
            passed: res.is_ok(),
            detail: res.unwrap_or_else(|e| e),
            secs: t.elapsed().as_secs_f64(),
        });
    };
    run("scan_matches_recurrence", &mut || {
        scan_matches_recurrence(&mut rng)
    });
    run("directions_invert", &mut || directions_invert(&mut rng));
    run("softmax_and_attention_rows", &mut || {
        softmax_and_attention_rows(&mut rng)
    });
    run("joint_is_normalised", &mut || joint_is_normalised(seed));
    run("zero_alpha_is_plain_cl", &mut || {
        zero_alpha_is_plain_cl(seed)
    });
    run("adjustment_is_local_and_monotone", &mut || {
        adjustment_is_local_and_monotone(seed)
    });
    run("protected_and_order_invariance", &mut || {
        protected_and_order_invariance(seed)
    });
    run("metrics_match_counting", &mut || {
        metrics_match_counting(&mut rng)
    });
    run("forward_integrity", &mut || forward_integrity(seed));
    run("round_trips", &mut || round_trips(seed));
    run("synth_mask_consistent", &mut || synth_mask_consistent(seed));
    out
}

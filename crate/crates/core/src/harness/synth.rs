//! Synthetic noisy video datasets with known ground truth.
//!
//! Each video is a sequence of constant-label segments. Annotation noise is
//! injected as contiguous bursts of a single wrong label, and a simulated
//! teacher puts most of its mass on the true class.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::trcl::{PredictionRow, PredictionTable};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoiseMode {
    #[default]
    Burst,
    Iid,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub num_videos: usize,
    pub frames_per_video: usize,
    pub num_classes: usize,
    pub noise_rate: f64,
    pub burst_min: usize,
    pub burst_max: usize,
    /// Lengths of the constant true-label segments.
    pub segment_min: usize,
    pub segment_max: usize,
    /// Logit added to the true class.
    pub teacher_sharpness: f64,
    /// Logit added to the noisy label, emulating a teacher that has partly
    /// fit the annotation noise.
    pub teacher_label_bias: f64,
    /// Scale and lag-one correlation of the per-video Gaussian logit noise.
    pub teacher_noise: f64,
    pub teacher_correlation: f64,
    /// Class that is never corrupted and never used as a corrupting label.
    pub protected_class: Option<usize>,
    pub noise_mode: NoiseMode,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            num_videos: 10,
            frames_per_video: 200,
            num_classes: 5,
            noise_rate: 0.2,
            burst_min: 5,
            burst_max: 20,
            segment_min: 30,
            segment_max: 80,
            teacher_sharpness: 3.0,
            teacher_label_bias: 1.5,
            teacher_noise: 1.0,
            teacher_correlation: 0.8,
            protected_class: Some(0),
            noise_mode: NoiseMode::Burst,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(0.0..1.0).contains(&self.noise_rate) {
            return bad(format!(
                "noise rate must be in [0, 1), got {}",
                self.noise_rate
            ));
        }
        if self.num_classes < 2 || (self.protected_class.is_some() && self.num_classes < 3) {
            return bad("need two unprotected classes".into());
        }
        if self.protected_class.is_some_and(|p| p >= self.num_classes) {
            return bad("protected class out of range".into());
        }
        if self.num_videos == 0 || self.frames_per_video == 0 {
            return bad("empty dataset".into());
        }
        if self.burst_min == 0 || self.burst_min > self.burst_max {
            return bad("burst lengths need 1 <= min <= max".into());
        }
        if self.segment_min == 0 || self.segment_min > self.segment_max {
            return bad("segment lengths need 1 <= min <= max".into());
        }
        if !(self.teacher_sharpness > 0.0) || !self.teacher_label_bias.is_finite() {
            return bad("teacher sharpness must be > 0".into());
        }
        if !(self.teacher_noise >= 0.0) || !(0.0..1.0).contains(&self.teacher_correlation) {
            return bad("teacher noise must be >= 0 and correlation in [0, 1)".into());
        }
        Ok(())
    }

    pub fn num_samples(&self) -> usize {
        self.num_videos * self.frames_per_video
    }

    /// Exact number of corrupted frames.
    pub fn noise_count(&self) -> usize {
        (self.noise_rate * self.num_samples() as f64).round() as usize
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub table: PredictionTable,
    pub true_labels: Vec<usize>,
    pub noise_mask: Vec<bool>,
}

impl SynthDataset {
    pub fn noisy_ids(&self) -> std::collections::BTreeSet<u64> {
        self.table
            .rows()
            .iter()
            .zip(&self.noise_mask)
            .filter(|(_, &m)| m)
            .map(|(r, _)| r.sample_id)
            .collect()
    }
}

fn wrong_label<R: Rng>(truth: usize, cfg: &SynthConfig, rng: &mut R) -> usize {
    let choices: Vec<usize> = (0..cfg.num_classes)
        .filter(|&c| c != truth && Some(c) != cfg.protected_class)
        .collect();
    *choices.choose(rng).expect("two unprotected classes")
}

pub fn synth_dataset(cfg: &SynthConfig) -> Result<SynthDataset> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (v, f, m) = (cfg.num_videos, cfg.frames_per_video, cfg.num_classes);
    let n = v * f;

    let mut truth = Vec::with_capacity(n);
    for _ in 0..v {
        let mut t = 0;
        let mut prev = None;
        while t < f {
            let len = rng
                .random_range(cfg.segment_min..=cfg.segment_max)
                .min(f - t);
            let mut c = rng.random_range(0..m);
            while Some(c) == prev {
                c = rng.random_range(0..m);
            }
            truth.extend(std::iter::repeat_n(c, len));
            prev = Some(c);
            t += len;
        }
    }

    let eligible = |i: usize| Some(truth[i]) != cfg.protected_class;
    let target = cfg.noise_count();
    let pool: Vec<usize> = (0..n).filter(|&i| eligible(i)).collect();
    if pool.len() < target {
        return Err(Error::Config(format!(
            "only {} corruptible frames for {target} noisy ones",
            pool.len()
        )));
    }

    let mut noisy = truth.clone();
    let mut mask = vec![false; n];
    let mut placed = 0;
    match cfg.noise_mode {
        NoiseMode::Iid => {
            for &i in pool.choose_multiple(&mut rng, target) {
                noisy[i] = wrong_label(truth[i], cfg, &mut rng);
                mask[i] = true;
            }
            placed = target;
        }
        NoiseMode::Burst => {
            while placed < target {
                let start = *pool.choose(&mut rng).expect("non-empty pool");
                if mask[start] {
                    continue;
                }
                let len = rng
                    .random_range(cfg.burst_min..=cfg.burst_max)
                    .min(target - placed);
                let label = wrong_label(truth[start], cfg, &mut rng);
                let end = (start / f + 1) * f;
                let mut i = start;
                // a burst stops at the video end, at existing noise, or where
                // the true label changes
                while i < end && i - start < len && !mask[i] && truth[i] == truth[start] {
                    noisy[i] = label;
                    mask[i] = true;
                    placed += 1;
                    i += 1;
                }
            }
        }
    }
    debug_assert_eq!(placed, mask.iter().filter(|&&b| b).count());

    let mut rows = Vec::with_capacity(n);
    let corr = cfg.teacher_correlation;
    let innov = (1.0 - corr * corr).sqrt() * cfg.teacher_noise;
    for vid in 0..v {
        let mut e: Vec<f64> = (0..m)
            .map(|_| cfg.teacher_noise * Distribution::<f64>::sample(&StandardNormal, &mut rng))
            .collect();
        for t in 0..f {
            let i = vid * f + t;
            if t > 0 {
                for x in &mut e {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    *x = corr * *x + innov * z;
                }
            }
            let mut logits = e.clone();
            logits[truth[i]] += cfg.teacher_sharpness;
            logits[noisy[i]] += cfg.teacher_label_bias;
            rows.push(PredictionRow {
                sample_id: i as u64,
                video_id: format!("video{vid:03}"),
                frame_idx: t as i64,
                noisy_label: noisy[i],
                probs: softmax(&logits),
            });
        }
    }
    Ok(SynthDataset {
        table: PredictionTable::new(m, rows)?,
        true_labels: truth,
        noise_mask: mask,
    })
}

fn softmax(logits: &[f64]) -> Vec<f64> {
    let mx = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|&l| (l - mx).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}

/// Fisher-Yates over a copy; exposed for shuffling row order in tests.
pub fn shuffled<T: Clone>(items: &[T], seed: u64) -> Vec<T> {
    let mut v = items.to_vec();
    v.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_noise_leaves_labels_alone() {
        let cfg = SynthConfig {
            noise_rate: 0.0,
            ..Default::default()
        };
        let d = synth_dataset(&cfg).unwrap();
        assert!(d.noise_mask.iter().all(|&b| !b));
        for (r, &t) in d.table.rows().iter().zip(&d.true_labels) {
            assert_eq!(r.noisy_label, t);
        }
    }

    #[test]
    fn deterministic_per_seed() {
        let cfg = SynthConfig {
            seed: 42,
            ..Default::default()
        };
        assert_eq!(synth_dataset(&cfg).unwrap(), synth_dataset(&cfg).unwrap());
        let other = SynthConfig {
            seed: 43,
            ..Default::default()
        };
        assert_ne!(synth_dataset(&cfg).unwrap(), synth_dataset(&other).unwrap());
    }

    #[test]
    fn mask_matches_label_flips_and_count() {
        for mode in [NoiseMode::Burst, NoiseMode::Iid] {
            let cfg = SynthConfig {
                seed: 3,
                noise_mode: mode,
                ..Default::default()
            };
            let d = synth_dataset(&cfg).unwrap();
            let mut count = 0;
            for ((r, &t), &m) in d.table.rows().iter().zip(&d.true_labels).zip(&d.noise_mask) {
                assert_eq!(m, r.noisy_label != t);
                if m {
                    count += 1;
                    assert_ne!(Some(r.noisy_label), cfg.protected_class);
                    assert_ne!(Some(t), cfg.protected_class);
                }
            }
            assert_eq!(count, 400);
        }
    }

    #[test]
    fn bursts_are_contiguous_runs() {
        let cfg = SynthConfig {
            seed: 5,
            ..Default::default()
        };
        let d = synth_dataset(&cfg).unwrap();
        let mut runs = 0;
        for (i, &m) in d.noise_mask.iter().enumerate() {
            let starts = m && (i % 200 == 0 || !d.noise_mask[i - 1]);
            runs += usize::from(starts);
        }
        // 400 noisy frames in bursts of at most 20 (adjacent bursts may merge)
        assert!(runs >= 1 && runs <= 400 / cfg.burst_min);
    }

    #[test]
    fn rejects_bad_configs() {
        let cfg = SynthConfig {
            noise_rate: 1.0,
            ..Default::default()
        };
        assert!(matches!(synth_dataset(&cfg), Err(Error::Config(_))));
        let cfg = SynthConfig {
            num_classes: 2,
            ..Default::default()
        };
        assert!(synth_dataset(&cfg).is_err());
    }
}

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use dsdkit_core::evalmetrics::precision_recall_f1_accuracy;
use dsdkit_core::harness::io::{
    load_label_column, load_predictions_csv, save_cleaned_labels, save_ground_truth,
    save_noise_report, save_predictions_csv,
};
use dsdkit_core::harness::{
    bench_scan_vs_attention, run_checks, synth_dataset, BenchConfig, NoiseMode, SynthConfig,
};
use dsdkit_core::model::{forward, load_weights, save_weights, ModelConfig, ModelWeights};
use dsdkit_core::tensor::read_tensor;
use dsdkit_core::trcl::{cl_report, trcl_pipeline, CleaningConfig, CombineMode, Strategy};
use serde_json::json;

#[derive(Parser)]
#[command(
    name = "dsdkit",
    version,
    about = "Hybrid scan/attention kernels and temporal label cleaning"
)]
struct Cli {
    /// Seed for every random choice; falls back to DSDKIT_SEED, then 0.
    #[arg(long, global = true, env = "DSDKIT_SEED", default_value_t = 0)]
    seed: u64,
    /// Worker threads. Results never depend on this; commands currently run on one.
    #[arg(long, global = true, default_value_t = 1, value_parser = clap::value_parser!(u16).range(1..))]
    threads: u16,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Flag mislabelled frames in a prediction CSV.
    Clean(CleanArgs),
    /// Class probabilities for one image tensor.
    Forward(ForwardArgs),
    /// Write a synthetic noisy-video dataset.
    Synth(SynthArgs),
    /// Time the selective scan against self-attention.
    Bench(BenchArgs),
    /// Per-class and macro metrics of predicted against reference labels.
    Metrics(MetricsArgs),
    /// Run the invariant suite.
    Verify,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Intersection,
    Union,
}

#[derive(Args)]
struct CleanArgs {
    /// Prediction CSV: sample_id,video_id,frame_idx,noisy_label,p0..p{m-1}
    #[arg(long)]
    input: PathBuf,
    /// NoiseReport JSON output.
    #[arg(long)]
    report: PathBuf,
    /// Cleaned-label CSV output.
    #[arg(long)]
    cleaned: Option<PathBuf>,
    #[arg(long, default_value_t = 0.1)]
    alpha: f64,
    /// 1 off-diagonal, 2 lowest self-confidence, 3 largest margin, 4 both of 2 and 3.
    #[arg(long, default_value_t = 4, value_parser = clap::value_parser!(u8).range(1..=4))]
    strategy: u8,
    #[arg(long, value_enum, default_value_t = Mode::Intersection)]
    mode: Mode,
    #[arg(long, default_value_t = 1)]
    iterations: usize,
    /// Classes that are never flagged, comma separated.
    #[arg(long, value_delimiter = ',')]
    protected: Vec<usize>,
    /// Plain confident learning without the temporal step.
    #[arg(long)]
    plain: bool,
}

#[derive(Args)]
struct ForwardArgs {
    /// Model config JSON; the toy config when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Weights directory with manifest.json; seeded random weights when omitted.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// Write the weights that were used to this directory.
    #[arg(long)]
    save_weights: Option<PathBuf>,
    /// DSD1 image tensor, [H, W, C].
    #[arg(long)]
    input: PathBuf,
    /// Probabilities JSON; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum NoiseArg {
    Burst,
    Iid,
}

#[derive(Args)]
struct SynthArgs {
    /// Output directory for predictions.csv and ground_truth.csv.
    #[arg(long)]
    out_dir: PathBuf,
    /// SynthConfig JSON; missing fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    videos: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    noise_rate: Option<f64>,
    #[arg(long, value_enum)]
    noise: Option<NoiseArg>,
    /// Let every class be corrupted.
    #[arg(long)]
    no_protected: bool,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_delimiter = ',', default_values_t = [256, 512, 1024])]
    lengths: Vec<usize>,
    #[arg(long, default_value_t = 7)]
    repeats: usize,
    #[arg(long, default_value_t = 16)]
    channels: usize,
    #[arg(long, default_value_t = 16)]
    state_size: usize,
    /// Report JSON; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    /// CSV holding the predicted labels.
    #[arg(long)]
    preds: PathBuf,
    #[arg(long, default_value = "cleaned_label")]
    pred_column: String,
    /// CSV holding the reference labels.
    #[arg(long)]
    labels: PathBuf,
    #[arg(long, default_value = "true_label")]
    label_column: String,
    /// Number of classes; the largest label seen plus one when omitted.
    #[arg(long)]
    classes: Option<usize>,
    /// Metrics JSON; stdout when omitted.
    #[arg(long)]
    output: Option<PathBuf>,
}

fn emit(text: &str, output: Option<&Path>) -> Result<()> {
    match output {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pretty(v: &impl serde::Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(v)? + "\n")
}

fn clean(a: &CleanArgs) -> Result<()> {
    let table =
        load_predictions_csv(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let cfg = CleaningConfig {
        strategy: Strategy::try_from(a.strategy).map_err(anyhow::Error::msg)?,
        combine_mode: match a.mode {
            Mode::Intersection => CombineMode::Intersection,
            Mode::Union => CombineMode::Union,
        },
        alpha: a.alpha,
        iterations: a.iterations,
        protected_classes: a.protected.iter().copied().collect::<BTreeSet<_>>(),
        ..Default::default()
    };
    let report = if a.plain {
        cl_report(&table, &cfg)?
    } else {
        trcl_pipeline(&table, &cfg)?
    };
    save_noise_report(&report, &a.report)?;
    if let Some(p) = &a.cleaned {
        save_cleaned_labels(&table, &report, p)?;
    }
    eprintln!(
        "flagged {} of {} samples",
        report.flagged.len(),
        table.len()
    );
    Ok(())
}

fn run_forward(a: &ForwardArgs, seed: u64) -> Result<()> {
    let config = match &a.config {
        Some(p) => {
            let s = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&s).with_context(|| format!("parsing {}", p.display()))?
        }
        None => ModelConfig::toy(),
    };
    let weights = match &a.weights {
        Some(dir) => load_weights(dir, &config)
            .with_context(|| format!("loading weights from {}", dir.display()))?,
        None => ModelWeights::init(&config, seed)?,
    };
    if let Some(dir) = &a.save_weights {
        save_weights(dir, &weights)?;
    }
    let image = read_tensor(&a.input).with_context(|| format!("reading {}", a.input.display()))?;
    let probs = forward(&image, &config, &weights)?;
    let predicted = probs
        .iter()
        .enumerate()
        .fold(0, |b, (j, &p)| if p > probs[b] { j } else { b });
    let out = json!({ "probabilities": probs, "predicted": predicted });
    emit(&pretty(&out)?, a.output.as_deref())
}

fn synth(a: &SynthArgs, seed: u64) -> Result<()> {
    let mut cfg: SynthConfig = match &a.config {
        Some(p) => {
            let s = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            serde_json::from_str(&s).with_context(|| format!("parsing {}", p.display()))?
        }
        None => SynthConfig::default(),
    };
    cfg.seed = seed;
    if let Some(v) = a.videos {
        cfg.num_videos = v;
    }
    if let Some(v) = a.frames {
        cfg.frames_per_video = v;
    }
    if let Some(v) = a.classes {
        cfg.num_classes = v;
    }
    if let Some(v) = a.noise_rate {
        cfg.noise_rate = v;
    }
    if let Some(v) = a.noise {
        cfg.noise_mode = match v {
            NoiseArg::Burst => NoiseMode::Burst,
            NoiseArg::Iid => NoiseMode::Iid,
        };
    }
    if a.no_protected {
        cfg.protected_class = None;
    }
    let d = synth_dataset(&cfg)?;
    fs::create_dir_all(&a.out_dir).with_context(|| format!("creating {}", a.out_dir.display()))?;
    save_predictions_csv(&d.table, a.out_dir.join("predictions.csv"))?;
    save_ground_truth(
        &d.table,
        &d.true_labels,
        &d.noise_mask,
        a.out_dir.join("ground_truth.csv"),
    )?;
    fs::write(a.out_dir.join("synth_config.json"), pretty(&cfg)?)?;
    eprintln!(
        "{} frames, {} corrupted",
        d.table.len(),
        d.noise_mask.iter().filter(|&&m| m).count()
    );
    Ok(())
}

fn bench(a: &BenchArgs, seed: u64) -> Result<()> {
    let cfg = BenchConfig {
        lengths: a.lengths.clone(),
        repeats: a.repeats,
        channels: a.channels,
        state_size: a.state_size,
        seed,
        ..Default::default()
    };
    let r = bench_scan_vs_attention(&cfg)?;
    emit(&pretty(&r)?, a.output.as_deref())
}

/// Label column keyed by `sample_id`.
fn labels_by_id(path: &Path, column: &str) -> Result<HashMap<usize, usize>> {
    let ids = load_label_column(path, "sample_id")?;
    let labels = load_label_column(path, column)?;
    let mut out = HashMap::with_capacity(ids.len());
    for (id, l) in ids.into_iter().zip(labels) {
        if out.insert(id, l).is_some() {
            bail!("{}: duplicate sample_id {id}", path.display());
        }
    }
    Ok(out)
}

fn metrics(a: &MetricsArgs) -> Result<()> {
    let preds = labels_by_id(&a.preds, &a.pred_column)?;
    let labels = labels_by_id(&a.labels, &a.label_column)?;
    let mut ids: Vec<usize> = labels.keys().copied().collect();
    ids.sort_unstable();
    let mut p = Vec::with_capacity(ids.len());
    for id in &ids {
        match preds.get(id) {
            Some(&v) => p.push(v),
            None => bail!("sample_id {id} missing from {}", a.preds.display()),
        }
    }
    if preds.len() != labels.len() {
        bail!("{} predictions for {} labels", preds.len(), labels.len());
    }
    let l: Vec<usize> = ids.iter().map(|id| labels[id]).collect();
    let m = a
        .classes
        .unwrap_or_else(|| p.iter().chain(&l).max().map_or(1, |&c| c + 1));
    let report = precision_recall_f1_accuracy(&p, &l, m)?;
    emit(&pretty(&report)?, a.output.as_deref())
}

fn verify(seed: u64) -> bool {
    let results = run_checks(seed);
    let mut ok = true;
    for r in &results {
        ok &= r.passed;
        println!(
            "{} {:<36} {:.3}s  {}",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.secs,
            r.detail
        );
    }
    let failed = results.iter().filter(|r| !r.passed).count();
    println!("{} passed, {failed} failed", results.len() - failed);
    ok
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.command {
        Command::Clean(a) => clean(a),
        Command::Forward(a) => run_forward(a, cli.seed),
        Command::Synth(a) => synth(a, cli.seed),
        Command::Bench(a) => bench(a, cli.seed),
        Command::Metrics(a) => metrics(a),
        Command::Verify => {
            return if verify(cli.seed) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
    };
    match res {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

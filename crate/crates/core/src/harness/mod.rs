//! Synthetic data, file formats, benchmarking and the self-check suite.

pub mod bench;
pub mod io;
pub mod synth;
pub mod verify;

pub use bench::{bench_scan_vs_attention, BenchConfig, BenchEntry, BenchReport};
pub use io::{
    load_ground_truth, load_noise_report, load_predictions_csv, save_cleaned_labels,
    save_ground_truth, save_noise_report, save_predictions_csv,
};
pub use synth::{synth_dataset, NoiseMode, SynthConfig, SynthDataset};
pub use verify::{run_checks, CheckResult};

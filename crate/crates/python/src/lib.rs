//! Python bindings: prediction tables, label cleaning, metrics, the scan,
//! the model forward pass and tensor files.

use std::collections::BTreeSet;
use std::path::PathBuf;

use dsdkit_core::evalmetrics::{self, ClassMetrics};
use dsdkit_core::harness::{self, io, BenchConfig, NoiseMode, SynthConfig};
use dsdkit_core::model::{self, ModelConfig, ModelWeights};
use dsdkit_core::ssm::{self, InputDiscretization};
use dsdkit_core::tensor::nn::Parameters;
use dsdkit_core::trcl::{self, CleaningConfig, CombineMode, Strategy};
use dsdkit_core::{Error, Tensor};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io(e) => PyIOError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

type Row = (u64, String, i64, usize, Vec<f64>);

/// Teacher predictions, one row per frame.
#[pyclass(module = "dsdkit", frozen)]
#[derive(Clone)]
struct PredictionTable(trcl::PredictionTable);

#[pymethods]
impl PredictionTable {
    /// `rows` holds `(sample_id, video_id, frame_idx, noisy_label, probs)`.
    #[new]
    fn new(num_classes: usize, rows: Vec<Row>) -> PyResult<Self> {
        let rows = rows
            .into_iter()
            .map(
                |(sample_id, video_id, frame_idx, noisy_label, probs)| trcl::PredictionRow {
                    sample_id,
                    video_id,
                    frame_idx,
                    noisy_label,
                    probs,
                },
            )
            .collect();
        trcl::PredictionTable::new(num_classes, rows)
            .map(Self)
            .map_err(py_err)
    }

    #[staticmethod]
    fn load_csv(path: PathBuf) -> PyResult<Self> {
        io::load_predictions_csv(path).map(Self).map_err(py_err)
    }

    fn save_csv(&self, path: PathBuf) -> PyResult<()> {
        io::save_predictions_csv(&self.0, path).map_err(py_err)
    }

    #[getter]
    fn num_classes(&self) -> usize {
        self.0.num_classes()
    }

    fn rows(&self) -> Vec<Row> {
        self.0
            .rows()
            .iter()
            .map(|r| {
                (
                    r.sample_id,
                    r.video_id.clone(),
                    r.frame_idx,
                    r.noisy_label,
                    r.probs.clone(),
                )
            })
            .collect()
    }

    fn __len__(&self) -> usize {
        self.0.len()
    }

    fn __repr__(&self) -> String {
        format!(
            "PredictionTable(rows={}, classes={})",
            self.0.len(),
            self.0.num_classes()
        )
    }
}

/// Flagged samples plus the diagnostics of the pass that produced them.
#[pyclass(module = "dsdkit", frozen)]
struct NoiseReport(trcl::NoiseReport);

#[pymethods]
impl NoiseReport {
    /// `(sample_id, noisy_label, suggested_label, margin)` in sample-id order.
    #[getter]
    fn flagged(&self) -> Vec<(u64, usize, usize, f64)> {
        self.0
            .flagged
            .iter()
            .map(|f| (f.sample_id, f.noisy_label, f.suggested_label, f.margin))
            .collect()
    }

    fn flagged_ids(&self) -> Vec<u64> {
        self.0.flagged_ids().into_iter().collect()
    }

    #[getter]
    fn thresholds(&self) -> Vec<f64> {
        self.0.thresholds.clone()
    }

    #[getter]
    fn confusion(&self) -> Vec<Vec<u64>> {
        self.0.confusion.clone()
    }

    #[getter]
    fn joint(&self) -> Vec<Vec<f64>> {
        self.0.joint.clone()
    }

    /// Flagged count after each pass; the first entry is plain confident learning.
    #[getter]
    fn iterations(&self) -> Vec<usize> {
        self.0.iterations.iter().map(|i| i.flagged_count).collect()
    }

    fn to_json(&self) -> PyResult<String> {
        self.0.to_json().map_err(py_err)
    }

    #[staticmethod]
    fn from_json(s: &str) -> PyResult<Self> {
        trcl::NoiseReport::from_json(s).map(Self).map_err(py_err)
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        io::save_noise_report(&self.0, path).map_err(py_err)
    }

    fn save_cleaned_labels(&self, table: &PredictionTable, path: PathBuf) -> PyResult<()> {
        io::save_cleaned_labels(&table.0, &self.0, path).map_err(py_err)
    }

    fn __len__(&self) -> usize {
        self.0.flagged.len()
    }
}

/// Confident learning, refined by `iterations` temporal passes unless `plain`.
#[pyfunction]
#[pyo3(signature = (table, alpha=0.1, strategy=4, mode="intersection", iterations=1, protected=None, plain=false))]
fn clean(
    table: &PredictionTable,
    alpha: f64,
    strategy: u8,
    mode: &str,
    iterations: usize,
    protected: Option<Vec<usize>>,
    plain: bool,
) -> PyResult<NoiseReport> {
    let cfg = CleaningConfig {
        strategy: Strategy::try_from(strategy).map_err(PyValueError::new_err)?,
        combine_mode: match mode {
            "intersection" => CombineMode::Intersection,
            "union" => CombineMode::Union,
            other => return Err(PyValueError::new_err(format!("unknown mode {other:?}"))),
        },
        alpha,
        iterations,
        protected_classes: protected.unwrap_or_default().into_iter().collect(),
        ..Default::default()
    };
    let r = if plain {
        trcl::cl_report(&table.0, &cfg)
    } else {
        trcl::trcl_pipeline(&table.0, &cfg)
    };
    r.map(NoiseReport).map_err(py_err)
}

/// `(noise_pct, nca_pct, remaining)` of a flagged set against the true noise.
#[pyfunction]
fn cleaning_metrics(flagged: Vec<u64>, truth: Vec<u64>) -> (f64, Option<f64>, usize) {
    let f: BTreeSet<u64> = flagged.into_iter().collect();
    let t: BTreeSet<u64> = truth.into_iter().collect();
    let m = trcl::cleaning_metrics(&f, &t);
    (m.noise_pct, m.nca_pct, m.remaining)
}

/// Returns `(table, true_labels, noise_mask)`.
#[pyfunction]
#[pyo3(signature = (seed=0, videos=10, frames=200, classes=5, noise_rate=0.2, iid=false, protected=Some(0)))]
fn synth(
    seed: u64,
    videos: usize,
    frames: usize,
    classes: usize,
    noise_rate: f64,
    iid: bool,
    protected: Option<usize>,
) -> PyResult<(PredictionTable, Vec<usize>, Vec<bool>)> {
    let cfg = SynthConfig {
        seed,
        num_videos: videos,
        frames_per_video: frames,
        num_classes: classes,
        noise_rate,
        noise_mode: if iid {
            NoiseMode::Iid
        } else {
            NoiseMode::Burst
        },
        protected_class: protected,
        ..Default::default()
    };
    let d = harness::synth_dataset(&cfg).map_err(py_err)?;
    Ok((PredictionTable(d.table), d.true_labels, d.noise_mask))
}

fn class_dict<'py>(py: Python<'py>, c: &ClassMetrics) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("class", c.class)?;
    d.set_item("tp", c.counts.tp)?;
    d.set_item("fp", c.counts.fp)?;
    d.set_item("tn", c.counts.tn)?;
    d.set_item("fn", c.counts.fn_)?;
    d.set_item("pre", c.pre)?;
    d.set_item("rec", c.rec)?;
    d.set_item("f1", c.f1)?;
    Ok(d)
}

/// `{"per_class": [...], "macro": {acc, pre, rec, f1}}`, percentages, `None` where undefined.
#[pyfunction]
fn metrics<'py>(
    py: Python<'py>,
    preds: Vec<usize>,
    labels: Vec<usize>,
    num_classes: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let r =
        evalmetrics::precision_recall_f1_accuracy(&preds, &labels, num_classes).map_err(py_err)?;
    let per_class = r
        .per_class
        .iter()
        .map(|c| class_dict(py, c))
        .collect::<PyResult<Vec<_>>>()?;
    let mac = PyDict::new(py);
    mac.set_item("acc", r.macro_avg.acc)?;
    mac.set_item("pre", r.macro_avg.pre)?;
    mac.set_item("rec", r.macro_avg.rec)?;
    mac.set_item("f1", r.macro_avg.f1)?;
    let out = PyDict::new(py);
    out.set_item("per_class", per_class)?;
    out.set_item("macro", mac)?;
    Ok(out)
}

#[pyfunction]
fn relative_error_reduction(err_old: f64, err_new: f64) -> Option<f64> {
    evalmetrics::relative_error_reduction(err_old, err_new)
}

fn tensor(shape: Vec<usize>, data: Vec<f32>) -> PyResult<Tensor> {
    Tensor::new(shape, data).map_err(py_err)
}

/// Seeded selective-scan parameters.
#[pyclass(module = "dsdkit", frozen)]
struct SsmParams(ssm::SsmParams);

#[pymethods]
impl SsmParams {
    #[new]
    #[pyo3(signature = (d_inner, state_size, seed=0, exact_zoh=false))]
    fn new(d_inner: usize, state_size: usize, seed: u64, exact_zoh: bool) -> Self {
        let mut p = ssm::SsmParams::init(d_inner, state_size, &mut ChaCha8Rng::seed_from_u64(seed));
        if exact_zoh {
            p.discretization = InputDiscretization::ExactZoh;
        }
        Self(p)
    }

    /// Scan of a flat row-major `[length, d_inner]` sequence.
    fn scan(&self, x: Vec<f32>, length: usize) -> PyResult<Vec<f32>> {
        let d = self.0.d_inner();
        let x = tensor(vec![length, d], x)?;
        ssm::selective_scan(&x, &self.0)
            .map(Tensor::into_data)
            .map_err(py_err)
    }

    /// Same result through the per-step recurrence.
    fn reference_scan(&self, x: Vec<f32>, length: usize) -> PyResult<Vec<f32>> {
        let d = self.0.d_inner();
        let x = tensor(vec![length, d], x)?;
        ssm::reference_scan(&x, &self.0)
            .map(Tensor::into_data)
            .map_err(py_err)
    }
}

/// Model config plus weights.
#[pyclass(module = "dsdkit", frozen)]
struct Model {
    config: ModelConfig,
    weights: ModelWeights,
}

#[pymethods]
impl Model {
    /// `config_json` defaults to the toy config; weights are loaded from
    /// `weights_dir` or drawn from `seed`.
    #[new]
    #[pyo3(signature = (config_json=None, seed=0, weights_dir=None))]
    fn new(config_json: Option<&str>, seed: u64, weights_dir: Option<PathBuf>) -> PyResult<Self> {
        let config = match config_json {
            Some(s) => serde_json::from_str(s).map_err(|e| PyValueError::new_err(e.to_string()))?,
            None => ModelConfig::toy(),
        };
        let weights = match weights_dir {
            Some(dir) => model::load_weights(dir, &config),
            None => ModelWeights::init(&config, seed),
        }
        .map_err(py_err)?;
        Ok(Self { config, weights })
    }

    /// Class probabilities for a flat row-major `[H, W, C]` image.
    fn forward(&self, image: Vec<f32>) -> PyResult<Vec<f32>> {
        let c = &self.config;
        let image = tensor(vec![c.input_height, c.input_width, c.input_channels], image)?;
        model::forward(&image, &self.config, &self.weights).map_err(py_err)
    }

    fn num_params(&self) -> usize {
        self.weights.num_params()
    }

    fn config_json(&self) -> PyResult<String> {
        serde_json::to_string(&self.config).map_err(|e| PyValueError::new_err(e.to_string()))
    }

    fn save_weights(&self, dir: PathBuf) -> PyResult<()> {
        model::save_weights(dir, &self.weights).map_err(py_err)
    }
}

#[pyfunction]
fn count_params(config_json: &str) -> PyResult<usize> {
    let config: ModelConfig =
        serde_json::from_str(config_json).map_err(|e| PyValueError::new_err(e.to_string()))?;
    model::count_params(&config).map_err(py_err)
}

/// `(shape, flat data)` of a DSD1 tensor file.
#[pyfunction]
fn read_tensor(path: PathBuf) -> PyResult<(Vec<usize>, Vec<f32>)> {
    let t = dsdkit_core::tensor::read_tensor(path).map_err(py_err)?;
    Ok((t.shape().to_vec(), t.into_data()))
}

#[pyfunction]
fn write_tensor(path: PathBuf, shape: Vec<usize>, data: Vec<f32>) -> PyResult<()> {
    dsdkit_core::tensor::write_tensor(path, &tensor(shape, data)?).map_err(py_err)
}

/// Benchmark report as a JSON string.
#[pyfunction(name = "bench")]
#[pyo3(signature = (lengths=vec![256, 512, 1024], repeats=7, seed=0))]
fn run_bench(lengths: Vec<usize>, repeats: usize, seed: u64) -> PyResult<String> {
    let cfg = BenchConfig {
        lengths,
        repeats,
        seed,
        ..Default::default()
    };
    let r = harness::bench_scan_vs_attention(&cfg).map_err(py_err)?;
    serde_json::to_string(&r).map_err(|e| PyValueError::new_err(e.to_string()))
}

/// `(name, passed, detail)` for every invariant check.
#[pyfunction]
#[pyo3(signature = (seed=0))]
fn verify(seed: u64) -> Vec<(String, bool, String)> {
    harness::run_checks(seed)
        .into_iter()
        .map(|c| (c.name, c.passed, c.detail))
        .collect()
}

#[pymodule]
fn dsdkit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PredictionTable>()?;
    m.add_class::<NoiseReport>()?;
    m.add_class::<SsmParams>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(clean, m)?)?;
    m.add_function(wrap_pyfunction!(cleaning_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(synth, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(relative_error_reduction, m)?)?;
    m.add_function(wrap_pyfunction!(count_params, m)?)?;
    m.add_function(wrap_pyfunction!(read_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(write_tensor, m)?)?;
    m.add_function(wrap_pyfunction!(run_bench, m)?)?;
    m.add_function(wrap_pyfunction!(verify, m)?)?;
    Ok(())
}

//! Python bindings: model construction, checkpoints, forward traces, data
//! preparation and the pre-training and distillation loops.

use std::collections::BTreeMap;

use pyo3::create_exception;
use pyo3::exceptions::{PyOSError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::{PyDict, PyList};
use recdistill_core::data::{self, MaskingConfig, TokenizerMode, PAD_ID};
use recdistill_core::distill::{build_layer_map, AlignmentMode, LayerMapStrategy, LossWeights};
use recdistill_core::eval::{self, F1Scheme};
use recdistill_core::model::{
    self, count_parameters, param_digest, Backbone, Checkpoint, Encoder, Parameterized, ForwardTrace, Init, ModelConfig, TokenBatch,
};
use recdistill_core::numerics::Tensor;
use recdistill_core::seed::{rng, Stream};
use recdistill_core::train::{self, RunOptions, ScheduleConfig, TrainLog};
use recdistill_core::Error;

create_exception!(recdistill, CorruptCheckpointError, PyValueError, "A checkpoint failed to decode or verify.");

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Corrupt(m) => CorruptCheckpointError::new_err(m),
        Error::Io(e) => PyOSError::new_err(e.to_string()),
        e @ (Error::Numeric(_) | Error::State(_)) => PyRuntimeError::new_err(e.to_string()),
        e => PyValueError::new_err(e.to_string()),
    }
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().map_err(py_err)
}

/// Nested lists in row-major order.
fn tensor_to_py<'py>(py: Python<'py>, t: &Tensor) -> PyResult<Bound<'py, PyAny>> {
    fn nest<'py>(py: Python<'py>, shape: &[usize], data: &[f64]) -> PyResult<Bound<'py, PyAny>> {
        match shape {
            [] => Ok(data[0].into_pyobject(py)?.into_any()),
            [_] => Ok(PyList::new(py, data)?.into_any()),
            [n, rest @ ..] => {
                let step = data.len() / n;
                let items = (0..*n).map(|i| nest(py, rest, &data[i * step..(i + 1) * step])).collect::<PyResult<Vec<_>>>()?;
                Ok(PyList::new(py, items)?.into_any())
            }
        }
    }
    nest(py, t.shape(), t.data())
}

/// Architecture hyperparameters shared by teachers and students.
#[pyclass(name = "ModelConfig", module = "recdistill", eq, from_py_object)]
#[derive(Clone, PartialEq)]
struct PyModelConfig {
    inner: ModelConfig,
}

#[pymethods]
impl PyModelConfig {
    #[new]
    #[pyo3(signature = (
        vocab_size, hidden_dim = 32, num_heads = 2, ffn_dim = 64, num_layers = 4, max_positions = 64,
        embedding_rank = None, adapter_bottleneck = 0, dropout_prob = 0.1
    ))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        vocab_size: usize,
        hidden_dim: usize,
        num_heads: usize,
        ffn_dim: usize,
        num_layers: usize,
        max_positions: usize,
        embedding_rank: Option<usize>,
        adapter_bottleneck: usize,
        dropout_prob: f64,
    ) -> PyResult<Self> {
        let inner = ModelConfig {
            hidden_dim,
            num_heads,
            ffn_dim,
            num_layers,
            vocab_size,
            max_positions,
            embedding_rank: embedding_rank.unwrap_or(hidden_dim),
            adapter_bottleneck,
            dropout_prob,
            ..ModelConfig::tiny(vocab_size)
        };
        inner.validate().map_err(py_err)?;
        Ok(PyModelConfig { inner })
    }

    /// BERT-base geometry with the given embedding rank and adapter width.
    #[staticmethod]
    #[pyo3(signature = (embedding_rank = 768, adapter_bottleneck = 0))]
    fn base(embedding_rank: usize, adapter_bottleneck: usize) -> PyResult<Self> {
        let inner = ModelConfig::base(embedding_rank, adapter_bottleneck);
        inner.validate().map_err(py_err)?;
        Ok(PyModelConfig { inner })
    }

    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: ModelConfig = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        inner.validate().map_err(py_err)?;
        Ok(PyModelConfig { inner })
    }

    fn to_json(&self) -> String {
        serde_json::to_string(&self.inner).expect("config serializes")
    }

    #[getter]
    fn vocab_size(&self) -> usize {
        self.inner.vocab_size
    }

    #[getter]
    fn hidden_dim(&self) -> usize {
        self.inner.hidden_dim
    }

    #[getter]
    fn num_heads(&self) -> usize {
        self.inner.num_heads
    }

    #[getter]
    fn ffn_dim(&self) -> usize {
        self.inner.ffn_dim
    }

    #[getter]
    fn num_layers(&self) -> usize {
        self.inner.num_layers
    }

    #[getter]
    fn max_positions(&self) -> usize {
        self.inner.max_positions
    }

    #[getter]
    fn embedding_rank(&self) -> usize {
        self.inner.embedding_rank
    }

    #[getter]
    fn adapter_bottleneck(&self) -> usize {
        self.inner.adapter_bottleneck
    }

    #[getter]
    fn dropout_prob(&self) -> f64 {
        self.inner.dropout_prob
    }

    fn __repr__(&self) -> String {
        format!("ModelConfig({})", self.to_json())
    }
}

/// A teacher encoder or a recursive student, with its MLM head.
#[pyclass(name = "Model", module = "recdistill")]
struct PyModel {
    inner: Backbone,
    /// Checkpoint header entries beyond the model itself (e.g. vocabulary).
    extra_header: BTreeMap<String, String>,
}

impl PyModel {
    fn wrap(inner: Backbone) -> Self {
        PyModel { inner, extra_header: BTreeMap::new() }
    }
}

#[pymethods]
impl PyModel {
    /// Teacher with `config.num_layers` distinct blocks.
    #[staticmethod]
    #[pyo3(signature = (config, seed = 0))]
    fn teacher(config: &PyModelConfig, seed: u64) -> PyResult<Self> {
        let mut r = rng(seed, Stream::Init, 0);
        Backbone::new("teacher", config.inner.clone(), &mut Init::Normal(&mut r)).map(Self::wrap).map_err(py_err)
    }

    /// Student applying one shared block `config.num_layers` times.
    #[staticmethod]
    #[pyo3(signature = (config, seed = 0))]
    fn student(config: &PyModelConfig, seed: u64) -> PyResult<Self> {
        let mut r = rng(seed, Stream::Init, 0);
        Backbone::new("student", config.inner.clone(), &mut Init::Normal(&mut r)).map(Self::wrap).map_err(py_err)
    }

    #[staticmethod]
    fn load(path: std::path::PathBuf) -> PyResult<Self> {
        let ckpt = Checkpoint::load(&path).map_err(py_err)?;
        let inner = Backbone::from_checkpoint(&ckpt).map_err(py_err)?;
        let own = inner.to_checkpoint().header;
        let extra_header = ckpt.header.into_iter().filter(|(k, _)| !own.contains_key(k)).collect();
        Ok(PyModel { inner, extra_header })
    }

    fn save(&self, path: std::path::PathBuf) -> PyResult<()> {
        let mut ckpt = self.inner.to_checkpoint();
        for (k, v) in &self.extra_header {
            ckpt.header.entry(k.clone()).or_insert_with(|| v.clone());
        }
        ckpt.save(path).map_err(py_err)
    }

    /// `"teacher"` or `"student"`.
    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.kind()
    }

    #[getter]
    fn config(&self) -> PyModelConfig {
        PyModelConfig { inner: self.inner.config().clone() }
    }

    /// Parameter count without the MLM head; `tunable_only` counts only
    /// unfrozen tensors.
    #[pyo3(signature = (tunable_only = false))]
    fn num_parameters(&self, tunable_only: bool) -> usize {
        count_parameters(&self.inner, tunable_only)
    }

    /// Hex SHA-256 over every parameter name and value.
    fn digest(&self) -> String {
        param_digest(&self.inner, &|_| true)
    }

    fn parameter_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        self.inner.visit(&mut |n, _| names.push(n.to_string()));
        names
    }

    fn parameter<'py>(&self, py: Python<'py>, name: &str) -> PyResult<Bound<'py, PyAny>> {
        let mut found = None;
        self.inner.visit(&mut |n, t| {
            if n == name {
                found = Some(t.clone());
            }
        });
        let t = found.ok_or_else(|| PyValueError::new_err(format!("no parameter named {name:?}")))?;
        tensor_to_py(py, &t)
    }

    /// Adds freshly initialized adapters of width `bottleneck`.
    #[pyo3(signature = (bottleneck, seed = 0))]
    fn inject_adapters(&mut self, bottleneck: usize, seed: u64) -> PyResult<()> {
        let mut r = rng(seed, Stream::Init, train::ADAPTER_INJECT_STREAM_INDEX);
        self.inner.inject_adapters(bottleneck, &mut Init::Normal(&mut r)).map_err(py_err)
    }

    /// Fully parameterized teacher equivalent to this student.
    fn materialize_unrolled(&self) -> PyResult<Self> {
        match &self.inner {
            Backbone::Student(s) => Ok(Self::wrap(Backbone::Teacher(s.materialize_unrolled()))),
            Backbone::Teacher(_) => Err(PyValueError::new_err("only a student can be unrolled")),
        }
    }

    /// Eval-mode pass over right-padded id rows. Returns a dict with
    /// `embedding` `[B,S,d]`, `hidden_states` and `attention_maps` (one per
    /// layer or iteration) and `logits` `[B,S,V]`, as nested lists.
    fn forward<'py>(&self, py: Python<'py>, rows: Vec<Vec<u32>>) -> PyResult<Bound<'py, PyDict>> {
        let batch = TokenBatch::from_rows(&rows, PAD_ID).map_err(py_err)?;
        let trace: ForwardTrace = self.inner.forward_trace(&batch).map_err(py_err)?;
        let out = PyDict::new(py);
        out.set_item("embedding", tensor_to_py(py, &trace.embedding_output)?)?;
        let list = |ts: &[Tensor]| -> PyResult<Bound<'py, PyList>> {
            PyList::new(py, ts.iter().map(|t| tensor_to_py(py, t)).collect::<PyResult<Vec<_>>>()?)
        };
        out.set_item("hidden_states", list(&trace.hidden_states)?)?;
        out.set_item("attention_maps", list(&trace.attention_maps)?)?;
        if let Some(l) = &trace.logits {
            out.set_item("logits", tensor_to_py(py, l)?)?;
        }
        Ok(out)
    }

    fn __repr__(&self) -> String {
        let c = self.inner.config();
        format!(
            "Model(kind={:?}, d={}, layers={}, vocab={}, rank={}, adapters={}, params={})",
            self.inner.kind(),
            c.hidden_dim,
            c.num_layers,
            c.vocab_size,
            c.embedding_rank,
            c.adapter_bottleneck,
            count_parameters(&self.inner, false)
        )
    }
}

/// Token strings indexed by id, reserved tokens first.
#[pyclass(name = "Vocabulary", module = "recdistill")]
struct PyVocabulary {
    inner: data::Vocabulary,
}

#[pymethods]
impl PyVocabulary {
    /// Reserved tokens plus the most frequent corpus tokens.
    #[staticmethod]
    #[pyo3(signature = (corpus, size, mode = "word"))]
    fn build(corpus: Vec<String>, size: usize, mode: &str) -> PyResult<Self> {
        let mode: TokenizerMode = parse(mode)?;
        data::Vocabulary::build(&corpus, size, mode).map(|inner| PyVocabulary { inner }).map_err(py_err)
    }

    /// Token ids of `text` without special tokens.
    fn encode(&self, text: &str) -> Vec<u32> {
        self.inner.encode(text)
    }

    fn id(&self, token: &str) -> u32 {
        self.inner.id(token)
    }

    fn token(&self, id: u32) -> Option<String> {
        self.inner.token(id).map(str::to_string)
    }

    fn tokens(&self) -> Vec<String> {
        self.inner.tokens().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// `[CLS] window [SEP]` sequences with at most `max_per_doc` windows per
/// document.
#[pyfunction]
#[pyo3(signature = (documents, window, stride, max_per_doc = 10))]
fn window_corpus(documents: Vec<Vec<u32>>, window: usize, stride: usize, max_per_doc: usize) -> PyResult<Vec<Vec<u32>>> {
    data::window_corpus(&documents, window, stride, max_per_doc).map_err(py_err)
}

/// Masked-LM corruption of one sequence. Returns the corrupted ids and the
/// original id (or `None`) per position.
#[pyfunction]
#[pyo3(signature = (sequence, vocab_size, seed, index, p_mask = 0.15, mask_frac = 0.8, random_frac = 0.1))]
fn mask_sequence(
    sequence: Vec<u32>,
    vocab_size: usize,
    seed: u64,
    index: u64,
    p_mask: f64,
    mask_frac: f64,
    random_frac: f64,
) -> PyResult<(Vec<u32>, Vec<Option<u32>>)> {
    let cfg = MaskingConfig { p_mask, mask_frac, random_frac };
    let m = data::apply_mlm_masking(&sequence, vocab_size, &cfg, seed, index).map_err(py_err)?;
    Ok((m.input, m.labels))
}

/// Documents of the synthetic corpus.
#[pyfunction]
#[pyo3(signature = (seed, docs, min_sentences = 2, max_sentences = 6))]
fn synthetic_corpus(seed: u64, docs: usize, min_sentences: usize, max_sentences: usize) -> Vec<String> {
    data::synthetic_corpus(seed, docs, min_sentences, max_sentences)
}

/// `(text, label)` pairs of the synthetic classification task.
#[pyfunction]
fn synthetic_classification(seed: u64, n: usize) -> Vec<(String, String)> {
    data::synthetic_classification(seed, n).into_iter().map(|e| (e.text, e.label)).collect()
}

/// Teacher layer (1-based) aligned with each student iteration.
#[pyfunction]
#[pyo3(signature = (student_iterations, teacher_layers, strategy = "uniform_stride"))]
fn layer_map(student_iterations: usize, teacher_layers: usize, strategy: &str) -> PyResult<Vec<usize>> {
    let strategy: LayerMapStrategy = serde_json::from_value(serde_json::Value::String(strategy.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown layer map strategy {strategy:?}")))?;
    build_layer_map(student_iterations, teacher_layers, strategy).map(|m| m.mapping).map_err(py_err)
}

/// Smallest adapter width whose `2 * iterations` adapters reach `budget`.
#[pyfunction]
fn derive_adapter_bottleneck(hidden_dim: usize, iterations: usize, budget: usize) -> usize {
    model::derive_adapter_bottleneck(hidden_dim, iterations, budget)
}

/// Learning rate at `step` under linear warmup and linear decay.
#[pyfunction]
fn lr_at(step: usize, peak_lr: f64, warmup_steps: usize, total_steps: usize) -> f64 {
    train::lr_at(step, &ScheduleConfig { peak_lr, warmup_steps, total_steps, ..ScheduleConfig::default() })
}

/// F1 over BIO tag sequences; `scheme` is `entity_span` or `token_micro`.
#[pyfunction]
#[pyo3(signature = (predictions, gold, scheme = "entity_span"))]
fn f1_score(predictions: Vec<Vec<String>>, gold: Vec<Vec<String>>, scheme: &str) -> PyResult<f64> {
    let scheme = match scheme {
        "entity_span" => F1Scheme::EntitySpan,
        "token_micro" => F1Scheme::TokenMicro,
        other => return Err(PyValueError::new_err(format!("unknown F1 scheme {other:?}"))),
    };
    eval::f1_score(&predictions, &gold, scheme).map_err(py_err)
}

fn schedule(steps: usize, peak_lr: f64, warmup_steps: Option<usize>, batch_size: usize) -> PyResult<ScheduleConfig> {
    let s = ScheduleConfig {
        peak_lr,
        warmup_steps: warmup_steps.unwrap_or(steps / 10),
        total_steps: steps,
        batch_size,
        ..ScheduleConfig::default()
    };
    s.validate().map_err(py_err)?;
    Ok(s)
}

fn finish(log: TrainLog) -> PyResult<String> {
    match log.diverged_at {
        Some(step) => Err(PyRuntimeError::new_err(format!("training diverged at step {step}"))),
        None => Ok(log.to_csv()),
    }
}

/// Masked-LM pre-training in place. Returns the metrics CSV.
#[pyfunction]
#[pyo3(signature = (model, sequences, steps, peak_lr = 1e-3, warmup_steps = None, batch_size = 16, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn pretrain(
    py: Python<'_>,
    model: &mut PyModel,
    sequences: Vec<Vec<u32>>,
    steps: usize,
    peak_lr: f64,
    warmup_steps: Option<usize>,
    batch_size: usize,
    seed: u64,
) -> PyResult<String> {
    let s = schedule(steps, peak_lr, warmup_steps, batch_size)?;
    let opts = RunOptions { seed, timing: false };
    let log = py
        .detach(|| train::pretrain_teacher(&mut model.inner, &sequences, &MaskingConfig::default(), &s, &opts))
        .map_err(py_err)?;
    finish(log)
}

/// Distils `teacher` into `student` in place. Returns the metrics CSV.
#[pyfunction]
#[pyo3(signature = (
    student, teacher, sequences, steps, peak_lr = 1e-3, warmup_steps = None, batch_size = 16, seed = 0,
    alignment = "full", layer_map = "uniform_stride", lambdas = (1.0, 3.0, 5.0), embed_loss = false
))]
#[allow(clippy::too_many_arguments)]
fn distill(
    py: Python<'_>,
    student: &mut PyModel,
    teacher: &PyModel,
    sequences: Vec<Vec<u32>>,
    steps: usize,
    peak_lr: f64,
    warmup_steps: Option<usize>,
    batch_size: usize,
    seed: u64,
    alignment: &str,
    layer_map: &str,
    lambdas: (f64, f64, f64),
    embed_loss: bool,
) -> PyResult<String> {
    let s = schedule(steps, peak_lr, warmup_steps, batch_size)?;
    let alignment_mode: AlignmentMode = parse(alignment)?;
    let strategy: LayerMapStrategy = serde_json::from_value(serde_json::Value::String(layer_map.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown layer map strategy {layer_map:?}")))?;
    let (sc, tc) = (student.inner.config(), teacher.inner.config());
    let map = build_layer_map(sc.num_layers, tc.num_layers, strategy).map_err(py_err)?;
    train::check_distill_compat(sc, tc, &map).map_err(py_err)?;
    let weights = LossWeights {
        lambda_mlm: lambdas.0,
        lambda_align: lambdas.1,
        lambda_out: lambdas.2,
        alignment_mode,
        embed_loss,
        ..LossWeights::default()
    };
    let opts = RunOptions { seed, timing: false };
    let teacher = &teacher.inner;
    let log = py
        .detach(|| {
            train::distill_student(&mut student.inner, teacher, &sequences, &MaskingConfig::default(), &weights, &map, &s, &opts)
        })
        .map_err(py_err)?;
    finish(log)
}

#[pymodule]
fn recdistill(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    m.add("CorruptCheckpointError", m.py().get_type::<CorruptCheckpointError>())?;
    m.add_class::<PyModelConfig>()?;
    m.add_class::<PyModel>()?;
    m.add_class::<PyVocabulary>()?;
    m.add_function(wrap_pyfunction!(window_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(mask_sequence, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_corpus, m)?)?;
    m.add_function(wrap_pyfunction!(synthetic_classification, m)?)?;
    m.add_function(wrap_pyfunction!(layer_map, m)?)?;
    m.add_function(wrap_pyfunction!(derive_adapter_bottleneck, m)?)?;
    m.add_function(wrap_pyfunction!(lr_at, m)?)?;
    m.add_function(wrap_pyfunction!(f1_score, m)?)?;
    m.add_function(wrap_pyfunction!(pretrain, m)?)?;
    m.add_function(wrap_pyfunction!(distill, m)?)?;
    Ok(())
}

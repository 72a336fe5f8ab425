//! Python bindings for the fairness audit toolkit.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use serde::Serialize;

use fairaudit_core::audit::{self, AuditConfig};
use fairaudit_core::dataset::{
    apply_rater_labels, generate_synthetic_corpus, load_corpus, save_corpus, simulate_raters, write_latents,
    CorpusFormat, DecisionVector, RaterConfig,
};
use fairaudit_core::embed::{self, EmbeddingSource};
use fairaudit_core::fairness::{self, Averaging};
use fairaudit_core::simindex::{self, Metric, NeighborMode};
use fairaudit_core::Error;

fn py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

trait IntoPy<T> {
    fn py(self) -> PyResult<T>;
}

impl<T> IntoPy<T> for fairaudit_core::Result<T> {
    fn py(self) -> PyResult<T> {
        self.map_err(py_err)
    }
}

/// Serde value to plain Python objects through the json module.
fn to_py<'py>(py: Python<'py>, value: &impl Serialize) -> PyResult<Bound<'py, PyAny>> {
    let text = serde_json::to_string(value).map_err(|e| PyValueError::new_err(e.to_string()))?;
    py.import("json")?.call_method1("loads", (text,))
}

fn parse<T: std::str::FromStr<Err = Error>>(s: &str) -> PyResult<T> {
    s.parse().py()
}

/// Row-major profile embeddings made of equal-width field blocks.
#[pyclass(name = "EmbeddingMatrix", module = "fairaudit")]
struct PyEmbeddingMatrix {
    inner: embed::EmbeddingMatrix,
}

#[pymethods]
impl PyEmbeddingMatrix {
    /// Rows must have equal length; the width is split into five field blocks.
    #[new]
    fn new(rows: Vec<Vec<f32>>, ids: Vec<String>) -> PyResult<Self> {
        let width = rows.first().map_or(0, Vec::len);
        if width % 5 != 0 {
            return Err(PyValueError::new_err(format!(
                "row width {width} is not divisible by 5 fields"
            )));
        }
        let data: Vec<f32> = rows.iter().flatten().copied().collect();
        if data.len() != width * rows.len() {
            return Err(PyValueError::new_err("rows have unequal lengths"));
        }
        let inner = embed::EmbeddingMatrix::canonical(data, width / 5, ids).py()?;
        Ok(PyEmbeddingMatrix { inner })
    }

    /// Loads a binary or CSV matrix file.
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyEmbeddingMatrix {
            inner: embed::load_matrix(&path).py()?,
        })
    }

    /// Hash-embeds every profile of a corpus file.
    #[staticmethod]
    #[pyo3(signature = (corpus, d = 768, seed = 0, normalize = true))]
    fn from_corpus(corpus: PathBuf, d: usize, seed: u64, normalize: bool) -> PyResult<Self> {
        let profiles = load_corpus(&corpus, CorpusFormat::from_path(&corpus)).py()?;
        let source = EmbeddingSource::Hash { seed, max_tokens: None };
        let mut inner = embed::embed_corpus(&profiles, &source, d).py()?;
        if normalize {
            inner.normalize_blocks();
        }
        Ok(PyEmbeddingMatrix { inner })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        embed::write_matrix_binary(&path, &self.inner).py()
    }

    #[getter]
    fn n_rows(&self) -> usize {
        self.inner.n_rows()
    }

    #[getter]
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    #[getter]
    fn dim_per_field(&self) -> usize {
        self.inner.dim_per_field()
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.index_order().to_vec()
    }

    fn row(&self, i: usize) -> PyResult<Vec<f32>> {
        if i >= self.inner.n_rows() {
            return Err(PyValueError::new_err(format!("row {i} out of range")));
        }
        Ok(self.inner.row(i).to_vec())
    }

    fn to_list(&self) -> Vec<Vec<f32>> {
        self.inner.rows().map(<[f32]>::to_vec).collect()
    }

    fn normalize_blocks(&mut self) {
        self.inner.normalize_blocks();
    }

    fn select_rows(&self, ids: Vec<String>) -> PyResult<Self> {
        Ok(PyEmbeddingMatrix {
            inner: self.inner.select_rows(&ids).py()?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.n_rows()
    }

    fn __repr__(&self) -> String {
        format!(
            "EmbeddingMatrix(n_rows={}, dim={})",
            self.inner.n_rows(),
            self.inner.dim()
        )
    }
}

/// k nearest neighbors of every row, as indices into `ids`.
#[pyclass(name = "NeighborList", module = "fairaudit", frozen)]
struct PyNeighborList {
    inner: simindex::NeighborList,
}

#[pymethods]
impl PyNeighborList {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        Ok(PyNeighborList {
            inner: simindex::NeighborList::from_json(text).py()?,
        })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyNeighborList {
            inner: simindex::NeighborList::load(&path).py()?,
        })
    }

    fn to_json(&self) -> PyResult<String> {
        self.inner.to_json().py()
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(&path).py()
    }

    #[getter]
    fn k(&self) -> usize {
        self.inner.k
    }

    #[getter]
    fn metric(&self) -> String {
        self.inner.metric.to_string()
    }

    #[getter]
    fn excludes_self(&self) -> bool {
        self.inner.excludes_self
    }

    #[getter]
    fn ids(&self) -> Vec<String> {
        self.inner.index_order.clone()
    }

    #[getter]
    fn neighbors(&self) -> Vec<Vec<usize>> {
        self.inner.neighbors.clone()
    }

    #[getter]
    fn scores(&self) -> Vec<Vec<f64>> {
        self.inner.scores.clone()
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }
}

/// Audit results per decision source.
#[pyclass(name = "AuditReport", module = "fairaudit", frozen)]
struct PyAuditReport {
    inner: audit::AuditReport,
}

#[pymethods]
impl PyAuditReport {
    #[staticmethod]
    fn from_json(text: &str) -> PyResult<Self> {
        let inner: audit::AuditReport = serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?;
        Ok(PyAuditReport { inner })
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        let text =
            std::fs::read_to_string(&path).map_err(|e| PyIOError::new_err(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    /// `json`, `csv` or `markdown`.
    #[pyo3(signature = (format = "markdown"))]
    fn render(&self, format: &str) -> PyResult<String> {
        audit::render_report(&self.inner, parse(format)?).py()
    }

    #[getter]
    fn sources(&self) -> Vec<String> {
        self.inner.sources()
    }

    #[getter]
    fn rows<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.rows)
    }

    #[getter]
    fn metadata<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &self.inner.metadata)
    }

    fn row<'py>(&self, py: Python<'py>, source: &str) -> PyResult<Bound<'py, PyAny>> {
        match self.inner.row(source) {
            Some(r) => to_py(py, r),
            None => Err(py_err(Error::UnknownSource {
                name: source.to_string(),
                available: self.inner.sources(),
            })),
        }
    }

    fn compare<'py>(&self, py: Python<'py>, a: &str, b: &str) -> PyResult<Bound<'py, PyAny>> {
        to_py(py, &audit::compare_sources(&self.inner, a, b).py()?)
    }
}

#[pyfunction]
#[pyo3(signature = (text, d = 768, seed = 0, max_tokens = None))]
fn hash_embed_field(text: &str, d: usize, seed: u64, max_tokens: Option<usize>) -> PyResult<Vec<f32>> {
    if d == 0 {
        return Err(PyValueError::new_err("d must be at least 1"));
    }
    Ok(embed::hash_embed_field_with(text, d, seed, max_tokens))
}

#[pyfunction]
fn tokenize(text: &str) -> Vec<String> {
    embed::tokenize(text)
}

#[pyfunction]
#[pyo3(signature = (a, b, metric = "cosine"))]
fn pairwise_similarity(a: Vec<f32>, b: Vec<f32>, metric: &str) -> PyResult<f64> {
    simindex::pairwise_similarity(&a, &b, parse::<Metric>(metric)?).py()
}

#[pyfunction]
#[pyo3(signature = (matrix, k = 5, metric = "cosine", exclude_self = true))]
fn knn_exact(matrix: &PyEmbeddingMatrix, k: usize, metric: &str, exclude_self: bool) -> PyResult<PyNeighborList> {
    let inner = simindex::knn_exact(&matrix.inner, k, parse(metric)?, exclude_self).py()?;
    Ok(PyNeighborList { inner })
}

#[pyfunction]
#[pyo3(signature = (matrix, k = 5, metric = "cosine", exclude_self = true, batch_size = 256))]
fn knn_batched(
    matrix: &PyEmbeddingMatrix,
    k: usize,
    metric: &str,
    exclude_self: bool,
    batch_size: usize,
) -> PyResult<PyNeighborList> {
    let inner = simindex::knn_batched(&matrix.inner, k, parse(metric)?, exclude_self, batch_size).py()?;
    Ok(PyNeighborList { inner })
}

#[pyfunction]
#[pyo3(signature = (matrix, k = 5, metric = "cosine", exclude_self = true, candidate_pool = None, field_weights = None))]
fn knn_reranked(
    matrix: &PyEmbeddingMatrix,
    k: usize,
    metric: &str,
    exclude_self: bool,
    candidate_pool: Option<usize>,
    field_weights: Option<Vec<f64>>,
) -> PyResult<PyNeighborList> {
    let mode = NeighborMode::Reranked {
        candidate_pool,
        field_weights: field_weights.unwrap_or_default(),
    };
    let inner = simindex::find_neighbors(&matrix.inner, k, parse(metric)?, exclude_self, &mode).py()?;
    Ok(PyNeighborList { inner })
}

/// Consistency of binary decisions listed in the neighbor list's id order.
#[pyfunction]
fn consistency(decisions: Vec<u8>, neighbors: &PyNeighborList) -> PyResult<f64> {
    let d = DecisionVector::new("python", decisions, neighbors.inner.index_order.clone()).py()?;
    Ok(fairness::consistency(&d, &neighbors.inner).py()?.score)
}

#[pyfunction]
#[pyo3(signature = (predicted, truth, averaging = "weighted"))]
fn classification_metrics<'py>(
    py: Python<'py>,
    predicted: Vec<u8>,
    truth: Vec<u8>,
    averaging: &str,
) -> PyResult<Bound<'py, PyAny>> {
    let ids: Vec<String> = (0..truth.len()).map(|i| i.to_string()).collect();
    let p = DecisionVector::new("predicted", predicted, ids.clone()).py()?;
    let t = DecisionVector::new("truth", truth, ids).py()?;
    to_py(
        py,
        &fairness::classification_metrics(&p, &t, parse::<Averaging>(averaging)?).py()?,
    )
}

/// Writes a synthetic corpus with simulated rater labels and a latent sidecar file.
/// Returns the number of profiles written.
#[pyfunction]
#[pyo3(signature = (out, n = 870, vocab = 200, seed = 0, noise_sigma = 0.0, bias = None,
                    thresholds = (0.5, 0.5, 0.5), rater_seed = None, latents = None))]
#[allow(clippy::too_many_arguments)]
fn generate_synthetic(
    out: PathBuf,
    n: usize,
    vocab: usize,
    seed: u64,
    noise_sigma: f64,
    bias: Option<BTreeMap<u8, f64>>,
    thresholds: (f64, f64, f64),
    rater_seed: Option<u64>,
    latents: Option<PathBuf>,
) -> PyResult<usize> {
    let mut corpus = generate_synthetic_corpus(n, vocab, seed).py()?;
    let cfg = RaterConfig {
        quality_weights: Vec::new(),
        noise_sigma,
        bias_shift: bias.unwrap_or_default(),
        stage_thresholds: [thresholds.0, thresholds.1, thresholds.2],
        seed: rater_seed.unwrap_or(seed),
    };
    let decisions = simulate_raters(&corpus.profiles, &corpus.latents, &cfg).py()?;
    apply_rater_labels(&mut corpus.profiles, &decisions).py()?;
    save_corpus(&out, &corpus.profiles, CorpusFormat::from_path(&out)).py()?;
    let latents = latents.unwrap_or_else(|| {
        let mut name = out.file_stem().unwrap_or_default().to_os_string();
        name.push(".latents.jsonl");
        out.with_file_name(name)
    });
    write_latents(&latents, &corpus.latents).py()?;
    Ok(corpus.profiles.len())
}

/// Runs the full audit. `config` is a JSON object of audit settings; keyword
/// arguments override it. With `out` the run directory is written too.
#[pyfunction]
#[pyo3(signature = (corpus, out = None, config = None, seed = None, d = None, trials = None))]
fn run_audit(
    corpus: PathBuf,
    out: Option<PathBuf>,
    config: Option<&str>,
    seed: Option<u64>,
    d: Option<usize>,
    trials: Option<usize>,
) -> PyResult<PyAuditReport> {
    let mut cfg: AuditConfig = match config {
        Some(text) => serde_json::from_str(text).map_err(|e| PyValueError::new_err(e.to_string()))?,
        None => AuditConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(d) = d {
        cfg.dim_per_field = d;
    }
    match trials {
        Some(0) => cfg.search = false,
        Some(t) => {
            cfg.search = true;
            cfg.stumps.search_trials = t;
            cfg.birnn.search_trials = t;
        }
        None => {}
    }
    let source = EmbeddingSource::Hash {
        seed: cfg.seed,
        max_tokens: None,
    };
    let run = audit::run_audit(&corpus, &source, &cfg).py()?;
    if let Some(dir) = out {
        run.write_dir(&dir).py()?;
    }
    Ok(PyAuditReport { inner: run.report })
}

#[pymodule]
fn fairaudit(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyEmbeddingMatrix>()?;
    m.add_class::<PyNeighborList>()?;
    m.add_class::<PyAuditReport>()?;
    m.add_function(wrap_pyfunction!(hash_embed_field, m)?)?;
    m.add_function(wrap_pyfunction!(tokenize, m)?)?;
    m.add_function(wrap_pyfunction!(pairwise_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(knn_exact, m)?)?;
    m.add_function(wrap_pyfunction!(knn_batched, m)?)?;
    m.add_function(wrap_pyfunction!(knn_reranked, m)?)?;
    m.add_function(wrap_pyfunction!(consistency, m)?)?;
    m.add_function(wrap_pyfunction!(classification_metrics, m)?)?;
    m.add_function(wrap_pyfunction!(generate_synthetic, m)?)?;
    m.add_function(wrap_pyfunction!(run_audit, m)?)?;
    m.add("__version__", env!("CARGO_PKG_VERSION"))?;
    Ok(())
}

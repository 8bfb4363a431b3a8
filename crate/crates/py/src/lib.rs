//! Python bindings for the latefuse toolkit: hashing, similarity audit,
//! fusion classification, evaluation, and trend regression.
//!
//! The module is deliberately array-free: vectors come in as plain lists
//! so callers can feed embeddings from any source.

use std::collections::BTreeMap;

use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use latefuse::corpus::{self, Label};
use latefuse::dedup::{self, ImageHash};
use latefuse::error::Error;
use latefuse::eval;
use latefuse::fusion::{self, ScoredSample, TrainConfig};
use latefuse::simaudit::{self, EmbeddingVector, IndexParams};
use latefuse::trend::{self, MonthKey};

fn to_py_err(e: Error) -> PyErr {
    match e {
        Error::Io { .. } => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn label_from_code(code: u8) -> PyResult<Label> {
    Label::from_code(code).map_err(to_py_err)
}

/// Strip hyperlinks, @-mentions, and #-hashtags; collapse whitespace.
#[pyfunction]
fn sanitize_text(raw: &str) -> String {
    corpus::sanitize_text(raw)
}

/// 64-bit dHash of an encoded image (PNG/JPEG bytes).
#[pyfunction]
fn dhash_bytes(data: Vec<u8>) -> PyResult<u64> {
    let img = corpus::load_image(&corpus::ImageRef::Bytes(data)).map_err(to_py_err)?;
    Ok(dedup::dhash(&img).map_err(to_py_err)?.0)
}

/// 64-bit dHash of an image file.
#[pyfunction]
fn dhash_path(path: &str) -> PyResult<u64> {
    let img = corpus::load_image(&corpus::ImageRef::Path(path.into())).map_err(to_py_err)?;
    Ok(dedup::dhash(&img).map_err(to_py_err)?.0)
}

/// Fraction of agreeing bits between two dHash values.
#[pyfunction]
fn hash_similarity(a: u64, b: u64) -> f64 {
    dedup::hash_similarity(ImageHash(a), ImageHash(b))
}

/// Jaccard similarity of two (table, bucket) token sets.
#[pyfunction]
fn jaccard(a: Vec<(u16, u64)>, b: Vec<(u16, u64)>) -> f64 {
    simaudit::jaccard(&a, &b)
}

/// Label name -> code (pro_ed=0, neutral=1, pro_recovery=2).
#[pyfunction]
fn label_code(name: &str) -> PyResult<u8> {
    for label in Label::ALL {
        if label.as_wire() == name {
            return Ok(label.code());
        }
    }
    Err(PyValueError::new_err(format!("unknown label {name:?}")))
}

/// Label code -> name.
#[pyfunction]
fn label_name(code: u8) -> PyResult<String> {
    Ok(label_from_code(code)?.as_wire().to_string())
}

/// Overflow-safe softmax of three logits.
#[pyfunction]
fn softmax(logits: [f64; 3]) -> [f64; 3] {
    fusion::softmax(&logits)
}

/// Element-wise mean of two score vectors.
#[pyfunction]
fn mean_fuse(text: [f64; 3], image: [f64; 3]) -> [f64; 3] {
    fusion::mean_fuse(&text, &image)
}

/// Multiclass cross-entropy of a probability vector at the true code.
#[pyfunction]
fn cross_entropy(probs: [f64; 3], true_code: u8) -> PyResult<f64> {
    label_from_code(true_code)?;
    Ok(fusion::cross_entropy(&probs, true_code))
}

/// 3x3 confusion matrix (rows true, columns predicted).
#[pyfunction]
fn confusion(preds: Vec<u8>, truth: Vec<u8>) -> PyResult<Vec<Vec<u64>>> {
    let cm = eval::confusion(&preds, &truth).map_err(to_py_err)?;
    Ok(cm.counts.iter().map(|row| row.to_vec()).collect())
}

/// Accuracy, macro precision/recall/F1, and per-class metrics.
#[pyfunction]
fn metrics(py: Python<'_>, counts: Vec<Vec<u64>>) -> PyResult<Py<PyDict>> {
    if counts.len() != 3 || counts.iter().any(|row| row.len() != 3) {
        return Err(PyValueError::new_err("confusion matrix must be 3x3"));
    }
    let mut cm = eval::ConfusionMatrix::default();
    for (t, row) in counts.iter().enumerate() {
        for (p, &count) in row.iter().enumerate() {
            cm.counts[t][p] = count;
        }
    }
    let report = eval::metrics(&cm).map_err(to_py_err)?;
    let dict = PyDict::new(py);
    dict.set_item("accuracy", report.accuracy)?;
    dict.set_item("macro_precision", report.macro_precision)?;
    dict.set_item("macro_recall", report.macro_recall)?;
    dict.set_item("macro_f1", report.macro_f1)?;
    let per_class: Vec<Py<PyDict>> = report
        .per_class
        .iter()
        .map(|m| {
            let d = PyDict::new(py);
            d.set_item("precision", m.precision)?;
            d.set_item("recall", m.recall)?;
            d.set_item("f1", m.f1)?;
            Ok(d.unbind())
        })
        .collect::<PyResult<_>>()?;
    dict.set_item("per_class", per_class)?;
    Ok(dict.unbind())
}

/// Least-squares polynomial fit; returns coefficients in ascending
/// powers plus rss, r_squared, and the F-test p_value.
#[pyfunction]
#[pyo3(signature = (xs, ys, degree = 3))]
fn polyfit(py: Python<'_>, xs: Vec<f64>, ys: Vec<f64>, degree: usize) -> PyResult<Py<PyDict>> {
    let fit = trend::polyfit(&xs, &ys, degree).map_err(to_py_err)?;
    fit_to_dict(py, &fit)
}

fn fit_to_dict(py: Python<'_>, fit: &trend::PolyFit) -> PyResult<Py<PyDict>> {
    let dict = PyDict::new(py);
    dict.set_item("degree", fit.degree)?;
    dict.set_item("coefficients", fit.coefficients.clone())?;
    dict.set_item("rss", fit.rss)?;
    dict.set_item("r_squared", fit.r_squared)?;
    dict.set_item("p_value", fit.p_value)?;
    Ok(dict.unbind())
}

/// Three sorted, pairwise non-adjacent sampling days for a month,
/// uniform over all valid triples and deterministic per (month, seed).
#[pyfunction]
fn sampling_schedule(year: i32, month: u32, seed: u64) -> PyResult<(u32, u32, u32)> {
    let key = MonthKey::new(year, month).map_err(to_py_err)?;
    let [a, b, c] = trend::sampling_schedule(key, seed);
    Ok((a, b, c))
}

/// (year, month, examined, pro_ed, abundance_percent) per month.
type MonthRow = (i32, u32, u64, u64, f64);

/// Groups (RFC3339 timestamp, label code) pairs by calendar month;
/// returns rows of (year, month, examined, pro_ed, abundance_percent).
#[pyfunction]
fn aggregate_monthly(timestamps: Vec<String>, labels: Vec<u8>) -> PyResult<Vec<MonthRow>> {
    if timestamps.len() != labels.len() {
        return Err(PyValueError::new_err("timestamps and labels differ in length"));
    }
    let mut items = Vec::with_capacity(labels.len());
    for (raw, &code) in timestamps.iter().zip(&labels) {
        let when = chrono::DateTime::parse_from_rfc3339(raw)
            .map_err(|e| PyValueError::new_err(format!("bad timestamp {raw:?}: {e}")))?
            .with_timezone(&chrono::Utc);
        items.push((when, label_from_code(code)?));
    }
    let series = trend::aggregate_monthly(&items);
    Ok(series
        .points
        .iter()
        .map(|p| (p.month.year, p.month.month, p.examined, p.pro_ed, p.abundance))
        .collect())
}

/// (neighbor_id, neighbor_label_code, jaccard) rows backing a flag.
type NeighborRow = (String, u8, f64);
/// (id, label_code, neighbors) per flagged item.
type FlagRow = (String, u8, Vec<NeighborRow>);

/// Multi-table random-hyperplane similarity index over 768-d embeddings.
#[pyclass(name = "SimIndex")]
struct PySimIndex {
    inner: simaudit::SimIndex,
}

#[pymethods]
impl PySimIndex {
    /// Builds the index from parallel lists of ids, 768-float vectors,
    /// and label codes.
    #[new]
    #[pyo3(signature = (ids, vectors, labels, tables = 8, bits = 16, seed = 42))]
    fn new(
        ids: Vec<String>,
        vectors: Vec<Vec<f32>>,
        labels: Vec<u8>,
        tables: u16,
        bits: u32,
        seed: u64,
    ) -> PyResult<Self> {
        if ids.len() != vectors.len() || ids.len() != labels.len() {
            return Err(PyValueError::new_err(
                "ids, vectors, and labels must have equal lengths",
            ));
        }
        let mut items = Vec::with_capacity(ids.len());
        for ((id, vector), &code) in ids.into_iter().zip(vectors).zip(&labels) {
            items.push((
                id,
                EmbeddingVector::new(vector).map_err(to_py_err)?,
                label_from_code(code)?,
            ));
        }
        let params = IndexParams { tables, bits, seed };
        Ok(PySimIndex {
            inner: simaudit::SimIndex::build(params, items).map_err(to_py_err)?,
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    /// Signature tokens of an arbitrary vector under this index's
    /// hyperplanes.
    fn signature(&self, vector: Vec<f32>) -> PyResult<Vec<(u16, u64)>> {
        let v = EmbeddingVector::new(vector).map_err(to_py_err)?;
        Ok(self.inner.signature(&v).tokens)
    }

    /// Top-k neighbors of an indexed item: (id, jaccard) descending.
    #[pyo3(signature = (item_id, k = 5))]
    fn query(&self, item_id: &str, k: usize) -> PyResult<Vec<(String, f64)>> {
        self.inner.query_similar(item_id, k).map_err(to_py_err)
    }

    /// Flags items whose top-k neighbors mostly carry a different label;
    /// returns (id, label_code, [(neighbor_id, neighbor_code, score)]).
    #[pyo3(signature = (k = 5, flag_min_disagree = 3))]
    fn audit(&self, k: usize, flag_min_disagree: usize) -> PyResult<Vec<FlagRow>> {
        let report = self.inner.audit_labels(k, flag_min_disagree).map_err(to_py_err)?;
        Ok(report
            .flagged
            .into_iter()
            .map(|f| {
                (
                    f.id,
                    f.label.code(),
                    f.neighbors
                        .into_iter()
                        .map(|n| (n.id, n.label.code(), n.score))
                        .collect(),
                )
            })
            .collect())
    }
}

/// Trainable 6 -> 3 late-fusion head.
#[pyclass(name = "FusionHead")]
struct PyFusionHead {
    inner: fusion::FusionHead,
}

#[pymethods]
impl PyFusionHead {
    /// Zero-initialized head (uniform predictions).
    #[staticmethod]
    fn zeros() -> Self {
        PyFusionHead {
            inner: fusion::FusionHead::zeros(),
        }
    }

    /// Head computing the element-wise mean of the two modalities.
    #[staticmethod]
    fn averaging() -> Self {
        PyFusionHead {
            inner: fusion::FusionHead::averaging(),
        }
    }

    #[staticmethod]
    fn from_json(json: &str) -> PyResult<Self> {
        Ok(PyFusionHead {
            inner: fusion::FusionHead::from_json(json).map_err(to_py_err)?,
        })
    }

    fn to_json(&self) -> String {
        self.inner.to_json()
    }

    /// Fused logits for one (text, image) score pair.
    fn fuse(&self, text: [f64; 3], image: [f64; 3]) -> [f64; 3] {
        fusion::fuse(&text, &image, &self.inner)
    }

    /// (predicted_code, probabilities) for one score pair.
    fn predict(&self, text: [f64; 3], image: [f64; 3]) -> (u8, [f64; 3]) {
        let (label, probs) = fusion::predict_scores(&text, &image, &self.inner);
        (label.code(), probs)
    }

    /// Training metadata: (epochs_run, best_val_loss).
    fn meta(&self) -> (usize, f64) {
        (self.inner.meta.epochs_run, self.inner.meta.best_val_loss)
    }
}

fn to_samples(
    text: Vec<[f64; 3]>,
    image: Vec<[f64; 3]>,
    labels: Vec<u8>,
) -> PyResult<Vec<ScoredSample>> {
    if text.len() != image.len() || text.len() != labels.len() {
        return Err(PyValueError::new_err(
            "text, image, and labels must have equal lengths",
        ));
    }
    text.into_iter()
        .zip(image)
        .zip(labels)
        .map(|((t, i), code)| {
            Ok(ScoredSample {
                text: t,
                image: i,
                label: label_from_code(code)?,
            })
        })
        .collect()
}

/// Mini-batch gradient descent on the fusion head with early stopping.
#[pyfunction]
#[allow(clippy::too_many_arguments)]
#[pyo3(signature = (
    train_text, train_image, train_labels,
    val_text, val_image, val_labels,
    learning_rate = 0.1, max_epochs = 200, batch_size = 32, patience = 10, seed = 42
))]
fn train_fusion(
    train_text: Vec<[f64; 3]>,
    train_image: Vec<[f64; 3]>,
    train_labels: Vec<u8>,
    val_text: Vec<[f64; 3]>,
    val_image: Vec<[f64; 3]>,
    val_labels: Vec<u8>,
    learning_rate: f64,
    max_epochs: usize,
    batch_size: usize,
    patience: usize,
    seed: u64,
) -> PyResult<PyFusionHead> {
    let train = to_samples(train_text, train_image, train_labels)?;
    let val = to_samples(val_text, val_image, val_labels)?;
    let cfg = TrainConfig {
        learning_rate,
        max_epochs,
        batch_size,
        patience,
        seed,
    };
    Ok(PyFusionHead {
        inner: fusion::train_fusion(&train, &val, &cfg).map_err(to_py_err)?,
    })
}

/// Max relative error between analytic and finite-difference gradients.
#[pyfunction]
fn gradient_check(
    head: &PyFusionHead,
    text: Vec<[f64; 3]>,
    image: Vec<[f64; 3]>,
    labels: Vec<u8>,
) -> PyResult<f64> {
    let batch = to_samples(text, image, labels)?;
    if batch.is_empty() {
        return Err(PyValueError::new_err("batch must be non-empty"));
    }
    Ok(fusion::gradient_check(&head.inner, &batch))
}

/// One-vs-rest ROC/PR areas per class: {class: (roc_auc, pr_auc)}.
#[pyfunction]
fn ovr_curve_areas(
    prob_rows: Vec<[f64; 3]>,
    truth: Vec<u8>,
) -> PyResult<BTreeMap<u8, (f64, f64)>> {
    let curves = eval::ovr_curves(&prob_rows, &truth).map_err(to_py_err)?;
    let mut areas = BTreeMap::new();
    for (c, class_curves) in curves.per_class.iter().enumerate() {
        if let Some(class_curves) = class_curves {
            areas.insert(
                c as u8,
                (
                    eval::trapezoid_area(&class_curves.roc),
                    eval::trapezoid_area(&class_curves.pr),
                ),
            );
        }
    }
    Ok(areas)
}

#[pymodule]
fn _latefuse(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_function(wrap_pyfunction!(sanitize_text, m)?)?;
    m.add_function(wrap_pyfunction!(dhash_bytes, m)?)?;
    m.add_function(wrap_pyfunction!(dhash_path, m)?)?;
    m.add_function(wrap_pyfunction!(hash_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(jaccard, m)?)?;
    m.add_function(wrap_pyfunction!(label_code, m)?)?;
    m.add_function(wrap_pyfunction!(label_name, m)?)?;
    m.add_function(wrap_pyfunction!(softmax, m)?)?;
    m.add_function(wrap_pyfunction!(mean_fuse, m)?)?;
    m.add_function(wrap_pyfunction!(cross_entropy, m)?)?;
    m.add_function(wrap_pyfunction!(confusion, m)?)?;
    m.add_function(wrap_pyfunction!(metrics, m)?)?;
    m.add_function(wrap_pyfunction!(polyfit, m)?)?;
    m.add_function(wrap_pyfunction!(sampling_schedule, m)?)?;
    m.add_function(wrap_pyfunction!(aggregate_monthly, m)?)?;
    m.add_function(wrap_pyfunction!(train_fusion, m)?)?;
    m.add_function(wrap_pyfunction!(gradient_check, m)?)?;
    m.add_function(wrap_pyfunction!(ovr_curve_areas, m)?)?;
    m.add_class::<PySimIndex>()?;
    m.add_class::<PyFusionHead>()?;
    Ok(())
}

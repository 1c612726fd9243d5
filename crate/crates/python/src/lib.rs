use std::collections::HashMap;

use comodel_core::attribution::{attribute_sequence, profiles_from_csv, AttributionProfile};
use comodel_core::cli::RunConfig;
use comodel_core::data::{
    build_graph, encode_sequence, parse_dataset, split_dataset, synthetic_aromatic_dataset, Sequence,
};
use comodel_core::encoders::{CoModel, Route};
use comodel_core::metrics;
use comodel_core::training::{evaluate, infer, train};
use pyo3::exceptions::{PyIOError, PyValueError};
use pyo3::prelude::*;

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn sequence(s: &str) -> PyResult<Sequence> {
    Sequence::new(s).map_err(value_err)
}

fn route(name: &str) -> PyResult<Route> {
    match name {
        "seq" => Ok(Route::Seq),
        "graph" => Ok(Route::Graph),
        other => Err(PyValueError::new_err(format!("route must be \"seq\" or \"graph\", got {other:?}"))),
    }
}

/// A trained (or freshly loaded) co-model.
#[pyclass(name = "Model", module = "comodel")]
struct PyModel {
    inner: CoModel,
}

#[pymethods]
impl PyModel {
    /// Trains on a `sequence,label` CSV. `settings` uses the same keys as the CLI config file.
    /// Returns the model and its test-set metrics.
    #[staticmethod]
    #[pyo3(signature = (dataset, settings=None))]
    fn train(
        py: Python<'_>,
        dataset: &str,
        settings: Option<HashMap<String, String>>,
    ) -> PyResult<(Self, HashMap<String, f64>)> {
        let mut cfg = RunConfig::default();
        cfg.set("dataset", dataset).map_err(value_err)?;
        for (k, v) in settings.unwrap_or_default() {
            cfg.set(&k, &v).map_err(value_err)?;
        }
        let tc = cfg.train_config().map_err(value_err)?;
        let records = parse_dataset(dataset, tc.task, tc.seq.max_len).map_err(value_err)?;
        let split = split_dataset(&records, cfg.split_ratios().map_err(value_err)?, tc.seed).map_err(value_err)?;
        let (model, report) = py
            .detach(|| -> Result<_, String> {
                let outcome = train(&split, &tc).map_err(|e| e.to_string())?;
                let report = evaluate(&outcome.model, &split.test).map_err(|e| e.to_string())?;
                Ok((outcome.model, report))
            })
            .map_err(PyValueError::new_err)?;
        let mut metrics = HashMap::new();
        for (k, v) in [("mae", report.mae), ("mse", report.mse), ("r2", report.r2), ("accuracy", report.accuracy)] {
            if let Some(v) = v {
                metrics.insert(k.to_string(), v);
            }
        }
        Ok((PyModel { inner: model }, metrics))
    }

    /// Loads a checkpoint written by `save` or the `comodel train` command.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let bytes = std::fs::read(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        Ok(PyModel { inner: CoModel::from_bytes(&bytes).map_err(value_err)? })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        std::fs::write(path, self.inner.to_bytes()).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))
    }

    #[getter]
    fn fusion(&self) -> String {
        self.inner.kind().to_string()
    }

    /// Sequence-only prediction: the regression value or the class logits.
    fn predict(&self, seq: &str) -> PyResult<Vec<f64>> {
        infer(&encode_sequence(&sequence(seq)?), &self.inner).map_err(value_err)
    }

    /// Normalised per-residue integrated-gradients profile as `(residue, score)` pairs.
    #[pyo3(signature = (seq, route="seq", steps=300))]
    fn attribute(&self, py: Python<'_>, seq: &str, route: &str, steps: usize) -> PyResult<Vec<(char, f64)>> {
        let (s, r) = (sequence(seq)?, self::route(route)?);
        let p = py.detach(|| attribute_sequence(&self.inner, r, "query", &s, steps)).map_err(value_err)?;
        Ok(p.residues.into_iter().zip(p.scores).collect())
    }

    fn __repr__(&self) -> String {
        format!("Model(fusion={}, task={}, d={})", self.inner.kind(), self.inner.arch.task, self.inner.arch.seq.d)
    }
}

/// Synthetic peptides labelled by their aromatic fraction, as `(id, sequence, label)`.
#[pyfunction]
#[pyo3(signature = (n, max_len=10, seed=5))]
fn gen_synth(n: usize, max_len: usize, seed: u64) -> Vec<(String, String, f64)> {
    synthetic_aromatic_dataset(n, max_len, seed)
        .into_iter()
        .map(|r| (r.id, r.sequence.as_str().to_string(), r.label.value()))
        .collect()
}

type BeadGraphParts = (Vec<usize>, Vec<(usize, usize)>, Vec<usize>);

/// Coarse-grained bead graph: `(node_types, edges, residue_of_node)`.
#[pyfunction]
fn bead_graph(seq: &str) -> PyResult<BeadGraphParts> {
    let g = build_graph(&sequence(seq)?);
    Ok((g.node_types, g.edges, g.residue_of_node))
}

#[pyfunction]
fn kendall_tau(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    metrics::kendall_tau(&a, &b).map_err(value_err)
}

#[pyfunction]
fn spearman_footrule(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    metrics::spearman_footrule(&a, &b).map_err(value_err)
}

#[pyfunction]
fn js_divergence(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    metrics::js_divergence(&a, &b).map_err(value_err)
}

#[pyfunction]
fn cosine_similarity(a: Vec<f64>, b: Vec<f64>) -> PyResult<f64> {
    metrics::cosine_similarity(&a, &b).map_err(value_err)
}

/// Similarity report between two profile CSV texts, keyed `metric_statistic`.
#[pyfunction]
fn compare_profiles(csv_a: &str, csv_b: &str) -> PyResult<HashMap<String, f64>> {
    let load = |t: &str| -> PyResult<Vec<AttributionProfile>> { profiles_from_csv(t).map_err(PyValueError::new_err) };
    let report = metrics::compare_models(&load(csv_a)?, &load(csv_b)?).map_err(value_err)?;
    let mut out = HashMap::new();
    for line in report.to_csv().lines().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if let [metric, stat, value] = cols[..] {
            out.insert(format!("{metric}_{stat}"), value.parse().map_err(value_err)?);
        }
    }
    Ok(out)
}

#[pymodule]
fn comodel(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(gen_synth, m)?)?;
    m.add_function(wrap_pyfunction!(bead_graph, m)?)?;
    m.add_function(wrap_pyfunction!(kendall_tau, m)?)?;
    m.add_function(wrap_pyfunction!(spearman_footrule, m)?)?;
    m.add_function(wrap_pyfunction!(js_divergence, m)?)?;
    m.add_function(wrap_pyfunction!(cosine_similarity, m)?)?;
    m.add_function(wrap_pyfunction!(compare_profiles, m)?)?;
    Ok(())
}

//! Python bindings: graphs, datasets, FGW distances, training and models.

use std::collections::HashMap;
use std::path::PathBuf;

use numpy::{IntoPyArray, PyArray1, PyArray2, PyReadonlyArray1, PyReadonlyArray2};
use pyo3::exceptions::{PyIOError, PyIndexError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

use tfgw::config::parse_config;
use tfgw::generators::{gen_four_cycles, gen_skip_circles};
use tfgw::graph::uniform_weights;
use tfgw::tu::detect_dataset_name;
use tfgw::{CgOptions, StructureKind, TrainConfig, TuOptions};

fn err(e: tfgw::Error) -> PyErr {
    match e {
        tfgw::Error::Io(_) | tfgw::Error::MissingFile(_) => PyIOError::new_err(e.to_string()),
        other => PyValueError::new_err(other.to_string()),
    }
}

fn kind(s: &str) -> PyResult<StructureKind> {
    StructureKind::parse(s).map_err(err)
}

/// An attributed graph with structure matrix, node features and node weights.
#[pyclass(name = "Graph", module = "tfgw_py", frozen, from_py_object)]
#[derive(Clone)]
struct PyGraph {
    inner: tfgw::Graph,
}

#[pymethods]
impl PyGraph {
    /// Builds a graph from a 0/1 adjacency matrix and node features.
    #[new]
    #[pyo3(signature = (adjacency, features, structure = "adj"))]
    fn new(adjacency: PyReadonlyArray2<'_, f64>, features: PyReadonlyArray2<'_, f64>, structure: &str) -> PyResult<Self> {
        let inner = tfgw::Graph::from_adjacency(adjacency.as_array().to_owned(), features.as_array().to_owned(), kind(structure)?)
            .map_err(err)?;
        Ok(PyGraph { inner })
    }

    /// Graph with an explicit structure matrix and node weights.
    #[staticmethod]
    #[pyo3(signature = (structure, features, weights = None))]
    fn from_matrices(
        structure: PyReadonlyArray2<'_, f64>,
        features: PyReadonlyArray2<'_, f64>,
        weights: Option<PyReadonlyArray1<'_, f64>>,
    ) -> PyResult<Self> {
        let c = structure.as_array().to_owned();
        let h = match weights {
            Some(w) => w.as_array().to_owned(),
            None => uniform_weights(c.nrows()),
        };
        let inner = tfgw::Graph::new(c, features.as_array().to_owned(), h).map_err(err)?;
        Ok(PyGraph { inner })
    }

    /// Unit-feature graph from an undirected edge list.
    #[staticmethod]
    #[pyo3(signature = (n, edges, structure = "adj"))]
    fn from_edges(n: usize, edges: Vec<(usize, usize)>, structure: &str) -> PyResult<Self> {
        let inner = tfgw::Graph::from_edges(n, &edges, kind(structure)?).map_err(err)?;
        Ok(PyGraph { inner })
    }

    #[getter]
    fn node_count(&self) -> usize {
        self.inner.node_count()
    }

    #[getter]
    fn edge_count(&self) -> usize {
        self.inner.edge_count()
    }

    #[getter]
    fn structure<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray2<f64>> {
        self.inner.structure().clone().into_pyarray(py)
    }

    #[getter]
    fn features<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray2<f64>> {
        self.inner.features().clone().into_pyarray(py)
    }

    #[getter]
    fn weights<'py>(&self, py: Python<'py>) -> Bound<'py, PyArray1<f64>> {
        self.inner.weights().clone().into_pyarray(py)
    }

    fn __repr__(&self) -> String {
        format!("Graph(nodes={}, edges={}, feature_dim={})", self.inner.node_count(), self.inner.edge_count(), self.inner.feature_dim())
    }
}

/// Graphs with class labels.
#[pyclass(name = "Dataset", module = "tfgw_py", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDataset {
    inner: tfgw::LabeledDataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    #[pyo3(signature = (graphs, labels, class_count = None, name = "DATASET", structure = "adj"))]
    fn new(graphs: Vec<PyGraph>, labels: Vec<usize>, class_count: Option<usize>, name: &str, structure: &str) -> PyResult<Self> {
        let classes = class_count.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
        let graphs = graphs.into_iter().map(|g| g.inner).collect();
        let inner = tfgw::LabeledDataset::new(name, graphs, labels, classes, kind(structure)?)
            .map_err(err)?;
        Ok(PyDataset { inner })
    }

    /// Loads a TU-format directory.
    #[staticmethod]
    #[pyo3(signature = (dir, name = None, structure = "adj", max_degree = None))]
    fn load_tu(dir: PathBuf, name: Option<String>, structure: &str, max_degree: Option<usize>) -> PyResult<Self> {
        let name = match name {
            Some(n) => n,
            None => detect_dataset_name(&dir).map_err(err)?,
        };
        let options = TuOptions {
            structure_kind: kind(structure)?,
            max_degree,
        };
        let inner = tfgw::load_tu_dataset(&dir, &name, &options).map_err(err)?;
        Ok(PyDataset { inner })
    }

    /// Writes the dataset in TU format.
    fn save_tu(&self, dir: PathBuf) -> PyResult<()> {
        tfgw::write_tu_dataset(&self.inner, &dir, &[]).map_err(err)
    }

    #[staticmethod]
    #[pyo3(signature = (graphs = 200, nodes = 12, seed = 0))]
    fn four_cycles(graphs: usize, nodes: usize, seed: u64) -> PyResult<Self> {
        Ok(PyDataset {
            inner: gen_four_cycles(graphs, nodes, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    #[pyo3(signature = (copies = 15, seed = 0))]
    fn skip_circles(copies: usize, seed: u64) -> PyResult<Self> {
        Ok(PyDataset {
            inner: gen_skip_circles(copies, seed).map_err(err)?,
        })
    }

    #[getter]
    fn name(&self) -> &str {
        &self.inner.name
    }

    #[getter]
    fn labels(&self) -> Vec<usize> {
        self.inner.labels.clone()
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.inner.class_count
    }

    #[getter]
    fn feature_dim(&self) -> usize {
        self.inner.feature_dim()
    }

    fn class_counts(&self) -> Vec<usize> {
        self.inner.class_counts()
    }

    fn subset(&self, indices: Vec<usize>) -> PyResult<Self> {
        if let Some(&i) = indices.iter().find(|&&i| i >= self.inner.len()) {
            return Err(PyIndexError::new_err(format!("index {i} out of range")));
        }
        Ok(PyDataset {
            inner: self.inner.subset(&indices),
        })
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    fn __getitem__(&self, i: isize) -> PyResult<PyGraph> {
        let n = self.inner.len() as isize;
        let j = if i < 0 { i + n } else { i };
        if !(0..n).contains(&j) {
            return Err(PyIndexError::new_err("graph index out of range"));
        }
        Ok(PyGraph {
            inner: self.inner.graphs[j as usize].clone(),
        })
    }

    fn __repr__(&self) -> String {
        format!("Dataset(name={:?}, graphs={}, classes={})", self.inner.name, self.inner.len(), self.inner.class_count)
    }
}

/// Fused Gromov-Wasserstein distance between two graphs.
///
/// Returns a dict with `value`, `gw`, `w`, `iterations`, `converged` and
/// the optimal `coupling`.
#[pyfunction]
#[pyo3(signature = (a, b, alpha = 0.5, starts = 1, max_iterations = 1000))]
fn fgw_distance<'py>(
    py: Python<'py>,
    a: &PyGraph,
    b: &PyGraph,
    alpha: f64,
    starts: usize,
    max_iterations: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let opts = CgOptions {
        starts,
        max_iterations,
        ..CgOptions::default()
    };
    let r = py
        .detach(|| tfgw::solve_fgw(a.inner.view(), b.inner.view(), alpha, &opts))
        .map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("value", r.value)?;
    d.set_item("gw", r.gw_part)?;
    d.set_item("w", r.w_part)?;
    d.set_item("iterations", r.iterations)?;
    d.set_item("converged", r.converged)?;
    d.set_item("coupling", r.coupling.plan.into_pyarray(py))?;
    Ok(d)
}

/// Exact optimal transport: `(objective, plan)`.
#[pyfunction]
fn exact_ot<'py>(
    py: Python<'py>,
    cost: PyReadonlyArray2<'_, f64>,
    source: Vec<f64>,
    target: Vec<f64>,
) -> PyResult<(f64, Bound<'py, PyArray2<f64>>)> {
    let s = tfgw::solve_exact_ot(cost.as_array(), &source, &target).map_err(err)?;
    Ok((s.objective, s.coupling.plan.into_pyarray(py)))
}

fn config_from(settings: Option<HashMap<String, String>>) -> PyResult<TrainConfig> {
    let mut overrides: Vec<(String, String)> = settings.unwrap_or_default().into_iter().collect();
    overrides.sort();
    let mut grid = parse_config("", &TrainConfig::default(), &overrides).map_err(err)?;
    if grid.len() != 1 {
        return Err(PyValueError::new_err("comma-separated grids are not accepted here"));
    }
    Ok(grid.remove(0))
}

/// A trained classifier.
#[pyclass(name = "Model", module = "tfgw_py", frozen)]
struct PyModel {
    inner: tfgw::TfgwModel,
}

#[pymethods]
impl PyModel {
    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(PyModel {
            inner: tfgw::load_checkpoint(&path).map_err(err)?,
        })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        tfgw::save_checkpoint(&self.inner, &path).map_err(err)
    }

    #[getter]
    fn alpha(&self) -> f64 {
        self.inner.alpha
    }

    #[getter]
    fn template_count(&self) -> usize {
        self.inner.template_count()
    }

    #[getter]
    fn structure(&self) -> &'static str {
        self.inner.structure_kind.as_str()
    }

    /// Template `k` as a graph.
    fn template(&self, k: usize) -> PyResult<PyGraph> {
        let t = self
            .inner
            .templates
            .get(k)
            .ok_or_else(|| PyIndexError::new_err("template index out of range"))?;
        let inner = tfgw::Graph::new(t.structure.clone(), t.features.clone(), t.weights.clone()).map_err(err)?;
        Ok(PyGraph { inner })
    }

    /// FGW distances from each graph to each template, shape `(N, K)`.
    fn distances<'py>(&self, py: Python<'py>, data: &PyDataset) -> PyResult<Bound<'py, PyArray2<f64>>> {
        let graphs: Vec<&tfgw::Graph> = data.inner.graphs.iter().collect();
        let d = py.detach(|| self.inner.distances(&graphs)).map_err(err)?;
        Ok(d.into_pyarray(py))
    }

    /// Pairwise template distances, shape `(K, K)`.
    fn template_distances<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyArray2<f64>>> {
        Ok(self.inner.template_distances().map_err(err)?.into_pyarray(py))
    }

    fn predict(&self, py: Python<'_>, data: &PyDataset) -> PyResult<Vec<usize>> {
        let graphs: Vec<&tfgw::Graph> = data.inner.graphs.iter().collect();
        py.detach(|| self.inner.predict(&graphs)).map_err(err)
    }

    fn evaluate(&self, py: Python<'_>, data: &PyDataset) -> PyResult<f64> {
        py.detach(|| tfgw::evaluate(&self.inner, &data.inner)).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!(
            "Model(templates={}, alpha={:.4}, structure={})",
            self.inner.template_count(),
            self.inner.alpha,
            self.inner.structure_kind
        )
    }
}

/// Trains a model. `config` maps config keys to string values.
///
/// Returns `(model, history)` where history is a list of dicts.
#[pyfunction]
#[pyo3(signature = (train_set, validation = None, config = None))]
fn train<'py>(
    py: Python<'py>,
    train_set: &PyDataset,
    validation: Option<&PyDataset>,
    config: Option<HashMap<String, String>>,
) -> PyResult<(PyModel, Vec<Bound<'py, PyDict>>)> {
    let config = config_from(config)?;
    let out = py
        .detach(|| tfgw::train(&train_set.inner, validation.map(|v| &v.inner), &config, 0))
        .map_err(err)?;
    let history = out
        .history
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("epoch", r.epoch)?;
            d.set_item("train_loss", r.train_loss)?;
            d.set_item("val_acc", r.val_acc)?;
            d.set_item("alpha", r.alpha)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((PyModel { inner: out.model }, history))
}

#[pymodule]
fn tfgw_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyGraph>()?;
    m.add_class::<PyDataset>()?;
    m.add_class::<PyModel>()?;
    m.add_function(wrap_pyfunction!(fgw_distance, m)?)?;
    m.add_function(wrap_pyfunction!(exact_ot, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    Ok(())
}

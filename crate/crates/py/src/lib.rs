//! Python bindings. Matrices cross the boundary as lists of row lists.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyIOError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use wdrank_core::analysis::{self, BatchFamily, CertificateMode, RankCertificate};
use wdrank_core::data::{self, Normalize};
use wdrank_core::linalg;
use wdrank_core::training::{self, GSpec, TrainConfig};
use wdrank_core::{ColVec, Mat, TwoLayerNet};

create_exception!(wdrank, WdrankError, PyException);

fn err(e: wdrank_core::Error) -> PyErr {
    match e {
        wdrank_core::Error::Io(io) => PyIOError::new_err(io.to_string()),
        other => WdrankError::new_err(format!("{}: {other}", other.kind())),
    }
}

fn mat(rows: Vec<Vec<f64>>) -> PyResult<Mat> {
    Mat::from_rows(&rows).map_err(err)
}

fn gspec(mu_v: f64, g: Option<(f64, f64)>) -> GSpec {
    match g {
        Some((a, c)) => GSpec::AffineInY2 { a, c },
        None => GSpec::Constant { mu_v },
    }
}

#[pyclass(name = "Network", module = "wdrank", frozen)]
struct PyNetwork {
    inner: TwoLayerNet,
}

#[pymethods]
impl PyNetwork {
    #[new]
    fn new(u: Vec<f64>, v: Vec<Vec<f64>>, b: Vec<f64>) -> PyResult<Self> {
        let u = Mat::new(1, u.len(), u).map_err(err)?;
        let b = ColVec::new(b).map_err(err)?;
        let inner = TwoLayerNet::new(u, mat(v)?, b).map_err(err)?;
        Ok(PyNetwork { inner })
    }

    /// Kaiming-initialized network of width `m` on `n` inputs.
    #[staticmethod]
    fn kaiming(m: usize, n: usize, seed: u64) -> PyResult<Self> {
        Ok(PyNetwork {
            inner: TwoLayerNet::kaiming_init(m, n, seed).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        let file = File::open(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        Ok(PyNetwork {
            inner: TwoLayerNet::read_checkpoint(BufReader::new(file)).map_err(err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        let file = File::create(path).map_err(|e| PyIOError::new_err(format!("{path}: {e}")))?;
        let mut w = BufWriter::new(file);
        self.inner.write_checkpoint(&mut w).map_err(err)?;
        w.flush().map_err(|e| PyIOError::new_err(e.to_string()))
    }

    #[getter]
    fn width(&self) -> usize {
        self.inner.width()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn u(&self) -> Vec<f64> {
        self.inner.u().as_slice().to_vec()
    }

    #[getter]
    fn v(&self) -> Vec<Vec<f64>> {
        self.inner.v().to_rows()
    }

    #[getter]
    fn b(&self) -> Vec<f64> {
        self.inner.b().as_slice().to_vec()
    }

    fn forward(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.forward(&x).map_err(err)
    }

    fn activation_pattern(&self, x: Vec<f64>) -> PyResult<Vec<bool>> {
        Ok(self.inner.activation_pattern(&x).map_err(err)?.0)
    }

    fn activation_margin(&self, x: Vec<f64>) -> PyResult<f64> {
        self.inner.activation_margin(&x).map_err(err)
    }

    /// `residual · ∂φ(x)/∂θ` as a dict with keys `du`, `dv`, `db`.
    fn grad<'py>(&self, py: Python<'py>, x: Vec<f64>, residual: f64) -> PyResult<Bound<'py, PyDict>> {
        let g = self.inner.grad_params(&x, residual).map_err(err)?;
        let d = PyDict::new(py);
        d.set_item("du", g.du.as_slice().to_vec())?;
        d.set_item("dv", g.dv.to_rows())?;
        d.set_item("db", g.db.as_slice().to_vec())?;
        Ok(d)
    }

    fn stable_rank(&self) -> PyResult<f64> {
        linalg::stable_rank(self.inner.v()).map_err(err)
    }

    fn __repr__(&self) -> String {
        format!("Network(width={}, input_dim={})", self.inner.width(), self.inner.input_dim())
    }
}

#[pyclass(name = "Dataset", module = "wdrank", frozen)]
struct PyDataset {
    inner: data::Dataset,
}

#[pymethods]
impl PyDataset {
    #[new]
    fn new(x: Vec<Vec<f64>>, y: Vec<f64>) -> PyResult<Self> {
        Ok(PyDataset {
            inner: data::Dataset::from_samples(mat(x)?, y).map_err(err)?,
        })
    }

    /// Synthetic teacher data; returns `(dataset, teacher_network)`.
    #[staticmethod]
    #[pyo3(signature = (n, samples, rank, noise_std = 0.1, seed = 0))]
    fn teacher(n: usize, samples: usize, rank: usize, noise_std: f64, seed: u64) -> PyResult<(Self, PyNetwork)> {
        let t = data::synthetic_teacher(n, samples, rank, noise_std, seed).map_err(err)?;
        Ok((PyDataset { inner: t.dataset }, PyNetwork { inner: t.teacher }))
    }

    /// `normalize` is `"none"`, `"zscore"` or `"minmax"` (onto `[lo, hi]`).
    #[staticmethod]
    #[pyo3(signature = (path, target_column, normalize = "none", lo = -1.0, hi = 1.0))]
    fn load_csv(path: &str, target_column: &str, normalize: &str, lo: f64, hi: f64) -> PyResult<Self> {
        let normalize = match normalize {
            "none" => Normalize::None,
            "zscore" => Normalize::ZScore,
            "minmax" => Normalize::MinMax { lo, hi },
            other => return Err(WdrankError::new_err(format!("unknown normalization `{other}`"))),
        };
        Ok(PyDataset {
            inner: data::load_csv(path, target_column, normalize).map_err(err)?,
        })
    }

    #[staticmethod]
    fn load_idx(images: &str, labels: &str) -> PyResult<Self> {
        Ok(PyDataset {
            inner: data::load_idx(images, labels).map_err(err)?,
        })
    }

    fn split(&self, n_train: usize, n_test: usize, seed: u64) -> PyResult<(Self, Self)> {
        let (a, b) = data::split(&self.inner, n_train, n_test, seed).map_err(err)?;
        Ok((PyDataset { inner: a }, PyDataset { inner: b }))
    }

    fn __len__(&self) -> usize {
        self.inner.len()
    }

    #[getter]
    fn input_dim(&self) -> usize {
        self.inner.input_dim()
    }

    #[getter]
    fn x(&self) -> Vec<Vec<f64>> {
        self.inner.x().to_rows()
    }

    #[getter]
    fn y(&self) -> Vec<f64> {
        self.inner.targets().to_vec()
    }
}

#[pyfunction]
fn singular_values(a: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
    Ok(linalg::singular_values(&mat(a)?))
}

#[pyfunction]
fn stable_rank(a: Vec<Vec<f64>>) -> PyResult<f64> {
    linalg::stable_rank(&mat(a)?).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (a, tol = 1e-10, max_iters = 10_000))]
fn spectral_norm(a: Vec<Vec<f64>>, tol: f64, max_iters: usize) -> PyResult<f64> {
    Ok(linalg::spectral_norm(&mat(a)?, tol, max_iters).map_err(err)?.value)
}

#[pyfunction]
fn frobenius_norm(a: Vec<Vec<f64>>) -> PyResult<f64> {
    Ok(linalg::frobenius_norm(&mat(a)?))
}

#[pyfunction]
#[pyo3(signature = (rows, cols, variance = 0.01, seed = 0))]
fn gaussian_matrix(rows: usize, cols: usize, variance: f64, seed: u64) -> PyResult<Vec<Vec<f64>>> {
    Ok(linalg::gaussian_matrix(rows, cols, 0.0, variance, seed).map_err(err)?.to_rows())
}

/// Trains `net` and returns `(trained_network, log)` where `log` is a list of
/// per-epoch dicts. Passing `g = (a, c)` uses the decay `a + c·y²` instead of `mu_v`.
#[pyfunction]
#[pyo3(signature = (
    net, train_set, test_set, *, batch_size = 16, epochs = 100, lr0 = 1e-4, decay_factor = 0.95,
    decay_period = 200, mu_u = 1e-4, mu_b = 1e-4, mu_v = 1.0, g = None, seed = 0
))]
#[allow(clippy::too_many_arguments)]
fn train<'py>(
    py: Python<'py>,
    net: &PyNetwork,
    train_set: &PyDataset,
    test_set: &PyDataset,
    batch_size: usize,
    epochs: usize,
    lr0: f64,
    decay_factor: f64,
    decay_period: usize,
    mu_u: f64,
    mu_b: f64,
    mu_v: f64,
    g: Option<(f64, f64)>,
    seed: u64,
) -> PyResult<(PyNetwork, Vec<Bound<'py, PyDict>>)> {
    let config = TrainConfig {
        batch_size,
        epochs,
        lr0,
        decay_factor,
        decay_period,
        mu_u,
        mu_b,
        gspec: gspec(mu_v, g),
        seed,
        drop_last: true,
    };
    let init = net.inner.clone();
    let (tr, te) = (&train_set.inner, &test_set.inner);
    let (trained, log) = py
        .detach(|| training::train(init, tr, te, &config))
        .map_err(err)?;
    let records = log
        .records
        .iter()
        .map(|r| {
            let d = PyDict::new(py);
            d.set_item("epoch", r.epoch)?;
            d.set_item("lr", r.lr)?;
            d.set_item("train_mse", r.train_mse)?;
            d.set_item("test_mse", r.test_mse)?;
            d.set_item("stable_rank", r.stable_rank)?;
            d.set_item("v_fro", r.v_fro)?;
            d.set_item("grad_max", r.grad_max)?;
            d.set_item("grad_mean", r.grad_mean)?;
            Ok(d)
        })
        .collect::<PyResult<Vec<_>>>()?;
    Ok((PyNetwork { inner: trained }, records))
}

#[pyfunction]
fn mse(net: &PyNetwork, data: &PyDataset) -> PyResult<f64> {
    training::mse(&net.inner, &data.inner).map_err(err)
}

/// Batch-gradient census. `family` is `"epoch"` (uses `seed`, `epoch`) or
/// `"random"` (uses `seed`, `count`).
#[pyfunction]
#[pyo3(signature = (net, data, batch_size, *, mu_v = 1.0, g = None, family = "epoch", seed = 0, epoch = 0, count = 100, bins = 30))]
#[allow(clippy::too_many_arguments)]
fn census<'py>(
    py: Python<'py>,
    net: &PyNetwork,
    data: &PyDataset,
    batch_size: usize,
    mu_v: f64,
    g: Option<(f64, f64)>,
    family: &str,
    seed: u64,
    epoch: usize,
    count: usize,
    bins: usize,
) -> PyResult<Bound<'py, PyDict>> {
    let family = match family {
        "epoch" => BatchFamily::EpochPartition { seed, epoch },
        "random" => BatchFamily::RandomBatches { count, seed },
        other => return Err(WdrankError::new_err(format!("unknown batch family `{other}`"))),
    };
    let c = analysis::gradient_census(&net.inner, &data.inner, batch_size, gspec(mu_v, g), family, bins).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("norms", c.norms)?;
    d.set_item("epsilon", c.epsilon)?;
    d.set_item("bin_edges", c.histogram.edges)?;
    d.set_item("counts", c.histogram.counts)?;
    Ok(d)
}

fn certificate_dict<'py>(py: Python<'py>, c: &RankCertificate) -> PyResult<Bound<'py, PyDict>> {
    let d = PyDict::new(py);
    d.set_item("mode", &c.mode)?;
    d.set_item("batch_size", c.batch_size)?;
    d.set_item("v_tilde", c.v_tilde.to_rows())?;
    d.set_item("rank_bound", c.rank_bound)?;
    d.set_item("epsilon", c.epsilon)?;
    d.set_item("constant_proof", c.constant_proof)?;
    d.set_item("constant_paper", c.constant_paper)?;
    d.set_item("distance", c.distance)?;
    d.set_item("holds_proof", c.holds_proof)?;
    d.set_item("holds_paper", c.holds_paper)?;
    d.set_item("indices", c.indices.clone())?;
    d.set_item("p0", c.p0.clone())?;
    d.set_item("p1", c.p1.clone())?;
    Ok(d)
}

/// Low-rank certificate for `net.v`. With `g = (a, c)` the rank-two
/// variable-decay construction is used, optionally on the sample `pair`.
#[pyfunction]
#[pyo3(signature = (net, data, batch_size, *, mu_v = 1.0, g = None, i1 = None, pair = None))]
#[allow(clippy::too_many_arguments)]
fn certify<'py>(
    py: Python<'py>,
    net: &PyNetwork,
    data: &PyDataset,
    batch_size: usize,
    mu_v: f64,
    g: Option<(f64, f64)>,
    i1: Option<usize>,
    pair: Option<(usize, usize)>,
) -> PyResult<Bound<'py, PyDict>> {
    let spec = gspec(mu_v, g);
    let mode = if spec.is_constant() {
        CertificateMode::ConstantG { i1 }
    } else {
        CertificateMode::VariableG { pair }
    };
    let c = analysis::build_certificate(&net.inner, &data.inner, batch_size, spec, &mode, None).map_err(err)?;
    certificate_dict(py, &c)
}

#[pyfunction]
fn generalization_gap<'py>(py: Python<'py>, net: &PyNetwork, train_set: &PyDataset, test_set: &PyDataset) -> PyResult<Bound<'py, PyDict>> {
    let r = analysis::generalization_gap(&net.inner, &train_set.inner, &test_set.inner).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("train_mse", r.train_mse)?;
    d.set_item("test_mse", r.test_mse)?;
    d.set_item("gap", r.gap)?;
    d.set_item("abs_gap", r.abs_gap)?;
    Ok(d)
}

#[pyfunction]
fn accuracy(net: &PyNetwork, data: &PyDataset) -> PyResult<f64> {
    analysis::accuracy_round(&net.inner, &data.inner).map_err(err)
}

#[pyfunction]
#[pyo3(signature = (m, n, samples, *, k = 1, delta = 0.05, l = 1.0, c = 1.0))]
fn bound_value<'py>(py: Python<'py>, m: usize, n: usize, samples: f64, k: usize, delta: f64, l: f64, c: f64) -> PyResult<Bound<'py, PyDict>> {
    let r = analysis::bound_value(m, n, k, samples, delta, l, c).map_err(err)?;
    let d = PyDict::new(py);
    d.set_item("delta_term", r.delta_term)?;
    d.set_item("full_complexity", r.full_complexity)?;
    d.set_item("lowrank_complexity", r.lowrank_complexity)?;
    d.set_item("full_bound", r.full_bound)?;
    d.set_item("lowrank_bound", r.lowrank_bound)?;
    d.set_item("ratio", r.ratio)?;
    d.set_item("pdim_full", r.pdim_full)?;
    d.set_item("pdim_lowrank", r.pdim_lowrank)?;
    Ok(d)
}

#[pymodule]
fn wdrank(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("WdrankError", m.py().get_type::<WdrankError>())?;
    m.add_class::<PyNetwork>()?;
    m.add_class::<PyDataset>()?;
    m.add_function(wrap_pyfunction!(singular_values, m)?)?;
    m.add_function(wrap_pyfunction!(stable_rank, m)?)?;
    m.add_function(wrap_pyfunction!(spectral_norm, m)?)?;
    m.add_function(wrap_pyfunction!(frobenius_norm, m)?)?;
    m.add_function(wrap_pyfunction!(gaussian_matrix, m)?)?;
    m.add_function(wrap_pyfunction!(train, m)?)?;
    m.add_function(wrap_pyfunction!(mse, m)?)?;
    m.add_function(wrap_pyfunction!(census, m)?)?;
    m.add_function(wrap_pyfunction!(certify, m)?)?;
    m.add_function(wrap_pyfunction!(generalization_gap, m)?)?;
    m.add_function(wrap_pyfunction!(accuracy, m)?)?;
    m.add_function(wrap_pyfunction!(bound_value, m)?)?;
    Ok(())
}

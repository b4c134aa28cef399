//! Python bindings for the nfrlab attribution lab.

use std::path::PathBuf;

use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use pyo3::types::{PyBytes, PyDict};

use nfrlab::kis::{kis_report, KisVariant};
use nfrlab::lab::{
    activation_substitute, cascade_substitute, orthogonality_stats, theorem1_experiment, theorem2_experiment,
    CurveRule,
};
use nfrlab::net::data::synthetic_bars;
use nfrlab::net::{build_orthogonal_net, build_random_mlp, build_random_network, load_model, save_model, train_sgd};
use nfrlab::net::{LabeledDataset, LayerSpec, TrainConfig};
use nfrlab::rules::{raw_input_relevance, RuleKind, RuleSpec};
use nfrlab::runner::{run as run_subcommand, RunConfig, Subcommand};
use nfrlab::sampling::{DistKind, DistSpec};
use nfrlab::{NfrError, Shape};

fn err(e: NfrError) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn dist_kind(name: &str) -> PyResult<DistKind> {
    serde_json::from_value(serde_json::Value::String(name.to_string()))
        .map_err(|_| PyValueError::new_err(format!("unknown distribution {name:?}")))
}

fn dist(name: &str, scale: f64, seed: u64) -> PyResult<DistSpec> {
    DistSpec::new(dist_kind(name)?, scale, seed).map_err(err)
}

#[pyclass(module = "pynfrlab", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Tensor {
    inner: nfrlab::Tensor,
}

#[pymethods]
impl Tensor {
    #[new]
    #[pyo3(signature = (data, shape=None))]
    fn new(data: Vec<f64>, shape: Option<Vec<usize>>) -> PyResult<Self> {
        let shape = Shape::new(shape.unwrap_or_else(|| vec![data.len()])).map_err(err)?;
        Ok(Tensor { inner: nfrlab::Tensor::new(shape, data).map_err(err)? })
    }

    #[getter]
    fn shape(&self) -> Vec<usize> {
        self.inner.dims().to_vec()
    }

    #[getter]
    fn data(&self) -> Vec<f64> {
        self.inner.data().to_vec()
    }

    fn __len__(&self) -> usize {
        self.inner.numel()
    }

    fn __repr__(&self) -> String {
        format!("Tensor(shape={:?})", self.inner.dims())
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        Ok(PyBytes::new(py, &self.inner.to_nfrt_bytes().map_err(err)?))
    }

    #[staticmethod]
    fn from_bytes(bytes: &[u8]) -> PyResult<Self> {
        Ok(Tensor { inner: nfrlab::Tensor::from_nfrt_bytes(bytes).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Tensor { inner: nfrlab::Tensor::load(path).map_err(err)? })
    }
}

#[pyclass(module = "pynfrlab", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Network {
    inner: nfrlab::Network,
}

#[pymethods]
impl Network {
    /// Random bias-free MLP with layer widths `dims`.
    #[staticmethod]
    #[pyo3(signature = (dims, dist="gaussian", scale=1.0, seed=0))]
    fn random_mlp(dims: Vec<usize>, dist: &str, scale: f64, seed: u64) -> PyResult<Self> {
        let spec = self::dist(dist, scale, seed)?;
        Ok(Network { inner: build_random_mlp(&dims, &spec).map_err(err)? })
    }

    /// Random network from a JSON list of layer specs such as
    /// `[{"conv2d": {"out_channels": 4, "kernel": 3}}, "flatten", {"dense": {"out": 10}}]`.
    #[staticmethod]
    #[pyo3(signature = (input_shape, layers_json, dist="gaussian", scale=1.0, seed=0))]
    fn random(input_shape: Vec<usize>, layers_json: &str, dist: &str, scale: f64, seed: u64) -> PyResult<Self> {
        let specs: Vec<LayerSpec> =
            serde_json::from_str(layers_json).map_err(|e| PyValueError::new_err(format!("layers_json: {e}")))?;
        let shape = Shape::new(input_shape).map_err(err)?;
        let spec = self::dist(dist, scale, seed)?;
        Ok(Network { inner: build_random_network(shape, &specs, &spec).map_err(err)? })
    }

    #[staticmethod]
    #[pyo3(signature = (d, n, norm=1.0, seed=0))]
    fn orthogonal(d: usize, n: usize, norm: f64, seed: u64) -> PyResult<Self> {
        Ok(Network { inner: build_orthogonal_net(d, n, norm, seed).map_err(err)? })
    }

    #[getter]
    fn depth(&self) -> usize {
        self.inner.depth()
    }

    #[getter]
    fn input_shape(&self) -> Vec<usize> {
        self.inner.input_shape().dims().to_vec()
    }

    #[getter]
    fn class_count(&self) -> usize {
        self.inner.class_count()
    }

    fn logits(&self, x: &Tensor) -> PyResult<Vec<f64>> {
        Ok(nfrlab::forward(&self.inner, &x.inner).map_err(err)?.logits().data().to_vec())
    }

    fn predict(&self, x: &Tensor) -> PyResult<usize> {
        Ok(nfrlab::forward(&self.inner, &x.inner).map_err(err)?.predicted_class())
    }

    /// Activation after weighted layer `l` (0 is the input).
    fn activation(&self, x: &Tensor, l: usize) -> PyResult<Tensor> {
        let trace = nfrlab::forward(&self.inner, &x.inner).map_err(err)?;
        Ok(Tensor { inner: trace.activation(l).map_err(err)?.clone() })
    }

    /// Train on the synthetic bars task and return the trained copy.
    #[pyo3(signature = (count=200, noise=0.3, epochs=20, lr=0.05, seed=0))]
    fn train_on_bars(&self, count: usize, noise: f64, epochs: usize, lr: f64, seed: u64) -> PyResult<Self> {
        let data = bars_for(&self.inner, count, noise, seed)?;
        let cfg = TrainConfig { epochs, lr, seed };
        Ok(Network { inner: train_sgd(&self.inner, &data, &cfg).map_err(err)? })
    }

    fn to_bytes<'py>(&self, py: Python<'py>) -> PyResult<Bound<'py, PyBytes>> {
        Ok(PyBytes::new(py, &save_model(&self.inner).map_err(err)?))
    }

    #[staticmethod]
    fn from_bytes(bytes: &[u8]) -> PyResult<Self> {
        Ok(Network { inner: load_model(bytes).map_err(err)? })
    }

    fn save(&self, path: PathBuf) -> PyResult<()> {
        self.inner.save(path).map_err(err)
    }

    #[staticmethod]
    fn load(path: PathBuf) -> PyResult<Self> {
        Ok(Network { inner: nfrlab::Network::load(path).map_err(err)? })
    }

    fn __repr__(&self) -> String {
        format!("Network(input_shape={:?}, depth={}, classes={})", self.input_shape(), self.depth(), self.class_count())
    }
}

fn bars_for(net: &nfrlab::Network, count: usize, noise: f64, seed: u64) -> PyResult<LabeledDataset> {
    let numel = net.input_shape().numel();
    let side = (numel as f64).sqrt().round() as usize;
    if side * side != numel {
        return Err(PyValueError::new_err(format!("bars need a square input, got {numel} features")));
    }
    let data = synthetic_bars(count, side, noise, seed).map_err(err)?;
    data.reshaped(net.input_shape()).map_err(err)
}

#[pyclass(module = "pynfrlab", frozen, skip_from_py_object)]
#[derive(Clone)]
struct Rule {
    inner: RuleSpec,
}

#[pymethods]
impl Rule {
    #[new]
    #[pyo3(signature = (kind, q=None, tau=None, alpha=None, beta=None, lo=None, hi=None, epsilon=None))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        kind: &str,
        q: Option<f64>,
        tau: Option<f64>,
        alpha: Option<f64>,
        beta: Option<f64>,
        lo: Option<Vec<f64>>,
        hi: Option<Vec<f64>>,
        epsilon: Option<f64>,
    ) -> PyResult<Self> {
        let base = RuleSpec::new(RuleKind::parse(kind).map_err(err)?);
        let inner = RuleSpec {
            q: q.unwrap_or(base.q),
            tau,
            alpha: alpha.unwrap_or(base.alpha),
            beta: beta.unwrap_or(base.beta),
            lo,
            hi,
            epsilon: epsilon.unwrap_or(base.epsilon),
            ..base
        };
        inner.validate().map_err(err)?;
        Ok(Rule { inner })
    }

    #[getter]
    fn kind(&self) -> &'static str {
        self.inner.name()
    }

    fn __repr__(&self) -> String {
        format!("Rule({})", self.inner.label())
    }
}

fn class_or_predicted(net: &nfrlab::Network, x: &nfrlab::Tensor, k: Option<usize>) -> PyResult<usize> {
    match k {
        Some(k) => Ok(k),
        None => Ok(nfrlab::forward(net, x).map_err(err)?.predicted_class()),
    }
}

/// Input attribution for class `k` (predicted class when omitted).
#[pyfunction]
#[pyo3(signature = (net, x, rule, k=None))]
fn attribute(net: &Network, x: &Tensor, rule: &Rule, k: Option<usize>) -> PyResult<Tensor> {
    let k = class_or_predicted(&net.inner, &x.inner, k)?;
    Ok(Tensor { inner: nfrlab::attribute(&net.inner, &x.inner, &rule.inner, k).map_err(err)?.values })
}

/// Input-layer relevance before the bottom process, in gradient form.
#[pyfunction]
#[pyo3(signature = (net, x, rule, k=None))]
fn raw_relevance(net: &Network, x: &Tensor, rule: &Rule, k: Option<usize>) -> PyResult<Tensor> {
    let trace = nfrlab::forward(&net.inner, &x.inner).map_err(err)?;
    let k = k.unwrap_or_else(|| trace.predicted_class());
    Ok(Tensor { inner: raw_input_relevance(&net.inner, &trace, &rule.inner, k).map_err(err)? })
}

/// Cosine alignment of `r` with `x`.
#[pyfunction]
fn alignment(r: &Tensor, x: &Tensor) -> PyResult<f64> {
    Ok(nfrlab::alignment(&r.inner, &x.inner).map_err(err)?.value)
}

/// Per-ReLU-layer NFR records as dicts.
#[pyfunction]
#[pyo3(signature = (net, x, rule, k=None))]
fn nfr_check<'py>(py: Python<'py>, net: &Network, x: &Tensor, rule: &Rule, k: Option<usize>) -> PyResult<Vec<Bound<'py, PyDict>>> {
    let trace = nfrlab::forward(&net.inner, &x.inner).map_err(err)?;
    let k = k.unwrap_or_else(|| trace.predicted_class());
    let report = nfrlab::nfr_check(&net.inner, &trace, &rule.inner, k).map_err(err)?;
    report
        .layers
        .iter()
        .map(|rec| {
            let d = PyDict::new(py);
            d.set_item("layer", rec.layer_index)?;
            d.set_item("lhs", rec.lhs)?;
            d.set_item("rhs", rec.rhs)?;
            d.set_item("holds", rec.holds)?;
            d.set_item("gain", rec.gain)?;
            d.set_item("noop", rec.noop)?;
            d.set_item("decomposition_error", rec.decomposition_error)?;
            Ok(d)
        })
        .collect()
}

/// Attribution with the top `depth` layers replaced by `rule` (grad below),
/// or by the layer activation when `rule` is None.
#[pyfunction]
#[pyo3(signature = (net, x, depth, rule=None, k=None))]
fn cascade(net: &Network, x: &Tensor, depth: usize, rule: Option<&Rule>, k: Option<usize>) -> PyResult<Tensor> {
    let trace = nfrlab::forward(&net.inner, &x.inner).map_err(err)?;
    let k = k.unwrap_or_else(|| trace.predicted_class());
    let attr = match rule {
        Some(r) => cascade_substitute(&net.inner, &trace, &r.inner, depth, k),
        None => {
            let layer = net.inner.depth().checked_sub(depth).ok_or_else(|| {
                PyValueError::new_err(format!("depth {depth} exceeds network depth {}", net.inner.depth()))
            })?;
            activation_substitute(&net.inner, &trace, layer, &RuleSpec::new(RuleKind::Grad), k)
        }
    };
    Ok(Tensor { inner: attr.map_err(err)?.values })
}

#[pyfunction]
#[pyo3(signature = (net, x, r, k=None))]
fn kis(net: &Network, x: &Tensor, r: &Tensor, k: Option<usize>) -> PyResult<f64> {
    let k = class_or_predicted(&net.inner, &x.inner, k)?;
    nfrlab::kis::kis(&net.inner, &x.inner, &r.inner, k).map_err(err)
}

/// Mean KIS over correct and incorrect samples of a fresh bars test set.
#[pyfunction]
#[pyo3(signature = (net, rule, count=60, noise=0.6, seed=1))]
fn kis_on_bars(net: &Network, rule: &Rule, count: usize, noise: f64, seed: u64) -> PyResult<(Option<f64>, Option<f64>)> {
    let data = bars_for(&net.inner, count, noise, seed)?;
    let report = kis_report(&net.inner, &data, &rule.inner, KisVariant::Kis);
    Ok((report.mean_correct(), report.mean_incorrect()))
}

/// Mean and std of raw-relevance alignment on one-hidden-layer nets.
/// `rule` None means activation substitution.
#[pyfunction]
#[pyo3(signature = (d, n_hidden, rule=None, dist="gaussian", trials=20, seed=0))]
fn theorem1(d: usize, n_hidden: usize, rule: Option<&Rule>, dist: &str, trials: usize, seed: u64) -> PyResult<(f64, f64)> {
    let curve = rule.map_or(CurveRule::Activation, |r| CurveRule::Rule(r.inner.clone()));
    let s = theorem1_experiment(d, n_hidden, &self::dist(dist, 1.0, seed)?, &curve, trials).map_err(err)?;
    Ok((s.mean, s.std))
}

/// Fraction of trials where activation-weighted relevance aligns at least as
/// well as random relevance on orthogonal nets.
#[pyfunction]
#[pyo3(signature = (d, n, trials=50, seed=0))]
fn theorem2(d: usize, n: usize, trials: usize, seed: u64) -> PyResult<f64> {
    Ok(theorem2_experiment(d, n, trials, seed).map_err(err)?.holds_fraction)
}

/// Per-layer `(layer, mean |cos|, norm mean, norm std)`.
#[pyfunction]
#[pyo3(signature = (net, seed=0))]
fn geometry(net: &Network, seed: u64) -> PyResult<Vec<(usize, f64, f64, f64)>> {
    let stats = orthogonality_stats(&net.inner, seed).map_err(err)?;
    Ok(stats.layers.iter().map(|g| (g.layer, g.mean_abs_cos, g.norm_mean, g.norm_std)).collect())
}

/// Run a CLI subcommand from a JSON config; returns the written file names.
#[pyfunction]
#[pyo3(signature = (subcommand, config_json, out, seed=0))]
fn run(subcommand: &str, config_json: &str, out: PathBuf, seed: u64) -> PyResult<Vec<String>> {
    let sub = Subcommand::parse(subcommand).map_err(err)?;
    let cfg = RunConfig::from_json(config_json).map_err(err)?;
    Ok(run_subcommand(sub, &cfg, &out, seed).map_err(err)?.files)
}

#[pymodule]
fn pynfrlab(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Tensor>()?;
    m.add_class::<Network>()?;
    m.add_class::<Rule>()?;
    m.add_function(wrap_pyfunction!(attribute, m)?)?;
    m.add_function(wrap_pyfunction!(raw_relevance, m)?)?;
    m.add_function(wrap_pyfunction!(alignment, m)?)?;
    m.add_function(wrap_pyfunction!(nfr_check, m)?)?;
    m.add_function(wrap_pyfunction!(cascade, m)?)?;
    m.add_function(wrap_pyfunction!(kis, m)?)?;
    m.add_function(wrap_pyfunction!(kis_on_bars, m)?)?;
    m.add_function(wrap_pyfunction!(theorem1, m)?)?;
    m.add_function(wrap_pyfunction!(theorem2, m)?)?;
    m.add_function(wrap_pyfunction!(geometry, m)?)?;
    m.add_function(wrap_pyfunction!(run, m)?)?;
    Ok(())
}

//! Python bindings: the damped-system solvers, the dense model zoo and the
//! hardware cost model, for quick experiments from Python.
//!
//! Build with `cargo build -p tngd-python --release`; the smoke test under
//! `python/` copies the resulting shared library next to itself and imports
//! it as `tngd_py`.

use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;
use tngd::bench::config::DatasetSpec;
use tngd::bench::dataset;
use tngd::costs::{self, HardwareAssumptions, OptimizerKind};
use tngd::curvature::{self, Activation, Batch, CallCounter, LossHead, ModelSpec, ParamVector, Targets};
use tngd::numerics::{DenseMatrix, DenseVector, RngStream};
use tngd::optim::{self, GradientSource, OptimizerConfig, TrainConfig, UpdateRule};
use tngd::solvers::{self, SolverChoice};
use tngd::thermo::{DampedLowRankSystem, OuState, TlsConfig, WarmStartPolicy};

fn value_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn runtime_err(e: impl std::fmt::Display) -> PyErr {
    PyRuntimeError::new_err(e.to_string())
}

fn matrix_from_rows(rows: Vec<Vec<f64>>) -> PyResult<DenseMatrix> {
    DenseMatrix::from_rows(&rows).map_err(value_err)
}

fn parse_activation(name: &str) -> PyResult<Activation> {
    match name {
        "identity" => Ok(Activation::Identity),
        "tanh" => Ok(Activation::Tanh),
        "relu" => Ok(Activation::Relu),
        other => Err(value_err(format!("unknown activation `{other}`"))),
    }
}

fn parse_loss(name: &str) -> PyResult<LossHead> {
    match name {
        "softmax-cross-entropy" => Ok(LossHead::SoftmaxCrossEntropy),
        "mean-squared-error" => Ok(LossHead::MeanSquaredError),
        other => Err(value_err(format!("unknown loss `{other}`"))),
    }
}

/// A dense network with a loss head.
#[pyclass]
struct Model {
    spec: ModelSpec,
}

#[pymethods]
impl Model {
    /// Model from a dimension chain, e.g. `Model([2, 16, 3], "tanh",
    /// "softmax-cross-entropy")`. Hidden layers use the activation, the
    /// output layer is linear.
    #[new]
    #[pyo3(signature = (dims, activation = "tanh", loss = "softmax-cross-entropy"))]
    fn new(dims: Vec<usize>, activation: &str, loss: &str) -> PyResult<Self> {
        let spec = ModelSpec::mlp(&dims, parse_activation(activation)?, parse_loss(loss)?)
            .map_err(value_err)?;
        Ok(Self { spec })
    }

    fn param_count(&self) -> usize {
        self.spec.param_count()
    }

    /// Seeded Gaussian initialization; returns the flat parameter vector.
    #[pyo3(signature = (seed, scale = 0.5))]
    fn init_params(&self, seed: u64, scale: f64) -> Vec<f64> {
        let mut rng = RngStream::from_seed(seed);
        self.spec.init_params(&mut rng, scale).into_values().into_vec()
    }

    fn forward(&self, params: Vec<f64>, x: Vec<f64>) -> PyResult<Vec<f64>> {
        let theta = ParamVector::new(DenseVector::from_vec(params));
        curvature::forward(&self.spec, &theta, &DenseVector::from_vec(x))
            .map(DenseVector::into_vec)
            .map_err(value_err)
    }

    /// Batch loss and gradient. Pass `labels` for classification heads or
    /// `values` (one row per sample) for regression heads.
    #[pyo3(signature = (params, inputs, labels = None, values = None))]
    fn loss_and_gradient(
        &self,
        params: Vec<f64>,
        inputs: Vec<Vec<f64>>,
        labels: Option<Vec<usize>>,
        values: Option<Vec<Vec<f64>>>,
    ) -> PyResult<(f64, Vec<f64>)> {
        let theta = ParamVector::new(DenseVector::from_vec(params));
        let batch = build_batch(inputs, labels, values)?;
        let counter = CallCounter::new();
        curvature::loss_and_gradient(&self.spec, &theta, &batch, &counter)
            .map(|(l, g)| (l, g.into_vec()))
            .map_err(value_err)
    }

    /// Damped curvature-vector product `(JᵀH_LJ + damping I) v`, matrix
    /// free.
    #[pyo3(signature = (params, inputs, v, damping = 0.0, labels = None, values = None))]
    fn curvature_product(
        &self,
        params: Vec<f64>,
        inputs: Vec<Vec<f64>>,
        v: Vec<f64>,
        damping: f64,
        labels: Option<Vec<usize>>,
        values: Option<Vec<Vec<f64>>>,
    ) -> PyResult<Vec<f64>> {
        let theta = ParamVector::new(DenseVector::from_vec(params));
        let batch = build_batch(inputs, labels, values)?;
        let counter = CallCounter::new();
        curvature::ggn_vector_product(
            &self.spec,
            &theta,
            &batch,
            &DenseVector::from_vec(v),
            damping,
            &counter,
        )
        .map(DenseVector::into_vec)
        .map_err(value_err)
    }
}

fn build_batch(
    inputs: Vec<Vec<f64>>,
    labels: Option<Vec<usize>>,
    values: Option<Vec<Vec<f64>>>,
) -> PyResult<Batch> {
    let inputs = matrix_from_rows(inputs)?;
    let targets = match (labels, values) {
        (Some(l), None) => Targets::Classes(l),
        (None, Some(v)) => Targets::Values(matrix_from_rows(v)?),
        _ => return Err(value_err("pass exactly one of `labels` or `values`")),
    };
    Batch::new(inputs, targets).map_err(value_err)
}

/// Solves `(JᵀH_LJ + damping I) x = rhs` with the chosen backend.
///
/// `method` is one of "exact", "cg", "woodbury", "thermodynamic". Returns
/// `(solution, residual_norm, model_calls)`.
#[pyfunction]
#[pyo3(signature = (jacobian, loss_hessian, damping, rhs, method = "exact",
                    cg_iterations = 200, analog_time = 50.0, step_size = 0.1,
                    noise_variance = 0.0, window_fraction = 0.1, seed = 0))]
#[allow(clippy::too_many_arguments)]
fn solve(
    jacobian: Vec<Vec<f64>>,
    loss_hessian: Vec<Vec<f64>>,
    damping: f64,
    rhs: Vec<f64>,
    method: &str,
    cg_iterations: usize,
    analog_time: f64,
    step_size: f64,
    noise_variance: f64,
    window_fraction: f64,
    seed: u64,
) -> PyResult<(Vec<f64>, f64, u64)> {
    let system = DampedLowRankSystem::new(
        matrix_from_rows(jacobian)?,
        matrix_from_rows(loss_hessian)?,
        damping,
        DenseVector::from_vec(rhs),
    )
    .map_err(value_err)?;
    let report = match method {
        "exact" => solvers::solve_exact(&system).map_err(runtime_err)?,
        "cg" => solvers::solve_cg(&system, cg_iterations).map_err(runtime_err)?,
        "woodbury" => solvers::solve_woodbury(&system).map_err(runtime_err)?,
        "thermodynamic" => {
            let config = TlsConfig {
                noise_variance,
                step_size,
                analog_time,
                averaging_window_fraction: window_fraction,
                warm_start: WarmStartPolicy::ResetToRhs,
            };
            let device = OuState::zeros(system.dim(), RngStream::from_seed(seed));
            solvers::solve_thermo(&system, &config, device)
                .map_err(runtime_err)?
                .0
        }
        other => return Err(value_err(format!("unknown method `{other}`"))),
    };
    Ok((
        report.solution.into_vec(),
        report.residual_norm,
        report.model_calls,
    ))
}

/// Per-iteration cost-model estimate for one backend; `kind` is one of
/// "first-order", "ngd", "ngd-cg", "ngd-woodbury", "tngd".
#[pyfunction]
#[pyo3(signature = (kind, n, b = 32, d_z = 10, c = 200, t = 50.0))]
fn estimate_iteration<'py>(
    py: Python<'py>,
    kind: &str,
    n: usize,
    b: usize,
    d_z: usize,
    c: usize,
    t: f64,
) -> PyResult<Bound<'py, PyDict>> {
    let kind = match kind {
        "first-order" => OptimizerKind::FirstOrder,
        "ngd" => OptimizerKind::ExactNgd,
        "ngd-cg" => OptimizerKind::NgdCg,
        "ngd-woodbury" => OptimizerKind::NgdWoodbury,
        "tngd" => OptimizerKind::ThermodynamicNgd,
        other => return Err(value_err(format!("unknown optimizer kind `{other}`"))),
    };
    let est = costs::estimate_iteration(kind, n, b, d_z, c, t, &HardwareAssumptions::default());
    let out = PyDict::new(py);
    out.set_item("build_seconds", est.build_seconds)?;
    out.set_item("transfer_seconds", est.transfer_seconds)?;
    out.set_item("analog_seconds", est.analog_seconds)?;
    out.set_item("total_seconds", est.total_seconds)?;
    out.set_item("memory_bytes", est.memory_bytes)?;
    Ok(out)
}

/// Trains the desk-scale blobs task and returns per-iteration
/// `(iteration, train_loss, test_loss)` rows.
///
/// `solver` is "exact", "cg", "woodbury", "thermodynamic" or "sgd" (raw
/// gradient).
#[pyfunction]
#[pyo3(signature = (solver = "thermodynamic", analog_time = 5.0, noise_variance = 0.0,
                    epochs = 1, batch_size = 32, learning_rate = 0.01, damping = 0.01,
                    seed = 0, train_size = 320, test_size = 100))]
#[allow(clippy::too_many_arguments)]
fn train_blobs(
    solver: &str,
    analog_time: f64,
    noise_variance: f64,
    epochs: usize,
    batch_size: usize,
    learning_rate: f64,
    damping: f64,
    seed: u64,
    train_size: usize,
    test_size: usize,
) -> PyResult<Vec<(u64, f64, f64)>> {
    let data = dataset::load(&DatasetSpec::Blobs {
        train_size,
        test_size,
        classes: 3,
        features: 2,
        noise: 0.5,
        seed: 7,
    })
    .map_err(value_err)?;
    let model = ModelSpec::mlp(
        &[2, 12, 3],
        Activation::Tanh,
        LossHead::SoftmaxCrossEntropy,
    )
    .map_err(value_err)?;
    let (source, choice) = match solver {
        "sgd" => (GradientSource::RawGradient, SolverChoice::Exact),
        "exact" => (GradientSource::NaturalGradient, SolverChoice::Exact),
        "cg" => (
            GradientSource::NaturalGradient,
            SolverChoice::ConjugateGradient { iterations: 50 },
        ),
        "woodbury" => (GradientSource::NaturalGradient, SolverChoice::Woodbury),
        "thermodynamic" => (
            GradientSource::NaturalGradient,
            SolverChoice::Thermodynamic(TlsConfig {
                noise_variance,
                step_size: 0.1,
                analog_time,
                averaging_window_fraction: 0.1,
                warm_start: WarmStartPolicy::KeepPrevious,
            }),
        ),
        other => return Err(value_err(format!("unknown solver `{other}`"))),
    };
    let config = TrainConfig {
        optimizer: OptimizerConfig {
            update_rule: UpdateRule::Sgd { momentum: 0.0 },
            learning_rate,
            gradient_source: source,
            solver: choice,
            initial_damping: damping,
            lm: None,
            delay_time: 0.0,
        },
        epochs,
        batch_size,
        init_scale: 0.5,
    };
    let history = optim::train(
        &model,
        &data.train,
        Some(&data.test),
        &config,
        seed,
        &HardwareAssumptions::default(),
    )
    .map_err(runtime_err)?;
    Ok(history
        .records
        .iter()
        .map(|r| (r.iteration, r.train_loss, r.test_loss.unwrap_or(f64::NAN)))
        .collect())
}

#[pymodule]
fn tngd_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(solve, m)?)?;
    m.add_function(wrap_pyfunction!(estimate_iteration, m)?)?;
    m.add_function(wrap_pyfunction!(train_blobs, m)?)?;
    Ok(())
}

//! Training loops: SGD and Adam on the raw gradient or on a natural-gradient
//! estimate from any solver backend, with optional delayed (asynchronous)
//! device evolution and an optional Levenberg–Marquardt damping schedule.

use crate::costs::{self, HardwareAssumptions, OptimizerKind};
use crate::curvature::{
    self, Batch, CallCounter, CurvatureError, Dataset, ModelSpec, ParamVector, Targets,
};
use crate::numerics::{DenseVector, NumericsError, RngStream};
use crate::solvers::{self, SolverChoice, SolverError};
use crate::thermo::{self, DampedLowRankSystem, OuState, ThermoError, WarmStartPolicy};
use thiserror::Error;

/// Stream roles hung off one run seed, so that a single `u64` reproduces the
/// full run: parameter init, epoch shuffles, device noise.
pub const STREAM_INIT: u64 = 0;
pub const STREAM_SHUFFLE: u64 = 1;
pub const STREAM_DEVICE: u64 = 2;

const DAMPING_MIN: f64 = 1e-8;
const DAMPING_MAX: f64 = 1e8;

#[derive(Debug, Error)]
pub enum OptimError {
    #[error("invalid optimizer config: {0}")]
    InvalidConfig(String),
    #[error("quadratic model is degenerate (|q(p) - q(0)| <= 1e-12); skip the damping update")]
    DegenerateModel,
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Curvature(#[from] CurvatureError),
    #[error(transparent)]
    Thermo(#[from] ThermoError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, OptimError>;

// ---------------------------------------------------------------------------
// Configuration
// ---------------------------------------------------------------------------

#[derive(Clone, Copy, Debug)]
pub enum UpdateRule {
    Sgd { momentum: f64 },
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GradientSource {
    RawGradient,
    NaturalGradient,
}

/// Two-branch damping schedule: shrink lambda when the quadratic model is
/// trustworthy (`rho > a`), grow it when it is not (`rho < 1 - a`).
#[derive(Clone, Copy, Debug)]
pub struct LmSchedule {
    pub threshold: f64,
    pub alpha: f64,
}

impl Default for LmSchedule {
    fn default() -> Self {
        Self {
            threshold: 0.75,
            alpha: 2.0 / 3.0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct OptimizerConfig {
    pub update_rule: UpdateRule,
    pub learning_rate: f64,
    pub gradient_source: GradientSource,
    pub solver: SolverChoice,
    pub initial_damping: f64,
    /// Off by default; the two-branch rule runs only when present.
    pub lm: Option<LmSchedule>,
    /// Analog time spent under the previous iteration's system before the
    /// fresh one is uploaded. Thermodynamic solver only.
    pub delay_time: f64,
}

impl OptimizerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(OptimError::InvalidConfig(format!(
                "learning rate must be positive, got {}",
                self.learning_rate
            )));
        }
        match self.update_rule {
            UpdateRule::Sgd { momentum } => {
                if !(0.0..1.0).contains(&momentum) {
                    return Err(OptimError::InvalidConfig(format!(
                        "momentum must lie in [0, 1), got {momentum}"
                    )));
                }
            }
            UpdateRule::Adam {
                beta1,
                beta2,
                epsilon,
            } => {
                if !(0.0..1.0).contains(&beta1) || !(0.0..1.0).contains(&beta2) {
                    return Err(OptimError::InvalidConfig(format!(
                        "adam betas must lie in [0, 1), got ({beta1}, {beta2})"
                    )));
                }
                if !(epsilon > 0.0) {
                    return Err(OptimError::InvalidConfig(format!(
                        "adam epsilon must be positive, got {epsilon}"
                    )));
                }
            }
        }
        if !(self.initial_damping > 0.0) {
            return Err(OptimError::InvalidConfig(format!(
                "damping must be positive, got {}",
                self.initial_damping
            )));
        }
        if !(self.delay_time >= 0.0) {
            return Err(OptimError::InvalidConfig(format!(
                "delay time must be nonnegative, got {}",
                self.delay_time
            )));
        }
        if self.delay_time > 0.0 {
            match &self.solver {
                SolverChoice::Thermodynamic(tls) => {
                    if self.delay_time > tls.analog_time {
                        return Err(OptimError::InvalidConfig(format!(
                            "delay time {} exceeds analog time {}",
                            self.delay_time, tls.analog_time
                        )));
                    }
                }
                _ => {
                    return Err(OptimError::InvalidConfig(
                        "delay time requires the thermodynamic solver".into(),
                    ));
                }
            }
        }
        if let Some(lm) = &self.lm {
            if !(lm.threshold > 0.5 && lm.threshold < 1.0) {
                return Err(OptimError::InvalidConfig(format!(
                    "lm threshold must lie in (0.5, 1), got {}",
                    lm.threshold
                )));
            }
            if !(lm.alpha > 0.0 && lm.alpha < 1.0) {
                return Err(OptimError::InvalidConfig(format!(
                    "lm alpha must lie in (0, 1), got {}",
                    lm.alpha
                )));
            }
            if self.gradient_source != GradientSource::NaturalGradient {
                return Err(OptimError::InvalidConfig(
                    "the damping schedule requires the natural-gradient source".into(),
                ));
            }
        }
        if let SolverChoice::Thermodynamic(tls) = &self.solver {
            tls.validate().map_err(OptimError::Thermo)?;
        }
        if matches!(self.solver, SolverChoice::ConjugateGradient { iterations } if iterations == 0)
        {
            return Err(OptimError::InvalidConfig(
                "cg iteration budget must be at least 1".into(),
            ));
        }
        Ok(())
    }

    /// Cost-model row this configuration corresponds to.
    pub fn cost_kind(&self) -> OptimizerKind {
        if self.gradient_source == GradientSource::RawGradient {
            return OptimizerKind::FirstOrder;
        }
        match self.solver {
            SolverChoice::Exact => OptimizerKind::ExactNgd,
            SolverChoice::ConjugateGradient { .. } => OptimizerKind::NgdCg,
            SolverChoice::Woodbury => OptimizerKind::NgdWoodbury,
            SolverChoice::Thermodynamic(_) => OptimizerKind::ThermodynamicNgd,
        }
    }

    fn cg_iterations(&self) -> usize {
        match self.solver {
            SolverChoice::ConjugateGradient { iterations } => iterations,
            _ => 0,
        }
    }

    fn analog_time(&self) -> f64 {
        match &self.solver {
            SolverChoice::Thermodynamic(tls) => tls.analog_time,
            _ => 0.0,
        }
    }
}

// ---------------------------------------------------------------------------
// Update rules
// ---------------------------------------------------------------------------

/// Momentum SGD on an arbitrary direction:
/// `velocity = momentum * velocity + direction; theta -= lr * velocity`.
pub fn sgd_update(
    theta: &mut ParamVector,
    velocity: &mut DenseVector,
    direction: &DenseVector,
    learning_rate: f64,
    momentum: f64,
) {
    let v = velocity.as_mut_slice();
    let t = theta.values_mut().as_mut_slice();
    for i in 0..direction.len() {
        v[i] = momentum * v[i] + direction[i];
        t[i] -= learning_rate * v[i];
    }
}

/// Bias-corrected Adam applied to an arbitrary direction in place of the raw
/// gradient. `step` is the 1-indexed update count.
#[allow(clippy::too_many_arguments)]
pub fn adam_update(
    theta: &mut ParamVector,
    first_moment: &mut DenseVector,
    second_moment: &mut DenseVector,
    direction: &DenseVector,
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: u64,
) {
    let m = first_moment.as_mut_slice();
    let v = second_moment.as_mut_slice();
    let t = theta.values_mut().as_mut_slice();
    let bc1 = 1.0 - beta1.powi(step as i32);
    let bc2 = 1.0 - beta2.powi(step as i32);
    for i in 0..direction.len() {
        let d = direction[i];
        m[i] = beta1 * m[i] + (1.0 - beta1) * d;
        v[i] = beta2 * v[i] + (1.0 - beta2) * d * d;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        t[i] -= learning_rate * m_hat / (v_hat.sqrt() + epsilon);
    }
}

/// Reduction ratio `rho = (actual decrease) / (predicted decrease)` of the
/// quadratic model `q(p) = l + grad'p + p'Gp/2`, with the undamped curvature
/// in the quadratic term.
pub fn reduction_ratio(
    loss_new: f64,
    loss_old: f64,
    gradient: &DenseVector,
    system: &DampedLowRankSystem,
    step: &DenseVector,
) -> Result<f64> {
    let ap = system.apply(step);
    let p_a_p = step.dot(&ap)?;
    let p_g_p = p_a_p - system.damping() * step.dot(step)?;
    reduction_ratio_from_quadratic(loss_new, loss_old, gradient, step, p_g_p)
}

/// Same ratio with the curvature term `p'Gp` supplied by the caller (one
/// matrix-free curvature product on the CG path).
pub fn reduction_ratio_from_quadratic(
    loss_new: f64,
    loss_old: f64,
    gradient: &DenseVector,
    step: &DenseVector,
    p_g_p: f64,
) -> Result<f64> {
    let predicted = gradient.dot(step)? + 0.5 * p_g_p;
    if predicted.abs() <= 1e-12 {
        return Err(OptimError::DegenerateModel);
    }
    Ok((loss_new - loss_old) / predicted)
}

/// The two-branch Levenberg–Marquardt rule: `rho > a` shrinks lambda by
/// `alpha`, `rho < 1 - a` grows it by `1/alpha`, the dead zone leaves it
/// unchanged. The result is clamped to `[1e-8, 1e8]`.
pub fn lm_update(rho: f64, lambda: f64, threshold: f64, alpha: f64) -> f64 {
    debug_assert!(threshold > 0.5 && threshold < 1.0);
    debug_assert!(alpha > 0.0 && alpha < 1.0);
    let next = if rho > threshold {
        alpha * lambda
    } else if rho < 1.0 - threshold {
        lambda / alpha
    } else {
        lambda
    };
    next.clamp(DAMPING_MIN, DAMPING_MAX)
}

// ---------------------------------------------------------------------------
// Training state
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
enum Moments {
    Sgd { velocity: DenseVector },
    Adam { m: DenseVector, v: DenseVector },
}

/// Everything that persists across iterations of one run.
#[derive(Clone, Debug)]
pub struct TrainState {
    pub params: ParamVector,
    pub iteration: u64,
    pub damping: f64,
    moments: Moments,
    previous_estimate: Option<DenseVector>,
    device: Option<OuState>,
    stale_system: Option<DampedLowRankSystem>,
    seed: u64,
}

impl TrainState {
    pub fn new(model: &ModelSpec, config: &OptimizerConfig, seed: u64, init_scale: f64) -> Self {
        let mut init_rng = RngStream::substream(seed, STREAM_INIT);
        let params = model.init_params(&mut init_rng, init_scale);
        let n = model.param_count();
        let moments = match config.update_rule {
            UpdateRule::Sgd { .. } => Moments::Sgd {
                velocity: DenseVector::zeros(n),
            },
            UpdateRule::Adam { .. } => Moments::Adam {
                m: DenseVector::zeros(n),
                v: DenseVector::zeros(n),
            },
        };
        Self {
            params,
            iteration: 0,
            damping: config.initial_damping,
            moments,
            previous_estimate: None,
            device: None,
            stale_system: None,
            seed,
        }
    }

    pub fn previous_estimate(&self) -> Option<&DenseVector> {
        self.previous_estimate.as_ref()
    }
}

/// Per-step outputs the training loop records.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    /// Batch loss at the pre-update parameters.
    pub train_loss: f64,
    /// Sweeps spent on the gradient (always 1).
    pub gradient_calls: u64,
    /// Sweeps attributed to the solver backend (0 for the raw gradient).
    pub solver_calls: u64,
    pub solver_residual: Option<f64>,
}

/// One optimizer iteration: gradient, curvature, solve, update, optional
/// damping adaptation.
///
/// With the thermodynamic solver and `delay_time > 0`, the first
/// `min(t_d, t)` of analog evolution runs under the previous iteration's
/// system while the fresh factors are "being computed"; the remaining
/// `t - t_d` runs under the fresh system, and the readout averages over the
/// fresh phase. The device state persists across iterations whenever
/// `t_d > 0` or the warm-start policy keeps the previous estimate.
pub fn tngd_step(
    state: &mut TrainState,
    model: &ModelSpec,
    batch: &Batch,
    config: &OptimizerConfig,
) -> Result<StepOutcome> {
    let grad_counter = CallCounter::new();
    let solver_counter = CallCounter::new();
    let (loss_old, gradient) =
        curvature::loss_and_gradient(model, &state.params, batch, &grad_counter)?;

    let mut solver_residual = None;
    let mut lm_context: Option<LmContext> = None;
    let direction = match config.gradient_source {
        GradientSource::RawGradient => gradient.clone(),
        GradientSource::NaturalGradient => match &config.solver {
            SolverChoice::ConjugateGradient { iterations } => {
                let estimate = solvers::solve_cg_operator(
                    |v| {
                        curvature::ggn_vector_product(
                            model,
                            &state.params,
                            batch,
                            v,
                            state.damping,
                            &solver_counter,
                        )
                        .map_err(SolverError::Curvature)
                    },
                    &gradient,
                    *iterations,
                )?
                .solution;
                if config.lm.is_some() {
                    lm_context = Some(LmContext::MatrixFree);
                }
                estimate
            }
            _ => {
                let (j, h) =
                    curvature::curvature_factors(model, &state.params, batch, &solver_counter)?;
                let system =
                    DampedLowRankSystem::new(j, h, state.damping, gradient.clone())?;
                let (estimate, system) = solve_with_system(state, config, system)?;
                solver_residual = Some(system.residual_norm(&estimate));
                if config.delay_time > 0.0 {
                    state.stale_system = Some(system.clone());
                }
                if config.lm.is_some() {
                    lm_context = Some(LmContext::System(system));
                }
                estimate
            }
        },
    };
    if config.gradient_source == GradientSource::NaturalGradient {
        state.previous_estimate = Some(direction.clone());
    }

    let theta_before = state.params.clone();
    state.iteration += 1;
    match (&mut state.moments, config.update_rule) {
        (Moments::Sgd { velocity }, UpdateRule::Sgd { momentum }) => {
            sgd_update(
                &mut state.params,
                velocity,
                &direction,
                config.learning_rate,
                momentum,
            );
        }
        (
            Moments::Adam { m, v },
            UpdateRule::Adam {
                beta1,
                beta2,
                epsilon,
            },
        ) => {
            adam_update(
                &mut state.params,
                m,
                v,
                &direction,
                config.learning_rate,
                beta1,
                beta2,
                epsilon,
                state.iteration,
            );
        }
        _ => unreachable!("moments are constructed from the same update rule"),
    }

    if let (Some(lm), Some(context)) = (&config.lm, lm_context) {
        let loss_new = curvature::batch_loss(model, &state.params, batch)?;
        let step = state
            .params
            .values()
            .add_scaled(theta_before.values(), -1.0)?;
        let rho = match context {
            LmContext::System(system) => {
                reduction_ratio(loss_new, loss_old, &gradient, &system, &step)
            }
            LmContext::MatrixFree => {
                let gp = curvature::ggn_vector_product(
                    model,
                    &state.params,
                    batch,
                    &step,
                    0.0,
                    &solver_counter,
                )?;
                reduction_ratio_from_quadratic(
                    loss_new,
                    loss_old,
                    &gradient,
                    &step,
                    step.dot(&gp)?,
                )
            }
        };
        match rho {
            Ok(rho) => {
                state.damping = lm_update(rho, state.damping, lm.threshold, lm.alpha);
            }
            Err(OptimError::DegenerateModel) => {} // skip the update this step
            Err(e) => return Err(e),
        }
    }

    Ok(StepOutcome {
        train_loss: loss_old,
        gradient_calls: grad_counter.count(),
        solver_calls: solver_counter.count(),
        solver_residual,
    })
}

enum LmContext {
    System(DampedLowRankSystem),
    MatrixFree,
}

/// Dispatches the factored-system backends, including the retry-once
/// damping escalation on a failed factorization.
fn solve_with_system(
    state: &mut TrainState,
    config: &OptimizerConfig,
    system: DampedLowRankSystem,
) -> Result<(DenseVector, DampedLowRankSystem)> {
    match &config.solver {
        SolverChoice::Exact => match solvers::solve_exact(&system) {
            Ok(report) => Ok((report.solution, system)),
            Err(SolverError::Numerics(NumericsError::NotPositiveDefinite { .. })) => {
                state.damping *= 10.0;
                let system = system.with_damping(state.damping)?;
                let report = solvers::solve_exact(&system)?;
                Ok((report.solution, system))
            }
            Err(e) => Err(e.into()),
        },
        SolverChoice::Woodbury => {
            let report = solvers::solve_woodbury(&system)?;
            Ok((report.solution, system))
        }
        SolverChoice::Thermodynamic(tls) => {
            let n = system.dim();
            let mut device = state.device.take().unwrap_or_else(|| {
                OuState::zeros(n, RngStream::substream(state.seed, STREAM_DEVICE))
            });
            // First iteration of an Algorithm-style warm start: the previous
            // estimate is the plain gradient.
            if tls.warm_start == WarmStartPolicy::KeepPrevious
                && state.previous_estimate.is_none()
            {
                device.set_x(system.rhs().clone());
            }
            let estimate = if config.delay_time > 0.0 {
                if let Some(stale) = &state.stale_system {
                    // Stale phase: the device keeps relaxing under last
                    // iteration's system; no reset applies mid-flight.
                    let stale_time = config.delay_time.min(tls.analog_time);
                    let stale_steps = thermo::steps_for(stale_time, tls.step_size);
                    thermo::integrate(
                        &mut device,
                        stale,
                        tls.step_size,
                        tls.noise_variance,
                        stale_steps,
                    )?;
                    let fresh = thermo::TlsConfig {
                        analog_time: tls.analog_time - config.delay_time,
                        ..*tls
                    };
                    thermo::evolve_in_place(&mut device, &system, &fresh)?
                } else {
                    // No previous system yet: run the full window fresh.
                    let (estimate, next) = thermo::evolve(device, &system, tls)?;
                    device = next;
                    estimate
                }
            } else {
                let (estimate, next) = thermo::evolve(device, &system, tls)?;
                device = next;
                estimate
            };
            state.device = Some(device);
            Ok((estimate, system))
        }
        SolverChoice::ConjugateGradient { .. } => {
            unreachable!("cg is handled on the matrix-free path")
        }
    }
}

// ---------------------------------------------------------------------------
// Training driver
// ---------------------------------------------------------------------------

#[derive(Clone, Debug)]
pub struct TrainConfig {
    pub optimizer: OptimizerConfig,
    pub epochs: usize,
    pub batch_size: usize,
    pub init_scale: f64,
}

/// One per-iteration record; metrics are evaluated at the pre-update
/// parameters (train metrics on the batch, test metrics on the full test
/// set).
#[derive(Clone, Debug)]
pub struct IterationRecord {
    pub iteration: u64,
    pub epoch: usize,
    pub train_loss: f64,
    pub test_loss: Option<f64>,
    pub train_accuracy: Option<f64>,
    pub test_accuracy: Option<f64>,
    pub damping: f64,
    /// Cumulative estimated wall seconds from the cost model.
    pub est_wall_seconds: f64,
    pub gradient_calls: u64,
    pub solver_calls: u64,
}

#[derive(Clone, Debug)]
pub struct TrainHistory {
    pub seed: u64,
    pub records: Vec<IterationRecord>,
}

/// Trains for `epochs` passes of seeded, epoch-shuffled mini-batches
/// (trailing partial batches are dropped). Deterministic per seed.
pub fn train(
    model: &ModelSpec,
    train_set: &Dataset,
    test_set: Option<&Dataset>,
    config: &TrainConfig,
    seed: u64,
    hw: &HardwareAssumptions,
) -> Result<TrainHistory> {
    config.optimizer.validate()?;
    if train_set.is_empty() {
        return Err(OptimError::InvalidConfig("empty training set".into()));
    }
    if config.batch_size == 0 || config.batch_size > train_set.len() {
        return Err(OptimError::InvalidConfig(format!(
            "batch size {} must lie in [1, {}]",
            config.batch_size,
            train_set.len()
        )));
    }
    let mut state = TrainState::new(model, &config.optimizer, seed, config.init_scale);
    let mut shuffle_rng = RngStream::substream(seed, STREAM_SHUFFLE);
    let mut records = Vec::new();
    let mut indices: Vec<usize> = (0..train_set.len()).collect();
    let per_iter = costs::estimate_iteration(
        config.optimizer.cost_kind(),
        model.param_count(),
        config.batch_size,
        model.output_dim(),
        config.optimizer.cg_iterations(),
        config.optimizer.analog_time(),
        hw,
    )
    .total_seconds;
    let mut est_wall = 0.0;

    for epoch in 0..config.epochs {
        shuffle_rng.shuffle(&mut indices);
        for chunk in indices.chunks_exact(config.batch_size) {
            let batch = train_set.gather(chunk);
            let train_accuracy = batch_accuracy(model, &state.params, &batch)?;
            let (test_loss, test_accuracy) = match test_set {
                Some(ts) => {
                    let (l, a) = curvature::evaluate(model, &state.params, ts)?;
                    (Some(l), a)
                }
                None => (None, None),
            };
            let iteration = state.iteration;
            let damping_before = state.damping;
            let outcome = tngd_step(&mut state, model, &batch, &config.optimizer)?;
            est_wall += per_iter;
            records.push(IterationRecord {
                iteration,
                epoch,
                train_loss: outcome.train_loss,
                test_loss,
                train_accuracy,
                test_accuracy,
                damping: damping_before,
                est_wall_seconds: est_wall,
                gradient_calls: outcome.gradient_calls,
                solver_calls: outcome.solver_calls,
            });
        }
    }
    Ok(TrainHistory {
        seed,
        records,
    })
}

fn batch_accuracy(
    model: &ModelSpec,
    theta: &ParamVector,
    batch: &Batch,
) -> Result<Option<f64>> {
    let classes = match &batch.targets {
        Targets::Classes(c) => c,
        Targets::Values(_) => return Ok(None),
    };
    let mut correct = 0usize;
    for i in 0..batch.size() {
        let z = curvature::forward(
            model,
            theta,
            &DenseVector::from_slice(batch.inputs.row(i)),
        )?;
        let argmax = (0..z.len())
            .max_by(|&a, &b| z[a].partial_cmp(&z[b]).unwrap())
            .unwrap();
        if argmax == classes[i] {
            correct += 1;
        }
    }
    Ok(Some(correct as f64 / batch.size() as f64))
}

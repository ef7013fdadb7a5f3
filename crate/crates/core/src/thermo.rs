//! Ornstein–Uhlenbeck simulation of the stochastic processing unit.
//!
//! The device relaxes under `dx = -(A x - g) dt + N[0, 2*kappa0*dt]` with
//! `A = Jᵀ H_L J + lambda*I` held in factored form. Its stationary mean is
//! the damped natural gradient `A⁻¹ g` and its stationary covariance is
//! `kappa0 * A⁻¹`, so integrating for long enough and averaging solves the
//! linear system. Time is measured in units of the device constant tau;
//! physical seconds live in [`crate::costs`].

use crate::numerics::{
    self, DenseMatrix, DenseVector, NumericsError, RngStream,
};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ThermoError {
    #[error("state became non-finite at elapsed time {elapsed}: step size too large for the system's largest eigenvalue")]
    NonFinite { elapsed: f64 },
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, ThermoError>;

/// The damped linear system `(Jᵀ H_L J + lambda I) x = g` in factored form.
///
/// `J` is the (b*d_z x N) stacked per-sample Jacobian with rows carrying
/// 1/sqrt(b), `H_L` the block-diagonal (b*d_z x b*d_z) output-space Hessian,
/// so the drift matrix is the batch-mean curvature plus damping. All solver
/// backends consume this object.
#[derive(Clone, Debug)]
pub struct DampedLowRankSystem {
    jacobian: DenseMatrix,
    loss_hessian: DenseMatrix,
    damping: f64,
    rhs: DenseVector,
}

impl DampedLowRankSystem {
    pub fn new(
        jacobian: DenseMatrix,
        loss_hessian: DenseMatrix,
        damping: f64,
        rhs: DenseVector,
    ) -> Result<Self> {
        let m = jacobian.rows();
        let n = jacobian.cols();
        if loss_hessian.rows() != m || loss_hessian.cols() != m {
            return Err(ThermoError::InvalidSystem(format!(
                "loss Hessian is {}x{} but the Jacobian has {m} rows",
                loss_hessian.rows(),
                loss_hessian.cols()
            )));
        }
        if rhs.len() != n {
            return Err(ThermoError::InvalidSystem(format!(
                "rhs has length {} but the Jacobian has {n} columns",
                rhs.len()
            )));
        }
        if !(damping >= 0.0) {
            return Err(ThermoError::InvalidSystem(format!(
                "damping must be nonnegative, got {damping}"
            )));
        }
        let asym = loss_hessian.max_asymmetry();
        if asym > numerics::SYMMETRY_TOL * loss_hessian.max_abs().max(1.0) {
            return Err(ThermoError::InvalidSystem(format!(
                "loss Hessian asymmetry {asym:.3e} exceeds tolerance"
            )));
        }
        if m < n && damping == 0.0 {
            return Err(ThermoError::InvalidSystem(
                "rank-deficient system (b*d_z < N) requires positive damping".into(),
            ));
        }
        Ok(Self {
            jacobian,
            loss_hessian: loss_hessian.symmetrized(),
            damping,
            rhs,
        })
    }

    /// Number of parameters N.
    pub fn dim(&self) -> usize {
        self.jacobian.cols()
    }

    /// Factor rank b*d_z.
    pub fn low_rank_dim(&self) -> usize {
        self.jacobian.rows()
    }

    pub fn jacobian(&self) -> &DenseMatrix {
        &self.jacobian
    }

    pub fn loss_hessian(&self) -> &DenseMatrix {
        &self.loss_hessian
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    pub fn rhs(&self) -> &DenseVector {
        &self.rhs
    }

    /// Same factors and rhs under a different damping.
    pub fn with_damping(&self, damping: f64) -> Result<Self> {
        Self::new(
            self.jacobian.clone(),
            self.loss_hessian.clone(),
            damping,
            self.rhs.clone(),
        )
    }

    /// Applies the drift matrix `A = Jᵀ H_L J + lambda I` without forming it:
    /// three factor products, O(b*d_z*N).
    pub fn apply(&self, v: &DenseVector) -> DenseVector {
        let jv = self.jacobian.matvec(v).expect("dimension checked at construction");
        let hjv = self.loss_hessian.matvec(&jv).expect("square factor");
        let mut out = self
            .jacobian
            .matvec_transpose(&hjv)
            .expect("dimension checked at construction");
        if self.damping != 0.0 {
            for (o, x) in out.as_mut_slice().iter_mut().zip(v.as_slice()) {
                *o += self.damping * x;
            }
        }
        out
    }

    /// Materializes `A` as an N x N matrix. Test oracle and exact-solver path.
    pub fn explicit_matrix(&self) -> DenseMatrix {
        let hj = self.loss_hessian.matmul(&self.jacobian).expect("shapes fixed");
        let mut a = self
            .jacobian
            .transpose()
            .matmul(&hj)
            .expect("shapes fixed")
            .symmetrized();
        for i in 0..a.rows() {
            let v = a.get(i, i) + self.damping;
            a.set(i, i, v);
        }
        a
    }

    /// `||A x - g||`.
    pub fn residual_norm(&self, x: &DenseVector) -> f64 {
        self.apply(x)
            .add_scaled(&self.rhs, -1.0)
            .expect("dimensions checked at construction")
            .norm()
    }
}

/// How the solver seeds the device state at the start of a solve.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WarmStartPolicy {
    /// `x0 = g`: at `t = 0` the estimate is the plain gradient, giving the
    /// smooth first-order/second-order interpolation in analog time.
    ResetToRhs,
    /// `x0 = 0`.
    ResetToZero,
    /// Leave the device where the previous solve ended.
    KeepPrevious,
}

/// Settings for one thermodynamic linear solve.
#[derive(Clone, Copy, Debug)]
pub struct TlsConfig {
    /// Noise variance kappa0; also the inverse temperature of the
    /// equilibrium law (covariance `kappa0 * A⁻¹`).
    pub noise_variance: f64,
    /// Euler–Maruyama step, in units of tau.
    pub step_size: f64,
    /// Analog integration time, in units of tau.
    pub analog_time: f64,
    /// Fraction of the trajectory averaged for the readout, in (0, 1].
    pub averaging_window_fraction: f64,
    pub warm_start: WarmStartPolicy,
}

impl Default for TlsConfig {
    fn default() -> Self {
        Self {
            noise_variance: 0.0,
            step_size: 0.1,
            analog_time: 50.0,
            averaging_window_fraction: 0.1,
            warm_start: WarmStartPolicy::KeepPrevious,
        }
    }
}

impl TlsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.noise_variance >= 0.0) {
            return Err(ThermoError::InvalidConfig(format!(
                "noise variance must be nonnegative, got {}",
                self.noise_variance
            )));
        }
        if !(self.step_size > 0.0) {
            return Err(ThermoError::InvalidConfig(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if !(self.analog_time >= 0.0) {
            return Err(ThermoError::InvalidConfig(format!(
                "analog time must be nonnegative, got {}",
                self.analog_time
            )));
        }
        if self.analog_time > 0.0 && self.step_size > self.analog_time {
            return Err(ThermoError::InvalidConfig(format!(
                "step size {} exceeds analog time {}",
                self.step_size, self.analog_time
            )));
        }
        if !(self.averaging_window_fraction > 0.0 && self.averaging_window_fraction <= 1.0) {
            return Err(ThermoError::InvalidConfig(format!(
                "averaging window fraction must lie in (0, 1], got {}",
                self.averaging_window_fraction
            )));
        }
        Ok(())
    }

    /// Number of Euler–Maruyama steps for duration `t`, i.e. ceil(t/dt) with
    /// a guard against floating-point spill (0.4/0.02 must give 20, not 21).
    pub fn steps_for(&self, t: f64) -> usize {
        steps_for(t, self.step_size)
    }
}

pub(crate) fn steps_for(t: f64, dt: f64) -> usize {
    if t <= 0.0 {
        return 0;
    }
    (t / dt - 1e-9).ceil().max(1.0) as usize
}

/// Instantaneous state of the simulated device: the evolving estimate, the
/// elapsed analog time and the noise stream. Single-owner; move it between
/// iterations to model a device that keeps running.
#[derive(Clone, Debug)]
pub struct OuState {
    x: DenseVector,
    elapsed: f64,
    rng: RngStream,
}

impl OuState {
    pub fn new(x: DenseVector, rng: RngStream) -> Self {
        Self {
            x,
            elapsed: 0.0,
            rng,
        }
    }

    pub fn zeros(dim: usize, rng: RngStream) -> Self {
        Self::new(DenseVector::zeros(dim), rng)
    }

    pub fn x(&self) -> &DenseVector {
        &self.x
    }

    pub fn set_x(&mut self, x: DenseVector) {
        self.x = x;
    }

    pub fn elapsed(&self) -> f64 {
        self.elapsed
    }

    pub fn rng(&self) -> &RngStream {
        &self.rng
    }
}

/// One Euler–Maruyama step:
/// `x' = x - dt*(A x - g) + z*sqrt(2*kappa0*dt)`.
///
/// The drift is applied through the factors (`Jᵀ(H_L(J x)) + lambda x`); the
/// N x N matrix is never formed. When `kappa0 == 0` the noise stream is not
/// advanced. Blow-up (step size above `2/lambda_max`) reports `NonFinite`
/// rather than clamping.
pub fn ou_step(
    state: &mut OuState,
    system: &DampedLowRankSystem,
    dt: f64,
    kappa0: f64,
) -> Result<()> {
    debug_assert!(dt > 0.0);
    let drift = system.apply(&state.x);
    let g = system.rhs();
    if kappa0 > 0.0 {
        let noise = state.rng.gaussian_vector(state.x.len(), 0.0, 2.0 * kappa0 * dt);
        for i in 0..state.x.len() {
            state.x[i] = state.x[i] - dt * (drift[i] - g[i]) + noise[i];
        }
    } else {
        for i in 0..state.x.len() {
            state.x[i] -= dt * (drift[i] - g[i]);
        }
    }
    state.elapsed += dt;
    if !state.x.all_finite() {
        return Err(ThermoError::NonFinite {
            elapsed: state.elapsed,
        });
    }
    Ok(())
}

/// Integrates `steps` Euler–Maruyama steps without averaging. Used for the
/// stale phase of delayed solves and for stationary-law sampling.
pub fn integrate(
    state: &mut OuState,
    system: &DampedLowRankSystem,
    dt: f64,
    kappa0: f64,
    steps: usize,
) -> Result<()> {
    for _ in 0..steps {
        ou_step(state, system, dt, kappa0)?;
    }
    Ok(())
}

/// Runs the device for `config.analog_time` and reads out the natural
/// gradient estimate.
///
/// The warm-start policy is applied first, then ceil(t/dt) steps are taken
/// and the estimate is the time average of the trailing
/// `averaging_window_fraction` of the trajectory (at least one sample).
/// With `t = 0` no steps are taken and the estimate is the (possibly reset)
/// current state, so reset-to-rhs at `t = 0` returns `g` exactly.
pub fn evolve(
    mut state: OuState,
    system: &DampedLowRankSystem,
    config: &TlsConfig,
) -> Result<(DenseVector, OuState)> {
    config.validate()?;
    if state.x.len() != system.dim() {
        return Err(ThermoError::InvalidSystem(format!(
            "state dimension {} does not match system dimension {}",
            state.x.len(),
            system.dim()
        )));
    }
    match config.warm_start {
        WarmStartPolicy::ResetToRhs => state.x = system.rhs().clone(),
        WarmStartPolicy::ResetToZero => state.x = DenseVector::zeros(system.dim()),
        WarmStartPolicy::KeepPrevious => {}
    }
    let estimate = evolve_in_place(&mut state, system, config)?;
    Ok((estimate, state))
}

/// The stepping/averaging core of [`evolve`], without the warm-start reset.
pub(crate) fn evolve_in_place(
    state: &mut OuState,
    system: &DampedLowRankSystem,
    config: &TlsConfig,
) -> Result<DenseVector> {
    let steps = config.steps_for(config.analog_time);
    if steps == 0 {
        return Ok(state.x.clone());
    }
    let window = ((config.averaging_window_fraction * steps as f64).ceil() as usize)
        .clamp(1, steps);
    let mut sum = DenseVector::zeros(system.dim());
    for k in 0..steps {
        ou_step(state, system, config.step_size, config.noise_variance)?;
        if k + window >= steps {
            for (s, x) in sum.as_mut_slice().iter_mut().zip(state.x.as_slice()) {
                *s += x;
            }
        }
    }
    Ok(sum.scaled(1.0 / window as f64))
}

/// Closed-form mean trajectory `exp(-A t)(x0 - A⁻¹g) + A⁻¹g`, via the
/// eigendecomposition of `A`. Test oracle only; requires `A` positive
/// definite.
pub fn analytic_mean(
    system: &DampedLowRankSystem,
    x0: &DenseVector,
    t: f64,
) -> Result<DenseVector> {
    let a = system.explicit_matrix();
    let (values, vectors) = numerics::symmetric_eigen(&a)?;
    for i in 0..values.len() {
        if values[i] <= 0.0 {
            return Err(ThermoError::Numerics(NumericsError::NotPositiveDefinite {
                index: i,
                pivot: values[i],
            }));
        }
    }
    let n = a.rows();
    if x0.len() != n {
        return Err(ThermoError::InvalidSystem(format!(
            "x0 has length {}, expected {n}",
            x0.len()
        )));
    }
    // Work in the eigenbasis: coefficient-wise decay toward A⁻¹ g.
    let g = system.rhs();
    let mut out = DenseVector::zeros(n);
    for k in 0..n {
        let mut qx = 0.0;
        let mut qg = 0.0;
        for i in 0..n {
            qx += vectors.get(i, k) * x0[i];
            qg += vectors.get(i, k) * g[i];
        }
        let solution_coeff = qg / values[k];
        let coeff = (-values[k] * t).exp() * (qx - solution_coeff) + solution_coeff;
        for i in 0..n {
            out[i] += coeff * vectors.get(i, k);
        }
    }
    Ok(out)
}

/// Stationary covariance `kappa0 * A⁻¹` of the device. Test oracle for the
/// equilibrium law of [`ou_step`].
pub fn equilibrium_covariance(system: &DampedLowRankSystem, kappa0: f64) -> Result<DenseMatrix> {
    let a = system.explicit_matrix();
    let inv = numerics::spd_inverse(&a)?;
    let n = inv.rows();
    Ok(DenseMatrix::from_fn(n, n, |i, j| kappa0 * inv.get(i, j)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::cholesky_solve;

    /// System with J = 0 (m x n), so A = lambda I.
    fn damping_only(m: usize, n: usize, damping: f64, rhs: Vec<f64>) -> DampedLowRankSystem {
        DampedLowRankSystem::new(
            DenseMatrix::zeros(m, n),
            DenseMatrix::zeros(m, m),
            damping,
            DenseVector::from_vec(rhs),
        )
        .unwrap()
    }

    fn random_system(
        m: usize,
        n: usize,
        damping: f64,
        rng: &mut RngStream,
    ) -> DampedLowRankSystem {
        let j = DenseMatrix::from_fn(m, n, |_, _| rng.standard_normal() / (n as f64).sqrt());
        // Diagonal positive H keeps the factor PSD and symmetric.
        let mut h = DenseMatrix::zeros(m, m);
        for i in 0..m {
            h.set(i, i, 0.5 + rng.uniform());
        }
        let g = rng.gaussian_vector(n, 0.0, 1.0);
        DampedLowRankSystem::new(j, h, damping, g).unwrap()
    }

    #[test]
    fn scalar_decay_step() {
        let sys = damping_only(1, 1, 1.0, vec![0.0]);
        let mut state = OuState::new(
            DenseVector::from_slice(&[1.0]),
            RngStream::from_seed(0),
        );
        ou_step(&mut state, &sys, 0.1, 0.0).unwrap();
        assert!((state.x()[0] - 0.9).abs() < 1e-15);
        assert!((state.elapsed() - 0.1).abs() < 1e-15);
    }

    #[test]
    fn first_step_toward_solution() {
        let sys = damping_only(1, 1, 1.0, vec![1.0]);
        let mut state = OuState::zeros(1, RngStream::from_seed(0));
        ou_step(&mut state, &sys, 0.1, 0.0).unwrap();
        assert!((state.x()[0] - 0.1).abs() < 1e-15);
    }

    #[test]
    fn noiseless_stepping_converges_to_dense_solve() {
        let mut rng = RngStream::from_seed(5);
        let sys = random_system(3, 3, 1.5, &mut rng);
        let mut state = OuState::zeros(3, RngStream::from_seed(1));
        integrate(&mut state, &sys, 1e-3, 0.0, 10_000).unwrap();
        let oracle = cholesky_solve(&sys.explicit_matrix(), sys.rhs()).unwrap();
        let err = state.x().add_scaled(&oracle, -1.0).unwrap().norm();
        assert!(err < 1e-4, "error {err}");
    }

    #[test]
    fn unstable_step_reports_nonfinite() {
        // lambda = 1, so stability needs dt < 2; dt = 1e5 diverges fast.
        let sys = damping_only(1, 1, 1.0, vec![0.0]);
        let mut state = OuState::new(DenseVector::from_slice(&[1.0]), RngStream::from_seed(0));
        let result = integrate(&mut state, &sys, 1e5, 0.0, 10_000);
        assert!(matches!(result, Err(ThermoError::NonFinite { .. })));
    }

    #[test]
    fn evolve_time_zero_reset_to_rhs_returns_rhs() {
        let sys = damping_only(2, 2, 1.0, vec![0.25, -3.0]);
        let config = TlsConfig {
            analog_time: 0.0,
            warm_start: WarmStartPolicy::ResetToRhs,
            ..TlsConfig::default()
        };
        let state = OuState::zeros(2, RngStream::from_seed(0));
        let (estimate, final_state) = evolve(state, &sys, &config).unwrap();
        assert_eq!(estimate.as_slice(), &[0.25, -3.0]);
        assert_eq!(final_state.elapsed(), 0.0);
    }

    #[test]
    fn evolve_noiseless_matches_dense_solve() {
        let mut rng = RngStream::from_seed(8);
        let sys = random_system(10, 10, 1.0, &mut rng);
        let config = TlsConfig {
            noise_variance: 0.0,
            step_size: 0.01,
            analog_time: 50.0,
            averaging_window_fraction: 0.1,
            warm_start: WarmStartPolicy::ResetToZero,
        };
        let (estimate, _) = evolve(OuState::zeros(10, RngStream::from_seed(2)), &sys, &config).unwrap();
        let oracle = cholesky_solve(&sys.explicit_matrix(), sys.rhs()).unwrap();
        let rel = estimate.add_scaled(&oracle, -1.0).unwrap().norm() / oracle.norm();
        assert!(rel < 1e-3, "relative error {rel}");
    }

    #[test]
    fn evolve_noisy_median_matches_dense_solve() {
        let mut rng = RngStream::from_seed(9);
        let sys = random_system(10, 10, 1.0, &mut rng);
        let oracle = cholesky_solve(&sys.explicit_matrix(), sys.rhs()).unwrap();
        let config = TlsConfig {
            noise_variance: 1e-4,
            step_size: 0.01,
            analog_time: 50.0,
            averaging_window_fraction: 0.1,
            warm_start: WarmStartPolicy::ResetToZero,
        };
        let mut errors: Vec<f64> = (0..20)
            .map(|seed| {
                let (estimate, _) =
                    evolve(OuState::zeros(10, RngStream::from_seed(seed)), &sys, &config).unwrap();
                estimate.add_scaled(&oracle, -1.0).unwrap().norm() / oracle.norm()
            })
            .collect();
        errors.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let median = errors[errors.len() / 2];
        assert!(median < 5e-3, "median relative error {median}");
    }

    #[test]
    fn steps_round_cleanly() {
        assert_eq!(steps_for(0.0, 0.1), 0);
        assert_eq!(steps_for(5.0, 0.1), 50);
        assert_eq!(steps_for(1.0, 0.1), 10);
        assert_eq!(steps_for(0.4, 0.02), 20);
        assert_eq!(steps_for(0.45, 0.1), 5);
    }

    #[test]
    fn analytic_mean_endpoints() {
        let mut rng = RngStream::from_seed(12);
        let sys = random_system(6, 6, 0.7, &mut rng);
        let x0 = rng.gaussian_vector(6, 0.0, 1.0);

        let at_zero = analytic_mean(&sys, &x0, 0.0).unwrap();
        let gap0 = at_zero.add_scaled(&x0, -1.0).unwrap().norm();
        assert!(gap0 < 1e-12, "t=0 should return x0, gap {gap0}");

        let a = sys.explicit_matrix();
        let (vals, _) = numerics::symmetric_eigen(&a).unwrap();
        let t_long = 100.0 / vals[0];
        let at_long = analytic_mean(&sys, &x0, t_long).unwrap();
        let solution = cholesky_solve(&a, sys.rhs()).unwrap();
        let gap = at_long.add_scaled(&solution, -1.0).unwrap().norm();
        assert!(gap < 1e-6, "long-time mean should be A⁻¹g, gap {gap}");
    }

    #[test]
    fn analytic_mean_scalar_formula() {
        // A = 2 (via lambda = 2, J = 0), g = 2, x0 = 0, t = 1: 1 - e^{-2}.
        let sys = damping_only(1, 1, 2.0, vec![2.0]);
        let mean = analytic_mean(&sys, &DenseVector::zeros(1), 1.0).unwrap();
        let expected = 1.0 - (-2.0f64).exp();
        assert!((mean[0] - expected).abs() < 1e-12);
        assert!((expected - 0.8647).abs() < 1e-4);
    }

    #[test]
    fn mean_trajectory_matches_analytic_for_noiseless_evolve() {
        let mut rng = RngStream::from_seed(21);
        for n in [5usize, 20, 50] {
            let sys = random_system(n + 2, n, 0.5, &mut rng);
            let x0 = rng.gaussian_vector(n, 0.0, 1.0);
            let dt = 0.01;
            let t = 3.0;
            let mut state = OuState::new(x0.clone(), RngStream::from_seed(3));
            integrate(&mut state, &sys, dt, 0.0, steps_for(t, dt)).unwrap();
            let expected = analytic_mean(&sys, &x0, t).unwrap();
            let rel = state.x().add_scaled(&expected, -1.0).unwrap().norm()
                / expected.norm().max(1e-12);
            assert!(rel <= 5.0 * dt, "n={n}: O(dt) agreement violated, rel {rel}");
        }
    }

    #[test]
    fn matrix_free_apply_matches_explicit() {
        let mut rng = RngStream::from_seed(33);
        for _ in 0..5 {
            let sys = random_system(6, 9, 0.3, &mut rng);
            let v = rng.gaussian_vector(9, 0.0, 1.0);
            let fast = sys.apply(&v);
            let slow = sys.explicit_matrix().matvec(&v).unwrap();
            let gap = fast.add_scaled(&slow, -1.0).unwrap().max_abs();
            assert!(gap < 1e-10, "gap {gap}");
        }
    }

    #[test]
    fn equilibrium_covariance_basics() {
        let sys = damping_only(2, 2, 1.0, vec![0.0, 0.0]);
        let zero = equilibrium_covariance(&sys, 0.0).unwrap();
        assert_eq!(zero.max_abs(), 0.0);

        let half = equilibrium_covariance(&sys, 0.5).unwrap();
        assert!((half.get(0, 0) - 0.5).abs() < 1e-12);
        assert!((half.get(1, 1) - 0.5).abs() < 1e-12);
        assert!(half.get(0, 1).abs() < 1e-12);
    }

    #[test]
    fn scalar_stationary_variance() {
        // A = 2, kappa0 = 1: stationary variance 0.5. Small dt keeps the
        // Euler–Maruyama variance bias (factor 1/(1 - dt*A/2)) inside the
        // tolerance band.
        let sys = damping_only(1, 1, 2.0, vec![0.0]);
        let dt = 0.01;
        let mut state = OuState::zeros(1, RngStream::from_seed(77));
        integrate(&mut state, &sys, dt, 1.0, 5_000).unwrap(); // burn-in
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let samples = 200_000usize;
        for _ in 0..samples {
            ou_step(&mut state, &sys, dt, 1.0).unwrap();
            sum += state.x()[0];
            sumsq += state.x()[0] * state.x()[0];
        }
        let mean = sum / samples as f64;
        let var = sumsq / samples as f64 - mean * mean;
        assert!((0.45..=0.55).contains(&var), "stationary variance {var}");
    }

    #[test]
    fn same_seed_same_trajectory() {
        let mut rng = RngStream::from_seed(4);
        let sys = random_system(4, 4, 1.0, &mut rng);
        let run = |seed: u64| {
            let mut state = OuState::zeros(4, RngStream::from_seed(seed));
            integrate(&mut state, &sys, 0.05, 0.01, 200).unwrap();
            state.x().clone()
        };
        assert_eq!(run(9), run(9));
        assert_ne!(run(9), run(10));
    }

    #[test]
    fn rejects_rank_deficient_without_damping() {
        let j = DenseMatrix::zeros(1, 3);
        let h = DenseMatrix::zeros(1, 1);
        let g = DenseVector::zeros(3);
        assert!(matches!(
            DampedLowRankSystem::new(j, h, 0.0, g),
            Err(ThermoError::InvalidSystem(_))
        ));
    }

    #[test]
    fn monotone_mean_error_even_when_ill_conditioned() {
        // Condition number 1e6 through a wide eigenvalue spread in H.
        let n = 12;
        let mut rng = RngStream::from_seed(55);
        let j = DenseMatrix::from_fn(n, n, |_, _| rng.standard_normal());
        let mut h = DenseMatrix::zeros(n, n);
        for i in 0..n {
            h.set(i, i, 10f64.powf(-6.0 * i as f64 / (n - 1) as f64));
        }
        let g = rng.gaussian_vector(n, 0.0, 1.0);
        let sys = DampedLowRankSystem::new(j, h, 1e-6, g).unwrap();
        let a = sys.explicit_matrix();
        let (vals, _) = numerics::symmetric_eigen(&a).unwrap();
        let dt = 1.0 / vals[vals.len() - 1];
        let oracle = cholesky_solve(&a, sys.rhs()).unwrap();
        let mut state = OuState::zeros(n, RngStream::from_seed(1));
        let mut last = state.x().add_scaled(&oracle, -1.0).unwrap().norm();
        for _ in 0..2_000 {
            ou_step(&mut state, &sys, dt, 0.0).unwrap();
            let err = state.x().add_scaled(&oracle, -1.0).unwrap().norm();
            assert!(err <= last * (1.0 + 1e-12), "error increased: {err} > {last}");
            last = err;
        }
    }
}

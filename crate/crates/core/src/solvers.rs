//! Interchangeable backends for the damped curvature system
//! `(JᵀH_LJ + lambda I) x = g`.
//!
//! All four backends consume a [`DampedLowRankSystem`] and produce a
//! [`SolveReport`]. The reported model-call figure follows the per-backend
//! accounting used throughout: building the factors costs b*d_z sweeps
//! (exact, Woodbury, thermodynamic), each conjugate-gradient iteration costs
//! 2 (one forward-mode plus one reverse sweep per curvature product).

use crate::costs::HardwareAssumptions;
use crate::curvature::CurvatureError;
use crate::numerics::{self, DenseMatrix, DenseVector, NumericsError};
use crate::thermo::{self, DampedLowRankSystem, OuState, ThermoError, TlsConfig};
use std::time::Instant;
use thiserror::Error;

/// Guard for backends that materialize dense matrices.
pub const EXPLICIT_LIMIT: usize = 5000;

#[derive(Debug, Error)]
pub enum SolverError {
    #[error("system dimension {0} too large to materialize (limit {1})")]
    TooLarge(usize, usize),
    #[error("conjugate gradient breakdown at iteration {iteration}: curvature inner product {curvature:.3e} is not positive")]
    BreakdownDetected { iteration: usize, curvature: f64 },
    #[error("inner Woodbury matrix is numerically singular")]
    SingularInner(#[source] NumericsError),
    #[error("Woodbury requires positive damping, got {0}")]
    ZeroDamping(f64),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error(transparent)]
    Thermo(#[from] ThermoError),
    #[error(transparent)]
    Curvature(#[from] CurvatureError),
}

pub type Result<T> = std::result::Result<T, SolverError>;

/// Which backend solves the natural-gradient system, with its settings.
#[derive(Clone, Debug)]
pub enum SolverChoice {
    Exact,
    ConjugateGradient { iterations: usize },
    Woodbury,
    Thermodynamic(TlsConfig),
}

impl SolverChoice {
    pub fn label(&self) -> &'static str {
        match self {
            SolverChoice::Exact => "exact",
            SolverChoice::ConjugateGradient { .. } => "cg",
            SolverChoice::Woodbury => "woodbury",
            SolverChoice::Thermodynamic(_) => "thermodynamic",
        }
    }
}

/// Outcome of one linear solve.
#[derive(Clone, Debug)]
pub struct SolveReport {
    pub solution: DenseVector,
    /// `||A x - g||` of the returned solution.
    pub residual_norm: f64,
    /// Differentiation sweeps attributed to this backend.
    pub model_calls: u64,
    /// Measured digital wall time of the solve.
    pub wall_seconds_digital: f64,
    /// Analog relaxation time, in seconds, under the default device
    /// time constant. Zero for digital backends.
    pub analog_seconds_estimated: f64,
}

/// Dense solve: materializes `A = JᵀH_LJ + lambda I` and factors it.
///
/// `NotPositiveDefinite` signals that the caller should increase damping.
pub fn solve_exact(system: &DampedLowRankSystem) -> Result<SolveReport> {
    if system.dim() > EXPLICIT_LIMIT {
        return Err(SolverError::TooLarge(system.dim(), EXPLICIT_LIMIT));
    }
    let start = Instant::now();
    let a = system.explicit_matrix();
    let solution = numerics::cholesky_solve(&a, system.rhs())?;
    let wall = start.elapsed().as_secs_f64();
    Ok(SolveReport {
        residual_norm: system.residual_norm(&solution),
        model_calls: system.low_rank_dim() as u64,
        wall_seconds_digital: wall,
        analog_seconds_estimated: 0.0,
        solution,
    })
}

/// Raw conjugate-gradient outcome for a caller-supplied operator.
pub struct CgOutcome {
    pub solution: DenseVector,
    /// Iterations actually taken (short of the budget only on an exact
    /// zero residual).
    pub iterations: usize,
}

/// Runs exactly `iterations` CG iterations from `x0 = 0` against a
/// matrix-free operator. No early-exit tolerance: the budget is the stop
/// rule, matching fixed-budget truncated CG. An exact zero residual
/// terminates early (finite termination), and a non-positive curvature
/// inner product reports breakdown.
pub fn solve_cg_operator<F>(
    mut apply: F,
    rhs: &DenseVector,
    iterations: usize,
) -> Result<CgOutcome>
where
    F: FnMut(&DenseVector) -> Result<DenseVector>,
{
    let n = rhs.len();
    let mut x = DenseVector::zeros(n);
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rs = r.dot(&r).expect("same length");
    let mut taken = 0;
    for k in 0..iterations {
        if rs == 0.0 {
            break;
        }
        let ap = apply(&p)?;
        let curvature = p.dot(&ap).expect("same length");
        if curvature <= 0.0 {
            return Err(SolverError::BreakdownDetected {
                iteration: k,
                curvature,
            });
        }
        let alpha = rs / curvature;
        x = x.add_scaled(&p, alpha).expect("same length");
        r = r.add_scaled(&ap, -alpha).expect("same length");
        let rs_new = r.dot(&r).expect("same length");
        p = r.add_scaled(&p, rs_new / rs).expect("same length");
        rs = rs_new;
        taken = k + 1;
    }
    Ok(CgOutcome {
        solution: x,
        iterations: taken,
    })
}

/// Fixed-budget CG on the factored system (2 model calls per iteration).
pub fn solve_cg(system: &DampedLowRankSystem, iterations: usize) -> Result<SolveReport> {
    assert!(iterations >= 1, "CG budget must be at least 1");
    let start = Instant::now();
    let outcome = solve_cg_operator(|v| Ok(system.apply(v)), system.rhs(), iterations)?;
    let wall = start.elapsed().as_secs_f64();
    Ok(SolveReport {
        residual_norm: system.residual_norm(&outcome.solution),
        model_calls: 2 * iterations as u64,
        wall_seconds_digital: wall,
        analog_seconds_estimated: 0.0,
        solution: outcome.solution,
    })
}

/// CG iterates `x_1 .. x_c` for diagnostics (error-history inspection).
pub fn cg_trajectory(
    system: &DampedLowRankSystem,
    iterations: usize,
) -> Result<Vec<DenseVector>> {
    let mut iterates = Vec::with_capacity(iterations);
    let rhs = system.rhs();
    let n = rhs.len();
    let mut x = DenseVector::zeros(n);
    let mut r = rhs.clone();
    let mut p = r.clone();
    let mut rs = r.dot(&r).expect("same length");
    for k in 0..iterations {
        if rs == 0.0 {
            break;
        }
        let ap = system.apply(&p);
        let curvature = p.dot(&ap).expect("same length");
        if curvature <= 0.0 {
            return Err(SolverError::BreakdownDetected {
                iteration: k,
                curvature,
            });
        }
        let alpha = rs / curvature;
        x = x.add_scaled(&p, alpha).expect("same length");
        r = r.add_scaled(&ap, -alpha).expect("same length");
        let rs_new = r.dot(&r).expect("same length");
        p = r.add_scaled(&p, rs_new / rs).expect("same length");
        rs = rs_new;
        iterates.push(x.clone());
    }
    Ok(iterates)
}

/// Woodbury identity on the factors:
/// `x = g/lambda - U (I + VU/lambda)⁻¹ (V g) / lambda²`
/// with `U = Jᵀ` and `V = H_L J`. The inner (b*d_z x b*d_z) system is solved
/// by Cholesky when it is symmetric within tolerance, falling back to
/// pivoted LU since `I + VU/lambda` is nonsymmetric in general.
pub fn solve_woodbury(system: &DampedLowRankSystem) -> Result<SolveReport> {
    let m = system.low_rank_dim();
    if m > EXPLICIT_LIMIT {
        return Err(SolverError::TooLarge(m, EXPLICIT_LIMIT));
    }
    let lambda = system.damping();
    if lambda <= 0.0 {
        return Err(SolverError::ZeroDamping(lambda));
    }
    let start = Instant::now();
    let j = system.jacobian();
    let h = system.loss_hessian();
    let g = system.rhs();

    // V = H_L J (m x N); VU = V Jᵀ (m x m).
    let v = h.matmul(j).expect("shapes fixed");
    let vu = v.matmul(&j.transpose()).expect("shapes fixed");
    let inner = DenseMatrix::identity(m)
        .add_scaled(&vu, 1.0 / lambda)
        .expect("same shape");
    let vg = v.matvec(g).expect("shapes fixed");
    let inner_sym = inner.max_asymmetry() <= numerics::SYMMETRY_TOL * inner.max_abs().max(1.0);
    let y = if inner_sym {
        match numerics::cholesky_solve(&inner, &vg) {
            Ok(y) => y,
            Err(_) => numerics::lu_solve(&inner, &vg).map_err(SolverError::SingularInner)?,
        }
    } else {
        numerics::lu_solve(&inner, &vg).map_err(SolverError::SingularInner)?
    };
    // x = g/lambda - Jᵀ y / lambda².
    let uy = j.matvec_transpose(&y).expect("shapes fixed");
    let solution = g
        .scaled(1.0 / lambda)
        .add_scaled(&uy, -1.0 / (lambda * lambda))
        .expect("same length");
    let wall = start.elapsed().as_secs_f64();
    Ok(SolveReport {
        residual_norm: system.residual_norm(&solution),
        model_calls: m as u64,
        wall_seconds_digital: wall,
        analog_seconds_estimated: 0.0,
        solution,
    })
}

/// Thermodynamic solve: relaxes the device under the system's OU dynamics
/// and reads out the trailing-window average.
///
/// The caller owns the device state; the configured warm-start policy
/// decides whether its current estimate is kept (`x0 = previous estimate`,
/// the Algorithm-style warm start) or reset. Returns the device for the
/// next iteration.
pub fn solve_thermo(
    system: &DampedLowRankSystem,
    config: &TlsConfig,
    device: OuState,
) -> Result<(SolveReport, OuState)> {
    let start = Instant::now();
    let (solution, device) = thermo::evolve(device, system, config)?;
    let wall = start.elapsed().as_secs_f64();
    let steps = config.steps_for(config.analog_time);
    let analog_tau = steps as f64 * config.step_size;
    Ok((
        SolveReport {
            residual_norm: system.residual_norm(&solution),
            model_calls: system.low_rank_dim() as u64,
            wall_seconds_digital: wall,
            analog_seconds_estimated: analog_tau * HardwareAssumptions::default().rc_seconds,
            solution,
        },
        device,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::RngStream;
    use crate::thermo::WarmStartPolicy;

    fn rank_one_example() -> DampedLowRankSystem {
        // J = [1, 1], H = [2], lambda = 1, g = (1, 0):
        // A = [[3, 2], [2, 3]], solution (0.6, -0.4).
        DampedLowRankSystem::new(
            DenseMatrix::from_rows(&[vec![1.0, 1.0]]).unwrap(),
            DenseMatrix::from_rows(&[vec![2.0]]).unwrap(),
            1.0,
            DenseVector::from_slice(&[1.0, 0.0]),
        )
        .unwrap()
    }

    fn random_system(m: usize, n: usize, damping: f64, seed: u64) -> DampedLowRankSystem {
        let mut rng = RngStream::from_seed(seed);
        let j = DenseMatrix::from_fn(m, n, |_, _| rng.standard_normal() / (n as f64).sqrt());
        let mut h = DenseMatrix::zeros(m, m);
        for i in 0..m {
            h.set(i, i, 0.5 + rng.uniform());
        }
        let g = rng.gaussian_vector(n, 0.0, 1.0);
        DampedLowRankSystem::new(j, h, damping, g).unwrap()
    }

    #[test]
    fn exact_pure_damping_returns_rhs() {
        let sys = DampedLowRankSystem::new(
            DenseMatrix::zeros(1, 3),
            DenseMatrix::zeros(1, 1),
            1.0,
            DenseVector::from_slice(&[2.0, -1.0, 0.5]),
        )
        .unwrap();
        let report = solve_exact(&sys).unwrap();
        assert_eq!(report.solution.as_slice(), &[2.0, -1.0, 0.5]);
        assert_eq!(report.model_calls, 1);
    }

    #[test]
    fn exact_rank_one_oracle() {
        let report = solve_exact(&rank_one_example()).unwrap();
        assert!((report.solution[0] - 0.6).abs() < 1e-12);
        assert!((report.solution[1] + 0.4).abs() < 1e-12);
        assert!(report.residual_norm <= 1e-8);
    }

    #[test]
    fn exact_identity_ggn_no_damping() {
        // J = I (m = n), H = I, lambda = 0: A = I.
        let n = 4;
        let g = DenseVector::from_slice(&[0.1, -2.0, 3.5, 0.0]);
        let sys = DampedLowRankSystem::new(
            DenseMatrix::identity(n),
            DenseMatrix::identity(n),
            0.0,
            g.clone(),
        )
        .unwrap();
        let report = solve_exact(&sys).unwrap();
        let gap = report.solution.add_scaled(&g, -1.0).unwrap().max_abs();
        assert!(gap < 1e-14);
    }

    #[test]
    fn cg_finite_termination_on_diagonal() {
        // Diagonal A via J = diag, H = I: c = N iterations are exact.
        let n = 5;
        let mut j = DenseMatrix::zeros(n, n);
        for i in 0..n {
            j.set(i, i, (i + 1) as f64);
        }
        let sys = DampedLowRankSystem::new(
            j,
            DenseMatrix::identity(n),
            0.0,
            DenseVector::from_slice(&[1.0, -1.0, 2.0, 0.5, -0.25]),
        )
        .unwrap();
        let exact = solve_exact(&sys).unwrap();
        let cg = solve_cg(&sys, n).unwrap();
        let gap = cg.solution.add_scaled(&exact.solution, -1.0).unwrap().norm();
        assert!(gap < 1e-10, "gap {gap}");
        assert_eq!(cg.model_calls, 2 * n as u64);
    }

    #[test]
    fn cg_single_step_on_identity() {
        let n = 3;
        let g = DenseVector::from_slice(&[0.4, 0.0, -1.0]);
        let sys = DampedLowRankSystem::new(
            DenseMatrix::identity(n),
            DenseMatrix::identity(n),
            0.0,
            g.clone(),
        )
        .unwrap();
        let cg = solve_cg(&sys, 1).unwrap();
        let gap = cg.solution.add_scaled(&g, -1.0).unwrap().max_abs();
        assert!(gap < 1e-14);
        assert_eq!(cg.model_calls, 2);
    }

    #[test]
    fn cg_budget_matches_exact_when_well_conditioned() {
        let sys = random_system(24, 40, 0.5, 31);
        let exact = solve_exact(&sys).unwrap();
        let cg = solve_cg(&sys, 200).unwrap();
        let rel = cg
            .solution
            .add_scaled(&exact.solution, -1.0)
            .unwrap()
            .norm()
            / exact.solution.norm();
        assert!(rel < 1e-6, "relative gap {rel}");
    }

    #[test]
    fn woodbury_damping_only() {
        let sys = DampedLowRankSystem::new(
            DenseMatrix::zeros(2, 4),
            DenseMatrix::zeros(2, 2),
            2.0,
            DenseVector::from_slice(&[2.0, 4.0, -6.0, 0.0]),
        )
        .unwrap();
        let report = solve_woodbury(&sys).unwrap();
        assert_eq!(report.solution.as_slice(), &[1.0, 2.0, -3.0, 0.0]);
    }

    #[test]
    fn woodbury_rank_one_oracle() {
        let report = solve_woodbury(&rank_one_example()).unwrap();
        assert!((report.solution[0] - 0.6).abs() < 1e-12);
        assert!((report.solution[1] + 0.4).abs() < 1e-12);
    }

    #[test]
    fn woodbury_matches_exact_on_random_low_rank() {
        let sys = random_system(8, 100, 0.3, 77);
        let exact = solve_exact(&sys).unwrap();
        let wb = solve_woodbury(&sys).unwrap();
        let rel = wb
            .solution
            .add_scaled(&exact.solution, -1.0)
            .unwrap()
            .norm()
            / exact.solution.norm();
        assert!(rel < 1e-8, "relative gap {rel}");
        assert_eq!(wb.model_calls, 8);
    }

    #[test]
    fn woodbury_requires_damping() {
        let sys = DampedLowRankSystem::new(
            DenseMatrix::identity(3),
            DenseMatrix::identity(3),
            0.0,
            DenseVector::zeros(3),
        )
        .unwrap();
        assert!(matches!(
            solve_woodbury(&sys),
            Err(SolverError::ZeroDamping(_))
        ));
    }

    #[test]
    fn thermo_time_zero_reset_to_rhs_is_sgd_endpoint() {
        let sys = random_system(6, 10, 0.5, 41);
        let config = TlsConfig {
            analog_time: 0.0,
            warm_start: WarmStartPolicy::ResetToRhs,
            ..TlsConfig::default()
        };
        let device = OuState::zeros(10, RngStream::from_seed(1));
        let (report, _) = solve_thermo(&sys, &config, device).unwrap();
        assert_eq!(report.solution.as_slice(), sys.rhs().as_slice());
        assert_eq!(report.analog_seconds_estimated, 0.0);
    }

    #[test]
    fn thermo_long_time_matches_exact() {
        let sys = random_system(10, 10, 1.0, 42);
        let config = TlsConfig {
            noise_variance: 0.0,
            step_size: 0.01,
            analog_time: 50.0,
            averaging_window_fraction: 0.1,
            warm_start: WarmStartPolicy::ResetToZero,
        };
        let device = OuState::zeros(10, RngStream::from_seed(2));
        let (report, _) = solve_thermo(&sys, &config, device).unwrap();
        let exact = solve_exact(&sys).unwrap();
        let rel = report
            .solution
            .add_scaled(&exact.solution, -1.0)
            .unwrap()
            .norm()
            / exact.solution.norm();
        assert!(rel < 1e-3, "relative gap {rel}");
        assert_eq!(report.model_calls, 10);
        assert!((report.analog_seconds_estimated - 50.0 * 1e-6).abs() < 1e-12);
    }

    #[test]
    fn thermo_cosine_similarity_nondecreasing_in_time() {
        let sys = random_system(12, 16, 0.2, 43);
        let exact = solve_exact(&sys).unwrap().solution;
        let cosine = |a: &DenseVector, b: &DenseVector| {
            a.dot(b).unwrap() / (a.norm() * b.norm())
        };
        let mut medians = Vec::new();
        for &t in &[1.0, 5.0, 10.0, 50.0] {
            let mut sims: Vec<f64> = (0..10)
                .map(|seed| {
                    let config = TlsConfig {
                        noise_variance: 1e-4,
                        step_size: 0.05,
                        analog_time: t,
                        averaging_window_fraction: 0.1,
                        warm_start: WarmStartPolicy::ResetToRhs,
                    };
                    let device = OuState::zeros(16, RngStream::from_seed(seed));
                    let (report, _) = solve_thermo(&sys, &config, device).unwrap();
                    cosine(&report.solution, &exact)
                })
                .collect();
            sims.sort_by(|a, b| a.partial_cmp(b).unwrap());
            medians.push(sims[sims.len() / 2]);
        }
        for w in medians.windows(2) {
            assert!(
                w[1] >= w[0] - 1e-9,
                "cosine similarity decreased across analog times: {medians:?}"
            );
        }
    }

    #[test]
    fn backends_agree_pairwise() {
        for seed in [1u64, 2, 3] {
            let sys = random_system(16, 60, 0.4, 1000 + seed);
            let exact = solve_exact(&sys).unwrap().solution;
            let wb = solve_woodbury(&sys).unwrap().solution;
            let cg = solve_cg(&sys, 60).unwrap().solution;
            let rel = |a: &DenseVector| {
                a.add_scaled(&exact, -1.0).unwrap().norm() / exact.norm()
            };
            assert!(rel(&wb) < 1e-6, "woodbury gap {}", rel(&wb));
            assert!(rel(&cg) < 1e-6, "cg gap {}", rel(&cg));
        }
    }
}

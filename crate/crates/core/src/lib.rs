//! Second-order optimization with a simulated thermodynamic linear solver.
//!
//! The library trains small dense networks with natural gradient descent
//! where the damped curvature system `(JᵀH_LJ + lambda I) x = grad` is solved
//! either exactly, by conjugate gradient, by the Woodbury identity, or by
//! integrating an Ornstein–Uhlenbeck process whose equilibrium mean is the
//! solution — a simulation of an analog stochastic processing unit. A
//! circuit-level emulator, an analytical hardware cost model and a benchmark
//! CLI round out the toolkit.

pub mod bench;
pub mod circuit;
pub mod costs;
pub mod curvature;
pub mod numerics;
pub mod optim;
pub mod solvers;
pub mod thermo;

pub use curvature::{Activation, Batch, CallCounter, Dataset, LossHead, ModelSpec, ParamVector, Targets};
pub use numerics::{DenseMatrix, DenseVector, RngStream};
pub use solvers::{SolveReport, SolverChoice};
pub use thermo::{DampedLowRankSystem, OuState, TlsConfig, WarmStartPolicy};

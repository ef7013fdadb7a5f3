//! Circuit-level emulator of the stochastic processing unit.
//!
//! A single resistor array integrates `C dV/dt = -G V + R⁻¹ V_in + I_n` by
//! Kirchhoff's current law, with conductances `G_ij = 1/R_ji`. Composing
//! three arrays — one each for `J`, `H_L` and `Jᵀ`, the latter two without
//! capacitors so they act as instantaneous linear maps — realizes the damped
//! curvature drift `-(JᵀH_LJ + lambda I)V + g`. Matrix entries and the input
//! voltages pass through uniform quantizers on the way in (programmable
//! resistors, DAC) and the readout passes through one on the way out (ADC).
//!
//! Signed entries are mapped to conductances mathematically; the analog
//! trick for realizing negative values is abstracted away. Amplifier
//! dynamics beyond the ideal integrator are not modeled.

use crate::numerics::{DenseMatrix, DenseVector, RngStream};
use crate::thermo::{self, DampedLowRankSystem, ThermoError};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CircuitError {
    #[error("value {value} at {location} exceeds the programmable range +-{full_scale}; rescale the system")]
    Overflow {
        location: String,
        value: f64,
        full_scale: f64,
    },
    #[error("voltages became non-finite at step {step}")]
    NonFinite { step: usize },
    #[error("invalid circuit config: {0}")]
    InvalidConfig(String),
    #[error("invalid resistor array: {0}")]
    InvalidArray(String),
    #[error(transparent)]
    Thermo(#[from] ThermoError),
}

pub type Result<T> = std::result::Result<T, CircuitError>;

// ---------------------------------------------------------------------------
// Single resistor array
// ---------------------------------------------------------------------------

/// One programmable resistor array with input resistors and integration
/// capacitors on each output line.
#[derive(Clone, Debug)]
pub struct ResistorArray {
    /// `R_ij`, strictly positive, indexed (row = input line i, col = output
    /// line j): the conductance matrix entry `G_ij` is `1/R_ji`.
    pub resistances: DenseMatrix,
    /// Per-line input resistors `R_i`.
    pub input_resistances: Vec<f64>,
    /// Per-line capacitances `C_i`.
    pub capacitances: Vec<f64>,
}

impl ResistorArray {
    pub fn new(
        resistances: DenseMatrix,
        input_resistances: Vec<f64>,
        capacitances: Vec<f64>,
    ) -> Result<Self> {
        let n = resistances.rows();
        if resistances.cols() != n {
            return Err(CircuitError::InvalidArray(format!(
                "expected a square array, got {}x{}",
                resistances.rows(),
                resistances.cols()
            )));
        }
        if input_resistances.len() != n || capacitances.len() != n {
            return Err(CircuitError::InvalidArray(
                "input resistor and capacitor counts must match the array size".into(),
            ));
        }
        let all_positive = resistances.as_slice().iter().all(|&r| r > 0.0 && r.is_finite())
            && input_resistances.iter().all(|&r| r > 0.0 && r.is_finite())
            && capacitances.iter().all(|&c| c > 0.0 && c.is_finite());
        if !all_positive {
            return Err(CircuitError::InvalidArray(
                "resistances and capacitances must be strictly positive and finite".into(),
            ));
        }
        Ok(Self {
            resistances,
            input_resistances,
            capacitances,
        })
    }

    /// Conductance matrix `G` with `G_ij = 1/R_ji`.
    pub fn conductance_matrix(&self) -> DenseMatrix {
        let n = self.resistances.rows();
        DenseMatrix::from_fn(n, n, |i, j| 1.0 / self.resistances.get(j, i))
    }
}

/// One Euler–Maruyama step of the single-array Kirchhoff dynamics
/// `C dV = (-G V + R⁻¹ V_in) dt + dW`, with current-noise variance
/// `2*kappa0`.
pub fn conductance_dynamics_step(
    v: &DenseVector,
    array: &ResistorArray,
    v_in: &DenseVector,
    dt: f64,
    kappa0: f64,
    rng: &mut RngStream,
) -> Result<DenseVector> {
    let n = array.resistances.rows();
    if v.len() != n || v_in.len() != n {
        return Err(CircuitError::InvalidArray(format!(
            "voltage vectors of lengths {} and {} for an array of size {n}",
            v.len(),
            v_in.len()
        )));
    }
    let g = array.conductance_matrix();
    let gv = g.matvec(v).expect("square");
    let noise = if kappa0 > 0.0 {
        Some(rng.gaussian_vector(n, 0.0, 2.0 * kappa0 * dt))
    } else {
        None
    };
    let mut out = DenseVector::zeros(n);
    for i in 0..n {
        let drive = v_in[i] / array.input_resistances[i];
        let mut dv = dt * (-gv[i] + drive);
        if let Some(z) = &noise {
            dv += z[i];
        }
        out[i] = v[i] + dv / array.capacitances[i];
    }
    if !out.all_finite() {
        return Err(CircuitError::NonFinite { step: 0 });
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Quantization
// ---------------------------------------------------------------------------

/// Uniform symmetric quantizer over `[-full_scale, full_scale]` with `bits`
/// of precision: step `2*FS/2^bits`, round to nearest, zero maps to zero,
/// worst-case in-range error `FS/2^bits`. Values beyond the range saturate
/// at the rails.
pub fn quantize(value: f64, bits: u32, full_scale: f64) -> f64 {
    let step = 2.0 * full_scale / (1u64 << bits) as f64;
    ((value / step).round() * step).clamp(-full_scale, full_scale)
}

fn quantize_matrix(m: &DenseMatrix, bits: u32, full_scale: f64) -> DenseMatrix {
    DenseMatrix::from_fn(m.rows(), m.cols(), |i, j| {
        quantize(m.get(i, j), bits, full_scale)
    })
}

fn quantize_vector(v: &DenseVector, bits: u32, full_scale: f64) -> DenseVector {
    DenseVector::from_vec(
        v.as_slice()
            .iter()
            .map(|&x| quantize(x, bits, full_scale))
            .collect(),
    )
}

// ---------------------------------------------------------------------------
// Device programming
// ---------------------------------------------------------------------------

/// Emulated hardware parameters.
#[derive(Clone, Copy, Debug)]
pub struct CircuitConfig {
    pub dac_bits: u32,
    pub adc_bits: u32,
    pub resistor_bits: u32,
    pub transfer_rate_bits_per_sec: f64,
    /// Device time constant tau, seconds.
    pub rc_seconds: f64,
    /// Current-noise variance kappa0.
    pub noise_variance: f64,
    /// Programmable/convertible range is `[-FS, FS]`.
    pub voltage_full_scale: f64,
    /// Integration step, in units of tau.
    pub step_size: f64,
    /// Trailing fraction of the trajectory averaged at readout.
    pub averaging_window_fraction: f64,
}

impl Default for CircuitConfig {
    fn default() -> Self {
        Self {
            dac_bits: 16,
            adc_bits: 16,
            resistor_bits: 16,
            transfer_rate_bits_per_sec: 50e9,
            rc_seconds: 1e-6,
            noise_variance: 0.0,
            voltage_full_scale: 2.0,
            step_size: 0.1,
            averaging_window_fraction: 0.1,
        }
    }
}

impl CircuitConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dac_bits == 0 || self.adc_bits == 0 || self.resistor_bits == 0 {
            return Err(CircuitError::InvalidConfig("bit depths must be >= 1".into()));
        }
        if !(self.rc_seconds > 0.0) {
            return Err(CircuitError::InvalidConfig(format!(
                "RC must be positive, got {}",
                self.rc_seconds
            )));
        }
        if !(self.voltage_full_scale > 0.0) {
            return Err(CircuitError::InvalidConfig(format!(
                "full scale must be positive, got {}",
                self.voltage_full_scale
            )));
        }
        if !(self.step_size > 0.0) {
            return Err(CircuitError::InvalidConfig(format!(
                "step size must be positive, got {}",
                self.step_size
            )));
        }
        if !(self.averaging_window_fraction > 0.0 && self.averaging_window_fraction <= 1.0) {
            return Err(CircuitError::InvalidConfig(format!(
                "averaging window fraction must lie in (0, 1], got {}",
                self.averaging_window_fraction
            )));
        }
        Ok(())
    }
}

/// The affine scaling applied to each value group before programming. The
/// groups divide by their scale on the way in; the readout multiplies by
/// `rhs/(jacobian² * hessian)` to recover solution units.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ProgramScaling {
    pub jacobian: f64,
    pub hessian: f64,
    pub rhs: f64,
}

impl ProgramScaling {
    pub fn identity() -> Self {
        Self {
            jacobian: 1.0,
            hessian: 1.0,
            rhs: 1.0,
        }
    }

    /// Factor that maps the programmed system's solution back to the
    /// original system's units.
    pub fn descale_factor(&self) -> f64 {
        self.rhs / (self.jacobian * self.jacobian * self.hessian)
    }
}

/// Quantized resistor settings and input voltages for one solve.
#[derive(Clone, Debug)]
pub struct SpuProgram {
    jacobian: DenseMatrix,
    jacobian_t: DenseMatrix,
    hessian: DenseMatrix,
    damping: f64,
    v_in: DenseVector,
    scaling: ProgramScaling,
}

impl SpuProgram {
    pub fn scaling(&self) -> ProgramScaling {
        self.scaling
    }

    pub fn damping(&self) -> f64 {
        self.damping
    }

    pub fn v_in(&self) -> &DenseVector {
        &self.v_in
    }

    pub fn dim(&self) -> usize {
        self.jacobian.cols()
    }

    /// Total programmable resistors across the three arrays:
    /// `b*d_z*(b*d_z + 2N)`.
    pub fn resistor_count(&self) -> usize {
        let m = self.jacobian.rows();
        let n = self.jacobian.cols();
        m * (m + 2 * n)
    }

    /// The quantized, scaled system the device actually relaxes under.
    pub fn quantized_system(&self) -> Result<DampedLowRankSystem> {
        Ok(DampedLowRankSystem::new(
            self.jacobian.clone(),
            self.hessian.clone(),
            self.damping,
            self.v_in.clone(),
        )?)
    }
}

/// Programs the device: quantizes `J`, `Jᵀ`, `H_L` and the damping to
/// resistor precision and the gradient to DAC precision, all over
/// `[-FS, FS]`.
///
/// The value-to-voltage mapping is the identity; any entry outside the
/// programmable range is an [`CircuitError::Overflow`], signalling that the
/// caller must rescale (see [`program_spu_scaled`]).
pub fn program_spu(system: &DampedLowRankSystem, config: &CircuitConfig) -> Result<SpuProgram> {
    program_spu_scaled(system, config, ProgramScaling::identity())
}

/// Programs the device after dividing each value group by the given scale.
/// The scaling is recorded in the program and undone at readout: with
/// `J' = J/s_j`, `H' = H/s_h`, `lambda' = lambda/(s_j² s_h)` and
/// `g' = g/s_g`, the programmed solution is the original one times
/// `s_j² s_h / s_g`.
pub fn program_spu_scaled(
    system: &DampedLowRankSystem,
    config: &CircuitConfig,
    scaling: ProgramScaling,
) -> Result<SpuProgram> {
    config.validate()?;
    if !(scaling.jacobian > 0.0 && scaling.hessian > 0.0 && scaling.rhs > 0.0) {
        return Err(CircuitError::InvalidConfig(
            "scaling factors must be positive".into(),
        ));
    }
    let fs = config.voltage_full_scale;
    let check = |name: &str, magnitude: f64| -> Result<()> {
        if !magnitude.is_finite() || magnitude > fs {
            return Err(CircuitError::Overflow {
                location: name.to_string(),
                value: magnitude,
                full_scale: fs,
            });
        }
        Ok(())
    };

    let j_scaled = DenseMatrix::from_fn(system.jacobian().rows(), system.jacobian().cols(), |i, k| {
        system.jacobian().get(i, k) / scaling.jacobian
    });
    let h_scaled = DenseMatrix::from_fn(
        system.loss_hessian().rows(),
        system.loss_hessian().cols(),
        |i, k| system.loss_hessian().get(i, k) / scaling.hessian,
    );
    let damping_scaled = system.damping() / (scaling.jacobian * scaling.jacobian * scaling.hessian);
    let g_scaled = system.rhs().scaled(1.0 / scaling.rhs);
    if !j_scaled.all_finite() || !h_scaled.all_finite() || !g_scaled.all_finite() {
        return Err(CircuitError::Overflow {
            location: "non-finite input".into(),
            value: f64::NAN,
            full_scale: fs,
        });
    }
    check("jacobian", j_scaled.max_abs())?;
    check("loss-hessian", h_scaled.max_abs())?;
    check("damping", damping_scaled.abs())?;
    check("rhs", g_scaled.max_abs())?;

    let j_q = quantize_matrix(&j_scaled, config.resistor_bits, fs);
    let h_q = quantize_matrix(&h_scaled, config.resistor_bits, fs).symmetrized();
    let damping_q = quantize(damping_scaled, config.resistor_bits, fs);
    let v_in_q = quantize_vector(&g_scaled, config.dac_bits, fs);
    Ok(SpuProgram {
        jacobian_t: j_q.transpose(),
        jacobian: j_q,
        hessian: h_q,
        damping: damping_q,
        v_in: v_in_q,
        scaling,
    })
}

/// Integrates the composed three-array dynamics from `V = 0` and returns the
/// pre-ADC trailing-window mean together with the number of steps taken.
///
/// The two capacitor-free arrays act as instantaneous maps, so each step is
/// `V' = V + dt*(g_q - Jᵀ_q(H_q(J_q V)) - lambda_q V) + noise`, identical in
/// law to the factored OU dynamics on the quantized system.
pub fn run_spu_analog(
    program: &SpuProgram,
    config: &CircuitConfig,
    t: f64,
    rng: &mut RngStream,
) -> Result<(DenseVector, usize)> {
    config.validate()?;
    let n = program.dim();
    let steps = thermo::steps_for(t, config.step_size);
    let mut v = DenseVector::zeros(n);
    if steps == 0 {
        return Ok((v, 0));
    }
    let dt = config.step_size;
    let kappa0 = config.noise_variance;
    let window =
        ((config.averaging_window_fraction * steps as f64).ceil() as usize).clamp(1, steps);
    let mut sum = DenseVector::zeros(n);
    for step in 0..steps {
        // Array 3 (no capacitor): J_q V. Array 2 (no capacitor): H_q (.).
        let jv = program.jacobian.matvec(&v).expect("shapes fixed");
        let hjv = program.hessian.matvec(&jv).expect("shapes fixed");
        // Array 1 (capacitors): integrates -JᵀH J V - lambda V + g + noise.
        let jthjv = program.jacobian_t.matvec(&hjv).expect("shapes fixed");
        let noise = if kappa0 > 0.0 {
            Some(rng.gaussian_vector(n, 0.0, 2.0 * kappa0 * dt))
        } else {
            None
        };
        for i in 0..n {
            let mut dv = dt * (program.v_in[i] - jthjv[i] - program.damping * v[i]);
            if let Some(z) = &noise {
                dv += z[i];
            }
            v[i] += dv;
        }
        if !v.all_finite() {
            return Err(CircuitError::NonFinite { step });
        }
        if step + window >= steps {
            for (s, x) in sum.as_mut_slice().iter_mut().zip(v.as_slice()) {
                *s += x;
            }
        }
    }
    Ok((sum.scaled(1.0 / window as f64), steps))
}

/// Full device run: analog relaxation, ADC readout of the trailing-window
/// mean, de-scaling back to solution units. Returns the solution estimate
/// and the elapsed analog seconds `ceil(t/dt)*dt*RC`.
pub fn run_spu(
    program: &SpuProgram,
    config: &CircuitConfig,
    t: f64,
    rng: &mut RngStream,
) -> Result<(DenseVector, f64)> {
    let (mean, steps) = run_spu_analog(program, config, t, rng)?;
    let fs = config.voltage_full_scale;
    let descale = program.scaling.descale_factor();
    let readout = DenseVector::from_vec(
        mean.as_slice()
            .iter()
            .map(|&x| quantize(x, config.adc_bits, fs) * descale)
            .collect(),
    );
    let elapsed = steps as f64 * config.step_size * config.rc_seconds;
    Ok((readout, elapsed))
}

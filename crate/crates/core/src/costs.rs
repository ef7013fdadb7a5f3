//! Analytical per-iteration runtime and memory model.
//!
//! Estimates follow the per-backend asymptotic costs — first-order O(bN),
//! exact NGD O(N³ + b·d_z·N²), NGD-CG O(c·b·N), Woodbury O(b²d_z²N + b³d_z³),
//! thermodynamic NGD O(b·d_z·N) digital work plus transfer and analog terms —
//! with throughput coefficients calibrated on the host rather than copied
//! from any particular machine. Absolute numbers are indicative; the scaling
//! shapes and orderings are what the estimates are for.

use serde::Serialize;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CostsError {
    #[error("need at least {needed} samples for kernel {kernel}, got {got}")]
    InsufficientData {
        kernel: &'static str,
        needed: usize,
        got: usize,
    },
    #[error("invalid measurement: {0}")]
    InvalidMeasurement(String),
}

pub type Result<T> = std::result::Result<T, CostsError>;

/// Backend whose per-iteration cost is being estimated.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum OptimizerKind {
    /// SGD or Adam: gradient plus O(N) elementwise work.
    FirstOrder,
    /// Explicit curvature build plus dense factorization.
    ExactNgd,
    /// Matrix-free conjugate gradient with a fixed iteration budget.
    NgdCg,
    /// Woodbury identity on the low-rank factors.
    NgdWoodbury,
    /// Digital factor build, transfer to the device, analog relaxation.
    ThermodynamicNgd,
}

impl OptimizerKind {
    pub fn label(self) -> &'static str {
        match self {
            OptimizerKind::FirstOrder => "first-order",
            OptimizerKind::ExactNgd => "ngd",
            OptimizerKind::NgdCg => "ngd-cg",
            OptimizerKind::NgdWoodbury => "ngd-woodbury",
            OptimizerKind::ThermodynamicNgd => "tngd",
        }
    }
}

/// Device and digital-throughput assumptions behind the estimates.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct HardwareAssumptions {
    /// Precision of transferred values, in bits.
    pub bits_per_value: u32,
    /// Digital link speed, bits per second.
    pub transfer_rate_bits_per_sec: f64,
    /// Device time constant tau, in seconds.
    pub rc_seconds: f64,
    /// Seconds per flop for streaming kernels (gradients, factor builds,
    /// curvature products).
    pub stream_seconds_per_flop: f64,
    /// Seconds per flop for dense factorizations.
    pub factor_seconds_per_flop: f64,
}

impl Default for HardwareAssumptions {
    fn default() -> Self {
        Self {
            bits_per_value: 16,
            transfer_rate_bits_per_sec: 50e9,
            rc_seconds: 1e-6,
            stream_seconds_per_flop: 1e-9,
            factor_seconds_per_flop: 1e-9,
        }
    }
}

/// Per-iteration runtime decomposition and memory footprint.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct TimingEstimate {
    /// Digital work: gradients, factor builds, factorizations.
    pub build_seconds: f64,
    /// Upload of factor and gradient values plus readout.
    pub transfer_seconds: f64,
    /// Analog relaxation time.
    pub analog_seconds: f64,
    pub total_seconds: f64,
    pub memory_bytes: u64,
}

impl TimingEstimate {
    fn new(build: f64, transfer: f64, analog: f64, memory_values: f64) -> Self {
        Self {
            build_seconds: build,
            transfer_seconds: transfer,
            analog_seconds: analog,
            total_seconds: build + transfer + analog,
            memory_bytes: (8.0 * memory_values) as u64,
        }
    }
}

/// Seconds to move `values` quantities of `bits_per_value` bits over the link.
pub fn transfer_seconds(values: f64, hw: &HardwareAssumptions) -> f64 {
    values * hw.bits_per_value as f64 / hw.transfer_rate_bits_per_sec
}

/// Per-iteration estimate for one optimizer backend.
///
/// `c` is the CG iteration budget (ignored elsewhere) and `t` the analog
/// time in units of tau (thermodynamic backend only).
pub fn estimate_iteration(
    kind: OptimizerKind,
    n: usize,
    b: usize,
    d_z: usize,
    c: usize,
    t: f64,
    hw: &HardwareAssumptions,
) -> TimingEstimate {
    let nf = n as f64;
    let bf = b as f64;
    let dz = d_z as f64;
    let m = bf * dz; // factor rank b*d_z
    match kind {
        OptimizerKind::FirstOrder => {
            let build = hw.stream_seconds_per_flop * (bf * nf);
            TimingEstimate::new(build, 0.0, 0.0, 3.0 * nf)
        }
        OptimizerKind::ExactNgd => {
            let build = hw.stream_seconds_per_flop * (m * nf * nf)
                + hw.factor_seconds_per_flop * (nf * nf * nf / 3.0);
            TimingEstimate::new(build, 0.0, 0.0, nf * nf)
        }
        OptimizerKind::NgdCg => {
            let build = hw.stream_seconds_per_flop * (2.0 * c as f64 * bf * nf);
            TimingEstimate::new(build, 0.0, 0.0, 4.0 * nf)
        }
        OptimizerKind::NgdWoodbury => {
            let build = hw.stream_seconds_per_flop * (m * m * nf)
                + hw.factor_seconds_per_flop * (m * m * m / 3.0);
            TimingEstimate::new(build, 0.0, 0.0, m * nf + m * m)
        }
        OptimizerKind::ThermodynamicNgd => {
            let build = hw.stream_seconds_per_flop * (m * nf);
            // Upload all m*(m + 2N) resistor values and the N gradient
            // values, read back N values; the 2x covers the round-trip
            // handshake convention.
            let values = m * (m + 2.0 * nf) + 2.0 * nf;
            let transfer = 2.0 * transfer_seconds(values, hw);
            let analog = t * hw.rc_seconds;
            TimingEstimate::new(build, transfer, analog, m * nf + m * m)
        }
    }
}

// ---------------------------------------------------------------------------
// Calibration
// ---------------------------------------------------------------------------

/// Which throughput coefficient a measurement calibrates.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KernelKind {
    /// Streaming kernels; `size` is the flop count.
    Stream,
    /// Dense factorizations; `size` is the flop count.
    Factor,
}

/// One measured (flop count, wall seconds) point.
#[derive(Clone, Copy, Debug)]
pub struct KernelSample {
    pub kernel: KernelKind,
    pub size: f64,
    pub seconds: f64,
}

/// Through-origin least-squares fit diagnostics for one kernel.
#[derive(Clone, Copy, Debug)]
pub struct FitDiagnostics {
    pub seconds_per_flop: f64,
    pub rms_residual: f64,
    pub samples: usize,
}

#[derive(Clone, Copy, Debug)]
pub struct CalibrationReport {
    pub stream: FitDiagnostics,
    pub factor: FitDiagnostics,
}

const MIN_SAMPLES: usize = 3;

fn fit_through_origin(points: &[(f64, f64)], kernel: &'static str) -> Result<FitDiagnostics> {
    if points.len() < MIN_SAMPLES {
        return Err(CostsError::InsufficientData {
            kernel,
            needed: MIN_SAMPLES,
            got: points.len(),
        });
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for &(s, t) in points {
        if !(s > 0.0) || !(t >= 0.0) {
            return Err(CostsError::InvalidMeasurement(format!(
                "kernel {kernel}: size {s}, seconds {t}"
            )));
        }
        num += s * t;
        den += s * s;
    }
    let coeff = num / den;
    let rms = (points
        .iter()
        .map(|&(s, t)| {
            let r = t - coeff * s;
            r * r
        })
        .sum::<f64>()
        / points.len() as f64)
        .sqrt();
    Ok(FitDiagnostics {
        seconds_per_flop: coeff,
        rms_residual: rms,
        samples: points.len(),
    })
}

/// Fits the throughput coefficients from measured kernel timings.
///
/// Requires at least three (size, seconds) pairs per kernel; returns the
/// updated assumptions together with fit residuals.
pub fn calibrate(
    samples: &[KernelSample],
    base: &HardwareAssumptions,
) -> Result<(HardwareAssumptions, CalibrationReport)> {
    let stream: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.kernel == KernelKind::Stream)
        .map(|s| (s.size, s.seconds))
        .collect();
    let factor: Vec<(f64, f64)> = samples
        .iter()
        .filter(|s| s.kernel == KernelKind::Factor)
        .map(|s| (s.size, s.seconds))
        .collect();
    let stream_fit = fit_through_origin(&stream, "stream")?;
    let factor_fit = fit_through_origin(&factor, "factor")?;
    let mut hw = *base;
    hw.stream_seconds_per_flop = stream_fit.seconds_per_flop;
    hw.factor_seconds_per_flop = factor_fit.seconds_per_flop;
    Ok((
        hw,
        CalibrationReport {
            stream: stream_fit,
            factor: factor_fit,
        },
    ))
}

/// Log-log power-law fit `seconds ~ coefficient * size^exponent`.
#[derive(Clone, Copy, Debug)]
pub struct PowerLawFit {
    pub exponent: f64,
    pub coefficient: f64,
    pub rms_log_residual: f64,
}

/// Least-squares regression of log(seconds) on log(size). Used to check
/// scaling exponents of measured or estimated runtimes.
pub fn fit_power_law(points: &[(f64, f64)]) -> Result<PowerLawFit> {
    if points.len() < MIN_SAMPLES {
        return Err(CostsError::InsufficientData {
            kernel: "power-law",
            needed: MIN_SAMPLES,
            got: points.len(),
        });
    }
    let logs: Vec<(f64, f64)> = points
        .iter()
        .map(|&(s, t)| {
            if !(s > 0.0) || !(t > 0.0) {
                return Err(CostsError::InvalidMeasurement(format!(
                    "power-law fit needs positive points, got ({s}, {t})"
                )));
            }
            Ok((s.ln(), t.ln()))
        })
        .collect::<Result<_>>()?;
    let n = logs.len() as f64;
    let mean_x = logs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = logs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    for &(x, y) in &logs {
        sxy += (x - mean_x) * (y - mean_y);
        sxx += (x - mean_x) * (x - mean_x);
    }
    let exponent = if sxx == 0.0 { 0.0 } else { sxy / sxx };
    let intercept = mean_y - exponent * mean_x;
    let rms = (logs
        .iter()
        .map(|&(x, y)| {
            let r = y - (intercept + exponent * x);
            r * r
        })
        .sum::<f64>()
        / n)
        .sqrt();
    Ok(PowerLawFit {
        exponent,
        coefficient: intercept.exp(),
        rms_log_residual: rms,
    })
}

/// Times the host's own streaming and factorization kernels to produce
/// calibration samples.
pub fn measure_host_kernels() -> Vec<KernelSample> {
    use crate::numerics::{cholesky_factor, DenseMatrix, DenseVector, RngStream};
    use std::time::Instant;

    let mut samples = Vec::new();
    let mut rng = RngStream::from_seed(0x6b65726e);
    for &n in &[64usize, 128, 256, 512] {
        let a = DenseMatrix::from_fn(n, n, |_, _| rng.standard_normal());
        let v = rng.gaussian_vector(n, 0.0, 1.0);
        let reps = (4_000_000 / (n * n)).max(4);
        let start = Instant::now();
        let mut sink = 0.0;
        for _ in 0..reps {
            sink += a.matvec(&v).unwrap()[0];
        }
        let secs = start.elapsed().as_secs_f64() / reps as f64;
        std::hint::black_box(sink);
        samples.push(KernelSample {
            kernel: KernelKind::Stream,
            size: 2.0 * (n * n) as f64,
            seconds: secs,
        });
    }
    for &n in &[48usize, 96, 192, 384] {
        let raw = DenseMatrix::from_fn(n, n, |_, _| rng.standard_normal());
        let gram = raw.matmul(&raw.transpose()).unwrap();
        let spd = gram.add_scaled(&DenseMatrix::identity(n), n as f64).unwrap();
        let start = Instant::now();
        let l = cholesky_factor(&spd).unwrap();
        let secs = start.elapsed().as_secs_f64();
        std::hint::black_box(l.get(n - 1, n - 1));
        samples.push(KernelSample {
            kernel: KernelKind::Factor,
            size: (n * n * n) as f64 / 3.0,
            seconds: secs,
        });
    }
    let _ = DenseVector::zeros(0);
    samples
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn transfer_example() {
        // 1e6 values at 16 bits over 50 Gb/s is 0.32 ms.
        let hw = HardwareAssumptions::default();
        let t = transfer_seconds(1e6, &hw);
        assert!((t - 0.32e-3).abs() < 1e-12, "{t}");
    }

    #[test]
    fn analog_term_is_t_times_rc() {
        let hw = HardwareAssumptions::default();
        let est = estimate_iteration(OptimizerKind::ThermodynamicNgd, 1000, 32, 20, 0, 50.0, &hw);
        assert!((est.analog_seconds - 50e-6).abs() < 1e-15);
    }

    #[test]
    fn tngd_build_linear_in_n() {
        let hw = HardwareAssumptions::default();
        let a = estimate_iteration(OptimizerKind::ThermodynamicNgd, 1000, 32, 20, 0, 50.0, &hw);
        let b = estimate_iteration(OptimizerKind::ThermodynamicNgd, 2000, 32, 20, 0, 50.0, &hw);
        assert!((b.build_seconds / a.build_seconds - 2.0).abs() < 1e-12);
    }

    #[test]
    fn totals_are_sums() {
        let hw = HardwareAssumptions::default();
        for kind in [
            OptimizerKind::FirstOrder,
            OptimizerKind::ExactNgd,
            OptimizerKind::NgdCg,
            OptimizerKind::NgdWoodbury,
            OptimizerKind::ThermodynamicNgd,
        ] {
            let e = estimate_iteration(kind, 500, 32, 10, 200, 50.0, &hw);
            let sum = e.build_seconds + e.transfer_seconds + e.analog_seconds;
            assert!((e.total_seconds - sum).abs() < 1e-18);
            assert!(e.build_seconds >= 0.0 && e.transfer_seconds >= 0.0 && e.analog_seconds >= 0.0);
        }
    }

    #[test]
    fn calibrate_exact_linear_data() {
        let samples: Vec<KernelSample> = (1..=4)
            .flat_map(|i| {
                let s = i as f64 * 1e6;
                [
                    KernelSample {
                        kernel: KernelKind::Stream,
                        size: s,
                        seconds: 2e-9 * s,
                    },
                    KernelSample {
                        kernel: KernelKind::Factor,
                        size: s,
                        seconds: 5e-9 * s,
                    },
                ]
            })
            .collect();
        let (hw, report) = calibrate(&samples, &HardwareAssumptions::default()).unwrap();
        assert!((hw.stream_seconds_per_flop - 2e-9).abs() < 1e-20);
        assert!((hw.factor_seconds_per_flop - 5e-9).abs() < 1e-20);
        assert!(report.stream.rms_residual < 1e-15);
        assert!(report.factor.rms_residual < 1e-15);
    }

    #[test]
    fn calibrate_insufficient_data() {
        let samples = vec![KernelSample {
            kernel: KernelKind::Stream,
            size: 1.0,
            seconds: 1.0,
        }];
        assert!(matches!(
            calibrate(&samples, &HardwareAssumptions::default()),
            Err(CostsError::InsufficientData { .. })
        ));
    }

    #[test]
    fn power_law_recovers_cubic_exponent() {
        let points: Vec<(f64, f64)> = [64.0, 128.0, 256.0, 512.0]
            .iter()
            .map(|&n: &f64| (n, 3e-10 * n.powi(3) * (1.0 + 0.02 * (n / 64.0).sin())))
            .collect();
        let fit = fit_power_law(&points).unwrap();
        assert!(
            (fit.exponent - 3.0).abs() < 0.2,
            "fitted exponent {}",
            fit.exponent
        );
    }

    #[test]
    fn power_law_constant_data_zero_slope() {
        let points = vec![(10.0, 0.5), (100.0, 0.5), (1000.0, 0.5)];
        let fit = fit_power_law(&points).unwrap();
        assert!(fit.exponent.abs() < 1e-12);
    }
}

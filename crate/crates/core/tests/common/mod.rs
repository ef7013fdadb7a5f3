//! Shared generators and statistics helpers for the integration suites.

use tngd::curvature::{Activation, Dataset, LossHead, ModelSpec, Targets};
use tngd::numerics::{symmetric_eigen, DenseMatrix, DenseVector, RngStream};
use tngd::thermo::DampedLowRankSystem;

/// Factored system with a prescribed spectrum: eigenvalues log-spaced in
/// `[1/cond, 1]`, random orthogonal eigenbasis, `H_L = I`, no damping
/// (the factor is square and full rank). Also returns the exact solution
/// computed in the eigenbasis.
pub fn spectrum_system(n: usize, cond: f64, seed: u64) -> (DampedLowRankSystem, DenseVector) {
    let mut rng = RngStream::from_seed(seed);
    let raw = DenseMatrix::from_fn(n, n, |_, _| rng.standard_normal());
    let sym = raw.add_scaled(&raw.transpose(), 1.0).unwrap();
    let (_, q) = symmetric_eigen(&sym).unwrap();
    let lams: Vec<f64> = (0..n)
        .map(|k| {
            if n == 1 {
                1.0
            } else {
                cond.powf(-1.0 + k as f64 / (n - 1) as f64)
            }
        })
        .collect();
    // J = diag(sqrt(lam)) Qᵀ gives JᵀJ = Q diag(lam) Qᵀ.
    let j = DenseMatrix::from_fn(n, n, |i, k| lams[i].sqrt() * q.get(k, i));
    let g = rng.gaussian_vector(n, 0.0, 1.0);
    let mut x_star = DenseVector::zeros(n);
    for k in 0..n {
        let mut coeff = 0.0;
        for i in 0..n {
            coeff += q.get(i, k) * g[i];
        }
        coeff /= lams[k];
        for i in 0..n {
            x_star[i] += coeff * q.get(i, k);
        }
    }
    let sys = DampedLowRankSystem::new(j, DenseMatrix::identity(n), 0.0, g).unwrap();
    (sys, x_star)
}

/// Low-rank damped system with diagonal positive `H_L`, as produced by a
/// small-batch curvature build.
pub fn low_rank_system(m: usize, n: usize, damping: f64, seed: u64) -> DampedLowRankSystem {
    let mut rng = RngStream::from_seed(seed);
    let j = DenseMatrix::from_fn(m, n, |_, _| rng.standard_normal() / (n as f64).sqrt());
    let mut h = DenseMatrix::zeros(m, m);
    for i in 0..m {
        h.set(i, i, 0.5 + rng.uniform());
    }
    let g = rng.gaussian_vector(n, 0.0, 1.0);
    DampedLowRankSystem::new(j, h, damping, g).unwrap()
}

/// The desk-scale classification task: three Gaussian blobs in the plane.
pub fn desk_classification(train: usize, test: usize) -> (Dataset, Dataset) {
    use tngd::bench::config::DatasetSpec;
    let loaded = tngd::bench::dataset::load(&DatasetSpec::Blobs {
        train_size: train,
        test_size: test,
        classes: 3,
        features: 2,
        noise: 0.5,
        seed: 7,
    })
    .unwrap();
    (loaded.train, loaded.test)
}

pub fn desk_model() -> ModelSpec {
    ModelSpec::mlp(&[2, 12, 3], Activation::Tanh, LossHead::SoftmaxCrossEntropy).unwrap()
}

/// Anisotropic linear-Gaussian regression with feature scales spread over
/// two decades: the Gram matrix is badly conditioned, so preconditioning
/// pays and the analog-time knob separates cleanly.
pub fn ill_conditioned_regression(n: usize, seed: u64) -> Dataset {
    let features = 8;
    let mut rng = RngStream::substream(seed, 10);
    let mut wrng = RngStream::substream(seed, 12);
    let scales: Vec<f64> = (0..features)
        .map(|j| 10f64.powf(2.0 * j as f64 / (features - 1) as f64) / 10.0)
        .collect(); // 0.1 .. 10
    let w: Vec<f64> = (0..features).map(|_| wrng.standard_normal()).collect();
    let inputs = DenseMatrix::from_fn(n, features, |_, j| scales[j] * rng.standard_normal());
    let mut targets = DenseMatrix::zeros(n, 1);
    for i in 0..n {
        let mut acc = 0.0;
        for j in 0..features {
            acc += inputs.get(i, j) * w[j];
        }
        targets.set(i, 0, acc);
    }
    Dataset::new(inputs, Targets::Values(targets)).unwrap()
}

pub fn regression_model() -> ModelSpec {
    ModelSpec::mlp(&[8, 1], Activation::Identity, LossHead::MeanSquaredError).unwrap()
}

pub fn rel_gap(a: &DenseVector, b: &DenseVector) -> f64 {
    a.add_scaled(b, -1.0).unwrap().norm() / b.norm().max(1e-300)
}

pub fn cosine(a: &DenseVector, b: &DenseVector) -> f64 {
    a.dot(b).unwrap() / (a.norm() * b.norm()).max(1e-300)
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).unwrap());
    values[values.len() / 2]
}

/// Batch-means standard error of the mean of a correlated scalar series.
pub fn batch_means_se(series: &[f64], batches: usize) -> f64 {
    let per = series.len() / batches;
    let means: Vec<f64> = (0..batches)
        .map(|b| series[b * per..(b + 1) * per].iter().sum::<f64>() / per as f64)
        .collect();
    let grand = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|m| (m - grand) * (m - grand)).sum::<f64>()
        / (batches as f64 - 1.0);
    (var / batches as f64).sqrt()
}

//! Seeded runs and paired sweeps, with CSV logs and JSON config sidecars.

use super::config::{DatasetSpec, ExperimentConfig};
use super::{dataset, BenchError, Result, OUTPUT_ROOT_ENV};
use crate::costs::HardwareAssumptions;
use crate::curvature::{LossHead, ModelSpec};
use crate::optim::{self, TrainHistory};
use rayon::prelude::*;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Fixed RunLog header. `train_acc`/`test_acc` are empty for regression
/// heads; everything else is finite.
pub const CSV_HEADER: &str = "seed,iteration,epoch,train_loss,test_loss,train_acc,test_acc,lambda,est_wall_seconds,analog_time_t,delay_td,kappa0";

/// Sweepable hyperparameter axes.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepAxis {
    AnalogTime,
    DelayTime,
    NoiseVariance,
    Damping,
    LearningRate,
}

impl SweepAxis {
    pub fn parse(name: &str) -> Result<Self> {
        Ok(match name {
            "t" => SweepAxis::AnalogTime,
            "t_d" => SweepAxis::DelayTime,
            "kappa0" => SweepAxis::NoiseVariance,
            "lambda" => SweepAxis::Damping,
            "eta" => SweepAxis::LearningRate,
            other => {
                return Err(BenchError::Config(format!(
                    "unknown sweep axis `{other}` (expected t, t_d, kappa0, lambda, eta)"
                )))
            }
        })
    }

    pub fn label(self) -> &'static str {
        match self {
            SweepAxis::AnalogTime => "t",
            SweepAxis::DelayTime => "t_d",
            SweepAxis::NoiseVariance => "kappa0",
            SweepAxis::Damping => "lambda",
            SweepAxis::LearningRate => "eta",
        }
    }
}

/// Resolves the output directory: absolute paths win, relative paths nest
/// under `--out-root`, the `TNGD_OUTPUT_ROOT` env var, or the cwd.
pub fn resolve_output_dir(config_output: &Path, out_root: Option<&Path>) -> PathBuf {
    if config_output.is_absolute() {
        return config_output.to_path_buf();
    }
    let root = out_root
        .map(Path::to_path_buf)
        .or_else(|| std::env::var_os(OUTPUT_ROOT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("."));
    root.join(config_output)
}

/// Builds the model implied by the dataset shape and model section.
pub fn build_model(config: &ExperimentConfig, input_dim: usize, output_dim: usize) -> Result<ModelSpec> {
    let mut dims = Vec::with_capacity(config.model.hidden.len() + 2);
    dims.push(input_dim);
    dims.extend_from_slice(&config.model.hidden);
    dims.push(output_dim);
    Ok(ModelSpec::mlp(&dims, config.model.activation, config.model.loss)?)
}

fn check_loss_matches_dataset(config: &ExperimentConfig) -> Result<()> {
    let regression = matches!(config.dataset, DatasetSpec::LeastSquares { .. });
    let mse = matches!(config.model.loss, LossHead::MeanSquaredError);
    if regression != mse {
        return Err(BenchError::Config(
            "least-squares data pairs with mean-squared-error; classification data with softmax-cross-entropy"
                .into(),
        ));
    }
    Ok(())
}

fn format_field(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

/// Renders one run's history in the fixed RunLog schema.
pub fn render_csv(history: &TrainHistory, analog_time: f64, delay: f64, kappa0: f64) -> String {
    let mut out = String::new();
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in &history.records {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{},{},{}",
            history.seed,
            r.iteration,
            r.epoch,
            r.train_loss,
            format_field(r.test_loss),
            format_field(r.train_accuracy),
            format_field(r.test_accuracy),
            r.damping,
            r.est_wall_seconds,
            analog_time,
            delay,
            kappa0
        )
        .expect("writing to string cannot fail");
    }
    out
}

fn thermo_knobs(config: &ExperimentConfig) -> (f64, f64, f64) {
    if config.optimizer.solver == "thermodynamic" {
        (
            config.optimizer.analog_time,
            config.optimizer.delay_time,
            config.optimizer.noise_variance,
        )
    } else {
        (0.0, 0.0, 0.0)
    }
}

fn execute(
    config: &ExperimentConfig,
    out_dir: &Path,
    prefix: &str,
    seeds: &[u64],
) -> Result<Vec<PathBuf>> {
    check_loss_matches_dataset(config)?;
    let data = dataset::load(&config.dataset)?;
    if config.run.batch_size > data.train.len() {
        return Err(BenchError::Config(format!(
            "batch size {} exceeds training set size {}",
            config.run.batch_size,
            data.train.len()
        )));
    }
    let model = build_model(config, data.train.feature_dim(), data.output_dim)?;
    let train_config = config.train_config()?;
    let hw = HardwareAssumptions::default();
    let (analog_time, delay, kappa0) = thermo_knobs(config);

    std::fs::create_dir_all(out_dir).map_err(BenchError::io(out_dir))?;
    let sidecar = out_dir.join(format!("{prefix}config.json"));
    let json = serde_json::to_string_pretty(config).expect("config serializes");
    std::fs::write(&sidecar, json).map_err(BenchError::io(&sidecar))?;

    // Seeds are independent runs with their own streams; run them in a
    // worker pool and write one log file each.
    let mut results: Vec<(PathBuf, Result<String>)> = seeds
        .par_iter()
        .map(|&seed| {
            let path = out_dir.join(format!("{prefix}seed{seed}.csv"));
            let body = optim::train(
                &model,
                &data.train,
                Some(&data.test),
                &train_config,
                seed,
                &hw,
            )
            .map(|history| render_csv(&history, analog_time, delay, kappa0))
            .map_err(BenchError::from);
            (path, body)
        })
        .collect();

    let mut paths = vec![sidecar];
    for (path, body) in results.drain(..) {
        let body = body?;
        std::fs::write(&path, body).map_err(BenchError::io(&path))?;
        paths.push(path);
    }
    Ok(paths)
}

/// Runs the configured experiment once per seed. `seed_override`, when
/// nonempty, replaces the config's seed list.
pub fn run(
    config: &ExperimentConfig,
    out_root: Option<&Path>,
    seed_override: &[u64],
) -> Result<Vec<PathBuf>> {
    let out_dir = resolve_output_dir(&config.run.output, out_root);
    let seeds: Vec<u64> = if seed_override.is_empty() {
        config.run.seeds.clone()
    } else {
        seed_override.to_vec()
    };
    execute(config, &out_dir, "run_", &seeds)
}

fn apply_axis(config: &ExperimentConfig, axis: SweepAxis, value: f64) -> Result<ExperimentConfig> {
    let mut c = config.clone();
    let thermo = c.optimizer.solver == "thermodynamic";
    match axis {
        SweepAxis::AnalogTime => {
            if !thermo {
                return Err(BenchError::Config(
                    "sweeping t requires the thermodynamic solver".into(),
                ));
            }
            c.optimizer.analog_time = value;
        }
        SweepAxis::DelayTime => {
            if !thermo {
                return Err(BenchError::Config(
                    "sweeping t_d requires the thermodynamic solver".into(),
                ));
            }
            c.optimizer.delay_time = value;
        }
        SweepAxis::NoiseVariance => {
            if !thermo {
                return Err(BenchError::Config(
                    "sweeping kappa0 requires the thermodynamic solver".into(),
                ));
            }
            c.optimizer.noise_variance = value;
        }
        SweepAxis::Damping => {
            if c.optimizer.source != "natural-gradient" {
                return Err(BenchError::Config(
                    "sweeping lambda requires the natural-gradient source".into(),
                ));
            }
            c.optimizer.damping = value;
        }
        SweepAxis::LearningRate => c.optimizer.learning_rate = value,
    }
    // Re-validate the mutated optimizer.
    c.train_config()?.optimizer.validate()?;
    Ok(c)
}

/// One run set per axis value, sharing seeds (and therefore data order)
/// across values so differences are attributable to the swept knob.
pub fn sweep(
    config: &ExperimentConfig,
    axis: SweepAxis,
    values: &[f64],
    out_root: Option<&Path>,
) -> Result<Vec<PathBuf>> {
    if values.is_empty() {
        return Err(BenchError::Config("sweep needs at least one value".into()));
    }
    let out_dir = resolve_output_dir(&config.run.output, out_root);
    let mut paths = Vec::new();
    for &value in values {
        let point = apply_axis(config, axis, value)?;
        let prefix = format!("sweep_{}={}_", axis.label(), value);
        paths.extend(execute(&point, &out_dir, &prefix, &config.run.seeds)?);
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bench::config;

    fn tiny_config(output: &str) -> ExperimentConfig {
        let text = format!(
            "\
schema = 1
[dataset]
kind = blobs
train_size = 48
test_size = 24
noise = 0.4
seed = 5
[model]
hidden = 6
[optimizer]
rule = sgd
source = natural-gradient
solver = thermodynamic
analog_time = 2
step_size = 0.1
[run]
epochs = 1
batch_size = 16
seeds = 0,1
output = {output}
"
        );
        config::parse(&text).unwrap()
    }

    #[test]
    fn run_writes_csv_and_sidecar_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config("exp");
        let paths = run(&cfg, Some(dir.path()), &[]).unwrap();
        assert_eq!(paths.len(), 3); // sidecar + 2 seeds
        let csv_path = dir.path().join("exp/run_seed0.csv");
        let first = std::fs::read(&csv_path).unwrap();
        assert!(String::from_utf8_lossy(&first).starts_with(CSV_HEADER));

        // Bytewise reproducibility.
        run(&cfg, Some(dir.path()), &[]).unwrap();
        let second = std::fs::read(&csv_path).unwrap();
        assert_eq!(first, second);
    }

    #[test]
    fn seed_override_replaces_config_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config("override");
        let paths = run(&cfg, Some(dir.path()), &[9]).unwrap();
        assert!(paths
            .iter()
            .any(|p| p.file_name().unwrap() == "run_seed9.csv"));
        assert!(!paths
            .iter()
            .any(|p| p.file_name().unwrap() == "run_seed0.csv"));
    }

    #[test]
    fn sweep_applies_axis_and_pairs_seeds() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = tiny_config("sweep");
        let paths = sweep(&cfg, SweepAxis::AnalogTime, &[1.0, 2.0], Some(dir.path())).unwrap();
        let names: Vec<String> = paths
            .iter()
            .map(|p| p.file_name().unwrap().to_string_lossy().into_owned())
            .collect();
        assert!(names.contains(&"sweep_t=1_seed0.csv".to_string()), "{names:?}");
        assert!(names.contains(&"sweep_t=2_seed1.csv".to_string()), "{names:?}");
    }

    #[test]
    fn sweep_axis_validation() {
        let dir = tempfile::tempdir().unwrap();
        let mut cfg = tiny_config("invalid");
        cfg.optimizer.solver = "exact".into();
        let err = sweep(&cfg, SweepAxis::AnalogTime, &[1.0], Some(dir.path())).unwrap_err();
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn axis_names_round_trip() {
        for name in ["t", "t_d", "kappa0", "lambda", "eta"] {
            assert_eq!(SweepAxis::parse(name).unwrap().label(), name);
        }
        assert!(SweepAxis::parse("bogus").is_err());
    }
}

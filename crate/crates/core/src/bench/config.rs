//! Plain-text experiment configuration.
//!
//! The format is a sectioned key-value file with an explicit schema version:
//!
//! ```text
//! schema = 1
//!
//! [dataset]
//! kind = blobs
//! train_size = 2000
//! ...
//! ```
//!
//! `#` starts a comment, keys may appear once, and unknown sections or keys
//! are errors — a silent typo would invalidate a sweep.

use super::{BenchError, Result};
use crate::curvature::{Activation, LossHead};
use crate::optim::{GradientSource, LmSchedule, OptimizerConfig, TrainConfig, UpdateRule};
use crate::solvers::SolverChoice;
use crate::thermo::{TlsConfig, WarmStartPolicy};
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::PathBuf;

pub const SCHEMA_VERSION: u64 = 1;

/// Desk-scale defaults: 2000/1000 samples and batches of 64 keep full runs
/// in the seconds-to-minutes range.
pub const DEFAULT_TRAIN_SIZE: usize = 2000;
pub const DEFAULT_TEST_SIZE: usize = 1000;
pub const DEFAULT_BATCH: usize = 64;

#[derive(Clone, Debug, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetSpec {
    Blobs {
        train_size: usize,
        test_size: usize,
        classes: usize,
        features: usize,
        noise: f64,
        seed: u64,
    },
    TwoMoons {
        train_size: usize,
        test_size: usize,
        noise: f64,
        seed: u64,
    },
    LeastSquares {
        train_size: usize,
        test_size: usize,
        features: usize,
        targets: usize,
        noise: f64,
        seed: u64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

#[derive(Clone, Debug, Serialize)]
pub struct ModelConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub loss: LossHead,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub seeds: Vec<u64>,
    pub output: PathBuf,
    pub init_scale: f64,
}

/// Fully resolved experiment configuration; serialized as the JSON sidecar
/// next to each run's CSV logs.
#[derive(Clone, Debug, Serialize)]
pub struct ExperimentConfig {
    pub schema: u64,
    pub version: String,
    pub dataset: DatasetSpec,
    pub model: ModelConfig,
    pub optimizer: OptimizerSettings,
    pub run: RunSettings,
}

/// Flat optimizer settings as written in the config file.
#[derive(Clone, Debug, Serialize)]
pub struct OptimizerSettings {
    pub rule: String,
    pub learning_rate: f64,
    pub momentum: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub source: String,
    pub solver: String,
    pub cg_iterations: usize,
    pub damping: f64,
    pub analog_time: f64,
    pub delay_time: f64,
    pub step_size: f64,
    pub noise_variance: f64,
    pub window_fraction: f64,
    pub warm_start: String,
    pub lm_enabled: bool,
    pub lm_a: f64,
    pub lm_alpha: f64,
}

impl OptimizerSettings {
    pub fn to_optimizer_config(&self) -> Result<OptimizerConfig> {
        let update_rule = match self.rule.as_str() {
            "sgd" => UpdateRule::Sgd {
                momentum: self.momentum,
            },
            "adam" => UpdateRule::Adam {
                beta1: self.beta1,
                beta2: self.beta2,
                epsilon: self.epsilon,
            },
            other => return Err(BenchError::Config(format!("unknown update rule `{other}`"))),
        };
        let gradient_source = match self.source.as_str() {
            "raw-gradient" => GradientSource::RawGradient,
            "natural-gradient" => GradientSource::NaturalGradient,
            other => {
                return Err(BenchError::Config(format!(
                    "unknown gradient source `{other}`"
                )))
            }
        };
        let warm_start = match self.warm_start.as_str() {
            "reset-to-rhs" => WarmStartPolicy::ResetToRhs,
            "reset-to-zero" => WarmStartPolicy::ResetToZero,
            "keep-previous" => WarmStartPolicy::KeepPrevious,
            other => {
                return Err(BenchError::Config(format!(
                    "unknown warm-start policy `{other}`"
                )))
            }
        };
        let solver = match self.solver.as_str() {
            "exact" => SolverChoice::Exact,
            "cg" => SolverChoice::ConjugateGradient {
                iterations: self.cg_iterations,
            },
            "woodbury" => SolverChoice::Woodbury,
            "thermodynamic" => SolverChoice::Thermodynamic(TlsConfig {
                noise_variance: self.noise_variance,
                step_size: self.step_size,
                analog_time: self.analog_time,
                averaging_window_fraction: self.window_fraction,
                warm_start,
            }),
            other => return Err(BenchError::Config(format!("unknown solver `{other}`"))),
        };
        let lm = if self.lm_enabled {
            Some(LmSchedule {
                threshold: self.lm_a,
                alpha: self.lm_alpha,
            })
        } else {
            None
        };
        Ok(OptimizerConfig {
            update_rule,
            learning_rate: self.learning_rate,
            gradient_source,
            solver,
            initial_damping: self.damping,
            lm,
            delay_time: self.delay_time,
        })
    }
}

impl ExperimentConfig {
    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            optimizer: self.optimizer.to_optimizer_config()?,
            epochs: self.run.epochs,
            batch_size: self.run.batch_size,
            init_scale: self.run.init_scale,
        })
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

struct Section {
    values: BTreeMap<String, String>,
}

impl Section {
    fn take(&mut self, key: &str) -> Option<String> {
        self.values.remove(key)
    }

    fn finish(self, name: &str) -> Result<()> {
        if let Some(key) = self.values.keys().next() {
            return Err(BenchError::Config(format!(
                "unknown key `{key}` in section [{name}]"
            )));
        }
        Ok(())
    }
}

fn split_sections(text: &str) -> Result<BTreeMap<String, Section>> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    let mut top_level = Section {
        values: BTreeMap::new(),
    };
    for (lineno, raw) in text.lines().enumerate() {
        let line = match raw.find('#') {
            Some(idx) => &raw[..idx],
            None => raw,
        }
        .trim();
        if line.is_empty() {
            continue;
        }
        if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
            let name = name.trim().to_string();
            if sections.contains_key(&name) {
                return Err(BenchError::Config(format!(
                    "line {}: duplicate section [{name}]",
                    lineno + 1
                )));
            }
            sections.insert(
                name.clone(),
                Section {
                    values: BTreeMap::new(),
                },
            );
            current = Some(name);
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(BenchError::Config(format!(
                "line {}: expected `key = value`, got `{line}`",
                lineno + 1
            )));
        };
        let key = key.trim().to_string();
        let value = value.trim().to_string();
        let section = match &current {
            Some(name) => sections.get_mut(name).unwrap(),
            None => &mut top_level,
        };
        if section.values.insert(key.clone(), value).is_some() {
            return Err(BenchError::Config(format!(
                "line {}: duplicate key `{key}`",
                lineno + 1
            )));
        }
    }
    sections.insert(String::new(), top_level);
    Ok(sections)
}

fn parse_value<T: std::str::FromStr>(section: &str, key: &str, raw: &str) -> Result<T> {
    raw.parse().map_err(|_| {
        BenchError::Config(format!(
            "[{section}] {key}: cannot parse `{raw}` as {}",
            std::any::type_name::<T>()
        ))
    })
}

fn take_parsed<T: std::str::FromStr>(
    sec: &mut Section,
    section: &str,
    key: &str,
    default: T,
) -> Result<T> {
    match sec.take(key) {
        Some(raw) => parse_value(section, key, &raw),
        None => Ok(default),
    }
}

fn parse_list<T: std::str::FromStr>(section: &str, key: &str, raw: &str) -> Result<Vec<T>> {
    if raw.trim().is_empty() {
        return Ok(Vec::new());
    }
    raw.split(',')
        .map(|item| parse_value(section, key, item.trim()))
        .collect()
}

/// Parses and resolves an experiment config, applying documented defaults.
pub fn parse(text: &str) -> Result<ExperimentConfig> {
    let mut sections = split_sections(text)?;

    let mut top = sections.remove("").unwrap();
    let schema: u64 = match top.take("schema") {
        Some(raw) => parse_value("", "schema", &raw)?,
        None => {
            return Err(BenchError::Config(
                "missing `schema = 1` before the first section".into(),
            ))
        }
    };
    if schema != SCHEMA_VERSION {
        return Err(BenchError::Config(format!(
            "unsupported schema version {schema}, expected {SCHEMA_VERSION}"
        )));
    }
    top.finish("")?;

    // [dataset]
    let mut sec = sections.remove("dataset").unwrap_or(Section {
        values: BTreeMap::new(),
    });
    let kind = sec.take("kind").unwrap_or_else(|| "blobs".to_string());
    let train_size = take_parsed(&mut sec, "dataset", "train_size", DEFAULT_TRAIN_SIZE)?;
    let test_size = take_parsed(&mut sec, "dataset", "test_size", DEFAULT_TEST_SIZE)?;
    let noise = take_parsed(&mut sec, "dataset", "noise", 0.3)?;
    let data_seed = take_parsed(&mut sec, "dataset", "seed", 0u64)?;
    let dataset = match kind.as_str() {
        "blobs" => DatasetSpec::Blobs {
            train_size,
            test_size,
            classes: take_parsed(&mut sec, "dataset", "classes", 3)?,
            features: take_parsed(&mut sec, "dataset", "features", 2)?,
            noise,
            seed: data_seed,
        },
        "two-moons" => DatasetSpec::TwoMoons {
            train_size,
            test_size,
            noise,
            seed: data_seed,
        },
        "least-squares" => DatasetSpec::LeastSquares {
            train_size,
            test_size,
            features: take_parsed(&mut sec, "dataset", "features", 8)?,
            targets: take_parsed(&mut sec, "dataset", "targets", 1)?,
            noise,
            seed: data_seed,
        },
        "idx" => {
            let need = |sec: &mut Section, key: &str| -> Result<PathBuf> {
                sec.take(key).map(PathBuf::from).ok_or_else(|| {
                    BenchError::Config(format!("[dataset] idx requires `{key}`"))
                })
            };
            DatasetSpec::Idx {
                train_images: need(&mut sec, "train_images")?,
                train_labels: need(&mut sec, "train_labels")?,
                test_images: need(&mut sec, "test_images")?,
                test_labels: need(&mut sec, "test_labels")?,
            }
        }
        other => {
            return Err(BenchError::Config(format!(
                "unknown dataset kind `{other}`"
            )))
        }
    };
    sec.finish("dataset")?;

    // [model]
    let mut sec = sections.remove("model").unwrap_or(Section {
        values: BTreeMap::new(),
    });
    let hidden = match sec.take("hidden") {
        Some(raw) => parse_list("model", "hidden", &raw)?,
        None => vec![16],
    };
    let activation = match sec
        .take("activation")
        .unwrap_or_else(|| "tanh".to_string())
        .as_str()
    {
        "identity" => Activation::Identity,
        "tanh" => Activation::Tanh,
        "relu" => Activation::Relu,
        other => {
            return Err(BenchError::Config(format!(
                "unknown activation `{other}`"
            )))
        }
    };
    let default_loss = match &dataset {
        DatasetSpec::LeastSquares { .. } => "mean-squared-error",
        _ => "softmax-cross-entropy",
    };
    let loss = match sec
        .take("loss")
        .unwrap_or_else(|| default_loss.to_string())
        .as_str()
    {
        "softmax-cross-entropy" => LossHead::SoftmaxCrossEntropy,
        "mean-squared-error" => LossHead::MeanSquaredError,
        other => return Err(BenchError::Config(format!("unknown loss `{other}`"))),
    };
    sec.finish("model")?;
    let model = ModelConfig {
        hidden,
        activation,
        loss,
    };

    // [optimizer]
    let mut sec = sections.remove("optimizer").unwrap_or(Section {
        values: BTreeMap::new(),
    });
    let rule = sec.take("rule").unwrap_or_else(|| "sgd".to_string());
    // Appendix-style defaults: sgd/tngd trains at 0.01, adam at 0.001.
    let default_lr = if rule == "adam" { 0.001 } else { 0.01 };
    let optimizer = OptimizerSettings {
        learning_rate: take_parsed(&mut sec, "optimizer", "learning_rate", default_lr)?,
        momentum: take_parsed(&mut sec, "optimizer", "momentum", 0.0)?,
        beta1: take_parsed(&mut sec, "optimizer", "beta1", 0.9)?,
        beta2: take_parsed(&mut sec, "optimizer", "beta2", 0.999)?,
        epsilon: take_parsed(&mut sec, "optimizer", "epsilon", 1e-8)?,
        source: sec
            .take("source")
            .unwrap_or_else(|| "natural-gradient".to_string()),
        solver: sec
            .take("solver")
            .unwrap_or_else(|| "thermodynamic".to_string()),
        cg_iterations: take_parsed(&mut sec, "optimizer", "cg_iterations", 200)?,
        damping: take_parsed(&mut sec, "optimizer", "damping", 0.01)?,
        analog_time: take_parsed(&mut sec, "optimizer", "analog_time", 50.0)?,
        delay_time: take_parsed(&mut sec, "optimizer", "delay_time", 0.0)?,
        step_size: take_parsed(&mut sec, "optimizer", "step_size", 0.1)?,
        noise_variance: take_parsed(&mut sec, "optimizer", "noise_variance", 0.0)?,
        window_fraction: take_parsed(&mut sec, "optimizer", "window_fraction", 0.1)?,
        warm_start: sec
            .take("warm_start")
            .unwrap_or_else(|| "keep-previous".to_string()),
        lm_enabled: match sec.take("lm").unwrap_or_else(|| "off".to_string()).as_str() {
            "on" => true,
            "off" => false,
            other => {
                return Err(BenchError::Config(format!(
                    "[optimizer] lm: expected on/off, got `{other}`"
                )))
            }
        },
        lm_a: take_parsed(&mut sec, "optimizer", "lm_a", 0.75)?,
        lm_alpha: take_parsed(&mut sec, "optimizer", "lm_alpha", 2.0 / 3.0)?,
        rule,
    };
    sec.finish("optimizer")?;

    // [run]
    let mut sec = sections.remove("run").unwrap_or(Section {
        values: BTreeMap::new(),
    });
    let run = RunSettings {
        epochs: take_parsed(&mut sec, "run", "epochs", 2)?,
        batch_size: take_parsed(&mut sec, "run", "batch_size", DEFAULT_BATCH)?,
        seeds: match sec.take("seeds") {
            Some(raw) => parse_list("run", "seeds", &raw)?,
            None => vec![0, 1, 2, 3, 4],
        },
        output: PathBuf::from(sec.take("output").unwrap_or_else(|| "run".to_string())),
        init_scale: take_parsed(&mut sec, "run", "init_scale", 0.5)?,
    };
    sec.finish("run")?;

    if let Some(name) = sections.keys().find(|k| !k.is_empty()) {
        return Err(BenchError::Config(format!("unknown section [{name}]")));
    }
    if run.seeds.is_empty() {
        return Err(BenchError::Config("at least one seed is required".into()));
    }

    let config = ExperimentConfig {
        schema,
        version: env!("CARGO_PKG_VERSION").to_string(),
        dataset,
        model,
        optimizer,
        run,
    };
    // Fail fast on optimizer contract violations.
    config.train_config()?.optimizer.validate()?;
    Ok(config)
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "schema = 1\n";

    #[test]
    fn defaults_resolve() {
        let config = parse(MINIMAL).unwrap();
        assert!(matches!(config.dataset, DatasetSpec::Blobs { .. }));
        assert_eq!(config.run.batch_size, DEFAULT_BATCH);
        assert_eq!(config.optimizer.learning_rate, 0.01);
        assert_eq!(config.optimizer.analog_time, 50.0);
        assert_eq!(config.optimizer.step_size, 0.1);
        assert_eq!(config.optimizer.damping, 0.01);
    }

    #[test]
    fn adam_default_learning_rate() {
        let config = parse("schema = 1\n[optimizer]\nrule = adam\nsource = raw-gradient\n").unwrap();
        assert_eq!(config.optimizer.learning_rate, 0.001);
        assert_eq!(config.optimizer.beta1, 0.9);
    }

    #[test]
    fn missing_schema_is_an_error() {
        assert!(matches!(
            parse("[dataset]\nkind = blobs\n"),
            Err(BenchError::Config(_))
        ));
    }

    #[test]
    fn unknown_key_is_an_error() {
        let text = "schema = 1\n[optimizer]\nlearning_rat = 0.1\n";
        let err = parse(text).unwrap_err();
        assert!(err.to_string().contains("learning_rat"), "{err}");
    }

    #[test]
    fn unknown_section_is_an_error() {
        let err = parse("schema = 1\n[optimiser]\n").unwrap_err();
        assert!(err.to_string().contains("optimiser"), "{err}");
    }

    #[test]
    fn duplicate_key_is_an_error() {
        let err = parse("schema = 1\n[run]\nepochs = 1\nepochs = 2\n").unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
    }

    #[test]
    fn comments_and_lists_parse() {
        let text = "\
schema = 1
[model]
hidden = 16, 8   # two hidden layers
[run]
seeds = 3,4
";
        let config = parse(text).unwrap();
        assert_eq!(config.model.hidden, vec![16, 8]);
        assert_eq!(config.run.seeds, vec![3, 4]);
    }

    #[test]
    fn idx_requires_paths() {
        let err = parse("schema = 1\n[dataset]\nkind = idx\n").unwrap_err();
        assert!(err.to_string().contains("train_images"), "{err}");
    }

    #[test]
    fn invalid_optimizer_rejected_at_parse_time() {
        let err = parse("schema = 1\n[optimizer]\nlearning_rate = -1\n").unwrap_err();
        assert!(err.to_string().contains("learning rate"), "{err}");
    }
}

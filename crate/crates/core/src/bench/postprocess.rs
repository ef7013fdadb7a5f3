//! Log post-processing: moving averages, cross-seed aggregation, and
//! time-to-threshold tables.

use super::runner::CSV_HEADER;
use super::{BenchError, Result};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

/// Loss-level fractions (of the initial smoothed loss) reported in the
/// time-to-threshold table.
pub const THRESHOLD_FRACTIONS: [f64; 4] = [0.5, 0.2, 0.1, 0.05];

#[derive(Clone, Debug)]
struct LogRow {
    iteration: u64,
    train_loss: f64,
    test_loss: Option<f64>,
    est_wall_seconds: f64,
}

#[derive(Clone, Debug)]
struct RunLog {
    rows: Vec<LogRow>,
}

/// Trailing moving average emitting full windows only: output length is
/// `len - window + 1` (`window = 1` is the identity; constant series are
/// unchanged).
pub fn moving_average(values: &[f64], window: usize) -> Vec<f64> {
    assert!(window >= 1, "window must be at least 1");
    if values.len() < window {
        return Vec::new();
    }
    let mut out = Vec::with_capacity(values.len() - window + 1);
    let mut sum: f64 = values[..window].iter().sum();
    out.push(sum / window as f64);
    for i in window..values.len() {
        sum += values[i] - values[i - window];
        out.push(sum / window as f64);
    }
    out
}

fn parse_log(path: &Path) -> Result<RunLog> {
    let text = std::fs::read_to_string(path).map_err(BenchError::io(path))?;
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    if header != CSV_HEADER {
        return Err(BenchError::MalformedLog {
            path: path.to_path_buf(),
            reason: format!("unexpected header `{header}`"),
        });
    }
    let mut rows = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 12 {
            return Err(BenchError::MalformedLog {
                path: path.to_path_buf(),
                reason: format!("line {}: expected 12 fields, got {}", lineno + 2, fields.len()),
            });
        }
        let parse = |idx: usize| -> Result<f64> {
            fields[idx].parse().map_err(|_| BenchError::MalformedLog {
                path: path.to_path_buf(),
                reason: format!("line {}: bad numeric field `{}`", lineno + 2, fields[idx]),
            })
        };
        let opt = |idx: usize| -> Result<Option<f64>> {
            if fields[idx].is_empty() {
                Ok(None)
            } else {
                parse(idx).map(Some)
            }
        };
        rows.push(LogRow {
            iteration: parse(1)? as u64,
            train_loss: parse(3)?,
            test_loss: opt(4)?,
            est_wall_seconds: parse(8)?,
        });
    }
    Ok(RunLog { rows })
}

/// Strips the `seedN.csv` suffix to group one run's seeds together.
fn group_key(file_name: &str) -> Option<String> {
    let stem = file_name.strip_suffix(".csv")?;
    let idx = stem.rfind("seed")?;
    let digits = &stem[idx + 4..];
    if digits.is_empty() || !digits.bytes().all(|b| b.is_ascii_digit()) {
        return None;
    }
    Some(stem[..idx].trim_end_matches('_').to_string())
}

/// Post-processes every RunLog CSV under `dir`: per-group moving averages
/// (window of `window_points`), mean and standard deviation across seeds,
/// and a time-to-threshold table on the smoothed mean train loss. Writes
/// `summary.csv` and `thresholds.csv` into `dir` and returns their paths.
pub fn postprocess(dir: &Path, window_points: usize) -> Result<Vec<PathBuf>> {
    if window_points == 0 {
        return Err(BenchError::Config("window must be at least 1".into()));
    }
    let mut groups: BTreeMap<String, Vec<RunLog>> = BTreeMap::new();
    let entries = std::fs::read_dir(dir).map_err(BenchError::io(dir))?;
    for entry in entries {
        let entry = entry.map_err(BenchError::io(dir))?;
        let name = entry.file_name().to_string_lossy().into_owned();
        let Some(key) = group_key(&name) else {
            continue;
        };
        groups
            .entry(key)
            .or_default()
            .push(parse_log(&entry.path())?);
    }
    if groups.is_empty() {
        return Err(BenchError::Config(format!(
            "no RunLog CSV files found under {}",
            dir.display()
        )));
    }

    let mut summary = String::from(
        "run,iteration,est_wall_seconds_mean,train_loss_ma_mean,train_loss_ma_std,test_loss_ma_mean,test_loss_ma_std\n",
    );
    let mut thresholds =
        String::from("run,threshold_fraction,target_loss,iteration,est_wall_seconds_mean\n");

    for (key, logs) in &groups {
        let aligned = logs.iter().map(|l| l.rows.len()).min().unwrap_or(0);
        if aligned < window_points {
            continue; // window longer than the run: nothing summarizable
        }
        let per_seed_train: Vec<Vec<f64>> = logs
            .iter()
            .map(|l| {
                moving_average(
                    &l.rows[..aligned]
                        .iter()
                        .map(|r| r.train_loss)
                        .collect::<Vec<_>>(),
                    window_points,
                )
            })
            .collect();
        let per_seed_test: Vec<Option<Vec<f64>>> = logs
            .iter()
            .map(|l| {
                let vals: Option<Vec<f64>> =
                    l.rows[..aligned].iter().map(|r| r.test_loss).collect();
                vals.map(|v| moving_average(&v, window_points))
            })
            .collect();
        let points = aligned - window_points + 1;
        let mut mean_curve = Vec::with_capacity(points);
        for p in 0..points {
            let iteration = logs[0].rows[p + window_points - 1].iteration;
            let wall_mean = logs
                .iter()
                .map(|l| l.rows[p + window_points - 1].est_wall_seconds)
                .sum::<f64>()
                / logs.len() as f64;
            let (train_mean, train_std) =
                mean_std(per_seed_train.iter().map(|s| s[p]));
            let test_stats = if per_seed_test.iter().all(|t| t.is_some()) {
                Some(mean_std(
                    per_seed_test.iter().map(|t| t.as_ref().unwrap()[p]),
                ))
            } else {
                None
            };
            writeln!(
                summary,
                "{key},{iteration},{wall_mean},{train_mean},{train_std},{},{}",
                test_stats.map(|s| s.0.to_string()).unwrap_or_default(),
                test_stats.map(|s| s.1.to_string()).unwrap_or_default(),
            )
            .expect("writing to string cannot fail");
            mean_curve.push((iteration, wall_mean, train_mean));
        }
        let initial = mean_curve[0].2;
        for frac in THRESHOLD_FRACTIONS {
            let target = frac * initial;
            if let Some(&(iteration, wall, _)) =
                mean_curve.iter().find(|(_, _, loss)| *loss <= target)
            {
                writeln!(thresholds, "{key},{frac},{target},{iteration},{wall}")
                    .expect("writing to string cannot fail");
            }
        }
    }

    let summary_path = dir.join("summary.csv");
    std::fs::write(&summary_path, summary).map_err(BenchError::io(&summary_path))?;
    let thresholds_path = dir.join("thresholds.csv");
    std::fs::write(&thresholds_path, thresholds).map_err(BenchError::io(&thresholds_path))?;
    Ok(vec![summary_path, thresholds_path])
}

fn mean_std(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let vals: Vec<f64> = values.collect();
    let n = vals.len() as f64;
    let mean = vals.iter().sum::<f64>() / n;
    let var = vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

//! Benchmark CLI: seeded training runs, hyperparameter sweeps, cost-model
//! tables, and log post-processing.

use clap::{Args, Parser, Subcommand};
use std::path::PathBuf;
use std::process::ExitCode;
use tngd::bench::{config, postprocess, runner, BenchError};
use tngd::costs::{self, HardwareAssumptions, OptimizerKind};

#[derive(Parser)]
#[command(
    name = "tngd",
    version,
    about = "Natural-gradient training with a simulated thermodynamic linear solver"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the configured experiment once per seed.
    Train(TrainArgs),
    /// Run the experiment once per value of a swept hyperparameter.
    Sweep(SweepArgs),
    /// Print per-iteration cost-model estimates for all backends.
    BenchRuntime(BenchRuntimeArgs),
    /// Aggregate RunLog CSVs: moving averages, seed statistics, thresholds.
    Postprocess(PostprocessArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// Experiment config file.
    #[arg(long)]
    config: PathBuf,
    /// Replace the config's seed list (repeatable).
    #[arg(long = "seed")]
    seeds: Vec<u64>,
    /// Root for relative output directories (overrides TNGD_OUTPUT_ROOT).
    #[arg(long)]
    out_root: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: PathBuf,
    /// Axis to sweep: t, t_d, kappa0, lambda, or eta.
    #[arg(long)]
    axis: String,
    /// Comma-separated axis values.
    #[arg(long, value_delimiter = ',')]
    values: Vec<f64>,
    #[arg(long)]
    out_root: Option<PathBuf>,
}

#[derive(Args)]
struct BenchRuntimeArgs {
    /// Parameter counts to tabulate.
    #[arg(long = "n-list", value_delimiter = ',', required = true)]
    n_list: Vec<usize>,
    /// Output dimensions to tabulate.
    #[arg(long = "dz-list", value_delimiter = ',', required = true)]
    dz_list: Vec<usize>,
    #[arg(long, default_value_t = 32)]
    batch: usize,
    #[arg(long = "cg-iters", default_value_t = 200)]
    cg_iters: usize,
    #[arg(long = "analog-time", default_value_t = 50.0)]
    analog_time: f64,
    /// Calibrate throughput coefficients on this host first.
    #[arg(long, default_value_t = false)]
    calibrate: bool,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct PostprocessArgs {
    /// Directory of RunLog CSVs.
    #[arg(long = "in")]
    input: PathBuf,
    /// Moving-average window, in points.
    #[arg(long, default_value_t = 200)]
    window: usize,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Sweep(args) => cmd_sweep(args),
        Command::BenchRuntime(args) => cmd_bench_runtime(args),
        Command::Postprocess(args) => cmd_postprocess(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            let mut source = std::error::Error::source(&err);
            while let Some(cause) = source {
                eprintln!("  caused by: {cause}");
                source = cause.source();
            }
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

fn load_config(path: &PathBuf) -> Result<config::ExperimentConfig, BenchError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
    config::parse(&text)
}

fn cmd_train(args: TrainArgs) -> Result<(), BenchError> {
    let cfg = load_config(&args.config)?;
    let written = runner::run(&cfg, args.out_root.as_deref(), &args.seeds)?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_sweep(args: SweepArgs) -> Result<(), BenchError> {
    let cfg = load_config(&args.config)?;
    let axis = runner::SweepAxis::parse(&args.axis)?;
    if args.values.is_empty() {
        return Err(BenchError::Config("sweep needs --values".into()));
    }
    let written = runner::sweep(&cfg, axis, &args.values, args.out_root.as_deref())?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

fn cmd_bench_runtime(args: BenchRuntimeArgs) -> Result<(), BenchError> {
    let hw = if args.calibrate {
        let samples = costs::measure_host_kernels();
        let (hw, report) = costs::calibrate(&samples, &HardwareAssumptions::default())
            .map_err(|e| BenchError::Config(format!("calibration failed: {e}")))?;
        eprintln!(
            "calibrated: stream {:.3e} s/flop (rms {:.2e}), factor {:.3e} s/flop (rms {:.2e})",
            report.stream.seconds_per_flop,
            report.stream.rms_residual,
            report.factor.seconds_per_flop,
            report.factor.rms_residual
        );
        hw
    } else {
        HardwareAssumptions::default()
    };
    let mut table = String::from(
        "optimizer,n,b,d_z,c,t,build_seconds,transfer_seconds,analog_seconds,total_seconds,memory_bytes\n",
    );
    let kinds = [
        OptimizerKind::FirstOrder,
        OptimizerKind::ExactNgd,
        OptimizerKind::NgdCg,
        OptimizerKind::NgdWoodbury,
        OptimizerKind::ThermodynamicNgd,
    ];
    for &d_z in &args.dz_list {
        for &n in &args.n_list {
            for kind in kinds {
                let est = costs::estimate_iteration(
                    kind,
                    n,
                    args.batch,
                    d_z,
                    args.cg_iters,
                    args.analog_time,
                    &hw,
                );
                table.push_str(&format!(
                    "{},{n},{},{d_z},{},{},{},{},{},{},{}\n",
                    kind.label(),
                    args.batch,
                    args.cg_iters,
                    args.analog_time,
                    est.build_seconds,
                    est.transfer_seconds,
                    est.analog_seconds,
                    est.total_seconds,
                    est.memory_bytes
                ));
            }
        }
    }
    match args.out {
        Some(path) => {
            std::fs::write(&path, table).map_err(BenchError::io(&path))?;
            println!("wrote {}", path.display());
        }
        None => print!("{table}"),
    }
    Ok(())
}

fn cmd_postprocess(args: PostprocessArgs) -> Result<(), BenchError> {
    let written = postprocess::postprocess(&args.input, args.window)?;
    for path in written {
        println!("wrote {}", path.display());
    }
    Ok(())
}

mod config;
mod selfcheck;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "skygp",
    about = "Streaming GP expert pools: sequential benchmarks and closed-loop control simulation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Default, Clone)]
struct Overrides {
    /// Configuration file (TOML); flags override file values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Pool mode.
    #[arg(long, value_parser = ["fast", "dense"])]
    mode: Option<String>,
    /// Experts aggregated per prediction.
    #[arg(long)]
    max_agg: Option<usize>,
    /// Per-expert data capacity.
    #[arg(long)]
    max_points: Option<usize>,
    /// Localization window cap.
    #[arg(long)]
    window: Option<usize>,
    /// Aggregation method.
    #[arg(long, value_parser = ["moe", "poe", "gpoe", "bcm", "rbcm"])]
    agg: Option<String>,
    /// Time-aware decay factor.
    #[arg(long)]
    gamma: Option<f64>,
    /// Theta filter threshold.
    #[arg(long)]
    theta_bar: Option<f64>,
    /// Window growth scale.
    #[arg(long)]
    rho: Option<f64>,
    /// Master seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Emit per-step records.
    #[arg(long)]
    per_step: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Run the sequential regression benchmark.
    Bench {
        #[command(flatten)]
        overrides: Overrides,
        /// Also run the full Fast/Dense x {1,2,4} comparison table.
        #[arg(long)]
        compare: bool,
    },
    /// Run the closed-loop control Monte Carlo simulation.
    Control {
        #[command(flatten)]
        overrides: Overrides,
        /// Comma-separated pool variants to simulate.
        #[arg(long, default_value = "dense")]
        variant: String,
        /// Number of Monte Carlo trials.
        #[arg(long)]
        trials: Option<usize>,
    },
    /// Run the built-in invariant checks.
    Selfcheck,
}

const EXIT_NUMERICAL: u8 = 1;
const EXIT_CONFIG: u8 = 2;

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Bench { overrides, compare } => {
            RunConfig::load(&overrides).and_then(|cfg| commands::bench(&cfg, compare))
        }
        Command::Control {
            overrides,
            variant,
            trials,
        } => RunConfig::load(&overrides).and_then(|cfg| commands::control(&cfg, &variant, trials)),
        Command::Selfcheck => selfcheck::run(),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(match e {
                CliError::Config(_) => EXIT_CONFIG,
                CliError::Numerical(_) => EXIT_NUMERICAL,
            })
        }
    }
}

/// CLI failures split by exit code: 2 for config/IO, 1 for numerical.
#[derive(Debug)]
pub enum CliError {
    Config(String),
    Numerical(String),
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Config(m) | CliError::Numerical(m) => write!(f, "{m}"),
        }
    }
}

impl From<skygp::SkyGpError> for CliError {
    fn from(e: skygp::SkyGpError) -> Self {
        use skygp::SkyGpError::*;
        match &e {
            Load(_) | InvalidArgument(_) | DimensionMismatch { .. } => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Numerical(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Config(e.to_string())
    }
}

mod commands {
    use std::fs;
    use std::io::Write;

    use skygp::bench;
    use skygp::control::{self, ModelSource, TrialSetup};
    use skygp::pool::Mode;

    use crate::config::RunConfig;
    use crate::CliError;

    pub fn bench(cfg: &RunConfig, compare: bool) -> Result<(), CliError> {
        let ds = cfg.load_dataset()?;
        let out_dir = cfg.out_dir();
        fs::create_dir_all(out_dir)?;

        let report = bench::run_stream(
            &ds,
            &cfg.kernel,
            &cfg.pool,
            cfg.bound.as_ref(),
            cfg.per_step,
        )?;

        let echo = serde_json::json!({ "config": cfg, "report": report });
        let report_path = out_dir.join("bench_report.json");
        fs::write(&report_path, serde_json::to_string_pretty(&echo).unwrap())?;
        println!(
            "{}: smse={:.6} msll={:.4} t_pred={:.3e}s t_up={:.3e}s experts={} -> {}",
            report.dataset,
            report.smse,
            report.msll,
            report.mean_pred_time_s,
            report.mean_update_time_s,
            report.expert_count,
            report_path.display()
        );
        if let Some(aborted) = &report.aborted {
            return Err(CliError::Numerical(format!("run aborted early: {aborted}")));
        }

        if let Some(steps) = &report.per_step {
            let path = out_dir.join("bench_steps.csv");
            let mut f = fs::File::create(&path)?;
            writeln!(
                f,
                "step,mu,variance,y,cum_smse,cum_msll,pred_ns,update_ns,expert_count,eta"
            )?;
            for r in steps {
                writeln!(
                    f,
                    "{},{},{},{},{},{},{},{},{},{}",
                    r.step,
                    r.mu,
                    r.variance,
                    r.y,
                    r.cum_smse,
                    r.cum_msll,
                    r.pred_ns,
                    r.update_ns,
                    r.expert_count,
                    r.eta.map(|v| v.to_string()).unwrap_or_default()
                )?;
            }
            println!("per-step records -> {}", path.display());
        }

        if compare {
            let table = bench::compare_modes(&ds, &cfg.kernel, &cfg.pool)?;
            print!("{}", table.render_text());
            let path = out_dir.join("bench_compare.csv");
            fs::write(&path, table.to_csv())?;
            println!("comparison table -> {}", path.display());
        }
        Ok(())
    }

    pub fn control(cfg: &RunConfig, variants: &str, trials: Option<usize>) -> Result<(), CliError> {
        let out_dir = cfg.out_dir();
        fs::create_dir_all(out_dir)?;
        let controller = cfg.controller()?;
        let n_trials = trials.unwrap_or(cfg.control.n_trials);

        // shared learning-disabled baseline
        let mut pool_cfg = cfg.pool.clone();
        if pool_cfg.max_experts.is_none() {
            if let Some(total) = cfg.control.max_total_points {
                pool_cfg.max_experts = Some((total / pool_cfg.capacity).max(1));
            }
        }
        let baseline_setup = TrialSetup {
            controller: &controller,
            h: &cfg.kernel,
            pool_config: &pool_cfg,
            model: ModelSource::Zero,
            duration: cfg.control.duration,
            trajectory_stride: None,
            bound: None,
        };
        let baseline = control::monte_carlo(&baseline_setup, n_trials, cfg.seed)?;

        for variant in variants.split(',').map(str::trim).filter(|v| !v.is_empty()) {
            pool_cfg.mode = match variant {
                "fast" => Mode::Fast,
                "dense" => Mode::Dense,
                other => {
                    return Err(CliError::Config(format!(
                        "unknown variant '{other}' (expected fast or dense)"
                    )))
                }
            };
            let stride = cfg.per_step.then_some(cfg.control.trajectory_stride);
            let setup = TrialSetup {
                controller: &controller,
                h: &cfg.kernel,
                pool_config: &pool_cfg,
                model: ModelSource::Pool,
                duration: cfg.control.duration,
                trajectory_stride: stride,
                bound: cfg.bound.as_ref(),
            };
            let mut summary = control::monte_carlo(&setup, n_trials, cfg.seed)?;

            if cfg.per_step {
                for (i, trial) in summary.trials.iter().enumerate() {
                    if let Some(rows) = &trial.trajectory {
                        let path = out_dir.join(format!("control_{variant}_trial{i:03}.csv"));
                        let mut f = fs::File::create(&path)?;
                        writeln!(f, "t,q,q_d,z1,z2,mu,f,sigma,eta")?;
                        for r in rows {
                            writeln!(
                                f,
                                "{},{},{},{},{},{},{},{},{}",
                                r.t,
                                r.q,
                                r.q_d,
                                r.z1,
                                r.z2,
                                r.mu,
                                r.f,
                                r.sigma,
                                r.eta.map(|v| v.to_string()).unwrap_or_default()
                            )?;
                        }
                    }
                }
            }
            // trajectories are already on disk; keep the summary JSON light
            for trial in &mut summary.trials {
                trial.trajectory = None;
            }

            let echo = serde_json::json!({
                "config": cfg,
                "variant": variant,
                "learning": summary,
                "baseline_zero_model": {
                    "tracking_err": baseline.tracking_err,
                    "prediction_err": baseline.prediction_err,
                    "diverged_trials": baseline.diverged_trials,
                },
            });
            let path = out_dir.join(format!("control_{variant}_summary.json"));
            fs::write(&path, serde_json::to_string_pretty(&echo).unwrap())?;
            println!(
                "{variant}: median max |z| = {:.4} (baseline {:.4}), median max pred err = {:.4}, diverged {}/{} -> {}",
                summary.tracking_err.median,
                baseline.tracking_err.median,
                summary.prediction_err.median,
                summary.diverged_trials,
                n_trials,
                path.display()
            );
        }
        Ok(())
    }
}

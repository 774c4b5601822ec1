//! `magcap`: batch analyses of reciprocating magnetic capsule actuation.
//!
//! Log verbosity comes from `MAGCAP_LOG` (e.g. `MAGCAP_LOG=info`).

use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use magcap_core::commands;
use magcap_core::config::{ModeName, RunConfig};

#[derive(Parser)]
#[command(
    name = "magcap",
    version,
    about = "Reciprocating rotating magnetic actuation of capsule robots"
)]
struct Cli {
    /// TOML run configuration; flags override its values
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Random seed
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output CSV path (summary and sidecar files are written next to it)
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

/// Physical parameters shared by the subcommands.
#[derive(Args)]
struct Physical {
    /// Actuator-capsule distance, m
    #[arg(long)]
    d: Option<f64>,
    /// Actuator lead angle α, degrees
    #[arg(long)]
    alpha_deg: Option<f64>,
    /// Actuator roll angle β about the capsule axis, degrees
    #[arg(long)]
    beta_deg: Option<f64>,
    /// Reciprocation half-amplitude θar, degrees
    #[arg(long)]
    theta_ar_deg: Option<f64>,
    /// Actuator spin rate, degrees per second
    #[arg(long)]
    spin_rate_deg_s: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Force components over one actuator revolution
    ForceProfile {
        #[command(flatten)]
        phys: Physical,
        /// Samples per revolution (at least 8)
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Wall contact profiles and net twist per cycle for rotating modes
    RiskSweep {
        #[command(flatten)]
        phys: Physical,
        /// Comma-separated modes (crma, rrma)
        #[arg(long, value_delimiter = ',', default_value = "crma,rrma")]
        modes: Vec<ModeName>,
        /// Wall friction coefficient
        #[arg(long)]
        mu_wall: Option<f64>,
        /// Samples per cycle (multiple of 4, at least 64)
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Mean and peak normal force against the reciprocation angle
    NormalForceSweep {
        #[command(flatten)]
        phys: Physical,
        /// Grid step, degrees
        #[arg(long, default_value_t = 10.0)]
        step_deg: f64,
    },
    /// Randomized localization accuracy benchmark
    LocalizeBench {
        /// Number of trials
        #[arg(long)]
        trials: Option<usize>,
        /// Sensor noise per axis, T
        #[arg(long)]
        noise_sigma: Option<f64>,
        /// Also dump every trial's sensor reading to this CSV
        #[arg(long)]
        readings: Option<PathBuf>,
    },
    /// Closed-loop propulsion runs through the tube
    Propel {
        #[command(flatten)]
        phys: Physical,
        /// Comma-separated modes (dma, crma, rrma)
        #[arg(long, value_delimiter = ',', default_value = "dma,crma,rrma")]
        modes: Vec<ModeName>,
        /// Tube environment TOML file
        #[arg(long)]
        env: Option<PathBuf>,
        /// Seeds per mode
        #[arg(long)]
        seeds: Option<usize>,
        /// Sensor noise per axis, T
        #[arg(long)]
        noise_sigma: Option<f64>,
        /// Time step, s
        #[arg(long)]
        dt: Option<f64>,
        /// Time budget per run, s
        #[arg(long)]
        time_budget: Option<f64>,
        /// Use the true capsule pose instead of the simulated localizer
        #[arg(long)]
        ground_truth: bool,
        /// Directory for per-run trace CSVs
        #[arg(long)]
        trace_dir: Option<PathBuf>,
    },
    /// Deviation of the force from its mid-sweep value against θar
    ApproxCheck {
        #[command(flatten)]
        phys: Physical,
    },
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

impl Physical {
    fn apply(self, cfg: &mut RunConfig) {
        set(&mut cfg.d_m, self.d);
        set(&mut cfg.alpha_deg, self.alpha_deg);
        set(&mut cfg.beta_deg, self.beta_deg);
        set(&mut cfg.theta_ar_deg, self.theta_ar_deg);
        set(&mut cfg.spin_rate_deg_s, self.spin_rate_deg_s);
    }
}

fn output(out: Option<PathBuf>, default: &str) -> PathBuf {
    out.unwrap_or_else(|| PathBuf::from(default))
}

fn report(path: &Path) {
    println!("wrote {}", path.display());
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("MAGCAP_LOG", "warn")).init();
    let cli = Cli::parse();

    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("reading {}", path.display()))?,
        None => RunConfig::default(),
    };
    set(&mut cfg.seed, cli.seed);

    match cli.command {
        Command::ForceProfile { phys, samples } => {
            phys.apply(&mut cfg);
            set(&mut cfg.profile_samples, samples);
            let out = output(cli.out, "force_profile.csv");
            commands::cmd_force_profile(&cfg, &out)?;
            report(&out);
        }
        Command::RiskSweep {
            phys,
            modes,
            mu_wall,
            samples,
        } => {
            phys.apply(&mut cfg);
            set(&mut cfg.mu_wall, mu_wall);
            set(&mut cfg.risk_samples, samples);
            let out = output(cli.out, "risk_sweep.csv");
            for row in commands::cmd_risk_sweep(&cfg, &modes, &out)? {
                let amp = row.theta_ar_deg.map_or("-".to_string(), |d| format!("{d}°"));
                println!(
                    "{:>4} {:>4}: net twist {:+.3e} N",
                    row.mode.as_str(),
                    amp,
                    row.net_twist
                );
            }
            report(&out);
        }
        Command::NormalForceSweep { phys, step_deg } => {
            phys.apply(&mut cfg);
            let out = output(cli.out, "normal_force_sweep.csv");
            let (_, summary) = commands::cmd_normal_force_sweep(&cfg, step_deg, &out)?;
            println!(
                "largest mean normal force at θar = {}° (strictly increasing: {})",
                summary.recommended_theta_ar_deg, summary.strictly_increasing
            );
            report(&out);
        }
        Command::LocalizeBench {
            trials,
            noise_sigma,
            readings,
        } => {
            set(&mut cfg.n_trials, trials);
            set(&mut cfg.noise_sigma_t, noise_sigma);
            let out = output(cli.out, "localize_bench.csv");
            let (_, s) = commands::cmd_localize_bench(&cfg, &out, readings.as_deref())?;
            println!(
                "{} trials at σ = {:e} T: position {:.2} ± {:.2} mm (rms {:.2}), orientation {:.2} ± {:.2}°",
                s.n_trials,
                s.noise_sigma_t,
                s.mean_position_error_m * 1e3,
                s.std_position_error_m * 1e3,
                s.rms_position_error_m * 1e3,
                s.mean_orientation_error_deg,
                s.std_orientation_error_deg
            );
            report(&out);
        }
        Command::Propel {
            phys,
            modes,
            env,
            seeds,
            noise_sigma,
            dt,
            time_budget,
            ground_truth,
            trace_dir,
        } => {
            phys.apply(&mut cfg);
            if env.is_some() {
                cfg.environment = env;
            }
            set(&mut cfg.n_seeds, seeds);
            set(&mut cfg.noise_sigma_t, noise_sigma);
            set(&mut cfg.dt_s, dt);
            set(&mut cfg.time_budget_s, time_budget);
            if ground_truth {
                cfg.localizer = false;
            }
            let out = output(cli.out, "propel.csv");
            let (_, summary) = commands::cmd_propel(&cfg, &modes, &out, trace_dir.as_deref())?;
            println!("mode  success  avg speed (mm/s)");
            for s in summary {
                let speed = s.avg_speed_mm_s.map_or("-".to_string(), |v| format!("{v:.2}"));
                println!("{:<5} {:>3.0}%     {speed}", s.mode.as_str(), s.success_rate * 100.0);
            }
            report(&out);
        }
        Command::ApproxCheck { phys } => {
            phys.apply(&mut cfg);
            let out = output(cli.out, "approx_check.csv");
            commands::cmd_approx_check(&cfg, &out)?;
            report(&out);
        }
    }
    Ok(())
}

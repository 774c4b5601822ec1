//! Batch analyses behind the `magcap` subcommands.
//!
//! Every command writes a CSV to the requested path, optional summary CSVs
//! next to it (`<stem>.summary.csv`), and a sidecar `<out>.config.toml` that
//! records the format version, the command, its parameters and the effective
//! configuration. Nothing time- or host-dependent is written, so equal inputs
//! give byte-identical files.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::actuation::{approximation_error, force_profile, ActuationMode};
use crate::config::{ModeName, RunConfig};
use crate::error::{invalid, Result};
use crate::risk::{contact_profile, net_twist_per_cycle, normal_force_stats, recommend_reciprocation_angle};
use crate::sensing::{localization_trial_with_reading, write_readings_csv, FieldReading, SensorArray};
use crate::sim::{run_propulsion, FailureReason};

/// Version of the CSV layouts; bumped when a header changes.
pub const FORMAT_VERSION: u32 = 1;

/// Reciprocation angles swept by the risk analysis, degrees.
pub const RISK_GRID_DEG: [f64; 5] = [10.0, 30.0, 50.0, 70.0, 90.0];

/// Quadrature intervals per half sweep for the normal-force sweep.
const SWEEP_INTERVALS: usize = 4096;

#[derive(Serialize)]
struct Sidecar<'a> {
    format_version: u32,
    command: &'a str,
    params: BTreeMap<String, String>,
    config: &'a RunConfig,
}

fn write_sidecar(out: &Path, command: &str, cfg: &RunConfig, params: &[(&str, String)]) -> Result<PathBuf> {
    let path = sidecar_path(out);
    let sidecar = Sidecar {
        format_version: FORMAT_VERSION,
        command,
        params: params.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        config: cfg,
    };
    let text = toml::to_string(&sidecar).map_err(|e| crate::Error::Config(e.to_string()))?;
    std::fs::write(&path, text)?;
    Ok(path)
}

pub fn sidecar_path(out: &Path) -> PathBuf {
    let mut s = out.as_os_str().to_owned();
    s.push(".config.toml");
    PathBuf::from(s)
}

/// `dir/name.csv` → `dir/name.<tag>.csv`.
pub fn sibling_path(out: &Path, tag: &str) -> PathBuf {
    let stem = out
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    out.with_file_name(format!("{stem}.{tag}.csv"))
}

fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir)?;
    }
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
    for row in rows {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

fn mode_list(modes: &[ModeName]) -> String {
    modes.iter().map(|m| m.as_str()).collect::<Vec<_>>().join(",")
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ForceRow {
    pub theta_ax_deg: f64,
    pub f_p: f64,
    pub f_l_signed: f64,
    pub f_r: f64,
    pub f_total: f64,
    pub f_p_norm: f64,
    pub f_l_norm: f64,
    pub f_r_norm: f64,
    pub f_total_norm: f64,
}

/// Force components over one actuator revolution, raw (N) and divided by
/// the largest total force of the revolution.
pub fn cmd_force_profile(cfg: &RunConfig, out: &Path) -> Result<Vec<ForceRow>> {
    cfg.validate()?;
    let geometry = cfg.geometry()?;
    let profile = force_profile(&geometry, &cfg.moments()?, &geometry.omega_dc, cfg.profile_samples)?;
    let scale = profile.iter().map(|s| s.force.norm()).fold(0.0, f64::max);
    let rows: Vec<ForceRow> = profile
        .iter()
        .map(|s| {
            let d = &s.decomposition;
            let (f_p, f_l, f_r, f_t) = (
                d.signed_propulsive(),
                d.signed_lateral(),
                d.remainder.norm(),
                s.force.norm(),
            );
            ForceRow {
                theta_ax_deg: s.theta_ax.to_degrees(),
                f_p,
                f_l_signed: f_l,
                f_r,
                f_total: f_t,
                f_p_norm: f_p / scale,
                f_l_norm: f_l / scale,
                f_r_norm: f_r / scale,
                f_total_norm: f_t / scale,
            }
        })
        .collect();
    write_csv(out, &rows)?;
    write_sidecar(out, "force-profile", cfg, &[])?;
    Ok(rows)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ContactRow {
    pub mode: ModeName,
    pub theta_ar_deg: Option<f64>,
    pub cycle_fraction: f64,
    pub theta_ax_deg: f64,
    pub spin_sign: i8,
    pub normal_force: f64,
    pub signed_friction: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RiskRow {
    pub mode: ModeName,
    pub theta_ar_deg: Option<f64>,
    pub net_twist: f64,
    pub absolute_friction_impulse: f64,
    pub mean_friction_magnitude: f64,
}

/// Contact profiles and net twist per cycle for each rotating mode; RRMA is
/// swept over [`RISK_GRID_DEG`].
pub fn cmd_risk_sweep(cfg: &RunConfig, modes: &[ModeName], out: &Path) -> Result<Vec<RiskRow>> {
    cfg.validate()?;
    if modes.is_empty() {
        return invalid("risk sweep needs at least one mode");
    }
    if modes.contains(&ModeName::Dma) {
        return invalid("risk sweep covers rotating modes only (crma, rrma)");
    }
    let geometry = cfg.geometry()?;
    let moments = cfg.moments()?;

    let mut cases: Vec<(ModeName, Option<f64>, ActuationMode)> = Vec::new();
    for &m in modes {
        match m {
            ModeName::Rrma => {
                for deg in RISK_GRID_DEG {
                    cases.push((m, Some(deg), m.mode(deg)?));
                }
            }
            _ => cases.push((m, None, m.mode(cfg.theta_ar_deg)?)),
        }
    }

    let mut contacts = Vec::new();
    let mut summary = Vec::new();
    for (name, deg, mode) in cases {
        let profile = contact_profile(&geometry, &moments, &mode, cfg.mu_wall, cfg.risk_samples)?;
        contacts.extend(profile.samples.iter().map(|s| ContactRow {
            mode: name,
            theta_ar_deg: deg,
            cycle_fraction: s.cycle_fraction,
            theta_ax_deg: s.theta_ax.to_degrees(),
            spin_sign: s.spin_sign,
            normal_force: s.normal_force,
            signed_friction: s.signed_friction,
        }));
        summary.push(RiskRow {
            mode: name,
            theta_ar_deg: deg,
            net_twist: net_twist_per_cycle(&profile),
            absolute_friction_impulse: profile.absolute_friction_impulse(),
            mean_friction_magnitude: profile.mean_friction_magnitude(),
        });
    }
    write_csv(out, &contacts)?;
    write_csv(&sibling_path(out, "summary"), &summary)?;
    write_sidecar(out, "risk-sweep", cfg, &[("modes", mode_list(modes))])?;
    Ok(summary)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalForceRow {
    pub theta_ar_deg: f64,
    pub mean_normal_force: f64,
    pub max_normal_force: f64,
    /// Change in the mean when the quadrature is halved.
    pub refinement_delta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NormalForceSummary {
    pub recommended_theta_ar_deg: f64,
    pub strictly_increasing: bool,
}

/// Mean and peak wall normal force over a half reciprocation sweep on a
/// grid `0, step, 2·step, … ≤ 90°`.
pub fn cmd_normal_force_sweep(
    cfg: &RunConfig,
    step_deg: f64,
    out: &Path,
) -> Result<(Vec<NormalForceRow>, NormalForceSummary)> {
    cfg.validate()?;
    if !(1.0..=90.0).contains(&step_deg) {
        return invalid(format!("grid step must lie in [1, 90] degrees, got {step_deg}"));
    }
    let geometry = cfg.geometry()?;
    let moments = cfg.moments()?;
    let n = (90.0 / step_deg + 1e-9).floor() as usize;
    let mut rows = Vec::with_capacity(n + 1);
    // the zero-amplitude limit is the load at θax = π itself
    let rest = crate::actuation::force_at_phase(&geometry, &moments, &geometry.omega_dc, std::f64::consts::PI)?
        .decomposition
        .signed_lateral()
        .abs();
    rows.push(NormalForceRow {
        theta_ar_deg: 0.0,
        mean_normal_force: rest,
        max_normal_force: rest,
        refinement_delta: 0.0,
    });
    for k in 1..=n {
        let deg = step_deg * k as f64;
        let theta = deg.to_radians();
        let fine = normal_force_stats(&geometry, &moments, theta, SWEEP_INTERVALS)?;
        let coarse = normal_force_stats(&geometry, &moments, theta, SWEEP_INTERVALS / 2)?;
        rows.push(NormalForceRow {
            theta_ar_deg: deg,
            mean_normal_force: fine.mean,
            max_normal_force: fine.max,
            refinement_delta: (fine.mean - coarse.mean).abs(),
        });
    }
    let grid: Vec<f64> = rows[1..].iter().map(|r| r.theta_ar_deg.to_radians()).collect();
    let best = recommend_reciprocation_angle(&geometry, &moments, &grid)?;
    let best_deg = rows[1..]
        .iter()
        .find(|r| r.theta_ar_deg.to_radians() == best)
        .map_or(best.to_degrees(), |r| r.theta_ar_deg);
    let summary = NormalForceSummary {
        recommended_theta_ar_deg: best_deg,
        strictly_increasing: rows[1..]
            .windows(2)
            .all(|w| w[1].mean_normal_force > w[0].mean_normal_force),
    };
    if !summary.strictly_increasing {
        log::warn!(
            "mean normal force is not strictly increasing over the grid; largest at {}°",
            summary.recommended_theta_ar_deg
        );
    }
    write_csv(out, &rows)?;
    write_csv(&sibling_path(out, "summary"), &[summary])?;
    write_sidecar(out, "normal-force-sweep", cfg, &[("step_deg", step_deg.to_string())])?;
    Ok((rows, summary))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrialRow {
    pub trial: usize,
    pub position_error_m: f64,
    pub orientation_error_deg: f64,
    pub converged: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BenchSummary {
    pub n_trials: usize,
    pub noise_sigma_t: f64,
    pub rms_position_error_m: f64,
    pub mean_position_error_m: f64,
    pub std_position_error_m: f64,
    pub max_position_error_m: f64,
    pub mean_orientation_error_deg: f64,
    pub std_orientation_error_deg: f64,
    pub converged_fraction: f64,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    (mean, var.sqrt())
}

/// Randomized localization trials at the configured noise level. Each trial
/// draws its own seed from a stream seeded by `cfg.seed`. When `readings` is
/// given, every trial's reading is written there with `t` = trial index.
pub fn cmd_localize_bench(
    cfg: &RunConfig,
    out: &Path,
    readings: Option<&Path>,
) -> Result<(Vec<TrialRow>, BenchSummary)> {
    cfg.validate()?;
    let array = SensorArray::grid(cfg.noise_sigma_t)?;
    let moment = cfg.moments()?.capsule;
    let mut seeds = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut rows = Vec::with_capacity(cfg.n_trials);
    let mut dumped: Vec<FieldReading> = Vec::new();
    for trial in 0..cfg.n_trials {
        let (o, mut reading) = localization_trial_with_reading(&array, moment, seeds.next_u64())?;
        rows.push(TrialRow {
            trial,
            position_error_m: o.position_error,
            orientation_error_deg: o.orientation_error.to_degrees(),
            converged: o.converged,
            iterations: o.iterations,
        });
        if readings.is_some() {
            reading.timestamp = trial as f64;
            dumped.push(reading);
        }
    }
    let pos: Vec<f64> = rows.iter().map(|r| r.position_error_m).collect();
    let ang: Vec<f64> = rows.iter().map(|r| r.orientation_error_deg).collect();
    let (mp, sp) = mean_std(&pos);
    let (ma, sa) = mean_std(&ang);
    let summary = BenchSummary {
        n_trials: rows.len(),
        noise_sigma_t: cfg.noise_sigma_t,
        rms_position_error_m: (pos.iter().map(|e| e * e).sum::<f64>() / pos.len() as f64).sqrt(),
        mean_position_error_m: mp,
        std_position_error_m: sp,
        max_position_error_m: pos.iter().copied().fold(0.0, f64::max),
        mean_orientation_error_deg: ma,
        std_orientation_error_deg: sa,
        converged_fraction: rows.iter().filter(|r| r.converged).count() as f64 / rows.len() as f64,
    };
    write_csv(out, &rows)?;
    write_csv(&sibling_path(out, "summary"), &[summary])?;
    let mut params = vec![];
    if let Some(path) = readings {
        write_readings_csv(BufWriter::new(File::create(path)?), &dumped)?;
        params.push(("readings", path.display().to_string()));
    }
    write_sidecar(out, "localize-bench", cfg, &params)?;
    Ok((rows, summary))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PropelRow {
    pub mode: ModeName,
    pub seed: u64,
    pub success: bool,
    pub failure_reason: FailureReason,
    pub avg_speed_mm_s: f64,
    pub time_s: f64,
    pub distance_m: f64,
    pub final_twist_rad: f64,
    pub max_abs_twist_rad: f64,
    pub twist_compliance: f64,
}

/// Success rate and speed per mode, in the shape of a results table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PropelSummary {
    pub mode: ModeName,
    pub runs: usize,
    pub successes: usize,
    pub success_rate: f64,
    /// Mean over successful runs; empty when none succeeded.
    pub avg_speed_mm_s: Option<f64>,
    pub stalls: usize,
    pub volvulus: usize,
    pub timeouts: usize,
}

/// Closed-loop propulsion for each mode over seeds `cfg.seed..cfg.seed + n_seeds`.
/// Per-run traces go to `trace_dir` as `<mode>_seed<k>.csv` when given.
pub fn cmd_propel(
    cfg: &RunConfig,
    modes: &[ModeName],
    out: &Path,
    trace_dir: Option<&Path>,
) -> Result<(Vec<PropelRow>, Vec<PropelSummary>)> {
    cfg.validate()?;
    if modes.is_empty() {
        return invalid("propel needs at least one mode");
    }
    let env = cfg.tube()?;
    let sim = cfg.sim_config()?;
    if let Some(dir) = trace_dir {
        std::fs::create_dir_all(dir)?;
    }
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for &name in modes {
        let mode = name.mode(cfg.theta_ar_deg)?;
        let mut per_mode = Vec::new();
        for k in 0..cfg.n_seeds as u64 {
            let seed = cfg.seed.wrapping_add(k);
            let res = run_propulsion(&env, &mode, &sim, seed)?;
            if let Some(dir) = trace_dir {
                let path = dir.join(format!("{}_seed{seed}.csv", name.as_str()));
                res.write_trace_csv(BufWriter::new(File::create(path)?))?;
            }
            per_mode.push(PropelRow {
                mode: name,
                seed,
                success: res.success,
                failure_reason: res.failure_reason,
                avg_speed_mm_s: res.avg_speed * 1e3,
                time_s: res.time_elapsed,
                distance_m: res.distance,
                final_twist_rad: res.final_twist,
                max_abs_twist_rad: res.max_abs_twist,
                twist_compliance: res.twist_compliance,
            });
        }
        let ok: Vec<f64> = per_mode
            .iter()
            .filter(|r| r.success)
            .map(|r| r.avg_speed_mm_s)
            .collect();
        let count = |f: FailureReason| per_mode.iter().filter(|r| r.failure_reason == f).count();
        summary.push(PropelSummary {
            mode: name,
            runs: per_mode.len(),
            successes: ok.len(),
            success_rate: ok.len() as f64 / per_mode.len() as f64,
            avg_speed_mm_s: (!ok.is_empty()).then(|| ok.iter().sum::<f64>() / ok.len() as f64),
            stalls: count(FailureReason::Stall),
            volvulus: count(FailureReason::Volvulus),
            timeouts: count(FailureReason::Timeout),
        });
        rows.extend(per_mode);
    }
    write_csv(out, &rows)?;
    write_csv(&sibling_path(out, "summary"), &summary)?;
    let mut params = vec![("modes", mode_list(modes))];
    if let Some(dir) = trace_dir {
        params.push(("trace_dir", dir.display().to_string()));
    }
    write_sidecar(out, "propel", cfg, &params)?;
    Ok((rows, summary))
}

/// Reciprocation angles checked by the approximation sweep, degrees.
pub const APPROX_GRID_DEG: [f64; 11] = [1.0, 5.0, 10.0, 20.0, 30.0, 40.0, 50.0, 60.0, 70.0, 80.0, 90.0];

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ApproxRow {
    pub theta_ar_deg: f64,
    pub approximation_error: f64,
}

/// Worst relative force deviation from the `θax = π` value over each
/// reciprocation range.
pub fn cmd_approx_check(cfg: &RunConfig, out: &Path) -> Result<Vec<ApproxRow>> {
    cfg.validate()?;
    let geometry = cfg.geometry()?;
    let moments = cfg.moments()?;
    let rows = APPROX_GRID_DEG
        .iter()
        .map(|&deg| {
            Ok(ApproxRow {
                theta_ar_deg: deg,
                approximation_error: approximation_error(&geometry, &moments, &ActuationMode::rrma(deg.to_radians())?)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_csv(out, &rows)?;
    write_sidecar(out, "approx-check", cfg, &[])?;
    Ok(rows)
}

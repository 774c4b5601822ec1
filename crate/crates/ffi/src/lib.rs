//! C ABI for `magcap-core`.
//!
//! Every fallible function returns a [`MagcapStatus`]; on failure the message
//! is available from [`magcap_last_error`] on the same thread. Vectors are
//! passed as pointers to three contiguous doubles. Handles returned by the
//! `_new`/`_load` functions are owned by the caller and released with the
//! matching `_free`, which accepts NULL.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use magcap_core::actuation::{self, ActuationGeometry, ActuationMode, Moments};
use magcap_core::magnetics::{self, moment_magnitude_from_spec, DipoleSource, MagnetSpec, UnitVec3, Vec3};
use magcap_core::risk;
use magcap_core::sensing::{self, FieldReading, PoseEstimate, SensorArray};
use magcap_core::sim::{self, FailureReason, SimConfig, SimResult, TubeEnvironment};
use magcap_core::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MagcapStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    /// Field point too close to a dipole.
    Singularity = 3,
    /// A direction, plane or field configuration is degenerate.
    Degenerate = 4,
    Io = 5,
    Parse = 6,
    IndexOutOfRange = 7,
    /// A Rust panic was caught at the boundary.
    Panic = 8,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MagcapMode {
    Dma = 0,
    Crma = 1,
    Rrma = 2,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MagcapFailure {
    None = 0,
    Stall = 1,
    Volvulus = 2,
    Timeout = 3,
}

/// Actuator placement relative to the capsule. Angles in radians.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagcapGeometry {
    pub d: f64,
    pub alpha: f64,
    pub beta: f64,
    pub omega_dc: [f64; 3],
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagcapForceSample {
    pub theta_ax: f64,
    pub force: [f64; 3],
    pub f_p: f64,
    pub f_l: f64,
    pub f_r: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagcapPose {
    pub position: [f64; 3],
    pub moment_direction: [f64; 3],
    pub residual_rms: f64,
    pub iterations: u32,
    pub converged: bool,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagcapRunSummary {
    pub success: bool,
    pub failure: MagcapFailure,
    pub avg_speed: f64,
    pub time_elapsed: f64,
    pub distance: f64,
    pub final_twist: f64,
    pub max_abs_twist: f64,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MagcapTraceRow {
    pub t: f64,
    pub arc_length: f64,
    pub twist: f64,
    pub theta_ax_deg: f64,
    pub f_p: f64,
    pub f_l: f64,
    pub f_r: f64,
}

/// Sampled force profile over one actuator revolution.
pub struct MagcapForceProfile(Vec<MagcapForceSample>);

/// Sensor grid used for simulation and localization.
pub struct MagcapSensorArray(SensorArray);

/// Tube the capsule is propelled through.
pub struct MagcapEnvironment(TubeEnvironment);

/// Result of one closed-loop propulsion run.
pub struct MagcapRun(SimResult);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: String) {
    let c = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(c));
}

struct Failure(MagcapStatus, String);

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let status = match e {
            Error::Singularity { .. } => MagcapStatus::Singularity,
            Error::DegenerateOrientation(_) | Error::DegenerateGeometry(_) | Error::DegenerateField => {
                MagcapStatus::Degenerate
            }
            Error::StaleHeading(_) | Error::InvalidParameter(_) => MagcapStatus::InvalidArgument,
            Error::Io(_) | Error::Csv(_) => MagcapStatus::Io,
            Error::Config(_) => MagcapStatus::Parse,
        };
        Failure(status, e.to_string())
    }
}

type FfiResult = Result<(), Failure>;

fn guard(f: impl FnOnce() -> FfiResult) -> MagcapStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            MagcapStatus::Ok
        }
        Ok(Err(Failure(status, msg))) => {
            set_error(msg);
            status
        }
        Err(_) => {
            set_error("panic inside magcap".into());
            MagcapStatus::Panic
        }
    }
}

fn null(name: &str) -> Failure {
    Failure(MagcapStatus::NullPointer, format!("{name} is NULL"))
}

fn invalid(msg: impl Into<String>) -> Failure {
    Failure(MagcapStatus::InvalidArgument, msg.into())
}

unsafe fn deref<'a, T>(p: *const T, name: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(name))
}

unsafe fn read_vec(p: *const f64, name: &str) -> Result<Vec3, Failure> {
    if p.is_null() {
        return Err(null(name));
    }
    let s = std::slice::from_raw_parts(p, 3);
    Ok(Vec3::new(s[0], s[1], s[2]))
}

unsafe fn read_unit(p: *const f64, name: &str) -> Result<UnitVec3, Failure> {
    let v = read_vec(p, name)?;
    UnitVec3::try_new(v, 1e-12).ok_or_else(|| invalid(format!("{name} must be a nonzero finite vector")))
}

unsafe fn write_vec(p: *mut f64, v: &Vec3, name: &str) -> FfiResult {
    if p.is_null() {
        return Err(null(name));
    }
    std::slice::from_raw_parts_mut(p, 3).copy_from_slice(v.as_slice());
    Ok(())
}

unsafe fn write<T>(p: *mut T, value: T, name: &str) -> FfiResult {
    if p.is_null() {
        return Err(null(name));
    }
    p.write(value);
    Ok(())
}

fn geometry(g: &MagcapGeometry) -> Result<ActuationGeometry, Failure> {
    let w = Vec3::from(g.omega_dc);
    let w = UnitVec3::try_new(w, 1e-12).ok_or_else(|| invalid("omega_dc must be nonzero"))?;
    Ok(ActuationGeometry::new(g.d, g.alpha, g.beta, w)?)
}

fn mode(m: MagcapMode, theta_ar: f64) -> Result<ActuationMode, Failure> {
    Ok(match m {
        MagcapMode::Dma => ActuationMode::Dma,
        MagcapMode::Crma => ActuationMode::Crma,
        MagcapMode::Rrma => ActuationMode::rrma(theta_ar)?,
    })
}

fn moments(actuator: f64, capsule: f64) -> Result<Moments, Failure> {
    let m = Moments { actuator, capsule };
    m.validate()?;
    Ok(m)
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn magcap_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Message for the last failed call on this thread, or NULL after a
/// successful call. Valid until the next call into the library.
#[no_mangle]
pub extern "C" fn magcap_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(std::ptr::null(), |c| c.as_ptr()))
}

/// Dipole moments (A·m²) of the default actuator and capsule magnets.
///
/// # Safety
/// Both pointers must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn magcap_default_moments(actuator: *mut f64, capsule: *mut f64) -> MagcapStatus {
    guard(|| {
        write(
            actuator,
            moment_magnitude_from_spec(&MagnetSpec::default_actuator())?,
            "actuator",
        )?;
        write(
            capsule,
            moment_magnitude_from_spec(&MagnetSpec::default_capsule())?,
            "capsule",
        )
    })
}

/// Flux density (T) at offset `r` from a dipole.
///
/// # Safety
/// `r`, `direction` and `out` must point to three doubles.
#[no_mangle]
pub unsafe extern "C" fn magcap_dipole_field(
    r: *const f64,
    moment: f64,
    direction: *const f64,
    out: *mut f64,
) -> MagcapStatus {
    guard(|| {
        let b = magnetics::dipole_field(&read_vec(r, "r")?, moment, &read_unit(direction, "direction")?)?;
        write_vec(out, &b, "out")
    })
}

/// Force (N) on the capsule dipole at offset `r` from the actuator dipole.
///
/// # Safety
/// All pointers must point to three doubles.
#[no_mangle]
pub unsafe extern "C" fn magcap_dipole_force(
    r: *const f64,
    actuator_moment: f64,
    actuator_dir: *const f64,
    capsule_moment: f64,
    capsule_dir: *const f64,
    out: *mut f64,
) -> MagcapStatus {
    guard(|| {
        let f = magnetics::dipole_force(
            &read_vec(r, "r")?,
            actuator_moment,
            &read_unit(actuator_dir, "actuator_dir")?,
            capsule_moment,
            &read_unit(capsule_dir, "capsule_dir")?,
        )?;
        write_vec(out, &f, "out")
    })
}

/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn magcap_geometry_default(out: *mut MagcapGeometry) -> MagcapStatus {
    guard(|| {
        let g = ActuationGeometry::experiment_default();
        let value = MagcapGeometry {
            d: g.d,
            alpha: g.alpha,
            beta: g.beta,
            omega_dc: [g.omega_dc.x, g.omega_dc.y, g.omega_dc.z],
        };
        write(out, value, "out")
    })
}

/// Actuator position for a capsule at `capsule_position`.
///
/// # Safety
/// `geometry` must be valid; `capsule_position` and `out` point to three doubles.
#[no_mangle]
pub unsafe extern "C" fn magcap_actuator_position(
    capsule_position: *const f64,
    geometry: *const MagcapGeometry,
    out: *mut f64,
) -> MagcapStatus {
    guard(|| {
        let g = self::geometry(deref(geometry, "geometry")?)?;
        let p = actuation::actuator_position(&read_vec(capsule_position, "capsule_position")?, &g)?;
        write_vec(out, &p, "out")
    })
}

/// Samples the force over one actuator revolution with the capsule axis
/// along the desired heading.
///
/// # Safety
/// `geometry` must be valid and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn magcap_force_profile_new(
    geometry: *const MagcapGeometry,
    actuator_moment: f64,
    capsule_moment: f64,
    samples: usize,
    out: *mut *mut MagcapForceProfile,
) -> MagcapStatus {
    guard(|| {
        let g = self::geometry(deref(geometry, "geometry")?)?;
        let m = moments(actuator_moment, capsule_moment)?;
        let rows = actuation::force_profile(&g, &m, &g.omega_dc, samples)?
            .into_iter()
            .map(|s| MagcapForceSample {
                theta_ax: s.theta_ax,
                force: [s.force.x, s.force.y, s.force.z],
                f_p: s.decomposition.signed_propulsive(),
                f_l: s.decomposition.signed_lateral(),
                f_r: s.decomposition.remainder.norm(),
            })
            .collect();
        write(out, Box::into_raw(Box::new(MagcapForceProfile(rows))), "out")
    })
}

/// Number of samples, or 0 for NULL.
///
/// # Safety
/// `profile` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn magcap_force_profile_len(profile: *const MagcapForceProfile) -> usize {
    profile.as_ref().map_or(0, |p| p.0.len())
}

/// # Safety
/// `profile` must be a live handle and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn magcap_force_profile_get(
    profile: *const MagcapForceProfile,
    index: usize,
    out: *mut MagcapForceSample,
) -> MagcapStatus {
    guard(|| {
        let p = deref(profile, "profile")?;
        let s = p.0.get(index).ok_or_else(|| {
            Failure(
                MagcapStatus::IndexOutOfRange,
                format!("index {index} out of {}", p.0.len()),
            )
        })?;
        write(out, *s, "out")
    })
}

/// # Safety
/// `profile` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn magcap_force_profile_free(profile: *mut MagcapForceProfile) {
    if !profile.is_null() {
        drop(Box::from_raw(profile));
    }
}

/// Net wall friction per cycle (N) for a rotating mode. Zero means no
/// accumulated twist.
///
/// # Safety
/// `geometry` must be valid and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn magcap_net_twist(
    geometry: *const MagcapGeometry,
    actuator_moment: f64,
    capsule_moment: f64,
    mode: MagcapMode,
    theta_ar: f64,
    mu_wall: f64,
    samples: usize,
    out: *mut f64,
) -> MagcapStatus {
    guard(|| {
        let g = self::geometry(deref(geometry, "geometry")?)?;
        let m = moments(actuator_moment, capsule_moment)?;
        let p = risk::contact_profile(&g, &m, &self::mode(mode, theta_ar)?, mu_wall, samples)?;
        write(out, risk::net_twist_per_cycle(&p), "out")
    })
}

/// Mean wall normal force (N) over a reciprocation half sweep.
///
/// # Safety
/// `geometry` must be valid and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn magcap_mean_normal_force(
    geometry: *const MagcapGeometry,
    actuator_moment: f64,
    capsule_moment: f64,
    theta_ar: f64,
    out: *mut f64,
) -> MagcapStatus {
    guard(|| {
        let g = self::geometry(deref(geometry, "geometry")?)?;
        let m = moments(actuator_moment, capsule_moment)?;
        write(out, risk::mean_normal_force(&g, &m, theta_ar)?, "out")
    })
}

/// The 8×10 sensor grid with per-axis noise `noise_sigma` (T).
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn magcap_sensor_array_new(noise_sigma: f64, out: *mut *mut MagcapSensorArray) -> MagcapStatus {
    guard(|| {
        let a = SensorArray::grid(noise_sigma)?;
        write(out, Box::into_raw(Box::new(MagcapSensorArray(a))), "out")
    })
}

/// # Safety
/// `array` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn magcap_sensor_array_len(array: *const MagcapSensorArray) -> usize {
    array.as_ref().map_or(0, |a| a.0.len())
}

/// # Safety
/// `array` must be a live handle and `out` point to three doubles.
#[no_mangle]
pub unsafe extern "C" fn magcap_sensor_array_position(
    array: *const MagcapSensorArray,
    index: usize,
    out: *mut f64,
) -> MagcapStatus {
    guard(|| {
        let a = &deref(array, "array")?.0;
        let p = a.positions.get(index).ok_or_else(|| {
            Failure(
                MagcapStatus::IndexOutOfRange,
                format!("index {index} out of {}", a.len()),
            )
        })?;
        write_vec(out, p, "out")
    })
}

/// # Safety
/// `array` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn magcap_sensor_array_free(array: *mut MagcapSensorArray) {
    if !array.is_null() {
        drop(Box::from_raw(array));
    }
}

/// Noisy readings of a capsule dipole, written sensor by sensor as
/// `bx, by, bz` into `out`, which holds `3 * len` doubles.
///
/// # Safety
/// `array` must be live, the vectors point to three doubles and `out` to
/// `out_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn magcap_simulate_reading(
    array: *const MagcapSensorArray,
    capsule_position: *const f64,
    moment: f64,
    direction: *const f64,
    seed: u64,
    out: *mut f64,
    out_len: usize,
) -> MagcapStatus {
    guard(|| {
        let a = &deref(array, "array")?.0;
        if out.is_null() {
            return Err(null("out"));
        }
        if out_len != 3 * a.len() {
            return Err(invalid(format!("out must hold {} doubles, got {out_len}", 3 * a.len())));
        }
        let capsule = DipoleSource::new(
            read_vec(capsule_position, "capsule_position")?,
            moment,
            read_unit(direction, "direction")?,
        )?;
        let reading = sensing::simulate_reading(a, &capsule, None, &Vec3::zeros(), 0.0, seed)?;
        let dst = std::slice::from_raw_parts_mut(out, out_len);
        for (chunk, v) in dst.chunks_exact_mut(3).zip(&reading.values) {
            chunk.copy_from_slice(v.as_slice());
        }
        Ok(())
    })
}

/// Fits a capsule pose of known moment magnitude to `3 * len` readings.
///
/// # Safety
/// `array` must be live, `values` hold `values_len` doubles, the guesses
/// point to three doubles and `out` be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn magcap_localize(
    array: *const MagcapSensorArray,
    values: *const f64,
    values_len: usize,
    moment: f64,
    guess_position: *const f64,
    guess_direction: *const f64,
    out: *mut MagcapPose,
) -> MagcapStatus {
    guard(|| {
        let a = &deref(array, "array")?.0;
        if values.is_null() {
            return Err(null("values"));
        }
        if values_len != 3 * a.len() {
            return Err(invalid(format!(
                "values must hold {} doubles, got {values_len}",
                3 * a.len()
            )));
        }
        let reading = FieldReading {
            values: std::slice::from_raw_parts(values, values_len)
                .chunks_exact(3)
                .map(|c| Vec3::new(c[0], c[1], c[2]))
                .collect(),
            timestamp: 0.0,
        };
        let dir = read_unit(guess_direction, "guess_direction")?;
        let guess = PoseEstimate::new(read_vec(guess_position, "guess_position")?, dir, dir);
        let fit = sensing::localize_capsule(a, &reading, moment, &guess)?;
        let pose = MagcapPose {
            position: fit.position.into(),
            moment_direction: fit.moment_direction.into_inner().into(),
            residual_rms: fit.residual_rms,
            iterations: fit.iterations as u32,
            converged: fit.converged,
        };
        write(out, pose, "out")
    })
}

/// The built-in straight tube.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn magcap_environment_default(out: *mut *mut MagcapEnvironment) -> MagcapStatus {
    guard(|| {
        write(
            out,
            Box::into_raw(Box::new(MagcapEnvironment(sim::default_environment()))),
            "out",
        )
    })
}

/// Loads a tube description from a TOML file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn magcap_environment_load(
    path: *const c_char,
    out: *mut *mut MagcapEnvironment,
) -> MagcapStatus {
    guard(|| {
        if path.is_null() {
            return Err(null("path"));
        }
        let path = CStr::from_ptr(path)
            .to_str()
            .map_err(|_| invalid("path is not UTF-8"))?;
        let env = TubeEnvironment::load(Path::new(path))?;
        write(out, Box::into_raw(Box::new(MagcapEnvironment(env))), "out")
    })
}

/// Centerline length (m), or 0 for NULL.
///
/// # Safety
/// `env` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn magcap_environment_length(env: *const MagcapEnvironment) -> f64 {
    env.as_ref().map_or(0.0, |e| e.0.length())
}

/// # Safety
/// `env` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn magcap_environment_free(env: *mut MagcapEnvironment) {
    if !env.is_null() {
        drop(Box::from_raw(env));
    }
}

/// Runs closed-loop propulsion with default settings. With `localizer`
/// false the controller uses the true capsule pose.
///
/// # Safety
/// `env` must be live and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn magcap_run_new(
    env: *const MagcapEnvironment,
    mode: MagcapMode,
    theta_ar: f64,
    seed: u64,
    localizer: bool,
    out: *mut *mut MagcapRun,
) -> MagcapStatus {
    guard(|| {
        let env = &deref(env, "env")?.0;
        let config = SimConfig {
            localizer,
            ..SimConfig::default()
        };
        let result = sim::run_propulsion(env, &self::mode(mode, theta_ar)?, &config, seed)?;
        write(out, Box::into_raw(Box::new(MagcapRun(result))), "out")
    })
}

/// # Safety
/// `run` must be live and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn magcap_run_summary(run: *const MagcapRun, out: *mut MagcapRunSummary) -> MagcapStatus {
    guard(|| {
        let r = &deref(run, "run")?.0;
        let summary = MagcapRunSummary {
            success: r.success,
            failure: match r.failure_reason {
                FailureReason::None => MagcapFailure::None,
                FailureReason::Stall => MagcapFailure::Stall,
                FailureReason::Volvulus => MagcapFailure::Volvulus,
                FailureReason::Timeout => MagcapFailure::Timeout,
            },
            avg_speed: r.avg_speed,
            time_elapsed: r.time_elapsed,
            distance: r.distance,
            final_twist: r.final_twist,
            max_abs_twist: r.max_abs_twist,
        };
        write(out, summary, "out")
    })
}

/// Number of recorded trace rows, or 0 for NULL.
///
/// # Safety
/// `run` must be NULL or a live handle.
#[no_mangle]
pub unsafe extern "C" fn magcap_run_trace_len(run: *const MagcapRun) -> usize {
    run.as_ref().map_or(0, |r| r.0.trace.len())
}

/// # Safety
/// `run` must be live and `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn magcap_run_trace_get(
    run: *const MagcapRun,
    index: usize,
    out: *mut MagcapTraceRow,
) -> MagcapStatus {
    guard(|| {
        let trace = &deref(run, "run")?.0.trace;
        let row = trace.get(index).ok_or_else(|| {
            Failure(
                MagcapStatus::IndexOutOfRange,
                format!("index {index} out of {}", trace.len()),
            )
        })?;
        let value = MagcapTraceRow {
            t: row.t,
            arc_length: row.arc_length_m,
            twist: row.twist_rad,
            theta_ax_deg: row.theta_ax_deg,
            f_p: row.f_p,
            f_l: row.f_l_signed,
            f_r: row.f_r,
        };
        write(out, value, "out")
    })
}

/// # Safety
/// `run` must be NULL or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn magcap_run_free(run: *mut MagcapRun) {
    if !run.is_null() {
        drop(Box::from_raw(run));
    }
}

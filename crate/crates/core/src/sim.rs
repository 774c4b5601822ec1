//! Quasi-static closed-loop propulsion of the capsule through a tube.
//!
//! Each step senses the capsule, fits its pose, re-plans the actuator around
//! the estimate and advances the true capsule under the resulting magnetic
//! force. Motion is overdamped: net axial force over a viscous coefficient
//! gives speed. Wall friction from the lateral force twists the tube while the
//! capsule spins, and accumulated twist past a threshold counts as volvulus.

use std::io::Write;
use std::path::Path;

use nalgebra::Unit;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::actuation::{
    capsule_moment_direction, spin_phase, ActuationGeometry, ActuationMode, ActuatorCommand, ForceDecomposition,
    Moments,
};
use crate::error::{invalid, Error, Result};
use crate::magnetics::{
    dipole_field, dipole_force, moment_magnitude_from_spec, DipoleSource, MagnetSpec, UnitVec3, Vec3,
};
use crate::sensing::{
    estimate_heading, localize_capsule, simulate_reading_with_rng, subtract_actuator, PoseEstimate, SensorArray,
    DEFAULT_NOISE_SIGMA,
};

/// Capsule shell radius, m.
pub const CAPSULE_RADIUS: f64 = 0.008;

/// Tube geometry and tissue parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct TubeEnvironment {
    /// Piecewise-linear centerline, m.
    pub centerline: Vec<Vec3>,
    pub inner_radius: f64,
    pub mu_static: f64,
    pub mu_kinetic: f64,
    /// Kinetic friction multiplier while the capsule spins.
    pub rotation_friction_factor: f64,
    /// Constant axial resistance at the advancing front, N.
    pub hoop_resistance: f64,
    /// Tube twist per unit friction impulse, rad/(N·s).
    pub twist_compliance: f64,
    pub volvulus_threshold: f64,
    /// Capsule weight on the lower wall, N.
    pub gravity_load: f64,
    /// Net axial force per unit speed, N·s/m.
    pub viscous_coefficient: f64,
}

/// Straight 155 mm tube 8 cm above the middle of the sensor grid, running
/// along +x, with calibrated tissue constants.
pub fn default_environment() -> TubeEnvironment {
    TubeEnvironment {
        centerline: vec![Vec3::new(0.1325, 0.27, 0.08), Vec3::new(0.2875, 0.27, 0.08)],
        inner_radius: 0.009,
        mu_static: 1.0,
        mu_kinetic: 0.5,
        rotation_friction_factor: 0.3,
        hoop_resistance: 0.003,
        twist_compliance: 20.0,
        volvulus_threshold: std::f64::consts::TAU,
        gravity_load: 0.005,
        viscous_coefficient: 0.8,
    }
}

impl TubeEnvironment {
    pub fn validate(&self) -> Result<()> {
        if self.centerline.len() < 2 {
            return invalid("centerline needs at least 2 points");
        }
        if self.centerline.windows(2).any(|w| !((w[1] - w[0]).norm() > 1e-9)) {
            return invalid("centerline has a zero-length segment");
        }
        if self.centerline.iter().any(|p| !p.iter().all(|c| c.is_finite())) {
            return invalid("centerline has non-finite coordinates");
        }
        if !(self.inner_radius > CAPSULE_RADIUS) {
            return invalid(format!(
                "inner radius {} m does not fit the {CAPSULE_RADIUS} m capsule",
                self.inner_radius
            ));
        }
        if !(self.mu_kinetic > 0.0 && self.mu_kinetic <= self.mu_static) {
            return invalid("friction needs 0 < mu_kinetic <= mu_static");
        }
        if !(self.rotation_friction_factor > 0.0 && self.rotation_friction_factor <= 1.0) {
            return invalid("rotation friction factor outside (0, 1]");
        }
        if !(self.volvulus_threshold > 0.0) {
            return invalid("volvulus threshold must be positive");
        }
        if !(self.hoop_resistance >= 0.0 && self.twist_compliance >= 0.0 && self.gravity_load >= 0.0) {
            return invalid("hoop resistance, twist compliance and gravity load must be non-negative");
        }
        if !(self.viscous_coefficient > 0.0) {
            return invalid("viscous coefficient must be positive");
        }
        Ok(())
    }

    pub fn length(&self) -> f64 {
        self.centerline.windows(2).map(|w| (w[1] - w[0]).norm()).sum()
    }

    /// Centerline point and unit tangent at arc length `s` (clamped to the
    /// tube). At a vertex the outgoing segment's tangent is used.
    pub fn point_at(&self, s: f64) -> (Vec3, UnitVec3) {
        let mut remaining = s.max(0.0);
        let last = self.centerline.len() - 2;
        for (i, w) in self.centerline.windows(2).enumerate() {
            let seg = w[1] - w[0];
            let len = seg.norm();
            if remaining < len || i == last {
                let u = remaining.min(len);
                let dir = Unit::new_unchecked(seg / len);
                return (w[0] + dir.as_ref() * u, dir);
            }
            remaining -= len;
        }
        unreachable!("centerline validated to have a segment")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let file: EnvironmentFile = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let env = Self::from(file);
        env.validate()?;
        Ok(env)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&EnvironmentFile::from(self)).expect("environment serializes")
    }
}

/// On-disk form of [`TubeEnvironment`].
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvironmentFile {
    pub centerline: Vec<[f64; 3]>,
    pub inner_radius_m: f64,
    pub mu_static: f64,
    pub mu_kinetic: f64,
    pub rotation_friction_factor: f64,
    pub hoop_resistance_n: f64,
    pub twist_compliance: f64,
    pub volvulus_threshold_rad: f64,
    pub gravity_load_n: f64,
    #[serde(default = "default_viscous")]
    pub viscous_coefficient_n_s_per_m: f64,
}

fn default_viscous() -> f64 {
    default_environment().viscous_coefficient
}

impl From<EnvironmentFile> for TubeEnvironment {
    fn from(f: EnvironmentFile) -> Self {
        Self {
            centerline: f.centerline.iter().map(|p| Vec3::from(*p)).collect(),
            inner_radius: f.inner_radius_m,
            mu_static: f.mu_static,
            mu_kinetic: f.mu_kinetic,
            rotation_friction_factor: f.rotation_friction_factor,
            hoop_resistance: f.hoop_resistance_n,
            twist_compliance: f.twist_compliance,
            volvulus_threshold: f.volvulus_threshold_rad,
            gravity_load: f.gravity_load_n,
            viscous_coefficient: f.viscous_coefficient_n_s_per_m,
        }
    }
}

impl From<&TubeEnvironment> for EnvironmentFile {
    fn from(e: &TubeEnvironment) -> Self {
        Self {
            centerline: e.centerline.iter().map(|p| [p.x, p.y, p.z]).collect(),
            inner_radius_m: e.inner_radius,
            mu_static: e.mu_static,
            mu_kinetic: e.mu_kinetic,
            rotation_friction_factor: e.rotation_friction_factor,
            hoop_resistance_n: e.hoop_resistance,
            twist_compliance: e.twist_compliance,
            volvulus_threshold_rad: e.volvulus_threshold,
            gravity_load_n: e.gravity_load,
            viscous_coefficient_n_s_per_m: e.viscous_coefficient,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimState {
    pub arc_length: f64,
    /// Tube tangent at `arc_length`.
    pub heading: UnitVec3,
    pub twist: f64,
    pub time: f64,
    /// Completed steps; time is `steps·dt`.
    pub steps: u64,
    pub stalled_steps: u32,
    pub volvulus: bool,
    /// Whether the capsule did not advance on the last step.
    pub at_rest: bool,
    /// Last well-defined capsule moment direction.
    pub capsule_moment: Option<UnitVec3>,
}

impl SimState {
    pub fn start(env: &TubeEnvironment) -> Self {
        Self {
            arc_length: 0.0,
            heading: env.point_at(0.0).1,
            twist: 0.0,
            time: 0.0,
            steps: 0,
            stalled_steps: 0,
            volvulus: false,
            at_rest: true,
            capsule_moment: None,
        }
    }
}

/// Force components acting on the capsule during one step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactForces {
    /// Along the tube tangent, N.
    pub propulsive: f64,
    /// Across plane U, signed, N.
    pub lateral: f64,
    /// Magnitude of the remaining component, N.
    pub remainder: f64,
    pub spin_sign: i8,
}

/// Magnetic force on the true capsule from the commanded actuator, split
/// against the local tube tangent. Returns the capsule moment used.
pub fn contact_forces(
    state: &SimState,
    env: &TubeEnvironment,
    command: &ActuatorCommand,
    moments: &Moments,
) -> Result<(ContactForces, UnitVec3)> {
    let (p_c, tangent) = env.point_at(state.arc_length);
    let m_a = command.moment_direction()?;
    let r = p_c - command.position;
    let b_c = dipole_field(&r, moments.actuator, &m_a)?;
    let m_c = match (capsule_moment_direction(&b_c, &tangent), state.capsule_moment) {
        (Ok(m), _) => m,
        (Err(Error::DegenerateField), Some(prev)) => prev,
        (Err(e), _) => return Err(e),
    };
    let f = dipole_force(&r, moments.actuator, &m_a, moments.capsule, &m_c)?;
    let split = ForceDecomposition::new(&f, &tangent, &-r)?;
    Ok((
        ContactForces {
            propulsive: split.signed_propulsive(),
            lateral: split.signed_lateral(),
            remainder: split.remainder.norm(),
            spin_sign: command.spin_sign(),
        },
        m_c,
    ))
}

/// Friction coefficient for the coming step.
pub fn friction_coefficient(env: &TubeEnvironment, at_rest: bool, spin_sign: i8) -> f64 {
    if spin_sign != 0 {
        env.mu_kinetic * env.rotation_friction_factor
    } else if at_rest {
        env.mu_static
    } else {
        env.mu_kinetic
    }
}

/// Advances the state under given forces.
pub fn advance(state: &SimState, env: &TubeEnvironment, forces: &ContactForces, dt: f64) -> Result<SimState> {
    if !(dt > 1e-4 && dt <= 0.1) {
        return invalid(format!("time step {dt} s outside (1e-4, 0.1]"));
    }
    let mut next = *state;
    next.steps += 1;
    next.time = next.steps as f64 * dt;

    let normal = forces.lateral.abs() + env.gravity_load;
    let resistance = friction_coefficient(env, state.at_rest, forces.spin_sign) * normal + env.hoop_resistance;
    if forces.propulsive > resistance {
        let speed = (forces.propulsive - resistance) / env.viscous_coefficient;
        next.arc_length = (state.arc_length + speed * dt).min(env.length());
        next.stalled_steps = 0;
        next.at_rest = false;
    } else {
        next.stalled_steps += 1;
        next.at_rest = true;
    }

    let friction = f64::from(forces.spin_sign) * env.mu_kinetic * forces.lateral.abs();
    next.twist += env.twist_compliance * friction * dt;
    if next.twist.abs() >= env.volvulus_threshold {
        next.volvulus = true;
    }
    next.heading = env.point_at(next.arc_length).1;
    Ok(next)
}

/// One simulation step: force from the command, then [`advance`].
pub fn step(
    state: &SimState,
    env: &TubeEnvironment,
    command: &ActuatorCommand,
    moments: &Moments,
    dt: f64,
) -> Result<(SimState, ContactForces)> {
    let (forces, m_c) = contact_forces(state, env, command, moments)?;
    let mut next = advance(state, env, &forces, dt)?;
    next.capsule_moment = Some(m_c);
    Ok((next, forces))
}

/// Re-plans the actuator around the pose estimate: the desired capsule axis
/// follows the estimated heading and the relative placement stays fixed.
pub fn closed_loop_update(
    estimate: &PoseEstimate,
    geometry: &ActuationGeometry,
    mode: &ActuationMode,
    t: f64,
    spin_rate: f64,
) -> Result<ActuatorCommand> {
    let phase = spin_phase(mode, t, spin_rate)?;
    ActuatorCommand::plan(
        &estimate.position,
        &geometry.with_heading(estimate.heading),
        phase,
        spin_rate,
    )
}

/// Settings for [`run_propulsion`] other than the environment and mode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub time_budget: f64,
    /// Consecutive non-advancing steps that end the run.
    pub stall_limit: u32,
    /// Fit the pose from simulated sensor readings; otherwise use ground truth.
    pub localizer: bool,
    pub noise_sigma: f64,
    /// Actuator placement; its heading is replaced every step.
    pub geometry: ActuationGeometry,
    pub moments: Moments,
    /// Actuator spin rate, rad/s.
    pub spin_rate: f64,
    /// Log-normal spread of the tube's twist compliance between seeds.
    pub specimen_spread: f64,
    /// Position gain of the alpha-beta tracking filter on pose estimates.
    pub track_gain: f64,
    /// Filtered positions averaged into one heading-track point.
    pub heading_decimation: usize,
    /// Track points kept for the heading fit.
    pub heading_window: usize,
    /// Net travel the heading fit spans, m.
    pub heading_baseline: f64,
    /// Steps between recorded trace rows.
    pub record_every: usize,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 0.01,
            time_budget: 300.0,
            stall_limit: 500,
            localizer: true,
            noise_sigma: DEFAULT_NOISE_SIGMA,
            geometry: ActuationGeometry::experiment_default(),
            moments: Moments {
                actuator: moment_magnitude_from_spec(&MagnetSpec::default_actuator()).expect("valid default"),
                capsule: moment_magnitude_from_spec(&MagnetSpec::default_capsule()).expect("valid default"),
            },
            spin_rate: std::f64::consts::TAU,
            specimen_spread: 0.3,
            track_gain: 0.02,
            heading_decimation: 50,
            heading_window: 60,
            heading_baseline: 0.01,
            record_every: 10,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 1e-4 && self.dt <= 0.1) {
            return invalid(format!("time step {} s outside (1e-4, 0.1]", self.dt));
        }
        if !(self.time_budget > 0.0 && self.time_budget.is_finite()) {
            return invalid("time budget must be positive");
        }
        if self.stall_limit == 0 {
            return invalid("stall limit must be at least 1");
        }
        if !(self.noise_sigma >= 0.0) {
            return invalid("noise sigma must be non-negative");
        }
        if !(self.spin_rate > 0.0) {
            return invalid("spin rate must be positive");
        }
        if !(self.specimen_spread >= 0.0 && self.specimen_spread < 2.0) {
            return invalid("specimen spread outside [0, 2)");
        }
        if self.heading_decimation == 0 || self.heading_window < 4 || self.record_every == 0 {
            return invalid("heading decimation and record interval must be >= 1, heading window >= 4");
        }
        if !(self.track_gain > 0.0 && self.track_gain <= 1.0) {
            return invalid("track gain outside (0, 1]");
        }
        if !(self.heading_baseline >= 2e-3) {
            return invalid("heading baseline must be at least 2 mm");
        }
        self.geometry.validate()?;
        self.moments.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureReason {
    None,
    Stall,
    Volvulus,
    Timeout,
}

impl FailureReason {
    pub fn name(&self) -> &'static str {
        match self {
            Self::None => "none",
            Self::Stall => "stall",
            Self::Volvulus => "volvulus",
            Self::Timeout => "timeout",
        }
    }
}

/// One recorded step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub t: f64,
    pub arc_length_m: f64,
    pub twist_rad: f64,
    pub theta_ax_deg: f64,
    pub f_p: f64,
    pub f_l_signed: f64,
    pub f_r: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub success: bool,
    pub failure_reason: FailureReason,
    /// Distance covered over elapsed time, m/s.
    pub avg_speed: f64,
    pub time_elapsed: f64,
    pub distance: f64,
    pub final_twist: f64,
    pub max_abs_twist: f64,
    /// Twist compliance of this seed's specimen.
    pub twist_compliance: f64,
    /// Mean distance between raw pose fits and the true capsule position, m.
    pub mean_localization_error: f64,
    /// Mean distance between the filtered track and the true position, m.
    pub mean_tracking_error: f64,
    pub trace: Vec<TraceRow>,
}

impl SimResult {
    pub fn write_trace_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        for row in &self.trace {
            w.serialize(row)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Constant-velocity (alpha-beta) filter over noisy position fits.
struct TrackFilter {
    position: Vec3,
    velocity: Vec3,
    alpha: f64,
    beta: f64,
}

impl TrackFilter {
    fn new(start: Vec3, alpha: f64) -> Self {
        Self {
            position: start,
            velocity: Vec3::zeros(),
            alpha,
            // critically damped pairing
            beta: alpha * alpha / (2.0 - alpha),
        }
    }

    fn update(&mut self, z: &Vec3, dt: f64) -> Vec3 {
        let predicted = self.position + self.velocity * dt;
        let innovation = z - predicted;
        self.position = predicted + innovation * self.alpha;
        self.velocity += innovation * (self.beta / dt);
        self.position
    }
}

struct HeadingTracker {
    history: Vec<(f64, Vec3)>,
    sum: Vec3,
    count: usize,
    decimation: usize,
    window: usize,
    baseline: f64,
    heading: UnitVec3,
}

impl HeadingTracker {
    fn push(&mut self, t: f64, p: Vec3) {
        self.sum += p;
        self.count += 1;
        if self.count < self.decimation {
            return;
        }
        self.history.push((t, self.sum / self.count as f64));
        self.sum = Vec3::zeros();
        self.count = 0;
        if self.history.len() > self.window {
            self.history.remove(0);
        }
        // shortest recent stretch that spans the baseline
        let end = self.history[self.history.len() - 1].1;
        let Some(start) = (0..self.history.len().saturating_sub(3))
            .rev()
            .find(|&i| (end - self.history[i].1).norm() >= self.baseline)
        else {
            log::trace!("t = {t:.2}: holding heading, track shorter than baseline");
            return;
        };
        let recent = &self.history[start..];
        match estimate_heading(recent, recent.len()) {
            Ok(h) => self.heading = h,
            Err(Error::StaleHeading(why)) => log::trace!("t = {t:.2}: holding heading: {why}"),
            Err(e) => log::debug!("t = {t:.2}: holding heading: {e}"),
        }
    }
}

/// Runs one closed-loop propulsion trial until the capsule leaves the tube
/// or the run fails.
pub fn run_propulsion(env: &TubeEnvironment, mode: &ActuationMode, config: &SimConfig, seed: u64) -> Result<SimResult> {
    env.validate()?;
    mode.validate()?;
    config.validate()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let specimen: f64 = StandardNormal.sample(&mut rng);
    let mut env = env.clone();
    env.twist_compliance *= (config.specimen_spread * specimen).exp();

    let array = SensorArray::grid(config.noise_sigma)?;
    let length = env.length();
    let mut state = SimState::start(&env);
    let (p0, t0) = env.point_at(0.0);

    // the insertion pose is known
    let mut estimate = PoseEstimate::new(p0, t0, t0);
    let mut command = closed_loop_update(&estimate, &config.geometry, mode, 0.0, config.spin_rate)?;
    let b0 = dipole_field(
        &(p0 - command.position),
        config.moments.actuator,
        &command.moment_direction()?,
    )?;
    let m_c0 = capsule_moment_direction(&b0, &t0)?;
    state.capsule_moment = Some(m_c0);
    estimate.moment_direction = m_c0;

    // raw fit, kept as the next initial guess; the plan uses the filtered track
    let mut fit_pose = estimate;
    let mut filter = TrackFilter::new(p0, config.track_gain);
    let mut tracker = HeadingTracker {
        history: vec![(0.0, p0)],
        sum: Vec3::zeros(),
        count: 0,
        decimation: config.heading_decimation,
        window: config.heading_window,
        baseline: config.heading_baseline,
        heading: t0,
    };
    let mut track_error_sum = 0.0;
    let mut trace = Vec::new();
    let mut loc_error_sum = 0.0;
    let mut loc_count = 0usize;
    let mut max_abs_twist: f64 = 0.0;
    let max_steps = (config.time_budget / config.dt).ceil() as u64;

    let failure = loop {
        let t = state.steps as f64 * config.dt;
        let (p_true, tangent) = env.point_at(state.arc_length);

        if config.localizer {
            let m_c = state.capsule_moment.unwrap_or(m_c0);
            let capsule = DipoleSource::new(p_true, config.moments.capsule, m_c)?;
            let actuator = DipoleSource::new(command.position, config.moments.actuator, command.moment_direction()?)?;
            let reading = simulate_reading_with_rng(&array, &capsule, Some(&actuator), &Vec3::zeros(), t, &mut rng)?;
            let clean = subtract_actuator(&array, &reading, Some(&actuator), &Vec3::zeros())?;
            match localize_capsule(&array, &clean, config.moments.capsule, &fit_pose) {
                Ok(fit) if fit.converged => fit_pose = fit,
                Ok(_) => log::debug!("t = {t:.2}: localizer did not converge, holding estimate"),
                Err(e) => log::debug!("t = {t:.2}: localizer failed ({e}), holding estimate"),
            }
            estimate.position = filter.update(&fit_pose.position, config.dt);
            tracker.push(t, estimate.position);
            estimate.heading = tracker.heading;
            estimate.moment_direction = fit_pose.moment_direction;
            estimate.residual_rms = fit_pose.residual_rms;
        } else {
            fit_pose.position = p_true;
            estimate.position = p_true;
            estimate.heading = tangent;
        }
        loc_error_sum += (fit_pose.position - p_true).norm();
        track_error_sum += (estimate.position - p_true).norm();
        loc_count += 1;

        match closed_loop_update(&estimate, &config.geometry, mode, t, config.spin_rate) {
            Ok(c) => command = c,
            Err(e) => log::debug!("t = {t:.2}: keeping previous command ({e})"),
        }

        let (next, forces) = step(&state, &env, &command, &config.moments, config.dt)?;
        log::trace!(
            "t = {t:.2}: est err {:.3e} m, f_p {:.4e}, f_l {:.4e}, arc {:.4e}",
            (estimate.position - p_true).norm(),
            forces.propulsive,
            forces.lateral,
            next.arc_length
        );
        state = next;
        max_abs_twist = max_abs_twist.max(state.twist.abs());

        if state.steps.is_multiple_of(config.record_every as u64) {
            trace.push(TraceRow {
                t: state.time,
                arc_length_m: state.arc_length,
                twist_rad: state.twist,
                theta_ax_deg: command.theta_ax.to_degrees(),
                f_p: forces.propulsive,
                f_l_signed: forces.lateral,
                f_r: forces.remainder,
            });
        }

        if state.volvulus {
            break FailureReason::Volvulus;
        }
        if state.arc_length >= length {
            break FailureReason::None;
        }
        if state.stalled_steps >= config.stall_limit {
            break FailureReason::Stall;
        }
        if state.steps >= max_steps {
            break FailureReason::Timeout;
        }
    };

    log::info!(
        "{} seed {seed}: {} after {:.2} s, {:.1} mm, twist {:.3} rad",
        mode.name(),
        failure.name(),
        state.time,
        state.arc_length * 1e3,
        state.twist
    );
    Ok(SimResult {
        success: failure == FailureReason::None,
        failure_reason: failure,
        avg_speed: state.arc_length / state.time,
        time_elapsed: state.time,
        distance: state.arc_length,
        final_twist: state.twist,
        max_abs_twist,
        twist_compliance: env.twist_compliance,
        mean_localization_error: loc_error_sum / loc_count as f64,
        mean_tracking_error: track_error_sum / loc_count as f64,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn ground_truth() -> SimConfig {
        SimConfig {
            localizer: false,
            ..SimConfig::default()
        }
    }

    fn start_command(env: &TubeEnvironment, mode: &ActuationMode, t: f64) -> ActuatorCommand {
        let (p, h) = env.point_at(0.0);
        let cfg = SimConfig::default();
        closed_loop_update(&PoseEstimate::new(p, h, h), &cfg.geometry, mode, t, cfg.spin_rate).unwrap()
    }

    #[test]
    fn default_environment_values() {
        let env = default_environment();
        assert_relative_eq!(env.length(), 0.155, epsilon = 1e-12);
        assert!(env.inner_radius > CAPSULE_RADIUS);
        assert_eq!(env, default_environment());
        env.validate().unwrap();
    }

    #[test]
    fn environment_validation() {
        let ok = default_environment();
        #[allow(clippy::type_complexity)]
        let cases: Vec<Box<dyn Fn(&mut TubeEnvironment)>> = vec![
            Box::new(|e| e.centerline.truncate(1)),
            Box::new(|e| e.centerline[1] = e.centerline[0]),
            Box::new(|e| e.inner_radius = 0.008),
            Box::new(|e| e.mu_kinetic = 1.5),
            Box::new(|e| e.mu_kinetic = 0.0),
            Box::new(|e| e.rotation_friction_factor = 1.5),
            Box::new(|e| e.volvulus_threshold = 0.0),
            Box::new(|e| e.viscous_coefficient = 0.0),
        ];
        for (i, c) in cases.iter().enumerate() {
            let mut e = ok.clone();
            c(&mut e);
            assert!(e.validate().is_err(), "case {i}");
        }
    }

    #[test]
    fn centerline_lookup() {
        let env = TubeEnvironment {
            centerline: vec![Vec3::zeros(), Vec3::new(0.1, 0.0, 0.0), Vec3::new(0.1, 0.1, 0.0)],
            ..default_environment()
        };
        assert_relative_eq!(env.length(), 0.2);
        let (p, t) = env.point_at(0.05);
        assert_relative_eq!(p, Vec3::new(0.05, 0.0, 0.0));
        assert_relative_eq!(t.into_inner(), Vec3::x());
        let (p, t) = env.point_at(0.1);
        assert_relative_eq!(p, Vec3::new(0.1, 0.0, 0.0));
        assert_relative_eq!(t.into_inner(), Vec3::y());
        let (p, _) = env.point_at(0.5);
        assert_relative_eq!(p, Vec3::new(0.1, 0.1, 0.0));
    }

    #[test]
    fn environment_toml_round_trip() {
        let env = default_environment();
        assert_eq!(TubeEnvironment::from_toml(&env.to_toml()).unwrap(), env);
        let text = r#"
            centerline = [[0, 0, 0.1], [0.2, 0, 0.1]]
            inner_radius_m = 0.01
            mu_static = 0.8
            mu_kinetic = 0.4
            rotation_friction_factor = 0.5
            hoop_resistance_n = 0.002
            twist_compliance = 10.0
            volvulus_threshold_rad = 6.0
            gravity_load_n = 0.004
        "#;
        let e = TubeEnvironment::from_toml(text).unwrap();
        assert_relative_eq!(e.length(), 0.2);
        assert_eq!(e.viscous_coefficient, default_environment().viscous_coefficient);
        assert!(matches!(
            TubeEnvironment::from_toml(&text.replace("mu_static", "mu_statc")),
            Err(Error::Config(_))
        ));
        assert!(TubeEnvironment::from_toml(&text.replace("0.01", "0.005")).is_err());
    }

    #[test]
    fn friction_selection() {
        let env = default_environment();
        assert_eq!(friction_coefficient(&env, true, 0), env.mu_static);
        assert_eq!(friction_coefficient(&env, false, 0), env.mu_kinetic);
        let spinning = env.mu_kinetic * env.rotation_friction_factor;
        assert_eq!(friction_coefficient(&env, true, 1), spinning);
        assert_eq!(friction_coefficient(&env, false, -1), spinning);
    }

    #[test]
    fn zero_force_leaves_state() {
        let env = TubeEnvironment {
            gravity_load: 0.0,
            hoop_resistance: 0.0,
            ..default_environment()
        };
        let s0 = SimState {
            arc_length: 0.03,
            twist: 0.2,
            ..SimState::start(&env)
        };
        let zero = ContactForces {
            propulsive: 0.0,
            lateral: 0.0,
            remainder: 0.0,
            spin_sign: 1,
        };
        let s1 = advance(&s0, &env, &zero, 0.01).unwrap();
        assert_eq!(s1.arc_length, s0.arc_length);
        assert_eq!(s1.twist, s0.twist);
        assert_eq!(s1.heading, s0.heading);
        assert!(!s1.volvulus);
        assert_relative_eq!(s1.time, 0.01);
        assert!(advance(&s0, &env, &zero, 1e-4).is_err());
        assert!(advance(&s0, &env, &zero, 0.2).is_err());
    }

    #[test]
    fn advance_arithmetic() {
        let env = default_environment();
        let s0 = SimState {
            at_rest: false,
            ..SimState::start(&env)
        };
        let f = ContactForces {
            propulsive: 0.007,
            lateral: -0.01,
            remainder: 0.05,
            spin_sign: -1,
        };
        let s1 = advance(&s0, &env, &f, 0.01).unwrap();
        let r = 0.5 * 0.3 * (0.01 + 0.005) + 0.003;
        assert_relative_eq!(s1.arc_length, (0.007 - r) / 0.8 * 0.01, max_relative = 1e-12);
        assert_relative_eq!(s1.twist, -20.0 * 0.5 * 0.01 * 0.01, max_relative = 1e-12);
        assert!(!s1.at_rest);
    }

    #[test]
    fn dma_cannot_break_static_friction() {
        let env = default_environment();
        let mode = ActuationMode::Dma;
        let cmd = start_command(&env, &mode, 0.0);
        let (s1, f) = step(&SimState::start(&env), &env, &cmd, &SimConfig::default().moments, 0.01).unwrap();
        assert!(f.propulsive > 0.0);
        assert!(f.propulsive < env.mu_static * env.gravity_load + env.hoop_resistance);
        assert_eq!(s1.arc_length, 0.0);
        assert_eq!(s1.stalled_steps, 1);
    }

    #[test]
    fn command_matches_actuation_composition() {
        let geom = ActuationGeometry::experiment_default();
        let est = PoseEstimate::new(Vec3::new(0.1, 0.2, 0.08), Vec3::z_axis(), Vec3::x_axis());
        let cmd = closed_loop_update(&est, &geom, &ActuationMode::Dma, 0.0, 1.0).unwrap();
        let a = 10f64.to_radians();
        assert_relative_eq!(
            cmd.position,
            Vec3::new(0.1 + 0.15 * a.sin(), 0.2, 0.08 + 0.15 * a.cos()),
            epsilon = 1e-12
        );
        assert_relative_eq!(
            cmd.rotation_axis.into_inner(),
            Vec3::new(-0.8709961, 0.0, 0.4912899),
            epsilon = 1e-7
        );
        assert_eq!(cmd.theta_ax, std::f64::consts::PI);

        let later = closed_loop_update(&est, &geom, &ActuationMode::Dma, 7.3, 1.0).unwrap();
        assert_eq!(later, cmd);
    }

    #[test]
    fn rrma_command_sweep_range() {
        let geom = ActuationGeometry::experiment_default();
        let est = PoseEstimate::new(Vec3::new(0.1, 0.2, 0.08), Vec3::z_axis(), Vec3::x_axis());
        let mode = ActuationMode::rrma(std::f64::consts::FRAC_PI_2).unwrap();
        let (mut lo, mut hi) = (f64::MAX, f64::MIN);
        for k in 0..400 {
            let c = closed_loop_update(&est, &geom, &mode, k as f64 * 0.005, std::f64::consts::TAU).unwrap();
            lo = lo.min(c.theta_ax);
            hi = hi.max(c.theta_ax);
        }
        assert_relative_eq!(lo.to_degrees(), 90.0, epsilon = 1e-9);
        assert_relative_eq!(hi.to_degrees(), 270.0, epsilon = 1e-9);
    }

    #[test]
    fn rrma_twist_returns_each_cycle() {
        let env = default_environment();
        let cfg = ground_truth();
        let mode = ActuationMode::rrma(std::f64::consts::FRAC_PI_2).unwrap();
        let per_cycle = (mode.cycle_period(cfg.spin_rate).unwrap() / cfg.dt).round() as u64;
        let mut s = SimState::start(&env);
        let mut impulse = 0.0;
        let mut starts = vec![0.0];
        for _ in 0..3 * per_cycle {
            let (p, h) = env.point_at(s.arc_length);
            let est = PoseEstimate::new(p, h, h);
            let cmd = closed_loop_update(&est, &cfg.geometry, &mode, s.time, cfg.spin_rate).unwrap();
            let (next, f) = step(&s, &env, &cmd, &cfg.moments, cfg.dt).unwrap();
            impulse += env.twist_compliance * env.mu_kinetic * f.lateral.abs() * cfg.dt;
            s = next;
            if s.steps.is_multiple_of(per_cycle) {
                starts.push(s.twist);
            }
        }
        assert!(s.arc_length > 0.0);
        for w in starts.windows(2) {
            assert!((w[1] - w[0]).abs() < 1e-9, "{:e}", w[1] - w[0]);
            assert!((w[1] - w[0]).abs() < 1e-9 * impulse / 3.0);
        }
    }

    #[test]
    fn crma_twist_grows_monotonically() {
        let env = default_environment();
        let cfg = ground_truth();
        let res = run_propulsion(&env, &ActuationMode::Crma, &cfg, 0).unwrap();
        for w in res.trace.windows(2) {
            assert!(w[1].twist_rad >= w[0].twist_rad);
        }
        assert!(res.final_twist > 0.0);
    }

    #[test]
    fn runs_are_deterministic() {
        let env = default_environment();
        let cfg = SimConfig {
            time_budget: 3.0,
            ..SimConfig::default()
        };
        let mode = ActuationMode::rrma(std::f64::consts::FRAC_PI_2).unwrap();
        let a = run_propulsion(&env, &mode, &cfg, 11).unwrap();
        let b = run_propulsion(&env, &mode, &cfg, 11).unwrap();
        assert_eq!(a, b);
        let c = run_propulsion(&env, &mode, &cfg, 12).unwrap();
        assert_ne!(a, c);
        assert_eq!(a.failure_reason, FailureReason::Timeout);
    }

    #[test]
    fn arc_length_is_monotone_and_bounded() {
        let env = default_environment();
        let mode = ActuationMode::rrma(std::f64::consts::FRAC_PI_2).unwrap();
        let res = run_propulsion(&env, &mode, &ground_truth(), 2).unwrap();
        for w in res.trace.windows(2) {
            assert!(w[1].arc_length_m >= w[0].arc_length_m);
        }
        assert!(res.distance <= env.length());
        assert!(res.success);
    }

    #[test]
    fn trace_csv_header() {
        let env = default_environment();
        let cfg = SimConfig {
            time_budget: 0.5,
            ..ground_truth()
        };
        let res = run_propulsion(&env, &ActuationMode::Crma, &cfg, 0).unwrap();
        let mut buf = Vec::new();
        res.write_trace_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,arc_length_m,twist_rad,theta_ax_deg,f_p,f_l_signed,f_r\n"));
        assert_eq!(text.lines().count(), 1 + res.trace.len());
    }

    #[test]
    fn noiseless_localizer_matches_ground_truth() {
        let env = default_environment();
        let mode = ActuationMode::rrma(std::f64::consts::FRAC_PI_2).unwrap();
        let fitted = SimConfig {
            noise_sigma: 0.0,
            ..SimConfig::default()
        };
        let a = run_propulsion(&env, &mode, &fitted, 1).unwrap();
        let b = run_propulsion(&env, &mode, &ground_truth(), 1).unwrap();
        assert!(a.success && b.success);
        assert!(
            (a.avg_speed / b.avg_speed - 1.0).abs() < 0.01,
            "{} vs {}",
            a.avg_speed,
            b.avg_speed
        );
        assert!(a.mean_localization_error < 1e-6);
    }

    #[test]
    fn hoop_resistance_only_slows() {
        let modes = [
            ActuationMode::Dma,
            ActuationMode::Crma,
            ActuationMode::rrma(std::f64::consts::FRAC_PI_2).unwrap(),
        ];
        for mode in modes {
            let runs: Vec<SimResult> = [0.002, 0.003, 0.004]
                .iter()
                .map(|&hoop| {
                    let env = TubeEnvironment {
                        hoop_resistance: hoop,
                        ..default_environment()
                    };
                    run_propulsion(&env, &mode, &ground_truth(), 1).unwrap()
                })
                .collect();
            for w in runs.windows(2) {
                assert!(w[1].avg_speed <= w[0].avg_speed, "{}", mode.name());
                assert!(w[1].success <= w[0].success, "{}", mode.name());
            }
        }
    }

    #[test]
    fn follows_a_bent_tube() {
        let bend = 20f64.to_radians();
        let corner = Vec3::new(0.2, 0.27, 0.08);
        let env = TubeEnvironment {
            centerline: vec![
                corner - Vec3::new(0.07, 0.0, 0.0),
                corner,
                corner + Vec3::new(bend.cos(), bend.sin(), 0.0) * 0.085,
            ],
            ..default_environment()
        };
        let mode = ActuationMode::rrma(std::f64::consts::FRAC_PI_2).unwrap();
        let res = run_propulsion(&env, &mode, &SimConfig::default(), 3).unwrap();
        assert!(res.success, "{:?} at {} m", res.failure_reason, res.distance);
    }

    #[test]
    fn config_validation() {
        let bad = [
            SimConfig {
                dt: 0.5,
                ..SimConfig::default()
            },
            SimConfig {
                stall_limit: 0,
                ..SimConfig::default()
            },
            SimConfig {
                spin_rate: 0.0,
                ..SimConfig::default()
            },
            SimConfig {
                heading_window: 3,
                ..SimConfig::default()
            },
        ];
        for c in bad {
            assert!(run_propulsion(&default_environment(), &ActuationMode::Crma, &c, 0).is_err());
        }
    }
}

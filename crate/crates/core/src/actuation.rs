//! Actuator pose planning for rotating and reciprocating magnetic actuation.
//!
//! Orientation conventions follow the usual azimuth/elevation split: a unit
//! vector is `Rz(θz)·Ry(−θy)·x̂`. The actuator magnet spins right-handedly
//! about its rotation axis, starting from `Rz(θaz)·Ry(−θay)·ẑ` at `θax = 0`.
//!
//! Plane U passes through the actuator, the capsule, and the foot `H` of the
//! actuator on the desired capsule axis. Its signed normal is
//! `n̂U = unit(ω̂dc × (p_a − H))`; lateral forces and twist signs are measured
//! against it.

use std::f64::consts::{FRAC_PI_2, PI, TAU};

use nalgebra::{Rotation3, Unit};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::magnetics::{dipole_field, dipole_force, Mat3, UnitVec3, Vec3};

/// Tolerance below which a turning point of the reciprocation is snapped.
const TURN_EPS: f64 = 1e-9;

/// Azimuth `theta_z ∈ [0, 2π)` and elevation `theta_y ∈ (−π/2, π/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngles {
    pub theta_z: f64,
    pub theta_y: f64,
}

impl AxisAngles {
    pub fn new(theta_z: f64, theta_y: f64) -> Result<Self> {
        if !(0.0..TAU).contains(&theta_z) {
            return invalid(format!("theta_z {theta_z} outside [0, 2π)"));
        }
        if !(theta_y.abs() < FRAC_PI_2) {
            return invalid(format!("theta_y {theta_y} outside (−π/2, π/2)"));
        }
        Ok(Self { theta_z, theta_y })
    }

    fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&Vec3::z_axis(), self.theta_z)
            * Rotation3::from_axis_angle(&Vec3::y_axis(), -self.theta_y)
    }
}

pub fn unit_vector_from_axis_angles(angles: &AxisAngles) -> UnitVec3 {
    Unit::new_normalize(angles.rotation() * Vec3::x())
}

/// Inverse of [`unit_vector_from_axis_angles`]. Fails for (nearly) vertical
/// directions where the azimuth is undefined.
pub fn axis_angles_from_unit_vector(w: &UnitVec3) -> Result<AxisAngles> {
    if w.z.abs() >= 1.0 - 1e-9 {
        return Err(Error::DegenerateOrientation([w.x, w.y, w.z]));
    }
    let mut theta_z = w.y.atan2(w.x);
    if theta_z < 0.0 {
        theta_z += TAU;
    }
    // atan2 of a tiny negative y can round up to exactly 2π
    if theta_z >= TAU {
        theta_z = 0.0;
    }
    Ok(AxisAngles {
        theta_z,
        theta_y: w.z.asin(),
    })
}

/// Actuator spin axis that makes the field at the capsule rotate about
/// `omega_dc`: `unit((3r̂r̂ᵀ − I)·ω̂dc)`.
pub fn actuator_rotation_axis(r_hat: &UnitVec3, omega_dc: &UnitVec3) -> Result<UnitVec3> {
    let r = r_hat.as_ref();
    let v = (r * r.transpose() * 3.0 - Mat3::identity()) * omega_dc.as_ref();
    Unit::try_new(v, 1e-12).ok_or(Error::DegenerateGeometry("actuator rotation axis vanishes"))
}

/// Placement of the actuator relative to the capsule.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActuationGeometry {
    /// Actuator–capsule distance, m.
    pub d: f64,
    /// Angle between `r` and the perpendicular from the actuator to the capsule axis, rad.
    pub alpha: f64,
    /// Tilt of plane U away from the vertical, rad.
    pub beta: f64,
    /// Desired capsule rotation axis.
    pub omega_dc: UnitVec3,
}

impl ActuationGeometry {
    pub fn new(d: f64, alpha: f64, beta: f64, omega_dc: UnitVec3) -> Result<Self> {
        let g = Self {
            d,
            alpha,
            beta,
            omega_dc,
        };
        g.validate()?;
        Ok(g)
    }

    /// Experiment defaults: d = 15 cm, α = 10°, β = 0, heading +x.
    pub fn experiment_default() -> Self {
        Self {
            d: 0.15,
            alpha: 10f64.to_radians(),
            beta: 0.0,
            omega_dc: Vec3::x_axis(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.d > 0.0 && self.d.is_finite()) {
            return invalid(format!("actuator distance must be positive, got {}", self.d));
        }
        if !(self.alpha.abs() < FRAC_PI_2) {
            return invalid(format!("|alpha| must be below π/2, got {}", self.alpha));
        }
        if !self.beta.is_finite() {
            return invalid("beta must be finite");
        }
        Ok(())
    }

    pub fn with_heading(&self, omega_dc: UnitVec3) -> Self {
        Self { omega_dc, ..*self }
    }

    /// Capsule position relative to the actuator, `r = p_c − p_a`.
    pub fn offset(&self) -> Result<Vec3> {
        self.validate()?;
        let heading = axis_angles_from_unit_vector(&self.omega_dc)?;
        let rot = heading.rotation()
            * Rotation3::from_axis_angle(&Vec3::x_axis(), self.beta)
            * Rotation3::from_axis_angle(&Vec3::y_axis(), self.alpha);
        Ok(rot * Vec3::new(0.0, 0.0, -self.d))
    }
}

pub fn actuator_position(p_c: &Vec3, geometry: &ActuationGeometry) -> Result<Vec3> {
    Ok(p_c - geometry.offset()?)
}

/// Actuator moment direction after spinning `theta_ax` about the axis given by `axis_angles`.
pub fn actuator_moment_direction(axis_angles: &AxisAngles, theta_ax: f64) -> UnitVec3 {
    let rot = axis_angles.rotation() * Rotation3::from_axis_angle(&Vec3::x_axis(), theta_ax);
    Unit::new_normalize(rot * Vec3::z())
}

/// Capsule moment direction: the field projected onto the plane normal to
/// the capsule's rotation axis.
pub fn capsule_moment_direction(b_c: &Vec3, omega_c: &UnitVec3) -> Result<UnitVec3> {
    let w = omega_c.as_ref();
    let perp = b_c - w * b_c.dot(w);
    let scale = b_c.norm();
    if !(scale > 0.0) || perp.norm() <= 1e-9 * scale {
        return Err(Error::DegenerateField);
    }
    Ok(Unit::new_normalize(perp))
}

/// Magnetic force split along the heading, across plane U, and the rest.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ForceDecomposition {
    pub propulsive: Vec3,
    pub lateral: Vec3,
    pub remainder: Vec3,
    pub heading: UnitVec3,
    pub plane_normal: UnitVec3,
}

impl ForceDecomposition {
    /// Decomposes `f` given the capsule heading and the actuator position
    /// relative to the capsule (`p_a − p_c`).
    pub fn new(f: &Vec3, heading: &UnitVec3, actuator_offset: &Vec3) -> Result<Self> {
        let w = heading.as_ref();
        let to_actuator = actuator_offset - w * actuator_offset.dot(w);
        let normal = Unit::try_new(w.cross(&to_actuator), 1e-12 * actuator_offset.norm().max(1e-300)).ok_or(
            Error::DegenerateGeometry("actuator lies on the capsule axis; plane U undefined"),
        )?;
        let propulsive = w * f.dot(w);
        let lateral = normal.as_ref() * f.dot(&normal);
        Ok(Self {
            propulsive,
            lateral,
            remainder: f - propulsive - lateral,
            heading: *heading,
            plane_normal: normal,
        })
    }

    pub fn total(&self) -> Vec3 {
        self.propulsive + self.lateral + self.remainder
    }

    /// Propulsive component along the heading.
    pub fn signed_propulsive(&self) -> f64 {
        self.propulsive.dot(&self.heading)
    }

    /// Lateral component along the plane-U normal.
    pub fn signed_lateral(&self) -> f64 {
        self.lateral.dot(&self.plane_normal)
    }
}

pub fn decompose_force(f: &Vec3, geometry: &ActuationGeometry) -> Result<ForceDecomposition> {
    let offset = geometry.offset()?;
    ForceDecomposition::new(f, &geometry.omega_dc, &-offset)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase")]
pub enum ActuationMode {
    /// Dragging: static actuator, no spin.
    Dma,
    /// Continuous rotation.
    Crma,
    /// Reciprocating rotation with half-amplitude `theta_ar` (rad).
    Rrma { theta_ar: f64 },
}

impl ActuationMode {
    pub fn rrma(theta_ar: f64) -> Result<Self> {
        let m = ActuationMode::Rrma { theta_ar };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        if let ActuationMode::Rrma { theta_ar } = *self {
            if !(theta_ar > 0.0 && theta_ar <= FRAC_PI_2 + 1e-12) {
                return invalid(format!("theta_ar {theta_ar} outside (0, π/2]"));
            }
        }
        Ok(())
    }

    pub fn name(&self) -> &'static str {
        match self {
            ActuationMode::Dma => "DMA",
            ActuationMode::Crma => "CRMA",
            ActuationMode::Rrma { .. } => "RRMA",
        }
    }

    /// Duration of one actuation cycle at the given spin rate; `None` for DMA.
    pub fn cycle_period(&self, rate: f64) -> Option<f64> {
        match *self {
            ActuationMode::Dma => None,
            ActuationMode::Crma => Some(TAU / rate),
            ActuationMode::Rrma { theta_ar } => Some(4.0 * theta_ar / rate),
        }
    }
}

/// Actuator spin phase and the instantaneous spin direction (+1, −1, or 0
/// when at rest or at a reversal instant).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SpinPhase {
    pub theta_ax: f64,
    pub spin_sign: i8,
}

/// Spin phase at fraction `frac ∈ [0, 1)` of one actuation cycle.
///
/// RRMA is a constant-speed triangle wave: it starts at π moving up, reverses
/// at π + θar (quarter cycle), reverses again at π − θar (three quarters), and
/// returns to π.
pub fn spin_phase_at_fraction(mode: &ActuationMode, frac: f64) -> SpinPhase {
    let frac = frac.rem_euclid(1.0);
    match *mode {
        ActuationMode::Dma => SpinPhase {
            theta_ax: PI,
            spin_sign: 0,
        },
        ActuationMode::Crma => SpinPhase {
            theta_ax: (TAU * frac).rem_euclid(TAU),
            spin_sign: 1,
        },
        ActuationMode::Rrma { theta_ar } => {
            if (frac - 0.25).abs() < TURN_EPS {
                return SpinPhase {
                    theta_ax: PI + theta_ar,
                    spin_sign: 0,
                };
            }
            if (frac - 0.75).abs() < TURN_EPS {
                return SpinPhase {
                    theta_ax: PI - theta_ar,
                    spin_sign: 0,
                };
            }
            let amp = 4.0 * theta_ar;
            if frac < 0.25 {
                SpinPhase {
                    theta_ax: PI + amp * frac,
                    spin_sign: 1,
                }
            } else if frac < 0.75 {
                SpinPhase {
                    theta_ax: PI + theta_ar - amp * (frac - 0.25),
                    spin_sign: -1,
                }
            } else {
                SpinPhase {
                    theta_ax: PI - theta_ar + amp * (frac - 0.75),
                    spin_sign: 1,
                }
            }
        }
    }
}

/// Spin phase at time `t` for an actuator turning at `rate` rad/s.
pub fn spin_phase(mode: &ActuationMode, t: f64, rate: f64) -> Result<SpinPhase> {
    if !(rate > 0.0 && rate.is_finite()) {
        return invalid(format!("spin rate must be positive, got {rate}"));
    }
    mode.validate()?;
    Ok(match mode.cycle_period(rate) {
        None => spin_phase_at_fraction(mode, 0.0),
        Some(period) => {
            let cycles = t / period;
            let mut frac = cycles - cycles.floor();
            // snap to the cycle boundary so t = k·T starts a fresh cycle
            if 1.0 - frac < TURN_EPS {
                frac = 0.0;
            }
            spin_phase_at_fraction(mode, frac)
        }
    })
}

/// Actuator pose and spin state sent to the robot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ActuatorCommand {
    pub position: Vec3,
    pub rotation_axis: UnitVec3,
    pub theta_ax: f64,
    /// Signed spin rate, rad/s.
    pub spin_rate: f64,
}

impl ActuatorCommand {
    /// Builds the command for a capsule at `p_c`.
    pub fn plan(p_c: &Vec3, geometry: &ActuationGeometry, phase: SpinPhase, rate: f64) -> Result<Self> {
        let r = geometry.offset()?;
        let axis = actuator_rotation_axis(&Unit::new_normalize(r), &geometry.omega_dc)?;
        Ok(Self {
            position: p_c - r,
            rotation_axis: axis,
            theta_ax: phase.theta_ax,
            spin_rate: rate * f64::from(phase.spin_sign),
        })
    }

    pub fn moment_direction(&self) -> Result<UnitVec3> {
        let angles = axis_angles_from_unit_vector(&self.rotation_axis)?;
        Ok(actuator_moment_direction(&angles, self.theta_ax))
    }

    pub fn spin_sign(&self) -> i8 {
        if self.spin_rate > 0.0 {
            1
        } else if self.spin_rate < 0.0 {
            -1
        } else {
            0
        }
    }
}

/// Actuator and capsule moment magnitudes, A·m².
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Moments {
    pub actuator: f64,
    pub capsule: f64,
}

impl Moments {
    pub fn validate(&self) -> Result<()> {
        if !(self.actuator > 0.0 && self.capsule > 0.0) {
            return invalid("moment magnitudes must be positive");
        }
        Ok(())
    }
}

/// One point of a force profile.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProfileSample {
    pub theta_ax: f64,
    pub force: Vec3,
    pub decomposition: ForceDecomposition,
}

/// Force on a capsule (axis `omega_c`) at actuator spin phase `theta_ax`.
pub fn force_at_phase(
    geometry: &ActuationGeometry,
    moments: &Moments,
    omega_c: &UnitVec3,
    theta_ax: f64,
) -> Result<ProfileSample> {
    let r = geometry.offset()?;
    let axis = actuator_rotation_axis(&Unit::new_normalize(r), &geometry.omega_dc)?;
    let m_a = actuator_moment_direction(&axis_angles_from_unit_vector(&axis)?, theta_ax);
    let b_c = dipole_field(&r, moments.actuator, &m_a)?;
    let m_c = capsule_moment_direction(&b_c, omega_c)?;
    let force = dipole_force(&r, moments.actuator, &m_a, moments.capsule, &m_c)?;
    let decomposition = ForceDecomposition::new(&force, &geometry.omega_dc, &-r)?;
    Ok(ProfileSample {
        theta_ax,
        force,
        decomposition,
    })
}

/// Force over one actuator revolution at `θax = 2πk/n`, `k = 0..n`.
pub fn force_profile(
    geometry: &ActuationGeometry,
    moments: &Moments,
    omega_c: &UnitVec3,
    n_samples: usize,
) -> Result<Vec<ProfileSample>> {
    if n_samples < 8 {
        return invalid(format!("force profile needs at least 8 samples, got {n_samples}"));
    }
    moments.validate()?;
    (0..n_samples)
        .map(|k| force_at_phase(geometry, moments, omega_c, TAU * k as f64 / n_samples as f64))
        .collect()
}

/// Samples per half-sweep used by [`approximation_error`].
const APPROX_SAMPLES: usize = 2048;

/// Worst relative deviation of the force from its value at `θax = π` over
/// the reciprocation range `[π − θar, π + θar]`.
pub fn approximation_error(geometry: &ActuationGeometry, moments: &Moments, mode: &ActuationMode) -> Result<f64> {
    let ActuationMode::Rrma { theta_ar } = *mode else {
        return invalid("approximation error is defined for reciprocating actuation only");
    };
    mode.validate()?;
    let omega_c = geometry.omega_dc;
    let centre = force_at_phase(geometry, moments, &omega_c, PI)?.force;
    let scale = centre.norm();
    if !(scale > 0.0) {
        return invalid("force at θax = π vanishes");
    }
    let mut worst = 0.0f64;
    for k in 1..=APPROX_SAMPLES {
        let delta = theta_ar * k as f64 / APPROX_SAMPLES as f64;
        for theta in [PI - delta, PI + delta] {
            let f = force_at_phase(geometry, moments, &omega_c, theta)?.force;
            worst = worst.max((f - centre).norm() / scale);
        }
    }
    Ok(worst)
}

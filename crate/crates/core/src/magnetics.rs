//! Closed-form point-dipole field, field gradient, force and torque.
//!
//! All quantities are SI: positions in metres, moments in A·m², fields in
//! tesla, forces in newtons. Every function is pure.

use std::f64::consts::PI;

use nalgebra::{Matrix3, Unit, Vector3};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type Vec3 = Vector3<f64>;
pub type UnitVec3 = Unit<Vector3<f64>>;
pub type Mat3 = Matrix3<f64>;

/// Vacuum permeability, T·m/A.
pub const MU0: f64 = 4.0e-7 * PI;

/// Separations below this are rejected as physically impossible.
pub const MIN_SEPARATION: f64 = 1.0e-3;

/// A point magnetic dipole.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DipoleSource {
    pub position: Vec3,
    pub moment_magnitude: f64,
    pub moment_direction: UnitVec3,
}

impl DipoleSource {
    pub fn new(position: Vec3, moment_magnitude: f64, moment_direction: UnitVec3) -> Result<Self> {
        if !(moment_magnitude > 0.0 && moment_magnitude.is_finite()) {
            return invalid(format!("moment magnitude must be positive, got {moment_magnitude}"));
        }
        if !position.iter().all(|c| c.is_finite()) {
            return invalid("dipole position must be finite");
        }
        Ok(Self {
            position,
            moment_magnitude,
            moment_direction,
        })
    }

    /// Field of this dipole at `point`.
    pub fn field_at(&self, point: &Vec3) -> Result<Vec3> {
        dipole_field(&(point - self.position), self.moment_magnitude, &self.moment_direction)
    }

    pub fn moment(&self) -> Vec3 {
        self.moment_direction.into_inner() * self.moment_magnitude
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MagnetShape {
    Sphere {
        diameter: f64,
    },
    Ring {
        outer_diameter: f64,
        inner_diameter: f64,
        length: f64,
    },
}

impl MagnetShape {
    pub fn volume(&self) -> f64 {
        match *self {
            MagnetShape::Sphere { diameter } => PI * diameter.powi(3) / 6.0,
            MagnetShape::Ring {
                outer_diameter,
                inner_diameter,
                length,
            } => 0.25 * PI * (outer_diameter.powi(2) - inner_diameter.powi(2)) * length,
        }
    }
}

/// Geometry and material grade of a uniformly magnetized permanent magnet.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MagnetSpec {
    pub shape: MagnetShape,
    /// Remanent flux density, T.
    pub remanence: f64,
}

impl MagnetSpec {
    pub fn new(shape: MagnetShape, remanence: f64) -> Result<Self> {
        let spec = Self { shape, remanence };
        spec.validate()?;
        Ok(spec)
    }

    /// The 50 mm N42 spherical actuator magnet.
    pub fn default_actuator() -> Self {
        Self {
            shape: MagnetShape::Sphere { diameter: 0.05 },
            remanence: 1.32,
        }
    }

    /// The 12.8/9/15 mm N38SH ring inside the capsule.
    pub fn default_capsule() -> Self {
        Self {
            shape: MagnetShape::Ring {
                outer_diameter: 0.0128,
                inner_diameter: 0.009,
                length: 0.015,
            },
            remanence: 1.26,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |v: f64| v > 0.0 && v.is_finite();
        match self.shape {
            MagnetShape::Sphere { diameter } if !positive(diameter) => {
                return invalid(format!("sphere diameter must be positive, got {diameter}"));
            }
            MagnetShape::Ring {
                outer_diameter,
                inner_diameter,
                length,
            } => {
                if !(positive(outer_diameter) && positive(inner_diameter) && positive(length)) {
                    return invalid("ring dimensions must be positive");
                }
                if inner_diameter >= outer_diameter {
                    return invalid(format!(
                        "ring inner diameter {inner_diameter} must be below outer diameter {outer_diameter}"
                    ));
                }
            }
            _ => {}
        }
        if !(self.remanence > 0.0 && self.remanence < 2.0) {
            return invalid(format!("remanence must lie in (0, 2) T, got {}", self.remanence));
        }
        Ok(())
    }
}

/// Dipole moment magnitude `Br·V/μ0` of a uniformly magnetized magnet.
pub fn moment_magnitude_from_spec(spec: &MagnetSpec) -> Result<f64> {
    spec.validate()?;
    Ok(spec.remanence * spec.shape.volume() / MU0)
}

fn check_separation(r: &Vec3) -> Result<f64> {
    let dist = r.norm();
    if !dist.is_finite() || dist < MIN_SEPARATION {
        return Err(Error::Singularity {
            distance: dist,
            min: MIN_SEPARATION,
        });
    }
    Ok(dist)
}

/// Flux density at offset `r` from a dipole of the given moment:
/// `μ0‖m‖/(4π‖r‖⁵)·(3rrᵀ − ‖r‖²I)·m̂`.
pub fn dipole_field(r: &Vec3, moment: f64, direction: &UnitVec3) -> Result<Vec3> {
    let dist = check_separation(r)?;
    let m = direction.as_ref();
    let k = MU0 * moment / (4.0 * PI * dist.powi(5));
    Ok((r * (3.0 * r.dot(m)) - m * (dist * dist)) * k)
}

/// Spatial Jacobian `∂b/∂r` of [`dipole_field`]. Symmetric and traceless.
pub fn dipole_field_jacobian(r: &Vec3, moment: f64, direction: &UnitVec3) -> Result<Mat3> {
    let dist = check_separation(r)?;
    let m = direction.as_ref();
    let s = r.dot(m);
    let k = MU0 * moment / (4.0 * PI * dist.powi(5));
    let rr = r * r.transpose();
    let sym = r * m.transpose() + m * r.transpose();
    Ok((Mat3::identity() * (3.0 * s) + sym * 3.0 - rr * (15.0 * s / (dist * dist))) * k)
}

/// Force on the capsule dipole at offset `r` from the actuator dipole.
///
/// Uses the explicit closed form; it equals `∇(m_c·b)` with respect to the
/// capsule position.
pub fn dipole_force(
    r: &Vec3,
    actuator_moment: f64,
    actuator_dir: &UnitVec3,
    capsule_moment: f64,
    capsule_dir: &UnitVec3,
) -> Result<Vec3> {
    let dist = check_separation(r)?;
    let ma = actuator_dir.as_ref();
    let mc = capsule_dir.as_ref();
    let r2 = dist * dist;
    let k = 3.0 * MU0 * actuator_moment * capsule_moment / (4.0 * PI * dist.powi(7));
    let term1 = mc * (ma.dot(r) * r2);
    let term2 = ma * (mc.dot(r) * r2);
    let term3 = r * (mc.dot(ma) * r2 - 5.0 * mc.dot(r) * ma.dot(r));
    Ok((term1 + term2 + term3) * k)
}

/// Torque `m_c × b` on the capsule dipole at offset `r` from the actuator.
pub fn dipole_torque(
    r: &Vec3,
    actuator_moment: f64,
    actuator_dir: &UnitVec3,
    capsule_moment: f64,
    capsule_dir: &UnitVec3,
) -> Result<Vec3> {
    let b = dipole_field(r, actuator_moment, actuator_dir)?;
    Ok((capsule_dir.as_ref() * capsule_moment).cross(&b))
}

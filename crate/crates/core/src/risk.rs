//! Wall-contact friction model for intestinal twist under rotating actuation.
//!
//! The capsule is pressed against the wall by the lateral magnetic force; the
//! wall sees that force as its normal load and a Coulomb friction whose
//! direction follows the capsule's spin. Positive friction twists the
//! intestine counterclockwise about the desired heading (right-handed about
//! `ω̂dc`), which is the capsule's spin sense while `θax` increases.

use std::f64::consts::PI;

use crate::actuation::{force_at_phase, spin_phase_at_fraction, ActuationGeometry, ActuationMode, Moments};
use crate::error::{invalid, Result};

/// Minimum samples per cycle for a contact profile.
pub const MIN_PROFILE_SAMPLES: usize = 64;

/// Trapezoid intervals used for half-sweep averages.
const HALF_SWEEP_INTERVALS: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactSample {
    /// Position within the cycle, in `[0, 1]`.
    pub cycle_fraction: f64,
    pub theta_ax: f64,
    /// Wall normal load, N.
    pub normal_force: f64,
    /// Friction along the twist direction, N.
    pub signed_friction: f64,
    pub spin_sign: i8,
}

/// Contact forces over exactly one actuation cycle, sampled uniformly in
/// time with both endpoints included.
#[derive(Debug, Clone, PartialEq)]
pub struct RiskProfile {
    pub samples: Vec<ContactSample>,
    pub mode: ActuationMode,
}

impl RiskProfile {
    fn trapezoid(&self, f: impl Fn(&ContactSample) -> f64) -> f64 {
        let n = self.samples.len();
        if n < 2 {
            return 0.0;
        }
        let h = 1.0 / (n - 1) as f64;
        let inner: f64 = self.samples[1..n - 1].iter().map(&f).sum();
        h * (inner + 0.5 * (f(&self.samples[0]) + f(&self.samples[n - 1])))
    }

    /// Cycle-averaged absolute friction, i.e. the absolute friction impulse
    /// divided by the cycle duration.
    pub fn absolute_friction_impulse(&self) -> f64 {
        self.trapezoid(|s| s.signed_friction.abs())
    }

    pub fn mean_friction_magnitude(&self) -> f64 {
        self.absolute_friction_impulse()
    }
}

/// Normal and friction loads on the wall over one cycle of `mode`.
pub fn contact_profile(
    geometry: &ActuationGeometry,
    moments: &Moments,
    mode: &ActuationMode,
    mu_wall: f64,
    n_samples: usize,
) -> Result<RiskProfile> {
    if !(mu_wall > 0.0 && mu_wall <= 2.0) {
        return invalid(format!("wall friction coefficient {mu_wall} outside (0, 2]"));
    }
    if matches!(mode, ActuationMode::Dma) {
        return invalid("contact profile needs a rotating actuation mode");
    }
    if n_samples < MIN_PROFILE_SAMPLES || !n_samples.is_multiple_of(4) {
        return invalid(format!(
            "contact profile needs a multiple of 4 and at least {MIN_PROFILE_SAMPLES} samples, got {n_samples}"
        ));
    }
    mode.validate()?;
    moments.validate()?;

    let samples = (0..=n_samples)
        .map(|k| {
            let frac = k as f64 / n_samples as f64;
            // the closing sample repeats the cycle start, with its phase
            let phase = spin_phase_at_fraction(mode, if k == n_samples { 0.0 } else { frac });
            let sample = force_at_phase(geometry, moments, &geometry.omega_dc, phase.theta_ax)?;
            let normal_force = sample.decomposition.signed_lateral().abs();
            Ok(ContactSample {
                cycle_fraction: frac,
                theta_ax: phase.theta_ax,
                normal_force,
                signed_friction: f64::from(phase.spin_sign) * mu_wall * normal_force,
                spin_sign: phase.spin_sign,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(RiskProfile { samples, mode: *mode })
}

/// Time-average of the signed friction over the cycle (trapezoidal rule).
pub fn net_twist_per_cycle(profile: &RiskProfile) -> f64 {
    profile.trapezoid(|s| s.signed_friction)
}

/// Mean and peak wall normal force over a half reciprocation sweep
/// `θax ∈ [π − θar, π + θar]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NormalForceStats {
    pub mean: f64,
    pub max: f64,
}

pub fn normal_force_stats(
    geometry: &ActuationGeometry,
    moments: &Moments,
    theta_ar: f64,
    intervals: usize,
) -> Result<NormalForceStats> {
    ActuationMode::rrma(theta_ar)?;
    if intervals < 2 {
        return invalid("need at least two quadrature intervals");
    }
    let mut sum = 0.0;
    let mut max = 0.0f64;
    for k in 0..=intervals {
        let theta = PI - theta_ar + 2.0 * theta_ar * k as f64 / intervals as f64;
        let n = force_at_phase(geometry, moments, &geometry.omega_dc, theta)?
            .decomposition
            .signed_lateral()
            .abs();
        let w = if k == 0 || k == intervals { 0.5 } else { 1.0 };
        sum += w * n;
        max = max.max(n);
    }
    Ok(NormalForceStats {
        mean: sum / intervals as f64,
        max,
    })
}

/// Average wall normal force over one half reciprocation sweep.
pub fn mean_normal_force(geometry: &ActuationGeometry, moments: &Moments, theta_ar: f64) -> Result<f64> {
    Ok(normal_force_stats(geometry, moments, theta_ar, HALF_SWEEP_INTERVALS)?.mean)
}

/// The candidate reciprocation angle with the largest mean normal force.
///
/// Every reciprocating candidate has zero net twist, so the wall-stretching
/// load is the only criterion. Exact ties go to the larger angle.
pub fn recommend_reciprocation_angle(
    geometry: &ActuationGeometry,
    moments: &Moments,
    candidates: &[f64],
) -> Result<f64> {
    if candidates.is_empty() {
        return invalid("no candidate reciprocation angles");
    }
    let mut best: Option<(f64, f64)> = None;
    for &theta in candidates {
        let mean = mean_normal_force(geometry, moments, theta)?;
        best = match best {
            Some((bt, bm)) if bm > mean || (bm == mean && bt >= theta) => Some((bt, bm)),
            _ => Some((theta, mean)),
        };
    }
    Ok(best.map(|(t, _)| t).expect("candidates non-empty"))
}

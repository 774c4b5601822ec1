//! Magnetometer-array forward model and capsule localization.
//!
//! The array is a planar 8×10 grid of three-axis sensors. Sensor `k` sits at
//! column `k % 8` (x) and row `k / 8` (y). Localization fits a point dipole of
//! known strength to one reading with damped Gauss-Newton (Levenberg-Marquardt)
//! over position and moment direction; the capsule heading comes separately
//! from a Bézier fit to the recent position track.

use std::f64::consts::PI;
use std::io::{Read, Write};

use nalgebra::{DMatrix, Matrix4, Matrix5, Unit, Vector5};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::magnetics::{dipole_field, dipole_field_jacobian, DipoleSource, UnitVec3, Vec3, MU0};

pub const GRID_COLS: usize = 8;
pub const GRID_ROWS: usize = 10;
pub const SENSOR_COUNT: usize = GRID_COLS * GRID_ROWS;
pub const SENSOR_SPACING: f64 = 0.06;

/// Per-axis noise that puts the simulated localization error near 4–5 mm.
pub const DEFAULT_NOISE_SIGMA: f64 = 1.8e-6;

/// Sources must stay at least this far from the sensor plane.
pub const MIN_PLANE_CLEARANCE: f64 = 0.01;

const MAX_ITERATIONS: usize = 100;
const GRADIENT_TOL: f64 = 1e-12;
const STEP_TOL: f64 = 1e-10;
/// Residuals are scaled to microtesla inside the solver.
const RESIDUAL_SCALE: f64 = 1e6;

#[derive(Debug, Clone, PartialEq)]
pub struct SensorArray {
    pub positions: Vec<Vec3>,
    /// Gaussian noise standard deviation per axis, T.
    pub noise_sigma: f64,
    /// Sensor output rate, Hz.
    pub sample_rate: f64,
}

impl SensorArray {
    /// 8×10 grid in the z = 0 plane with 6 cm pitch, origin at sensor 0.
    pub fn grid(noise_sigma: f64) -> Result<Self> {
        if !(noise_sigma >= 0.0 && noise_sigma.is_finite()) {
            return invalid(format!("noise sigma must be non-negative, got {noise_sigma}"));
        }
        let positions = (0..SENSOR_COUNT)
            .map(|k| {
                Vec3::new(
                    (k % GRID_COLS) as f64 * SENSOR_SPACING,
                    (k / GRID_COLS) as f64 * SENSOR_SPACING,
                    0.0,
                )
            })
            .collect();
        Ok(Self {
            positions,
            noise_sigma,
            sample_rate: 100.0,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    /// Centre of the grid footprint.
    pub fn centre(&self) -> Vec3 {
        self.positions.iter().sum::<Vec3>() / self.positions.len() as f64
    }
}

/// One simultaneous sample of every sensor, T.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldReading {
    pub values: Vec<Vec3>,
    pub timestamp: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PoseEstimate {
    pub position: Vec3,
    pub moment_direction: UnitVec3,
    pub heading: UnitVec3,
    /// Root-mean-square per-axis fit residual, T.
    pub residual_rms: f64,
    pub converged: bool,
    pub iterations: usize,
}

impl PoseEstimate {
    pub fn new(position: Vec3, moment_direction: UnitVec3, heading: UnitVec3) -> Self {
        Self {
            position,
            moment_direction,
            heading,
            residual_rms: 0.0,
            converged: true,
            iterations: 0,
        }
    }
}

fn check_clearance(src: &DipoleSource) -> Result<()> {
    if src.position.z.abs() < MIN_PLANE_CLEARANCE {
        return Err(Error::Singularity {
            distance: src.position.z.abs(),
            min: MIN_PLANE_CLEARANCE,
        });
    }
    Ok(())
}

/// Simulated reading of the capsule (plus optional actuator and background)
/// with independent Gaussian noise drawn from `rng`.
pub fn simulate_reading_with_rng<R: Rng>(
    array: &SensorArray,
    capsule: &DipoleSource,
    actuator: Option<&DipoleSource>,
    background: &Vec3,
    timestamp: f64,
    rng: &mut R,
) -> Result<FieldReading> {
    check_clearance(capsule)?;
    if let Some(a) = actuator {
        check_clearance(a)?;
    }
    let noise = if array.noise_sigma > 0.0 {
        Some(Normal::new(0.0, array.noise_sigma).map_err(|e| Error::InvalidParameter(e.to_string()))?)
    } else {
        None
    };
    let values = array
        .positions
        .iter()
        .map(|s| {
            let mut b = capsule.field_at(s)? + background;
            if let Some(a) = actuator {
                b += a.field_at(s)?;
            }
            if let Some(n) = &noise {
                b += Vec3::new(n.sample(rng), n.sample(rng), n.sample(rng));
            }
            Ok(b)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FieldReading { values, timestamp })
}

/// Seeded variant of [`simulate_reading_with_rng`].
pub fn simulate_reading(
    array: &SensorArray,
    capsule: &DipoleSource,
    actuator: Option<&DipoleSource>,
    background: &Vec3,
    timestamp: f64,
    seed: u64,
) -> Result<FieldReading> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    simulate_reading_with_rng(array, capsule, actuator, background, timestamp, &mut rng)
}

/// Removes the modelled actuator field and the constant background.
pub fn subtract_actuator(
    array: &SensorArray,
    reading: &FieldReading,
    actuator: Option<&DipoleSource>,
    background: &Vec3,
) -> Result<FieldReading> {
    if reading.values.len() != array.len() {
        return invalid(format!(
            "reading has {} sensors, array has {}",
            reading.values.len(),
            array.len()
        ));
    }
    let values = reading
        .values
        .iter()
        .zip(&array.positions)
        .map(|(b, s)| {
            let mut out = b - background;
            if let Some(a) = actuator {
                out -= a.field_at(s)?;
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(FieldReading {
        values,
        timestamp: reading.timestamp,
    })
}

/// Background field estimated from a capsule-free reading: the mean
/// per-sensor residual after removing the actuator.
pub fn estimate_background(
    array: &SensorArray,
    reading: &FieldReading,
    actuator: Option<&DipoleSource>,
) -> Result<Vec3> {
    let clean = subtract_actuator(array, reading, actuator, &Vec3::zeros())?;
    Ok(clean.values.iter().sum::<Vec3>() / clean.values.len() as f64)
}

struct DipoleFit<'a> {
    sensors: &'a [Vec3],
    measured: &'a [Vec3],
    moment: f64,
}

impl DipoleFit<'_> {
    /// Scaled residuals and their sum of squares, or `None` if the trial pose
    /// collides with a sensor.
    fn residuals(&self, p: &Vec3, m: &UnitVec3) -> Option<(Vec<f64>, f64)> {
        let mut res = Vec::with_capacity(3 * self.sensors.len());
        for (s, b) in self.sensors.iter().zip(self.measured) {
            let model = dipole_field(&(s - p), self.moment, m).ok()?;
            let d = (model - b) * RESIDUAL_SCALE;
            res.extend_from_slice(d.as_slice());
        }
        let cost = res.iter().map(|r| r * r).sum();
        Some((res, cost))
    }

    /// Normal-equation blocks `JᵀJ` and `Jᵀr` in the local parametrization
    /// (position, two tangent-plane rotations of the moment).
    fn normal_equations(
        &self,
        p: &Vec3,
        m: &UnitVec3,
        basis: &[Vec3; 2],
        res: &[f64],
    ) -> Result<(Matrix5<f64>, Vector5<f64>)> {
        let mut jtj = Matrix5::zeros();
        let mut jtr = Vector5::zeros();
        for (i, s) in self.sensors.iter().enumerate() {
            let r = s - p;
            let dist2 = r.norm_squared();
            let k = MU0 * self.moment / (4.0 * PI * dist2.powf(2.5));
            let dpos = -dipole_field_jacobian(&r, self.moment, m)?;
            let e0 = (r * (3.0 * r.dot(&basis[0])) - basis[0] * dist2) * k;
            let e1 = (r * (3.0 * r.dot(&basis[1])) - basis[1] * dist2) * k;
            for axis in 0..3 {
                let row = Vector5::new(dpos[(axis, 0)], dpos[(axis, 1)], dpos[(axis, 2)], e0[axis], e1[axis])
                    * RESIDUAL_SCALE;
                jtj += row * row.transpose();
                jtr += row * res[3 * i + axis];
            }
        }
        Ok((jtj, jtr))
    }
}

fn tangent_basis(m: &UnitVec3) -> [Vec3; 2] {
    let helper = if m.x.abs() < 0.9 { Vec3::x() } else { Vec3::y() };
    let a = m.cross(&helper).normalize();
    let b = m.cross(&a);
    [a, b]
}

/// Fits the capsule dipole (known moment magnitude) to a reading with the
/// actuator already removed. The heading is carried over from the guess.
pub fn localize_capsule(
    array: &SensorArray,
    reading: &FieldReading,
    known_moment_magnitude: f64,
    initial_guess: &PoseEstimate,
) -> Result<PoseEstimate> {
    if reading.values.len() != array.len() {
        return invalid("reading does not match the sensor array");
    }
    if array.len() < 9 {
        return invalid("localization needs at least 9 sensors");
    }
    if !(known_moment_magnitude > 0.0) {
        return invalid("moment magnitude must be positive");
    }
    let fit = DipoleFit {
        sensors: &array.positions,
        measured: &reading.values,
        moment: known_moment_magnitude,
    };
    let mut p = initial_guess.position;
    let mut m = initial_guess.moment_direction;
    let (mut res, mut cost) = fit.residuals(&p, &m).ok_or(Error::Singularity {
        distance: 0.0,
        min: crate::magnetics::MIN_SEPARATION,
    })?;
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;

    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let basis = tangent_basis(&m);
        let (jtj, jtr) = fit.normal_equations(&p, &m, &basis, &res)?;
        if jtr.norm() < GRADIENT_TOL {
            converged = true;
            break;
        }
        if jtj.diagonal().iter().any(|d| !(*d > 0.0)) {
            return Err(Error::DegenerateGeometry("localization Jacobian has an empty column"));
        }
        // inner loop: raise damping until the step lowers the cost
        let mut accepted = false;
        let mut tiny_step = false;
        while lambda < 1e16 {
            let mut damped = jtj;
            for d in 0..5 {
                damped[(d, d)] *= 1.0 + lambda;
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= 10.0;
                continue;
            };
            let step = -chol.solve(&jtr);
            let dp = Vec3::new(step[0], step[1], step[2]);
            let dm = basis[0] * step[3] + basis[1] * step[4];
            tiny_step = dp.norm() < STEP_TOL && dm.norm() < STEP_TOL;
            let p_new = p + dp;
            let m_new = Unit::new_normalize(m.into_inner() + dm);
            match fit.residuals(&p_new, &m_new) {
                Some((r_new, c_new)) if c_new <= cost => {
                    p = p_new;
                    m = m_new;
                    res = r_new;
                    cost = c_new;
                    lambda = (lambda / 3.0).max(1e-12);
                    accepted = true;
                    break;
                }
                _ => {
                    if tiny_step {
                        break;
                    }
                    lambda *= 4.0;
                }
            }
        }
        if tiny_step || !accepted {
            converged = tiny_step || cost == 0.0;
            break;
        }
    }

    let n = res.len() as f64;
    Ok(PoseEstimate {
        position: p,
        moment_direction: m,
        heading: initial_guess.heading,
        residual_rms: (cost / n).sqrt() / RESIDUAL_SCALE,
        converged,
        iterations,
    })
}

/// Least-squares cubic Bézier fit to the last `window` track points
/// (chord-length parametrization); returns the unit tangent at the end.
/// Needs at least 4 points and 2 mm between the first and last of them.
pub fn estimate_heading(history: &[(f64, Vec3)], window: usize) -> Result<UnitVec3> {
    const MIN_TRAVEL: f64 = 2e-3;
    if window < 4 {
        return invalid(format!("heading window must be at least 4, got {window}"));
    }
    if history.len() < 4 {
        return Err(Error::StaleHeading(format!("{} track points, need 4", history.len())));
    }
    let pts: Vec<Vec3> = history[history.len().saturating_sub(window)..]
        .iter()
        .map(|(_, p)| *p)
        .collect();
    let mut cum = vec![0.0];
    for w in pts.windows(2) {
        cum.push(cum.last().unwrap() + (w[1] - w[0]).norm());
    }
    let travel = *cum.last().unwrap();
    // net displacement, so jitter of a resting capsule does not count
    let net = (pts[pts.len() - 1] - pts[0]).norm();
    if net < MIN_TRAVEL {
        return Err(Error::StaleHeading(format!(
            "travel {net:.2e} m below {MIN_TRAVEL:.0e} m"
        )));
    }

    let n = pts.len();
    let basis = DMatrix::from_fn(n, 4, |i, j| {
        let t = cum[i] / travel;
        let u = 1.0 - t;
        match j {
            0 => u * u * u,
            1 => 3.0 * u * u * t,
            2 => 3.0 * u * t * t,
            _ => t * t * t,
        }
    });
    let targets = DMatrix::from_fn(n, 3, |i, j| pts[i][j]);
    let normal: Matrix4<f64> = (basis.transpose() * &basis).fixed_view::<4, 4>(0, 0).into_owned();
    let rhs = basis.transpose() * targets;
    let Some(lu) = normal.try_inverse() else {
        return Err(Error::StaleHeading("track points do not determine a curve".into()));
    };
    let ctrl = lu * rhs;
    let tangent = Vec3::new(
        ctrl[(3, 0)] - ctrl[(2, 0)],
        ctrl[(3, 1)] - ctrl[(2, 1)],
        ctrl[(3, 2)] - ctrl[(2, 2)],
    );
    Unit::try_new(tangent, 1e-12 * travel).ok_or_else(|| Error::StaleHeading("vanishing end tangent".into()))
}

#[derive(Debug, Serialize, Deserialize)]
struct ReadingRow {
    t: f64,
    sensor_index: usize,
    bx: f64,
    by: f64,
    bz: f64,
}

/// Writes readings as `t,sensor_index,bx,by,bz`, sensor-major (all samples of
/// sensor 0 first).
pub fn write_readings_csv<W: Write>(writer: W, readings: &[FieldReading]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let sensors = readings.first().map_or(0, |r| r.values.len());
    if readings.iter().any(|r| r.values.len() != sensors) {
        return invalid("readings have differing sensor counts");
    }
    for k in 0..sensors {
        for r in readings {
            let b = r.values[k];
            w.serialize(ReadingRow {
                t: r.timestamp,
                sensor_index: k,
                bx: b.x,
                by: b.y,
                bz: b.z,
            })?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a file written by [`write_readings_csv`]; readings come back in
/// order of first appearance of each timestamp.
pub fn read_readings_csv<R: Read>(reader: R) -> Result<Vec<FieldReading>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out: Vec<FieldReading> = Vec::new();
    for row in rdr.deserialize() {
        let row: ReadingRow = row?;
        let idx = match out.iter().position(|r| r.timestamp == row.t) {
            Some(i) => i,
            None => {
                out.push(FieldReading {
                    values: Vec::new(),
                    timestamp: row.t,
                });
                out.len() - 1
            }
        };
        let values = &mut out[idx].values;
        if values.len() <= row.sensor_index {
            values.resize(row.sensor_index + 1, Vec3::repeat(f64::NAN));
        }
        values[row.sensor_index] = Vec3::new(row.bx, row.by, row.bz);
    }
    for r in &out {
        if r.values.iter().any(|v| !v.iter().all(|c| c.is_finite())) {
            return invalid(format!(
                "reading at t = {} is missing sensors or has non-finite values",
                r.timestamp
            ));
        }
    }
    Ok(out)
}

/// Outcome of one randomized localization trial.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrialOutcome {
    pub position_error: f64,
    /// Angle between true and estimated moment directions, rad.
    pub orientation_error: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Capsule workspace above the array used by randomized trials, m.
pub const WORKSPACE_MIN: [f64; 3] = [0.0, 0.0, 0.05];
pub const WORKSPACE_MAX: [f64; 3] = [0.42, 0.54, 0.20];

pub fn random_unit<R: Rng>(rng: &mut R) -> UnitVec3 {
    let z: f64 = rng.random_range(-1.0..1.0);
    let phi: f64 = rng.random_range(0.0..2.0 * PI);
    let s = (1.0 - z * z).sqrt();
    Unit::new_normalize(Vec3::new(s * phi.cos(), s * phi.sin(), z))
}

/// Random capsule pose in the workspace, a noisy reading of it, and a fit
/// started from a guess perturbed by up to 2 cm and 20°.
pub fn localization_trial(array: &SensorArray, moment: f64, seed: u64) -> Result<TrialOutcome> {
    Ok(localization_trial_with_reading(array, moment, seed)?.0)
}

/// [`localization_trial`] that also returns the simulated reading.
pub fn localization_trial_with_reading(
    array: &SensorArray,
    moment: f64,
    seed: u64,
) -> Result<(TrialOutcome, FieldReading)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pos = Vec3::from_fn(|i, _| rng.random_range(WORKSPACE_MIN[i]..=WORKSPACE_MAX[i]));
    let dir = random_unit(&mut rng);
    let truth = DipoleSource::new(pos, moment, dir)?;
    let reading = simulate_reading_with_rng(array, &truth, None, &Vec3::zeros(), 0.0, &mut rng)?;

    let offset = random_unit(&mut rng).into_inner() * rng.random_range(0.0..0.02);
    let tilt_axis = Unit::new_normalize(dir.cross(&random_unit(&mut rng)));
    let tilt = nalgebra::Rotation3::from_axis_angle(&tilt_axis, rng.random_range(0.0..20f64.to_radians()));
    let guess = PoseEstimate::new(
        pos + offset,
        Unit::new_normalize(tilt * dir.into_inner()),
        Vec3::x_axis(),
    );

    let est = localize_capsule(array, &reading, moment, &guess)?;
    let outcome = TrialOutcome {
        position_error: (est.position - pos).norm(),
        orientation_error: est.moment_direction.dot(&dir).clamp(-1.0, 1.0).acos(),
        converged: est.converged,
        iterations: est.iterations,
    };
    Ok((outcome, reading))
}

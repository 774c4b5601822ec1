//! Run configuration shared by the CLI commands.
//!
//! Angles are in degrees here and converted at the boundary to the models.
//! A TOML file may set any subset of fields; command-line flags override it.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::actuation::{ActuationGeometry, ActuationMode, Moments};
use crate::error::{invalid, Error, Result};
use crate::magnetics::{moment_magnitude_from_spec, MagnetSpec, Vec3};
use crate::sensing::DEFAULT_NOISE_SIGMA;
use crate::sim::{default_environment, SimConfig, TubeEnvironment};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModeName {
    Dma,
    Crma,
    Rrma,
}

impl ModeName {
    pub const ALL: [ModeName; 3] = [ModeName::Dma, ModeName::Crma, ModeName::Rrma];

    pub fn as_str(&self) -> &'static str {
        match self {
            Self::Dma => "dma",
            Self::Crma => "crma",
            Self::Rrma => "rrma",
        }
    }

    /// The actuation mode, with `theta_ar_deg` used only for RRMA.
    pub fn mode(&self, theta_ar_deg: f64) -> Result<ActuationMode> {
        match self {
            Self::Dma => Ok(ActuationMode::Dma),
            Self::Crma => Ok(ActuationMode::Crma),
            Self::Rrma => ActuationMode::rrma(theta_ar_deg.to_radians()),
        }
    }
}

impl fmt::Display for ModeName {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ModeName {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "dma" => Ok(Self::Dma),
            "crma" => Ok(Self::Crma),
            "rrma" => Ok(Self::Rrma),
            other => invalid(format!("unknown actuation mode '{other}' (expected dma, crma or rrma)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Actuator-capsule distance, m.
    pub d_m: f64,
    pub alpha_deg: f64,
    pub beta_deg: f64,
    pub actuator_magnet: MagnetSpec,
    pub capsule_magnet: MagnetSpec,
    pub mode: ModeName,
    pub theta_ar_deg: f64,
    pub spin_rate_deg_s: f64,
    pub noise_sigma_t: f64,
    pub dt_s: f64,
    pub time_budget_s: f64,
    pub seed: u64,
    /// Wall friction coefficient for the risk analysis.
    pub mu_wall: f64,
    /// Samples per revolution for force profiles.
    pub profile_samples: usize,
    /// Samples per cycle for contact profiles (multiple of 4).
    pub risk_samples: usize,
    pub n_trials: usize,
    pub n_seeds: usize,
    pub stall_limit: u32,
    pub localizer: bool,
    pub specimen_spread: f64,
    /// Environment file; the built-in tube when absent.
    pub environment: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            d_m: 0.15,
            alpha_deg: 10.0,
            beta_deg: 0.0,
            actuator_magnet: MagnetSpec::default_actuator(),
            capsule_magnet: MagnetSpec::default_capsule(),
            mode: ModeName::Rrma,
            theta_ar_deg: 90.0,
            spin_rate_deg_s: 360.0,
            noise_sigma_t: DEFAULT_NOISE_SIGMA,
            dt_s: 0.01,
            time_budget_s: 300.0,
            seed: 0,
            mu_wall: 0.3,
            profile_samples: 360,
            risk_samples: 256,
            n_trials: 500,
            n_seeds: 5,
            stall_limit: 500,
            localizer: true,
            specimen_spread: 0.3,
            environment: None,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let positive = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                invalid(format!("{name} must be positive, got {v}"))
            }
        };
        positive("d_m", self.d_m)?;
        positive("spin_rate_deg_s", self.spin_rate_deg_s)?;
        positive("time_budget_s", self.time_budget_s)?;
        positive("mu_wall", self.mu_wall)?;
        if !(self.alpha_deg.abs() < 90.0) {
            return invalid(format!("alpha_deg must lie in (-90, 90), got {}", self.alpha_deg));
        }
        if !self.beta_deg.is_finite() {
            return invalid("beta_deg must be finite");
        }
        if !(self.theta_ar_deg > 0.0 && self.theta_ar_deg <= 90.0) {
            return invalid(format!("theta_ar_deg must lie in (0, 90], got {}", self.theta_ar_deg));
        }
        if !(self.noise_sigma_t >= 0.0 && self.noise_sigma_t.is_finite()) {
            return invalid("noise_sigma_t must be non-negative");
        }
        if !(self.dt_s > 1e-4 && self.dt_s <= 0.1) {
            return invalid(format!("dt_s must lie in (1e-4, 0.1], got {}", self.dt_s));
        }
        if self.n_trials == 0 || self.n_seeds == 0 {
            return invalid("n_trials and n_seeds must be at least 1");
        }
        self.actuator_magnet.validate()?;
        self.capsule_magnet.validate()?;
        self.geometry()?;
        Ok(())
    }

    /// Placement with the desired capsule axis along +x.
    pub fn geometry(&self) -> Result<ActuationGeometry> {
        ActuationGeometry::new(
            self.d_m,
            self.alpha_deg.to_radians(),
            self.beta_deg.to_radians(),
            Vec3::x_axis(),
        )
    }

    pub fn moments(&self) -> Result<Moments> {
        Ok(Moments {
            actuator: moment_magnitude_from_spec(&self.actuator_magnet)?,
            capsule: moment_magnitude_from_spec(&self.capsule_magnet)?,
        })
    }

    pub fn actuation_mode(&self) -> Result<ActuationMode> {
        self.mode.mode(self.theta_ar_deg)
    }

    pub fn spin_rate(&self) -> f64 {
        self.spin_rate_deg_s.to_radians()
    }

    pub fn sim_config(&self) -> Result<SimConfig> {
        let cfg = SimConfig {
            dt: self.dt_s,
            time_budget: self.time_budget_s,
            stall_limit: self.stall_limit,
            localizer: self.localizer,
            noise_sigma: self.noise_sigma_t,
            geometry: self.geometry()?,
            moments: self.moments()?,
            spin_rate: self.spin_rate(),
            specimen_spread: self.specimen_spread,
            ..SimConfig::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn tube(&self) -> Result<TubeEnvironment> {
        match &self.environment {
            Some(path) => TubeEnvironment::load(path),
            None => Ok(default_environment()),
        }
    }
}

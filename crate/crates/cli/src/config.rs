//! Scenario configuration: a single TOML file with sections for the
//! ensemble sources, the expansion, the planner and the conflict analysis.

use std::path::{Path, PathBuf};

use serde::Deserialize;
use windconflict_core::trajectory::AircraftSpec;

use crate::error::CliError;

pub const METERS_PER_NM: f64 = 1852.0;

/// Output-directory override honored by every subcommand.
pub const OUT_DIR_ENV: &str = "WINDCONFLICT_OUT";

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioSection,
    pub expansion: ExpansionSection,
    #[serde(default)]
    pub trajectory: TrajectorySection,
    #[serde(default)]
    pub conditioning: Option<ConditioningSection>,
    #[serde(default)]
    pub synthetic: Option<SyntheticSection>,
    pub aircraft: Vec<AircraftSection>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioSection {
    /// Ensemble CSV paths, pooled in order. May be empty when a
    /// `[synthetic]` section supplies the ensemble instead.
    #[serde(default)]
    pub ensembles: Vec<PathBuf>,
    pub output_dir: PathBuf,
    #[serde(default)]
    pub seed: u64,
    pub threshold_nm: f64,
    #[serde(default)]
    pub probe_times: Vec<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExpansionSection {
    /// Number of retained modes. Exactly one of `modes` and
    /// `explained_variance` must be present.
    pub modes: Option<usize>,
    /// Retain the smallest mode count whose cumulative explained-variance
    /// fraction reaches this value.
    pub explained_variance: Option<f64>,
    pub quadrature_order: usize,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectorySection {
    pub time_step: f64,
    pub max_flight_time: f64,
}

impl Default for TrajectorySection {
    fn default() -> Self {
        Self {
            time_step: windconflict_core::trajectory::DEFAULT_TIME_STEP_S,
            max_flight_time: 86_400.0,
        }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConditioningSection {
    /// Conditioning instant, seconds from departure.
    pub time: f64,
    /// Conditioning bound on the separation at that instant, nautical miles.
    pub bound_nm: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSection {
    pub members: usize,
    pub grid_lat0: f64,
    pub grid_lon0: f64,
    pub grid_step: f64,
    pub grid_nlat: usize,
    pub grid_nlon: usize,
    pub correlation_length: f64,
    pub cross_correlation: f64,
    pub sigma_u: f64,
    pub sigma_v: f64,
    pub mean_u: f64,
    pub mean_v: f64,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AircraftSection {
    pub id: String,
    pub origin: [f64; 2],
    pub destination: [f64; 2],
    pub airspeed: f64,
    pub altitude: f64,
}

impl AircraftSection {
    pub fn to_spec(&self) -> AircraftSpec {
        AircraftSpec {
            id: self.id.clone(),
            origin: (self.origin[0], self.origin[1]),
            destination: (self.destination[0], self.destination[1]),
            airspeed: self.airspeed,
            altitude: self.altitude,
        }
    }
}

impl ScenarioConfig {
    pub fn load(path: &Path) -> Result<(Self, Vec<u8>), CliError> {
        let bytes = std::fs::read(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let text = std::str::from_utf8(&bytes)
            .map_err(|_| CliError::Config(format!("{} is not UTF-8", path.display())))?;
        let mut config: ScenarioConfig =
            toml::from_str(text).map_err(|e| CliError::Config(format!("{e}")))?;
        if let Ok(dir) = std::env::var(OUT_DIR_ENV) {
            config.scenario.output_dir = PathBuf::from(dir);
        }
        config.validate()?;
        Ok((config, bytes))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let fail = |field: &str, msg: String| Err(CliError::Config(format!("{field}: {msg}")));

        if self.scenario.ensembles.is_empty() && self.synthetic.is_none() {
            return fail(
                "scenario.ensembles",
                "at least one ensemble file (or a [synthetic] section) is required".into(),
            );
        }
        if !self.scenario.ensembles.is_empty() && self.synthetic.is_some() {
            return fail(
                "scenario.ensembles",
                "ensemble files and a [synthetic] section are mutually exclusive".into(),
            );
        }
        if !(self.scenario.threshold_nm > 0.0) {
            return fail(
                "scenario.threshold_nm",
                format!("must be positive, got {}", self.scenario.threshold_nm),
            );
        }
        for (i, t) in self.scenario.probe_times.iter().enumerate() {
            if !t.is_finite() || *t < 0.0 {
                return fail(
                    "scenario.probe_times",
                    format!("entry {i} must be a nonnegative time, got {t}"),
                );
            }
        }

        match (self.expansion.modes, self.expansion.explained_variance) {
            (Some(_), Some(_)) => {
                return fail(
                    "expansion.modes",
                    "set either modes or explained_variance, not both".into(),
                )
            }
            (None, None) => {
                return fail(
                    "expansion.modes",
                    "one of modes or explained_variance is required".into(),
                )
            }
            (Some(m), None) if m < 1 => {
                return fail("expansion.modes", format!("must be at least 1, got {m}"))
            }
            (None, Some(d)) if !(d > 0.0 && d <= 1.0) => {
                return fail(
                    "expansion.explained_variance",
                    format!("must lie in (0, 1], got {d}"),
                )
            }
            _ => {}
        }
        if self.expansion.quadrature_order < 1 {
            return fail(
                "expansion.quadrature_order",
                format!("must be at least 1, got {}", self.expansion.quadrature_order),
            );
        }

        if !(self.trajectory.time_step > 0.0) {
            return fail(
                "trajectory.time_step",
                format!("must be positive, got {}", self.trajectory.time_step),
            );
        }
        if !(self.trajectory.max_flight_time > self.trajectory.time_step) {
            return fail(
                "trajectory.max_flight_time",
                format!(
                    "must exceed the time step, got {}",
                    self.trajectory.max_flight_time
                ),
            );
        }

        if let Some(c) = &self.conditioning {
            if !c.time.is_finite() || c.time < 0.0 {
                return fail("conditioning.time", format!("must be nonnegative, got {}", c.time));
            }
            if !(c.bound_nm > 0.0) && !c.bound_nm.is_infinite() {
                return fail(
                    "conditioning.bound_nm",
                    format!("must be positive (inf allowed), got {}", c.bound_nm),
                );
            }
        }

        if let Some(s) = &self.synthetic {
            if s.members < 2 {
                return fail("synthetic.members", format!("need at least 2, got {}", s.members));
            }
            if s.grid_nlat < 2 || s.grid_nlon < 2 {
                return fail(
                    "synthetic.grid_nlat",
                    format!("grid must be at least 2x2, got {}x{}", s.grid_nlat, s.grid_nlon),
                );
            }
            if !(s.grid_step > 0.0) {
                return fail("synthetic.grid_step", format!("must be positive, got {}", s.grid_step));
            }
            if !(s.correlation_length > 0.0) {
                return fail(
                    "synthetic.correlation_length",
                    format!("must be positive, got {}", s.correlation_length),
                );
            }
            if !(s.cross_correlation > -1.0 && s.cross_correlation < 1.0) {
                return fail(
                    "synthetic.cross_correlation",
                    format!("must lie in (-1, 1), got {}", s.cross_correlation),
                );
            }
            if !(s.sigma_u > 0.0) || !(s.sigma_v > 0.0) {
                return fail(
                    "synthetic.sigma_u",
                    format!("standard deviations must be positive, got {} / {}", s.sigma_u, s.sigma_v),
                );
            }
        }

        if self.aircraft.len() < 2 {
            return fail(
                "aircraft",
                format!("need at least 2 aircraft, got {}", self.aircraft.len()),
            );
        }
        for entry in &self.aircraft {
            if entry.id.is_empty()
                || !entry.id.chars().all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_')
            {
                return fail(
                    "aircraft.id",
                    format!("'{}' must be nonempty alphanumeric/-/_", entry.id),
                );
            }
            entry
                .to_spec()
                .validate()
                .map_err(|e| CliError::Config(format!("aircraft.{}: {e}", entry.id)))?;
        }
        for i in 0..self.aircraft.len() {
            for j in i + 1..self.aircraft.len() {
                if self.aircraft[i].id == self.aircraft[j].id {
                    return fail("aircraft.id", format!("duplicate id '{}'", self.aircraft[i].id));
                }
            }
        }

        Ok(())
    }

    pub fn threshold_m(&self) -> f64 {
        self.scenario.threshold_nm * METERS_PER_NM
    }

    /// Unordered aircraft pairs in config order.
    pub fn pairs(&self) -> Vec<(usize, usize)> {
        let n = self.aircraft.len();
        let mut out = Vec::with_capacity(n * (n - 1) / 2);
        for i in 0..n {
            for j in i + 1..n {
                out.push((i, j));
            }
        }
        out
    }
}

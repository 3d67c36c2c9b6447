//! Wind-corrected great-circle flight planning on a spherical earth.
//!
//! An aircraft flies at constant true airspeed and altitude toward a fixed
//! destination. At every instant the planner recomputes the great-circle
//! bearing to the destination, crabs into the wind so the ground track
//! follows that bearing, and advances the position with a fixed-step RK4
//! integrator:
//!
//! ```text
//! d(lat)/dt = (V cos(chi) + w_north) / (R + h)
//! d(lon)/dt = (V sin(chi) + w_east) / ((R + h) cos(lat))
//! chi       = bearing - asin(w_cross / V)
//! w_cross   = w_east cos(bearing) - w_north sin(bearing)
//! ```
//!
//! with `R` the mean earth radius and `h` the cruise altitude. Integration
//! stops once the aircraft is within the arrival tolerance of the
//! destination; the exact tolerance-crossing time is then refined by
//! bisection inside the final step, so arrival times converge at the full
//! fourth-order rate of the integrator even though states live on a fixed
//! time grid.
//!
//! Positions queried past the end of a flown trajectory are held at the
//! destination, which lets two flights of different duration share one time
//! grid for separation analysis.

use crate::ensemble::{WindEnsemble, WindMember};
use crate::error::{RbfError, TrajectoryError};
use crate::grid::WindGrid;
use crate::numfmt::sig9;
use crate::rbf::{fit_rbf, RbfInterpolant};

/// Mean earth radius in meters.
pub const EARTH_RADIUS_M: f64 = 6_371_000.0;

/// Default integration step in seconds.
pub const DEFAULT_TIME_STEP_S: f64 = 10.0;

/// Default arrival tolerance in meters: integration stops once the aircraft
/// is this close to its destination.
pub const ARRIVAL_TOLERANCE_M: f64 = 2000.0;

/// A horizontal wind sampled at a geographic position, in meters per
/// second: `(east, north)`.
pub trait WindField {
    /// Wind components at a position given in degrees.
    ///
    /// # Errors
    ///
    /// Returns an error if the position cannot be evaluated, for example
    /// outside an interpolant's fitted domain.
    fn wind(&self, lat_deg: f64, lon_deg: f64) -> Result<(f64, f64), RbfError>;
}

/// Calm air everywhere.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroWind;

impl WindField for ZeroWind {
    fn wind(&self, _lat_deg: f64, _lon_deg: f64) -> Result<(f64, f64), RbfError> {
        Ok((0.0, 0.0))
    }
}

/// The same wind vector everywhere.
#[derive(Debug, Clone, Copy)]
pub struct UniformWind {
    /// Eastward component, m/s.
    pub east: f64,
    /// Northward component, m/s.
    pub north: f64,
}

impl WindField for UniformWind {
    fn wind(&self, _lat_deg: f64, _lon_deg: f64) -> Result<(f64, f64), RbfError> {
        Ok((self.east, self.north))
    }
}

/// A wind field interpolated from gridded components with radial basis
/// functions, the continuous view of one ensemble member.
#[derive(Debug, Clone)]
pub struct RbfWindField {
    east: RbfInterpolant,
    north: RbfInterpolant,
}

impl RbfWindField {
    /// Wraps already fitted interpolants for the east and north components.
    pub fn new(east: RbfInterpolant, north: RbfInterpolant) -> Self {
        Self { east, north }
    }

    /// Fits both components of a gridded wind member.
    ///
    /// # Errors
    ///
    /// Returns an error if either interpolation system cannot be solved.
    pub fn from_member(
        grid: &WindGrid,
        member: &WindMember,
        epsilon: Option<f64>,
    ) -> Result<Self, RbfError> {
        Ok(Self {
            east: fit_rbf(grid, &member.u, epsilon)?,
            north: fit_rbf(grid, &member.v, epsilon)?,
        })
    }

    /// Fits the ensemble-mean wind of `ensemble`.
    ///
    /// # Errors
    ///
    /// Returns an error if either interpolation system cannot be solved.
    pub fn from_ensemble_mean(
        ensemble: &WindEnsemble,
        epsilon: Option<f64>,
    ) -> Result<Self, RbfError> {
        Ok(Self {
            east: fit_rbf(ensemble.grid(), &ensemble.mean_u(), epsilon)?,
            north: fit_rbf(ensemble.grid(), &ensemble.mean_v(), epsilon)?,
        })
    }
}

impl WindField for RbfWindField {
    fn wind(&self, lat_deg: f64, lon_deg: f64) -> Result<(f64, f64), RbfError> {
        Ok((self.east.eval(lat_deg, lon_deg)?, self.north.eval(lat_deg, lon_deg)?))
    }
}

/// A flight to plan: endpoints in degrees, airspeed in m/s, cruise altitude
/// in meters.
#[derive(Debug, Clone, PartialEq)]
pub struct AircraftSpec {
    /// Identifier used in artifact names and reports.
    pub id: String,
    /// Origin `(lat, lon)` in degrees.
    pub origin: (f64, f64),
    /// Destination `(lat, lon)` in degrees.
    pub destination: (f64, f64),
    /// True airspeed, m/s.
    pub airspeed: f64,
    /// Cruise altitude above the mean radius, m.
    pub altitude: f64,
}

impl AircraftSpec {
    /// Checks ranges and finiteness of every field.
    ///
    /// Latitudes are restricted to 89 degrees so the longitude rate stays
    /// well defined along any route between the endpoints.
    ///
    /// # Errors
    ///
    /// Returns an error naming the first offending field.
    pub fn validate(&self) -> Result<(), TrajectoryError> {
        let check_point = |field: &'static str, (lat, lon): (f64, f64)| {
            if !lat.is_finite() || !lon.is_finite() {
                return Err(TrajectoryError::InvalidSpec { field, reason: "must be finite".into() });
            }
            if lat.abs() > 89.0 {
                return Err(TrajectoryError::InvalidSpec {
                    field,
                    reason: format!("latitude {lat} outside [-89, 89]"),
                });
            }
            if lon.abs() > 360.0 {
                return Err(TrajectoryError::InvalidSpec {
                    field,
                    reason: format!("longitude {lon} outside [-360, 360]"),
                });
            }
            Ok(())
        };
        if self.id.is_empty() {
            return Err(TrajectoryError::InvalidSpec {
                field: "id",
                reason: "must not be empty".into(),
            });
        }
        check_point("origin", self.origin)?;
        check_point("destination", self.destination)?;
        if self.origin == self.destination {
            return Err(TrajectoryError::InvalidSpec {
                field: "destination",
                reason: "must differ from origin".into(),
            });
        }
        if !(self.airspeed.is_finite() && self.airspeed > 0.0) {
            return Err(TrajectoryError::InvalidSpec {
                field: "airspeed",
                reason: format!("{} is not a positive speed", self.airspeed),
            });
        }
        if !(self.altitude.is_finite() && self.altitude >= 0.0) {
            return Err(TrajectoryError::InvalidSpec {
                field: "altitude",
                reason: format!("{} is not a valid altitude", self.altitude),
            });
        }
        Ok(())
    }

    /// Flight radius `R + h` used for all distances along this flight.
    pub fn radius_m(&self) -> f64 {
        EARTH_RADIUS_M + self.altitude
    }
}

/// One fixed-grid sample of a flown trajectory, all in degrees. Heading is
/// the crab-corrected compass direction of the nose, 0 north, 90 east,
/// normalized to `(-180, 180]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrajectoryState {
    pub lat: f64,
    pub lon: f64,
    pub heading: f64,
}

/// A flown trajectory on a fixed time grid `t0 + i * dt`.
///
/// `states` covers takeoff through the first on-grid sample inside the
/// arrival tolerance. [`position_at`](Self::position_at) extends the flight
/// past that: an arrived aircraft holds exactly at its destination.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    t0: f64,
    dt: f64,
    radius_m: f64,
    destination: (f64, f64),
    states: Vec<TrajectoryState>,
    arrival_index: Option<usize>,
    arrival_time: Option<f64>,
}

impl Trajectory {
    /// Assembles a trajectory from raw parts, for planners and tests.
    ///
    /// # Panics
    ///
    /// Panics if `states` is empty, `dt` is not positive, or an arrival
    /// index is out of range.
    pub fn from_parts(
        t0: f64,
        dt: f64,
        radius_m: f64,
        destination: (f64, f64),
        states: Vec<TrajectoryState>,
        arrival_index: Option<usize>,
        arrival_time: Option<f64>,
    ) -> Self {
        assert!(!states.is_empty(), "a trajectory needs at least one state");
        assert!(dt > 0.0, "time step must be positive");
        if let Some(i) = arrival_index {
            assert!(i < states.len(), "arrival index {i} out of range");
        }
        Self { t0, dt, radius_m, destination, states, arrival_index, arrival_time }
    }

    /// Start time of the grid, seconds.
    pub fn t0(&self) -> f64 {
        self.t0
    }

    /// Grid spacing, seconds.
    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Distance radius `R + h`, meters.
    pub fn radius_m(&self) -> f64 {
        self.radius_m
    }

    /// Destination `(lat, lon)` in degrees.
    pub fn destination(&self) -> (f64, f64) {
        self.destination
    }

    /// Number of on-grid states.
    pub fn len(&self) -> usize {
        self.states.len()
    }

    /// Always false: trajectories hold at least the initial state.
    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    /// Time of grid index `i`.
    pub fn time_at(&self, i: usize) -> f64 {
        self.t0 + i as f64 * self.dt
    }

    /// The on-grid states.
    pub fn states(&self) -> &[TrajectoryState] {
        &self.states
    }

    /// Index of the first on-grid state inside the arrival tolerance, if
    /// the flight arrived.
    pub fn arrival_index(&self) -> Option<usize> {
        self.arrival_index
    }

    /// Bisection-refined time at which the flight crossed the arrival
    /// tolerance, if it arrived. Not constrained to the grid.
    pub fn arrival_time(&self) -> Option<f64> {
        self.arrival_time
    }

    /// Position at grid index `i`, in degrees, extended beyond the flown
    /// states: an arrived flight holds at its destination, an unfinished
    /// one at its last state.
    pub fn position_at(&self, i: usize) -> (f64, f64) {
        if let Some(state) = self.states.get(i) {
            return (state.lat, state.lon);
        }
        if self.arrival_index.is_some() {
            self.destination
        } else {
            let last = self.states.last().expect("non-empty");
            (last.lat, last.lon)
        }
    }

    /// Renders the trajectory as CSV with header `t,lat,lon,heading`,
    /// values to nine significant digits, LF line endings.
    pub fn to_csv_string(&self) -> String {
        let mut out = String::from("t,lat,lon,heading\n");
        for (i, state) in self.states.iter().enumerate() {
            out.push_str(&sig9(self.time_at(i)));
            out.push(',');
            out.push_str(&sig9(state.lat));
            out.push(',');
            out.push_str(&sig9(state.lon));
            out.push(',');
            out.push_str(&sig9(state.heading));
            out.push('\n');
        }
        out
    }
}

/// Great-circle distance between two `(lat, lon)` points in degrees, on a
/// sphere of the given radius, in meters.
pub fn haversine(a: (f64, f64), b: (f64, f64), radius_m: f64) -> f64 {
    let lat1 = a.0.to_radians();
    let lat2 = b.0.to_radians();
    let dlat = (b.0 - a.0).to_radians();
    let dlon = (b.1 - a.1).to_radians();
    let s = (dlat / 2.0).sin().powi(2)
        + lat1.cos() * lat2.cos() * (dlon / 2.0).sin().powi(2);
    2.0 * radius_m * s.sqrt().min(1.0).asin()
}

/// Initial great-circle bearing from `from` to `to`, radians, compass
/// convention (0 north, pi/2 east). Inputs in radians.
fn initial_bearing_rad(from: (f64, f64), to: (f64, f64)) -> f64 {
    let (lat1, lon1) = from;
    let (lat2, lon2) = to;
    let dlon = lon2 - lon1;
    let y = dlon.sin() * lat2.cos();
    let x = lat1.cos() * lat2.sin() - lat1.sin() * lat2.cos() * dlon.cos();
    y.atan2(x)
}

fn normalize_deg(angle: f64) -> f64 {
    let mut a = angle % 360.0;
    if a <= -180.0 {
        a += 360.0;
    } else if a > 180.0 {
        a -= 360.0;
    }
    a
}

/// Anything that turns an aircraft spec and a wind field into a trajectory
/// on a fixed time grid.
pub trait Planner {
    /// Plans the flight of `spec` through `wind`.
    ///
    /// # Errors
    ///
    /// Returns an error if the flight cannot be planned; implementations
    /// document their failure modes.
    fn plan(&self, spec: &AircraftSpec, wind: &dyn WindField) -> Result<Trajectory, TrajectoryError>;
}

/// The RK4 planner described in the module docs.
#[derive(Debug, Clone, Copy)]
pub struct WindCorrectedPlanner {
    /// Integration step, seconds. Keep `airspeed * dt` under twice the
    /// arrival tolerance so the aircraft cannot step across the arrival
    /// disc.
    pub dt: f64,
    /// Flights still airborne at this time fail with a partial trajectory.
    pub max_flight_time: f64,
    /// Arrival tolerance, meters.
    pub arrival_tolerance_m: f64,
}

impl Default for WindCorrectedPlanner {
    fn default() -> Self {
        Self {
            dt: DEFAULT_TIME_STEP_S,
            max_flight_time: 86_400.0,
            arrival_tolerance_m: ARRIVAL_TOLERANCE_M,
        }
    }
}

impl WindCorrectedPlanner {
    /// A planner with the given step and default limits.
    pub fn with_dt(dt: f64) -> Self {
        Self { dt, ..Self::default() }
    }

    fn validate(&self) -> Result<(), TrajectoryError> {
        if !(self.dt.is_finite() && self.dt > 0.0) {
            return Err(TrajectoryError::InvalidParameter {
                field: "dt",
                reason: format!("{} is not a positive step", self.dt),
            });
        }
        if !(self.max_flight_time.is_finite() && self.max_flight_time >= self.dt) {
            return Err(TrajectoryError::InvalidParameter {
                field: "max_flight_time",
                reason: "must be finite and at least one step".into(),
            });
        }
        if !(self.arrival_tolerance_m.is_finite() && self.arrival_tolerance_m > 0.0) {
            return Err(TrajectoryError::InvalidParameter {
                field: "arrival_tolerance_m",
                reason: "must be a positive distance".into(),
            });
        }
        Ok(())
    }
}

/// Time derivative of `(lat, lon)` in radians, plus the heading flown.
struct Rates {
    dlat: f64,
    dlon: f64,
    heading_rad: f64,
}

fn rates(
    pos_rad: (f64, f64),
    dest_rad: (f64, f64),
    airspeed: f64,
    radius_m: f64,
    wind: &dyn WindField,
) -> Result<Rates, TrajectoryError> {
    let bearing = initial_bearing_rad(pos_rad, dest_rad);
    let (we, wn) = wind.wind(pos_rad.0.to_degrees(), pos_rad.1.to_degrees())?;
    let cross = we * bearing.cos() - wn * bearing.sin();
    if cross.abs() >= airspeed {
        return Err(TrajectoryError::CrosswindExceedsAirspeed {
            crosswind: cross,
            airspeed,
            lat: pos_rad.0.to_degrees(),
            lon: pos_rad.1.to_degrees(),
        });
    }
    let heading = bearing - (cross / airspeed).asin();
    let vn = airspeed * heading.cos() + wn;
    let ve = airspeed * heading.sin() + we;
    Ok(Rates {
        dlat: vn / radius_m,
        dlon: ve / (radius_m * pos_rad.0.cos()),
        heading_rad: heading,
    })
}

/// One RK4 step of size `h` from `pos_rad`.
fn rk4_step(
    pos_rad: (f64, f64),
    h: f64,
    dest_rad: (f64, f64),
    airspeed: f64,
    radius_m: f64,
    wind: &dyn WindField,
) -> Result<(f64, f64), TrajectoryError> {
    let at = |p: (f64, f64)| rates(p, dest_rad, airspeed, radius_m, wind);
    let k1 = at(pos_rad)?;
    let k2 = at((pos_rad.0 + 0.5 * h * k1.dlat, pos_rad.1 + 0.5 * h * k1.dlon))?;
    let k3 = at((pos_rad.0 + 0.5 * h * k2.dlat, pos_rad.1 + 0.5 * h * k2.dlon))?;
    let k4 = at((pos_rad.0 + h * k3.dlat, pos_rad.1 + h * k3.dlon))?;
    Ok((
        pos_rad.0 + h / 6.0 * (k1.dlat + 2.0 * k2.dlat + 2.0 * k3.dlat + k4.dlat),
        pos_rad.1 + h / 6.0 * (k1.dlon + 2.0 * k2.dlon + 2.0 * k3.dlon + k4.dlon),
    ))
}

impl Planner for WindCorrectedPlanner {
    /// # Errors
    ///
    /// Returns an error for an invalid spec or planner configuration, a
    /// crosswind at or above the airspeed, a failed wind lookup, or a
    /// flight still airborne at `max_flight_time` (the error carries the
    /// partial trajectory).
    fn plan(&self, spec: &AircraftSpec, wind: &dyn WindField) -> Result<Trajectory, TrajectoryError> {
        self.validate()?;
        spec.validate()?;

        let radius = spec.radius_m();
        let dest_rad = (spec.destination.0.to_radians(), spec.destination.1.to_radians());
        let mut pos = (spec.origin.0.to_radians(), spec.origin.1.to_radians());
        let mut states = Vec::new();
        let mut arrival_index = None;
        let mut arrival_time = None;

        let max_steps = (self.max_flight_time / self.dt).ceil() as usize;
        for step in 0..=max_steps {
            let here_deg = (pos.0.to_degrees(), pos.1.to_degrees());
            let k1 = rates(pos, dest_rad, spec.airspeed, radius, wind)?;
            states.push(TrajectoryState {
                lat: here_deg.0,
                lon: here_deg.1,
                heading: normalize_deg(k1.heading_rad.to_degrees()),
            });

            let dist = haversine(here_deg, spec.destination, radius);
            if dist <= self.arrival_tolerance_m {
                arrival_index = Some(step);
                arrival_time = Some(if step == 0 {
                    0.0
                } else {
                    let prev = &states[step - 1];
                    let prev_rad = (prev.lat.to_radians(), prev.lon.to_radians());
                    let t_prev = (step - 1) as f64 * self.dt;
                    t_prev
                        + refine_arrival(
                            prev_rad,
                            self.dt,
                            dest_rad,
                            spec,
                            radius,
                            self.arrival_tolerance_m,
                            wind,
                        )?
                });
                break;
            }
            if step == max_steps {
                break;
            }
            pos = rk4_step(pos, self.dt, dest_rad, spec.airspeed, radius, wind)?;
        }

        if arrival_index.is_none() {
            let remaining = haversine(
                (pos.0.to_degrees(), pos.1.to_degrees()),
                spec.destination,
                radius,
            );
            return Err(TrajectoryError::TimeLimitExceeded {
                limit_s: self.max_flight_time,
                remaining_m: remaining,
                partial: Box::new(Trajectory::from_parts(
                    0.0,
                    self.dt,
                    radius,
                    spec.destination,
                    states,
                    None,
                    None,
                )),
            });
        }

        Ok(Trajectory::from_parts(
            0.0,
            self.dt,
            radius,
            spec.destination,
            states,
            arrival_index,
            arrival_time,
        ))
    }
}

/// Bisects the step fraction at which the distance to the destination
/// first equals the arrival tolerance, returning the offset in seconds
/// from the step's start.
fn refine_arrival(
    start_rad: (f64, f64),
    dt: f64,
    dest_rad: (f64, f64),
    spec: &AircraftSpec,
    radius_m: f64,
    tolerance_m: f64,
    wind: &dyn WindField,
) -> Result<f64, TrajectoryError> {
    let dest_deg = (dest_rad.0.to_degrees(), dest_rad.1.to_degrees());
    let excess = |h: f64| -> Result<f64, TrajectoryError> {
        let p = if h == 0.0 {
            start_rad
        } else {
            rk4_step(start_rad, h, dest_rad, spec.airspeed, radius_m, wind)?
        };
        Ok(haversine((p.0.to_degrees(), p.1.to_degrees()), dest_deg, radius_m) - tolerance_m)
    };

    let mut lo = 0.0;
    let mut hi = dt;
    if excess(lo)? <= 0.0 {
        return Ok(0.0);
    }
    while hi - lo > 1e-9 {
        let mid = 0.5 * (lo + hi);
        if excess(mid)? > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Great-circle separation of two flights at each shared grid index, in
/// meters, out to the later of the two flight ends. Flights hold at their
/// destinations once arrived.
///
/// # Errors
///
/// Returns an error if the trajectories disagree in start time, step, or
/// distance radius (different cruise altitudes).
pub fn separation_series(a: &Trajectory, b: &Trajectory) -> Result<Vec<f64>, TrajectoryError> {
    if a.dt() != b.dt() {
        return Err(TrajectoryError::GridMismatch {
            reason: format!("time steps differ: {} vs {}", a.dt(), b.dt()),
        });
    }
    if a.t0() != b.t0() {
        return Err(TrajectoryError::GridMismatch {
            reason: format!("start times differ: {} vs {}", a.t0(), b.t0()),
        });
    }
    if a.radius_m() != b.radius_m() {
        return Err(TrajectoryError::GridMismatch {
            reason: format!(
                "distance radii differ: {} vs {} (flights must share an altitude)",
                a.radius_m(),
                b.radius_m()
            ),
        });
    }
    let n = a.len().max(b.len());
    Ok((0..n)
        .map(|i| haversine(a.position_at(i), b.position_at(i), a.radius_m()))
        .collect())
}

//! Wind ensemble container, CSV ingestion and synthetic generation.
//!
//! An ensemble holds `R` equally weighted realizations of a horizontal wind
//! field on a shared [`WindGrid`]: an eastward component `u` and a northward
//! component `v` per grid point, both in m/s.
//!
//! The interchange format is CSV with the exact header `member,lat,lon,u,v`,
//! one row per member and grid cell, floats written with nine significant
//! digits, LF line endings. [`save_ensemble`] writes members sorted by id and
//! cells in latitude-major order, so a file it produced round-trips through
//! [`load_ensemble`] byte-identically. The loader itself accepts rows in any
//! order.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::EnsembleError;
use crate::grid::WindGrid;
use crate::numfmt::sig9;

/// One wind realization: eastward and northward components on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct WindMember {
    /// Eastward wind component, m/s, shaped `(n_lats, n_lons)`.
    pub u: DMatrix<f64>,
    /// Northward wind component, m/s, shaped `(n_lats, n_lons)`.
    pub v: DMatrix<f64>,
}

/// A set of equally weighted wind realizations on a common grid.
#[derive(Debug, Clone)]
pub struct WindEnsemble {
    grid: WindGrid,
    ids: Vec<u64>,
    members: Vec<WindMember>,
}

impl WindEnsemble {
    /// Builds an ensemble from members, assigning sequential ids.
    ///
    /// # Errors
    ///
    /// Returns an error if fewer than two members are given, a member's
    /// field shape disagrees with the grid, or any value is non-finite.
    pub fn from_members(grid: WindGrid, members: Vec<WindMember>) -> Result<Self, EnsembleError> {
        let ids = (0..members.len() as u64).collect();
        Self::with_ids(grid, ids, members)
    }

    fn with_ids(
        grid: WindGrid,
        ids: Vec<u64>,
        members: Vec<WindMember>,
    ) -> Result<Self, EnsembleError> {
        if members.len() < 2 {
            return Err(EnsembleError::TooFewMembers { found: members.len() });
        }
        debug_assert_eq!(ids.len(), members.len());
        let shape = grid.shape();
        for m in &members {
            if (m.u.nrows(), m.u.ncols()) != shape || (m.v.nrows(), m.v.ncols()) != shape {
                return Err(EnsembleError::GridMismatch {
                    reason: format!(
                        "member field shape ({}, {}) does not match grid ({}, {})",
                        m.u.nrows(),
                        m.u.ncols(),
                        shape.0,
                        shape.1
                    ),
                });
            }
            if m.u.iter().chain(m.v.iter()).any(|x| !x.is_finite()) {
                return Err(EnsembleError::InvalidParameter {
                    field: "member fields",
                    reason: "non-finite value".into(),
                });
            }
        }
        Ok(Self { grid, ids, members })
    }

    /// The shared grid.
    pub fn grid(&self) -> &WindGrid {
        &self.grid
    }

    /// Number of realizations `R`.
    pub fn n_members(&self) -> usize {
        self.members.len()
    }

    /// Equal statistical weight of each realization, `1/R`.
    pub fn member_weight(&self) -> f64 {
        1.0 / self.members.len() as f64
    }

    /// Member ids as stored in the source file.
    pub fn ids(&self) -> &[u64] {
        &self.ids
    }

    /// All realizations, ordered by id.
    pub fn members(&self) -> &[WindMember] {
        &self.members
    }

    /// A single realization by position.
    pub fn member(&self, index: usize) -> &WindMember {
        &self.members[index]
    }

    /// Per-point mean of the eastward component across members.
    pub fn mean_u(&self) -> DMatrix<f64> {
        self.mean_field(|m| &m.u)
    }

    /// Per-point mean of the northward component across members.
    pub fn mean_v(&self) -> DMatrix<f64> {
        self.mean_field(|m| &m.v)
    }

    fn mean_field<'a, F>(&'a self, pick: F) -> DMatrix<f64>
    where
        F: Fn(&'a WindMember) -> &'a DMatrix<f64>,
    {
        let (rows, cols) = self.grid.shape();
        let mut acc = DMatrix::zeros(rows, cols);
        for m in &self.members {
            acc += pick(m);
        }
        acc / self.members.len() as f64
    }
}

/// Pools several ensembles on the same grid into one, reindexing members.
///
/// Sources are concatenated as equally weighted realizations; there is no
/// temporal blending or reweighting.
///
/// # Errors
///
/// Returns an error if the list is empty or any grid differs from the first.
pub fn pool_ensembles(sources: Vec<WindEnsemble>) -> Result<WindEnsemble, EnsembleError> {
    let mut iter = sources.into_iter();
    let first = iter.next().ok_or(EnsembleError::TooFewMembers { found: 0 })?;
    let grid = first.grid.clone();
    let mut members = first.members;
    for (k, src) in iter.enumerate() {
        if src.grid != grid {
            return Err(EnsembleError::GridMismatch {
                reason: format!("source {} has different grid axes than source 0", k + 1),
            });
        }
        members.extend(src.members);
    }
    WindEnsemble::from_members(grid, members)
}

const HEADER: &str = "member,lat,lon,u,v";

/// Reads a wind ensemble from a CSV file.
///
/// # Errors
///
/// Returns an error naming the line for malformed or non-finite rows, the
/// member and cell for incomplete coverage, and refuses fewer than two
/// members.
pub fn load_ensemble(path: &Path) -> Result<WindEnsemble, EnsembleError> {
    let mut text = String::new();
    File::open(path)?.read_to_string(&mut text)?;
    parse_ensemble(&text)
}

fn parse_ensemble(text: &str) -> Result<WindEnsemble, EnsembleError> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_reader(text.as_bytes());
    {
        let got = reader
            .headers()
            .map_err(|e| EnsembleError::Malformed { line: 1, reason: e.to_string() })?;
        let found = got.iter().collect::<Vec<_>>().join(",");
        if found != HEADER {
            return Err(EnsembleError::Header { found });
        }
    }

    struct Row {
        line: u64,
        member: u64,
        lat: f64,
        lon: f64,
        u: f64,
        v: f64,
    }

    let mut rows = Vec::new();
    let mut lats: Vec<f64> = Vec::new();
    let mut lons: Vec<f64> = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| EnsembleError::Malformed {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != 5 {
            return Err(EnsembleError::Malformed {
                line,
                reason: format!("expected 5 fields, got {}", record.len()),
            });
        }
        let member: u64 = parse_field(&record[0], "member", line)?;
        let lat: f64 = parse_field(&record[1], "lat", line)?;
        let lon: f64 = parse_field(&record[2], "lon", line)?;
        let u: f64 = parse_field(&record[3], "u", line)?;
        let v: f64 = parse_field(&record[4], "v", line)?;
        for (value, column) in [(lat, "lat"), (lon, "lon"), (u, "u"), (v, "v")] {
            if !value.is_finite() {
                return Err(EnsembleError::NonFinite { line, column });
            }
        }
        insert_sorted(&mut lats, lat);
        insert_sorted(&mut lons, lon);
        rows.push(Row { line, member, lat, lon, u, v });
    }

    let grid = WindGrid::new(lats, lons)?;
    let (n_lats, n_lons) = grid.shape();

    // Members keyed by id so output order is deterministic regardless of row
    // order in the file.
    let mut fields: BTreeMap<u64, (DMatrix<f64>, DMatrix<f64>)> = BTreeMap::new();
    for row in &rows {
        let i = grid.lats().partition_point(|&x| x < row.lat);
        let j = grid.lons().partition_point(|&x| x < row.lon);
        let entry = fields.entry(row.member).or_insert_with(|| {
            (
                DMatrix::from_element(n_lats, n_lons, f64::NAN),
                DMatrix::from_element(n_lats, n_lons, f64::NAN),
            )
        });
        if !entry.0[(i, j)].is_nan() {
            return Err(EnsembleError::DuplicateCell {
                line: row.line,
                member: row.member,
                lat: row.lat,
                lon: row.lon,
            });
        }
        entry.0[(i, j)] = row.u;
        entry.1[(i, j)] = row.v;
    }

    let mut ids = Vec::with_capacity(fields.len());
    let mut members = Vec::with_capacity(fields.len());
    for (id, (u, v)) in fields {
        for i in 0..n_lats {
            for j in 0..n_lons {
                if u[(i, j)].is_nan() {
                    return Err(EnsembleError::MissingCell {
                        member: id,
                        lat: grid.lats()[i],
                        lon: grid.lons()[j],
                    });
                }
            }
        }
        ids.push(id);
        members.push(WindMember { u, v });
    }

    WindEnsemble::with_ids(grid, ids, members)
}

fn parse_field<T: std::str::FromStr>(
    raw: &str,
    column: &'static str,
    line: u64,
) -> Result<T, EnsembleError> {
    raw.trim().parse().map_err(|_| EnsembleError::Malformed {
        line,
        reason: format!("cannot parse {column} from '{raw}'"),
    })
}

fn insert_sorted(axis: &mut Vec<f64>, value: f64) {
    match axis.binary_search_by(|x| x.partial_cmp(&value).unwrap()) {
        Ok(_) => {}
        Err(pos) => axis.insert(pos, value),
    }
}

/// Writes an ensemble in the canonical CSV layout.
///
/// # Errors
///
/// Returns an error if the file cannot be written.
pub fn save_ensemble(ensemble: &WindEnsemble, path: &Path) -> Result<(), EnsembleError> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "{HEADER}")?;
    let grid = ensemble.grid();
    for (id, member) in ensemble.ids().iter().zip(ensemble.members()) {
        for (i, &lat) in grid.lats().iter().enumerate() {
            for (j, &lon) in grid.lons().iter().enumerate() {
                writeln!(
                    out,
                    "{id},{},{},{},{}",
                    sig9(lat),
                    sig9(lon),
                    sig9(member.u[(i, j)]),
                    sig9(member.v[(i, j)])
                )?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

/// Parameters of the synthetic Gaussian random-field generator.
///
/// Each member is drawn from a stationary Gaussian process over the grid
/// with a squared-exponential spatial kernel; the eastward and northward
/// components share the kernel and are coupled point-wise with correlation
/// `cross_correlation`.
#[derive(Debug, Clone)]
pub struct SyntheticSpec {
    /// Spatial correlation length in degrees; `f64::INFINITY` yields
    /// spatially constant fields.
    pub correlation_length_deg: f64,
    /// Point-wise correlation between the u and v components, in `[-1, 1]`.
    pub cross_correlation: f64,
    /// Standard deviation of the eastward component, m/s.
    pub sigma_u: f64,
    /// Standard deviation of the northward component, m/s.
    pub sigma_v: f64,
    /// Mean eastward wind, m/s.
    pub mean_u: f64,
    /// Mean northward wind, m/s.
    pub mean_v: f64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<(), EnsembleError> {
        if self.correlation_length_deg.is_nan() || self.correlation_length_deg <= 0.0 {
            return Err(EnsembleError::InvalidParameter {
                field: "correlation_length_deg",
                reason: format!("must be positive, got {}", self.correlation_length_deg),
            });
        }
        if !self.cross_correlation.is_finite() || self.cross_correlation.abs() > 1.0 {
            return Err(EnsembleError::InvalidParameter {
                field: "cross_correlation",
                reason: format!("must lie in [-1, 1], got {}", self.cross_correlation),
            });
        }
        for (value, field) in [(self.sigma_u, "sigma_u"), (self.sigma_v, "sigma_v")] {
            if !value.is_finite() || value < 0.0 {
                return Err(EnsembleError::InvalidParameter {
                    field,
                    reason: format!("must be non-negative, got {value}"),
                });
            }
        }
        for (value, field) in [(self.mean_u, "mean_u"), (self.mean_v, "mean_v")] {
            if !value.is_finite() {
                return Err(EnsembleError::InvalidParameter {
                    field,
                    reason: format!("must be finite, got {value}"),
                });
            }
        }
        Ok(())
    }
}

/// Draws a reproducible synthetic wind ensemble.
///
/// The same `(grid, n_members, seed, spec)` always produces the same fields.
///
/// # Errors
///
/// Returns an error for invalid generator parameters or `n_members < 2`.
pub fn generate_synthetic_ensemble(
    grid: &WindGrid,
    n_members: usize,
    seed: u64,
    spec: &SyntheticSpec,
) -> Result<WindEnsemble, EnsembleError> {
    spec.validate()?;
    if n_members < 2 {
        return Err(EnsembleError::TooFewMembers { found: n_members });
    }

    let factor = joint_factor(grid, spec);
    let n = grid.n_points();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut members = Vec::with_capacity(n_members);
    for _ in 0..n_members {
        let z = DVector::from_fn(2 * n, |_, _| StandardNormal.sample(&mut rng));
        let sample = &factor * z;
        let u = grid.unflatten(&(sample.rows(0, n).into_owned().add_scalar(spec.mean_u)));
        let v = grid.unflatten(&(sample.rows(n, n).into_owned().add_scalar(spec.mean_v)));
        members.push(WindMember { u, v });
    }
    WindEnsemble::from_members(grid.clone(), members)
}

/// Builds a factor `F` with `F F^T` equal to the joint covariance of the
/// stacked `[u; v]` field. An eigenvalue factorization is used rather than
/// Cholesky because long correlation lengths make the kernel numerically
/// rank-deficient.
fn joint_factor(grid: &WindGrid, spec: &SyntheticSpec) -> DMatrix<f64> {
    let points = grid.points();
    let n = points.len();
    let ell = spec.correlation_length_deg;
    let kernel = DMatrix::from_fn(n, n, |a, b| {
        let dlat = points[a].0 - points[b].0;
        let dlon = points[a].1 - points[b].1;
        // d^2 / (2 ell^2) evaluates to 0 when ell is infinite, so the
        // constant-field limit needs no special case.
        (-(dlat * dlat + dlon * dlon) / (2.0 * ell * ell)).exp()
    });

    let mut joint = DMatrix::zeros(2 * n, 2 * n);
    let suu = spec.sigma_u * spec.sigma_u;
    let svv = spec.sigma_v * spec.sigma_v;
    let suv = spec.cross_correlation * spec.sigma_u * spec.sigma_v;
    joint.view_mut((0, 0), (n, n)).copy_from(&(&kernel * suu));
    joint.view_mut((0, n), (n, n)).copy_from(&(&kernel * suv));
    joint.view_mut((n, 0), (n, n)).copy_from(&(&kernel * suv));
    joint.view_mut((n, n), (n, n)).copy_from(&(&kernel * svv));

    let eigen = joint.symmetric_eigen();
    let mut factor = eigen.eigenvectors;
    for (k, &lambda) in eigen.eigenvalues.iter().enumerate() {
        let scale = lambda.max(0.0).sqrt();
        factor.column_mut(k).scale_mut(scale);
    }
    factor
}

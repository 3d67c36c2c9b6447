//! Joint Karhunen-Loeve expansion of two correlated wind components.
//!
//! Instead of expanding the eastward and northward wind fields separately
//! (which would leave their cross-correlation behind), the two fields are
//! stacked into one assembled process over a doubled index set. One
//! eigenvalue problem on the assembled covariance then yields a single set
//! of mutually uncorrelated random coefficients that carries the full joint
//! structure: member `r` is recovered as
//!
//! ```text
//! [u_r; v_r] = [mean_u; mean_v] + sum_k sqrt(lambda_k) f_k xi_k^(r)
//! ```
//!
//! with eigenpairs `(lambda_k, f_k)` of the assembled covariance and
//! coefficient samples `xi_k^(r) = <deviation_r, f_k> / sqrt(lambda_k)`.
//! By construction the `xi` columns have zero sample mean, unit sample
//! variance, and vanishing pairwise sample correlation, and the mean squared
//! reconstruction error of an order-`M` truncation equals the eigenvalue
//! tail `sum_{k>M} lambda_k` exactly.
//!
//! The continuous eigenproblem is discretized on the grid with uniform
//! quadrature weights (a regular grid), with the weighting kept general so
//! other rules can be plugged in. Sample statistics use the unbiased
//! `1/(R-1)` normalization throughout.
//!
//! # Archive layout
//!
//! [`MuklExpansion::save_archive`] writes a single binary file:
//!
//! ```text
//! magic   b"MUKLEXP1"                      8 bytes
//! version u32, little endian               currently 1
//! dims    u64 x 5, little endian           n_lats, n_lons, n_members,
//!                                          n_modes, n_eigenvalues
//! data    f64, little endian, in order:
//!         lats[n_lats], lons[n_lons],
//!         point_weights[n_lats * n_lons],
//!         eigenvalues[n_eigenvalues]          full spectrum, descending
//!         mean_u[n_points], mean_v[n_points]  latitude-major
//!         modes[n_modes][2 * n_points]        mode-major
//!         xi[n_members][n_modes]              member-major
//! ```

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use nalgebra::{DMatrix, DVector};

use crate::ensemble::{WindEnsemble, WindMember};
use crate::error::{ArchiveError, MuklError};
use crate::grid::WindGrid;

/// Eigenvalues below `RANK_TOLERANCE * lambda_max` are treated as
/// numerically null and may not be included in a truncation.
pub const RANK_TOLERANCE: f64 = 1e-12;

/// Negative eigenvalues beyond `-INDEFINITE_TOLERANCE * lambda_max` indicate
/// the input was not a covariance; smaller ones are round-off and clipped.
const INDEFINITE_TOLERANCE: f64 = 1e-10;

/// Empirical covariance of the stacked `[u; v]` process, with the grid
/// metadata needed to interpret and invert the expansion.
#[derive(Debug, Clone)]
pub struct AssembledCovariance {
    matrix: DMatrix<f64>,
    point_weights: Vec<f64>,
    mean_u: DMatrix<f64>,
    mean_v: DMatrix<f64>,
    grid: WindGrid,
}

impl AssembledCovariance {
    /// Wraps a precomputed assembled covariance.
    ///
    /// `matrix` must be `2n x 2n` for a grid of `n` points, ordered with the
    /// eastward block first, each block latitude-major. `point_weights` are
    /// the discrete quadrature weights per grid point.
    ///
    /// # Errors
    ///
    /// Returns an error if the matrix is not square with the expected size
    /// or not symmetric to `1e-12` relative.
    pub fn from_parts(
        matrix: DMatrix<f64>,
        point_weights: Vec<f64>,
        mean_u: DMatrix<f64>,
        mean_v: DMatrix<f64>,
        grid: WindGrid,
    ) -> Result<Self, MuklError> {
        let n = grid.n_points();
        if matrix.nrows() != matrix.ncols() || matrix.nrows() != 2 * n {
            return Err(MuklError::NotSquare {
                rows: matrix.nrows(),
                cols: matrix.ncols(),
            });
        }
        assert_eq!(point_weights.len(), n, "one weight per grid point");
        let scale = matrix.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut max_asymmetry = 0.0f64;
        for i in 0..matrix.nrows() {
            for j in (i + 1)..matrix.ncols() {
                max_asymmetry = max_asymmetry.max((matrix[(i, j)] - matrix[(j, i)]).abs());
            }
        }
        if max_asymmetry > 1e-12 * scale.max(1.0) {
            return Err(MuklError::NotSymmetric { max_asymmetry });
        }
        // Symmetrize exactly so the eigensolver sees a true symmetric matrix.
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        Ok(Self { matrix, point_weights, mean_u, mean_v, grid })
    }

    /// The assembled `2n x 2n` covariance matrix.
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    /// Discrete quadrature weight of each grid point.
    pub fn point_weights(&self) -> &[f64] {
        &self.point_weights
    }

    /// Ensemble mean of the eastward component.
    pub fn mean_u(&self) -> &DMatrix<f64> {
        &self.mean_u
    }

    /// Ensemble mean of the northward component.
    pub fn mean_v(&self) -> &DMatrix<f64> {
        &self.mean_v
    }

    /// The grid the covariance was assembled on.
    pub fn grid(&self) -> &WindGrid {
        &self.grid
    }
}

/// Assembles the empirical covariance of the stacked `[u; v]` field with
/// uniform quadrature weights.
///
/// Deviations are taken about the ensemble mean and normalized by
/// `1/(R - 1)`.
pub fn assemble_covariance(ensemble: &WindEnsemble) -> AssembledCovariance {
    assemble_covariance_weighted(ensemble, &vec![1.0; ensemble.grid().n_points()])
}

/// Assembles the empirical covariance with caller-supplied per-point
/// quadrature weights (one per grid point, applied to both components).
///
/// # Panics
///
/// Panics if the weight count differs from the grid point count or any
/// weight is not positive.
pub fn assemble_covariance_weighted(
    ensemble: &WindEnsemble,
    point_weights: &[f64],
) -> AssembledCovariance {
    let grid = ensemble.grid().clone();
    let n = grid.n_points();
    assert_eq!(point_weights.len(), n, "one weight per grid point");
    assert!(
        point_weights.iter().all(|w| *w > 0.0 && w.is_finite()),
        "weights must be positive"
    );

    let mean_u = ensemble.mean_u();
    let mean_v = ensemble.mean_v();
    let r = ensemble.n_members();
    let mut deviations = DMatrix::zeros(2 * n, r);
    for (col, member) in ensemble.members().iter().enumerate() {
        let du = grid.flatten(&(member.u.clone() - &mean_u));
        let dv = grid.flatten(&(member.v.clone() - &mean_v));
        deviations.view_mut((0, col), (n, 1)).copy_from(&du);
        deviations.view_mut((n, col), (n, 1)).copy_from(&dv);
    }
    let matrix = (&deviations * deviations.transpose()) / (r as f64 - 1.0);

    AssembledCovariance {
        matrix,
        point_weights: point_weights.to_vec(),
        mean_u,
        mean_v,
        grid,
    }
}

/// Eigenvalues and weighted-orthonormal eigenvectors of an assembled
/// covariance, sorted by descending eigenvalue.
#[derive(Debug, Clone)]
pub struct Spectrum {
    /// Eigenvalues, descending, negatives clipped to zero.
    pub eigenvalues: Vec<f64>,
    /// Eigenvectors as columns, orthonormal in the weighted inner product,
    /// sign-normalized so each column's largest-magnitude entry is positive.
    pub eigenvectors: DMatrix<f64>,
}

/// Solves the discrete covariance eigenproblem.
///
/// The weighted problem is reduced to a standard symmetric one via
/// `B = W^(1/2) C W^(1/2)`; returned eigenvectors are orthonormal in the
/// weighted inner product `<a, b> = sum_i w_i a_i b_i`.
///
/// # Errors
///
/// Returns an error if a negative eigenvalue exceeds the round-off budget,
/// which means the input was not a covariance matrix.
pub fn solve_eigenproblem(cov: &AssembledCovariance) -> Result<Spectrum, MuklError> {
    let weights = assembled_weights(cov);
    weighted_symmetric_eigen(&cov.matrix, &weights)
}

/// Weights of the assembled `2n`-dimensional index set: the per-point
/// weights repeated for the eastward and northward halves.
fn assembled_weights(cov: &AssembledCovariance) -> Vec<f64> {
    let mut w = Vec::with_capacity(2 * cov.point_weights.len());
    w.extend_from_slice(&cov.point_weights);
    w.extend_from_slice(&cov.point_weights);
    w
}

fn weighted_symmetric_eigen(
    matrix: &DMatrix<f64>,
    weights: &[f64],
) -> Result<Spectrum, MuklError> {
    let n = matrix.nrows();
    debug_assert_eq!(weights.len(), n);
    let sqrt_w = DVector::from_iterator(n, weights.iter().map(|w| w.sqrt()));
    let mut scaled = matrix.clone();
    for i in 0..n {
        for j in 0..n {
            scaled[(i, j)] *= sqrt_w[i] * sqrt_w[j];
        }
    }

    let eigen = scaled.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eigen.eigenvalues[b].partial_cmp(&eigen.eigenvalues[a]).unwrap());

    let lambda_max = eigen.eigenvalues[order[0]].max(0.0);
    let lambda_min = eigen.eigenvalues[*order.last().unwrap()];
    if lambda_min < -INDEFINITE_TOLERANCE * lambda_max.max(1.0) {
        return Err(MuklError::Indefinite { min: lambda_min, max: lambda_max });
    }

    let mut eigenvalues = Vec::with_capacity(n);
    let mut eigenvectors = DMatrix::zeros(n, n);
    for (k, &src) in order.iter().enumerate() {
        eigenvalues.push(eigen.eigenvalues[src].max(0.0));
        // Undo the similarity scaling to get weighted-orthonormal vectors.
        let mut col: DVector<f64> =
            DVector::from_fn(n, |i, _| eigen.eigenvectors[(i, src)] / sqrt_w[i]);
        let mut dominant = 0usize;
        for i in 1..n {
            if col[i].abs() > col[dominant].abs() {
                dominant = i;
            }
        }
        if col[dominant] < 0.0 {
            col.scale_mut(-1.0);
        }
        eigenvectors.set_column(k, &col);
    }

    Ok(Spectrum { eigenvalues, eigenvectors })
}

/// Smallest truncation order whose cumulative eigenvalue energy reaches the
/// fraction `delta` of the total.
///
/// # Errors
///
/// Returns an error if `delta` is outside `(0, 1]` or the spectrum is
/// identically zero.
pub fn truncate_by_energy(eigenvalues: &[f64], delta: f64) -> Result<usize, MuklError> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(MuklError::InvalidDelta { delta });
    }
    let total: f64 = eigenvalues.iter().sum();
    if total <= 0.0 {
        return Err(MuklError::ZeroSpectrum);
    }
    let mut cumulative = 0.0;
    for (k, lambda) in eigenvalues.iter().enumerate() {
        cumulative += lambda;
        if cumulative >= delta * total {
            return Ok(k + 1);
        }
    }
    // Round-off can leave the running sum a hair short of the total.
    Ok(eigenvalues.len())
}

/// How to choose the truncation order of an expansion.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Truncation {
    /// Keep exactly this many leading modes.
    Modes(usize),
    /// Keep the smallest number of modes explaining this fraction of the
    /// total variance, in `(0, 1]`.
    EnergyFraction(f64),
}

/// A truncated joint Karhunen-Loeve expansion of a wind ensemble.
#[derive(Debug, Clone)]
pub struct MuklExpansion {
    grid: WindGrid,
    point_weights: Vec<f64>,
    mean_u: DMatrix<f64>,
    mean_v: DMatrix<f64>,
    /// Full spectrum, descending, clipped at zero.
    eigenvalues: Vec<f64>,
    /// Retained eigenvectors, `2n x M`.
    modes: DMatrix<f64>,
    /// Coefficient samples, `R x M`.
    xi: DMatrix<f64>,
}

/// Which component of the assembled process a subfunction belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Component {
    /// Eastward wind.
    U,
    /// Northward wind.
    V,
}

impl MuklExpansion {
    /// Decomposes an ensemble and truncates the expansion.
    ///
    /// # Errors
    ///
    /// Returns an error for an invalid truncation request, a numerically
    /// null mode inside the requested order, or an indefinite covariance.
    pub fn fit(ensemble: &WindEnsemble, truncation: Truncation) -> Result<Self, MuklError> {
        let cov = assemble_covariance(ensemble);
        Self::from_covariance(&cov, ensemble, truncation)
    }

    /// Decomposes a precomputed covariance against its source ensemble.
    ///
    /// # Errors
    ///
    /// Same failure modes as [`MuklExpansion::fit`].
    pub fn from_covariance(
        cov: &AssembledCovariance,
        ensemble: &WindEnsemble,
        truncation: Truncation,
    ) -> Result<Self, MuklError> {
        let spectrum = solve_eigenproblem(cov)?;
        let selectable = selectable_modes(&spectrum.eigenvalues);
        let m = match truncation {
            Truncation::Modes(m) => m,
            // Numerically null modes cannot be selected, so an energy target
            // is capped at the resolvable rank.
            Truncation::EnergyFraction(delta) => {
                truncate_by_energy(&spectrum.eigenvalues, delta)?.min(selectable)
            }
        };
        if m == 0 || m > spectrum.eigenvalues.len() {
            return Err(MuklError::InvalidTruncation {
                requested: m,
                available: spectrum.eigenvalues.len(),
            });
        }
        if m > selectable {
            return Err(MuklError::NullModeIncluded { mode: selectable + 1, selectable });
        }

        let weights = assembled_weights(cov);
        let modes = spectrum.eigenvectors.columns(0, m).into_owned();
        let xi = extract_xi(ensemble, cov, &spectrum.eigenvalues[..m], &modes, &weights);

        Ok(Self {
            grid: cov.grid.clone(),
            point_weights: cov.point_weights.clone(),
            mean_u: cov.mean_u.clone(),
            mean_v: cov.mean_v.clone(),
            eigenvalues: spectrum.eigenvalues,
            modes,
            xi,
        })
    }

    /// Re-truncates to a smaller order without re-solving the eigenproblem.
    ///
    /// # Errors
    ///
    /// Returns an error if `m` is zero or exceeds the current order.
    pub fn with_truncation(&self, m: usize) -> Result<Self, MuklError> {
        if m == 0 || m > self.order() {
            return Err(MuklError::InvalidTruncation { requested: m, available: self.order() });
        }
        let mut out = self.clone();
        out.modes = self.modes.columns(0, m).into_owned();
        out.xi = self.xi.columns(0, m).into_owned();
        Ok(out)
    }

    /// Truncation order `M`.
    pub fn order(&self) -> usize {
        self.modes.ncols()
    }

    /// Number of source realizations `R`.
    pub fn n_members(&self) -> usize {
        self.xi.nrows()
    }

    /// The full eigenvalue spectrum, descending.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Number of modes with non-negligible variance.
    pub fn selectable_modes(&self) -> usize {
        selectable_modes(&self.eigenvalues)
    }

    /// Fraction of total variance carried by each retained mode.
    pub fn explained_fractions(&self) -> Vec<f64> {
        let total: f64 = self.eigenvalues.iter().sum();
        self.eigenvalues[..self.order()].iter().map(|l| l / total).collect()
    }

    /// Eigenvalue tail `sum_(k>m) lambda_k`: the exact mean squared
    /// reconstruction error of the order-`m` truncation.
    pub fn tail_energy(&self, m: usize) -> f64 {
        self.eigenvalues.iter().skip(m).sum()
    }

    /// Coefficient samples, one row per member, one column per mode.
    pub fn xi_samples(&self) -> &DMatrix<f64> {
        &self.xi
    }

    /// Retained assembled eigenvectors as columns, `2n x M`.
    pub fn modes(&self) -> &DMatrix<f64> {
        &self.modes
    }

    /// The grid the expansion lives on.
    pub fn grid(&self) -> &WindGrid {
        &self.grid
    }

    /// Ensemble mean of the eastward component.
    pub fn mean_u(&self) -> &DMatrix<f64> {
        &self.mean_u
    }

    /// Ensemble mean of the northward component.
    pub fn mean_v(&self) -> &DMatrix<f64> {
        &self.mean_v
    }

    /// The half of assembled mode `k` acting on one component, as a flat
    /// vector in grid order.
    pub fn subfunction(&self, k: usize, component: Component) -> DVector<f64> {
        let n = self.grid.n_points();
        let offset = match component {
            Component::U => 0,
            Component::V => n,
        };
        self.modes.column(k).rows(offset, n).into_owned()
    }

    /// Unit-normalized subfunction and its rescaled eigenvalue.
    ///
    /// The raw subfunctions are halves of orthonormal assembled modes, so
    /// they are not unit vectors themselves. Returning
    /// `(phi / ||phi||, lambda * ||phi||^2)` preserves the product
    /// `sqrt(lambda) * phi` used in reconstruction while exposing a
    /// per-component modal amplitude.
    pub fn normalized_subfunction(&self, k: usize, component: Component) -> (DVector<f64>, f64) {
        let phi = self.subfunction(k, component);
        let norm2: f64 = phi
            .iter()
            .zip(self.point_weights.iter())
            .map(|(x, w)| w * x * x)
            .sum();
        let norm = norm2.sqrt();
        if norm == 0.0 {
            return (phi, 0.0);
        }
        (&phi / norm, self.eigenvalues[k] * norm2)
    }

    /// Rebuilds a wind field realization from `M` coefficients.
    ///
    /// # Errors
    ///
    /// Returns an error if the coefficient count differs from the order.
    pub fn reconstruct_member(&self, xi: &[f64]) -> Result<WindMember, MuklError> {
        if xi.len() != self.order() {
            return Err(MuklError::CoefficientLength {
                expected: self.order(),
                found: xi.len(),
            });
        }
        let n = self.grid.n_points();
        let mut assembled = DVector::zeros(2 * n);
        for (k, &coeff) in xi.iter().enumerate() {
            let amplitude = self.eigenvalues[k].sqrt() * coeff;
            assembled.axpy(amplitude, &self.modes.column(k), 1.0);
        }
        let u = &self.mean_u + self.grid.unflatten(&assembled.rows(0, n).into_owned());
        let v = &self.mean_v + self.grid.unflatten(&assembled.rows(n, n).into_owned());
        Ok(WindMember { u, v })
    }

    /// Coefficients of stored member `r`, as a plain vector.
    pub fn xi_row(&self, r: usize) -> Vec<f64> {
        self.xi.row(r).iter().copied().collect()
    }
}

fn selectable_modes(eigenvalues: &[f64]) -> usize {
    let lambda_max = eigenvalues.first().copied().unwrap_or(0.0);
    eigenvalues.iter().filter(|l| **l > RANK_TOLERANCE * lambda_max).count()
}

fn extract_xi(
    ensemble: &WindEnsemble,
    cov: &AssembledCovariance,
    eigenvalues: &[f64],
    modes: &DMatrix<f64>,
    weights: &[f64],
) -> DMatrix<f64> {
    let grid = &cov.grid;
    let n = grid.n_points();
    let r = ensemble.n_members();
    let m = eigenvalues.len();
    let mut xi = DMatrix::zeros(r, m);
    for (row, member) in ensemble.members().iter().enumerate() {
        let du = grid.flatten(&(member.u.clone() - &cov.mean_u));
        let dv = grid.flatten(&(member.v.clone() - &cov.mean_v));
        for k in 0..m {
            let mode = modes.column(k);
            let mut inner = 0.0;
            for i in 0..n {
                inner += weights[i] * du[i] * mode[i];
                inner += weights[n + i] * dv[i] * mode[n + i];
            }
            xi[(row, k)] = inner / eigenvalues[k].sqrt();
        }
    }
    xi
}

impl MuklExpansion {
    /// Serializes the expansion to the documented binary archive layout.
    ///
    /// # Errors
    ///
    /// Returns an error if the file cannot be written.
    pub fn save_archive(&self, path: &Path) -> Result<(), MuklError> {
        let mut out = BufWriter::new(File::create(path).map_err(ArchiveError::Io)?);
        self.write_archive(&mut out).map_err(ArchiveError::Io)?;
        out.flush().map_err(ArchiveError::Io)?;
        Ok(())
    }

    fn write_archive<W: Write>(&self, out: &mut W) -> std::io::Result<()> {
        let n = self.grid.n_points();
        out.write_all(MAGIC)?;
        out.write_u32::<LittleEndian>(VERSION)?;
        for dim in [
            self.grid.lats().len(),
            self.grid.lons().len(),
            self.n_members(),
            self.order(),
            self.eigenvalues.len(),
        ] {
            out.write_u64::<LittleEndian>(dim as u64)?;
        }
        let write_slice = |out: &mut W, values: &[f64]| -> std::io::Result<()> {
            for v in values {
                out.write_f64::<LittleEndian>(*v)?;
            }
            Ok(())
        };
        write_slice(out, self.grid.lats())?;
        write_slice(out, self.grid.lons())?;
        write_slice(out, &self.point_weights)?;
        write_slice(out, &self.eigenvalues)?;
        write_slice(out, self.grid.flatten(&self.mean_u).as_slice())?;
        write_slice(out, self.grid.flatten(&self.mean_v).as_slice())?;
        for k in 0..self.order() {
            for i in 0..2 * n {
                out.write_f64::<LittleEndian>(self.modes[(i, k)])?;
            }
        }
        for r in 0..self.n_members() {
            for k in 0..self.order() {
                out.write_f64::<LittleEndian>(self.xi[(r, k)])?;
            }
        }
        Ok(())
    }

    /// Reads an expansion back from an archive file.
    ///
    /// # Errors
    ///
    /// Returns an error for I/O failures, a wrong magic or version, or
    /// inconsistent dimensions.
    pub fn load_archive(path: &Path) -> Result<Self, MuklError> {
        let mut input = BufReader::new(File::open(path).map_err(ArchiveError::Io)?);
        Self::read_archive(&mut input)
    }

    fn read_archive<R: Read>(input: &mut R) -> Result<Self, MuklError> {
        let mut magic = [0u8; 8];
        input.read_exact(&mut magic).map_err(ArchiveError::Io)?;
        if &magic != MAGIC {
            return Err(ArchiveError::Format("bad magic; not an expansion archive".into()).into());
        }
        let version = input.read_u32::<LittleEndian>().map_err(ArchiveError::Io)?;
        if version != VERSION {
            return Err(
                ArchiveError::Format(format!("unsupported version {version}")).into(),
            );
        }
        let mut dims = [0usize; 5];
        for d in &mut dims {
            *d = input.read_u64::<LittleEndian>().map_err(ArchiveError::Io)? as usize;
        }
        let [n_lats, n_lons, n_members, n_modes, n_eigenvalues] = dims;
        let n = n_lats * n_lons;
        if n_modes > n_eigenvalues || n_eigenvalues > 2 * n {
            return Err(ArchiveError::Format(format!(
                "inconsistent dimensions: {n_modes} modes, {n_eigenvalues} eigenvalues, {n} points"
            ))
            .into());
        }

        let mut read_vec = |len: usize| -> Result<Vec<f64>, MuklError> {
            let mut out = Vec::with_capacity(len);
            for _ in 0..len {
                let v = input.read_f64::<LittleEndian>().map_err(ArchiveError::Io)?;
                if !v.is_finite() {
                    return Err(ArchiveError::Format("non-finite value in archive".into()).into());
                }
                out.push(v);
            }
            Ok(out)
        };

        let lats = read_vec(n_lats)?;
        let lons = read_vec(n_lons)?;
        let grid = WindGrid::new(lats, lons)?;
        let point_weights = read_vec(n)?;
        let eigenvalues = read_vec(n_eigenvalues)?;
        let mean_u = grid.unflatten(&DVector::from_vec(read_vec(n)?));
        let mean_v = grid.unflatten(&DVector::from_vec(read_vec(n)?));
        let mut modes = DMatrix::zeros(2 * n, n_modes);
        for k in 0..n_modes {
            let col = read_vec(2 * n)?;
            modes.set_column(k, &DVector::from_vec(col));
        }
        let mut xi = DMatrix::zeros(n_members, n_modes);
        for r in 0..n_members {
            for k in 0..n_modes {
                xi[(r, k)] = input.read_f64::<LittleEndian>().map_err(ArchiveError::Io)?;
            }
        }

        Ok(Self { grid, point_weights, mean_u, mean_v, eigenvalues, modes, xi })
    }
}

const MAGIC: &[u8; 8] = b"MUKLEXP1";
const VERSION: u32 = 1;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ensemble::{generate_synthetic_ensemble, SyntheticSpec};
    use approx::assert_abs_diff_eq;

    fn test_spec() -> SyntheticSpec {
        SyntheticSpec {
            correlation_length_deg: 1.5,
            cross_correlation: 0.5,
            sigma_u: 3.0,
            sigma_v: 2.0,
            mean_u: 8.0,
            mean_v: -3.0,
        }
    }

    fn toy_grid() -> WindGrid {
        WindGrid::regular(0.0, 0.0, 1.0, 2, 2).unwrap()
    }

    /// Two members with opposite unit u-fields and zero v: the assembled
    /// covariance is 2 on the u/u block and 0 elsewhere.
    #[test]
    fn covariance_of_opposite_unit_fields() {
        let grid = toy_grid();
        let plus = WindMember {
            u: DMatrix::from_element(2, 2, 1.0),
            v: DMatrix::zeros(2, 2),
        };
        let minus = WindMember {
            u: DMatrix::from_element(2, 2, -1.0),
            v: DMatrix::zeros(2, 2),
        };
        let ens = WindEnsemble::from_members(grid, vec![plus, minus]).unwrap();
        let cov = assemble_covariance(&ens);
        let n = 4;
        for i in 0..2 * n {
            for j in 0..2 * n {
                let expected = if i < n && j < n { 2.0 } else { 0.0 };
                assert_abs_diff_eq!(cov.matrix()[(i, j)], expected, epsilon = 1e-14);
            }
        }
        assert_eq!(cov.mean_u()[(0, 0)], 0.0);
    }

    #[test]
    fn eigen_of_ones_matrix() {
        let m = DMatrix::from_element(2, 2, 1.0);
        let s = weighted_symmetric_eigen(&m, &[1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(s.eigenvalues[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s.eigenvalues[1], 0.0, epsilon = 1e-12);
        let inv_sqrt2 = 1.0 / 2.0f64.sqrt();
        assert_abs_diff_eq!(s.eigenvectors[(0, 0)], inv_sqrt2, epsilon = 1e-12);
        assert_abs_diff_eq!(s.eigenvectors[(1, 0)], inv_sqrt2, epsilon = 1e-12);
    }

    #[test]
    fn eigen_of_diagonal_matrix_is_sorted_with_axis_vectors() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![2.0, 4.0, 1.0, 3.0]));
        let s = weighted_symmetric_eigen(&m, &[1.0; 4]).unwrap();
        for (got, want) in s.eigenvalues.iter().zip([4.0, 3.0, 2.0, 1.0]) {
            assert_abs_diff_eq!(*got, want, epsilon = 1e-13);
        }
        let expected_axes = [1usize, 3, 0, 2];
        for (k, &axis) in expected_axes.iter().enumerate() {
            for i in 0..4 {
                let expected = if i == axis { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(s.eigenvectors[(i, k)], expected, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn indefinite_matrix_is_rejected() {
        let m = DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, -0.5]));
        assert!(matches!(
            weighted_symmetric_eigen(&m, &[1.0, 1.0]),
            Err(MuklError::Indefinite { .. })
        ));
    }

    #[test]
    fn energy_truncation_picks_smallest_sufficient_order() {
        let spectrum = [4.0, 3.0, 2.0, 1.0];
        assert_eq!(truncate_by_energy(&spectrum, 0.65).unwrap(), 2);
        assert_eq!(truncate_by_energy(&spectrum, 0.4).unwrap(), 1);
        assert_eq!(truncate_by_energy(&spectrum, 1.0).unwrap(), 4);
        assert_eq!(truncate_by_energy(&[1.0, 0.0], 1.0).unwrap(), 1);
        assert!(matches!(
            truncate_by_energy(&[0.0, 0.0], 0.5),
            Err(MuklError::ZeroSpectrum)
        ));
        assert!(matches!(
            truncate_by_energy(&spectrum, 0.0),
            Err(MuklError::InvalidDelta { .. })
        ));
    }

    /// Members `mean + a_r g` with `a_r = +/-c` form a rank-1 ensemble: one
    /// mode carries everything and the coefficients are `+/-sqrt((R-1)/R)`
    /// under the 1/(R-1) covariance convention.
    #[test]
    fn rank_one_ensemble_has_a_single_binary_mode() {
        let grid = toy_grid();
        let shape = DMatrix::from_fn(2, 2, |i, j| 1.0 + (i as f64) + 0.5 * (j as f64));
        let r = 10;
        let members: Vec<WindMember> = (0..r)
            .map(|k| {
                let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
                WindMember {
                    u: DMatrix::from_element(2, 2, 5.0) + &shape * (2.0 * sign),
                    v: DMatrix::from_element(2, 2, -1.0) - &shape * sign,
                }
            })
            .collect();
        let ens = WindEnsemble::from_members(grid, members).unwrap();
        let exp = MuklExpansion::fit(&ens, Truncation::Modes(1)).unwrap();

        assert_eq!(exp.selectable_modes(), 1);
        assert_abs_diff_eq!(exp.explained_fractions()[0], 1.0, epsilon = 1e-12);

        let amplitude = ((r as f64 - 1.0) / r as f64).sqrt();
        for k in 0..r {
            let expected = if k % 2 == 0 { amplitude } else { -amplitude };
            assert_abs_diff_eq!(exp.xi_samples()[(k, 0)], expected, epsilon = 1e-10);
        }
    }

    #[test]
    fn modes_are_orthonormal_and_xi_decorrelated() {
        let grid = WindGrid::regular(40.0, 0.0, 1.0, 4, 4).unwrap();
        let ens = generate_synthetic_ensemble(&grid, 40, 3, &test_spec()).unwrap();
        let exp = MuklExpansion::fit(&ens, Truncation::Modes(8)).unwrap();

        for a in 0..8 {
            for b in 0..8 {
                let dot: f64 = exp
                    .modes()
                    .column(a)
                    .iter()
                    .zip(exp.modes().column(b).iter())
                    .map(|(x, y)| x * y)
                    .sum();
                let expected = if a == b { 1.0 } else { 0.0 };
                assert_abs_diff_eq!(dot, expected, epsilon = 1e-10);
            }
        }

        let xi = exp.xi_samples();
        let r = xi.nrows() as f64;
        for k in 0..8 {
            let mean: f64 = xi.column(k).iter().sum::<f64>() / r;
            assert_abs_diff_eq!(mean, 0.0, epsilon = 1e-10);
            let var: f64 = xi.column(k).iter().map(|x| x * x).sum::<f64>() / (r - 1.0);
            assert_abs_diff_eq!(var, 1.0, epsilon = 1e-8);
        }
        for a in 0..8 {
            for b in (a + 1)..8 {
                let cov: f64 = xi
                    .column(a)
                    .iter()
                    .zip(xi.column(b).iter())
                    .map(|(x, y)| x * y)
                    .sum::<f64>()
                    / (r - 1.0);
                assert_abs_diff_eq!(cov, 0.0, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn full_rank_reconstruction_recovers_members() {
        let grid = toy_grid();
        let ens = generate_synthetic_ensemble(&grid, 6, 9, &test_spec()).unwrap();
        let exp = MuklExpansion::fit(&ens, Truncation::EnergyFraction(1.0)).unwrap();
        assert_eq!(exp.order(), exp.selectable_modes());
        for r in 0..ens.n_members() {
            let rebuilt = exp.reconstruct_member(&exp.xi_row(r)).unwrap();
            let member = ens.member(r);
            for (got, want) in rebuilt.u.iter().zip(member.u.iter()) {
                assert!((got - want).abs() <= 1e-8 * (1.0 + want.abs()));
            }
            for (got, want) in rebuilt.v.iter().zip(member.v.iter()) {
                assert!((got - want).abs() <= 1e-8 * (1.0 + want.abs()));
            }
        }
    }

    #[test]
    fn truncation_error_equals_eigenvalue_tail() {
        let grid = WindGrid::regular(0.0, 0.0, 1.0, 3, 3).unwrap();
        let ens = generate_synthetic_ensemble(&grid, 25, 4, &test_spec()).unwrap();
        let full = MuklExpansion::fit(&ens, Truncation::EnergyFraction(1.0)).unwrap();
        let r = ens.n_members() as f64;
        for m in [1, 2, full.order() / 2, full.order()] {
            let truncated = full.with_truncation(m).unwrap();
            let mut mse = 0.0;
            for idx in 0..ens.n_members() {
                let rebuilt = truncated.reconstruct_member(&truncated.xi_row(idx)).unwrap();
                let member = ens.member(idx);
                let du = &rebuilt.u - &member.u;
                let dv = &rebuilt.v - &member.v;
                mse += (du.iter().map(|x| x * x).sum::<f64>()
                    + dv.iter().map(|x| x * x).sum::<f64>())
                    / (r - 1.0);
            }
            let tail = truncated.tail_energy(m);
            let denom = tail.max(1e-12);
            assert!(
                ((mse - tail) / denom).abs() < 1e-6,
                "order {m}: measured {mse}, tail {tail}"
            );
        }
    }

    #[test]
    fn scaling_members_scales_eigenvalues_not_xi() {
        let grid = toy_grid();
        let ens = generate_synthetic_ensemble(&grid, 12, 17, &test_spec()).unwrap();
        let c = 2.5;
        let scaled_members: Vec<WindMember> = ens
            .members()
            .iter()
            .map(|m| WindMember { u: &m.u * c, v: &m.v * c })
            .collect();
        let scaled = WindEnsemble::from_members(grid, scaled_members).unwrap();

        let base = MuklExpansion::fit(&ens, Truncation::Modes(3)).unwrap();
        let bumped = MuklExpansion::fit(&scaled, Truncation::Modes(3)).unwrap();
        for k in 0..3 {
            assert_abs_diff_eq!(
                bumped.eigenvalues()[k],
                c * c * base.eigenvalues()[k],
                epsilon = 1e-8 * base.eigenvalues()[0]
            );
        }
        for (a, b) in base.xi_samples().iter().zip(bumped.xi_samples().iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-8);
        }
    }

    #[test]
    fn null_mode_request_is_refused() {
        let grid = toy_grid();
        let ens = generate_synthetic_ensemble(&grid, 4, 2, &test_spec()).unwrap();
        // Rank is at most R - 1 = 3 on 8 assembled dimensions.
        let err = MuklExpansion::fit(&ens, Truncation::Modes(5)).unwrap_err();
        assert!(matches!(err, MuklError::NullModeIncluded { .. }));
        let err = MuklExpansion::fit(&ens, Truncation::Modes(0)).unwrap_err();
        assert!(matches!(err, MuklError::InvalidTruncation { .. }));
    }

    #[test]
    fn normalized_subfunctions_preserve_modal_energy() {
        let grid = WindGrid::regular(0.0, 0.0, 1.0, 3, 3).unwrap();
        let ens = generate_synthetic_ensemble(&grid, 20, 8, &test_spec()).unwrap();
        let exp = MuklExpansion::fit(&ens, Truncation::Modes(4)).unwrap();
        for k in 0..exp.order() {
            let (phi_u, lam_u) = exp.normalized_subfunction(k, Component::U);
            let (phi_v, lam_v) = exp.normalized_subfunction(k, Component::V);
            assert_abs_diff_eq!(phi_u.norm(), 1.0, epsilon = 1e-10);
            assert_abs_diff_eq!(phi_v.norm(), 1.0, epsilon = 1e-10);
            // The component energies partition the assembled eigenvalue.
            assert_abs_diff_eq!(lam_u + lam_v, exp.eigenvalues()[k], epsilon = 1e-10);
            let raw = exp.subfunction(k, Component::U);
            let rebuilt = &phi_u * (lam_u / exp.eigenvalues()[k]).sqrt();
            for (a, b) in raw.iter().zip(rebuilt.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn archive_round_trips_bitwise() {
        let grid = WindGrid::regular(40.0, -10.0, 0.5, 3, 4).unwrap();
        let ens = generate_synthetic_ensemble(&grid, 15, 31, &test_spec()).unwrap();
        let exp = MuklExpansion::fit(&ens, Truncation::Modes(6)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("expansion.bin");
        exp.save_archive(&path).unwrap();
        let loaded = MuklExpansion::load_archive(&path).unwrap();

        assert_eq!(loaded.grid(), exp.grid());
        assert_eq!(loaded.eigenvalues(), exp.eigenvalues());
        assert_eq!(loaded.modes(), exp.modes());
        assert_eq!(loaded.xi_samples(), exp.xi_samples());
        assert_eq!(loaded.mean_u(), exp.mean_u());

        let second = dir.path().join("expansion2.bin");
        loaded.save_archive(&second).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), std::fs::read(&second).unwrap());
    }

    #[test]
    fn archive_rejects_foreign_and_truncated_files() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bogus.bin");
        std::fs::write(&path, b"NOTANARCHIVE").unwrap();
        assert!(matches!(
            MuklExpansion::load_archive(&path),
            Err(MuklError::Archive(ArchiveError::Format(_)))
        ));

        let grid = toy_grid();
        let ens = generate_synthetic_ensemble(&grid, 4, 1, &test_spec()).unwrap();
        let exp = MuklExpansion::fit(&ens, Truncation::Modes(2)).unwrap();
        let full = dir.path().join("full.bin");
        exp.save_archive(&full).unwrap();
        let bytes = std::fs::read(&full).unwrap();
        let cut = dir.path().join("cut.bin");
        std::fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
        assert!(matches!(
            MuklExpansion::load_archive(&cut),
            Err(MuklError::Archive(ArchiveError::Io(_)))
        ));
    }
}

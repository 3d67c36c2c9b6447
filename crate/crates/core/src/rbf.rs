//! Gaussian radial-basis-function interpolation of gridded scalar fields.
//!
//! Discrete wind fields have to be evaluated at arbitrary aircraft positions
//! during trajectory integration. Each field is fitted once with Gaussian
//! kernels `exp(-(eps r)^2)` centred on the grid points plus a constant
//! polynomial tail, which makes constant fields reproduce exactly. Distances
//! are Euclidean in degree space. Evaluation outside the grid bounding box
//! is an error: the fit carries no information there, so extrapolation is
//! refused rather than guessed.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::RbfError;
use crate::grid::WindGrid;

/// A fitted radial-basis-function interpolant over a grid bounding box.
#[derive(Debug, Clone)]
pub struct RbfInterpolant {
    centers: Vec<(f64, f64)>,
    coefficients: DVector<f64>,
    constant: f64,
    epsilon: f64,
    lat_range: (f64, f64),
    lon_range: (f64, f64),
}

/// Default shape parameter: the reciprocal of the median nearest-neighbour
/// spacing between grid points, so the kernel decays to `exp(-1)` at the
/// closest neighbouring centre.
pub fn default_epsilon(grid: &WindGrid) -> f64 {
    let points = grid.points();
    let mut nearest: Vec<f64> = points
        .iter()
        .enumerate()
        .map(|(i, a)| {
            points
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, b)| dist2(*a, *b))
                .fold(f64::INFINITY, f64::min)
        })
        .collect();
    nearest.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let mid = nearest.len() / 2;
    let median2 = if nearest.len() % 2 == 1 {
        nearest[mid]
    } else {
        0.5 * (nearest[mid - 1] + nearest[mid])
    };
    1.0 / median2.sqrt()
}

/// Fits an interpolant to a field sampled on `grid`.
///
/// `epsilon` is the Gaussian shape parameter; `None` selects
/// [`default_epsilon`]. The collocation system is solved by a symmetric
/// factorization; if that fails, a diagonal regularization of
/// `1e-10 * trace / n` is applied once before giving up.
///
/// # Errors
///
/// Returns an error if the field shape disagrees with the grid, contains
/// non-finite values, the shape parameter is invalid, or the system stays
/// singular after regularization.
pub fn fit_rbf(
    grid: &WindGrid,
    field: &DMatrix<f64>,
    epsilon: Option<f64>,
) -> Result<RbfInterpolant, RbfError> {
    let (rows, cols) = grid.shape();
    if (field.nrows(), field.ncols()) != (rows, cols) {
        return Err(RbfError::ShapeMismatch {
            rows,
            cols,
            found_rows: field.nrows(),
            found_cols: field.ncols(),
        });
    }
    if field.iter().any(|x| !x.is_finite()) {
        return Err(RbfError::NonFinite);
    }
    let epsilon = epsilon.unwrap_or_else(|| default_epsilon(grid));
    if !epsilon.is_finite() || epsilon <= 0.0 {
        return Err(RbfError::InvalidEpsilon { value: epsilon });
    }

    let centers = grid.points();
    let n = centers.len();
    let values = grid.flatten(field);
    let gram = DMatrix::from_fn(n, n, |i, j| kernel(epsilon, dist2(centers[i], centers[j])));

    let factor = match gram.clone().cholesky() {
        Some(f) => f,
        None => {
            let shift = 1e-10 * gram.trace() / n as f64;
            let regularized = gram.clone() + DMatrix::from_diagonal_element(n, n, shift);
            regularized.cholesky().ok_or(RbfError::SingularSystem)?
        }
    };

    // Constant tail by Schur complement: d = (1' A^-1 f) / (1' A^-1 1),
    // kernel weights c = A^-1 (f - d 1). Two refined solves keep the
    // collocation residual at round-off even for stiff kernels.
    let ones = DVector::from_element(n, 1.0);
    let inv_f = refined_solve(&factor, &gram, &values);
    let inv_one = refined_solve(&factor, &gram, &ones);
    let constant = ones.dot(&inv_f) / ones.dot(&inv_one);
    let coefficients = inv_f - inv_one * constant;

    Ok(RbfInterpolant {
        centers,
        coefficients,
        constant,
        epsilon,
        lat_range: (grid.lats()[0], *grid.lats().last().unwrap()),
        lon_range: (grid.lons()[0], *grid.lons().last().unwrap()),
    })
}

impl RbfInterpolant {
    /// Evaluates the interpolant at `(lat, lon)` in degrees.
    ///
    /// # Errors
    ///
    /// Returns an error if the point lies outside the fitted bounding box.
    pub fn eval(&self, lat: f64, lon: f64) -> Result<f64, RbfError> {
        if lat < self.lat_range.0
            || lat > self.lat_range.1
            || lon < self.lon_range.0
            || lon > self.lon_range.1
        {
            return Err(RbfError::OutOfDomain { lat, lon });
        }
        let mut acc = self.constant;
        for (center, c) in self.centers.iter().zip(self.coefficients.iter()) {
            acc += c * kernel(self.epsilon, dist2(*center, (lat, lon)));
        }
        Ok(acc)
    }

    /// The shape parameter the interpolant was fitted with.
    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

#[inline]
fn dist2(a: (f64, f64), b: (f64, f64)) -> f64 {
    let dlat = a.0 - b.0;
    let dlon = a.1 - b.1;
    dlat * dlat + dlon * dlon
}

#[inline]
fn kernel(epsilon: f64, r2: f64) -> f64 {
    (-(epsilon * epsilon) * r2).exp()
}

fn refined_solve(
    factor: &Cholesky<f64, Dyn>,
    gram: &DMatrix<f64>,
    rhs: &DVector<f64>,
) -> DVector<f64> {
    let mut x = factor.solve(rhs);
    for _ in 0..2 {
        let residual = rhs - gram * &x;
        x += factor.solve(&residual);
    }
    x
}

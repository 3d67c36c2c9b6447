//! Regular latitude/longitude grid and the shared flattening convention.
//!
//! Every module that turns a gridded field into a vector goes through
//! [`WindGrid::flat_index`]: latitude-major (row-major) order, so the flat
//! index of cell `(i_lat, i_lon)` is `i_lat * n_lons + i_lon`. Keeping this
//! in one place is what lets covariance assembly, field reconstruction and
//! interpolation agree on which entry belongs to which cell.

use nalgebra::{DMatrix, DVector};

use crate::error::GridError;

/// A rectangular grid of latitude/longitude sample points, in degrees.
#[derive(Debug, Clone, PartialEq)]
pub struct WindGrid {
    lats: Vec<f64>,
    lons: Vec<f64>,
}

impl WindGrid {
    /// Builds a grid from latitude and longitude axes in degrees.
    ///
    /// # Errors
    ///
    /// Returns an error if either axis has fewer than two points, is not
    /// strictly increasing, or contains a non-finite value.
    pub fn new(lats: Vec<f64>, lons: Vec<f64>) -> Result<Self, GridError> {
        check_axis("lat", &lats)?;
        check_axis("lon", &lons)?;
        Ok(Self { lats, lons })
    }

    /// Convenience constructor for a uniformly spaced grid.
    ///
    /// # Errors
    ///
    /// Returns an error if either count is below two or the step is not
    /// positive and finite.
    pub fn regular(
        lat_start: f64,
        lon_start: f64,
        step_deg: f64,
        n_lats: usize,
        n_lons: usize,
    ) -> Result<Self, GridError> {
        if !(step_deg > 0.0) || !step_deg.is_finite() {
            return Err(GridError::InvalidAxis {
                axis: "step",
                reason: format!("step must be positive and finite, got {step_deg}"),
            });
        }
        let lats = (0..n_lats).map(|i| lat_start + i as f64 * step_deg).collect();
        let lons = (0..n_lons).map(|j| lon_start + j as f64 * step_deg).collect();
        Self::new(lats, lons)
    }

    /// Latitude axis in degrees, strictly increasing.
    pub fn lats(&self) -> &[f64] {
        &self.lats
    }

    /// Longitude axis in degrees, strictly increasing.
    pub fn lons(&self) -> &[f64] {
        &self.lons
    }

    /// Number of grid points per field.
    pub fn n_points(&self) -> usize {
        self.lats.len() * self.lons.len()
    }

    /// Grid shape as `(n_lats, n_lons)`.
    pub fn shape(&self) -> (usize, usize) {
        (self.lats.len(), self.lons.len())
    }

    /// Median nearest-neighbour spacing per axis, `(lat_deg, lon_deg)`.
    pub fn resolution_deg(&self) -> (f64, f64) {
        (median_spacing(&self.lats), median_spacing(&self.lons))
    }

    /// Flat index of cell `(i_lat, i_lon)` under the latitude-major order.
    #[inline]
    pub fn flat_index(&self, i_lat: usize, i_lon: usize) -> usize {
        debug_assert!(i_lat < self.lats.len() && i_lon < self.lons.len());
        i_lat * self.lons.len() + i_lon
    }

    /// Inverse of [`flat_index`](Self::flat_index).
    #[inline]
    pub fn cell_of(&self, flat: usize) -> (usize, usize) {
        debug_assert!(flat < self.n_points());
        (flat / self.lons.len(), flat % self.lons.len())
    }

    /// Flattens an `(n_lats, n_lons)` field matrix into a vector in the
    /// latitude-major order.
    ///
    /// # Panics
    ///
    /// Panics if the field shape does not match the grid.
    pub fn flatten(&self, field: &DMatrix<f64>) -> DVector<f64> {
        assert_eq!(
            (field.nrows(), field.ncols()),
            self.shape(),
            "field shape does not match grid"
        );
        let mut out = DVector::zeros(self.n_points());
        for i in 0..self.lats.len() {
            for j in 0..self.lons.len() {
                out[self.flat_index(i, j)] = field[(i, j)];
            }
        }
        out
    }

    /// Inverse of [`flatten`](Self::flatten).
    ///
    /// # Panics
    ///
    /// Panics if the vector length does not match the grid point count.
    pub fn unflatten(&self, values: &DVector<f64>) -> DMatrix<f64> {
        assert_eq!(values.len(), self.n_points(), "length does not match grid");
        let (n_lats, n_lons) = self.shape();
        DMatrix::from_fn(n_lats, n_lons, |i, j| values[self.flat_index(i, j)])
    }

    /// Coordinates `(lat, lon)` of every grid point in flat order.
    pub fn points(&self) -> Vec<(f64, f64)> {
        let mut pts = Vec::with_capacity(self.n_points());
        for &lat in &self.lats {
            for &lon in &self.lons {
                pts.push((lat, lon));
            }
        }
        pts
    }

    /// Whether `(lat, lon)` lies inside the grid bounding box (inclusive).
    pub fn contains(&self, lat: f64, lon: f64) -> bool {
        lat >= self.lats[0]
            && lat <= *self.lats.last().unwrap()
            && lon >= self.lons[0]
            && lon <= *self.lons.last().unwrap()
    }
}

fn check_axis(axis: &'static str, values: &[f64]) -> Result<(), GridError> {
    if values.len() < 2 {
        return Err(GridError::InvalidAxis {
            axis,
            reason: format!("need at least 2 points, got {}", values.len()),
        });
    }
    if let Some(v) = values.iter().find(|v| !v.is_finite()) {
        return Err(GridError::InvalidAxis {
            axis,
            reason: format!("non-finite value {v}"),
        });
    }
    if values.windows(2).any(|w| w[0] >= w[1]) {
        return Err(GridError::InvalidAxis {
            axis,
            reason: "values must be strictly increasing".into(),
        });
    }
    Ok(())
}

fn median_spacing(axis: &[f64]) -> f64 {
    let mut gaps: Vec<f64> = axis.windows(2).map(|w| w[1] - w[0]).collect();
    gaps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let n = gaps.len();
    if n % 2 == 1 {
        gaps[n / 2]
    } else {
        0.5 * (gaps[n / 2 - 1] + gaps[n / 2])
    }
}

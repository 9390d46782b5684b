use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Common time grid shared by all curves in a dataset.
///
/// Points are strictly increasing within `[a, b]`. The grid also fixes the
/// quadrature used everywhere: trapezoidal rule over the sampled points.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    points: Vec<f64>,
    a: f64,
    b: f64,
}

impl TimeGrid {
    pub fn new(points: Vec<f64>, a: f64, b: f64) -> Result<Self> {
        if points.len() < 2 {
            return Err(Error::InvalidInput("grid needs at least 2 points".into()));
        }
        if !points.iter().all(|t| t.is_finite()) || !a.is_finite() || !b.is_finite() {
            return Err(Error::NonFinite("time grid"));
        }
        if !points.windows(2).all(|w| w[0] < w[1]) {
            return Err(Error::InvalidInput("grid must be strictly increasing".into()));
        }
        if a > points[0] || points[points.len() - 1] > b {
            return Err(Error::InvalidInput(format!(
                "grid points must lie within [{a}, {b}]"
            )));
        }
        Ok(TimeGrid { points, a, b })
    }

    /// `size` equispaced points spanning `[0, 1]` inclusive.
    pub fn unit_uniform(size: usize) -> Result<Self> {
        if size < 2 {
            return Err(Error::InvalidInput("grid needs at least 2 points".into()));
        }
        let step = 1.0 / (size - 1) as f64;
        let points = (0..size).map(|j| j as f64 * step).collect();
        TimeGrid::new(points, 0.0, 1.0)
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn points(&self) -> &[f64] {
        &self.points
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn b(&self) -> f64 {
        self.b
    }

    /// Trapezoidal rule over the grid points.
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        if values.len() != self.points.len() {
            return Err(Error::DimensionMismatch(format!(
                "integrand length {} vs grid length {}",
                values.len(),
                self.points.len()
            )));
        }
        let mut acc = 0.0;
        for j in 0..self.points.len() - 1 {
            let dt = self.points[j + 1] - self.points[j];
            acc += 0.5 * dt * (values[j] + values[j + 1]);
        }
        Ok(acc)
    }

    /// Map an arbitrary increasing grid affinely onto `[0, 1]`.
    pub fn normalized_to_unit(&self) -> Result<Self> {
        let lo = self.points[0];
        let hi = self.points[self.points.len() - 1];
        let span = hi - lo;
        let points = self.points.iter().map(|t| (t - lo) / span).collect();
        TimeGrid::new(points, 0.0, 1.0)
    }
}

//! Geometric side information: known inter-point distances and bounds.
//!
//! Indices refer to the full point set, receivers first (`0..M`), then
//! sources (`M..M+K`).

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::PointSet;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KnownDistance {
    pub i: usize,
    pub j: usize,
    /// Distance in meters.
    pub distance: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistanceBound {
    pub i: usize,
    pub j: usize,
    pub lower: f64,
    pub upper: f64,
}

fn check_pair(i: usize, j: usize, n: usize) -> Result<()> {
    if i >= n || j >= n {
        return Err(Error::InvalidProblem(format!(
            "distance pair ({i}, {j}) out of range for {n} points"
        )));
    }
    if i == j {
        return Err(Error::InvalidProblem(format!(
            "distance pair ({i}, {j}) refers to a single point"
        )));
    }
    Ok(())
}

impl KnownDistance {
    pub fn validate(&self, n: usize) -> Result<()> {
        check_pair(self.i, self.j, n)?;
        if !(self.distance >= 0.0 && self.distance.is_finite()) {
            return Err(Error::InvalidProblem(format!(
                "known distance {} for ({}, {}) must be finite and nonnegative",
                self.distance, self.i, self.j
            )));
        }
        Ok(())
    }
}

impl DistanceBound {
    pub fn validate(&self, n: usize) -> Result<()> {
        check_pair(self.i, self.j, n)?;
        if !(self.lower >= 0.0 && self.lower <= self.upper && self.upper.is_finite()) {
            return Err(Error::InvalidProblem(format!(
                "bounds [{}, {}] for ({}, {}) must satisfy 0 ≤ lower ≤ upper",
                self.lower, self.upper, self.i, self.j
            )));
        }
        Ok(())
    }
}

/// `g_ij(X) = ‖x_i − x_j‖² − d_ij²` for every known distance, in m².
pub fn distance_residuals(x: &PointSet, known: &[KnownDistance]) -> DVector<f64> {
    let c = x.coords();
    DVector::from_iterator(
        known.len(),
        known.iter().map(|kd| {
            (c.column(kd.i) - c.column(kd.j)).norm_squared() - kd.distance * kd.distance
        }),
    )
}

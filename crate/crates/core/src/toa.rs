//! Time-of-arrival measurement model and the timing-invariant loss.
//!
//! Arrival times follow `T = Δ/v + σ·1ᵀ + 1·τᵀ`. Centering the rows and
//! columns of `T` annihilates every term of the form `σ·1ᵀ + 1·τᵀ`, so the
//! projection `J_M·T·J_K` depends on geometry alone. When one set of times
//! is known only one side needs centering.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{cross_distances, PointSet};

/// Speed of sound in air used as the default propagation speed (m/s).
pub const DEFAULT_SPEED: f64 = 343.0;

/// Receiver clock offsets `σ` and source emission times `τ`, in seconds.
///
/// Only defined up to the global shift `(σ + c·1, τ − c·1)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Timing {
    pub sigma: DVector<f64>,
    pub tau: DVector<f64>,
}

impl Timing {
    pub fn zeros(m: usize, k: usize) -> Self {
        Self {
            sigma: DVector::zeros(m),
            tau: DVector::zeros(k),
        }
    }
}

/// Which set of times is known (and therefore zero after absorbing it into
/// the measurements).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SyncMode {
    /// Neither receiver offsets nor emission times are known.
    #[default]
    None,
    /// Receivers share a clock; only emission times are unknown.
    ReceiversSynced,
    /// Emission times are known; only receiver offsets are unknown.
    SourcesSynced,
}

impl SyncMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            SyncMode::None => "none",
            SyncMode::ReceiversSynced => "receivers-synced",
            SyncMode::SourcesSynced => "sources-synced",
        }
    }
}

impl std::str::FromStr for SyncMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('_', "-").as_str() {
            "none" => Ok(SyncMode::None),
            "receivers-synced" => Ok(SyncMode::ReceiversSynced),
            // "one-known": receivers carry the unknown offsets, source times known
            "sources-synced" | "one-known" => Ok(SyncMode::SourcesSynced),
            other => Err(Error::InvalidParameter(format!("unknown sync mode '{other}'"))),
        }
    }
}

impl std::fmt::Display for SyncMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// An `M × K` matrix of arrival times in seconds with an observation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct ToaMatrix {
    t: DMatrix<f64>,
    mask: DMatrix<bool>,
    speed: f64,
}

impl ToaMatrix {
    /// Fully observed matrix.
    pub fn new(t: DMatrix<f64>, speed: f64) -> Result<Self> {
        let mask = DMatrix::from_element(t.nrows(), t.ncols(), true);
        Self::with_mask(t, mask, speed)
    }

    pub fn with_mask(t: DMatrix<f64>, mask: DMatrix<bool>, speed: f64) -> Result<Self> {
        if !(speed > 0.0 && speed.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "propagation speed must be positive, got {speed}"
            )));
        }
        if t.shape() != mask.shape() {
            return Err(Error::InvalidInput(format!(
                "mask shape {:?} differs from TOA shape {:?}",
                mask.shape(),
                t.shape()
            )));
        }
        if t.nrows() == 0 || t.ncols() == 0 {
            return Err(Error::InvalidInput("empty TOA matrix".into()));
        }
        for i in 0..t.nrows() {
            for j in 0..t.ncols() {
                if mask[(i, j)] && !t[(i, j)].is_finite() {
                    return Err(Error::InvalidInput(format!(
                        "observed entry ({i}, {j}) is not finite"
                    )));
                }
            }
        }
        if let Some(i) = (0..t.nrows()).find(|&i| !mask.row(i).iter().any(|&o| o)) {
            return Err(Error::InvalidInput(format!("row {i} has no observed entry")));
        }
        if let Some(j) = (0..t.ncols()).find(|&j| !mask.column(j).iter().any(|&o| o)) {
            return Err(Error::InvalidInput(format!(
                "column {j} has no observed entry"
            )));
        }
        Ok(Self { t, mask, speed })
    }

    pub fn m(&self) -> usize {
        self.t.nrows()
    }

    pub fn k(&self) -> usize {
        self.t.ncols()
    }

    pub fn times(&self) -> &DMatrix<f64> {
        &self.t
    }

    pub fn mask(&self) -> &DMatrix<bool> {
        &self.mask
    }

    pub fn speed(&self) -> f64 {
        self.speed
    }

    pub fn is_observed(&self, i: usize, j: usize) -> bool {
        self.mask[(i, j)]
    }

    pub fn is_complete(&self) -> bool {
        self.mask.iter().all(|&o| o)
    }

    /// Unobserved `(m, k)` indices in column-major order. This order fixes
    /// the layout of the missing-entry coefficients everywhere.
    pub fn missing(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for j in 0..self.k() {
            for i in 0..self.m() {
                if !self.mask[(i, j)] {
                    out.push((i, j));
                }
            }
        }
        out
    }

    pub fn observed_count(&self) -> usize {
        self.mask.iter().filter(|&&o| o).count()
    }

    /// Arrival times scaled to meters, with unobserved entries set to zero.
    pub fn distances(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.m(), self.k(), |i, j| {
            if self.mask[(i, j)] {
                self.t[(i, j)] * self.speed
            } else {
                0.0
            }
        })
    }
}

/// Noiseless arrival times `t_mk = ‖r_m − s_k‖/v + σ_m + τ_k`.
pub fn forward_toa(x: &PointSet, timing: &Timing, speed: f64) -> Result<ToaMatrix> {
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "propagation speed must be positive, got {speed}"
        )));
    }
    if timing.sigma.len() != x.m() || timing.tau.len() != x.k() {
        return Err(Error::InvalidInput(format!(
            "timing has {} offsets and {} emission times for {} receivers and {} sources",
            timing.sigma.len(),
            timing.tau.len(),
            x.m(),
            x.k()
        )));
    }
    let delta = cross_distances(x).0;
    let t = DMatrix::from_fn(x.m(), x.k(), |i, j| {
        delta[(i, j)] / speed + timing.sigma[i] + timing.tau[j]
    });
    ToaMatrix::new(t, speed)
}

/// Differences every row against `reference_row`. The result is again a
/// TOA matrix with modified offsets and emission times.
pub fn tdoa_to_toa(t: &ToaMatrix, reference_row: usize) -> Result<ToaMatrix> {
    if reference_row >= t.m() {
        return Err(Error::InvalidInput(format!(
            "reference row {reference_row} out of range for {} receivers",
            t.m()
        )));
    }
    if !t.mask.row(reference_row).iter().all(|&o| o) {
        return Err(Error::InvalidInput(format!(
            "reference row {reference_row} has unobserved entries"
        )));
    }
    let diff = DMatrix::from_fn(t.m(), t.k(), |i, j| {
        if t.mask[(i, j)] {
            t.t[(i, j)] - t.t[(reference_row, j)]
        } else {
            0.0
        }
    });
    ToaMatrix::with_mask(diff, t.mask.clone(), t.speed)
}

/// Subtracts the mean of every column (left multiplication by `J_M`).
pub(crate) fn center_columns(a: &mut DMatrix<f64>) {
    for mut col in a.column_iter_mut() {
        let mean = col.mean();
        col.add_scalar_mut(-mean);
    }
}

/// Subtracts the mean of every row (right multiplication by `J_K`).
pub(crate) fn center_rows(a: &mut DMatrix<f64>) {
    let means = a.column_mean();
    for mut col in a.column_iter_mut() {
        col -= &means;
    }
}

/// Applies the mode's timing-annihilating projection in place.
pub(crate) fn project_in_place(a: &mut DMatrix<f64>, mode: SyncMode) {
    match mode {
        SyncMode::None => {
            center_columns(a);
            center_rows(a);
        }
        SyncMode::ReceiversSynced => center_columns(a),
        SyncMode::SourcesSynced => center_rows(a),
    }
}

/// `J_M·A·J_K`, `J_M·A` or `A·J_K` depending on which times are unknown.
pub fn timing_invariant_projection(a: &DMatrix<f64>, mode: SyncMode) -> DMatrix<f64> {
    let mut out = a.clone();
    project_in_place(&mut out, mode);
    out
}

/// `Δ(x) − T′ + Σ α_mk·e_m·e_kᵀ` in meters, where `T′` is the speed-scaled
/// TOA matrix with zeros at unobserved entries. Not yet projected.
pub(crate) fn raw_residual(
    delta: &DMatrix<f64>,
    target: &DMatrix<f64>,
    missing: &[(usize, usize)],
    alpha: &[f64],
) -> DMatrix<f64> {
    let mut r = delta - target;
    for (&(i, j), &a) in missing.iter().zip(alpha) {
        r[(i, j)] += a;
    }
    r
}

/// Timing-invariant loss `½‖P(Δ(x) − T′ + Σ α e_m e_kᵀ)‖²_F` in square meters,
/// with `P` the projection for `mode`.
pub fn loss(x: &PointSet, t: &ToaMatrix, mode: SyncMode, alpha: &[f64]) -> Result<f64> {
    if x.m() != t.m() || x.k() != t.k() {
        return Err(Error::InvalidInput(format!(
            "point set has {}x{} receivers/sources but TOA matrix is {}x{}",
            x.m(),
            x.k(),
            t.m(),
            t.k()
        )));
    }
    let missing = t.missing();
    if alpha.len() != missing.len() {
        return Err(Error::InvalidInput(format!(
            "expected {} missing-entry coefficients, got {}",
            missing.len(),
            alpha.len()
        )));
    }
    let delta = cross_distances(x).0;
    let mut r = raw_residual(&delta, &t.distances(), &missing, alpha);
    project_in_place(&mut r, mode);
    Ok(0.5 * r.norm_squared())
}

/// Removes known per-source emission delays `δ` (seconds): returns
/// `T − 1·δᵀ`. The one remaining unknown start time is absorbed into the
/// receiver offsets, so the result should be localized with
/// [`SyncMode::SourcesSynced`].
pub fn constant_offset_reduce(t: &ToaMatrix, known_delays: &DVector<f64>) -> Result<ToaMatrix> {
    if known_delays.len() != t.k() {
        return Err(Error::InvalidInput(format!(
            "expected {} source delays, got {}",
            t.k(),
            known_delays.len()
        )));
    }
    if known_delays.iter().any(|d| !d.is_finite()) {
        return Err(Error::InvalidInput("non-finite source delay".into()));
    }
    let reduced = DMatrix::from_fn(t.m(), t.k(), |i, j| {
        if t.mask[(i, j)] {
            t.t[(i, j)] - known_delays[j]
        } else {
            0.0
        }
    });
    ToaMatrix::with_mask(reduced, t.mask.clone(), t.speed)
}

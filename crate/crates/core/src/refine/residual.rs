//! Residual and Jacobian of the timing-invariant loss.
//!
//! Parameters are stacked as `θ = [vec R; vec S; α]`, each point contributing
//! `d` consecutive coordinates, followed by one coefficient per unobserved
//! TOA entry (in [`ToaMatrix::missing`] order). The residual is
//! `vec(P(Δ(θ) − T′ + Σ α_mk e_m e_kᵀ))` where `P` is the mode's centering
//! projection, applied as row/column mean removal.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::toa::{project_in_place, raw_residual, SyncMode, ToaMatrix};

use super::lm::LeastSquaresProblem;

/// Default distance below which a receiver–source pair is treated as
/// coincident when differentiating.
pub const DEFAULT_DISTANCE_FLOOR: f64 = 1e-9;

#[derive(Debug, Clone)]
pub struct TimingInvariantResidual {
    d: usize,
    m: usize,
    k: usize,
    mode: SyncMode,
    target: DMatrix<f64>,
    missing: Vec<(usize, usize)>,
    distance_floor: f64,
}

impl TimingInvariantResidual {
    pub fn new(t: &ToaMatrix, d: usize, mode: SyncMode) -> Result<Self> {
        if !(2..=3).contains(&d) {
            return Err(Error::InvalidDimension(format!(
                "dimension must be 2 or 3, got {d}"
            )));
        }
        Ok(Self {
            d,
            m: t.m(),
            k: t.k(),
            mode,
            target: t.distances(),
            missing: t.missing(),
            distance_floor: DEFAULT_DISTANCE_FLOOR,
        })
    }

    pub fn with_distance_floor(mut self, floor: f64) -> Self {
        self.distance_floor = floor;
        self
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn mode(&self) -> SyncMode {
        self.mode
    }

    pub fn missing(&self) -> &[(usize, usize)] {
        &self.missing
    }

    pub fn position_len(&self) -> usize {
        self.d * (self.m + self.k)
    }

    pub fn param_len(&self) -> usize {
        self.position_len() + self.missing.len()
    }

    /// Packs a point set and missing-entry coefficients into `θ`.
    pub fn pack(&self, x: &PointSet, alpha: &[f64]) -> DVector<f64> {
        let mut theta = DVector::zeros(self.param_len());
        theta
            .rows_mut(0, self.position_len())
            .copy_from_slice(x.coords().as_slice());
        theta
            .rows_mut(self.position_len(), self.missing.len())
            .copy_from_slice(alpha);
        theta
    }

    pub fn points(&self, theta: &DVector<f64>) -> Result<PointSet> {
        PointSet::from_vector(theta.as_slice(), self.d, self.m, self.k)
    }

    pub fn alpha<'a>(&self, theta: &'a DVector<f64>) -> &'a [f64] {
        &theta.as_slice()[self.position_len()..]
    }

    fn coord(&self, theta: &DVector<f64>, point: usize, axis: usize) -> f64 {
        theta[point * self.d + axis]
    }

    fn cross(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        DMatrix::from_fn(self.m, self.k, |i, j| {
            (0..self.d)
                .map(|c| {
                    let diff = self.coord(theta, i, c) - self.coord(theta, self.m + j, c);
                    diff * diff
                })
                .sum::<f64>()
                .sqrt()
        })
    }

    pub fn residual_matrix(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let mut r = raw_residual(&self.cross(theta), &self.target, &self.missing, self.alpha(theta));
        project_in_place(&mut r, self.mode);
        r
    }

    /// `½‖f(θ)‖²`.
    pub fn loss(&self, theta: &DVector<f64>) -> f64 {
        0.5 * self.residual_matrix(theta).norm_squared()
    }

    /// Analytic Jacobian plus the number of receiver–source pairs closer than
    /// the distance floor (their direction is replaced by zero).
    pub fn jacobian_with_diagnostics(&self, theta: &DVector<f64>) -> (DMatrix<f64>, usize) {
        let (m, k, d) = (self.m, self.k, self.d);
        let mk = m * k;
        let mut jac = DMatrix::zeros(mk, self.param_len());
        let mut degenerate = 0;

        // unit directions u_mk = (r_m − s_k)/‖r_m − s_k‖, stored d × (M·K)
        let mut dirs = DMatrix::zeros(d, mk);
        for j in 0..k {
            for i in 0..m {
                let mut norm = 0.0;
                for c in 0..d {
                    let diff = self.coord(theta, i, c) - self.coord(theta, m + j, c);
                    dirs[(c, i + j * m)] = diff;
                    norm += diff * diff;
                }
                let norm = norm.sqrt();
                let mut col = dirs.column_mut(i + j * m);
                if norm < self.distance_floor {
                    col.fill(0.0);
                    degenerate += 1;
                } else {
                    col /= norm;
                }
            }
        }

        let mut block = DMatrix::zeros(m, k);
        for c in 0..d {
            // receiver i: nonzero only in row i
            for i in 0..m {
                block.fill(0.0);
                for j in 0..k {
                    block[(i, j)] = dirs[(c, i + j * m)];
                }
                project_in_place(&mut block, self.mode);
                jac.column_mut(i * d + c).copy_from_slice(block.as_slice());
            }
            // source j: nonzero only in column j, opposite sign
            for j in 0..k {
                block.fill(0.0);
                for i in 0..m {
                    block[(i, j)] = -dirs[(c, i + j * m)];
                }
                project_in_place(&mut block, self.mode);
                jac.column_mut((m + j) * d + c).copy_from_slice(block.as_slice());
            }
        }
        for (a, &(i, j)) in self.missing.iter().enumerate() {
            block.fill(0.0);
            block[(i, j)] = 1.0;
            project_in_place(&mut block, self.mode);
            jac.column_mut(self.position_len() + a)
                .copy_from_slice(block.as_slice());
        }
        (jac, degenerate)
    }
}

impl LeastSquaresProblem for TimingInvariantResidual {
    fn param_len(&self) -> usize {
        TimingInvariantResidual::param_len(self)
    }

    fn residual(&self, theta: &DVector<f64>) -> DVector<f64> {
        let r = self.residual_matrix(theta);
        DVector::from_column_slice(r.as_slice())
    }

    fn jacobian(&self, theta: &DVector<f64>) -> (DMatrix<f64>, usize) {
        self.jacobian_with_diagnostics(theta)
    }
}

/// `f(θ)`: the vectorized projected residual, length `M·K`.
pub fn residual(theta: &DVector<f64>, t: &ToaMatrix, d: usize, mode: SyncMode) -> Result<DVector<f64>> {
    let problem = TimingInvariantResidual::new(t, d, mode)?;
    check_len(&problem, theta)?;
    Ok(LeastSquaresProblem::residual(&problem, theta))
}

/// `Df(θ)`, an `(M·K) × (d(M+K) + |missing|)` matrix.
pub fn jacobian(theta: &DVector<f64>, t: &ToaMatrix, d: usize, mode: SyncMode) -> Result<DMatrix<f64>> {
    let problem = TimingInvariantResidual::new(t, d, mode)?;
    check_len(&problem, theta)?;
    Ok(problem.jacobian_with_diagnostics(theta).0)
}

fn check_len(problem: &TimingInvariantResidual, theta: &DVector<f64>) -> Result<()> {
    if theta.len() != problem.param_len() {
        return Err(Error::InvalidInput(format!(
            "parameter vector has length {}, expected {}",
            theta.len(),
            problem.param_len()
        )));
    }
    Ok(())
}

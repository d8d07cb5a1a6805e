//! Augmented-Lagrangian outer loop for known-distance equalities.
//!
//! The inner problem `‖f‖² + μ‖g + z/(2μ)‖²` is itself a least-squares
//! problem with stacked residual `[f; √μ·(g + z/(2μ))]`, so the plain LM
//! solver yields the damped update `(DfᵀDf + μDgᵀDg + λI)⁻¹(Dfᵀf + μDgᵀ(g + z/(2μ)))`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::constraints::KnownDistance;
use crate::error::{Error, Result};

use super::lm::LeastSquaresProblem;
use super::residual::TimingInvariantResidual;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugLagConfig {
    pub initial_penalty: f64,
    pub penalty_growth: f64,
    pub max_penalty: f64,
    pub outer_iterations: usize,
    /// Target for `‖g‖_∞`, in m².
    pub constraint_tolerance: f64,
}

impl Default for AugLagConfig {
    fn default() -> Self {
        Self {
            initial_penalty: 1.0,
            penalty_growth: 2.0,
            max_penalty: 1e6,
            outer_iterations: 30,
            constraint_tolerance: 1e-8,
        }
    }
}

impl AugLagConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.initial_penalty > 0.0
            && self.penalty_growth >= 1.0
            && self.max_penalty >= self.initial_penalty
            && self.constraint_tolerance > 0.0
            && self.outer_iterations >= 1)
        {
            return Err(Error::Config(
                "augmented-Lagrangian settings must be positive with growth ≥ 1".into(),
            ));
        }
        Ok(())
    }
}

/// `g(θ)` and its Jacobian `Dg(θ)` over the position block of `θ`.
pub(crate) struct DistanceConstraints<'a> {
    pub known: &'a [KnownDistance],
    pub d: usize,
    pub param_len: usize,
}

impl DistanceConstraints<'_> {
    pub fn values(&self, theta: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.known.len(),
            self.known.iter().map(|kd| {
                let sq: f64 = (0..self.d)
                    .map(|c| {
                        let diff = theta[kd.i * self.d + c] - theta[kd.j * self.d + c];
                        diff * diff
                    })
                    .sum();
                sq - kd.distance * kd.distance
            }),
        )
    }

    /// `∂g_ij/∂x_i = 2(x_i − x_j)`, `∂g_ij/∂x_j = −2(x_i − x_j)`.
    pub fn jacobian(&self, theta: &DVector<f64>) -> DMatrix<f64> {
        let mut jac = DMatrix::zeros(self.known.len(), self.param_len);
        for (row, kd) in self.known.iter().enumerate() {
            for c in 0..self.d {
                let diff = theta[kd.i * self.d + c] - theta[kd.j * self.d + c];
                jac[(row, kd.i * self.d + c)] += 2.0 * diff;
                jac[(row, kd.j * self.d + c)] -= 2.0 * diff;
            }
        }
        jac
    }
}

pub(crate) struct AugmentedProblem<'a> {
    pub base: &'a TimingInvariantResidual,
    pub constraints: DistanceConstraints<'a>,
    pub penalty: f64,
    pub multipliers: DVector<f64>,
}

impl LeastSquaresProblem for AugmentedProblem<'_> {
    fn param_len(&self) -> usize {
        self.base.param_len()
    }

    fn residual(&self, theta: &DVector<f64>) -> DVector<f64> {
        let f = LeastSquaresProblem::residual(self.base, theta);
        let scale = self.penalty.sqrt();
        let shifted = self.constraints.values(theta) + &self.multipliers / (2.0 * self.penalty);
        let mut out = DVector::zeros(f.len() + shifted.len());
        out.rows_mut(0, f.len()).copy_from(&f);
        out.rows_mut(f.len(), shifted.len()).copy_from(&(shifted * scale));
        out
    }

    fn jacobian(&self, theta: &DVector<f64>) -> (DMatrix<f64>, usize) {
        let (df, degenerate) = self.base.jacobian_with_diagnostics(theta);
        let dg = self.constraints.jacobian(theta) * self.penalty.sqrt();
        let mut out = DMatrix::zeros(df.nrows() + dg.nrows(), df.ncols());
        out.rows_mut(0, df.nrows()).copy_from(&df);
        out.rows_mut(df.nrows(), dg.nrows()).copy_from(&dg);
        (out, degenerate)
    }
}

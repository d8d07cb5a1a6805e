//! Solver-neutral conic program and the backend interface.
//!
//! A [`ConicProgram`] has one symmetric PSD matrix variable of order `n`
//! (its upper triangle occupies the first `n(n+1)/2` variable slots, column
//! by column, unscaled) followed by free scalar variables. Constraints are
//! linear equalities, linear `≥` rows, rotated quadratic cones
//! `2·u·v ≥ w², u, v ≥ 0` and second-order cones `t ≥ ‖x‖`, each built from
//! affine expressions of the variables. The objective is linear.

use serde::Serialize;

use crate::error::Result;

/// `Σ coeff·x[index] + constant`.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct AffineExpr {
    pub terms: Vec<(usize, f64)>,
    pub constant: f64,
}

impl AffineExpr {
    pub fn constant(value: f64) -> Self {
        Self {
            terms: Vec::new(),
            constant: value,
        }
    }

    pub fn var(index: usize) -> Self {
        Self {
            terms: vec![(index, 1.0)],
            constant: 0.0,
        }
    }

    pub fn add_term(&mut self, index: usize, coeff: f64) -> &mut Self {
        if coeff != 0.0 {
            self.terms.push((index, coeff));
        }
        self
    }

    pub fn eval(&self, x: &[f64]) -> f64 {
        self.constant + self.terms.iter().map(|&(i, c)| c * x[i]).sum::<f64>()
    }
}

/// `expr = rhs` (encoded as `expr` with the constant folded in, `= 0`).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LinearConstraint {
    pub expr: AffineExpr,
}

/// `2·u·v ≥ w²`, `u ≥ 0`, `v ≥ 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RotatedCone {
    pub u: AffineExpr,
    pub v: AffineExpr,
    pub w: AffineExpr,
}

/// `t ≥ ‖x‖₂`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SecondOrderCone {
    pub t: AffineExpr,
    pub x: Vec<AffineExpr>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConicProgram {
    /// Order of the PSD matrix variable.
    pub psd_order: usize,
    /// Scalar variables after the PSD block.
    pub num_scalars: usize,
    /// Minimize `Σ c·x[i]`.
    pub objective: Vec<(usize, f64)>,
    /// Each expression must equal zero.
    pub equalities: Vec<LinearConstraint>,
    /// Each expression must be nonnegative.
    pub inequalities: Vec<LinearConstraint>,
    pub rotated_cones: Vec<RotatedCone>,
    pub second_order_cones: Vec<SecondOrderCone>,
}

impl ConicProgram {
    pub fn psd_len(&self) -> usize {
        self.psd_order * (self.psd_order + 1) / 2
    }

    pub fn num_vars(&self) -> usize {
        self.psd_len() + self.num_scalars
    }

    /// Slot of the PSD entry `(i, j)`, in either order.
    pub fn psd_index(&self, i: usize, j: usize) -> usize {
        psd_index(i, j)
    }

    pub fn objective_value(&self, x: &[f64]) -> f64 {
        self.objective.iter().map(|&(i, c)| c * x[i]).sum()
    }
}

/// Upper-triangular, column-major slot of entry `(i, j)`.
pub fn psd_index(i: usize, j: usize) -> usize {
    let (r, c) = if i <= j { (i, j) } else { (j, i) };
    c * (c + 1) / 2 + r
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum SolverStatus {
    Optimal,
    NearOptimal,
    Infeasible,
    Failed,
}

impl SolverStatus {
    pub fn has_solution(&self) -> bool {
        matches!(self, SolverStatus::Optimal | SolverStatus::NearOptimal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConicSolution {
    pub status: SolverStatus,
    /// Primal values in the program's variable layout.
    pub x: Vec<f64>,
    pub iterations: u32,
    /// Backend-specific status text.
    pub detail: String,
}

/// A conic solver able to handle one PSD block, second-order and rotated
/// cones, and linear constraints.
pub trait ConicBackend {
    fn solve(&mut self, program: &ConicProgram) -> Result<ConicSolution>;
}

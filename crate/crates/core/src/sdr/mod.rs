//! Semidefinite relaxation over the full Gram matrix.
//!
//! The square root linking `L(G)` to the receiver–source distances is
//! replaced by a surrogate matrix `B` with `b_mk² ≤ L(G)_mk` and `b_mk ≥ 0`,
//! the rank constraint on `G` is dropped, and the timing-invariant data term
//! is minimized over `(G, B, α)`. The relaxed `G` is then embedded in `d`
//! dimensions to initialize refinement.

mod clarabel_backend;
pub mod conic;
mod problem;

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

pub use clarabel_backend::{ClarabelBackend, SolverOptions};
pub use conic::{ConicBackend, ConicProgram, ConicSolution, SolverStatus};
pub use problem::{SdrProblem, VariableLayout};

use crate::error::{Error, Result};
use crate::geometry::{spectral_points, GramMatrix, PointSet};
use crate::toa::project_in_place;

#[derive(Debug, Clone, PartialEq)]
pub struct SdrSolution {
    pub g: GramMatrix,
    /// Distance surrogate, `M × K`, meters.
    pub b: DMatrix<f64>,
    pub alpha: Vec<f64>,
    /// `½‖P(B − T′ + Σ α e_m e_kᵀ)‖²_F` at the returned point (m²).
    pub objective: f64,
    pub status: SolverStatus,
    pub iterations: u32,
    pub detail: String,
}

/// Spectral embedding of a relaxed Gram matrix.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Extraction {
    pub points: PointSet,
    /// `Σ_{i>d} λ_i / Σ λ_i` over the clamped spectrum.
    pub tail_mass: f64,
    pub eigenvalues: DVector<f64>,
}

/// Reads `(G, B, α)` and the data term back out of primal values.
pub fn unpack(problem: &SdrProblem, x: &[f64]) -> Result<(GramMatrix, DMatrix<f64>, Vec<f64>, f64)> {
    let layout = problem.layout();
    if x.len() <= layout.epigraph {
        return Err(Error::Solver(format!(
            "solver returned {} values, expected {}",
            x.len(),
            layout.epigraph + 1
        )));
    }
    let n = layout.n;
    let g = DMatrix::from_fn(n, n, |i, j| x[layout.gram(i, j)]);
    let b = DMatrix::from_fn(problem.m, problem.k, |i, j| x[layout.b(i, j)]);
    let alpha: Vec<f64> = (0..layout.num_alpha).map(|a| x[layout.alpha(a)]).collect();

    let mut r = &b - &problem.target;
    for (&(i, j), &a) in problem.missing.iter().zip(&alpha) {
        r[(i, j)] += a;
    }
    project_in_place(&mut r, problem.mode);
    Ok((GramMatrix::new(g, problem.m)?, b, alpha, 0.5 * r.norm_squared()))
}

/// Builds the relaxation, runs the backend and unpacks its answer. Solver
/// failures and infeasibility are reported through
/// [`SdrSolution::status`], never replaced by a fallback.
pub fn solve(problem: &SdrProblem, backend: &mut dyn ConicBackend) -> Result<SdrSolution> {
    let program = problem.build()?;
    let raw = backend.solve(&program)?;
    let (g, b, alpha, objective) = unpack(problem, &raw.x)?;
    Ok(SdrSolution {
        g,
        b,
        alpha,
        objective,
        status: raw.status,
        iterations: raw.iterations,
        detail: raw.detail,
    })
}

pub fn extract_points(solution: &SdrSolution, d: usize) -> Result<Extraction> {
    if !solution.status.has_solution() {
        return Err(Error::NoSolution(format!(
            "relaxation ended with status {:?} ({})",
            solution.status, solution.detail
        )));
    }
    let (points, eigenvalues) = spectral_points(&solution.g, d)?;
    let total: f64 = eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let tail: f64 = eigenvalues.iter().skip(d).map(|v| v.max(0.0)).sum();
    let tail_mass = if total > 0.0 { tail / total } else { 0.0 };
    Ok(Extraction {
        points,
        tail_mass,
        eigenvalues,
    })
}

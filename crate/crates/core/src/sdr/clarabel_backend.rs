//! [`ConicBackend`] backed by the Clarabel interior-point solver.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus as ClStatus,
    SupportedConeT,
};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

use super::conic::{AffineExpr, ConicBackend, ConicProgram, ConicSolution, SolverStatus};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_iterations: u32,
    /// Requested gap/feasibility tolerance.
    pub tolerance: f64,
    /// Tolerance at which a stalled solve is still reported as near-optimal.
    pub reduced_tolerance: f64,
    pub verbose: bool,
}

impl Default for SolverOptions {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            tolerance: 1e-8,
            reduced_tolerance: 1e-6,
            verbose: false,
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct ClarabelBackend {
    pub options: SolverOptions,
}

impl ClarabelBackend {
    pub fn new(options: SolverOptions) -> Self {
        Self { options }
    }

    fn settings(&self) -> Result<DefaultSettings<f64>> {
        let o = &self.options;
        DefaultSettingsBuilder::default()
            .verbose(o.verbose)
            .max_iter(o.max_iterations)
            .tol_gap_abs(o.tolerance)
            .tol_gap_rel(o.tolerance)
            .tol_feas(o.tolerance)
            .reduced_tol_gap_abs(o.reduced_tolerance)
            .reduced_tol_gap_rel(o.reduced_tolerance)
            .reduced_tol_feas(o.reduced_tolerance)
            .max_threads(1)
            .build()
            .map_err(|e| Error::Config(format!("solver settings: {e}")))
    }
}

/// Accumulates rows of `A·x + s = b` for Clarabel.
struct Rows {
    rows: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    b: Vec<f64>,
}

impl Rows {
    /// Adds the row `s = scale·expr` (so `A = −scale·a`, `b = scale·c`).
    fn push(&mut self, expr: &AffineExpr, scale: f64) {
        let r = self.b.len();
        for &(i, c) in &expr.terms {
            self.rows.push(r);
            self.cols.push(i);
            self.vals.push(-scale * c);
        }
        self.b.push(scale * expr.constant);
    }

    /// Adds `s = e1·w1 + e2·w2`.
    fn push_combination(&mut self, parts: &[(&AffineExpr, f64)]) {
        let r = self.b.len();
        let mut constant = 0.0;
        for &(expr, w) in parts {
            for &(i, c) in &expr.terms {
                self.rows.push(r);
                self.cols.push(i);
                self.vals.push(-w * c);
            }
            constant += w * expr.constant;
        }
        self.b.push(constant);
    }
}

impl ConicBackend for ClarabelBackend {
    fn solve(&mut self, program: &ConicProgram) -> Result<ConicSolution> {
        let n = program.num_vars();
        let mut rows = Rows {
            rows: Vec::new(),
            cols: Vec::new(),
            vals: Vec::new(),
            b: Vec::new(),
        };
        let mut cones = Vec::new();

        if !program.equalities.is_empty() {
            for eq in &program.equalities {
                rows.push(&eq.expr, 1.0);
            }
            cones.push(SupportedConeT::ZeroConeT(program.equalities.len()));
        }
        if !program.inequalities.is_empty() {
            for ineq in &program.inequalities {
                rows.push(&ineq.expr, 1.0);
            }
            cones.push(SupportedConeT::NonnegativeConeT(program.inequalities.len()));
        }
        // 2uv ≥ w² ⇔ (u + v, u − v, √2·w) ∈ SOC₃
        for rc in &program.rotated_cones {
            rows.push_combination(&[(&rc.u, 1.0), (&rc.v, 1.0)]);
            rows.push_combination(&[(&rc.u, 1.0), (&rc.v, -1.0)]);
            rows.push(&rc.w, std::f64::consts::SQRT_2);
            cones.push(SupportedConeT::SecondOrderConeT(3));
        }
        for soc in &program.second_order_cones {
            rows.push(&soc.t, 1.0);
            for x in &soc.x {
                rows.push(x, 1.0);
            }
            cones.push(SupportedConeT::SecondOrderConeT(soc.x.len() + 1));
        }
        // Clarabel's PSD triangle is column-major upper triangular with
        // off-diagonal entries scaled by √2.
        let order = program.psd_order;
        if order > 0 {
            for j in 0..order {
                for i in 0..=j {
                    let scale = if i == j { 1.0 } else { std::f64::consts::SQRT_2 };
                    rows.push(&AffineExpr::var(program.psd_index(i, j)), scale);
                }
            }
            cones.push(SupportedConeT::PSDTriangleConeT(order));
        }

        let a = CscMatrix::new_from_triplets(rows.b.len(), n, rows.rows, rows.cols, rows.vals);
        let p = CscMatrix::zeros((n, n));
        let mut q = vec![0.0; n];
        for &(i, c) in &program.objective {
            q[i] += c;
        }

        let mut solver = DefaultSolver::new(&p, &q, &a, &rows.b, &cones, self.settings()?)
            .map_err(|e| Error::Solver(format!("solver setup failed: {e:?}")))?;
        solver.solve();
        let sol = &solver.solution;
        let status = match sol.status {
            ClStatus::Solved => SolverStatus::Optimal,
            ClStatus::AlmostSolved => SolverStatus::NearOptimal,
            ClStatus::PrimalInfeasible | ClStatus::AlmostPrimalInfeasible => {
                SolverStatus::Infeasible
            }
            _ => SolverStatus::Failed,
        };
        Ok(ConicSolution {
            status,
            x: sol.x.clone(),
            iterations: sol.iterations,
            detail: format!("{:?}", sol.status),
        })
    }
}

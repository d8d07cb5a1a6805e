use nalgebra::DMatrix;
use serde::Serialize;

use crate::constraints::{DistanceBound, KnownDistance};
use crate::error::{Error, Result};
use crate::toa::{project_in_place, SyncMode, ToaMatrix};

use super::conic::{
    psd_index, AffineExpr, ConicProgram, LinearConstraint, RotatedCone, SecondOrderCone,
};

/// Inputs of the semidefinite relaxation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SdrProblem {
    pub m: usize,
    pub k: usize,
    pub d: usize,
    /// Speed-scaled arrival times (meters), zero at unobserved entries.
    pub target: DMatrix<f64>,
    pub mode: SyncMode,
    /// Unobserved entries, column-major order.
    pub missing: Vec<(usize, usize)>,
    pub distance_equalities: Vec<KnownDistance>,
    pub distance_bounds: Vec<DistanceBound>,
    /// Weight of `trace(G)` added to the objective; zero gives the plain
    /// relaxation.
    pub trace_weight: f64,
}

/// Variable slots of the emitted program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct VariableLayout {
    pub n: usize,
    pub m: usize,
    pub k: usize,
    pub b_offset: usize,
    pub alpha_offset: usize,
    pub num_alpha: usize,
    pub epigraph: usize,
}

impl VariableLayout {
    pub fn gram(&self, i: usize, j: usize) -> usize {
        psd_index(i, j)
    }

    pub fn b(&self, i: usize, j: usize) -> usize {
        self.b_offset + i + j * self.m
    }

    pub fn alpha(&self, a: usize) -> usize {
        self.alpha_offset + a
    }
}

impl SdrProblem {
    pub fn from_toa(t: &ToaMatrix, d: usize, mode: SyncMode) -> Self {
        Self {
            m: t.m(),
            k: t.k(),
            d,
            target: t.distances(),
            mode,
            missing: t.missing(),
            distance_equalities: Vec::new(),
            distance_bounds: Vec::new(),
            trace_weight: 0.0,
        }
    }

    pub fn n(&self) -> usize {
        self.m + self.k
    }

    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.d) {
            return Err(Error::InvalidProblem(format!(
                "dimension must be 2 or 3, got {}",
                self.d
            )));
        }
        if self.m == 0 || self.k == 0 {
            return Err(Error::InvalidProblem("need at least one receiver and one source".into()));
        }
        if self.n() < self.d + 1 {
            return Err(Error::InvalidProblem(format!(
                "{} points cannot span {} dimensions",
                self.n(),
                self.d
            )));
        }
        if self.target.shape() != (self.m, self.k) {
            return Err(Error::InvalidProblem(format!(
                "target shape {:?} differs from ({}, {})",
                self.target.shape(),
                self.m,
                self.k
            )));
        }
        if self.target.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidProblem("non-finite target entry".into()));
        }
        let mut seen = std::collections::HashSet::new();
        for &(i, j) in &self.missing {
            if i >= self.m || j >= self.k || !seen.insert((i, j)) {
                return Err(Error::InvalidProblem(format!(
                    "missing entry ({i}, {j}) out of range or repeated"
                )));
            }
        }
        for kd in &self.distance_equalities {
            kd.validate(self.n())?;
        }
        for bd in &self.distance_bounds {
            bd.validate(self.n())?;
        }
        if !(self.trace_weight >= 0.0 && self.trace_weight.is_finite()) {
            return Err(Error::InvalidProblem("trace weight must be nonnegative".into()));
        }
        Ok(())
    }

    pub fn layout(&self) -> VariableLayout {
        let n = self.n();
        let b_offset = n * (n + 1) / 2;
        let alpha_offset = b_offset + self.m * self.k;
        VariableLayout {
            n,
            m: self.m,
            k: self.k,
            b_offset,
            alpha_offset,
            num_alpha: self.missing.len(),
            epigraph: alpha_offset + self.missing.len(),
        }
    }

    /// Entry `(i, j)` of `D(G)` as an affine expression.
    fn edm_entry(layout: &VariableLayout, i: usize, j: usize) -> AffineExpr {
        let mut e = AffineExpr::default();
        e.add_term(layout.gram(i, i), 1.0)
            .add_term(layout.gram(j, j), 1.0)
            .add_term(layout.gram(i, j), -2.0);
        e
    }

    /// Coefficient linking `A[p, q]` to `P(A)[i, j]` under the mode's
    /// projection.
    fn projection_coeff(&self, i: usize, j: usize, p: usize, q: usize) -> f64 {
        let row = |a: usize, b: usize, len: usize, center: bool| {
            let delta = if a == b { 1.0 } else { 0.0 };
            if center {
                delta - 1.0 / len as f64
            } else {
                delta
            }
        };
        let (center_cols, center_rows) = match self.mode {
            SyncMode::None => (true, true),
            SyncMode::ReceiversSynced => (true, false),
            SyncMode::SourcesSynced => (false, true),
        };
        row(i, p, self.m, center_cols) * row(q, j, self.k, center_rows)
    }

    /// Emits the relaxation as a conic program:
    ///
    /// * `G ⪰ 0` (order `N`) with `G·1 = 0`;
    /// * `b_mk ≥ 0` and `2·L(G)_mk·½ ≥ b_mk²` for every entry;
    /// * `D(G)_ij = d²` for known distances, `lower² ≤ D(G)_ij ≤ upper²` for bounds;
    /// * `s ≥ ‖vec P(B − T′ + Σ α e_m e_kᵀ)‖`, minimizing `s` (plus the
    ///   optional trace term).
    pub fn build(&self) -> Result<ConicProgram> {
        self.validate()?;
        let layout = self.layout();
        let (m, k, n) = (self.m, self.k, self.n());

        let mut objective = vec![(layout.epigraph, 1.0)];
        if self.trace_weight > 0.0 {
            objective.extend((0..n).map(|i| (layout.gram(i, i), self.trace_weight)));
        }

        let mut equalities = Vec::with_capacity(n + self.distance_equalities.len());
        for i in 0..n {
            let mut e = AffineExpr::default();
            for j in 0..n {
                e.add_term(layout.gram(i, j), 1.0);
            }
            equalities.push(LinearConstraint { expr: e });
        }
        for kd in &self.distance_equalities {
            let mut e = Self::edm_entry(&layout, kd.i, kd.j);
            e.constant = -kd.distance * kd.distance;
            equalities.push(LinearConstraint { expr: e });
        }

        let mut inequalities = Vec::with_capacity(m * k + 2 * self.distance_bounds.len());
        for j in 0..k {
            for i in 0..m {
                inequalities.push(LinearConstraint {
                    expr: AffineExpr::var(layout.b(i, j)),
                });
            }
        }
        for bd in &self.distance_bounds {
            let mut lower = Self::edm_entry(&layout, bd.i, bd.j);
            lower.constant = -bd.lower * bd.lower;
            let mut upper = Self::edm_entry(&layout, bd.i, bd.j);
            for t in upper.terms.iter_mut() {
                t.1 = -t.1;
            }
            upper.constant = bd.upper * bd.upper;
            inequalities.push(LinearConstraint { expr: lower });
            inequalities.push(LinearConstraint { expr: upper });
        }

        let mut rotated_cones = Vec::with_capacity(m * k);
        for j in 0..k {
            for i in 0..m {
                rotated_cones.push(RotatedCone {
                    u: Self::edm_entry(&layout, i, m + j),
                    v: AffineExpr::constant(0.5),
                    w: AffineExpr::var(layout.b(i, j)),
                });
            }
        }
        let mut projected_target = self.target.clone();
        project_in_place(&mut projected_target, self.mode);
        let mut residual = Vec::with_capacity(m * k);
        for j in 0..k {
            for i in 0..m {
                let mut e = AffineExpr::constant(-projected_target[(i, j)]);
                for q in 0..k {
                    for p in 0..m {
                        let c = self.projection_coeff(i, j, p, q);
                        e.add_term(layout.b(p, q), c);
                    }
                }
                for (a, &(p, q)) in self.missing.iter().enumerate() {
                    e.add_term(layout.alpha(a), self.projection_coeff(i, j, p, q));
                }
                residual.push(e);
            }
        }

        Ok(ConicProgram {
            psd_order: n,
            num_scalars: m * k + self.missing.len() + 1,
            objective,
            equalities,
            inequalities,
            rotated_cones,
            second_order_cones: vec![SecondOrderCone {
                t: AffineExpr::var(layout.epigraph),
                x: residual,
            }],
        })
    }
}

//! Levenberg–Marquardt on a generic least-squares problem.
//!
//! Each iteration solves `(JᵀJ + λI)·δ = −Jᵀf` by Cholesky factorization.
//! A step is kept only if it strictly lowers `½‖f‖²`; otherwise `λ` grows
//! and the step is recomputed from the same linearization.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Damping above which no further progress is considered possible.
const MAX_DAMPING: f64 = 1e16;
const MIN_DAMPING: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LmConfig {
    pub max_iterations: usize,
    pub initial_damping: f64,
    pub damping_increase: f64,
    pub damping_decrease: f64,
    /// Stop when `‖Jᵀf‖_∞` falls below this.
    pub gradient_tolerance: f64,
    /// Stop when an accepted step lowers the loss by less than this fraction.
    pub relative_loss_tolerance: f64,
    /// Receiver–source distance (m) below which the pair's direction is zeroed.
    pub distance_floor: f64,
}

impl Default for LmConfig {
    fn default() -> Self {
        Self {
            max_iterations: 1000,
            initial_damping: 1e-2,
            damping_increase: 10.0,
            damping_decrease: 10.0,
            gradient_tolerance: 1e-10,
            relative_loss_tolerance: 1e-12,
            distance_floor: 1e-9,
        }
    }
}

impl LmConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.initial_damping,
            self.damping_increase,
            self.damping_decrease,
            self.gradient_tolerance,
            self.relative_loss_tolerance,
            self.distance_floor,
        ];
        if self.max_iterations == 0 || positive.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config(
                "LM settings must be positive and allow at least one iteration".into(),
            ));
        }
        if self.damping_increase <= 1.0 || self.damping_decrease <= 1.0 {
            return Err(Error::Config(
                "LM damping factors must be greater than one".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    GradientTolerance,
    RelativeLossTolerance,
    /// Damping hit its ceiling without finding a decreasing step.
    Stalled,
    MaxIterations,
    /// Equality constraints met (outer augmented-Lagrangian loop).
    ConstraintTolerance,
    /// Outer augmented-Lagrangian budget exhausted.
    OuterBudget,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RefineReport {
    /// LM iterations (Jacobian evaluations), summed over outer iterations.
    pub iterations: usize,
    pub outer_iterations: usize,
    /// `½‖f‖²` of the timing-invariant residual at the returned point (m²).
    pub final_loss: f64,
    pub final_gradient_norm: f64,
    /// Loss after each accepted step, starting with the initial loss.
    pub loss_trace: Vec<f64>,
    /// Damping used for every accepted step.
    pub damping_trace: Vec<f64>,
    /// `‖g‖_∞` after each outer iteration; empty when unconstrained.
    pub constraint_residual_trace: Vec<f64>,
    /// Largest number of near-coincident receiver–source pairs seen.
    pub degenerate_pairs: usize,
    pub converged: bool,
    pub termination: Termination,
}

/// A residual function with an analytic Jacobian.
pub trait LeastSquaresProblem {
    fn param_len(&self) -> usize;
    fn residual(&self, theta: &DVector<f64>) -> DVector<f64>;
    /// Jacobian plus a count of points where it had to be regularized.
    fn jacobian(&self, theta: &DVector<f64>) -> (DMatrix<f64>, usize);
}

fn half_norm_sq(f: &DVector<f64>) -> f64 {
    0.5 * f.norm_squared()
}

pub fn levenberg_marquardt<P: LeastSquaresProblem + ?Sized>(
    problem: &P,
    theta0: &DVector<f64>,
    config: &LmConfig,
) -> Result<(DVector<f64>, RefineReport)> {
    config.validate()?;
    if theta0.len() != problem.param_len() {
        return Err(Error::InvalidInput(format!(
            "initial point has length {}, expected {}",
            theta0.len(),
            problem.param_len()
        )));
    }
    if theta0.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("initial point".into()));
    }

    let mut theta = theta0.clone();
    let mut f = problem.residual(&theta);
    let mut loss = half_norm_sq(&f);
    if !loss.is_finite() {
        return Err(Error::NonFinite("loss at initial point".into()));
    }

    let mut lambda = config.initial_damping;
    let mut loss_trace = vec![loss];
    let mut damping_trace = Vec::new();
    let mut degenerate_pairs = 0;
    let mut gradient_norm = f64::INFINITY;
    let mut termination = Termination::MaxIterations;
    let mut iterations = 0;

    'outer: while iterations < config.max_iterations {
        let (jac, degenerate) = problem.jacobian(&theta);
        degenerate_pairs = degenerate_pairs.max(degenerate);
        let grad = jac.tr_mul(&f);
        gradient_norm = grad.amax();
        if !gradient_norm.is_finite() {
            return Err(Error::NonFinite(format!("gradient at iteration {iterations}")));
        }
        if gradient_norm < config.gradient_tolerance || loss == 0.0 {
            termination = Termination::GradientTolerance;
            break;
        }
        iterations += 1;
        let normal = jac.tr_mul(&jac);

        loop {
            let mut damped = normal.clone();
            for i in 0..damped.nrows() {
                damped[(i, i)] += lambda;
            }
            let Some(chol) = damped.cholesky() else {
                lambda *= config.damping_increase;
                if lambda > MAX_DAMPING {
                    termination = Termination::Stalled;
                    break 'outer;
                }
                continue;
            };
            let step = chol.solve(&(-&grad));
            let candidate = &theta + &step;
            let f_new = problem.residual(&candidate);
            let loss_new = half_norm_sq(&f_new);
            if !loss_new.is_finite() {
                return Err(Error::NonFinite(format!(
                    "loss after step at iteration {iterations}"
                )));
            }
            if loss_new < loss {
                let relative = (loss - loss_new) / loss;
                theta = candidate;
                f = f_new;
                loss = loss_new;
                damping_trace.push(lambda);
                loss_trace.push(loss);
                lambda = (lambda / config.damping_decrease).max(MIN_DAMPING);
                if relative < config.relative_loss_tolerance {
                    termination = Termination::RelativeLossTolerance;
                    break 'outer;
                }
                break;
            }
            lambda *= config.damping_increase;
            if lambda > MAX_DAMPING {
                termination = Termination::Stalled;
                break 'outer;
            }
        }
    }

    if termination != Termination::GradientTolerance {
        let (jac, _) = problem.jacobian(&theta);
        gradient_norm = jac.tr_mul(&f).amax();
    }
    let converged = termination != Termination::MaxIterations;
    Ok((
        theta,
        RefineReport {
            iterations,
            outer_iterations: 0,
            final_loss: loss,
            final_gradient_norm: gradient_norm,
            loss_trace,
            damping_trace,
            constraint_residual_trace: Vec::new(),
            degenerate_pairs,
            converged,
            termination,
        },
    ))
}

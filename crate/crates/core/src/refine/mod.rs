//! Local refinement of positions on the timing-invariant loss.

mod auglag;
mod lm;
mod residual;

use nalgebra::{DMatrix, DVector};

pub use auglag::AugLagConfig;
pub use lm::{levenberg_marquardt, LeastSquaresProblem, LmConfig, RefineReport, Termination};
pub use residual::{jacobian, residual, TimingInvariantResidual, DEFAULT_DISTANCE_FLOOR};

use crate::constraints::KnownDistance;
use crate::error::{Error, Result};
use crate::toa::{SyncMode, ToaMatrix};

use auglag::{AugmentedProblem, DistanceConstraints};

/// Unconstrained LM refinement of `θ = [vec R; vec S; α]`.
pub fn lm_minimize(
    theta0: &DVector<f64>,
    t: &ToaMatrix,
    d: usize,
    mode: SyncMode,
    config: &LmConfig,
) -> Result<(DVector<f64>, RefineReport)> {
    let problem = TimingInvariantResidual::new(t, d, mode)?.with_distance_floor(config.distance_floor);
    levenberg_marquardt(&problem, theta0, config)
}

/// LM refinement subject to known inter-point distances, by the method of
/// multipliers: inner LM on `‖f‖² + μ‖g + z/(2μ)‖²`, then `z ← z + 2μ·g`
/// and `μ ← min(growth·μ, max)`.
pub fn lm_minimize_constrained(
    theta0: &DVector<f64>,
    t: &ToaMatrix,
    d: usize,
    mode: SyncMode,
    equalities: &[KnownDistance],
    lm: &LmConfig,
    al: &AugLagConfig,
) -> Result<(DVector<f64>, RefineReport)> {
    if equalities.is_empty() {
        return Err(Error::InvalidInput(
            "constrained refinement needs at least one known distance".into(),
        ));
    }
    al.validate()?;
    let base = TimingInvariantResidual::new(t, d, mode)?.with_distance_floor(lm.distance_floor);
    let n = t.m() + t.k();
    for kd in equalities {
        kd.validate(n)?;
    }
    let constraints = || DistanceConstraints {
        known: equalities,
        d,
        param_len: base.param_len(),
    };

    let mut theta = theta0.clone();
    let mut penalty = al.initial_penalty;
    let mut multipliers = DVector::zeros(equalities.len());
    let mut iterations = 0;
    let mut loss_trace = Vec::new();
    let mut damping_trace = Vec::new();
    let mut constraint_trace = Vec::new();
    let mut degenerate_pairs = 0;
    let mut termination = lm::Termination::OuterBudget;
    let mut outer = 0;

    while outer < al.outer_iterations {
        outer += 1;
        let problem = AugmentedProblem {
            base: &base,
            constraints: constraints(),
            penalty,
            multipliers: multipliers.clone(),
        };
        let (next, inner) = levenberg_marquardt(&problem, &theta, lm)?;
        theta = next;
        iterations += inner.iterations;
        degenerate_pairs = degenerate_pairs.max(inner.degenerate_pairs);
        damping_trace.extend(inner.damping_trace);
        loss_trace.push(base.loss(&theta));

        let g = constraints().values(&theta);
        let violation = g.amax();
        constraint_trace.push(violation);
        if violation < al.constraint_tolerance {
            termination = lm::Termination::ConstraintTolerance;
            break;
        }
        multipliers += &g * (2.0 * penalty);
        penalty = (penalty * al.penalty_growth).min(al.max_penalty);
    }

    let (jac, _) = base.jacobian_with_diagnostics(&theta);
    let f = LeastSquaresProblem::residual(&base, &theta);
    let gc = constraints();
    let grad = jac.tr_mul(&f) + gc.jacobian(&theta).tr_mul(&multipliers) * 0.5;
    Ok((
        theta.clone(),
        RefineReport {
            iterations,
            outer_iterations: outer,
            final_loss: base.loss(&theta),
            final_gradient_norm: grad.amax(),
            loss_trace,
            damping_trace,
            constraint_residual_trace: constraint_trace,
            degenerate_pairs,
            converged: termination == lm::Termination::ConstraintTolerance,
            termination,
        },
    ))
}

/// Jacobian of the known-distance residuals `g(θ)` with respect to `θ`.
pub fn distance_jacobian(theta: &DVector<f64>, d: usize, equalities: &[KnownDistance]) -> DMatrix<f64> {
    DistanceConstraints {
        known: equalities,
        d,
        param_len: theta.len(),
    }
    .jacobian(theta)
}

/// Known-distance residuals `g(θ)`, in m².
pub fn distance_values(theta: &DVector<f64>, d: usize, equalities: &[KnownDistance]) -> DVector<f64> {
    DistanceConstraints {
        known: equalities,
        d,
        param_len: theta.len(),
    }
    .values(theta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::distance_residuals;
    use crate::geometry::PointSet;
    use crate::scenario::{generate, ScenarioConfig, SubarraySpec};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn perturbed(x: &PointSet, scale: f64, seed: u64) -> DVector<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DVector::from_iterator(
            x.coords().len(),
            x.coords().iter().map(|v| v + scale * rng.random_range(-1.0..1.0)),
        )
    }

    #[test]
    fn residual_vanishes_at_truth() {
        let inst = generate(&ScenarioConfig {
            m: 6,
            k: 7,
            missing_fraction: 0.1,
            seed: 2,
            ..Default::default()
        })
        .unwrap();
        let problem = TimingInvariantResidual::new(&inst.toa, 3, SyncMode::None).unwrap();
        // unobserved entries are zero in the target, so α carries −v·T there
        let full = crate::toa::forward_toa(&inst.truth, &inst.timing, inst.toa.speed()).unwrap();
        let alpha: Vec<f64> = problem
            .missing()
            .iter()
            .map(|&(i, j)| -full.distances()[(i, j)])
            .collect();
        let theta = problem.pack(&inst.truth, &alpha);
        assert!(problem.loss(&theta) < 1e-20);
        assert_eq!(problem.points(&theta).unwrap(), inst.truth);
        assert_eq!(problem.alpha(&theta), &alpha[..]);
    }

    #[test]
    fn unconstrained_refinement_recovers_nearby_truth() {
        let inst = generate(&ScenarioConfig {
            m: 10,
            k: 10,
            seed: 9,
            ..Default::default()
        })
        .unwrap();
        let start = perturbed(&inst.truth, 0.05, 1);
        let (theta, report) = lm_minimize(&start, &inst.toa, 3, SyncMode::None, &LmConfig::default()).unwrap();
        assert!(report.final_loss < 1e-18, "{}", report.final_loss);
        let x = PointSet::from_vector(theta.as_slice(), 3, 10, 10).unwrap();
        let e = crate::evaluation::procrustes_align(&x, &inst.truth).unwrap().e_rs;
        assert!(e < 1e-6, "{e}");
    }

    #[test]
    fn constrained_refinement_meets_equalities() {
        let inst = generate(&ScenarioConfig {
            m: 10,
            k: 10,
            seed: 3,
            subarrays: vec![SubarraySpec::square(0.5, 3)],
            ..Default::default()
        })
        .unwrap();
        let start = perturbed(&inst.truth, 0.05, 2);
        let (theta, report) = lm_minimize_constrained(
            &start,
            &inst.toa,
            3,
            SyncMode::None,
            &inst.known_distances,
            &LmConfig::default(),
            &AugLagConfig::default(),
        )
        .unwrap();
        let x = PointSet::from_vector(theta.as_slice(), 3, 10, 10).unwrap();
        assert!(distance_residuals(&x, &inst.known_distances).amax() < 1e-8);
        assert!(report.converged);
        assert_eq!(report.termination, Termination::ConstraintTolerance);
        assert_eq!(report.constraint_residual_trace.len(), report.outer_iterations);
        assert!(report.final_loss < 1e-12);
    }

    #[test]
    fn constrained_refinement_needs_constraints() {
        let inst = generate(&ScenarioConfig::default()).unwrap();
        let start = DVector::from_column_slice(inst.truth.coords().as_slice());
        let run = |known: &[KnownDistance]| {
            lm_minimize_constrained(
                &start,
                &inst.toa,
                3,
                SyncMode::None,
                known,
                &LmConfig::default(),
                &AugLagConfig::default(),
            )
        };
        assert!(matches!(run(&[]), Err(Error::InvalidInput(_))));
        let out_of_range = [KnownDistance { i: 0, j: 99, distance: 1.0 }];
        assert!(matches!(run(&out_of_range), Err(Error::InvalidProblem(_))));
    }
}

//! End-to-end localization: relaxation, spectral initialization, LM
//! refinement (constrained when distances are known) and timing recovery.

use std::time::Instant;

use nalgebra::DVector;
use serde::{Deserialize, Serialize};

use crate::constraints::{DistanceBound, KnownDistance};
use crate::dof::{self, DofReport};
use crate::error::{Error, Result};
use crate::geometry::{cross_distances, PointSet};
use crate::refine::{
    lm_minimize, lm_minimize_constrained, AugLagConfig, LmConfig, RefineReport,
    TimingInvariantResidual,
};
use crate::sdr::{self, ConicBackend, SdrProblem, SolverOptions, SolverStatus};
use crate::timing::{recover_timing, TimingEstimate};
use crate::toa::{constant_offset_reduce, SyncMode, ToaMatrix};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LocalizeOptions {
    pub d: usize,
    pub mode: SyncMode,
    pub lm: LmConfig,
    pub al: AugLagConfig,
    pub solver: SolverOptions,
    pub known_distances: Vec<KnownDistance>,
    pub distance_bounds: Vec<DistanceBound>,
    /// Known per-source emission delays (s); switches to the reduced
    /// receivers-only problem.
    pub constant_offset: Option<Vec<f64>>,
    /// Weight of `trace(G)` in the relaxation objective.
    pub trace_weight: f64,
}

impl Default for LocalizeOptions {
    fn default() -> Self {
        Self {
            d: 3,
            mode: SyncMode::None,
            lm: LmConfig::default(),
            al: AugLagConfig::default(),
            solver: SolverOptions::default(),
            known_distances: Vec::new(),
            distance_bounds: Vec::new(),
            constant_offset: None,
            trace_weight: DEFAULT_TRACE_WEIGHT,
        }
    }
}

pub const DEFAULT_TRACE_WEIGHT: f64 = 0.0;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct StageSeconds {
    pub relaxation: f64,
    pub refinement: f64,
    pub timing: f64,
    pub total: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Localization {
    pub points: PointSet,
    /// Spectral initialization taken from the relaxation.
    pub initial_points: PointSet,
    pub alpha: Vec<f64>,
    pub timing: Option<TimingEstimate>,
    /// Mode the problem was actually solved in (after constant-offset
    /// reduction).
    pub mode: SyncMode,
    pub sdr_status: SolverStatus,
    pub sdr_objective: f64,
    pub sdr_iterations: u32,
    pub tail_mass: f64,
    pub final_loss: f64,
    pub report: RefineReport,
    pub dof: DofReport,
    pub warnings: Vec<String>,
    pub seconds: StageSeconds,
}

pub fn localize(
    toa: &ToaMatrix,
    options: &LocalizeOptions,
    backend: &mut dyn ConicBackend,
) -> Result<Localization> {
    let start = Instant::now();
    let d = options.d;
    let mut warnings = Vec::new();

    let (toa, mode) = match &options.constant_offset {
        Some(delays) => (
            constant_offset_reduce(toa, &DVector::from_column_slice(delays))?,
            SyncMode::SourcesSynced,
        ),
        None => (toa.clone(), options.mode),
    };

    let dof = dof::report(toa.m(), toa.k(), d, mode);
    if !dof.feasible {
        warnings.push(format!(
            "{} measurements for {} degrees of freedom: the solution set is not dimension-zero",
            dof.measurements, dof.dof
        ));
    }

    let mut problem = SdrProblem::from_toa(&toa, d, mode);
    problem.distance_equalities = options.known_distances.clone();
    problem.distance_bounds = options.distance_bounds.clone();
    problem.trace_weight = options.trace_weight;
    let solution = sdr::solve(&problem, backend)?;
    if !solution.status.has_solution() {
        return Err(Error::Solver(format!(
            "relaxation ended with status {:?} ({})",
            solution.status, solution.detail
        )));
    }
    if solution.status == SolverStatus::NearOptimal {
        warnings.push("relaxation solved to reduced accuracy".into());
    }
    let extraction = sdr::extract_points(&solution, d)?;
    let relaxation_done = Instant::now();

    let residual = TimingInvariantResidual::new(&toa, d, mode)?;
    let theta0 = residual.pack(&extraction.points, &solution.alpha);
    let (theta, report) = if options.known_distances.is_empty() {
        lm_minimize(&theta0, &toa, d, mode, &options.lm)?
    } else {
        lm_minimize_constrained(
            &theta0,
            &toa,
            d,
            mode,
            &options.known_distances,
            &options.lm,
            &options.al,
        )?
    };
    if report.degenerate_pairs > 0 {
        warnings.push(format!(
            "{} receiver-source pairs closer than the distance floor",
            report.degenerate_pairs
        ));
    }
    let points = residual.points(&theta)?;
    let alpha = residual.alpha(&theta).to_vec();
    let refine_done = Instant::now();

    let timing = match recover_timing(&cross_distances(&points), &toa) {
        Ok(mut est) => {
            if let Some(delays) = &options.constant_offset {
                for (tau, delay) in est.tau.iter_mut().zip(delays) {
                    *tau += delay;
                }
            }
            Some(est)
        }
        Err(e) => {
            warnings.push(format!("timing recovery skipped: {e}"));
            None
        }
    };
    let end = Instant::now();

    Ok(Localization {
        final_loss: report.final_loss,
        points,
        initial_points: extraction.points,
        alpha,
        timing,
        mode,
        sdr_status: solution.status,
        sdr_objective: solution.objective,
        sdr_iterations: solution.iterations,
        tail_mass: extraction.tail_mass,
        report,
        dof,
        warnings,
        seconds: StageSeconds {
            relaxation: (relaxation_done - start).as_secs_f64(),
            refinement: (refine_done - relaxation_done).as_secs_f64(),
            timing: (end - refine_done).as_secs_f64(),
            total: (end - start).as_secs_f64(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evaluation::procrustes_align;
    use crate::scenario::{generate, ScenarioConfig};
    use crate::sdr::{ClarabelBackend, ConicProgram, ConicSolution};

    struct Refusing(SolverStatus);

    impl ConicBackend for Refusing {
        fn solve(&mut self, program: &ConicProgram) -> Result<ConicSolution> {
            Ok(ConicSolution {
                status: self.0,
                x: vec![0.0; program.num_vars()],
                iterations: 0,
                detail: "stub".into(),
            })
        }
    }

    #[test]
    fn noiseless_instance_is_recovered() {
        let inst = generate(&ScenarioConfig {
            m: 12,
            k: 12,
            seed: 1,
            ..Default::default()
        })
        .unwrap();
        let r = localize(&inst.toa, &LocalizeOptions::default(), &mut ClarabelBackend::default()).unwrap();
        let aligned = procrustes_align(&r.points, &inst.truth).unwrap();
        assert!(aligned.e_rs < 1e-6, "{}", aligned.e_rs);
        assert!(r.final_loss < 1e-18);
        assert!(r.dof.feasible && r.warnings.is_empty());
        assert_eq!(r.sdr_status, SolverStatus::Optimal);
        let timing = r.timing.unwrap();
        assert_eq!((timing.sigma.len(), timing.tau.len()), (12, 12));
        assert!(r.seconds.total >= r.seconds.relaxation);
    }

    #[test]
    fn solver_failure_is_an_error() {
        let inst = generate(&ScenarioConfig::default()).unwrap();
        for status in [SolverStatus::Failed, SolverStatus::Infeasible] {
            let out = localize(&inst.toa, &LocalizeOptions::default(), &mut Refusing(status));
            assert!(matches!(out, Err(Error::Solver(_))));
        }
    }

    #[test]
    fn underdetermined_size_warns() {
        let inst = generate(&ScenarioConfig {
            m: 4,
            k: 4,
            ..Default::default()
        })
        .unwrap();
        let r = localize(&inst.toa, &LocalizeOptions::default(), &mut ClarabelBackend::default()).unwrap();
        assert!(!r.dof.feasible);
        assert!(r.warnings.iter().any(|w| w.contains("degrees of freedom")));
    }

    #[test]
    fn known_delays_switch_to_sources_synced() {
        let inst = generate(&ScenarioConfig {
            m: 10,
            k: 10,
            seed: 5,
            ..Default::default()
        })
        .unwrap();
        let delays: Vec<f64> = inst.timing.tau.iter().copied().collect();
        let options = LocalizeOptions {
            constant_offset: Some(delays.clone()),
            ..Default::default()
        };
        let r = localize(&inst.toa, &options, &mut ClarabelBackend::default()).unwrap();
        assert_eq!(r.mode, SyncMode::SourcesSynced);
        let short = LocalizeOptions {
            constant_offset: Some(delays[..3].to_vec()),
            ..Default::default()
        };
        assert!(localize(&inst.toa, &short, &mut ClarabelBackend::default()).is_err());
    }
}

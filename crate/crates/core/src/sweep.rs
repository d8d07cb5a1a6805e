//! Monte Carlo sweeps over array size and noise level.
//!
//! Trial `t` of every cell uses scenario seed `seed + t`, so all noise levels
//! of a given size see the same geometries and timings. Trials run on a
//! rayon pool and are collected by index, which keeps every output
//! independent of the worker count.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{procrustes_align, sweep_statistics, SweepSummary, CLIP_FLOOR};
use crate::pipeline::{localize, LocalizeOptions};
use crate::scenario::{generate, ScenarioConfig};
use crate::sdr::ClarabelBackend;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Array sizes; each runs with `M = K`.
    pub sizes: Vec<usize>,
    /// TOA noise standard deviations (s).
    pub noise_levels: Vec<f64>,
    pub trials: usize,
    pub seed: u64,
    /// Template for every trial; `m`, `k`, `noise_sigma` and `seed` are
    /// overwritten per trial.
    pub scenario: ScenarioConfig,
    pub options: LocalizeOptions,
    pub clip_floor: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        Self {
            sizes: (7..=12).collect(),
            noise_levels: vec![0.0, 1e-6, 1e-5, 1e-4, 1e-3],
            trials: 20,
            seed: 0,
            scenario: ScenarioConfig::default(),
            options: LocalizeOptions::default(),
            clip_floor: CLIP_FLOOR,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.noise_levels.is_empty() || self.trials == 0 {
            return Err(Error::Config("sweep needs at least one size, noise level and trial".into()));
        }
        if self.noise_levels.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(Error::Config("noise levels must be nonnegative".into()));
        }
        if !(self.clip_floor >= 0.0) {
            return Err(Error::Config("clip floor must be nonnegative".into()));
        }
        if self.options.d != self.scenario.d {
            return Err(Error::Config(format!(
                "solver dimension {} differs from scenario dimension {}",
                self.options.d, self.scenario.d
            )));
        }
        for &m in &self.sizes {
            self.trial_scenario(m, 0.0, 0).validate()?;
        }
        Ok(())
    }

    fn trial_scenario(&self, size: usize, noise: f64, trial: usize) -> ScenarioConfig {
        ScenarioConfig {
            m: size,
            k: size,
            noise_sigma: noise,
            seed: self.seed.wrapping_add(trial as u64),
            ..self.scenario.clone()
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrialRecord {
    pub size: usize,
    pub noise: f64,
    pub trial: usize,
    pub seed: u64,
    pub e_rs: Option<f64>,
    pub e_r: Option<f64>,
    pub final_loss: Option<f64>,
    pub iterations: Option<usize>,
    /// Error message of a failed trial.
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CellSummary {
    pub size: usize,
    pub noise: f64,
    pub trials: usize,
    pub failures: usize,
    /// Statistics of `E_rs` over successful trials.
    pub e_rs: Option<SweepSummary>,
    pub e_r: Option<SweepSummary>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepResult {
    pub records: Vec<TrialRecord>,
    pub cells: Vec<CellSummary>,
}

pub fn run_trial(config: &SweepConfig, size: usize, noise: f64, trial: usize) -> TrialRecord {
    let scenario = config.trial_scenario(size, noise, trial);
    let mut record = TrialRecord {
        size,
        noise,
        trial,
        seed: scenario.seed,
        e_rs: None,
        e_r: None,
        final_loss: None,
        iterations: None,
        failure: None,
    };
    let outcome = (|| -> Result<_> {
        let instance = generate(&scenario)?;
        let mut options = config.options.clone();
        if options.known_distances.is_empty() {
            options.known_distances = instance.known_distances.clone();
        }
        let mut backend = ClarabelBackend::new(options.solver.clone());
        let result = localize(&instance.toa, &options, &mut backend)?;
        let aligned = procrustes_align(&result.points, &instance.truth)?;
        Ok((result, aligned))
    })();
    match outcome {
        Ok((result, aligned)) => {
            record.e_rs = Some(aligned.e_rs);
            record.e_r = Some(aligned.e_r);
            record.final_loss = Some(result.final_loss);
            record.iterations = Some(result.report.iterations);
        }
        Err(e) => record.failure = Some(e.to_string()),
    }
    record
}

/// Runs the whole grid with `workers` threads (`1` runs serially on the
/// calling thread).
pub fn run_sweep(config: &SweepConfig, workers: usize) -> Result<SweepResult> {
    config.validate()?;
    let mut jobs = Vec::new();
    for &size in &config.sizes {
        for &noise in &config.noise_levels {
            for trial in 0..config.trials {
                jobs.push((size, noise, trial));
            }
        }
    }
    let run = |&(size, noise, trial): &(usize, f64, usize)| run_trial(config, size, noise, trial);
    let records: Vec<TrialRecord> = if workers <= 1 {
        jobs.iter().map(run).collect()
    } else {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build()
            .map_err(|e| Error::Config(format!("worker pool: {e}")))?;
        pool.install(|| jobs.par_iter().map(run).collect())
    };

    let mut cells = Vec::new();
    for &size in &config.sizes {
        for &noise in &config.noise_levels {
            let cell: Vec<&TrialRecord> = records
                .iter()
                .filter(|r| r.size == size && r.noise == noise)
                .collect();
            let e_rs: Vec<f64> = cell.iter().filter_map(|r| r.e_rs).collect();
            let e_r: Vec<f64> = cell.iter().filter_map(|r| r.e_r).collect();
            let stats = |v: &[f64]| {
                if v.is_empty() {
                    Ok(None)
                } else {
                    sweep_statistics(v, config.clip_floor).map(Some)
                }
            };
            cells.push(CellSummary {
                size,
                noise,
                trials: cell.len(),
                failures: cell.iter().filter(|r| r.failure.is_some()).count(),
                e_rs: stats(&e_rs)?,
                e_r: stats(&e_r)?,
            });
        }
    }
    Ok(SweepResult { records, cells })
}

fn num(v: f64) -> String {
    format!("{v:e}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

/// One row per cell. Outliers are `;`-separated.
pub fn write_summary_csv<W: Write>(out: W, cells: &[CellSummary]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "m", "k", "noise_sigma", "trials", "failures", "median", "q1", "q3", "whisker_low",
        "whisker_high", "ci_low", "ci_high", "ci_degenerate", "outliers", "median_e_r",
    ])
    .map_err(csv_err)?;
    for c in cells {
        let s = c.e_rs.as_ref();
        let field = |f: fn(&SweepSummary) -> f64| s.map(|s| num(f(s))).unwrap_or_default();
        w.write_record([
            c.size.to_string(),
            c.size.to_string(),
            num(c.noise),
            c.trials.to_string(),
            c.failures.to_string(),
            field(|s| s.median),
            field(|s| s.q1),
            field(|s| s.q3),
            field(|s| s.whisker_low),
            field(|s| s.whisker_high),
            field(|s| s.ci_low),
            field(|s| s.ci_high),
            s.map(|s| s.ci_degenerate.to_string()).unwrap_or_default(),
            s.map(|s| s.outliers.iter().map(|&v| num(v)).collect::<Vec<_>>().join(";"))
                .unwrap_or_default(),
            c.e_r.as_ref().map(|s| num(s.median)).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// One row per trial, unclipped.
pub fn write_trials_csv<W: Write>(out: W, records: &[TrialRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "m", "k", "noise_sigma", "trial", "seed", "e_rs", "e_r", "final_loss", "iterations", "failure",
    ])
    .map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.size.to_string(),
            r.size.to_string(),
            num(r.noise),
            r.trial.to_string(),
            r.seed.to_string(),
            opt(r.e_rs),
            opt(r.e_r),
            opt(r.final_loss),
            r.iterations.map(|i| i.to_string()).unwrap_or_default(),
            r.failure.clone().unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e.to_string()))
}

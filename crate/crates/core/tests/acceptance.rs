//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each
//! and exits non-zero if any fails.
//!
//! Run alone with `cargo test -p arraycalib --test acceptance`.

use std::time::Instant;

use arraycalib::constraints::KnownDistance;
use arraycalib::dof::{degrees_of_freedom, min_sources};
use arraycalib::evaluation::{procrustes_align, sweep_statistics, CLIP_FLOOR};
use arraycalib::geometry::{cross_distances, PointSet};
use arraycalib::pipeline::{localize, Localization, LocalizeOptions};
use arraycalib::refine::{distance_jacobian, distance_values, jacobian, residual, TimingInvariantResidual};
use arraycalib::scenario::{generate, Instance, ScenarioConfig, SubarraySpec};
use arraycalib::sdr::ClarabelBackend;
use arraycalib::sweep::{run_sweep, write_summary_csv, write_trials_csv, SweepConfig};
use arraycalib::timing::recover_timing;
use arraycalib::toa::{loss, timing_invariant_projection};
use arraycalib::{SyncMode, ToaMatrix};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Trial {
    result: Option<Localization>,
    e_rs: f64,
    seconds: f64,
}

fn run_trials(configs: Vec<ScenarioConfig>, options: &LocalizeOptions) -> Vec<Trial> {
    configs
        .into_par_iter()
        .map(|cfg| {
            let instance = generate(&cfg).expect("scenario generation");
            let start = Instant::now();
            let mut backend = ClarabelBackend::new(options.solver.clone());
            let result = localize(&instance.toa, options, &mut backend).ok();
            let seconds = start.elapsed().as_secs_f64();
            let e_rs = result
                .as_ref()
                .map(|r| procrustes_align(&r.points, &instance.truth).unwrap().e_rs)
                .unwrap_or(f64::INFINITY);
            Trial {
                result,
                e_rs,
                seconds,
            }
        })
        .collect()
}

fn seeds(base: &ScenarioConfig, n: u64) -> Vec<ScenarioConfig> {
    (0..n)
        .map(|seed| ScenarioConfig {
            seed,
            ..base.clone()
        })
        .collect()
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn errors(trials: &[Trial]) -> Vec<f64> {
    trials.iter().map(|t| t.e_rs).collect()
}

fn timing_invariance() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let m = rng.random_range(2..=15);
        let k = rng.random_range(2..=15);
        let t = DMatrix::from_fn(m, k, |_, _| rng.random_range(0.0..1.0));
        let sigma = DVector::from_fn(m, |_, _| rng.random_range(-1.0..1.0));
        let tau = DVector::from_fn(k, |_, _| rng.random_range(-1.0..1.0));
        let shifted = DMatrix::from_fn(m, k, |i, j| t[(i, j)] + sigma[i] + tau[j]);
        let base = timing_invariant_projection(&t, SyncMode::None);
        let moved = timing_invariant_projection(&shifted, SyncMode::None);
        worst = worst.max((moved - &base).norm() / base.norm());
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        worst < 1e-13 && secs < 5.0,
        format!("max relative change {worst:.2e} (< 1e-13), {secs:.2} s (< 5 s)"),
    )
}

/// `min_{σ,τ} ½‖Δ + σ1ᵀ + 1τᵀ − T‖²` by a dense least-squares solve. The
/// first receiver offset is pinned to zero, which removes the one gauge
/// direction and leaves a full-rank system.
fn ml_oracle(delta: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
    let (m, k) = delta.shape();
    let mut a = DMatrix::zeros(m * k, m + k - 1);
    let mut b = DVector::zeros(m * k);
    for j in 0..k {
        for i in 0..m {
            let row = j * m + i;
            if i > 0 {
                a[(row, i - 1)] = 1.0;
            }
            a[(row, m - 1 + j)] = 1.0;
            b[row] = t[(i, j)] - delta[(i, j)];
        }
    }
    let normal = a.transpose() * &a;
    let x = normal.cholesky().expect("gauge-fixed system has full rank").solve(&(a.transpose() * &b));
    0.5 * (a * x - b).norm_squared()
}

fn ml_equivalence() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let d = rng.random_range(2..=3);
        let m = rng.random_range(2..=10);
        let k = rng.random_range(2..=10);
        let x = PointSet::new(DMatrix::from_fn(d, m + k, |_, _| rng.random_range(0.0..10.0)), m).unwrap();
        let delta = cross_distances(&x).0;
        let t = DMatrix::from_fn(m, k, |_, _| rng.random_range(0.0..20.0));
        let toa = ToaMatrix::new(t.clone(), 1.0).unwrap();
        let ours = loss(&x, &toa, SyncMode::None, &[]).unwrap();
        let oracle = ml_oracle(&delta, &t);
        worst = worst.max((ours - oracle).abs() / oracle);
    }
    outcome(worst < 1e-10, format!("max relative gap {worst:.2e} (< 1e-10)"))
}

/// Entrywise `|a − f| / max(|f|, 1e-4)`.
fn relative_gap(analytic: &DMatrix<f64>, numeric: &DMatrix<f64>) -> f64 {
    analytic
        .iter()
        .zip(numeric.iter())
        .map(|(a, f)| (a - f).abs() / f.abs().max(1e-4))
        .fold(0.0, f64::max)
}

fn central_difference(f: impl Fn(&DVector<f64>) -> DVector<f64>, theta: &DVector<f64>) -> DMatrix<f64> {
    let h = 1e-6;
    let rows = f(theta).len();
    let mut out = DMatrix::zeros(rows, theta.len());
    for c in 0..theta.len() {
        let mut plus = theta.clone();
        let mut minus = theta.clone();
        plus[c] += h;
        minus[c] -= h;
        out.set_column(c, &((f(&plus) - f(&minus)) / (2.0 * h)));
    }
    out
}

fn jacobian_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut worst: f64 = 0.0;
    let modes = [SyncMode::None, SyncMode::ReceiversSynced, SyncMode::SourcesSynced];
    for case in 0..50 {
        let d = 2 + case % 2;
        let m = rng.random_range(3..=8);
        let k = rng.random_range(3..=8);
        let mode = modes[case % 3];
        let t = DMatrix::from_fn(m, k, |_, _| rng.random_range(0.0..0.05));
        let mut mask = DMatrix::from_element(m, k, true);
        mask[(0, 1)] = false;
        mask[(m - 1, k - 1)] = false;
        let toa = ToaMatrix::with_mask(t, mask, 343.0).unwrap();
        let problem = TimingInvariantResidual::new(&toa, d, mode).unwrap();
        let theta = DVector::from_fn(problem.param_len(), |_, _| rng.random_range(-5.0..5.0));

        let analytic = jacobian(&theta, &toa, d, mode).unwrap();
        let numeric = central_difference(|p| residual(p, &toa, d, mode).unwrap(), &theta);
        worst = worst.max(relative_gap(&analytic, &numeric));

        let known = [
            KnownDistance { i: 0, j: 1, distance: 1.0 },
            KnownDistance { i: 1, j: m + 1, distance: 2.0 },
        ];
        let analytic = distance_jacobian(&theta, d, &known);
        let numeric = central_difference(|p| distance_values(p, d, &known), &theta);
        worst = worst.max(relative_gap(&analytic, &numeric));
    }
    outcome(worst < 1e-5, format!("max relative error {worst:.2e} (< 1e-5)"))
}

fn noiseless_end_to_end() -> Outcome {
    let trials = run_trials(seeds(&ScenarioConfig::default(), 20), &LocalizeOptions::default());
    let errs = errors(&trials);
    let med = median(&errs);
    let below = errs.iter().filter(|&&e| e <= CLIP_FLOOR).count();
    let slowest = trials.iter().map(|t| t.seconds).fold(0.0, f64::max);
    outcome(
        med <= 1e-3 && below * 5 >= errs.len() * 4 && slowest <= 60.0,
        format!(
            "median E_rs {med:.2e} m (≤ 1e-3), {below}/{} below 1e-3 (≥ 80%), slowest trial {slowest:.2} s (≤ 60 s)",
            errs.len()
        ),
    )
}

fn noise_scaling() -> Outcome {
    let levels = [0.0, 1e-6, 1e-5, 1e-4, 1e-3];
    let mut medians = Vec::new();
    for &noise in &levels {
        let base = ScenarioConfig {
            noise_sigma: noise,
            ..Default::default()
        };
        let errs = errors(&run_trials(seeds(&base, 20), &LocalizeOptions::default()));
        medians.push(sweep_statistics(&errs, CLIP_FLOOR).unwrap().median);
    }
    let monotone = medians.windows(2).all(|w| w[1] >= w[0]);
    let at_1e5 = medians[2];
    let listed: Vec<String> = medians.iter().map(|m| format!("{m:.2e}")).collect();
    outcome(
        monotone && at_1e5 <= 0.05,
        format!(
            "clipped medians [{}] m (non-decreasing), at 1e-5 s {at_1e5:.2e} m (≤ 5e-2)",
            listed.join(", ")
        ),
    )
}

fn near_minimal() -> Outcome {
    let base = ScenarioConfig {
        m: 7,
        k: 7,
        ..Default::default()
    };
    let trials = run_trials(seeds(&base, 50), &LocalizeOptions::default());
    let good = trials.iter().filter(|t| t.e_rs <= 1e-2).count();
    // a zero-loss estimate far from the truth is a different exact solution
    let exact_elsewhere = trials
        .iter()
        .filter(|t| t.e_rs > 1e-2 && t.result.as_ref().is_some_and(|r| r.final_loss < 1e-15))
        .count();
    outcome(
        good * 2 >= trials.len(),
        format!(
            "{good}/{} trials with E_rs ≤ 1e-2 m (≥ 50%); {exact_elsewhere} others reached zero loss away from the truth",
            trials.len()
        ),
    )
}

fn dof_table() -> Outcome {
    let none = [(5, 13), (7, 7), (13, 5)];
    let known = [(4, 10), (5, 7), (6, 6), (9, 5)];
    let minimal = |mode: SyncMode, pairs: &[(usize, usize)]| {
        pairs.iter().all(|&(m, k)| {
            let feasible = |k: usize| m * k >= degrees_of_freedom(m, k, 3, mode);
            feasible(k) && !feasible(k - 1) && min_sources(m, 3, mode) == Some(k)
        })
    };
    let ok_none = minimal(SyncMode::None, &none);
    let ok_known = minimal(SyncMode::SourcesSynced, &known);
    outcome(
        ok_none && ok_known,
        format!("unsynchronized pairs {ok_none}, one-set-known pairs {ok_known}"),
    )
}

fn timing_recovery() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let instance = generate(&ScenarioConfig {
            seed,
            ..Default::default()
        })
        .unwrap();
        let est = recover_timing(&cross_distances(&instance.truth), &instance.toa).unwrap();
        let s0 = instance.timing.sigma[0];
        for (a, b) in est.sigma.iter().zip(instance.timing.sigma.iter()) {
            worst = worst.max((a - (b - s0)).abs());
        }
        for (a, b) in est.tau.iter().zip(instance.timing.tau.iter()) {
            worst = worst.max((a - (b + s0)).abs());
        }
    }
    outcome(worst < 1e-9, format!("max abs timing error {worst:.2e} s (< 1e-9)"))
}

fn missing_data() -> Outcome {
    let base = |fraction: f64| ScenarioConfig {
        missing_fraction: fraction,
        ..Default::default()
    };
    let ten = run_trials(seeds(&base(0.1), 20), &LocalizeOptions::default());
    let med = median(&errors(&ten));
    let twenty = run_trials(seeds(&base(0.2), 20), &LocalizeOptions::default());
    let completed = twenty.iter().filter(|t| t.result.is_some()).count();
    let med20 = median(&errors(&twenty));
    outcome(
        med <= 1e-2 && completed == twenty.len(),
        format!(
            "10% missing: median E_rs {med:.2e} m (≤ 1e-2); 20% missing: {completed}/{} completed, median {med20:.2e} m",
            twenty.len()
        ),
    )
}

fn subarray_constraints() -> Outcome {
    let base = ScenarioConfig {
        m: 8,
        k: 8,
        noise_sigma: 1e-4,
        subarrays: vec![SubarraySpec::square(0.1, 3)],
        ..Default::default()
    };
    let configs = seeds(&base, 50);
    let instances: Vec<Instance> = configs.iter().map(|c| generate(c).unwrap()).collect();
    let run = |constrained: bool| -> Vec<(f64, f64)> {
        instances
            .par_iter()
            .map(|inst| {
                let options = LocalizeOptions {
                    known_distances: if constrained { inst.known_distances.clone() } else { Vec::new() },
                    ..Default::default()
                };
                let mut backend = ClarabelBackend::default();
                match localize(&inst.toa, &options, &mut backend) {
                    Ok(r) => {
                        let e = procrustes_align(&r.points, &inst.truth).unwrap().e_rs;
                        let res = TimingInvariantResidual::new(&inst.toa, 3, SyncMode::None).unwrap();
                        let theta = res.pack(&r.points, &r.alpha);
                        let g = if constrained {
                            distance_values(&theta, 3, &inst.known_distances).amax()
                        } else {
                            0.0
                        };
                        (e, g)
                    }
                    Err(_) => (f64::INFINITY, f64::INFINITY),
                }
            })
            .collect()
    };
    let with = run(true);
    let without = run(false);
    let g_max = with.iter().map(|r| r.1).fold(0.0, f64::max);
    let med_with = median(&with.iter().map(|r| r.0).collect::<Vec<_>>());
    let med_without = median(&without.iter().map(|r| r.0).collect::<Vec<_>>());
    outcome(
        g_max < 1e-6 && med_with < med_without,
        format!(
            "max |g| {g_max:.2e} m² (< 1e-6), median E_rs constrained {med_with:.3e} m vs unconstrained {med_without:.3e} m"
        ),
    )
}

fn known_times() -> Outcome {
    let base = ScenarioConfig {
        m: 6,
        k: 6,
        sync: SyncMode::SourcesSynced,
        ..Default::default()
    };
    let options = LocalizeOptions {
        mode: SyncMode::SourcesSynced,
        ..Default::default()
    };
    let trials = run_trials(seeds(&base, 20), &options);
    let errs = errors(&trials);
    let med = median(&errs);
    let good = errs.iter().filter(|&&e| e <= 1e-3).count();
    let exact_elsewhere = trials
        .iter()
        .filter(|t| t.e_rs > 1e-3 && t.result.as_ref().is_some_and(|r| r.final_loss < 1e-15))
        .count();
    outcome(
        med <= 1e-3,
        format!(
            "median E_rs {med:.2e} m (≤ 1e-3), {good}/{} below 1e-3; {exact_elsewhere} others reached zero loss away from the truth",
            errs.len()
        ),
    )
}

fn determinism() -> Outcome {
    let config = SweepConfig {
        sizes: vec![8, 10],
        noise_levels: vec![0.0, 1e-4],
        trials: 4,
        seed: 11,
        ..Default::default()
    };
    let tables = |workers: usize| {
        let r = run_sweep(&config, workers).unwrap();
        let mut summary = Vec::new();
        let mut raw = Vec::new();
        write_summary_csv(&mut summary, &r.cells).unwrap();
        write_trials_csv(&mut raw, &r.records).unwrap();
        (summary, raw)
    };
    let serial = tables(1);
    let parallel = tables(4);
    outcome(
        serial == parallel,
        format!(
            "summary {} bytes, per-trial {} bytes; identical serial vs 4 workers: {}",
            serial.0.len(),
            serial.1.len(),
            serial == parallel
        ),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 12] = [
        ("timing invariance", timing_invariance),
        ("ML equivalence", ml_equivalence),
        ("Jacobian correctness", jacobian_check),
        ("noiseless end-to-end", noiseless_end_to_end),
        ("noise scaling", noise_scaling),
        ("near-minimal configurations", near_minimal),
        ("DOF table", dof_table),
        ("timing recovery", timing_recovery),
        ("missing data", missing_data),
        ("subarray constraints", subarray_constraints),
        ("known-times mode", known_times),
        ("determinism", determinism),
    ];
    // `cargo test -- --list` and filters are not meaningful for this harness
    if std::env::args().any(|a| a == "--list") {
        return;
    }
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let o = run();
        if !o.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {:<28} {}  {} [{:.1} s]",
            i + 1,
            name,
            if o.pass { "PASS" } else { "FAIL" },
            o.detail,
            start.elapsed().as_secs_f64()
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

//! Alignment to ground truth, localization errors and sweep statistics.
//!
//! Quantiles use linear interpolation between order statistics (position
//! `p·(n−1)` in the sorted sample). Box-plot whiskers extend to the most
//! extreme observation within 1.5 IQR of the quartiles. The 95% confidence
//! interval of the median is the distribution-free order-statistic interval
//! from the Binomial(n, ½) law; it is flagged degenerate when `n` is too
//! small to reach 95% coverage.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;
use statrs::distribution::{Binomial, DiscreteCDF};

use crate::error::{Error, Result};
use crate::geometry::PointSet;

/// Errors below this are treated as exact (meters).
pub const CLIP_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AlignedResult {
    /// Orthogonal `d × d` matrix; reflections allowed.
    pub rotation: DMatrix<f64>,
    pub translation: DVector<f64>,
    pub aligned: PointSet,
    /// Mean error over receivers and sources (m).
    pub e_rs: f64,
    /// Mean error over receivers only (m).
    pub e_r: f64,
    pub e_rs_clipped: bool,
    pub e_r_clipped: bool,
}

/// Orthogonal Procrustes: the `Q`, `t` minimizing `Σ‖truth_i − (Q·est_i + t)‖²`
/// over all points.
pub fn procrustes_align(estimate: &PointSet, truth: &PointSet) -> Result<AlignedResult> {
    if estimate.dim() != truth.dim() || estimate.m() != truth.m() || estimate.k() != truth.k() {
        return Err(Error::InvalidInput(format!(
            "cannot align {}D set ({} + {}) to {}D set ({} + {})",
            estimate.dim(),
            estimate.m(),
            estimate.k(),
            truth.dim(),
            truth.m(),
            truth.k()
        )));
    }
    let mu_est = estimate.centroid();
    let mu_true = truth.centroid();
    let est_c = estimate.centered();
    let true_c = truth.centered();
    let cross = true_c.coords() * est_c.coords().transpose();
    let svd = cross.svd(true, true);
    let (u, v_t) = match (svd.u, svd.v_t) {
        (Some(u), Some(v_t)) => (u, v_t),
        _ => return Err(Error::InvalidInput("SVD failed during alignment".into())),
    };
    let rotation = u * v_t;
    let translation = &mu_true - &rotation * &mu_est;
    let aligned = estimate.transformed(&rotation, &translation);
    let (e_rs, e_r) = localization_error(&aligned, truth)?;
    Ok(AlignedResult {
        rotation,
        translation,
        aligned,
        e_rs,
        e_r,
        e_rs_clipped: e_rs < CLIP_FLOOR,
        e_r_clipped: e_r < CLIP_FLOOR,
    })
}

/// `(E_rs, E_r)`: mean Euclidean error over all points and over receivers.
pub fn localization_error(aligned: &PointSet, truth: &PointSet) -> Result<(f64, f64)> {
    if aligned.coords().shape() != truth.coords().shape() || aligned.m() != truth.m() {
        return Err(Error::InvalidInput("point sets differ in shape".into()));
    }
    let errors: Vec<f64> = (0..truth.len())
        .map(|i| (aligned.coords().column(i) - truth.coords().column(i)).norm())
        .collect();
    let e_rs = errors.iter().sum::<f64>() / errors.len() as f64;
    let m = truth.m();
    let e_r = if m == 0 {
        0.0
    } else {
        errors[..m].iter().sum::<f64>() / m as f64
    };
    Ok((e_rs, e_r))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepSummary {
    pub count: usize,
    pub median: f64,
    pub q1: f64,
    pub q3: f64,
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
    pub ci_low: f64,
    pub ci_high: f64,
    /// True when fewer samples than needed for 95% coverage.
    pub ci_degenerate: bool,
}

/// Linear-interpolation quantile of a sorted sample.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

/// Order-statistic 95% interval for the median as 1-based ranks
/// `(l, n − l + 1)`, or `None` when no such interval reaches 95%.
fn median_ci_ranks(n: usize) -> Option<(usize, usize)> {
    let binom = Binomial::new(0.5, n as u64).ok()?;
    // coverage of [x_(l), x_(n−l+1)] is 1 − 2·P(B ≤ l − 1)
    let mut best = None;
    for l in 1..=n.div_ceil(2) {
        let tail = binom.cdf((l - 1) as u64);
        if 1.0 - 2.0 * tail >= 0.95 {
            best = Some((l, n - l + 1));
        } else {
            break;
        }
    }
    best
}

pub fn sweep_statistics(errors: &[f64], clip_floor: f64) -> Result<SweepSummary> {
    if errors.is_empty() {
        return Err(Error::InvalidInput("no errors to summarize".into()));
    }
    if errors.iter().any(|e| e.is_nan()) {
        return Err(Error::InvalidInput("NaN error value".into()));
    }
    let mut sorted: Vec<f64> = errors.iter().map(|e| e.max(clip_floor)).collect();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let n = sorted.len();
    let median = quantile(&sorted, 0.5);
    let q1 = quantile(&sorted, 0.25);
    let q3 = quantile(&sorted, 0.75);
    let iqr = q3 - q1;
    let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
    let inside: Vec<f64> = sorted
        .iter()
        .copied()
        .filter(|&e| e >= lo_fence && e <= hi_fence)
        .collect();
    let outliers: Vec<f64> = sorted
        .iter()
        .copied()
        .filter(|&e| e < lo_fence || e > hi_fence)
        .collect();
    let (ci_low, ci_high, ci_degenerate) = match median_ci_ranks(n) {
        Some((l, u)) => (sorted[l - 1], sorted[u - 1], false),
        None => (sorted[0], sorted[n - 1], true),
    };
    Ok(SweepSummary {
        count: n,
        median,
        q1,
        q3,
        whisker_low: inside.first().copied().unwrap_or(q1),
        whisker_high: inside.last().copied().unwrap_or(q3),
        outliers,
        ci_low,
        ci_high,
        ci_degenerate,
    })
}

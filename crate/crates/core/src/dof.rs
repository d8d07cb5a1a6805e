//! Degree-of-freedom counting and minimal configurations.
//!
//! A configuration is called feasible when the number of measurements `M·K`
//! is at least the number of free parameters after removing rigid motions and
//! the global time shift. Feasibility gives a dimension-zero solution set; it
//! does not certify uniqueness.

use serde::Serialize;

use crate::toa::SyncMode;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DofReport {
    pub m: usize,
    pub k: usize,
    pub d: usize,
    pub mode: SyncMode,
    pub measurements: usize,
    pub dof: usize,
    pub feasible: bool,
    /// Smallest source count making `m` receivers feasible; `None` when no
    /// finite count suffices.
    pub min_sources: Option<usize>,
}

/// Unknown count for `m` receivers and `k` sources in `d` dimensions.
///
/// With both timing sets unknown this is `(d+1)(M+K−d/2)−1`. With one set
/// known it is `d(M+K−(d+1)/2)` plus the size of the side whose times are
/// still unknown (receivers for `SourcesSynced`, sources for
/// `ReceiversSynced`).
pub fn degrees_of_freedom(m: usize, k: usize, d: usize, mode: SyncMode) -> usize {
    let n = m + k;
    match mode {
        // (d+1)(2N−d) is always even
        SyncMode::None => (d + 1) * (2 * n - d) / 2 - 1,
        SyncMode::SourcesSynced => d * n - d * (d + 1) / 2 + m,
        SyncMode::ReceiversSynced => d * n - d * (d + 1) / 2 + k,
    }
}

/// Smallest `K ≥ 1` with `M·K ≥ dof(M, K)`, or `None` if the receiver count is
/// too small for any number of sources.
pub fn min_sources(m: usize, d: usize, mode: SyncMode) -> Option<usize> {
    // M·K ≥ a·K + b  ⇔  K·(M − a) ≥ b
    let (a, b) = match mode {
        SyncMode::None => (d + 1, ((d + 1) * m) as i64 - (d * (d + 1) / 2) as i64 - 1),
        SyncMode::SourcesSynced => (d, ((d + 1) * m) as i64 - (d * (d + 1) / 2) as i64),
        SyncMode::ReceiversSynced => (d + 1, (d * m) as i64 - (d * (d + 1) / 2) as i64),
    };
    if m <= a {
        return None;
    }
    let den = (m - a) as i64;
    let k = if b <= 0 { 1 } else { (b + den - 1) / den };
    Some(k.max(1) as usize)
}

pub fn report(m: usize, k: usize, d: usize, mode: SyncMode) -> DofReport {
    let dof = degrees_of_freedom(m, k, d, mode);
    DofReport {
        m,
        k,
        d,
        mode,
        measurements: m * k,
        dof,
        feasible: m * k >= dof,
        min_sources: min_sources(m, d, mode),
    }
}

impl std::fmt::Display for DofReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "M={} K={} d={} mode={}",
            self.m, self.k, self.d, self.mode
        )?;
        writeln!(f, "measurements: {}", self.measurements)?;
        writeln!(f, "degrees of freedom: {}", self.dof)?;
        if self.feasible {
            writeln!(f, "feasible: yes (dimension-zero solution set; uniqueness not implied)")?;
        } else {
            writeln!(f, "feasible: no (more unknowns than measurements)")?;
        }
        match self.min_sources {
            Some(k) => write!(f, "minimum sources for M={}: {}", self.m, k),
            None => write!(
                f,
                "minimum sources for M={}: unbounded (too few receivers for any K)",
                self.m
            ),
        }
    }
}

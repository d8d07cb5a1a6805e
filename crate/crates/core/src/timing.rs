//! Least-squares recovery of receiver offsets and emission times once the
//! receiver-to-source distances are known.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::CrossDistanceMatrix;
use crate::toa::ToaMatrix;

/// Recovered timings in seconds. The global shift is fixed by `σ₁ = 0`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TimingEstimate {
    pub sigma: DVector<f64>,
    pub tau: DVector<f64>,
    /// Euclidean norm of the least-squares residual, in seconds.
    pub residual_norm: f64,
}

/// Fits `σ·1ᵀ + 1·τᵀ` to `T − Δ̂/v` over the observed entries.
///
/// Unknowns are `[σ₂ … σ_M, τ₁ … τ_K]`; each observed entry contributes one
/// row with a one in the `σ_m` column (absent for `m = 0`) and one in the
/// `τ_k` column. Returns [`Error::Underdetermined`] when the observed pattern
/// does not pin down all `M + K − 1` unknowns.
pub fn recover_timing(delta_hat: &CrossDistanceMatrix, t: &ToaMatrix) -> Result<TimingEstimate> {
    let delta = delta_hat.matrix();
    let (m, k) = (t.m(), t.k());
    if delta.shape() != (m, k) {
        return Err(Error::InvalidInput(format!(
            "distance matrix shape {:?} differs from TOA shape {:?}",
            delta.shape(),
            (m, k)
        )));
    }
    let unknowns = m + k - 1;
    let observed = t.observed_count();
    if observed < unknowns {
        return Err(Error::Underdetermined(format!(
            "{observed} observed entries for {unknowns} unknown timings"
        )));
    }

    let mut a = DMatrix::zeros(observed, unknowns);
    let mut e = DVector::zeros(observed);
    let mut row = 0;
    for j in 0..k {
        for i in 0..m {
            if !t.is_observed(i, j) {
                continue;
            }
            if i > 0 {
                a[(row, i - 1)] = 1.0;
            }
            a[(row, m - 1 + j)] = 1.0;
            e[row] = t.times()[(i, j)] - delta[(i, j)] / t.speed();
            row += 1;
        }
    }

    let svd = a.clone().svd(true, true);
    let smax = svd.singular_values.max();
    let cutoff = smax * 1e-10 * observed.max(unknowns) as f64;
    let rank = svd.singular_values.iter().filter(|&&s| s > cutoff).count();
    if rank < unknowns {
        return Err(Error::Underdetermined(format!(
            "timing system has rank {rank} < {unknowns}; the observation pattern is disconnected"
        )));
    }
    let x = svd
        .solve(&e, cutoff)
        .map_err(|msg| Error::Underdetermined(msg.to_string()))?;
    let residual_norm = (&a * &x - &e).norm();

    let mut sigma = DVector::zeros(m);
    for i in 1..m {
        sigma[i] = x[i - 1];
    }
    let tau = DVector::from_iterator(k, (0..k).map(|j| x[m - 1 + j]));
    Ok(TimingEstimate {
        sigma,
        tau,
        residual_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toa_from(delta: &DMatrix<f64>, sigma: &[f64], tau: &[f64], speed: f64) -> ToaMatrix {
        let t = DMatrix::from_fn(delta.nrows(), delta.ncols(), |i, j| {
            delta[(i, j)] / speed + sigma[i] + tau[j]
        });
        ToaMatrix::new(t, speed).unwrap()
    }

    #[test]
    fn exact_recovery_with_zero_first_offset() {
        let delta = DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.5, 0.5, 2.2, 4.0]);
        let sigma = [0.0, 0.3, -0.7];
        let tau = [1.1, -0.4];
        let t = toa_from(&delta, &sigma, &tau, 2.0);
        let est = recover_timing(&CrossDistanceMatrix(delta), &t).unwrap();
        assert_eq!(est.sigma[0], 0.0);
        for i in 0..3 {
            assert!((est.sigma[i] - sigma[i]).abs() < 1e-12);
        }
        for j in 0..2 {
            assert!((est.tau[j] - tau[j]).abs() < 1e-12);
        }
        assert!(est.residual_norm < 1e-12);
    }

    #[test]
    fn global_shift_is_absorbed() {
        let delta = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 0.5, 2.5, 1.5]);
        let sigma = [0.4, -0.2];
        let tau = [0.1, 0.9, -0.3];
        let t = toa_from(&delta, &sigma, &tau, 343.0);
        let est = recover_timing(&CrossDistanceMatrix(delta), &t).unwrap();
        for i in 0..2 {
            assert!((est.sigma[i] - (sigma[i] - sigma[0])).abs() < 1e-12);
        }
        for j in 0..3 {
            assert!((est.tau[j] - (tau[j] + sigma[0])).abs() < 1e-12);
        }
    }

    #[test]
    fn disconnected_pattern_is_underdetermined() {
        // receivers {0} only see source 0, receiver {1} only sees source 1
        let delta = DMatrix::from_element(2, 2, 1.0);
        let mut mask = DMatrix::from_element(2, 2, true);
        mask[(0, 1)] = false;
        mask[(1, 0)] = false;
        let t = ToaMatrix::with_mask(DMatrix::from_element(2, 2, 1.0), mask, 1.0).unwrap();
        assert!(matches!(
            recover_timing(&CrossDistanceMatrix(delta), &t),
            Err(Error::Underdetermined(_))
        ));
    }

    #[test]
    fn shape_mismatch() {
        let t = ToaMatrix::new(DMatrix::from_element(2, 2, 1.0), 1.0).unwrap();
        assert!(recover_timing(&CrossDistanceMatrix(DMatrix::zeros(2, 3)), &t).is_err());
    }
}

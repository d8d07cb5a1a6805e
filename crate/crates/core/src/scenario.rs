//! Seeded synthetic instances: uniform points in a box, uniform timings,
//! Gaussian TOA noise, missing-entry masks and planted subarrays.
//!
//! Every draw comes from one ChaCha8 stream seeded by `ScenarioConfig::seed`,
//! in a fixed order (receivers, sources, offsets, emission times, noise,
//! mask, subarray placement), so instances are reproducible bit for bit.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::constraints::KnownDistance;
use crate::error::{Error, Result};
use crate::geometry::PointSet;
use crate::toa::{forward_toa, SyncMode, Timing, ToaMatrix, DEFAULT_SPEED};

/// Mask draws attempted before giving up on row/column coverage.
const MASK_ATTEMPTS: usize = 1000;

/// A compact receiver group with known internal geometry.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubarraySpec {
    /// Template points, one `d`-vector per receiver in the group.
    pub template: Vec<Vec<f64>>,
}

impl SubarraySpec {
    /// Square of side `side` in the first two axes.
    pub fn square(side: f64, d: usize) -> Self {
        let corners = [[0.0, 0.0], [side, 0.0], [side, side], [0.0, side]];
        Self {
            template: corners
                .iter()
                .map(|c| {
                    let mut p = vec![0.0; d];
                    p[0] = c[0];
                    p[1] = c[1];
                    p
                })
                .collect(),
        }
    }

    pub fn size(&self) -> usize {
        self.template.len()
    }

    pub fn matrix(&self, d: usize) -> Result<DMatrix<f64>> {
        if self.template.iter().any(|p| p.len() != d) {
            return Err(Error::Config(format!(
                "subarray template points must have {d} coordinates"
            )));
        }
        Ok(DMatrix::from_fn(d, self.template.len(), |r, c| {
            self.template[c][r]
        }))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub d: usize,
    pub m: usize,
    pub k: usize,
    /// Box extents in meters; only the first `d` are used.
    pub volume: Vec<f64>,
    /// Offsets and emission times are drawn uniformly from this interval (s).
    pub offset_range: (f64, f64),
    /// Standard deviation of additive TOA noise (s).
    pub noise_sigma: f64,
    /// Side whose times are known; those times are drawn and then zeroed
    /// so the draw sequence does not depend on the mode.
    pub sync: SyncMode,
    pub speed: f64,
    /// Fraction of entries hidden; the count is `round(fraction·M·K)`.
    pub missing_fraction: f64,
    /// Planted on consecutive receivers starting at index 0.
    pub subarrays: Vec<SubarraySpec>,
    pub seed: u64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            d: 3,
            m: 12,
            k: 12,
            volume: vec![10.0, 10.0, 3.0],
            offset_range: (-1.0, 1.0),
            noise_sigma: 0.0,
            sync: SyncMode::None,
            speed: DEFAULT_SPEED,
            missing_fraction: 0.0,
            subarrays: Vec::new(),
            seed: 0,
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !(2..=3).contains(&self.d) {
            return Err(Error::Config(format!("dimension must be 2 or 3, got {}", self.d)));
        }
        if self.m == 0 || self.k == 0 {
            return Err(Error::Config("need at least one receiver and one source".into()));
        }
        if self.volume.len() < self.d || self.volume[..self.d].iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config(format!(
                "volume needs {} positive extents",
                self.d
            )));
        }
        let (lo, hi) = self.offset_range;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return Err(Error::Config("offset range must be a finite interval".into()));
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(Error::Config("noise sigma must be nonnegative".into()));
        }
        if !(self.speed > 0.0 && self.speed.is_finite()) {
            return Err(Error::Config("speed must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.missing_fraction) {
            return Err(Error::Config("missing fraction must lie in [0, 1)".into()));
        }
        let planted: usize = self.subarrays.iter().map(SubarraySpec::size).sum();
        if planted > self.m {
            return Err(Error::Config(format!(
                "subarrays need {planted} receivers but only {} exist",
                self.m
            )));
        }
        Ok(())
    }

    pub fn missing_count(&self) -> usize {
        (self.missing_fraction * (self.m * self.k) as f64).round() as usize
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub truth: PointSet,
    pub timing: Timing,
    /// Noisy, masked measurements.
    pub toa: ToaMatrix,
    /// Noiseless, fully observed measurements.
    pub clean_toa: ToaMatrix,
    /// Exact distances inside planted subarrays.
    pub known_distances: Vec<KnownDistance>,
}

impl Instance {
    fn noise(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.toa.m(), self.toa.k(), |i, j| {
            if self.toa.is_observed(i, j) {
                self.toa.times()[(i, j)] - self.clean_toa.times()[(i, j)]
            } else {
                0.0
            }
        })
    }
}

pub fn generate(config: &ScenarioConfig) -> Result<Instance> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let (d, m, k) = (config.d, config.m, config.k);

    let mut coords = DMatrix::zeros(d, m + k);
    for c in 0..m + k {
        for r in 0..d {
            coords[(r, c)] = rng.random_range(0.0..config.volume[r]);
        }
    }
    let truth = PointSet::new(coords, m)?;

    let (lo, hi) = config.offset_range;
    let mut uniform = |n: usize| {
        DVector::from_fn(n, |_, _| {
            if lo == hi {
                lo
            } else {
                rng.random_range(lo..hi)
            }
        })
    };
    let mut sigma = uniform(m);
    let mut tau = uniform(k);
    match config.sync {
        SyncMode::None => {}
        SyncMode::ReceiversSynced => sigma.fill(0.0),
        SyncMode::SourcesSynced => tau.fill(0.0),
    }
    let timing = Timing { sigma, tau };

    let clean_toa = forward_toa(&truth, &timing, config.speed)?;
    let noise = if config.noise_sigma > 0.0 {
        let normal = Normal::new(0.0, config.noise_sigma)
            .map_err(|e| Error::Config(format!("noise distribution: {e}")))?;
        DMatrix::from_fn(m, k, |_, _| normal.sample(&mut rng))
    } else {
        DMatrix::zeros(m, k)
    };
    let mask = sample_mask(m, k, config.missing_count(), &mut rng)?;
    let noisy = DMatrix::from_fn(m, k, |i, j| {
        if mask[(i, j)] {
            clean_toa.times()[(i, j)] + noise[(i, j)]
        } else {
            0.0
        }
    });
    let toa = ToaMatrix::with_mask(noisy, mask, config.speed)?;

    let mut instance = Instance {
        truth,
        timing,
        toa,
        clean_toa,
        known_distances: Vec::new(),
    };
    let mut start = 0;
    for spec in &config.subarrays {
        let indices: Vec<usize> = (start..start + spec.size()).collect();
        let template = spec.matrix(d)?;
        let (planted, mut known) =
            plant_subarray(&instance, &indices, &template, &config.volume, &mut rng)?;
        instance = planted;
        instance.known_distances.append(&mut known);
        start += spec.size();
    }
    Ok(instance)
}

/// Hides `count` entries chosen uniformly, redrawing until every row and
/// column keeps an observation.
fn sample_mask(m: usize, k: usize, count: usize, rng: &mut impl Rng) -> Result<DMatrix<bool>> {
    let total = m * k;
    if count == 0 {
        return Ok(DMatrix::from_element(m, k, true));
    }
    if count > total - m.max(k) {
        return Err(Error::Generation(format!(
            "cannot hide {count} of {total} entries while keeping every row and column observed"
        )));
    }
    let mut cells: Vec<usize> = (0..total).collect();
    for _ in 0..MASK_ATTEMPTS {
        // partial Fisher–Yates: first `count` cells are hidden
        for i in 0..count {
            let j = rng.random_range(i..total);
            cells.swap(i, j);
        }
        let mut mask = DMatrix::from_element(m, k, true);
        for &c in &cells[..count] {
            mask[(c % m, c / m)] = false;
        }
        let rows_ok = (0..m).all(|i| mask.row(i).iter().any(|&o| o));
        let cols_ok = (0..k).all(|j| mask.column(j).iter().any(|&o| o));
        if rows_ok && cols_ok {
            return Ok(mask);
        }
        cells.sort_unstable();
    }
    Err(Error::Generation(format!(
        "no mask with {count} hidden entries kept every row and column observed after {MASK_ATTEMPTS} draws"
    )))
}

/// Uniformly random orthogonal matrix with determinant +1.
fn random_rotation(d: usize, rng: &mut impl Rng) -> DMatrix<f64> {
    let a = DMatrix::from_fn(d, d, |_, _| StandardNormal.sample(rng));
    let qr = a.qr();
    let mut q = qr.q();
    let r = qr.r();
    for c in 0..d {
        if r[(c, c)] < 0.0 {
            let mut col = q.column_mut(c);
            col.neg_mut();
        }
    }
    if q.determinant() < 0.0 {
        let mut col = q.column_mut(0);
        col.neg_mut();
    }
    q
}

/// Replaces receivers `indices` by a randomly rotated and translated copy of
/// `template` (`d × |indices|`) lying inside the box, re-derives the
/// measurements with the instance's existing noise, and returns the
/// template's pairwise distances as equality constraints.
pub fn plant_subarray(
    instance: &Instance,
    indices: &[usize],
    template: &DMatrix<f64>,
    volume: &[f64],
    rng: &mut impl Rng,
) -> Result<(Instance, Vec<KnownDistance>)> {
    let d = instance.truth.dim();
    if template.nrows() != d || template.ncols() != indices.len() {
        return Err(Error::InvalidInput(format!(
            "template is {}x{}, expected {}x{}",
            template.nrows(),
            template.ncols(),
            d,
            indices.len()
        )));
    }
    if let Some(&bad) = indices.iter().find(|&&i| i >= instance.truth.m()) {
        return Err(Error::InvalidInput(format!("receiver index {bad} out of range")));
    }
    if volume.len() < d {
        return Err(Error::InvalidInput(format!("volume needs {d} extents")));
    }

    let rotation = random_rotation(d, rng);
    let centroid = template.column_mean();
    let mut placed = template.clone();
    for mut col in placed.column_iter_mut() {
        col -= &centroid;
    }
    let placed = rotation * placed;
    let mut shift = DVector::zeros(d);
    for r in 0..d {
        let lo = placed.row(r).min();
        let hi = placed.row(r).max();
        let span = hi - lo;
        if span > volume[r] {
            return Err(Error::Generation(format!(
                "subarray spans {span:.3} m on axis {r}, box is {:.3} m",
                volume[r]
            )));
        }
        shift[r] = rng.random_range(0.0..=(volume[r] - span)) - lo;
    }

    let mut coords = instance.truth.coords().clone();
    for (c, &idx) in indices.iter().enumerate() {
        coords.set_column(idx, &(placed.column(c) + &shift));
    }
    let truth = PointSet::new(coords, instance.truth.m())?;
    let clean_toa = forward_toa(&truth, &instance.timing, instance.toa.speed())?;
    let noise = instance.noise();
    let noisy = DMatrix::from_fn(truth.m(), truth.k(), |i, j| {
        if instance.toa.is_observed(i, j) {
            clean_toa.times()[(i, j)] + noise[(i, j)]
        } else {
            0.0
        }
    });
    let toa = ToaMatrix::with_mask(noisy, instance.toa.mask().clone(), instance.toa.speed())?;

    let mut known = Vec::new();
    for a in 0..indices.len() {
        for b in a + 1..indices.len() {
            known.push(KnownDistance {
                i: indices[a],
                j: indices[b],
                distance: (template.column(a) - template.column(b)).norm(),
            });
        }
    }
    Ok((
        Instance {
            truth,
            timing: instance.timing.clone(),
            toa,
            clean_toa,
            known_distances: instance.known_distances.clone(),
        },
        known,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::constraints::distance_residuals;

    #[test]
    fn noiseless_is_clean() {
        let inst = generate(&ScenarioConfig::default()).unwrap();
        assert_eq!(inst.toa, inst.clean_toa);
        let c = inst.truth.coords();
        for j in 0..c.ncols() {
            assert!(c[(0, j)] >= 0.0 && c[(0, j)] < 10.0);
            assert!(c[(2, j)] >= 0.0 && c[(2, j)] < 3.0);
        }
    }

    #[test]
    fn same_seed_same_instance() {
        let cfg = ScenarioConfig {
            noise_sigma: 1e-4,
            missing_fraction: 0.1,
            seed: 42,
            ..Default::default()
        };
        assert_eq!(generate(&cfg).unwrap(), generate(&cfg).unwrap());
        let other = ScenarioConfig { seed: 43, ..cfg.clone() };
        assert_ne!(generate(&cfg).unwrap().truth, generate(&other).unwrap().truth);
    }

    #[test]
    fn missing_count_rounds() {
        let cfg = ScenarioConfig {
            missing_fraction: 0.2,
            seed: 5,
            ..Default::default()
        };
        assert_eq!(cfg.missing_count(), 29);
        let inst = generate(&cfg).unwrap();
        assert_eq!(inst.toa.missing().len(), 29);
    }

    #[test]
    fn impossible_mask_fails() {
        let cfg = ScenarioConfig {
            m: 2,
            k: 2,
            missing_fraction: 0.75,
            ..Default::default()
        };
        assert!(matches!(generate(&cfg), Err(Error::Generation(_))));
    }

    #[test]
    fn square_subarray_distances() {
        let cfg = ScenarioConfig {
            m: 8,
            k: 8,
            subarrays: vec![SubarraySpec::square(0.1, 3)],
            seed: 9,
            ..Default::default()
        };
        let inst = generate(&cfg).unwrap();
        let mut sq: Vec<f64> = inst
            .known_distances
            .iter()
            .map(|kd| kd.distance * kd.distance)
            .collect();
        sq.sort_by(f64::total_cmp);
        let expected = [0.01, 0.01, 0.01, 0.01, 0.02, 0.02];
        for (a, b) in sq.iter().zip(expected) {
            assert!((a - b).abs() < 1e-15);
        }
        assert!(distance_residuals(&inst.truth, &inst.known_distances).amax() < 1e-14);
    }

    #[test]
    fn two_subarrays_constraint_count() {
        let tri = SubarraySpec {
            template: vec![vec![0.0, 0.0, 0.0], vec![0.2, 0.0, 0.0], vec![0.0, 0.2, 0.1]],
        };
        let cfg = ScenarioConfig {
            m: 10,
            k: 8,
            subarrays: vec![SubarraySpec::square(0.1, 3), tri],
            seed: 1,
            ..Default::default()
        };
        let inst = generate(&cfg).unwrap();
        assert_eq!(inst.known_distances.len(), 6 + 3);
        assert!(distance_residuals(&inst.truth, &inst.known_distances).amax() < 1e-14);
    }

    #[test]
    fn oversized_template_rejected() {
        let cfg = ScenarioConfig {
            m: 8,
            k: 8,
            subarrays: vec![SubarraySpec::square(20.0, 3)],
            ..Default::default()
        };
        assert!(matches!(generate(&cfg), Err(Error::Generation(_))));
    }

    #[test]
    fn planting_keeps_noise() {
        let cfg = ScenarioConfig {
            m: 8,
            k: 8,
            noise_sigma: 1e-4,
            seed: 3,
            ..Default::default()
        };
        let base = generate(&cfg).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let template = SubarraySpec::square(0.1, 3).matrix(3).unwrap();
        let (planted, known) =
            plant_subarray(&base, &[2, 3, 4, 5], &template, &cfg.volume, &mut rng).unwrap();
        assert_eq!(known.len(), 6);
        assert!((planted.noise() - base.noise()).amax() < 1e-12);
        assert_eq!(planted.truth.receiver(0), base.truth.receiver(0));
    }
}

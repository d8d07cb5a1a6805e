//! Point sets, Gram matrices and Euclidean distance matrices.
//!
//! Receivers and sources are always stored together as one `d × N` matrix
//! `X = [R, S]`, receivers first. Working with the joint set means a single
//! Gram matrix `G = XᵀX` carries the relative geometry between the two
//! groups, and squared receiver-to-source distances are a linear function of
//! `G`.

use nalgebra::{DMatrix, DVector, SymmetricEigen};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Receivers and sources in `d` dimensions, receivers occupying the first
/// `m` columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointSet {
    coords: DMatrix<f64>,
    m: usize,
    k: usize,
}

impl PointSet {
    pub fn new(coords: DMatrix<f64>, m: usize) -> Result<Self> {
        let d = coords.nrows();
        let n = coords.ncols();
        if !(2..=3).contains(&d) {
            return Err(Error::InvalidDimension(format!(
                "point dimension must be 2 or 3, got {d}"
            )));
        }
        if n < 2 {
            return Err(Error::InvalidDimension(format!(
                "need at least two points, got {n}"
            )));
        }
        if m > n {
            return Err(Error::InvalidDimension(format!(
                "{m} receivers requested but only {n} points given"
            )));
        }
        if coords.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidInput("non-finite coordinate".into()));
        }
        Ok(Self {
            coords,
            m,
            k: n - m,
        })
    }

    /// Builds a point set from separate `d × M` receiver and `d × K` source
    /// matrices.
    pub fn from_parts(receivers: &DMatrix<f64>, sources: &DMatrix<f64>) -> Result<Self> {
        if receivers.nrows() != sources.nrows() {
            return Err(Error::InvalidDimension(format!(
                "receiver dimension {} differs from source dimension {}",
                receivers.nrows(),
                sources.nrows()
            )));
        }
        let m = receivers.ncols();
        let coords = DMatrix::from_fn(receivers.nrows(), m + sources.ncols(), |r, c| {
            if c < m {
                receivers[(r, c)]
            } else {
                sources[(r, c - m)]
            }
        });
        Self::new(coords, m)
    }

    pub fn dim(&self) -> usize {
        self.coords.nrows()
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.m + self.k
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn coords(&self) -> &DMatrix<f64> {
        &self.coords
    }

    pub fn receivers(&self) -> DMatrix<f64> {
        self.coords.columns(0, self.m).into_owned()
    }

    pub fn sources(&self) -> DMatrix<f64> {
        self.coords.columns(self.m, self.k).into_owned()
    }

    pub fn receiver(&self, i: usize) -> DVector<f64> {
        self.coords.column(i).into_owned()
    }

    pub fn source(&self, i: usize) -> DVector<f64> {
        self.coords.column(self.m + i).into_owned()
    }

    pub fn centroid(&self) -> DVector<f64> {
        self.coords.column_mean()
    }

    /// Copy translated so the full point set has zero mean.
    pub fn centered(&self) -> PointSet {
        let c = self.centroid();
        let mut coords = self.coords.clone();
        for mut col in coords.column_iter_mut() {
            col -= &c;
        }
        PointSet {
            coords,
            m: self.m,
            k: self.k,
        }
    }

    /// Applies `x ↦ Q·x + t` to every point.
    pub fn transformed(&self, q: &DMatrix<f64>, t: &DVector<f64>) -> PointSet {
        let mut coords = q * &self.coords;
        for mut col in coords.column_iter_mut() {
            col += t;
        }
        PointSet {
            coords,
            m: self.m,
            k: self.k,
        }
    }

    /// Flattens to `[vec R; vec S]` (column-major, one point after another).
    pub fn to_vector(&self) -> DVector<f64> {
        DVector::from_column_slice(self.coords.as_slice())
    }

    pub fn from_vector(values: &[f64], d: usize, m: usize, k: usize) -> Result<Self> {
        if values.len() < d * (m + k) {
            return Err(Error::InvalidDimension(format!(
                "vector of length {} too short for {} points in {d}D",
                values.len(),
                m + k
            )));
        }
        Self::new(
            DMatrix::from_column_slice(d, m + k, &values[..d * (m + k)]),
            m,
        )
    }
}

/// Gram matrix of a full point set together with its receiver/source split.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    g: DMatrix<f64>,
    m: usize,
    k: usize,
}

impl GramMatrix {
    pub fn new(g: DMatrix<f64>, m: usize) -> Result<Self> {
        if !g.is_square() {
            return Err(Error::InvalidDimension(format!(
                "Gram matrix must be square, got {}x{}",
                g.nrows(),
                g.ncols()
            )));
        }
        if m > g.nrows() {
            return Err(Error::InvalidDimension(format!(
                "{m} receivers exceed Gram order {}",
                g.nrows()
            )));
        }
        let k = g.nrows() - m;
        Ok(Self { g, m, k })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.g
    }

    pub fn into_matrix(self) -> DMatrix<f64> {
        self.g
    }

    pub fn m(&self) -> usize {
        self.m
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn order(&self) -> usize {
        self.g.nrows()
    }
}

/// Receiver-to-source distances, `M × K`, in meters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossDistanceMatrix(pub DMatrix<f64>);

impl CrossDistanceMatrix {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.0
    }
}

/// `J_L = I_L − (1/L)·1·1ᵀ`.
pub fn centering_matrix(l: usize) -> Result<DMatrix<f64>> {
    if l == 0 {
        return Err(Error::InvalidDimension(
            "centering matrix needs size at least 1".into(),
        ));
    }
    let off = 1.0 / l as f64;
    Ok(DMatrix::from_fn(l, l, |i, j| {
        if i == j {
            1.0 - off
        } else {
            -off
        }
    }))
}

pub fn cross_distances(x: &PointSet) -> CrossDistanceMatrix {
    let m = x.m();
    let c = x.coords();
    CrossDistanceMatrix(DMatrix::from_fn(m, x.k(), |i, j| {
        (c.column(i) - c.column(m + j)).norm()
    }))
}

pub fn gram_from_points(x: &PointSet, center: bool) -> GramMatrix {
    let coords = if center {
        x.centered().coords
    } else {
        x.coords.clone()
    };
    GramMatrix {
        g: coords.transpose() * &coords,
        m: x.m(),
        k: x.k(),
    }
}

/// `D(G) = diag(G)·1ᵀ − 2G + 1·diag(G)ᵀ`, the squared-distance matrix.
pub fn edm_from_gram(g: &GramMatrix) -> DMatrix<f64> {
    let gm = g.matrix();
    let n = gm.nrows();
    DMatrix::from_fn(n, n, |i, j| gm[(i, i)] - 2.0 * gm[(i, j)] + gm[(j, j)])
}

/// `L(G)`: the receiver-rows × source-columns block of `D(G)`, i.e. squared
/// receiver-to-source distances.
pub fn cross_block(g: &GramMatrix) -> DMatrix<f64> {
    let gm = g.matrix();
    let m = g.m();
    DMatrix::from_fn(m, g.k(), |i, j| {
        let s = m + j;
        gm[(i, i)] - 2.0 * gm[(i, s)] + gm[(s, s)]
    })
}

/// Eigenvalues of a symmetric matrix in descending order, with matching
/// eigenvectors as columns. Each eigenvector's largest-magnitude entry is made
/// positive so the output is deterministic.
pub fn sorted_eigen(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let sym = (a + a.transpose()) * 0.5;
    let eig = SymmetricEigen::new(sym);
    let n = eig.eigenvalues.len();
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps solver order on ties
    order.sort_by(|&i, &j| {
        eig.eigenvalues[j]
            .partial_cmp(&eig.eigenvalues[i])
            .unwrap_or(std::cmp::Ordering::Equal)
    });
    let values = DVector::from_iterator(n, order.iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        let mut v = eig.eigenvectors.column(src).into_owned();
        let pivot = v.iamax();
        if v[pivot] < 0.0 {
            v.neg_mut();
        }
        vectors.set_column(dst, &v);
    }
    (values, vectors)
}

/// Spectral embedding of a Gram matrix into `d` dimensions:
/// `X̂ = diag(√λ₁, …, √λ_d)·V_dᵀ` with negative eigenvalues clamped to zero.
pub fn points_from_gram(g: &GramMatrix, d: usize) -> Result<PointSet> {
    spectral_points(g, d).map(|(points, _)| points)
}

/// Like [`points_from_gram`] but also returns the full descending spectrum.
pub fn spectral_points(g: &GramMatrix, d: usize) -> Result<(PointSet, DVector<f64>)> {
    let n = g.order();
    if d > n {
        return Err(Error::InvalidDimension(format!(
            "cannot embed {n} points in {d} dimensions"
        )));
    }
    let (values, vectors) = sorted_eigen(g.matrix());
    let mut coords = DMatrix::zeros(d, n);
    for i in 0..d {
        let scale = values[i].max(0.0).sqrt();
        for j in 0..n {
            coords[(i, j)] = scale * vectors[(j, i)];
        }
    }
    Ok((PointSet::new(coords, g.m())?, values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn pts(cols: &[&[f64]], m: usize) -> PointSet {
        let d = cols[0].len();
        let flat: Vec<f64> = cols.iter().flat_map(|c| c.iter().copied()).collect();
        PointSet::new(DMatrix::from_column_slice(d, cols.len(), &flat), m).unwrap()
    }

    #[test]
    fn centering_small_sizes() {
        assert_eq!(centering_matrix(1).unwrap(), DMatrix::from_element(1, 1, 0.0));
        let j2 = centering_matrix(2).unwrap();
        assert_eq!(j2, DMatrix::from_row_slice(2, 2, &[0.5, -0.5, -0.5, 0.5]));
        assert!(matches!(centering_matrix(0), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn centering_is_idempotent_projector() {
        for l in 1..=50 {
            let j = centering_matrix(l).unwrap();
            let ones = DVector::from_element(l, 1.0);
            assert!((&j * &ones).amax() < 1e-13);
            assert!((ones.transpose() * &j).amax() < 1e-13);
            assert!((&j * &j - &j).amax() < 1e-13);
            assert!((j.transpose() - &j).amax() < 1e-13);
        }
    }

    #[test]
    fn three_four_five() {
        let x = pts(&[&[0.0, 0.0], &[3.0, 4.0]], 1);
        assert_eq!(cross_distances(&x).0[(0, 0)], 5.0);
        let y = pts(&[&[1.0, 2.0], &[1.0, 2.0]], 1);
        assert_eq!(cross_distances(&y).0[(0, 0)], 0.0);
    }

    #[test]
    fn gram_at_origin_is_zero() {
        let x = pts(&[&[0.0, 0.0], &[0.0, 0.0]], 1);
        assert_eq!(gram_from_points(&x, false).matrix().amax(), 0.0);
        assert_eq!(edm_from_gram(&gram_from_points(&x, true)).amax(), 0.0);
    }

    #[test]
    fn two_points_at_distance_five() {
        let x = pts(&[&[0.0, 0.0], &[3.0, 4.0]], 1);
        let d = edm_from_gram(&gram_from_points(&x, true));
        assert_relative_eq!(d[(0, 1)], 25.0, epsilon = 1e-12);
        assert_relative_eq!(d[(1, 0)], 25.0, epsilon = 1e-12);
        assert_eq!(d[(0, 0)], 0.0);
    }

    #[test]
    fn coincident_single_pair_cross_block() {
        let x = pts(&[&[1.5, -2.0, 0.5], &[1.5, -2.0, 0.5]], 1);
        assert!(cross_block(&gram_from_points(&x, true))[(0, 0)].abs() < 1e-12);
    }

    #[test]
    fn embedding_dimension_checked() {
        let g = GramMatrix::new(DMatrix::identity(2, 2), 1).unwrap();
        assert!(matches!(points_from_gram(&g, 3), Err(Error::InvalidDimension(_))));
    }

    #[test]
    fn identity_gram_gives_unit_diagonal() {
        // G = I_2 is not centered; the embedding still reproduces it exactly.
        let g = GramMatrix::new(DMatrix::identity(2, 2), 1).unwrap();
        let x = points_from_gram(&g, 2).unwrap();
        assert_eq!(x.len(), 2);
        let back = x.coords().transpose() * x.coords();
        assert_relative_eq!(back, DMatrix::identity(2, 2), epsilon = 1e-12);
    }

    #[test]
    fn planar_set_in_3d_has_flat_third_axis() {
        let x = pts(
            &[
                &[0.0, 0.0, 1.0],
                &[2.0, 0.0, 1.0],
                &[0.0, 3.0, 1.0],
                &[4.0, 1.0, 1.0],
                &[1.0, 1.0, 1.0],
            ],
            2,
        );
        let y = points_from_gram(&gram_from_points(&x, true), 3).unwrap();
        assert!(y.coords().row(2).amax() < 1e-7);
    }

    #[test]
    fn point_set_validation() {
        assert!(PointSet::new(DMatrix::zeros(4, 3), 1).is_err());
        assert!(PointSet::new(DMatrix::zeros(2, 1), 1).is_err());
        assert!(PointSet::new(DMatrix::zeros(2, 3), 4).is_err());
        let mut bad = DMatrix::zeros(2, 3);
        bad[(0, 0)] = f64::NAN;
        assert!(PointSet::new(bad, 1).is_err());
    }
}

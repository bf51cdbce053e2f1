use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::rng;

/// Relative eigenvalue floor used when the caller does not pass one.
pub const DEFAULT_RELATIVE_FLOOR: f64 = 1e-10;

/// Matrices up to this size are decomposed densely; larger ones go through
/// block subspace iteration.
const DENSE_EIGH_LIMIT: usize = 400;

/// Empirical symmetric second-order moment.
#[derive(Debug, Clone)]
pub struct Moment2 {
    matrix: DMatrix<f64>,
    n_samples: usize,
}

impl Moment2 {
    /// Wraps a symmetric matrix. Asymmetry above `1e-12` relative to the
    /// largest entry is rejected; smaller round-off is averaged away.
    pub fn new(matrix: DMatrix<f64>, n_samples: usize) -> Result<Self> {
        if !matrix.is_square() {
            return Err(Error::DimensionMismatch {
                expected: matrix.nrows(),
                got: matrix.ncols(),
            });
        }
        let scale = matrix.amax().max(f64::MIN_POSITIVE);
        let asym = (&matrix - matrix.transpose()).amax();
        if asym > 1e-12 * scale {
            return Err(Error::InvalidData(format!(
                "second moment is not symmetric (max |M - M^T| = {asym:e})"
            )));
        }
        let matrix = (&matrix + matrix.transpose()) * 0.5;
        Ok(Self { matrix, n_samples })
    }

    /// Symmetrized cross moment `(X^T Y + Y^T X) / 2n` of two row-sample
    /// matrices.
    pub fn symmetrized_cross(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<Self> {
        if x.shape() != y.shape() {
            return Err(Error::DimensionMismatch {
                expected: x.ncols(),
                got: y.ncols(),
            });
        }
        let n = x.nrows();
        if n == 0 {
            return Err(Error::EmptyInput("second moment"));
        }
        let c = x.transpose() * y;
        let m = (&c + c.transpose()) / (2.0 * n as f64);
        Ok(Self { matrix: m, n_samples: n })
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }
}

/// Leading `k` eigenpairs of a symmetric moment, largest first.
///
/// `floor` defaults to `1e-10 * largest eigenvalue`. A `k`-th eigenvalue
/// below the floor means `k` exceeds the rank the data supports, and is
/// reported as [`Error::DegenerateSpectrum`] rather than regularized.
pub fn top_k_eigh(
    m2: &Moment2,
    k: usize,
    floor: Option<f64>,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let m = m2.dim();
    if k == 0 || k > m {
        return Err(Error::InvalidConfig(format!(
            "requested {k} eigenpairs of a {m}x{m} matrix"
        )));
    }
    let (values, vectors) = if m <= DENSE_EIGH_LIMIT {
        dense_top_k(m2.matrix(), k)
    } else {
        let a = m2.matrix();
        top_k_eigh_op(|q| a * q, m, k, 0)
    };
    check_floor(&values, floor)?;
    Ok((values, vectors))
}

pub(crate) fn check_floor(values: &DVector<f64>, floor: Option<f64>) -> Result<()> {
    let k = values.len();
    let top = values[0].max(0.0);
    let floor = floor.unwrap_or(DEFAULT_RELATIVE_FLOOR * top);
    let last = values[k - 1];
    if !(last > floor) || last <= 0.0 {
        return Err(Error::DegenerateSpectrum {
            k,
            value: last,
            floor,
        });
    }
    Ok(())
}

/// Full dense eigendecomposition, sorted descending, truncated to `k`.
pub(crate) fn dense_top_k(a: &DMatrix<f64>, k: usize) -> (DVector<f64>, DMatrix<f64>) {
    let eig = SymmetricEigen::new(a.clone());
    let mut order: Vec<usize> = (0..a.nrows()).collect();
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let values = DVector::from_iterator(k, order[..k].iter().map(|&i| eig.eigenvalues[i]));
    let mut vectors = DMatrix::zeros(a.nrows(), k);
    for (c, &i) in order[..k].iter().enumerate() {
        vectors.set_column(c, &eig.eigenvectors.column(i));
    }
    canonicalize_signs(&mut vectors);
    (values, vectors)
}

/// Flips each column so its largest-magnitude entry is positive.
pub(crate) fn canonicalize_signs(vectors: &mut DMatrix<f64>) {
    for mut col in vectors.column_iter_mut() {
        let mut best = 0.0f64;
        let mut sign = 1.0;
        for &x in col.iter() {
            if x.abs() > best * (1.0 + 1e-12) {
                best = x.abs();
                sign = x.signum();
            }
        }
        if sign < 0.0 {
            col.neg_mut();
        }
    }
}

/// Top-`k` eigenpairs of a symmetric PSD operator given only its action on
/// a block of vectors. Block subspace iteration with a Rayleigh-Ritz
/// extraction; oversampled by 10 columns.
pub(crate) fn top_k_eigh_op<F>(apply: F, dim: usize, k: usize, seed: u64) -> (DVector<f64>, DMatrix<f64>)
where
    F: Fn(&DMatrix<f64>) -> DMatrix<f64>,
{
    let block = (k + 10).min(dim);
    let mut rng = rng::stream(seed, rng::streams::RANGE_FINDER);
    let start = DMatrix::from_fn(dim, block, |_, _| StandardNormal.sample(&mut rng));
    let mut q = start.qr().q();
    let mut prev: Option<DVector<f64>> = None;
    for _ in 0..500 {
        let z = apply(&q);
        let h = q.transpose() * &z;
        let ritz = SymmetricEigen::new((&h + h.transpose()) * 0.5).eigenvalues;
        let mut ritz: Vec<f64> = ritz.iter().copied().collect();
        ritz.sort_by(|a, b| b.total_cmp(a));
        let ritz = DVector::from_vec(ritz[..k].to_vec());
        q = z.qr().q();
        if let Some(p) = &prev {
            let scale = ritz[0].abs().max(f64::MIN_POSITIVE);
            if (&ritz - p).amax() <= 1e-14 * scale {
                break;
            }
        }
        prev = Some(ritz);
    }
    let z = apply(&q);
    let h = q.transpose() * z;
    let (values, small) = dense_top_k(&((&h + h.transpose()) * 0.5), k);
    let mut vectors = q * small;
    canonicalize_signs(&mut vectors);
    (values, vectors)
}

/// Linear map taking the second moment to the identity on its leading
/// `K`-dimensional eigenspace: `map^T M map = I_K`.
#[derive(Debug, Clone)]
pub struct Whitener {
    map: DMatrix<f64>,
    spectrum: DVector<f64>,
    basis: DMatrix<f64>,
}

impl Whitener {
    /// `m x K` whitening matrix `U_K S_K^{-1/2}`.
    pub fn map(&self) -> &DMatrix<f64> {
        &self.map
    }

    /// Retained eigenvalues, descending and strictly positive.
    pub fn spectrum(&self) -> &DVector<f64> {
        &self.spectrum
    }

    /// Orthonormal eigenbasis `U_K`.
    pub fn basis(&self) -> &DMatrix<f64> {
        &self.basis
    }

    pub fn rank(&self) -> usize {
        self.spectrum.len()
    }

    /// `map^T x`.
    pub fn whiten(&self, x: &DVector<f64>) -> DVector<f64> {
        self.map.tr_mul(x)
    }

    /// Pseudo-inverse of `map^T`, i.e. `U_K S_K^{1/2}`; maps whitened
    /// coordinates back to the original space.
    pub fn unwhiten_matrix(&self) -> DMatrix<f64> {
        let mut out = self.basis.clone();
        for (mut col, s) in out.column_iter_mut().zip(self.spectrum.iter()) {
            col *= s.sqrt();
        }
        out
    }
}

pub fn build_whitener(m2: &Moment2, k: usize) -> Result<Whitener> {
    build_whitener_with_floor(m2, k, None)
}

pub fn build_whitener_with_floor(m2: &Moment2, k: usize, floor: Option<f64>) -> Result<Whitener> {
    let (values, vectors) = top_k_eigh(m2, k, floor)?;
    Ok(whitener_from_eig(values, vectors))
}

pub(crate) fn whitener_from_eig(values: DVector<f64>, vectors: DMatrix<f64>) -> Whitener {
    let mut map = vectors.clone();
    for (mut col, s) in map.column_iter_mut().zip(values.iter()) {
        col /= s.sqrt();
    }
    Whitener {
        map,
        spectrum: values,
        basis: vectors,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::Rng;

    fn random_symmetric(m: usize, seed: u64) -> DMatrix<f64> {
        let mut r = rng::stream(seed, 99);
        let a = DMatrix::from_fn(m, m, |_, _| r.random::<f64>() - 0.5);
        (&a + a.transpose()) * 0.5
    }

    #[test]
    fn diagonal_two_by_two() {
        let m2 = Moment2::new(DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])), 1).unwrap();
        let (vals, vecs) = top_k_eigh(&m2, 2, None).unwrap();
        assert_eq!(vals.as_slice(), &[4.0, 1.0]);
        assert_relative_eq!(vecs, DMatrix::identity(2, 2), epsilon = 1e-15);
    }

    #[test]
    fn rank_deficient_is_degenerate() {
        let m2 = Moment2::new(DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0, 1e-20])), 1).unwrap();
        let err = top_k_eigh(&m2, 3, Some(1e-12)).unwrap_err();
        assert!(matches!(err, Error::DegenerateSpectrum { k: 3, .. }));
    }

    #[test]
    fn random_symmetric_against_full_eigensolve() {
        // The oracle is a full dense eigensolve plus explicit residuals.
        let a = random_symmetric(10, 5);
        let shifted = &a + DMatrix::identity(10, 10) * 3.0;
        let m2 = Moment2::new(shifted.clone(), 1).unwrap();
        let (vals, vecs) = top_k_eigh(&m2, 3, None).unwrap();
        for j in 0..3 {
            let v = vecs.column(j);
            let r = &shifted * v - v * vals[j];
            assert!(r.norm() <= 1e-9, "residual {}", r.norm());
        }
        let gram = vecs.transpose() * &vecs;
        assert!((gram - DMatrix::identity(3, 3)).amax() <= 1e-10);
        assert!(vals[0] >= vals[1] && vals[1] >= vals[2]);
        let mut all: Vec<f64> = SymmetricEigen::new(shifted).eigenvalues.iter().copied().collect();
        all.sort_by(|a, b| b.total_cmp(a));
        for j in 0..3 {
            assert_relative_eq!(vals[j], all[j], epsilon = 1e-12);
        }
    }

    #[test]
    fn subspace_iteration_matches_dense() {
        // Low-rank PSD plus small noise, large enough to skip the dense path.
        let m = 450;
        let mut r = rng::stream(3, 1);
        let b = DMatrix::from_fn(m, 5, |_, _| r.random::<f64>() - 0.5);
        let a = &b * b.transpose() + DMatrix::identity(m, m) * 1e-3;
        let m2 = Moment2::new(a.clone(), 1).unwrap();
        let (vals, vecs) = top_k_eigh(&m2, 4, None).unwrap();
        let (dvals, _) = dense_top_k(&a, 4);
        for j in 0..4 {
            assert_relative_eq!(vals[j], dvals[j], max_relative = 1e-10);
            let v = vecs.column(j);
            assert!((&a * v - v * vals[j]).norm() <= 1e-8 * vals[0]);
        }
    }

    #[test]
    fn diagonal_whitening() {
        let m2 = Moment2::new(DMatrix::from_diagonal(&DVector::from_vec(vec![4.0, 1.0])), 1).unwrap();
        let w = build_whitener(&m2, 2).unwrap();
        assert_relative_eq!(
            w.map().clone(),
            DMatrix::from_diagonal(&DVector::from_vec(vec![0.5, 1.0])),
            epsilon = 1e-15
        );
    }

    #[test]
    fn identity_whitening_is_orthonormal() {
        let m2 = Moment2::new(DMatrix::identity(3, 3), 1).unwrap();
        let w = build_whitener(&m2, 3).unwrap();
        assert!((w.map().transpose() * w.map() - DMatrix::identity(3, 3)).amax() < 1e-12);
    }

    #[test]
    fn planted_discrete_mixture_whitening() {
        // M2 = P diag(pi) P^T built analytically from emission columns.
        let p = DMatrix::from_row_slice(4, 2, &[0.5, 0.1, 0.3, 0.1, 0.1, 0.3, 0.1, 0.5]);
        let pi = DVector::from_vec(vec![0.4, 0.6]);
        let m = &p * DMatrix::from_diagonal(&pi) * p.transpose();
        let m2 = Moment2::new(m.clone(), 1).unwrap();
        let w = build_whitener(&m2, 2).unwrap();
        let id = w.map().transpose() * m * w.map();
        assert!((id - DMatrix::identity(2, 2)).norm() <= 1e-8);
    }

    #[test]
    fn rejects_asymmetric() {
        let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.4, 1.0]);
        assert!(Moment2::new(m, 1).is_err());
    }
}

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Dense symmetric `K x K x K` tensor, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SymTensor3 {
    dim: usize,
    entries: Vec<f64>,
}

const PERMUTATIONS: [[usize; 3]; 6] = [
    [0, 1, 2],
    [0, 2, 1],
    [1, 0, 2],
    [1, 2, 0],
    [2, 0, 1],
    [2, 1, 0],
];

impl SymTensor3 {
    pub fn zeros(dim: usize) -> Self {
        Self {
            dim,
            entries: vec![0.0; dim * dim * dim],
        }
    }

    /// Builds from raw entries, rejecting anything that is not symmetric
    /// under all six index permutations (relative tolerance `1e-10`).
    pub fn from_entries(dim: usize, entries: Vec<f64>) -> Result<Self> {
        if entries.len() != dim * dim * dim {
            return Err(Error::DimensionMismatch {
                expected: dim * dim * dim,
                got: entries.len(),
            });
        }
        let t = Self { dim, entries };
        if !t.is_symmetric(1e-10) {
            return Err(Error::InvalidData("tensor is not symmetric".into()));
        }
        Ok(t)
    }

    /// Averages an arbitrary cube over the six index permutations.
    pub fn symmetrize(dim: usize, raw: &[f64]) -> Self {
        let mut t = Self::zeros(dim);
        for i in 0..dim {
            for j in 0..dim {
                for l in 0..dim {
                    let idx = [i, j, l];
                    let mut s = 0.0;
                    for p in PERMUTATIONS {
                        s += raw[(idx[p[0]] * dim + idx[p[1]]) * dim + idx[p[2]]];
                    }
                    t.entries[(i * dim + j) * dim + l] = s / 6.0;
                }
            }
        }
        t
    }

    /// `lambda * v ⊗ v ⊗ v`.
    pub fn rank_one(lambda: f64, v: &DVector<f64>) -> Self {
        let mut t = Self::zeros(v.len());
        t.add_rank_one(lambda, v);
        t
    }

    pub fn add_rank_one(&mut self, lambda: f64, v: &DVector<f64>) {
        let k = self.dim;
        assert_eq!(v.len(), k);
        for i in 0..k {
            let a = lambda * v[i];
            for j in 0..k {
                let b = a * v[j];
                let row = &mut self.entries[(i * k + j) * k..(i * k + j + 1) * k];
                for (x, vl) in row.iter_mut().zip(v.iter()) {
                    *x += b * vl;
                }
            }
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn get(&self, i: usize, j: usize, l: usize) -> f64 {
        self.entries[(i * self.dim + j) * self.dim + l]
    }

    pub fn entries(&self) -> &[f64] {
        &self.entries
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.entries.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    pub fn is_symmetric(&self, rel_tol: f64) -> bool {
        let k = self.dim;
        let scale = self.entries.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let tol = rel_tol * scale.max(f64::MIN_POSITIVE);
        for i in 0..k {
            for j in 0..k {
                for l in 0..k {
                    let x = self.get(i, j, l);
                    let idx = [i, j, l];
                    for p in PERMUTATIONS {
                        if (x - self.get(idx[p[0]], idx[p[1]], idx[p[2]])).abs() > tol {
                            return false;
                        }
                    }
                }
            }
        }
        true
    }

    /// The vector `T(I, v, v)`, with entries `sum_{j,l} T[i,j,l] v_j v_l`.
    pub fn contract(&self, v: &DVector<f64>) -> Result<DVector<f64>> {
        let k = self.dim;
        if v.len() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: v.len(),
            });
        }
        let mut out = DVector::zeros(k);
        for i in 0..k {
            let mut acc = 0.0;
            for j in 0..k {
                let row = &self.entries[(i * k + j) * k..(i * k + j + 1) * k];
                let inner: f64 = row.iter().zip(v.iter()).map(|(t, x)| t * x).sum();
                acc += v[j] * inner;
            }
            out[i] = acc;
        }
        Ok(out)
    }

    /// The scalar `T(v, v, v)`.
    pub fn contract_full(&self, v: &DVector<f64>) -> Result<f64> {
        Ok(self.contract(v)?.dot(v))
    }

    pub(crate) fn deflate(&mut self, lambda: f64, v: &DVector<f64>) {
        self.add_rank_one(-lambda, v);
    }
}

/// Symmetric third moment of whitened view triples.
///
/// Rows of `x1`, `x2`, `x3` are the whitened features of the three views of
/// one sample. The result averages the outer products over samples and over
/// all six orderings of the three views.
pub fn whitened_third_moment(
    x1: &DMatrix<f64>,
    x2: &DMatrix<f64>,
    x3: &DMatrix<f64>,
) -> Result<SymTensor3> {
    let n = x1.nrows();
    let k = x1.ncols();
    for x in [x2, x3] {
        if x.nrows() != n {
            return Err(Error::DimensionMismatch {
                expected: n,
                got: x.nrows(),
            });
        }
        if x.ncols() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: x.ncols(),
            });
        }
    }
    if n == 0 {
        return Err(Error::EmptyInput("third moment"));
    }
    // raw[i,j,l] = sum_s x1[s,i] x2[s,j] x3[s,l], accumulated as
    // sum_i e_i ⊗ (X2^T diag(x1[:,i]) X3).
    let mut raw = vec![0.0; k * k * k];
    let mut scaled = x3.clone();
    for i in 0..k {
        for s in 0..n {
            let w = x1[(s, i)];
            for l in 0..k {
                scaled[(s, l)] = w * x3[(s, l)];
            }
        }
        let slab = x2.tr_mul(&scaled);
        for j in 0..k {
            for l in 0..k {
                raw[(i * k + j) * k + l] = slab[(j, l)];
            }
        }
    }
    let mut t = SymTensor3::symmetrize(k, &raw);
    let inv_n = 1.0 / n as f64;
    t.entries.iter_mut().for_each(|x| *x *= inv_n);
    Ok(t)
}

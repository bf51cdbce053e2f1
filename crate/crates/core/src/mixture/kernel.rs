use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::data::Points;
use crate::error::{Error, Result};
use crate::rng;
use crate::spectral::top_k_eigh_op;

/// Subsample size for the median heuristic.
const MEDIAN_SUBSAMPLE: usize = 1000;
pub const DEFAULT_LANDMARKS: usize = 1000;
pub const MAX_JITTER: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelFamily {
    GaussianRbf,
}

/// How the RBF bandwidth is chosen.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum Bandwidth {
    Fixed { value: f64 },
    /// Median pairwise distance over a seeded subsample, times `scale`.
    MedianHeuristic { scale: f64 },
    /// `c * n^(-1 / (2b + 7d))`.
    PowerRule { c: f64, b: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelSpec {
    pub family: KernelFamily,
    pub bandwidth: Bandwidth,
    /// Anchor budget per view; `None` means [`DEFAULT_LANDMARKS`].
    pub landmarks: Option<usize>,
}

impl Default for KernelSpec {
    fn default() -> Self {
        Self {
            family: KernelFamily::GaussianRbf,
            bandwidth: Bandwidth::MedianHeuristic { scale: 1.0 },
            landmarks: None,
        }
    }
}

impl KernelSpec {
    pub fn fixed(bandwidth: f64) -> Self {
        Self {
            bandwidth: Bandwidth::Fixed { value: bandwidth },
            ..Self::default()
        }
    }

    pub fn with_landmarks(mut self, landmarks: usize) -> Self {
        self.landmarks = Some(landmarks);
        self
    }

    pub fn landmark_budget(&self) -> usize {
        self.landmarks.unwrap_or(DEFAULT_LANDMARKS).max(1)
    }

    /// Resolves the bandwidth rule on the pooled views.
    pub fn resolve(&self, views: &[&Points], seed: u64) -> Result<RbfKernel> {
        let n = views.first().map(|v| v.len()).unwrap_or(0);
        let d = views.first().map(|v| v.dim()).unwrap_or(1);
        let s = match self.bandwidth {
            Bandwidth::Fixed { value } => value,
            Bandwidth::MedianHeuristic { scale } => scale * median_heuristic(views, seed)?,
            Bandwidth::PowerRule { c, b } => power_rule(c, b, n, d),
        };
        RbfKernel::new(s)
    }
}

/// Gaussian RBF kernel `exp(-|x - y|^2 / (2 s^2))` with a resolved bandwidth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RbfKernel {
    bandwidth: f64,
}

impl RbfKernel {
    pub fn new(bandwidth: f64) -> Result<Self> {
        if !(bandwidth > 0.0 && bandwidth.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "bandwidth must be positive and finite, got {bandwidth}"
            )));
        }
        Ok(Self { bandwidth })
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        let d2: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
        (-d2 / (2.0 * self.bandwidth * self.bandwidth)).exp()
    }

    /// Kernel matrix with entries `k(x_i, y_j)`.
    pub fn gram(&self, x: &Points, y: &Points) -> DMatrix<f64> {
        let inv = -1.0 / (2.0 * self.bandwidth * self.bandwidth);
        let mut g = DMatrix::zeros(x.len(), y.len());
        for (j, yj) in y.rows().enumerate() {
            let mut col = g.column_mut(j);
            for (i, xi) in x.rows().enumerate() {
                let d2: f64 = xi.iter().zip(yj).map(|(a, b)| (a - b) * (a - b)).sum();
                col[i] = (d2 * inv).exp();
            }
        }
        g
    }

    /// Symmetric Gram matrix of one point set; exactly symmetric with unit
    /// diagonal.
    pub fn gram_sym(&self, x: &Points) -> DMatrix<f64> {
        let n = x.len();
        let mut g = DMatrix::identity(n, n);
        for j in 0..n {
            for i in (j + 1)..n {
                let v = self.eval(x.row(i), x.row(j));
                g[(i, j)] = v;
                g[(j, i)] = v;
            }
        }
        g
    }
}

pub fn gram(kernel: &RbfKernel, x: &Points, y: &Points) -> DMatrix<f64> {
    kernel.gram(x, y)
}

/// Median pairwise distance over at most 1000 pooled points.
pub fn median_heuristic(views: &[&Points], seed: u64) -> Result<f64> {
    let total: usize = views.iter().map(|v| v.len()).sum();
    if total < 2 {
        return Err(Error::EmptyInput("median heuristic needs at least two points"));
    }
    let mut rng = rng::stream(seed, rng::streams::BANDWIDTH);
    let picks: Vec<usize> = if total > MEDIAN_SUBSAMPLE {
        let mut p = index::sample(&mut rng, total, MEDIAN_SUBSAMPLE).into_vec();
        p.sort_unstable();
        p
    } else {
        (0..total).collect()
    };
    let lookup = |mut g: usize| -> &[f64] {
        for v in views {
            if g < v.len() {
                return v.row(g);
            }
            g -= v.len();
        }
        unreachable!()
    };
    let mut dists = Vec::with_capacity(picks.len() * (picks.len() - 1) / 2);
    for (a, &i) in picks.iter().enumerate() {
        for &j in &picks[a + 1..] {
            let (x, y) = (lookup(i), lookup(j));
            dists.push(x.iter().zip(y).map(|(p, q)| (p - q) * (p - q)).sum::<f64>().sqrt());
        }
    }
    let mid = dists.len() / 2;
    let (_, m, _) = dists.select_nth_unstable_by(mid, f64::total_cmp);
    let m = *m;
    if m > 0.0 {
        Ok(m)
    } else {
        Err(Error::InvalidData("median pairwise distance is zero".into()))
    }
}

pub fn power_rule(c: f64, b: f64, n: usize, d: usize) -> f64 {
    c * (n.max(1) as f64).powf(-1.0 / (2.0 * b + 7.0 * d as f64))
}

/// Cholesky factor of a PSD matrix with a jitter ladder.
#[derive(Debug, Clone)]
pub struct CholFactor {
    /// Lower-triangular `l` with `l l^T = G + jitter I`. The upper factor
    /// `R = l^T` satisfies `R^T R = G + jitter I`.
    pub lower: DMatrix<f64>,
    pub jitter: f64,
}

/// Factors `G + jitter I`, multiplying the jitter by 10 on failure until it
/// would exceed `1e-4`. A zero starting jitter escalates through `1e-12`.
pub fn chol_psd(g: &DMatrix<f64>, jitter: f64) -> Result<CholFactor> {
    if !g.is_square() {
        return Err(Error::DimensionMismatch {
            expected: g.nrows(),
            got: g.ncols(),
        });
    }
    let n = g.nrows();
    let mut j = jitter.max(0.0);
    loop {
        let mut m = g.clone();
        for i in 0..n {
            m[(i, i)] += j;
        }
        if let Some(c) = Cholesky::<f64, Dyn>::new(m) {
            return Ok(CholFactor {
                lower: c.unpack(),
                jitter: j,
            });
        }
        j = if j == 0.0 { 1e-12 } else { j * 10.0 };
        if j > MAX_JITTER * (1.0 + 1e-9) {
            return Err(Error::NotPsd { jitter: j / 10.0 });
        }
    }
}

/// Leading singular structure of the cross-covariance operator
/// `C_ab = (1/n) sum_i rho(a_i) ⊗ rho(b_i)`, computed through Gram matrices.
#[derive(Debug, Clone)]
pub(crate) struct CrossSpectrum {
    /// Singular values, descending.
    pub values: DVector<f64>,
    /// `u_j = sum_i left[i,j] rho(a_i)`.
    pub left: DMatrix<f64>,
    /// `v_j = sum_i right[i,j] rho(b_i)`.
    pub right: DMatrix<f64>,
}

/// Top-`k` singular triplets of the empirical cross-covariance between two
/// paired point sets.
///
/// With `K_b = R^T R`, the right singular vectors `v = Phi_b beta` solve
/// `(1/n^2) R K_a R^T beta~ = s^2 beta~` with `beta = R^{-1} beta~`, and
/// the left ones are `u = C v / s`.
pub(crate) fn cross_spectrum(
    kernel: &RbfKernel,
    a: &Points,
    b: &Points,
    k: usize,
    seed: u64,
) -> Result<CrossSpectrum> {
    let n = a.len();
    if n == 0 {
        return Err(Error::EmptyInput("cross spectrum"));
    }
    let k = k.min(n);
    let ka = kernel.gram_sym(a);
    let kb = kernel.gram_sym(b);
    let chol = chol_psd(&kb, 1e-10)?;
    let l = &chol.lower;
    let scale = 1.0 / (n as f64 * n as f64);
    let apply = |q: &DMatrix<f64>| -> DMatrix<f64> {
        // R K_a R^T q with R = l^T
        let t = l * q;
        let t = &ka * t;
        l.tr_mul(&t) * scale
    };
    let (eig, vecs) = top_k_eigh_op(apply, n, k, seed);
    let values = eig.map(|x| x.max(0.0).sqrt());
    let lt = l.transpose();
    let right = lt
        .solve_upper_triangular(&vecs)
        .ok_or(Error::NotPsd { jitter: chol.jitter })?;
    // u = (1/n) Phi_a K_b beta / s, and K_b beta ~= R^T beta~ = l beta~
    let mut left = l * &vecs / n as f64;
    for (mut col, s) in left.column_iter_mut().zip(values.iter()) {
        if *s > 0.0 {
            col /= *s;
        }
    }
    Ok(CrossSpectrum {
        values,
        left,
        right,
    })
}

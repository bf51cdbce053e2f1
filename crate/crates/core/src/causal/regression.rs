use log::warn;
use nalgebra::{Cholesky, DMatrix, DVector};

use crate::error::{Error, Result};

/// Ridge values tried in order when the normal equations are singular.
pub const RIDGE_LADDER: [f64; 3] = [0.0, 1e-8, 1e-6];
/// Smallest accepted `(min diag / max diag)^2` of the Cholesky factor.
const MIN_RCOND: f64 = 1e-13;

/// Per-component coefficient blocks of a mixture of linear regressions.
#[derive(Debug, Clone, PartialEq)]
pub struct StackedFit {
    /// `K x p`, row `u` is the block of component `u`.
    pub coef: DMatrix<f64>,
    /// Ridge actually used.
    pub ridge: f64,
}

impl StackedFit {
    pub fn escalated(&self) -> bool {
        self.ridge > 0.0
    }
}

/// Solves `(X^T X + ridge I) theta = X^T t` for the first ridge on
/// [`RIDGE_LADDER`] at or above `ridge` that gives a well-conditioned
/// factorization.
pub fn solve_normal_equations(
    gram: &DMatrix<f64>,
    rhs: &DVector<f64>,
    ridge: f64,
    stage: &'static str,
) -> Result<(DVector<f64>, f64)> {
    let p = gram.nrows();
    let mut tried = ridge;
    let ladder = std::iter::once(ridge).chain(RIDGE_LADDER.into_iter().filter(|&r| r > ridge));
    for r in ladder {
        tried = r;
        let mut g = gram.clone();
        for i in 0..p {
            g[(i, i)] += r;
        }
        let Some(chol) = Cholesky::new(g) else { continue };
        let l = chol.l_dirty();
        let (lo, hi) = (0..p).fold((f64::INFINITY, 0.0f64), |(lo, hi), i| {
            let d = l[(i, i)].abs();
            (lo.min(d), hi.max(d))
        });
        if !(lo * lo >= MIN_RCOND * hi * hi) {
            continue;
        }
        if r > ridge {
            warn!("{stage}: normal equations singular, ridge escalated to {r:e}");
        }
        return Ok((chol.solve(rhs), r));
    }
    Err(Error::SingularSystem { stage, ridge: tried })
}

/// Mixture-of-regressions least squares: the target of row `i` is modeled
/// as `sum_u w[i,u] * features[i]^T theta_u`, i.e. ordinary least squares on
/// the stacked features `w_i ⊗ features_i`.
pub fn stacked_least_squares(
    weights: &DMatrix<f64>,
    features: &DMatrix<f64>,
    target: &[f64],
    ridge: f64,
    stage: &'static str,
) -> Result<StackedFit> {
    let n = features.nrows();
    let (k, p) = (weights.ncols(), features.ncols());
    if weights.nrows() != n || target.len() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: weights.nrows().min(target.len()),
        });
    }
    if n == 0 {
        return Err(Error::EmptyInput("regression rows"));
    }
    let x = DMatrix::from_fn(n, k * p, |i, c| weights[(i, c / p)] * features[(i, c % p)]);
    let gram = x.tr_mul(&x);
    let rhs = x.tr_mul(&DVector::from_column_slice(target));
    let (theta, used) = solve_normal_equations(&gram, &rhs, ridge, stage)?;
    Ok(StackedFit {
        coef: DMatrix::from_fn(k, p, |u, j| theta[u * p + j]),
        ridge: used,
    })
}

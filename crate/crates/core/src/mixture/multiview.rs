//! Mixture learning from three conditionally independent views with
//! different component distributions.
//!
//! Each view is first projected onto `K` directions taken from the leading
//! singular vectors of a cross-covariance (kernel views use the RBF feature
//! space, categorical views their one-hot encoding). Views 1 and 2 are then
//! mapped into view 3's coordinates with `C32 C12^-1` and `C31 C21^-1`,
//! which makes the second and third cross moments symmetric with components
//! given by the view-3 means. After whitening and the tensor power method,
//! per-sample readout weights express every conditional expectation
//! `E[g(Z_v) | U = u]` as a weighted sum over the sample.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;

use super::estimate::{
    priors_from_lambdas, BackendKind, KernelView, MixtureDiagnostics, MixtureEstimate, ViewModel,
    DEFAULT_DENSITY_FLOOR,
};
use super::kernel::{cross_spectrum, KernelSpec};
use crate::data::Points;
use crate::error::{Error, Result};
use crate::rng;
use crate::spectral::{
    build_whitener, robust_power_method, whitened_third_moment, Moment2, PowerConfig,
    DEFAULT_RELATIVE_FLOOR,
};

/// Output of the projected-moment solver.
#[derive(Debug, Clone)]
pub(crate) struct ProjectedSolution {
    pub lambdas: Vec<f64>,
    /// `n x K` per-sample weights for each view; every column sums to one.
    pub readout: [DMatrix<f64>; 3],
    pub spectrum: Vec<f64>,
    pub residual: f64,
}

fn check_singular_values(m: &DMatrix<f64>, stage: &'static str) -> Result<()> {
    let sv = m.singular_values();
    let top = sv.max();
    let low = sv.min();
    let floor = DEFAULT_RELATIVE_FLOOR * top;
    if !(low > floor) {
        return Err(Error::RankDeficiency {
            stage,
            k: sv.len(),
            value: low,
            floor,
        });
    }
    Ok(())
}

fn invert(m: &DMatrix<f64>, stage: &'static str) -> Result<DMatrix<f64>> {
    check_singular_values(m, stage)?;
    m.clone().try_inverse().ok_or(Error::RankDeficiency {
        stage,
        k: m.nrows(),
        value: 0.0,
        floor: 0.0,
    })
}

/// Readout weights `y (N^-1)^T`, columns normalized to sum to one.
fn readout(y: &DMatrix<f64>, means: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let inv_t = invert(means, "readout")?.transpose();
    let mut r = y * inv_t;
    for (u, mut col) in r.column_iter_mut().enumerate() {
        let s = col.sum();
        if !(s > 0.0) {
            return Err(Error::DegenerateCluster { component: u, mass: s });
        }
        col /= s;
    }
    Ok(r)
}

/// Solves the mixture from `n x K` projections of the three views.
pub(crate) fn solve_projected(
    y: [&DMatrix<f64>; 3],
    k: usize,
    power: &PowerConfig,
    seed: u64,
) -> Result<ProjectedSolution> {
    let n = y[0].nrows();
    if n == 0 {
        return Err(Error::EmptyInput("views"));
    }
    for v in y {
        if v.nrows() != n || v.ncols() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: v.ncols(),
            });
        }
    }
    let nf = n as f64;
    let cross = |a: &DMatrix<f64>, b: &DMatrix<f64>| a.tr_mul(b) / nf;
    let c12 = cross(y[0], y[1]);
    let c13 = cross(y[0], y[2]);
    let c32 = cross(y[2], y[1]);
    let c31 = c13.transpose();
    let c21 = c12.transpose();

    // rows: y~1_i^T = y1_i^T (C32 C12^-1)^T
    let t1 = &c32 * invert(&c12, "cross moment C12")?;
    let t2 = &c31 * invert(&c21, "cross moment C21")?;
    let y1 = y[0] * t1.transpose();
    let y2 = y[1] * t2.transpose();

    let m2 = Moment2::symmetrized_cross(&y1, &y2)?;
    let whitener = build_whitener(&m2, k)?;
    let w = whitener.map();
    let t = whitened_third_moment(&(&y1 * w), &(&y2 * w), &(y[2] * w))?;
    let eig = robust_power_method(&t, k, power, seed)?;

    // view-3 component means: U S^{1/2} v_u lambda_u
    let back = whitener.unwhiten_matrix();
    let mut n3 = DMatrix::zeros(k, k);
    for (u, (v, l)) in eig.vectors.iter().zip(&eig.lambdas).enumerate() {
        n3.set_column(u, &(&back * v * *l));
    }
    let r3 = readout(y[2], &n3)?;
    let n1 = y[0].tr_mul(&r3);
    let r1 = readout(y[0], &n1)?;
    Ok(ProjectedSolution {
        lambdas: eig.lambdas,
        readout: [r3.clone(), r3, r1],
        spectrum: whitener.spectrum().iter().copied().collect(),
        residual: eig.residual,
    })
}

fn floor_check(values: &DVector<f64>, k: usize) -> Result<()> {
    if values.len() < k {
        return Err(Error::DegenerateSpectrum {
            k,
            value: 0.0,
            floor: 0.0,
        });
    }
    let floor = DEFAULT_RELATIVE_FLOOR * values[0];
    if !(values[k - 1] > floor) {
        return Err(Error::DegenerateSpectrum {
            k,
            value: values[k - 1],
            floor,
        });
    }
    Ok(())
}

/// Seeded subsample of `m` of `n` indices, sorted; all indices if `m >= n`.
pub(crate) fn subsample(n: usize, m: usize, seed: u64) -> Vec<usize> {
    if m >= n {
        return (0..n).collect();
    }
    let mut r = rng::stream(seed, rng::streams::LANDMARKS);
    let mut idx = index::sample(&mut r, n, m).into_vec();
    idx.sort_unstable();
    idx
}

/// Kernel multi-view fit of a `k`-component mixture.
///
/// Cross-covariance singular vectors are computed on at most
/// `kernel.landmark_budget()` samples; the same subsample becomes the
/// anchor set of the fitted conditional embeddings.
pub fn fit_multiview(
    views: [&Points; 3],
    k: usize,
    kernel: &KernelSpec,
    power: &PowerConfig,
    seed: u64,
) -> Result<MixtureEstimate> {
    let n = views[0].len();
    if n == 0 {
        return Err(Error::EmptyInput("views"));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    for v in &views[1..] {
        if v.len() != n || v.dim() != views[0].dim() {
            return Err(Error::InvalidData("views disagree in shape".into()));
        }
    }
    let rbf = kernel.resolve(&views, seed)?;
    let idx = subsample(n, kernel.landmark_budget(), seed);
    let sub: Vec<Points> = views.iter().map(|v| v.select(&idx)).collect();

    let s12 = cross_spectrum(&rbf, &sub[0], &sub[1], k, seed)?;
    floor_check(&s12.values, k)?;
    let s13 = cross_spectrum(&rbf, &sub[0], &sub[2], k, seed)?;
    floor_check(&s13.values, k)?;
    let y1 = rbf.gram(views[0], &sub[0]) * &s12.left;
    let y2 = rbf.gram(views[1], &sub[1]) * &s12.right;
    let y3 = rbf.gram(views[2], &sub[2]) * &s13.right;

    let sol = solve_projected([&y1, &y2, &y3], k, power, seed)?;
    let (raw, priors, clamped) = priors_from_lambdas(&sol.lambdas);

    let mut models = Vec::with_capacity(3);
    let mut means = Vec::with_capacity(3);
    for v in 0..3 {
        let r = &sol.readout[v];
        means.push(r.tr_mul(&views[v].to_matrix()));
        let mut coef = DMatrix::from_fn(idx.len(), k, |j, u| r[(idx[j], u)]);
        for (u, mut col) in coef.column_iter_mut().enumerate() {
            let s = col.sum();
            if !(s > 0.0) {
                return Err(Error::DegenerateCluster { component: u, mass: s });
            }
            col /= s;
        }
        models.push(ViewModel::Kernel(KernelView {
            anchors: sub[v].clone(),
            coefficients: coef,
        }));
    }
    let [m0, m1, m2]: [ViewModel; 3] = models.try_into().expect("three views");
    let [a0, a1, a2]: [DMatrix<f64>; 3] = means.try_into().expect("three views");
    Ok(MixtureEstimate {
        priors,
        lambdas: sol.lambdas,
        raw_priors: raw,
        backend: BackendKind::Kernel,
        kernel: Some(rbf),
        views: [m0, m1, m2],
        component_means: Some([a0, a1, a2]),
        density_floor: DEFAULT_DENSITY_FLOOR,
        diagnostics: MixtureDiagnostics {
            method: "kernel_multiview".into(),
            tensor_residual: sol.residual,
            whitening_spectrum: sol.spectrum,
            clamped_priors: clamped,
            cholesky_jitter: 0.0,
        },
    })
}

/// `n x S` one-hot encoding.
pub(crate) fn one_hot(levels: &[usize], s: usize) -> DMatrix<f64> {
    let mut x = DMatrix::zeros(levels.len(), s);
    for (i, &l) in levels.iter().enumerate() {
        x[(i, l)] = 1.0;
    }
    x
}

/// Leading `k` singular triplets of a dense matrix, descending.
fn top_svd(m: &DMatrix<f64>, k: usize) -> (DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
    let svd = m.clone().svd(true, true);
    let u = svd.u.expect("requested u");
    let vt = svd.v_t.expect("requested v_t");
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&i, &j| svd.singular_values[j].total_cmp(&svd.singular_values[i]));
    let k = k.min(order.len());
    let values = DVector::from_iterator(k, order[..k].iter().map(|&i| svd.singular_values[i]));
    let left = DMatrix::from_fn(m.nrows(), k, |r, c| u[(r, order[c])]);
    let right = DMatrix::from_fn(m.ncols(), k, |r, c| vt[(order[c], r)]);
    (values, left, right)
}

/// Multi-view fit for three categorical variables with `levels` values each.
/// Components are column-stochastic emission matrices.
pub fn fit_discrete_multiview(
    views: [&[usize]; 3],
    levels: usize,
    k: usize,
    power: &PowerConfig,
    seed: u64,
) -> Result<MixtureEstimate> {
    let n = views[0].len();
    if n == 0 {
        return Err(Error::EmptyInput("views"));
    }
    if k == 0 {
        return Err(Error::InvalidConfig("k must be at least 1".into()));
    }
    if views.iter().any(|v| v.len() != n) {
        return Err(Error::InvalidData("views have different row counts".into()));
    }
    if let Some(&bad) = views.iter().flat_map(|v| v.iter()).find(|&&l| l >= levels) {
        return Err(Error::InvalidData(format!("level {bad} outside 0..{levels}")));
    }
    if k > levels {
        return Err(Error::RankDeficiency {
            stage: "one-hot cross moment",
            k,
            value: 0.0,
            floor: 0.0,
        });
    }
    let x: Vec<DMatrix<f64>> = views.iter().map(|v| one_hot(v, levels)).collect();
    let nf = n as f64;
    let (s12, u1, v2) = top_svd(&(x[0].tr_mul(&x[1]) / nf), k);
    let (s13, _, v3) = top_svd(&(x[0].tr_mul(&x[2]) / nf), k);
    for s in [&s12, &s13] {
        let floor = DEFAULT_RELATIVE_FLOOR * s[0];
        if !(s[k - 1] > floor) {
            return Err(Error::RankDeficiency {
                stage: "one-hot cross moment",
                k,
                value: s[k - 1],
                floor,
            });
        }
    }
    let y1 = &x[0] * u1;
    let y2 = &x[1] * v2;
    let y3 = &x[2] * v3;
    let sol = solve_projected([&y1, &y2, &y3], k, power, seed)?;
    let (raw, priors, clamped) = priors_from_lambdas(&sol.lambdas);
    let floor = DEFAULT_DENSITY_FLOOR;
    let emission = |v: usize| {
        let mut p = x[v].tr_mul(&sol.readout[v]);
        for mut col in p.column_iter_mut() {
            col.apply(|e| *e = e.max(floor));
            let s = col.sum();
            col /= s;
        }
        ViewModel::Discrete(p)
    };
    Ok(MixtureEstimate {
        priors,
        lambdas: sol.lambdas.clone(),
        raw_priors: raw,
        backend: BackendKind::Discrete,
        kernel: None,
        views: [emission(0), emission(1), emission(2)],
        component_means: None,
        density_floor: floor,
        diagnostics: MixtureDiagnostics {
            method: "discrete_multiview".into(),
            tensor_residual: sol.residual,
            whitening_spectrum: sol.spectrum,
            clamped_priors: clamped,
            cholesky_jitter: 0.0,
        },
    })
}

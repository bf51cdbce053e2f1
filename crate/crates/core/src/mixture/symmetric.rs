//! Kernel spectral learning when all three views share one component
//! distribution per class.

use nalgebra::DMatrix;

use super::estimate::{
    priors_from_lambdas, BackendKind, KernelView, MixtureDiagnostics, MixtureEstimate, ViewModel,
    DEFAULT_DENSITY_FLOOR,
};
use super::kernel::{chol_psd, KernelSpec};
use super::multiview::subsample;
use crate::data::Points;
use crate::error::{Error, Result};
use crate::spectral::{
    check_floor, robust_power_method, top_k_eigh_op, whitened_third_moment, PowerConfig,
};

/// Fits a `k`-component mixture whose views are exchangeable.
///
/// Pairs `(z1_i, z2_i)` from a seeded subsample of at most
/// `kernel.landmark_budget()` records are stacked into `2n'` anchors. With
/// `Omega` their Gram matrix and `L` the same matrix with the two halves
/// swapped, the leading eigenvectors of `R L R^T / 4n'^2` (`Omega = R^T R`)
/// give the whitening coordinates. Each component is returned as a
/// weighted sum of kernel functions at the anchors.
pub fn fit_symmetric_spectral(
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
    let m = idx.len();
    let mut stacked = views[0].select(&idx).as_slice().to_vec();
    stacked.extend_from_slice(views[1].select(&idx).as_slice());
    let anchors = Points::new(views[0].dim(), stacked)?;

    let omega = rbf.gram_sym(&anchors);
    let chol = chol_psd(&omega, 1e-10)?;
    let l = &chol.lower;
    let swap = |q: &DMatrix<f64>| {
        let mut out = q.clone();
        out.rows_mut(0, m).copy_from(&q.rows(m, m));
        out.rows_mut(m, m).copy_from(&q.rows(0, m));
        out
    };
    let scale = 1.0 / (4.0 * (m * m) as f64);
    // R L R^T q with R = l^T and L = P Omega P
    let apply = |q: &DMatrix<f64>| l.tr_mul(&swap(&(&omega * swap(&(l * q))))) * scale;
    let (eig, vecs) = top_k_eigh_op(apply, 2 * m, k.min(2 * m), seed);
    if eig.len() < k {
        return Err(Error::DegenerateSpectrum {
            k,
            value: 0.0,
            floor: 0.0,
        });
    }
    check_floor(&eig, None)?;
    let gamma = l
        .transpose()
        .solve_upper_triangular(&vecs)
        .ok_or(Error::NotPsd { jitter: chol.jitter })?;
    // S_K holds singular values of the symmetrized covariance; the
    // eigenvalues above are their squares.
    let s: Vec<f64> = eig.iter().map(|e| e.sqrt()).collect();

    let features = |p: &Points| {
        let mut xi = rbf.gram(p, &anchors) * &gamma;
        for (mut col, sv) in xi.column_iter_mut().zip(&s) {
            col /= sv.sqrt();
        }
        xi
    };
    let t = whitened_third_moment(&features(views[0]), &features(views[1]), &features(views[2]))?;
    let dec = robust_power_method(&t, k, power, seed)?;
    let (raw, priors, clamped) = priors_from_lambdas(&dec.lambdas);

    let mut coef = DMatrix::zeros(2 * m, k);
    for (u, (v, lam)) in dec.vectors.iter().zip(&dec.lambdas).enumerate() {
        let scaled = DMatrix::from_fn(k, 1, |j, _| v[j] * s[j].sqrt() * lam);
        coef.set_column(u, &(&gamma * scaled).column(0));
    }
    let anchor_matrix = anchors.to_matrix();
    let mut means = DMatrix::zeros(k, anchors.dim());
    for u in 0..k {
        let c = coef.column(u);
        let mass = c.sum();
        means.set_row(u, &((c.transpose() * &anchor_matrix) / mass));
    }
    let view = ViewModel::Kernel(KernelView {
        anchors,
        coefficients: coef,
    });
    Ok(MixtureEstimate {
        priors,
        lambdas: dec.lambdas,
        raw_priors: raw,
        backend: BackendKind::Kernel,
        kernel: Some(rbf),
        views: [view.clone(), view.clone(), view],
        component_means: Some([means.clone(), means.clone(), means]),
        density_floor: DEFAULT_DENSITY_FLOOR,
        diagnostics: MixtureDiagnostics {
            method: "kernel_symmetric".into(),
            tensor_residual: dec.residual,
            whitening_spectrum: eig.iter().copied().collect(),
            clamped_priors: clamped,
            cholesky_jitter: chol.jitter,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;
    use rand_distr::{Distribution, Normal};

    fn symmetric_sample(n: usize, seed: u64) -> [Points; 3] {
        let mut r = rng::stream(seed, 0);
        let noise = Normal::new(0.0, 0.4).unwrap();
        let mut rows: [Vec<Vec<f64>>; 3] = Default::default();
        for _ in 0..n {
            let c = if r.random::<f64>() < 0.5 { -2.0 } else { 2.0 };
            for rv in rows.iter_mut() {
                rv.push(vec![c + noise.sample(&mut r)]);
            }
        }
        rows.map(|rv| Points::from_rows(&rv).unwrap())
    }

    #[test]
    fn priors_equal_inverse_squared_lambdas() {
        let v = symmetric_sample(600, 1);
        let est = fit_symmetric_spectral(
            [&v[0], &v[1], &v[2]],
            2,
            &KernelSpec::fixed(0.6).with_landmarks(300),
            &PowerConfig::default(),
            3,
        )
        .unwrap();
        for (raw, l) in est.raw_priors.iter().zip(&est.lambdas) {
            assert!((raw - l.powi(-2)).abs() <= 1e-12);
        }
        for p in &est.priors {
            assert!((p - 0.5).abs() < 0.1, "{:?}", est.priors);
        }
        let m = &est.component_means.as_ref().unwrap()[0];
        let (lo, hi) = (m[(0, 0)].min(m[(1, 0)]), m[(0, 0)].max(m[(1, 0)]));
        assert!((lo + 2.0).abs() < 0.3 && (hi - 2.0).abs() < 0.3, "{m}");
    }
}

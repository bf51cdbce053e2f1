//! Causal effects from three conditionally independent categorical
//! treatments, with the treatments themselves acting as the views of the
//! latent class.

use nalgebra::DMatrix;

use super::features::FeatureMap;
use super::regression::{stacked_least_squares, StackedFit};
use crate::data::TreatmentData;
use crate::error::{Error, Result};
use crate::mixture::{fit_discrete_multiview, MixtureEstimate, PosteriorMatrix, ViewInput};
use crate::spectral::PowerConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct MultiTreatmentModel {
    pub priors: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub raw_priors: Vec<f64>,
    /// Per-treatment `S x K` emission matrices.
    pub emissions: [DMatrix<f64>; 3],
    /// `K x M`, row `u` is `gamma_u`.
    pub gamma: DMatrix<f64>,
    pub xi: FeatureMap,
    pub ridge: f64,
}

#[derive(Debug, Clone)]
pub struct MultiTreatmentFit {
    pub model: MultiTreatmentModel,
    pub mixture: MixtureEstimate,
    pub posteriors: PosteriorMatrix,
}

/// Stacked regression of the outcome on `xi(A)` with posterior weights.
pub fn fit_gamma(data: &TreatmentData, w: &PosteriorMatrix, xi: &FeatureMap, ridge: f64) -> Result<StackedFit> {
    if w.n() != data.len() {
        return Err(Error::DimensionMismatch {
            expected: data.len(),
            got: w.n(),
        });
    }
    xi.validate(3, 0)?;
    let n = data.len();
    let mut x = DMatrix::zeros(n, xi.len());
    for i in 0..n {
        for (j, v) in xi.eval(&data.treatment_vector(i), &[]).into_iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    stacked_least_squares(&w.weights, &x, &data.outcome, ridge, "outcome")
}

/// Learns the latent mixture from the three treatments, then regresses the
/// outcome on `xi(A)` with the posterior membership weights.
pub fn fit_multitreatment(
    data: &TreatmentData,
    k: usize,
    xi: &FeatureMap,
    power: &PowerConfig,
    seed: u64,
) -> Result<MultiTreatmentFit> {
    if data.is_empty() {
        return Err(Error::EmptyInput("dataset"));
    }
    let t = &data.treatments;
    let mixture = fit_discrete_multiview([&t[0], &t[1], &t[2]], data.levels, k, power, seed)?;
    let posteriors = mixture.posteriors([
        ViewInput::Categorical(&t[0]),
        ViewInput::Categorical(&t[1]),
        ViewInput::Categorical(&t[2]),
    ])?;
    let fit = fit_gamma(data, &posteriors, xi, 0.0)?;
    let emissions = mixture.emissions().expect("discrete fit").map(Clone::clone);
    let model = MultiTreatmentModel {
        priors: mixture.priors.clone(),
        lambdas: mixture.lambdas.clone(),
        raw_priors: mixture.raw_priors.clone(),
        emissions,
        gamma: fit.coef,
        xi: xi.clone(),
        ridge: fit.ridge,
    };
    Ok(MultiTreatmentFit {
        model,
        mixture,
        posteriors,
    })
}

impl MultiTreatmentModel {
    pub fn k(&self) -> usize {
        self.priors.len()
    }

    /// `|gamma_u|`.
    pub fn gamma_norms(&self) -> Vec<f64> {
        self.gamma.row_iter().map(|r| r.norm()).collect()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        let pick = |v: &[f64]| perm.iter().map(|&p| v[p]).collect::<Vec<_>>();
        let cols = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), m.ncols(), |s, u| m[(s, perm[u])]);
        let g = &self.gamma;
        Self {
            priors: pick(&self.priors),
            lambdas: pick(&self.lambdas),
            raw_priors: pick(&self.raw_priors),
            emissions: [cols(&self.emissions[0]), cols(&self.emissions[1]), cols(&self.emissions[2])],
            gamma: DMatrix::from_fn(g.nrows(), g.ncols(), |u, j| g[(perm[u], j)]),
            xi: self.xi.clone(),
            ridge: self.ridge,
        }
    }
}

/// `gamma_u^T xi(a)`.
pub fn mt_cate(m: &MultiTreatmentModel, u: usize, a: &[f64; 3]) -> Result<f64> {
    if u >= m.k() {
        return Err(Error::InvalidConfig(format!("component {u} outside 0..{}", m.k())));
    }
    Ok(m.xi
        .eval(a, &[])
        .iter()
        .enumerate()
        .map(|(j, x)| m.gamma[(u, j)] * x)
        .sum())
}

/// `sum_u pi_u gamma_u^T xi(a)`.
pub fn mt_ate(m: &MultiTreatmentModel, a: &[f64; 3]) -> f64 {
    (0..m.k())
        .map(|u| m.priors[u] * mt_cate(m, u, a).expect("component in range"))
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mixture::PosteriorFlavor;

    fn reference_model() -> MultiTreatmentModel {
        let e = DMatrix::from_element(5, 2, 0.2);
        MultiTreatmentModel {
            priors: vec![0.5, 0.5],
            lambdas: vec![2f64.sqrt(); 2],
            raw_priors: vec![0.5, 0.5],
            emissions: [e.clone(), e.clone(), e],
            gamma: DMatrix::from_row_slice(2, 4, &[1.0, 0.5, 2.5, -0.5, -1.0, 1.5, -1.0, 0.8]),
            xi: FeatureMap::treatments_linear(3),
            ridge: 0.0,
        }
    }

    #[test]
    fn ate_at_all_ones() {
        let m = reference_model();
        assert!((mt_ate(&m, &[1.0, 1.0, 1.0]) - 1.9).abs() < 1e-14);
        assert_eq!(mt_cate(&m, 0, &[0.0; 3]).unwrap(), 1.0);
        let swapped = m.permuted(&[1, 0]);
        assert!((mt_ate(&swapped, &[1.0, 1.0, 1.0]) - 1.9).abs() < 1e-12);
    }

    #[test]
    fn one_hot_weights_give_group_ols() {
        // group 0 outcome 1 + a1 + 2 a2 - a3, group 1 outcome -a1 + 3 a3
        let mut t: [Vec<usize>; 3] = Default::default();
        let mut y = Vec::new();
        let mut labels = Vec::new();
        for i in 0..60 {
            let a = [i % 5, (i / 5) % 5, (i * 3 + 1) % 5];
            let u = i % 2;
            let af = a.map(|x| x as f64);
            y.push(if u == 0 { 1.0 + af[0] + 2.0 * af[1] - af[2] } else { -af[0] + 3.0 * af[2] });
            for v in 0..3 {
                t[v].push(a[v]);
            }
            labels.push(u);
        }
        let data = TreatmentData::new(t, y, 5).unwrap();
        let w = PosteriorMatrix::one_hot(&labels, 2, PosteriorFlavor::ProxyOnly);
        let fit = fit_gamma(&data, &w, &FeatureMap::treatments_linear(3), 0.0).unwrap();
        let want = [1.0, 1.0, 2.0, -1.0, 0.0, -1.0, 0.0, 3.0];
        for u in 0..2 {
            for j in 0..4 {
                assert!((fit.coef[(u, j)] - want[u * 4 + j]).abs() <= 1e-10, "{}", fit.coef);
            }
        }
    }
}

//! Treatment and outcome stages for a continuous treatment with three
//! proxy views of the latent confounder.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::features::FeatureMap;
use super::regression::{solve_normal_equations, stacked_least_squares};
use crate::data::{Points, ProxyData};
use crate::error::{Error, Result};
use crate::mixture::{
    fit_multiview, fit_symmetric_spectral, normalize_row, KernelSpec, MixtureEstimate,
    PosteriorFlavor, PosteriorMatrix,
};
use crate::spectral::PowerConfig;

/// Lower bound on fitted treatment variances.
pub const SIGMA_FLOOR: f64 = 1e-6;
/// Posterior mass below which a component counts as empty.
pub const MIN_CLUSTER_MASS: f64 = 1e-8;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TreatmentFamily {
    #[default]
    Gaussian,
}

/// `A | Z, U = u ~ N(alpha_u^T phi(Z), sigma2_u)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentModel {
    /// `K x L`.
    pub alpha: DMatrix<f64>,
    pub sigma2: Vec<f64>,
    pub family: TreatmentFamily,
    pub feature_map: FeatureMap,
    pub ridge: f64,
    /// Variances raised to [`SIGMA_FLOOR`].
    pub clamped_variances: usize,
}

/// `E[Y | A = a, Z = z, U = u] = beta_u^T psi(a, z)`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutcomeModel {
    /// `K x M`.
    pub beta: DMatrix<f64>,
    pub feature_map: FeatureMap,
    pub ridge: f64,
}

/// Everything needed to evaluate the ATE without the training data.
#[derive(Debug, Clone, PartialEq)]
pub struct CausalEstimate {
    pub priors: Vec<f64>,
    pub outcome: OutcomeModel,
    /// `K x M`: posterior-weighted mean over training rows of the proxy part
    /// of each outcome feature, per component.
    pub expectations: DMatrix<f64>,
}

fn proxies_of(views: &[Points; 3], i: usize) -> [&[f64]; 3] {
    [views[0].row(i), views[1].row(i), views[2].row(i)]
}

fn check_rows(w: &PosteriorMatrix, n: usize) -> Result<()> {
    if w.n() != n {
        return Err(Error::DimensionMismatch {
            expected: n,
            got: w.n(),
        });
    }
    Ok(())
}

fn design(map: &FeatureMap, data: &ProxyData, a: impl Fn(usize) -> f64) -> DMatrix<f64> {
    let n = data.len();
    let mut x = DMatrix::zeros(n, map.len());
    for i in 0..n {
        let row = map.eval(&[a(i)], &proxies_of(&data.views, i));
        for (j, v) in row.into_iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    x
}

/// Stacked regression of the treatment on `phi(Z)`. Returns `K x L`
/// coefficients and the ridge used.
pub fn fit_treatment_mean(
    data: &ProxyData,
    w: &PosteriorMatrix,
    phi: &FeatureMap,
    ridge: f64,
) -> Result<(DMatrix<f64>, f64)> {
    check_rows(w, data.len())?;
    phi.validate(1, data.dim())?;
    if phi.depends_on_treatment() {
        return Err(Error::InvalidConfig("treatment features cannot use the treatment".into()));
    }
    let x = design(phi, data, |_| 0.0);
    let fit = stacked_least_squares(&w.weights, &x, &data.treatment, ridge, "treatment mean")?;
    Ok((fit.coef, fit.ridge))
}

/// Component variances from the law of total variance: the squared
/// residual of the mixed mean minus the spread of the component means is
/// regressed on the weights. Returns the variances and how many were
/// clamped to [`SIGMA_FLOOR`].
pub fn fit_treatment_variance(
    data: &ProxyData,
    w: &PosteriorMatrix,
    alpha: &DMatrix<f64>,
    phi: &FeatureMap,
) -> Result<(Vec<f64>, usize)> {
    check_rows(w, data.len())?;
    let n = data.len();
    let k = w.k();
    let x = design(phi, data, |_| 0.0);
    let means = &x * alpha.transpose(); // n x K
    let mut target = DVector::zeros(n);
    for i in 0..n {
        let wi = w.weights.row(i);
        let m: f64 = (0..k).map(|u| wi[u] * means[(i, u)]).sum();
        let second: f64 = (0..k).map(|u| wi[u] * means[(i, u)] * means[(i, u)]).sum();
        let r = data.treatment[i] - m;
        target[i] = r * r - (second - m * m);
    }
    let gram = w.weights.tr_mul(&w.weights);
    let rhs = w.weights.tr_mul(&target);
    let (s2, _) = solve_normal_equations(&gram, &rhs, 0.0, "treatment variance")?;
    let mut clamped = 0;
    let sigma2 = s2
        .iter()
        .map(|&s| {
            if s < SIGMA_FLOOR {
                clamped += 1;
                SIGMA_FLOOR
            } else {
                s
            }
        })
        .collect();
    Ok((sigma2, clamped))
}

pub fn fit_treatment_model(
    data: &ProxyData,
    w: &PosteriorMatrix,
    phi: &FeatureMap,
    ridge: f64,
) -> Result<TreatmentModel> {
    let (alpha, used) = fit_treatment_mean(data, w, phi, ridge)?;
    let (sigma2, clamped) = fit_treatment_variance(data, w, &alpha, phi)?;
    Ok(TreatmentModel {
        alpha,
        sigma2,
        family: TreatmentFamily::Gaussian,
        feature_map: phi.clone(),
        ridge: used,
        clamped_variances: clamped,
    })
}

impl TreatmentModel {
    pub fn k(&self) -> usize {
        self.sigma2.len()
    }

    pub fn mean(&self, u: usize, z: [&[f64]; 3]) -> f64 {
        let f = self.feature_map.eval(&[0.0], &z);
        f.iter().enumerate().map(|(j, x)| self.alpha[(u, j)] * x).sum()
    }

    /// Log of `e_u(a, z)`.
    pub fn log_density(&self, u: usize, a: f64, z: [&[f64]; 3]) -> f64 {
        let s2 = self.sigma2[u];
        let r = a - self.mean(u, z);
        -0.5 * (2.0 * std::f64::consts::PI * s2).ln() - r * r / (2.0 * s2)
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        let a = &self.alpha;
        Self {
            alpha: DMatrix::from_fn(a.nrows(), a.ncols(), |u, j| a[(perm[u], j)]),
            sigma2: perm.iter().map(|&p| self.sigma2[p]).collect(),
            ..self.clone()
        }
    }
}

/// Normal density of the treatment under component `u`.
pub fn treatment_density(tm: &TreatmentModel, u: usize, a: f64, z: [&[f64]; 3]) -> f64 {
    tm.log_density(u, a, z).exp()
}

/// Reweights proxy-only posteriors by the treatment likelihood. Rows where
/// every weighted likelihood vanishes keep their proxy-only weights.
pub fn update_posteriors(w: &PosteriorMatrix, tm: &TreatmentModel, data: &ProxyData) -> Result<PosteriorMatrix> {
    check_rows(w, data.len())?;
    if w.flavor != PosteriorFlavor::ProxyOnly {
        return Err(Error::InvalidData("posterior update needs proxy-only weights".into()));
    }
    if w.k() != tm.k() {
        return Err(Error::DimensionMismatch {
            expected: tm.k(),
            got: w.k(),
        });
    }
    let (n, k) = (w.n(), w.k());
    let mut out = DMatrix::zeros(n, k);
    let mut fallback = 0;
    let mut row = vec![0.0; k];
    for i in 0..n {
        let z = proxies_of(&data.views, i);
        let a = data.treatment[i];
        let mut m = f64::NEG_INFINITY;
        for u in 0..k {
            row[u] = w.weights[(i, u)].ln() + tm.log_density(u, a, z);
            m = m.max(row[u]);
        }
        if m.is_finite() {
            row.iter_mut().for_each(|x| *x = (*x - m).exp());
            normalize_row(&mut row);
        } else {
            fallback += 1;
            row.iter_mut().enumerate().for_each(|(u, x)| *x = w.weights[(i, u)]);
        }
        for u in 0..k {
            out[(i, u)] = row[u];
        }
    }
    Ok(PosteriorMatrix {
        weights: out,
        flavor: PosteriorFlavor::TreatmentUpdated,
        fallback_rows: fallback,
    })
}

/// Stacked regression of the outcome on `psi(A, Z)` with updated weights.
pub fn fit_outcome(data: &ProxyData, wt: &PosteriorMatrix, psi: &FeatureMap, ridge: f64) -> Result<OutcomeModel> {
    check_rows(wt, data.len())?;
    if wt.flavor != PosteriorFlavor::TreatmentUpdated {
        return Err(Error::InvalidData("outcome stage needs treatment-updated weights".into()));
    }
    psi.validate(1, data.dim())?;
    let x = design(psi, data, |i| data.treatment[i]);
    let fit = stacked_least_squares(&wt.weights, &x, &data.outcome, ridge, "outcome")?;
    Ok(OutcomeModel {
        beta: fit.coef,
        feature_map: psi.clone(),
        ridge: fit.ridge,
    })
}

impl OutcomeModel {
    pub fn k(&self) -> usize {
        self.beta.nrows()
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        let b = &self.beta;
        Self {
            beta: DMatrix::from_fn(b.nrows(), b.ncols(), |u, j| b[(perm[u], j)]),
            ..self.clone()
        }
    }
}

/// `beta_u^T psi(a, z)`.
pub fn estimate_cate(om: &OutcomeModel, u: usize, a: f64, z: [&[f64]; 3]) -> Result<f64> {
    if u >= om.k() {
        return Err(Error::InvalidConfig(format!("component {u} outside 0..{}", om.k())));
    }
    let f = om.feature_map.eval(&[a], &z);
    Ok(f.iter().enumerate().map(|(j, x)| om.beta[(u, j)] * x).sum())
}

/// Per-component posterior-weighted means of the proxy part of each
/// outcome feature. Fails with `DegenerateCluster` when a component has
/// (almost) no posterior mass.
pub fn component_expectations(
    psi: &FeatureMap,
    views: &[Points; 3],
    w: &PosteriorMatrix,
) -> Result<DMatrix<f64>> {
    check_rows(w, views[0].len())?;
    let (n, k) = (w.n(), w.k());
    let mut e = DMatrix::zeros(k, psi.len());
    for u in 0..k {
        let mass: f64 = w.weights.column(u).sum();
        if !(mass >= MIN_CLUSTER_MASS) {
            return Err(Error::DegenerateCluster { component: u, mass });
        }
        for (j, term) in psi.terms().iter().enumerate() {
            let s: f64 = (0..n)
                .map(|i| w.weights[(i, u)] * term.proxy_part(&proxies_of(views, i)))
                .sum();
            e[(u, j)] = s / mass;
        }
    }
    Ok(e)
}

impl CausalEstimate {
    pub fn new(priors: Vec<f64>, outcome: OutcomeModel, views: &[Points; 3], w: &PosteriorMatrix) -> Result<Self> {
        let expectations = component_expectations(&outcome.feature_map, views, w)?;
        Ok(Self {
            priors,
            outcome,
            expectations,
        })
    }

    /// `beta_u^T E[psi(a, Z) | U = u]` for each component.
    pub fn ate_components(&self, a: f64) -> Vec<f64> {
        let terms = self.outcome.feature_map.terms();
        (0..self.priors.len())
            .map(|u| {
                terms
                    .iter()
                    .enumerate()
                    .map(|(j, t)| self.outcome.beta[(u, j)] * t.treatment_part(&[a]) * self.expectations[(u, j)])
                    .sum()
            })
            .collect()
    }

    /// `tau(a) = sum_u pi_u beta_u^T E[psi(a, Z) | U = u]`.
    pub fn ate(&self, a: f64) -> f64 {
        self.ate_components(a)
            .iter()
            .zip(&self.priors)
            .map(|(t, p)| p * t)
            .sum()
    }
}

/// ATE from an outcome model, priors and proxy-only posteriors on a set of
/// proxies.
pub fn estimate_ate(
    om: &OutcomeModel,
    priors: &[f64],
    views: &[Points; 3],
    w: &PosteriorMatrix,
    a: f64,
) -> Result<f64> {
    Ok(CausalEstimate::new(priors.to_vec(), om.clone(), views, w)?.ate(a))
}

/// Which mixture learner the pipeline uses.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MixtureMethod {
    /// Views with their own component distributions.
    #[default]
    Multiview,
    /// Exchangeable views.
    Symmetric,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MultiProxyConfig {
    pub k: usize,
    pub kernel: KernelSpec,
    pub power: PowerConfig,
    pub method: MixtureMethod,
    pub phi: FeatureMap,
    pub psi: FeatureMap,
    pub ridge: f64,
    pub seed: u64,
}

impl MultiProxyConfig {
    /// Treatment features `z1`, outcome features `[1, a, z1]`.
    pub fn new(k: usize, d: usize) -> Self {
        Self {
            k,
            kernel: KernelSpec::default(),
            power: PowerConfig::default(),
            method: MixtureMethod::default(),
            phi: FeatureMap::proxy_linear(0, d),
            psi: FeatureMap::treatment_proxy_linear(0, d),
            ridge: 0.0,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineDiagnostics {
    pub proxy_fallback_rows: usize,
    pub treatment_fallback_rows: usize,
    pub treatment_ridge: f64,
    pub outcome_ridge: f64,
    pub clamped_variances: usize,
}

#[derive(Debug, Clone)]
pub struct MultiProxyFit {
    pub mixture: MixtureEstimate,
    pub treatment: TreatmentModel,
    pub causal: CausalEstimate,
    pub posteriors: PosteriorMatrix,
    pub updated: PosteriorMatrix,
    pub diagnostics: PipelineDiagnostics,
}

impl MultiProxyFit {
    pub fn outcome(&self) -> &OutcomeModel {
        &self.causal.outcome
    }
}

/// Full pipeline: mixture, treatment model, posterior update, outcome
/// model.
pub fn fit_multiproxy(data: &ProxyData, cfg: &MultiProxyConfig) -> Result<MultiProxyFit> {
    if data.is_empty() {
        return Err(Error::EmptyInput("dataset"));
    }
    let views = [&data.views[0], &data.views[1], &data.views[2]];
    let mixture = match cfg.method {
        MixtureMethod::Multiview => fit_multiview(views, cfg.k, &cfg.kernel, &cfg.power, cfg.seed)?,
        MixtureMethod::Symmetric => fit_symmetric_spectral(views, cfg.k, &cfg.kernel, &cfg.power, cfg.seed)?,
    };
    fit_stages(data, mixture, cfg)
}

/// Treatment and outcome stages on top of an already fitted mixture.
pub fn fit_stages(data: &ProxyData, mixture: MixtureEstimate, cfg: &MultiProxyConfig) -> Result<MultiProxyFit> {
    let views = [&data.views[0], &data.views[1], &data.views[2]];
    let w = mixture.posteriors_points(views)?;
    let treatment = fit_treatment_model(data, &w, &cfg.phi, cfg.ridge)?;
    let wt = update_posteriors(&w, &treatment, data)?;
    let outcome = fit_outcome(data, &wt, &cfg.psi, cfg.ridge)?;
    let diagnostics = PipelineDiagnostics {
        proxy_fallback_rows: w.fallback_rows,
        treatment_fallback_rows: wt.fallback_rows,
        treatment_ridge: treatment.ridge,
        outcome_ridge: outcome.ridge,
        clamped_variances: treatment.clamped_variances,
    };
    let causal = CausalEstimate::new(mixture.priors.clone(), outcome, &data.views, &w)?;
    Ok(MultiProxyFit {
        mixture,
        treatment,
        causal,
        posteriors: w,
        updated: wt,
        diagnostics,
    })
}

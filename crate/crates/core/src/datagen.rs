//! Seeded simulation scenarios with known ground truth, and brute-force
//! oracles computed from the true parameters.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{Distribution, Gamma, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::causal::FeatureMap;
use crate::data::{Points, ProxyData, TreatmentData};
use crate::error::{Error, Result};
use crate::mixture::{PosteriorFlavor, PosteriorMatrix};
use crate::rng;

const PROXY_SCENARIO: &str = include_str!("../scenarios/paper-7.1.json");
const TREATMENT_SCENARIO: &str = include_str!("../scenarios/paper-7.2.json");

/// Gaussian proxies, Gaussian treatment, linear outcome.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiProxyScenario {
    pub k: usize,
    pub d: usize,
    pub priors: Vec<f64>,
    /// `means[v][u]` is the mean of view `v` under component `u`.
    pub means: [Vec<Vec<f64>>; 3],
    pub proxy_sigma: f64,
    pub phi: FeatureMap,
    /// `K x L` treatment coefficients.
    pub alpha: Vec<Vec<f64>>,
    pub sigma2: Vec<f64>,
    pub psi: FeatureMap,
    /// `K x M` outcome coefficients.
    pub beta: Vec<Vec<f64>>,
    pub outcome_sigma: f64,
}

/// Categorical treatments with per-view emission matrices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiTreatmentScenario {
    pub k: usize,
    pub levels: usize,
    pub priors: Vec<f64>,
    /// `emissions[v][s][u] = P(A_v = s | U = u)`.
    pub emissions: [Vec<Vec<f64>>; 3],
    pub xi: FeatureMap,
    /// `K x M` outcome coefficients.
    pub gamma: Vec<Vec<f64>>,
    pub outcome_sigma: f64,
}

fn check_priors(p: &[f64], k: usize) -> Result<()> {
    if p.len() != k || p.iter().any(|&x| !(x >= 0.0)) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-10 {
        return Err(Error::InvalidConfig(format!("priors {p:?} are not a distribution over {k} classes")));
    }
    Ok(())
}

fn check_rows(name: &str, m: &[Vec<f64>], rows: usize, cols: usize) -> Result<()> {
    if m.len() != rows || m.iter().any(|r| r.len() != cols) {
        return Err(Error::InvalidConfig(format!("{name} must be {rows}x{cols}")));
    }
    Ok(())
}

fn draw_category(r: &mut impl Rng, p: impl IntoIterator<Item = f64>) -> usize {
    let x: f64 = r.random();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, pi) in p.into_iter().enumerate() {
        acc += pi;
        last = i;
        if x < acc {
            return i;
        }
    }
    last
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl MultiProxyScenario {
    /// Three clusters in three 3-d views with distinct centers.
    pub fn three_component() -> Self {
        serde_json::from_str(PROXY_SCENARIO).expect("bundled scenario parses")
    }

    pub fn validate(&self) -> Result<()> {
        check_priors(&self.priors, self.k)?;
        for m in &self.means {
            check_rows("means", m, self.k, self.d)?;
        }
        check_rows("alpha", &self.alpha, self.k, self.phi.len())?;
        check_rows("beta", &self.beta, self.k, self.psi.len())?;
        self.phi.validate(1, self.d)?;
        self.psi.validate(1, self.d)?;
        if self.phi.depends_on_treatment() {
            return Err(Error::InvalidConfig("treatment features cannot use the treatment".into()));
        }
        if self.sigma2.len() != self.k || self.sigma2.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::InvalidConfig("sigma2 must hold K positive values".into()));
        }
        if !(self.proxy_sigma > 0.0 && self.outcome_sigma >= 0.0) {
            return Err(Error::InvalidConfig("noise scales must be positive".into()));
        }
        Ok(())
    }

    /// Component means of the three views concatenated, `K x 3d`.
    pub fn stacked_means(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.k, 3 * self.d, |u, c| self.means[c / self.d][u][c % self.d])
    }

    /// `beta_u` coefficient on the treatment `a`, if `psi` has a plain `a`
    /// term.
    pub fn treatment_slopes(&self) -> Option<Vec<f64>> {
        let j = self.psi.to_strings().iter().position(|t| t == "a")?;
        Some(self.beta.iter().map(|b| b[j]).collect())
    }

    fn draw_proxies(&self, r: &mut impl Rng, u: usize) -> [Vec<f64>; 3] {
        std::array::from_fn(|v| {
            self.means[v][u]
                .iter()
                .map(|m| m + self.proxy_sigma * Distribution::<f64>::sample(&StandardNormal, r))
                .collect()
        })
    }
}

/// Draws `n` records. Returns the dataset and the latent labels.
pub fn simulate_multiproxy(s: &MultiProxyScenario, n: usize, seed: u64) -> Result<(ProxyData, Vec<usize>)> {
    s.validate()?;
    let mut r = rng::stream(seed, rng::streams::SIMULATION);
    let mut views: [Vec<f64>; 3] = Default::default();
    let mut treatment = Vec::with_capacity(n);
    let mut outcome = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let u = draw_category(&mut r, s.priors.iter().copied());
        let z = s.draw_proxies(&mut r, u);
        let zs = [&z[0][..], &z[1][..], &z[2][..]];
        let mean_a = dot(&s.alpha[u], &s.phi.eval(&[0.0], &zs));
        let a = mean_a + s.sigma2[u].sqrt() * Distribution::<f64>::sample(&StandardNormal, &mut r);
        let mean_y = dot(&s.beta[u], &s.psi.eval(&[a], &zs));
        let y = mean_y + s.outcome_sigma * Distribution::<f64>::sample(&StandardNormal, &mut r);
        for (v, zv) in z.iter().enumerate() {
            views[v].extend_from_slice(zv);
        }
        treatment.push(a);
        outcome.push(y);
        labels.push(u);
    }
    let views = views.map(|v| Points::new(s.d, v).expect("d divides the buffer"));
    Ok((ProxyData::new(views, treatment, outcome)?, labels))
}

fn log_normal_pdf(x: f64, mean: f64, var: f64) -> f64 {
    -0.5 * (2.0 * std::f64::consts::PI * var).ln() - (x - mean) * (x - mean) / (2.0 * var)
}

/// True per-view proxy densities, `n x K` for each view.
pub fn true_view_densities(s: &MultiProxyScenario, data: &ProxyData) -> [DMatrix<f64>; 3] {
    let var = s.proxy_sigma * s.proxy_sigma;
    std::array::from_fn(|v| {
        DMatrix::from_fn(data.len(), s.k, |i, u| {
            let z = data.views[v].row(i);
            z.iter()
                .zip(&s.means[v][u])
                .map(|(x, m)| log_normal_pdf(*x, *m, var))
                .sum::<f64>()
                .exp()
        })
    })
}

/// Bayes posteriors under the true parameters, with or without the
/// treatment likelihood.
pub fn oracle_posteriors(s: &MultiProxyScenario, data: &ProxyData, flavor: PosteriorFlavor) -> PosteriorMatrix {
    let var = s.proxy_sigma * s.proxy_sigma;
    let (n, k) = (data.len(), s.k);
    let mut w = DMatrix::zeros(n, k);
    let mut logp = vec![0.0; k];
    for i in 0..n {
        let z = data.proxies(i);
        for (u, lp) in logp.iter_mut().enumerate() {
            *lp = s.priors[u].ln();
            for v in 0..3 {
                for (x, m) in z[v].iter().zip(&s.means[v][u]) {
                    *lp += log_normal_pdf(*x, *m, var);
                }
            }
            if flavor == PosteriorFlavor::TreatmentUpdated {
                let mean = dot(&s.alpha[u], &s.phi.eval(&[0.0], &z));
                *lp += log_normal_pdf(data.treatment[i], mean, s.sigma2[u]);
            }
        }
        let top = logp.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let total: f64 = logp.iter().map(|l| (l - top).exp()).sum();
        for u in 0..k {
            w[(i, u)] = (logp[u] - top).exp() / total;
        }
    }
    PosteriorMatrix {
        weights: w,
        flavor,
        fallback_rows: 0,
    }
}

/// Monte-Carlo ATE `sum_u pi_u E[beta_u^T psi(a, Z) | U = u]` from fresh
/// draws of the true model. Returns the estimate and its standard error.
pub fn oracle_ate(s: &MultiProxyScenario, a: f64, draws: usize, seed: u64) -> Result<(f64, f64)> {
    s.validate()?;
    if draws < 2 {
        return Err(Error::InvalidConfig("need at least two draws".into()));
    }
    let mut r = rng::stream(seed, rng::streams::ORACLE);
    let (mut mean, mut m2) = (0.0, 0.0);
    for t in 0..draws {
        let u = draw_category(&mut r, s.priors.iter().copied());
        let z = s.draw_proxies(&mut r, u);
        let x = dot(&s.beta[u], &s.psi.eval(&[a], &[&z[0], &z[1], &z[2]]));
        // Welford
        let delta = x - mean;
        mean += delta / (t + 1) as f64;
        m2 += delta * (x - mean);
    }
    let var = m2 / (draws - 1) as f64;
    Ok((mean, (var / draws as f64).sqrt()))
}

/// Closed-form ATE slope `sum_u pi_u beta_{u,a}` when `psi` has a plain
/// `a` term and no other term involving the treatment.
pub fn true_ate_slope(s: &MultiProxyScenario) -> Option<f64> {
    let slopes = s.treatment_slopes()?;
    Some(slopes.iter().zip(&s.priors).map(|(b, p)| b * p).sum())
}

impl MultiTreatmentScenario {
    /// Two classes, three 5-level treatments.
    pub fn two_component() -> Self {
        serde_json::from_str(TREATMENT_SCENARIO).expect("bundled scenario parses")
    }

    pub fn validate(&self) -> Result<()> {
        check_priors(&self.priors, self.k)?;
        for e in &self.emissions {
            check_rows("emissions", e, self.levels, self.k)?;
            for u in 0..self.k {
                let col: f64 = e.iter().map(|row| row[u]).sum();
                if (col - 1.0).abs() > 1e-10 || e.iter().any(|row| !(row[u] >= 0.0)) {
                    return Err(Error::InvalidConfig(format!("emission column {u} is not a distribution")));
                }
            }
        }
        check_rows("gamma", &self.gamma, self.k, self.xi.len())?;
        self.xi.validate(3, 0)?;
        Ok(())
    }

    pub fn emission_matrix(&self, v: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.levels, self.k, |s, u| self.emissions[v][s][u])
    }

    /// Emission columns of the three views concatenated, `K x 3S`.
    pub fn stacked_emissions(&self) -> DMatrix<f64> {
        let s = self.levels;
        DMatrix::from_fn(self.k, 3 * s, |u, c| self.emissions[c / s][c % s][u])
    }

    pub fn gamma_norms(&self) -> Vec<f64> {
        self.gamma.iter().map(|g| dot(g, g).sqrt()).collect()
    }
}

/// Column-stochastic `levels x k` matrix with Dirichlet(`concentration`)
/// columns, redrawn until its smallest singular value is at least
/// `min_sv`.
pub fn dirichlet_emissions(levels: usize, k: usize, concentration: f64, min_sv: f64, seed: u64) -> Result<DMatrix<f64>> {
    let gamma = Gamma::new(concentration, 1.0)
        .map_err(|e| Error::InvalidConfig(format!("bad concentration: {e}")))?;
    let mut r = rng::stream(seed, rng::streams::SIMULATION);
    for _ in 0..10_000 {
        let mut m = DMatrix::from_fn(levels, k, |_, _| gamma.sample(&mut r));
        for mut col in m.column_iter_mut() {
            let s = col.sum();
            col /= s;
        }
        if m.singular_values().min() >= min_sv {
            return Ok(m);
        }
    }
    Err(Error::InvalidConfig("no emission draw met the rank requirement".into()))
}

/// Draws `n` records. Returns the dataset and the latent labels.
pub fn simulate_multitreatment(s: &MultiTreatmentScenario, n: usize, seed: u64) -> Result<(TreatmentData, Vec<usize>)> {
    s.validate()?;
    let mut r = rng::stream(seed, rng::streams::SIMULATION);
    let noise = Normal::new(0.0, s.outcome_sigma).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut t: [Vec<usize>; 3] = Default::default();
    let mut outcome = Vec::with_capacity(n);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let u = draw_category(&mut r, s.priors.iter().copied());
        let mut a = [0.0; 3];
        for v in 0..3 {
            let level = draw_category(&mut r, s.emissions[v].iter().map(|row| row[u]));
            t[v].push(level);
            a[v] = level as f64;
        }
        outcome.push(dot(&s.gamma[u], &s.xi.eval(&a, &[])) + noise.sample(&mut r));
        labels.push(u);
    }
    Ok((TreatmentData::new(t, outcome, s.levels)?, labels))
}

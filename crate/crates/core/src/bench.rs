//! Repeated simulate-fit-compare sweeps over sample sizes, with every fit
//! aligned to the true component labels before it is scored.

use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::Instant;

use log::warn;
use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::causal::{fit_multiproxy, fit_multitreatment, MultiProxyConfig};
use crate::datagen::{simulate_multiproxy, simulate_multitreatment, MultiProxyScenario, MultiTreatmentScenario};
use crate::error::{Error, Result};
use crate::mixture::{align_permutation, KernelSpec};
use crate::rng::trial_seed;
use crate::spectral::PowerConfig;

/// Environment variable capping the worker threads of a sweep.
pub const THREADS_ENV: &str = "TENSORCAUSE_THREADS";

/// Bandwidth used for the Gaussian-proxy scenario. The median heuristic
/// oversmooths three well separated clusters and biases the fit.
pub const PROXY_BANDWIDTH: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BenchScenario {
    #[serde(rename = "paper-7.1")]
    Proxy,
    #[serde(rename = "paper-7.2")]
    Treatment,
}

impl BenchScenario {
    pub fn name(self) -> &'static str {
        match self {
            BenchScenario::Proxy => "paper-7.1",
            BenchScenario::Treatment => "paper-7.2",
        }
    }
}

impl fmt::Display for BenchScenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for BenchScenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper-7.1" => Ok(BenchScenario::Proxy),
            "paper-7.2" => Ok(BenchScenario::Treatment),
            _ => Err(Error::InvalidConfig(format!(
                "unknown scenario '{s}' (expected paper-7.1 or paper-7.2)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchConfig {
    pub scenario: BenchScenario,
    pub ns: Vec<usize>,
    pub trials: usize,
    pub seed: u64,
    /// Kernel for the proxy scenario; ignored for categorical treatments.
    pub kernel: KernelSpec,
}

impl BenchConfig {
    pub fn new(scenario: BenchScenario, ns: Vec<usize>, trials: usize, seed: u64) -> Self {
        Self {
            scenario,
            ns,
            trials,
            seed,
            kernel: KernelSpec::fixed(PROXY_BANDWIDTH),
        }
    }
}

/// One scored parameter of one trial, or a failed trial when `error` is set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchRow {
    pub scenario: String,
    pub n: usize,
    pub trial: usize,
    pub seed: u64,
    pub component: Option<usize>,
    pub parameter: String,
    pub estimate: Option<f64>,
    pub truth: Option<f64>,
    pub aligned_abs_error: Option<f64>,
    pub wall_ms: f64,
    pub error: String,
}

struct Scored {
    component: usize,
    parameter: String,
    estimate: f64,
    truth: f64,
}

fn score(perm: &[usize], est: &DMatrix<f64>, truth: &DMatrix<f64>, names: &[String], out: &mut Vec<Scored>) {
    for (j, &e) in perm.iter().enumerate() {
        for (c, name) in names.iter().enumerate() {
            out.push(Scored {
                component: j,
                parameter: name.clone(),
                estimate: est[(e, c)],
                truth: truth[(j, c)],
            });
        }
    }
}

fn norms(m: &DMatrix<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(m.nrows(), 1, |u, _| m.row(u).norm())
}

fn proxy_trial(s: &MultiProxyScenario, n: usize, seed: u64, kernel: &KernelSpec) -> Result<Vec<Scored>> {
    let (data, _) = simulate_multiproxy(s, n, seed)?;
    let mut cfg = MultiProxyConfig::new(s.k, s.d);
    cfg.kernel = *kernel;
    cfg.phi = s.phi.clone();
    cfg.psi = s.psi.clone();
    cfg.seed = seed;
    let fit = fit_multiproxy(&data, &cfg)?;
    let means = fit
        .mixture
        .component_means
        .as_ref()
        .ok_or(Error::UnfittedModel("fit has no component means"))?;
    let stacked = DMatrix::from_fn(s.k, 3 * s.d, |u, c| means[c / s.d][(u, c % s.d)]);
    let perm = align_permutation(&stacked, &s.stacked_means())?.perm;
    let beta_truth = DMatrix::from_fn(s.k, s.psi.len(), |u, j| s.beta[u][j]);
    let names: Vec<String> = s.psi.to_strings().iter().map(|t| format!("beta[{t}]")).collect();
    let mut out = Vec::new();
    score(&perm, &fit.outcome().beta, &beta_truth, &names, &mut out);
    let prior = |p: &[f64]| DMatrix::from_column_slice(p.len(), 1, p);
    score(&perm, &prior(&fit.mixture.priors), &prior(&s.priors), &["prior".into()], &mut out);
    Ok(out)
}

fn treatment_trial(s: &MultiTreatmentScenario, n: usize, seed: u64) -> Result<Vec<Scored>> {
    let (data, _) = simulate_multitreatment(s, n, seed)?;
    let fit = fit_multitreatment(&data, s.k, &s.xi, &PowerConfig::default(), seed)?;
    let m = &fit.model;
    let lv = s.levels;
    let stacked = DMatrix::from_fn(s.k, 3 * lv, |u, c| m.emissions[c / lv][(c % lv, u)]);
    let perm = align_permutation(&stacked, &s.stacked_emissions())?.perm;
    let gamma_truth = DMatrix::from_fn(s.k, s.xi.len(), |u, j| s.gamma[u][j]);
    let names: Vec<String> = s.xi.to_strings().iter().map(|t| format!("gamma[{t}]")).collect();
    let mut out = Vec::new();
    score(&perm, &m.gamma, &gamma_truth, &names, &mut out);
    score(&perm, &norms(&m.gamma), &norms(&gamma_truth), &["gamma_norm".into()], &mut out);
    let prior = |p: &[f64]| DMatrix::from_column_slice(p.len(), 1, p);
    score(&perm, &prior(&m.priors), &prior(&s.priors), &["prior".into()], &mut out);
    Ok(out)
}

/// Runs `trials` independent simulate-and-fit trials at every sample size,
/// in parallel on the current rayon pool. Failed trials become a single
/// row carrying the error message; the sweep goes on.
pub fn run_benchmark(cfg: &BenchConfig) -> Result<Vec<BenchRow>> {
    if cfg.ns.is_empty() || cfg.trials == 0 {
        return Err(Error::InvalidConfig("benchmark needs at least one n and one trial".into()));
    }
    let proxy = MultiProxyScenario::three_component();
    let treatment = MultiTreatmentScenario::two_component();
    let jobs: Vec<(usize, usize)> = cfg
        .ns
        .iter()
        .flat_map(|&n| (0..cfg.trials).map(move |t| (n, t)))
        .collect();
    let rows: Vec<Vec<BenchRow>> = jobs
        .par_iter()
        .map(|&(n, trial)| {
            let seed = trial_seed(cfg.seed, n, trial);
            let start = Instant::now();
            let result = match cfg.scenario {
                BenchScenario::Proxy => proxy_trial(&proxy, n, seed, &cfg.kernel),
                BenchScenario::Treatment => treatment_trial(&treatment, n, seed),
            };
            let wall_ms = start.elapsed().as_secs_f64() * 1e3;
            let row = |component, parameter: String, estimate, truth, error: String| BenchRow {
                scenario: cfg.scenario.name().into(),
                n,
                trial,
                seed,
                component,
                parameter,
                estimate,
                truth,
                aligned_abs_error: estimate.zip(truth).map(|(e, t): (f64, f64)| (e - t).abs()),
                wall_ms,
                error,
            };
            match result {
                Ok(scored) => scored
                    .into_iter()
                    .map(|s| row(Some(s.component), s.parameter, Some(s.estimate), Some(s.truth), String::new()))
                    .collect(),
                Err(e) => {
                    warn!("{} n={n} trial={trial}: {e}", cfg.scenario);
                    vec![row(None, String::new(), None, None, e.to_string())]
                }
            }
        })
        .collect();
    Ok(rows.into_iter().flatten().collect())
}

pub fn write_report<W: Write>(out: W, rows: &[BenchRow]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_report<R: std::io::Read>(input: R) -> Result<Vec<BenchRow>> {
    let mut r = csv::Reader::from_reader(input);
    Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
}

/// Linear-interpolated quantile of unsorted values.
pub fn quantile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return f64::NAN;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let pos = q.clamp(0.0, 1.0) * (v.len() - 1) as f64;
    let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
    v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
}

/// Error quantiles of one parameter at one sample size.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub n: usize,
    pub component: usize,
    pub parameter: String,
    pub trials: usize,
    pub truth: f64,
    pub median_estimate: f64,
    pub error_q10: f64,
    pub error_median: f64,
    pub error_q90: f64,
}

pub fn summarize(rows: &[BenchRow]) -> Vec<SummaryRow> {
    let mut keys: Vec<(usize, usize, String)> = Vec::new();
    for r in rows {
        if let Some(c) = r.component {
            let key = (r.n, c, r.parameter.clone());
            if !keys.contains(&key) {
                keys.push(key);
            }
        }
    }
    keys.into_iter()
        .map(|(n, component, parameter)| {
            let sel: Vec<&BenchRow> = rows
                .iter()
                .filter(|r| r.n == n && r.component == Some(component) && r.parameter == parameter)
                .collect();
            let est: Vec<f64> = sel.iter().filter_map(|r| r.estimate).collect();
            let err: Vec<f64> = sel.iter().filter_map(|r| r.aligned_abs_error).collect();
            SummaryRow {
                n,
                component,
                parameter,
                trials: sel.len(),
                truth: sel[0].truth.unwrap_or(f64::NAN),
                median_estimate: quantile(&est, 0.5),
                error_q10: quantile(&err, 0.1),
                error_median: quantile(&err, 0.5),
                error_q90: quantile(&err, 0.9),
            }
        })
        .collect()
}

/// Worker count from [`THREADS_ENV`], or `None` for one per logical core.
pub fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) if !v.trim().is_empty() => match v.trim().parse::<usize>() {
            Ok(t) if t > 0 => Ok(Some(t)),
            _ => Err(Error::InvalidConfig(format!("{THREADS_ENV} must be a positive integer, got '{v}'"))),
        },
        _ => Ok(None),
    }
}

/// Thread pool honoring [`THREADS_ENV`].
pub fn thread_pool() -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(thread_cap()?.unwrap_or(0))
        .build()
        .map_err(|e| Error::InvalidConfig(format!("thread pool: {e}")))
}

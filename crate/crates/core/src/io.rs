//! On-disk formats: datasets as CSV, fitted models and ground truth as JSON.

use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::causal::{
    mt_ate, mt_cate, CausalEstimate, FeatureMap, MultiProxyFit, MultiTreatmentFit, MultiTreatmentModel,
    OutcomeModel, PipelineDiagnostics, TreatmentFamily, TreatmentModel, Var,
};
use crate::data::{Dataset, Points, ProxyData, TreatmentData};
use crate::datagen::{MultiProxyScenario, MultiTreatmentScenario};
use crate::error::{Error, Result};
use crate::mixture::{
    BackendKind, KernelSpec, KernelView, MixtureDiagnostics, MixtureEstimate, RbfKernel, ViewModel,
    DEFAULT_DENSITY_FLOOR,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Row-major matrix as nested JSON arrays.
pub type Rows = Vec<Vec<f64>>;

fn to_rows(m: &DMatrix<f64>) -> Rows {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(name: &str, rows: &Rows, cols: Option<usize>) -> Result<DMatrix<f64>> {
    let c = cols.or_else(|| rows.first().map(Vec::len)).unwrap_or(0);
    if rows.iter().any(|r| r.len() != c) {
        return Err(Error::Schema(format!("{name}: rows must all have {c} entries")));
    }
    if rows.iter().flatten().any(|x| !x.is_finite()) {
        return Err(Error::Schema(format!("{name}: non-finite entry")));
    }
    Ok(DMatrix::from_fn(rows.len(), c, |i, j| rows[i][j]))
}

fn expect_shape(name: &str, m: &DMatrix<f64>, rows: usize, cols: usize) -> Result<()> {
    if m.shape() != (rows, cols) {
        return Err(Error::Schema(format!(
            "{name} is {}x{}, expected {rows}x{cols}",
            m.nrows(),
            m.ncols()
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------- datasets

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    Multiproxy,
    Multitreatment,
}

impl Dataset {
    pub fn mode(&self) -> Mode {
        match self {
            Dataset::MultiProxy(_) => Mode::Multiproxy,
            Dataset::MultiTreatment(_) => Mode::Multitreatment,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Dataset::MultiProxy(d) => d.len(),
            Dataset::MultiTreatment(d) => d.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Column names of a multi-proxy file with `d`-dimensional views.
pub fn proxy_header(d: usize) -> Vec<String> {
    let mut h: Vec<String> = (1..=3)
        .flat_map(|v| (0..d).map(move |c| format!("z{v}_{c}")))
        .collect();
    h.push("a".into());
    h.push("y".into());
    h
}

pub const TREATMENT_HEADER: [&str; 4] = ["a1", "a2", "a3", "y"];

/// 17 significant digits, enough to reproduce every `f64` exactly.
fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn write_dataset<W: Write>(out: W, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    match data {
        Dataset::MultiProxy(d) => {
            w.write_record(proxy_header(d.dim()))?;
            let mut rec = Vec::with_capacity(3 * d.dim() + 2);
            for i in 0..d.len() {
                rec.clear();
                for z in d.proxies(i) {
                    rec.extend(z.iter().copied());
                }
                rec.push(d.treatment[i]);
                rec.push(d.outcome[i]);
                if let Some(bad) = rec.iter().find(|x| !x.is_finite()) {
                    return Err(Error::InvalidData(format!("row {i}: non-finite value {bad}")));
                }
                w.write_record(rec.iter().map(|&x| fmt_f64(x)))?;
            }
        }
        Dataset::MultiTreatment(d) => {
            w.write_record(TREATMENT_HEADER)?;
            for i in 0..d.len() {
                if !d.outcome[i].is_finite() {
                    return Err(Error::InvalidData(format!("row {i}: non-finite outcome")));
                }
                let t = d.treatments.each_ref().map(|t| t[i].to_string());
                w.write_record([t[0].as_str(), t[1].as_str(), t[2].as_str(), &fmt_f64(d.outcome[i])])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

fn parse_real(s: &str, row: usize, col: &str) -> Result<f64> {
    let x: f64 = s
        .trim()
        .parse()
        .map_err(|_| Error::InvalidData(format!("row {row}, column {col}: '{s}' is not a number")))?;
    if !x.is_finite() {
        return Err(Error::InvalidData(format!("row {row}, column {col}: non-finite value")));
    }
    Ok(x)
}

/// Reads a dataset, detecting the mode from the header. For categorical
/// treatments `levels` defaults to one more than the largest level seen.
pub fn read_dataset<R: Read>(input: R, levels: Option<usize>) -> Result<Dataset> {
    let mut r = csv::Reader::from_reader(input);
    let header: Vec<String> = r.headers()?.iter().map(|h| h.trim().to_string()).collect();
    if header.first().is_some_and(|h| h == "a1") {
        if header != TREATMENT_HEADER {
            return Err(Error::InvalidData(format!(
                "multi-treatment header must be {}",
                TREATMENT_HEADER.join(",")
            )));
        }
        let mut t: [Vec<usize>; 3] = Default::default();
        let mut y = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            for v in 0..3 {
                let s = rec[v].trim();
                t[v].push(s.parse().map_err(|_| {
                    Error::InvalidData(format!("row {i}, column a{}: '{s}' is not a level", v + 1))
                })?);
            }
            y.push(parse_real(&rec[3], i, "y")?);
        }
        let seen = t.iter().flatten().max().map_or(0, |m| m + 1);
        let levels = levels.unwrap_or(seen.max(1));
        return Ok(Dataset::MultiTreatment(TreatmentData::new(t, y, levels)?));
    }
    if header.len() < 5 || !(header.len() - 2).is_multiple_of(3) {
        return Err(Error::InvalidData(format!("unrecognized header: {}", header.join(","))));
    }
    let d = (header.len() - 2) / 3;
    if header != proxy_header(d) {
        return Err(Error::InvalidData(format!(
            "multi-proxy header must be {}",
            proxy_header(d).join(",")
        )));
    }
    let mut z: [Vec<f64>; 3] = Default::default();
    let (mut a, mut y) = (Vec::new(), Vec::new());
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        for (c, s) in rec.iter().enumerate() {
            let x = parse_real(s, i, &header[c])?;
            match c {
                c if c < 3 * d => z[c / d].push(x),
                c if c == 3 * d => a.push(x),
                _ => y.push(x),
            }
        }
    }
    let [z1, z2, z3] = z;
    let views = [Points::new(d, z1)?, Points::new(d, z2)?, Points::new(d, z3)?];
    Ok(Dataset::MultiProxy(ProxyData::new(views, a, y)?))
}

pub fn save_dataset(path: &Path, data: &Dataset) -> Result<()> {
    write_dataset(fs::File::create(path)?, data)
}

pub fn load_dataset(path: &Path, levels: Option<usize>) -> Result<Dataset> {
    read_dataset(fs::File::open(path)?, levels)
}

// ---------------------------------------------------------------- truth

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scenario {
    Multiproxy(MultiProxyScenario),
    Multitreatment(MultiTreatmentScenario),
}

/// Parameters and latent labels behind a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub schema_version: u32,
    pub seed: u64,
    pub n: usize,
    pub scenario: Scenario,
    pub labels: Vec<usize>,
}

/// `d.csv` -> `d.truth.json`.
pub fn truth_path(dataset: &Path) -> PathBuf {
    dataset.with_extension("truth.json")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut s = serde_json::to_string_pretty(value)?;
    s.push('\n');
    fs::write(path, s)?;
    Ok(())
}

pub fn save_truth(path: &Path, truth: &TruthFile) -> Result<()> {
    write_json(path, truth)
}

// ---------------------------------------------------------------- models

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelRecord {
    pub spec: KernelSpec,
    /// Bandwidth the spec resolved to on the training data.
    pub bandwidth: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "backend", rename_all = "snake_case")]
pub enum ViewRecord {
    /// Component `u` of the view is `sum_j coefficients[j][u] k(anchor_j, .)`.
    Kernel { anchors: Rows, coefficients: Rows },
    /// `S x K`, column `u` is the level distribution of component `u`.
    Discrete { emissions: Rows },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TreatmentRecord {
    pub phi: FeatureMap,
    pub family: TreatmentFamily,
    pub alpha: Rows,
    pub sigma2: Vec<f64>,
    pub ridge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeRecord {
    pub psi: FeatureMap,
    pub beta: Rows,
    pub ridge: f64,
    /// Per component, the expected proxy factor of each outcome feature.
    pub expectations: Rows,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GammaRecord {
    pub xi: FeatureMap,
    pub gamma: Rows,
    pub ridge: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct FitDiagnostics {
    pub mixture: MixtureDiagnostics,
    pub pipeline: PipelineDiagnostics,
}

/// A fitted model, self-contained enough to evaluate effects and
/// posteriors without the training data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelFile {
    pub schema_version: u32,
    pub mode: Mode,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<KernelRecord>,
    pub priors: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub raw_priors: Vec<f64>,
    pub density_floor: f64,
    /// Absent for models built directly from known parameters.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub views: Option<[ViewRecord; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub component_means: Option<[Rows; 3]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub treatment: Option<TreatmentRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outcome: Option<OutcomeRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub multitreatment: Option<GammaRecord>,
    pub diagnostics: FitDiagnostics,
}

fn view_records(m: &MixtureEstimate) -> [ViewRecord; 3] {
    m.views.each_ref().map(|v| match v {
        ViewModel::Kernel(k) => ViewRecord::Kernel {
            anchors: to_rows(&k.anchors.to_matrix()),
            coefficients: to_rows(&k.coefficients),
        },
        ViewModel::Discrete(e) => ViewRecord::Discrete { emissions: to_rows(e) },
    })
}

/// `E[x^p]` for `x ~ N(mu, s^2)`.
fn gaussian_raw_moment(mu: f64, s: f64, p: u32) -> f64 {
    // sum over even k of C(p, k) mu^(p-k) s^k (k-1)!!
    let mut total = 0.0;
    let mut binom = 1.0;
    let mut dfact = 1.0;
    for k in 0..=p {
        if k > 0 {
            binom *= (p - k + 1) as f64 / k as f64;
        }
        if k % 2 == 0 {
            if k >= 2 {
                dfact *= (k - 1) as f64;
            }
            total += binom * mu.powi((p - k) as i32) * s.powi(k as i32) * dfact;
        }
    }
    total
}

/// Expected proxy factor of every outcome feature under every component of
/// a Gaussian scenario, `K x M`.
pub fn scenario_expectations(s: &MultiProxyScenario) -> DMatrix<f64> {
    let terms = s.psi.terms();
    DMatrix::from_fn(s.k, terms.len(), |u, j| {
        let mut powers: Vec<((usize, usize), u32)> = Vec::new();
        for (v, p) in terms[j].factors() {
            if let Var::Z { view, coord } = *v {
                match powers.iter_mut().find(|(key, _)| *key == (view, coord)) {
                    Some((_, q)) => *q += p,
                    None => powers.push(((view, coord), *p)),
                }
            }
        }
        powers
            .iter()
            .map(|&((v, c), p)| gaussian_raw_moment(s.means[v][u][c], s.proxy_sigma, p))
            .product()
    })
}

/// One evaluated effect, as printed by the command line tool.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EffectReport {
    pub estimand: String,
    pub inputs: serde_json::Value,
    pub value: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_component: Option<Vec<f64>>,
}

impl ModelFile {
    pub fn from_multiproxy(fit: &MultiProxyFit, spec: &KernelSpec, seed: u64) -> Self {
        let m = &fit.mixture;
        let tm = &fit.treatment;
        let om = fit.outcome();
        Self {
            schema_version: SCHEMA_VERSION,
            mode: Mode::Multiproxy,
            seed,
            kernel: m.kernel.map(|k| KernelRecord {
                spec: *spec,
                bandwidth: k.bandwidth(),
            }),
            priors: m.priors.clone(),
            lambdas: m.lambdas.clone(),
            raw_priors: m.raw_priors.clone(),
            density_floor: m.density_floor,
            views: Some(view_records(m)),
            component_means: m.component_means.as_ref().map(|c| c.each_ref().map(to_rows)),
            treatment: Some(TreatmentRecord {
                phi: tm.feature_map.clone(),
                family: tm.family,
                alpha: to_rows(&tm.alpha),
                sigma2: tm.sigma2.clone(),
                ridge: tm.ridge,
            }),
            outcome: Some(OutcomeRecord {
                psi: om.feature_map.clone(),
                beta: to_rows(&om.beta),
                ridge: om.ridge,
                expectations: to_rows(&fit.causal.expectations),
            }),
            multitreatment: None,
            diagnostics: FitDiagnostics {
                mixture: m.diagnostics.clone(),
                pipeline: fit.diagnostics.clone(),
            },
        }
    }

    pub fn from_multitreatment(fit: &MultiTreatmentFit, seed: u64) -> Self {
        let m = &fit.mixture;
        let mt = &fit.model;
        Self {
            schema_version: SCHEMA_VERSION,
            mode: Mode::Multitreatment,
            seed,
            kernel: None,
            priors: mt.priors.clone(),
            lambdas: mt.lambdas.clone(),
            raw_priors: mt.raw_priors.clone(),
            density_floor: m.density_floor,
            views: Some(view_records(m)),
            component_means: None,
            treatment: None,
            outcome: None,
            multitreatment: Some(GammaRecord {
                xi: mt.xi.clone(),
                gamma: to_rows(&mt.gamma),
                ridge: mt.ridge,
            }),
            diagnostics: FitDiagnostics {
                mixture: m.diagnostics.clone(),
                pipeline: PipelineDiagnostics {
                    proxy_fallback_rows: fit.posteriors.fallback_rows,
                    outcome_ridge: mt.ridge,
                    ..Default::default()
                },
            },
        }
    }

    /// Model holding the true parameters of a Gaussian scenario. It has no
    /// view representations, so it answers effect queries only.
    pub fn from_scenario(s: &MultiProxyScenario, seed: u64) -> Result<Self> {
        s.validate()?;
        Ok(Self {
            schema_version: SCHEMA_VERSION,
            mode: Mode::Multiproxy,
            seed,
            kernel: None,
            priors: s.priors.clone(),
            lambdas: s.priors.iter().map(|p| p.powf(-0.5)).collect(),
            raw_priors: s.priors.clone(),
            density_floor: DEFAULT_DENSITY_FLOOR,
            views: None,
            component_means: Some(std::array::from_fn(|v| s.means[v].clone())),
            treatment: Some(TreatmentRecord {
                phi: s.phi.clone(),
                family: TreatmentFamily::Gaussian,
                alpha: s.alpha.clone(),
                sigma2: s.sigma2.clone(),
                ridge: 0.0,
            }),
            outcome: Some(OutcomeRecord {
                psi: s.psi.clone(),
                beta: s.beta.clone(),
                ridge: 0.0,
                expectations: to_rows(&scenario_expectations(s)),
            }),
            multitreatment: None,
            diagnostics: FitDiagnostics::default(),
        })
    }

    pub fn k(&self) -> usize {
        self.priors.len()
    }

    /// Structural checks beyond what the JSON schema enforces.
    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(Error::Schema(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let k = self.k();
        if k == 0 || self.lambdas.len() != k || self.raw_priors.len() != k {
            return Err(Error::Schema("priors, lambdas and raw_priors need one entry per component".into()));
        }
        if self.priors.iter().chain(&self.lambdas).chain(&self.raw_priors).any(|x| !x.is_finite()) {
            return Err(Error::Schema("non-finite prior or lambda".into()));
        }
        match self.mode {
            Mode::Multiproxy => {
                if self.outcome.is_none() || self.multitreatment.is_some() {
                    return Err(Error::Schema("multiproxy model needs 'outcome' and no 'multitreatment'".into()));
                }
                self.causal()?;
                if self.treatment.is_some() {
                    self.treatment_model()?;
                }
            }
            Mode::Multitreatment => {
                if self.multitreatment.is_none() || self.outcome.is_some() {
                    return Err(Error::Schema("multitreatment model needs 'multitreatment' and no 'outcome'".into()));
                }
                self.multitreatment_model()?;
            }
        }
        if self.views.is_some() {
            self.mixture()?;
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let m: Self = serde_json::from_str(s).map_err(|e| Error::Schema(e.to_string()))?;
        m.validate()?;
        Ok(m)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&fs::read_to_string(path)?)
    }

    /// The latent class model, for densities and posteriors.
    pub fn mixture(&self) -> Result<MixtureEstimate> {
        let k = self.k();
        let records = self.views.as_ref().ok_or(Error::UnfittedModel("model has no view representations"))?;
        let discrete = matches!(records[0], ViewRecord::Discrete { .. });
        let mut views = Vec::with_capacity(3);
        for (v, rec) in records.iter().enumerate() {
            views.push(match rec {
                ViewRecord::Kernel { anchors, coefficients } if !discrete => {
                    let a = from_rows("anchors", anchors, None)?;
                    let c = from_rows("coefficients", coefficients, Some(k))?;
                    expect_shape("coefficients", &c, a.nrows(), k)?;
                    ViewModel::Kernel(KernelView {
                        anchors: Points::from_matrix(&a),
                        coefficients: c,
                    })
                }
                ViewRecord::Discrete { emissions } if discrete => {
                    ViewModel::Discrete(from_rows("emissions", emissions, Some(k))?)
                }
                _ => return Err(Error::Schema(format!("view {v} uses a different backend than view 0"))),
            });
        }
        let kernel = match (&self.kernel, discrete) {
            (Some(k), false) => Some(RbfKernel::new(k.bandwidth)?),
            (None, false) => return Err(Error::Schema("kernel views need a 'kernel' record".into())),
            _ => None,
        };
        let component_means = match &self.component_means {
            Some(c) => {
                let [a, b, d] = c;
                Some([
                    from_rows("component_means", a, None)?,
                    from_rows("component_means", b, None)?,
                    from_rows("component_means", d, None)?,
                ])
            }
            None => None,
        };
        let [v0, v1, v2]: [ViewModel; 3] = views.try_into().expect("three views");
        Ok(MixtureEstimate {
            priors: self.priors.clone(),
            lambdas: self.lambdas.clone(),
            raw_priors: self.raw_priors.clone(),
            backend: if discrete { BackendKind::Discrete } else { BackendKind::Kernel },
            kernel,
            views: [v0, v1, v2],
            component_means,
            density_floor: self.density_floor,
            diagnostics: self.diagnostics.mixture.clone(),
        })
    }

    pub fn treatment_model(&self) -> Result<TreatmentModel> {
        let t = self.treatment.as_ref().ok_or(Error::UnfittedModel("model has no treatment stage"))?;
        let alpha = from_rows("alpha", &t.alpha, Some(t.phi.len()))?;
        expect_shape("alpha", &alpha, self.k(), t.phi.len())?;
        if t.sigma2.len() != self.k() || t.sigma2.iter().any(|s| !(*s > 0.0)) {
            return Err(Error::Schema("sigma2 needs one positive entry per component".into()));
        }
        Ok(TreatmentModel {
            alpha,
            sigma2: t.sigma2.clone(),
            family: t.family,
            feature_map: t.phi.clone(),
            ridge: t.ridge,
            clamped_variances: self.diagnostics.pipeline.clamped_variances,
        })
    }

    pub fn causal(&self) -> Result<CausalEstimate> {
        let o = self.outcome.as_ref().ok_or(Error::UnfittedModel("model has no outcome stage"))?;
        let m = o.psi.len();
        let beta = from_rows("beta", &o.beta, Some(m))?;
        expect_shape("beta", &beta, self.k(), m)?;
        let expectations = from_rows("expectations", &o.expectations, Some(m))?;
        expect_shape("expectations", &expectations, self.k(), m)?;
        Ok(CausalEstimate {
            priors: self.priors.clone(),
            outcome: OutcomeModel {
                beta,
                feature_map: o.psi.clone(),
                ridge: o.ridge,
            },
            expectations,
        })
    }

    pub fn multitreatment_model(&self) -> Result<MultiTreatmentModel> {
        let g = self
            .multitreatment
            .as_ref()
            .ok_or(Error::UnfittedModel("model has no multi-treatment stage"))?;
        let gamma = from_rows("gamma", &g.gamma, Some(g.xi.len()))?;
        expect_shape("gamma", &gamma, self.k(), g.xi.len())?;
        let emissions = match &self.views {
            Some(_) => self
                .mixture()?
                .emissions()
                .ok_or_else(|| Error::Schema("multi-treatment views must be discrete".into()))?
                .map(Clone::clone),
            None => std::array::from_fn(|_| DMatrix::zeros(0, self.k())),
        };
        Ok(MultiTreatmentModel {
            priors: self.priors.clone(),
            lambdas: self.lambdas.clone(),
            raw_priors: self.raw_priors.clone(),
            emissions,
            gamma,
            xi: g.xi.clone(),
            ridge: g.ridge,
        })
    }

    fn check_mass(&self) -> Result<()> {
        match self.priors.iter().position(|&p| !(p > 0.0)) {
            Some(u) => Err(Error::DegenerateCluster {
                component: u,
                mass: self.priors[u],
            }),
            None => Ok(()),
        }
    }

    /// Average effect at treatment value `a` (one value for proxy models,
    /// three for multi-treatment models).
    pub fn ate(&self, a: &[f64]) -> Result<EffectReport> {
        self.check_mass()?;
        let (value, per) = match self.mode {
            Mode::Multiproxy => {
                let &[a] = a else {
                    return Err(Error::InvalidConfig(format!("expected one treatment value, got {}", a.len())));
                };
                let c = self.causal()?;
                (c.ate(a), c.ate_components(a))
            }
            Mode::Multitreatment => {
                let a = treatment_triple(a)?;
                let m = self.multitreatment_model()?;
                let per = (0..self.k()).map(|u| mt_cate(&m, u, &a)).collect::<Result<_>>()?;
                (mt_ate(&m, &a), per)
            }
        };
        Ok(EffectReport {
            estimand: "ate".into(),
            inputs: serde_json::json!({ "a": a }),
            value,
            per_component: Some(per),
        })
    }

    /// Conditional effect for component `u` at treatment `a` and proxies
    /// `z` (one slice per view; views the outcome features do not read may
    /// be omitted).
    pub fn cate(&self, u: usize, a: &[f64], z: &[Vec<f64>]) -> Result<EffectReport> {
        if u >= self.k() {
            return Err(Error::InvalidConfig(format!("component {u} outside 0..{}", self.k())));
        }
        let value = match self.mode {
            Mode::Multiproxy => {
                let &[a1] = a else {
                    return Err(Error::InvalidConfig(format!("expected one treatment value, got {}", a.len())));
                };
                let c = self.causal()?;
                let psi = &c.outcome.feature_map;
                let used = psi.views_used();
                let empty: Vec<f64> = Vec::new();
                let mut zs: [&[f64]; 3] = [&empty, &empty, &empty];
                for v in 0..3 {
                    match z.get(v) {
                        Some(zv) => zs[v] = zv,
                        None if used[v] => {
                            return Err(Error::InvalidConfig(format!("outcome features need proxies of view {}", v + 1)))
                        }
                        None => {}
                    }
                }
                let need = psi
                    .terms()
                    .iter()
                    .flat_map(|t| t.factors())
                    .filter_map(|(v, _)| match v {
                        Var::Z { view, coord } => Some((*view, *coord)),
                        _ => None,
                    });
                for (view, coord) in need {
                    if coord >= zs[view].len() {
                        return Err(Error::InvalidConfig(format!(
                            "view {} needs at least {} coordinates",
                            view + 1,
                            coord + 1
                        )));
                    }
                }
                crate::causal::estimate_cate(&c.outcome, u, a1, zs)?
            }
            Mode::Multitreatment => mt_cate(&self.multitreatment_model()?, u, &treatment_triple(a)?)?,
        };
        Ok(EffectReport {
            estimand: "cate".into(),
            inputs: serde_json::json!({ "u": u, "a": a, "z": z }),
            value,
            per_component: None,
        })
    }
}

fn treatment_triple(a: &[f64]) -> Result<[f64; 3]> {
    a.try_into()
        .map_err(|_| Error::InvalidConfig(format!("expected three treatment values, got {}", a.len())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn raw_moments_of_a_normal() {
        assert_eq!(gaussian_raw_moment(2.0, 0.5, 0), 1.0);
        assert_eq!(gaussian_raw_moment(2.0, 0.5, 1), 2.0);
        assert!((gaussian_raw_moment(2.0, 0.5, 2) - 4.25).abs() < 1e-15);
        // mu^3 + 3 mu s^2
        assert!((gaussian_raw_moment(2.0, 0.5, 3) - 9.5).abs() < 1e-14);
        // 3 s^4 at mu = 0
        assert!((gaussian_raw_moment(0.0, 0.5, 4) - 0.1875).abs() < 1e-15);
    }

    #[test]
    fn float_text_is_exact() {
        for x in [0.1, -1.0 / 3.0, 1e-300, 5e-324, f64::MAX, -0.0, 123456789.12345679] {
            let s = fmt_f64(x);
            assert_eq!(s.parse::<f64>().unwrap().to_bits(), x.to_bits(), "{s}");
        }
    }

    #[test]
    fn truth_path_swaps_extension() {
        assert_eq!(truth_path(Path::new("out/d.csv")), PathBuf::from("out/d.truth.json"));
    }

    #[test]
    fn header_only_file_is_an_empty_dataset() {
        let d = read_dataset("z1_0,z2_0,z3_0,a,y\n".as_bytes(), None).unwrap();
        assert!(d.is_empty());
        assert_eq!(d.mode(), Mode::Multiproxy);
    }

    #[test]
    fn wrong_headers_are_rejected() {
        for h in ["z1_0,z2_0,a,y\n", "z1_0,z2_0,z3_1,a,y\n", "a1,a2,y\n", "x,y\n"] {
            assert!(read_dataset(h.as_bytes(), None).is_err(), "{h}");
        }
    }

    #[test]
    fn non_numeric_cells_are_rejected() {
        let bad = "z1_0,z2_0,z3_0,a,y\n1,2,3,oops,5\n";
        assert!(matches!(read_dataset(bad.as_bytes(), None), Err(Error::InvalidData(_))));
        let bad = "a1,a2,a3,y\n0,1,2.5,1\n";
        assert!(matches!(read_dataset(bad.as_bytes(), None), Err(Error::InvalidData(_))));
    }

    #[test]
    fn truth_model_ate_slope() {
        let s = MultiProxyScenario::three_component();
        let m = ModelFile::from_scenario(&s, 0).unwrap();
        let slope = m.ate(&[1.0]).unwrap().value - m.ate(&[0.0]).unwrap().value;
        // 0.33 * 2.5 - 0.33 * 1.0 + 0.34 * 4.0
        assert!((slope - 1.855).abs() < 1e-12, "{slope}");
    }

    #[test]
    fn unknown_schema_version_is_refused() {
        let s = MultiProxyScenario::three_component();
        let mut m = ModelFile::from_scenario(&s, 0).unwrap();
        m.schema_version = 99;
        assert!(matches!(ModelFile::from_json(&m.to_json().unwrap()), Err(Error::Schema(_))));
    }
}

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use super::kernel::RbfKernel;
use crate::data::Points;
use crate::error::{Error, Result};

/// Densities below this are clamped before Bayes' rule.
pub const DEFAULT_DENSITY_FLOOR: f64 = 1e-12;
/// Raw `lambda^-2` priors are clamped into `[PRIOR_FLOOR, 1]` before
/// renormalization.
pub const PRIOR_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BackendKind {
    Kernel,
    Discrete,
}

/// Conditional embedding of one view: component `u` is represented by
/// `sum_j coefficients[j, u] * rho(anchors_j)`.
#[derive(Debug, Clone, PartialEq)]
pub struct KernelView {
    pub anchors: Points,
    pub coefficients: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum ViewModel {
    Kernel(KernelView),
    /// Column-stochastic `S x K` emission matrix.
    Discrete(DMatrix<f64>),
}

impl ViewModel {
    fn permuted(&self, perm: &[usize]) -> Self {
        let pick = |m: &DMatrix<f64>| DMatrix::from_fn(m.nrows(), perm.len(), |i, j| m[(i, perm[j])]);
        match self {
            ViewModel::Kernel(kv) => ViewModel::Kernel(KernelView {
                anchors: kv.anchors.clone(),
                coefficients: pick(&kv.coefficients),
            }),
            ViewModel::Discrete(e) => ViewModel::Discrete(pick(e)),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MixtureDiagnostics {
    pub method: String,
    pub tensor_residual: f64,
    /// Eigenvalues kept by the whitening step.
    pub whitening_spectrum: Vec<f64>,
    /// Raw priors that fell outside `[PRIOR_FLOOR, 1]`.
    pub clamped_priors: usize,
    /// Jitter used by the Gram Cholesky factorizations, if any.
    pub cholesky_jitter: f64,
}

/// Recovered priors and per-view component distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct MixtureEstimate {
    /// Normalized class probabilities.
    pub priors: Vec<f64>,
    /// Tensor eigenvalues `lambda_u`.
    pub lambdas: Vec<f64>,
    /// `lambda_u^-2` before clamping and renormalization.
    pub raw_priors: Vec<f64>,
    pub backend: BackendKind,
    pub kernel: Option<RbfKernel>,
    pub views: [ViewModel; 3],
    /// Per-view `K x d` conditional means `E[Z_v | U = u]`, where the backend
    /// can estimate them.
    pub component_means: Option<[DMatrix<f64>; 3]>,
    pub density_floor: f64,
    pub diagnostics: MixtureDiagnostics,
}

/// Input rows for one view.
#[derive(Debug, Clone, Copy)]
pub enum ViewInput<'a> {
    Continuous(&'a Points),
    Categorical(&'a [usize]),
}

impl ViewInput<'_> {
    pub fn len(&self) -> usize {
        match self {
            ViewInput::Continuous(p) => p.len(),
            ViewInput::Categorical(c) => c.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Priors from tensor eigenvalues: `lambda^-2`, clamped into
/// `[PRIOR_FLOOR, 1]`, renormalized. Returns `(raw, normalized, clamped)`.
pub fn priors_from_lambdas(lambdas: &[f64]) -> (Vec<f64>, Vec<f64>, usize) {
    let raw: Vec<f64> = lambdas.iter().map(|l| l.powi(-2)).collect();
    let mut clamped = 0;
    let kept: Vec<f64> = raw
        .iter()
        .map(|&p| {
            if !(PRIOR_FLOOR..=1.0).contains(&p) {
                clamped += 1;
            }
            if p.is_nan() {
                PRIOR_FLOOR
            } else {
                p.clamp(PRIOR_FLOOR, 1.0)
            }
        })
        .collect();
    let total: f64 = kept.iter().sum();
    (raw, kept.iter().map(|p| p / total).collect(), clamped)
}

impl MixtureEstimate {
    pub fn k(&self) -> usize {
        self.priors.len()
    }

    /// Density of `view` under `component` at one point.
    pub fn density(&self, view: usize, component: usize, z: &[f64]) -> Result<f64> {
        let raw = self.raw_density(view, component, z)?;
        Ok(raw.max(self.density_floor))
    }

    /// Density of a categorical view at a level.
    pub fn density_level(&self, view: usize, component: usize, level: usize) -> Result<f64> {
        match &self.views[view] {
            ViewModel::Discrete(e) => {
                if level >= e.nrows() || component >= e.ncols() {
                    return Err(Error::InvalidData(format!("level {level} / component {component} out of range")));
                }
                Ok(e[(level, component)].max(self.density_floor))
            }
            ViewModel::Kernel(_) => Err(Error::InvalidData("kernel view evaluated at a categorical level".into())),
        }
    }

    fn raw_density(&self, view: usize, component: usize, z: &[f64]) -> Result<f64> {
        match &self.views[view] {
            ViewModel::Kernel(kv) => {
                let kernel = self.kernel.ok_or(Error::UnfittedModel("kernel view without a kernel"))?;
                if z.len() != kv.anchors.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: kv.anchors.dim(),
                        got: z.len(),
                    });
                }
                Ok(kv
                    .anchors
                    .rows()
                    .enumerate()
                    .map(|(j, a)| kv.coefficients[(j, component)] * kernel.eval(a, z))
                    .sum())
            }
            ViewModel::Discrete(_) => Err(Error::InvalidData("categorical view evaluated at a point".into())),
        }
    }

    /// Unclamped `n x K` densities of one view at many rows.
    pub fn view_densities(&self, view: usize, input: ViewInput<'_>) -> Result<DMatrix<f64>> {
        match (&self.views[view], input) {
            (ViewModel::Kernel(kv), ViewInput::Continuous(p)) => {
                let kernel = self.kernel.ok_or(Error::UnfittedModel("kernel view without a kernel"))?;
                if p.dim() != kv.anchors.dim() {
                    return Err(Error::DimensionMismatch {
                        expected: kv.anchors.dim(),
                        got: p.dim(),
                    });
                }
                Ok(kernel.gram(p, &kv.anchors) * &kv.coefficients)
            }
            (ViewModel::Discrete(e), ViewInput::Categorical(levels)) => {
                let mut out = DMatrix::zeros(levels.len(), e.ncols());
                for (i, &s) in levels.iter().enumerate() {
                    if s >= e.nrows() {
                        return Err(Error::InvalidData(format!("level {s} outside 0..{}", e.nrows())));
                    }
                    out.set_row(i, &e.row(s));
                }
                Ok(out)
            }
            _ => Err(Error::InvalidData(format!("view {view} input does not match the fitted backend"))),
        }
    }

    /// Proxy-only posterior membership weights for each input row.
    pub fn posteriors(&self, inputs: [ViewInput<'_>; 3]) -> Result<PosteriorMatrix> {
        let n = inputs[0].len();
        if inputs.iter().any(|v| v.len() != n) {
            return Err(Error::InvalidData("views have different row counts".into()));
        }
        let d = [
            self.view_densities(0, inputs[0])?,
            self.view_densities(1, inputs[1])?,
            self.view_densities(2, inputs[2])?,
        ];
        Ok(posteriors_from_densities(&self.priors, [&d[0], &d[1], &d[2]], self.density_floor))
    }

    /// Convenience for continuous views.
    pub fn posteriors_points(&self, views: [&Points; 3]) -> Result<PosteriorMatrix> {
        self.posteriors([
            ViewInput::Continuous(views[0]),
            ViewInput::Continuous(views[1]),
            ViewInput::Continuous(views[2]),
        ])
    }

    /// Relabels components so that new component `j` is old `perm[j]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Self> {
        let k = self.k();
        let mut seen = vec![false; k];
        if perm.len() != k || perm.iter().any(|&p| p >= k || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::InvalidConfig(format!("{perm:?} is not a permutation of 0..{k}")));
        }
        let pick = |v: &[f64]| perm.iter().map(|&p| v[p]).collect::<Vec<_>>();
        let pick_rows = |m: &DMatrix<f64>| DMatrix::from_fn(k, m.ncols(), |i, j| m[(perm[i], j)]);
        Ok(Self {
            priors: pick(&self.priors),
            lambdas: pick(&self.lambdas),
            raw_priors: pick(&self.raw_priors),
            backend: self.backend,
            kernel: self.kernel,
            views: [
                self.views[0].permuted(perm),
                self.views[1].permuted(perm),
                self.views[2].permuted(perm),
            ],
            component_means: self
                .component_means
                .as_ref()
                .map(|m| [pick_rows(&m[0]), pick_rows(&m[1]), pick_rows(&m[2])]),
            density_floor: self.density_floor,
            diagnostics: self.diagnostics.clone(),
        })
    }

    /// Emission matrices of a discrete fit.
    pub fn emissions(&self) -> Option<[&DMatrix<f64>; 3]> {
        match &self.views {
            [ViewModel::Discrete(a), ViewModel::Discrete(b), ViewModel::Discrete(c)] => Some([a, b, c]),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PosteriorFlavor {
    /// `w_u(z) = P(U = u | Z = z)`.
    ProxyOnly,
    /// `w~_u(a, z) = P(U = u | A = a, Z = z)`.
    TreatmentUpdated,
}

/// Row-stochastic `n x K` membership weights.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorMatrix {
    pub weights: DMatrix<f64>,
    pub flavor: PosteriorFlavor,
    /// Rows where every likelihood underflowed and a fallback was used.
    pub fallback_rows: usize,
}

impl PosteriorMatrix {
    pub fn new(weights: DMatrix<f64>, flavor: PosteriorFlavor) -> Result<Self> {
        for (i, row) in weights.row_iter().enumerate() {
            let s: f64 = row.sum();
            if (s - 1.0).abs() > 1e-12 || row.iter().any(|&w| !(0.0..=1.0).contains(&w)) {
                return Err(Error::InvalidData(format!("posterior row {i} is not a probability vector")));
            }
        }
        Ok(Self {
            weights,
            flavor,
            fallback_rows: 0,
        })
    }

    pub fn n(&self) -> usize {
        self.weights.nrows()
    }

    pub fn k(&self) -> usize {
        self.weights.ncols()
    }

    /// One-hot weights from labels.
    pub fn one_hot(labels: &[usize], k: usize, flavor: PosteriorFlavor) -> Self {
        let mut w = DMatrix::zeros(labels.len(), k);
        for (i, &l) in labels.iter().enumerate() {
            w[(i, l)] = 1.0;
        }
        Self {
            weights: w,
            flavor,
            fallback_rows: 0,
        }
    }

    pub fn permuted(&self, perm: &[usize]) -> Self {
        let w = &self.weights;
        Self {
            weights: DMatrix::from_fn(w.nrows(), w.ncols(), |i, j| w[(i, perm[j])]),
            flavor: self.flavor,
            fallback_rows: self.fallback_rows,
        }
    }
}

/// Divides a row by its sum and clips round-off so every entry is in
/// `[0, 1]` and the row sums to one.
pub(crate) fn normalize_row(row: &mut [f64]) {
    let s: f64 = row.iter().sum();
    row.iter_mut().for_each(|x| *x /= s);
    let s: f64 = row.iter().sum();
    if s != 1.0 {
        // put the residual on the largest entry
        let (imax, _) = row
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc });
        row[imax] += 1.0 - s;
    }
    row.iter_mut().for_each(|x| *x = x.clamp(0.0, 1.0));
}

/// Bayes' rule over clamped per-view densities, evaluated in log space.
///
/// Rows where every component has every view at or below `floor` fall
/// back to the priors.
pub fn posteriors_from_densities(priors: &[f64], densities: [&DMatrix<f64>; 3], floor: f64) -> PosteriorMatrix {
    let n = densities[0].nrows();
    let k = priors.len();
    let log_prior: Vec<f64> = priors.iter().map(|p| p.ln()).collect();
    let mut weights = DMatrix::zeros(n, k);
    let mut fallback = 0;
    let mut row = vec![0.0; k];
    for i in 0..n {
        let mut all_floored = true;
        for u in 0..k {
            let mut lp = log_prior[u];
            for d in densities {
                let f = d[(i, u)];
                if f > floor {
                    all_floored = false;
                    lp += f.ln();
                } else {
                    lp += floor.ln();
                }
            }
            row[u] = lp;
        }
        if all_floored {
            row.copy_from_slice(priors);
            fallback += 1;
        } else {
            let m = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            row.iter_mut().for_each(|x| *x = (*x - m).exp());
        }
        normalize_row(&mut row);
        for u in 0..k {
            weights[(i, u)] = row[u];
        }
    }
    PosteriorMatrix {
        weights,
        flavor: PosteriorFlavor::ProxyOnly,
        fallback_rows: fallback,
    }
}

/// MAP labels, `argmax_u w[i, u]`, smallest index on ties. Labels are
/// 0-based.
pub fn map_assign(p: &PosteriorMatrix) -> Vec<usize> {
    p.weights
        .row_iter()
        .map(|row| {
            let mut best = 0;
            for (u, &w) in row.iter().enumerate() {
                if w > row[best] {
                    best = u;
                }
            }
            best
        })
        .collect()
}

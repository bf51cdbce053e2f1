use nalgebra::DVector;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::tensor::SymTensor3;
use crate::error::{Error, Result};
use crate::rng;

/// Restart, iteration and stopping parameters for the tensor power method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerConfig {
    pub restarts: usize,
    pub iters: usize,
    pub tol: f64,
}

impl Default for PowerConfig {
    fn default() -> Self {
        Self {
            restarts: 50,
            iters: 200,
            tol: 1e-10,
        }
    }
}

/// Eigenpairs extracted by deflation.
#[derive(Debug, Clone)]
pub struct TensorEigenSet {
    pub lambdas: Vec<f64>,
    pub vectors: Vec<DVector<f64>>,
    /// Frobenius norm of what is left after removing every extracted term.
    pub residual: f64,
}

struct Candidate {
    lambda: f64,
    vector: DVector<f64>,
    converged: bool,
}

fn iterate_from(t: &SymTensor3, mut v: DVector<f64>, cfg: &PowerConfig) -> Result<Candidate> {
    let mut converged = false;
    for _ in 0..cfg.iters {
        let w = t.contract(&v)?;
        let norm = w.norm();
        if norm <= f64::MIN_POSITIVE {
            // T(I, v, v) vanished; v is a fixed point with eigenvalue 0.
            converged = true;
            break;
        }
        let next = w / norm;
        // Odd order: a negative eigenvalue makes the iterate alternate sign.
        let step = (&next - &v).norm().min((&next + &v).norm());
        v = next;
        if step < cfg.tol {
            converged = true;
            break;
        }
    }
    let lambda = t.contract_full(&v)?;
    Ok(Candidate {
        lambda,
        vector: v,
        converged,
    })
}

/// Robust tensor power method with deflation.
///
/// Each of the `k` components is found by running power iteration
/// `v <- T(I,v,v) / |T(I,v,v)|` from `cfg.restarts` random unit starts and
/// keeping the converged start with the largest `T(v,v,v)`; that term is then
/// subtracted from the tensor. Every restart draws from its own seeded
/// stream, so the result does not depend on evaluation order.
pub fn robust_power_method(
    t: &SymTensor3,
    k: usize,
    cfg: &PowerConfig,
    seed: u64,
) -> Result<TensorEigenSet> {
    if cfg.restarts == 0 || cfg.iters == 0 {
        return Err(Error::InvalidConfig("power method needs restarts >= 1 and iters >= 1".into()));
    }
    if k > t.dim() {
        return Err(Error::InvalidConfig(format!(
            "cannot extract {k} components from a {}-dimensional tensor",
            t.dim()
        )));
    }
    let dim = t.dim();
    let mut work = t.clone();
    let mut lambdas = Vec::with_capacity(k);
    let mut vectors = Vec::with_capacity(k);
    for comp in 0..k {
        let mut best: Option<Candidate> = None;
        for r in 0..cfg.restarts {
            let id = rng::substream(rng::streams::POWER_METHOD, (comp * cfg.restarts + r) as u64);
            let mut rng = rng::stream(seed, id);
            let start = DVector::from_fn(dim, |_, _| StandardNormal.sample(&mut rng));
            let start = start.normalize();
            let cand = iterate_from(&work, start, cfg)?;
            if !cand.converged {
                continue;
            }
            // Strict comparison keeps the first-found on ties.
            if best.as_ref().is_none_or(|b| cand.lambda.abs() > b.lambda.abs()) {
                best = Some(cand);
            }
        }
        let Some(mut found) = best else {
            return Err(Error::NonConvergence {
                component: comp,
                iters: cfg.iters,
            });
        };
        if found.lambda < 0.0 {
            found.lambda = -found.lambda;
            found.vector.neg_mut();
        }
        work.deflate(found.lambda, &found.vector);
        lambdas.push(found.lambda);
        vectors.push(found.vector);
    }
    Ok(TensorEigenSet {
        lambdas,
        vectors,
        residual: work.frobenius_norm(),
    })
}

//! Matching estimated components to reference components.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// Largest `K` searched exhaustively.
pub const MAX_EXHAUSTIVE_K: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    /// `perm[j]` is the estimated component matched to reference `j`.
    pub perm: Vec<usize>,
    /// Sum of Euclidean distances between matched rows.
    pub cost: f64,
    /// Another permutation reaches the same cost.
    pub ambiguous: bool,
    /// False when the greedy fallback was used.
    pub exhaustive: bool,
}

fn distances(est: &DMatrix<f64>, reference: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if est.shape() != reference.shape() {
        return Err(Error::DimensionMismatch {
            expected: reference.nrows() * reference.ncols(),
            got: est.nrows() * est.ncols(),
        });
    }
    let k = est.nrows();
    Ok(DMatrix::from_fn(k, k, |j, i| (est.row(i) - reference.row(j)).norm()))
}

fn permutations(k: usize) -> Vec<Vec<usize>> {
    let mut out = Vec::new();
    let mut current: Vec<usize> = (0..k).collect();
    // Heap's algorithm
    fn heap(m: usize, a: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if m <= 1 {
            out.push(a.clone());
            return;
        }
        for i in 0..m {
            heap(m - 1, a, out);
            if m.is_multiple_of(2) {
                a.swap(i, m - 1);
            } else {
                a.swap(0, m - 1);
            }
        }
    }
    heap(k, &mut current, &mut out);
    out
}

/// Best permutation over all `K!` candidates. Rows of both matrices are
/// component signatures (means, emission columns, ...).
pub fn align_exact(est: &DMatrix<f64>, reference: &DMatrix<f64>) -> Result<Alignment> {
    let k = est.nrows();
    if k > MAX_EXHAUSTIVE_K {
        return Err(Error::KTooLarge(k));
    }
    let d = distances(est, reference)?;
    let mut scored: Vec<(f64, Vec<usize>)> = permutations(k)
        .into_iter()
        .map(|p| ((0..k).map(|j| d[(j, p[j])]).sum(), p))
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)));
    let (cost, perm) = scored[0].clone();
    let ambiguous = scored
        .get(1)
        .is_some_and(|(c, _)| (c - cost).abs() <= 1e-12 * cost.abs().max(1.0));
    Ok(Alignment {
        perm,
        cost,
        ambiguous,
        exhaustive: true,
    })
}

/// Exhaustive alignment for `K <= 8`, greedy nearest pairs above that.
pub fn align_permutation(est: &DMatrix<f64>, reference: &DMatrix<f64>) -> Result<Alignment> {
    let k = est.nrows();
    if k <= MAX_EXHAUSTIVE_K {
        return align_exact(est, reference);
    }
    let d = distances(est, reference)?;
    let mut pairs: Vec<(f64, usize, usize)> = (0..k)
        .flat_map(|j| (0..k).map(move |i| (j, i)))
        .map(|(j, i)| (d[(j, i)], j, i))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut perm = vec![usize::MAX; k];
    let mut used = vec![false; k];
    let mut cost = 0.0;
    for (c, j, i) in pairs {
        if perm[j] == usize::MAX && !used[i] {
            perm[j] = i;
            used[i] = true;
            cost += c;
        }
    }
    Ok(Alignment {
        perm,
        cost,
        ambiguous: false,
        exhaustive: false,
    })
}

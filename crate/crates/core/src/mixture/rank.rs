//! Choosing the number of latent classes from a cross-covariance spectrum.

use nalgebra::DMatrix;

use super::kernel::{cross_spectrum, KernelSpec};
use super::multiview::{one_hot, subsample};
use crate::data::Points;
use crate::error::{Error, Result};

/// Multiple of the noise floor a singular value has to clear to count as
/// signal.
pub const NOISE_MULTIPLE: f64 = 4.0;

/// Descending singular values of a cross moment together with the number of
/// samples it was estimated from.
#[derive(Debug, Clone, PartialEq)]
pub struct Scree {
    pub values: Vec<f64>,
    pub samples: usize,
}

impl Scree {
    /// Sampling noise scale `s_1 / sqrt(samples)`.
    pub fn noise_floor(&self) -> f64 {
        match self.values.first() {
            Some(&s1) if self.samples > 0 => s1 / (self.samples as f64).sqrt(),
            _ => 0.0,
        }
    }

    /// Number of singular values above `NOISE_MULTIPLE` noise floors, i.e.
    /// the sharp drop from signal into sampling noise. At least 1.
    ///
    /// The plain ratio gap of [`select_rank`] is unreliable here: the first
    /// uncentered value carries the mean and its ratio to the second can
    /// beat the real drop, and ratios between two noise values are
    /// arbitrary.
    pub fn select_rank(&self) -> Result<usize> {
        if self.values.is_empty() {
            return Err(Error::InvalidData("empty spectrum".into()));
        }
        let cut = NOISE_MULTIPLE * self.noise_floor();
        Ok(self.values.iter().take_while(|&&s| s > cut).count().max(1))
    }
}

/// Leading `max_k` singular values of the view-1/view-2 cross-covariance in
/// the RBF feature space, descending.
pub fn scree(views: [&Points; 3], max_k: usize, kernel: &KernelSpec, seed: u64) -> Result<Scree> {
    let n = views[0].len();
    if n == 0 {
        return Err(Error::EmptyInput("views"));
    }
    let rbf = kernel.resolve(&views, seed)?;
    let idx = subsample(n, kernel.landmark_budget(), seed);
    let cs = cross_spectrum(&rbf, &views[0].select(&idx), &views[1].select(&idx), max_k, seed)?;
    Ok(Scree {
        values: cs.values.iter().copied().collect(),
        samples: idx.len(),
    })
}

/// Singular values of the one-hot cross moment of two categorical views.
pub fn scree_discrete(views: [&[usize]; 3], levels: usize, max_k: usize) -> Result<Scree> {
    let n = views[0].len();
    if n == 0 {
        return Err(Error::EmptyInput("views"));
    }
    let c = one_hot(views[0], levels).tr_mul(&one_hot(views[1], levels)) / n as f64;
    Ok(Scree {
        values: singular_spectrum(&c, max_k),
        samples: n,
    })
}

/// Leading `max_k` singular values of a dense matrix, descending.
pub fn singular_spectrum(m: &DMatrix<f64>, max_k: usize) -> Vec<f64> {
    let mut sv: Vec<f64> = m.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv.truncate(max_k);
    sv
}

/// Largest consecutive-ratio gap: the `k` maximizing `s_k / s_{k+1}`.
///
/// Values at or below `1e-12 * s_1` count as zero, so a spectrum that drops
/// to numerical zero after `k` values selects `k`.
pub fn select_rank(spectrum: &[f64]) -> Result<usize> {
    if spectrum.len() < 2 {
        return Err(Error::InvalidData("need at least two singular values".into()));
    }
    let tiny = 1e-12 * spectrum[0].abs();
    let mut best = (1, f64::NEG_INFINITY);
    for j in 0..spectrum.len() - 1 {
        let (a, b) = (spectrum[j], spectrum[j + 1]);
        if a <= tiny {
            break;
        }
        let ratio = if b <= tiny { f64::INFINITY } else { a / b };
        if ratio > best.1 {
            best = (j + 1, ratio);
        }
        if ratio.is_infinite() {
            break;
        }
    }
    Ok(best.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    #[test]
    fn gap_picks_the_drop() {
        assert_eq!(select_rank(&[5.0, 4.0, 3.5, 0.1, 0.09]).unwrap(), 3);
        assert_eq!(select_rank(&[1.0, 0.0, 0.0]).unwrap(), 1);
    }

    #[test]
    fn noise_tail_does_not_win() {
        // two real components, then sampling noise with a spurious gap
        let s = Scree {
            values: vec![0.2496, 0.0529, 0.0075, 0.0041, 0.0004],
            samples: 5000,
        };
        assert_eq!(select_rank(&s.values).unwrap(), 4);
        assert_eq!(s.select_rank().unwrap(), 2);
        // the mean-carrying first value dominates every ratio
        let s = Scree {
            values: vec![0.2488, 0.0422, 0.0093, 0.0027, 0.0012],
            samples: 5000,
        };
        assert_eq!(select_rank(&s.values).unwrap(), 1);
        assert_eq!(s.select_rank().unwrap(), 2);
    }

    #[test]
    fn exact_rank_three_matrix() {
        let mut r = rng::stream(1, 0);
        let a = DMatrix::from_fn(8, 3, |_, _| r.random::<f64>() - 0.5);
        let b = DMatrix::from_fn(3, 6, |_, _| r.random::<f64>() - 0.5);
        let sv = singular_spectrum(&(a * b), 5);
        assert!(sv[3] < 1e-12 * sv[0]);
        assert_eq!(select_rank(&sv).unwrap(), 3);
    }
}

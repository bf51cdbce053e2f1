//! In-memory datasets.

use nalgebra::DMatrix;

use crate::error::{Error, Result};

/// `n` points in `R^d`, stored row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Points {
    dim: usize,
    data: Vec<f64>,
}

impl Points {
    pub fn new(dim: usize, data: Vec<f64>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidData("points need dimension >= 1".into()));
        }
        if !data.len().is_multiple_of(dim) {
            return Err(Error::DimensionMismatch {
                expected: dim,
                got: data.len() % dim,
            });
        }
        Ok(Self { dim, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let dim = rows.first().map(Vec::len).ok_or(Error::EmptyInput("points"))?;
        let mut data = Vec::with_capacity(rows.len() * dim);
        for r in rows {
            if r.len() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    got: r.len(),
                });
            }
            data.extend_from_slice(r);
        }
        Self::new(dim, data)
    }

    pub fn empty(dim: usize) -> Self {
        Self { dim, data: Vec::new() }
    }

    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        let mut data = Vec::with_capacity(m.len());
        for i in 0..m.nrows() {
            data.extend(m.row(i).iter());
        }
        Self {
            dim: m.ncols().max(1),
            data,
        }
    }

    pub fn to_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.len(), self.dim, &self.data)
    }

    pub fn len(&self) -> usize {
        self.data.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks_exact(self.dim)
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn select(&self, idx: &[usize]) -> Self {
        let mut data = Vec::with_capacity(idx.len() * self.dim);
        for &i in idx {
            data.extend_from_slice(self.row(i));
        }
        Self { dim: self.dim, data }
    }
}

/// Three proxy views, a scalar treatment and an outcome per record.
#[derive(Debug, Clone, PartialEq)]
pub struct ProxyData {
    pub views: [Points; 3],
    pub treatment: Vec<f64>,
    pub outcome: Vec<f64>,
}

impl ProxyData {
    pub fn new(views: [Points; 3], treatment: Vec<f64>, outcome: Vec<f64>) -> Result<Self> {
        let n = views[0].len();
        let d = views[0].dim();
        for v in &views[1..] {
            if v.len() != n || v.dim() != d {
                return Err(Error::InvalidData(format!(
                    "views disagree in shape: {}x{} vs {}x{}",
                    n,
                    d,
                    v.len(),
                    v.dim()
                )));
            }
        }
        for col in [&treatment, &outcome] {
            if col.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: col.len(),
                });
            }
        }
        Ok(Self {
            views,
            treatment,
            outcome,
        })
    }

    pub fn len(&self) -> usize {
        self.treatment.len()
    }

    pub fn is_empty(&self) -> bool {
        self.treatment.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.views[0].dim()
    }

    /// Proxies of record `i`, one slice per view.
    pub fn proxies(&self, i: usize) -> [&[f64]; 3] {
        [self.views[0].row(i), self.views[1].row(i), self.views[2].row(i)]
    }
}

/// Three categorical treatments (levels `0..levels`) and an outcome.
#[derive(Debug, Clone, PartialEq)]
pub struct TreatmentData {
    pub treatments: [Vec<usize>; 3],
    pub outcome: Vec<f64>,
    pub levels: usize,
}

impl TreatmentData {
    pub fn new(treatments: [Vec<usize>; 3], outcome: Vec<f64>, levels: usize) -> Result<Self> {
        let n = outcome.len();
        for t in &treatments {
            if t.len() != n {
                return Err(Error::DimensionMismatch {
                    expected: n,
                    got: t.len(),
                });
            }
            if let Some(&bad) = t.iter().find(|&&x| x >= levels) {
                return Err(Error::InvalidData(format!(
                    "treatment level {bad} outside 0..{levels}"
                )));
            }
        }
        Ok(Self {
            treatments,
            outcome,
            levels,
        })
    }

    pub fn len(&self) -> usize {
        self.outcome.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcome.is_empty()
    }

    /// Treatments of record `i` as reals, the input of the outcome features.
    pub fn treatment_vector(&self, i: usize) -> [f64; 3] {
        [
            self.treatments[0][i] as f64,
            self.treatments[1][i] as f64,
            self.treatments[2][i] as f64,
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Dataset {
    MultiProxy(ProxyData),
    MultiTreatment(TreatmentData),
}

//! Dense sample containers.
//!
//! A [`DataMatrix`] stores `n` observations of dimension `d` in row-major
//! order. [`GroupedSamples`] holds `k >= 2` such samples of a common
//! dimension and exposes the pooled view used by every statistic.

use crate::error::{KbqdError, Result};

/// `n x d` matrix of real observations, one row per observation.
#[derive(Debug, Clone, PartialEq)]
pub struct DataMatrix {
    values: Vec<f64>,
    nrows: usize,
    ncols: usize,
}

impl DataMatrix {
    pub fn from_row_major(nrows: usize, ncols: usize, values: Vec<f64>) -> Result<Self> {
        if ncols == 0 {
            return Err(KbqdError::InvalidParameter("dimension must be >= 1".into()));
        }
        if values.len() != nrows * ncols {
            return Err(KbqdError::DimensionMismatch {
                expected: nrows * ncols,
                got: values.len(),
            });
        }
        Ok(Self { values, nrows, ncols })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        let ncols = rows
            .first()
            .map(|r| r.as_ref().len())
            .ok_or_else(|| KbqdError::InvalidParameter("no rows given".into()))?;
        let mut values = Vec::with_capacity(rows.len() * ncols);
        for row in rows {
            let row = row.as_ref();
            if row.len() != ncols {
                return Err(KbqdError::DimensionMismatch { expected: ncols, got: row.len() });
            }
            values.extend_from_slice(row);
        }
        Self::from_row_major(rows.len(), ncols, values)
    }

    /// Empty matrix with a fixed dimension.
    pub fn empty(ncols: usize) -> Self {
        Self { values: Vec::new(), nrows: 0, ncols }
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.ncols..(i + 1) * self.ncols]
    }

    pub fn rows(&self) -> impl ExactSizeIterator<Item = &[f64]> + '_ {
        // chunks_exact on an empty slice still needs a non-zero chunk size
        self.values.chunks_exact(self.ncols.max(1))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.ncols + j]
    }

    /// Error unless every entry is finite.
    pub fn check_finite(&self) -> Result<()> {
        match self.values.iter().position(|v| !v.is_finite()) {
            Some(pos) => Err(KbqdError::NonFinite { row: pos / self.ncols, col: pos % self.ncols }),
            None => Ok(()),
        }
    }

    /// New matrix made of the given rows, in order. Indices may repeat.
    pub fn select_rows(&self, indices: &[usize]) -> Self {
        let mut values = Vec::with_capacity(indices.len() * self.ncols);
        for &i in indices {
            values.extend_from_slice(self.row(i));
        }
        Self { values, nrows: indices.len(), ncols: self.ncols }
    }

    /// Column means.
    pub fn mean(&self) -> Vec<f64> {
        let mut mu = vec![0.0; self.ncols];
        for row in self.rows() {
            for (m, v) in mu.iter_mut().zip(row) {
                *m += v;
            }
        }
        let n = self.nrows as f64;
        mu.iter_mut().for_each(|m| *m /= n);
        mu
    }

    /// Sample covariance with `n - 1` denominator, row-major `d x d`.
    pub fn covariance(&self) -> Vec<f64> {
        let d = self.ncols;
        let mu = self.mean();
        let mut cov = vec![0.0; d * d];
        for row in self.rows() {
            for a in 0..d {
                let da = row[a] - mu[a];
                for b in a..d {
                    cov[a * d + b] += da * (row[b] - mu[b]);
                }
            }
        }
        let denom = (self.nrows as f64) - 1.0;
        for a in 0..d {
            for b in a..d {
                let v = cov[a * d + b] / denom;
                cov[a * d + b] = v;
                cov[b * d + a] = v;
            }
        }
        cov
    }

    /// Column standard deviations (`n - 1` denominator).
    pub fn std_dev(&self) -> Vec<f64> {
        let d = self.ncols;
        let cov = self.covariance();
        (0..d).map(|j| cov[j * d + j].sqrt()).collect()
    }

    pub fn vstack(parts: &[&DataMatrix]) -> Result<Self> {
        let ncols = parts
            .first()
            .map(|m| m.ncols)
            .ok_or_else(|| KbqdError::InvalidParameter("nothing to stack".into()))?;
        let mut values = Vec::with_capacity(parts.iter().map(|m| m.values.len()).sum());
        let mut nrows = 0;
        for m in parts {
            if m.ncols != ncols {
                return Err(KbqdError::DimensionMismatch { expected: ncols, got: m.ncols });
            }
            values.extend_from_slice(&m.values);
            nrows += m.nrows;
        }
        Ok(Self { values, nrows, ncols })
    }
}

/// `k >= 2` samples sharing a dimension, each with at least two rows.
#[derive(Debug, Clone)]
pub struct GroupedSamples {
    pooled: DataMatrix,
    sizes: Vec<usize>,
    offsets: Vec<usize>,
}

impl GroupedSamples {
    pub fn new(samples: Vec<DataMatrix>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(KbqdError::TooFewGroups(samples.len()));
        }
        let sizes: Vec<usize> = samples.iter().map(DataMatrix::nrows).collect();
        let refs: Vec<&DataMatrix> = samples.iter().collect();
        let pooled = DataMatrix::vstack(&refs)?;
        Self::from_pooled(pooled, sizes)
    }

    /// Wrap an already-pooled matrix whose rows are ordered group by group.
    pub fn from_pooled(pooled: DataMatrix, sizes: Vec<usize>) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(KbqdError::TooFewGroups(sizes.len()));
        }
        if let Some((i, &n)) = sizes.iter().enumerate().find(|(_, &n)| n < 2) {
            return Err(KbqdError::TooFewObservations { what: format!("group {i}"), min: 2, got: n });
        }
        let total: usize = sizes.iter().sum();
        if total != pooled.nrows() {
            return Err(KbqdError::DimensionMismatch { expected: pooled.nrows(), got: total });
        }
        pooled.check_finite()?;
        let offsets = offsets_of(&sizes);
        Ok(Self { pooled, sizes, offsets })
    }

    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    pub fn dim(&self) -> usize {
        self.pooled.ncols()
    }

    pub fn total(&self) -> usize {
        self.pooled.nrows()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn pooled(&self) -> &DataMatrix {
        &self.pooled
    }

    /// Pooled row range of group `i`.
    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i] + self.sizes[i]
    }

    /// `(group, within-group index)` of pooled row `r`.
    pub fn origin(&self, r: usize) -> (usize, usize) {
        let g = self.offsets.partition_point(|&o| o <= r) - 1;
        (g, r - self.offsets[g])
    }

    pub fn sample(&self, i: usize) -> DataMatrix {
        let idx: Vec<usize> = self.range(i).collect();
        self.pooled.select_rows(&idx)
    }

    pub fn samples(&self) -> Vec<DataMatrix> {
        (0..self.k()).map(|i| self.sample(i)).collect()
    }
}

pub(crate) fn offsets_of(sizes: &[usize]) -> Vec<usize> {
    let mut acc = 0;
    sizes
        .iter()
        .map(|&n| {
            let o = acc;
            acc += n;
            o
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covariance_of_small_sample() {
        let m = DataMatrix::from_rows(&[[1.0, 2.0], [3.0, 6.0], [5.0, 7.0]]).unwrap();
        assert_eq!(m.mean(), vec![3.0, 5.0]);
        let c = m.covariance();
        assert!((c[0] - 4.0).abs() < 1e-12);
        assert!((c[1] - 5.0).abs() < 1e-12);
        assert!((c[3] - 7.0).abs() < 1e-12);
        assert_eq!(c[1], c[2]);
    }

    #[test]
    fn grouped_origin_lookup() {
        let a = DataMatrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let b = DataMatrix::from_rows(&[[2.0], [3.0], [4.0]]).unwrap();
        let g = GroupedSamples::new(vec![a, b]).unwrap();
        assert_eq!(g.origin(0), (0, 0));
        assert_eq!(g.origin(1), (0, 1));
        assert_eq!(g.origin(2), (1, 0));
        assert_eq!(g.origin(4), (1, 2));
        assert_eq!(g.sample(1).row(2), &[4.0]);
    }

    #[test]
    fn rejects_singleton_group() {
        let a = DataMatrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let b = DataMatrix::from_rows(&[[2.0]]).unwrap();
        assert!(matches!(
            GroupedSamples::new(vec![a, b]),
            Err(KbqdError::TooFewObservations { .. })
        ));
    }

    #[test]
    fn rejects_mismatched_dimensions() {
        let a = DataMatrix::from_rows(&[[0.0], [1.0]]).unwrap();
        let b = DataMatrix::from_rows(&[[2.0, 1.0], [3.0, 1.0]]).unwrap();
        assert!(GroupedSamples::new(vec![a, b]).is_err());
    }
}

//! Matrix distance and the omnibus `trace` / `T_n` statistics.
//!
//! All statistics are built from one Gram matrix over the pooled sample.
//! Diagonal entries of the matrix distance are U-statistics (distinct pairs
//! within a group), off-diagonal entries are V-statistics (all cross pairs).

use crate::data::GroupedSamples;
use crate::error::{KbqdError, Result};
use crate::kernel::{
    center_nonparametric, center_parametric_gram, gram_matrix, Bandwidth, Centering, GramMatrix,
    NormalModelParams,
};

/// Empirical `k x k` matrix distance.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    values: Vec<f64>,
    sizes: Vec<usize>,
}

impl DistanceMatrix {
    pub fn from_values(sizes: Vec<usize>, values: Vec<f64>) -> Result<Self> {
        let k = sizes.len();
        if values.len() != k * k {
            return Err(KbqdError::DimensionMismatch { expected: k * k, got: values.len() });
        }
        Ok(Self { values, sizes })
    }

    pub fn k(&self) -> usize {
        self.sizes.len()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.k() + j]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }
}

/// Both omnibus statistics computed from the same matrix distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StatisticPair {
    pub trace: f64,
    pub tn: f64,
}

impl StatisticPair {
    pub fn from_distance(d: &DistanceMatrix) -> Self {
        Self { trace: trace_statistic(d), tn: tn_statistic(d) }
    }
}

/// `D[i][j]` averages `Kc` over cross pairs for `i != j` and over distinct
/// within-group pairs for `i == j`.
pub fn matrix_distance(groups: &GroupedSamples, kc: &GramMatrix) -> Result<DistanceMatrix> {
    if kc.n() != groups.total() {
        return Err(KbqdError::DimensionMismatch { expected: groups.total(), got: kc.n() });
    }
    let k = groups.k();
    let sizes = groups.sizes().to_vec();
    let pivot = kc.get(0, 1);
    let mut values = vec![0.0; k * k];
    for gi in 0..k {
        let ri = groups.range(gi);
        for gj in gi..k {
            let rj = groups.range(gj);
            let mut acc = 0.0;
            for a in ri.clone() {
                let row = kc.row(a);
                let start = if gi == gj { a + 1 } else { rj.start };
                let mut s = 0.0;
                for &v in &row[start..rj.end] {
                    s += v - pivot;
                }
                acc += s;
            }
            let v = block_mean(acc, pivot, sizes[gi], sizes[gj], gi == gj);
            values[gi * k + gj] = v;
            values[gj * k + gi] = v;
        }
    }
    Ok(DistanceMatrix { values, sizes })
}

/// `acc` holds the block sum of `v - pivot`; a constant kernel gives exactly `pivot`.
#[inline]
fn block_mean(acc: f64, pivot: f64, ni: usize, nj: usize, diagonal: bool) -> f64 {
    if diagonal {
        // acc holds the sum over a < b only
        pivot + 2.0 * acc / (ni as f64 * (ni as f64 - 1.0))
    } else {
        pivot + acc / (ni as f64 * nj as f64)
    }
}

pub fn trace_statistic(d: &DistanceMatrix) -> f64 {
    (0..d.k()).map(|i| d.get(i, i)).sum()
}

/// `(k - 1) trace(D) - 2 sum_{i<j} D[i][j]`, accumulated as
/// `sum_{i<j} (D[i][i] + D[j][j] - 2 D[i][j])`.
pub fn tn_statistic(d: &DistanceMatrix) -> f64 {
    let k = d.k();
    let mut tn = 0.0;
    for i in 0..k {
        for j in (i + 1)..k {
            tn += (d.get(i, i) + d.get(j, j)) - 2.0 * d.get(i, j);
        }
    }
    tn
}

/// Gram matrix for the pooled sample under the requested centering.
pub fn centered_gram(
    groups: &GroupedSamples,
    h: Bandwidth,
    centering: Centering,
) -> Result<GramMatrix> {
    let gram = gram_matrix(groups.pooled(), h)?;
    center_gram(groups, gram, h, centering)
}

pub(crate) fn center_gram(
    groups: &GroupedSamples,
    gram: GramMatrix,
    h: Bandwidth,
    centering: Centering,
) -> Result<GramMatrix> {
    match centering {
        Centering::None => Ok(gram),
        Centering::Nonparametric => center_nonparametric(&gram),
        Centering::ParametricNormal => {
            if groups.k() != 2 {
                return Err(KbqdError::InvalidParameter(format!(
                    "parametric centering is only supported for two samples, got k = {}",
                    groups.k()
                )));
            }
            let params = NormalModelParams::estimate(groups.pooled())?;
            center_parametric_gram(&gram, groups.pooled(), h, &params)
        }
    }
}

/// Gram, centering, matrix distance and both statistics in one call.
pub fn ksample_test_statistics(
    groups: &GroupedSamples,
    h: Bandwidth,
    centering: Centering,
) -> Result<StatisticPair> {
    let kc = centered_gram(groups, h, centering)?;
    Ok(StatisticPair::from_distance(&matrix_distance(groups, &kc)?))
}

/// How a resampled pooled set is centered before computing the matrix distance.
#[derive(Debug, Clone)]
pub(crate) enum ResampleCentering {
    None,
    Nonparametric,
    /// `Kc[a][b] = K[a][b] - (u_a + u_b) + c`, one offset per resampled position.
    Additive { offsets: Vec<f64>, constant: f64 },
}

/// Matrix distance of the pooled rows `idx` (grouped consecutively by
/// `sizes`) read from a precomputed uncentered Gram matrix.
///
/// Positions are treated as distinct observations, so repeated indices from
/// bootstrap draws behave like tied data points. With `idx = 0..n` the
/// result is bitwise identical to centering the full matrix and calling
/// [`matrix_distance`].
pub(crate) fn distance_from_indices(
    gram: &GramMatrix,
    idx: &[usize],
    sizes: &[usize],
    centering: &ResampleCentering,
) -> DistanceMatrix {
    let m = idx.len();
    let k = sizes.len();
    let (offsets, constant) = match centering {
        ResampleCentering::None => (vec![0.0; m], 0.0),
        ResampleCentering::Additive { offsets, constant } => (offsets.clone(), *constant),
        ResampleCentering::Nonparametric => nonparametric_terms_indexed(gram, idx),
    };
    let group_of = group_labels(sizes);
    let starts = crate::data::offsets_of(sizes);
    let pivot = gram.get(idx[0], idx[1]) - (offsets[0] + offsets[1]) + constant;
    let mut acc = vec![0.0; k * k];
    for a in 0..m {
        let ga = group_of[a];
        let row = gram.row(idx[a]);
        let ua = offsets[a];
        for gb in ga..k {
            let start = if gb == ga { a + 1 } else { starts[gb] };
            let end = starts[gb] + sizes[gb];
            let mut s = 0.0;
            for b in start..end {
                s += (row[idx[b]] - (ua + offsets[b]) + constant) - pivot;
            }
            acc[ga * k + gb] += s;
        }
    }
    let mut values = vec![0.0; k * k];
    for gi in 0..k {
        for gj in gi..k {
            let v = block_mean(acc[gi * k + gj], pivot, sizes[gi], sizes[gj], gi == gj);
            values[gi * k + gj] = v;
            values[gj * k + gi] = v;
        }
    }
    DistanceMatrix { values, sizes: sizes.to_vec() }
}

fn group_labels(sizes: &[usize]) -> Vec<usize> {
    sizes.iter().enumerate().flat_map(|(g, &n)| std::iter::repeat_n(g, n)).collect()
}

/// Same quantities as `kernel::nonparametric_terms` for the submatrix `idx x idx`.
fn nonparametric_terms_indexed(gram: &GramMatrix, idx: &[usize]) -> (Vec<f64>, f64) {
    let m = idx.len();
    let mf = m as f64;
    let rows: Vec<f64> = idx
        .iter()
        .map(|&i| {
            let row = gram.row(i);
            let pivot = row[idx[0]];
            pivot + idx.iter().map(|&j| row[j] - pivot).sum::<f64>() / mf
        })
        .collect();
    let pivot = gram.get(idx[0], idx[1]);
    let mut acc = 0.0;
    for (a, &i) in idx.iter().enumerate() {
        let row = gram.row(i);
        for (b, &j) in idx.iter().enumerate() {
            if a != b {
                acc += row[j] - pivot;
            }
        }
    }
    (rows, pivot + acc / (mf * (mf - 1.0)))
}

/// Null-variance estimates of `T_n` and `trace` used to standardize them.
///
/// The estimate is computed on the kernel centered with leave-one-out
/// (diagonal-excluded) row means, with the diagonal set to zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VarianceEstimate {
    pub tn: f64,
    pub trace: f64,
}

impl VarianceEstimate {
    /// `stat / sqrt(var)`, or `None` when the variance is not positive.
    pub fn standardize(var: f64, stat: f64) -> Option<f64> {
        (var > 0.0 && var.is_finite()).then(|| stat / var.sqrt())
    }
}

pub fn variance_estimate(groups: &GroupedSamples, gram: &GramMatrix) -> Result<VarianceEstimate> {
    let n = gram.n();
    if n != groups.total() {
        return Err(KbqdError::DimensionMismatch { expected: groups.total(), got: n });
    }
    if gram.centering() != Centering::None {
        return Err(KbqdError::AlreadyCentered);
    }
    let nf = n as f64;
    let off_rows: Vec<f64> =
        (0..n).map(|i| gram.row(i).iter().sum::<f64>() - gram.get(i, i)).collect();
    let off_total: f64 = off_rows.iter().sum();
    let constant = off_total / (nf * (nf - 1.0));
    let loo: Vec<f64> = off_rows.iter().map(|s| s / (nf - 1.0)).collect();
    let kc = |a: usize, b: usize| {
        if a == b {
            0.0
        } else {
            gram.get(a, b) - (loo[a] + loo[b]) + constant
        }
    };

    let k = groups.k();
    let sizes = groups.sizes();
    // per-row sums of Kc restricted to each group, and block sums of squares
    let mut row_by_group = vec![0.0; n * k];
    let mut sq = vec![0.0; k * k];
    for a in 0..n {
        let (ga, _) = groups.origin(a);
        for g in 0..k {
            let mut s = 0.0;
            let mut s2 = 0.0;
            for b in groups.range(g) {
                let v = kc(a, b);
                s += v;
                s2 += v * v;
            }
            row_by_group[a * k + g] = s;
            if g >= ga {
                sq[ga * k + g] += s2;
            }
        }
    }
    let within = |l: usize| 1.0 / (sizes[l] as f64 * (sizes[l] as f64 - 1.0));
    let mut c1 = 0.0;
    let mut c2 = 0.0;
    let mut c3 = 0.0;
    for l in 0..k {
        let fl = within(l);
        c1 += 2.0 * fl * fl * sq[l * k + l];
        for r in (l + 1)..k {
            let fr = within(r);
            let flr = 1.0 / (sizes[l] as f64 * sizes[r] as f64);
            c2 += 8.0 * flr * flr * sq[l * k + r];
            let dl: f64 =
                groups.range(l).map(|b| row_by_group[b * k + l] * row_by_group[b * k + r]).sum();
            let dr: f64 =
                groups.range(r).map(|b| row_by_group[b * k + r] * row_by_group[b * k + l]).sum();
            c3 -= 8.0 * flr * (fl * dl + fr * dr);
        }
    }
    let km1 = k as f64 - 1.0;
    Ok(VarianceEstimate { tn: km1 * km1 * c1 + c2 + c3, trace: c1 })
}

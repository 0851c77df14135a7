//! Empirical critical values and p-values by resampling the pooled sample.
//!
//! Each of the `B` replications draws group index sets from the pooled
//! sample (bootstrap: with replacement; permutation and subsampling: without
//! replacement), recomputes the statistics on the precomputed uncentered
//! Gram matrix with centering redone for the resampled set, and the critical
//! value is the `ceil((1 - alpha) B)`-th order statistic of the replicates.
//!
//! Replication `r` uses the stream `(seed, r)`, so results do not depend on
//! how replications are scheduled across threads.

use rand::Rng;
use rayon::prelude::*;

use crate::baselines::{distance_matrix, energy_from_indices};
use crate::data::{DataMatrix, GroupedSamples};
use crate::error::{KbqdError, Result};
use crate::kernel::{gram_matrix, Bandwidth, Centering, GramMatrix, NormalModelParams, ParametricCentering};
use crate::rng::RngStream;
use crate::stats::{
    distance_from_indices, tn_statistic, trace_statistic, variance_estimate, ResampleCentering, StatisticPair,
    VarianceEstimate,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResamplingMethod {
    Bootstrap,
    Permutation,
    Subsampling,
}

impl ResamplingMethod {
    pub const ALL: [ResamplingMethod; 3] =
        [ResamplingMethod::Bootstrap, ResamplingMethod::Permutation, ResamplingMethod::Subsampling];

    pub fn name(self) -> &'static str {
        match self {
            Self::Bootstrap => "bootstrap",
            Self::Permutation => "permutation",
            Self::Subsampling => "subsampling",
        }
    }
}

impl std::fmt::Display for ResamplingMethod {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for ResamplingMethod {
    type Err = KbqdError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bootstrap" | "boot" => Ok(Self::Bootstrap),
            "permutation" | "perm" => Ok(Self::Permutation),
            "subsampling" | "sub" => Ok(Self::Subsampling),
            other => Err(KbqdError::InvalidParameter(format!("unknown resampling method '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ResamplingPlan {
    pub method: ResamplingMethod,
    /// Number of replications `B`.
    pub replications: usize,
    /// Subsample proportion `b`, used by subsampling only.
    pub subsample: f64,
    pub alpha: f64,
    pub seed: u64,
}

impl Default for ResamplingPlan {
    fn default() -> Self {
        Self { method: ResamplingMethod::Subsampling, replications: 150, subsample: 0.8, alpha: 0.05, seed: 0 }
    }
}

impl ResamplingPlan {
    pub fn new(method: ResamplingMethod, replications: usize, seed: u64) -> Self {
        Self { method, replications, seed, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.replications < 1 {
            return Err(KbqdError::InvalidParameter("B must be >= 1".into()));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(KbqdError::InvalidParameter(format!("b must be in (0, 1], got {}", self.subsample)));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(KbqdError::InvalidParameter(format!("alpha must be in (0, 1), got {}", self.alpha)));
        }
        Ok(())
    }

    /// Same plan with a different seed.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Group sizes of one resample.
    pub fn resample_sizes(&self, sizes: &[usize]) -> Result<Vec<usize>> {
        match self.method {
            ResamplingMethod::Bootstrap | ResamplingMethod::Permutation => Ok(sizes.to_vec()),
            ResamplingMethod::Subsampling => subsample_sizes(sizes, self.subsample),
        }
    }
}

fn subsample_sizes(sizes: &[usize], b: f64) -> Result<Vec<usize>> {
    sizes
        .iter()
        .enumerate()
        .map(|(i, &n)| {
            let m = (b * n as f64).round() as usize;
            if m < 2 {
                Err(KbqdError::TooFewObservations { what: format!("subsampled group {i}"), min: 2, got: m })
            } else {
                Ok(m)
            }
        })
        .collect()
}

/// Pooled positions of one resample, grouped consecutively by the returned sizes.
pub(crate) fn resample_indices<R: Rng + ?Sized>(
    total: usize,
    sizes: &[usize],
    method: ResamplingMethod,
    b: f64,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    match method {
        ResamplingMethod::Bootstrap => {
            let m: usize = sizes.iter().sum();
            let idx = (0..m).map(|_| rng.random_range(0..total)).collect();
            Ok((idx, sizes.to_vec()))
        }
        // permutation is subsampling with b = 1
        ResamplingMethod::Permutation => without_replacement(total, sizes, 1.0, rng),
        ResamplingMethod::Subsampling => without_replacement(total, sizes, b, rng),
    }
}

fn without_replacement<R: Rng + ?Sized>(
    total: usize,
    sizes: &[usize],
    b: f64,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<usize>)> {
    let new_sizes = subsample_sizes(sizes, b)?;
    let m: usize = new_sizes.iter().sum();
    if m > total {
        return Err(KbqdError::InvalidParameter("subsample larger than pooled sample".into()));
    }
    let mut idx: Vec<usize> = (0..total).collect();
    for i in 0..m {
        let j = rng.random_range(i..total);
        idx.swap(i, j);
    }
    idx.truncate(m);
    Ok((idx, new_sizes))
}

/// Resampled k-tuple drawn from `pooled`, split into groups of the original
/// sizes (or `round(b n_i)` for subsampling).
pub fn resample_groups<R: Rng + ?Sized>(
    pooled: &DataMatrix,
    sizes: &[usize],
    method: ResamplingMethod,
    b: f64,
    rng: &mut R,
) -> Result<GroupedSamples> {
    let total: usize = sizes.iter().sum();
    if total != pooled.nrows() {
        return Err(KbqdError::DimensionMismatch { expected: pooled.nrows(), got: total });
    }
    let (idx, new_sizes) = resample_indices(total, sizes, method, b, rng)?;
    GroupedSamples::from_pooled(pooled.select_rows(&idx), new_sizes)
}

/// `m`-th order statistic with `m = ceil((1 - alpha) B)`.
pub fn empirical_quantile(values: &[f64], alpha: f64) -> f64 {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let b = sorted.len();
    // guard against (1 - alpha) * B landing a hair above an integer
    let m = (((1.0 - alpha) * b as f64) - 1e-9).ceil().max(1.0) as usize;
    sorted[m.min(b) - 1]
}

/// `(1 + #{replicate >= observed}) / (B + 1)`.
pub fn empirical_pvalue(observed: f64, values: &[f64]) -> f64 {
    let count = values.iter().filter(|&&v| v >= observed).count();
    (1.0 + count as f64) / (values.len() as f64 + 1.0)
}

/// Critical value, p-value and decision for one statistic.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Decision {
    pub statistic: f64,
    pub critical: f64,
    pub pvalue: f64,
    pub reject: bool,
}

impl Decision {
    pub fn from_replicates(statistic: f64, replicates: &[f64], alpha: f64) -> Self {
        let critical = empirical_quantile(replicates, alpha);
        Self { statistic, critical, pvalue: empirical_pvalue(statistic, replicates), reject: statistic > critical }
    }
}

/// Runs `f` on `B` independent resamples, in replication order.
pub(crate) fn replicate<F>(total: usize, sizes: &[usize], plan: &ResamplingPlan, f: F) -> Result<Vec<Vec<f64>>>
where
    F: Fn(&[usize], &[usize]) -> Vec<f64> + Sync,
{
    plan.validate()?;
    plan.resample_sizes(sizes)?;
    (0..plan.replications as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = RngStream::new(plan.seed, r).rng();
            let (idx, new_sizes) = resample_indices(total, sizes, plan.method, plan.subsample, &mut rng)?;
            Ok(f(&idx, &new_sizes))
        })
        .collect()
}

fn column(reps: &[Vec<f64>], j: usize) -> Vec<f64> {
    reps.iter().map(|r| r[j]).collect()
}

/// Outcome of a KBQD test with resampled critical values.
#[derive(Debug, Clone, PartialEq)]
pub struct TestResult {
    pub statistic_trace: f64,
    pub statistic_tn: f64,
    pub critical_trace: f64,
    pub critical_tn: f64,
    pub pvalue_trace: f64,
    pub pvalue_tn: f64,
    pub reject_trace: bool,
    pub reject_tn: bool,
    pub h: Bandwidth,
    pub plan: ResamplingPlan,
    pub centering: Centering,
    /// Null-variance estimates of the observed statistics.
    pub variance: VarianceEstimate,
}

impl TestResult {
    pub fn tn(&self) -> Decision {
        Decision {
            statistic: self.statistic_tn,
            critical: self.critical_tn,
            pvalue: self.pvalue_tn,
            reject: self.reject_tn,
        }
    }

    pub fn trace(&self) -> Decision {
        Decision {
            statistic: self.statistic_trace,
            critical: self.critical_trace,
            pvalue: self.pvalue_trace,
            reject: self.reject_trace,
        }
    }

    /// `T_n / sqrt(var)` and the critical value on the same scale.
    pub fn standardized_tn(&self) -> Option<(f64, f64)> {
        let s = VarianceEstimate::standardize(self.variance.tn, self.statistic_tn)?;
        Some((s, self.critical_tn / self.variance.tn.sqrt()))
    }

    pub fn standardized_trace(&self) -> Option<(f64, f64)> {
        let s = VarianceEstimate::standardize(self.variance.trace, self.statistic_trace)?;
        Some((s, self.critical_trace / self.variance.trace.sqrt()))
    }
}

/// KBQD test with nonparametric centering.
pub fn critical_value(groups: &GroupedSamples, h: Bandwidth, plan: &ResamplingPlan) -> Result<TestResult> {
    kbqd_test(groups, h, Centering::Nonparametric, plan)
}

/// KBQD test with the given centering. Parametric centering refits the
/// normal model on every resample.
pub fn kbqd_test(
    groups: &GroupedSamples,
    h: Bandwidth,
    centering: Centering,
    plan: &ResamplingPlan,
) -> Result<TestResult> {
    plan.validate()?;
    let gram = gram_matrix(groups.pooled(), h)?;
    kbqd_test_with_gram(groups, &gram, h, centering, plan)
}

pub(crate) fn kbqd_test_with_gram(
    groups: &GroupedSamples,
    gram: &GramMatrix,
    h: Bandwidth,
    centering: Centering,
    plan: &ResamplingPlan,
) -> Result<TestResult> {
    let (tn, trace) = kernel_decisions(groups, gram, h, centering, plan)?;
    Ok(TestResult {
        statistic_trace: trace.statistic,
        statistic_tn: tn.statistic,
        critical_trace: trace.critical,
        critical_tn: tn.critical,
        pvalue_trace: trace.pvalue,
        pvalue_tn: tn.pvalue,
        reject_trace: trace.reject,
        reject_tn: tn.reject,
        h,
        plan: *plan,
        centering,
        variance: variance_estimate(groups, gram)?,
    })
}

/// `(T_n, trace)` decisions on a precomputed uncentered Gram matrix.
pub(crate) fn kernel_decisions(
    groups: &GroupedSamples,
    gram: &GramMatrix,
    h: Bandwidth,
    centering: Centering,
    plan: &ResamplingPlan,
) -> Result<(Decision, Decision)> {
    if centering == Centering::ParametricNormal && groups.k() != 2 {
        return Err(KbqdError::InvalidParameter(
            "parametric centering is only supported for two samples".into(),
        ));
    }
    let pooled = groups.pooled();
    let rule = |idx: &[usize]| -> Result<ResampleCentering> {
        Ok(match centering {
            Centering::None => ResampleCentering::None,
            Centering::Nonparametric => ResampleCentering::Nonparametric,
            Centering::ParametricNormal => {
                let z = pooled.select_rows(idx);
                let pc = ParametricCentering::new(h, NormalModelParams::estimate(&z)?)?;
                ResampleCentering::Additive {
                    offsets: z.rows().map(|x| pc.point_term(x)).collect(),
                    constant: pc.self_term(),
                }
            }
        })
    };
    let all: Vec<usize> = (0..groups.total()).collect();
    let observed = StatisticPair::from_distance(&distance_from_indices(gram, &all, groups.sizes(), &rule(&all)?));
    let reps = replicate(groups.total(), groups.sizes(), plan, |idx, sizes| {
        match rule(idx) {
            Ok(c) => {
                let d = distance_from_indices(gram, idx, sizes, &c);
                vec![tn_statistic(&d), trace_statistic(&d)]
            }
            // a degenerate resample cannot be refit; it carries no evidence against H0
            Err(_) => vec![f64::NEG_INFINITY, f64::NEG_INFINITY],
        }
    })?;
    Ok((
        Decision::from_replicates(observed.tn, &column(&reps, 0), plan.alpha),
        Decision::from_replicates(observed.trace, &column(&reps, 1), plan.alpha),
    ))
}

/// `T_n` test with nonparametric centering, without the variance estimate.
pub fn tn_test(groups: &GroupedSamples, h: Bandwidth, plan: &ResamplingPlan) -> Result<Decision> {
    plan.validate()?;
    let gram = gram_matrix(groups.pooled(), h)?;
    Ok(kernel_decisions(groups, &gram, h, Centering::Nonparametric, plan)?.0)
}

/// Two-sample MMD^2 test with resampled critical value.
pub fn mmd_test(groups: &GroupedSamples, h: Bandwidth, plan: &ResamplingPlan) -> Result<Decision> {
    if groups.k() != 2 {
        return Err(KbqdError::InvalidParameter("the MMD test compares exactly two samples".into()));
    }
    let gram = gram_matrix(groups.pooled(), h)?;
    mmd_test_with_gram(groups, &gram, plan)
}

pub(crate) fn mmd_test_with_gram(groups: &GroupedSamples, gram: &GramMatrix, plan: &ResamplingPlan) -> Result<Decision> {
    let all: Vec<usize> = (0..groups.total()).collect();
    let observed = tn_statistic(&distance_from_indices(gram, &all, groups.sizes(), &ResampleCentering::None));
    let reps = replicate(groups.total(), groups.sizes(), plan, |idx, sizes| {
        vec![tn_statistic(&distance_from_indices(gram, idx, sizes, &ResampleCentering::None))]
    })?;
    Ok(Decision::from_replicates(observed, &column(&reps, 0), plan.alpha))
}

/// k-sample energy test with resampled critical value.
pub fn energy_test(groups: &GroupedSamples, plan: &ResamplingPlan) -> Result<Decision> {
    let dist = distance_matrix(groups.pooled());
    energy_test_with_distances(groups, &dist, plan)
}

pub(crate) fn energy_test_with_distances(
    groups: &GroupedSamples,
    dist: &[f64],
    plan: &ResamplingPlan,
) -> Result<Decision> {
    let n = groups.total();
    let all: Vec<usize> = (0..n).collect();
    let observed = energy_from_indices(dist, n, &all, groups.sizes());
    let reps = replicate(n, groups.sizes(), plan, |idx, sizes| vec![energy_from_indices(dist, n, idx, sizes)])?;
    Ok(Decision::from_replicates(observed, &column(&reps, 0), plan.alpha))
}

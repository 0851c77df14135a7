//! Bandwidth selection by Monte Carlo power over skew-normal alternatives.
//!
//! The pooled sample is summarized by a skew-normal fit `F_0`. For each
//! perturbation size `delta` (ascending) and bandwidth `h` (ascending), `N`
//! synthetic k-tuples are drawn, `k - 1` groups from `F_0` and the last from
//! the perturbed `F_delta`, and the `T_n` test is run on each. The first `h`
//! with power at least 0.5 is returned; otherwise the `h` of the largest
//! power seen.

use rayon::prelude::*;

use crate::data::{DataMatrix, GroupedSamples};
use crate::distributions::SkewNormal;
use crate::error::{KbqdError, Result};
use crate::kernel::{check_spd, Bandwidth};
use crate::resampling::{tn_test, ResamplingPlan};
use crate::rng::RngStream;

/// Upper bound of the skew-normal skewness, reached as `|lambda| -> inf`.
pub const SN_MAX_SKEWNESS: f64 = 0.9953;

/// Shape `lambda` of the univariate skew-normal with skewness `gamma1`,
/// after clamping `gamma1` to `±0.995 * SN_MAX_SKEWNESS`.
pub fn skewness_to_shape(gamma1: f64) -> f64 {
    let limit = 0.995 * SN_MAX_SKEWNESS;
    let g = gamma1.clamp(-limit, limit);
    let b = (2.0 / std::f64::consts::PI).sqrt();
    let c = (2.0 * g.abs() / (4.0 - std::f64::consts::PI)).cbrt();
    let delta = g.signum() * c / (b * (1.0 + c * c).sqrt());
    if g == 0.0 {
        0.0
    } else {
        delta / (1.0 - delta * delta).sqrt()
    }
}

/// Skewness of the univariate skew-normal with shape `lambda`.
pub fn shape_to_skewness(lambda: f64) -> f64 {
    let delta = lambda / (1.0 + lambda * lambda).sqrt();
    let bd = (2.0 / std::f64::consts::PI).sqrt() * delta;
    (4.0 - std::f64::consts::PI) / 2.0 * bd.powi(3) / (1.0 - bd * bd).powf(1.5)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledEstimates {
    pub mu_hat: Vec<f64>,
    /// Row-major `d x d`.
    pub sigma_hat: Vec<f64>,
    pub lambda_hat: Vec<f64>,
}

/// Sample mean, covariance and per-coordinate moment estimate of the shape.
pub fn estimate_pooled_params(pooled: &DataMatrix) -> Result<PooledEstimates> {
    let (n, d) = (pooled.nrows(), pooled.ncols());
    if n <= d {
        return Err(KbqdError::TooFewObservations { what: "pooled rows (need n > d)".into(), min: d + 1, got: n });
    }
    let mu_hat = pooled.mean();
    let sigma_hat = pooled.covariance();
    check_spd(&nalgebra::DMatrix::from_row_slice(d, d, &sigma_hat), "sample covariance")?;
    let lambda_hat = (0..d)
        .map(|j| {
            let (mut m2, mut m3) = (0.0, 0.0);
            for row in pooled.rows() {
                let c = row[j] - mu_hat[j];
                m2 += c * c;
                m3 += c * c * c;
            }
            m2 /= n as f64;
            m3 /= n as f64;
            skewness_to_shape(m3 / m2.powf(1.5))
        })
        .collect();
    Ok(PooledEstimates { mu_hat, sigma_hat, lambda_hat })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AlternativeKind {
    Location,
    Scale,
    Skewness,
}

impl std::str::FromStr for AlternativeKind {
    type Err = KbqdError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "location" => Ok(Self::Location),
            "scale" => Ok(Self::Scale),
            "skewness" => Ok(Self::Skewness),
            other => Err(KbqdError::InvalidParameter(format!("unknown alternative family '{other}'"))),
        }
    }
}

impl std::fmt::Display for AlternativeKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Self::Location => "location",
            Self::Scale => "scale",
            Self::Skewness => "skewness",
        })
    }
}

pub const DEFAULT_H_GRID: [f64; 5] = [0.6, 1.0, 1.4, 1.8, 2.2];

#[derive(Debug, Clone, PartialEq)]
pub struct AlternativeFamily {
    pub kind: AlternativeKind,
    pub delta_grid: Vec<f64>,
    pub h_grid: Vec<f64>,
}

impl AlternativeFamily {
    /// Default grids for `kind`.
    pub fn new(kind: AlternativeKind) -> Self {
        let delta_grid = match kind {
            AlternativeKind::Location => vec![0.2, 0.3, 0.4],
            AlternativeKind::Scale => vec![0.1, 0.3, 0.5],
            AlternativeKind::Skewness => vec![0.2, 0.3, 0.6],
        };
        Self { kind, delta_grid, h_grid: DEFAULT_H_GRID.to_vec() }
    }

    pub fn with_h_grid(mut self, h_grid: Vec<f64>) -> Self {
        self.h_grid = h_grid;
        self
    }

    pub fn with_delta_grid(mut self, delta_grid: Vec<f64>) -> Self {
        self.delta_grid = delta_grid;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, grid) in [("delta", &self.delta_grid), ("h", &self.h_grid)] {
            if grid.is_empty() {
                return Err(KbqdError::InvalidParameter(format!("{name} grid is empty")));
            }
            if grid.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
                return Err(KbqdError::InvalidParameter(format!("{name} grid must be positive")));
            }
            if grid.windows(2).any(|w| w[0] >= w[1]) {
                return Err(KbqdError::InvalidParameter(format!("{name} grid must be strictly ascending")));
            }
        }
        Ok(())
    }

    /// `F_delta` for this family around the pooled fit.
    pub fn perturbed(&self, est: &PooledEstimates, delta: f64) -> Result<SkewNormal> {
        let mut mu = est.mu_hat.clone();
        let mut sigma = est.sigma_hat.clone();
        let mut lambda = est.lambda_hat.clone();
        match self.kind {
            AlternativeKind::Location => mu.iter_mut().for_each(|m| *m += delta),
            AlternativeKind::Scale => sigma.iter_mut().for_each(|s| *s *= delta),
            AlternativeKind::Skewness => lambda.iter_mut().for_each(|l| *l += delta),
        }
        SkewNormal::new(mu, &sigma, &lambda)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerEntry {
    pub h: f64,
    pub delta: f64,
    pub power: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HSelectionResult {
    pub h_star: Bandwidth,
    /// Cells in evaluation order (delta outer, h inner); stops at the first success.
    pub power_table: Vec<PowerEntry>,
    /// Whether some cell reached power 0.5.
    pub achieved: bool,
}

impl HSelectionResult {
    pub fn power(&self, h: f64, delta: f64) -> Option<f64> {
        self.power_table.iter().find(|e| e.h == h && e.delta == delta).map(|e| e.power)
    }
}

pub const DEFAULT_POWER_REPETITIONS: usize = 50;

struct PowerStudy {
    null: SkewNormal,
    est: PooledEstimates,
    sizes: Vec<usize>,
    root: RngStream,
    n_rep: usize,
}

impl PowerStudy {
    fn new(groups: &GroupedSamples, family: &AlternativeFamily, plan: &ResamplingPlan, n_rep: usize) -> Result<Self> {
        family.validate()?;
        plan.validate()?;
        if n_rep < 1 {
            return Err(KbqdError::InvalidParameter("N must be >= 1".into()));
        }
        let est = estimate_pooled_params(groups.pooled())?;
        let null = SkewNormal::new(est.mu_hat.clone(), &est.sigma_hat, &est.lambda_hat)?;
        Ok(Self { null, est, sizes: groups.sizes().to_vec(), root: RngStream::new(plan.seed, 0x6b62_7164_2d68), n_rep })
    }

    /// Synthetic k-tuples for the `di`-th delta, with the seed of each test.
    /// The same draws are reused across `h`.
    fn draws(&self, family: &AlternativeFamily, di: usize) -> Result<Vec<(GroupedSamples, u64)>> {
        let alt = family.perturbed(&self.est, family.delta_grid[di])?;
        let k = self.sizes.len();
        (0..self.n_rep as u64)
            .map(|r| {
                let stream = self.root.substream(di as u64).substream(r);
                let mut rng = stream.rng();
                let samples = (0..k)
                    .map(|i| {
                        let dist = if i + 1 < k { &self.null } else { &alt };
                        dist.sample(self.sizes[i], &mut rng)
                    })
                    .collect();
                Ok((GroupedSamples::new(samples)?, stream.derived_seed()))
            })
            .collect()
    }

    fn power(&self, draws: &[(GroupedSamples, u64)], h: f64, plan: &ResamplingPlan) -> Result<f64> {
        let bw = Bandwidth::new(h)?;
        let rejections = draws
            .par_iter()
            .map(|(g, seed)| Ok(tn_test(g, bw, &plan.with_seed(*seed))?.reject))
            .collect::<Result<Vec<bool>>>()?;
        Ok(rejections.iter().filter(|&&r| r).count() as f64 / self.n_rep as f64)
    }
}

/// Selects `h` from `family.h_grid` by simulated power of the `T_n` test.
pub fn select_h(
    groups: &GroupedSamples,
    family: &AlternativeFamily,
    plan: &ResamplingPlan,
    n_rep: usize,
) -> Result<HSelectionResult> {
    let study = PowerStudy::new(groups, family, plan, n_rep)?;
    let mut table = Vec::new();
    for (di, &delta) in family.delta_grid.iter().enumerate() {
        let draws = study.draws(family, di)?;
        for &h in &family.h_grid {
            let power = study.power(&draws, h, plan)?;
            table.push(PowerEntry { h, delta, power });
            if power >= 0.5 {
                return Ok(HSelectionResult { h_star: Bandwidth::new(h)?, power_table: table, achieved: true });
            }
        }
    }
    let mut best = table[0];
    for e in &table[1..] {
        if e.power > best.power || (e.power == best.power && e.h < best.h) {
            best = *e;
        }
    }
    Ok(HSelectionResult { h_star: Bandwidth::new(best.h)?, power_table: table, achieved: false })
}

/// Power of every `(delta, h)` cell, on the same draws `select_h` uses.
pub fn power_grid(
    groups: &GroupedSamples,
    family: &AlternativeFamily,
    plan: &ResamplingPlan,
    n_rep: usize,
) -> Result<Vec<PowerEntry>> {
    let study = PowerStudy::new(groups, family, plan, n_rep)?;
    let mut table = Vec::new();
    for (di, &delta) in family.delta_grid.iter().enumerate() {
        let draws = study.draws(family, di)?;
        for &h in &family.h_grid {
            table.push(PowerEntry { h, delta, power: study.power(&draws, h, plan)? });
        }
    }
    Ok(table)
}

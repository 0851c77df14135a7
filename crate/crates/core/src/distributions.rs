//! Samplers for the distributions used in the simulation experiments.

use nalgebra::DMatrix;
use rand::Rng;
use rand_distr::{ChiSquared, Distribution, StandardNormal};

use crate::data::DataMatrix;
use crate::error::{KbqdError, Result};

fn lower_cholesky(m: DMatrix<f64>, what: &str) -> Result<DMatrix<f64>> {
    m.cholesky()
        .map(|c| c.unpack())
        .ok_or_else(|| KbqdError::NotPositiveDefinite(format!("{what}: cholesky failed")))
}

fn square(d: usize, values: &[f64], what: &str) -> Result<DMatrix<f64>> {
    if values.len() != d * d {
        return Err(KbqdError::DimensionMismatch { expected: d * d, got: values.len() });
    }
    let m = DMatrix::from_row_slice(d, d, values);
    crate::kernel::check_spd(&m, what)?;
    Ok(m)
}

fn standard_normals<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    for v in out {
        *v = rng.sample(StandardNormal);
    }
}

/// `N_d(mu, sigma)` via the Cholesky factor of `sigma` (row-major).
#[derive(Debug, Clone)]
pub struct MultivariateNormal {
    mu: Vec<f64>,
    chol: DMatrix<f64>,
}

impl MultivariateNormal {
    pub fn new(mu: Vec<f64>, sigma: &[f64]) -> Result<Self> {
        let chol = lower_cholesky(square(mu.len(), sigma, "sigma")?, "sigma")?;
        Ok(Self { mu, chol })
    }

    pub fn standard(d: usize) -> Self {
        Self { mu: vec![0.0; d], chol: DMatrix::identity(d, d) }
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DataMatrix {
        let d = self.mu.len();
        let mut e = vec![0.0; d];
        let mut values = Vec::with_capacity(n * d);
        for _ in 0..n {
            standard_normals(rng, &mut e);
            for i in 0..d {
                let mut v = self.mu[i];
                for j in 0..=i {
                    v += self.chol[(i, j)] * e[j];
                }
                values.push(v);
            }
        }
        DataMatrix::from_row_major(n, d, values).expect("shape is consistent")
    }
}

/// Skew-normal `SN_d(mu, sigma, lambda)` sampled by conditioning.
///
/// With `sigma = S Omega S` (`S` the diagonal of scale roots) and
/// `delta = Omega lambda / sqrt(1 + lambda' Omega lambda)`, draw
/// `(X0, X)` jointly normal with `Var X0 = 1`, `Cov(X0, X) = delta`,
/// `Cov X = Omega`, and return `mu + S X` if `X0 > 0`, else `mu - S X`.
#[derive(Debug, Clone)]
pub struct SkewNormal {
    mu: Vec<f64>,
    scale: Vec<f64>,
    delta: Vec<f64>,
    chol: DMatrix<f64>,
}

impl SkewNormal {
    pub fn new(mu: Vec<f64>, sigma: &[f64], lambda: &[f64]) -> Result<Self> {
        let d = mu.len();
        if lambda.len() != d {
            return Err(KbqdError::DimensionMismatch { expected: d, got: lambda.len() });
        }
        if lambda.iter().any(|l| !l.is_finite()) {
            return Err(KbqdError::InvalidParameter("skewness must be finite".into()));
        }
        let sigma = square(d, sigma, "sigma")?;
        let scale: Vec<f64> = (0..d).map(|i| sigma[(i, i)].sqrt()).collect();
        let omega = DMatrix::from_fn(d, d, |i, j| sigma[(i, j)] / (scale[i] * scale[j]));
        let lam = nalgebra::DVector::from_column_slice(lambda);
        let ol = &omega * &lam;
        let denom = (1.0 + lam.dot(&ol)).sqrt();
        let delta: Vec<f64> = ol.iter().map(|v| v / denom).collect();
        let mut aug = DMatrix::zeros(d + 1, d + 1);
        aug[(0, 0)] = 1.0;
        for i in 0..d {
            aug[(0, i + 1)] = delta[i];
            aug[(i + 1, 0)] = delta[i];
            for j in 0..d {
                aug[(i + 1, j + 1)] = omega[(i, j)];
            }
        }
        let chol = lower_cholesky(aug, "skew-normal augmented covariance")?;
        Ok(Self { mu, scale, delta, chol })
    }

    pub fn delta(&self) -> &[f64] {
        &self.delta
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DataMatrix {
        let d = self.mu.len();
        let mut e = vec![0.0; d + 1];
        let mut v = vec![0.0; d + 1];
        let mut values = Vec::with_capacity(n * d);
        for _ in 0..n {
            standard_normals(rng, &mut e);
            for i in 0..=d {
                v[i] = (0..=i).map(|j| self.chol[(i, j)] * e[j]).sum();
            }
            let sign = if v[0] > 0.0 { 1.0 } else { -1.0 };
            for i in 0..d {
                values.push(self.mu[i] + self.scale[i] * sign * v[i + 1]);
            }
        }
        DataMatrix::from_row_major(n, d, values).expect("shape is consistent")
    }
}

/// Multivariate `t_nu(center, I)`: `center + Z / sqrt(V / nu)`.
#[derive(Debug, Clone)]
pub struct MultivariateT {
    center: Vec<f64>,
    nu: f64,
    chi: ChiSquared<f64>,
}

impl MultivariateT {
    pub fn new(nu: u64, center: Vec<f64>) -> Result<Self> {
        if nu == 0 {
            return Err(KbqdError::InvalidParameter("degrees of freedom must be >= 1".into()));
        }
        let nu = nu as f64;
        let chi = ChiSquared::new(nu).map_err(|e| KbqdError::InvalidParameter(e.to_string()))?;
        Ok(Self { center, nu, chi })
    }

    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> DataMatrix {
        let d = self.center.len();
        let mut values = Vec::with_capacity(n * d);
        for _ in 0..n {
            let v = loop {
                let v: f64 = self.chi.sample(rng);
                // regenerate instead of clamping so the law is unchanged
                if v > 1e-300 {
                    break v;
                }
            };
            let scale = (v / self.nu).sqrt();
            for c in &self.center {
                let z: f64 = rng.sample(StandardNormal);
                values.push(c + z / scale);
            }
        }
        DataMatrix::from_row_major(n, d, values).expect("shape is consistent")
    }
}

pub fn sample_mvn<R: Rng + ?Sized>(n: usize, mu: &[f64], sigma: &[f64], rng: &mut R) -> Result<DataMatrix> {
    Ok(MultivariateNormal::new(mu.to_vec(), sigma)?.sample(n, rng))
}

pub fn sample_skew_normal<R: Rng + ?Sized>(
    n: usize,
    mu: &[f64],
    sigma: &[f64],
    lambda: &[f64],
    rng: &mut R,
) -> Result<DataMatrix> {
    Ok(SkewNormal::new(mu.to_vec(), sigma, lambda)?.sample(n, rng))
}

pub fn sample_mvt<R: Rng + ?Sized>(n: usize, nu: u64, center: &[f64], rng: &mut R) -> Result<DataMatrix> {
    Ok(MultivariateT::new(nu, center.to_vec())?.sample(n, rng))
}

/// Multivariate Cauchy with identity scale, i.e. `t_1(center, I)`.
pub fn sample_mv_cauchy<R: Rng + ?Sized>(n: usize, center: &[f64], rng: &mut R) -> Result<DataMatrix> {
    sample_mvt(n, 1, center, rng)
}

/// Univariate log-normal: `exp(N(mu_log, sigma_log^2))`.
pub fn sample_lognormal<R: Rng + ?Sized>(
    n: usize,
    mu_log: f64,
    sigma_log: f64,
    rng: &mut R,
) -> Result<DataMatrix> {
    if !(sigma_log > 0.0) {
        return Err(KbqdError::InvalidParameter("log-normal sigma must be positive".into()));
    }
    let values = (0..n)
        .map(|_| (mu_log + sigma_log * rng.sample::<f64, _>(StandardNormal)).exp())
        .collect();
    DataMatrix::from_row_major(n, 1, values)
}

/// Univariate Gumbel: `mu - sigma log(-log U)`.
pub fn sample_gumbel<R: Rng + ?Sized>(n: usize, mu_loc: f64, sigma_scale: f64, rng: &mut R) -> Result<DataMatrix> {
    if !(sigma_scale > 0.0) {
        return Err(KbqdError::InvalidParameter("gumbel scale must be positive".into()));
    }
    let values = (0..n)
        .map(|_| {
            let u = loop {
                let u: f64 = rng.random();
                if u > 0.0 {
                    break u;
                }
            };
            mu_loc - sigma_scale * (-u.ln()).ln()
        })
        .collect();
    DataMatrix::from_row_major(n, 1, values)
}

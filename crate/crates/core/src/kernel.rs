//! Gaussian diffusion kernel, Gram matrices and kernel centering.
//!
//! The kernel is the normal density with covariance `h^2 I`:
//!
//! ```text
//! K(x, y) = (2 pi h^2)^(-d/2) exp(-|x - y|^2 / (2 h^2))
//! ```
//!
//! Two centerings are provided. The nonparametric one centers with respect
//! to the pooled empirical distribution; the parametric one centers with
//! respect to a fitted normal model `N(mu, sigma)` using the closed-form
//! Gaussian convolutions.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rayon::prelude::*;

use crate::data::DataMatrix;
use crate::error::{KbqdError, Result};

const LN_2PI: f64 = 1.837_877_066_409_345_5;

/// Kernel bandwidth `h > 0`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, serde::Serialize, serde::Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct Bandwidth(f64);

impl Bandwidth {
    pub fn new(h: f64) -> Result<Self> {
        if h.is_finite() && h > 0.0 {
            Ok(Self(h))
        } else {
            Err(KbqdError::InvalidBandwidth(h))
        }
    }

    pub fn get(self) -> f64 {
        self.0
    }
}

impl TryFrom<f64> for Bandwidth {
    type Error = KbqdError;
    fn try_from(h: f64) -> Result<Self> {
        Self::new(h)
    }
}

impl From<Bandwidth> for f64 {
    fn from(h: Bandwidth) -> f64 {
        h.0
    }
}

impl std::fmt::Display for Bandwidth {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        self.0.fmt(f)
    }
}

/// Precomputed constants for evaluating the kernel at a fixed `(d, h)`.
#[derive(Debug, Clone, Copy)]
pub struct GaussianKernel {
    norm: f64,
    neg_inv_two_h2: f64,
    dim: usize,
}

impl GaussianKernel {
    pub fn new(dim: usize, h: Bandwidth) -> Self {
        let h2 = h.get() * h.get();
        let norm = (-(dim as f64) / 2.0 * (LN_2PI + h2.ln())).exp();
        Self { norm, neg_inv_two_h2: -0.5 / h2, dim }
    }

    /// Value at zero distance, the kernel's maximum.
    pub fn peak(&self) -> f64 {
        self.norm
    }

    #[inline]
    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        self.norm * (squared_distance(x, y) * self.neg_inv_two_h2).exp()
    }
}

#[inline]
pub(crate) fn squared_distance(x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum()
}

/// Gaussian kernel `(2 pi h^2)^(-d/2) exp(-|x-y|^2 / (2h^2))`.
pub fn gaussian_kernel(x: &[f64], y: &[f64], h: Bandwidth) -> Result<f64> {
    if x.len() != y.len() {
        return Err(KbqdError::DimensionMismatch { expected: x.len(), got: y.len() });
    }
    if x.is_empty() {
        return Err(KbqdError::InvalidParameter("dimension must be >= 1".into()));
    }
    Ok(GaussianKernel::new(x.len(), h).eval(x, y))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Centering {
    None,
    Nonparametric,
    ParametricNormal,
}

impl std::str::FromStr for Centering {
    type Err = KbqdError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "none" => Ok(Self::None),
            "nonparametric" | "nonparam" => Ok(Self::Nonparametric),
            "parametric" | "parametric-normal" | "param" => Ok(Self::ParametricNormal),
            other => Err(KbqdError::InvalidParameter(format!("unknown centering '{other}'"))),
        }
    }
}

/// Symmetric `n x n` kernel matrix over a pooled sample.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    values: Vec<f64>,
    n: usize,
    centering: Centering,
}

impl GramMatrix {
    /// Wraps raw row-major values; used by tests and bindings.
    pub fn from_values(n: usize, values: Vec<f64>, centering: Centering) -> Result<Self> {
        if values.len() != n * n {
            return Err(KbqdError::DimensionMismatch { expected: n * n, got: values.len() });
        }
        Ok(Self { values, n, centering })
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn centering(&self) -> Centering {
        self.centering
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.n + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.n..(i + 1) * self.n]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.get(i, i)).sum()
    }

    /// Largest relative asymmetry `|K_ij - K_ji| / max|K|`.
    pub fn asymmetry(&self) -> f64 {
        let scale = self.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if scale == 0.0 {
            return 0.0;
        }
        let mut worst = 0.0f64;
        for i in 0..self.n {
            for j in (i + 1)..self.n {
                worst = worst.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        worst / scale
    }
}

/// Uncentered Gram matrix over the rows of `z`.
///
/// Rows are computed in parallel; every entry is evaluated independently, so
/// the result does not depend on the number of worker threads.
pub fn gram_matrix(z: &DataMatrix, h: Bandwidth) -> Result<GramMatrix> {
    let n = z.nrows();
    if n < 2 {
        return Err(KbqdError::TooFewObservations { what: "gram matrix".into(), min: 2, got: n });
    }
    z.check_finite()?;
    let kernel = GaussianKernel::new(z.ncols(), h);
    let mut values = vec![0.0; n * n];
    values.par_chunks_mut(n).enumerate().for_each(|(i, out)| {
        let xi = z.row(i);
        for (j, o) in out.iter_mut().enumerate() {
            *o = kernel.eval(xi, z.row(j));
        }
    });
    Ok(GramMatrix { values, n, centering: Centering::None })
}

/// Row means (including the diagonal) and the off-diagonal grand mean of `K`.
///
/// Means are accumulated as shifts from a reference entry so that a constant
/// matrix yields that constant exactly.
pub(crate) fn nonparametric_terms(g: &GramMatrix) -> (Vec<f64>, f64) {
    let n = g.n;
    let nf = n as f64;
    let rows: Vec<f64> = (0..n)
        .map(|i| {
            let row = g.row(i);
            let pivot = row[0];
            pivot + row.iter().map(|v| v - pivot).sum::<f64>() / nf
        })
        .collect();
    let pivot = g.get(0, 1);
    let mut acc = 0.0;
    for i in 0..n {
        for j in 0..n {
            if i != j {
                acc += g.get(i, j) - pivot;
            }
        }
    }
    (rows, pivot + acc / (nf * (nf - 1.0)))
}

/// Centers `K` with respect to the pooled empirical distribution:
///
/// `Kc[i][j] = K[i][j] - r_i - r_j + g`, with `r_i` the row mean of `K`
/// including the diagonal and `g` the mean of the off-diagonal entries.
pub fn center_nonparametric(g: &GramMatrix) -> Result<GramMatrix> {
    if g.centering != Centering::None {
        return Err(KbqdError::AlreadyCentered);
    }
    if g.n < 2 {
        return Err(KbqdError::TooFewObservations { what: "centering".into(), min: 2, got: g.n });
    }
    let (r, grand) = nonparametric_terms(g);
    Ok(apply_additive(g, &r, grand, Centering::Nonparametric))
}

fn apply_additive(g: &GramMatrix, offsets: &[f64], constant: f64, tag: Centering) -> GramMatrix {
    let n = g.n;
    let mut values = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            values[i * n + j] = g.get(i, j) - (offsets[i] + offsets[j]) + constant;
        }
    }
    GramMatrix { values, n, centering: tag }
}

/// Normal centering model `N(mu, sigma)`.
#[derive(Debug, Clone)]
pub struct NormalModelParams {
    mu: Vec<f64>,
    sigma: DMatrix<f64>,
}

impl NormalModelParams {
    /// `sigma` is row-major `d x d`, symmetric positive definite.
    pub fn new(mu: Vec<f64>, sigma: Vec<f64>) -> Result<Self> {
        let d = mu.len();
        if d == 0 || sigma.len() != d * d {
            return Err(KbqdError::DimensionMismatch { expected: d * d, got: sigma.len() });
        }
        let sigma = DMatrix::from_row_slice(d, d, &sigma);
        check_spd(&sigma, "sigma")?;
        Ok(Self { mu, sigma })
    }

    /// Sample mean and covariance of `z`.
    pub fn estimate(z: &DataMatrix) -> Result<Self> {
        if z.nrows() <= z.ncols() {
            return Err(KbqdError::TooFewObservations {
                what: "normal model estimate".into(),
                min: z.ncols() + 1,
                got: z.nrows(),
            });
        }
        Self::new(z.mean(), z.covariance())
    }

    pub fn mu(&self) -> &[f64] {
        &self.mu
    }

    pub fn dim(&self) -> usize {
        self.mu.len()
    }

    /// Row-major covariance.
    pub fn sigma(&self) -> Vec<f64> {
        self.sigma.transpose().as_slice().to_vec()
    }

    pub(crate) fn sigma_matrix(&self) -> &DMatrix<f64> {
        &self.sigma
    }
}

pub(crate) fn check_spd(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let d = m.nrows();
    let scale = m.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
    for i in 0..d {
        for j in 0..i {
            if (m[(i, j)] - m[(j, i)]).abs() > 1e-10 * scale {
                return Err(KbqdError::NotPositiveDefinite(format!("{what} is not symmetric")));
            }
        }
    }
    let eig = m.clone().symmetric_eigen();
    let min = eig.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
    if !(min > 1e-10) {
        return Err(KbqdError::NotPositiveDefinite(format!(
            "{what} has smallest eigenvalue {min:e}"
        )));
    }
    Ok(())
}

/// Multivariate normal density with a fixed covariance, via its Cholesky factor.
#[derive(Debug, Clone)]
pub(crate) struct NormalDensity {
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl NormalDensity {
    pub fn new(cov: DMatrix<f64>) -> Result<Self> {
        let d = cov.nrows() as f64;
        let chol = Cholesky::new(cov)
            .ok_or_else(|| KbqdError::NotPositiveDefinite("kernel convolution covariance".into()))?;
        let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| 2.0 * v.ln()).sum();
        Ok(Self { chol, log_norm: -0.5 * (d * LN_2PI + log_det) })
    }

    pub fn eval(&self, x: &[f64], mean: &[f64]) -> f64 {
        let diff = DVector::from_iterator(x.len(), x.iter().zip(mean).map(|(a, b)| a - b));
        let l = self.chol.l();
        let v = l.solve_lower_triangular(&diff).expect("cholesky factor is nonsingular");
        (self.log_norm - 0.5 * v.norm_squared()).exp()
    }
}

/// Closed-form pieces of the kernel centered at `N(mu, sigma)`.
#[derive(Debug, Clone)]
pub struct ParametricCentering {
    params: NormalModelParams,
    kernel: GaussianKernel,
    point: NormalDensity,
    self_term: f64,
}

impl ParametricCentering {
    pub fn new(h: Bandwidth, params: NormalModelParams) -> Result<Self> {
        let d = params.dim();
        let h2 = h.get() * h.get();
        let eye = DMatrix::<f64>::identity(d, d) * h2;
        let point = NormalDensity::new(&eye + params.sigma_matrix())?;
        let pair = NormalDensity::new(&eye + params.sigma_matrix() * 2.0)?;
        let zeros = vec![0.0; d];
        let self_term = pair.eval(&zeros, &zeros);
        Ok(Self { kernel: GaussianKernel::new(d, h), params, point, self_term })
    }

    /// `K(x, G)`: density of `x` under `N(mu, h^2 I + sigma)`.
    pub fn point_term(&self, x: &[f64]) -> f64 {
        self.point.eval(x, &self.params.mu)
    }

    /// `K(G, G)`: density of 0 under `N(0, h^2 I + 2 sigma)`.
    pub fn self_term(&self) -> f64 {
        self.self_term
    }

    pub fn eval(&self, x: &[f64], y: &[f64]) -> f64 {
        self.kernel.eval(x, y) - (self.point_term(x) + self.point_term(y)) + self.self_term
    }
}

/// `K(x,y) - K(x,G) - K(G,y) + K(G,G)` for `G = N(mu, sigma)`.
pub fn center_parametric_normal(
    x: &[f64],
    y: &[f64],
    h: Bandwidth,
    params: &NormalModelParams,
) -> Result<f64> {
    let d = params.dim();
    for v in [x, y] {
        if v.len() != d {
            return Err(KbqdError::DimensionMismatch { expected: d, got: v.len() });
        }
    }
    Ok(ParametricCentering::new(h, params.clone())?.eval(x, y))
}

/// Centers an uncentered Gram matrix over `z` at the normal model `params`.
pub fn center_parametric_gram(
    g: &GramMatrix,
    z: &DataMatrix,
    h: Bandwidth,
    params: &NormalModelParams,
) -> Result<GramMatrix> {
    if g.centering != Centering::None {
        return Err(KbqdError::AlreadyCentered);
    }
    if z.nrows() != g.n {
        return Err(KbqdError::DimensionMismatch { expected: g.n, got: z.nrows() });
    }
    let pc = ParametricCentering::new(h, params.clone())?;
    let offsets: Vec<f64> = z.rows().map(|x| pc.point_term(x)).collect();
    Ok(apply_additive(g, &offsets, pc.self_term(), Centering::ParametricNormal))
}

//! Level/power scenarios and timing benchmarks.
//!
//! A scenario draws `k - 1` groups from a null generator and the last group
//! from an alternative indexed by `alt_param`, runs the configured tests `N`
//! times per grid point and reports rejection rates. Repetition `r` of grid
//! point `g` draws its data from the stream `(seed, hash(name)) -> g -> r`,
//! shared by every statistic, method and `h`.

use std::io::{Read, Write};
use std::path::Path;
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::baselines::distance_matrix;
use crate::data::{DataMatrix, GroupedSamples};
use crate::distributions::{
    sample_gumbel, sample_lognormal, sample_mv_cauchy, sample_mvt, MultivariateNormal, SkewNormal,
};
use crate::error::{KbqdError, Result};
use crate::kernel::{gram_matrix, Bandwidth, Centering};
use crate::resampling::{
    energy_test_with_distances, kernel_decisions, mmd_test_with_gram, ResamplingMethod, ResamplingPlan,
};
use crate::rng::{hash_str, RngStream};
use crate::tuning::{select_h, AlternativeFamily, AlternativeKind, DEFAULT_POWER_REPETITIONS};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Statistic {
    Tn,
    Trace,
    Mmd,
    Energy,
}

impl Statistic {
    pub const ALL: [Statistic; 4] = [Statistic::Tn, Statistic::Trace, Statistic::Mmd, Statistic::Energy];

    pub fn name(self) -> &'static str {
        match self {
            Self::Tn => "tn",
            Self::Trace => "trace",
            Self::Mmd => "mmd",
            Self::Energy => "energy",
        }
    }
}

impl std::fmt::Display for Statistic {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Statistic {
    type Err = KbqdError;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "tn" => Ok(Self::Tn),
            "trace" => Ok(Self::Trace),
            "mmd" => Ok(Self::Mmd),
            "energy" => Ok(Self::Energy),
            other => Err(KbqdError::InvalidParameter(format!("unknown statistic '{other}'"))),
        }
    }
}

/// Null/alternative pair. The alternative parameter is `alt_param`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// `N_d(0, I)` vs `SN_d(0, I, lambda)`, lambda laid out by `pattern`.
    SkewNormal,
    /// `N_d(0, I)` vs `N_d(eps, I)`.
    NormalMean,
    /// Three bivariate normals with means on a triangle of side `eps` (k = 3, d = 2).
    NormalTriangle,
    /// `Cauchy(0, I)` vs `Cauchy(eps, I)`.
    Cauchy,
    /// `t_nu(0, I)` vs `t_nu(eps, I)`.
    T,
    /// `logN(0, null_param)` vs `logN(0, sigma)`, univariate.
    Lognormal,
    /// `Gumbel(0, 1)` vs `Gumbel(0, sigma)`, univariate.
    GumbelScale,
    /// `Gumbel(0, 1)` vs `Gumbel(mu, 1)`, univariate.
    GumbelLocation,
}

/// Which coordinates of a vector parameter carry `alt_param`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pattern {
    #[default]
    All,
    /// First `ceil(d / 2)` coordinates.
    Half,
    First,
    Last,
}

impl Pattern {
    pub fn vector(self, d: usize, value: f64) -> Vec<f64> {
        let mut v = vec![0.0; d];
        match self {
            Self::All => v.iter_mut().for_each(|x| *x = value),
            Self::Half => v[..d.div_ceil(2)].iter_mut().for_each(|x| *x = value),
            Self::First => v[0] = value,
            Self::Last => v[d - 1] = value,
        }
        v
    }
}

fn default_k() -> usize {
    2
}
fn default_methods() -> Vec<ResamplingMethod> {
    ResamplingMethod::ALL.to_vec()
}
fn default_statistics() -> Vec<Statistic> {
    vec![Statistic::Tn]
}
fn default_b_count() -> usize {
    150
}
fn default_subsample() -> f64 {
    0.8
}
fn default_alpha() -> f64 {
    0.05
}
fn default_nu() -> u64 {
    4
}
fn default_true() -> bool {
    true
}
fn default_select_n() -> usize {
    DEFAULT_POWER_REPETITIONS
}
fn default_select_family() -> AlternativeKind {
    AlternativeKind::Location
}

/// One scenario, read from a flat TOML table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    pub family: Family,
    #[serde(default = "default_k")]
    pub k: usize,
    pub d: usize,
    /// Common group size; ignored when `sizes` is given.
    #[serde(default)]
    pub n: Option<usize>,
    #[serde(default)]
    pub sizes: Option<Vec<usize>>,
    #[serde(default)]
    pub pattern: Pattern,
    pub alt_grid: Vec<f64>,
    #[serde(default)]
    pub h_grid: Vec<f64>,
    /// Select `h` per grid point on a pilot draw instead of using `h_grid`.
    #[serde(default)]
    pub auto_h: bool,
    #[serde(default = "default_select_family")]
    pub select_family: AlternativeKind,
    #[serde(default = "default_select_n")]
    pub select_n: usize,
    #[serde(default = "default_methods")]
    pub methods: Vec<ResamplingMethod>,
    #[serde(default = "default_statistics")]
    pub statistics: Vec<Statistic>,
    #[serde(rename = "B", default = "default_b_count")]
    pub replications: usize,
    #[serde(rename = "b", default = "default_subsample")]
    pub subsample: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(rename = "N")]
    pub repetitions: usize,
    /// Degrees of freedom of the `t` family.
    #[serde(default = "default_nu")]
    pub nu: u64,
    /// Null log-scale of the lognormal family (default 0.8).
    #[serde(default)]
    pub null_param: Option<f64>,
    /// When false the runtime column is written as 0, making output reproducible byte for byte.
    #[serde(default = "default_true")]
    pub record_runtime: bool,
}

impl ScenarioConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(s).map_err(|e| KbqdError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_toml_str(&std::fs::read_to_string(path)?)
    }

    pub fn group_sizes(&self) -> Result<Vec<usize>> {
        match (&self.sizes, self.n) {
            (Some(s), _) => Ok(s.clone()),
            (None, Some(n)) => Ok(vec![n; self.k]),
            (None, None) => Err(KbqdError::Config("one of 'n' or 'sizes' is required".into())),
        }
    }

    pub fn plan(&self, method: ResamplingMethod) -> ResamplingPlan {
        ResamplingPlan {
            method,
            replications: self.replications,
            subsample: self.subsample,
            alpha: self.alpha,
            seed: self.seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(KbqdError::Config(m));
        let sizes = self.group_sizes()?;
        if self.k < 2 {
            return bad(format!("k must be >= 2, got {}", self.k));
        }
        if sizes.len() != self.k {
            return bad(format!("'sizes' has {} entries but k = {}", sizes.len(), self.k));
        }
        if sizes.iter().any(|&n| n < 2) {
            return bad("every group size must be >= 2".into());
        }
        if self.d < 1 {
            return bad("d must be >= 1".into());
        }
        if self.repetitions < 1 {
            return bad("N must be >= 1".into());
        }
        if self.alt_grid.is_empty() || self.alt_grid.iter().any(|v| !v.is_finite()) {
            return bad("alt_grid must be a non-empty list of finite numbers".into());
        }
        if !self.auto_h && self.h_grid.is_empty() {
            return bad("h_grid is empty and auto_h is false".into());
        }
        for &h in &self.h_grid {
            Bandwidth::new(h)?;
        }
        if self.methods.is_empty() || self.statistics.is_empty() {
            return bad("methods and statistics must be non-empty".into());
        }
        if self.statistics.contains(&Statistic::Mmd) && self.k != 2 {
            return bad("the mmd statistic needs k = 2".into());
        }
        if self.auto_h && self.select_n < 1 {
            return bad("select_n must be >= 1".into());
        }
        match self.family {
            Family::Lognormal | Family::GumbelScale | Family::GumbelLocation if self.d != 1 => {
                return bad(format!("family {:?} is univariate; set d = 1", self.family));
            }
            Family::NormalTriangle if self.k != 3 || self.d != 2 => {
                return bad("normal_triangle needs k = 3 and d = 2".into());
            }
            Family::Lognormal | Family::GumbelScale if self.alt_grid.iter().any(|&v| v <= 0.0) => {
                return bad("scale parameters in alt_grid must be positive".into());
            }
            Family::T if self.nu < 1 => return bad("nu must be >= 1".into()),
            _ => {}
        }
        if let Some(s) = self.null_param {
            if !(s > 0.0 && s.is_finite()) {
                return bad("null_param must be positive".into());
            }
        }
        self.plan(self.methods[0]).validate()?;
        for &m in &self.methods {
            self.plan(m).resample_sizes(&sizes)?;
        }
        Ok(())
    }

    /// Draws one k-tuple at alternative parameter `alt`; the last group carries the alternative.
    pub fn generate<R: rand::Rng + ?Sized>(&self, alt: f64, rng: &mut R) -> Result<GroupedSamples> {
        let sizes = self.group_sizes()?;
        let d = self.d;
        let k = self.k;
        let zero = vec![0.0; d];
        let mut samples: Vec<DataMatrix> = Vec::with_capacity(k);
        for (i, &n) in sizes.iter().enumerate() {
            let is_alt = i + 1 == k;
            let m = match self.family {
                Family::SkewNormal => {
                    if is_alt {
                        let eye = identity(d);
                        SkewNormal::new(zero.clone(), &eye, &self.pattern.vector(d, alt))?.sample(n, rng)
                    } else {
                        MultivariateNormal::standard(d).sample(n, rng)
                    }
                }
                Family::NormalMean => {
                    let mu = if is_alt { self.pattern.vector(d, alt) } else { zero.clone() };
                    MultivariateNormal::new(mu, &identity(d))?.sample(n, rng)
                }
                Family::NormalTriangle => {
                    let s3 = 3f64.sqrt();
                    let mu = match i {
                        0 => vec![0.0, s3 / 3.0 * alt],
                        1 => vec![-alt / 2.0, -s3 / 6.0 * alt],
                        _ => vec![alt / 2.0, -s3 / 6.0 * alt],
                    };
                    MultivariateNormal::new(mu, &identity(d))?.sample(n, rng)
                }
                Family::Cauchy => {
                    let c = if is_alt { self.pattern.vector(d, alt) } else { zero.clone() };
                    sample_mv_cauchy(n, &c, rng)?
                }
                Family::T => {
                    let c = if is_alt { self.pattern.vector(d, alt) } else { zero.clone() };
                    sample_mvt(n, self.nu, &c, rng)?
                }
                Family::Lognormal => {
                    let s = if is_alt { alt } else { self.null_param.unwrap_or(0.8) };
                    sample_lognormal(n, 0.0, s, rng)?
                }
                Family::GumbelScale => sample_gumbel(n, 0.0, if is_alt { alt } else { 1.0 }, rng)?,
                Family::GumbelLocation => sample_gumbel(n, if is_alt { alt } else { 0.0 }, 1.0, rng)?,
            };
            samples.push(m);
        }
        GroupedSamples::new(samples)
    }

    fn root(&self) -> RngStream {
        RngStream::new(self.seed, hash_str(&self.name))
    }
}

fn identity(d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d * d];
    (0..d).for_each(|i| m[i * d + i] = 1.0);
    m
}

/// One output row. `n` is the size of the first group; `h` is empty for energy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioRow {
    pub scenario: String,
    pub statistic: Statistic,
    pub method: ResamplingMethod,
    pub d: usize,
    pub n: usize,
    pub k: usize,
    pub h: Option<f64>,
    pub alt_param: f64,
    pub rejection_rate: f64,
    pub mean_runtime_seconds: f64,
    #[serde(rename = "N")]
    pub repetitions: usize,
    #[serde(rename = "B")]
    pub replications: usize,
    pub seed: u64,
}

pub type ScenarioResult = Vec<ScenarioRow>;

pub const CSV_HEADER: &str =
    "scenario,statistic,method,d,n,k,h,alt_param,rejection_rate,mean_runtime_seconds,N,B,seed";

pub fn write_csv<W: Write>(rows: &[ScenarioRow], w: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wtr.write_record(CSV_HEADER.split(','))?;
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn read_csv<R: Read>(r: R) -> Result<ScenarioResult> {
    let mut rdr = csv::Reader::from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != CSV_HEADER {
        return Err(KbqdError::Input(format!("unexpected header '{}'", header.join(","))));
    }
    rdr.deserialize().map(|r| r.map_err(KbqdError::from)).collect()
}

pub fn to_csv_string(rows: &[ScenarioRow]) -> Result<String> {
    let mut buf = Vec::new();
    write_csv(rows, &mut buf)?;
    String::from_utf8(buf).map_err(|e| KbqdError::Input(e.to_string()))
}

/// Outcome of one (statistic, method, h) cell in one repetition.
#[derive(Debug, Clone, Copy)]
struct Outcome {
    reject: bool,
    seconds: f64,
}

type CellKey = (Statistic, ResamplingMethod, Option<u64>);

fn seconds_since(t: Instant) -> f64 {
    t.elapsed().as_secs_f64()
}

fn run_repetition(
    cfg: &ScenarioConfig,
    groups: &GroupedSamples,
    hs: &[f64],
    test_seed: u64,
) -> Result<Vec<(CellKey, Outcome)>> {
    let mut out = Vec::new();
    let kernel_stats: Vec<Statistic> =
        cfg.statistics.iter().copied().filter(|s| matches!(s, Statistic::Tn | Statistic::Trace)).collect();
    let want_mmd = cfg.statistics.contains(&Statistic::Mmd);
    for &h in hs {
        let bw = Bandwidth::new(h)?;
        if kernel_stats.is_empty() && !want_mmd {
            break;
        }
        let t0 = Instant::now();
        let gram = gram_matrix(groups.pooled(), bw)?;
        let gram_secs = seconds_since(t0);
        for &method in &cfg.methods {
            let plan = cfg.plan(method).with_seed(test_seed);
            if !kernel_stats.is_empty() {
                let t = Instant::now();
                let (tn, trace) = kernel_decisions(groups, &gram, bw, Centering::Nonparametric, &plan)?;
                let secs = gram_secs + seconds_since(t);
                for &s in &kernel_stats {
                    let reject = if s == Statistic::Tn { tn.reject } else { trace.reject };
                    out.push(((s, method, Some(h.to_bits())), Outcome { reject, seconds: secs }));
                }
            }
            if want_mmd {
                let t = Instant::now();
                let dec = mmd_test_with_gram(groups, &gram, &plan)?;
                let secs = gram_secs + seconds_since(t);
                out.push(((Statistic::Mmd, method, Some(h.to_bits())), Outcome { reject: dec.reject, seconds: secs }));
            }
        }
    }
    if cfg.statistics.contains(&Statistic::Energy) {
        let t0 = Instant::now();
        let dist = distance_matrix(groups.pooled());
        let dist_secs = seconds_since(t0);
        for &method in &cfg.methods {
            let plan = cfg.plan(method).with_seed(test_seed);
            let t = Instant::now();
            let dec = energy_test_with_distances(groups, &dist, &plan)?;
            out.push(((Statistic::Energy, method, None), Outcome { reject: dec.reject, seconds: dist_secs + seconds_since(t) }));
        }
    }
    Ok(out)
}

/// Runs every grid point of `cfg`.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<ScenarioResult> {
    cfg.validate()?;
    let sizes = cfg.group_sizes()?;
    let root = cfg.root();
    let mut rows = Vec::new();
    for (gi, &alt) in cfg.alt_grid.iter().enumerate() {
        let cell = root.substream(gi as u64);
        let hs = if cfg.auto_h {
            let pilot = cfg.generate(alt, &mut cell.substream(u64::MAX).rng())?;
            let plan = cfg.plan(cfg.methods[0]).with_seed(cell.substream(u64::MAX - 1).derived_seed());
            let fam = AlternativeFamily::new(cfg.select_family);
            vec![select_h(&pilot, &fam, &plan, cfg.select_n)?.h_star.get()]
        } else {
            cfg.h_grid.clone()
        };
        let per_rep: Vec<Vec<(CellKey, Outcome)>> = (0..cfg.repetitions as u64)
            .into_par_iter()
            .map(|r| {
                let stream = cell.substream(r);
                let groups = cfg.generate(alt, &mut stream.rng())?;
                run_repetition(cfg, &groups, &hs, stream.derived_seed())
            })
            .collect::<Result<_>>()?;
        // every repetition yields the same cells in the same order
        for (ci, (key, _)) in per_rep[0].iter().enumerate() {
            let rejections = per_rep.iter().filter(|rep| rep[ci].1.reject).count();
            let secs: f64 = per_rep.iter().map(|rep| rep[ci].1.seconds).sum();
            rows.push(ScenarioRow {
                scenario: cfg.name.clone(),
                statistic: key.0,
                method: key.1,
                d: cfg.d,
                n: sizes[0],
                k: cfg.k,
                h: key.2.map(f64::from_bits),
                alt_param: alt,
                rejection_rate: rejections as f64 / cfg.repetitions as f64,
                mean_runtime_seconds: if cfg.record_runtime { secs / cfg.repetitions as f64 } else { 0.0 },
                repetitions: cfg.repetitions,
                replications: cfg.replications,
                seed: cfg.seed,
            });
        }
    }
    rows.sort_by(|a, b| {
        let ai = cfg.alt_grid.iter().position(|&v| v == a.alt_param);
        let bi = cfg.alt_grid.iter().position(|&v| v == b.alt_param);
        (ai, a.statistic, a.method as u8)
            .cmp(&(bi, b.statistic, b.method as u8))
            .then(a.h.unwrap_or(0.0).total_cmp(&b.h.unwrap_or(0.0)))
    });
    Ok(rows)
}

/// Grid for [`run_timing_benchmark`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BenchConfig {
    pub d_grid: Vec<usize>,
    pub n_grid: Vec<usize>,
    #[serde(rename = "B_grid")]
    pub replications_grid: Vec<usize>,
    #[serde(default = "default_methods")]
    pub methods: Vec<ResamplingMethod>,
    /// Timed runs per configuration, after one discarded warm-up run.
    #[serde(default = "default_bench_reps")]
    pub repetitions: usize,
    #[serde(default = "default_bench_h")]
    pub h: f64,
    #[serde(rename = "b", default = "default_subsample")]
    pub subsample: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_bench_reps() -> usize {
    3
}
fn default_bench_h() -> f64 {
    1.0
}

impl Default for BenchConfig {
    fn default() -> Self {
        Self {
            d_grid: vec![2],
            n_grid: vec![100, 500],
            replications_grid: vec![50, 150, 300],
            methods: default_methods(),
            repetitions: default_bench_reps(),
            h: default_bench_h(),
            subsample: default_subsample(),
            seed: 0,
        }
    }
}

/// Wall-clock time of the two-sample `T_n` test on standard-normal data.
/// Rows use `n` per group, `alt_param` 0 and the statistic `tn`.
pub fn run_timing_benchmark(cfg: &BenchConfig) -> Result<ScenarioResult> {
    if cfg.repetitions < 1 || cfg.d_grid.is_empty() || cfg.n_grid.is_empty() || cfg.replications_grid.is_empty() {
        return Err(KbqdError::Config("bench grids must be non-empty and repetitions >= 1".into()));
    }
    let bw = Bandwidth::new(cfg.h)?;
    let root = RngStream::new(cfg.seed, hash_str("bench"));
    let mut rows = Vec::new();
    for &d in &cfg.d_grid {
        for &n in &cfg.n_grid {
            let data_stream = root.substream(d as u64).substream(n as u64);
            for &bcount in &cfg.replications_grid {
                for &method in &cfg.methods {
                    let plan = ResamplingPlan {
                        method,
                        replications: bcount,
                        subsample: cfg.subsample,
                        alpha: 0.05,
                        seed: cfg.seed,
                    };
                    let mut secs = 0.0;
                    let mut rejections = 0;
                    for r in 0..=cfg.repetitions as u64 {
                        let mut rng = data_stream.substream(r).rng();
                        let normal = MultivariateNormal::standard(d);
                        let groups = GroupedSamples::new(vec![normal.sample(n, &mut rng), normal.sample(n, &mut rng)])?;
                        let t = Instant::now();
                        let gram = gram_matrix(groups.pooled(), bw)?;
                        let (tn, _) = kernel_decisions(&groups, &gram, bw, Centering::Nonparametric, &plan)?;
                        let elapsed = seconds_since(t);
                        if r > 0 {
                            secs += elapsed;
                            rejections += tn.reject as usize;
                        }
                    }
                    rows.push(ScenarioRow {
                        scenario: "bench".into(),
                        statistic: Statistic::Tn,
                        method,
                        d,
                        n,
                        k: 2,
                        h: Some(cfg.h),
                        alt_param: 0.0,
                        rejection_rate: rejections as f64 / cfg.repetitions as f64,
                        mean_runtime_seconds: secs / cfg.repetitions as f64,
                        repetitions: cfg.repetitions,
                        replications: bcount,
                        seed: cfg.seed,
                    });
                }
            }
        }
    }
    Ok(rows)
}

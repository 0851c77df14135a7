use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use kbqd::io::{load_csv, run_test, LabeledDataset, RunConfig};
use kbqd::simulation::{run_scenario, run_timing_benchmark, write_csv, BenchConfig, ScenarioConfig, Statistic};
use kbqd::tuning::{select_h, AlternativeFamily, AlternativeKind, DEFAULT_POWER_REPETITIONS};
use kbqd::{Centering, KbqdError, ResamplingMethod, ResamplingPlan};

const THREADS_ENV: &str = "KBQD_THREADS";

/// Kernel-based quadratic distance tests for two or more samples.
#[derive(Parser)]
#[command(name = "kbqd", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Test whether the groups of a CSV file share one distribution.
    Test(TestArgs),
    /// Select the kernel bandwidth by simulated power.
    SelectH(SelectArgs),
    /// Run a level/power scenario from a TOML config.
    Simulate(SimulateArgs),
    /// Time the test over a grid of dimensions, sizes and replication counts.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Csv,
    Text,
}

#[derive(Args)]
struct DataArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long = "group-col")]
    group_col: String,
    /// Comma-separated feature columns; default is every numeric column.
    #[arg(long, value_delimiter = ',')]
    features: Vec<String>,
    /// Comma-separated subset of groups to compare.
    #[arg(long, value_delimiter = ',')]
    groups: Vec<String>,
    /// Fail on missing cells instead of dropping the row.
    #[arg(long)]
    keep_incomplete: bool,
    #[arg(long)]
    standardize: bool,
}

impl DataArgs {
    fn load(&self) -> kbqd::Result<LabeledDataset> {
        let ds = load_csv(&self.input, &self.group_col, &self.features, !self.keep_incomplete)?;
        let ds = if self.groups.is_empty() { ds } else { ds.filter_groups(&self.groups)? };
        if self.standardize {
            ds.standardized()
        } else {
            Ok(ds)
        }
    }
}

#[derive(Args)]
struct PlanArgs {
    /// Resampling methods, comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "subsampling")]
    method: Vec<String>,
    #[arg(long = "B", default_value_t = 150)]
    replications: usize,
    #[arg(long = "b", default_value_t = 0.8)]
    subsample: f64,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl PlanArgs {
    fn methods(&self) -> kbqd::Result<Vec<ResamplingMethod>> {
        self.method.iter().map(|m| m.parse()).collect()
    }
}

#[derive(Args)]
struct OutputArgs {
    #[arg(long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value = "text")]
    format: Format,
}

#[derive(Args)]
struct TestArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    plan: PlanArgs,
    /// Kernel bandwidth; selected by simulated power when omitted.
    #[arg(long)]
    h: Option<f64>,
    /// tn, trace, mmd, energy or all; comma-separated.
    #[arg(long, value_delimiter = ',', default_value = "tn")]
    statistic: Vec<String>,
    /// nonparametric, parametric or none.
    #[arg(long, default_value = "nonparametric")]
    centering: String,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct SelectArgs {
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    plan: PlanArgs,
    /// location, scale or skewness.
    #[arg(long, default_value = "location")]
    family: String,
    #[arg(long = "h-grid", value_delimiter = ',')]
    h_grid: Vec<f64>,
    #[arg(long = "delta-grid", value_delimiter = ',')]
    delta_grid: Vec<f64>,
    /// Monte Carlo repetitions per (delta, h) cell.
    #[arg(long = "N", default_value_t = DEFAULT_POWER_REPETITIONS)]
    repetitions: usize,
    #[command(flatten)]
    out: OutputArgs,
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long)]
    config: PathBuf,
    /// Write 0 in the runtime column so output is reproducible byte for byte.
    #[arg(long)]
    no_runtime: bool,
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct BenchArgs {
    /// TOML file with d_grid, n_grid, B_grid and optional methods, repetitions, h, b, seed.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_delimiter = ',')]
    d: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    n: Vec<usize>,
    #[arg(long = "B", value_delimiter = ',')]
    replications: Vec<usize>,
    #[arg(long, value_delimiter = ',')]
    method: Vec<String>,
    #[arg(long)]
    repetitions: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    output: Option<PathBuf>,
}

fn emit(path: Option<&PathBuf>, text: &str) -> kbqd::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn parse_statistics(names: &[String]) -> kbqd::Result<Vec<Statistic>> {
    let mut out = Vec::new();
    for n in names {
        if n.eq_ignore_ascii_case("all") {
            return Ok(Statistic::ALL.to_vec());
        }
        let s: Statistic = n.parse()?;
        if !out.contains(&s) {
            out.push(s);
        }
    }
    Ok(out)
}

fn cmd_test(a: &TestArgs) -> kbqd::Result<()> {
    let ds = a.data.load()?;
    let mut statistics = parse_statistics(&a.statistic)?;
    if ds.group_names().len() != 2 && a.statistic.iter().any(|s| s.eq_ignore_ascii_case("all")) {
        statistics.retain(|s| *s != Statistic::Mmd);
    }
    let cfg = RunConfig {
        statistics,
        h: a.h,
        centering: a.centering.parse::<Centering>()?,
        methods: a.plan.methods()?,
        replications: a.plan.replications,
        subsample: a.plan.subsample,
        alpha: a.plan.alpha,
        seed: a.plan.seed,
        standardize: false,
    };
    let report = run_test(&ds, &cfg)?;
    emit(a.out.output.as_ref(), &report.to_string(matches!(a.out.format, Format::Csv))?)
}

fn cmd_select_h(a: &SelectArgs) -> kbqd::Result<()> {
    let ds = a.data.load()?;
    let (groups, _) = ds.to_groups()?;
    let kind: AlternativeKind = a.family.parse()?;
    let mut fam = AlternativeFamily::new(kind);
    if !a.h_grid.is_empty() {
        fam = fam.with_h_grid(a.h_grid.clone());
    }
    if !a.delta_grid.is_empty() {
        fam = fam.with_delta_grid(a.delta_grid.clone());
    }
    let methods = a.plan.methods()?;
    let plan = ResamplingPlan {
        method: methods[0],
        replications: a.plan.replications,
        subsample: a.plan.subsample,
        alpha: a.plan.alpha,
        seed: a.plan.seed,
    };
    let r = select_h(&groups, &fam, &plan, a.repetitions)?;
    let mut out = String::new();
    match a.out.format {
        Format::Csv => {
            out.push_str("h,delta,power,selected\n");
            for e in &r.power_table {
                out.push_str(&format!("{},{},{},{}\n", e.h, e.delta, e.power, e.h == r.h_star.get()));
            }
        }
        Format::Text => {
            out.push_str(&format!("h* = {}  (power >= 0.5 reached: {})\n", r.h_star, r.achieved));
            out.push_str(&format!("{:>8}  {:>8}  {:>6}\n", "h", "delta", "power"));
            for e in &r.power_table {
                out.push_str(&format!("{:>8}  {:>8}  {:>6.3}\n", e.h, e.delta, e.power));
            }
        }
    }
    emit(a.out.output.as_ref(), &out)
}

fn cmd_simulate(a: &SimulateArgs) -> kbqd::Result<()> {
    let mut cfg = ScenarioConfig::from_path(&a.config)?;
    if a.no_runtime {
        cfg.record_runtime = false;
    }
    let rows = run_scenario(&cfg)?;
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf)?;
    emit(a.output.as_ref(), &String::from_utf8_lossy(&buf))
}

fn cmd_bench(a: &BenchArgs) -> kbqd::Result<()> {
    let mut cfg = match &a.config {
        Some(p) => toml::from_str::<BenchConfig>(&std::fs::read_to_string(p)?)
            .map_err(|e| KbqdError::Config(e.to_string()))?,
        None => BenchConfig::default(),
    };
    if !a.d.is_empty() {
        cfg.d_grid = a.d.clone();
    }
    if !a.n.is_empty() {
        cfg.n_grid = a.n.clone();
    }
    if !a.replications.is_empty() {
        cfg.replications_grid = a.replications.clone();
    }
    if !a.method.is_empty() {
        cfg.methods = a.method.iter().map(|m| m.parse()).collect::<kbqd::Result<_>>()?;
    }
    if let Some(r) = a.repetitions {
        cfg.repetitions = r;
    }
    if let Some(s) = a.seed {
        cfg.seed = s;
    }
    let rows = run_timing_benchmark(&cfg)?;
    let mut buf = Vec::new();
    write_csv(&rows, &mut buf)?;
    emit(a.output.as_ref(), &String::from_utf8_lossy(&buf))
}

fn configure_threads() -> Result<(), String> {
    let Ok(v) = std::env::var(THREADS_ENV) else { return Ok(()) };
    let n: usize = v.trim().parse().map_err(|_| format!("{THREADS_ENV} must be a positive integer, got '{v}'"))?;
    if n == 0 {
        return Err(format!("{THREADS_ENV} must be a positive integer"));
    }
    rayon::ThreadPoolBuilder::new().num_threads(n).build_global().map_err(|e| e.to_string())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    let result = match &cli.command {
        Command::Test(a) => cmd_test(a),
        Command::SelectH(a) => cmd_select_h(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_input_error() { 2 } else { 3 })
        }
    }
}

//! `hetdp`: analyze privacy profiles, sweep parameter grids, run the bound
//! verification suites and Monte Carlo checks.
//!
//! Exit codes: 0 success, 1 bound violation, 2 input error, 3 I/O error.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use hetdp::bounds::{make_equal_revenue, run_suite, verify_bounds, BoundCheck, BoundKind, Suite};
use hetdp::optimizer::{optimize_affine, optimize_threshold, RiskReport};
use hetdp::oracle::{empirical_mse, Estimator, McResult, SourceDistribution};
use hetdp::sweep::{write_csv, Axis, Family, Param, SweepSpec};
use hetdp::PrivacyProfile;

#[derive(Debug, Parser)]
#[command(
    name = "hetdp",
    version,
    about = "Mean estimation under heterogeneous differential privacy"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Optimize both estimators for a profile and print the risk report as JSON.
    Analyze(ProfileSource),
    /// Evaluate a two-parameter grid and write `axis1,axis2,mse_thr,mse_aff,ratio` CSV.
    Sweep(SweepArgs),
    /// Run a bound verification suite; prints one JSON line per check.
    Verify(VerifyArgs),
    /// Compare the analytic MSE of an optimized estimator with a Monte Carlo estimate.
    Simulate(SimulateArgs),
}

#[derive(Debug, Args)]
#[group(skip)]
struct ProfileSource {
    /// Privacy levels as `eps:count[,eps:count...]`.
    #[arg(long, conflicts_with_all = ["json", "csv", "equal_revenue"])]
    levels: Option<String>,
    /// Profile as JSON, e.g. `{"levels":[[0.5,1],[1,1]],"public_count":0}`.
    #[arg(long, conflicts_with_all = ["csv", "equal_revenue", "public"])]
    json: Option<String>,
    /// File with one budget per line (`inf` for public records).
    #[arg(long, value_name = "PATH", conflicts_with_all = ["equal_revenue", "public"])]
    csv: Option<PathBuf>,
    /// The equal-revenue construction with M levels.
    #[arg(long, value_name = "M", conflicts_with = "public")]
    equal_revenue: Option<u32>,
    /// Number of public (unprotected) records, added to `--levels`.
    #[arg(long, default_value_t = 0)]
    public: u64,
}

#[derive(Debug, Args)]
struct SweepArgs {
    /// public_private or two_level.
    #[arg(long)]
    family: String,
    #[arg(long)]
    n1: Option<f64>,
    #[arg(long)]
    eps1: Option<f64>,
    #[arg(long)]
    n2: Option<f64>,
    #[arg(long)]
    eps2: Option<f64>,
    /// `param:lo:hi:lin|log:steps`; rows are ordered by this axis.
    #[arg(long)]
    axis1: String,
    /// `param:lo:hi:lin|log:steps`.
    #[arg(long)]
    axis2: String,
    /// Output file; standard output when omitted.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// thm1, thm2, thm34, lemma or all.
    suite: String,
    #[arg(long, env = "HETDP_SEED", default_value_t = 0)]
    seed: u64,
    /// Random instances per suite (profiles, for `lemma`).
    #[arg(long, default_value_t = 100)]
    instances: u64,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    profile: ProfileSource,
    #[arg(long, value_enum, default_value_t = EstimatorKind::Affine)]
    estimator: EstimatorKind,
    #[arg(long, value_enum, default_value_t = Dist::Rademacher)]
    dist: Dist,
    #[arg(long, default_value_t = 1_000_000)]
    trials: u64,
    #[arg(long, env = "HETDP_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum EstimatorKind {
    Threshold,
    Affine,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum Dist {
    /// Uniform on {-1/2, +1/2}.
    Rademacher,
    /// Every record equals 0.
    Delta0,
}

enum Failure {
    Violation(String),
    Input(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Violation(_) => 1,
            Failure::Input(_) => 2,
            Failure::Io(_) => 3,
        }
    }
}

fn input(flag: &str) -> impl Fn(hetdp::Error) -> Failure + '_ {
    move |e| Failure::Input(format!("invalid {flag}: {e}"))
}

fn io_error(what: String) -> impl Fn(io::Error) -> Failure {
    move |e| Failure::Io(format!("{what}: {e}"))
}

fn load_profile(src: &ProfileSource) -> Result<PrivacyProfile, Failure> {
    if let Some(levels) = &src.levels {
        return PrivacyProfile::from_compact(levels, src.public).map_err(input("--levels"));
    }
    if let Some(json) = &src.json {
        return PrivacyProfile::from_json(json).map_err(input("--json"));
    }
    if let Some(path) = &src.csv {
        let file = File::open(path).map_err(io_error(format!("cannot read {}", path.display())))?;
        return PrivacyProfile::from_budget_csv(BufReader::new(file)).map_err(input("--csv"));
    }
    if let Some(m) = src.equal_revenue {
        return make_equal_revenue(m).map_err(input("--equal-revenue"));
    }
    if src.public > 0 {
        return PrivacyProfile::public_only(src.public).map_err(input("--public"));
    }
    Err(Failure::Input(
        "no profile given: use --levels, --json, --csv, --equal-revenue or --public".into(),
    ))
}

fn print_json<T: Serialize>(value: &T) -> Result<(), Failure> {
    let line = serde_json::to_string(value).expect("report serialization is infallible");
    writeln!(io::stdout().lock(), "{line}").map_err(io_error("cannot write to stdout".into()))
}

#[derive(Serialize)]
struct AnalyzeOutput<'a> {
    #[serde(flatten)]
    risk: RiskReport,
    /// Tightest upper bound that applies to this profile.
    bound: f64,
    checks: &'a [BoundCheck],
}

fn analyze(src: &ProfileSource) -> Result<(), Failure> {
    let profile = load_profile(src)?;
    let report = verify_bounds(&profile);
    let bound = report
        .checks
        .iter()
        .filter(|c| c.applies && c.kind == BoundKind::Upper)
        .map(|c| c.bound)
        .fold(f64::INFINITY, f64::min);
    print_json(&AnalyzeOutput {
        risk: report.risk,
        bound,
        checks: &report.checks,
    })
}

fn sweep(args: &SweepArgs) -> Result<(), Failure> {
    let family: Family = args.family.parse().map_err(input("--family"))?;
    let axis1: Axis = args.axis1.parse().map_err(input("--axis1"))?;
    let axis2: Axis = args.axis2.parse().map_err(input("--axis2"))?;
    let mut spec = SweepSpec::new(family, axis1, axis2);
    for (param, value) in [
        (Param::N1, args.n1),
        (Param::Eps1, args.eps1),
        (Param::N2, args.n2),
        (Param::Eps2, args.eps2),
    ] {
        if let Some(v) = value {
            spec = spec.with_fixed(param, v);
        }
    }
    let rows = spec.evaluate().map_err(input("sweep"))?;
    match &args.out {
        Some(path) => {
            let what = format!("cannot write {}", path.display());
            let file = File::create(path).map_err(io_error(what.clone()))?;
            let mut out = BufWriter::new(file);
            write_csv(&rows, &mut out).map_err(io_error(what.clone()))?;
            out.flush().map_err(io_error(what))
        }
        None => {
            write_csv(&rows, io::stdout().lock()).map_err(io_error("cannot write to stdout".into()))
        }
    }
}

fn verify(args: &VerifyArgs) -> Result<(), Failure> {
    let suite: Suite = args.suite.parse().map_err(input("suite"))?;
    let lines = run_suite(suite, args.seed, args.instances);
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    let mut violations = 0usize;
    for line in &lines {
        violations += usize::from(!line.satisfied);
        let text = serde_json::to_string(line).expect("check serialization is infallible");
        writeln!(out, "{text}").map_err(io_error("cannot write to stdout".into()))?;
    }
    out.flush()
        .map_err(io_error("cannot write to stdout".into()))?;
    if violations > 0 {
        return Err(Failure::Violation(format!(
            "{violations} of {} checks violated",
            lines.len()
        )));
    }
    eprintln!("{}: all {} checks hold", suite.name(), lines.len());
    Ok(())
}

#[derive(Serialize)]
struct SimulateOutput {
    estimator: EstimatorKind,
    dist: Dist,
    analytic_mse: f64,
    #[serde(flatten)]
    mc: McResult,
    z_score: Option<f64>,
}

fn simulate(args: &SimulateArgs) -> Result<(), Failure> {
    let profile = load_profile(&args.profile)?;
    let estimator = match args.estimator {
        EstimatorKind::Threshold => Estimator::Threshold(optimize_threshold(&profile).0),
        EstimatorKind::Affine => Estimator::Affine(optimize_affine(&profile)),
    };
    let dist = match args.dist {
        Dist::Rademacher => SourceDistribution::RademacherHalf,
        Dist::Delta0 => SourceDistribution::PointMass(0.0),
    };
    let analytic_mse = estimator.analytic_mse_under(&profile, dist);
    let mc = empirical_mse(&profile, &estimator, dist, args.trials, args.seed)
        .map_err(input("--trials"))?;
    print_json(&SimulateOutput {
        estimator: args.estimator,
        dist: args.dist,
        analytic_mse,
        mc,
        z_score: mc.z_score(analytic_mse),
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Analyze(src) => analyze(src),
        Command::Sweep(args) => sweep(args),
        Command::Verify(args) => verify(args),
        Command::Simulate(args) => simulate(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(failure) => {
            let (Failure::Violation(msg) | Failure::Input(msg) | Failure::Io(msg)) = &failure;
            eprintln!("error: {msg}");
            ExitCode::from(failure.code())
        }
    }
}

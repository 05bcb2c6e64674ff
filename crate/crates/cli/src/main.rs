mod svg;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use causalreg::causal_bounds::{random_problem, theorem3_violation_check, write_bound_trials, FunctionClass};
use causalreg::concorr::{concorr_fit, reduced_system_fit};
use causalreg::data::Dataset;
use causalreg::regression::{Penalty, SolverConfig};
use causalreg::rng::{normal_vector, substream};
use causalreg::simulation::{
    read_records, run_experiment, success_failure_rates, write_records, ExperimentConfig, ExperimentMethod, Scenario,
};

#[derive(Parser)]
#[command(name = "causalreg", version, about = "Causal regularization experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a simulation campaign and write one CSV row per run and method.
    Simulate(SimulateArgs),
    /// Fit ConCorr on a CSV dataset, optionally against a full-system truth.
    Fit(FitArgs),
    /// Monte Carlo check of the loss-gap bound over random confounders.
    Bounds(BoundsArgs),
    /// Scatter plot of a results CSV as SVG.
    Plot(PlotArgs),
}

#[derive(Args)]
struct SimulateArgs {
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    scenario: u8,
    #[arg(long, default_value_t = 30)]
    d: usize,
    /// Number of sources mixed into the predictors.
    #[arg(long = "l", default_value_t = 30)]
    ell: usize,
    /// Scenario 1 only: draw predictors i.i.d. instead of mixing sources.
    #[arg(long)]
    isotropic: bool,
    /// Sample size [default: 50 for scenario 1, 1000 for scenario 2].
    #[arg(long)]
    n: Option<usize>,
    #[arg(long, default_value_t = 200)]
    runs: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, value_delimiter = ',', default_value = "concorr-ridge,concorr-lasso,cv-ridge,cv-lasso")]
    methods: Vec<ExperimentMethod>,
    #[arg(long, default_value_t = 0.05)]
    margin: f64,
    #[arg(long)]
    normalize: bool,
    #[arg(long, default_value = "results.csv")]
    output: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum FitMethod {
    Ridge,
    Lasso,
}

impl FitMethod {
    fn penalty(self) -> Penalty {
        match self {
            FitMethod::Ridge => Penalty::Ridge,
            FitMethod::Lasso => Penalty::Lasso,
        }
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    target: String,
    #[arg(long, value_enum, default_value = "ridge")]
    method: FitMethod,
    /// Scale every predictor to unit variance before fitting.
    #[arg(long)]
    normalize: bool,
    /// Predictor columns removed before fitting.
    #[arg(long, value_delimiter = ',')]
    drop: Vec<String>,
    /// Take the truth from OLS on all predictors and report errors against it.
    #[arg(long)]
    truth_from_full: bool,
    /// Optional CSV of the fitted coefficients.
    #[arg(long)]
    output: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ClassKind {
    Ball,
    Finite,
}

#[derive(Args)]
struct BoundsArgs {
    /// Number of sources.
    #[arg(long = "l", default_value_t = 500)]
    ell: usize,
    /// Number of predictors.
    #[arg(long, default_value_t = 4)]
    d: usize,
    /// Variance of the confounding term.
    #[arg(long, default_value_t = 1.0)]
    variance: f64,
    #[arg(long, value_enum, default_value = "ball")]
    class: ClassKind,
    /// Ball radius, or scale of the random members of a finite class.
    #[arg(long, default_value_t = 1.0)]
    radius: f64,
    /// Size of a finite class.
    #[arg(long, default_value_t = 8)]
    members: usize,
    #[arg(long, default_value_t = 3.0)]
    beta: f64,
    #[arg(long, default_value_t = 10_000)]
    trials: usize,
    #[arg(long)]
    seed: u64,
    #[arg(long, default_value = "bounds.csv")]
    output: PathBuf,
}

#[derive(Args)]
struct PlotArgs {
    #[arg(long)]
    input: PathBuf,
    #[arg(long, default_value = "plot.svg")]
    output: PathBuf,
    /// Plot only these methods.
    #[arg(long, value_delimiter = ',')]
    methods: Vec<ExperimentMethod>,
}

fn main() {
    if let Err(err) = run() {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run() -> Result<()> {
    let cli = Cli::parse();
    configure_threads()?;
    match cli.command {
        Command::Simulate(args) => simulate(args),
        Command::Fit(args) => fit(args),
        Command::Bounds(args) => bounds(args),
        Command::Plot(args) => plot(args),
    }
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var("CAUSALREG_THREADS") else {
        return Ok(());
    };
    let threads: usize = value.trim().parse().with_context(|| format!("CAUSALREG_THREADS=`{value}`"))?;
    rayon::ThreadPoolBuilder::new().num_threads(threads).build_global()?;
    Ok(())
}

/// Writes through a temporary file in the destination directory, then
/// renames it into place.
fn write_atomically(path: &Path, write: impl FnOnce(&mut BufWriter<&File>) -> Result<()>) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("creating file in {}", dir.display()))?;
    {
        let mut out = BufWriter::new(tmp.as_file());
        write(&mut out)?;
        out.flush()?;
    }
    tmp.persist(path).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}

fn simulate(args: SimulateArgs) -> Result<()> {
    let scenario = if args.scenario == 1 { Scenario::One } else { Scenario::Two };
    let n = args.n.unwrap_or(match scenario {
        Scenario::One => 50,
        Scenario::Two => 1000,
    });
    if args.isotropic && scenario == Scenario::Two {
        bail!("--isotropic applies to scenario 1 only");
    }
    let ell = if args.isotropic { None } else { Some(args.ell) };
    let mut config = ExperimentConfig::new(scenario, args.d, ell, n, args.runs, args.seed);
    config.methods = args.methods.clone();
    config.margin = args.margin;
    config.normalize = args.normalize;

    let records = run_experiment(&config)?;
    write_atomically(&args.output, |out| Ok(write_records(&records, out)?))?;

    println!("{:<14} {:>8} {:>8} {:>6}", "method", "success", "failure", "runs");
    for method in args.methods {
        let rates = success_failure_rates(&records, args.margin, method)?;
        println!("{:<14} {:>8.3} {:>8.3} {:>6}", method.as_str(), rates.success, rates.failure, rates.count);
    }
    Ok(())
}

fn fit(args: FitArgs) -> Result<()> {
    let file = File::open(&args.data).with_context(|| format!("opening {}", args.data.display()))?;
    let cfg = SolverConfig::default();
    let penalty = args.method.penalty();

    let (names, coefficients, ols, truth, result) = if args.truth_from_full {
        let data = Dataset::read_csv(BufReader::new(file), &args.target, &[])?;
        let fit = reduced_system_fit(&data, &args.drop, penalty, args.normalize, &cfg)?;
        println!("relative squared error (concorr): {:.6}", fit.error_concorr);
        println!("relative squared error (ols):     {:.6}", fit.error_unregularized);
        let c = fit.result.vector.coefficients.clone();
        let o = fit.result.ols.coefficients.clone();
        (fit.kept_columns, c, o, Some(fit.truth), fit.result)
    } else {
        let data = Dataset::read_csv(BufReader::new(file), &args.target, &args.drop)?;
        let result = concorr_fit(&data, penalty, args.normalize, &cfg)?;
        let c = result.vector.coefficients.clone();
        let o = result.ols.coefficients.clone();
        (data.column_names, c, o, None, result)
    };
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    println!("beta_hat: {:.6}", result.beta_hat);
    println!("sigma_a^2: {:.6e}  sigma_c^2: {:.6e}", result.estimate.sigma_a_sq, result.estimate.sigma_c_sq);
    println!("lambda: {:.6e}", result.lambda);
    println!("squared norm: {:.6e} (ols {:.6e})", result.vector.squared_norm(), result.ols.squared_norm());

    if let Some(path) = &args.output {
        write_atomically(path, |out| {
            let mut wtr = csv::Writer::from_writer(out);
            wtr.write_record(["column", "concorr", "ols", "truth"])?;
            for (j, name) in names.iter().enumerate() {
                let t = truth.as_ref().map(|t| t[j].to_string()).unwrap_or_default();
                wtr.write_record([name.clone(), coefficients[j].to_string(), ols[j].to_string(), t])?;
            }
            wtr.flush()?;
            Ok(())
        })?;
    }
    Ok(())
}

fn bounds(args: BoundsArgs) -> Result<()> {
    let problem = random_problem(args.ell, args.d, args.variance, 0.0, args.seed)?;
    let class = match args.class {
        ClassKind::Ball => FunctionClass::LinearBall { radius: args.radius },
        ClassKind::Finite => {
            let mut rng = substream(args.seed, 1);
            let members = (0..args.members).map(|_| &problem.a + normal_vector(&mut rng, args.d, args.radius)).collect();
            FunctionClass::FiniteLinearSet(members)
        }
    };
    let report = theorem3_violation_check(&problem, &class, args.beta, args.trials, args.seed)?;
    write_atomically(&args.output, |out| Ok(write_bound_trials(&report.trials, out)?))?;

    let s = report.slack;
    println!("d_corr: {}  b: {:.6}  margin: {:.6}", report.d_corr, report.b, report.margin);
    println!(
        "violation frequency: {:.6}  bound: {:.6}  (+3 se: {:.6})",
        report.violation_freq,
        report.prob_bound,
        report.prob_bound + 3.0 * report.std_error
    );
    println!("slack min/q05/median/q95/max: {:.4} {:.4} {:.4} {:.4} {:.4}", s.min, s.q05, s.median, s.q95, s.max);
    if !report.within(3.0) {
        eprintln!("warning: violation frequency exceeds the bound by more than 3 standard errors");
    }
    Ok(())
}

fn plot(args: PlotArgs) -> Result<()> {
    let file = File::open(&args.input).with_context(|| format!("opening {}", args.input.display()))?;
    let mut records = read_records(BufReader::new(file))?;
    if !args.methods.is_empty() {
        records.retain(|r| args.methods.contains(&r.method));
    }
    if records.is_empty() {
        bail!("no records for the selected methods");
    }
    let doc = svg::scatter(&records);
    write_atomically(&args.output, |out| Ok(out.write_all(doc.as_bytes())?))
}

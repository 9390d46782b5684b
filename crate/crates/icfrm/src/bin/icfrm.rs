//! Command-line front end: fit the factorial model, run bootstrap tests,
//! drive simulation scenarios, and rebuild the reference tables.
//!
//! Logs go to standard error; tables and CSV artifacts go to standard
//! output (or files under `--out`). All randomized output is fully
//! determined by `--seed`, regardless of `--threads`.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::Rng;

use icfrm::bootstrap::{bootstrap_test, bootstrap_suite, BootstrapKind};
use icfrm::data::{
    build_contrast, build_factorial_design, ingest_noise_csv, CsvOrientation, FactorSelector,
    RawNoiseTable, DATA_URL, FACTOR_NAMES,
};
use icfrm::model::{estimate_beta, DesignMatrix, FunctionalDataset, Hypothesis};
use icfrm::report::{pvalue_table, size_power_table, OutputFormat, RateRow};
use icfrm::sim::{
    realdata_simulation, run_scenario, sample_covariance, NoiseCase, RealDataMean, ScenarioConfig,
    SizePowerReport,
};
use icfrm::stats::{scale_dataset, scale_hypothesis, ScaleFunction, StatisticKind};
use icfrm::{Error, Result};

const DATA_ENV_VAR: &str = "ICFRM_DATA";

#[derive(Parser)]
#[command(name = "icfrm", version, about = "Hypothesis tests for functional responses on rank-deficient designs")]
struct Cli {
    /// Worker thread budget (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Log level for standard error (error, warn, info, debug).
    #[arg(long, global = true, default_value = "info")]
    log_level: String,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model and print the estimated main-effect contrast curves.
    Fit {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Bootstrap p-values for one factor or the whole A-G battery.
    Test {
        /// Factor to test: A-G, 1-7, or `all`.
        #[arg(long, default_value = "all")]
        factor: String,
        /// Statistic: t, f, g, fmax. Omit to run the full suite.
        #[arg(long)]
        stat: Option<StatArg>,
        /// Bootstrap: nb (nonparametric) or pb (parametric).
        #[arg(long)]
        boot: Option<BootArg>,
        /// Number of bootstrap replicates.
        #[arg(long, default_value_t = 1000)]
        m: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Multiply curves and null values by h(t) = 1/(t + 1/43) first.
        #[arg(long)]
        scaled: bool,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Run size/power scenarios from a JSON file (one object or an array).
    Simulate {
        scenario_file: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// Rebuild one of the six reference size/power tables (1-6).
    ReproduceTableS {
        /// Table index: 1/2/3 are Cases 1/2/3 unscaled, 4/5/6 scaled.
        index: u8,
        /// Monte-Carlo runs per table row.
        #[arg(long, default_value_t = 200)]
        n_sims: usize,
        /// Bootstrap replicates per run.
        #[arg(long, default_value_t = 200)]
        m_boot: usize,
        /// Full-size run (1000 x 1000); overrides --n-sims/--m-boot.
        #[arg(long)]
        full_scale: bool,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
    /// P-value table for all seven factors, plus an optional data-driven
    /// size/power simulation.
    ReproduceRealData {
        #[arg(long)]
        scaled: bool,
        #[arg(long, default_value_t = 1000)]
        m: usize,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Also simulate Gaussian data with the sample covariance of the
        /// curves, under beta = 0 and beta = beta_hat, for this factor.
        #[arg(long)]
        sim_factor: Option<String>,
        /// Monte-Carlo runs for the data-driven simulation.
        #[arg(long, default_value_t = 200)]
        n_sims: usize,
        /// Bootstrap replicates per simulated dataset.
        #[arg(long, default_value_t = 200)]
        m_boot: usize,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        output: OutputArgs,
    },
}

#[derive(Args)]
struct DataArgs {
    /// CSV file with the measured curves. Falls back to the ICFRM_DATA
    /// environment variable.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// CSV layout of the data file.
    #[arg(long, global = true, value_enum, default_value_t = OrientationArg::Rows)]
    orientation: OrientationArg,
    /// Use the bundled synthetic stand-in dataset instead of a file.
    #[arg(long, global = true)]
    surrogate: bool,
}

#[derive(Args)]
struct OutputArgs {
    /// Table format on standard output.
    #[arg(long, value_enum, default_value_t = FormatArg::Text)]
    format: FormatArg,
    /// Directory for CSV and text artifacts (created if missing).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum OrientationArg {
    /// One row per measured curve.
    Rows,
    /// One column per measured curve.
    Cols,
}

#[derive(Clone, Copy, ValueEnum)]
enum FormatArg {
    Text,
    Csv,
}

#[derive(Clone, Copy, ValueEnum)]
enum StatArg {
    T,
    F,
    G,
    Fmax,
}

#[derive(Clone, Copy, ValueEnum)]
enum BootArg {
    Nb,
    Pb,
}

impl From<OrientationArg> for CsvOrientation {
    fn from(o: OrientationArg) -> Self {
        match o {
            OrientationArg::Rows => CsvOrientation::CurvesAsRows,
            OrientationArg::Cols => CsvOrientation::CurvesAsColumns,
        }
    }
}

impl From<FormatArg> for OutputFormat {
    fn from(f: FormatArg) -> Self {
        match f {
            FormatArg::Text => OutputFormat::AlignedText,
            FormatArg::Csv => OutputFormat::Csv,
        }
    }
}

impl From<StatArg> for StatisticKind {
    fn from(s: StatArg) -> Self {
        match s {
            StatArg::T => StatisticKind::TL2,
            StatArg::F => StatisticKind::FRatio,
            StatArg::G => StatisticKind::GGlobal,
            StatArg::Fmax => StatisticKind::FMax,
        }
    }
}

impl From<BootArg> for BootstrapKind {
    fn from(b: BootArg) -> Self {
        match b {
            BootArg::Nb => BootstrapKind::Nonparametric,
            BootArg::Pb => BootstrapKind::Parametric,
        }
    }
}

/// Resolve the response curves: `--data`, then the environment variable,
/// then the bundled surrogate if `--surrogate` was passed.
fn load_table(args: &DataArgs) -> Result<RawNoiseTable> {
    let from_env = std::env::var_os(DATA_ENV_VAR).map(PathBuf::from);
    let path = args.data.clone().or(from_env);
    match path {
        Some(p) => {
            log::info!("reading curves from {}", p.display());
            ingest_noise_csv(&p, args.orientation.into())
        }
        None if args.surrogate => {
            log::info!("using the bundled synthetic stand-in dataset");
            Ok(icfrm::surrogate::surrogate_noise_table())
        }
        None => Err(Error::InvalidInput(format!(
            "no response data: pass --data <file> or set {DATA_ENV_VAR} \
             (CSV with a label column and one value per rotation speed; \
             source: {DATA_URL}), or pass --surrogate to use the bundled \
             synthetic stand-in"
        ))),
    }
}

fn load_problem(args: &DataArgs) -> Result<(FunctionalDataset, DesignMatrix)> {
    let y = load_table(args)?.to_dataset()?;
    let d = build_factorial_design();
    if y.n_curves() != d.n() {
        return Err(Error::DimensionMismatch(format!(
            "{} curves vs {} design rows",
            y.n_curves(),
            d.n()
        )));
    }
    Ok((y, d))
}

/// Emit a rendered table on stdout and, when `--out` is set, also write
/// `<stem>.csv` and `<stem>.txt` artifacts.
fn emit(stem: &str, output: &OutputArgs, render: impl Fn(OutputFormat) -> String) -> Result<()> {
    print!("{}", render(output.format.into()));
    if let Some(dir) = &output.out {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join(format!("{stem}.csv")), render(OutputFormat::Csv))?;
        std::fs::write(dir.join(format!("{stem}.txt")), render(OutputFormat::AlignedText))?;
        log::info!("wrote {stem}.csv and {stem}.txt under {}", dir.display());
    }
    Ok(())
}

fn factor_hypotheses(selector: FactorSelector, t_len: usize) -> Result<Vec<(String, Hypothesis)>> {
    let factors: Vec<usize> = match selector {
        FactorSelector::Factor(f) => vec![f],
        FactorSelector::All => (1..=7).collect(),
    };
    factors
        .into_iter()
        .map(|f| {
            Ok((
                FACTOR_NAMES[f - 1].to_string(),
                build_contrast(FactorSelector::Factor(f), t_len)?,
            ))
        })
        .collect()
}

/// Per-factor bootstrap seed so every factor gets its own replicate stream.
fn factor_seed(seed: u64, factor_index: usize) -> u64 {
    icfrm::rng::stream(seed, &[0xda, factor_index as u64]).gen()
}

fn run_pvalue_battery(
    y: &FunctionalDataset,
    d: &DesignMatrix,
    selector: FactorSelector,
    m: usize,
    seed: u64,
    scaled: bool,
) -> Result<Vec<(String, [f64; 6])>> {
    let scale = scaled.then(|| ScaleFunction::reciprocal_shift(&y.grid)).transpose()?;
    let y = match &scale {
        Some(h) => scale_dataset(y, h)?,
        None => y.clone(),
    };
    let mut rows = Vec::new();
    for (name, hyp) in factor_hypotheses(selector, y.grid.len())? {
        let hyp = match &scale {
            Some(h) => scale_hypothesis(&hyp, h)?,
            None => hyp,
        };
        let idx = FACTOR_NAMES.iter().position(|&n| n == name).unwrap_or(0);
        let suite = bootstrap_suite(&y, d, &hyp, m, factor_seed(seed, idx))?;
        rows.push((
            name,
            [suite.t_nb, suite.f_nb, suite.g_nb, suite.g_pb, suite.fmax_nb, suite.fmax_pb],
        ));
    }
    Ok(rows)
}

fn cmd_fit(data: &DataArgs, output: &OutputArgs) -> Result<()> {
    let (y, d) = load_problem(data)?;
    let beta = estimate_beta(&y, &d)?;
    log::info!(
        "fit: n = {}, parameters = {}, rank = {}, error dof = {}, grid = {} points",
        d.n(),
        d.n_params(),
        d.rank(),
        d.dof(),
        y.grid.len()
    );
    let all = build_contrast(FactorSelector::All, y.grid.len())?;
    let contrasts = &all.c_matrix * &beta.beta_hat;
    let render = |format: OutputFormat| -> String {
        let mut header = vec!["factor".to_string()];
        header.extend(y.grid.points().iter().map(|t| format!("{t:.4}")));
        let mut out = String::new();
        match format {
            OutputFormat::Csv | OutputFormat::AlignedText => {
                let _ = writeln!(out, "{}", header.join(","));
                for (f, name) in FACTOR_NAMES.iter().enumerate() {
                    let cells: Vec<String> = (0..y.grid.len())
                        .map(|j| format!("{:.6}", contrasts[(f, j)]))
                        .collect();
                    let _ = writeln!(out, "{},{}", name, cells.join(","));
                }
            }
        }
        out
    };
    emit("fitted_contrasts", output, render)
}

#[allow(clippy::too_many_arguments)]
fn cmd_test(
    factor: &str,
    stat: Option<StatArg>,
    boot: Option<BootArg>,
    m: usize,
    seed: u64,
    scaled: bool,
    data: &DataArgs,
    output: &OutputArgs,
) -> Result<()> {
    let (y, d) = load_problem(data)?;
    let selector = FactorSelector::parse(factor)?;
    match (stat, boot, selector) {
        (Some(stat), Some(boot), FactorSelector::Factor(f)) => {
            // single (factor, statistic, bootstrap) cell
            let scale = scaled.then(|| ScaleFunction::reciprocal_shift(&y.grid)).transpose()?;
            let hyp = build_contrast(FactorSelector::Factor(f), y.grid.len())?;
            let (y, hyp) = match &scale {
                Some(h) => (scale_dataset(&y, h)?, scale_hypothesis(&hyp, h)?),
                None => (y, hyp),
            };
            let kind: StatisticKind = stat.into();
            let bk: BootstrapKind = boot.into();
            let r = bootstrap_test(&y, &d, &hyp, kind, bk, m, factor_seed(seed, f - 1))?;
            log::info!(
                "factor {}, {}^{}: observed {:.6}, M = {}",
                FACTOR_NAMES[f - 1],
                kind.label(),
                bk.label(),
                r.observed,
                m
            );
            match output.format {
                FormatArg::Csv => println!(
                    "factor,stat,boot,observed,p_value\n{},{},{},{:.6},{:.3}",
                    FACTOR_NAMES[f - 1],
                    kind.label(),
                    bk.label(),
                    r.observed,
                    r.p_value
                ),
                FormatArg::Text => println!("p = {:.3}", r.p_value),
            }
            Ok(())
        }
        (None, None, selector) => {
            let rows = run_pvalue_battery(&y, &d, selector, m, seed, scaled)?;
            emit("pvalues", output, |format| pvalue_table(&rows, format))
        }
        _ => Err(Error::InvalidInput(
            "--stat and --boot go together, and require a single --factor".into(),
        )),
    }
}

fn rho_of(case: &NoiseCase) -> Option<f64> {
    match case {
        NoiseCase::Case1 { rho } | NoiseCase::Case2 { rho } => Some(*rho),
        NoiseCase::Case3 => None,
    }
}

fn report_rows(reports: &[(Option<f64>, SizePowerReport)]) -> Vec<RateRow> {
    reports
        .iter()
        .map(|(rho, r)| RateRow {
            rho: *rho,
            delta: r.delta,
            rates: r.rates,
        })
        .collect()
}

fn cmd_simulate(scenario_file: &Path, data: &DataArgs, output: &OutputArgs) -> Result<()> {
    #[derive(serde::Deserialize)]
    #[serde(untagged)]
    enum ScenarioFile {
        One(Box<ScenarioConfig>),
        Many(Vec<ScenarioConfig>),
    }
    let text = std::fs::read_to_string(scenario_file)?;
    let parsed: ScenarioFile = serde_json::from_str(&text)
        .map_err(|e| Error::Format(format!("{}: {e}", scenario_file.display())))?;
    let configs = match parsed {
        ScenarioFile::One(c) => vec![*c],
        ScenarioFile::Many(v) => v,
    };
    if configs.is_empty() {
        return Err(Error::InvalidInput("scenario file contains no scenarios".into()));
    }
    for cfg in &configs {
        cfg.validate()?;
    }
    let (y, d) = load_problem(data)?;
    let beta_ref = estimate_beta(&y, &d)?;
    let hyp = build_contrast(FactorSelector::All, y.grid.len())?;
    let mut reports = Vec::new();
    for cfg in &configs {
        let report = run_scenario(cfg, &d, &hyp, &beta_ref)?;
        log::info!(
            "{}: {} sims, seed {} -> done in {:.1}s",
            report.label,
            report.n_sims,
            cfg.seed,
            report.wall_secs
        );
        reports.push((rho_of(&cfg.case), report));
    }
    let rows = report_rows(&reports);
    emit("size_power", output, |format| size_power_table(&rows, format))
}

/// `(rho, deltas)` rows of the Case 1/2 reference tables.
const CASE12_GRID: [(f64, [f64; 6]); 5] = [
    (0.1, [0.0, 0.02, 0.04, 0.06, 0.08, 0.10]),
    (0.3, [0.0, 0.04, 0.06, 0.08, 0.10, 0.12]),
    (0.5, [0.0, 0.05, 0.10, 0.15, 0.20, 0.25]),
    (0.7, [0.0, 0.10, 0.15, 0.20, 0.25, 0.30]),
    (0.9, [0.0, 0.20, 0.25, 0.30, 0.35, 0.40]),
];
/// Delta rows of the Case 3 reference tables.
const CASE3_DELTAS: [f64; 6] = [0.0, 0.02, 0.04, 0.06, 0.08, 0.10];

/// All scenario configs of one reference table.
fn table_scenarios(index: u8, n_sims: usize, m_boot: usize, seed: u64) -> Result<Vec<ScenarioConfig>> {
    let (case_no, apply_scaling) = match index {
        1..=3 => (index, false),
        4..=6 => (index - 3, true),
        _ => {
            return Err(Error::InvalidInput(format!(
                "table index must be 1..=6, got {index}"
            )))
        }
    };
    let base = |case: NoiseCase, delta: f64| ScenarioConfig {
        case,
        delta,
        n_sims,
        m_boot,
        alpha: 0.05,
        apply_scaling,
        grid_size: 43,
        seed,
        m0: icfrm::sim::DEFAULT_M0,
    };
    let mut configs = Vec::new();
    match case_no {
        1 | 2 => {
            for (rho, deltas) in CASE12_GRID {
                let case = if case_no == 1 {
                    NoiseCase::Case1 { rho }
                } else {
                    NoiseCase::Case2 { rho }
                };
                configs.extend(deltas.iter().map(|&delta| base(case, delta)));
            }
        }
        _ => configs.extend(CASE3_DELTAS.iter().map(|&delta| base(NoiseCase::Case3, delta))),
    }
    Ok(configs)
}

#[allow(clippy::too_many_arguments)]
fn cmd_reproduce_table(
    index: u8,
    n_sims: usize,
    m_boot: usize,
    full_scale: bool,
    seed: u64,
    data: &DataArgs,
    output: &OutputArgs,
) -> Result<()> {
    let (n_sims, m_boot) = if full_scale { (1000, 1000) } else { (n_sims, m_boot) };
    let configs = table_scenarios(index, n_sims, m_boot, seed)?;
    let (y, d) = load_problem(data)?;
    let beta_ref = estimate_beta(&y, &d)?;
    let hyp = build_contrast(FactorSelector::All, y.grid.len())?;
    let mut reports = Vec::new();
    for cfg in &configs {
        let report = run_scenario(cfg, &d, &hyp, &beta_ref)?;
        log::info!("{} -> {:.1}s", report.label, report.wall_secs);
        reports.push((rho_of(&cfg.case), report));
    }
    let rows = report_rows(&reports);
    emit(&format!("table_s{index}"), output, |format| {
        size_power_table(&rows, format)
    })
}

#[allow(clippy::too_many_arguments)]
fn cmd_reproduce_real_data(
    scaled: bool,
    m: usize,
    seed: u64,
    sim_factor: Option<&str>,
    n_sims: usize,
    m_boot: usize,
    data: &DataArgs,
    output: &OutputArgs,
) -> Result<()> {
    let (y, d) = load_problem(data)?;
    let rows = run_pvalue_battery(&y, &d, FactorSelector::All, m, seed, scaled)?;
    emit("realdata_pvalues", output, |format| pvalue_table(&rows, format))?;
    if let Some(factor) = sim_factor {
        let f = match FactorSelector::parse(factor)? {
            FactorSelector::Factor(f) => f,
            FactorSelector::All => {
                return Err(Error::InvalidInput(
                    "--sim-factor takes a single factor (A-G)".into(),
                ))
            }
        };
        let sigma = sample_covariance(&y);
        let beta = estimate_beta(&y, &d)?;
        let hyp = build_contrast(FactorSelector::Factor(f), y.grid.len())?;
        let mut reports = Vec::new();
        for mean in [RealDataMean::Null, RealDataMean::Fitted(beta)] {
            let report =
                realdata_simulation(&sigma, &d, &hyp, &mean, n_sims, m_boot, 0.05, seed)?;
            log::info!("{} -> {:.1}s", report.label, report.wall_secs);
            reports.push((None, report));
        }
        let rows = report_rows(&reports);
        emit("realdata_sim", output, |format| size_power_table(&rows, format))?;
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidInput(_) | Error::DimensionMismatch(_) => 2,
        Error::Io(_) => 3,
        Error::Format(_) | Error::Parse { .. } => 4,
        Error::NotEstimable | Error::DegreesOfFreedom { .. } => 5,
        _ => 6,
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Fit { data, output } => cmd_fit(data, output),
        Command::Test {
            factor,
            stat,
            boot,
            m,
            seed,
            scaled,
            data,
            output,
        } => cmd_test(factor, *stat, *boot, *m, *seed, *scaled, data, output),
        Command::Simulate {
            scenario_file,
            data,
            output,
        } => cmd_simulate(scenario_file, data, output),
        Command::ReproduceTableS {
            index,
            n_sims,
            m_boot,
            full_scale,
            seed,
            data,
            output,
        } => cmd_reproduce_table(*index, *n_sims, *m_boot, *full_scale, *seed, data, output),
        Command::ReproduceRealData {
            scaled,
            m,
            seed,
            sim_factor,
            n_sims,
            m_boot,
            data,
            output,
        } => cmd_reproduce_real_data(
            *scaled,
            *m,
            *seed,
            sim_factor.as_deref(),
            *n_sims,
            *m_boot,
            data,
            output,
        ),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::new()
        .parse_filters(&cli.log_level)
        .target(env_logger::Target::Stderr)
        .init();
    if let Some(threads) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global() {
            log::warn!("thread pool already initialized: {e}");
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

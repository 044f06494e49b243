use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use depboot::aatest::{aatest, comparisons_csv};
use depboot::analyze::{analyze, AnalysisConfig};
use depboot::input::Format;
use depboot::inspect::{duplication, duplication_by_day, oracle, OracleParams};
use depboot::report::{to_json, write_output, Report};
use depboot::sim::{read_config, simulate, sweep, SimulateConfig, SweepConfig};
use depboot::{AppError, AppResult};
use depboot_core::{BootstrapMode, WeightDistribution};

#[derive(Parser)]
#[command(
    name = "depboot",
    version,
    about = "Bootstrap inference and A/A evaluation for user–item experiments"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Bootstrap confidence intervals for a labeled dataset.
    Analyze(AnalyzeArgs),
    /// Coverage of null comparisons between even and odd user segments.
    Aatest(AATestArgs),
    /// Generate a synthetic dataset and manifest from a config.
    Simulate(SimulateArgs),
    /// Coverage over a grid of simulation cells, resumable per cell.
    Sweep(SweepArgs),
    /// Closed-form variance of the difference in means for a dataset.
    Oracle(OracleArgs),
    /// Unit and pair counts with duplication coefficients.
    Duplication(DuplicationArgs),
}

fn parse_mode(s: &str) -> Result<BootstrapMode, String> {
    s.parse().map_err(|e: depboot_core::Error| e.to_string())
}

fn parse_dist(s: &str) -> Result<WeightDistribution, String> {
    s.parse().map_err(|e: depboot_core::Error| e.to_string())
}

#[derive(Args)]
struct BootstrapArgs {
    /// Bootstrap mode; repeat for several. Defaults to all four.
    #[arg(long = "mode", value_parser = parse_mode)]
    modes: Vec<BootstrapMode>,
    #[arg(short = 'R', long, default_value_t = depboot_core::bootstrap::DEFAULT_REPLICATES)]
    replicates: usize,
    #[arg(long, default_value_t = depboot_core::bootstrap::DEFAULT_ALPHA)]
    alpha: f64,
    #[arg(long, value_parser = parse_dist, default_value = "poisson")]
    dist: WeightDistribution,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Input format; inferred from the extension when omitted.
    #[arg(long)]
    format: Option<Format>,
    /// Report path; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AnalyzeArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[command(flatten)]
    boot: BootstrapArgs,
    /// Salt of the unit weight streams.
    #[arg(long, default_value_t = 0)]
    salt: u64,
}

#[derive(Args)]
struct AATestArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    #[command(flatten)]
    boot: BootstrapArgs,
    /// Number of segmentation salts; salts 0..n are used.
    #[arg(long, default_value_t = depboot_core::evaluation::DEFAULT_SALTS)]
    salts: u64,
    #[arg(long, default_value_t = depboot_core::hashing::DEFAULT_SEGMENTS)]
    segments: u32,
    /// Remove item observations on one side of each comparison with this
    /// probability.
    #[arg(long)]
    imbalance: Option<f64>,
    /// Per-comparison CSV, one row per comparison and mode.
    #[arg(long)]
    comparisons: Option<PathBuf>,
}

#[derive(Args)]
struct SimulateArgs {
    /// Flat TOML config; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output directory for the dataset and manifest.
    #[arg(long)]
    out: PathBuf,
    /// Overrides the layout seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Results CSV.
    #[arg(long)]
    out: PathBuf,
    /// Per-cell checkpoints; defaults to `<out>.cells`.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Worker threads; defaults to the available parallelism.
    #[arg(long)]
    jobs: Option<usize>,
    /// Overrides the simulation seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct OracleArgs {
    input: PathBuf,
    #[arg(long)]
    sigma_alpha: f64,
    #[arg(long)]
    sigma_beta: f64,
    #[arg(long)]
    sigma_eps: f64,
    #[arg(long, default_value_t = 1.0)]
    rho_beta: f64,
    #[arg(long)]
    format: Option<Format>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct DuplicationArgs {
    #[arg(required = true)]
    inputs: Vec<PathBuf>,
    /// Cumulative stats per distinct `day`, as a JSON array.
    #[arg(long)]
    by_day: bool,
    #[arg(long)]
    format: Option<Format>,
    #[arg(long)]
    out: Option<PathBuf>,
}

fn analysis_config(inputs: Vec<PathBuf>, boot: BootstrapArgs) -> AnalysisConfig {
    AnalysisConfig {
        modes: if boot.modes.is_empty() {
            BootstrapMode::ALL.to_vec()
        } else {
            boot.modes
        },
        replicates: boot.replicates,
        alpha: boot.alpha,
        dist: boot.dist,
        seed: boot.seed,
        inputs,
        format: boot.format,
        output: boot.out,
        ..AnalysisConfig::default()
    }
}

fn run(cli: Cli) -> AppResult<()> {
    match cli.command {
        Command::Analyze(a) => {
            let cfg = AnalysisConfig {
                salt: a.salt,
                ..analysis_config(a.inputs, a.boot)
            };
            let results = analyze(&cfg)?;
            let out = cfg.output.clone();
            write_output(out.as_deref(), &to_json(&Report::new("analyze", cfg, results))?)
        }
        Command::Aatest(a) => {
            let cfg = AnalysisConfig {
                salts: a.salts,
                segments: a.segments,
                imbalance: a.imbalance,
                ..analysis_config(a.inputs, a.boot)
            };
            let output = aatest(&cfg)?;
            if let Some(path) = &a.comparisons {
                write_output(Some(path), &comparisons_csv(&output.per_mode)?)?;
            }
            let out = cfg.output.clone();
            write_output(out.as_deref(), &to_json(&Report::new("aatest", cfg, output.results))?)
        }
        Command::Simulate(a) => {
            let mut cfg: SimulateConfig = read_config(a.config.as_deref())?;
            if let Some(seed) = a.seed {
                cfg.layout.seed = seed;
            }
            let report = simulate(&cfg, &a.out)?;
            eprintln!(
                "wrote {} rows to {} (mean outcome {:.5})",
                report.results.rows,
                a.out.display(),
                report.results.mean_outcome
            );
            Ok(())
        }
        Command::Sweep(a) => {
            let mut cfg: SweepConfig = read_config(a.config.as_deref())?;
            if let Some(seed) = a.seed {
                cfg.sim_seed = seed;
            }
            let dir = a.checkpoint_dir.unwrap_or_else(|| {
                let mut p = a.out.clone().into_os_string();
                p.push(".cells");
                PathBuf::from(p)
            });
            let jobs = a
                .jobs
                .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let (csv, summary) = sweep(&cfg, &dir, jobs)?;
            write_output(Some(&a.out), &csv)?;
            eprintln!("{}", serde_json::to_string(&summary).unwrap_or_default());
            Ok(())
        }
        Command::Oracle(a) => {
            let params = OracleParams {
                sigma_alpha: a.sigma_alpha,
                sigma_beta: a.sigma_beta,
                sigma_eps: a.sigma_eps,
                rho_beta: a.rho_beta,
            };
            let (results, ingest) = oracle(&a.input, a.format, params)?;
            let config = serde_json::json!({ "input": a.input, "format": a.format, "params": params });
            let body = serde_json::json!({ "ingest": ingest, "oracle": results });
            write_output(a.out.as_deref(), &to_json(&Report::new("oracle", config, body))?)
        }
        Command::Duplication(a) => {
            let text = if a.by_day {
                to_json(&duplication_by_day(&a.inputs, a.format)?)?
            } else {
                to_json(&duplication(&a.inputs, a.format)?)?
            };
            write_output(a.out.as_deref(), &text)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 4 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => report_error(&e),
    }
}

fn report_error(e: &AppError) -> ExitCode {
    eprintln!("{}", e.to_json());
    ExitCode::from(e.exit_code() as u8)
}

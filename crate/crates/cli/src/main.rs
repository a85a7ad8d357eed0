use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use tfcca::cvr::{default_eta_grid, CvrConfig};
use tfcca::density::HistogramConfig;
use tfcca::fpca::{PipelineConfig, RankRule, TangentMode};
use tfcca::simgen::Regime;
use tfcca_cli::commands::{
    run_cca, run_cvr, simulate_pdf, simulate_shape, AnalysisOptions, CvrOptions, Pairing,
};
use tfcca_cli::input::IngestConfig;
use tfcca_cli::report::{write_direction_csvs, write_report, AnalysisReport};
use tfcca_cli::{CliError, CliResult};

/// Environment variable capping the worker thread count.
const THREADS_VAR: &str = "TFCCA_THREADS";

#[derive(Parser)]
#[command(name = "tfcca", version, about = "Canonical correlation analysis of paired densities and shapes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// CCA of two paired groups of densities.
    PdfCca {
        #[arg(long)]
        input_a: PathBuf,
        #[arg(long)]
        input_b: PathBuf,
        #[arg(long, value_enum, default_value = "separate")]
        tangent_mode: Mode,
        #[command(flatten)]
        common: Common,
    },
    /// CCA of two paired groups of closed curves.
    ShapeCca {
        #[arg(long)]
        input_a: PathBuf,
        #[arg(long)]
        input_b: PathBuf,
        #[arg(long, value_enum, default_value = "separate")]
        tangent_mode: Mode,
        #[command(flatten)]
        common: Common,
    },
    /// CCA of densities paired with curves (separate tangent spaces only).
    CrossCca {
        #[arg(long)]
        pdf_input: PathBuf,
        #[arg(long)]
        shape_input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Canonical variate regression with repeated random-split validation.
    Cvr {
        #[arg(long)]
        input_a: PathBuf,
        #[arg(long)]
        input_b: PathBuf,
        /// CSV with a header row and `id,value` rows.
        #[arg(long)]
        response: PathBuf,
        /// Number of canonical variates.
        #[arg(long, default_value_t = 1)]
        d: usize,
        /// Comma-separated trade-off values in [0, 1].
        #[arg(long, value_parser = parse_list, allow_hyphen_values = true)]
        eta_grid: Option<List>,
        /// Training fraction of each random split.
        #[arg(long, default_value_t = 0.8)]
        splits: f64,
        #[arg(long, default_value_t = 100)]
        repeats: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = CvrConfig::default().tol)]
        cvr_tol: f64,
        #[arg(long, default_value_t = CvrConfig::default().max_iter)]
        cvr_max_iter: usize,
        #[arg(long, value_enum, default_value = "separate")]
        tangent_mode: Mode,
        #[command(flatten)]
        common: Common,
    },
    /// Write simulated paired groups and a ground-truth sidecar.
    Simulate {
        #[arg(value_enum)]
        kind: SimKind,
        /// Density group pair: 1,2 or 1,3 or 2,3.
        #[arg(long, default_value = "1,2")]
        groups: String,
        /// Curve correlation regime.
        #[arg(long, value_enum, default_value = "high")]
        regime: RegimeArg,
        #[arg(long, default_value_t = 100)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1000)]
        grid_points: usize,
        #[arg(long, default_value_t = tfcca::shape::DEFAULT_CURVE_POINTS)]
        curve_points: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

#[derive(Args)]
struct Common {
    /// Fixed number of components per group.
    #[arg(long, conflicts_with = "explained")]
    rank: Option<usize>,
    /// Smallest rank reaching this explained-variance fraction.
    #[arg(long)]
    explained: Option<f64>,
    /// Comma-separated steps along each variate direction, in standard deviations.
    #[arg(long, value_parser = parse_list, allow_hyphen_values = true)]
    epsilons: Option<List>,
    #[arg(long, default_value_t = 0.0)]
    ridge: f64,
    #[arg(long, default_value_t = tfcca::sphere::KarcherConfig::default().tol)]
    karcher_tol: f64,
    #[arg(long, default_value_t = tfcca::sphere::KarcherConfig::default().max_iter)]
    karcher_max_iter: usize,
    #[arg(long, default_value_t = tfcca::sphere::KarcherConfig::default().step)]
    karcher_step: f64,
    /// Working grid for densities estimated from raw samples.
    #[arg(long, default_value_t = IngestConfig::default().grid_points)]
    grid_points: usize,
    #[arg(long, default_value_t = HistogramConfig::default().bins)]
    bins: usize,
    #[arg(long, default_value_t = HistogramConfig::default().floor)]
    floor: f64,
    /// Arc-length resampling size for curves.
    #[arg(long, default_value_t = IngestConfig::default().curve_points)]
    curve_points: usize,
    /// Dynamic-programming lattice size (defaults to the curve grid).
    #[arg(long)]
    dp_grid: Option<usize>,
    /// Number of cyclic starting points searched during registration.
    #[arg(long)]
    seeds: Option<usize>,
    #[arg(long, default_value_t = tfcca::shape::ShapeConfig::default().closure_tol)]
    closure_tol: f64,
    #[arg(long, default_value_t = tfcca::shape::ShapeConfig::default().mean_tol)]
    shape_mean_tol: f64,
    #[arg(long, default_value_t = tfcca::shape::ShapeConfig::default().mean_max_iter)]
    shape_mean_max_iter: usize,
    /// Record mean non-convergence as a warning instead of failing.
    #[arg(long)]
    allow_unconverged: bool,
    /// Also write one CSV table per variate direction next to the report.
    #[arg(long)]
    emit_csv: bool,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Separate,
    Pooled,
    Transport,
}

impl From<Mode> for TangentMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Separate => TangentMode::Separate,
            Mode::Pooled => TangentMode::Pooled,
            Mode::Transport => TangentMode::Transport,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum SimKind {
    Pdf,
    Shape,
}

#[derive(Clone, Copy, ValueEnum)]
enum RegimeArg {
    High,
    Moderate,
    Weak,
}

/// Comma-separated numbers.
#[derive(Clone)]
struct List(Vec<f64>);

fn parse_list(s: &str) -> Result<List, String> {
    let v = s
        .split(',')
        .map(|t| t.trim().parse::<f64>().map_err(|_| format!("not a number: {t:?}")))
        .collect::<Result<Vec<_>, _>>()?;
    if v.iter().any(|x| !x.is_finite()) {
        return Err("values must be finite".into());
    }
    Ok(List(v))
}

fn options(common: &Common, mode: TangentMode) -> CliResult<AnalysisOptions> {
    let rank = match (common.rank, common.explained) {
        (Some(r), _) => Some(RankRule::Fixed(r)),
        (None, Some(f)) => Some(RankRule::Explained(f)),
        (None, None) => None,
    };
    let mut pipeline = PipelineConfig::new(RankRule::PDF_DEFAULT, RankRule::PDF_DEFAULT);
    pipeline.karcher.tol = common.karcher_tol;
    pipeline.karcher.max_iter = common.karcher_max_iter;
    pipeline.karcher.step = common.karcher_step;
    pipeline.shape.dp_grid = common.dp_grid;
    pipeline.shape.seeds = common.seeds;
    pipeline.shape.closure_tol = common.closure_tol;
    pipeline.shape.mean_tol = common.shape_mean_tol;
    pipeline.shape.mean_max_iter = common.shape_mean_max_iter;
    if !(common.ridge >= 0.0) {
        return Err(CliError::input("--ridge must be nonnegative"));
    }
    Ok(AnalysisOptions {
        rank,
        mode,
        epsilons: common
            .epsilons
            .clone()
            .map(|l| l.0)
            .unwrap_or_else(|| tfcca_cli::commands::DEFAULT_EPSILONS.to_vec()),
        ridge: common.ridge,
        pipeline,
        ingest: IngestConfig {
            grid_points: common.grid_points,
            histogram: HistogramConfig {
                bins: common.bins,
                floor: common.floor,
            },
            curve_points: common.curve_points,
        },
        allow_unconverged: common.allow_unconverged,
    })
}

fn emit(report: &AnalysisReport, common: &Common) -> CliResult<()> {
    write_report(report, &common.out)?;
    if common.emit_csv {
        write_direction_csvs(report, &common.out)?;
    }
    Ok(())
}

fn parse_groups(s: &str) -> CliResult<(u8, u8)> {
    let parts: Vec<&str> = s.split(',').map(str::trim).collect();
    match parts.as_slice() {
        [a, b] => match (a.parse(), b.parse()) {
            (Ok(a), Ok(b)) => Ok((a, b)),
            _ => Err(CliError::input(format!("--groups expects two integers, got {s:?}"))),
        },
        _ => Err(CliError::input(format!("--groups expects two integers, got {s:?}"))),
    }
}

fn cca_command(name: &str, a: &Path, b: &Path, pairing: Pairing, mode: Mode, common: &Common) -> CliResult<()> {
    let opts = options(common, mode.into())?;
    emit(&run_cca(name, a, b, pairing, &opts)?, common)
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::PdfCca {
            input_a,
            input_b,
            tangent_mode,
            common,
        } => cca_command("pdf-cca", &input_a, &input_b, Pairing::PdfPdf, tangent_mode, &common),
        Command::ShapeCca {
            input_a,
            input_b,
            tangent_mode,
            common,
        } => cca_command("shape-cca", &input_a, &input_b, Pairing::ShapeShape, tangent_mode, &common),
        Command::CrossCca {
            pdf_input,
            shape_input,
            common,
        } => cca_command("cross-cca", &pdf_input, &shape_input, Pairing::PdfShape, Mode::Separate, &common),
        Command::Cvr {
            input_a,
            input_b,
            response,
            d,
            eta_grid,
            splits,
            repeats,
            seed,
            cvr_tol,
            cvr_max_iter,
            tangent_mode,
            common,
        } => {
            let opts = options(&common, tangent_mode.into())?;
            let cvr = CvrOptions {
                d,
                eta_grid: eta_grid.map(|l| l.0).unwrap_or_else(default_eta_grid),
                train_fraction: splits,
                repeats,
                seed,
                config: CvrConfig {
                    tol: cvr_tol,
                    max_iter: cvr_max_iter,
                },
            };
            emit(&run_cvr(&input_a, &input_b, &response, &opts, &cvr)?, &common)
        }
        Command::Simulate {
            kind,
            groups,
            regime,
            n,
            seed,
            grid_points,
            curve_points,
            out_dir,
        } => {
            match kind {
                SimKind::Pdf => simulate_pdf(parse_groups(&groups)?, n, grid_points, seed, &out_dir)?,
                SimKind::Shape => {
                    let regime = match regime {
                        RegimeArg::High => Regime::High,
                        RegimeArg::Moderate => Regime::Moderate,
                        RegimeArg::Weak => Regime::Weak,
                    };
                    simulate_shape(regime, n, curve_points, seed, &out_dir)?
                }
            };
            Ok(())
        }
    }
}

fn configure_threads() -> CliResult<()> {
    let Ok(v) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = v
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| CliError::input(format!("{THREADS_VAR} must be a positive integer, got {v:?}")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::input(format!("thread pool: {e}")))
}

fn fail(e: CliError) -> ExitCode {
    eprintln!("{}", e.diagnostic());
    ExitCode::from(e.exit_code() as u8)
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string().lines().next().unwrap_or("invalid arguments").to_string();
            return fail(CliError::input(first.trim_start_matches("error: ").to_string()));
        }
    };
    if let Err(e) = configure_threads() {
        return fail(e);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(e),
    }
}

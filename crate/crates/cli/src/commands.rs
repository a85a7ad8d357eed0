//! Command implementations, independent of argument parsing.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use tfcca::cca::{cca, pearson};
use tfcca::cvr::{cvr_cross_validate, cvr_fit, CvrConfig};
use tfcca::density::{pdf_variate_direction, srt_inverse, Pdf, Srt};
use tfcca::fpca::{
    tangent_mode_pipeline, GroupData, GroupFit, ObjectKind, PipelineConfig, PipelineOutput, RankRule, TangentMode,
};
use tfcca::numerics::Grid;
use tfcca::shape::{shape_variate_direction, srvf, srvf_inverse, Curve, Srvf};
use tfcca::simgen::{
    gen_curve_group, recovery_protocol_pdf, CurveSimSpec, PdfProtocol, Regime,
};

use crate::error::{CliError, CliResult};
use crate::input::{align_response, pair, read_dataset, read_response, Dataset, IngestConfig, Objects};
use crate::report::{
    write_atomic, AnalysisReport, CvrFit, CvrSection, FunctionTable, GroupSummary, Metadata, VariateDirection,
    SCHEMA_VERSION, TOOL_VERSION,
};

/// Default visualization steps.
pub const DEFAULT_EPSILONS: [f64; 7] = [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0];

/// Settings shared by the two-group commands.
#[derive(Debug, Clone)]
pub struct AnalysisOptions {
    /// `None` picks the per-kind default for each group.
    pub rank: Option<RankRule>,
    pub mode: TangentMode,
    pub epsilons: Vec<f64>,
    pub ridge: f64,
    pub pipeline: PipelineConfig,
    pub ingest: IngestConfig,
    /// Report mean non-convergence as a warning instead of failing.
    pub allow_unconverged: bool,
}

impl Default for AnalysisOptions {
    fn default() -> Self {
        Self {
            rank: None,
            mode: TangentMode::Separate,
            epsilons: DEFAULT_EPSILONS.to_vec(),
            ridge: 0.0,
            pipeline: PipelineConfig::new(RankRule::PDF_DEFAULT, RankRule::PDF_DEFAULT),
            ingest: IngestConfig::default(),
            allow_unconverged: false,
        }
    }
}

/// Which object kinds a command accepts for each input.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pairing {
    PdfPdf,
    ShapeShape,
    PdfShape,
    Any,
}

fn default_rank(kind: ObjectKind) -> RankRule {
    match kind {
        ObjectKind::Pdf => RankRule::PDF_DEFAULT,
        ObjectKind::Shape => RankRule::SHAPE_DEFAULT,
    }
}

fn kind_of(d: &Dataset) -> ObjectKind {
    match d.objects {
        Objects::Pdfs(_) => ObjectKind::Pdf,
        Objects::Curves(_) => ObjectKind::Shape,
    }
}

fn check_pairing(pairing: Pairing, a: &Dataset, b: &Dataset) -> CliResult<()> {
    let (ka, kb) = (kind_of(a), kind_of(b));
    let ok = match pairing {
        Pairing::PdfPdf => ka == ObjectKind::Pdf && kb == ObjectKind::Pdf,
        Pairing::ShapeShape => ka == ObjectKind::Shape && kb == ObjectKind::Shape,
        Pairing::PdfShape => ka == ObjectKind::Pdf && kb == ObjectKind::Shape,
        Pairing::Any => true,
    };
    if ok {
        Ok(())
    } else {
        Err(CliError::input(format!(
            "this command does not accept {} input paired with {} input",
            a.kind_name(),
            b.kind_name()
        )))
    }
}

enum Prepared {
    Pdfs(Vec<Pdf>),
    Shapes(Vec<Srvf>),
}

impl Prepared {
    fn data(&self) -> GroupData<'_> {
        match self {
            Prepared::Pdfs(p) => GroupData::Pdfs(p),
            Prepared::Shapes(s) => GroupData::Shapes(s),
        }
    }
}

fn prepare(d: &Dataset, cfg: &PipelineConfig) -> CliResult<Prepared> {
    Ok(match &d.objects {
        Objects::Pdfs(p) => Prepared::Pdfs(p.clone()),
        Objects::Curves(c) => Prepared::Shapes(
            c.iter()
                .zip(&d.ids)
                .map(|(c, id)| srvf(c, &cfg.shape).map_err(|e| annotate(e, id)))
                .collect::<CliResult<_>>()?,
        ),
    })
}

fn annotate(e: tfcca::Error, id: &str) -> CliError {
    match CliError::from(e) {
        CliError::Input(m) => CliError::Input(format!("subject {id:?}: {m}")),
        CliError::Numerical(m) => CliError::Numerical(format!("subject {id:?}: {m}")),
    }
}

/// Paired inputs run through the tangent pipeline.
struct Fitted {
    a: Dataset,
    b: Dataset,
    output: PipelineOutput,
    pipeline: PipelineConfig,
    warnings: Vec<String>,
}

fn load_and_fit(input_a: &Path, input_b: &Path, pairing: Pairing, opts: &AnalysisOptions) -> CliResult<Fitted> {
    let a = read_dataset(input_a, &opts.ingest)?;
    let b = read_dataset(input_b, &opts.ingest)?;
    check_pairing(pairing, &a, &b)?;
    let (a, b) = pair(a, b)?;
    if opts.mode != TangentMode::Separate && kind_of(&a) != kind_of(&b) {
        return Err(CliError::input(format!(
            "tangent mode {} needs both inputs of the same kind",
            opts.mode.name()
        )));
    }
    let mut pipeline = opts.pipeline;
    pipeline.rank_a = opts.rank.unwrap_or(default_rank(kind_of(&a)));
    pipeline.rank_b = opts.rank.unwrap_or(default_rank(kind_of(&b)));
    let pa = prepare(&a, &pipeline)?;
    let pb = prepare(&b, &pipeline)?;
    let output = tangent_mode_pipeline(pa.data(), pb.data(), opts.mode, &pipeline)?;
    let mut warnings: Vec<String> = a.warnings.iter().chain(&b.warnings).cloned().collect();
    for (label, g) in [("a", &output.a), ("b", &output.b)] {
        if !g.mean_converged {
            let msg = format!("group {label}: mean iteration did not reach its tolerance");
            if opts.allow_unconverged {
                warnings.push(msg);
            } else {
                return Err(CliError::Numerical(msg));
            }
        }
    }
    Ok(Fitted {
        a,
        b,
        output,
        pipeline,
        warnings,
    })
}

fn grid_values(grid: Grid) -> Vec<f64> {
    grid.points()
}

fn density_table(p: &Pdf) -> FunctionTable {
    FunctionTable::Density {
        grid: grid_values(p.grid()),
        density: p.function().values().to_vec(),
    }
}

fn curve_table(c: &Curve) -> FunctionTable {
    let pts = c.points();
    FunctionTable::Curve {
        grid: grid_values(c.grid()),
        x: pts.iter().map(|p| p[0]).collect(),
        y: pts.iter().map(|p| p[1]).collect(),
    }
}

fn mean_table(g: &GroupFit, cfg: &PipelineConfig) -> CliResult<FunctionTable> {
    Ok(match g.kind {
        ObjectKind::Pdf => density_table(&srt_inverse(&Srt::from_sphere_point((*g.base).clone())?)),
        ObjectKind::Shape => {
            let m = g.shape_mean.as_ref().expect("shape groups carry a mean shape");
            curve_table(&srvf_inverse(m.point(), &cfg.shape)?)
        }
    })
}

fn sample_sd(v: &[f64]) -> f64 {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}

/// Weights rescaled so that `epsilon = 1` moves one standard deviation of
/// the group's data along the direction.
fn sd_scaled(weights: &[f64], variate: &[f64]) -> CliResult<Vec<f64>> {
    let norm2: f64 = weights.iter().map(|w| w * w).sum();
    if !(norm2 > 0.0) {
        return Err(CliError::Numerical("canonical weight vector is zero".into()));
    }
    let s = sample_sd(variate) / norm2;
    Ok(weights.iter().map(|w| w * s).collect())
}

fn directions(
    label: &str,
    g: &GroupFit,
    weights: &DMatrix<f64>,
    variates: &DMatrix<f64>,
    epsilons: &[f64],
    cfg: &PipelineConfig,
) -> CliResult<Vec<VariateDirection>> {
    let mut out = Vec::new();
    for j in 0..weights.ncols() {
        let w: Vec<f64> = weights.column(j).iter().copied().collect();
        let z: Vec<f64> = variates.column(j).iter().copied().collect();
        let scaled = sd_scaled(&w, &z)?;
        let tables: Vec<FunctionTable> = match g.kind {
            ObjectKind::Pdf => {
                let mean = Srt::from_sphere_point((*g.base).clone())?;
                pdf_variate_direction(&mean, &g.basis, &scaled, epsilons)?
                    .iter()
                    .map(density_table)
                    .collect()
            }
            ObjectKind::Shape => {
                let mean = g.shape_mean.as_ref().expect("shape groups carry a mean shape");
                shape_variate_direction(mean, &g.basis, &scaled, epsilons, &cfg.shape)?
                    .iter()
                    .map(curve_table)
                    .collect()
            }
        };
        for (&epsilon, table) in epsilons.iter().zip(tables) {
            out.push(VariateDirection {
                group: label.into(),
                variate: j + 1,
                epsilon,
                table,
            });
        }
    }
    Ok(out)
}

fn columns(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.column_iter().map(|c| c.iter().copied().collect()).collect()
}

fn summary(label: &str, source: &Path, g: &GroupFit, weights: &DMatrix<f64>, cfg: &PipelineConfig) -> CliResult<GroupSummary> {
    Ok(GroupSummary {
        label: label.into(),
        kind: g.kind,
        source: source.display().to_string(),
        rank: g.basis.rank(),
        explained_variance: g.basis.explained_fraction(),
        eigenvalues: g.basis.eigenvalues().to_vec(),
        weights: columns(weights),
        mean: mean_table(g, cfg)?,
        mean_converged: g.mean_converged,
    })
}

struct Canonical<'a> {
    correlations: Vec<f64>,
    weights: [&'a DMatrix<f64>; 2],
    variates: [&'a DMatrix<f64>; 2],
}

#[allow(clippy::too_many_arguments)]
fn assemble(
    command: &str,
    fitted: &Fitted,
    sources: [&Path; 2],
    canon: Canonical<'_>,
    opts: &AnalysisOptions,
    seed: Option<u64>,
    cvr: Option<(CvrSection, CvrConfig)>,
) -> CliResult<AnalysisReport> {
    let out = &fitted.output;
    let cfg = &fitted.pipeline;
    let mut dirs = directions("a", &out.a, canon.weights[0], canon.variates[0], &opts.epsilons, cfg)?;
    dirs.extend(directions("b", &out.b, canon.weights[1], canon.variates[1], &opts.epsilons, cfg)?);
    let (cvr, cvr_config) = match cvr {
        Some((s, c)) => (Some(s), Some(c)),
        None => (None, None),
    };
    Ok(AnalysisReport {
        schema: SCHEMA_VERSION,
        command: command.into(),
        mode: out.mode,
        subjects: fitted.a.ids.clone(),
        correlations: canon.correlations,
        groups: vec![
            summary("a", sources[0], &out.a, canon.weights[0], cfg)?,
            summary("b", sources[1], &out.b, canon.weights[1], cfg)?,
        ],
        directions: dirs,
        cvr,
        metadata: Metadata {
            tool_version: TOOL_VERSION.into(),
            seed,
            epsilons: opts.epsilons.clone(),
            direction_scale: "sd".into(),
            pipeline: *cfg,
            ingest: opts.ingest,
            cca_ridge: opts.ridge,
            cvr: cvr_config,
            rescale_a: fitted.a.rescale,
            rescale_b: fitted.b.rescale,
            warnings: fitted.warnings.clone(),
        },
    })
}

/// Tangent-space CCA of two paired groups.
pub fn run_cca(command: &str, input_a: &Path, input_b: &Path, pairing: Pairing, opts: &AnalysisOptions) -> CliResult<AnalysisReport> {
    let fitted = load_and_fit(input_a, input_b, pairing, opts)?;
    let res = cca(
        fitted.output.a.coefficients.values(),
        fitted.output.b.coefficients.values(),
        opts.ridge,
    )?;
    let canon = Canonical {
        correlations: res.correlations.clone(),
        weights: [&res.weights_1, &res.weights_2],
        variates: [&res.variates_1, &res.variates_2],
    };
    assemble(command, &fitted, [input_a, input_b], canon, opts, None, None)
}

/// Cross-validation settings for [`run_cvr`].
#[derive(Debug, Clone)]
pub struct CvrOptions {
    pub d: usize,
    pub eta_grid: Vec<f64>,
    pub train_fraction: f64,
    pub repeats: usize,
    pub seed: u64,
    pub config: CvrConfig,
}

/// Canonical variate regression with repeated random-split validation,
/// followed by a fit on all subjects at the selected trade-off.
pub fn run_cvr(
    input_a: &Path,
    input_b: &Path,
    response: &Path,
    opts: &AnalysisOptions,
    cvr: &CvrOptions,
) -> CliResult<AnalysisReport> {
    let fitted = load_and_fit(input_a, input_b, Pairing::Any, opts)?;
    let (ids, values) = read_response(response)?;
    let y = align_response(&fitted.a.ids, &ids, &values)?;
    let c1 = fitted.output.a.coefficients.values();
    let c2 = fitted.output.b.coefficients.values();
    let cv = cvr_cross_validate(
        c1,
        c2,
        &y,
        cvr.d,
        &cvr.eta_grid,
        cvr.train_fraction,
        cvr.repeats,
        cvr.seed,
        &cvr.config,
    )?;
    let fit = cvr_fit(c1, c2, &y, cvr.d, cv.trace.chosen_eta, &cvr.config)?;
    if !fit.converged && !opts.allow_unconverged {
        return Err(CliError::Numerical(format!(
            "CVR fit at eta = {} did not converge in {} sweeps",
            fit.eta, cvr.config.max_iter
        )));
    }
    let (z1, z2) = fit.variates(c1, c2)?;
    let correlations = (0..cvr.d)
        .map(|j| {
            let a: Vec<f64> = z1.column(j).iter().copied().collect();
            let b: Vec<f64> = z2.column(j).iter().copied().collect();
            pearson(&a, &b)
        })
        .collect();
    let section = CvrSection {
        d: cvr.d,
        train_fraction: cvr.train_fraction,
        repeats: cvr.repeats,
        mse: cv.mse_summary(),
        c_index: cv.c_index_summary(),
        cross_validation: cv,
        fit: CvrFit {
            eta: fit.eta,
            alpha: fit.alpha,
            beta: fit.beta.clone(),
            converged: fit.converged,
            sweeps: fit.objective_trace.len() - 1,
            objective: *fit.objective_trace.last().expect("trace starts with the initial objective"),
        },
    };
    let canon = Canonical {
        correlations,
        weights: [&fit.weights_1, &fit.weights_2],
        variates: [&z1, &z2],
    };
    let mut fitted = fitted;
    if !fit.converged {
        fitted.warnings.push(format!("CVR fit at eta = {} did not converge", fit.eta));
    }
    assemble("cvr", &fitted, [input_a, input_b], canon, opts, Some(cvr.seed), Some((section, cvr.config)))
}

/// Writes `ids` and densities as a grid CSV.
pub fn pdf_csv(ids: &[String], pdfs: &[Pdf]) -> CliResult<String> {
    let grid = pdfs
        .first()
        .ok_or_else(|| CliError::input("no densities to write"))?
        .grid();
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["t".to_string()];
    header.extend(ids.iter().cloned());
    w.write_record(&header)?;
    for k in 0..grid.len() {
        let mut row = vec![grid.point(k).to_string()];
        row.extend(pdfs.iter().map(|p| p.function().values()[k].to_string()));
        w.write_record(&row)?;
    }
    let bytes = w.into_inner().map_err(|e| CliError::input(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

/// JSON lines of `{"id", "points"}`.
pub fn curve_jsonl(ids: &[String], curves: &[Curve]) -> CliResult<String> {
    let mut out = String::new();
    for (id, c) in ids.iter().zip(curves) {
        let line = serde_json::json!({ "id": id, "points": c.points() });
        out.push_str(&serde_json::to_string(&line)?);
        out.push('\n');
    }
    Ok(out)
}

fn subject_ids(n: usize) -> Vec<String> {
    (0..n).map(|i| format!("s{i:04}")).collect()
}

/// Simulated density groups, the protocol behind them, and the library's
/// own estimate on them.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct PdfTruth {
    pub tool_version: String,
    pub groups: (u8, u8),
    pub r: usize,
    pub n: usize,
    pub grid_points: usize,
    pub score_scale: f64,
    pub seed: u64,
    pub target: Vec<f64>,
    /// Sample canonical correlations of the latent scores.
    pub rho_truth: Vec<f64>,
    /// Estimate recovered from the written groups in separate mode.
    pub rho_hat: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct ShapeTruth {
    pub tool_version: String,
    pub regime: String,
    pub n: usize,
    pub curve_points: usize,
    pub seed: u64,
    pub amplitude: f64,
    pub kappa: f64,
    pub spread: [f64; 2],
    pub kappa_spread: [f64; 2],
    /// Sample correlation of the latent peak locations.
    pub rho_truth: f64,
    pub locations_a: Vec<f64>,
    pub locations_b: Vec<f64>,
}

/// Materializes the density recovery protocol for `groups` into
/// `group_a.csv`, `group_b.csv` and `truth.json` under `out_dir`.
pub fn simulate_pdf(groups: (u8, u8), n: usize, grid_points: usize, seed: u64, out_dir: &Path) -> CliResult<Vec<PathBuf>> {
    let r = match groups {
        (1, 2) => 2,
        (1, 3) => 3,
        (2, 3) => 4,
        _ => return Err(CliError::input(format!("no reference configuration for groups {},{}", groups.0, groups.1))),
    };
    let mut protocol = PdfProtocol::reference(r, seed)?;
    protocol.n = n;
    protocol.n_points = grid_points;
    let rec = recovery_protocol_pdf(&protocol, TangentMode::Separate)?;
    let ids = subject_ids(n);
    let truth = PdfTruth {
        tool_version: TOOL_VERSION.into(),
        groups,
        r,
        n,
        grid_points,
        score_scale: protocol.score_scale,
        seed,
        target: protocol.target.clone(),
        rho_truth: rec.rho_truth.clone(),
        rho_hat: rec.rho_hat.clone(),
    };
    std::fs::create_dir_all(out_dir)?;
    let files = [
        (out_dir.join("group_a.csv"), pdf_csv(&ids, &rec.synthesized_1)?),
        (out_dir.join("group_b.csv"), pdf_csv(&ids, &rec.synthesized_2)?),
        (out_dir.join("truth.json"), serde_json::to_string_pretty(&truth)?),
    ];
    write_all(files)
}

/// Materializes two correlated curve groups into `group_a.jsonl`,
/// `group_b.jsonl` and `truth.json` under `out_dir`.
pub fn simulate_shape(regime: Regime, n: usize, curve_points: usize, seed: u64, out_dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut spec = CurveSimSpec::new(regime, n, seed);
    spec.n_points = curve_points;
    let g = gen_curve_group(&spec)?;
    let ids = subject_ids(n);
    let truth = ShapeTruth {
        tool_version: TOOL_VERSION.into(),
        regime: regime.name().into(),
        n,
        curve_points,
        seed,
        amplitude: spec.amplitude,
        kappa: spec.kappa,
        spread: spec.spread,
        kappa_spread: spec.kappa_spread,
        rho_truth: pearson(&g.locations_1, &g.locations_2),
        locations_a: g.locations_1.clone(),
        locations_b: g.locations_2.clone(),
    };
    std::fs::create_dir_all(out_dir)?;
    let files = [
        (out_dir.join("group_a.jsonl"), curve_jsonl(&ids, &g.group_1)?),
        (out_dir.join("group_b.jsonl"), curve_jsonl(&ids, &g.group_2)?),
        (out_dir.join("truth.json"), serde_json::to_string_pretty(&truth)?),
    ];
    write_all(files)
}

fn write_all<const N: usize>(files: [(PathBuf, String); N]) -> CliResult<Vec<PathBuf>> {
    let mut written = Vec::with_capacity(N);
    for (path, text) in files {
        write_atomic(&path, text.as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sd_scaling_gives_unit_sd_steps() {
        let w = [3.0, 4.0];
        let z = [1.0, -1.0, 2.0, -2.0];
        let s = sd_scaled(&w, &z).unwrap();
        let norm = (s[0] * s[0] + s[1] * s[1]).sqrt();
        assert!((norm - sample_sd(&z) / 5.0).abs() < 1e-15);
        assert!((s[0] / s[1] - 0.75).abs() < 1e-15);
        assert!(sd_scaled(&[0.0, 0.0], &z).is_err());
    }

    #[test]
    fn unsupported_simulation_groups_are_input_errors() {
        let dir = tempfile::tempdir().unwrap();
        let e = simulate_pdf((1, 1), 10, 101, 0, dir.path()).unwrap_err();
        assert_eq!(e.exit_code(), 2);
    }
}

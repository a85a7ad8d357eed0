//! Machine-readable analysis reports.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use tfcca::cvr::{CvOutcome, CvrConfig};
use tfcca::density::Rescale;
use tfcca::fpca::{ObjectKind, PipelineConfig, TangentMode};

use crate::error::{CliError, CliResult};
use crate::input::IngestConfig;

pub const SCHEMA_VERSION: u32 = 1;
pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

/// A function sampled on a grid over `[0, 1]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum FunctionTable {
    Density { grid: Vec<f64>, density: Vec<f64> },
    Curve { grid: Vec<f64>, x: Vec<f64>, y: Vec<f64> },
}

impl FunctionTable {
    pub fn grid(&self) -> &[f64] {
        match self {
            FunctionTable::Density { grid, .. } | FunctionTable::Curve { grid, .. } => grid,
        }
    }

    fn validate(&self, what: &str) -> CliResult<()> {
        let n = self.grid().len();
        let cols: Vec<&Vec<f64>> = match self {
            FunctionTable::Density { density, .. } => vec![density],
            FunctionTable::Curve { x, y, .. } => vec![x, y],
        };
        if n < 2 || cols.iter().any(|c| c.len() != n) {
            return Err(invalid(format!("{what}: table columns do not match the grid")));
        }
        finite(what, self.grid())?;
        cols.iter().try_for_each(|c| finite(what, c))
    }

    /// CSV text with a header row.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        match self {
            FunctionTable::Density { grid, density } => {
                out.push_str("t,density\n");
                for (t, f) in grid.iter().zip(density) {
                    out.push_str(&format!("{t},{f}\n"));
                }
            }
            FunctionTable::Curve { grid, x, y } => {
                out.push_str("t,x,y\n");
                for ((t, a), b) in grid.iter().zip(x).zip(y) {
                    out.push_str(&format!("{t},{a},{b}\n"));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    /// `"a"` or `"b"`.
    pub label: String,
    pub kind: ObjectKind,
    pub source: String,
    pub rank: usize,
    pub explained_variance: f64,
    /// Eigenvalues of the kept components.
    pub eigenvalues: Vec<f64>,
    /// One weight vector (length `rank`) per canonical variate.
    pub weights: Vec<Vec<f64>>,
    pub mean: FunctionTable,
    pub mean_converged: bool,
}

/// The object reached by moving `epsilon` standard deviations from the mean
/// along one canonical variate direction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariateDirection {
    pub group: String,
    /// 1-based canonical variate index.
    pub variate: usize,
    pub epsilon: f64,
    pub table: FunctionTable,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvrFit {
    pub eta: f64,
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub converged: bool,
    pub sweeps: usize,
    pub objective: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvrSection {
    pub d: usize,
    pub train_fraction: f64,
    pub repeats: usize,
    pub mse: String,
    pub c_index: String,
    pub cross_validation: CvOutcome,
    /// Fit on all subjects at the selected trade-off.
    pub fit: CvrFit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metadata {
    pub tool_version: String,
    pub seed: Option<u64>,
    pub epsilons: Vec<f64>,
    /// How `epsilon` is scaled: one unit is one standard deviation of the
    /// group's tangent data along the direction.
    pub direction_scale: String,
    pub pipeline: PipelineConfig,
    pub ingest: IngestConfig,
    pub cca_ridge: f64,
    pub cvr: Option<CvrConfig>,
    pub rescale_a: Option<Rescale>,
    pub rescale_b: Option<Rescale>,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisReport {
    pub schema: u32,
    pub command: String,
    pub mode: TangentMode,
    pub subjects: Vec<String>,
    pub correlations: Vec<f64>,
    pub groups: Vec<GroupSummary>,
    pub directions: Vec<VariateDirection>,
    pub cvr: Option<CvrSection>,
    pub metadata: Metadata,
}

fn invalid(msg: String) -> CliError {
    CliError::Numerical(format!("report failed validation: {msg}"))
}

fn finite(what: &str, v: &[f64]) -> CliResult<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(invalid(format!("{what} contains a non-finite value")))
    }
}

impl AnalysisReport {
    /// Structural checks; a report that passes serializes without loss.
    pub fn validate(&self) -> CliResult<()> {
        if self.schema != SCHEMA_VERSION {
            return Err(invalid(format!("unknown schema {}", self.schema)));
        }
        let k = self.correlations.len();
        finite("correlations", &self.correlations)?;
        if self.correlations.iter().any(|&c| !(-1e-9..=1.0 + 1e-6).contains(&c)) {
            return Err(invalid("correlation outside [0, 1]".into()));
        }
        if self.groups.len() != 2 {
            return Err(invalid("expected two groups".into()));
        }
        for g in &self.groups {
            let what = format!("group {}", g.label);
            if g.weights.len() != k || g.weights.iter().any(|w| w.len() != g.rank) {
                return Err(invalid(format!("{what}: weights do not match rank and correlations")));
            }
            if g.eigenvalues.len() != g.rank {
                return Err(invalid(format!("{what}: eigenvalues do not match rank")));
            }
            finite(&what, &g.eigenvalues)?;
            finite(&what, &[g.explained_variance])?;
            g.weights.iter().try_for_each(|w| finite(&what, w))?;
            g.mean.validate(&what)?;
        }
        for d in &self.directions {
            if !self.groups.iter().any(|g| g.label == d.group) || d.variate == 0 || d.variate > k {
                return Err(invalid(format!("direction {}/{} has no matching variate", d.group, d.variate)));
            }
            finite("epsilon", &[d.epsilon])?;
            d.table.validate("direction")?;
        }
        if self.subjects.len() < 3 {
            return Err(invalid("fewer than 3 subjects".into()));
        }
        if let Some(c) = &self.cvr {
            finite("cvr fit", &c.fit.beta)?;
            finite("cvr fit", &[c.fit.alpha, c.fit.objective, c.fit.eta])?;
            let cv = &c.cross_validation;
            finite("cv trace", &cv.trace.mse)?;
            finite("cv summary", &[cv.mse_mean, cv.mse_sd, cv.c_index_mean, cv.c_index_sd])?;
            for r in &cv.repeats {
                finite("cv repeat", &r.mse)?;
                finite("cv repeat", &r.predictions)?;
                finite("cv repeat", &[r.best_mse, r.c_index])?;
            }
        }
        finite("metadata", &self.metadata.epsilons)
    }

    pub fn to_json(&self) -> CliResult<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> CliResult<Self> {
        Ok(serde_json::from_str(text)?)
    }
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> CliResult<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| CliError::from(e.error))?;
    Ok(())
}

/// Validates, checks the serialized form parses back to an equal report,
/// then writes it atomically.
pub fn write_report(report: &AnalysisReport, path: &Path) -> CliResult<()> {
    report.validate()?;
    let text = report.to_json()?;
    if AnalysisReport::from_json(&text)? != *report {
        return Err(invalid("serialized report does not parse back to the same value".into()));
    }
    write_atomic(path, text.as_bytes())
}

/// Writes one CSV per variate direction next to the report:
/// `<stem>_<group>_v<variate>_eps<epsilon>.csv`.
pub fn write_direction_csvs(report: &AnalysisReport, report_path: &Path) -> CliResult<Vec<std::path::PathBuf>> {
    let stem = report_path
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("report");
    let dir = report_path.parent().unwrap_or(Path::new(""));
    let mut written = Vec::new();
    for d in &report.directions {
        let path = dir.join(format!("{stem}_{}_v{}_eps{}.csv", d.group, d.variate, d.epsilon));
        write_atomic(&path, d.table.to_csv().as_bytes())?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use tfcca::fpca::RankRule;

    pub(crate) fn sample_report() -> AnalysisReport {
        let grid = vec![0.0, 0.5, 1.0];
        let table = FunctionTable::Density {
            grid: grid.clone(),
            density: vec![0.5, 1.0, 1.5],
        };
        let group = |label: &str| GroupSummary {
            label: label.into(),
            kind: ObjectKind::Pdf,
            source: "in.csv".into(),
            rank: 2,
            explained_variance: 0.9,
            eigenvalues: vec![0.3, 0.1],
            weights: vec![vec![1.0, -0.1]],
            mean: table.clone(),
            mean_converged: true,
        };
        AnalysisReport {
            schema: SCHEMA_VERSION,
            command: "pdf-cca".into(),
            mode: TangentMode::Separate,
            subjects: vec!["a".into(), "b".into(), "c".into()],
            correlations: vec![0.7],
            groups: vec![group("a"), group("b")],
            directions: vec![VariateDirection {
                group: "a".into(),
                variate: 1,
                epsilon: -1.0,
                table: FunctionTable::Curve {
                    grid: grid.clone(),
                    x: vec![0.1, 0.2, 0.1],
                    y: vec![0.0, 1.0 / 3.0, 0.0],
                },
            }],
            cvr: None,
            metadata: Metadata {
                tool_version: TOOL_VERSION.into(),
                seed: Some(3),
                epsilons: vec![-1.0],
                direction_scale: "sd".into(),
                pipeline: PipelineConfig::new(RankRule::Fixed(2), RankRule::Explained(0.95)),
                ingest: IngestConfig::default(),
                cca_ridge: 0.0,
                cvr: None,
                rescale_a: Some(Rescale { min: -1.0, max: 2.5 }),
                rescale_b: None,
                warnings: vec![],
            },
        }
    }

    #[test]
    fn sample_report_round_trips() {
        let r = sample_report();
        r.validate().unwrap();
        assert_eq!(AnalysisReport::from_json(&r.to_json().unwrap()).unwrap(), r);
    }

    #[test]
    fn validation_catches_shape_errors() {
        let mut r = sample_report();
        r.groups[0].weights[0].push(0.0);
        assert!(r.validate().is_err());
        let mut r = sample_report();
        r.correlations[0] = f64::NAN;
        assert!(r.validate().is_err());
        let mut r = sample_report();
        r.directions[0].variate = 2;
        assert!(r.validate().is_err());
    }

    #[test]
    fn atomic_write_replaces_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("r.json");
        write_atomic(&path, b"first").unwrap();
        write_atomic(&path, b"second").unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), b"second");
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 1);
    }

    #[test]
    fn direction_csvs_are_named_by_group_and_epsilon() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("out.json");
        let files = write_direction_csvs(&sample_report(), &path).unwrap();
        assert_eq!(files.len(), 1);
        assert!(files[0].ends_with("out_a_v1_eps-1.csv"));
        let text = std::fs::read_to_string(&files[0]).unwrap();
        assert!(text.starts_with("t,x,y\n0,0.1,0\n"));
    }

    proptest::proptest! {
        #[test]
        fn arbitrary_finite_values_round_trip(
            vals in proptest::collection::vec(-1e300f64..1e300, 3),
            small in proptest::collection::vec(-1e-300f64..1e-300, 3),
            c in 0.0f64..1.0,
        ) {
            let mut r = sample_report();
            r.correlations[0] = c;
            r.groups[0].weights[0] = vals[..2].to_vec();
            r.directions[0].table = FunctionTable::Density { grid: vals.clone(), density: small.clone() };
            let back = AnalysisReport::from_json(&r.to_json().unwrap()).unwrap();
            proptest::prop_assert_eq!(back, r);
        }
    }
}

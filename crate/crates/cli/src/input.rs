//! Dataset ingestion.
//!
//! Densities come either as a grid CSV (first column the grid on `[0, 1]`,
//! one column per subject, header row of subject ids) or as JSON lines of
//! `{"id": .., "samples": [..]}` turned into histogram densities. Curves come
//! as JSON lines of `{"id": .., "points": [[x, y], ..]}`.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use tfcca::density::{estimate_pdf_in_range, HistogramConfig, Pdf, Rescale};
use tfcca::numerics::{DiscreteFunction, Grid};
use tfcca::shape::{Curve, DEFAULT_CURVE_POINTS};

use crate::error::{CliError, CliResult};

/// Uniform-grid check tolerance for CSV inputs.
const GRID_TOL: f64 = 1e-8;

/// Settings that turn raw records into working-grid objects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IngestConfig {
    /// Grid size for densities estimated from raw samples.
    pub grid_points: usize,
    pub histogram: HistogramConfig,
    /// Arc-length resampling size for curves.
    pub curve_points: usize,
}

impl Default for IngestConfig {
    fn default() -> Self {
        Self {
            grid_points: 1000,
            histogram: HistogramConfig::default(),
            curve_points: DEFAULT_CURVE_POINTS,
        }
    }
}

#[derive(Debug, Clone)]
pub enum Objects {
    Pdfs(Vec<Pdf>),
    Curves(Vec<Curve>),
}

/// One group's subjects in file order.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub ids: Vec<String>,
    pub objects: Objects,
    /// Min-max map applied to raw samples, shared across the file.
    pub rescale: Option<Rescale>,
    pub warnings: Vec<String>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn kind_name(&self) -> &'static str {
        match self.objects {
            Objects::Pdfs(_) => "density",
            Objects::Curves(_) => "curve",
        }
    }

    /// Reorders subjects by `order` (indices into the current order).
    pub fn reordered(self, order: &[usize]) -> Dataset {
        let ids = order.iter().map(|&i| self.ids[i].clone()).collect();
        let objects = match self.objects {
            Objects::Pdfs(p) => Objects::Pdfs(order.iter().map(|&i| p[i].clone()).collect()),
            Objects::Curves(c) => Objects::Curves(order.iter().map(|&i| c[i].clone()).collect()),
        };
        Dataset {
            ids,
            objects,
            rescale: self.rescale,
            warnings: self.warnings,
        }
    }
}

fn fail(path: &Path, msg: impl std::fmt::Display) -> CliError {
    CliError::input(format!("{}: {msg}", path.display()))
}

fn check_unique(path: &Path, ids: &[String]) -> CliResult<()> {
    let mut seen = HashMap::new();
    for (k, id) in ids.iter().enumerate() {
        if let Some(prev) = seen.insert(id.as_str(), k) {
            return Err(fail(path, format!("duplicate subject id {id:?} (entries {} and {})", prev + 1, k + 1)));
        }
    }
    Ok(())
}

/// Reads a dataset, choosing the format from the extension (`.csv` for grid
/// tables, anything else for JSON lines).
pub fn read_dataset(path: &Path, cfg: &IngestConfig) -> CliResult<Dataset> {
    let is_csv = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
    let data = if is_csv {
        read_pdf_csv(path)?
    } else {
        read_jsonl(path, cfg)?
    };
    if data.len() < 3 {
        return Err(fail(path, format!("need at least 3 subjects, found {}", data.len())));
    }
    check_unique(path, &data.ids)?;
    Ok(data)
}

fn parse_number(path: &Path, row: usize, col: usize, s: &str) -> CliResult<f64> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| fail(path, format!("row {row}, column {col}: not a number: {s:?}")))?;
    if !v.is_finite() {
        return Err(fail(path, format!("row {row}, column {col}: non-finite value")));
    }
    Ok(v)
}

fn read_pdf_csv(path: &Path) -> CliResult<Dataset> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| fail(path, e))?;
    let header = reader.headers().map_err(|e| fail(path, e))?.clone();
    if header.len() < 2 {
        return Err(fail(path, "header needs a grid column and at least one subject"));
    }
    let ids: Vec<String> = header.iter().skip(1).map(|s| s.trim().to_string()).collect();
    let mut grid_values = Vec::new();
    let mut columns = vec![Vec::new(); ids.len()];
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| fail(path, format!("ragged grid table: {e}")))?;
        let row = r + 2;
        grid_values.push(parse_number(path, row, 1, &record[0])?);
        for (c, col) in columns.iter_mut().enumerate() {
            col.push(parse_number(path, row, c + 2, &record[c + 1])?);
        }
    }
    let grid = Grid::new(grid_values.len()).map_err(|e| fail(path, e))?;
    for (k, &t) in grid_values.iter().enumerate() {
        if (t - grid.point(k)).abs() > GRID_TOL {
            return Err(fail(
                path,
                format!("grid must be uniform on [0, 1]: row {} has {t}, expected {}", k + 2, grid.point(k)),
            ));
        }
    }
    let mut pdfs = Vec::with_capacity(ids.len());
    let mut warnings = Vec::new();
    for (id, col) in ids.iter().zip(columns) {
        let f = DiscreteFunction::scalar(grid, col)?;
        let pdf = Pdf::new(f).map_err(|e| fail(path, format!("subject {id:?}: {e}")))?;
        if let Some(mass) = pdf.drift() {
            warnings.push(format!("{}: subject {id:?} renormalized from mass {mass}", path.display()));
        }
        pdfs.push(pdf);
    }
    Ok(Dataset {
        ids,
        objects: Objects::Pdfs(pdfs),
        rescale: None,
        warnings,
    })
}

#[derive(Deserialize)]
#[serde(untagged)]
enum Id {
    Text(String),
    Int(i64),
}

#[derive(Deserialize)]
struct Record {
    id: Id,
    #[serde(default)]
    samples: Option<Vec<f64>>,
    #[serde(default)]
    points: Option<Vec<[f64; 2]>>,
}

fn read_jsonl(path: &Path, cfg: &IngestConfig) -> CliResult<Dataset> {
    let file = File::open(path).map_err(|e| fail(path, e))?;
    let mut ids = Vec::new();
    let mut samples = Vec::new();
    let mut points = Vec::new();
    for (k, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| fail(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| fail(path, format!("line {}: {e}", k + 1)))?;
        ids.push(match rec.id {
            Id::Text(s) => s,
            Id::Int(i) => i.to_string(),
        });
        match (rec.samples, rec.points) {
            (Some(s), None) => samples.push(s),
            (None, Some(p)) => points.push(p),
            _ => return Err(fail(path, format!("line {}: need exactly one of \"samples\" or \"points\"", k + 1))),
        }
    }
    if !samples.is_empty() && !points.is_empty() {
        return Err(fail(path, "file mixes density samples and curve points"));
    }
    if !points.is_empty() {
        let curves = points
            .iter()
            .zip(&ids)
            .map(|(p, id)| Curve::from_points(p, cfg.curve_points).map_err(|e| fail(path, format!("subject {id:?}: {e}"))))
            .collect::<CliResult<Vec<_>>>()?;
        return Ok(Dataset {
            ids,
            objects: Objects::Curves(curves),
            rescale: None,
            warnings: Vec::new(),
        });
    }
    let rescale = Rescale::fit(samples.iter().flatten()).map_err(|e| fail(path, e))?;
    let grid = Grid::new(cfg.grid_points)?;
    let pdfs = samples
        .iter()
        .zip(&ids)
        .map(|(s, id)| {
            estimate_pdf_in_range(s, rescale, &cfg.histogram, grid).map_err(|e| fail(path, format!("subject {id:?}: {e}")))
        })
        .collect::<CliResult<Vec<_>>>()?;
    Ok(Dataset {
        ids,
        objects: Objects::Pdfs(pdfs),
        rescale: Some(rescale),
        warnings: Vec::new(),
    })
}

/// Indices into `a` and `b` that put both in `a`'s order. Every id must
/// appear on both sides.
pub fn pair_ids(a: &[String], b: &[String]) -> CliResult<(Vec<usize>, Vec<usize>)> {
    let index: HashMap<&str, usize> = b.iter().enumerate().map(|(k, s)| (s.as_str(), k)).collect();
    let mut order_b = Vec::with_capacity(a.len());
    for id in a {
        match index.get(id.as_str()) {
            Some(&k) => order_b.push(k),
            None => return Err(CliError::input(format!("subject {id:?} has no partner in the second input"))),
        }
    }
    if a.len() != b.len() {
        let known: std::collections::HashSet<&str> = a.iter().map(String::as_str).collect();
        let extra = b.iter().find(|s| !known.contains(s.as_str())).expect("sizes differ");
        return Err(CliError::input(format!("subject {extra:?} has no partner in the first input")));
    }
    Ok(((0..a.len()).collect(), order_b))
}

/// Pairs two datasets by subject id, in the first dataset's order.
pub fn pair(a: Dataset, b: Dataset) -> CliResult<(Dataset, Dataset)> {
    let (oa, ob) = pair_ids(&a.ids, &b.ids)?;
    Ok((a.reordered(&oa), b.reordered(&ob)))
}

/// Response CSV: header row, then `id,value` rows.
pub fn read_response(path: &Path) -> CliResult<(Vec<String>, Vec<f64>)> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .from_path(path)
        .map_err(|e| fail(path, e))?;
    let mut ids = Vec::new();
    let mut values = Vec::new();
    for (r, record) in reader.records().enumerate() {
        let record = record.map_err(|e| fail(path, e))?;
        if record.len() != 2 {
            return Err(fail(path, format!("row {}: expected 2 columns (id, value)", r + 2)));
        }
        ids.push(record[0].trim().to_string());
        values.push(parse_number(path, r + 2, 2, &record[1])?);
    }
    check_unique(path, &ids)?;
    Ok((ids, values))
}

/// Response values in the order of `subjects`.
pub fn align_response(subjects: &[String], ids: &[String], values: &[f64]) -> CliResult<Vec<f64>> {
    let (_, order) = pair_ids(subjects, ids)?;
    Ok(order.iter().map(|&k| values[k]).collect())
}

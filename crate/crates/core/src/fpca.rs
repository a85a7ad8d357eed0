//! Tangent-space functional principal components.
//!
//! Tangent vectors at a common base point are expanded in the eigenbasis of
//! their (uncentered) sample covariance operator. The operator is
//! diagonalized through the `n × n` Gram matrix of L² inner products, which
//! is exact and cheap when the sample size is far below the grid size.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{pdf_tangent_coordinates, Pdf};
use crate::error::{Error, Result};
use crate::numerics::inner_unchecked;
use crate::shape::{align_tangents, shape_karcher_mean, shape_tangent_coordinates, ShapeConfig, Srvf};
use crate::sphere::{parallel_transport, KarcherConfig, SpherePoint, TangentVector};

/// Relative eigenvalue floor below which directions count as numerically null.
const RANK_EPS: f64 = 1e-12;

/// How many components to keep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RankRule {
    Fixed(usize),
    /// Smallest rank whose explained fraction reaches the threshold.
    Explained(f64),
}

impl RankRule {
    pub const PDF_DEFAULT: RankRule = RankRule::Explained(0.95);
    pub const SHAPE_DEFAULT: RankRule = RankRule::Explained(0.80);
}

/// Truncated eigenbasis of tangent data at a base point.
#[derive(Debug, Clone)]
pub struct FpcBasis {
    base: Arc<SpherePoint>,
    eigenfunctions: Vec<TangentVector>,
    eigenvalues: Vec<f64>,
    spectrum: Vec<f64>,
    total_variance: f64,
}

impl FpcBasis {
    pub fn base(&self) -> &Arc<SpherePoint> {
        &self.base
    }

    pub fn eigenfunctions(&self) -> &[TangentVector] {
        &self.eigenfunctions
    }

    /// Retained eigenvalues, nonincreasing.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.eigenvalues
    }

    /// Every numerically nonzero eigenvalue, retained or not.
    pub fn spectrum(&self) -> &[f64] {
        &self.spectrum
    }

    pub fn rank(&self) -> usize {
        self.eigenfunctions.len()
    }

    pub fn total_variance(&self) -> f64 {
        self.total_variance
    }

    pub fn explained_fraction(&self) -> f64 {
        if self.total_variance > 0.0 {
            (self.eigenvalues.iter().sum::<f64>() / self.total_variance).min(1.0)
        } else {
            0.0
        }
    }

    /// `Σ_i e_i w_i`.
    pub fn combine(&self, weights: &[f64]) -> Result<TangentVector> {
        if weights.len() != self.rank() {
            return Err(Error::LengthMismatch {
                expected: self.rank(),
                actual: weights.len(),
            });
        }
        let mut v = self.base.function().zeros_like();
        for (e, w) in self.eigenfunctions.iter().zip(weights) {
            v = v.add_scaled(*w, e.vector())?;
        }
        Ok(TangentVector::from_parts(self.base.clone(), v))
    }

    /// Same basis carried to another base point by parallel transport.
    pub fn transported(&self, to: &Arc<SpherePoint>) -> Result<FpcBasis> {
        let eigenfunctions = self
            .eigenfunctions
            .iter()
            .map(|e| parallel_transport(e, to))
            .collect::<Result<Vec<_>>>()?;
        Ok(FpcBasis {
            base: to.clone(),
            eigenfunctions,
            ..self.clone()
        })
    }
}

fn same_base(a: &Arc<SpherePoint>, b: &Arc<SpherePoint>) -> bool {
    Arc::ptr_eq(a, b) || a == b
}

/// Eigen-decomposition of `(1/(n-1)) Σ δ_i ⊗ δ_i` truncated by `rule`.
///
/// Eigenfunction signs make the largest-magnitude entry (in x-then-y stacked
/// order) positive.
pub fn fit_fpca(tangents: &[TangentVector], rule: RankRule) -> Result<FpcBasis> {
    let n = tangents.len();
    if n < 2 {
        return Err(Error::InvalidInput("need at least 2 tangent vectors".into()));
    }
    let base = tangents[0].base().clone();
    for t in &tangents[1..] {
        if !same_base(&base, t.base()) {
            return Err(Error::InvalidInput("tangent vectors live at different base points".into()));
        }
        tangents[0].vector().check_compatible(t.vector())?;
    }
    let scale = 1.0 / (n - 1) as f64;
    let mut gram = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = inner_unchecked(tangents[i].vector(), tangents[j].vector()) * scale;
            gram[(i, j)] = v;
            gram[(j, i)] = v;
        }
    }
    let eig = SymmetricEigen::new(gram);
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]));
    let total: f64 = eig.eigenvalues.iter().map(|v| v.max(0.0)).sum();
    let top = eig.eigenvalues[order[0]].max(0.0);
    let spectrum: Vec<f64> = order
        .iter()
        .map(|&k| eig.eigenvalues[k])
        .take_while(|&v| top > 0.0 && v > RANK_EPS * top)
        .collect();
    let max_rank = spectrum.len().min(n - 1);
    let rank = match rule {
        RankRule::Fixed(r) => {
            if r == 0 || r > max_rank {
                return Err(Error::RankInfeasible {
                    requested: r,
                    max: max_rank,
                });
            }
            r
        }
        RankRule::Explained(threshold) => {
            if !(threshold > 0.0 && threshold <= 1.0) {
                return Err(Error::InvalidInput(format!(
                    "explained-variance threshold {threshold} outside (0, 1]"
                )));
            }
            if max_rank == 0 {
                return Err(Error::RankInfeasible { requested: 1, max: 0 });
            }
            let mut acc = 0.0;
            let mut r = max_rank;
            for (k, v) in spectrum.iter().enumerate().take(max_rank) {
                acc += v;
                if acc / total >= threshold - 1e-12 {
                    r = k + 1;
                    break;
                }
            }
            r
        }
    };

    let eigenfunctions = order[..rank]
        .iter()
        .map(|&k| {
            let lambda = eig.eigenvalues[k];
            let coef = 1.0 / ((n - 1) as f64 * lambda).sqrt();
            let mut e = base.function().zeros_like();
            for (i, t) in tangents.iter().enumerate() {
                e = e.add_scaled(coef * eig.eigenvectors[(i, k)], t.vector())?;
            }
            let stacked = e.stacked();
            let mut arg = 0;
            for (idx, v) in stacked.iter().enumerate() {
                if v.abs() > stacked[arg].abs() {
                    arg = idx;
                }
            }
            if stacked[arg] < 0.0 {
                e = e.scale(-1.0);
            }
            Ok(TangentVector::from_parts(base.clone(), e))
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(FpcBasis {
        base,
        eigenvalues: spectrum[..rank].to_vec(),
        spectrum,
        eigenfunctions,
        total_variance: total,
    })
}

/// What kind of object a coefficient matrix describes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Pdf,
    Shape,
}

/// Where the two groups' tangent spaces sit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TangentMode {
    /// One mean and basis per group.
    Separate,
    /// One mean of the union and one basis for both groups.
    Pooled,
    /// Per-group means; group A is carried to group B's mean.
    Transport,
}

impl TangentMode {
    pub fn name(self) -> &'static str {
        match self {
            TangentMode::Separate => "separate",
            TangentMode::Pooled => "pooled",
            TangentMode::Transport => "transport",
        }
    }
}

/// Which basis the transported group is expanded in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransportBasis {
    /// One basis fit on the transported group A together with group B.
    Joint,
    /// Each group keeps its own basis; group A's is transported with its data.
    Transported,
}

/// Origin of a coefficient matrix.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub kind: ObjectKind,
    pub mode: TangentMode,
}

/// `n × r` principal-component scores.
#[derive(Debug, Clone, PartialEq)]
pub struct CoeffMatrix {
    values: DMatrix<f64>,
    provenance: Provenance,
}

impl CoeffMatrix {
    pub fn new(values: DMatrix<f64>, provenance: Provenance) -> Result<Self> {
        if values.nrows() < 2 {
            return Err(Error::InvalidInput("coefficient matrix needs at least 2 rows".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("coefficient matrix"));
        }
        Ok(Self { values, provenance })
    }

    pub fn values(&self) -> &DMatrix<f64> {
        &self.values
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn nrows(&self) -> usize {
        self.values.nrows()
    }

    pub fn ncols(&self) -> usize {
        self.values.ncols()
    }
}

fn score_rows(basis: &FpcBasis, tangents: &[TangentVector]) -> Result<DMatrix<f64>> {
    for t in tangents {
        if !same_base(basis.base(), t.base()) {
            return Err(Error::InvalidInput("tangent vector is not at the basis base point".into()));
        }
        basis.base().function().check_compatible(t.vector())?;
    }
    let rows: Vec<Vec<f64>> = tangents
        .par_iter()
        .map(|t| {
            basis
                .eigenfunctions()
                .iter()
                .map(|e| inner_unchecked(t.vector(), e.vector()))
                .collect()
        })
        .collect();
    Ok(DMatrix::from_fn(tangents.len(), basis.rank(), |i, j| rows[i][j]))
}

/// Scores `c_ij = <δ_i, e_j>`.
pub fn coefficients(
    basis: &FpcBasis,
    tangents: &[TangentVector],
    provenance: Provenance,
) -> Result<CoeffMatrix> {
    CoeffMatrix::new(score_rows(basis, tangents)?, provenance)
}

/// One group's inputs to the two-group pipeline.
#[derive(Debug, Clone, Copy)]
pub enum GroupData<'a> {
    Pdfs(&'a [Pdf]),
    Shapes(&'a [Srvf]),
}

impl GroupData<'_> {
    pub fn kind(&self) -> ObjectKind {
        match self {
            GroupData::Pdfs(_) => ObjectKind::Pdf,
            GroupData::Shapes(_) => ObjectKind::Shape,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            GroupData::Pdfs(p) => p.len(),
            GroupData::Shapes(s) => s.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Settings for [`tangent_mode_pipeline`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PipelineConfig {
    pub rank_a: RankRule,
    /// Ignored in pooled mode, which fits one basis with `rank_a`.
    pub rank_b: RankRule,
    pub karcher: KarcherConfig,
    pub shape: ShapeConfig,
    pub transport_basis: TransportBasis,
}

impl PipelineConfig {
    pub fn new(rank_a: RankRule, rank_b: RankRule) -> Self {
        Self {
            rank_a,
            rank_b,
            karcher: KarcherConfig::default(),
            shape: ShapeConfig::default(),
            transport_basis: TransportBasis::Joint,
        }
    }
}

/// Mean, basis, tangent data and scores for one group.
#[derive(Debug, Clone)]
pub struct GroupFit {
    pub kind: ObjectKind,
    /// Base point of the basis and tangents.
    pub base: Arc<SpherePoint>,
    /// The group's own mean; differs from `base` for group A in transport mode.
    pub own_mean: Arc<SpherePoint>,
    /// Shape mean as a pre-shape, for reconstructing curves.
    pub shape_mean: Option<Srvf>,
    /// Whether the mean iteration that produced `base` met its tolerance.
    pub mean_converged: bool,
    pub tangents: Vec<TangentVector>,
    pub basis: FpcBasis,
    pub coefficients: CoeffMatrix,
}

#[derive(Debug, Clone)]
pub struct PipelineOutput {
    pub mode: TangentMode,
    pub a: GroupFit,
    pub b: GroupFit,
}

#[derive(Clone)]
struct Tangents {
    base: Arc<SpherePoint>,
    shape_mean: Option<Srvf>,
    converged: bool,
    tangents: Vec<TangentVector>,
}

fn group_tangents(
    g: GroupData<'_>,
    mean: Option<&Tangents>,
    cfg: &PipelineConfig,
) -> Result<Tangents> {
    match g {
        GroupData::Pdfs(p) => {
            let ov = mean.map(|m| crate::density::Srt::from_sphere_point((*m.base).clone()));
            let ov = ov.transpose()?;
            let c = pdf_tangent_coordinates(p, ov.as_ref(), &cfg.karcher)?;
            let base = match mean {
                Some(m) => m.base.clone(),
                None => c.mean.clone(),
            };
            let tangents = c
                .tangents
                .into_iter()
                .map(|t| TangentVector::from_parts(base.clone(), t.vector().clone()))
                .collect();
            Ok(Tangents {
                converged: c.karcher.as_ref().is_none_or(|k| k.converged),
                base,
                shape_mean: None,
                tangents,
            })
        }
        GroupData::Shapes(s) => {
            let ov = mean.and_then(|m| m.shape_mean.as_ref());
            let c = shape_tangent_coordinates(s, ov, &cfg.shape)?;
            let base = match mean {
                Some(m) => m.base.clone(),
                None => c.base.clone(),
            };
            let tangents = c
                .tangents
                .into_iter()
                .map(|t| TangentVector::from_parts(base.clone(), t.vector().clone()))
                .collect();
            Ok(Tangents {
                converged: c.karcher.as_ref().is_none_or(|k| k.converged),
                base,
                shape_mean: Some(c.mean),
                tangents,
            })
        }
    }
}

fn pooled_mean(a: GroupData<'_>, b: GroupData<'_>, cfg: &PipelineConfig) -> Result<Tangents> {
    match (a, b) {
        (GroupData::Pdfs(x), GroupData::Pdfs(y)) => {
            let all: Vec<Pdf> = x.iter().chain(y).cloned().collect();
            let c = pdf_tangent_coordinates(&all, None, &cfg.karcher)?;
            Ok(Tangents {
                converged: c.karcher.as_ref().is_none_or(|k| k.converged),
                base: c.mean,
                shape_mean: None,
                tangents: Vec::new(),
            })
        }
        (GroupData::Shapes(x), GroupData::Shapes(y)) => {
            let all: Vec<Srvf> = x.iter().chain(y).cloned().collect();
            let m = shape_karcher_mean(&all, &cfg.shape)?;
            Ok(Tangents {
                converged: m.converged,
                base: Arc::new(m.mean.point().clone()),
                shape_mean: Some(m.mean),
                tangents: Vec::new(),
            })
        }
        _ => Err(Error::IncompatibleMode { mode: "pooled" }),
    }
}

fn fit_group(kind: ObjectKind, mode: TangentMode, t: Tangents, own_mean: Arc<SpherePoint>, basis: FpcBasis) -> Result<GroupFit> {
    let coefficients = coefficients(&basis, &t.tangents, Provenance { kind, mode })?;
    Ok(GroupFit {
        kind,
        base: t.base,
        own_mean,
        shape_mean: t.shape_mean,
        mean_converged: t.converged,
        tangents: t.tangents,
        basis,
        coefficients,
    })
}

/// Tangent coordinates and scores for two paired groups under one of the
/// three tangent-space options.
pub fn tangent_mode_pipeline(
    a: GroupData<'_>,
    b: GroupData<'_>,
    mode: TangentMode,
    cfg: &PipelineConfig,
) -> Result<PipelineOutput> {
    let mut out = tangent_mode_pipelines(a, b, &[mode], cfg)?;
    Ok(out.pop().expect("one mode requested"))
}

/// [`tangent_mode_pipeline`] for several modes at once; the per-group means
/// shared by the separate and transport options are computed only once.
pub fn tangent_mode_pipelines(
    a: GroupData<'_>,
    b: GroupData<'_>,
    modes: &[TangentMode],
    cfg: &PipelineConfig,
) -> Result<Vec<PipelineOutput>> {
    if a.len() != b.len() {
        return Err(Error::LengthMismatch {
            expected: a.len(),
            actual: b.len(),
        });
    }
    for &mode in modes {
        if mode != TangentMode::Separate && a.kind() != b.kind() {
            return Err(Error::IncompatibleMode { mode: mode.name() });
        }
    }
    let mut own: Option<(Tangents, Tangents)> = None;
    let mut own_tangents = || -> Result<(Tangents, Tangents)> {
        if own.is_none() {
            let (ta, tb) = rayon::join(|| group_tangents(a, None, cfg), || group_tangents(b, None, cfg));
            own = Some((ta?, tb?));
        }
        Ok(own.clone().expect("just computed"))
    };
    let mut out = Vec::with_capacity(modes.len());
    for &mode in modes {
        let result = match mode {
            TangentMode::Separate => {
                let (ta, tb) = own_tangents()?;
                separate(a.kind(), b.kind(), ta, tb, cfg)?
            }
            TangentMode::Pooled => pooled(a, b, cfg)?,
            TangentMode::Transport => {
                let (ta, tb) = own_tangents()?;
                transport(a, b.kind(), ta, tb, cfg)?
            }
        };
        out.push(result);
    }
    Ok(out)
}

fn separate(ka: ObjectKind, kb: ObjectKind, ta: Tangents, tb: Tangents, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let mode = TangentMode::Separate;
    let basis_a = fit_fpca(&ta.tangents, cfg.rank_a)?;
    let basis_b = fit_fpca(&tb.tangents, cfg.rank_b)?;
    let (ma, mb) = (ta.base.clone(), tb.base.clone());
    Ok(PipelineOutput {
        mode,
        a: fit_group(ka, mode, ta, ma, basis_a)?,
        b: fit_group(kb, mode, tb, mb, basis_b)?,
    })
}

fn pooled(a: GroupData<'_>, b: GroupData<'_>, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let mode = TangentMode::Pooled;
    let pooled = pooled_mean(a, b, cfg)?;
    let mut ta = group_tangents(a, Some(&pooled), cfg)?;
    let mut tb = group_tangents(b, Some(&pooled), cfg)?;
    ta.converged = pooled.converged;
    tb.converged = pooled.converged;
    let all: Vec<TangentVector> = ta.tangents.iter().chain(&tb.tangents).cloned().collect();
    let basis = fit_fpca(&all, cfg.rank_a)?;
    let m = pooled.base.clone();
    Ok(PipelineOutput {
        mode,
        a: fit_group(a.kind(), mode, ta, m.clone(), basis.clone())?,
        b: fit_group(b.kind(), mode, tb, m, basis)?,
    })
}

fn transport(a: GroupData<'_>, kb: ObjectKind, mut ta: Tangents, tb: Tangents, cfg: &PipelineConfig) -> Result<PipelineOutput> {
    let mode = TangentMode::Transport;
    if let (Some(ma), Some(mb)) = (&ta.shape_mean, &tb.shape_mean) {
        // Carry group A along the shortest geodesic: move its mean shape and
        // tangent data to the representative closest to B's mean first.
        let (aligned, tangents) = align_tangents(ma, mb, &ta.tangents, &cfg.shape)?;
        ta = Tangents {
            converged: ta.converged,
            base: tangents
                .first()
                .map(|t| t.base().clone())
                .unwrap_or_else(|| Arc::new(aligned.point().clone())),
            shape_mean: Some(aligned),
            tangents,
        };
    }
    let own_a = ta.base.clone();
    let moved = ta
        .tangents
        .iter()
        .map(|t| parallel_transport(t, &tb.base))
        .collect::<Result<Vec<_>>>()?;
    let (basis_a, basis_b) = match cfg.transport_basis {
        TransportBasis::Joint => {
            let all: Vec<TangentVector> = moved.iter().chain(&tb.tangents).cloned().collect();
            let joint = fit_fpca(&all, cfg.rank_a)?;
            (joint.clone(), joint)
        }
        TransportBasis::Transported => {
            let own = fit_fpca(&ta.tangents, cfg.rank_a)?;
            (own.transported(&tb.base)?, fit_fpca(&tb.tangents, cfg.rank_b)?)
        }
    };
    let moved_a = Tangents {
        converged: ta.converged,
        base: tb.base.clone(),
        shape_mean: tb.shape_mean.clone(),
        tangents: moved,
    };
    let mb = tb.base.clone();
    Ok(PipelineOutput {
        mode,
        a: fit_group(a.kind(), mode, moved_a, own_a, basis_a)?,
        b: fit_group(kb, mode, tb, mb, basis_b)?,
    })
}

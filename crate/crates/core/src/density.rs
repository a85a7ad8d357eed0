//! Probability densities on `[0, 1]` and their square-root transforms.
//!
//! The square-root transform maps densities onto the positive orthant of the
//! unit sphere, where the Fisher-Rao metric becomes the flat L² metric. The
//! density pipeline is: densities → square roots → Karcher mean → log maps at
//! the mean → tangent principal components.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpca::FpcBasis;
use crate::numerics::{DiscreteFunction, Dim, Grid};
use crate::sphere::{
    exp_map, karcher_mean, log_map, KarcherConfig, KarcherMeanResult, SpherePoint, TangentVector,
};

/// Integral drift accepted silently (renormalized without a report).
const MASS_EXACT_TOL: f64 = 1e-6;
/// Integral drift accepted with a renormalization report.
const MASS_DRIFT_TOL: f64 = 1e-3;

/// Nonnegative function integrating to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pdf {
    f: DiscreteFunction,
    original_mass: f64,
}

impl Pdf {
    /// Validates and renormalizes. Masses outside `[1 - 1e-3, 1 + 1e-3]` are
    /// rejected; drift inside that window is corrected and reported through
    /// [`Pdf::drift`].
    pub fn new(f: DiscreteFunction) -> Result<Self> {
        let pdf = Self::normalized(f)?;
        if (pdf.original_mass - 1.0).abs() > MASS_DRIFT_TOL {
            return Err(Error::MassDrift {
                mass: pdf.original_mass,
            });
        }
        Ok(pdf)
    }

    /// Accepts any nonnegative function of positive mass and rescales it.
    pub fn normalized(f: DiscreteFunction) -> Result<Self> {
        if f.dim() != Dim::Scalar {
            return Err(Error::DimensionMismatch);
        }
        if let Some((index, &value)) = f.values().iter().enumerate().find(|(_, v)| **v < 0.0) {
            return Err(Error::NegativeDensity { index, value });
        }
        let mass = f.integral()[0];
        if !(mass > 0.0) {
            return Err(Error::MassDrift { mass });
        }
        let f = f.with_periodic(false).scale(1.0 / mass);
        Ok(Self {
            f,
            original_mass: mass,
        })
    }

    pub fn function(&self) -> &DiscreteFunction {
        &self.f
    }

    pub fn grid(&self) -> Grid {
        self.f.grid()
    }

    /// Mass before renormalization, when it differed from one by more than `1e-6`.
    pub fn drift(&self) -> Option<f64> {
        ((self.original_mass - 1.0).abs() > MASS_EXACT_TOL).then_some(self.original_mass)
    }
}

/// Square-root transform of a density: a point in the positive orthant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Srt {
    p: SpherePoint,
}

impl Srt {
    /// Wraps a sphere point that must be nonnegative (up to rounding).
    pub fn from_sphere_point(p: SpherePoint) -> Result<Self> {
        if let Some((index, &value)) = p
            .function()
            .values()
            .iter()
            .enumerate()
            .find(|(_, v)| **v < -1e-12)
        {
            return Err(Error::NegativeDensity { index, value });
        }
        Ok(Self { p })
    }

    pub fn point(&self) -> &SpherePoint {
        &self.p
    }

    pub fn into_point(self) -> SpherePoint {
        self.p
    }
}

/// `psi = +sqrt(f)`.
pub fn srt(f: &Pdf) -> Srt {
    let root = f.function().map(f64::sqrt);
    Srt {
        p: SpherePoint::new(root).expect("density has unit mass"),
    }
}

/// Pointwise square, renormalized to unit mass.
pub fn srt_inverse(psi: &Srt) -> Pdf {
    square_to_pdf(&psi.p)
}

fn square_to_pdf(p: &SpherePoint) -> Pdf {
    Pdf::normalized(p.function().map(|v| v * v)).expect("unit sphere point has unit mass")
}

/// Histogram settings for turning raw samples into a density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistogramConfig {
    pub bins: usize,
    /// Added to every bin's relative frequency before normalization.
    pub floor: f64,
}

impl Default for HistogramConfig {
    fn default() -> Self {
        Self {
            bins: 50,
            floor: 1e-4,
        }
    }
}

/// Affine map taking raw sample values onto `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rescale {
    pub min: f64,
    pub max: f64,
}

impl Rescale {
    /// Min-max range of all values. Errors when every value is identical.
    pub fn fit<'a>(values: impl IntoIterator<Item = &'a f64>) -> Result<Self> {
        let mut min = f64::INFINITY;
        let mut max = f64::NEG_INFINITY;
        for &v in values {
            if !v.is_finite() {
                return Err(Error::NonFinite("samples"));
            }
            min = min.min(v);
            max = max.max(v);
        }
        if !(max > min) {
            return Err(Error::DegenerateSample);
        }
        Ok(Self { min, max })
    }

    pub fn apply(&self, v: f64) -> f64 {
        ((v - self.min) / (self.max - self.min)).clamp(0.0, 1.0)
    }
}

/// Histogram density estimate on `grid`, rescaling samples by their own range.
pub fn estimate_pdf(samples: &[f64], config: &HistogramConfig, grid: Grid) -> Result<(Pdf, Rescale)> {
    let rescale = Rescale::fit(samples)?;
    let pdf = estimate_pdf_in_range(samples, rescale, config, grid)?;
    Ok((pdf, rescale))
}

/// Histogram density estimate with a caller-supplied rescale (for instance one
/// shared across a whole dataset).
pub fn estimate_pdf_in_range(
    samples: &[f64],
    rescale: Rescale,
    config: &HistogramConfig,
    grid: Grid,
) -> Result<Pdf> {
    if samples.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 samples".into()));
    }
    if config.bins == 0 || !(config.floor >= 0.0) {
        return Err(Error::InvalidInput("bins must be positive and floor nonnegative".into()));
    }
    let bins = config.bins;
    let mut counts = vec![0.0; bins];
    for &s in samples {
        if !s.is_finite() {
            return Err(Error::NonFinite("samples"));
        }
        let u = rescale.apply(s);
        let b = ((u * bins as f64) as usize).min(bins - 1);
        counts[b] += 1.0;
    }
    let n = samples.len() as f64;
    let heights: Vec<f64> = counts
        .iter()
        .map(|c| (c / n + config.floor) * bins as f64)
        .collect();
    let values = grid
        .points()
        .into_iter()
        .map(|t| heights[((t * bins as f64) as usize).min(bins - 1)])
        .collect();
    Pdf::normalized(DiscreteFunction::scalar(grid, values)?)
}

/// Karcher mean of the square-root transforms and log-map images at it.
#[derive(Debug, Clone)]
pub struct PdfTangentCoordinates {
    pub mean: Arc<SpherePoint>,
    pub tangents: Vec<TangentVector>,
    /// `None` when the caller supplied the base point.
    pub karcher: Option<KarcherMeanResult>,
}

impl PdfTangentCoordinates {
    pub fn mean_srt(&self) -> Srt {
        Srt {
            p: (*self.mean).clone(),
        }
    }
}

/// Square-root transforms, mean (unless `mean_override`), then
/// `log_mean(psi_i)` for every density.
pub fn pdf_tangent_coordinates(
    pdfs: &[Pdf],
    mean_override: Option<&Srt>,
    config: &KarcherConfig,
) -> Result<PdfTangentCoordinates> {
    let roots: Vec<SpherePoint> = pdfs.iter().map(|f| srt(f).into_point()).collect();
    pdf_tangents_from_roots(&roots, mean_override.map(|m| m.point()), config)
}

pub(crate) fn pdf_tangents_from_roots(
    roots: &[SpherePoint],
    mean_override: Option<&SpherePoint>,
    config: &KarcherConfig,
) -> Result<PdfTangentCoordinates> {
    if roots.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 densities".into()));
    }
    let grid = roots[0].function().grid();
    if let Some(bad) = roots.iter().find(|r| r.function().grid() != grid) {
        return Err(Error::GridMismatch {
            left: grid.len(),
            right: bad.function().grid().len(),
        });
    }
    let (mean, karcher) = match mean_override {
        Some(m) => (Arc::new(m.clone()), None),
        None => {
            let k = karcher_mean(roots, config)?;
            (Arc::new(k.mean.clone()), Some(k))
        }
    };
    let tangents = roots
        .iter()
        .map(|r| log_map(&mean, r))
        .collect::<Result<Vec<_>>>()?;
    Ok(PdfTangentCoordinates {
        mean,
        tangents,
        karcher,
    })
}

/// Densities `[exp_mean(eps * v)]²` along the canonical variate direction
/// `v = Σ_i e_i w_i`, one per `eps`.
pub fn pdf_variate_direction(
    mean: &Srt,
    basis: &FpcBasis,
    weights: &[f64],
    epsilons: &[f64],
) -> Result<Vec<Pdf>> {
    if basis.base().as_ref() != mean.point() {
        return Err(Error::InvalidInput("basis is not anchored at the given mean".into()));
    }
    let v = basis.combine(weights)?;
    let len = v.norm();
    epsilons
        .iter()
        .map(|&eps| {
            let step = eps.abs() * len;
            if step >= std::f64::consts::PI {
                return Err(Error::GeodesicOverflow { length: step });
            }
            let p = exp_map(mean.point(), &v.scale(eps))?;
            Ok(square_to_pdf(&p))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fpca::{fit_fpca, RankRule};
    use crate::numerics::{inner_product, norm};
    use crate::sphere::geodesic_distance;
    use std::f64::consts::PI;

    fn grid() -> Grid {
        Grid::new(501).unwrap()
    }

    fn pdf(f: impl Fn(f64) -> f64) -> Pdf {
        Pdf::normalized(DiscreteFunction::from_scalar_fn(grid(), false, f).unwrap()).unwrap()
    }

    fn bump(mu: f64, s: f64) -> Pdf {
        pdf(|t| (-(t - mu).powi(2) / (2.0 * s * s)).exp() + 0.05)
    }

    #[test]
    fn srt_of_uniform_is_constant_one() {
        let u = pdf(|_| 1.0);
        for v in srt(&u).point().function().values() {
            assert!((v - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn srt_of_linear_density() {
        let g = Grid::new(1001).unwrap();
        let f = Pdf::new(DiscreteFunction::from_scalar_fn(g, false, |t| 2.0 * t).unwrap()).unwrap();
        let psi = srt(&f);
        for (k, t) in g.points().into_iter().enumerate() {
            assert!((psi.point().function().values()[k] - (2.0 * t).sqrt()).abs() < 1e-6);
        }
        assert!((norm(psi.point().function()) - 1.0).abs() < 1e-6);
        let back = srt_inverse(&psi);
        for (a, b) in back.function().values().iter().zip(f.function().values()) {
            assert!((a - b).abs() < 1e-8);
        }
    }

    #[test]
    fn pdf_validation() {
        let g = grid();
        let neg = DiscreteFunction::from_scalar_fn(g, false, |t| t - 0.5).unwrap();
        assert!(matches!(Pdf::new(neg), Err(Error::NegativeDensity { .. })));
        let heavy = DiscreteFunction::from_scalar_fn(g, false, |_| 1.01).unwrap();
        assert!(matches!(Pdf::new(heavy), Err(Error::MassDrift { .. })));
        let slight = DiscreteFunction::from_scalar_fn(g, false, |_| 1.0005).unwrap();
        let p = Pdf::new(slight).unwrap();
        assert!((p.drift().unwrap() - 1.0005).abs() < 1e-12);
        assert!((p.function().integral()[0] - 1.0).abs() < 1e-12);
        assert!(pdf(|_| 1.0).drift().is_none());
    }

    #[test]
    fn histogram_of_uniform_lattice() {
        let samples: Vec<f64> = (0..100_000).map(|i| i as f64 / 99_999.0).collect();
        let cfg = HistogramConfig { bins: 10, floor: 0.0 };
        let (p, rescale) = estimate_pdf(&samples, &cfg, grid()).unwrap();
        assert_eq!(rescale, Rescale { min: 0.0, max: 1.0 });
        for v in p.function().values() {
            assert!((v - 1.0).abs() < 0.05, "{v}");
        }
    }

    #[test]
    fn histogram_floor_keeps_positive() {
        let samples = [0.1, 0.2, 0.2, 0.9];
        let cfg = HistogramConfig { bins: 20, floor: 1e-4 };
        let (p, _) = estimate_pdf(&samples, &cfg, grid()).unwrap();
        assert!(p.function().values().iter().all(|v| *v > 0.0));
    }

    #[test]
    fn histogram_two_values() {
        let samples = [3.0, 7.0, 3.0, 7.0];
        let cfg = HistogramConfig { bins: 10, floor: 0.0 };
        let (p, _) = estimate_pdf(&samples, &cfg, grid()).unwrap();
        assert!((p.function().integral()[0] - 1.0).abs() < 1e-12);
        let vals = p.function().values();
        let g = grid();
        for (k, t) in g.points().into_iter().enumerate() {
            if t > 0.1 && t < 0.9 {
                assert_eq!(vals[k], 0.0);
            }
        }
        assert!(vals[0] > 0.0 && vals[g.len() - 1] > 0.0);
    }

    #[test]
    fn histogram_degenerate() {
        let cfg = HistogramConfig::default();
        assert_eq!(estimate_pdf(&[2.0, 2.0, 2.0], &cfg, grid()).unwrap_err(), Error::DegenerateSample);
    }

    #[test]
    fn identical_pdfs_give_zero_tangents() {
        let f = bump(0.4, 0.1);
        let c = pdf_tangent_coordinates(&[f.clone(), f.clone(), f], None, &KarcherConfig::default()).unwrap();
        assert!(c.tangents.iter().all(|v| v.norm() < 1e-8));
    }

    #[test]
    fn tangent_coordinates_properties() {
        let pdfs: Vec<Pdf> = (0..8).map(|i| bump(0.3 + 0.03 * i as f64, 0.08 + 0.005 * i as f64)).collect();
        let cfg = KarcherConfig::default();
        let c = pdf_tangent_coordinates(&pdfs, None, &cfg).unwrap();
        let mut avg = c.mean.function().zeros_like();
        for v in &c.tangents {
            avg = avg.add_scaled(1.0 / 8.0, v.vector()).unwrap();
        }
        assert!(norm(&avg) <= cfg.tol);
        for (f, v) in pdfs.iter().zip(&c.tangents) {
            let back = srt_inverse(&Srt::from_sphere_point(exp_map(&c.mean, v).unwrap()).unwrap());
            for (a, b) in back.function().values().iter().zip(f.function().values()) {
                assert!((a - b).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn two_pdfs_have_opposite_tangents() {
        let pdfs = [bump(0.35, 0.1), bump(0.6, 0.12)];
        let c = pdf_tangent_coordinates(&pdfs, None, &KarcherConfig::default()).unwrap();
        let s = c.tangents[0].vector().add(c.tangents[1].vector()).unwrap();
        assert!(norm(&s) < 1e-6);
    }

    #[test]
    fn fisher_rao_distance_is_grid_converged() {
        let d = |n: usize| {
            let g = Grid::new(n).unwrap();
            let a = Pdf::normalized(
                DiscreteFunction::from_scalar_fn(g, false, |t| 1.0 + 0.5 * (2.0 * PI * t).sin()).unwrap(),
            )
            .unwrap();
            let b = Pdf::normalized(DiscreteFunction::from_scalar_fn(g, false, |t| 0.5 + t * t).unwrap()).unwrap();
            geodesic_distance(srt(&a).point(), srt(&b).point()).unwrap()
        };
        assert!((d(500) - d(2000)).abs() < 1e-4);
    }

    fn basis_for_tests() -> (Srt, FpcBasis) {
        let pdfs: Vec<Pdf> = (0..10).map(|i| bump(0.3 + 0.02 * i as f64, 0.1 - 0.003 * i as f64)).collect();
        let c = pdf_tangent_coordinates(&pdfs, None, &KarcherConfig::default()).unwrap();
        let basis = fit_fpca(&c.tangents, RankRule::Fixed(2)).unwrap();
        (c.mean_srt(), basis)
    }

    #[test]
    fn variate_direction_properties() {
        let (mean, basis) = basis_for_tests();
        let eps = [-3.0, -2.0, -1.0, 0.0, 1.0, 2.0, 3.0];
        for w in [[0.2, -0.1], [0.03, 0.01]] {
            let dirs = pdf_variate_direction(&mean, &basis, &w, &eps).unwrap();
            assert_eq!(dirs[3], srt_inverse(&mean));
            for d in &dirs {
                assert!((d.function().integral()[0] - 1.0).abs() < 1e-6);
            }
            let v = basis.combine(&w).unwrap();
            let along = |e: f64| exp_map(mean.point(), &v.scale(e)).unwrap();
            let d = |e: f64| geodesic_distance(&along(e), mean.point()).unwrap();
            assert!((d(3.0) - d(-3.0)).abs() < 1e-8);
        }
        // Inside the positive orthant the squared points are recovered exactly.
        let w = [0.03, 0.01];
        let dirs = pdf_variate_direction(&mean, &basis, &w, &eps).unwrap();
        let v = basis.combine(&w).unwrap();
        assert!(exp_map(mean.point(), &v.scale(3.0)).unwrap().function().values().iter().all(|x| *x > 0.0));
        let dist = |p: &Pdf| geodesic_distance(srt(p).point(), mean.point()).unwrap();
        assert!((dist(&dirs[0]) - dist(&dirs[6])).abs() < 1e-8);
        assert!(inner_product(dirs[0].function(), dirs[6].function()).unwrap() > 0.0);
    }

    #[test]
    fn variate_direction_overflow() {
        let (mean, basis) = basis_for_tests();
        let err = pdf_variate_direction(&mean, &basis, &[5.0, 0.0], &[1.0]).unwrap_err();
        assert!(matches!(err, Error::GeodesicOverflow { .. }));
    }
}

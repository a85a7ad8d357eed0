//! Synthetic data and ground-truth recovery experiments.
//!
//! Every generator is deterministic for a fixed seed. Per-sample draws come
//! from their own stream of a seeded ChaCha generator, so the output does not
//! depend on how the work is spread across threads.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cca::{cca, pearson};
use crate::density::{pdf_variate_direction, Pdf, Srt};
use crate::error::{Error, Result};
use crate::fpca::{tangent_mode_pipeline, tangent_mode_pipelines, GroupData, PipelineConfig, RankRule, TangentMode, TransportBasis};
use crate::numerics::{DiscreteFunction, Grid};
use crate::shape::{srvf, Curve, ShapeConfig, Srvf};

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

fn normals(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| StandardNormal.sample(rng)).collect()
}

/// One of the three Gaussian-mixture density families.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PdfSimSpec {
    /// 1, 2 or 3.
    pub group: u8,
    pub n: usize,
    pub grid: Grid,
    pub seed: u64,
}

fn gaussian(t: f64, mu: f64, sigma: f64) -> f64 {
    (-(t - mu).powi(2) / (2.0 * sigma * sigma)).exp() / (sigma * (2.0 * PI).sqrt())
}

/// Mixture parameters `(μ₁, σ₁, μ₂, σ₂)` for one draw.
fn mixture_parameters(group: u8, rng: &mut ChaCha8Rng) -> (f64, f64, f64, f64) {
    match group {
        1 => (0.3, 0.1, rng.random_range(0.6..0.8), 0.1),
        2 => {
            let mu2 = rng.random_range(0.6..0.8);
            (0.3, 0.1, mu2, rng.random_range(0.1..0.2))
        }
        _ => {
            let mu1 = rng.random_range(0.1..0.4);
            let mu2 = rng.random_range(0.6..0.8);
            let s1 = rng.random_range(0.1..0.3);
            (mu1, s1, mu2, rng.random_range(0.1..0.2))
        }
    }
}

/// Equal-weight two-component Gaussian mixtures truncated to `[0, 1]`.
pub fn gen_pdf_group(spec: &PdfSimSpec) -> Result<Vec<Pdf>> {
    if !(1..=3).contains(&spec.group) {
        return Err(Error::InvalidInput(format!("density group must be 1, 2 or 3, got {}", spec.group)));
    }
    (0..spec.n)
        .into_par_iter()
        .map(|i| {
            let mut rng = stream(spec.seed, i as u64);
            let (m1, s1, m2, s2) = mixture_parameters(spec.group, &mut rng);
            let f = DiscreteFunction::from_scalar_fn(spec.grid, false, |t| {
                0.5 * gaussian(t, m1, s1) + 0.5 * gaussian(t, m2, s2)
            })?;
            Pdf::normalized(f)
        })
        .collect()
}

/// Strength of the latent cross-group dependence for simulated curves.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Regime {
    High,
    Moderate,
    Weak,
}

impl Regime {
    /// Exact sample correlation of the latent peak locations.
    pub fn correlation(self) -> f64 {
        match self {
            Regime::High => 0.995,
            Regime::Moderate => 0.5,
            Regime::Weak => 0.05,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Regime::High => "high",
            Regime::Moderate => "moderate",
            Regime::Weak => "weak",
        }
    }
}

/// Unit circles carrying a fixed north-pointing bump and a movable second bump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSimSpec {
    pub regime: Regime,
    pub n: usize,
    pub n_points: usize,
    pub seed: u64,
    /// Bump height.
    pub amplitude: f64,
    /// Von Mises concentration of both bumps.
    pub kappa: f64,
    /// Standard deviation (radians) of each group's second-bump location.
    pub spread: [f64; 2],
    /// Log-scale standard deviation of the second bump's concentration, per group.
    pub kappa_spread: [f64; 2],
}

impl CurveSimSpec {
    pub fn new(regime: Regime, n: usize, seed: u64) -> Self {
        Self {
            regime,
            n,
            n_points: crate::shape::DEFAULT_CURVE_POINTS,
            seed,
            amplitude: 0.3,
            kappa: 20.0,
            spread: [0.15, 0.2],
            kappa_spread: [0.0, 0.1],
        }
    }
}

/// Mean angle of the second bump.
pub const SECOND_PEAK_CENTER: f64 = -PI / 6.0;

#[derive(Debug, Clone)]
pub struct CurveGroups {
    pub group_1: Vec<Curve>,
    pub group_2: Vec<Curve>,
    /// Latent second-peak angles.
    pub locations_1: Vec<f64>,
    pub locations_2: Vec<f64>,
}

fn standardize(v: &mut [f64]) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    for x in v.iter_mut() {
        *x = (*x - m) / sd;
    }
}

/// Two standardized vectors with sample correlation exactly `rho`.
fn correlated_pair(u1: Vec<f64>, u2: Vec<f64>, rho: f64) -> (Vec<f64>, Vec<f64>) {
    let mut z1 = u1;
    standardize(&mut z1);
    let n = z1.len() as f64;
    let proj = z1.iter().zip(&u2).map(|(a, b)| a * b).sum::<f64>() / (n - 1.0);
    let mut e: Vec<f64> = u2.iter().zip(&z1).map(|(b, a)| b - proj * a).collect();
    standardize(&mut e);
    let z2 = z1.iter().zip(&e).map(|(a, b)| rho * a + (1.0 - rho * rho).sqrt() * b).collect();
    (z1, z2)
}

fn von_mises_bump(theta: f64, center: f64, kappa: f64) -> f64 {
    (kappa * ((theta - center).cos() - 1.0)).exp()
}

/// Radius `1 + a·vm(θ; π/2, κ) + a·vm(θ; θ₀, κ₀)` with unit-peak von Mises bumps.
pub fn two_bump_contour(grid: Grid, amplitude: f64, kappa: f64, location: f64, second_kappa: f64) -> Result<Curve> {
    Curve::from_fn(grid, |t| {
        let th = 2.0 * PI * t;
        let r = 1.0
            + amplitude * von_mises_bump(th, PI / 2.0, kappa)
            + amplitude * von_mises_bump(th, location, second_kappa);
        [r * th.cos(), r * th.sin()]
    })
}

/// Paired groups of closed contours whose second-bump locations have a
/// prescribed sample correlation across groups.
pub fn gen_curve_group(spec: &CurveSimSpec) -> Result<CurveGroups> {
    if spec.n < 3 {
        return Err(Error::InvalidInput("need at least 3 curves per group".into()));
    }
    let grid = Grid::new(spec.n_points)?;
    let mut rng = stream(spec.seed, 0);
    let u1 = normals(&mut rng, spec.n);
    let u2 = normals(&mut rng, spec.n);
    let (z1, z2) = correlated_pair(u1, u2, spec.regime.correlation());
    let locations_1: Vec<f64> = z1.iter().map(|z| SECOND_PEAK_CENTER + spec.spread[0] * z).collect();
    let locations_2: Vec<f64> = z2.iter().map(|z| SECOND_PEAK_CENTER + spec.spread[1] * z).collect();

    let build = |group: usize, locations: &[f64]| -> Result<Vec<Curve>> {
        locations
            .par_iter()
            .enumerate()
            .map(|(i, &loc)| {
                let mut rng = stream(spec.seed, 1 + (group * spec.n + i) as u64);
                let w: f64 = StandardNormal.sample(&mut rng);
                let k2 = spec.kappa * (spec.kappa_spread[group] * w).exp();
                two_bump_contour(grid, spec.amplitude, spec.kappa, loc, k2)
            })
            .collect()
    };
    Ok(CurveGroups {
        group_1: build(0, &locations_1)?,
        group_2: build(1, &locations_2)?,
        locations_1,
        locations_2,
    })
}

/// Settings of the density recovery experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PdfProtocol {
    pub groups: (u8, u8),
    pub r: usize,
    pub n: usize,
    pub n_points: usize,
    /// Population canonical correlations of the latent coefficients.
    pub target: Vec<f64>,
    /// Latent scores are drawn with standard deviation `score_scale · √λ_j`.
    pub score_scale: f64,
    pub seed: u64,
}

/// Half the eigen-scale keeps the synthesized square roots nonnegative, so
/// squaring them loses no information.
pub const DEFAULT_SCORE_SCALE: f64 = 0.5;

impl PdfProtocol {
    /// The three reference configurations: groups (1,2) with r = 2, (1,3)
    /// with r = 3, (2,3) with r = 4.
    pub fn reference(r: usize, seed: u64) -> Result<Self> {
        let (groups, target) = match r {
            2 => ((1, 2), vec![0.71, 0.27]),
            3 => ((1, 3), vec![0.63, 0.26, 0.12]),
            4 => ((2, 3), vec![0.82, 0.13, 0.11, 0.03]),
            _ => return Err(Error::InvalidInput(format!("no reference configuration for r = {r}"))),
        };
        Ok(Self {
            groups,
            r,
            n: 100,
            n_points: 1000,
            target,
            score_scale: DEFAULT_SCORE_SCALE,
            seed,
        })
    }
}

#[derive(Debug, Clone)]
pub struct PdfRecovery {
    pub rho_truth: Vec<f64>,
    pub rho_hat: Vec<f64>,
    /// Latent coefficient vectors, one row per subject.
    pub x1: DMatrix<f64>,
    pub x2: DMatrix<f64>,
    pub synthesized_1: Vec<Pdf>,
    pub synthesized_2: Vec<Pdf>,
}

/// Ground-truth recovery for densities.
///
/// Latent standard-normal scores with identity marginals and a diagonal
/// cross-covariance `target` give the true correlations. Carrier densities
/// are analysed in `mode`; the centered scores, scaled by
/// `score_scale · √λ_j`, are pushed through the exponential map at each
/// group's base point along its eigenbasis; the synthesized densities are
/// then analysed afresh in the same mode.
pub fn recovery_protocol_pdf(p: &PdfProtocol, mode: TangentMode) -> Result<PdfRecovery> {
    if p.target.len() != p.r {
        return Err(Error::LengthMismatch { expected: p.r, actual: p.target.len() });
    }
    if p.target.iter().any(|c| !(0.0..1.0).contains(c)) {
        return Err(Error::InvalidInput("target correlations must lie in [0, 1)".into()));
    }
    let mut rng = stream(p.seed, 0);
    let mut z1 = DMatrix::zeros(p.n, p.r);
    let mut z2 = DMatrix::zeros(p.n, p.r);
    for i in 0..p.n {
        for j in 0..p.r {
            let a: f64 = StandardNormal.sample(&mut rng);
            let b: f64 = StandardNormal.sample(&mut rng);
            let rho = p.target[j];
            z1[(i, j)] = a;
            z2[(i, j)] = rho * a + (1.0 - rho * rho).sqrt() * b;
        }
    }
    // Zero-mean scores make each group's mean a critical point of the
    // synthesized sample's Karcher variance.
    for z in [&mut z1, &mut z2] {
        for mut col in z.column_iter_mut() {
            let m = col.mean();
            col.add_scalar_mut(-m);
        }
    }

    let grid = Grid::new(p.n_points)?;
    let carrier = |group: u8, k: u64| {
        gen_pdf_group(&PdfSimSpec {
            group,
            n: p.n,
            grid,
            seed: p.seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(k),
        })
    };
    let (a, b) = (carrier(p.groups.0, 1)?, carrier(p.groups.1, 2)?);
    let cfg = PipelineConfig::new(RankRule::Fixed(p.r), RankRule::Fixed(p.r));
    let fitted = tangent_mode_pipeline(GroupData::Pdfs(&a), GroupData::Pdfs(&b), mode, &cfg)?;

    let scale = |z: &DMatrix<f64>, lambda: &[f64]| DMatrix::from_fn(p.n, p.r, |i, j| z[(i, j)] * p.score_scale * lambda[j].sqrt());
    let x1 = scale(&z1, fitted.a.basis.eigenvalues());
    let x2 = scale(&z2, fitted.b.basis.eigenvalues());
    let rho_truth = cca(&x1, &x2, 0.0)?.correlations;

    let synth = |fit: &crate::fpca::GroupFit, x: &DMatrix<f64>| -> Result<Vec<Pdf>> {
        let mean = Srt::from_sphere_point((*fit.base).clone())?;
        (0..p.n)
            .into_par_iter()
            .map(|i| {
                let w: Vec<f64> = x.row(i).iter().copied().collect();
                Ok(pdf_variate_direction(&mean, &fit.basis, &w, &[1.0])?.remove(0))
            })
            .collect()
    };
    let synthesized_1 = synth(&fitted.a, &x1)?;
    let synthesized_2 = synth(&fitted.b, &x2)?;
    let refit = tangent_mode_pipeline(GroupData::Pdfs(&synthesized_1), GroupData::Pdfs(&synthesized_2), mode, &cfg)?;
    let rho_hat = cca(refit.a.coefficients.values(), refit.b.coefficients.values(), 0.0)?.correlations;
    Ok(PdfRecovery {
        rho_truth,
        rho_hat,
        x1,
        x2,
        synthesized_1,
        synthesized_2,
    })
}

#[derive(Debug, Clone)]
pub struct ShapeRecovery {
    /// Sample correlation of the latent second-peak locations.
    pub rho_truth: f64,
    pub rho_hat_separate: Vec<f64>,
    pub rho_hat_transport: Vec<f64>,
    pub locations_1: Vec<f64>,
    pub locations_2: Vec<f64>,
}

/// Ground-truth recovery for shapes: canonical correlations of rank-`r`
/// shape coordinates in separate tangent spaces and after transporting
/// group 1's tangent data and eigenbasis to group 2's mean.
pub fn recovery_protocol_shape(spec: &CurveSimSpec, r: usize, shape: &ShapeConfig) -> Result<ShapeRecovery> {
    let groups = gen_curve_group(spec)?;
    let q = |cs: &[Curve]| cs.par_iter().map(|c| srvf(c, shape)).collect::<Result<Vec<Srvf>>>();
    let (q1, q2) = (q(&groups.group_1)?, q(&groups.group_2)?);
    let mut cfg = PipelineConfig::new(RankRule::Fixed(r), RankRule::Fixed(r));
    cfg.shape = *shape;
    cfg.transport_basis = TransportBasis::Transported;
    let outs = tangent_mode_pipelines(
        GroupData::Shapes(&q1),
        GroupData::Shapes(&q2),
        &[TangentMode::Separate, TangentMode::Transport],
        &cfg,
    )?;
    let rho = |o: &crate::fpca::PipelineOutput| -> Result<Vec<f64>> {
        Ok(cca(o.a.coefficients.values(), o.b.coefficients.values(), 0.0)?.correlations)
    };
    Ok(ShapeRecovery {
        rho_truth: pearson(&groups.locations_1, &groups.locations_2),
        rho_hat_separate: rho(&outs[0])?,
        rho_hat_transport: rho(&outs[1])?,
        locations_1: groups.locations_1,
        locations_2: groups.locations_2,
    })
}

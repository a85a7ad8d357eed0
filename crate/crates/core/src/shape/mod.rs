//! Elastic shape analysis of closed planar curves.
//!
//! Curves are represented by their square-root velocity functions (SRVFs),
//! scaled to unit L² norm and projected onto the closure set
//! `{q : ∫ q|q| dt = 0}`. Shapes are SRVFs modulo rotation and
//! reparameterization; [`register`] removes both nuisance actions and
//! [`shape_distance`] measures the remaining great-circle distance.

mod dp;

use std::sync::Arc;

use nalgebra::{Matrix2, Vector2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fpca::FpcBasis;
use crate::numerics::{inner_unchecked, norm, DiscreteFunction, Dim, Grid};
use crate::sphere::{exp_map, log_map, SpherePoint, TangentVector};

/// Working grid size for curves.
pub const DEFAULT_CURVE_POINTS: usize = 200;

/// How `register` picks the starting point on the target curve.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SeedSearch {
    /// Score every cyclic sample shift by its rotation-aligned L² cost and
    /// run the dynamic program only from the best few local minima.
    ProcrustesScreen,
    /// Run the full rotation/warp alternation from every seed shift.
    ExhaustiveDp,
}

/// Tolerances and iteration caps for the shape pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShapeConfig {
    pub closure_tol: f64,
    pub closure_max_iter: usize,
    /// Lattice size for the dynamic program; the curve grid when `None`.
    pub dp_grid: Option<usize>,
    /// Number of cyclic starting points; a tenth of the curve grid when `None`.
    pub seeds: Option<usize>,
    pub seed_search: SeedSearch,
    /// Screening minima refined by the full alternation.
    pub screen_candidates: usize,
    /// Rotation/warp alternation rounds.
    pub rounds: usize,
    pub mean_tol: f64,
    /// Relative variance decrease below which the mean iteration stops;
    /// registration error puts a floor under the attainable gradient norm.
    pub mean_rel_tol: f64,
    pub mean_max_iter: usize,
    pub mean_step: f64,
}

impl Default for ShapeConfig {
    fn default() -> Self {
        Self {
            closure_tol: 1e-4,
            closure_max_iter: 50,
            dp_grid: None,
            seeds: None,
            seed_search: SeedSearch::ProcrustesScreen,
            screen_candidates: 3,
            rounds: 4,
            mean_tol: 1e-4,
            mean_rel_tol: 1e-3,
            mean_max_iter: 30,
            mean_step: 1.0,
        }
    }
}

impl ShapeConfig {
    fn seeds_for(&self, n: usize) -> usize {
        self.seeds.unwrap_or(n / 10).max(1)
    }

    fn dp_grid_for(&self, n: usize) -> usize {
        self.dp_grid.unwrap_or(n).max(3)
    }
}

/// Closed planar curve sampled on a periodic grid (last sample = first).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Curve {
    beta: DiscreteFunction,
}

impl Curve {
    /// Wraps planar samples whose first and last points coincide.
    pub fn new(beta: DiscreteFunction) -> Result<Self> {
        if beta.dim() != Dim::Planar {
            return Err(Error::DimensionMismatch);
        }
        let pts = beta.points();
        let first = pts[0];
        let last = pts[pts.len() - 1];
        let extent = pts
            .iter()
            .map(|p| p[0].abs().max(p[1].abs()))
            .fold(0.0, f64::max);
        let gap = (first[0] - last[0]).hypot(first[1] - last[1]);
        if gap > 1e-8 * (1.0 + extent) {
            return Err(Error::OpenCurve { gap });
        }
        let mut beta = beta.with_periodic(true);
        beta.close_period();
        Ok(Self { beta })
    }

    /// Samples a closed parametric curve `f: [0, 1] -> R²` with `f(0) = f(1)`.
    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> [f64; 2]) -> Result<Self> {
        Self::new(DiscreteFunction::from_planar_fn(grid, true, f)?)
    }

    /// Resamples a polygon (implicitly closed) uniformly by arc length onto
    /// `n_points` samples.
    pub fn from_points(points: &[[f64; 2]], n_points: usize) -> Result<Self> {
        let grid = Grid::new(n_points)?;
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("curve points"));
        }
        let mut verts: Vec<[f64; 2]> = points.to_vec();
        if verts.len() > 1 && verts.first() == verts.last() {
            verts.pop();
        }
        if verts.len() < 3 {
            return Err(Error::DegenerateCurve);
        }
        let m = verts.len();
        let mut cumulative = Vec::with_capacity(m + 1);
        cumulative.push(0.0);
        for k in 0..m {
            let a = verts[k];
            let b = verts[(k + 1) % m];
            cumulative.push(cumulative[k] + (b[0] - a[0]).hypot(b[1] - a[1]));
        }
        let total = cumulative[m];
        if !(total > 0.0) {
            return Err(Error::DegenerateCurve);
        }
        let mut out = Vec::with_capacity(n_points);
        let mut seg = 0;
        for t in grid.points() {
            let s = t * total;
            while seg + 1 < m && cumulative[seg + 1] < s {
                seg += 1;
            }
            let len = cumulative[seg + 1] - cumulative[seg];
            let frac = if len > 0.0 {
                ((s - cumulative[seg]) / len).clamp(0.0, 1.0)
            } else {
                0.0
            };
            let a = verts[seg];
            let b = verts[(seg + 1) % m];
            out.push([a[0] + frac * (b[0] - a[0]), a[1] + frac * (b[1] - a[1])]);
        }
        out[n_points - 1] = out[0];
        Self::new(DiscreteFunction::planar(grid, true, &out)?)
    }

    pub fn function(&self) -> &DiscreteFunction {
        &self.beta
    }

    pub fn grid(&self) -> Grid {
        self.beta.grid()
    }

    pub fn points(&self) -> Vec<[f64; 2]> {
        self.beta.points()
    }

    pub fn length(&self) -> f64 {
        let p = self.points();
        p.windows(2)
            .map(|w| (w[1][0] - w[0][0]).hypot(w[1][1] - w[0][1]))
            .sum()
    }
}

/// Unit-norm SRVF on the closure set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Srvf {
    q: SpherePoint,
    residual: f64,
}

impl Srvf {
    pub fn point(&self) -> &SpherePoint {
        &self.q
    }

    pub fn into_point(self) -> SpherePoint {
        self.q
    }

    pub fn function(&self) -> &DiscreteFunction {
        self.q.function()
    }

    /// Euclidean norm of `∫ q|q| dt` after projection.
    pub fn residual(&self) -> f64 {
        self.residual
    }

    pub fn grid(&self) -> Grid {
        self.q.function().grid()
    }
}

/// `q = β' / sqrt|β'|`, scaled to unit norm and projected onto the closure set.
pub fn srvf(c: &Curve, cfg: &ShapeConfig) -> Result<Srvf> {
    let d = c.beta.derivative();
    let speed = d.pointwise_norm();
    let mut values = Vec::with_capacity(d.values().len());
    for (k, s) in speed.iter().enumerate() {
        let v = d.sample(k);
        if *s > f64::EPSILON {
            let r = s.sqrt();
            values.extend_from_slice(&[v[0] / r, v[1] / r]);
        } else {
            values.extend_from_slice(&[0.0, 0.0]);
        }
    }
    let f = DiscreteFunction::new(c.grid(), Dim::Planar, true, values)?;
    if norm(&f) < 1e-12 {
        return Err(Error::DegenerateCurve);
    }
    project_to_preshape(SpherePoint::new(f)?, cfg)
}

/// `β(t) = ∫_0^t q|q| ds` by cumulative trapezoid, with the residual closure
/// gap spread linearly and the centroid removed.
pub fn srvf_inverse(q: &SpherePoint, cfg: &ShapeConfig) -> Result<Curve> {
    let f = q.function();
    if f.dim() != Dim::Planar {
        return Err(Error::DimensionMismatch);
    }
    let grid = f.grid();
    let n = grid.len();
    let h = grid.spacing();
    let speed = f.pointwise_norm();
    let v: Vec<[f64; 2]> = (0..n)
        .map(|k| {
            let s = f.sample(k);
            [s[0] * speed[k], s[1] * speed[k]]
        })
        .collect();
    let mut beta = vec![[0.0; 2]; n];
    for k in 1..n {
        for j in 0..2 {
            beta[k][j] = beta[k - 1][j] + 0.5 * h * (v[k - 1][j] + v[k][j]);
        }
    }
    let gap = beta[n - 1];
    let gap_norm = gap[0].hypot(gap[1]);
    if gap_norm > 10.0 * cfg.closure_tol {
        return Err(Error::ClosureGap { gap: gap_norm });
    }
    for (k, b) in beta.iter_mut().enumerate() {
        let t = grid.point(k);
        b[0] -= t * gap[0];
        b[1] -= t * gap[1];
    }
    let m = (n - 1) as f64;
    let cx = beta[..n - 1].iter().map(|b| b[0]).sum::<f64>() / m;
    let cy = beta[..n - 1].iter().map(|b| b[1]).sum::<f64>() / m;
    for b in &mut beta {
        b[0] -= cx;
        b[1] -= cy;
    }
    beta[n - 1] = beta[0];
    Curve::new(DiscreteFunction::planar(grid, true, &beta)?)
}

/// `∫ q(t)|q(t)| dt`, componentwise.
pub fn closure_integral(q: &DiscreteFunction) -> [f64; 2] {
    let speed = q.pointwise_norm();
    let w = q.grid().weights();
    let mut out = [0.0; 2];
    for (k, (s, wk)) in speed.iter().zip(&w).enumerate() {
        let v = q.sample(k);
        out[0] += wk * v[0] * s;
        out[1] += wk * v[1] * s;
    }
    out
}

fn residual_of(q: &DiscreteFunction) -> f64 {
    let r = closure_integral(q);
    r[0].hypot(r[1])
}

/// Gradients of the two closure constraints:
/// `∇G_j = |q| e_j + q_j q / |q|`.
fn closure_gradients(q: &DiscreteFunction) -> [DiscreteFunction; 2] {
    let speed = q.pointwise_norm();
    let mut g1 = Vec::with_capacity(q.values().len());
    let mut g2 = Vec::with_capacity(q.values().len());
    for (k, s) in speed.iter().enumerate() {
        let v = q.sample(k);
        if *s > 0.0 {
            g1.extend_from_slice(&[s + v[0] * v[0] / s, v[0] * v[1] / s]);
            g2.extend_from_slice(&[v[1] * v[0] / s, s + v[1] * v[1] / s]);
        } else {
            g1.extend_from_slice(&[0.0, 0.0]);
            g2.extend_from_slice(&[0.0, 0.0]);
        }
    }
    [
        q.with_values(g1).expect("same layout"),
        q.with_values(g2).expect("same layout"),
    ]
}

/// Newton projection onto `{∫ q|q| = 0, ‖q‖ = 1}`.
///
/// Each iteration moves along the constraint gradients to cancel the
/// linearized residual, renormalizes, and halves the step until the residual
/// drops, so the residual sequence is strictly decreasing.
pub fn project_to_preshape(q: SpherePoint, cfg: &ShapeConfig) -> Result<Srvf> {
    let mut f = q.into_function();
    if f.dim() != Dim::Planar {
        return Err(Error::DimensionMismatch);
    }
    let mut res = residual_of(&f);
    let mut iterations = 0;
    while res > cfg.closure_tol {
        if iterations == cfg.closure_max_iter {
            return Err(Error::ClosureNotConverged {
                residual: res,
                iterations,
            });
        }
        iterations += 1;
        let r = closure_integral(&f);
        let [g1, g2] = closure_gradients(&f);
        let j = Matrix2::new(
            inner_unchecked(&g1, &g1),
            inner_unchecked(&g1, &g2),
            inner_unchecked(&g2, &g1),
            inner_unchecked(&g2, &g2),
        );
        let x = j
            .lu()
            .solve(&Vector2::new(-r[0], -r[1]))
            .ok_or(Error::ClosureNotConverged {
                residual: res,
                iterations,
            })?;
        let mut step = 1.0;
        let mut improved = false;
        for _ in 0..12 {
            let cand = f
                .add_scaled(step * x[0], &g1)?
                .add_scaled(step * x[1], &g2)?;
            let nrm = norm(&cand);
            if nrm > 0.0 {
                let cand = cand.scale(1.0 / nrm);
                let rc = residual_of(&cand);
                if rc < res {
                    f = cand;
                    res = rc;
                    improved = true;
                    break;
                }
            }
            step *= 0.5;
        }
        if !improved {
            return Err(Error::ClosureNotConverged {
                residual: res,
                iterations,
            });
        }
    }
    Ok(Srvf {
        q: SpherePoint::new(f)?,
        residual: res,
    })
}

fn rotate(f: &DiscreteFunction, o: &Matrix2<f64>) -> DiscreteFunction {
    let mut values = Vec::with_capacity(f.values().len());
    for p in f.values().chunks_exact(2) {
        let r = o * Vector2::new(p[0], p[1]);
        values.extend_from_slice(&[r[0], r[1]]);
    }
    f.with_values(values).expect("same layout")
}

fn rotation_between(a: &DiscreteFunction, b: &DiscreteFunction) -> Matrix2<f64> {
    let w = a.grid().weights();
    let mut m = Matrix2::<f64>::zeros();
    for (k, wk) in w.iter().enumerate() {
        let x = a.sample(k);
        let y = b.sample(k);
        for r in 0..2 {
            for c in 0..2 {
                m[(r, c)] += wk * x[r] * y[c];
            }
        }
    }
    let svd = m.svd(true, true);
    let u = svd.u.expect("requested");
    let vt = svd.v_t.expect("requested");
    let uv: Matrix2<f64> = u * vt;
    let d = uv.determinant().signum();
    let d = if d == 0.0 { 1.0 } else { d };
    u * Matrix2::new(1.0, 0.0, 0.0, d) * vt
}

/// Procrustes rotation `O` maximizing `<<q1, O q2>>`.
pub fn optimal_rotation(q1: &Srvf, q2: &Srvf) -> Result<Matrix2<f64>> {
    q1.function().check_compatible(q2.function())?;
    Ok(rotation_between(q1.function(), q2.function()))
}

/// Starts a periodic function `shift` samples later.
fn shift_samples(f: &DiscreteFunction, shift: usize) -> DiscreteFunction {
    let n = f.grid().len();
    let period = n - 1;
    let mut values = Vec::with_capacity(f.values().len());
    for k in 0..n {
        values.extend_from_slice(f.sample((k + shift) % period));
    }
    f.with_values(values).expect("same layout")
}

/// Derivative of an unwrapped circle map (`γ(1) = γ(0) + 1`).
fn warp_derivative(gamma: &DiscreteFunction) -> Vec<f64> {
    let g = gamma.values();
    let n = g.len();
    let h = gamma.grid().spacing();
    let mut out = vec![0.0; n];
    for k in 1..n - 1 {
        out[k] = (g[k + 1] - g[k - 1]) / (2.0 * h);
    }
    let d = (g[1] - (g[n - 2] - 1.0)) / (2.0 * h);
    out[0] = d;
    out[n - 1] = d;
    out
}

/// `O (q ∘ γ) sqrt(γ')` for a periodic `q` and unwrapped circle map `γ`.
fn act(q: &DiscreteFunction, o: &Matrix2<f64>, gamma: &DiscreteFunction) -> Result<DiscreteFunction> {
    let composed = q.compose_warp(gamma)?;
    let rate = warp_derivative(gamma);
    let mut values = composed.into_values();
    for (k, r) in rate.iter().enumerate() {
        let s = r.max(0.0).sqrt();
        values[2 * k] *= s;
        values[2 * k + 1] *= s;
    }
    let rotated = q.with_values(values)?;
    Ok(rotate(&rotated, o))
}

fn squared_distance(a: &DiscreteFunction, b: &DiscreteFunction) -> f64 {
    let d = a.sub(b).expect("compatible");
    inner_unchecked(&d, &d)
}

/// DP warp from `q2` onto `q1`, both on the curve grid; values in `[0, 1]`.
fn dp_warp(q1: &DiscreteFunction, q2: &DiscreteFunction, lattice: usize) -> Vec<f64> {
    let n = q1.grid().len();
    let g = Grid::new(lattice).expect("lattice has at least 3 points");
    let a = q1.resample(g).points();
    let b = q2.resample(g).points();
    let (path, _) = dp::dp_path(&a, &b);
    dp::path_to_warp(&path, lattice, n)
}

/// Unwrapped circle map stored on `[0, 1]`, extended by `γ(x + 1) = γ(x) + 1`.
fn eval_circle_map(gamma: &DiscreteFunction, x: f64) -> f64 {
    let whole = x.floor();
    gamma.eval(x - whole)[0] + whole
}

/// Cyclic moving average of `γ(t) - t`, `passes` times with half-width `w`.
///
/// Averaging preserves monotonicity and the circle-map boundary condition and
/// removes the staircase left by the lattice slopes.
fn smooth_circle_map(gamma: &DiscreteFunction, w: usize, passes: usize) -> DiscreteFunction {
    let grid = gamma.grid();
    let period = grid.len() - 1;
    let mut delta: Vec<f64> = (0..period).map(|k| gamma.values()[k] - grid.point(k)).collect();
    let width = (2 * w + 1) as f64;
    for _ in 0..passes {
        let prev = delta.clone();
        for (k, d) in delta.iter_mut().enumerate() {
            let mut acc = 0.0;
            for j in 0..=2 * w {
                acc += prev[(k + period + j - w) % period];
            }
            *d = acc / width;
        }
    }
    let mut values: Vec<f64> = (0..period).map(|k| delta[k] + grid.point(k)).collect();
    values.push(values[0] + 1.0);
    DiscreteFunction::scalar(grid, values).expect("finite")
}

fn shifted_identity(grid: Grid, offset: f64) -> DiscreteFunction {
    DiscreteFunction::from_scalar_fn(grid, false, |t| t + offset).expect("finite")
}

/// Reparameterization (including the seed offset) minimizing
/// `‖q1 - (q2 ∘ γ) sqrt(γ')‖²`, searched exhaustively over `seeds` cyclic
/// starting points of `q2`.
///
/// The returned warp is an unwrapped circle map on the curve grid. The
/// identity is always a candidate, so the cost never exceeds `‖q1 - q2‖²`.
pub fn optimal_warp(
    q1: &Srvf,
    q2: &Srvf,
    grid_size: usize,
    seeds: usize,
) -> Result<(DiscreteFunction, f64)> {
    let f1 = q1.function();
    let f2 = q2.function();
    f1.check_compatible(f2)?;
    let grid = f1.grid();
    let period = grid.len() - 1;
    let lattice = grid_size.max(3);
    let id = Matrix2::identity();
    let mut best = (shifted_identity(grid, 0.0), squared_distance(f1, f2));
    for s in 0..seeds.max(1) {
        let shift = (s * period + seeds / 2) / seeds.max(1) % period;
        let shifted = shift_samples(f2, shift);
        let w = dp_warp(f1, &shifted, lattice);
        let offset = shift as f64 / period as f64;
        let gamma = DiscreteFunction::scalar(grid, w.iter().map(|v| v + offset).collect())?;
        let cost = squared_distance(f1, &act(f2, &id, &gamma)?);
        if cost < best.1 {
            best = (gamma, cost);
        }
    }
    Ok(best)
}

/// Rotation and reparameterization aligning a target to a template.
#[derive(Debug, Clone, PartialEq)]
pub struct Registration {
    pub rotation: Matrix2<f64>,
    /// Unwrapped circle map on the curve grid, `γ(1) = γ(0) + 1`.
    pub warp: DiscreteFunction,
    /// `‖q1 - O (q2 ∘ γ) sqrt(γ')‖²` before re-projection.
    pub cost: f64,
    /// Best cost after each alternation round; non-increasing.
    pub round_costs: Vec<f64>,
}

/// Coarse screening lattice: the DP lattice divided by this, at least
/// `COARSE_MIN` points.
const COARSE_DIVISOR: usize = 4;
const COARSE_MIN: usize = 25;

/// `(half-width, passes)` smoothing levels tried on every DP warp.
const SMOOTHING: [(usize, usize); 6] = [(0, 0), (1, 1), (2, 2), (3, 3), (5, 3), (8, 3)];

#[derive(Clone)]
struct Candidate {
    rotation: Matrix2<f64>,
    warp: DiscreteFunction,
    f: DiscreteFunction,
    cost: f64,
}

/// One DP pass cutting the circle at sample `cut`. Returns the best smoothing
/// level as `(warp, registered target, cost)`.
fn warp_step(
    f1: &DiscreteFunction,
    f2: &DiscreteFunction,
    cur: &Candidate,
    cut: usize,
    lattice: usize,
) -> Result<(DiscreteFunction, DiscreteFunction, f64)> {
    let grid = f1.grid();
    let period = grid.len() - 1;
    let w = dp_warp(&shift_samples(f1, cut), &shift_samples(&cur.f, cut), lattice);
    let c = cut as f64 / period as f64;
    let composed: Vec<f64> = (0..=period)
        .map(|k| {
            let inner = if k >= cut {
                w[k - cut] + c
            } else {
                w[k + period - cut] + c - 1.0
            };
            eval_circle_map(&cur.warp, inner)
        })
        .collect();
    let raw = DiscreteFunction::scalar(grid, composed)?;
    let mut chosen: Option<(DiscreteFunction, DiscreteFunction, f64)> = None;
    for (w, passes) in SMOOTHING {
        let warp = if w == 0 { raw.clone() } else { smooth_circle_map(&raw, w, passes) };
        let f = act(f2, &cur.rotation, &warp)?;
        let cost = squared_distance(f1, &f);
        if chosen.as_ref().is_none_or(|c| cost < c.2) {
            chosen = Some((warp, f, cost));
        }
    }
    Ok(chosen.expect("at least one smoothing level"))
}

#[allow(clippy::too_many_arguments)]
fn alternate(
    f1: &DiscreteFunction,
    f2: &DiscreteFunction,
    start: Candidate,
    rounds: std::ops::Range<usize>,
    lattice: usize,
    best: &mut Candidate,
    trace: &mut Vec<f64>,
) -> Result<()> {
    let grid = f1.grid();
    let period = grid.len() - 1;
    let mut cur = start;
    let keep = |c: &Candidate, best: &mut Candidate| {
        if c.cost < best.cost {
            *best = Candidate {
                rotation: c.rotation,
                warp: c.warp.clone(),
                f: c.f.clone(),
                cost: c.cost,
            };
        }
    };
    keep(&cur, best);
    for round in rounds {
        if round > 0 {
            let o = rotation_between(f1, &cur.f);
            cur.rotation = o * cur.rotation;
            cur.f = rotate(&cur.f, &o);
            cur.cost = squared_distance(f1, &cur.f);
            keep(&cur, best);
        }
        // Odd rounds cut the circle half a period away, so the point pinned
        // by the previous round's boundary condition is free to move.
        let cut = if round % 2 == 1 { period / 2 } else { 0 };
        let (warp, f, cost) = warp_step(f1, f2, &cur, cut, lattice)?;
        cur.warp = warp;
        cur.f = f;
        cur.cost = cost;
        keep(&cur, best);
        let o = rotation_between(f1, &cur.f);
        cur.rotation = o * cur.rotation;
        cur.f = rotate(&cur.f, &o);
        cur.cost = squared_distance(f1, &cur.f);
        keep(&cur, best);
        trace.push(best.cost);
    }
    Ok(())
}

/// Aligns `q2` to `q1` by alternating Procrustes rotation and DP warping,
/// returning the registration and the registered target `q2*` re-projected
/// onto the closure set.
pub fn register(q1: &Srvf, q2: &Srvf, cfg: &ShapeConfig) -> Result<(Registration, Srvf)> {
    let f1 = q1.function();
    let f2 = q2.function();
    f1.check_compatible(f2)?;
    let grid = f1.grid();
    let n = grid.len();
    let period = n - 1;
    let seeds = cfg.seeds_for(n);
    let lattice = cfg.dp_grid_for(n);
    let id = Matrix2::identity();
    let mut best = Candidate {
        rotation: id,
        warp: shifted_identity(grid, 0.0),
        f: f2.clone(),
        cost: squared_distance(f1, f2),
    };
    let trace;

    // Procrustes screening is cheap enough to score every sample shift.
    let shifts: Vec<usize> = match cfg.seed_search {
        SeedSearch::ProcrustesScreen => (0..period).collect(),
        SeedSearch::ExhaustiveDp => (0..seeds).map(|s| (s * period + seeds / 2) / seeds % period).collect(),
    };
    let starts: Vec<Candidate> = shifts
        .into_iter()
        .map(|shift| {
            let shifted = shift_samples(f2, shift);
            let o = rotation_between(f1, &shifted);
            let f = rotate(&shifted, &o);
            let cost = squared_distance(f1, &f);
            Candidate {
                rotation: o,
                warp: shifted_identity(grid, shift as f64 / period as f64),
                f,
                cost,
            }
        })
        .collect();

    match cfg.seed_search {
        SeedSearch::ProcrustesScreen => {
            // Circular local minima of the screening cost, best first.
            let m = starts.len();
            let mut minima: Vec<usize> = (0..m)
                .filter(|&k| {
                    let c = starts[k].cost;
                    c <= starts[(k + m - 1) % m].cost && c <= starts[(k + 1) % m].cost
                })
                .collect();
            minima.sort_by(|&a, &b| starts[a].cost.total_cmp(&starts[b].cost));
            minima.truncate(cfg.screen_candidates.max(1));
            // Strong warps move the right seed off the rigid minima, so evenly
            // spaced seeds compete too, scored by one coarse-lattice pass.
            let coarse = (lattice / COARSE_DIVISOR).max(COARSE_MIN).min(lattice);
            let mut pool = minima;
            for s in 0..seeds {
                let k = (s * period + seeds / 2) / seeds % period;
                if !pool.contains(&k) {
                    pool.push(k);
                }
            }
            let mut scored = Vec::with_capacity(pool.len());
            for k in pool {
                let (_, f, _) = warp_step(f1, f2, &starts[k], 0, coarse)?;
                let o = rotation_between(f1, &f);
                scored.push((squared_distance(f1, &rotate(&f, &o)), k));
            }
            scored.sort_by(|a, b| a.0.total_cmp(&b.0));
            let minima: Vec<usize> = scored
                .into_iter()
                .take(cfg.screen_candidates.max(1))
                .map(|(_, k)| k)
                .collect();
            // One round per surviving seed picks the basin; only the winner
            // runs the remaining rounds.
            let mut results = Vec::with_capacity(minima.len());
            let mut starts: Vec<Option<Candidate>> = starts.into_iter().map(Some).collect();
            let first = cfg.rounds.min(1);
            for k in minima {
                let start = starts[k].take().expect("distinct minima");
                let mut local = best.clone();
                let mut local_trace = Vec::new();
                alternate(f1, f2, start, 0..first, lattice, &mut local, &mut local_trace)?;
                results.push((local, local_trace));
            }
            let (b, mut t) = results
                .into_iter()
                .reduce(|a, b| if b.0.cost < a.0.cost { b } else { a })
                .expect("at least one minimum");
            best = b.clone();
            alternate(f1, f2, b, first..cfg.rounds, lattice, &mut best, &mut t)?;
            trace = t;
        }
        SeedSearch::ExhaustiveDp => {
            let mut per_seed = Vec::new();
            for start in starts {
                let mut local = best.clone();
                let mut local_trace = Vec::new();
                alternate(f1, f2, start, 0..cfg.rounds, lattice, &mut local, &mut local_trace)?;
                per_seed.push((local, local_trace));
            }
            let (b, t) = per_seed
                .into_iter()
                .reduce(|a, b| if b.0.cost < a.0.cost { b } else { a })
                .expect("at least one seed");
            best = b;
            trace = t;
        }
    }

    let registered = project_to_preshape(SpherePoint::new(best.f)?, cfg)?;
    Ok((
        Registration {
            rotation: best.rotation,
            warp: best.warp,
            cost: best.cost,
            round_costs: trace,
        },
        registered,
    ))
}

fn registered_distance(q1: &Srvf, q2: &Srvf, cfg: &ShapeConfig) -> Result<f64> {
    let (_, star) = register(q1, q2, cfg)?;
    Ok(inner_unchecked(q1.function(), star.function())
        .clamp(-1.0, 1.0)
        .acos())
}

/// `arccos <q1, q2*>`, symmetrized as the smaller of both registration
/// directions.
pub fn shape_distance(q1: &Srvf, q2: &Srvf, cfg: &ShapeConfig) -> Result<f64> {
    q1.function().check_compatible(q2.function())?;
    let (a, b) = rayon::join(
        || registered_distance(q1, q2, cfg),
        || registered_distance(q2, q1, cfg),
    );
    Ok(a?.min(b?))
}

/// Orthonormal normal directions `φ1, φ2`: closure-constraint gradients at
/// `mean`, Gram-Schmidt orthonormalized against `mean` and each other.
pub fn normal_frame(mean: &SpherePoint) -> Result<[DiscreteFunction; 2]> {
    let m = mean.function();
    let [g1, g2] = closure_gradients(m);
    let mut out: Vec<DiscreteFunction> = Vec::with_capacity(2);
    for g in [g1, g2] {
        let mut v = g.add_scaled(-inner_unchecked(&g, m), m)?;
        for e in &out {
            v = v.add_scaled(-inner_unchecked(&v, e), e)?;
        }
        let nrm = norm(&v);
        if nrm < 1e-12 {
            return Err(Error::ZeroNorm);
        }
        out.push(v.scale(1.0 / nrm));
    }
    let phi2 = out.pop().expect("two directions");
    let phi1 = out.pop().expect("two directions");
    Ok([phi1, phi2])
}

/// Log map of an already registered SRVF, with the normal directions removed.
fn pi_registered(
    q_star: &Srvf,
    mean: &Arc<SpherePoint>,
    frame: &[DiscreteFunction; 2],
) -> Result<TangentVector> {
    let v = log_map(mean, q_star.point())?;
    let mut f = v.vector().clone();
    for phi in frame {
        f = f.add_scaled(-inner_unchecked(&f, phi), phi)?;
    }
    TangentVector::project(mean.clone(), f)
}

/// Moves tangent data at the shape mean `from` to the representative of the
/// same shape registered to `template`.
///
/// The registration's rotation and reparameterization act linearly and
/// isometrically on functions, so each vector is carried by that same action
/// and then cleaned of its closure-normal and radial components at the new
/// base. Returns the new representative and the carried vectors.
pub fn align_tangents(
    from: &Srvf,
    template: &Srvf,
    tangents: &[TangentVector],
    cfg: &ShapeConfig,
) -> Result<(Srvf, Vec<TangentVector>)> {
    let (reg, aligned) = register(template, from, cfg)?;
    let base = Arc::new(aligned.point().clone());
    let frame = normal_frame(&base)?;
    let moved = tangents
        .par_iter()
        .map(|t| {
            let mut f = act(t.vector(), &reg.rotation, &reg.warp)?;
            for phi in &frame {
                f = f.add_scaled(-inner_unchecked(&f, phi), phi)?;
            }
            TangentVector::project(base.clone(), f)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((aligned, moved))
}

/// Registers `q` to `mean`, maps it to the tangent space at `mean` and
/// removes the components along the closure normals.
pub fn project_pi(q: &Srvf, mean: &Srvf, cfg: &ShapeConfig) -> Result<TangentVector> {
    let (_, star) = register(mean, q, cfg)?;
    let base = Arc::new(mean.point().clone());
    let frame = normal_frame(&base)?;
    pi_registered(&star, &base, &frame)
}

/// Step halvings tried before the mean iteration gives up.
const MEAN_HALVINGS: usize = 4;

/// Result of the intrinsic shape mean iteration.
#[derive(Debug, Clone)]
pub struct ShapeMeanResult {
    pub mean: Srvf,
    pub iterations: usize,
    pub converged: bool,
    pub gradient_norm: f64,
    /// `(1/n) Σ d(mean, q_i*)²` at every accepted mean.
    pub variance_trace: Vec<f64>,
    /// Inputs registered to the final mean.
    pub registered: Vec<Srvf>,
}

struct MeanEval {
    mean: Srvf,
    registered: Vec<Srvf>,
    gradient: DiscreteFunction,
    variance: f64,
}

fn evaluate_shape_mean(mean: Srvf, qs: &[Srvf], cfg: &ShapeConfig) -> Result<MeanEval> {
    let registered: Vec<Srvf> = qs
        .par_iter()
        .map(|q| register(&mean, q, cfg).map(|(_, s)| s))
        .collect::<Result<_>>()?;
    let base = Arc::new(mean.point().clone());
    let frame = normal_frame(&base)?;
    let tangents: Vec<TangentVector> = registered
        .par_iter()
        .map(|s| pi_registered(s, &base, &frame))
        .collect::<Result<_>>()?;
    let n = qs.len() as f64;
    let mut gradient = mean.function().zeros_like();
    let mut variance = 0.0;
    for (t, s) in tangents.iter().zip(&registered) {
        gradient = gradient.add_scaled(1.0 / n, t.vector())?;
        let d = inner_unchecked(mean.function(), s.function())
            .clamp(-1.0, 1.0)
            .acos();
        variance += d * d / n;
    }
    Ok(MeanEval {
        mean,
        registered,
        gradient,
        variance,
    })
}

fn initial_mean(qs: &[Srvf], cfg: &ShapeConfig) -> Result<Srvf> {
    let n = qs.len() as f64;
    let mut sum = qs[0].function().zeros_like();
    for q in qs {
        sum = sum.add(q.function())?;
    }
    if norm(&sum) / n >= 0.5 {
        return project_to_preshape(SpherePoint::new(sum)?, cfg);
    }
    let aligned: Vec<Srvf> = qs
        .par_iter()
        .map(|q| register(&qs[0], q, cfg).map(|(_, s)| s))
        .collect::<Result<_>>()?;
    let mut sum = qs[0].function().zeros_like();
    for q in &aligned {
        sum = sum.add(q.function())?;
    }
    match SpherePoint::new(sum) {
        Ok(p) => project_to_preshape(p, cfg),
        Err(_) => Ok(qs[0].clone()),
    }
}

/// Intrinsic mean of shapes: register every input to the current mean, take
/// the normal-projected log maps, step along their average and re-project.
///
/// Steps that would raise the variance functional are halved; the iteration
/// stops when the mean tangent norm reaches `mean_tol`, when the relative
/// variance decrease falls below `mean_rel_tol`, or when no halved step
/// descends (all three count as converged: the last two mean the
/// registration noise floor is reached), or after `mean_max_iter` iterations.
pub fn shape_karcher_mean(qs: &[Srvf], cfg: &ShapeConfig) -> Result<ShapeMeanResult> {
    if qs.is_empty() {
        return Err(Error::InvalidInput("shape mean of an empty set".into()));
    }
    for q in &qs[1..] {
        qs[0].function().check_compatible(q.function())?;
    }
    let mut state = evaluate_shape_mean(initial_mean(qs, cfg)?, qs, cfg)?;
    let mut trace = vec![state.variance];
    let mut iterations = 0;
    let mut stalled_out = false;
    while iterations < cfg.mean_max_iter && norm(&state.gradient) > cfg.mean_tol {
        iterations += 1;
        let base = state.mean.point().clone();
        let base_arc = Arc::new(base.clone());
        let mut step = cfg.mean_step;
        let mut accepted = None;
        for _ in 0..MEAN_HALVINGS {
            let v = TangentVector::from_parts(base_arc.clone(), state.gradient.scale(step));
            let cand = exp_map(&base, &v).and_then(|p| project_to_preshape(p, cfg));
            if let Ok(cand) = cand {
                let next = evaluate_shape_mean(cand, qs, cfg)?;
                if next.variance <= state.variance {
                    accepted = Some(next);
                    break;
                }
            }
            step *= 0.5;
        }
        match accepted {
            Some(next) => {
                let stalled = state.variance - next.variance <= cfg.mean_rel_tol * state.variance;
                state = next;
                trace.push(state.variance);
                if stalled {
                    stalled_out = true;
                    break;
                }
            }
            None => {
                stalled_out = true;
                break;
            }
        }
    }
    let gradient_norm = norm(&state.gradient);
    Ok(ShapeMeanResult {
        mean: state.mean,
        iterations,
        converged: gradient_norm <= cfg.mean_tol || stalled_out,
        gradient_norm,
        variance_trace: trace,
        registered: state.registered,
    })
}

/// Shape mean (unless supplied) and normal-projected tangent vectors of
/// every input at it.
#[derive(Debug, Clone)]
pub struct ShapeTangentCoordinates {
    pub mean: Srvf,
    pub base: Arc<SpherePoint>,
    pub tangents: Vec<TangentVector>,
    pub karcher: Option<ShapeMeanResult>,
}

pub fn shape_tangent_coordinates(
    qs: &[Srvf],
    mean_override: Option<&Srvf>,
    cfg: &ShapeConfig,
) -> Result<ShapeTangentCoordinates> {
    if qs.len() < 2 {
        return Err(Error::InvalidInput("need at least 2 curves".into()));
    }
    let (mean, registered, karcher) = match mean_override {
        Some(m) => {
            let registered: Vec<Srvf> = qs
                .par_iter()
                .map(|q| register(m, q, cfg).map(|(_, s)| s))
                .collect::<Result<_>>()?;
            (m.clone(), registered, None)
        }
        None => {
            let k = shape_karcher_mean(qs, cfg)?;
            (k.mean.clone(), k.registered.clone(), Some(k))
        }
    };
    let base = Arc::new(mean.point().clone());
    let frame = normal_frame(&base)?;
    let tangents = registered
        .par_iter()
        .map(|s| pi_registered(s, &base, &frame))
        .collect::<Result<Vec<_>>>()?;
    Ok(ShapeTangentCoordinates {
        mean,
        base,
        tangents,
        karcher,
    })
}

/// Curves along the canonical variate direction `v = Σ_i e_i w_i`: for each
/// `eps`, the exp map of `eps v` at the mean, re-projected onto the closure
/// set and integrated back to a curve.
pub fn shape_variate_direction(
    mean: &Srvf,
    basis: &FpcBasis,
    weights: &[f64],
    epsilons: &[f64],
    cfg: &ShapeConfig,
) -> Result<Vec<Curve>> {
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
            let q = project_to_preshape(p, cfg)?;
            srvf_inverse(q.point(), cfg)
        })
        .collect()
}

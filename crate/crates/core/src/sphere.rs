//! Geometry of the unit Hilbert sphere in L².
//!
//! Square-root transforms of densities and square-root velocity functions of
//! unit-length curves are both points on this sphere, so distances,
//! exponential and inverse-exponential maps, sample means and parallel
//! transport all have closed forms.

use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{inner_product, inner_unchecked, norm, DiscreteFunction};

/// Largest distance at which the inverse-exponential map is accepted.
pub const ANTIPODE_MARGIN: f64 = 1e-6;
const ZERO_TANGENT: f64 = 1e-12;
const TANGENT_TOL: f64 = 1e-6;

/// Unit-norm function; renormalized on construction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpherePoint {
    f: DiscreteFunction,
}

impl SpherePoint {
    pub fn new(f: DiscreteFunction) -> Result<Self> {
        let n = norm(&f);
        if !(n > 0.0) {
            return Err(Error::ZeroNorm);
        }
        Ok(Self { f: f.scale(1.0 / n) })
    }

    pub fn function(&self) -> &DiscreteFunction {
        &self.f
    }

    pub fn into_function(self) -> DiscreteFunction {
        self.f
    }

    pub fn negate(&self) -> Self {
        Self { f: self.f.scale(-1.0) }
    }
}

/// Element of the tangent space at `base`.
#[derive(Debug, Clone)]
pub struct TangentVector {
    base: Arc<SpherePoint>,
    v: DiscreteFunction,
}

impl TangentVector {
    /// Checks orthogonality to the base point within `1e-6`.
    pub fn new(base: Arc<SpherePoint>, v: DiscreteFunction) -> Result<Self> {
        let ip = inner_product(base.function(), &v)?;
        if ip.abs() > TANGENT_TOL {
            return Err(Error::NotTangent(ip));
        }
        Ok(Self { base, v })
    }

    /// Removes the component of `v` along the base point.
    pub fn project(base: Arc<SpherePoint>, v: DiscreteFunction) -> Result<Self> {
        let ip = inner_product(base.function(), &v)?;
        let v = v.add_scaled(-ip, base.function())?;
        Ok(Self { base, v })
    }

    pub fn zero(base: Arc<SpherePoint>) -> Self {
        let v = base.function().zeros_like();
        Self { base, v }
    }

    pub fn base(&self) -> &Arc<SpherePoint> {
        &self.base
    }

    pub fn vector(&self) -> &DiscreteFunction {
        &self.v
    }

    pub fn norm(&self) -> f64 {
        norm(&self.v)
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            base: self.base.clone(),
            v: self.v.scale(s),
        }
    }

    pub(crate) fn from_parts(base: Arc<SpherePoint>, v: DiscreteFunction) -> Self {
        Self { base, v }
    }
}

fn clamped_inner(a: &SpherePoint, b: &SpherePoint) -> Result<f64> {
    Ok(inner_product(a.function(), b.function())?.clamp(-1.0, 1.0))
}

/// Great-circle distance `arccos <p1, p2>` in `[0, pi]`.
pub fn geodesic_distance(p1: &SpherePoint, p2: &SpherePoint) -> Result<f64> {
    Ok(clamped_inner(p1, p2)?.acos())
}

/// `cos(|v|) base + sin(|v|) v / |v|`.
pub fn exp_map(base: &SpherePoint, v: &TangentVector) -> Result<SpherePoint> {
    base.function().check_compatible(v.vector())?;
    let len = v.norm();
    if len < ZERO_TANGENT {
        return Ok(base.clone());
    }
    let f = base
        .function()
        .combine(len.cos(), v.vector(), len.sin() / len)?;
    SpherePoint::new(f)
}

/// `(d / sin d) (target - cos(d) base)` with `d` the geodesic distance.
pub fn log_map(base: &Arc<SpherePoint>, target: &SpherePoint) -> Result<TangentVector> {
    let c = clamped_inner(base, target)?;
    let d = c.acos();
    if d >= std::f64::consts::PI - ANTIPODE_MARGIN {
        return Err(Error::Antipode { distance: d });
    }
    if d < ZERO_TANGENT {
        return Ok(TangentVector::zero(base.clone()));
    }
    let scale = d / d.sin();
    let v = target
        .function()
        .combine(scale, base.function(), -scale * c)?;
    // Re-orthogonalize against rounding in the clamped cosine.
    TangentVector::project(base.clone(), v)
}

/// Transports `v` from its base point to `to` along the connecting geodesic.
///
/// Uses `v - <v, to> / (1 + <from, to>) (from + to)`, which is an isometry
/// between the two tangent spaces and agrees with transport along the great
/// circle.
pub fn parallel_transport(v: &TangentVector, to: &Arc<SpherePoint>) -> Result<TangentVector> {
    let from = v.base();
    let c = clamped_inner(from, to)?;
    let d = c.acos();
    if d >= std::f64::consts::PI - ANTIPODE_MARGIN {
        return Err(Error::Antipode { distance: d });
    }
    let coef = inner_product(v.vector(), to.function())? / (1.0 + c);
    let sum = from.function().add(to.function())?;
    let out = v.vector().add_scaled(-coef, &sum)?;
    Ok(TangentVector::from_parts(to.clone(), out))
}

/// Tuning for the intrinsic sample mean.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KarcherConfig {
    pub step: f64,
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for KarcherConfig {
    fn default() -> Self {
        Self {
            step: 0.5,
            tol: 1e-6,
            max_iter: 100,
        }
    }
}

#[derive(Debug, Clone)]
pub struct KarcherMeanResult {
    pub mean: SpherePoint,
    pub iterations: usize,
    pub final_gradient_norm: f64,
    pub converged: bool,
    /// Variance functional `(1/n) Σ d(mean, p_i)²`, one entry per visited mean.
    pub variance_trace: Vec<f64>,
}

struct MeanState {
    mean: Arc<SpherePoint>,
    gradient: DiscreteFunction,
    variance: f64,
}

fn evaluate_mean(mean: Arc<SpherePoint>, points: &[SpherePoint]) -> Result<MeanState> {
    let logs: Vec<TangentVector> = points
        .par_iter()
        .map(|p| log_map(&mean, p))
        .collect::<Result<_>>()?;
    let n = points.len() as f64;
    let mut gradient = mean.function().zeros_like();
    let mut variance = 0.0;
    for v in &logs {
        gradient = gradient.add_scaled(1.0 / n, v.vector())?;
        variance += inner_unchecked(v.vector(), v.vector()) / n;
    }
    Ok(MeanState {
        mean,
        gradient,
        variance,
    })
}

/// Intrinsic (Karcher) mean by fixed-point iteration
/// `mean <- exp_mean(step * average of log_mean(p_i))`, started at the
/// renormalized extrinsic average.
///
/// Steps that would increase the variance functional are halved, so the
/// recorded variance never increases. Hitting `max_iter` is reported through
/// `converged = false` rather than an error.
pub fn karcher_mean(points: &[SpherePoint], config: &KarcherConfig) -> Result<KarcherMeanResult> {
    let first = points
        .first()
        .ok_or_else(|| Error::InvalidInput("karcher mean of an empty set".into()))?;
    let mut extrinsic = first.function().zeros_like();
    for p in points {
        extrinsic = extrinsic.add(p.function())?;
    }
    let init = SpherePoint::new(extrinsic).unwrap_or_else(|_| first.clone());
    let mut state = evaluate_mean(Arc::new(init), points)?;
    let mut trace = vec![state.variance];
    let mut iterations = 0;
    let mut converged = false;
    while iterations < config.max_iter {
        let grad_norm = norm(&state.gradient);
        if grad_norm <= config.tol {
            converged = true;
            break;
        }
        iterations += 1;
        let mut step = config.step;
        let mut accepted = None;
        for _ in 0..20 {
            let v = TangentVector::from_parts(state.mean.clone(), state.gradient.scale(step));
            let candidate = exp_map(&state.mean, &v)?;
            let next = evaluate_mean(Arc::new(candidate), points)?;
            if next.variance <= state.variance {
                accepted = Some(next);
                break;
            }
            step *= 0.5;
        }
        match accepted {
            Some(next) => {
                state = next;
                trace.push(state.variance);
            }
            // No descent at machine precision; reported through `converged`.
            None => break,
        }
    }
    let final_gradient_norm = norm(&state.gradient);
    if final_gradient_norm <= config.tol {
        converged = true;
    }
    let mean = Arc::try_unwrap(state.mean).unwrap_or_else(|a| (*a).clone());
    Ok(KarcherMeanResult {
        mean,
        iterations,
        final_gradient_norm,
        converged,
        variance_trace: trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{Dim, Grid};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn grid() -> Grid {
        Grid::new(401).unwrap()
    }

    fn point(f: impl Fn(f64) -> f64) -> SpherePoint {
        SpherePoint::new(DiscreteFunction::from_scalar_fn(grid(), false, f).unwrap()).unwrap()
    }

    fn random_point(rng: &mut ChaCha8Rng, base: &SpherePoint, spread: f64) -> SpherePoint {
        let a: [f64; 4] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let v = DiscreteFunction::from_scalar_fn(grid(), false, |t| {
            spread * (a[0] * (PI * t).sin() + a[1] * (2.0 * PI * t).cos() + a[2] * t + a[3] * t * t)
        })
        .unwrap();
        let base = Arc::new(base.clone());
        let v = TangentVector::project(base.clone(), v).unwrap();
        exp_map(&base, &v).unwrap()
    }

    fn random_tangent(rng: &mut ChaCha8Rng, base: &Arc<SpherePoint>, len: f64) -> TangentVector {
        let a: [f64; 3] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let v = DiscreteFunction::from_scalar_fn(grid(), false, |t| {
            a[0] * (3.0 * t).sin() + a[1] * (t - 0.5).powi(3) + a[2]
        })
        .unwrap();
        let v = TangentVector::project(base.clone(), v).unwrap();
        v.scale(len / v.norm())
    }

    #[test]
    fn distance_examples() {
        let p = point(|_| 1.0);
        assert!(geodesic_distance(&p, &p).unwrap().abs() < 1e-7);
        let g = Grid::new(1001).unwrap();
        let p = SpherePoint::new(DiscreteFunction::from_scalar_fn(g, false, |_| 1.0).unwrap()).unwrap();
        let q = SpherePoint::new(DiscreteFunction::from_scalar_fn(g, false, |t| (2.0 * t).sqrt()).unwrap()).unwrap();
        let expected = (2.0 * 2f64.sqrt() / 3.0).acos();
        assert!((geodesic_distance(&p, &q).unwrap() - expected).abs() < 1e-4);
        assert!((geodesic_distance(&p, &p.negate()).unwrap() - PI).abs() < 1e-7);
    }

    #[test]
    fn exp_of_zero_is_base() {
        let p = Arc::new(point(|t| 1.0 + t));
        assert_eq!(exp_map(&p, &TangentVector::zero(p.clone())).unwrap(), *p);
    }

    #[test]
    fn quarter_circle_is_orthogonal() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = Arc::new(point(|t| 1.0 + t));
        let v = random_tangent(&mut rng, &p, PI / 2.0);
        let q = exp_map(&p, &v).unwrap();
        assert!(inner_product(p.function(), q.function()).unwrap().abs() < 1e-8);
    }

    #[test]
    fn exp_log_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p = Arc::new(point(|t| (1.0 + 3.0 * t).sqrt()));
        for len in [1e-4, 0.3, 1.5, 2.8, PI - 0.1] {
            let v = random_tangent(&mut rng, &p, len);
            let back = log_map(&p, &exp_map(&p, &v).unwrap()).unwrap();
            let diff = norm(&back.vector().sub(v.vector()).unwrap());
            assert!(diff < 1e-8, "len {len}: {diff}");
        }
        for _ in 0..10 {
            let q = random_point(&mut rng, &p, 0.8);
            let v = log_map(&p, &q).unwrap();
            let back = exp_map(&p, &v).unwrap();
            assert!(norm(&back.function().sub(q.function()).unwrap()) < 1e-8);
            assert!((v.norm() - geodesic_distance(&p, &q).unwrap()).abs() < 1e-10);
            assert!(inner_product(v.vector(), p.function()).unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn log_of_self_is_zero() {
        let p = Arc::new(point(|t| t + 0.1));
        assert!(log_map(&p, &p).unwrap().norm() < 1e-12);
    }

    #[test]
    fn log_rejects_antipode() {
        let p = Arc::new(point(|t| t + 0.1));
        assert!(matches!(log_map(&p, &p.negate()), Err(Error::Antipode { .. })));
    }

    #[test]
    fn tangent_constructor_checks_orthogonality() {
        let p = Arc::new(point(|_| 1.0));
        let v = DiscreteFunction::from_scalar_fn(grid(), false, |_| 1.0).unwrap();
        assert!(matches!(TangentVector::new(p, v), Err(Error::NotTangent(_))));
    }

    #[test]
    fn transport_is_isometric() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let from = Arc::new(point(|t| (1.0 + t).sqrt()));
        let to = Arc::new(random_point(&mut rng, &from, 0.9));
        for _ in 0..10 {
            let la = rng.random_range(0.1..2.0);
            let a = random_tangent(&mut rng, &from, la);
            let lb = rng.random_range(0.1..2.0);
            let b = random_tangent(&mut rng, &from, lb);
            let ta = parallel_transport(&a, &to).unwrap();
            let tb = parallel_transport(&b, &to).unwrap();
            assert!((ta.norm() - a.norm()).abs() < 1e-10);
            let before = inner_product(a.vector(), b.vector()).unwrap();
            let after = inner_product(ta.vector(), tb.vector()).unwrap();
            assert!((before - after).abs() < 1e-8);
            assert!(inner_product(ta.vector(), to.function()).unwrap().abs() < 1e-10);
        }
    }

    #[test]
    fn transport_along_geodesic_moves_the_velocity() {
        // The initial velocity of a geodesic transports to its final velocity.
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let from = Arc::new(point(|t| 1.0 + t * t));
        let v = random_tangent(&mut rng, &from, 0.7);
        let to = Arc::new(exp_map(&from, &v).unwrap());
        let transported = parallel_transport(&v, &to).unwrap();
        let back = log_map(&to, &from).unwrap();
        let diff = norm(&transported.vector().add(back.vector()).unwrap());
        assert!(diff < 1e-9, "{diff}");
    }

    #[test]
    fn transport_to_self_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = Arc::new(point(|t| 2.0 - t));
        let v = random_tangent(&mut rng, &p, 1.0);
        let t = parallel_transport(&v, &p).unwrap();
        assert!(norm(&t.vector().sub(v.vector()).unwrap()) < 1e-12);
    }

    #[test]
    fn karcher_single_and_repeated() {
        let p = point(|t| 1.0 + t);
        let r = karcher_mean(std::slice::from_ref(&p), &KarcherConfig::default()).unwrap();
        assert!(r.iterations <= 1);
        assert!(geodesic_distance(&r.mean, &p).unwrap() < 1e-7);
        let r = karcher_mean(&[p.clone(), p.clone(), p.clone()], &KarcherConfig::default()).unwrap();
        assert!(geodesic_distance(&r.mean, &p).unwrap() < 1e-7);
    }

    #[test]
    fn karcher_two_points_is_midpoint() {
        let a = point(|t| 1.0 + 2.0 * t);
        let b = point(|t| 3.0 - t * t);
        let r = karcher_mean(&[a.clone(), b.clone()], &KarcherConfig::default()).unwrap();
        let da = geodesic_distance(&r.mean, &a).unwrap();
        let db = geodesic_distance(&r.mean, &b).unwrap();
        assert!((da - db).abs() < 1e-6);
    }

    #[test]
    fn karcher_first_order_condition_and_monotone_variance() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let center = point(|t| (0.5 + t).sqrt());
        let points: Vec<_> = (0..25).map(|_| random_point(&mut rng, &center, 0.4)).collect();
        let cfg = KarcherConfig::default();
        let r = karcher_mean(&points, &cfg).unwrap();
        assert!(r.converged);
        assert!(r.final_gradient_norm <= cfg.tol);
        for w in r.variance_trace.windows(2) {
            assert!(w[1] <= w[0] + 1e-10);
        }
        let mean = Arc::new(r.mean);
        let mut avg = mean.function().zeros_like();
        for p in &points {
            avg = avg.add_scaled(1.0 / 25.0, log_map(&mean, p).unwrap().vector()).unwrap();
        }
        assert!(norm(&avg) <= cfg.tol);
    }

    #[test]
    fn planar_points_work() {
        let g = Grid::new(50).unwrap();
        let f = DiscreteFunction::from_planar_fn(g, true, |t| [(2.0 * PI * t).cos(), 1.0]).unwrap();
        let p = SpherePoint::new(f).unwrap();
        assert_eq!(p.function().dim(), Dim::Planar);
        assert!((norm(p.function()) - 1.0).abs() < 1e-12);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]
            #[test]
            fn triangle_inequality(s1 in 0u64..1000, s2 in 0u64..1000, s3 in 0u64..1000) {
                let center = point(|t| 1.0 + t);
                let mk = |s| random_point(&mut ChaCha8Rng::seed_from_u64(s), &center, 1.2);
                let (a, b, c) = (mk(s1), mk(s2), mk(s3));
                let ab = geodesic_distance(&a, &b).unwrap();
                let bc = geodesic_distance(&b, &c).unwrap();
                let ac = geodesic_distance(&a, &c).unwrap();
                prop_assert!(ac <= ab + bc + 1e-8);
                prop_assert!((ab - geodesic_distance(&b, &a).unwrap()).abs() < 1e-14);
                prop_assert!(ab >= 0.0);
            }

            #[test]
            fn exp_and_log_are_inverse(seed in 0u64..10_000, len in 0.05f64..3.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let base = Arc::new(random_point(&mut rng, &point(|t| 1.0 + t), 0.8));
                let v = random_tangent(&mut rng, &base, len);
                let back = log_map(&base, &exp_map(&base, &v).unwrap()).unwrap();
                let err = back.vector().values().iter().zip(v.vector().values()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                prop_assert!(err < 1e-8, "{err:e}");
            }

            #[test]
            fn transport_preserves_inner_products(seed in 0u64..10_000, la in 0.1f64..2.0, lb in 0.1f64..2.0) {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let from = Arc::new(random_point(&mut rng, &point(|_| 1.0), 0.8));
                let to = Arc::new(random_point(&mut rng, &from, 0.9));
                let a = random_tangent(&mut rng, &from, la);
                let b = random_tangent(&mut rng, &from, lb);
                let (pa, pb) = (parallel_transport(&a, &to).unwrap(), parallel_transport(&b, &to).unwrap());
                let ip = |x: &TangentVector, y: &TangentVector| inner_product(x.vector(), y.vector()).unwrap();
                prop_assert!((ip(&pa, &pb) - ip(&a, &b)).abs() < 1e-10);
                prop_assert!(inner_product(pa.vector(), to.function()).unwrap().abs() < 1e-10);
            }
        }
    }
}

//! Uniform-grid function arithmetic on `[0, 1]`.
//!
//! Every object in the crate (densities, square-root transforms, curves,
//! square-root velocity functions, tangent vectors) is a [`DiscreteFunction`]:
//! samples on the uniform grid `t_k = k / (n - 1)`, either scalar- or
//! plane-valued. Periodic functions live on the circle and repeat their first
//! sample as the last one.
//!
//! Inner products use the trapezoidal rule. For periodic functions whose last
//! sample equals the first this coincides with the rectangle rule over one
//! period.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform grid on `[0, 1]` with `n_points` samples including both endpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    n_points: usize,
}

impl Grid {
    pub fn new(n_points: usize) -> Result<Self> {
        if n_points < 3 {
            return Err(Error::GridTooSmall(n_points));
        }
        Ok(Self { n_points })
    }

    pub fn len(&self) -> usize {
        self.n_points
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        1.0 / (self.n_points - 1) as f64
    }

    pub fn point(&self, k: usize) -> f64 {
        k as f64 / (self.n_points - 1) as f64
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|k| self.point(k)).collect()
    }

    /// Trapezoidal quadrature weights.
    pub fn weights(&self) -> Vec<f64> {
        let h = self.spacing();
        let mut w = vec![h; self.n_points];
        w[0] = 0.5 * h;
        w[self.n_points - 1] = 0.5 * h;
        w
    }
}

/// Value type of a discrete function.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dim {
    Scalar,
    Planar,
}

impl Dim {
    pub fn components(self) -> usize {
        match self {
            Dim::Scalar => 1,
            Dim::Planar => 2,
        }
    }
}

/// Scalar- or plane-valued samples on a [`Grid`].
///
/// Planar values are stored interleaved (`x0, y0, x1, y1, ...`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscreteFunction {
    grid: Grid,
    dim: Dim,
    periodic: bool,
    values: Vec<f64>,
}

impl DiscreteFunction {
    pub fn new(grid: Grid, dim: Dim, periodic: bool, values: Vec<f64>) -> Result<Self> {
        let expected = grid.len() * dim.components();
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: values.len(),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("function values"));
        }
        Ok(Self {
            grid,
            dim,
            periodic,
            values,
        })
    }

    pub fn scalar(grid: Grid, values: Vec<f64>) -> Result<Self> {
        Self::new(grid, Dim::Scalar, false, values)
    }

    pub fn planar(grid: Grid, periodic: bool, points: &[[f64; 2]]) -> Result<Self> {
        let values = points.iter().flat_map(|p| [p[0], p[1]]).collect();
        Self::new(grid, Dim::Planar, periodic, values)
    }

    pub fn from_scalar_fn(grid: Grid, periodic: bool, f: impl Fn(f64) -> f64) -> Result<Self> {
        let values = grid.points().into_iter().map(f).collect();
        Self::new(grid, Dim::Scalar, periodic, values)
    }

    pub fn from_planar_fn(grid: Grid, periodic: bool, f: impl Fn(f64) -> [f64; 2]) -> Result<Self> {
        let values = grid
            .points()
            .into_iter()
            .flat_map(|t| {
                let p = f(t);
                [p[0], p[1]]
            })
            .collect();
        Self::new(grid, Dim::Planar, periodic, values)
    }

    pub fn zeros(grid: Grid, dim: Dim, periodic: bool) -> Self {
        Self {
            grid,
            dim,
            periodic,
            values: vec![0.0; grid.len() * dim.components()],
        }
    }

    /// Zero function with the same layout as `self`.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.grid, self.dim, self.periodic)
    }

    pub fn grid(&self) -> Grid {
        self.grid
    }

    pub fn dim(&self) -> Dim {
        self.dim
    }

    pub fn is_periodic(&self) -> bool {
        self.periodic
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// Sample `k` as a slice of length 1 or 2.
    pub fn sample(&self, k: usize) -> &[f64] {
        let c = self.dim.components();
        &self.values[k * c..(k + 1) * c]
    }

    /// Planar samples as points. Panics on scalar functions.
    pub fn points(&self) -> Vec<[f64; 2]> {
        assert_eq!(self.dim, Dim::Planar, "points() on a scalar function");
        self.values.chunks_exact(2).map(|p| [p[0], p[1]]).collect()
    }

    /// Samples stacked component-wise: all x values, then all y values.
    pub fn stacked(&self) -> Vec<f64> {
        match self.dim {
            Dim::Scalar => self.values.clone(),
            Dim::Planar => {
                let mut out: Vec<f64> = self.values.iter().step_by(2).copied().collect();
                out.extend(self.values.iter().skip(1).step_by(2));
                out
            }
        }
    }

    pub fn with_periodic(mut self, periodic: bool) -> Self {
        self.periodic = periodic;
        self
    }

    /// Replaces the samples, keeping grid and layout.
    pub fn with_values(&self, values: Vec<f64>) -> Result<Self> {
        Self::new(self.grid, self.dim, self.periodic, values)
    }

    pub fn check_compatible(&self, other: &Self) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch {
                left: self.grid.len(),
                right: other.grid.len(),
            });
        }
        if self.dim != other.dim {
            return Err(Error::DimensionMismatch);
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            values: self.values.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        self.map(|v| s * v)
    }

    /// `self + s * other`.
    pub fn add_scaled(&self, s: f64, other: &Self) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(a, b)| a + s * b)
                .collect(),
            ..self.clone()
        })
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        self.add_scaled(1.0, other)
    }

    pub fn sub(&self, other: &Self) -> Result<Self> {
        self.add_scaled(-1.0, other)
    }

    /// `a * self + b * other`.
    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        self.check_compatible(other)?;
        Ok(Self {
            values: self
                .values
                .iter()
                .zip(&other.values)
                .map(|(x, y)| a * x + b * y)
                .collect(),
            ..self.clone()
        })
    }

    /// Pointwise Euclidean norm of each sample.
    pub fn pointwise_norm(&self) -> Vec<f64> {
        self.values
            .chunks_exact(self.dim.components())
            .map(|c| c.iter().map(|v| v * v).sum::<f64>().sqrt())
            .collect()
    }

    /// Trapezoidal integral, one entry per component.
    pub fn integral(&self) -> Vec<f64> {
        let c = self.dim.components();
        let w = self.grid.weights();
        let mut out = vec![0.0; c];
        for (k, wk) in w.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += wk * self.values[k * c + j];
            }
        }
        out
    }

    /// Value at an arbitrary `t` by linear interpolation. Periodic functions
    /// wrap `t` onto `[0, 1)`; others clamp to the domain.
    pub fn eval(&self, t: f64) -> [f64; 2] {
        let n = self.grid.len();
        let t = if self.periodic {
            t - t.floor()
        } else {
            t.clamp(0.0, 1.0)
        };
        let u = t * (n - 1) as f64;
        let k = (u.floor() as usize).min(n - 2);
        let frac = u - k as f64;
        let c = self.dim.components();
        let mut out = [0.0; 2];
        for (j, o) in out.iter_mut().enumerate().take(c) {
            let a = self.values[k * c + j];
            let b = self.values[(k + 1) * c + j];
            *o = a + frac * (b - a);
        }
        out
    }

    /// Central differences; periodic wrap or one-sided differences at the ends.
    pub fn derivative(&self) -> Self {
        let n = self.grid.len();
        let c = self.dim.components();
        let h = self.grid.spacing();
        let v = &self.values;
        let mut out = vec![0.0; v.len()];
        for k in 1..n - 1 {
            for j in 0..c {
                out[k * c + j] = (v[(k + 1) * c + j] - v[(k - 1) * c + j]) / (2.0 * h);
            }
        }
        for j in 0..c {
            if self.periodic {
                let d = (v[c + j] - v[(n - 2) * c + j]) / (2.0 * h);
                out[j] = d;
                out[(n - 1) * c + j] = d;
            } else {
                out[j] = (v[c + j] - v[j]) / h;
                out[(n - 1) * c + j] = (v[(n - 1) * c + j] - v[(n - 2) * c + j]) / h;
            }
        }
        Self {
            values: out,
            ..self.clone()
        }
    }

    /// Linear interpolation onto another grid.
    pub fn resample(&self, new_grid: Grid) -> Self {
        if new_grid == self.grid {
            return self.clone();
        }
        let c = self.dim.components();
        let mut values = Vec::with_capacity(new_grid.len() * c);
        for t in new_grid.points() {
            let p = self.eval(t);
            values.extend_from_slice(&p[..c]);
        }
        let mut out = Self {
            grid: new_grid,
            dim: self.dim,
            periodic: self.periodic,
            values,
        };
        out.close_period();
        out
    }

    /// Evaluates `self ∘ gamma` sample by sample.
    ///
    /// `gamma` must be nondecreasing. For open-domain functions it must map
    /// `0 ↦ 0` and `1 ↦ 1`; for periodic functions it is an unwrapped circle
    /// map with `gamma(1) - gamma(0) = 1`.
    pub fn compose_warp(&self, gamma: &DiscreteFunction) -> Result<Self> {
        if gamma.dim != Dim::Scalar {
            return Err(Error::DimensionMismatch);
        }
        if gamma.grid != self.grid {
            return Err(Error::GridMismatch {
                left: self.grid.len(),
                right: gamma.grid.len(),
            });
        }
        check_warp(gamma, self.periodic)?;
        let c = self.dim.components();
        let mut values = Vec::with_capacity(self.values.len());
        for &g in &gamma.values {
            let p = self.eval(g);
            values.extend_from_slice(&p[..c]);
        }
        let mut out = Self {
            values,
            ..self.clone()
        };
        out.close_period();
        Ok(out)
    }

    /// For periodic functions, copies the first sample onto the last.
    pub(crate) fn close_period(&mut self) {
        if self.periodic {
            let c = self.dim.components();
            let n = self.grid.len();
            for j in 0..c {
                self.values[(n - 1) * c + j] = self.values[j];
            }
        }
    }
}

const WARP_TOL: f64 = 1e-9;

fn check_warp(gamma: &DiscreteFunction, periodic: bool) -> Result<()> {
    let g = &gamma.values;
    for k in 1..g.len() {
        if g[k] < g[k - 1] - WARP_TOL {
            return Err(Error::NonMonotoneWarp { index: k });
        }
    }
    let first = g[0];
    let last = g[g.len() - 1];
    let ok = if periodic {
        (last - first - 1.0).abs() <= 1e-6
    } else {
        first.abs() <= 1e-6 && (last - 1.0).abs() <= 1e-6
    };
    if ok {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!(
            "warp must map the domain onto itself (gamma(0) = {first}, gamma(1) = {last})"
        )))
    }
}

/// Trapezoidal L² inner product; planar samples contribute their dot product.
pub fn inner_product(a: &DiscreteFunction, b: &DiscreteFunction) -> Result<f64> {
    a.check_compatible(b)?;
    Ok(inner_unchecked(a, b))
}

pub(crate) fn inner_unchecked(a: &DiscreteFunction, b: &DiscreteFunction) -> f64 {
    let c = a.dim.components();
    let n = a.grid.len();
    let h = a.grid.spacing();
    let dot = |k: usize| -> f64 {
        (0..c)
            .map(|j| a.values[k * c + j] * b.values[k * c + j])
            .sum::<f64>()
    };
    let mut acc = 0.5 * (dot(0) + dot(n - 1));
    for k in 1..n - 1 {
        acc += dot(k);
    }
    acc * h
}

pub fn norm(a: &DiscreteFunction) -> f64 {
    inner_unchecked(a, a).max(0.0).sqrt()
}

/// Identity warp `gamma(t) = t` on a grid.
pub fn identity_warp(grid: Grid) -> DiscreteFunction {
    DiscreteFunction {
        grid,
        dim: Dim::Scalar,
        periodic: false,
        values: grid.points(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn grid(n: usize) -> Grid {
        Grid::new(n).unwrap()
    }

    #[test]
    fn grid_rejects_tiny() {
        assert_eq!(Grid::new(2), Err(Error::GridTooSmall(2)));
    }

    #[test]
    fn constant_integrates_to_one() {
        for n in [3, 10, 257] {
            let one = DiscreteFunction::from_scalar_fn(grid(n), false, |_| 1.0).unwrap();
            assert!((inner_product(&one, &one).unwrap() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn sin_cos_orthogonal() {
        let g = grid(1001);
        let s = DiscreteFunction::from_scalar_fn(g, true, |t| (2.0 * PI * t).sin()).unwrap();
        let c = DiscreteFunction::from_scalar_fn(g, true, |t| (2.0 * PI * t).cos()).unwrap();
        assert!(inner_product(&s, &c).unwrap().abs() < 1e-8);
    }

    #[test]
    fn sqrt_two_t_against_one() {
        // ∫ sqrt(2t) dt over [0,1] = 2 sqrt(2) / 3
        let g = grid(1001);
        let a = DiscreteFunction::from_scalar_fn(g, false, |t| (2.0 * t).sqrt()).unwrap();
        let b = DiscreteFunction::from_scalar_fn(g, false, |_| 1.0).unwrap();
        let exact = 2.0 * 2f64.sqrt() / 3.0;
        let got = inner_product(&a, &b).unwrap();
        let h = 1.0 / 1000.0;
        let trapezoid: f64 = (0..1000)
            .map(|k| 0.5 * h * ((2.0 * k as f64 * h).sqrt() + (2.0 * (k + 1) as f64 * h).sqrt()))
            .sum();
        assert!((got - trapezoid).abs() < 1e-12);
        // the endpoint singularity limits the rule to O(h^1.5)
        assert!((got - exact).abs() < 1e-5);
        let fine = grid(100_001);
        let a = DiscreteFunction::from_scalar_fn(fine, false, |t| (2.0 * t).sqrt()).unwrap();
        let b = DiscreteFunction::from_scalar_fn(fine, false, |_| 1.0).unwrap();
        assert!((inner_product(&a, &b).unwrap() - exact).abs() < 1e-6);
    }

    #[test]
    fn linear_polynomials_exact() {
        let g = grid(17);
        let a = DiscreteFunction::from_scalar_fn(g, false, |t| 3.0 * t - 0.25).unwrap();
        assert!((a.integral()[0] - 1.25).abs() < 1e-12);
    }

    #[test]
    fn grid_mismatch_is_error() {
        let a = DiscreteFunction::zeros(grid(5), Dim::Scalar, false);
        let b = DiscreteFunction::zeros(grid(6), Dim::Scalar, false);
        assert!(matches!(
            inner_product(&a, &b),
            Err(Error::GridMismatch { left: 5, right: 6 })
        ));
        let c = DiscreteFunction::zeros(grid(5), Dim::Planar, false);
        assert_eq!(inner_product(&a, &c), Err(Error::DimensionMismatch));
    }

    #[test]
    fn non_finite_rejected() {
        assert!(DiscreteFunction::scalar(grid(3), vec![0.0, f64::NAN, 1.0]).is_err());
    }

    #[test]
    fn derivative_of_identity() {
        let g = grid(101);
        let a = DiscreteFunction::from_scalar_fn(g, false, |t| t).unwrap();
        for v in a.derivative().values() {
            assert!((v - 1.0).abs() < 1e-10);
        }
    }

    #[test]
    fn derivative_of_circle() {
        let g = grid(1001);
        let r = 1.0 / (2.0 * PI);
        let c = DiscreteFunction::from_planar_fn(g, true, |t| {
            [r * (2.0 * PI * t).cos(), r * (2.0 * PI * t).sin()]
        })
        .unwrap();
        let d = c.derivative();
        for (k, t) in g.points().into_iter().enumerate() {
            let s = d.sample(k);
            assert!((s[0] + (2.0 * PI * t).sin()).abs() < 1e-4);
            assert!((s[1] - (2.0 * PI * t).cos()).abs() < 1e-4);
        }
    }

    #[test]
    fn derivative_of_constant_vanishes() {
        for periodic in [false, true] {
            let a = DiscreteFunction::from_scalar_fn(grid(20), periodic, |_| 4.2).unwrap();
            assert!(a.derivative().values().iter().all(|v| v.abs() < 1e-12));
        }
    }

    #[test]
    fn resample_same_grid_is_identity() {
        let a = DiscreteFunction::from_scalar_fn(grid(33), false, |t| (5.0 * t).sin()).unwrap();
        assert_eq!(a.resample(grid(33)), a);
    }

    #[test]
    fn resample_linear_function_exact() {
        let a = DiscreteFunction::from_scalar_fn(grid(11), false, |t| 2.0 * t + 1.0).unwrap();
        let b = a.resample(grid(37));
        for (k, t) in grid(37).points().into_iter().enumerate() {
            assert!((b.values()[k] - (2.0 * t + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn compose_with_identity_keeps_derivative() {
        let g = grid(64);
        let a = DiscreteFunction::from_scalar_fn(g, false, |t| t * t * (1.0 - t)).unwrap();
        let composed = a.compose_warp(&identity_warp(g)).unwrap();
        for (x, y) in composed.derivative().values().iter().zip(a.derivative().values()) {
            assert!((x - y).abs() < 1e-10);
        }
    }

    #[test]
    fn compose_rejects_non_monotone() {
        let g = grid(5);
        let a = DiscreteFunction::from_scalar_fn(g, false, |t| t).unwrap();
        let bad = DiscreteFunction::scalar(g, vec![0.0, 0.5, 0.4, 0.8, 1.0]).unwrap();
        assert_eq!(a.compose_warp(&bad), Err(Error::NonMonotoneWarp { index: 2 }));
    }

    #[test]
    fn periodic_compose_wraps() {
        let g = grid(101);
        let a = DiscreteFunction::from_scalar_fn(g, true, |t| (2.0 * PI * t).cos()).unwrap();
        let shift = DiscreteFunction::from_scalar_fn(g, false, |t| t + 0.25).unwrap();
        let b = a.compose_warp(&shift).unwrap();
        for (k, t) in g.points().into_iter().enumerate() {
            assert!((b.values()[k] + (2.0 * PI * t).sin()).abs() < 1e-3);
        }
    }

    #[test]
    fn stacked_orders_x_then_y() {
        let a = DiscreteFunction::planar(grid(3), false, &[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]).unwrap();
        assert_eq!(a.stacked(), vec![1.0, 3.0, 5.0, 2.0, 4.0, 6.0]);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        fn vals(n: usize) -> impl Strategy<Value = Vec<f64>> {
            proptest::collection::vec(-10.0f64..10.0, n)
        }

        proptest! {
            #[test]
            fn inner_product_symmetric_bilinear(a in vals(24), b in vals(24), c in vals(24), s in -3.0f64..3.0) {
                let g = Grid::new(12).unwrap();
                let fa = DiscreteFunction::new(g, Dim::Planar, true, a).unwrap();
                let fb = DiscreteFunction::new(g, Dim::Planar, true, b).unwrap();
                let fc = DiscreteFunction::new(g, Dim::Planar, true, c).unwrap();
                let ab = inner_product(&fa, &fb).unwrap();
                prop_assert!((ab - inner_product(&fb, &fa).unwrap()).abs() <= 1e-12 * (1.0 + ab.abs()));
                let lhs = inner_product(&fa.add_scaled(s, &fb).unwrap(), &fc).unwrap();
                let rhs = inner_product(&fa, &fc).unwrap() + s * inner_product(&fb, &fc).unwrap();
                prop_assert!((lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()));
            }

            #[test]
            fn affine_functions_integrate_exactly(a in -5.0f64..5.0, b in -5.0f64..5.0, n in 3usize..200) {
                let f = DiscreteFunction::from_scalar_fn(Grid::new(n).unwrap(), false, |t| a * t + b).unwrap();
                prop_assert!((f.integral()[0] - (0.5 * a + b)).abs() < 1e-12);
            }
        }
    }
}

//! Canonical variate regression.
//!
//! Minimizes
//! `η‖Z₁ − Z₂‖²_F + (1−η) Σ_k ‖y − α1 − Z_kβ‖²` with `Z_k = X_k W_k`
//! over weights satisfying `W_kᵀX_kᵀX_kW_k = I_d`, where `X_k` is the
//! column-centered coefficient matrix. Each block (one weight matrix, or the
//! regression pair) is minimized exactly, so the objective never increases.
//! With `Z_k = Q_k A_k` the weight subproblem is linear in `A_k` on the
//! Stiefel manifold and is solved by the polar factor of its gradient.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cca::{cca, center_with, checked_svd, whiten, Whitened};
use crate::error::{Error, Result};

/// Solver tolerances.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CvrConfig {
    /// Relative objective change that stops the iteration.
    pub tol: f64,
    pub max_iter: usize,
}

impl Default for CvrConfig {
    fn default() -> Self {
        Self { tol: 1e-6, max_iter: 500 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CvrResult {
    pub weights_1: DMatrix<f64>,
    pub weights_2: DMatrix<f64>,
    pub alpha: f64,
    pub beta: Vec<f64>,
    pub eta: f64,
    /// Objective at the start and after every sweep.
    pub objective_trace: Vec<f64>,
    pub converged: bool,
    means_1: DVector<f64>,
    means_2: DVector<f64>,
}

impl CvrResult {
    /// Canonical variates of new rows, centered with the training means.
    pub fn variates(&self, c1: &DMatrix<f64>, c2: &DMatrix<f64>) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
        if c1.ncols() != self.weights_1.nrows() || c2.ncols() != self.weights_2.nrows() {
            return Err(Error::DimensionMismatch);
        }
        if c1.nrows() != c2.nrows() {
            return Err(Error::LengthMismatch { expected: c1.nrows(), actual: c2.nrows() });
        }
        Ok((
            center_with(c1, &self.means_1) * &self.weights_1,
            center_with(c2, &self.means_2) * &self.weights_2,
        ))
    }

    /// Linear predictor `α + ½(Z₁ + Z₂)β`.
    pub fn predict(&self, c1: &DMatrix<f64>, c2: &DMatrix<f64>) -> Result<Vec<f64>> {
        let (z1, z2) = self.variates(c1, c2)?;
        let beta = DVector::from_column_slice(&self.beta);
        let s = (z1 + z2) * beta * 0.5;
        Ok(s.iter().map(|v| v + self.alpha).collect())
    }

    /// `max_k ‖W_kᵀX_kᵀX_kW_k − I‖_F` on the fitting data.
    pub fn constraint_residual(&self, c1: &DMatrix<f64>, c2: &DMatrix<f64>) -> Result<f64> {
        let (z1, z2) = self.variates(c1, c2)?;
        let d = z1.ncols();
        let id = DMatrix::<f64>::identity(d, d);
        Ok(((z1.transpose() * &z1) - &id).norm().max(((z2.transpose() * &z2) - id).norm()))
    }
}

fn objective(eta: f64, z1: &DMatrix<f64>, z2: &DMatrix<f64>, y: &DVector<f64>, alpha: f64, beta: &DVector<f64>) -> f64 {
    let fit = |z: &DMatrix<f64>| (y - z * beta).add_scalar(-alpha).norm_squared();
    eta * (z1 - z2).norm_squared() + (1.0 - eta) * (fit(z1) + fit(z2))
}

/// Orthonormal factor `UVᵀ` of the polar decomposition.
fn polar(g: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let svd = checked_svd(g)?;
    Ok(svd.u.expect("requested") * svd.v_t.expect("requested"))
}

/// Least squares of `[y; y]` on `[1 Z₁; 1 Z₂]`.
pub fn regress_on_variates(y: &[f64], z1: &DMatrix<f64>, z2: &DMatrix<f64>) -> Result<(f64, Vec<f64>)> {
    let n = y.len();
    let d = z1.ncols();
    if z1.nrows() != n || z2.shape() != z1.shape() {
        return Err(Error::DimensionMismatch);
    }
    let design = DMatrix::from_fn(2 * n, d + 1, |i, j| {
        let z = if i < n { z1 } else { z2 };
        if j == 0 {
            1.0
        } else {
            z[(i % n, j - 1)]
        }
    });
    let rhs = DVector::from_fn(2 * n, |i, _| y[i % n]);
    let normal = design.transpose() * &design;
    let sol = normal
        .cholesky()
        .ok_or(Error::RankDeficient { condition: f64::INFINITY })?
        .solve(&(design.transpose() * rhs));
    Ok((sol[0], sol.iter().skip(1).copied().collect()))
}

/// Fits canonical variate regression with `d` variate pairs at trade-off `eta`.
///
/// Starts from the leading canonical weights. At `eta = 1` the final weight
/// pairs are rotated onto the canonical directions, so column `j` of the
/// variates reproduces the `j`-th canonical correlation.
pub fn cvr_fit(
    c1: &DMatrix<f64>,
    c2: &DMatrix<f64>,
    y: &[f64],
    d: usize,
    eta: f64,
    cfg: &CvrConfig,
) -> Result<CvrResult> {
    let n = c1.nrows();
    if c2.nrows() != n || y.len() != n {
        return Err(Error::LengthMismatch { expected: n, actual: if c2.nrows() != n { c2.nrows() } else { y.len() } });
    }
    if !(0.0..=1.0).contains(&eta) {
        return Err(Error::InvalidInput(format!("eta must lie in [0, 1], got {eta}")));
    }
    if y.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("response"));
    }
    let w1 = whiten(c1, 0.0)?;
    let w2 = whiten(c2, 0.0)?;
    let max = c1.ncols().min(c2.ncols()).min(n - 1);
    if d == 0 || d > max {
        return Err(Error::RankInfeasible { requested: d, max });
    }

    let init = cca(c1, c2, 0.0)?;
    let s = 1.0 / ((n - 1) as f64).sqrt();
    let mut a1 = &w1.r * init.weights_1.columns(0, d) * s;
    let mut a2 = &w2.r * init.weights_2.columns(0, d) * s;
    let yv = DVector::from_column_slice(y);
    let mut z1 = &w1.q * &a1;
    let mut z2 = &w2.q * &a2;
    let (mut alpha, beta) = regress_on_variates(y, &z1, &z2)?;
    let mut beta = DVector::from_vec(beta);
    let mut trace = vec![objective(eta, &z1, &z2, &yv, alpha, &beta)];
    let mut converged = false;

    let block = |w: &Whitened, partner: &DMatrix<f64>, alpha: f64, beta: &DVector<f64>, prev: &DMatrix<f64>| {
        let resid = yv.add_scalar(-alpha);
        let g = w.q.transpose() * (partner * eta + resid * beta.transpose() * (1.0 - eta));
        if g.norm() > 0.0 {
            polar(&g)
        } else {
            Ok(prev.clone())
        }
    };

    for _ in 0..cfg.max_iter {
        a1 = block(&w1, &z2, alpha, &beta, &a1)?;
        z1 = &w1.q * &a1;
        a2 = block(&w2, &z1, alpha, &beta, &a2)?;
        z2 = &w2.q * &a2;
        let (al, be) = regress_on_variates(y, &z1, &z2)?;
        alpha = al;
        beta = DVector::from_vec(be);
        let obj = objective(eta, &z1, &z2, &yv, alpha, &beta);
        let prev = *trace.last().expect("nonempty");
        trace.push(obj);
        if (prev - obj).abs() <= cfg.tol * prev.abs().max(1.0) {
            converged = true;
            break;
        }
    }

    if eta == 1.0 {
        let svd = checked_svd(&(z1.transpose() * &z2))?;
        a1 = &a1 * svd.u.expect("requested");
        a2 = &a2 * svd.v_t.expect("requested").transpose();
        z1 = &w1.q * &a1;
        z2 = &w2.q * &a2;
        let (al, be) = regress_on_variates(y, &z1, &z2)?;
        alpha = al;
        beta = DVector::from_vec(be);
    }

    let singular = Error::RankDeficient { condition: f64::INFINITY };
    let weights_1 = w1.r.solve_upper_triangular(&a1).ok_or(singular.clone())?;
    let weights_2 = w2.r.solve_upper_triangular(&a2).ok_or(singular)?;
    Ok(CvrResult {
        weights_1,
        weights_2,
        alpha,
        beta: beta.iter().copied().collect(),
        eta,
        objective_trace: trace,
        converged,
        means_1: w1.means,
        means_2: w2.means,
    })
}

/// The trade-off values `0, 0.1, …, 1`.
pub fn default_eta_grid() -> Vec<f64> {
    (0..=10).map(|i| i as f64 / 10.0).collect()
}

/// Held-out error as a function of `η`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvTrace {
    pub eta_grid: Vec<f64>,
    /// Mean held-out MSE over repeats, per grid value.
    pub mse: Vec<f64>,
    pub chosen_eta: f64,
}

/// One random split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatOutcome {
    pub test_indices: Vec<usize>,
    /// Held-out MSE per grid value.
    pub mse: Vec<f64>,
    pub best_eta: f64,
    pub best_mse: f64,
    /// Predictions on `test_indices` at `best_eta`.
    pub predictions: Vec<f64>,
    pub c_index: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvOutcome {
    pub trace: CvTrace,
    pub repeats: Vec<RepeatOutcome>,
    pub mse_mean: f64,
    pub mse_sd: f64,
    pub c_index_mean: f64,
    pub c_index_sd: f64,
}

impl CvOutcome {
    pub fn mse_summary(&self) -> String {
        mean_sd(self.mse_mean, self.mse_sd)
    }

    pub fn c_index_summary(&self) -> String {
        mean_sd(self.c_index_mean, self.c_index_sd)
    }
}

/// `"mean (sd)"` with four decimals.
pub fn mean_sd(mean: f64, sd: f64) -> String {
    format!("{mean:.4} ({sd:.4})")
}

fn mean_and_sd(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    let sd = if v.len() > 1 {
        (v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    (m, sd)
}

/// Index of the minimum, ties going to the larger `η`.
fn argmin_prefer_larger(values: &[f64], grid: &[f64]) -> usize {
    let mut best = 0;
    for i in 1..values.len() {
        let better = values[i] < values[best] || (values[i] == values[best] && grid[i] > grid[best]);
        if better {
            best = i;
        }
    }
    best
}

fn rows(m: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), m.ncols(), |i, j| m[(idx[i], j)])
}

/// Repeated random-split cross-validation over an `η` grid.
///
/// Each repeat draws its split from its own stream of a seeded generator,
/// so results do not depend on how repeats are scheduled. A repeat reports
/// its minimum held-out MSE over the grid, and the concordance of the
/// predictions at that `η` with the observed response (higher predicted
/// response means lower risk). Aggregates are over repeats.
#[allow(clippy::too_many_arguments)]
pub fn cvr_cross_validate(
    c1: &DMatrix<f64>,
    c2: &DMatrix<f64>,
    y: &[f64],
    d: usize,
    eta_grid: &[f64],
    split: f64,
    repeats: usize,
    seed: u64,
    cfg: &CvrConfig,
) -> Result<CvOutcome> {
    let n = y.len();
    if c1.nrows() != n || c2.nrows() != n {
        return Err(Error::LengthMismatch { expected: n, actual: c1.nrows().min(c2.nrows()) });
    }
    if eta_grid.is_empty() || repeats == 0 {
        return Err(Error::InvalidInput("need a nonempty eta grid and at least one repeat".into()));
    }
    if !(split > 0.0 && split < 1.0) {
        return Err(Error::InvalidInput(format!("split fraction must lie in (0, 1), got {split}")));
    }
    let n_train = (split * n as f64).round() as usize;
    if n_train < d + 3 || n - n_train < 2 {
        return Err(Error::InvalidInput(format!("split leaves {n_train} training and {} test rows", n - n_train)));
    }

    let outcomes: Vec<RepeatOutcome> = (0..repeats)
        .into_par_iter()
        .map(|rep| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(rep as u64);
            let mut idx: Vec<usize> = (0..n).collect();
            idx.shuffle(&mut rng);
            let (train, test) = idx.split_at(n_train);
            let mut train = train.to_vec();
            let mut test = test.to_vec();
            train.sort_unstable();
            test.sort_unstable();
            let ytr: Vec<f64> = train.iter().map(|&i| y[i]).collect();
            let yte: Vec<f64> = test.iter().map(|&i| y[i]).collect();
            let (c1tr, c2tr) = (rows(c1, &train), rows(c2, &train));
            let (c1te, c2te) = (rows(c1, &test), rows(c2, &test));
            let mut mse = Vec::with_capacity(eta_grid.len());
            let mut preds = Vec::with_capacity(eta_grid.len());
            for &eta in eta_grid {
                let fit = cvr_fit(&c1tr, &c2tr, &ytr, d, eta, cfg)?;
                let p = fit.predict(&c1te, &c2te)?;
                mse.push(p.iter().zip(&yte).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / yte.len() as f64);
                preds.push(p);
            }
            let best = argmin_prefer_larger(&mse, eta_grid);
            let predictions = preds.swap_remove(best);
            let risk: Vec<f64> = predictions.iter().map(|p| -p).collect();
            let c_index = concordance_index(&risk, &yte)?;
            Ok(RepeatOutcome {
                test_indices: test,
                best_eta: eta_grid[best],
                best_mse: mse[best],
                mse,
                predictions,
                c_index,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mean_mse: Vec<f64> = (0..eta_grid.len())
        .map(|k| outcomes.iter().map(|o| o.mse[k]).sum::<f64>() / repeats as f64)
        .collect();
    let chosen = argmin_prefer_larger(&mean_mse, eta_grid);
    let (mse_mean, mse_sd) = mean_and_sd(&outcomes.iter().map(|o| o.best_mse).collect::<Vec<_>>());
    let (c_index_mean, c_index_sd) = mean_and_sd(&outcomes.iter().map(|o| o.c_index).collect::<Vec<_>>());
    Ok(CvOutcome {
        trace: CvTrace {
            eta_grid: eta_grid.to_vec(),
            mse: mean_mse,
            chosen_eta: eta_grid[chosen],
        },
        repeats: outcomes,
        mse_mean,
        mse_sd,
        c_index_mean,
        c_index_sd,
    })
}

/// Harrell's concordance index for uncensored times.
///
/// Over pairs with `time_i < time_j`, counts `risk_i > risk_j` as 1 and tied
/// risks as 0.5.
pub fn concordance_index(risk: &[f64], time: &[f64]) -> Result<f64> {
    if risk.len() != time.len() {
        return Err(Error::LengthMismatch { expected: time.len(), actual: risk.len() });
    }
    if risk.iter().chain(time).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("concordance input"));
    }
    let mut hits = 0.0;
    let mut pairs = 0u64;
    for i in 0..time.len() {
        for j in 0..time.len() {
            if time[i] < time[j] {
                pairs += 1;
                if risk[i] > risk[j] {
                    hits += 1.0;
                } else if risk[i] == risk[j] {
                    hits += 0.5;
                }
            }
        }
    }
    if pairs == 0 {
        return Err(Error::DegenerateSample);
    }
    Ok(hits / pairs as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cca::pearson;
    use proptest::prelude::*;
    use rand::Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn normal(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
        DMatrix::from_fn(rows, cols, |_, _| StandardNormal.sample(rng))
    }

    fn data(n: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z = normal(n, 2, &mut rng);
        let a = &z * normal(2, 4, &mut rng) + normal(n, 4, &mut rng);
        let b = &z * normal(2, 3, &mut rng) + normal(n, 3, &mut rng);
        let y: Vec<f64> = (0..n).map(|i| 1.0 + z[(i, 0)] - 0.5 * z[(i, 1)] + { let e: f64 = StandardNormal.sample(&mut rng); 0.3 * e }).collect();
        (a, b, y)
    }

    /// Shared latent `s` present in both groups and a response exactly linear in it.
    fn shared_signal(n: usize, seed: u64) -> (DMatrix<f64>, DMatrix<f64>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let s = normal(n, 1, &mut rng);
        let mut a = normal(n, 3, &mut rng);
        let mut b = normal(n, 3, &mut rng);
        a.set_column(0, &s.column(0));
        b.set_column(1, &(s.column(0) * -2.0));
        let a = &a * (normal(3, 3, &mut rng) + DMatrix::identity(3, 3) * 3.0);
        let y = s.iter().map(|v| 2.0 + 3.0 * v).collect();
        (a, b, y)
    }

    #[test]
    fn eta_one_recovers_canonical_correlations() {
        let (a, b, y) = data(80, 1);
        let fit = cvr_fit(&a, &b, &y, 2, 1.0, &CvrConfig::default()).unwrap();
        let c = cca(&a, &b, 0.0).unwrap();
        let (z1, z2) = fit.variates(&a, &b).unwrap();
        for j in 0..2 {
            let r = pearson(&z1.column(j).iter().copied().collect::<Vec<_>>(), &z2.column(j).iter().copied().collect::<Vec<_>>());
            assert!((r - c.correlations[j]).abs() < 1e-3, "{r} vs {}", c.correlations[j]);
        }
    }

    #[test]
    fn eta_zero_regression_is_ols() {
        let (a, b, y) = data(60, 2);
        let fit = cvr_fit(&a, &b, &y, 2, 0.0, &CvrConfig::default()).unwrap();
        let (z1, z2) = fit.variates(&a, &b).unwrap();
        let n = y.len();
        let design = DMatrix::from_fn(2 * n, 3, |i, j| if j == 0 { 1.0 } else if i < n { z1[(i, j - 1)] } else { z2[(i - n, j - 1)] });
        let rhs = DVector::from_fn(2 * n, |i, _| y[i % n]);
        let ols = design.svd(true, true).solve(&rhs, 1e-14).unwrap();
        assert!((ols[0] - fit.alpha).abs() < 1e-8);
        for k in 0..2 {
            assert!((ols[k + 1] - fit.beta[k]).abs() < 1e-8);
        }
    }

    #[test]
    fn zero_response_gives_zero_regression() {
        let (a, b, _) = data(40, 3);
        let fit = cvr_fit(&a, &b, &[0.0; 40], 2, 0.5, &CvrConfig::default()).unwrap();
        assert!(fit.alpha.abs() < 1e-8);
        assert!(fit.beta.iter().all(|v| v.abs() < 1e-8));
    }

    #[test]
    fn objective_monotone_and_constraints_hold() {
        for seed in 0..4 {
            let (a, b, y) = data(50, seed);
            for eta in [0.0, 0.1, 0.3, 0.5, 0.9, 1.0] {
                for d in 1..=3 {
                    let fit = cvr_fit(&a, &b, &y, d, eta, &CvrConfig::default()).unwrap();
                    assert!(fit.converged);
                    for w in fit.objective_trace.windows(2) {
                        assert!(w[1] <= w[0] + 1e-8 * w[0].abs().max(1.0), "eta {eta} d {d}: {w:?}");
                    }
                    assert!(fit.constraint_residual(&a, &b).unwrap() <= 1e-4);
                }
            }
        }
    }

    #[test]
    fn rejects_infeasible_requests() {
        let (a, b, y) = data(30, 4);
        assert_eq!(
            cvr_fit(&a, &b, &y, 4, 0.5, &CvrConfig::default()).unwrap_err(),
            Error::RankInfeasible { requested: 4, max: 3 }
        );
        let mut z = a.clone();
        z.column_mut(2).fill(1.0);
        assert_eq!(cvr_fit(&z, &b, &y, 1, 0.5, &CvrConfig::default()).unwrap_err(), Error::ZeroVariance { column: 2 });
        assert!(cvr_fit(&a, &b, &y, 1, 1.5, &CvrConfig::default()).is_err());
    }

    #[test]
    fn cross_validation_is_deterministic() {
        let (a, b, y) = data(60, 5);
        let grid = [0.0, 0.5, 1.0];
        let run = || cvr_cross_validate(&a, &b, &y, 2, &grid, 0.8, 6, 42, &CvrConfig::default()).unwrap();
        let first = run();
        let second = run();
        assert_eq!(first, second);
        assert_eq!(first.repeats.len(), 6);
        let m = first.trace.mse.iter().copied().fold(f64::INFINITY, f64::min);
        let k = first.trace.eta_grid.iter().position(|e| *e == first.trace.chosen_eta).unwrap();
        assert_eq!(first.trace.mse[k], m);
        assert!(first.repeats[0].test_indices != first.repeats[1].test_indices);
        assert_eq!(first.mse_summary(), format!("{:.4} ({:.4})", first.mse_mean, first.mse_sd));
    }

    #[test]
    fn exact_linear_signal_is_predicted() {
        let (a, b, y) = shared_signal(60, 6);
        let out = cvr_cross_validate(&a, &b, &y, 1, &default_eta_grid(), 0.8, 5, 7, &CvrConfig::default()).unwrap();
        let best = out.trace.mse.iter().copied().fold(f64::INFINITY, f64::min);
        assert!(best < 1e-6, "{:?}", out.trace.mse);
        assert!(out.c_index_mean > 0.99);
    }

    #[test]
    fn ties_prefer_larger_eta() {
        assert_eq!(argmin_prefer_larger(&[1.0, 0.5, 0.5, 0.7], &[0.0, 0.1, 0.2, 0.3]), 2);
    }

    #[test]
    fn concordance_examples() {
        let t: Vec<f64> = (0..20).map(f64::from).collect();
        let anti: Vec<f64> = t.iter().map(|v| -v).collect();
        assert_eq!(concordance_index(&anti, &t).unwrap(), 1.0);
        assert_eq!(concordance_index(&t, &t).unwrap(), 0.0);
        assert_eq!(concordance_index(&[3.0; 20], &t).unwrap(), 0.5);
        assert!(concordance_index(&[1.0, 2.0], &[1.0, 1.0]).is_err());

        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let risk: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let time: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        assert!((concordance_index(&risk, &time).unwrap() - 0.5).abs() < 0.02);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(32))]

        #[test]
        fn concordance_invariant_under_monotone_maps(
            risk in prop::collection::vec(-3.0f64..3.0, 5..40),
            seed in 0u64..1000,
        ) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let time: Vec<f64> = risk.iter().map(|_| rng.random_range(0.0..10.0)).collect();
            let mapped: Vec<f64> = risk.iter().map(|r| r.exp() * 2.0 + r.powi(3)).collect();
            let a = concordance_index(&risk, &time).unwrap();
            let b = concordance_index(&mapped, &time).unwrap();
            prop_assert_eq!(a, b);
        }
    }
}

//! Classical canonical correlation analysis on coefficient matrices.
//!
//! Both inputs are column-centered and orthonormalized by a thin QR
//! factorization; the canonical correlations are the singular values of
//! `Q₁ᵀQ₂`, and weights are recovered through the triangular factors.

use nalgebra::{DMatrix, DVector, Dyn, SymmetricEigen, SVD};

use crate::error::{Error, Result};

/// Condition number of a triangular factor beyond which a ridge is required.
pub const MAX_CONDITION: f64 = 1e10;

/// Canonical pairs, strongest first.
#[derive(Debug, Clone, PartialEq)]
pub struct CcaResult {
    pub correlations: Vec<f64>,
    /// `r₁ × m`; variates are `centered(C₁) · weights_1`.
    pub weights_1: DMatrix<f64>,
    pub weights_2: DMatrix<f64>,
    /// `n × m`, unit sample variance per column.
    pub variates_1: DMatrix<f64>,
    pub variates_2: DMatrix<f64>,
    pub regularization_used: f64,
}

/// Centered data with a triangular factor `R` such that `X R⁻¹` has
/// orthonormal columns (exactly when the ridge is zero).
#[derive(Debug, Clone)]
pub(crate) struct Whitened {
    pub means: DVector<f64>,
    pub x: DMatrix<f64>,
    pub q: DMatrix<f64>,
    pub r: DMatrix<f64>,
}

pub(crate) fn column_means(c: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_iterator(c.ncols(), c.column_iter().map(|col| col.mean()))
}

pub(crate) fn center_with(c: &DMatrix<f64>, means: &DVector<f64>) -> DMatrix<f64> {
    DMatrix::from_fn(c.nrows(), c.ncols(), |i, j| c[(i, j)] - means[j])
}

/// Thin SVD whose reconstruction is verified.
///
/// The dynamic nalgebra SVD occasionally returns factors that do not
/// reproduce the input (seen on small square matrices); the transpose is then
/// factored instead and its factors swapped.
pub(crate) fn checked_svd(m: &DMatrix<f64>) -> Result<SVD<f64, Dyn, Dyn>> {
    let tol = 1e-10 * m.norm().max(1.0);
    let direct = m.clone().svd(true, true);
    if reconstruction_error(&direct, m) <= tol {
        return Ok(direct);
    }
    let t = m.transpose().svd(true, true);
    let swapped = SVD {
        u: t.v_t.map(|v| v.transpose()),
        v_t: t.u.map(|u| u.transpose()),
        singular_values: t.singular_values,
    };
    if reconstruction_error(&swapped, m) <= tol {
        return Ok(swapped);
    }
    Err(Error::NotConverged("singular value decomposition"))
}

fn reconstruction_error(svd: &SVD<f64, Dyn, Dyn>, m: &DMatrix<f64>) -> f64 {
    match (&svd.u, &svd.v_t) {
        (Some(u), Some(vt)) => (u * DMatrix::from_diagonal(&svd.singular_values) * vt - m).norm(),
        _ => f64::INFINITY,
    }
}

fn condition(r: &DMatrix<f64>) -> f64 {
    let s = r.singular_values();
    let max = s.max();
    let min = s.min();
    if min > 0.0 {
        max / min
    } else {
        f64::INFINITY
    }
}

pub(crate) fn whiten(c: &DMatrix<f64>, ridge: f64) -> Result<Whitened> {
    let (n, p) = c.shape();
    if n < 3 {
        return Err(Error::InvalidInput(format!("canonical analysis needs at least 3 rows, got {n}")));
    }
    if p == 0 {
        return Err(Error::InvalidInput("coefficient matrix has no columns".into()));
    }
    if c.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("coefficient matrix"));
    }
    if !(ridge >= 0.0 && ridge.is_finite()) {
        return Err(Error::InvalidInput(format!("ridge must be a nonnegative number, got {ridge}")));
    }
    let means = column_means(c);
    let x = center_with(c, &means);
    if ridge == 0.0 {
        for (j, col) in x.column_iter().enumerate() {
            let scale = c.column(j).amax().max(f64::MIN_POSITIVE);
            if col.amax() <= 1e-13 * scale {
                return Err(Error::ZeroVariance { column: j });
            }
        }
        if n <= p {
            return Err(Error::RankDeficient { condition: f64::INFINITY });
        }
        let qr = x.clone().qr();
        let r = qr.r();
        let cond = condition(&r);
        if cond > MAX_CONDITION {
            return Err(Error::RankDeficient { condition: cond });
        }
        let q = qr.q();
        Ok(Whitened { means, x, q, r })
    } else {
        let gram = x.transpose() * &x + DMatrix::identity(p, p) * (ridge * (n - 1) as f64);
        let chol = gram
            .cholesky()
            .ok_or(Error::RankDeficient { condition: f64::INFINITY })?;
        let r = chol.l().transpose();
        let q = r
            .solve_upper_triangular(&x.transpose())
            .ok_or(Error::RankDeficient { condition: f64::INFINITY })?
            .transpose();
        Ok(Whitened { means, x, q, r })
    }
}

/// Canonical correlation analysis of the paired rows of `c1` and `c2`.
///
/// `ridge` adds `ridge · I` to each within-group covariance; zero gives the
/// classical estimator. Weight columns are signed so that the largest entry
/// of the first group's weight is positive, which keeps every correlation
/// nonnegative.
pub fn cca(c1: &DMatrix<f64>, c2: &DMatrix<f64>, ridge: f64) -> Result<CcaResult> {
    if c1.nrows() != c2.nrows() {
        return Err(Error::LengthMismatch {
            expected: c1.nrows(),
            actual: c2.nrows(),
        });
    }
    let n = c1.nrows();
    let w1 = whiten(c1, ridge)?;
    let w2 = whiten(c2, ridge)?;
    let k = w1.q.transpose() * &w2.q;
    let svd = checked_svd(&k)?;
    let u = svd.u.expect("requested");
    let vt = svd.v_t.expect("requested");
    let m = c1.ncols().min(c2.ncols());
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]).then(a.cmp(&b)));
    order.truncate(m);

    let scale = ((n - 1) as f64).sqrt();
    let um = DMatrix::from_fn(u.nrows(), m, |i, j| u[(i, order[j])] * scale);
    let vm = DMatrix::from_fn(vt.ncols(), m, |i, j| vt[(order[j], i)] * scale);
    let mut weights_1 = w1.r.solve_upper_triangular(&um).ok_or(Error::RankDeficient { condition: f64::INFINITY })?;
    let mut weights_2 = w2.r.solve_upper_triangular(&vm).ok_or(Error::RankDeficient { condition: f64::INFINITY })?;
    let mut variates_1 = &w1.x * &weights_1;
    let mut variates_2 = &w2.x * &weights_2;

    for j in 0..m {
        let s1 = unit_variance_scale(variates_1.column(j).iter());
        let s2 = unit_variance_scale(variates_2.column(j).iter());
        let col = weights_1.column(j);
        let big = col.iter().copied().fold(0.0f64, |a, v| if v.abs() > a.abs() { v } else { a });
        let sign = if big < 0.0 { -1.0 } else { 1.0 };
        weights_1.column_mut(j).scale_mut(sign * s1);
        variates_1.column_mut(j).scale_mut(sign * s1);
        weights_2.column_mut(j).scale_mut(sign * s2);
        variates_2.column_mut(j).scale_mut(sign * s2);
    }

    let correlations = order
        .iter()
        .map(|&i| svd.singular_values[i].clamp(0.0, 1.0))
        .collect();
    Ok(CcaResult {
        correlations,
        weights_1,
        weights_2,
        variates_1,
        variates_2,
        regularization_used: ridge,
    })
}

fn unit_variance_scale<'a>(col: impl Iterator<Item = &'a f64>) -> f64 {
    let v: Vec<f64> = col.copied().collect();
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    if var > 0.0 {
        1.0 / var.sqrt()
    } else {
        1.0
    }
}

/// Canonical correlations from explicitly formed covariance blocks.
///
/// Solves the eigenproblem of `Σ₁₁⁻¹Σ₁₂Σ₂₂⁻¹Σ₂₁` in its symmetrized form. It
/// shares no code with [`cca`] and serves as an independent check of it.
pub fn cca_oracle(c1: &DMatrix<f64>, c2: &DMatrix<f64>) -> Result<Vec<f64>> {
    let n = c1.nrows();
    if n != c2.nrows() {
        return Err(Error::LengthMismatch { expected: n, actual: c2.nrows() });
    }
    if n < 3 {
        return Err(Error::InvalidInput("canonical analysis needs at least 3 rows".into()));
    }
    let x1 = center_with(c1, &column_means(c1));
    let x2 = center_with(c2, &column_means(c2));
    let d = (n - 1) as f64;
    let s11 = x1.transpose() * &x1 / d;
    let s22 = x2.transpose() * &x2 / d;
    let s12 = x1.transpose() * &x2 / d;

    let e = SymmetricEigen::new(s11);
    if e.eigenvalues.iter().any(|l| *l <= 0.0) {
        return Err(Error::RankDeficient { condition: f64::INFINITY });
    }
    let inv_sqrt = &e.eigenvectors
        * DMatrix::from_diagonal(&e.eigenvalues.map(|l| 1.0 / l.sqrt()))
        * e.eigenvectors.transpose();
    let s22_inv = s22.try_inverse().ok_or(Error::RankDeficient { condition: f64::INFINITY })?;
    let t = &inv_sqrt * &s12 * s22_inv * s12.transpose() * &inv_sqrt;
    let t = (&t + t.transpose()) * 0.5;
    let mut ev: Vec<f64> = t.symmetric_eigenvalues().iter().copied().collect();
    ev.sort_by(|a, b| b.total_cmp(a));
    ev.truncate(c1.ncols().min(c2.ncols()));
    Ok(ev.into_iter().map(|l| l.max(0.0).sqrt().min(1.0)).collect())
}

/// Pearson correlation of two equal-length columns.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let mut sab = 0.0;
    let mut saa = 0.0;
    let mut sbb = 0.0;
    for (x, y) in a.iter().zip(b) {
        sab += (x - ma) * (y - mb);
        saa += (x - ma).powi(2);
        sbb += (y - mb).powi(2);
    }
    sab / (saa * sbb).sqrt()
}

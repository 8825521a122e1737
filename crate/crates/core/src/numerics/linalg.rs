use crate::error::{shape_err, Error, Result};

use super::{norm2, Matrix};

/// Default ridge for Gram solves.
pub const DEFAULT_RIDGE: f64 = 1e-8;

/// Number of times the ridge is escalated after a failed factorization.
const RIDGE_RETRIES: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct CholeskySolution {
    pub x: Vec<f64>,
    /// Ridge actually used by the successful factorization.
    pub ridge: f64,
    /// `‖(m + ridge·I)x − v‖₂`.
    pub residual: f64,
}

/// Lower-triangular Cholesky factor, or `None` if a pivot is not safely
/// positive.
fn cholesky(m: &Matrix, ridge: f64) -> Option<Matrix> {
    let n = m.rows();
    let max_diag = (0..n).map(|i| m[(i, i)].abs()).fold(0.0, f64::max) + ridge;
    let floor = (n as f64) * f64::EPSILON * max_diag.max(f64::MIN_POSITIVE);
    let mut l = Matrix::zeros(n, n);
    for j in 0..n {
        let mut d = m[(j, j)] + ridge;
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > floor) {
            return None;
        }
        let djj = d.sqrt();
        l[(j, j)] = djj;
        for i in j + 1..n {
            let mut s = m[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / djj;
        }
    }
    Some(l)
}

fn solve_factored(l: &Matrix, v: &[f64]) -> Vec<f64> {
    let n = l.rows();
    let mut y = vec![0.0; n];
    for i in 0..n {
        let mut s = v[i];
        for k in 0..i {
            s -= l[(i, k)] * y[k];
        }
        y[i] = s / l[(i, i)];
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[(k, i)] * x[k];
        }
        x[i] = s / l[(i, i)];
    }
    x
}

/// Solves `(m + ridge·I) x = v` for symmetric `m`.
///
/// When the factorization breaks down the ridge is multiplied by ten (or set
/// to [`DEFAULT_RIDGE`] if it was zero) and the solve is retried, at most
/// three times.
pub fn cholesky_solve(m: &Matrix, v: &[f64], ridge: f64) -> Result<CholeskySolution> {
    if !m.is_square() {
        return Err(shape_err(format!("cholesky on {:?} matrix", m.shape())));
    }
    if m.rows() != v.len() {
        return Err(shape_err("cholesky rhs length mismatch"));
    }
    if ridge < 0.0 || !ridge.is_finite() {
        return Err(Error::Contract(format!("ridge must be >= 0, got {ridge}")));
    }
    if !m.is_finite() || v.iter().any(|x| !x.is_finite()) {
        return Err(Error::Numeric("non-finite entries in linear system".into()));
    }
    let mut r = ridge;
    for attempt in 0..=RIDGE_RETRIES {
        if let Some(l) = cholesky(m, r) {
            let x = solve_factored(&l, v);
            let mut resid = m.matvec(&x)?;
            for ((ri, xi), vi) in resid.iter_mut().zip(&x).zip(v) {
                *ri += r * xi - vi;
            }
            return Ok(CholeskySolution {
                x,
                ridge: r,
                residual: norm2(&resid),
            });
        }
        if attempt < RIDGE_RETRIES {
            r = if r == 0.0 { DEFAULT_RIDGE } else { r * 10.0 };
        }
    }
    Err(Error::Singular(format!(
        "factorization failed with ridge escalated to {r:e}"
    )))
}

/// Central-difference Jacobian of `f` at `x`.
pub fn finite_difference_jacobian<F>(f: F, x: &[f64], step: f64) -> Matrix
where
    F: Fn(&[f64]) -> Vec<f64>,
{
    let n = x.len();
    let mut probe = x.to_vec();
    let mut cols = Vec::with_capacity(n);
    for j in 0..n {
        probe[j] = x[j] + step;
        let fp = f(&probe);
        probe[j] = x[j] - step;
        let fm = f(&probe);
        probe[j] = x[j];
        cols.push(
            fp.iter()
                .zip(&fm)
                .map(|(a, b)| (a - b) / (2.0 * step))
                .collect::<Vec<_>>(),
        );
    }
    let m = cols.first().map_or(0, Vec::len);
    let mut jac = Matrix::zeros(m, n);
    for (j, c) in cols.iter().enumerate() {
        jac.set_col(j, c);
    }
    jac
}

/// Eigenvalues of a symmetric matrix by cyclic Jacobi rotations, ascending.
pub fn symmetric_eigenvalues(m: &Matrix) -> Result<Vec<f64>> {
    if !m.is_square() {
        return Err(shape_err("eigenvalues of non-square matrix"));
    }
    let n = m.rows();
    let mut a = m.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off <= 1e-30 * a.frobenius_norm().powi(2).max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[(p, q)];
                if apq.abs() < f64::MIN_POSITIVE {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * apq);
                let sgn = if theta >= 0.0 { 1.0 } else { -1.0 };
                let t = sgn / (theta.abs() + (theta * theta + 1.0).sqrt());
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[(i, i)]).collect();
    ev.sort_by(f64::total_cmp);
    Ok(ev)
}

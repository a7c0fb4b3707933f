//! Cholesky factorization, its reverse-mode gradient, and triangular solves.

use super::Matrix;
use crate::error::{IckError, Result};

/// Result of a jittered Cholesky factorization: `l * l^T = A + jitter * I`.
#[derive(Clone, Debug)]
pub struct CholeskyFactor {
    /// Lower-triangular factor with strictly positive diagonal.
    pub l: Matrix,
    /// The jitter that was actually added to the diagonal.
    pub jitter: f64,
}

/// Which triangular system to solve against a lower factor `L`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Side {
    /// Solve `L * X = B` by forward substitution.
    Lower,
    /// Solve `L^T * X = B` by back substitution.
    UpperTransposed,
}

/// Cholesky factorization of a symmetric matrix, retrying along a jitter
/// schedule. The first jitter whose factorization completes with strictly
/// positive pivots wins and is reported in the result.
pub fn cholesky(a: &Matrix, jitter_schedule: &[f64]) -> Result<CholeskyFactor> {
    a.check_symmetric(1e-10)?;
    let schedule: &[f64] = if jitter_schedule.is_empty() {
        &[0.0]
    } else {
        jitter_schedule
    };
    let mut last = 0.0;
    for &jitter in schedule {
        last = jitter;
        if let Some(l) = try_factor(a, jitter) {
            return Ok(CholeskyFactor { l, jitter });
        }
    }
    Err(IckError::NotPositiveDefinite { last_jitter: last })
}

fn try_factor(a: &Matrix, jitter: f64) -> Option<Matrix> {
    let n = a.rows();
    let mut l = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..=i {
            let mut s = a[(i, j)];
            if i == j {
                s += jitter;
            }
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            if i == j {
                if s <= 0.0 || !s.is_finite() {
                    return None;
                }
                l[(i, i)] = s.sqrt();
            } else {
                l[(i, j)] = s / l[(j, j)];
            }
        }
    }
    Some(l)
}

/// Reverse-mode gradient through the Cholesky factorization.
///
/// Given `L = chol(A)` and the upstream gradient `l_bar = dLoss/dL`, returns
/// the symmetrized `dLoss/dA`. Uses the triangular Phi-operator form:
/// `A_bar = 1/2 (S + S^T)` with `S = L^{-T} Phi(L^T L_bar) L^{-1}`, where
/// `Phi` keeps the lower triangle and halves the diagonal. Entries of
/// `l_bar` above the diagonal are ignored.
pub fn cholesky_vjp(l: &Matrix, l_bar: &Matrix) -> Result<Matrix> {
    if l.rows() != l.cols() {
        return Err(IckError::shape(
            "cholesky_vjp factor",
            "square",
            format!("{}x{}", l.rows(), l.cols()),
        ));
    }
    if (l_bar.rows(), l_bar.cols()) != (l.rows(), l.cols()) {
        return Err(IckError::shape(
            "cholesky_vjp upstream",
            format!("{}x{}", l.rows(), l.cols()),
            format!("{}x{}", l_bar.rows(), l_bar.cols()),
        ));
    }
    let n = l.rows();
    // P = Phi(L^T tril(L_bar))
    let p_full = l.transpose().matmul(&l_bar.tril());
    let mut p = p_full.tril();
    for i in 0..n {
        p[(i, i)] *= 0.5;
    }
    // S = L^{-T} P L^{-1}: first Y = L^{-T} P, then S^T = L^{-T} Y^T.
    let y = triangular_solve(l, &p, Side::UpperTransposed)?;
    let s_t = triangular_solve(l, &y.transpose(), Side::UpperTransposed)?;
    let s = s_t.transpose();
    let mut a_bar = Matrix::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            a_bar[(i, j)] = 0.5 * (s[(i, j)] + s[(j, i)]);
        }
    }
    Ok(a_bar)
}

/// Solves `L X = B` or `L^T X = B` for a lower-triangular `L`.
pub fn triangular_solve(l: &Matrix, b: &Matrix, side: Side) -> Result<Matrix> {
    if !l.is_square() {
        return Err(IckError::shape(
            "triangular_solve factor",
            "square",
            format!("{}x{}", l.rows(), l.cols()),
        ));
    }
    if l.rows() != b.rows() {
        return Err(IckError::shape(
            "triangular_solve rhs",
            format!("{} rows", l.rows()),
            format!("{} rows", b.rows()),
        ));
    }
    let n = l.rows();
    for i in 0..n {
        let d = l[(i, i)];
        if d.abs() < 1e-300 {
            return Err(IckError::SingularFactor { index: i, value: d });
        }
    }
    let m = b.cols();
    let mut x = b.clone();
    match side {
        Side::Lower => {
            for i in 0..n {
                for k in 0..i {
                    let lik = l[(i, k)];
                    if lik == 0.0 {
                        continue;
                    }
                    for c in 0..m {
                        x[(i, c)] -= lik * x[(k, c)];
                    }
                }
                let d = l[(i, i)];
                for c in 0..m {
                    x[(i, c)] /= d;
                }
            }
        }
        Side::UpperTransposed => {
            for i in (0..n).rev() {
                for k in (i + 1)..n {
                    let lki = l[(k, i)];
                    if lki == 0.0 {
                        continue;
                    }
                    for c in 0..m {
                        x[(i, c)] -= lki * x[(k, c)];
                    }
                }
                let d = l[(i, i)];
                for c in 0..m {
                    x[(i, c)] /= d;
                }
            }
        }
    }
    Ok(x)
}

/// Solves `(L L^T) X = B` with two triangular sweeps.
pub fn solve_with_factor(l: &Matrix, b: &Matrix) -> Result<Matrix> {
    let y = triangular_solve(l, b, Side::Lower)?;
    triangular_solve(l, &y, Side::UpperTransposed)
}

//! Dense complex linear algebra used by the detectors and precoders.
//!
//! Storage, products and LU/SVD come from `nalgebra`. The Householder QR used
//! by the LMMSE solver is implemented here so the reflectors can be applied
//! to right-hand sides without ever forming `Q`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use thiserror::Error;

pub type CMat = DMatrix<Complex64>;
pub type CVec = DVector<Complex64>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LinalgError {
    #[error("matrix is singular or numerically rank deficient (ratio {ratio:e})")]
    RankDeficient { ratio: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Householder QR factorization `A = Q R` of a tall matrix.
#[derive(Debug, Clone)]
pub struct HouseholderQr {
    /// Column `j` holds the unit reflector vector for step `j` (rows `j..m`).
    reflectors: CMat,
    r: CMat,
}

impl HouseholderQr {
    pub fn new(a: &CMat) -> Result<Self, LinalgError> {
        let (m, n) = a.shape();
        if m < n {
            return Err(LinalgError::Dimension(format!(
                "QR needs rows >= cols, got {m}x{n}"
            )));
        }
        let mut work = a.clone();
        let mut reflectors = CMat::zeros(m, n);
        for j in 0..n {
            let norm = (j..m).map(|i| work[(i, j)].norm_sqr()).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let x0 = work[(j, j)];
            let phase = if x0.norm() == 0.0 {
                Complex64::new(1.0, 0.0)
            } else {
                x0 / x0.norm()
            };
            let alpha = -phase * norm;
            // v = x - alpha e1; |x0 - alpha| = |x0| + norm so no cancellation
            let mut vnorm_sqr = 0.0;
            for i in j..m {
                let v = if i == j {
                    work[(i, j)] - alpha
                } else {
                    work[(i, j)]
                };
                reflectors[(i, j)] = v;
                vnorm_sqr += v.norm_sqr();
            }
            let vnorm = vnorm_sqr.sqrt();
            for i in j..m {
                reflectors[(i, j)] /= vnorm;
            }
            apply_reflector(&reflectors, j, &mut work, j);
            work[(j, j)] = alpha;
            for i in j + 1..m {
                work[(i, j)] = Complex64::new(0.0, 0.0);
            }
        }
        let r = work.rows(0, n).into_owned();
        Ok(Self { reflectors, r })
    }

    /// Upper-triangular factor (`n x n`).
    pub fn r(&self) -> &CMat {
        &self.r
    }

    /// Overwrites `b` with `Q^H b`.
    pub fn apply_qh(&self, b: &mut CMat) {
        for j in 0..self.reflectors.ncols() {
            apply_reflector(&self.reflectors, j, b, 0);
        }
    }

    /// Materializes the thin `Q` factor (`m x n`).
    pub fn thin_q(&self) -> CMat {
        let (m, n) = self.reflectors.shape();
        let mut q = CMat::identity(m, n);
        for j in (0..n).rev() {
            apply_reflector(&self.reflectors, j, &mut q, 0);
        }
        q
    }

    /// Ratio of the smallest to largest `|R_ii|`.
    pub fn diagonal_ratio(&self) -> f64 {
        let diag: Vec<f64> = (0..self.r.ncols()).map(|i| self.r[(i, i)].norm()).collect();
        let max = diag.iter().cloned().fold(0.0, f64::max);
        let min = diag.iter().cloned().fold(f64::INFINITY, f64::min);
        if max == 0.0 {
            0.0
        } else {
            min / max
        }
    }

    /// Least-squares solution `argmin ||A x - b||` for each column of `b`.
    pub fn solve_least_squares(&self, b: &CMat, min_ratio: f64) -> Result<CMat, LinalgError> {
        let (m, n) = self.reflectors.shape();
        if b.nrows() != m {
            return Err(LinalgError::Dimension(format!(
                "rhs has {} rows, expected {m}",
                b.nrows()
            )));
        }
        let ratio = self.diagonal_ratio();
        if !(ratio > min_ratio) {
            return Err(LinalgError::RankDeficient { ratio });
        }
        let mut rhs = b.clone();
        self.apply_qh(&mut rhs);
        let top = rhs.rows(0, n).into_owned();
        Ok(back_substitute(&self.r, &top))
    }
}

/// Applies `I - 2 v v^H` (reflector column `j`) to columns `first_col..` of `target`.
fn apply_reflector(reflectors: &CMat, j: usize, target: &mut CMat, first_col: usize) {
    let m = reflectors.nrows();
    for c in first_col..target.ncols() {
        let mut dot = Complex64::new(0.0, 0.0);
        for i in j..m {
            dot += reflectors[(i, j)].conj() * target[(i, c)];
        }
        if dot == Complex64::new(0.0, 0.0) {
            continue;
        }
        let scale = dot * 2.0;
        for i in j..m {
            let v = reflectors[(i, j)];
            target[(i, c)] -= v * scale;
        }
    }
}

/// Solves `R x = b` for upper-triangular `R`.
pub fn back_substitute(r: &CMat, b: &CMat) -> CMat {
    let n = r.ncols();
    let mut x = b.clone();
    for c in 0..b.ncols() {
        for i in (0..n).rev() {
            let mut acc = x[(i, c)];
            for k in i + 1..n {
                acc -= r[(i, k)] * x[(k, c)];
            }
            x[(i, c)] = acc / r[(i, i)];
        }
    }
    x
}

/// Singular values in descending order.
pub fn singular_values(a: &CMat) -> Vec<f64> {
    let mut sv: Vec<f64> = a
        .clone()
        .svd(false, false)
        .singular_values
        .iter()
        .cloned()
        .collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    sv
}

/// Inverse of a square matrix through LU with partial pivoting.
pub fn inverse(a: &CMat) -> Result<CMat, LinalgError> {
    a.clone()
        .try_inverse()
        .ok_or(LinalgError::RankDeficient { ratio: 0.0 })
}

/// Relative Frobenius distance `||a - b|| / ||b||`.
pub fn relative_error(a: &CMat, b: &CMat) -> f64 {
    let denom = b.norm();
    let diff = (a - b).norm();
    if denom == 0.0 {
        diff
    } else {
        diff / denom
    }
}

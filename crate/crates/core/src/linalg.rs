use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{FciError, Result};

pub type Mat = DMatrix<f64>;
pub type Vector = DVector<f64>;

/// Ratio of extreme eigenvalues of a symmetric matrix; infinite when singular.
pub fn condition_estimate(a: &Mat) -> f64 {
    let eig = a.clone().symmetric_eigen();
    let max = eig.eigenvalues.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let min = eig
        .eigenvalues
        .iter()
        .fold(f64::INFINITY, |m, v| m.min(v.abs()));
    if min == 0.0 || !min.is_finite() {
        f64::INFINITY
    } else {
        max / min
    }
}

/// Cholesky factor of a symmetric positive (semi)definite matrix.
///
/// When the plain factorisation fails a ridge of `1e-10 * trace / dim` is added
/// and multiplied by ten until it reaches `1e-6 * trace / dim`. Returns the
/// factor together with the ridge actually used.
pub fn cholesky_with_jitter(a: &Mat, context: &'static str) -> Result<(Cholesky<f64, Dyn>, f64)> {
    if let Some(chol) = Cholesky::new(a.clone()) {
        return Ok((chol, 0.0));
    }
    let dim = a.nrows().max(1) as f64;
    let scale = (a.trace() / dim).abs();
    if scale > 0.0 && scale.is_finite() {
        let mut ridge = 1e-10 * scale;
        while ridge <= 1e-6 * scale * (1.0 + 1e-12) {
            let mut shifted = a.clone();
            for i in 0..a.nrows() {
                shifted[(i, i)] += ridge;
            }
            if let Some(chol) = Cholesky::new(shifted) {
                return Ok((chol, ridge));
            }
            ridge *= 10.0;
        }
    }
    Err(FciError::Singular {
        context,
        condition: condition_estimate(a),
    })
}

/// Cholesky factor with a caller-fixed ridge (zero for none).
pub fn cholesky_with_ridge(a: &Mat, ridge: f64, context: &'static str) -> Result<Cholesky<f64, Dyn>> {
    let mut shifted = a.clone();
    for i in 0..a.nrows() {
        shifted[(i, i)] += ridge;
    }
    Cholesky::new(shifted).ok_or_else(|| FciError::Singular {
        context,
        condition: condition_estimate(a),
    })
}

/// Factor a matrix that must be positive definite as given.
pub fn cholesky_strict(a: &Mat, context: &'static str) -> Result<Cholesky<f64, Dyn>> {
    cholesky_with_ridge(a, 0.0, context)
}

pub fn mat_from_rows(rows: &[Vec<f64>]) -> Result<Mat> {
    let r = rows.len();
    let c = rows.first().map_or(0, Vec::len);
    if rows.iter().any(|row| row.len() != c) {
        return Err(FciError::InvalidArgument("ragged matrix rows".into()));
    }
    Ok(Mat::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn mat_to_rows(m: &Mat) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

pub fn max_asymmetry(m: &Mat) -> f64 {
    let mut worst = 0.0_f64;
    for i in 0..m.nrows() {
        for j in 0..i {
            worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
        }
    }
    worst
}

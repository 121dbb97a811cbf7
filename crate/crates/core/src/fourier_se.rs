//! Closed-form forecast standard error from a Fourier-basis OLS fit.
//!
//! The point forecast may come from any model; the standard error is always
//! built from the residuals of the basis regression, clustered by period.

use std::f64::consts::FRAC_PI_4;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_len, FciError, Result};
use crate::linalg::{cholesky_with_jitter, cholesky_with_ridge, Mat, Vector};
use crate::panel::Panel;
use crate::stats::two_sided_critical;

/// `Φ(x)`: optional intercept, then for each feature `k` and each order
/// `j = 1..=J` the pair `sin(j·scale·x_k), cos(j·scale·x_k)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FourierBasis {
    pub order: usize,
    pub input_dim: usize,
    #[serde(default = "default_scale")]
    pub scale: f64,
    #[serde(default = "default_true")]
    pub include_intercept: bool,
}

fn default_scale() -> f64 {
    FRAC_PI_4
}

fn default_true() -> bool {
    true
}

impl FourierBasis {
    /// Order `J` over `d` features with the default `π/4` scale and an intercept.
    pub fn new(order: usize, input_dim: usize) -> Self {
        FourierBasis {
            order,
            input_dim,
            scale: FRAC_PI_4,
            include_intercept: true,
        }
    }

    pub fn dim(&self) -> usize {
        usize::from(self.include_intercept) + 2 * self.order * self.input_dim
    }

    fn validate(&self) -> Result<()> {
        if self.order == 0 || self.input_dim == 0 {
            return Err(FciError::InvalidArgument(
                "Fourier order and input dimension must be positive".into(),
            ));
        }
        if !self.scale.is_finite() {
            return Err(FciError::NonFinite("Fourier scale"));
        }
        Ok(())
    }

    /// Write `Φ(x)` into `out` (length [`FourierBasis::dim`]).
    pub fn expand_row(&self, x: &[f64], out: &mut [f64]) {
        let mut c = 0;
        if self.include_intercept {
            out[0] = 1.0;
            c = 1;
        }
        for &xk in x {
            for j in 1..=self.order {
                let (s, co) = (j as f64 * self.scale * xk).sin_cos();
                out[c] = s;
                out[c + 1] = co;
                c += 2;
            }
        }
    }
}

/// Expanded design matrix, one row per row of the row-major `features`.
pub fn expand(basis: &FourierBasis, features: &[f64]) -> Result<Mat> {
    basis.validate()?;
    let d = basis.input_dim;
    if features.len() % d != 0 {
        return Err(FciError::DimensionMismatch {
            context: "feature matrix width",
            expected: d,
            actual: features.len() % d,
        });
    }
    ensure_finite(features, "basis features")?;
    Ok(expand_unchecked(basis, features))
}

fn expand_unchecked(basis: &FourierBasis, features: &[f64]) -> Mat {
    let d = basis.input_dim;
    let n = features.len() / d;
    let p = basis.dim();
    // filled transposed so each row of Φ is a contiguous column
    let mut t = Mat::zeros(p, n);
    for (r, x) in features.chunks_exact(d).enumerate() {
        basis.expand_row(x, t.column_mut(r).as_mut_slice());
    }
    t.transpose()
}

#[derive(Debug, Clone, PartialEq)]
pub struct OlsFit {
    pub coefficients: Vec<f64>,
    pub gram: Mat,
    pub residuals: Vec<f64>,
    /// Diagonal ridge that was needed to factor the Gram matrix (0 if none).
    pub ridge: f64,
}

impl OlsFit {
    pub fn fitted(&self, basis: &FourierBasis, features: &[f64]) -> Result<Vec<f64>> {
        let phi = expand(basis, features)?;
        Ok((phi * Vector::from_column_slice(&self.coefficients)).data.into())
    }
}

fn check_panel(panel: &Panel, basis: &FourierBasis) -> Result<()> {
    basis.validate()?;
    if panel.dim() != basis.input_dim {
        return Err(FciError::DimensionMismatch {
            context: "basis input dimension",
            expected: basis.input_dim,
            actual: panel.dim(),
        });
    }
    Ok(())
}

/// Least squares of the panel targets on `Φ(x)` pooled over all observations.
pub fn fit_ols(panel: &Panel, basis: &FourierBasis) -> Result<OlsFit> {
    check_panel(panel, basis)?;
    let p = basis.dim();
    if panel.n_obs() < p {
        return Err(FciError::InvalidArgument(format!(
            "{} observations cannot identify {} basis coefficients",
            panel.n_obs(),
            p
        )));
    }
    let phi = expand_unchecked(basis, panel.features());
    let y = Vector::from_column_slice(panel.targets());
    let gram = phi.tr_mul(&phi);
    let (chol, ridge) = cholesky_with_jitter(&gram, "Fourier Gram matrix")?;
    let theta = chol.solve(&phi.tr_mul(&y));
    let fitted = &phi * &theta;
    let residuals: Vec<f64> = (y - fitted).data.into();
    ensure_finite(theta.as_slice(), "OLS coefficients")?;
    Ok(OlsFit {
        coefficients: theta.data.into(),
        gram,
        residuals,
        ridge,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeResult {
    pub se: f64,
    /// `H = (Ψ'Ψ)^{-1} Φ_T' W`.
    pub h: Vec<f64>,
    /// Signed per-period scores `H' Σ_i Φ(x_{i,t-1}) ê_{i,t}`; `se² = Σ_t term²`.
    pub per_period_terms: Vec<f64>,
}

/// Time-clustered standard error of the weighted forecast `Σ_i w_i g(x_{i,T})`.
pub fn analytic_se(
    fit: &OlsFit,
    basis: &FourierBasis,
    panel: &Panel,
    weights: &[f64],
    x_t: &[f64],
) -> Result<SeResult> {
    check_panel(panel, basis)?;
    let p = basis.dim();
    ensure_len(fit.coefficients.len(), p, "OLS coefficients")?;
    ensure_len(fit.residuals.len(), panel.n_obs(), "OLS residuals")?;
    ensure_len(x_t.len(), weights.len() * basis.input_dim, "forecast features")?;
    ensure_finite(weights, "portfolio weights")?;
    ensure_finite(x_t, "forecast features")?;

    let mut target = vec![0.0; p];
    let mut row = vec![0.0; p];
    for (x, &w) in x_t.chunks_exact(basis.input_dim).zip(weights) {
        basis.expand_row(x, &mut row);
        for (t, r) in target.iter_mut().zip(&row) {
            *t += w * r;
        }
    }
    let chol = cholesky_with_ridge(&fit.gram, fit.ridge, "Fourier Gram matrix")?;
    let h = chol.solve(&Vector::from_vec(target));

    let mut terms = vec![0.0; panel.n_periods()];
    for (t, term) in terms.iter_mut().enumerate() {
        for o in panel.period_range(t) {
            basis.expand_row(panel.feature_row(o), &mut row);
            let score: f64 = row.iter().zip(h.iter()).map(|(a, b)| a * b).sum();
            *term += score * fit.residuals[o];
        }
    }
    let se = terms.iter().map(|s| s * s).sum::<f64>().sqrt();
    if !se.is_finite() {
        return Err(FciError::NonFinite("analytic standard error"));
    }
    Ok(SeResult {
        se,
        h: h.data.into(),
        per_period_terms: terms,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lower: f64,
    pub upper: f64,
}

impl Interval {
    pub fn contains(&self, value: f64) -> bool {
        self.lower <= value && value <= self.upper
    }

    pub fn width(&self) -> f64 {
        self.upper - self.lower
    }
}

/// `forecast ± ε·se` with `ε` the two-sided standard-normal critical value.
pub fn fci(point_forecast: f64, se: f64, level: f64) -> Result<Interval> {
    if !(se >= 0.0) || !se.is_finite() {
        return Err(FciError::InvalidArgument(format!(
            "standard error must be finite and >= 0, got {se}"
        )));
    }
    let eps = two_sided_critical(level)?;
    Ok(Interval {
        lower: point_forecast - eps * se,
        upper: point_forecast + eps * se,
    })
}

/// Export form of an analytic interval.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticReport {
    pub forecast: f64,
    pub se: f64,
    pub level: f64,
    pub lower: f64,
    pub upper: f64,
    pub per_period_terms: Vec<f64>,
}

impl AnalyticReport {
    pub fn new(forecast: f64, se: &SeResult, level: f64) -> Result<Self> {
        let interval = fci(forecast, se.se, level)?;
        Ok(AnalyticReport {
            forecast,
            se: se.se,
            level,
            lower: interval.lower,
            upper: interval.upper,
            per_period_terms: se.per_period_terms.clone(),
        })
    }
}

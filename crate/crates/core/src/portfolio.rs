//! Mean-variance, uncertainty-averse and risk-sensitive portfolio weights.
//!
//! The uncertainty-averse (UA) problem
//!
//! ```text
//! max_ω min_{μ ∈ FCI} ω'μ − (γ/2) ω'Σω
//! ```
//!
//! over a box of forecast confidence intervals `[ẑ_i − q_i, ẑ_i + q_i]` is an
//! adaptive Lasso, `min (γ/2) ω'Σω − ω'ẑ + Σ q_i |ω_i|`, solved here by cyclic
//! coordinate descent followed by an exact solve on the detected active set.

use std::io::Write;

use nalgebra::LU;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_len, FciError, Result};
use crate::linalg::{cholesky_strict, condition_estimate, mat_from_rows, mat_to_rows, Mat, Vector};
use crate::stats::two_sided_critical;

/// Largest tolerated `|Σ_ij − Σ_ji|`.
pub const SYMMETRY_TOL: f64 = 1e-10;
/// Largest tolerated scaled KKT residual of a returned UA solution.
pub const KKT_TOL: f64 = 1e-8;
/// Largest tolerated `|Σω − 1|` under the budget constraint.
pub const BUDGET_TOL: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UaProblem {
    pub z_hat: Vec<f64>,
    pub q_alpha: Vec<f64>,
    pub sigma: Vec<Vec<f64>>,
    pub gamma: f64,
    #[serde(default)]
    pub budget_constraint: bool,
}

impl UaProblem {
    pub fn new(z_hat: Vec<f64>, q_alpha: Vec<f64>, sigma: &Mat, gamma: f64, budget_constraint: bool) -> Self {
        UaProblem {
            z_hat,
            q_alpha,
            sigma: mat_to_rows(sigma),
            gamma,
            budget_constraint,
        }
    }

    pub fn dim(&self) -> usize {
        self.z_hat.len()
    }

    /// Checks shapes, signs and symmetry; returns `Σ` as a matrix.
    pub fn validate(&self) -> Result<Mat> {
        let r = self.dim();
        if r == 0 {
            return Err(FciError::Empty("z_hat"));
        }
        ensure_len(self.q_alpha.len(), r, "q_alpha")?;
        ensure_finite(&self.z_hat, "z_hat")?;
        ensure_finite(&self.q_alpha, "q_alpha")?;
        if self.q_alpha.iter().any(|&q| q < 0.0) {
            return Err(FciError::InvalidArgument("q_alpha must be non-negative".into()));
        }
        check_gamma(self.gamma)?;
        if self.budget_constraint && r < 2 {
            return Err(FciError::InvalidArgument(
                "the budget constraint needs at least two assets".into(),
            ));
        }
        checked_sigma(&self.sigma, r)
    }

    /// `(γ/2) ω'Σω − ω'ẑ + Σ q_i |ω_i|`.
    pub fn objective(&self, omega: &[f64]) -> Result<f64> {
        let sigma = self.validate()?;
        ensure_len(omega.len(), self.dim(), "omega")?;
        Ok(ua_objective(&sigma, &self.z_hat, &self.q_alpha, self.gamma, omega))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Weights {
    pub omega: Vec<f64>,
    /// Indices with a non-zero weight.
    pub active: Vec<usize>,
    /// Value of the minimisation objective of the problem that produced the weights.
    pub objective: f64,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Multiplier of the budget constraint, when one was imposed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget_multiplier: Option<f64>,
}

impl Weights {
    fn plain(omega: Vec<f64>, objective: f64) -> Self {
        Weights {
            active: active_set(&omega),
            omega,
            objective,
            iterations: 0,
            kkt_residual: 0.0,
            budget_multiplier: None,
        }
    }

    pub fn sum(&self) -> f64 {
        self.omega.iter().sum()
    }
}

/// Coordinate-descent controls.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverOptions {
    /// Stop once a sweep changes no coordinate by more than this.
    pub tolerance: f64,
    pub max_sweeps: usize,
    pub warm_start: Option<Vec<f64>>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            tolerance: 1e-10,
            max_sweeps: 10_000,
            warm_start: None,
        }
    }
}

fn check_gamma(gamma: f64) -> Result<()> {
    if gamma > 0.0 && gamma.is_finite() {
        Ok(())
    } else {
        Err(FciError::InvalidArgument(format!("gamma must be positive, got {gamma}")))
    }
}

fn checked_sigma(rows: &[Vec<f64>], r: usize) -> Result<Mat> {
    ensure_len(rows.len(), r, "sigma rows")?;
    let sigma = mat_from_rows(rows)?;
    ensure_len(sigma.ncols(), r, "sigma columns")?;
    check_sigma(&sigma)?;
    Ok(sigma)
}

fn check_sigma(sigma: &Mat) -> Result<()> {
    if sigma.nrows() != sigma.ncols() {
        return Err(FciError::DimensionMismatch {
            context: "sigma",
            expected: sigma.nrows(),
            actual: sigma.ncols(),
        });
    }
    ensure_finite(sigma.as_slice(), "sigma")?;
    if crate::linalg::max_asymmetry(sigma) > SYMMETRY_TOL {
        return Err(FciError::InvalidArgument("sigma is not symmetric".into()));
    }
    if (0..sigma.nrows()).any(|i| sigma[(i, i)] <= 0.0) {
        return Err(FciError::Singular {
            context: "sigma",
            condition: f64::INFINITY,
        });
    }
    Ok(())
}

fn active_set(omega: &[f64]) -> Vec<usize> {
    (0..omega.len()).filter(|&i| omega[i] != 0.0).collect()
}

fn quad(sigma: &Mat, omega: &[f64]) -> f64 {
    let w = Vector::from_column_slice(omega);
    w.dot(&(sigma * &w))
}

fn ua_objective(sigma: &Mat, z: &[f64], q: &[f64], gamma: f64, omega: &[f64]) -> f64 {
    let lin: f64 = omega.iter().zip(z).map(|(w, z)| w * z).sum();
    let pen: f64 = omega.iter().zip(q).map(|(w, q)| q * w.abs()).sum();
    0.5 * gamma * quad(sigma, omega) - lin + pen
}

fn soft(x: f64, t: f64) -> f64 {
    if x > t {
        x - t
    } else if x < -t {
        x + t
    } else {
        0.0
    }
}

/// Classic mean-variance weights `Σ⁻¹ẑ/γ`.
pub fn mv_weights(z_hat: &[f64], sigma: &Mat, gamma: f64) -> Result<Weights> {
    check_gamma(gamma)?;
    ensure_finite(z_hat, "z_hat")?;
    ensure_len(sigma.nrows(), z_hat.len(), "sigma")?;
    check_sigma(sigma)?;
    let chol = cholesky_strict(sigma, "mean-variance covariance")?;
    let omega: Vec<f64> = (chol.solve(&Vector::from_column_slice(z_hat)) / gamma)
        .iter()
        .copied()
        .collect();
    let zero = vec![0.0; z_hat.len()];
    Ok(Weights::plain(
        omega.clone(),
        ua_objective(sigma, z_hat, &zero, gamma, &omega),
    ))
}

/// Mean-variance weights under `Σω = 1`.
pub fn mv_budget_weights(z_hat: &[f64], sigma: &Mat, gamma: f64) -> Result<Weights> {
    check_gamma(gamma)?;
    ensure_finite(z_hat, "z_hat")?;
    ensure_len(sigma.nrows(), z_hat.len(), "sigma")?;
    check_sigma(sigma)?;
    let chol = cholesky_strict(sigma, "mean-variance covariance")?;
    let r = z_hat.len();
    let a = chol.solve(&Vector::from_column_slice(z_hat));
    let b = chol.solve(&Vector::from_element(r, 1.0));
    let nu = (a.sum() - gamma) / b.sum();
    let omega: Vec<f64> = ((a - b * nu) / gamma).iter().copied().collect();
    let zero = vec![0.0; r];
    let mut w = Weights::plain(omega.clone(), ua_objective(sigma, z_hat, &zero, gamma, &omega));
    w.budget_multiplier = Some(nu);
    Ok(w)
}

/// Global minimum-variance weights `Σ⁻¹1 / 1'Σ⁻¹1`.
pub fn gmvp_weights(sigma: &Mat) -> Result<Weights> {
    check_sigma(sigma)?;
    let chol = cholesky_strict(sigma, "minimum-variance covariance")?;
    let b = chol.solve(&Vector::from_element(sigma.nrows(), 1.0));
    let omega: Vec<f64> = (&b / b.sum()).iter().copied().collect();
    let var = quad(sigma, &omega);
    Ok(Weights::plain(omega, var))
}

/// Single-asset UA weight `sgn(ω^MV)(|ω^MV| − λ)₊` with `λ = q/(γσ²)`.
///
/// At the kink `|ω^MV| = λ` the weight is zero.
pub fn soft_threshold_weight(z_hat: f64, q_alpha: f64, sigma2: f64, gamma: f64) -> Result<f64> {
    if !(sigma2 > 0.0 && sigma2.is_finite()) {
        return Err(FciError::InvalidArgument(format!("sigma2 must be positive, got {sigma2}")));
    }
    check_gamma(gamma)?;
    if !(q_alpha >= 0.0 && q_alpha.is_finite()) || !z_hat.is_finite() {
        return Err(FciError::InvalidArgument("q_alpha must be non-negative and finite".into()));
    }
    let mv = z_hat / (gamma * sigma2);
    let lambda = q_alpha / (gamma * sigma2);
    if mv.abs() <= lambda {
        Ok(0.0)
    } else {
        Ok(mv.signum() * (mv.abs() - lambda))
    }
}

/// Solves the UA problem with default solver options.
pub fn ua_weights(problem: &UaProblem) -> Result<Weights> {
    ua_weights_with(problem, &SolverOptions::default())
}

pub fn ua_weights_with(problem: &UaProblem, opts: &SolverOptions) -> Result<Weights> {
    let sigma = problem.validate()?;
    // Rejects indefinite covariances up front; descent alone would not notice.
    cholesky_strict(&sigma, "uncertainty-averse covariance")?;
    let r = problem.dim();
    let mut omega = match &opts.warm_start {
        Some(w) => {
            ensure_len(w.len(), r, "warm start")?;
            ensure_finite(w, "warm start")?;
            w.clone()
        }
        None => vec![0.0; r],
    };
    let (z, q, gamma) = (&problem.z_hat, &problem.q_alpha, problem.gamma);

    let (iterations, nu) = if problem.budget_constraint {
        let (it, nu) = budget_bisection(&sigma, z, q, gamma, &mut omega, opts)?;
        (it, Some(nu))
    } else {
        (cd_solve(&sigma, z, q, gamma, &mut omega, opts), None)
    };

    let (omega, nu) = match polish(&sigma, z, q, gamma, &omega, nu) {
        Some(exact) => exact,
        None => (omega, nu),
    };
    let residual = kkt_residual(&sigma, z, q, gamma, &omega, nu);
    if residual > KKT_TOL {
        return Err(FciError::NonConvergence { iterations, residual });
    }
    Ok(Weights {
        active: active_set(&omega),
        objective: ua_objective(&sigma, z, q, gamma, &omega),
        omega,
        iterations,
        kkt_residual: residual,
        budget_multiplier: nu,
    })
}

/// Cyclic coordinate descent on the unconstrained problem; returns sweeps used.
fn cd_solve(sigma: &Mat, z: &[f64], q: &[f64], gamma: f64, omega: &mut [f64], opts: &SolverOptions) -> usize {
    let r = z.len();
    let mut h: Vec<f64> = (0..r)
        .map(|i| (0..r).map(|j| sigma[(i, j)] * omega[j]).sum())
        .collect();
    for sweep in 1..=opts.max_sweeps {
        let mut max_change = 0.0_f64;
        for i in 0..r {
            let sii = sigma[(i, i)];
            let rho = z[i] - gamma * (h[i] - sii * omega[i]);
            let new = soft(rho, q[i]) / (gamma * sii);
            let delta = new - omega[i];
            if delta != 0.0 {
                for (j, hj) in h.iter_mut().enumerate() {
                    *hj += sigma[(j, i)] * delta;
                }
                omega[i] = new;
                max_change = max_change.max(delta.abs());
            }
        }
        if max_change < opts.tolerance {
            return sweep;
        }
    }
    opts.max_sweeps
}

/// Solves `min f(ω) + ν(1'ω − 1)` by bisection on `ν`; `Σω(ν)` is
/// non-increasing and continuous in `ν`.
fn budget_bisection(
    sigma: &Mat,
    z: &[f64],
    q: &[f64],
    gamma: f64,
    omega: &mut Vec<f64>,
    opts: &SolverOptions,
) -> Result<(usize, f64)> {
    let mut sweeps = 0;
    let mut shifted = vec![0.0; z.len()];
    let mut total_at = |nu: f64, omega: &mut Vec<f64>| -> f64 {
        for (s, zi) in shifted.iter_mut().zip(z) {
            *s = zi - nu;
        }
        sweeps += cd_solve(sigma, &shifted, q, gamma, omega, opts);
        omega.iter().sum()
    };

    let scale = z
        .iter()
        .chain(q)
        .fold(gamma * (0..z.len()).fold(0.0_f64, |m, i| m.max(sigma[(i, i)])), |m, v| m.max(v.abs()));
    let mut width = scale.max(1e-12);
    let (mut lo, mut hi) = (-width, width);
    let mut expansions = 0;
    while total_at(lo, omega) < 1.0 {
        lo -= width;
        width *= 2.0;
        expansions += 1;
        if expansions > 200 {
            return Err(FciError::NonConvergence {
                iterations: sweeps,
                residual: f64::INFINITY,
            });
        }
    }
    width = scale.max(1e-12);
    while total_at(hi, omega) > 1.0 {
        hi += width;
        width *= 2.0;
        expansions += 1;
        if expansions > 400 {
            return Err(FciError::NonConvergence {
                iterations: sweeps,
                residual: f64::INFINITY,
            });
        }
    }

    let mut mid = 0.5 * (lo + hi);
    for _ in 0..200 {
        mid = 0.5 * (lo + hi);
        let total = total_at(mid, omega);
        if (total - 1.0).abs() <= 1e-12 || hi - lo <= 1e-15 * (1.0 + mid.abs()) {
            break;
        }
        if total > 1.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((sweeps, mid))
}

/// Exact solve of the KKT system on the active set and signs of `omega`.
/// Coordinates whose exact value flips sign sit in the dead zone and are
/// dropped before re-solving. Returns `None` when the resulting point
/// violates the optimality conditions.
fn polish(
    sigma: &Mat,
    z: &[f64],
    q: &[f64],
    gamma: f64,
    omega: &[f64],
    nu: Option<f64>,
) -> Option<(Vec<f64>, Option<f64>)> {
    let r = z.len();
    let budget = nu.is_some();
    let mut active = active_set(omega);
    let (exact, nu) = loop {
        let m = active.len();
        let n = m + usize::from(budget);
        if n == 0 {
            return None;
        }
        let mut a = Mat::zeros(n, n);
        let mut rhs = Vector::zeros(n);
        for (p, &i) in active.iter().enumerate() {
            for (c, &j) in active.iter().enumerate() {
                a[(p, c)] = gamma * sigma[(i, j)];
            }
            rhs[p] = z[i] - q[i] * omega[i].signum();
            if budget {
                a[(p, m)] = 1.0;
                a[(m, p)] = 1.0;
            }
        }
        if budget {
            rhs[m] = 1.0;
        }
        let sol = LU::new(a).solve(&rhs)?;
        if sol.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let keep: Vec<usize> = (0..m)
            .filter(|&p| sol[p] != 0.0 && sol[p].signum() == omega[active[p]].signum())
            .collect();
        if keep.len() == m {
            let mut exact = vec![0.0; r];
            for (p, &i) in active.iter().enumerate() {
                exact[i] = sol[p];
            }
            break (exact, budget.then(|| sol[m]));
        }
        active = keep.iter().map(|&p| active[p]).collect();
    };
    let scale = kkt_scale(z, q);
    let w = Vector::from_column_slice(&exact);
    let grad = sigma * &w * gamma;
    for i in (0..r).filter(|&i| exact[i] == 0.0) {
        let g = grad[i] - z[i] + nu.unwrap_or(0.0);
        if g.abs() > q[i] + 1e-12 * scale {
            return None;
        }
    }
    Some((exact, nu))
}

fn kkt_scale(z: &[f64], q: &[f64]) -> f64 {
    z.iter().chain(q).fold(1.0_f64, |m, v| m.max(v.abs()))
}

/// Largest violation of the optimality conditions divided by
/// `max(1, |ẑ|∞, |q|∞)`; includes `|Σω − 1|` under a budget constraint.
fn kkt_residual(sigma: &Mat, z: &[f64], q: &[f64], gamma: f64, omega: &[f64], nu: Option<f64>) -> f64 {
    let w = Vector::from_column_slice(omega);
    let grad = sigma * &w * gamma;
    let mut worst = 0.0_f64;
    for i in 0..z.len() {
        let g = grad[i] - z[i] + nu.unwrap_or(0.0);
        let v = if omega[i] != 0.0 {
            (g + q[i] * omega[i].signum()).abs()
        } else {
            (g.abs() - q[i]).max(0.0)
        };
        worst = worst.max(v);
    }
    worst /= kkt_scale(z, q);
    if nu.is_some() {
        worst = worst.max((omega.iter().sum::<f64>() - 1.0).abs());
    }
    worst
}

/// Regions of the two-asset budget-constrained UA solution, in terms of
/// `A = ω^MV − c₀(q₁+q₂)`, `B = ω^MV − c₀(q₁−q₂)`, `C = ω^MV + c₀(q₁+q₂)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TwoAssetBranch {
    /// `A > 1`: short the second asset, `ω₁ = A`.
    ShortSecond,
    /// `A ≤ 1 < B`: everything in the first asset.
    AllFirst,
    /// `0 < B ≤ 1`: both held long, `ω₁ = B`.
    Interior,
    /// `B ≤ 0 < C`: non-participation in the first asset.
    NoFirst,
    /// `C ≤ 0`: short the first asset, `ω₁ = C`.
    ShortFirst,
}

impl TwoAssetBranch {
    /// Classifies from the three thresholds; exactly one variant applies.
    pub fn classify(a: f64, b: f64, c: f64) -> Self {
        if a > 1.0 {
            TwoAssetBranch::ShortSecond
        } else if b > 1.0 {
            TwoAssetBranch::AllFirst
        } else if b > 0.0 {
            TwoAssetBranch::Interior
        } else if c > 0.0 {
            TwoAssetBranch::NoFirst
        } else {
            TwoAssetBranch::ShortFirst
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoAssetSolution {
    pub weights: Weights,
    pub branch: TwoAssetBranch,
    /// Budget-constrained mean-variance weight of the first asset.
    pub omega_mv: f64,
    pub c0: f64,
}

/// Closed-form UA weights for two risky assets that must sum to one.
pub fn two_asset_no_riskfree(z_hat: [f64; 2], q_alpha: [f64; 2], sigma: &Mat, gamma: f64) -> Result<TwoAssetSolution> {
    check_gamma(gamma)?;
    ensure_len(sigma.nrows(), 2, "sigma")?;
    check_sigma(sigma)?;
    ensure_finite(&z_hat, "z_hat")?;
    ensure_finite(&q_alpha, "q_alpha")?;
    if q_alpha.iter().any(|&q| q < 0.0) {
        return Err(FciError::InvalidArgument("q_alpha must be non-negative".into()));
    }
    let s2 = sigma[(0, 0)] + sigma[(1, 1)] - 2.0 * sigma[(0, 1)];
    if !(s2 > 0.0) {
        return Err(FciError::Singular {
            context: "variance of the return spread",
            condition: f64::INFINITY,
        });
    }
    let c0 = 1.0 / (gamma * s2);
    let omega_mv = c0 * (z_hat[0] - z_hat[1]) + (sigma[(1, 1)] - sigma[(0, 1)]) / s2;
    let (q1, q2) = (q_alpha[0], q_alpha[1]);
    let a = omega_mv - c0 * (q1 + q2);
    let b = omega_mv - c0 * (q1 - q2);
    let c = omega_mv + c0 * (q1 + q2);
    let branch = TwoAssetBranch::classify(a, b, c);
    let w1 = match branch {
        TwoAssetBranch::ShortSecond => a,
        TwoAssetBranch::AllFirst => 1.0,
        TwoAssetBranch::Interior => b,
        TwoAssetBranch::NoFirst => 0.0,
        TwoAssetBranch::ShortFirst => c,
    };
    let omega = vec![w1, 1.0 - w1];
    let objective = ua_objective(sigma, &z_hat, &q_alpha, gamma, &omega);
    Ok(TwoAssetSolution {
        weights: Weights {
            active: active_set(&omega),
            omega,
            objective,
            iterations: 0,
            kkt_residual: 0.0,
            budget_multiplier: None,
        },
        branch,
        omega_mv,
        c0,
    })
}

/// Risk-sensitive problem with a `g`-prior `N(π, g·Σ)` on expected returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsProblem {
    pub z_hat: Vec<f64>,
    /// Forecast covariance `SE²`.
    pub fse2: Vec<Vec<f64>>,
    pub prior_mean: Vec<f64>,
    pub prior_scale: f64,
    pub sigma: Vec<Vec<f64>>,
    pub gamma: f64,
    pub tau: f64,
}

/// Posterior quantities of the risk-sensitive problem.
#[derive(Debug, Clone)]
pub struct RsPosterior {
    /// `W₁ = SE²(SE² + v)⁻¹`.
    pub w1: Mat,
    pub z_tilde: Vector,
    pub sigma_tilde: Mat,
}

impl RsProblem {
    fn matrices(&self) -> Result<(Mat, Mat)> {
        let r = self.z_hat.len();
        if r == 0 {
            return Err(FciError::Empty("z_hat"));
        }
        ensure_len(self.prior_mean.len(), r, "prior_mean")?;
        ensure_finite(&self.z_hat, "z_hat")?;
        ensure_finite(&self.prior_mean, "prior_mean")?;
        check_gamma(self.gamma)?;
        for (name, v) in [("prior_scale", self.prior_scale), ("tau", self.tau)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(FciError::InvalidArgument(format!("{name} must be positive, got {v}")));
            }
        }
        let sigma = checked_sigma(&self.sigma, r)?;
        ensure_len(self.fse2.len(), r, "fse2 rows")?;
        let fse2 = mat_from_rows(&self.fse2)?;
        ensure_len(fse2.ncols(), r, "fse2 columns")?;
        ensure_finite(fse2.as_slice(), "fse2")?;
        if crate::linalg::max_asymmetry(&fse2) > SYMMETRY_TOL * (1.0 + fse2.amax()) {
            return Err(FciError::InvalidArgument("fse2 is not symmetric".into()));
        }
        Ok((sigma, fse2))
    }

    pub fn posterior(&self) -> Result<RsPosterior> {
        let (sigma, fse2) = self.matrices()?;
        let v = &sigma * self.prior_scale;
        let total = &fse2 + &v;
        let inv = LU::new(total.clone()).try_inverse().ok_or_else(|| FciError::Singular {
            context: "forecast plus prior covariance",
            condition: condition_estimate(&total),
        })?;
        let w1 = &fse2 * inv;
        let r = self.z_hat.len();
        let z = Vector::from_column_slice(&self.z_hat);
        let pi = Vector::from_column_slice(&self.prior_mean);
        let z_tilde = (Mat::identity(r, r) - &w1) * z + &w1 * pi;
        let sigma_tilde = &sigma + v * w1.transpose();
        Ok(RsPosterior { w1, z_tilde, sigma_tilde })
    }
}

/// Risk-sensitive weights `Σ̃⁻¹z̃/(τ + γ)`.
pub fn rs_weights(problem: &RsProblem) -> Result<Weights> {
    let post = problem.posterior()?;
    let omega = LU::new(post.sigma_tilde.clone())
        .solve(&post.z_tilde)
        .filter(|w| w.iter().all(|v| v.is_finite()))
        .ok_or_else(|| FciError::Singular {
            context: "posterior covariance",
            condition: condition_estimate(&post.sigma_tilde),
        })?
        / (problem.tau + problem.gamma);
    let omega: Vec<f64> = omega.iter().copied().collect();
    let kappa = problem.tau + problem.gamma;
    let objective = 0.5 * kappa * quad(&post.sigma_tilde, &omega)
        - omega.iter().zip(post.z_tilde.iter()).map(|(a, b)| a * b).sum::<f64>();
    Ok(Weights::plain(omega, objective))
}

/// The same weights through the double-shrinkage form
/// `γ/(τ+γ) · Σ̃⁻¹Σ [(I − W₁)'ω^MV + W₁'ω_π^MV]`.
pub fn rs_weights_shrinkage_form(problem: &RsProblem) -> Result<Vec<f64>> {
    let post = problem.posterior()?;
    let sigma = mat_from_rows(&problem.sigma)?;
    let r = sigma.nrows();
    let w_mv = Vector::from_column_slice(&mv_weights(&problem.z_hat, &sigma, problem.gamma)?.omega);
    let w_pi = Vector::from_column_slice(&mv_weights(&problem.prior_mean, &sigma, problem.gamma)?.omega);
    let w1t = post.w1.transpose();
    let mixed = (Mat::identity(r, r) - &w1t) * w_mv + w1t * w_pi;
    let out = LU::new(post.sigma_tilde.clone())
        .solve(&(sigma * mixed))
        .ok_or_else(|| FciError::Singular {
            context: "posterior covariance",
            condition: condition_estimate(&post.sigma_tilde),
        })?
        * (problem.gamma / (problem.tau + problem.gamma));
    Ok(out.iter().copied().collect())
}

/// Shrinkage intensity toward a scaled identity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(try_from = "ShrinkageRepr", into = "ShrinkageRepr")]
pub enum Shrinkage {
    Fixed(f64),
    /// Data-driven intensity of the Ledoit–Wolf identity-target estimator.
    #[default]
    Auto,
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum ShrinkageRepr {
    Value(f64),
    Name(String),
}

impl TryFrom<ShrinkageRepr> for Shrinkage {
    type Error = String;

    fn try_from(r: ShrinkageRepr) -> std::result::Result<Self, String> {
        match r {
            ShrinkageRepr::Value(v) if (0.0..=1.0).contains(&v) => Ok(Shrinkage::Fixed(v)),
            ShrinkageRepr::Value(v) => Err(format!("shrinkage must lie in [0, 1], got {v}")),
            ShrinkageRepr::Name(s) if s == "auto" => Ok(Shrinkage::Auto),
            ShrinkageRepr::Name(s) => Err(format!("unknown shrinkage \"{s}\"")),
        }
    }
}

impl From<Shrinkage> for ShrinkageRepr {
    fn from(s: Shrinkage) -> Self {
        match s {
            Shrinkage::Fixed(v) => ShrinkageRepr::Value(v),
            Shrinkage::Auto => ShrinkageRepr::Name("auto".into()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct CovarianceEstimate {
    pub sigma: Mat,
    pub intensity: f64,
}

/// `(1 − δ)S + δ·(tr S / R)·I` with `S` the unbiased sample covariance of the
/// rows of `returns` (`T × R`).
///
/// `Shrinkage::Auto` takes `δ = min(b̄², d²)/d²` where, with `S_n` the
/// maximum-likelihood covariance and `m = tr S_n / R`,
/// `d² = ‖S_n − mI‖²_F` and `b̄² = T⁻² Σ_t ‖x_t x_t' − S_n‖²_F`.
pub fn estimate_covariance(returns: &Mat, shrinkage: Shrinkage) -> Result<CovarianceEstimate> {
    let (t, r) = returns.shape();
    if t < 2 {
        return Err(FciError::InvalidArgument(format!(
            "covariance estimation needs at least two periods, got {t}"
        )));
    }
    if r == 0 {
        return Err(FciError::Empty("returns"));
    }
    ensure_finite(returns.as_slice(), "returns")?;
    let means = returns.row_mean();
    let mut x = returns.clone();
    for mut row in x.row_iter_mut() {
        row -= &means;
    }
    let cross = x.transpose() * &x;
    let sample = &cross / (t as f64 - 1.0);
    let target_level = sample.trace() / r as f64;

    let delta = match shrinkage {
        Shrinkage::Fixed(d) => {
            if !(0.0..=1.0).contains(&d) {
                return Err(FciError::InvalidArgument(format!("shrinkage must lie in [0, 1], got {d}")));
            }
            d
        }
        Shrinkage::Auto => {
            let sn = &cross / t as f64;
            let m = sn.trace() / r as f64;
            let d2 = (&sn - Mat::identity(r, r) * m).norm_squared();
            if d2 == 0.0 {
                0.0
            } else {
                let mut b2 = 0.0;
                for row in x.row_iter() {
                    let outer = row.transpose() * row;
                    b2 += (outer - &sn).norm_squared();
                }
                b2 /= (t * t) as f64;
                b2.min(d2) / d2
            }
        }
    };
    let sigma = &sample * (1.0 - delta) + Mat::identity(r, r) * (delta * target_level);
    if (0..r).any(|i| sigma[(i, i)] <= 0.0) || nalgebra::Cholesky::new(sigma.clone()).is_none() {
        return Err(FciError::Singular {
            context: "estimated covariance",
            condition: condition_estimate(&sigma),
        });
    }
    Ok(CovarianceEstimate { sigma, intensity: delta })
}

/// Multiple-testing adjustment of the confidence level.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum LevelAdjustment {
    #[default]
    None,
    /// Divide the significance `1 − level` by the number of assets.
    Bonferroni { assets: usize },
}

/// Per-asset confidence level after the adjustment.
pub fn adjusted_level(level: f64, adjustment: LevelAdjustment) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(FciError::InvalidArgument(format!(
            "confidence level must lie in (0, 1), got {level}"
        )));
    }
    match adjustment {
        LevelAdjustment::None => Ok(level),
        LevelAdjustment::Bonferroni { assets: 0 } => {
            Err(FciError::InvalidArgument("Bonferroni needs at least one asset".into()))
        }
        LevelAdjustment::Bonferroni { assets } => Ok(1.0 - (1.0 - level) / assets as f64),
    }
}

/// Half-width of the two-sided normal interval, `ε_level · se`.
pub fn confidence_to_q(se: f64, level: f64, adjustment: LevelAdjustment) -> Result<f64> {
    if !(se >= 0.0 && se.is_finite()) {
        return Err(FciError::InvalidArgument(format!("se must be non-negative, got {se}")));
    }
    let eps = two_sided_critical(adjusted_level(level, adjustment)?)?;
    Ok(eps * se)
}

/// Writes `asset_id,omega` rows.
pub fn write_weights_csv<W: Write>(out: W, asset_ids: &[String], omega: &[f64]) -> Result<()> {
    ensure_len(omega.len(), asset_ids.len(), "weights")?;
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["asset_id", "omega"])?;
    for (id, v) in asset_ids.iter().zip(omega) {
        w.write_record([id.as_str(), &v.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

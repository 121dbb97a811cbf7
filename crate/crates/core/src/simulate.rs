//! Conditional three-factor data-generating process and the coverage experiment.
//!
//! Latent characteristics follow independent AR(1) processes and are observed
//! through their cross-sectional ranks. Returns load on three i.i.d. normal
//! factors through nonlinear beta functions of the lagged characteristics, plus
//! heteroskedastic idiosyncratic noise whose scale is calibrated to a target
//! median idiosyncratic variance share.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::backtest::Month;
use crate::bootstrap::{self, BootstrapConfig, Scheme};
use crate::error::{FciError, Result};
use crate::fourier_se::{analytic_se, fit_ols, FourierBasis};
use crate::linalg::Mat;
use crate::nn::{train, MlpArchitecture, TrainConfig};
use crate::panel::Panel;
use crate::rng::{child_seed, rng_from, stream_seed, Stream, StreamRng};
use crate::stats::{ks_distance_normal, mean, median, sample_sd, two_sided_critical};

pub const N_FACTORS: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimConfig {
    #[serde(alias = "N")]
    pub n_assets: usize,
    #[serde(alias = "T")]
    pub n_periods: usize,
    #[serde(alias = "d")]
    pub n_chars: usize,
    pub ar_coef: f64,
    pub innovation_scale: f64,
    pub factor_mean: [f64; N_FACTORS],
    pub factor_cov: [[f64; N_FACTORS]; N_FACTORS],
    pub target_idio_share: f64,
    pub s_range: (f64, f64),
    /// Fixed idiosyncratic scale; skips calibration when set.
    pub sigma: Option<f64>,
    pub seed: u64,
}

/// Monthly market, size and value factor moments of roughly the magnitude seen
/// in the mid-2010s. Illustrative values, not an estimate.
pub const FF3_LIKE_MEAN: [f64; N_FACTORS] = [0.0087, -0.0006, -0.0014];
const FF3_LIKE_SD: [f64; N_FACTORS] = [0.029, 0.024, 0.022];
const FF3_LIKE_CORR: [[f64; N_FACTORS]; N_FACTORS] = [[1.0, 0.25, 0.10], [0.25, 1.0, 0.05], [0.10, 0.05, 1.0]];

pub fn ff3_like_cov() -> [[f64; N_FACTORS]; N_FACTORS] {
    let mut c = [[0.0; N_FACTORS]; N_FACTORS];
    for i in 0..N_FACTORS {
        for j in 0..N_FACTORS {
            c[i][j] = FF3_LIKE_CORR[i][j] * FF3_LIKE_SD[i] * FF3_LIKE_SD[j];
        }
    }
    c
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            n_assets: 200,
            n_periods: 120,
            n_chars: 20,
            ar_coef: 0.7,
            innovation_scale: 0.5,
            factor_mean: FF3_LIKE_MEAN,
            factor_cov: ff3_like_cov(),
            target_idio_share: 0.5,
            s_range: (0.1, 0.9),
            sigma: None,
            seed: 0,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_assets < 2 || self.n_periods < 1 {
            return Err(FciError::InvalidArgument(
                "simulation needs at least 2 assets and 1 period".into(),
            ));
        }
        if self.n_chars < 2 {
            return Err(FciError::InvalidArgument(
                "simulation needs at least 2 characteristics".into(),
            ));
        }
        if !(self.target_idio_share > 0.0 && self.target_idio_share < 1.0) {
            return Err(FciError::InvalidArgument(
                "target_idio_share must lie in (0, 1)".into(),
            ));
        }
        let (lo, hi) = self.s_range;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(FciError::InvalidArgument("s_range must satisfy 0 <= lo <= hi".into()));
        }
        if let Some(s) = self.sigma {
            if !(s >= 0.0 && s.is_finite()) {
                return Err(FciError::InvalidArgument("sigma must be finite and >= 0".into()));
            }
        }
        let cov = Mat::from_fn(N_FACTORS, N_FACTORS, |i, j| self.factor_cov[i][j]);
        if crate::linalg::max_asymmetry(&cov) > 1e-12 {
            return Err(FciError::InvalidArgument("factor_cov must be symmetric".into()));
        }
        if cov.symmetric_eigen().eigenvalues.min() < -1e-12 {
            return Err(FciError::InvalidArgument("factor_cov must be PSD".into()));
        }
        Ok(())
    }
}

/// Characteristics over `T + 1` dates, period-major: `[(t * N + i) * d + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Characteristics {
    pub n_assets: usize,
    pub n_dates: usize,
    pub n_chars: usize,
    pub latent: Vec<f64>,
    pub ranked: Vec<f64>,
}

impl Characteristics {
    pub fn at(&self, t: usize) -> &[f64] {
        let w = self.n_assets * self.n_chars;
        &self.ranked[t * w..(t + 1) * w]
    }

    pub fn row(&self, t: usize, i: usize) -> &[f64] {
        let d = self.n_chars;
        &self.ranked[(t * self.n_assets + i) * d..(t * self.n_assets + i + 1) * d]
    }
}

/// AR(1) latent characteristics started from the stationary law, then ranked
/// within each cross-section to `{1/N, ..., 1}` (ties by asset index).
pub fn gen_characteristics(cfg: &SimConfig, rng: &mut StreamRng) -> Result<Characteristics> {
    cfg.validate()?;
    let (n, d) = (cfg.n_assets, cfg.n_chars);
    let dates = cfg.n_periods + 1;
    let rho = cfg.ar_coef;
    let stationary_sd = if rho.abs() < 1.0 {
        cfg.innovation_scale / (1.0 - rho * rho).sqrt()
    } else {
        cfg.innovation_scale
    };
    let mut latent = vec![0.0; dates * n * d];
    for v in &mut latent[..n * d] {
        *v = stationary_sd * rng.sample::<f64, _>(StandardNormal);
    }
    for t in 1..dates {
        for j in 0..n * d {
            let prev = latent[(t - 1) * n * d + j];
            latent[t * n * d + j] = rho * prev + cfg.innovation_scale * rng.sample::<f64, _>(StandardNormal);
        }
    }
    let mut ranked = vec![0.0; latent.len()];
    let mut order: Vec<usize> = (0..n).collect();
    for t in 0..dates {
        let base = t * n * d;
        for k in 0..d {
            let value = |i: usize| latent[base + i * d + k];
            order.sort_by(|&a, &b| value(a).total_cmp(&value(b)).then(a.cmp(&b)));
            for (r, &i) in order.iter().enumerate() {
                ranked[base + i * d + k] = (r + 1) as f64 / n as f64;
            }
        }
    }
    Ok(Characteristics {
        n_assets: n,
        n_dates: dates,
        n_chars: d,
        latent,
        ranked,
    })
}

/// `(x_1 x_2, mean x_k^2, median x_k)`.
pub fn beta_functions(x: &[f64]) -> [f64; N_FACTORS] {
    let d = x.len() as f64;
    let mut sorted = x.to_vec();
    sorted.sort_by(f64::total_cmp);
    [
        x[0] * x[1],
        x.iter().map(|v| v * v).sum::<f64>() / d,
        crate::stats::quantile_sorted(&sorted, 0.5),
    ]
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimPanel {
    /// Period `t` pairs characteristics at date `t` with returns at date `t + 1`.
    pub panel: Panel,
    /// Characteristics at the last date, `N x d` row-major.
    pub x_last: Vec<f64>,
    /// `g_β(x_{i,T})' E[f]`.
    pub true_expected_returns: Vec<f64>,
    pub factors: Vec<[f64; N_FACTORS]>,
    /// Betas at every date, `[(t * N + i)]`; date `T` gives the forecast betas.
    pub betas: Vec<[f64; N_FACTORS]>,
    pub idio: Vec<f64>,
    pub s: Vec<f64>,
    pub sigma: f64,
    pub achieved_idio_share: f64,
}

impl SimPanel {
    /// `Σ_k β_{i,t,k} f_{t+1,k} + u_{i,t+1}` rebuilt from the stored pieces.
    pub fn reconstruct_targets(&self) -> Vec<f64> {
        let n = self.s.len();
        self.idio
            .iter()
            .enumerate()
            .map(|(o, u)| {
                let t = o / n;
                let b = &self.betas[o];
                let f = &self.factors[t];
                b[0] * f[0] + b[1] * f[1] + b[2] * f[2] + u
            })
            .collect()
    }
}

fn factor_root(cov: &[[f64; N_FACTORS]; N_FACTORS]) -> Mat {
    let c = Mat::from_fn(N_FACTORS, N_FACTORS, |i, j| cov[i][j]);
    let eig = c.symmetric_eigen();
    let sqrt_vals = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * Mat::from_diagonal(&sqrt_vals)
}

fn median_idio_share(signal: &[f64], z: &[f64], s: &[f64], sigma: f64, n: usize, t: usize) -> f64 {
    let shares: Vec<f64> = (0..n)
        .map(|i| {
            let y: Vec<f64> = (0..t)
                .map(|p| signal[p * n + i] + s[i] * sigma * z[p * n + i])
                .collect();
            let var = sample_sd(&y).powi(2);
            if var > 0.0 {
                (s[i] * sigma).powi(2) / var
            } else {
                0.0
            }
        })
        .collect();
    median(&shares)
}

/// Factors, idiosyncratic noise and returns on top of given characteristics.
pub fn gen_returns(cfg: &SimConfig, chars: &Characteristics, rng: &mut StreamRng) -> Result<SimPanel> {
    cfg.validate()?;
    let (n, d, t) = (cfg.n_assets, cfg.n_chars, cfg.n_periods);
    if chars.n_assets != n || chars.n_chars != d || chars.n_dates != t + 1 {
        return Err(FciError::InvalidArgument(
            "characteristics shape does not match the configuration".into(),
        ));
    }
    let root = factor_root(&cfg.factor_cov);
    let factors: Vec<[f64; N_FACTORS]> = (0..t)
        .map(|_| {
            let e: [f64; N_FACTORS] = std::array::from_fn(|_| rng.sample(StandardNormal));
            std::array::from_fn(|a| {
                cfg.factor_mean[a] + (0..N_FACTORS).map(|b| root[(a, b)] * e[b]).sum::<f64>()
            })
        })
        .collect();
    let (lo, hi) = cfg.s_range;
    let s: Vec<f64> = (0..n)
        .map(|_| if hi > lo { rng.random_range(lo..hi) } else { lo })
        .collect();
    let z: Vec<f64> = (0..n * t).map(|_| rng.sample(StandardNormal)).collect();

    let betas: Vec<[f64; N_FACTORS]> = (0..=t)
        .flat_map(|p| (0..n).map(move |i| (p, i)))
        .map(|(p, i)| beta_functions(chars.row(p, i)))
        .collect();
    let signal: Vec<f64> = (0..n * t)
        .map(|o| {
            let f = &factors[o / n];
            let b = &betas[o];
            b[0] * f[0] + b[1] * f[1] + b[2] * f[2]
        })
        .collect();

    let sigma = match cfg.sigma {
        Some(s) => s,
        None => calibrate_sigma(cfg, &signal, &z, &s)?,
    };
    let achieved = median_idio_share(&signal, &z, &s, sigma, n, t);

    let idio: Vec<f64> = (0..n * t).map(|o| s[o % n] * sigma * z[o]).collect();
    let targets: Vec<f64> = signal.iter().zip(&idio).map(|(a, b)| a + b).collect();
    let features = chars.ranked[..t * n * d].to_vec();
    let panel = Panel::rectangular(
        (0..n).map(|i| format!("asset{i:04}")).collect(),
        (1..=t).map(|p| p.to_string()).collect(),
        d,
        features,
        targets,
    )?;
    let true_expected_returns = betas[t * n..]
        .iter()
        .map(|b| (0..N_FACTORS).map(|a| b[a] * cfg.factor_mean[a]).sum())
        .collect();
    Ok(SimPanel {
        panel,
        x_last: chars.at(t).to_vec(),
        true_expected_returns,
        factors,
        betas,
        idio,
        s,
        sigma,
        achieved_idio_share: achieved,
    })
}

/// Bisection on `log σ` until the median idiosyncratic share hits the target.
fn calibrate_sigma(cfg: &SimConfig, signal: &[f64], z: &[f64], s: &[f64]) -> Result<f64> {
    const TOL: f64 = 0.01;
    let (n, t) = (cfg.n_assets, cfg.n_periods);
    let scale = {
        let sd = sample_sd(signal);
        if sd > 0.0 {
            sd
        } else {
            1.0
        }
    };
    let share = |sigma: f64| median_idio_share(signal, z, s, sigma, n, t);
    let target = cfg.target_idio_share;
    let (mut lo, mut hi) = ((scale * 1e-6).ln(), (scale * 1e6).ln());
    if share(lo.exp()) > target || share(hi.exp()) < target {
        return Err(FciError::Calibration(format!(
            "idiosyncratic share {target} is not bracketed; the systematic signal may be degenerate"
        )));
    }
    for _ in 0..100 {
        let mid = 0.5 * (lo + hi);
        let sh = share(mid.exp());
        if (sh - target).abs() <= TOL * 1e-3 {
            return Ok(mid.exp());
        }
        if sh < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let sigma = (0.5 * (lo + hi)).exp();
    if (share(sigma) - target).abs() <= TOL {
        Ok(sigma)
    } else {
        Err(FciError::Calibration(format!(
            "bisection did not reach idiosyncratic share {target} within {TOL}"
        )))
    }
}

/// Full draw: characteristics then returns, each from its own seeded stream.
pub fn simulate(cfg: &SimConfig) -> Result<SimPanel> {
    let mut crng = rng_from(stream_seed(cfg.seed, Stream::Characteristics));
    let chars = gen_characteristics(cfg, &mut crng)?;
    let mut rrng = rng_from(stream_seed(cfg.seed, Stream::Returns));
    gen_returns(cfg, &chars, &mut rrng)
}

/// Population standard error of the basis forecast given the characteristics:
/// the variance of `H' Σ_{i,t} Φ(x_{i,t-1}) e_{i,t}` with known factor
/// covariance and idiosyncratic scales, where `H` uses the sample Gram matrix.
pub fn population_se(sim: &SimPanel, cfg: &SimConfig, basis: &FourierBasis, h: &[f64]) -> f64 {
    let panel = &sim.panel;
    let mut row = vec![0.0; basis.dim()];
    let mut var = 0.0;
    for t in 0..panel.n_periods() {
        let mut a = [0.0; N_FACTORS];
        for o in panel.period_range(t) {
            basis.expand_row(panel.feature_row(o), &mut row);
            let score: f64 = row.iter().zip(h).map(|(x, y)| x * y).sum();
            for (k, ak) in a.iter_mut().enumerate() {
                *ak += score * sim.betas[o][k];
            }
            let i = panel.asset_of(o);
            var += (score * sim.s[i] * sim.sigma).powi(2);
        }
        for k in 0..N_FACTORS {
            for l in 0..N_FACTORS {
                var += a[k] * cfg.factor_cov[k][l] * a[l];
            }
        }
    }
    var.sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageMethod {
    /// Network forecast over the closed-form standard error.
    Analytic,
    /// Basis-regression forecast over the population standard error.
    Oracle,
    /// Network forecast over the bootstrap σ* under a multiplier scheme.
    Bootstrap(Scheme),
}

impl CoverageMethod {
    pub fn name(self) -> String {
        match self {
            CoverageMethod::Analytic => "analytic".into(),
            CoverageMethod::Oracle => "oracle".into(),
            CoverageMethod::Bootstrap(s) => format!("bootstrap_{}", s.name()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CoverageConfig {
    pub replications: usize,
    pub widths: Vec<usize>,
    pub fourier_order: usize,
    pub levels: Vec<f64>,
}

impl Default for CoverageConfig {
    fn default() -> Self {
        CoverageConfig {
            replications: 200,
            widths: vec![4, 4, 4],
            fourier_order: 3,
            levels: vec![0.90, 0.95, 0.99],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicationOutcome {
    pub replication: usize,
    pub seed: u64,
    pub truth: f64,
    pub forecast: f64,
    pub basis_forecast: f64,
    pub analytic_se: f64,
    pub population_se: f64,
    /// Per-scheme bootstrap σ* and replicate forecasts, in the order of the
    /// requested bootstrap schemes.
    pub bootstrap: Vec<BootstrapOutcome>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOutcome {
    pub scheme: Scheme,
    pub sigma_star: f64,
    pub replicate_forecasts: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LevelCoverage {
    pub level: f64,
    /// Share of replications with `|t| <= ε_level`.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: CoverageMethod,
    pub name: String,
    pub t_stats: Vec<f64>,
    pub mean: f64,
    pub sd: f64,
    pub ks_distance: f64,
    pub coverage: Vec<LevelCoverage>,
    /// For bootstrap methods: share with `|ẑ - z| <= q*` at each level.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub quantile_coverage: Option<Vec<LevelCoverage>>,
    pub mean_scale: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FailedReplication {
    pub replication: usize,
    pub seed: u64,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub replications: usize,
    pub completed: usize,
    pub forecast_error_sd: f64,
    pub mean_analytic_se: f64,
    pub methods: Vec<MethodSummary>,
    pub failures: Vec<FailedReplication>,
    #[serde(skip)]
    pub outcomes: Vec<ReplicationOutcome>,
}

impl CoverageReport {
    pub fn method(&self, method: CoverageMethod) -> Option<&MethodSummary> {
        self.methods.iter().find(|m| m.method == method)
    }
}

fn run_replication(
    sim_cfg: &SimConfig,
    cov_cfg: &CoverageConfig,
    methods: &[CoverageMethod],
    nn_cfg: &TrainConfig,
    bs_cfg: &BootstrapConfig,
    replication: usize,
    seed: u64,
) -> Result<ReplicationOutcome> {
    let cfg = SimConfig {
        seed,
        ..sim_cfg.clone()
    };
    let sim = simulate(&cfg)?;
    let n = cfg.n_assets;
    let weights = vec![1.0 / n as f64; n];
    let truth: f64 = sim.true_expected_returns.iter().sum::<f64>() / n as f64;

    let basis = FourierBasis::new(cov_cfg.fourier_order, cfg.n_chars);
    let fit = fit_ols(&sim.panel, &basis)?;
    let se = analytic_se(&fit, &basis, &sim.panel, &weights, &sim.x_last)?;
    let basis_forecast: f64 = fit
        .fitted(&basis, &sim.x_last)?
        .iter()
        .map(|g| g / n as f64)
        .sum();
    let population_se = if methods.contains(&CoverageMethod::Oracle) {
        population_se(&sim, &cfg, &basis, &se.h)
    } else {
        f64::NAN
    };

    let needs_network = methods
        .iter()
        .any(|m| matches!(m, CoverageMethod::Analytic | CoverageMethod::Bootstrap(_)));
    let mut forecast = f64::NAN;
    let mut bootstrap = Vec::new();
    if needs_network {
        let arch = MlpArchitecture::new(cfg.n_chars, cov_cfg.widths.clone())?;
        let train_cfg = TrainConfig {
            seed: stream_seed(seed, Stream::Network),
            ..nn_cfg.clone()
        };
        let model = train(&sim.panel, &arch, &train_cfg)?;
        forecast = model.predict(&sim.x_last)?.iter().sum::<f64>() / n as f64;
        for (j, m) in methods.iter().enumerate() {
            if let CoverageMethod::Bootstrap(scheme) = *m {
                let cfg_b = BootstrapConfig {
                    scheme,
                    seed: child_seed(stream_seed(seed, Stream::Bootstrap), j as u64),
                    ..bs_cfg.clone()
                };
                let res = bootstrap::run(&sim.panel, &model, &weights, &sim.x_last, &train_cfg, &cfg_b)?;
                bootstrap.push(BootstrapOutcome {
                    scheme,
                    sigma_star: res.sigma_star,
                    replicate_forecasts: res.replicate_forecasts,
                });
            }
        }
    }
    Ok(ReplicationOutcome {
        replication,
        seed,
        truth,
        forecast,
        basis_forecast,
        analytic_se: se.se,
        population_se,
        bootstrap,
    })
}

fn pick_outcome(method: CoverageMethod, o: &ReplicationOutcome) -> (f64, f64, Option<&BootstrapOutcome>) {
    match method {
        CoverageMethod::Analytic => (o.forecast - o.truth, o.analytic_se, None),
        CoverageMethod::Oracle => (o.basis_forecast - o.truth, o.population_se, None),
        CoverageMethod::Bootstrap(s) => {
            let b = o.bootstrap.iter().find(|b| b.scheme == s);
            (o.forecast - o.truth, b.map_or(f64::NAN, |b| b.sigma_star), b)
        }
    }
}

fn summarise_method(
    method: CoverageMethod,
    outcomes: &[ReplicationOutcome],
    levels: &[f64],
) -> Result<MethodSummary> {
    let t_stats: Vec<f64> = outcomes
        .iter()
        .map(|o| {
            let (err, scale, _) = pick_outcome(method, o);
            if scale > 0.0 {
                err / scale
            } else if err == 0.0 {
                0.0
            } else {
                err.signum() * f64::INFINITY
            }
        })
        .collect();
    let mut coverage = Vec::new();
    let mut quantile_coverage = Vec::new();
    for &level in levels {
        let eps = two_sided_critical(level)?;
        let hit = t_stats.iter().filter(|t| t.abs() <= eps).count();
        coverage.push(LevelCoverage {
            level,
            coverage: hit as f64 / t_stats.len() as f64,
        });
        if matches!(method, CoverageMethod::Bootstrap(_)) {
            let mut hit = 0;
            for o in outcomes {
                let (err, _, b) = pick_outcome(method, o);
                if let Some(b) = b {
                    let dev: Vec<f64> = b
                        .replicate_forecasts
                        .iter()
                        .map(|r| (r - o.forecast).abs())
                        .collect();
                    if err.abs() <= crate::stats::quantile(&dev, level)? {
                        hit += 1;
                    }
                }
            }
            quantile_coverage.push(LevelCoverage {
                level,
                coverage: hit as f64 / outcomes.len() as f64,
            });
        }
    }
    let finite: Vec<f64> = t_stats.iter().copied().filter(|t| t.is_finite()).collect();
    let scales: Vec<f64> = outcomes.iter().map(|o| pick_outcome(method, o).1).collect();
    Ok(MethodSummary {
        method,
        name: method.name(),
        mean: mean(&finite),
        sd: sample_sd(&finite),
        ks_distance: ks_distance_normal(&t_stats),
        coverage,
        quantile_coverage: matches!(method, CoverageMethod::Bootstrap(_)).then_some(quantile_coverage),
        mean_scale: mean(&scales),
        t_stats,
    })
}

/// Monte Carlo coverage of the requested interval constructions.
///
/// Replication `r` is simulated from `child_seed(sim_cfg.seed, r)`. Failed
/// replications are reported; more than 1% failures abort the experiment.
pub fn coverage_experiment(
    sim_cfg: &SimConfig,
    cov_cfg: &CoverageConfig,
    methods: &[CoverageMethod],
    nn_cfg: &TrainConfig,
    bs_cfg: &BootstrapConfig,
) -> Result<CoverageReport> {
    if cov_cfg.replications < 50 {
        return Err(FciError::InvalidArgument(
            "coverage experiment needs at least 50 replications".into(),
        ));
    }
    if methods.is_empty() {
        return Err(FciError::InvalidArgument("no coverage methods requested".into()));
    }
    sim_cfg.validate()?;
    nn_cfg.validate()?;
    if methods.iter().any(|m| matches!(m, CoverageMethod::Bootstrap(_))) {
        bs_cfg.validate()?;
    }
    for &level in &cov_cfg.levels {
        two_sided_critical(level)?;
    }

    let results: Vec<(usize, u64, Result<ReplicationOutcome>)> = (0..cov_cfg.replications)
        .into_par_iter()
        .map(|r| {
            let seed = child_seed(sim_cfg.seed, r as u64);
            let out = run_replication(sim_cfg, cov_cfg, methods, nn_cfg, bs_cfg, r, seed);
            log::debug!("replication {r} done");
            (r, seed, out)
        })
        .collect();

    let mut outcomes = Vec::new();
    let mut failures = Vec::new();
    for (replication, seed, res) in results {
        match res {
            Ok(o) => outcomes.push(o),
            Err(e) => failures.push(FailedReplication {
                replication,
                seed,
                error: e.to_string(),
            }),
        }
    }
    if failures.len() * 100 > cov_cfg.replications {
        return Err(FciError::TooManyFailures {
            failed: failures.len(),
            total: cov_cfg.replications,
            first: failures[0].error.clone(),
        });
    }

    let methods = methods
        .iter()
        .map(|&m| summarise_method(m, &outcomes, &cov_cfg.levels))
        .collect::<Result<Vec<_>>>()?;
    let errors: Vec<f64> = outcomes
        .iter()
        .map(|o| o.forecast - o.truth)
        .filter(|e| e.is_finite())
        .collect();
    let ses: Vec<f64> = outcomes.iter().map(|o| o.analytic_se).collect();
    Ok(CoverageReport {
        replications: cov_cfg.replications,
        completed: outcomes.len(),
        forecast_error_sd: sample_sd(&errors),
        mean_analytic_se: mean(&ses),
        methods,
        failures,
        outcomes,
    })
}

/// Writes the simulated panel as `asset_id,month,excess_return,x1..xd`: one
/// row per asset for dates `1..=T`, each holding that date's characteristics
/// and return, dates counted from `first_month`.
pub fn write_panel_csv<W: std::io::Write>(sim: &SimPanel, first_month: Month, out: W) -> Result<()> {
    let panel = &sim.panel;
    let (n, d, t_len) = (panel.n_assets(), panel.dim(), panel.n_periods());
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["asset_id".to_string(), "month".to_string(), "excess_return".to_string()];
    header.extend((1..=d).map(|k| format!("x{k}")));
    w.write_record(&header)?;
    for t in 1..=t_len {
        let month = first_month.offset(t as i32 - 1).to_string();
        for i in 0..n {
            let x = if t < t_len {
                panel.feature_row(t * n + i)
            } else {
                &sim.x_last[i * d..(i + 1) * d]
            };
            let mut rec = vec![panel.asset_ids()[i].clone(), month.clone(), panel.targets()[(t - 1) * n + i].to_string()];
            rec.extend(x.iter().map(f64::to_string));
            w.write_record(&rec)?;
        }
    }
    w.flush()?;
    Ok(())
}

//! k-step wild bootstrap for network forecasts.
//!
//! Each replicate rescales the fitted residuals by standard-normal multipliers,
//! resumes training the fitted network for `k` epochs on the perturbed targets
//! and re-forecasts. The multiplier can be shared within a period (the valid
//! scheme), shared within an asset, or drawn per observation.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_len, FciError, Result};
use crate::fourier_se::Interval;
use crate::nn::{continue_training, MlpModel, TrainConfig};
use crate::panel::Panel;
use crate::rng::{child_seed, rng_from, stream_seed, Stream, StreamRng};
use crate::stats::{normal_iqr, quantile_sorted};

pub use crate::stats::quantile;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Scheme {
    /// One multiplier per period, shared by every asset.
    #[default]
    TimeClustered,
    /// One multiplier per asset, fixed over time.
    CrossSectional,
    /// Independent multiplier per observation.
    Iid,
}

impl Scheme {
    pub const ALL: [Scheme; 3] = [Scheme::TimeClustered, Scheme::CrossSectional, Scheme::Iid];

    pub fn name(self) -> &'static str {
        match self {
            Scheme::TimeClustered => "time_clustered",
            Scheme::CrossSectional => "cross_sectional",
            Scheme::Iid => "iid",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BootstrapConfig {
    /// Number of replicates `B`.
    pub replicates: usize,
    /// Warm-start epochs per replicate `k`.
    pub epochs: usize,
    pub scheme: Scheme,
    pub seed: u64,
    /// Significance level: the interval half-width is the `1 - alpha` quantile.
    pub alpha: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig {
            replicates: 100,
            epochs: 10,
            scheme: Scheme::TimeClustered,
            seed: 0,
            alpha: 0.05,
        }
    }
}

impl BootstrapConfig {
    pub fn validate(&self) -> Result<()> {
        if self.replicates < 2 {
            return Err(FciError::InvalidArgument("bootstrap needs at least 2 replicates".into()));
        }
        if self.epochs == 0 {
            return Err(FciError::InvalidArgument("bootstrap epochs must be positive".into()));
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return Err(FciError::InvalidArgument(format!(
                "bootstrap alpha must lie in (0, 1), got {}",
                self.alpha
            )));
        }
        Ok(())
    }
}

/// Per-observation multipliers `η` for one replicate.
pub fn multipliers(panel: &Panel, scheme: Scheme, rng: &mut StreamRng) -> Vec<f64> {
    let mut draw = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
    match scheme {
        Scheme::TimeClustered => {
            let eta = draw(panel.n_periods());
            (0..panel.n_obs()).map(|o| eta[panel.period_of(o)]).collect()
        }
        Scheme::CrossSectional => {
            let eta = draw(panel.n_assets());
            (0..panel.n_obs()).map(|o| eta[panel.asset_of(o)]).collect()
        }
        Scheme::Iid => draw(panel.n_obs()),
    }
}

/// `y* = ĝ + (y - ĝ) η` for given fitted values and multipliers.
pub fn resample_with(panel: &Panel, fitted: &[f64], eta: &[f64]) -> Result<Panel> {
    ensure_len(fitted.len(), panel.n_obs(), "fitted values")?;
    ensure_len(eta.len(), panel.n_obs(), "bootstrap multipliers")?;
    let targets = panel
        .targets()
        .iter()
        .zip(fitted)
        .zip(eta)
        .map(|((y, g), e)| g + (y - g) * e)
        .collect();
    panel.with_targets(targets)
}

/// Wild-bootstrap panel around the model's fitted values.
pub fn resample(panel: &Panel, model: &MlpModel, scheme: Scheme, rng: &mut StreamRng) -> Result<Panel> {
    let fitted = model.fitted(panel)?;
    let eta = multipliers(panel, scheme, rng);
    resample_with(panel, &fitted, &eta)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapResult {
    pub scheme: Scheme,
    pub seed: u64,
    pub alpha: f64,
    /// `ẑ`, the weighted forecast of the original model.
    pub forecast: f64,
    /// `Σ_i w_i ĝ*_b(x_{i,T})` in replicate order.
    pub replicate_forecasts: Vec<f64>,
    pub q_alpha: f64,
    /// Bootstrap interquartile range over the standard-normal one.
    pub sigma_star: f64,
    pub interval: Interval,
}

impl BootstrapResult {
    /// `1 - alpha` quantile of `|replicate - ẑ|` for any other `alpha`.
    pub fn q_at(&self, alpha: f64) -> Result<f64> {
        let dev: Vec<f64> = self
            .replicate_forecasts
            .iter()
            .map(|r| (r - self.forecast).abs())
            .collect();
        quantile(&dev, 1.0 - alpha)
    }
}

fn weighted_forecast(model: &MlpModel, weights: &[f64], x_t: &[f64]) -> Result<f64> {
    let g = model.predict(x_t)?;
    Ok(g.iter().zip(weights).map(|(g, w)| g * w).sum())
}

/// Run `B` warm-started replicates and summarise their forecasts.
///
/// Replicate `b` draws its multipliers and its mini-batch order from
/// `child_seed(seed, b)`; results do not depend on how rayon schedules them.
pub fn run(
    panel: &Panel,
    model: &MlpModel,
    weights: &[f64],
    x_t: &[f64],
    nn_cfg: &TrainConfig,
    bs_cfg: &BootstrapConfig,
) -> Result<BootstrapResult> {
    bs_cfg.validate()?;
    ensure_len(x_t.len(), weights.len() * model.architecture().input_dim, "forecast features")?;
    ensure_finite(weights, "portfolio weights")?;
    let forecast = weighted_forecast(model, weights, x_t)?;
    let replicate_forecasts = replicate_models(panel, model, nn_cfg, bs_cfg)?
        .iter()
        .zip(0..)
        .map(|(refit, b)| {
            let z = weighted_forecast(refit, weights, x_t)?;
            if z.is_finite() {
                Ok(z)
            } else {
                Err(FciError::NonFiniteReplicate {
                    seed: child_seed(bs_cfg.seed, b),
                })
            }
        })
        .collect::<Result<Vec<f64>>>()?;
    summarise(bs_cfg, forecast, replicate_forecasts)
}

/// The `B` refitted networks, in replicate order, for re-forecasting at
/// several dates from one set of replicates.
pub fn replicate_models(
    panel: &Panel,
    model: &MlpModel,
    nn_cfg: &TrainConfig,
    bs_cfg: &BootstrapConfig,
) -> Result<Vec<MlpModel>> {
    bs_cfg.validate()?;
    let fitted = model.fitted(panel)?;
    (0..bs_cfg.replicates as u64)
        .into_par_iter()
        .map(|b| {
            let seed = child_seed(bs_cfg.seed, b);
            let mut rng = rng_from(stream_seed(seed, Stream::Multipliers));
            let eta = multipliers(panel, bs_cfg.scheme, &mut rng);
            let star = resample_with(panel, &fitted, &eta)?;
            let cfg = TrainConfig {
                seed,
                ..nn_cfg.clone()
            };
            continue_training(model, &star, bs_cfg.epochs, &cfg)
        })
        .collect()
}

/// Per-row bootstrap summaries: row `i` of `x` is forecast by the original
/// model and by every replicate.
pub fn summarise_rows(
    bs_cfg: &BootstrapConfig,
    model: &MlpModel,
    replicates: &[MlpModel],
    x: &[f64],
) -> Result<Vec<BootstrapResult>> {
    let base = model.predict(x)?;
    let preds = replicates
        .iter()
        .map(|m| m.predict(x))
        .collect::<Result<Vec<_>>>()?;
    (0..base.len())
        .map(|i| {
            let reps: Vec<f64> = preds.iter().map(|p| p[i]).collect();
            if let Some(b) = reps.iter().position(|v| !v.is_finite()) {
                return Err(FciError::NonFiniteReplicate {
                    seed: child_seed(bs_cfg.seed, b as u64),
                });
            }
            summarise(bs_cfg, base[i], reps)
        })
        .collect()
}

/// Interval half-width and σ* of replicate forecasts around `forecast`.
pub fn summarise(cfg: &BootstrapConfig, forecast: f64, replicate_forecasts: Vec<f64>) -> Result<BootstrapResult> {
    let mut dev: Vec<f64> = replicate_forecasts.iter().map(|r| r - forecast).collect();
    dev.sort_by(f64::total_cmp);
    let sigma_star = (quantile_sorted(&dev, 0.75) - quantile_sorted(&dev, 0.25)) / normal_iqr();
    let mut abs_dev: Vec<f64> = dev.iter().map(|d| d.abs()).collect();
    abs_dev.sort_by(f64::total_cmp);
    let q_alpha = quantile_sorted(&abs_dev, 1.0 - cfg.alpha);
    Ok(BootstrapResult {
        scheme: cfg.scheme,
        seed: cfg.seed,
        alpha: cfg.alpha,
        forecast,
        replicate_forecasts,
        q_alpha,
        sigma_star,
        interval: Interval {
            lower: forecast - q_alpha,
            upper: forecast + q_alpha,
        },
    })
}

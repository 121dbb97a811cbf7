use std::collections::HashMap;
use std::path::{Path, PathBuf};

use fci_core::backtest::{load_panel, Month, NetworkSpec, PanelSchema};
use fci_core::bootstrap::{self, BootstrapConfig, Scheme};
use fci_core::fourier_se::{analytic_se, fci, fit_ols, FourierBasis, Interval};
use fci_core::rng::Stream;
use fci_core::FciError;
use serde::{Deserialize, Serialize};

use crate::config::{derived_seed, load_or_default, OutDir};
use crate::error::CliError;
use crate::Common;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FciConfig {
    pub panel: Option<PathBuf>,
    pub weights: Option<PathBuf>,
    pub schema: PanelSchema,
    pub network: NetworkSpec,
    /// `alpha` sets the level `1 − alpha` of every interval.
    pub bootstrap: BootstrapConfig,
    pub fourier_order: usize,
}

impl Default for FciConfig {
    fn default() -> Self {
        FciConfig {
            panel: None,
            weights: None,
            schema: PanelSchema::default(),
            network: NetworkSpec::default(),
            bootstrap: BootstrapConfig::default(),
            fourier_order: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalyticPart {
    pub se: f64,
    pub interval: Interval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapPart {
    pub scheme: Scheme,
    pub replicates: usize,
    pub epochs: usize,
    /// `1 − alpha` quantile of `|ẑ* − ẑ|`.
    pub q_alpha: f64,
    pub sigma_star: f64,
    /// `ẑ ± q_alpha`.
    pub quantile_interval: Interval,
    /// `ẑ ± ε·σ*`.
    pub sigma_star_interval: Interval,
}

/// Forecast of `Σ w_i r_{i,T+1}` with its intervals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForecastResult {
    /// Month of the characteristics the forecast conditions on.
    pub as_of: Month,
    pub target_month: Month,
    pub level: f64,
    pub assets: Vec<String>,
    pub weights: Vec<f64>,
    pub forecast: f64,
    pub analytic: AnalyticPart,
    pub bootstrap: BootstrapPart,
    /// `max(SE, σ*)`.
    pub max_se: f64,
    pub max_se_interval: Interval,
    pub train_obs: usize,
}

fn read_weights(path: &Path) -> Result<Vec<(String, f64)>, CliError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header = reader.headers()?.clone();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| FciError::Data(format!("weights file lacks a \"{name}\" column")))
    };
    let (ia, iw) = (col("asset_id")?, col("weight")?);
    let mut out: Vec<(String, f64)> = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let id = rec.get(ia).unwrap_or("").to_string();
        let cell = rec.get(iw).unwrap_or("");
        let w = cell
            .parse::<f64>()
            .ok()
            .filter(|w| w.is_finite())
            .ok_or_else(|| FciError::Data(format!("weight \"{cell}\" of {id} is not a number")))?;
        if out.iter().any(|(a, _)| *a == id) {
            return Err(FciError::Data(format!("asset {id} listed twice in the weights file")).into());
        }
        out.push((id, w));
    }
    if out.is_empty() {
        return Err(FciError::Data("weights file has no rows".into()).into());
    }
    Ok(out)
}

pub fn run(common: &Common, panel_flag: Option<PathBuf>, weights_flag: Option<PathBuf>) -> Result<(), CliError> {
    let loaded = load_or_default::<FciConfig>(common.config.as_deref())?;
    let panel_path = loaded.input(panel_flag, loaded.value.panel.as_deref(), "panel")?;
    let weights_path = loaded.input(weights_flag, loaded.value.weights.as_deref(), "weights")?;
    let mut cfg = loaded.value;
    if let Some(seed) = common.seed {
        cfg.network.train.seed = derived_seed(seed, Stream::Network);
        cfg.bootstrap.seed = derived_seed(seed, Stream::Bootstrap);
    }
    if cfg.fourier_order == 0 {
        return Err(CliError::Usage("fourier_order must be positive".into()));
    }
    cfg.bootstrap.validate()?;

    let assets = load_panel(&panel_path, &cfg.schema)?;
    let weights = read_weights(&weights_path)?;
    let last = assets.months().len() - 1;
    let as_of = assets.months()[last];
    let index: HashMap<&str, usize> = assets.asset_ids().iter().enumerate().map(|(i, a)| (a.as_str(), i)).collect();
    let d = assets.n_chars();
    let mut x_t = Vec::with_capacity(weights.len() * d);
    for (id, _) in &weights {
        let obs = index
            .get(id.as_str())
            .and_then(|&a| assets.find(a, last))
            .ok_or_else(|| FciError::Data(format!("asset {id} has no characteristics in {as_of}")))?;
        x_t.extend_from_slice(assets.chars_of(obs));
    }
    let w: Vec<f64> = weights.iter().map(|(_, w)| *w).collect();

    let (model, pairs) = super::train::fit(&assets, &cfg.network, None, None)?;
    let forecast: f64 = model.predict(&x_t)?.iter().zip(&w).map(|(g, w)| g * w).sum();
    let basis = FourierBasis::new(cfg.fourier_order, d);
    let ols = fit_ols(&pairs, &basis)?;
    let se = analytic_se(&ols, &basis, &pairs, &w, &x_t)?.se;
    let boot = bootstrap::run(&pairs, &model, &w, &x_t, &cfg.network.train, &cfg.bootstrap)?;
    let level = 1.0 - cfg.bootstrap.alpha;
    let max_se = se.max(boot.sigma_star);
    let result = ForecastResult {
        as_of,
        target_month: as_of.offset(1),
        level,
        assets: weights.iter().map(|(a, _)| a.clone()).collect(),
        weights: w,
        forecast,
        analytic: AnalyticPart {
            se,
            interval: fci(forecast, se, level)?,
        },
        bootstrap: BootstrapPart {
            scheme: boot.scheme,
            replicates: cfg.bootstrap.replicates,
            epochs: cfg.bootstrap.epochs,
            q_alpha: boot.q_alpha,
            sigma_star: boot.sigma_star,
            quantile_interval: boot.interval,
            sigma_star_interval: fci(forecast, boot.sigma_star, level)?,
        },
        max_se,
        max_se_interval: fci(forecast, max_se, level)?,
        train_obs: pairs.n_obs(),
    };
    let out = OutDir::create(&common.out_dir)?;
    out.json("forecast.json", &result)?;
    println!(
        "forecast {:.6e} for {}; SE {:.3e}, sigma* {:.3e}; {:.0}% interval [{:.6e}, {:.6e}]",
        result.forecast,
        result.target_month,
        se,
        boot.sigma_star,
        100.0 * level,
        result.max_se_interval.lower,
        result.max_se_interval.upper
    );
    Ok(())
}

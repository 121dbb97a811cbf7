use std::path::{Path, PathBuf};

use fci_core::linalg::{mat_from_rows, mat_to_rows, Mat};
use fci_core::portfolio::{
    confidence_to_q, estimate_covariance, gmvp_weights, mv_budget_weights, mv_weights, rs_weights,
    two_asset_no_riskfree, ua_weights, write_weights_csv, LevelAdjustment, RsProblem, Shrinkage, TwoAssetSolution,
    UaProblem, Weights,
};
use fci_core::FciError;
use serde::{Deserialize, Serialize};

use crate::config::{require, OutDir};
use crate::error::CliError;
use crate::Common;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Mv,
    Gmvp,
    Ua,
    TwoAsset,
    Rs,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RsSettings {
    pub prior_mean: Vec<f64>,
    pub prior_scale: f64,
    pub tau: f64,
    /// Forecast covariance; `diag(se²)` when absent.
    #[serde(default)]
    pub fse2: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PortfolioConfig {
    pub method: Method,
    #[serde(default)]
    pub asset_ids: Option<Vec<String>>,
    #[serde(default)]
    pub z_hat: Vec<f64>,
    /// Return covariance; estimated from `returns` when absent.
    #[serde(default)]
    pub sigma: Option<Vec<Vec<f64>>>,
    /// CSV of monthly returns, one column per asset, optional `month` column.
    #[serde(default)]
    pub returns: Option<PathBuf>,
    #[serde(default)]
    pub shrinkage: Shrinkage,
    #[serde(default = "one")]
    pub gamma: f64,
    /// Interval half-widths; derived from `se` and `level` when absent.
    #[serde(default)]
    pub q_alpha: Option<Vec<f64>>,
    #[serde(default)]
    pub se: Option<Vec<f64>>,
    #[serde(default)]
    pub level: Option<f64>,
    #[serde(default)]
    pub bonferroni: bool,
    #[serde(default)]
    pub budget_constraint: bool,
    #[serde(default)]
    pub rs: Option<RsSettings>,
}

fn one() -> f64 {
    1.0
}

#[derive(Serialize)]
struct PortfolioOutput<'a> {
    method: Method,
    asset_ids: &'a [String],
    #[serde(skip_serializing_if = "Option::is_none")]
    q_alpha: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    shrinkage_intensity: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    weights: Option<&'a Weights>,
    #[serde(skip_serializing_if = "Option::is_none")]
    two_asset: Option<&'a TwoAssetSolution>,
    #[serde(skip_serializing_if = "Option::is_none")]
    posterior_mean: Option<&'a [f64]>,
    #[serde(skip_serializing_if = "Option::is_none")]
    w1: Option<Vec<Vec<f64>>>,
}

fn read_returns(path: &Path) -> Result<(Vec<String>, Mat), CliError> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path)?;
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let cols: Vec<usize> = (0..header.len()).filter(|&k| header[k] != "month").collect();
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec?;
        let row = cols
            .iter()
            .map(|&k| {
                let cell = rec.get(k).unwrap_or("");
                cell.parse::<f64>()
                    .ok()
                    .filter(|v| v.is_finite())
                    .ok_or_else(|| FciError::Data(format!("return \"{cell}\" in column {} is not a number", header[k])))
            })
            .collect::<Result<Vec<f64>, _>>()?;
        rows.push(row);
    }
    if rows.len() < 2 {
        return Err(FciError::Data("returns file needs at least two rows".into()).into());
    }
    Ok((cols.iter().map(|&k| header[k].clone()).collect(), mat_from_rows(&rows)?))
}

pub fn run(common: &Common) -> Result<(), CliError> {
    let loaded = require::<PortfolioConfig>(common.config.as_deref(), "portfolio")?;
    let returns_path = match loaded.value.returns.as_deref() {
        Some(p) => Some(loaded.input(None, Some(p), "returns")?),
        None => None,
    };
    let cfg = loaded.value;

    let (mut ids, sigma, intensity) = match (&cfg.sigma, returns_path) {
        (Some(s), None) => (None, mat_from_rows(s)?, None),
        (None, Some(p)) => {
            let (ids, r) = read_returns(&p)?;
            let est = estimate_covariance(&r, cfg.shrinkage)?;
            (Some(ids), est.sigma, Some(est.intensity))
        }
        (Some(_), Some(_)) => return Err(CliError::Usage("give either sigma or returns, not both".into())),
        (None, None) => return Err(CliError::Usage("portfolio needs sigma or returns".into())),
    };
    let r = sigma.nrows();
    if let Some(given) = &cfg.asset_ids {
        ids = Some(given.clone());
    }
    let ids = ids.unwrap_or_else(|| (1..=r).map(|i| format!("asset_{i}")).collect());
    if ids.len() != r {
        return Err(CliError::Usage(format!("{} asset ids for a {r}-asset covariance", ids.len())));
    }
    if cfg.method != Method::Gmvp && cfg.z_hat.len() != r {
        return Err(CliError::Usage(format!("z_hat has {} entries, expected {r}", cfg.z_hat.len())));
    }

    let q = match (&cfg.q_alpha, &cfg.se, cfg.level) {
        (Some(q), None, None) => Some(q.clone()),
        (None, Some(se), Some(level)) => {
            let adj = if cfg.bonferroni {
                LevelAdjustment::Bonferroni { assets: r }
            } else {
                LevelAdjustment::None
            };
            Some(se.iter().map(|&s| confidence_to_q(s, level, adj)).collect::<Result<Vec<_>, _>>()?)
        }
        (None, None, None) => None,
        _ => return Err(CliError::Usage("give either q_alpha, or se together with level".into())),
    };
    let need_q = || q.clone().ok_or_else(|| CliError::Usage("ua and two_asset need q_alpha or se with level".into()));

    let out = OutDir::create(&common.out_dir)?;
    let mut doc = PortfolioOutput {
        method: cfg.method,
        asset_ids: &ids,
        q_alpha: None,
        shrinkage_intensity: intensity,
        weights: None,
        two_asset: None,
        posterior_mean: None,
        w1: None,
    };
    let omega: Vec<f64>;
    match cfg.method {
        Method::Mv | Method::Gmvp | Method::Ua => {
            let weights = match cfg.method {
                Method::Mv if cfg.budget_constraint => mv_budget_weights(&cfg.z_hat, &sigma, cfg.gamma)?,
                Method::Mv => mv_weights(&cfg.z_hat, &sigma, cfg.gamma)?,
                Method::Gmvp => gmvp_weights(&sigma)?,
                _ => {
                    let problem = UaProblem::new(cfg.z_hat.clone(), need_q()?, &sigma, cfg.gamma, cfg.budget_constraint);
                    ua_weights(&problem)?
                }
            };
            omega = weights.omega.clone();
            let q = (cfg.method == Method::Ua).then(|| need_q()).transpose()?;
            doc.q_alpha = q.as_deref();
            doc.weights = Some(&weights);
            out.json("portfolio.json", &doc)?;
        }
        Method::TwoAsset => {
            if r != 2 {
                return Err(CliError::Usage("two_asset needs exactly two assets".into()));
            }
            let q = need_q()?;
            let sol = two_asset_no_riskfree([cfg.z_hat[0], cfg.z_hat[1]], [q[0], q[1]], &sigma, cfg.gamma)?;
            omega = sol.weights.omega.clone();
            doc.q_alpha = Some(&q);
            doc.two_asset = Some(&sol);
            out.json("portfolio.json", &doc)?;
        }
        Method::Rs => {
            let rs = cfg.rs.as_ref().ok_or_else(|| CliError::Usage("rs needs an `rs` section".into()))?;
            let fse2 = match (&rs.fse2, &cfg.se) {
                (Some(f), _) => f.clone(),
                (None, Some(se)) => (0..r)
                    .map(|i| (0..r).map(|j| if i == j { se[i] * se[i] } else { 0.0 }).collect())
                    .collect(),
                (None, None) => return Err(CliError::Usage("rs needs rs.fse2 or se".into())),
            };
            let problem = RsProblem {
                z_hat: cfg.z_hat.clone(),
                fse2,
                prior_mean: rs.prior_mean.clone(),
                prior_scale: rs.prior_scale,
                sigma: mat_to_rows(&sigma),
                gamma: cfg.gamma,
                tau: rs.tau,
            };
            let post = problem.posterior()?;
            let weights = rs_weights(&problem)?;
            omega = weights.omega.clone();
            let z_tilde: Vec<f64> = post.z_tilde.iter().copied().collect();
            doc.weights = Some(&weights);
            doc.posterior_mean = Some(&z_tilde);
            doc.w1 = Some(mat_to_rows(&post.w1));
            out.json("portfolio.json", &doc)?;
        }
    }
    out.with("weights.csv", |w| Ok(write_weights_csv(w, &ids, &omega)?))?;
    for (id, w) in ids.iter().zip(&omega) {
        println!("{id}\t{w:.8}");
    }
    Ok(())
}

use std::path::PathBuf;

use fci_core::linalg::mat_from_rows;
use fci_core::selection::{
    bh_select, strategy_fci_fdr, strategy_highest_k, strategy_naive_fdr, write_selection_csv, Side, TestPanel,
};
use fci_core::FciError;
use serde::{Deserialize, Serialize};

use crate::config::{require, OutDir};
use crate::error::CliError;
use crate::Common;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SelectMethod {
    /// Benjamini–Hochberg on given p-values or t-statistics.
    Bh,
    FciFdr,
    HighestK,
    NaiveFdr,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SelectConfig {
    pub method: SelectMethod,
    #[serde(default)]
    pub asset_ids: Option<Vec<String>>,
    #[serde(default)]
    pub z_hat: Option<Vec<f64>>,
    #[serde(default)]
    pub se: Option<Vec<f64>>,
    #[serde(default)]
    pub t_stats: Option<Vec<f64>>,
    #[serde(default)]
    pub p_values: Option<Vec<f64>>,
    #[serde(default)]
    pub side: Side,
    /// Return history for the naive test, one column per asset.
    #[serde(default)]
    pub history: Option<PathBuf>,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default = "default_k")]
    pub k_portfolio: usize,
}

fn default_alpha() -> f64 {
    0.05
}

fn default_k() -> usize {
    50
}

fn need<'a>(v: &'a Option<Vec<f64>>, name: &str, method: &str) -> Result<&'a [f64], CliError> {
    v.as_deref()
        .ok_or_else(|| CliError::Usage(format!("{method} needs `{name}`")))
}

pub fn run(common: &Common) -> Result<(), CliError> {
    let loaded = require::<SelectConfig>(common.config.as_deref(), "select")?;
    let history = match loaded.value.history.as_deref() {
        Some(p) => Some(loaded.input(None, Some(p), "history")?),
        None => None,
    };
    let cfg = loaded.value;

    let result = match cfg.method {
        SelectMethod::Bh => {
            let tests = match (&cfg.p_values, &cfg.t_stats) {
                (Some(p), None) => TestPanel {
                    t_stats: vec![f64::NAN; p.len()],
                    p_values: p.clone(),
                    side: cfg.side,
                },
                (None, Some(t)) => TestPanel::from_t(t.clone(), cfg.side),
                _ => return Err(CliError::Usage("bh needs exactly one of p_values and t_stats".into())),
            };
            let mut r = bh_select(&tests.p_values, cfg.alpha)?;
            if cfg.p_values.is_none() {
                r.tests = Some(tests);
            }
            r
        }
        SelectMethod::FciFdr => strategy_fci_fdr(
            need(&cfg.z_hat, "z_hat", "fci_fdr")?,
            need(&cfg.se, "se", "fci_fdr")?,
            cfg.alpha,
            cfg.k_portfolio,
        )?,
        SelectMethod::HighestK => strategy_highest_k(need(&cfg.z_hat, "z_hat", "highest_k")?, cfg.k_portfolio)?,
        SelectMethod::NaiveFdr => {
            let path = history.ok_or_else(|| CliError::Usage("naive_fdr needs `history`".into()))?;
            let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(&path)?;
            let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
            let cols: Vec<usize> = (0..header.len()).filter(|&k| header[k] != "month").collect();
            let mut rows = Vec::new();
            for rec in reader.records() {
                let rec = rec?;
                rows.push(
                    cols.iter()
                        .map(|&k| {
                            let cell = rec.get(k).unwrap_or("");
                            cell.parse::<f64>()
                                .map_err(|_| FciError::Data(format!("history value \"{cell}\" is not a number")))
                        })
                        .collect::<Result<Vec<f64>, _>>()?,
                );
            }
            let hist = mat_from_rows(&rows)?;
            strategy_naive_fdr(&hist, cfg.alpha, cfg.k_portfolio, need(&cfg.z_hat, "z_hat", "naive_fdr")?)?
        }
    };

    let n = result.rejected.len();
    let ids = cfg
        .asset_ids
        .clone()
        .unwrap_or_else(|| (1..=n).map(|i| format!("asset_{i}")).collect());
    if ids.len() != n {
        return Err(CliError::Usage(format!("{} asset ids for {n} assets", ids.len())));
    }
    let out = OutDir::create(&common.out_dir)?;
    out.json("selection.json", &result)?;
    out.with("selection.csv", |w| Ok(write_selection_csv(w, &ids, &result)?))?;
    println!(
        "{} of {n} rejected (cutoff {:.6}); {} chosen",
        result.k_bh,
        result.cutoff,
        result.chosen.len()
    );
    Ok(())
}

use std::path::PathBuf;

use fci_core::backtest::{load_panel, training_pairs, AssetPanel, Month, NetworkSpec, PanelSchema};
use fci_core::nn::{train, MlpArchitecture, MlpModel};
use fci_core::rng::Stream;
use fci_core::{FciError, Panel};
use serde::{Deserialize, Serialize};

use crate::config::{derived_seed, load_or_default, OutDir};
use crate::error::CliError;
use crate::Common;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainCommandConfig {
    pub panel: Option<PathBuf>,
    pub schema: PanelSchema,
    pub network: NetworkSpec,
    /// First characteristic month used; the panel start when absent.
    pub start: Option<Month>,
    /// Last characteristic month used; its successor supplies the final target.
    pub end: Option<Month>,
}

#[derive(Serialize)]
struct TrainingSummary {
    first_month: Month,
    last_month: Month,
    n_obs: usize,
    n_periods: usize,
    imputed_cells: usize,
    dropped_rows: usize,
    final_mse: f64,
    loss_history: Vec<f64>,
}

/// Network fitted on every `(x_t, r_{t+1})` pair with `start ≤ t ≤ end`.
pub(crate) fn fit(
    assets: &AssetPanel,
    network: &NetworkSpec,
    start: Option<Month>,
    end: Option<Month>,
) -> Result<(MlpModel, Panel), CliError> {
    let months = assets.months();
    let from = start.unwrap_or(months[0]);
    let to = end.unwrap_or(months[months.len() - 1]);
    let pairs = training_pairs(assets, from, to)
        .ok_or_else(|| FciError::Data(format!("no return pairs between {from} and {to}")))?;
    let arch = MlpArchitecture::new(assets.n_chars(), network.hidden_widths.clone())?;
    let model = train(&pairs, &arch, &network.train)?;
    Ok((model, pairs))
}

pub fn run(common: &Common, panel_flag: Option<PathBuf>) -> Result<(), CliError> {
    let loaded = load_or_default::<TrainCommandConfig>(common.config.as_deref())?;
    let path = loaded.input(panel_flag, loaded.value.panel.as_deref(), "panel")?;
    let mut cfg = loaded.value;
    if let Some(seed) = common.seed {
        cfg.network.train.seed = derived_seed(seed, Stream::Network);
    }
    let assets = load_panel(&path, &cfg.schema)?;
    let (model, pairs) = fit(&assets, &cfg.network, cfg.start, cfg.end)?;
    let labels = pairs.period_labels();
    let month = |s: &String| s.parse::<Month>().map_err(CliError::from);
    let summary = TrainingSummary {
        first_month: month(&labels[0])?,
        last_month: month(&labels[labels.len() - 1])?,
        n_obs: pairs.n_obs(),
        n_periods: pairs.n_periods(),
        imputed_cells: assets.imputed_cells(),
        dropped_rows: assets.dropped_rows(),
        final_mse: model.meta().final_mse,
        loss_history: model.meta().loss_history.clone(),
    };
    let out = OutDir::create(&common.out_dir)?;
    out.json("model.json", &model.to_document())?;
    out.json("training.json", &summary)?;
    println!(
        "trained on {} observations over {} months ({} to {}); final MSE {:.6e}",
        summary.n_obs, summary.n_periods, summary.first_month, summary.last_month, summary.final_mse
    );
    Ok(())
}

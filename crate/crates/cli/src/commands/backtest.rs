use std::collections::BTreeMap;
use std::path::PathBuf;

use fci_core::backtest::{
    alpha_regressions, load_factor_table, load_panel, perf_stats, rolling_run, write_cumulative_csv,
    write_returns_csv, write_weights_csv, AlphaRow, FactorModel, NetworkSpec, PanelSchema, PerfStats, SplitPlan,
    StrategyConfig, WindowRecord, ZeroFraction,
};
use fci_core::bootstrap::BootstrapConfig;
use fci_core::rng::Stream;
use serde::{Deserialize, Serialize};

use crate::config::{derived_seed, require, OutDir};
use crate::error::CliError;
use crate::Common;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BacktestConfig {
    #[serde(default)]
    pub panel: Option<PathBuf>,
    #[serde(default)]
    pub factors: Option<PathBuf>,
    #[serde(default)]
    pub schema: PanelSchema,
    pub plan: SplitPlan,
    #[serde(default)]
    pub strategy: StrategyConfig,
    #[serde(default)]
    pub network: NetworkSpec,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    /// Factor models to test; every model the table supports when absent.
    #[serde(default)]
    pub factor_models: Option<Vec<FactorModel>>,
}

#[derive(Serialize)]
struct RunDocument<'a> {
    decisions: usize,
    windows: &'a [WindowRecord],
    warnings: &'a [String],
    imputed_cells: usize,
    dropped_rows: usize,
}

pub fn run(common: &Common, panel_flag: Option<PathBuf>, factors_flag: Option<PathBuf>) -> Result<(), CliError> {
    let loaded = require::<BacktestConfig>(common.config.as_deref(), "backtest")?;
    let panel_path = loaded.input(panel_flag, loaded.value.panel.as_deref(), "panel")?;
    let factors_path = match (factors_flag, loaded.value.factors.as_deref()) {
        (None, None) => None,
        (flag, configured) => Some(loaded.input(flag, configured, "factors")?),
    };
    let mut cfg = loaded.value;
    if let Some(seed) = common.seed {
        cfg.network.train.seed = derived_seed(seed, Stream::Network);
        cfg.bootstrap.seed = derived_seed(seed, Stream::Bootstrap);
    }

    let panel = load_panel(&panel_path, &cfg.schema)?;
    let run = rolling_run(&panel, &cfg.plan, &cfg.strategy, &cfg.network, &cfg.bootstrap)?;
    let out = OutDir::create(&common.out_dir)?;
    out.with("returns.csv", |w| Ok(write_returns_csv(w, &run)?))?;
    out.with("weights.csv", |w| Ok(write_weights_csv(w, &run)?))?;
    out.with("cumulative.csv", |w| Ok(write_cumulative_csv(w, &run)?))?;
    out.json(
        "run.json",
        &RunDocument {
            decisions: run.decisions.len(),
            windows: &run.windows,
            warnings: &run.warnings,
            imputed_cells: panel.imputed_cells(),
            dropped_rows: panel.dropped_rows(),
        },
    )?;

    let mut perf: BTreeMap<String, PerfStats> = BTreeMap::new();
    for s in &run.strategies {
        let mut p = perf_stats(&run.returns_of(s))?;
        p.zero_fraction = ZeroFraction::from_fractions(&run.zero_fractions(s));
        perf.insert(s.clone(), p);
    }
    out.json("perf.json", &perf)?;
    out.with("perf.csv", |w| {
        let mut csv = csv::Writer::from_writer(w);
        csv.write_record([
            "strategy",
            "ann_mean",
            "ann_sd",
            "sharpe",
            "sortino",
            "max_drawdown",
            "best_month",
            "worst_month",
        ])?;
        for s in &run.strategies {
            let p = &perf[s];
            let mut rec = vec![s.clone()];
            rec.extend(
                [p.ann_mean, p.ann_sd, p.sharpe, p.sortino, p.max_drawdown, p.best_month, p.worst_month]
                    .iter()
                    .map(f64::to_string),
            );
            csv.write_record(&rec)?;
        }
        csv.flush()?;
        Ok(())
    })?;

    if let Some(path) = factors_path {
        let table = load_factor_table(&path)?;
        let models = cfg.factor_models.clone().unwrap_or_else(|| FactorModel::available(&table));
        let months = run.months();
        let mut rows: BTreeMap<String, Vec<AlphaRow>> = BTreeMap::new();
        for s in &run.strategies {
            rows.insert(s.clone(), alpha_regressions(&months, &run.returns_of(s), &table, &models)?.rows);
        }
        out.json("alphas.json", &rows)?;
        out.with("alphas.csv", |w| {
            let mut csv = csv::Writer::from_writer(w);
            csv.write_record(["strategy", "model", "alpha_pct", "t", "p", "stars", "n", "r2"])?;
            for (s, list) in &rows {
                for r in list {
                    csv.write_record([
                        s.clone(),
                        r.model.name().to_string(),
                        r.alpha_pct.to_string(),
                        r.t_stat.to_string(),
                        r.p_value.to_string(),
                        r.stars.clone(),
                        r.n_obs.to_string(),
                        r.r_squared.to_string(),
                    ])?;
                }
            }
            csv.flush()?;
            Ok(())
        })?;
    }

    println!(
        "{:<12} {:>9} {:>9} {:>8} {:>8} {:>8}",
        "strategy", "mean", "sd", "sharpe", "sortino", "max_dd"
    );
    for s in &run.strategies {
        let p = &perf[s];
        println!(
            "{:<12} {:>9.4} {:>9.4} {:>8.3} {:>8.3} {:>8.3}",
            s, p.ann_mean, p.ann_sd, p.sharpe, p.sortino, p.max_drawdown
        );
    }
    println!("{} decisions, {} warnings", run.decisions.len(), run.warnings.len());
    Ok(())
}

//! Rolling-window evaluation on a monthly asset panel.
//!
//! Characteristics observed at the end of month `t` forecast the excess return
//! of month `t + 1`. The network is refitted on an expanding window every
//! `retrain_every_months`; each decision month forms the configured portfolios
//! and records the next month's realised return.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use log::warn;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::bootstrap::{replicate_models, summarise_rows, BootstrapConfig};
use crate::error::{ensure_len, FciError, Result};
use crate::fourier_se::{analytic_se, fit_ols, FourierBasis, OlsFit};
use crate::linalg::{Mat, Vector};
use crate::nn::{train, MlpArchitecture, MlpModel, TrainConfig};
use crate::panel::{Panel, PanelBuilder};
use crate::portfolio::{
    confidence_to_q, estimate_covariance, gmvp_weights, mv_weights, ua_weights, LevelAdjustment, Shrinkage,
    UaProblem,
};
use crate::rng::child_seed;
use crate::selection::{strategy_fci_fdr, strategy_highest_k, strategy_naive_fdr};
use crate::stats::{lenient_f64, mean, median, sample_sd};

/// Calendar month, ordered; displayed as `YYYY-MM`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Month(i32);

impl Month {
    pub fn new(year: i32, month: u32) -> Result<Month> {
        if !(1..=12).contains(&month) {
            return Err(FciError::Data(format!("month {month} out of range")));
        }
        Ok(Month(year * 12 + month as i32 - 1))
    }

    pub fn year(self) -> i32 {
        self.0.div_euclid(12)
    }

    pub fn month(self) -> u32 {
        self.0.rem_euclid(12) as u32 + 1
    }

    pub fn offset(self, months: i32) -> Month {
        Month(self.0 + months)
    }

    /// Signed number of months from `other` to `self`.
    pub fn since(self, other: Month) -> i32 {
        self.0 - other.0
    }
}

impl fmt::Display for Month {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:04}-{:02}", self.year(), self.month())
    }
}

impl FromStr for Month {
    type Err = FciError;

    fn from_str(s: &str) -> Result<Month> {
        let bad = || FciError::Data(format!("month \"{s}\" is not YYYY-MM"));
        let (y, m) = s.trim().split_once('-').ok_or_else(bad)?;
        if y.len() != 4 || m.len() != 2 {
            return Err(bad());
        }
        Month::new(y.parse().map_err(|_| bad())?, m.parse().map_err(|_| bad())?)
    }
}

impl Serialize for Month {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Month {
    fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Month, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Column layout of a panel CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PanelSchema {
    pub asset_column: String,
    pub month_column: String,
    pub return_column: String,
    /// Characteristic columns; all remaining columns when absent.
    pub characteristics: Option<Vec<String>>,
    /// Cell contents read as missing.
    pub missing_values: Vec<String>,
}

impl Default for PanelSchema {
    fn default() -> Self {
        PanelSchema {
            asset_column: "asset_id".into(),
            month_column: "month".into(),
            return_column: "excess_return".into(),
            characteristics: None,
            missing_values: vec!["".into(), "NA".into(), "NaN".into(), "nan".into()],
        }
    }
}

/// Validated monthly panel with characteristics rank-normalised per month.
#[derive(Debug, Clone, PartialEq)]
pub struct AssetPanel {
    asset_ids: Vec<String>,
    char_names: Vec<String>,
    months: Vec<Month>,
    /// Observation range of each month; assets ascending within a month.
    offsets: Vec<usize>,
    assets: Vec<usize>,
    returns: Vec<f64>,
    chars: Vec<f64>,
    imputed_cells: usize,
    dropped_rows: usize,
}

impl AssetPanel {
    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    pub fn char_names(&self) -> &[String] {
        &self.char_names
    }

    pub fn n_chars(&self) -> usize {
        self.char_names.len()
    }

    pub fn months(&self) -> &[Month] {
        &self.months
    }

    pub fn n_obs(&self) -> usize {
        self.returns.len()
    }

    /// Characteristic cells filled with the neutral rank 0.5.
    pub fn imputed_cells(&self) -> usize {
        self.imputed_cells
    }

    /// Rows dropped for a missing return.
    pub fn dropped_rows(&self) -> usize {
        self.dropped_rows
    }

    pub fn month_index(&self, month: Month) -> Option<usize> {
        self.months.binary_search(&month).ok()
    }

    /// Observation indices of month `m` (by index into `months`).
    pub fn month_range(&self, m: usize) -> std::ops::Range<usize> {
        self.offsets[m]..self.offsets[m + 1]
    }

    pub fn asset_of(&self, obs: usize) -> usize {
        self.assets[obs]
    }

    pub fn return_of(&self, obs: usize) -> f64 {
        self.returns[obs]
    }

    pub fn chars_of(&self, obs: usize) -> &[f64] {
        let d = self.n_chars();
        &self.chars[obs * d..(obs + 1) * d]
    }

    /// Observation of `asset` in month `m`, if any.
    pub fn find(&self, asset: usize, m: usize) -> Option<usize> {
        let r = self.month_range(m);
        self.assets[r.clone()].binary_search(&asset).ok().map(|k| r.start + k)
    }
}

/// Reads a panel CSV from disk.
pub fn load_panel(path: impl AsRef<Path>, schema: &PanelSchema) -> Result<AssetPanel> {
    let file = std::fs::File::open(path.as_ref())?;
    read_panel(file, schema)
}

struct RawRow {
    asset: String,
    month: Month,
    ret: f64,
    chars: Vec<Option<f64>>,
}

/// Parses, validates and rank-normalises a panel.
///
/// Rows must appear in non-decreasing month order and `(asset, month)` must be
/// unique. Rows without a return are dropped. Within a month each
/// characteristic becomes `rank / n` over its non-missing cells, ties sharing
/// their average rank; missing cells get 0.5.
pub fn read_panel<R: Read>(input: R, schema: &PanelSchema) -> Result<AssetPanel> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let col = |name: &str| {
        header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| FciError::Data(format!("missing column \"{name}\"")))
    };
    let (ia, im, ir) = (col(&schema.asset_column)?, col(&schema.month_column)?, col(&schema.return_column)?);
    let char_names: Vec<String> = match &schema.characteristics {
        Some(names) => names.clone(),
        None => header
            .iter()
            .enumerate()
            .filter(|(k, _)| ![ia, im, ir].contains(k))
            .map(|(_, h)| h.clone())
            .collect(),
    };
    if char_names.is_empty() {
        return Err(FciError::Data("panel has no characteristic columns".into()));
    }
    let char_cols = char_names.iter().map(|c| col(c)).collect::<Result<Vec<_>>>()?;
    let missing = |s: &str| schema.missing_values.iter().any(|m| m == s);
    let number = |s: &str, line: u64, what: &str| -> Result<f64> {
        s.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| FciError::Data(format!("line {line}: {what} \"{s}\" is not a finite number")))
    };

    let mut rows = Vec::new();
    let mut seen = HashSet::new();
    let mut dropped = 0;
    let mut last: Option<Month> = None;
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let asset = record.get(ia).unwrap_or("").to_string();
        if asset.is_empty() {
            return Err(FciError::Data(format!("line {line}: empty asset id")));
        }
        let month: Month = record
            .get(im)
            .unwrap_or("")
            .parse()
            .map_err(|e| FciError::Data(format!("line {line}: {e}")))?;
        if let Some(prev) = last {
            if month < prev {
                return Err(FciError::Data(format!(
                    "line {line}: non-monotone months, {month} after {prev}"
                )));
            }
        }
        last = Some(month);
        if !seen.insert((asset.clone(), month)) {
            return Err(FciError::Data(format!(
                "line {line}: duplicate observation for asset {asset} in {month}"
            )));
        }
        let ret_cell = record.get(ir).unwrap_or("");
        if missing(ret_cell) {
            dropped += 1;
            continue;
        }
        let ret = number(ret_cell, line, "return")?;
        let chars = char_cols
            .iter()
            .map(|&c| {
                let cell = record.get(c).unwrap_or("");
                if missing(cell) {
                    Ok(None)
                } else {
                    number(cell, line, "characteristic").map(Some)
                }
            })
            .collect::<Result<Vec<_>>>()?;
        rows.push(RawRow { asset, month, ret, chars });
    }
    if rows.is_empty() {
        return Err(FciError::Data("panel has no usable rows".into()));
    }
    if dropped > 0 {
        warn!("dropped {dropped} rows with a missing return");
    }

    let mut asset_ids: Vec<String> = rows.iter().map(|r| r.asset.clone()).collect();
    asset_ids.sort();
    asset_ids.dedup();
    let d = char_names.len();
    let mut panel = AssetPanel {
        asset_ids,
        char_names,
        months: Vec::new(),
        offsets: vec![0],
        assets: Vec::new(),
        returns: Vec::new(),
        chars: Vec::new(),
        imputed_cells: 0,
        dropped_rows: dropped,
    };

    let mut start = 0;
    while start < rows.len() {
        let month = rows[start].month;
        let end = start + rows[start..].iter().take_while(|r| r.month == month).count();
        let mut block: Vec<&RawRow> = rows[start..end].iter().collect();
        block.sort_by(|a, b| a.asset.cmp(&b.asset));
        let n = block.len();
        let mut ranked = vec![0.5; n * d];
        for k in 0..d {
            let present: Vec<(usize, f64)> = block
                .iter()
                .enumerate()
                .filter_map(|(i, r)| r.chars[k].map(|v| (i, v)))
                .collect();
            panel.imputed_cells += n - present.len();
            for (i, rank) in average_ranks(&present) {
                ranked[i * d + k] = rank / present.len() as f64;
            }
        }
        for (i, r) in block.iter().enumerate() {
            let a = panel.asset_ids.binary_search(&r.asset).expect("asset id collected above");
            panel.assets.push(a);
            panel.returns.push(r.ret);
            panel.chars.extend_from_slice(&ranked[i * d..(i + 1) * d]);
        }
        panel.months.push(month);
        panel.offsets.push(panel.returns.len());
        start = end;
    }
    if panel.imputed_cells > 0 {
        warn!("imputed {} missing characteristic cells with rank 0.5", panel.imputed_cells);
    }
    Ok(panel)
}

/// 1-based ranks of `(index, value)` pairs; tied values share the mean rank.
fn average_ranks(values: &[(usize, f64)]) -> Vec<(usize, f64)> {
    let mut order: Vec<&(usize, f64)> = values.iter().collect();
    order.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));
    let mut out = Vec::with_capacity(values.len());
    let mut i = 0;
    while i < order.len() {
        let j = i + order[i..].iter().take_while(|p| p.1 == order[i].1).count();
        let rank = (i + 1 + j) as f64 / 2.0;
        out.extend(order[i..j].iter().map(|p| (p.0, rank)));
        i = j;
    }
    out
}

/// Expanding-window schedule. Window `k` trains on
/// `[train_start, train_end + k·s]`, validates on the following
/// `12·val_years` months and trades the `s` months from `test_start + k·s`,
/// where `s = retrain_every_months`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SplitPlan {
    pub train_start: Month,
    pub train_end: Month,
    #[serde(default = "default_val_years")]
    pub val_years: usize,
    pub test_start: Month,
    pub test_end: Month,
    #[serde(default = "default_retrain")]
    pub retrain_every_months: usize,
}

fn default_val_years() -> usize {
    10
}

fn default_retrain() -> usize {
    12
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Window {
    pub index: usize,
    pub train: (Month, Month),
    pub validation: Option<(Month, Month)>,
    pub decisions: (Month, Month),
}

impl SplitPlan {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(FciError::InvalidArgument(msg));
        if self.train_end < self.train_start {
            return bad(format!("train_end {} precedes train_start {}", self.train_end, self.train_start));
        }
        let val_end = self.train_end.offset(12 * self.val_years as i32);
        if self.test_start <= val_end {
            return bad(format!(
                "test_start {} must follow the validation window ending {val_end}",
                self.test_start
            ));
        }
        if self.test_end < self.test_start {
            return bad(format!("test_end {} precedes test_start {}", self.test_end, self.test_start));
        }
        if self.retrain_every_months == 0 {
            return bad("retrain_every_months must be positive".into());
        }
        Ok(())
    }

    pub fn windows(&self) -> Result<Vec<Window>> {
        self.validate()?;
        let step = self.retrain_every_months as i32;
        let val = 12 * self.val_years as i32;
        let mut out = Vec::new();
        let mut k = 0;
        loop {
            let first = self.test_start.offset(k * step);
            if first > self.test_end {
                break;
            }
            let train_end = self.train_end.offset(k * step);
            out.push(Window {
                index: k as usize,
                train: (self.train_start, train_end),
                validation: (val > 0).then(|| (train_end.offset(1), train_end.offset(val))),
                decisions: (first, first.offset(step - 1).min(self.test_end)),
            });
            k += 1;
        }
        Ok(out)
    }
}

/// Network shape and optimiser settings for the rolling fits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NetworkSpec {
    pub hidden_widths: Vec<usize>,
    pub train: TrainConfig,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec {
            hidden_widths: vec![32, 16, 8],
            train: TrainConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeSource {
    Analytic,
    Bootstrap,
    /// Elementwise maximum of the analytic SE and the bootstrap σ*.
    #[default]
    Max,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StrategyKind {
    Mve,
    Gmvp,
    Ew,
    /// One uncertainty-averse portfolio per configured confidence level.
    Ua,
    FciFdr,
    HighestK,
    NaiveFdr,
}

/// Declarative universe predicates evaluated at each decision month.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct UniverseFilter {
    /// Characteristic holding normalised size; needed by the size predicates.
    pub size_characteristic: Option<String>,
    /// Keep the `n` largest by size.
    pub largest: Option<usize>,
    /// Minimum normalised size rank in `(0, 1]`.
    pub min_size_rank: Option<f64>,
    /// Minimum number of months with a return up to the decision month.
    pub min_history_months: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StrategyConfig {
    pub strategies: Vec<StrategyKind>,
    pub gamma: f64,
    pub ua_levels: Vec<f64>,
    pub se_source: SeSource,
    /// Months of returns behind the covariance estimate; assets need a full window.
    pub covariance_window: usize,
    pub shrinkage: Shrinkage,
    /// Annualised in-sample volatility of the scaled MVE (also applied to UA).
    pub target_vol: f64,
    /// Volatility target of the GMVP; the MVE target when absent.
    pub gmvp_target_vol: Option<f64>,
    pub fdr_alpha: f64,
    pub k_portfolio: usize,
    pub min_assets: usize,
    pub fourier_order: usize,
    /// L2 penalties tried on each training window, chosen by validation MSE.
    pub l2_grid: Vec<f64>,
    pub universe: UniverseFilter,
}

impl Default for StrategyConfig {
    fn default() -> Self {
        StrategyConfig {
            strategies: vec![
                StrategyKind::Mve,
                StrategyKind::Gmvp,
                StrategyKind::Ew,
                StrategyKind::Ua,
                StrategyKind::FciFdr,
                StrategyKind::HighestK,
                StrategyKind::NaiveFdr,
            ],
            gamma: 1.0,
            ua_levels: vec![0.25, 0.5, 0.75],
            se_source: SeSource::Max,
            covariance_window: 240,
            shrinkage: Shrinkage::Auto,
            target_vol: 0.20,
            gmvp_target_vol: None,
            fdr_alpha: 0.05,
            k_portfolio: 50,
            min_assets: 2,
            fourier_order: 3,
            l2_grid: vec![1e-5, 1e-3],
            universe: UniverseFilter::default(),
        }
    }
}

impl StrategyConfig {
    pub fn validate(&self, panel: &AssetPanel) -> Result<()> {
        let bad = |msg: String| Err(FciError::InvalidArgument(msg));
        if self.strategies.is_empty() {
            return bad("no strategies configured".into());
        }
        if !(self.gamma > 0.0) {
            return bad(format!("gamma must be positive, got {}", self.gamma));
        }
        if self.ua_levels.iter().any(|l| !(*l > 0.0 && *l < 1.0)) {
            return bad("UA confidence levels must lie in (0, 1)".into());
        }
        if self.covariance_window < 2 {
            return bad("covariance_window must be at least 2".into());
        }
        if !(self.target_vol > 0.0) || self.gmvp_target_vol.is_some_and(|v| !(v > 0.0)) {
            return bad("volatility targets must be positive".into());
        }
        if !(self.fdr_alpha > 0.0 && self.fdr_alpha < 1.0) {
            return bad(format!("fdr_alpha must lie in (0, 1), got {}", self.fdr_alpha));
        }
        if self.k_portfolio == 0 || self.min_assets == 0 {
            return bad("k_portfolio and min_assets must be positive".into());
        }
        if self.fourier_order == 0 {
            return bad("fourier_order must be positive".into());
        }
        if self.l2_grid.is_empty() || self.l2_grid.iter().any(|l| !(*l >= 0.0)) {
            return bad("l2_grid must hold non-negative penalties".into());
        }
        if let Some(name) = &self.universe.size_characteristic {
            if !panel.char_names().contains(name) {
                return bad(format!("size characteristic \"{name}\" is not a panel column"));
            }
        } else if self.universe.largest.is_some() || self.universe.min_size_rank.is_some() {
            return bad("size predicates need universe.size_characteristic".into());
        }
        Ok(())
    }

    /// Output column names in a fixed order.
    pub fn strategy_names(&self) -> Vec<String> {
        let mut kinds = self.strategies.clone();
        kinds.sort();
        kinds.dedup();
        let mut names = Vec::new();
        for k in kinds {
            match k {
                StrategyKind::Ua => names.extend(self.ua_levels.iter().map(|l| ua_name(*l))),
                other => names.push(kind_name(other).to_string()),
            }
        }
        names
    }
}

fn kind_name(kind: StrategyKind) -> &'static str {
    match kind {
        StrategyKind::Mve => "mve",
        StrategyKind::Gmvp => "gmvp",
        StrategyKind::Ew => "ew",
        StrategyKind::Ua => "ua",
        StrategyKind::FciFdr => "fci_fdr",
        StrategyKind::HighestK => "highest_k",
        StrategyKind::NaiveFdr => "naive_fdr",
    }
}

fn ua_name(level: f64) -> String {
    format!("ua_{}", (level * 100.0).round() as i64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WindowRecord {
    pub window: Window,
    pub l2_penalty: f64,
    /// Validation MSE per grid penalty; empty without a validation window.
    pub validation_mse: Vec<f64>,
    pub train_obs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionRecord {
    pub month: Month,
    pub realized_month: Month,
    pub assets: Vec<String>,
    pub z_hat: Vec<f64>,
    pub se: Vec<f64>,
    /// Weights per strategy, aligned with `assets`.
    pub weights: BTreeMap<String, Vec<f64>>,
    pub returns: BTreeMap<String, f64>,
    /// Latest month of any data the decision used; never after `month`.
    pub latest_data_month: Month,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub strategies: Vec<String>,
    pub windows: Vec<WindowRecord>,
    pub decisions: Vec<DecisionRecord>,
    pub warnings: Vec<String>,
}

impl RunOutput {
    pub fn months(&self) -> Vec<Month> {
        self.decisions.iter().map(|d| d.realized_month).collect()
    }

    pub fn returns_of(&self, strategy: &str) -> Vec<f64> {
        self.decisions
            .iter()
            .map(|d| d.returns.get(strategy).copied().unwrap_or(0.0))
            .collect()
    }

    /// Fraction of zero weights per decision month.
    pub fn zero_fractions(&self, strategy: &str) -> Vec<f64> {
        self.decisions
            .iter()
            .filter_map(|d| d.weights.get(strategy))
            .filter(|w| !w.is_empty())
            .map(|w| w.iter().filter(|&&x| x == 0.0).count() as f64 / w.len() as f64)
            .collect()
    }
}

/// Training pairs `(x_t, r_{t+1})` for `t` in `[from, to]`, periods labelled by `t`;
/// `None` when no month in the range has a successor with returns.
pub fn training_pairs(panel: &AssetPanel, from: Month, to: Month) -> Option<Panel> {
    let d = panel.n_chars();
    let mut b = PanelBuilder::new(panel.asset_ids().to_vec(), d);
    let mut any = false;
    for (m, &month) in panel.months().iter().enumerate() {
        if month < from || month > to {
            continue;
        }
        let Some(next) = panel.month_index(month.offset(1)) else {
            continue;
        };
        let mut opened = false;
        for o in panel.month_range(m) {
            let a = panel.asset_of(o);
            if let Some(n) = panel.find(a, next) {
                if !opened {
                    b.begin_period(month.to_string());
                    opened = true;
                }
                b.push(a, panel.chars_of(o), panel.return_of(n)).expect("validated panel row");
                any = true;
            }
        }
    }
    if any {
        b.finish().ok()
    } else {
        None
    }
}

struct FittedWindow {
    model: MlpModel,
    train: Panel,
    basis: FourierBasis,
    ols: Option<OlsFit>,
    replicates: Vec<MlpModel>,
    bs: BootstrapConfig,
    /// Latest return month inside the training and validation targets.
    latest: Month,
}

fn fit_window(
    panel: &AssetPanel,
    window: &Window,
    strategy: &StrategyConfig,
    network: &NetworkSpec,
    bs_cfg: &BootstrapConfig,
) -> Result<(FittedWindow, WindowRecord)> {
    let train_panel = training_pairs(panel, window.train.0, window.train.1)
        .ok_or_else(|| FciError::Data("training window has no return pairs".into()))?;
    let arch = MlpArchitecture::new(panel.n_chars(), network.hidden_widths.clone())?;
    let seed = child_seed(network.train.seed, window.index as u64);
    let val = window.validation.and_then(|(a, b)| training_pairs(panel, a, b));

    let mut best: Option<(f64, MlpModel, f64)> = None;
    let mut validation_mse = Vec::new();
    for &l2 in &strategy.l2_grid {
        let cfg = TrainConfig {
            l2_penalty: l2,
            seed,
            ..network.train.clone()
        };
        let model = train(&train_panel, &arch, &cfg)?;
        let score = match &val {
            Some(v) => {
                let pred = model.predict(v.features())?;
                let mse = pred.iter().zip(v.targets()).map(|(p, y)| (p - y).powi(2)).sum::<f64>() / pred.len() as f64;
                validation_mse.push(mse);
                mse
            }
            None => 0.0,
        };
        if best.as_ref().is_none_or(|b| score < b.0) {
            best = Some((score, model, l2));
        }
        if val.is_none() {
            break;
        }
    }
    let (_, model, l2) = best.expect("l2 grid is non-empty");
    let latest_target = |p: &Panel| {
        p.period_labels()
            .last()
            .and_then(|l| l.parse::<Month>().ok())
            .map(|m| m.offset(1))
    };
    let latest = val
        .as_ref()
        .and_then(latest_target)
        .or_else(|| latest_target(&train_panel))
        .expect("training panel has periods");

    let basis = FourierBasis::new(strategy.fourier_order, panel.n_chars());
    let ols = match strategy.se_source {
        SeSource::Bootstrap => None,
        _ => Some(fit_ols(&train_panel, &basis)?),
    };
    let bs = BootstrapConfig {
        seed: child_seed(bs_cfg.seed, window.index as u64),
        ..bs_cfg.clone()
    };
    let replicates = match strategy.se_source {
        SeSource::Analytic => Vec::new(),
        _ => {
            let nn = TrainConfig {
                l2_penalty: l2,
                ..network.train.clone()
            };
            replicate_models(&train_panel, &model, &nn, &bs)?
        }
    };
    let record = WindowRecord {
        window: *window,
        l2_penalty: l2,
        validation_mse,
        train_obs: train_panel.n_obs(),
    };
    Ok((
        FittedWindow {
            model,
            train: train_panel,
            basis,
            ols,
            replicates,
            bs,
            latest,
        },
        record,
    ))
}

/// Annualised-volatility scaling constant `target / (√12 · sd(ω'r_t))`, zero
/// when the in-sample portfolio has no variance.
fn vol_scale(window_returns: &Mat, omega: &[f64], target: f64) -> f64 {
    let series: Vec<f64> = window_returns
        .row_iter()
        .map(|r| r.iter().zip(omega).map(|(a, b)| a * b).sum())
        .collect();
    let sd = sample_sd(&series) * 12f64.sqrt();
    if sd > 0.0 && sd.is_finite() {
        target / sd
    } else {
        0.0
    }
}

/// Rolling estimation and evaluation.
pub fn rolling_run(
    panel: &AssetPanel,
    plan: &SplitPlan,
    strategy: &StrategyConfig,
    network: &NetworkSpec,
    bs_cfg: &BootstrapConfig,
) -> Result<RunOutput> {
    strategy.validate(panel)?;
    if strategy.se_source != SeSource::Analytic {
        bs_cfg.validate()?;
    }
    let windows = plan.windows()?;
    let names = strategy.strategy_names();
    let size_col = strategy
        .universe
        .size_characteristic
        .as_ref()
        .and_then(|n| panel.char_names().iter().position(|c| c == n));
    let mut out = RunOutput {
        strategies: names,
        windows: Vec::new(),
        decisions: Vec::new(),
        warnings: Vec::new(),
    };

    for window in &windows {
        let (fitted, record) =
            fit_window(panel, window, strategy, network, bs_cfg).map_err(|e| e.dated(window.train.1))?;
        out.windows.push(record);
        let (first, last) = window.decisions;
        for (m, &month) in panel.months().iter().enumerate() {
            if month < first || month > last {
                continue;
            }
            let realized = month.offset(1);
            let Some(next) = panel.month_index(realized) else {
                let msg = format!("{month}: no data for {realized}, decision skipped");
                warn!("{msg}");
                out.warnings.push(msg);
                continue;
            };
            match decide(panel, strategy, &fitted, m, next, size_col, &mut out.warnings)
                .map_err(|e| e.dated(month))?
            {
                Some(rec) => out.decisions.push(rec),
                None => continue,
            }
        }
    }
    Ok(out)
}

fn decide(
    panel: &AssetPanel,
    cfg: &StrategyConfig,
    fitted: &FittedWindow,
    m: usize,
    next: usize,
    size_col: Option<usize>,
    warnings: &mut Vec<String>,
) -> Result<Option<DecisionRecord>> {
    let month = panel.months()[m];
    let realized = panel.months()[next];
    let lo = (m + 1).saturating_sub(cfg.covariance_window);
    let cov_months = lo..=m;
    let mut latest = fitted.latest.max(month);

    // Universe: present at m, a full return window, then the size predicates.
    let mut members: Vec<usize> = panel
        .month_range(m)
        .filter(|&o| {
            let a = panel.asset_of(o);
            cov_months.clone().all(|k| panel.find(a, k).is_some())
        })
        .filter(|&o| {
            let a = panel.asset_of(o);
            let history = (0..=m).filter(|&k| panel.find(a, k).is_some()).count();
            history >= cfg.universe.min_history_months
        })
        .collect();
    if let Some(c) = size_col {
        if let Some(min) = cfg.universe.min_size_rank {
            members.retain(|&o| panel.chars_of(o)[c] >= min);
        }
        if let Some(n) = cfg.universe.largest {
            members.sort_by(|&a, &b| panel.chars_of(b)[c].total_cmp(&panel.chars_of(a)[c]).then(a.cmp(&b)));
            members.truncate(n);
            members.sort();
        }
    }
    if members.len() < cfg.min_assets {
        let msg = format!("{month}: {} eligible assets, below the minimum {}", members.len(), cfg.min_assets);
        warn!("{msg}");
        warnings.push(msg);
        return Ok(None);
    }

    let r = members.len();
    let assets: Vec<usize> = members.iter().map(|&o| panel.asset_of(o)).collect();
    let x: Vec<f64> = members.iter().flat_map(|&o| panel.chars_of(o).iter().copied()).collect();
    let z_hat = fitted.model.predict(&x)?;

    let analytic: Option<Vec<f64>> = match &fitted.ols {
        Some(ols) => Some(
            (0..r)
                .map(|i| {
                    let xi = &x[i * panel.n_chars()..(i + 1) * panel.n_chars()];
                    analytic_se(ols, &fitted.basis, &fitted.train, &[1.0], xi).map(|s| s.se)
                })
                .collect::<Result<_>>()?,
        ),
        None => None,
    };
    let boot: Option<Vec<f64>> = if fitted.replicates.is_empty() {
        None
    } else {
        Some(
            summarise_rows(&fitted.bs, &fitted.model, &fitted.replicates, &x)?
                .iter()
                .map(|b| b.sigma_star)
                .collect(),
        )
    };
    let se: Vec<f64> = match (analytic, boot) {
        (Some(a), Some(b)) => a.iter().zip(&b).map(|(x, y)| x.max(*y)).collect(),
        (Some(a), None) => a,
        (None, Some(b)) => b,
        (None, None) => unreachable!("some standard-error source is always fitted"),
    };

    let window = Mat::from_fn(cov_months.clone().count(), r, |t, i| {
        let o = panel.find(assets[i], lo + t).expect("universe requires a full window");
        panel.return_of(o)
    });
    latest = latest.max(panel.months()[m]);

    let mut realized_returns = Vec::with_capacity(r);
    let mut missing = 0;
    for &a in &assets {
        match panel.find(a, next) {
            Some(o) => realized_returns.push(panel.return_of(o)),
            None => {
                realized_returns.push(0.0);
                missing += 1;
            }
        }
    }
    if missing > 0 {
        warnings.push(format!("{month}: {missing} assets have no return in {realized}; counted as zero"));
    }

    if latest > month {
        return Err(FciError::Data(format!("look-ahead: decision used data from {latest}")));
    }

    let mut weights: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let kinds: HashSet<StrategyKind> = cfg.strategies.iter().copied().collect();
    let needs_cov = kinds.contains(&StrategyKind::Mve) || kinds.contains(&StrategyKind::Ua) || kinds.contains(&StrategyKind::Gmvp);
    let sigma = if needs_cov {
        Some(estimate_covariance(&window, cfg.shrinkage)?.sigma)
    } else {
        None
    };

    if kinds.contains(&StrategyKind::Ew) {
        weights.insert("ew".into(), vec![1.0 / r as f64; r]);
    }
    if let Some(sigma) = &sigma {
        let mv = mv_weights(&z_hat, sigma, cfg.gamma)?.omega;
        let scale = vol_scale(&window, &mv, cfg.target_vol);
        if kinds.contains(&StrategyKind::Mve) {
            weights.insert("mve".into(), mv.iter().map(|w| w * scale).collect());
        }
        if kinds.contains(&StrategyKind::Ua) {
            for &level in &cfg.ua_levels {
                let q = se
                    .iter()
                    .map(|&s| confidence_to_q(s, level, LevelAdjustment::None))
                    .collect::<Result<Vec<_>>>()?;
                let problem = UaProblem::new(z_hat.clone(), q, sigma, cfg.gamma, false);
                let w = ua_weights(&problem)?.omega;
                weights.insert(ua_name(level), w.iter().map(|v| v * scale).collect());
            }
        }
        if kinds.contains(&StrategyKind::Gmvp) {
            let g = gmvp_weights(sigma)?.omega;
            let s = vol_scale(&window, &g, cfg.gmvp_target_vol.unwrap_or(cfg.target_vol));
            weights.insert("gmvp".into(), g.iter().map(|v| v * s).collect());
        }
    }
    if kinds.contains(&StrategyKind::FciFdr) {
        let floor: Vec<f64> = se.iter().map(|s| s.max(1e-12)).collect();
        let sel = strategy_fci_fdr(&z_hat, &floor, cfg.fdr_alpha, cfg.k_portfolio)?;
        weights.insert("fci_fdr".into(), sel.weights);
    }
    if kinds.contains(&StrategyKind::HighestK) {
        weights.insert("highest_k".into(), strategy_highest_k(&z_hat, cfg.k_portfolio)?.weights);
    }
    if kinds.contains(&StrategyKind::NaiveFdr) {
        let sel = strategy_naive_fdr(&window, cfg.fdr_alpha, cfg.k_portfolio, &z_hat)?;
        weights.insert("naive_fdr".into(), sel.weights);
    }

    let returns = weights
        .iter()
        .map(|(k, w)| (k.clone(), w.iter().zip(&realized_returns).map(|(a, b)| a * b).sum()))
        .collect();
    Ok(Some(DecisionRecord {
        month,
        realized_month: realized,
        assets: assets.iter().map(|&a| panel.asset_ids()[a].clone()).collect(),
        z_hat,
        se,
        weights,
        returns,
        latest_data_month: latest,
    }))
}

/// Summary of a strategy's monthly returns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerfStats {
    #[serde(with = "lenient_f64")]
    pub ann_mean: f64,
    #[serde(with = "lenient_f64")]
    pub ann_sd: f64,
    /// `±∞` when the volatility is zero.
    #[serde(with = "lenient_f64")]
    pub sharpe: f64,
    #[serde(with = "lenient_f64")]
    pub sortino: f64,
    #[serde(with = "lenient_f64")]
    pub max_drawdown: f64,
    #[serde(with = "lenient_f64")]
    pub best_month: f64,
    #[serde(with = "lenient_f64")]
    pub worst_month: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zero_fraction: Option<ZeroFraction>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ZeroFraction {
    pub min: f64,
    pub median: f64,
    pub max: f64,
}

impl ZeroFraction {
    pub fn from_fractions(f: &[f64]) -> Option<ZeroFraction> {
        if f.is_empty() {
            return None;
        }
        Some(ZeroFraction {
            min: f.iter().copied().fold(f64::INFINITY, f64::min),
            median: median(f),
            max: f.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

fn ratio(num: f64, den: f64) -> f64 {
    if den > 0.0 {
        num / den
    } else if num > 0.0 {
        f64::INFINITY
    } else if num < 0.0 {
        f64::NEG_INFINITY
    } else {
        f64::NAN
    }
}

/// Annualised statistics of monthly returns.
///
/// `sd` is the sample standard deviation, the Sortino denominator is
/// `√12·√(mean(min(r, 0)²))`, and the drawdown is measured on compounded
/// wealth starting at 1.
pub fn perf_stats(returns: &[f64]) -> Result<PerfStats> {
    if returns.len() < 2 {
        return Err(FciError::InvalidArgument("performance statistics need at least two months".into()));
    }
    crate::error::ensure_finite(returns, "strategy returns")?;
    let root12 = 12f64.sqrt();
    let ann_mean = 12.0 * mean(returns);
    let best = returns.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let worst = returns.iter().copied().fold(f64::INFINITY, f64::min);
    // A constant series has no volatility; the rounded mean would leave ~1e-18.
    let ann_sd = if best == worst { 0.0 } else { root12 * sample_sd(returns) };
    let downside = (returns.iter().map(|r| r.min(0.0).powi(2)).sum::<f64>() / returns.len() as f64).sqrt();
    let mut wealth = 1.0_f64;
    let mut peak = 1.0_f64;
    let mut mdd = 0.0_f64;
    for r in returns {
        wealth *= 1.0 + r;
        peak = peak.max(wealth);
        mdd = mdd.max(1.0 - wealth / peak);
    }
    Ok(PerfStats {
        ann_mean,
        ann_sd,
        sharpe: ratio(ann_mean, ann_sd),
        sortino: ratio(ann_mean, root12 * downside),
        max_drawdown: mdd.clamp(0.0, 1.0),
        best_month: best,
        worst_month: worst,
        zero_fraction: None,
    })
}

/// Factor returns by month.
#[derive(Debug, Clone, PartialEq)]
pub struct FactorTable {
    pub months: Vec<Month>,
    pub columns: BTreeMap<String, Vec<f64>>,
}

impl FactorTable {
    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.get(name).map(Vec::as_slice)
    }
}

/// Reads `month,<factor>,...` with strictly increasing months.
pub fn read_factor_table<R: Read>(input: R) -> Result<FactorTable> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(input);
    let header: Vec<String> = reader.headers()?.iter().map(str::to_string).collect();
    let mcol = header
        .iter()
        .position(|h| h == "month")
        .ok_or_else(|| FciError::Data("factor table has no \"month\" column".into()))?;
    let mut months = Vec::new();
    let mut columns: BTreeMap<String, Vec<f64>> = header
        .iter()
        .enumerate()
        .filter(|(k, _)| *k != mcol)
        .map(|(_, h)| (h.clone(), Vec::new()))
        .collect();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let month: Month = record.get(mcol).unwrap_or("").parse()?;
        if months.last().is_some_and(|&prev| month <= prev) {
            return Err(FciError::Data(format!("line {line}: factor months must increase strictly")));
        }
        months.push(month);
        for (k, name) in header.iter().enumerate() {
            if k == mcol {
                continue;
            }
            let cell = record.get(k).unwrap_or("");
            let v = cell
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| FciError::Data(format!("line {line}: {name} \"{cell}\" is not a number")))?;
            columns.get_mut(name).expect("column from header").push(v);
        }
    }
    Ok(FactorTable { months, columns })
}

pub fn load_factor_table(path: impl AsRef<Path>) -> Result<FactorTable> {
    read_factor_table(std::fs::File::open(path.as_ref())?)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FactorModel {
    #[serde(rename = "CAPM")]
    Capm,
    #[serde(rename = "FF3")]
    Ff3,
    #[serde(rename = "FF4")]
    Ff4,
    #[serde(rename = "FF5")]
    Ff5,
    #[serde(rename = "FF6")]
    Ff6,
    #[serde(rename = "FF6+")]
    Ff6Plus,
}

impl FactorModel {
    pub const ALL: [FactorModel; 6] = [
        FactorModel::Capm,
        FactorModel::Ff3,
        FactorModel::Ff4,
        FactorModel::Ff5,
        FactorModel::Ff6,
        FactorModel::Ff6Plus,
    ];

    pub fn columns(self) -> &'static [&'static str] {
        match self {
            FactorModel::Capm => &["mkt_rf"],
            FactorModel::Ff3 => &["mkt_rf", "smb", "hml"],
            FactorModel::Ff4 => &["mkt_rf", "smb", "hml", "mom"],
            FactorModel::Ff5 => &["mkt_rf", "smb", "hml", "rmw", "cma"],
            FactorModel::Ff6 => &["mkt_rf", "smb", "hml", "rmw", "cma", "mom"],
            FactorModel::Ff6Plus => &["mkt_rf", "smb", "hml", "rmw", "cma", "mom", "st_rev"],
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            FactorModel::Capm => "CAPM",
            FactorModel::Ff3 => "FF3",
            FactorModel::Ff4 => "FF4",
            FactorModel::Ff5 => "FF5",
            FactorModel::Ff6 => "FF6",
            FactorModel::Ff6Plus => "FF6+",
        }
    }

    /// Models whose columns are all present in `table`.
    pub fn available(table: &FactorTable) -> Vec<FactorModel> {
        FactorModel::ALL
            .into_iter()
            .filter(|m| m.columns().iter().all(|c| table.columns.contains_key(*c)))
            .collect()
    }
}

/// OLS coefficients with heteroskedasticity-robust (HC1) standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct OlsHc1 {
    pub coefficients: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub residuals: Vec<f64>,
    pub r_squared: f64,
}

/// `y` on the columns of `x` (the caller includes any intercept column).
/// `V = n/(n−k) · (X'X)⁻¹ X' diag(e²) X (X'X)⁻¹`.
pub fn ols_hc1(y: &[f64], x: &Mat) -> Result<OlsHc1> {
    let (n, k) = x.shape();
    ensure_len(y.len(), n, "regression response")?;
    if n <= k {
        return Err(FciError::InvalidArgument(format!(
            "regression needs more observations ({n}) than regressors ({k})"
        )));
    }
    let yv = Vector::from_column_slice(y);
    let qr = x.clone().qr();
    let rmat = qr.r();
    if (0..k).any(|i| rmat[(i, i)].abs() <= 1e-12 * rmat.amax().max(1e-300)) {
        return Err(FciError::Singular {
            context: "factor regression design",
            condition: f64::INFINITY,
        });
    }
    let beta = rmat
        .solve_upper_triangular(&(qr.q().transpose() * &yv))
        .ok_or(FciError::Singular {
            context: "factor regression design",
            condition: f64::INFINITY,
        })?;
    let resid = &yv - x * &beta;
    let rinv = rmat
        .solve_upper_triangular(&Mat::identity(k, k))
        .expect("triangular factor checked above");
    let xtx_inv = &rinv * rinv.transpose();
    let mut meat = Mat::zeros(k, k);
    for (i, row) in x.row_iter().enumerate() {
        let e2 = resid[i] * resid[i];
        meat += row.transpose() * row * e2;
    }
    let cov = &xtx_inv * meat * &xtx_inv * (n as f64 / (n - k) as f64);
    let ybar = mean(y);
    let tss: f64 = y.iter().map(|v| (v - ybar).powi(2)).sum();
    let rss = resid.norm_squared();
    Ok(OlsHc1 {
        coefficients: beta.iter().copied().collect(),
        std_errors: (0..k).map(|i| cov[(i, i)].max(0.0).sqrt()).collect(),
        residuals: resid.iter().copied().collect(),
        r_squared: if tss > 0.0 { 1.0 - rss / tss } else { 1.0 },
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaRow {
    pub model: FactorModel,
    /// Monthly intercept in percent.
    #[serde(with = "lenient_f64")]
    pub alpha_pct: f64,
    #[serde(with = "lenient_f64")]
    pub t_stat: f64,
    #[serde(with = "lenient_f64")]
    pub p_value: f64,
    pub stars: String,
    pub betas: BTreeMap<String, f64>,
    pub n_obs: usize,
    pub r_squared: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlphaReport {
    pub rows: Vec<AlphaRow>,
}

/// `***` below 1%, `**` below 5%, `*` below 10%.
pub fn stars(p: f64) -> &'static str {
    if p < 0.01 {
        "***"
    } else if p < 0.05 {
        "**"
    } else if p < 0.1 {
        "*"
    } else {
        ""
    }
}

/// Intercepts of the strategy's excess returns on each factor model, with
/// HC1 t-statistics and two-sided Student-t p-values on `n − k` degrees of
/// freedom. Every strategy month must be present in the factor table.
pub fn alpha_regressions(
    months: &[Month],
    strategy_returns: &[f64],
    factors: &FactorTable,
    models: &[FactorModel],
) -> Result<AlphaReport> {
    ensure_len(strategy_returns.len(), months.len(), "strategy returns")?;
    let rows_idx = months
        .iter()
        .map(|m| {
            factors
                .months
                .binary_search(m)
                .map_err(|_| FciError::Data(format!("factor table has no row for {m}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut rows = Vec::new();
    for &model in models {
        let cols = model
            .columns()
            .iter()
            .map(|c| {
                factors
                    .column(c)
                    .ok_or_else(|| FciError::Data(format!("{} needs factor column \"{c}\"", model.name())))
            })
            .collect::<Result<Vec<_>>>()?;
        let n = months.len();
        let x = Mat::from_fn(n, cols.len() + 1, |i, j| if j == 0 { 1.0 } else { cols[j - 1][rows_idx[i]] });
        let fit = ols_hc1(strategy_returns, &x)?;
        let alpha = fit.coefficients[0];
        let se = fit.std_errors[0];
        let t = ratio(alpha, se);
        let t = if t.is_nan() { 0.0 } else { t };
        let df = (n - cols.len() - 1) as f64;
        let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| FciError::InvalidArgument(e.to_string()))?;
        let p = if t.is_infinite() { 0.0 } else { 2.0 * dist.sf(t.abs()) };
        rows.push(AlphaRow {
            model,
            alpha_pct: 100.0 * alpha,
            t_stat: t,
            p_value: p,
            stars: stars(p).to_string(),
            betas: model
                .columns()
                .iter()
                .zip(&fit.coefficients[1..])
                .map(|(c, b)| (c.to_string(), *b))
                .collect(),
            n_obs: n,
            r_squared: fit.r_squared,
        });
    }
    Ok(AlphaReport { rows })
}

/// `month,realized_month,<strategy>...` returns.
pub fn write_returns_csv<W: Write>(out: W, run: &RunOutput) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["month".to_string(), "realized_month".to_string()];
    header.extend(run.strategies.iter().cloned());
    w.write_record(&header)?;
    for d in &run.decisions {
        let mut rec = vec![d.month.to_string(), d.realized_month.to_string()];
        rec.extend(run.strategies.iter().map(|s| d.returns.get(s).map_or(String::new(), f64::to_string)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// Long-form weights: `month,strategy,asset_id,weight`.
pub fn write_weights_csv<W: Write>(out: W, run: &RunOutput) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["month", "strategy", "asset_id", "weight"])?;
    for d in &run.decisions {
        for (s, ws) in &d.weights {
            for (a, v) in d.assets.iter().zip(ws) {
                w.write_record([d.month.to_string(), s.clone(), a.clone(), v.to_string()])?;
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Compounded wealth from 1 per strategy: `month,<strategy>...`.
pub fn write_cumulative_csv<W: Write>(out: W, run: &RunOutput) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let mut header = vec!["month".to_string()];
    header.extend(run.strategies.iter().cloned());
    w.write_record(&header)?;
    let mut wealth = vec![1.0; run.strategies.len()];
    for d in &run.decisions {
        let mut rec = vec![d.realized_month.to_string()];
        for (k, s) in run.strategies.iter().enumerate() {
            wealth[k] *= 1.0 + d.returns.get(s).copied().unwrap_or(0.0);
            rec.push(wealth[k].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

//! Pooled training sample: characteristics dated `t-1` paired with returns at `t`.
//!
//! Observations are stored period by period. Period `t` holds every asset that
//! has both a characteristic vector at `t-1` and a realised excess return at
//! `t`; the panel need not be balanced.

use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, ensure_len, FciError, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Panel {
    dim: usize,
    asset_ids: Vec<String>,
    period_labels: Vec<String>,
    period_offsets: Vec<usize>,
    asset_index: Vec<usize>,
    period_index: Vec<usize>,
    features: Vec<f64>,
    targets: Vec<f64>,
}

impl Panel {
    /// Balanced panel from period-major arrays: `features[(t * n + i) * dim + k]`
    /// and `targets[t * n + i]`.
    pub fn rectangular(
        asset_ids: Vec<String>,
        period_labels: Vec<String>,
        dim: usize,
        features: Vec<f64>,
        targets: Vec<f64>,
    ) -> Result<Self> {
        let n = asset_ids.len();
        let t = period_labels.len();
        ensure_len(targets.len(), n * t, "panel targets")?;
        ensure_len(features.len(), n * t * dim, "panel features")?;
        let mut builder = PanelBuilder::new(asset_ids, dim);
        for (p, label) in period_labels.into_iter().enumerate() {
            builder.begin_period(label);
            for i in 0..n {
                let o = p * n + i;
                builder.push(i, &features[o * dim..(o + 1) * dim], targets[o])?;
            }
        }
        builder.finish()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_obs(&self) -> usize {
        self.targets.len()
    }

    pub fn n_periods(&self) -> usize {
        self.period_labels.len()
    }

    pub fn n_assets(&self) -> usize {
        self.asset_ids.len()
    }

    pub fn asset_ids(&self) -> &[String] {
        &self.asset_ids
    }

    pub fn period_labels(&self) -> &[String] {
        &self.period_labels
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn feature_row(&self, obs: usize) -> &[f64] {
        &self.features[obs * self.dim..(obs + 1) * self.dim]
    }

    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn asset_of(&self, obs: usize) -> usize {
        self.asset_index[obs]
    }

    pub fn period_of(&self, obs: usize) -> usize {
        self.period_index[obs]
    }

    pub fn period_range(&self, period: usize) -> Range<usize> {
        self.period_offsets[period]..self.period_offsets[period + 1]
    }

    /// Same observations with replaced targets.
    pub fn with_targets(&self, targets: Vec<f64>) -> Result<Panel> {
        ensure_len(targets.len(), self.n_obs(), "replacement targets")?;
        ensure_finite(&targets, "replacement targets")?;
        Ok(Panel {
            targets,
            ..self.clone()
        })
    }

    /// Panel restricted to a contiguous range of periods.
    pub fn slice_periods(&self, periods: Range<usize>) -> Panel {
        let lo = self.period_offsets[periods.start];
        let hi = self.period_offsets[periods.end];
        Panel {
            dim: self.dim,
            asset_ids: self.asset_ids.clone(),
            period_labels: self.period_labels[periods.clone()].to_vec(),
            period_offsets: self.period_offsets[periods.start..=periods.end]
                .iter()
                .map(|o| o - lo)
                .collect(),
            asset_index: self.asset_index[lo..hi].to_vec(),
            period_index: self.period_index[lo..hi]
                .iter()
                .map(|p| p - periods.start)
                .collect(),
            features: self.features[lo * self.dim..hi * self.dim].to_vec(),
            targets: self.targets[lo..hi].to_vec(),
        }
    }
}

/// Incremental construction, one period at a time.
#[derive(Debug)]
pub struct PanelBuilder {
    panel: Panel,
}

impl PanelBuilder {
    pub fn new(asset_ids: Vec<String>, dim: usize) -> Self {
        PanelBuilder {
            panel: Panel {
                dim,
                asset_ids,
                period_labels: Vec::new(),
                period_offsets: vec![0],
                asset_index: Vec::new(),
                period_index: Vec::new(),
                features: Vec::new(),
                targets: Vec::new(),
            },
        }
    }

    pub fn begin_period(&mut self, label: impl Into<String>) {
        let p = &mut self.panel;
        if !p.period_labels.is_empty() {
            p.period_offsets.push(p.targets.len());
        }
        p.period_labels.push(label.into());
    }

    pub fn push(&mut self, asset: usize, features: &[f64], target: f64) -> Result<()> {
        let p = &mut self.panel;
        if p.period_labels.is_empty() {
            return Err(FciError::InvalidArgument(
                "observation pushed before any period".into(),
            ));
        }
        ensure_len(features.len(), p.dim, "observation features")?;
        if asset >= p.asset_ids.len() {
            return Err(FciError::InvalidArgument(format!(
                "asset index {asset} out of range"
            )));
        }
        ensure_finite(features, "panel features")?;
        if !target.is_finite() {
            return Err(FciError::NonFinite("panel targets"));
        }
        p.asset_index.push(asset);
        p.period_index.push(p.period_labels.len() - 1);
        p.features.extend_from_slice(features);
        p.targets.push(target);
        Ok(())
    }

    pub fn finish(mut self) -> Result<Panel> {
        let p = &mut self.panel;
        if p.period_labels.is_empty() {
            p.period_offsets = vec![0];
        } else {
            p.period_offsets.push(p.targets.len());
        }
        if p.targets.is_empty() {
            return Err(FciError::Empty("panel has no observations"));
        }
        Ok(self.panel)
    }
}

//! Forecast confidence intervals for neural-network return predictions and
//! uncertainty-aware portfolio construction.

pub mod backtest;
pub mod bootstrap;
pub mod error;
pub mod fourier_se;
pub mod linalg;
pub mod nn;
pub mod panel;
pub mod portfolio;
pub mod rng;
pub mod selection;
pub mod simulate;
pub mod stats;

pub use error::{FciError, Result};
pub use panel::{Panel, PanelBuilder};

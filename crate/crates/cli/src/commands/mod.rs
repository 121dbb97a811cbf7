pub mod backtest;
pub mod fci;
pub mod portfolio;
pub mod select;
pub mod simulate;
pub mod train;

//! Research engine for second-order stock prediction.
//!
//! The engine treats the parameters of rolling linear return models as a
//! time series in their own right: it collects fitted weights at several
//! window scales, trains a per-scale recurrent model to forecast the next
//! period's weights end-to-end against realized returns, and evaluates the
//! forecasts with a top-K daily-rebalance backtest against static and
//! rotation-learning baselines.

pub mod backtest;
pub mod error;
pub mod first_order;
pub mod indicators;
pub mod market_data;
pub mod predictions;
pub mod second_order;
pub mod synthetic;

pub use error::{Error, Result};

//! Top-K daily-rebalance simulation and its metrics.
//!
//! Each day the K stocks with the highest predicted return are held
//! equal-weight for one day and the profit compounds; there are no
//! transaction costs. A stock that cannot trade while held earns zero
//! (cash) so the portfolio keeps its K slots. The annualized return uses
//! plain sum scaling, the Sharpe variant divides each day's mean excess
//! over the market by the within-day deviation of the selected returns,
//! and a classical time-series Sharpe is reported alongside.

use std::cmp::Ordering;

use crate::error::{Error, Result};
use crate::market_data::ReturnMatrix;
use crate::predictions::DailyPredictions;

/// One rebalance day: who was held and what they earned.
#[derive(Debug, Clone)]
pub struct PortfolioDay {
    pub day: usize,
    /// Selected stock ids, best prediction first.
    pub selected: Vec<String>,
    /// Effective return per selected stock; 0 for suspended holdings.
    pub returns: Vec<f64>,
    pub portfolio_return: f64,
}

/// Simulation outcome with both metric flavors.
#[derive(Debug, Clone)]
pub struct BacktestReport {
    pub k: usize,
    pub days: Vec<PortfolioDay>,
    /// Cumulative wealth, `equity[0] = 1`, one more entry than days.
    pub equity: Vec<f64>,
    /// Equal-weight market wealth over the same days.
    pub baseline: Vec<f64>,
    pub ar: f64,
    pub shr: f64,
    /// Days whose selected returns had zero variance, excluded from `shr`.
    pub shr_skipped_days: usize,
    /// Classical time-series Sharpe of the daily portfolio returns over the
    /// market, reported as an auxiliary diagnostic.
    pub shr_timeseries: f64,
    /// Variance convention used inside `shr`.
    pub variance_flavor: &'static str,
}

impl BacktestReport {
    pub fn n_days(&self) -> usize {
        self.days.len()
    }

    pub fn final_equity(&self) -> f64 {
        *self.equity.last().expect("equity always holds day 0")
    }
}

/// The `k` stocks with the highest score; ties break toward the
/// lexicographically smaller id, and a short cross-section returns
/// everything.
pub fn select_top_k<'a>(predictions: &[(&'a str, f64)], k: usize) -> Result<Vec<&'a str>> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if predictions.is_empty() {
        return Err(Error::EmptyPredictions { day: 0 });
    }
    let mut ranked: Vec<(&str, f64)> = predictions.to_vec();
    ranked.sort_by(|a, b| match b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal) {
        Ordering::Equal => a.0.cmp(b.0),
        other => other,
    });
    Ok(ranked.iter().take(k).map(|(id, _)| *id).collect())
}

/// Sum-scaled annualized return of the selected holdings:
/// `(1/K) sum_d sum_i r_d_i * 365 / l`.
pub fn annualized_return(daily_selected_returns: &[Vec<f64>], k: usize) -> Result<f64> {
    let l = daily_selected_returns.len();
    if l == 0 {
        return Err(Error::InvalidArgument(
            "annualized return needs at least one day".into(),
        ));
    }
    let total: f64 = daily_selected_returns.iter().flatten().sum();
    Ok(total / k as f64 * 365.0 / l as f64)
}

/// Per-day mean excess of the selected returns over the market mean,
/// divided by the population deviation of the selected returns, averaged
/// over all `l` days. Zero-variance days are skipped and counted.
pub fn sharpe_ratio(
    daily_selected_returns: &[Vec<f64>],
    market_means: &[f64],
    k: usize,
) -> Result<(f64, usize)> {
    let l = daily_selected_returns.len();
    if l == 0 || l != market_means.len() {
        return Err(Error::InvalidArgument(
            "sharpe ratio needs aligned non-empty day series".into(),
        ));
    }
    let mut total = 0.0;
    let mut skipped = 0usize;
    for (selected, &market) in daily_selected_returns.iter().zip(market_means) {
        let n = selected.len() as f64;
        let mean = selected.iter().sum::<f64>() / n;
        let var = selected.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / n;
        if var == 0.0 {
            skipped += 1;
            continue;
        }
        let excess: f64 = selected.iter().map(|r| r - market).sum::<f64>() / k as f64;
        total += excess / var.sqrt();
    }
    Ok((total / l as f64, skipped))
}

/// Equal-weight market wealth over the given days, starting from 1.
/// A day with no defined returns earns zero.
pub fn market_baseline(returns: &ReturnMatrix, days: &[usize]) -> Result<Vec<f64>> {
    if days.is_empty() {
        return Err(Error::InvalidArgument(
            "market baseline needs at least one day".into(),
        ));
    }
    let mut curve = Vec::with_capacity(days.len() + 1);
    curve.push(1.0);
    for &day in days {
        if day >= returns.n_days() {
            return Err(Error::Misaligned(format!(
                "day {day} beyond return matrix ({} days)",
                returns.n_days()
            )));
        }
        let wealth = curve.last().unwrap() * (1.0 + returns.market_mean(day));
        curve.push(wealth);
    }
    Ok(curve)
}

/// Run the daily top-K simulation over every predicted day.
pub fn simulate(
    predictions: &DailyPredictions,
    stocks: &[String],
    returns: &ReturnMatrix,
    k: usize,
) -> Result<BacktestReport> {
    if k == 0 {
        return Err(Error::InvalidArgument("k must be >= 1".into()));
    }
    if stocks.len() != returns.n_stocks() || predictions.n_stocks() != stocks.len() {
        return Err(Error::Misaligned(format!(
            "predictions/stocks/returns disagree on the universe size \
             ({}/{}/{})",
            predictions.n_stocks(),
            stocks.len(),
            returns.n_stocks()
        )));
    }
    if predictions.is_empty() {
        return Err(Error::Misaligned("no overlapping days".into()));
    }

    let mut days = Vec::with_capacity(predictions.len());
    let mut equity = vec![1.0];
    let mut daily_selected = Vec::with_capacity(predictions.len());
    let mut market_means = Vec::with_capacity(predictions.len());
    for (day, row) in predictions.iter() {
        if day >= returns.n_days() {
            return Err(Error::Misaligned(format!(
                "prediction day {day} beyond return matrix ({} days)",
                returns.n_days()
            )));
        }
        let scored: Vec<(&str, f64)> = row
            .iter()
            .enumerate()
            .filter_map(|(i, p)| p.map(|p| (stocks[i].as_str(), p)))
            .collect();
        if scored.is_empty() {
            return Err(Error::EmptyPredictions { day });
        }
        let selected = select_top_k(&scored, k)?;
        let effective: Vec<f64> = selected
            .iter()
            .map(|id| {
                let idx = stocks.iter().position(|s| s == id).expect("id from stocks");
                returns.value(day, idx).unwrap_or(0.0)
            })
            .collect();
        let portfolio_return = effective.iter().sum::<f64>() / effective.len() as f64;
        equity.push(equity.last().unwrap() * (1.0 + portfolio_return));
        market_means.push(returns.market_mean(day));
        daily_selected.push(effective.clone());
        days.push(PortfolioDay {
            day,
            selected: selected.iter().map(|s| s.to_string()).collect(),
            returns: effective,
            portfolio_return,
        });
    }

    let ar = annualized_return(&daily_selected, k)?;
    let (shr, shr_skipped_days) = sharpe_ratio(&daily_selected, &market_means, k)?;
    let shr_timeseries = timeseries_sharpe(&days, &market_means);
    let baseline = market_baseline(returns, &days.iter().map(|d| d.day).collect::<Vec<_>>())?;

    Ok(BacktestReport {
        k,
        days,
        equity,
        baseline,
        ar,
        shr,
        shr_skipped_days,
        shr_timeseries,
        variance_flavor: "population",
    })
}

/// Classical Sharpe: mean daily portfolio excess over the market divided
/// by the time-series deviation of the portfolio returns.
fn timeseries_sharpe(days: &[PortfolioDay], market_means: &[f64]) -> f64 {
    let l = days.len() as f64;
    let mean_excess = days
        .iter()
        .zip(market_means)
        .map(|(d, m)| d.portfolio_return - m)
        .sum::<f64>()
        / l;
    let mean_return = days.iter().map(|d| d.portfolio_return).sum::<f64>() / l;
    let var = days
        .iter()
        .map(|d| (d.portfolio_return - mean_return).powi(2))
        .sum::<f64>()
        / l;
    if var == 0.0 {
        0.0
    } else {
        mean_excess / var.sqrt()
    }
}

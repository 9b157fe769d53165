//! Per-day prediction vectors shared by the model runners and the backtester.

use crate::error::{Error, Result};
use crate::market_data::ReturnMatrix;

/// Predicted next-period returns, one optional value per stock for each
/// covered calendar day. Days are calendar indices into the panel the
/// predictions were made on, strictly increasing.
#[derive(Debug, Clone, PartialEq)]
pub struct DailyPredictions {
    days: Vec<usize>,
    values: Vec<Vec<Option<f64>>>,
    n_stocks: usize,
}

impl DailyPredictions {
    pub fn new(n_stocks: usize) -> Self {
        Self {
            days: Vec::new(),
            values: Vec::new(),
            n_stocks,
        }
    }

    pub fn push(&mut self, day: usize, values: Vec<Option<f64>>) -> Result<()> {
        if values.len() != self.n_stocks {
            return Err(Error::DimensionMismatch {
                expected: self.n_stocks,
                got: values.len(),
            });
        }
        if let Some(&last) = self.days.last() {
            if day <= last {
                return Err(Error::Misaligned(format!(
                    "day {day} pushed after day {last}"
                )));
            }
        }
        self.days.push(day);
        self.values.push(values);
        Ok(())
    }

    pub fn n_stocks(&self) -> usize {
        self.n_stocks
    }

    pub fn days(&self) -> &[usize] {
        &self.days
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    /// Values for the `pos`-th covered day.
    pub fn row(&self, pos: usize) -> &[Option<f64>] {
        &self.values[pos]
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, &[Option<f64>])> {
        self.days
            .iter()
            .zip(self.values.iter())
            .map(|(&d, v)| (d, v.as_slice()))
    }
}

/// Mean squared error over every (day, stock) pair where both a prediction
/// and a realized return are defined. `None` when nothing overlaps.
pub fn prediction_mse(predictions: &DailyPredictions, returns: &ReturnMatrix) -> Option<f64> {
    let mut sum = 0.0;
    let mut n = 0usize;
    for (day, row) in predictions.iter() {
        if day >= returns.n_days() {
            continue;
        }
        for (stock, pred) in row.iter().enumerate() {
            if let (Some(p), Some(r)) = (pred, returns.value(day, stock)) {
                sum += (p - r).powi(2);
                n += 1;
            }
        }
    }
    (n > 0).then(|| sum / n as f64)
}

//! Rolling linear return models.
//!
//! One market-wide ridge model is fitted per trailing window: all stocks'
//! (feature, next-day return) samples inside the window are pooled into a
//! single regression. Collecting these fits at several window scales yields
//! the parameter sequences consumed by the sequential model, and the same
//! machinery provides the static and rotation baselines.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::indicators::FeatureMatrix;
use crate::market_data::{DayRange, ReturnMatrix, TradingCalendar};
use crate::predictions::DailyPredictions;

/// Parameters of one linear return model: per-indicator weights plus an
/// unpenalized bias carrying the market-wide trend.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearParams {
    pub w: Vec<f64>,
    pub b: f64,
}

impl LinearParams {
    pub fn dim(&self) -> usize {
        self.w.len()
    }

    pub fn predict(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.w.len() {
            return Err(Error::DimensionMismatch {
                expected: self.w.len(),
                got: x.len(),
            });
        }
        Ok(self.apply(x))
    }

    pub(crate) fn apply(&self, x: &[f64]) -> f64 {
        self.w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + self.b
    }

    /// Flat layout used as sequential-model input: weights then bias.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = self.w.clone();
        v.push(self.b);
        v
    }

    pub fn from_vec(v: &[f64]) -> Self {
        let (w, b) = v.split_at(v.len() - 1);
        Self {
            w: w.to_vec(),
            b: b[0],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RidgeSolver {
    ClosedForm,
    GradientDescent,
}

/// Configuration for one ridge fit: squared loss plus `l2_weight * |w|^2`,
/// bias excluded from the penalty.
#[derive(Debug, Clone)]
pub struct RidgeConfig {
    pub l2_weight: f64,
    pub solver: RidgeSolver,
    pub learning_rate: f64,
    pub episodes: usize,
    pub tolerance: f64,
}

impl RidgeConfig {
    pub fn closed_form(l2_weight: f64) -> Self {
        Self {
            l2_weight,
            solver: RidgeSolver::ClosedForm,
            learning_rate: 0.01,
            episodes: 1,
            tolerance: 1e-12,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.l2_weight < 0.0 {
            return Err(Error::InvalidArgument("l2_weight must be >= 0".into()));
        }
        if self.episodes == 0 {
            return Err(Error::InvalidArgument("episodes must be >= 1".into()));
        }
        if self.learning_rate <= 0.0 {
            return Err(Error::InvalidArgument("learning_rate must be > 0".into()));
        }
        if self.tolerance <= 0.0 {
            return Err(Error::InvalidArgument("tolerance must be > 0".into()));
        }
        Ok(())
    }
}

/// Pooled regression samples, row-major.
#[derive(Debug, Clone, Default)]
pub struct SampleSet {
    x: Vec<f64>,
    y: Vec<f64>,
    dim: usize,
}

impl SampleSet {
    pub fn new(dim: usize) -> Self {
        Self {
            x: Vec::new(),
            y: Vec::new(),
            dim,
        }
    }

    pub fn push(&mut self, x: &[f64], y: f64) {
        debug_assert_eq!(x.len(), self.dim);
        self.x.extend_from_slice(x);
        self.y.push(y);
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn row(&self, i: usize) -> &[f64] {
        &self.x[i * self.dim..(i + 1) * self.dim]
    }
}

/// Normal-equation data for the augmented design (bias column last):
/// `gram = X'X / n + l2 * diag(1..1, 0)`, `moment = X'y / n`.
struct NormalSystem {
    gram: Vec<f64>,
    moment: Vec<f64>,
    mean_y_sq: f64,
    dim: usize,
}

impl NormalSystem {
    fn build(samples: &SampleSet, l2_weight: f64) -> Self {
        let d = samples.dim;
        let dim = d + 1;
        let n = samples.len() as f64;
        let mut gram = vec![0.0; dim * dim];
        let mut moment = vec![0.0; dim];
        let mut mean_y_sq = 0.0;
        let mut aug = vec![0.0; dim];
        for i in 0..samples.len() {
            aug[..d].copy_from_slice(samples.row(i));
            aug[d] = 1.0;
            let y = samples.y[i];
            for r in 0..dim {
                for c in r..dim {
                    gram[r * dim + c] += aug[r] * aug[c];
                }
                moment[r] += aug[r] * y;
            }
            mean_y_sq += y * y;
        }
        for r in 0..dim {
            for c in r..dim {
                gram[r * dim + c] /= n;
                gram[c * dim + r] = gram[r * dim + c];
            }
            moment[r] /= n;
        }
        for j in 0..d {
            gram[j * dim + j] += l2_weight;
        }
        Self {
            gram,
            moment,
            mean_y_sq: mean_y_sq / n,
            dim,
        }
    }

    /// Objective value `mse + l2 |w|^2` at `theta`, via the quadratic form.
    fn loss(&self, theta: &[f64]) -> f64 {
        let mut quad = 0.0;
        let mut lin = 0.0;
        for r in 0..self.dim {
            let mut row = 0.0;
            for c in 0..self.dim {
                row += self.gram[r * self.dim + c] * theta[c];
            }
            quad += theta[r] * row;
            lin += self.moment[r] * theta[r];
        }
        quad - 2.0 * lin + self.mean_y_sq
    }

    /// Gradient of the objective: `2 (gram theta - moment)`.
    fn gradient(&self, theta: &[f64], out: &mut [f64]) {
        for r in 0..self.dim {
            let mut row = 0.0;
            for c in 0..self.dim {
                row += self.gram[r * self.dim + c] * theta[c];
            }
            out[r] = 2.0 * (row - self.moment[r]);
        }
    }

    /// LDL' solve. Fails with a rank-deficiency error when a pivot falls
    /// below the scale of the matrix, which happens exactly when the
    /// unregularized design is collinear.
    fn solve(&self) -> Result<Vec<f64>> {
        let dim = self.dim;
        let mut lower = vec![0.0; dim * dim];
        let mut diag = vec![0.0; dim];
        let max_diag = (0..dim)
            .map(|j| self.gram[j * dim + j].abs())
            .fold(0.0f64, f64::max);
        let tol = f64::EPSILON * dim as f64 * max_diag.max(f64::MIN_POSITIVE);
        for j in 0..dim {
            let mut dj = self.gram[j * dim + j];
            for k in 0..j {
                dj -= lower[j * dim + k] * lower[j * dim + k] * diag[k];
            }
            if dj <= tol {
                return Err(Error::RankDeficient);
            }
            diag[j] = dj;
            lower[j * dim + j] = 1.0;
            for i in j + 1..dim {
                let mut lij = self.gram[i * dim + j];
                for k in 0..j {
                    lij -= lower[i * dim + k] * lower[j * dim + k] * diag[k];
                }
                lower[i * dim + j] = lij / dj;
            }
        }
        // Forward, diagonal, backward substitution.
        let mut z = self.moment.clone();
        for i in 0..dim {
            for k in 0..i {
                z[i] -= lower[i * dim + k] * z[k];
            }
        }
        for i in 0..dim {
            z[i] /= diag[i];
        }
        for i in (0..dim).rev() {
            for k in i + 1..dim {
                z[i] -= lower[k * dim + i] * z[k];
            }
        }
        Ok(z)
    }
}

/// Fit the ridge model `y ~ w.x + b`, minimizing `mse + l2 |w|^2`.
pub fn fit_ridge(samples: &SampleSet, cfg: &RidgeConfig) -> Result<LinearParams> {
    fit_ridge_traced(samples, cfg).map(|(params, _)| params)
}

/// Like [`fit_ridge`], additionally returning the per-episode loss trace
/// when the gradient-descent solver is used (empty for closed form).
pub fn fit_ridge_traced(samples: &SampleSet, cfg: &RidgeConfig) -> Result<(LinearParams, Vec<f64>)> {
    cfg.validate()?;
    if samples.is_empty() {
        return Err(Error::EmptyInput("no samples to fit".into()));
    }
    let system = NormalSystem::build(samples, cfg.l2_weight);
    match cfg.solver {
        RidgeSolver::ClosedForm => {
            let theta = system.solve()?;
            Ok((LinearParams::from_vec(&theta), Vec::new()))
        }
        RidgeSolver::GradientDescent => {
            let dim = system.dim;
            let mut theta = vec![0.0; dim];
            let mut grad = vec![0.0; dim];
            let mut trace = Vec::with_capacity(cfg.episodes);
            for _ in 0..cfg.episodes {
                let loss = system.loss(&theta);
                if !loss.is_finite() {
                    return Err(Error::Divergence {
                        context: "ridge gradient descent".into(),
                    });
                }
                trace.push(loss);
                system.gradient(&theta, &mut grad);
                let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
                if norm < cfg.tolerance {
                    break;
                }
                for (t, g) in theta.iter_mut().zip(&grad) {
                    *t -= cfg.learning_rate * g;
                }
            }
            if theta.iter().any(|t| !t.is_finite()) {
                return Err(Error::Divergence {
                    context: "ridge gradient descent".into(),
                });
            }
            Ok((LinearParams::from_vec(&theta), trace))
        }
    }
}

/// Fitted parameters for one window scale, keyed by the window's last
/// feature day.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamSeries {
    pub scale: usize,
    pub entries: BTreeMap<usize, LinearParams>,
}

impl ParamSeries {
    pub fn get(&self, day: usize) -> Option<&LinearParams> {
        self.entries.get(&day)
    }

    pub fn first_day(&self) -> Option<usize> {
        self.entries.keys().next().copied()
    }

    pub fn last_day(&self) -> Option<usize> {
        self.entries.keys().next_back().copied()
    }
}

/// Pool all defined samples in the window of `scale` days ending at `last`,
/// inclusive.
pub(crate) fn window_samples(
    features: &FeatureMatrix,
    returns: &ReturnMatrix,
    last: usize,
    scale: usize,
) -> SampleSet {
    let mut samples = SampleSet::new(features.feature_dim());
    let first = last + 1 - scale;
    for day in first..=last {
        for stock in 0..features.n_stocks() {
            if let (Some(x), Some(y)) = (features.sample(day, stock), returns.value(day, stock)) {
                samples.push(&x, y);
            }
        }
    }
    samples
}

/// Fit one parameter vector per (scale, day) over the whole history.
/// Windows with no defined samples are skipped silently; fit failures
/// (e.g. rank deficiency at `l2_weight = 0`) propagate.
pub fn param_collect(
    features: &FeatureMatrix,
    returns: &ReturnMatrix,
    scales: &[usize],
    cfg: &RidgeConfig,
) -> Result<BTreeMap<usize, ParamSeries>> {
    param_collect_until(features, returns, scales, cfg, features.n_days())
}

/// As [`param_collect`], restricted to windows ending before `end_day`.
/// The walk-forward runners use this to keep their parameter series causal.
pub(crate) fn param_collect_until(
    features: &FeatureMatrix,
    returns: &ReturnMatrix,
    scales: &[usize],
    cfg: &RidgeConfig,
    end_day: usize,
) -> Result<BTreeMap<usize, ParamSeries>> {
    if scales.is_empty() {
        return Err(Error::InvalidArgument("scales must be non-empty".into()));
    }
    if scales.contains(&0) {
        return Err(Error::InvalidArgument("every scale must be >= 1".into()));
    }
    let end_day = end_day.min(features.n_days());
    let mut result = BTreeMap::new();
    for &scale in scales {
        let mut entries = BTreeMap::new();
        for last in scale.saturating_sub(1)..end_day {
            let samples = window_samples(features, returns, last, scale);
            if samples.is_empty() {
                continue;
            }
            entries.insert(last, fit_ridge(&samples, cfg)?);
        }
        result.insert(scale, ParamSeries { scale, entries });
    }
    Ok(result)
}

/// Rotation-learning prediction for day `day`: fit on the trailing window
/// ending at `day - 1` and apply the stale parameters to today's features.
pub fn rotation_predict(
    features: &FeatureMatrix,
    returns: &ReturnMatrix,
    scale: usize,
    day: usize,
    cfg: &RidgeConfig,
) -> Result<Vec<Option<f64>>> {
    if scale == 0 {
        return Err(Error::InvalidArgument("scale must be >= 1".into()));
    }
    if day < scale {
        return Err(Error::InsufficientHistory(format!(
            "rotation at day {day} needs a {scale}-day window ending at day {}",
            day.saturating_sub(1)
        )));
    }
    let samples = window_samples(features, returns, day - 1, scale);
    if samples.is_empty() {
        return Err(Error::InsufficientHistory(format!(
            "no defined samples in the {scale}-day window ending at day {}",
            day - 1
        )));
    }
    let params = fit_ridge(&samples, cfg)?;
    Ok((0..features.n_stocks())
        .map(|stock| features.sample(day, stock).map(|x| params.apply(&x)))
        .collect())
}

/// Static baseline: one fit on the training range, constant parameters
/// applied on every test day.
pub fn static_first_order(
    features: &FeatureMatrix,
    returns: &ReturnMatrix,
    train: DayRange,
    test: DayRange,
    cfg: &RidgeConfig,
) -> Result<DailyPredictions> {
    if train.is_empty() {
        return Err(Error::EmptyInput("training range is empty".into()));
    }
    if train.end > test.start {
        return Err(Error::InvalidArgument(
            "training range must precede the test range".into(),
        ));
    }
    let params = fit_static_params(features, returns, train, cfg)?;
    let mut predictions = DailyPredictions::new(features.n_stocks());
    for day in test.iter() {
        let row = (0..features.n_stocks())
            .map(|stock| features.sample(day, stock).map(|x| params.apply(&x)))
            .collect();
        predictions.push(day, row)?;
    }
    Ok(predictions)
}

/// The static baseline's single parameter vector.
pub fn fit_static_params(
    features: &FeatureMatrix,
    returns: &ReturnMatrix,
    train: DayRange,
    cfg: &RidgeConfig,
) -> Result<LinearParams> {
    let mut samples = SampleSet::new(features.feature_dim());
    for day in train.iter() {
        for stock in 0..features.n_stocks() {
            if let (Some(x), Some(y)) = (features.sample(day, stock), returns.value(day, stock)) {
                samples.push(&x, y);
            }
        }
    }
    if samples.is_empty() {
        return Err(Error::EmptyInput(
            "training range has no defined samples".into(),
        ));
    }
    fit_ridge(&samples, cfg)
}

/// Write collected series as CSV: `scale,date,b,w_1,...,w_d`.
pub fn write_param_series_csv(
    series: &BTreeMap<usize, ParamSeries>,
    calendar: &TradingCalendar,
    path: &Path,
) -> Result<()> {
    let dim = series
        .values()
        .flat_map(|s| s.entries.values())
        .map(LinearParams::dim)
        .next()
        .unwrap_or(0);
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "scale,date,b")?;
    for j in 1..=dim {
        write!(out, ",w_{j}")?;
    }
    writeln!(out)?;
    for s in series.values() {
        for (&day, params) in &s.entries {
            write!(out, "{},{},{}", s.scale, calendar.day(day).format("%Y-%m-%d"), params.b)?;
            for w in &params.w {
                write!(out, ",{w}")?;
            }
            writeln!(out)?;
        }
    }
    out.flush()?;
    Ok(())
}

//! End-to-end training and walk-forward prediction.
//!
//! Training builds one input window per day (the trailing parameter vectors
//! of every scale), predicts that day's parameters once, applies them to all
//! of the day's stock samples, and descends the mean squared return error by
//! full-batch gradient descent. During the test walk the model weights stay
//! fixed; only the first-order parameter series is refreshed day by day.

use std::collections::BTreeMap;

use ndarray::Array1;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::first_order::{
    fit_ridge, param_collect_until, window_samples, ParamSeries, RidgeConfig,
};
use crate::indicators::FeatureMatrix;
use crate::market_data::{DayRange, ReturnMatrix};
use crate::predictions::DailyPredictions;

use super::grad::{apply_update, backward_from_dtheta, ModelGradients};
use super::{HeadMode, ParamWindow, SecondOrderModel};

/// Gradient-descent settings for the sequential model.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    pub episodes: usize,
    pub learning_rate: f64,
    /// Candidate hidden sizes; the one with the best validation loss wins.
    pub hidden_sizes: Vec<usize>,
    pub forget_bias: f64,
    pub grad_clip: f64,
    pub tolerance: f64,
    /// Fraction of (day, stock) samples held out for validation.
    pub val_fraction: f64,
    pub seed: u64,
    pub head_mode: HeadMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            episodes: 300,
            learning_rate: 0.05,
            hidden_sizes: vec![8],
            forget_bias: 1.0,
            grad_clip: 5.0,
            tolerance: 1e-12,
            val_fraction: 0.1,
            seed: 42,
            head_mode: HeadMode::Learned,
        }
    }
}

impl TrainConfig {
    fn validate(&self) -> Result<()> {
        if self.episodes == 0 {
            return Err(Error::InvalidArgument("episodes must be >= 1".into()));
        }
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::InvalidArgument(
                "learning_rate must be finite and >= 0".into(),
            ));
        }
        if self.hidden_sizes.is_empty() || self.hidden_sizes.contains(&0) {
            return Err(Error::InvalidArgument(
                "hidden_sizes must be non-empty positive".into(),
            ));
        }
        if self.grad_clip <= 0.0 {
            return Err(Error::InvalidArgument("grad_clip must be > 0".into()));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return Err(Error::InvalidArgument(
                "val_fraction must be in [0, 1)".into(),
            ));
        }
        if self.tolerance <= 0.0 {
            return Err(Error::InvalidArgument("tolerance must be > 0".into()));
        }
        Ok(())
    }
}

/// Outcome summary of one training run.
#[derive(Debug, Clone)]
pub struct TrainReport {
    pub hidden: usize,
    pub best_val_loss: f64,
    pub final_train_loss: f64,
    pub episodes_run: usize,
    pub n_train_samples: usize,
    pub n_val_samples: usize,
}

/// Gather the `steps` parameter vectors per scale that precede `day`,
/// sampled at stride `s`: days `day - K s, ..., day - s`, oldest first.
pub fn assemble_window(
    series: &BTreeMap<usize, ParamSeries>,
    day: usize,
    scales: &[usize],
    steps: usize,
) -> Result<ParamWindow> {
    let mut window = ParamWindow::new();
    for &s in scales {
        let ser = series
            .get(&s)
            .ok_or(Error::MissingParamEntry { scale: s, day })?;
        let mut seq = Vec::with_capacity(steps);
        for k in (1..=steps).rev() {
            let need = day.checked_sub(k * s).ok_or_else(|| {
                Error::InsufficientHistory(format!(
                    "day {day} has no room for {steps} steps at scale {s}"
                ))
            })?;
            let params = ser
                .get(need)
                .ok_or(Error::MissingParamEntry { scale: s, day: need })?;
            seq.push(Array1::from(params.to_vec()));
        }
        window.insert(s, seq);
    }
    Ok(window)
}

struct DayBatch {
    window: ParamWindow,
    train_samples: Vec<(Vec<f64>, f64)>,
    val_samples: Vec<(Vec<f64>, f64)>,
}

fn build_batches(
    features: &FeatureMatrix,
    returns: &ReturnMatrix,
    series: &BTreeMap<usize, ParamSeries>,
    train_range: DayRange,
    scales: &[usize],
    steps: usize,
    val_fraction: f64,
    seed: u64,
) -> Result<Vec<DayBatch>> {
    let mut raw: Vec<(ParamWindow, Vec<(Vec<f64>, f64)>)> = Vec::new();
    let mut total = 0usize;
    for day in train_range.iter() {
        let window = match assemble_window(series, day, scales, steps) {
            Ok(w) => w,
            Err(Error::MissingParamEntry { .. }) | Err(Error::InsufficientHistory(_)) => continue,
            Err(e) => return Err(e),
        };
        let mut samples = Vec::new();
        for stock in 0..features.n_stocks() {
            if let (Some(x), Some(y)) = (features.sample(day, stock), returns.value(day, stock)) {
                samples.push((x, y));
            }
        }
        if samples.is_empty() {
            continue;
        }
        total += samples.len();
        raw.push((window, samples));
    }
    if raw.is_empty() {
        return Err(Error::InsufficientHistory(
            "no training day has both a full parameter window and defined samples".into(),
        ));
    }

    // Seeded random extraction of the validation samples.
    let n_val = (val_fraction * total as f64).floor() as usize;
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let mut is_val = vec![false; total];
    for &idx in order.iter().take(n_val) {
        is_val[idx] = true;
    }

    let mut batches = Vec::with_capacity(raw.len());
    let mut cursor = 0usize;
    for (window, samples) in raw {
        let mut batch = DayBatch {
            window,
            train_samples: Vec::new(),
            val_samples: Vec::new(),
        };
        for sample in samples {
            if is_val[cursor] {
                batch.val_samples.push(sample);
            } else {
                batch.train_samples.push(sample);
            }
            cursor += 1;
        }
        batches.push(batch);
    }
    Ok(batches)
}

/// Train the sequential model on the given range, trying every candidate
/// hidden size and keeping the weights with the best validation loss.
pub fn train(
    features: &FeatureMatrix,
    returns: &ReturnMatrix,
    train_range: DayRange,
    scales: &[usize],
    steps: usize,
    cfg: &TrainConfig,
    ridge_cfg: &RidgeConfig,
) -> Result<SecondOrderModel> {
    train_with_report(features, returns, train_range, scales, steps, cfg, ridge_cfg)
        .map(|(model, _)| model)
}

pub fn train_with_report(
    features: &FeatureMatrix,
    returns: &ReturnMatrix,
    train_range: DayRange,
    scales: &[usize],
    steps: usize,
    cfg: &TrainConfig,
    ridge_cfg: &RidgeConfig,
) -> Result<(SecondOrderModel, TrainReport)> {
    cfg.validate()?;
    if train_range.is_empty() {
        return Err(Error::EmptyInput("training range is empty".into()));
    }
    let series = param_collect_until(features, returns, scales, ridge_cfg, train_range.end)?;
    let batches = build_batches(
        features,
        returns,
        &series,
        train_range,
        scales,
        steps,
        cfg.val_fraction,
        cfg.seed,
    )?;

    let mut best: Option<(SecondOrderModel, TrainReport)> = None;
    for &hidden in &cfg.hidden_sizes {
        let (model, report) = train_one(features, &batches, scales, steps, hidden, cfg)?;
        let better = match &best {
            None => true,
            Some((_, b)) => report.best_val_loss < b.best_val_loss,
        };
        if better {
            best = Some((model, report));
        }
    }
    Ok(best.expect("hidden_sizes validated non-empty"))
}

fn train_one(
    features: &FeatureMatrix,
    batches: &[DayBatch],
    scales: &[usize],
    steps: usize,
    hidden: usize,
    cfg: &TrainConfig,
) -> Result<(SecondOrderModel, TrainReport)> {
    let d = features.feature_dim();
    let mut model = SecondOrderModel::init(
        d,
        hidden,
        steps,
        scales,
        cfg.forget_bias,
        cfg.head_mode,
        cfg.seed,
    )?;
    let n_train: usize = batches.iter().map(|b| b.train_samples.len()).sum();
    let n_val: usize = batches.iter().map(|b| b.val_samples.len()).sum();
    if n_train == 0 {
        return Err(Error::InsufficientHistory(
            "validation split left no training samples".into(),
        ));
    }

    let mut best_loss = f64::INFINITY;
    let mut best_model = model.clone();
    let mut final_train_loss = f64::NAN;
    let mut episodes_run = 0;
    for _ in 0..cfg.episodes {
        episodes_run += 1;
        let mut grads = ModelGradients::zeros_like(&model);
        let (train_loss, val_loss) =
            sweep(&model, batches, n_train, n_val, Some(&mut grads))?;
        final_train_loss = train_loss;
        let selection = if n_val > 0 { val_loss } else { train_loss };
        if selection < best_loss {
            best_loss = selection;
            best_model = model.clone();
        }
        if let Some(parameter) = grads.first_non_finite() {
            return Err(Error::NonFiniteGradient { parameter });
        }
        let norm = grads.global_norm();
        if norm < cfg.tolerance {
            break;
        }
        if norm > cfg.grad_clip {
            grads.scale(cfg.grad_clip / norm);
        }
        apply_update(&mut model, &grads, cfg.learning_rate);
    }
    // The final weights never got a selection pass inside the loop.
    let (train_loss, val_loss) = sweep(&model, batches, n_train, n_val, None)?;
    let selection = if n_val > 0 { val_loss } else { train_loss };
    if selection < best_loss {
        best_loss = selection;
        best_model = model;
    }
    Ok((
        best_model,
        TrainReport {
            hidden,
            best_val_loss: best_loss,
            final_train_loss,
            episodes_run,
            n_train_samples: n_train,
            n_val_samples: n_val,
        },
    ))
}

/// One pass over all day batches: mean train/validation losses, plus
/// gradient accumulation when requested.
fn sweep(
    model: &SecondOrderModel,
    batches: &[DayBatch],
    n_train: usize,
    n_val: usize,
    mut grads: Option<&mut ModelGradients>,
) -> Result<(f64, f64)> {
    let d = model.feature_dim;
    let mut train_loss = 0.0;
    let mut val_loss = 0.0;
    for batch in batches {
        let cache = model.forward_cached(&batch.window)?;
        let theta = cache.theta_hat.as_slice().unwrap();
        let predict = |x: &[f64]| -> f64 {
            theta[..d].iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + theta[d]
        };
        for (x, y) in &batch.val_samples {
            val_loss += (predict(x) - y).powi(2);
        }
        if let Some(grads) = grads.as_deref_mut() {
            if !batch.train_samples.is_empty() {
                let mut d_theta = Array1::zeros(d + 1);
                for (x, y) in &batch.train_samples {
                    let y_hat = predict(x);
                    train_loss += (y_hat - y).powi(2);
                    let dy = 2.0 * (y_hat - y) / n_train as f64;
                    for (j, &xj) in x.iter().enumerate() {
                        d_theta[j] += dy * xj;
                    }
                    d_theta[d] += dy;
                }
                backward_from_dtheta(model, &cache, &d_theta, grads);
            }
        } else {
            for (x, y) in &batch.train_samples {
                train_loss += (predict(x) - y).powi(2);
            }
        }
    }
    let train_loss = train_loss / n_train as f64;
    if !train_loss.is_finite() {
        return Err(Error::Divergence {
            context: "sequential model training".into(),
        });
    }
    let val_loss = if n_val > 0 {
        val_loss / n_val as f64
    } else {
        f64::INFINITY
    };
    Ok((train_loss, val_loss))
}

/// Walk the test range: predict each day from the current parameter series,
/// then fit that day's parameters for every scale and append them before
/// advancing. Model weights are never retrained here.
pub fn predict_rolling(
    model: &SecondOrderModel,
    features: &FeatureMatrix,
    returns: &ReturnMatrix,
    test_range: DayRange,
    ridge_cfg: &RidgeConfig,
) -> Result<DailyPredictions> {
    predict_rolling_with_series(model, features, returns, test_range, ridge_cfg)
        .map(|(preds, _)| preds)
}

/// As [`predict_rolling`], also returning the extended parameter series.
pub fn predict_rolling_with_series(
    model: &SecondOrderModel,
    features: &FeatureMatrix,
    returns: &ReturnMatrix,
    test_range: DayRange,
    ridge_cfg: &RidgeConfig,
) -> Result<(DailyPredictions, BTreeMap<usize, ParamSeries>)> {
    if test_range.end > features.n_days() {
        return Err(Error::InvalidArgument(format!(
            "test range ends at {} but the panel has {} days",
            test_range.end,
            features.n_days()
        )));
    }
    let mut series =
        param_collect_until(features, returns, &model.scales, ridge_cfg, test_range.start)?;
    let mut predictions = DailyPredictions::new(features.n_stocks());
    for day in test_range.iter() {
        let window = assemble_window(&series, day, &model.scales, model.steps)?;
        let params = model.predict_params(&window)?;
        let row = (0..features.n_stocks())
            .map(|stock| features.sample(day, stock).map(|x| params.apply(&x)))
            .collect();
        predictions.push(day, row)?;

        for &s in &model.scales {
            if day + 1 >= s {
                let samples = window_samples(features, returns, day, s);
                if !samples.is_empty() {
                    let fitted = fit_ridge(&samples, ridge_cfg)?;
                    series.get_mut(&s).unwrap().entries.insert(day, fitted);
                }
            }
        }
    }
    Ok((predictions, series))
}

/// Walk variant that retrains the sequential model from scratch on all data
/// before each test day. Far slower than the fixed-weights walk; kept
/// behind a config flag.
pub fn predict_rolling_retrained(
    features: &FeatureMatrix,
    returns: &ReturnMatrix,
    train_start: usize,
    test_range: DayRange,
    scales: &[usize],
    steps: usize,
    cfg: &TrainConfig,
    ridge_cfg: &RidgeConfig,
) -> Result<DailyPredictions> {
    let mut predictions = DailyPredictions::new(features.n_stocks());
    for day in test_range.iter() {
        let model = train(
            features,
            returns,
            DayRange::new(train_start, day),
            scales,
            steps,
            cfg,
            ridge_cfg,
        )?;
        let series = param_collect_until(features, returns, scales, ridge_cfg, day)?;
        let window = assemble_window(&series, day, scales, steps)?;
        let params = model.predict_params(&window)?;
        let row = (0..features.n_stocks())
            .map(|stock| features.sample(day, stock).map(|x| params.apply(&x)))
            .collect();
        predictions.push(day, row)?;
    }
    Ok(predictions)
}

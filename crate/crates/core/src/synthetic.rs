//! Synthetic markets with known time-varying generating parameters.
//!
//! Returns follow `r[t][i] = w*_t . x[t][i] + b* + eps` with independent
//! standard-normal features, and prices are integrated multiplicatively so
//! the full CSV -> indicators -> backtest path works on generated data. The
//! per-day ground truth is kept alongside, which is what makes the walk-
//! forward experiments verifiable without the original market data.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use chrono::NaiveDate;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::first_order::LinearParams;
use crate::indicators::{FeatureColumn, FeatureMatrix, Normalization};
use crate::market_data::{compute_returns, PricePanel, ReturnMatrix, StockRecord, TradingCalendar};
use crate::predictions::DailyPredictions;

/// How the generating weights move over time.
#[derive(Debug, Clone, PartialEq)]
pub enum RegimePattern {
    Constant,
    /// Additive sinusoid on every weight, phase-shifted per component.
    Sinusoidal { period: usize, amplitude: f64 },
    /// Jump to `weight_sets[i]` at `switch_days[i]`; the base weights hold
    /// before the first switch.
    StepSwitch {
        switch_days: Vec<usize>,
        weight_sets: Vec<Vec<f64>>,
    },
    /// Independent Gaussian increments per component per day.
    RandomWalk { step_std: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegimeSpec {
    pub pattern: RegimePattern,
    pub base_weights: Vec<f64>,
    pub base_bias: f64,
    pub noise_std: f64,
    pub n_stocks: usize,
    pub n_days: usize,
    pub seed: u64,
}

impl RegimeSpec {
    fn validate(&self) -> Result<()> {
        let invalid = |msg: String| Err(Error::InvalidArgument(msg));
        if self.base_weights.is_empty() {
            return invalid("base_weights must be non-empty".into());
        }
        if !self.noise_std.is_finite() || self.noise_std < 0.0 {
            return invalid(format!("noise_std must be >= 0, got {}", self.noise_std));
        }
        if self.n_stocks < 2 {
            return invalid(format!("n_stocks must be >= 2, got {}", self.n_stocks));
        }
        if self.n_days < 2 {
            return invalid(format!("n_days must be >= 2, got {}", self.n_days));
        }
        match &self.pattern {
            RegimePattern::Constant => {}
            RegimePattern::Sinusoidal { period, amplitude } => {
                if *period < 2 {
                    return invalid(format!("sinusoidal period must be >= 2, got {period}"));
                }
                if !amplitude.is_finite() {
                    return invalid("sinusoidal amplitude must be finite".into());
                }
            }
            RegimePattern::StepSwitch {
                switch_days,
                weight_sets,
            } => {
                if switch_days.is_empty() || weight_sets.len() != switch_days.len() {
                    return invalid(
                        "step_switch needs one weight set per switch day".into(),
                    );
                }
                if switch_days.windows(2).any(|w| w[0] >= w[1]) {
                    return invalid("switch days must be strictly increasing".into());
                }
                if switch_days.iter().any(|&d| d == 0 || d >= self.n_days) {
                    return invalid("switch days must lie inside (0, n_days)".into());
                }
                if weight_sets
                    .iter()
                    .any(|w| w.len() != self.base_weights.len())
                {
                    return invalid("every weight set must match base_weights length".into());
                }
            }
            RegimePattern::RandomWalk { step_std } => {
                if !step_std.is_finite() || *step_std < 0.0 {
                    return invalid(format!("step_std must be >= 0, got {step_std}"));
                }
            }
        }
        Ok(())
    }
}

/// A generated market: aligned panel, linear-model features, realized
/// returns, and the per-day generating parameters.
#[derive(Debug, Clone)]
pub struct SyntheticMarket {
    pub spec: RegimeSpec,
    pub panel: PricePanel,
    pub features: FeatureMatrix,
    pub returns: ReturnMatrix,
    pub truth: Vec<LinearParams>,
}

/// Prediction quality against the realized returns, with the noise floor
/// no predictor can beat in expectation.
#[derive(Debug, Clone, Copy)]
pub struct OracleMse {
    pub mse: f64,
    pub bayes_floor: f64,
    pub n_samples: usize,
}

pub fn generate(spec: &RegimeSpec) -> Result<SyntheticMarket> {
    spec.validate()?;
    let d = spec.base_weights.len();
    let (n_days, n_stocks) = (spec.n_days, spec.n_stocks);
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let normal = StandardNormal;
    let mut draw = |std: f64| -> f64 {
        let z: f64 = normal.sample(&mut rng);
        z * std
    };

    // Phase 1: the generating parameters.
    let mut truth: Vec<LinearParams> = Vec::with_capacity(n_days);
    for day in 0..n_days {
        let w = match &spec.pattern {
            RegimePattern::Constant => spec.base_weights.clone(),
            RegimePattern::Sinusoidal { period, amplitude } => {
                let omega = std::f64::consts::TAU / *period as f64;
                spec.base_weights
                    .iter()
                    .enumerate()
                    .map(|(j, &base)| {
                        let phase = std::f64::consts::TAU * j as f64 / d as f64;
                        base + amplitude * (omega * day as f64 + phase).sin()
                    })
                    .collect()
            }
            RegimePattern::StepSwitch {
                switch_days,
                weight_sets,
            } => {
                let regime = switch_days.iter().filter(|&&sd| day >= sd).count();
                if regime == 0 {
                    spec.base_weights.clone()
                } else {
                    weight_sets[regime - 1].clone()
                }
            }
            RegimePattern::RandomWalk { step_std } => match truth.last() {
                None => spec.base_weights.clone(),
                Some(prev) => prev.w.iter().map(|&w| w + draw(*step_std)).collect(),
            },
        };
        truth.push(LinearParams {
            w,
            b: spec.base_bias,
        });
    }

    // Phase 2: features.
    let mut values = Vec::with_capacity(n_days * n_stocks * d);
    for _ in 0..n_days * n_stocks * d {
        values.push(Some(draw(1.0)));
    }
    let columns = (1..=d)
        .map(|j| FeatureColumn::Named(format!("f{j}")))
        .collect();
    let features =
        FeatureMatrix::from_raw(columns, values, n_days, n_stocks, Normalization::None)?;

    // Phase 3: returns and integrated prices.
    let mut closes = vec![vec![0.0f64; n_days]; n_stocks];
    for stock in closes.iter_mut() {
        stock[0] = 100.0;
    }
    for day in 0..n_days - 1 {
        for stock in 0..n_stocks {
            let x = features.sample(day, stock).expect("synthetic features are dense");
            let r = truth[day].apply(&x) + draw(spec.noise_std);
            let next = closes[stock][day] * (1.0 + r);
            if !(next.is_finite() && next > 0.0) {
                return Err(Error::InvalidArgument(format!(
                    "generated price became non-positive on day {} (return {r:.4}); \
                     reduce weights or noise_std",
                    day + 1
                )));
            }
            closes[stock][day + 1] = next;
        }
    }

    // Phase 4: candle shading around the closes.
    let start = NaiveDate::from_ymd_opt(2020, 1, 1).expect("valid base date");
    let days = (0..n_days)
        .map(|t| start + chrono::Days::new(t as u64))
        .collect();
    let calendar = TradingCalendar::new(days)?;
    let mut records = Vec::with_capacity(n_days * n_stocks);
    for day in 0..n_days {
        for stock in 0..n_stocks {
            let close = closes[stock][day];
            let open = if day == 0 { close } else { closes[stock][day - 1] };
            let span = draw(1.0).abs() * 0.001;
            records.push(Some(StockRecord {
                open,
                high: open.max(close) * (1.0 + span),
                low: open.min(close) * (1.0 - span),
                close,
                volume: 1_000_000.0,
                suspended: false,
            }));
        }
    }
    let stocks = (0..n_stocks).map(|i| format!("SYN{i:03}")).collect();
    let panel = PricePanel::new(calendar, stocks, records)?;
    let returns = compute_returns(&panel, 1)?;

    Ok(SyntheticMarket {
        spec: spec.clone(),
        panel,
        features,
        returns,
        truth,
    })
}

impl SyntheticMarket {
    /// Mean squared error of predictions against realized returns, plus the
    /// generator's noise floor.
    pub fn oracle_mse(&self, predictions: &DailyPredictions) -> Result<OracleMse> {
        if predictions.n_stocks() != self.panel.n_stocks() {
            return Err(Error::Misaligned(format!(
                "predictions cover {} stocks, market has {}",
                predictions.n_stocks(),
                self.panel.n_stocks()
            )));
        }
        let mut sum = 0.0;
        let mut n = 0usize;
        for (day, row) in predictions.iter() {
            if day >= self.panel.n_days() {
                return Err(Error::Misaligned(format!(
                    "prediction day {day} beyond market ({} days)",
                    self.panel.n_days()
                )));
            }
            for (stock, pred) in row.iter().enumerate() {
                if let (Some(p), Some(r)) = (pred, self.returns.value(day, stock)) {
                    sum += (p - r).powi(2);
                    n += 1;
                }
            }
        }
        if n == 0 {
            return Err(Error::EmptyInput(
                "no prediction overlaps a defined return".into(),
            ));
        }
        Ok(OracleMse {
            mse: sum / n as f64,
            bayes_floor: self.spec.noise_std * self.spec.noise_std,
            n_samples: n,
        })
    }

    /// `date,b,w_1,...,w_d` per day.
    pub fn write_truth_csv(&self, path: &Path) -> Result<()> {
        let d = self.spec.base_weights.len();
        let mut out = BufWriter::new(File::create(path)?);
        write!(out, "date,b")?;
        for j in 1..=d {
            write!(out, ",w_{j}")?;
        }
        writeln!(out)?;
        for (day, params) in self.truth.iter().enumerate() {
            write!(
                out,
                "{},{}",
                self.panel.calendar().day(day).format("%Y-%m-%d"),
                params.b
            )?;
            for w in &params.w {
                write!(out, ",{w}")?;
            }
            writeln!(out)?;
        }
        out.flush()?;
        Ok(())
    }
}

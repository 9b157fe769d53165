//! Trading indicators and indicator-effectiveness diagnostics.
//!
//! Implements the candlestick set (KLEN, KUP, KLOW), the windowed trend set
//! (MA, EMA, BIAS, ROC) and raw price columns, stacks them into a feature
//! matrix with optional per-day cross-sectional z-scoring, and measures each
//! indicator's Information Coefficient against forward returns.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::market_data::{PricePanel, ReturnMatrix};

/// Indicator families. Price and candlestick kinds ignore the window.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum IndicatorKind {
    Open,
    High,
    Low,
    Close,
    Klen,
    Kup,
    Klow,
    Ma,
    Ema,
    Bias,
    Roc,
}

impl IndicatorKind {
    pub fn is_windowed(self) -> bool {
        matches!(
            self,
            IndicatorKind::Ma | IndicatorKind::Ema | IndicatorKind::Bias | IndicatorKind::Roc
        )
    }

    fn name(self) -> &'static str {
        match self {
            IndicatorKind::Open => "OPEN",
            IndicatorKind::High => "HIGH",
            IndicatorKind::Low => "LOW",
            IndicatorKind::Close => "CLOSE",
            IndicatorKind::Klen => "KLEN",
            IndicatorKind::Kup => "KUP",
            IndicatorKind::Klow => "KLOW",
            IndicatorKind::Ma => "MA",
            IndicatorKind::Ema => "EMA",
            IndicatorKind::Bias => "BIAS",
            IndicatorKind::Roc => "ROC",
        }
    }
}

/// One feature column: an indicator kind plus its sliding window size.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct IndicatorSpec {
    pub kind: IndicatorKind,
    pub window: usize,
}

impl IndicatorSpec {
    pub fn price(kind: IndicatorKind) -> Result<Self> {
        if kind.is_windowed() {
            return Err(Error::InvalidArgument(format!(
                "{} requires a window",
                kind.name()
            )));
        }
        Ok(Self { kind, window: 1 })
    }

    pub fn windowed(kind: IndicatorKind, window: usize) -> Result<Self> {
        if !kind.is_windowed() {
            return Err(Error::InvalidArgument(format!(
                "{} does not take a window",
                kind.name()
            )));
        }
        if window == 0 {
            return Err(Error::InvalidArgument(format!(
                "{} window must be at least 1",
                kind.name()
            )));
        }
        Ok(Self { kind, window })
    }
}

impl fmt::Display for IndicatorSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.kind.is_windowed() {
            write!(f, "{}_{}", self.kind.name(), self.window)
        } else {
            write!(f, "{}", self.kind.name())
        }
    }
}

impl FromStr for IndicatorSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (name, window) = match s.split_once('_') {
            Some((name, w)) => {
                let window: usize = w
                    .parse()
                    .map_err(|_| Error::UnknownIndicator(s.to_string()))?;
                (name, Some(window))
            }
            None => (s, None),
        };
        let kind = match name {
            "OPEN" => IndicatorKind::Open,
            "HIGH" => IndicatorKind::High,
            "LOW" => IndicatorKind::Low,
            "CLOSE" => IndicatorKind::Close,
            "KLEN" => IndicatorKind::Klen,
            "KUP" => IndicatorKind::Kup,
            "KLOW" => IndicatorKind::Klow,
            "MA" => IndicatorKind::Ma,
            "EMA" => IndicatorKind::Ema,
            "BIAS" => IndicatorKind::Bias,
            "ROC" => IndicatorKind::Roc,
            _ => return Err(Error::UnknownIndicator(s.to_string())),
        };
        match (kind.is_windowed(), window) {
            (true, Some(w)) => IndicatorSpec::windowed(kind, w),
            (false, None) => IndicatorSpec::price(kind),
            _ => Err(Error::UnknownIndicator(s.to_string())),
        }
    }
}

/// The standard 19-column set: raw prices, candlesticks, and each trend
/// indicator at windows 5, 10 and 20.
pub fn default_specs() -> Vec<IndicatorSpec> {
    let mut specs = vec![
        IndicatorSpec::price(IndicatorKind::Open).unwrap(),
        IndicatorSpec::price(IndicatorKind::High).unwrap(),
        IndicatorSpec::price(IndicatorKind::Low).unwrap(),
        IndicatorSpec::price(IndicatorKind::Close).unwrap(),
        IndicatorSpec::price(IndicatorKind::Klen).unwrap(),
        IndicatorSpec::price(IndicatorKind::Kup).unwrap(),
        IndicatorSpec::price(IndicatorKind::Klow).unwrap(),
    ];
    for kind in [
        IndicatorKind::Ma,
        IndicatorKind::Ema,
        IndicatorKind::Bias,
        IndicatorKind::Roc,
    ] {
        for window in [5, 10, 20] {
            specs.push(IndicatorSpec::windowed(kind, window).unwrap());
        }
    }
    specs
}

/// A single indicator evaluated over the whole panel, day-major.
#[derive(Debug, Clone, PartialEq)]
pub struct IndicatorSeries {
    values: Vec<Option<f64>>,
    n_days: usize,
    n_stocks: usize,
}

impl IndicatorSeries {
    pub fn value(&self, day: usize, stock: usize) -> Option<f64> {
        self.values[day * self.n_stocks + stock]
    }

    /// Per-stock cross-section on one day.
    pub fn cross_section(&self, day: usize) -> &[Option<f64>] {
        &self.values[day * self.n_stocks..(day + 1) * self.n_stocks]
    }
}

/// Evaluate one indicator over the panel. Values are undefined on days the
/// stock is not trading or the formula's look-back is not fully available.
pub fn compute_indicator(spec: IndicatorSpec, panel: &PricePanel) -> Result<IndicatorSeries> {
    if panel.n_days() == 0 || panel.n_stocks() == 0 {
        return Err(Error::EmptyInput("panel has no days or no stocks".into()));
    }
    let (n_days, n_stocks) = (panel.n_days(), panel.n_stocks());
    let mut values = vec![None; n_days * n_stocks];
    for stock in 0..n_stocks {
        match spec.kind {
            IndicatorKind::Open => {
                fill_pointwise(&mut values, panel, stock, |r| r.open);
            }
            IndicatorKind::High => {
                fill_pointwise(&mut values, panel, stock, |r| r.high);
            }
            IndicatorKind::Low => {
                fill_pointwise(&mut values, panel, stock, |r| r.low);
            }
            IndicatorKind::Close => {
                fill_pointwise(&mut values, panel, stock, |r| r.close);
            }
            IndicatorKind::Klen => {
                fill_pointwise(&mut values, panel, stock, |r| (r.close - r.open) / r.open);
            }
            IndicatorKind::Kup => {
                fill_pointwise(&mut values, panel, stock, |r| {
                    (r.high - r.open.max(r.close)) / r.open
                });
            }
            IndicatorKind::Klow => {
                fill_pointwise(&mut values, panel, stock, |r| {
                    (r.open.min(r.close) - r.low) / r.open
                });
            }
            IndicatorKind::Ma => {
                for day in 0..n_days {
                    values[day * n_stocks + stock] = close_window_mean(panel, day, stock, spec.window);
                }
            }
            IndicatorKind::Bias => {
                for day in 0..n_days {
                    values[day * n_stocks + stock] = close_window_mean(panel, day, stock, spec.window)
                        .map(|ma| panel.close(day, stock).unwrap() - ma);
                }
            }
            IndicatorKind::Roc => {
                for day in spec.window..n_days {
                    if let (Some(now), Some(then)) = (
                        panel.close(day, stock),
                        panel.close(day - spec.window, stock),
                    ) {
                        values[day * n_stocks + stock] = Some((now - then) / then);
                    }
                }
            }
            IndicatorKind::Ema => {
                let mult = 2.0 / (spec.window as f64 + 1.0);
                let mut state: Option<f64> = None;
                for day in 0..n_days {
                    if let Some(close) = panel.close(day, stock) {
                        // The first defined close seeds the recursion; a
                        // window of 1 collapses to the close itself.
                        let next = match state {
                            None => close,
                            Some(_) if mult == 1.0 => close,
                            Some(prev) => (close - prev) * mult + prev,
                        };
                        state = Some(next);
                        values[day * n_stocks + stock] = state;
                    }
                }
            }
        }
    }
    Ok(IndicatorSeries {
        values,
        n_days,
        n_stocks,
    })
}

fn fill_pointwise(
    values: &mut [Option<f64>],
    panel: &PricePanel,
    stock: usize,
    f: impl Fn(&crate::market_data::StockRecord) -> f64,
) {
    let n_stocks = panel.n_stocks();
    for day in 0..panel.n_days() {
        values[day * n_stocks + stock] = panel.trading_record(day, stock).map(&f);
    }
}

/// Mean close over calendar days `[day - m + 1, day]`; undefined if any of
/// the m closes is missing.
fn close_window_mean(panel: &PricePanel, day: usize, stock: usize, m: usize) -> Option<f64> {
    if day + 1 < m {
        return None;
    }
    let mut sum = 0.0;
    for j in 0..m {
        sum += panel.close(day - j, stock)?;
    }
    Some(sum / m as f64)
}

/// Cross-sectional transform applied to each (day, column) slice.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Normalization {
    None,
    /// Per-day z-score over defined entries; constant cross-sections are
    /// centered to zero.
    CrossSectionalZScore,
}

impl fmt::Display for Normalization {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Normalization::None => write!(f, "none"),
            Normalization::CrossSectionalZScore => write!(f, "zscore"),
        }
    }
}

/// Name of a feature column: a known indicator or an opaque label (used by
/// the synthetic harness, whose features are not indicator-derived).
#[derive(Debug, Clone, PartialEq)]
pub enum FeatureColumn {
    Indicator(IndicatorSpec),
    Named(String),
}

impl fmt::Display for FeatureColumn {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureColumn::Indicator(spec) => write!(f, "{spec}"),
            FeatureColumn::Named(name) => write!(f, "{name}"),
        }
    }
}

/// Stacked per-day, per-stock indicator vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    columns: Vec<FeatureColumn>,
    values: Vec<Option<f64>>,
    n_days: usize,
    n_stocks: usize,
    normalization: Normalization,
}

impl FeatureMatrix {
    pub fn from_raw(
        columns: Vec<FeatureColumn>,
        values: Vec<Option<f64>>,
        n_days: usize,
        n_stocks: usize,
        normalization: Normalization,
    ) -> Result<Self> {
        if values.len() != n_days * n_stocks * columns.len() {
            return Err(Error::InvalidArgument(format!(
                "feature tensor has {} entries, expected {} x {} x {}",
                values.len(),
                n_days,
                n_stocks,
                columns.len()
            )));
        }
        Ok(Self {
            columns,
            values,
            n_days,
            n_stocks,
            normalization,
        })
    }

    pub fn columns(&self) -> &[FeatureColumn] {
        &self.columns
    }

    pub fn feature_dim(&self) -> usize {
        self.columns.len()
    }

    pub fn n_days(&self) -> usize {
        self.n_days
    }

    pub fn n_stocks(&self) -> usize {
        self.n_stocks
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }

    pub fn value(&self, day: usize, stock: usize, col: usize) -> Option<f64> {
        self.values[(day * self.n_stocks + stock) * self.columns.len() + col]
    }

    /// Full feature vector for one (day, stock) sample; `None` if any
    /// column is undefined there.
    pub fn sample(&self, day: usize, stock: usize) -> Option<Vec<f64>> {
        let d = self.columns.len();
        let base = (day * self.n_stocks + stock) * d;
        let slice = &self.values[base..base + d];
        if slice.iter().all(Option::is_some) {
            Some(slice.iter().map(|v| v.unwrap()).collect())
        } else {
            None
        }
    }

    /// Per-stock cross-section of one column on one day.
    pub fn cross_section(&self, day: usize, col: usize) -> Vec<Option<f64>> {
        (0..self.n_stocks)
            .map(|stock| self.value(day, stock, col))
            .collect()
    }

    /// One column materialized as a standalone series, e.g. for the
    /// windowed IC diagnostics.
    pub fn column_series(&self, col: usize) -> IndicatorSeries {
        let values = (0..self.n_days)
            .flat_map(|day| (0..self.n_stocks).map(move |stock| self.value(day, stock, col)))
            .collect();
        IndicatorSeries {
            values,
            n_days: self.n_days,
            n_stocks: self.n_stocks,
        }
    }

    /// Restrict to the first `n_days` days.
    pub fn truncate_days(&self, n_days: usize) -> FeatureMatrix {
        let n_days = n_days.min(self.n_days);
        FeatureMatrix {
            columns: self.columns.clone(),
            values: self.values[..n_days * self.n_stocks * self.columns.len()].to_vec(),
            n_days,
            n_stocks: self.n_stocks,
            normalization: self.normalization,
        }
    }

    /// Emit as CSV: `date,symbol,<columns...>,label`, with empty fields for
    /// undefined entries. The label is the forward return for the row's day.
    pub fn write_csv(&self, path: &Path, panel: &PricePanel, labels: &ReturnMatrix) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        write!(out, "date,symbol")?;
        for col in &self.columns {
            write!(out, ",{col}")?;
        }
        writeln!(out, ",label")?;
        for day in 0..self.n_days {
            let date = panel.calendar().day(day).format("%Y-%m-%d");
            for (stock, symbol) in panel.stocks().iter().enumerate() {
                write!(out, "{date},{symbol}")?;
                for col in 0..self.columns.len() {
                    match self.value(day, stock, col) {
                        Some(v) => write!(out, ",{v}")?,
                        None => write!(out, ",")?,
                    }
                }
                match labels.value(day, stock) {
                    Some(v) => writeln!(out, ",{v}")?,
                    None => writeln!(out, ",")?,
                }
            }
        }
        out.flush()?;
        Ok(())
    }

    /// Read a feature CSV back, aligning rows to the panel's calendar and
    /// stock order. The trailing `label` column is ignored; labels are
    /// recomputed from the panel.
    pub fn read_csv(path: &Path, panel: &PricePanel) -> Result<FeatureMatrix> {
        let file = File::open(path)?;
        let mut csv = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .from_reader(file);

        let headers = csv.headers().map_err(|e| Error::MalformedRow {
            line: 1,
            reason: e.to_string(),
        })?;
        let names: Vec<String> = headers.iter().map(str::to_string).collect();
        if names.len() < 4 || names[0] != "date" || names[1] != "symbol" {
            return Err(Error::MalformedRow {
                line: 1,
                reason: "expected header date,symbol,<columns...>,label".into(),
            });
        }
        if names.last().map(String::as_str) != Some("label") {
            return Err(Error::MalformedRow {
                line: 1,
                reason: "last column must be label".into(),
            });
        }
        let columns: Vec<FeatureColumn> = names[2..names.len() - 1]
            .iter()
            .map(|name| match name.parse::<IndicatorSpec>() {
                Ok(spec) => FeatureColumn::Indicator(spec),
                Err(_) => FeatureColumn::Named(name.clone()),
            })
            .collect();

        let stock_index: HashMap<&str, usize> = panel
            .stocks()
            .iter()
            .enumerate()
            .map(|(i, s)| (s.as_str(), i))
            .collect();
        let d = columns.len();
        let mut values = vec![None; panel.n_days() * panel.n_stocks() * d];
        for record in csv.records() {
            let record = record.map_err(|e| Error::MalformedRow {
                line: e.position().map_or(0, |p| p.line()),
                reason: e.to_string(),
            })?;
            let line = record.position().map_or(0, |p| p.line());
            let malformed = |reason: String| Error::MalformedRow { line, reason };
            if record.len() != d + 3 {
                return Err(malformed(format!(
                    "expected {} fields, got {}",
                    d + 3,
                    record.len()
                )));
            }
            let date = chrono::NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
                .map_err(|e| malformed(format!("bad date '{}': {e}", &record[0])))?;
            let day = panel
                .calendar()
                .index_of(date)
                .ok_or_else(|| Error::Misaligned(format!("date {date} not in panel calendar")))?;
            let stock = *stock_index
                .get(&record[1])
                .ok_or_else(|| Error::Misaligned(format!("symbol {} not in panel", &record[1])))?;
            for col in 0..d {
                let field = &record[col + 2];
                if field.is_empty() {
                    continue;
                }
                let v: f64 = field
                    .parse()
                    .map_err(|e| malformed(format!("bad value '{field}': {e}")))?;
                values[(day * panel.n_stocks() + stock) * d + col] = Some(v);
            }
        }
        FeatureMatrix::from_raw(
            columns,
            values,
            panel.n_days(),
            panel.n_stocks(),
            Normalization::None,
        )
    }
}

/// Stack indicators into a feature matrix, optionally z-scoring each
/// (day, column) cross-section over its defined entries.
pub fn build_features(
    panel: &PricePanel,
    specs: &[IndicatorSpec],
    normalize: bool,
) -> Result<FeatureMatrix> {
    if specs.is_empty() {
        return Err(Error::InvalidArgument("specs must be non-empty".into()));
    }
    let (n_days, n_stocks, d) = (panel.n_days(), panel.n_stocks(), specs.len());
    let mut values = vec![None; n_days * n_stocks * d];
    for (col, &spec) in specs.iter().enumerate() {
        let series = compute_indicator(spec, panel)?;
        for day in 0..n_days {
            for stock in 0..n_stocks {
                values[(day * n_stocks + stock) * d + col] = series.value(day, stock);
            }
        }
    }
    if normalize {
        for day in 0..n_days {
            for col in 0..d {
                zscore_slice(&mut values, day, col, n_stocks, d);
            }
        }
    }
    FeatureMatrix::from_raw(
        specs.iter().map(|&s| FeatureColumn::Indicator(s)).collect(),
        values,
        n_days,
        n_stocks,
        if normalize {
            Normalization::CrossSectionalZScore
        } else {
            Normalization::None
        },
    )
}

fn zscore_slice(values: &mut [Option<f64>], day: usize, col: usize, n_stocks: usize, d: usize) {
    let idx = |stock: usize| (day * n_stocks + stock) * d + col;
    let defined: Vec<f64> = (0..n_stocks).filter_map(|s| values[idx(s)]).collect();
    if defined.is_empty() {
        return;
    }
    let n = defined.len() as f64;
    let mean = defined.iter().sum::<f64>() / n;
    let var = defined.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    for stock in 0..n_stocks {
        if let Some(v) = values[idx(stock)] {
            values[idx(stock)] = Some(if std > 0.0 { (v - mean) / std } else { v - mean });
        }
    }
}

/// Daily cross-sectional Pearson correlation between an indicator's values
/// and the day's forward returns.
pub fn information_coefficient(
    feature: &[Option<f64>],
    returns: &ReturnMatrix,
    day: usize,
) -> Result<f64> {
    if feature.len() != returns.n_stocks() {
        return Err(Error::DimensionMismatch {
            expected: returns.n_stocks(),
            got: feature.len(),
        });
    }
    let pairs: Vec<(f64, f64)> = feature
        .iter()
        .enumerate()
        .filter_map(|(stock, f)| f.and_then(|f| returns.value(day, stock).map(|r| (f, r))))
        .collect();
    pearson(&pairs).ok_or_else(|| undefined_ic(day, &pairs))
}

/// Pearson correlation over (stock, day) pairs pooled across the trailing
/// window `[day - window + 1, day]`.
pub fn windowed_ic(
    feature: &IndicatorSeries,
    returns: &ReturnMatrix,
    day: usize,
    window: usize,
) -> Result<f64> {
    if window == 0 || day + 1 < window {
        return Err(Error::InsufficientHistory(format!(
            "windowed IC needs {window} days ending at day {day}"
        )));
    }
    let mut pairs = Vec::new();
    for d in day + 1 - window..=day {
        for stock in 0..returns.n_stocks() {
            if let (Some(f), Some(r)) = (feature.value(d, stock), returns.value(d, stock)) {
                pairs.push((f, r));
            }
        }
    }
    pearson(&pairs).ok_or_else(|| undefined_ic(day, &pairs))
}

fn undefined_ic(day: usize, pairs: &[(f64, f64)]) -> Error {
    let reason = if pairs.len() < 2 {
        format!("only {} defined pair(s)", pairs.len())
    } else {
        "zero variance in feature or returns".to_string()
    };
    Error::UndefinedIc { day, reason }
}

fn pearson(pairs: &[(f64, f64)]) -> Option<f64> {
    if pairs.len() < 2 {
        return None;
    }
    let n = pairs.len() as f64;
    let mean_x = pairs.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = pairs.iter().map(|p| p.1).sum::<f64>() / n;
    let mut cov = 0.0;
    let mut var_x = 0.0;
    let mut var_y = 0.0;
    for &(x, y) in pairs {
        cov += (x - mean_x) * (y - mean_y);
        var_x += (x - mean_x).powi(2);
        var_y += (y - mean_y).powi(2);
    }
    if var_x == 0.0 || var_y == 0.0 {
        return None;
    }
    Some(cov / (var_x * var_y).sqrt())
}

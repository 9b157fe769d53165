//! Panel price data: loading, alignment, universe filtering, return labels.
//!
//! The input is a long-format CSV (`date,symbol,open,high,low,close,volume,suspended`).
//! Loading aligns every symbol to one shared calendar built from the union of
//! observed dates; a symbol's missing dates become missing records, which the
//! rest of the pipeline treats exactly like suspended days.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use chrono::NaiveDate;

use crate::error::{Error, Result};

/// Shared daily clock for a panel. Strictly increasing, no duplicates.
#[derive(Debug, Clone, PartialEq)]
pub struct TradingCalendar {
    days: Vec<NaiveDate>,
}

impl TradingCalendar {
    pub fn new(days: Vec<NaiveDate>) -> Result<Self> {
        if days.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "calendar days must be strictly increasing".into(),
            ));
        }
        Ok(Self { days })
    }

    pub fn len(&self) -> usize {
        self.days.len()
    }

    pub fn is_empty(&self) -> bool {
        self.days.is_empty()
    }

    pub fn day(&self, idx: usize) -> NaiveDate {
        self.days[idx]
    }

    pub fn days(&self) -> &[NaiveDate] {
        &self.days
    }

    pub fn index_of(&self, date: NaiveDate) -> Option<usize> {
        self.days.binary_search(&date).ok()
    }

    /// Indices of all calendar days falling in `[start, end]` (inclusive dates).
    pub fn range(&self, start: NaiveDate, end: NaiveDate) -> DayRange {
        let lo = self.days.partition_point(|d| *d < start);
        let hi = self.days.partition_point(|d| *d <= end);
        DayRange::new(lo, hi.max(lo))
    }
}

/// Half-open range of calendar indices `[start, end)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DayRange {
    pub start: usize,
    pub end: usize,
}

impl DayRange {
    pub fn new(start: usize, end: usize) -> Self {
        assert!(start <= end, "day range start must not exceed end");
        Self { start, end }
    }

    pub fn len(&self) -> usize {
        self.end - self.start
    }

    pub fn is_empty(&self) -> bool {
        self.start == self.end
    }

    pub fn contains(&self, day: usize) -> bool {
        day >= self.start && day < self.end
    }

    pub fn iter(&self) -> std::ops::Range<usize> {
        self.start..self.end
    }
}

/// One day of OHLCV for one stock.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StockRecord {
    pub open: f64,
    pub high: f64,
    pub low: f64,
    pub close: f64,
    pub volume: f64,
    pub suspended: bool,
}

/// Calendar-aligned matrix of price records, day-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PricePanel {
    calendar: TradingCalendar,
    stocks: Vec<String>,
    records: Vec<Option<StockRecord>>,
}

impl PricePanel {
    pub fn new(
        calendar: TradingCalendar,
        stocks: Vec<String>,
        records: Vec<Option<StockRecord>>,
    ) -> Result<Self> {
        if records.len() != calendar.len() * stocks.len() {
            return Err(Error::InvalidArgument(format!(
                "record matrix has {} entries, expected {} days x {} stocks",
                records.len(),
                calendar.len(),
                stocks.len()
            )));
        }
        Ok(Self {
            calendar,
            stocks,
            records,
        })
    }

    pub fn calendar(&self) -> &TradingCalendar {
        &self.calendar
    }

    pub fn stocks(&self) -> &[String] {
        &self.stocks
    }

    pub fn n_days(&self) -> usize {
        self.calendar.len()
    }

    pub fn n_stocks(&self) -> usize {
        self.stocks.len()
    }

    pub fn record(&self, day: usize, stock: usize) -> Option<&StockRecord> {
        self.records[day * self.stocks.len() + stock].as_ref()
    }

    /// The record usable for features and labels: present and not suspended.
    pub fn trading_record(&self, day: usize, stock: usize) -> Option<&StockRecord> {
        self.record(day, stock).filter(|r| !r.suspended)
    }

    pub fn close(&self, day: usize, stock: usize) -> Option<f64> {
        self.trading_record(day, stock).map(|r| r.close)
    }

    /// Days on which the stock is missing or flagged suspended.
    pub fn suspended_days(&self, stock: usize) -> usize {
        (0..self.n_days())
            .filter(|&d| self.trading_record(d, stock).is_none())
            .count()
    }

    /// Keep only stocks whose suspended-day fraction does not exceed the bound.
    /// The calendar is left untouched.
    pub fn filter_universe(&self, max_suspension_ratio: f64) -> Result<PricePanel> {
        if !(0.0..=1.0).contains(&max_suspension_ratio) {
            return Err(Error::InvalidArgument(format!(
                "max_suspension_ratio must be in [0, 1], got {max_suspension_ratio}"
            )));
        }
        let n_days = self.n_days() as f64;
        let keep: Vec<usize> = (0..self.n_stocks())
            .filter(|&i| self.suspended_days(i) as f64 / n_days <= max_suspension_ratio)
            .collect();
        let stocks = keep.iter().map(|&i| self.stocks[i].clone()).collect();
        let mut records = Vec::with_capacity(self.n_days() * keep.len());
        for day in 0..self.n_days() {
            for &i in &keep {
                records.push(self.records[day * self.n_stocks() + i]);
            }
        }
        PricePanel::new(self.calendar.clone(), stocks, records)
    }

    /// Truncate the panel to its first `n_days` calendar days.
    pub fn truncate_days(&self, n_days: usize) -> PricePanel {
        let n_days = n_days.min(self.n_days());
        let calendar = TradingCalendar {
            days: self.calendar.days[..n_days].to_vec(),
        };
        let records = self.records[..n_days * self.n_stocks()].to_vec();
        PricePanel {
            calendar,
            stocks: self.stocks.clone(),
            records,
        }
    }

    /// Write the panel back out in the input CSV schema. Missing records are
    /// omitted; the alignment rule recreates them on reload.
    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "date,symbol,open,high,low,close,volume,suspended")?;
        for day in 0..self.n_days() {
            let date = self.calendar.day(day).format("%Y-%m-%d");
            for (i, symbol) in self.stocks.iter().enumerate() {
                if let Some(r) = self.record(day, i) {
                    writeln!(
                        out,
                        "{date},{symbol},{},{},{},{},{},{}",
                        r.open,
                        r.high,
                        r.low,
                        r.close,
                        r.volume,
                        u8::from(r.suspended)
                    )?;
                }
            }
        }
        out.flush()?;
        Ok(())
    }
}

/// Fractional close-to-close returns over a fixed horizon, day-major.
/// `value(t, i)` is the return earned from day `t` to day `t + horizon`,
/// defined only when the stock trades on both ends.
#[derive(Debug, Clone, PartialEq)]
pub struct ReturnMatrix {
    values: Vec<Option<f64>>,
    n_days: usize,
    n_stocks: usize,
    horizon: usize,
}

impl ReturnMatrix {
    /// Build directly from label values (used by synthetic harnesses and
    /// tests; market data goes through [`compute_returns`]).
    pub fn from_values(values: Vec<Option<f64>>, n_days: usize, n_stocks: usize) -> Self {
        assert_eq!(values.len(), n_days * n_stocks);
        Self {
            values,
            n_days,
            n_stocks,
            horizon: 1,
        }
    }

    pub fn value(&self, day: usize, stock: usize) -> Option<f64> {
        self.values[day * self.n_stocks + stock]
    }

    pub fn n_days(&self) -> usize {
        self.n_days
    }

    pub fn n_stocks(&self) -> usize {
        self.n_stocks
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    /// Mean return across all stocks with a defined return on `day`;
    /// 0 when nothing trades.
    pub fn market_mean(&self, day: usize) -> f64 {
        let mut sum = 0.0;
        let mut n = 0usize;
        for stock in 0..self.n_stocks {
            if let Some(r) = self.value(day, stock) {
                sum += r;
                n += 1;
            }
        }
        if n == 0 {
            0.0
        } else {
            sum / n as f64
        }
    }
}

/// Forward returns: `close[t+horizon]/close[t] - 1` wherever both closes exist.
pub fn compute_returns(panel: &PricePanel, horizon: usize) -> Result<ReturnMatrix> {
    if horizon == 0 {
        return Err(Error::InvalidArgument("horizon must be at least 1".into()));
    }
    if horizon >= panel.n_days() {
        return Err(Error::InvalidHorizon {
            horizon,
            days: panel.n_days(),
        });
    }
    let (n_days, n_stocks) = (panel.n_days(), panel.n_stocks());
    let mut values = vec![None; n_days * n_stocks];
    for day in 0..n_days.saturating_sub(horizon) {
        for stock in 0..n_stocks {
            if let (Some(c0), Some(c1)) =
                (panel.close(day, stock), panel.close(day + horizon, stock))
            {
                values[day * n_stocks + stock] = Some(c1 / c0 - 1.0);
            }
        }
    }
    Ok(ReturnMatrix {
        values,
        n_days,
        n_stocks,
        horizon,
    })
}

/// Load and align a panel from the long-format CSV schema.
pub fn load_panel(path: &Path) -> Result<PricePanel> {
    let file = File::open(path)?;
    load_panel_from_reader(file)
}

pub fn load_panel_from_reader<R: Read>(reader: R) -> Result<PricePanel> {
    let mut csv = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(reader);

    let mut rows: BTreeMap<NaiveDate, BTreeMap<String, StockRecord>> = BTreeMap::new();
    let mut symbols: BTreeSet<String> = BTreeSet::new();

    for record in csv.records() {
        let record = record.map_err(|e| Error::MalformedRow {
            line: e.position().map_or(0, |p| p.line()),
            reason: e.to_string(),
        })?;
        let line = record.position().map_or(0, |p| p.line());
        let row = parse_row(&record, line)?;
        symbols.insert(row.symbol.clone());
        let per_day = rows.entry(row.date).or_default();
        if per_day.insert(row.symbol.clone(), row.record).is_some() {
            return Err(Error::DuplicateRecord {
                date: row.date.format("%Y-%m-%d").to_string(),
                symbol: row.symbol,
                line,
            });
        }
    }

    if rows.is_empty() {
        return Err(Error::EmptyInput("price file has no data rows".into()));
    }

    let calendar = TradingCalendar::new(rows.keys().copied().collect())?;
    let stocks: Vec<String> = symbols.into_iter().collect();
    let mut records = Vec::with_capacity(calendar.len() * stocks.len());
    for per_day in rows.values() {
        for symbol in &stocks {
            records.push(per_day.get(symbol).copied());
        }
    }
    PricePanel::new(calendar, stocks, records)
}

struct ParsedRow {
    date: NaiveDate,
    symbol: String,
    record: StockRecord,
}

fn parse_row(record: &csv::StringRecord, line: u64) -> Result<ParsedRow> {
    let malformed = |reason: String| Error::MalformedRow { line, reason };
    if record.len() != 8 {
        return Err(malformed(format!("expected 8 fields, got {}", record.len())));
    }
    let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
        .map_err(|e| malformed(format!("bad date '{}': {e}", &record[0])))?;
    let symbol = record[1].to_string();
    if symbol.is_empty() {
        return Err(malformed("empty symbol".into()));
    }
    let num = |idx: usize, name: &str| -> Result<f64> {
        record[idx]
            .parse::<f64>()
            .map_err(|e| malformed(format!("bad {name} '{}': {e}", &record[idx])))
    };
    let open = num(2, "open")?;
    let high = num(3, "high")?;
    let low = num(4, "low")?;
    let close = num(5, "close")?;
    let volume = num(6, "volume")?;
    let suspended = match &record[7] {
        "0" => false,
        "1" => true,
        other => return Err(malformed(format!("bad suspended flag '{other}'"))),
    };

    if !suspended {
        for (name, v) in [("open", open), ("high", high), ("low", low), ("close", close)] {
            if !v.is_finite() || v <= 0.0 {
                return Err(malformed(format!("{name} must be a positive price, got {v}")));
            }
        }
        if !volume.is_finite() || volume < 0.0 {
            return Err(malformed(format!("volume must be non-negative, got {volume}")));
        }
        if low > open.min(close) || open.max(close) > high {
            return Err(malformed(format!(
                "OHLC ordering violated for {symbol} on {date}: \
                 low={low} open={open} close={close} high={high}"
            )));
        }
    }

    Ok(ParsedRow {
        date,
        symbol,
        record: StockRecord {
            open,
            high,
            low,
            close,
            volume,
            suspended,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn date(s: &str) -> NaiveDate {
        NaiveDate::parse_from_str(s, "%Y-%m-%d").unwrap()
    }

    fn load(csv: &str) -> Result<PricePanel> {
        load_panel_from_reader(csv.as_bytes())
    }

    const HEADER: &str = "date,symbol,open,high,low,close,volume,suspended\n";

    fn row(date: &str, sym: &str, close: f64) -> String {
        format!("{date},{sym},{c},{h},{l},{c},1000,0\n", c = close, h = close * 1.01, l = close * 0.99)
    }

    #[test]
    fn loads_well_formed_panel() {
        let mut s = HEADER.to_string();
        for d in ["2020-01-01", "2020-01-02", "2020-01-03"] {
            s.push_str(&row(d, "AAA", 10.0));
            s.push_str(&row(d, "BBB", 20.0));
        }
        let panel = load(&s).unwrap();
        assert_eq!(panel.n_days(), 3);
        assert_eq!(panel.n_stocks(), 2);
        assert_eq!(panel.stocks(), &["AAA".to_string(), "BBB".to_string()]);
        let present = (0..3)
            .flat_map(|d| (0..2).map(move |i| (d, i)))
            .filter(|&(d, i)| panel.record(d, i).is_some())
            .count();
        assert_eq!(present, 6);
    }

    #[test]
    fn rejects_high_below_low() {
        let mut s = HEADER.to_string();
        s.push_str("2020-01-01,AAA,10,9.5,9.8,10,100,0\n");
        let err = load(&s).unwrap_err();
        match err {
            Error::MalformedRow { line, reason } => {
                assert_eq!(line, 2);
                assert!(reason.contains("OHLC ordering"), "{reason}");
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn missing_day_becomes_missing_record() {
        let mut s = HEADER.to_string();
        s.push_str(&row("2020-01-01", "AAA", 10.0));
        s.push_str(&row("2020-01-02", "AAA", 10.0));
        s.push_str(&row("2020-01-03", "AAA", 10.0));
        s.push_str(&row("2020-01-01", "BBB", 20.0));
        s.push_str(&row("2020-01-03", "BBB", 20.0));
        let panel = load(&s).unwrap();
        assert_eq!(panel.n_days(), 3);
        assert!(panel.record(1, 1).is_none());
        assert!(panel.trading_record(1, 1).is_none());
        assert_eq!(panel.suspended_days(1), 1);
    }

    #[test]
    fn rejects_duplicate_key_and_empty_file() {
        let mut s = HEADER.to_string();
        s.push_str(&row("2020-01-01", "AAA", 10.0));
        s.push_str(&row("2020-01-01", "AAA", 11.0));
        assert!(matches!(load(&s), Err(Error::DuplicateRecord { .. })));
        assert!(matches!(load(HEADER), Err(Error::EmptyInput(_))));
    }

    #[test]
    fn filter_universe_respects_bound() {
        // 100 days; AAA suspended on 11 of them, BBB always trading.
        let mut s = HEADER.to_string();
        let start = date("2020-01-01");
        for d in 0..100 {
            let day = start + chrono::Days::new(d);
            let day = day.format("%Y-%m-%d").to_string();
            if d < 11 {
                s.push_str(&format!("{day},AAA,10,10.1,9.9,10,0,1\n"));
            } else {
                s.push_str(&row(&day, "AAA", 10.0));
            }
            s.push_str(&row(&day, "BBB", 20.0));
        }
        let panel = load(&s).unwrap();
        let filtered = panel.filter_universe(0.10).unwrap();
        assert_eq!(filtered.stocks(), &["BBB".to_string()]);
        assert_eq!(filtered.n_days(), 100);

        // ratio 1.0 keeps everything.
        let all = panel.filter_universe(1.0).unwrap();
        assert_eq!(all.n_stocks(), 2);

        // exactly at the bound: 10/100 == 0.10 is kept.
        let mut s = HEADER.to_string();
        for d in 0..100 {
            let day = (start + chrono::Days::new(d)).format("%Y-%m-%d").to_string();
            if d < 10 {
                s.push_str(&format!("{day},AAA,10,10.1,9.9,10,0,1\n"));
            } else {
                s.push_str(&row(&day, "AAA", 10.0));
            }
        }
        let panel = load(&s).unwrap();
        assert_eq!(panel.filter_universe(0.10).unwrap().n_stocks(), 1);
    }

    #[test]
    fn filter_universe_zero_ratio_drops_single_suspension() {
        let mut s = HEADER.to_string();
        s.push_str(&row("2020-01-01", "AAA", 10.0));
        s.push_str("2020-01-02,AAA,10,10.1,9.9,10,0,1\n");
        s.push_str(&row("2020-01-03", "AAA", 10.0));
        s.push_str(&row("2020-01-01", "BBB", 20.0));
        s.push_str(&row("2020-01-02", "BBB", 20.0));
        s.push_str(&row("2020-01-03", "BBB", 20.0));
        let panel = load(&s).unwrap();
        let filtered = panel.filter_universe(0.0).unwrap();
        assert_eq!(filtered.stocks(), &["BBB".to_string()]);
    }

    #[test]
    fn filter_universe_is_idempotent() {
        let mut s = HEADER.to_string();
        for d in ["2020-01-01", "2020-01-02", "2020-01-03", "2020-01-06"] {
            s.push_str(&row(d, "AAA", 10.0));
        }
        s.push_str(&row("2020-01-01", "BBB", 20.0));
        s.push_str(&row("2020-01-02", "BBB", 20.0));
        let panel = load(&s).unwrap();
        let once = panel.filter_universe(0.25).unwrap();
        let twice = once.filter_universe(0.25).unwrap();
        assert_eq!(once, twice);
    }

    #[test]
    fn returns_match_close_ratio() {
        let mut s = HEADER.to_string();
        s.push_str(&row("2020-01-01", "AAA", 100.0));
        s.push_str(&row("2020-01-02", "AAA", 102.0));
        let panel = load(&s).unwrap();
        let returns = compute_returns(&panel, 1).unwrap();
        let r = returns.value(0, 0).unwrap();
        assert!((r - 0.02).abs() < 1e-15);
        assert!(returns.value(1, 0).is_none());
    }

    #[test]
    fn constant_closes_give_zero_returns() {
        let mut s = HEADER.to_string();
        for d in ["2020-01-01", "2020-01-02", "2020-01-03"] {
            s.push_str(&row(d, "AAA", 50.0));
        }
        let panel = load(&s).unwrap();
        let returns = compute_returns(&panel, 1).unwrap();
        for t in 0..2 {
            assert_eq!(returns.value(t, 0), Some(0.0));
        }
    }

    #[test]
    fn suspension_leaves_return_undefined() {
        let mut s = HEADER.to_string();
        s.push_str(&row("2020-01-01", "AAA", 10.0));
        s.push_str("2020-01-02,AAA,10,10.1,9.9,10,0,1\n");
        s.push_str(&row("2020-01-03", "AAA", 10.0));
        let panel = load(&s).unwrap();
        let returns = compute_returns(&panel, 1).unwrap();
        assert!(returns.value(0, 0).is_none());
        assert!(returns.value(1, 0).is_none());
    }

    #[test]
    fn horizon_must_fit_calendar() {
        let mut s = HEADER.to_string();
        s.push_str(&row("2020-01-01", "AAA", 10.0));
        s.push_str(&row("2020-01-02", "AAA", 10.0));
        let panel = load(&s).unwrap();
        assert!(matches!(
            compute_returns(&panel, 2),
            Err(Error::InvalidHorizon { .. })
        ));
        assert!(compute_returns(&panel, 1).is_ok());
    }

    #[test]
    fn one_day_returns_compound_to_two_day_ratio() {
        let mut s = HEADER.to_string();
        let closes = [100.0, 103.5, 99.25, 101.0, 104.75];
        let start = date("2020-01-01");
        for (d, c) in closes.iter().enumerate() {
            let day = (start + chrono::Days::new(d as u64)).format("%Y-%m-%d").to_string();
            s.push_str(&row(&day, "AAA", *c));
        }
        let panel = load(&s).unwrap();
        let returns = compute_returns(&panel, 1).unwrap();
        for t in 0..3 {
            let r0 = returns.value(t, 0).unwrap();
            let r1 = returns.value(t + 1, 0).unwrap();
            let compounded = (1.0 + r0) * (1.0 + r1);
            let direct = closes[t + 2] / closes[t];
            assert!(((compounded - direct) / direct).abs() < 1e-12);
        }
    }

    #[test]
    fn save_and_reload_is_identity() {
        let mut s = HEADER.to_string();
        s.push_str(&row("2020-01-01", "AAA", 10.123456789));
        s.push_str(&row("2020-01-02", "AAA", 9.87654321));
        s.push_str(&row("2020-01-01", "BBB", 20.0));
        // BBB missing on day 2, plus an explicitly suspended day 3.
        s.push_str(&row("2020-01-03", "AAA", 10.5));
        s.push_str("2020-01-03,BBB,20,20.2,19.8,20,0,1\n");
        let panel = load(&s).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("panel.csv");
        panel.save_csv(&path).unwrap();
        let reloaded = load_panel(&path).unwrap();
        assert_eq!(panel, reloaded);
    }

    #[test]
    fn calendar_range_maps_dates_to_indices() {
        let cal = TradingCalendar::new(vec![
            date("2020-01-01"),
            date("2020-01-02"),
            date("2020-01-06"),
            date("2020-01-07"),
        ])
        .unwrap();
        let r = cal.range(date("2020-01-02"), date("2020-01-06"));
        assert_eq!((r.start, r.end), (1, 3));
        let empty = cal.range(date("2020-01-03"), date("2020-01-05"));
        assert!(empty.is_empty());
    }
}

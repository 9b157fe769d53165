//! CSV artifact readers and writers for the pipeline commands.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;

use paramcast::backtest::BacktestReport;
use paramcast::market_data::PricePanel;
use paramcast::predictions::DailyPredictions;

/// `date,symbol,prediction`, one row per defined prediction.
pub fn write_predictions_csv(
    path: &Path,
    predictions: &DailyPredictions,
    panel: &PricePanel,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "date,symbol,prediction")?;
    for (day, row) in predictions.iter() {
        let date = panel.calendar().day(day).format("%Y-%m-%d");
        for (stock, pred) in row.iter().enumerate() {
            if let Some(p) = pred {
                writeln!(out, "{date},{},{p}", panel.stocks()[stock])?;
            }
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_predictions_csv(path: &Path, panel: &PricePanel) -> Result<DailyPredictions> {
    let mut reader = csv_reader(path)?;
    let headers = reader.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != ["date", "symbol", "prediction"] {
        bail!("{}: expected header date,symbol,prediction", path.display());
    }
    let mut by_day: BTreeMap<usize, Vec<Option<f64>>> = BTreeMap::new();
    for record in reader.records() {
        let record = record?;
        let date = NaiveDate::parse_from_str(&record[0], "%Y-%m-%d")
            .with_context(|| format!("bad date '{}'", &record[0]))?;
        let day = panel
            .calendar()
            .index_of(date)
            .with_context(|| format!("date {date} not in panel calendar"))?;
        let stock = panel
            .stocks()
            .iter()
            .position(|s| s == &record[1])
            .with_context(|| format!("symbol {} not in panel", &record[1]))?;
        let value: f64 = record[2]
            .parse()
            .with_context(|| format!("bad prediction '{}'", &record[2]))?;
        by_day.entry(day).or_insert_with(|| vec![None; panel.n_stocks()])[stock] = Some(value);
    }
    let mut predictions = DailyPredictions::new(panel.n_stocks());
    for (day, row) in by_day {
        predictions.push(day, row)?;
    }
    Ok(predictions)
}

fn csv_reader(path: &Path) -> Result<csv::Reader<File>> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file))
}

/// `metric,value` rows for each requested K.
pub fn write_backtest_report_csv(path: &Path, reports: &[BacktestReport]) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "metric,value")?;
    for report in reports {
        let k = report.k;
        writeln!(out, "days@{k},{}", report.n_days())?;
        writeln!(out, "ar@{k},{}", report.ar)?;
        writeln!(out, "shr@{k},{}", report.shr)?;
        writeln!(out, "shr_skipped_days@{k},{}", report.shr_skipped_days)?;
        writeln!(out, "shr_timeseries@{k},{}", report.shr_timeseries)?;
        writeln!(out, "final_equity@{k},{}", report.final_equity())?;
        writeln!(
            out,
            "baseline_final_equity@{k},{}",
            report.baseline.last().expect("baseline holds day 0")
        )?;
        writeln!(out, "variance_flavor@{k},{}", report.variance_flavor)?;
    }
    out.flush()?;
    Ok(())
}

/// `date,strategy,wealth` long-format curves, one strategy per report plus
/// the shared market baseline.
pub fn write_equity_csv(
    path: &Path,
    reports: &[BacktestReport],
    panel: &PricePanel,
) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    writeln!(out, "date,strategy,wealth")?;
    for report in reports {
        for (i, day) in report.days.iter().enumerate() {
            let date = panel.calendar().day(day.day).format("%Y-%m-%d");
            writeln!(out, "{date},top{},{}", report.k, report.equity[i + 1])?;
        }
    }
    if let Some(first) = reports.first() {
        for (i, day) in first.days.iter().enumerate() {
            let date = panel.calendar().day(day.day).format("%Y-%m-%d");
            writeln!(out, "{date},market,{}", first.baseline[i + 1])?;
        }
    }
    out.flush()?;
    Ok(())
}

//! Pipeline subcommands. Each one reads its declared inputs, writes its
//! declared outputs under the configured directory, and leaves a resolved
//! config snapshot beside them.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use paramcast::backtest::{simulate, BacktestReport};
use paramcast::first_order::{
    param_collect, rotation_predict, static_first_order, write_param_series_csv, RidgeConfig,
};
use paramcast::indicators::{build_features, default_specs, FeatureMatrix};
use paramcast::market_data::{compute_returns, load_panel, DayRange, PricePanel, ReturnMatrix};
use paramcast::predictions::{prediction_mse, DailyPredictions};
use paramcast::second_order::{
    predict_rolling, predict_rolling_retrained, train_with_report, SecondOrderModel, TrainConfig,
};
use paramcast::synthetic::{generate, RegimePattern, RegimeSpec};

use crate::config::RunConfig;
use crate::files;
use crate::svg;

/// Panel, features and labels as every downstream command sees them.
pub struct Inputs {
    pub panel: PricePanel,
    pub features: FeatureMatrix,
    pub returns: ReturnMatrix,
}

pub fn load_inputs(config: &RunConfig) -> Result<Inputs> {
    let panel = load_panel(Path::new(&config.data))
        .with_context(|| format!("loading panel {}", config.data))?;
    let panel = panel.filter_universe(config.max_suspension_ratio)?;
    if panel.n_stocks() == 0 {
        bail!("universe filter removed every stock");
    }
    let features = if config.features_file.is_empty() {
        build_features(&panel, &default_specs(), config.normalize)?
    } else {
        FeatureMatrix::read_csv(Path::new(&config.features_file), &panel)
            .with_context(|| format!("loading features {}", config.features_file))?
    };
    let returns = compute_returns(&panel, config.return_horizon)?;
    Ok(Inputs {
        panel,
        features,
        returns,
    })
}

fn regime_spec(config: &RunConfig) -> Result<RegimeSpec> {
    let pattern = match config.synth_pattern.as_str() {
        "constant" => RegimePattern::Constant,
        "sinusoidal" => RegimePattern::Sinusoidal {
            period: config.synth_period,
            amplitude: config.synth_amplitude,
        },
        "step_switch" => {
            let weight_sets = if config.synth_weight_sets.is_empty() {
                // Default experiment: flip the sign of every weight once
                // per switch day.
                config
                    .synth_switch_days
                    .iter()
                    .enumerate()
                    .map(|(i, _)| {
                        let sign = if i % 2 == 0 { -1.0 } else { 1.0 };
                        config.synth_base_weights.iter().map(|w| sign * w).collect()
                    })
                    .collect()
            } else {
                config.synth_weight_sets.clone()
            };
            RegimePattern::StepSwitch {
                switch_days: config.synth_switch_days.clone(),
                weight_sets,
            }
        }
        "random_walk" => RegimePattern::RandomWalk {
            step_std: config.synth_step_std,
        },
        other => bail!("synth_pattern: unknown pattern '{other}'"),
    };
    Ok(RegimeSpec {
        pattern,
        base_weights: config.synth_base_weights.clone(),
        base_bias: config.synth_base_bias,
        noise_std: config.synth_noise,
        n_stocks: config.synth_stocks,
        n_days: config.synth_days,
        seed: config.seed,
    })
}

/// Generate a synthetic market and write it in the panel schema, with the
/// generating parameters and the exact linear-model features alongside.
pub fn synth(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let market = generate(&regime_spec(config)?)?;
    market.panel.save_csv(&out_dir.join("market.csv"))?;
    market.write_truth_csv(&out_dir.join("truth.csv"))?;
    market
        .features
        .write_csv(&out_dir.join("features.csv"), &market.panel, &market.returns)?;
    println!(
        "synth: wrote {} days x {} stocks ({} regime) to {}",
        market.panel.n_days(),
        market.panel.n_stocks(),
        config.synth_pattern,
        out_dir.display()
    );
    Ok(())
}

pub fn features(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let inputs = load_inputs(config)?;
    inputs
        .features
        .write_csv(&out_dir.join("features.csv"), &inputs.panel, &inputs.returns)?;
    println!(
        "features: {} columns x {} days x {} stocks -> {}",
        inputs.features.feature_dim(),
        inputs.panel.n_days(),
        inputs.panel.n_stocks(),
        out_dir.join("features.csv").display()
    );
    Ok(())
}

pub fn collect(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let inputs = load_inputs(config)?;
    let series = param_collect(&inputs.features, &inputs.returns, &config.scales, &config.ridge()?)?;
    write_param_series_csv(&series, inputs.panel.calendar(), &out_dir.join("params.csv"))?;
    let entries: usize = series.values().map(|s| s.entries.len()).sum();
    println!(
        "collect: {entries} parameter fits across scales {:?} -> {}",
        config.scales,
        out_dir.join("params.csv").display()
    );
    Ok(())
}

pub fn train(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let inputs = load_inputs(config)?;
    let (train_range, _) = config.resolve_ranges(inputs.panel.calendar())?;
    let (model, report) = train_with_report(
        &inputs.features,
        &inputs.returns,
        train_range,
        &config.scales,
        config.steps,
        &config.trainer()?,
        &config.ridge()?,
    )?;
    model.save(&out_dir.join("model.txt"))?;
    let mut metrics = BufWriter::new(File::create(out_dir.join("train_metrics.csv"))?);
    writeln!(metrics, "metric,value")?;
    writeln!(metrics, "hidden,{}", report.hidden)?;
    writeln!(metrics, "best_val_loss,{}", report.best_val_loss)?;
    writeln!(metrics, "final_train_loss,{}", report.final_train_loss)?;
    writeln!(metrics, "episodes_run,{}", report.episodes_run)?;
    writeln!(metrics, "n_train_samples,{}", report.n_train_samples)?;
    writeln!(metrics, "n_val_samples,{}", report.n_val_samples)?;
    metrics.flush()?;
    println!(
        "train: hidden {} val_loss {:.6e} ({} episodes, {}+{} samples) -> {}",
        report.hidden,
        report.best_val_loss,
        report.episodes_run,
        report.n_train_samples,
        report.n_val_samples,
        out_dir.join("model.txt").display()
    );
    let alphas: Vec<String> = model
        .alpha
        .iter()
        .map(|(s, a)| format!("{s}-day {a:.4}"))
        .collect();
    println!("train: learned scale weights: {}", alphas.join(", "));
    Ok(())
}

pub fn predict(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let inputs = load_inputs(config)?;
    let (train_range, test_range) = config.resolve_ranges(inputs.panel.calendar())?;
    let predictions = if config.retrain_daily {
        predict_rolling_retrained(
            &inputs.features,
            &inputs.returns,
            train_range.start,
            test_range,
            &config.scales,
            config.steps,
            &config.trainer()?,
            &config.ridge()?,
        )?
    } else {
        let model = SecondOrderModel::load(&out_dir.join("model.txt"))
            .context("loading model.txt (run `train` first)")?;
        predict_rolling(
            &model,
            &inputs.features,
            &inputs.returns,
            test_range,
            &config.ridge()?,
        )?
    };
    files::write_predictions_csv(&out_dir.join("predictions.csv"), &predictions, &inputs.panel)?;
    let mse = prediction_mse(&predictions, &inputs.returns);
    println!(
        "predict: {} days -> {} (test mse {})",
        predictions.len(),
        out_dir.join("predictions.csv").display(),
        mse.map_or("n/a".into(), |m| format!("{m:.6e}"))
    );
    Ok(())
}

pub fn backtest(config: &RunConfig, out_dir: &Path, emit_svg: bool) -> Result<()> {
    let inputs = load_inputs(config)?;
    let predictions =
        files::read_predictions_csv(&out_dir.join("predictions.csv"), &inputs.panel)
            .context("loading predictions.csv (run `predict` first)")?;
    let mut reports = Vec::new();
    for &k in &config.top_k {
        reports.push(simulate(
            &predictions,
            inputs.panel.stocks(),
            &inputs.returns,
            k,
        )?);
    }
    files::write_backtest_report_csv(&out_dir.join("report.csv"), &reports)?;
    files::write_equity_csv(&out_dir.join("equity.csv"), &reports, &inputs.panel)?;
    if emit_svg {
        let mut curves: Vec<(String, Vec<f64>)> = reports
            .iter()
            .map(|r| (format!("top{}", r.k), r.equity.clone()))
            .collect();
        if let Some(first) = reports.first() {
            curves.push(("market".into(), first.baseline.clone()));
        }
        svg::write_line_chart(&out_dir.join("equity.svg"), "cumulative wealth", &curves)?;
    }
    for report in &reports {
        println!(
            "backtest: k={} days={} ar={:.4} shr={:.4} final_equity={:.4}",
            report.k,
            report.n_days(),
            report.ar,
            report.shr,
            report.final_equity()
        );
    }
    Ok(())
}

/// Rotation-learning predictions over a whole range.
pub fn rotation_over_range(
    features: &FeatureMatrix,
    returns: &ReturnMatrix,
    window: usize,
    range: DayRange,
    ridge: &RidgeConfig,
) -> Result<DailyPredictions> {
    let mut predictions = DailyPredictions::new(features.n_stocks());
    for day in range.iter() {
        let row = rotation_predict(features, returns, window, day, ridge)?;
        predictions.push(day, row)?;
    }
    Ok(predictions)
}

struct MethodResult {
    name: String,
    mse: Option<f64>,
    reports: Vec<BacktestReport>,
}

/// Side-by-side evaluation of the static, rotation, single-scale and
/// multi-scale methods on the test range.
pub fn report(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let inputs = load_inputs(config)?;
    let (train_range, test_range) = config.resolve_ranges(inputs.panel.calendar())?;
    let ridge = config.ridge()?;
    let trainer = config.trainer()?;

    let mut methods: Vec<(String, DailyPredictions)> = Vec::new();
    methods.push((
        "lin".into(),
        static_first_order(&inputs.features, &inputs.returns, train_range, test_range, &ridge)?,
    ));
    for &w in &config.rot_windows {
        methods.push((
            format!("rot-{w}"),
            rotation_over_range(&inputs.features, &inputs.returns, w, test_range, &ridge)?,
        ));
    }
    for &s in &config.scales {
        let preds = train_and_walk(
            &inputs,
            train_range,
            test_range,
            &[s],
            config.steps,
            &trainer,
            &ridge,
        )?;
        methods.push((format!("sec-{s}"), preds));
    }
    let preds = train_and_walk(
        &inputs,
        train_range,
        test_range,
        &config.scales,
        config.steps,
        &trainer,
        &ridge,
    )?;
    methods.push(("multi-sec".into(), preds));

    let mut results = Vec::new();
    for (name, predictions) in &methods {
        let mut reports = Vec::new();
        for &k in &config.top_k {
            reports.push(simulate(
                predictions,
                inputs.panel.stocks(),
                &inputs.returns,
                k,
            )?);
        }
        results.push(MethodResult {
            name: name.clone(),
            mse: prediction_mse(predictions, &inputs.returns),
            reports,
        });
    }
    write_comparison(&results, &config.top_k, &out_dir.join("comparison.csv"))?;
    print_comparison(&results, &config.top_k);
    Ok(())
}

fn train_and_walk(
    inputs: &Inputs,
    train_range: DayRange,
    test_range: DayRange,
    scales: &[usize],
    steps: usize,
    trainer: &TrainConfig,
    ridge: &RidgeConfig,
) -> Result<DailyPredictions> {
    let model = paramcast::second_order::train(
        &inputs.features,
        &inputs.returns,
        train_range,
        scales,
        steps,
        trainer,
        ridge,
    )?;
    Ok(predict_rolling(
        &model,
        &inputs.features,
        &inputs.returns,
        test_range,
        ridge,
    )?)
}

fn write_comparison(results: &[MethodResult], top_k: &[usize], path: &Path) -> Result<()> {
    let mut out = BufWriter::new(File::create(path)?);
    write!(out, "method,mse")?;
    for k in top_k {
        write!(out, ",ar@{k}")?;
    }
    for k in top_k {
        write!(out, ",shr@{k}")?;
    }
    writeln!(out)?;
    for r in results {
        match r.mse {
            Some(m) => write!(out, "{},{m}", r.name)?,
            None => write!(out, "{},", r.name)?,
        }
        for report in &r.reports {
            write!(out, ",{}", report.ar)?;
        }
        for report in &r.reports {
            write!(out, ",{}", report.shr)?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}

fn print_comparison(results: &[MethodResult], top_k: &[usize]) {
    print!("{:<10} {:>12}", "method", "mse");
    for k in top_k {
        print!(" {:>9}", format!("ar@{k}"));
    }
    for k in top_k {
        print!(" {:>9}", format!("shr@{k}"));
    }
    println!();
    for r in results {
        print!(
            "{:<10} {:>12}",
            r.name,
            r.mse.map_or("n/a".into(), |m| format!("{m:.4e}"))
        );
        for report in &r.reports {
            print!(" {:>9.4}", report.ar);
        }
        for report in &r.reports {
            print!(" {:>9.4}", report.shr);
        }
        println!();
    }
}

/// Exhaustive search over the configured hyperparameter grids, scored by
/// validation MSE.
pub fn grid(config: &RunConfig, out_dir: &Path) -> Result<()> {
    let inputs = load_inputs(config)?;
    let (train_range, _) = config.resolve_ranges(inputs.panel.calendar())?;
    let mut out = BufWriter::new(File::create(out_dir.join("grid.csv"))?);
    writeln!(out, "steps,hidden,forget_bias,lambda,val_mse")?;
    let mut best: Option<(f64, String)> = None;
    for &steps in &config.grid_steps {
        for &hidden in &config.grid_hidden {
            for &forget_bias in &config.grid_forget_bias {
                for &lambda in &config.grid_lambda {
                    let mut trainer = config.trainer()?;
                    trainer.hidden_sizes = vec![hidden];
                    trainer.forget_bias = forget_bias;
                    let mut ridge = config.ridge()?;
                    ridge.l2_weight = lambda;
                    let (_, report) = train_with_report(
                        &inputs.features,
                        &inputs.returns,
                        train_range,
                        &config.scales,
                        steps,
                        &trainer,
                        &ridge,
                    )?;
                    writeln!(
                        out,
                        "{steps},{hidden},{forget_bias},{lambda},{}",
                        report.best_val_loss
                    )?;
                    let label =
                        format!("steps={steps} hidden={hidden} forget_bias={forget_bias} lambda={lambda}");
                    if best.as_ref().is_none_or(|(b, _)| report.best_val_loss < *b) {
                        best = Some((report.best_val_loss, label));
                    }
                }
            }
        }
    }
    out.flush()?;
    if let Some((loss, label)) = best {
        println!("grid: best val mse {loss:.6e} at {label}");
    }
    Ok(())
}

/// Dispatch a validated command.
pub fn run(config: &RunConfig, command: &crate::Command) -> Result<()> {
    config.validate()?;
    let out_dir: PathBuf = config.out_dir();
    std::fs::create_dir_all(&out_dir)?;
    config.write_snapshot(&out_dir)?;
    match command {
        crate::Command::Synth => synth(config, &out_dir),
        crate::Command::Features => features(config, &out_dir),
        crate::Command::Collect => collect(config, &out_dir),
        crate::Command::Train => train(config, &out_dir),
        crate::Command::Predict => predict(config, &out_dir),
        crate::Command::Backtest { svg } => backtest(config, &out_dir, *svg),
        crate::Command::Report => report(config, &out_dir),
        crate::Command::Grid => grid(config, &out_dir),
    }
}

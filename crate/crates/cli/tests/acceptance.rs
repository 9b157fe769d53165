//! Acceptance suite: one test per criterion, each printing a PASS line
//! with its key numbers. Run with
//!
//! ```text
//! cargo test -p paramcast-cli --test acceptance -- --nocapture
//! ```

use std::time::Instant;

use paramcast::backtest::simulate;
use paramcast::first_order::{
    fit_ridge, rotation_predict, static_first_order, RidgeConfig, RidgeSolver, SampleSet,
};
use paramcast::indicators::{compute_indicator, windowed_ic, IndicatorKind, IndicatorSpec};
use paramcast::market_data::{
    compute_returns, DayRange, PricePanel, ReturnMatrix, StockRecord, TradingCalendar,
};
use paramcast::predictions::DailyPredictions;
use paramcast::second_order::{
    gradients, predict_rolling, train, HeadMode, ParamWindow, SecondOrderModel, TrainConfig,
};
use paramcast::synthetic::{generate, RegimePattern, RegimeSpec, SyntheticMarket};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn ridge() -> RidgeConfig {
    RidgeConfig::closed_form(1e-3)
}

fn rotation_over(
    market: &SyntheticMarket,
    window: usize,
    range: DayRange,
) -> DailyPredictions {
    let mut preds = DailyPredictions::new(market.panel.n_stocks());
    for day in range.iter() {
        let row =
            rotation_predict(&market.features, &market.returns, window, day, &ridge()).unwrap();
        preds.push(day, row).unwrap();
    }
    preds
}

#[test]
fn criterion_1_gradient_oracle() {
    let started = Instant::now();
    let (hidden, steps, feature_dim) = (5usize, 3usize, 6usize);
    let scales = [1usize, 5];
    let fd_step = 1e-5;
    let mut worst_rel = 0.0f64;
    for model_idx in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + model_idx);
        let mut model = SecondOrderModel::init(
            feature_dim,
            hidden,
            steps,
            &scales,
            0.5,
            HeadMode::Learned,
            model_idx,
        )
        .unwrap();
        // Generic weights well away from the near-linear init regime.
        let flat: Vec<f64> = model
            .flatten_params()
            .iter()
            .map(|_| rng.random_range(-0.5..0.5))
            .collect();
        model.assign_params(&flat).unwrap();

        let window: ParamWindow = scales
            .iter()
            .map(|&s| {
                (
                    s,
                    (0..steps)
                        .map(|_| {
                            ndarray::Array1::from_iter(
                                (0..feature_dim + 1).map(|_| rng.random_range(-1.0..1.0)),
                            )
                        })
                        .collect(),
                )
            })
            .collect();
        let x: Vec<f64> = (0..feature_dim).map(|_| rng.random_range(-1.0..1.0)).collect();
        let y: f64 = rng.random_range(-0.1..0.1);

        let (_, grads) = gradients(&model, &window, &x, y).unwrap();
        let analytic = grads.flatten(&model);
        let base = model.flatten_params();
        let mut probe = model.clone();
        for idx in 0..base.len() {
            let mut flat = base.clone();
            flat[idx] = base[idx] + fd_step;
            probe.assign_params(&flat).unwrap();
            let (_, plus) = probe.forward(&window, &x).unwrap();
            flat[idx] = base[idx] - fd_step;
            probe.assign_params(&flat).unwrap();
            let (_, minus) = probe.forward(&window, &x).unwrap();
            let fd = ((plus - y).powi(2) - (minus - y).powi(2)) / (2.0 * fd_step);
            let rel = (analytic[idx] - fd).abs() / analytic[idx].abs().max(fd.abs()).max(1e-6);
            assert!(
                rel < 1e-4,
                "model {model_idx} param {idx}: analytic {} vs fd {fd} (rel {rel})",
                analytic[idx]
            );
            worst_rel = worst_rel.max(rel);
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 60, "took {elapsed:?}, budget 1 minute");
    println!(
        "criterion 1 (gradient oracle): PASS - 20 models, worst rel err {worst_rel:.2e}, {:.1}s",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_2_ridge_solver_equivalence() {
    let started = Instant::now();
    let (n, d) = (50usize, 10usize);
    let mut worst = 0.0f64;
    for problem in 0..50u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(2000 + problem);
        let mut samples = SampleSet::new(d);
        for _ in 0..n {
            let x: Vec<f64> = (0..d)
                .map(|_| {
                    let u1: f64 = rng.random::<f64>().max(1e-12);
                    let u2: f64 = rng.random();
                    let r: f64 = -2.0 * u1.ln();
                    r.sqrt() * (std::f64::consts::TAU * u2).cos()
                })
                .collect();
            let y = 0.5 * x[0] - 0.2 * x[3] + 0.1 * rng.random::<f64>();
            samples.push(&x, y);
        }
        for l2 in [0.0, 0.01] {
            let closed = fit_ridge(&samples, &RidgeConfig::closed_form(l2)).unwrap();
            let gd_cfg = RidgeConfig {
                l2_weight: l2,
                solver: RidgeSolver::GradientDescent,
                learning_rate: 0.1,
                episodes: 200_000,
                tolerance: 1e-13,
            };
            let gd = fit_ridge(&samples, &gd_cfg).unwrap();
            for j in 0..d {
                let diff = (closed.w[j] - gd.w[j]).abs();
                assert!(diff <= 1e-6, "problem {problem} l2 {l2} w[{j}]: {diff}");
                worst = worst.max(diff);
            }
            let diff = (closed.b - gd.b).abs();
            assert!(diff <= 1e-6, "problem {problem} l2 {l2} bias: {diff}");
            worst = worst.max(diff);
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 10, "took {elapsed:?}, budget 10 seconds");
    println!(
        "criterion 2 (ridge solver equivalence): PASS - 50 problems x 2 lambdas, worst coef diff {worst:.2e}, {:.1}s",
        elapsed.as_secs_f64()
    );
}

fn sinusoidal_market(seed: u64) -> SyntheticMarket {
    // Linear signal-to-noise ~ 1: signal variance d * amp^2 / 2 equals the
    // noise variance.
    let d = 4usize;
    let amplitude = 0.1f64;
    let signal_var = d as f64 * amplitude * amplitude / 2.0;
    generate(&RegimeSpec {
        pattern: RegimePattern::Sinusoidal {
            period: 40,
            amplitude,
        },
        base_weights: vec![0.0; d],
        base_bias: 0.0,
        noise_std: signal_var.sqrt(),
        n_stocks: 20,
        n_days: 600,
        seed,
    })
    .unwrap()
}

#[test]
fn criterion_3_second_order_advantage() {
    let started = Instant::now();
    let train_range = DayRange::new(0, 450);
    let test_range = DayRange::new(450, 599);
    let mut mse_wins = 0u32;
    let mut ar_wins = 0u32;
    for seed in [1u64, 2, 3, 4, 5] {
        let market = sinusoidal_market(seed);
        let mut baselines = vec![static_first_order(
            &market.features,
            &market.returns,
            train_range,
            test_range,
            &ridge(),
        )
        .unwrap()];
        for w in [5usize, 20, 60] {
            baselines.push(rotation_over(&market, w, test_range));
        }
        let mut best_mse = f64::INFINITY;
        let mut best_ar = f64::NEG_INFINITY;
        for preds in &baselines {
            best_mse = best_mse.min(market.oracle_mse(preds).unwrap().mse);
            best_ar = best_ar.max(
                simulate(preds, market.panel.stocks(), &market.returns, 5)
                    .unwrap()
                    .ar,
            );
        }

        let cfg = TrainConfig {
            episodes: 400,
            learning_rate: 0.3,
            hidden_sizes: vec![16],
            forget_bias: 1.0,
            grad_clip: 5.0,
            tolerance: 1e-12,
            val_fraction: 0.1,
            seed,
            head_mode: HeadMode::Learned,
        };
        let model = train(
            &market.features,
            &market.returns,
            train_range,
            &[1, 5, 10, 20],
            8,
            &cfg,
            &ridge(),
        )
        .unwrap();
        let preds = predict_rolling(
            &model,
            &market.features,
            &market.returns,
            test_range,
            &ridge(),
        )
        .unwrap();
        let mse = market.oracle_mse(&preds).unwrap().mse;
        let ar = simulate(&preds, market.panel.stocks(), &market.returns, 5)
            .unwrap()
            .ar;
        if mse <= 0.9 * best_mse {
            mse_wins += 1;
        }
        if ar > best_ar {
            ar_wins += 1;
        }
        println!(
            "  seed {seed}: mse {mse:.5} (bar {:.5}), top-5 ar {ar:.2} (bar {best_ar:.2})",
            0.9 * best_mse
        );
    }
    let elapsed = started.elapsed();
    assert!(
        mse_wins >= 4,
        "mse beat 0.9x best baseline in only {mse_wins}/5 seeds"
    );
    assert!(ar_wins >= 4, "ar beat every baseline in only {ar_wins}/5 seeds");
    assert!(elapsed.as_secs() < 600, "took {elapsed:?}, budget 10 minutes");
    println!(
        "criterion 3 (second-order advantage): PASS - mse wins {mse_wins}/5, ar wins {ar_wins}/5, {:.0}s",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_4_degeneration_to_rotation() {
    let started = Instant::now();
    let train_range = DayRange::new(0, 300);
    let test_range = DayRange::new(300, 399);
    let mut worst_ratio_dev = 0.0f64;
    for seed in [1u64, 2, 3, 4, 5] {
        let market = generate(&RegimeSpec {
            pattern: RegimePattern::Constant,
            base_weights: vec![0.05, -0.03, 0.04, -0.02],
            base_bias: 0.0005,
            noise_std: 0.01,
            n_stocks: 20,
            n_days: 400,
            seed,
        })
        .unwrap();
        let best_rot = [5usize, 20, 60]
            .iter()
            .map(|&w| {
                market
                    .oracle_mse(&rotation_over(&market, w, test_range))
                    .unwrap()
                    .mse
            })
            .fold(f64::INFINITY, f64::min);

        let cfg = TrainConfig {
            episodes: 300,
            learning_rate: 0.3,
            hidden_sizes: vec![8],
            forget_bias: 1.0,
            grad_clip: 5.0,
            tolerance: 1e-12,
            val_fraction: 0.1,
            seed,
            head_mode: HeadMode::Learned,
        };
        let model = train(
            &market.features,
            &market.returns,
            train_range,
            &[1, 5, 10, 20],
            5,
            &cfg,
            &ridge(),
        )
        .unwrap();
        let preds = predict_rolling(
            &model,
            &market.features,
            &market.returns,
            test_range,
            &ridge(),
        )
        .unwrap();
        let mse = market.oracle_mse(&preds).unwrap().mse;
        let ratio = mse / best_rot;
        println!("  seed {seed}: model {mse:.4e} vs best rotation {best_rot:.4e} (ratio {ratio:.3})");
        assert!(
            (0.9..=1.1).contains(&ratio),
            "seed {seed}: ratio {ratio} outside [0.9, 1.1]"
        );
        worst_ratio_dev = worst_ratio_dev.max((ratio - 1.0).abs());
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 300, "took {elapsed:?}, budget 5 minutes");
    println!(
        "criterion 4 (degeneration to rotation): PASS - worst |ratio-1| {worst_ratio_dev:.3}, {:.0}s",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_5_metric_oracles() {
    let started = Instant::now();
    let (n_days, n_stocks) = (30usize, 10usize);
    for case in 0..20u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(5000 + case);
        let k = [1usize, 3, 5, 10, 12][case as usize % 5];
        let ids: Vec<String> = (0..n_stocks).map(|i| format!("S{i:02}")).collect();

        let mut ret_values = Vec::with_capacity(n_days * n_stocks);
        for _ in 0..n_days * n_stocks {
            ret_values.push(if rng.random::<f64>() < 0.9 {
                Some(rng.random_range(-0.05..0.05))
            } else {
                None
            });
        }
        let returns = ReturnMatrix::from_values(ret_values.clone(), n_days, n_stocks);

        let mut predictions = DailyPredictions::new(n_stocks);
        let mut pred_rows: Vec<Vec<Option<f64>>> = Vec::new();
        for day in 0..n_days {
            let mut row: Vec<Option<f64>> = (0..n_stocks)
                .map(|_| {
                    (rng.random::<f64>() < 0.85).then(|| rng.random_range(-1.0..1.0))
                })
                .collect();
            if row.iter().all(Option::is_none) {
                row[0] = Some(0.0);
            }
            pred_rows.push(row.clone());
            predictions.push(day, row).unwrap();
        }

        let report = simulate(&predictions, &ids, &returns, k).unwrap();

        // Brute-force scalar re-computation, straight from the formulas.
        let mut equity = vec![1.0f64];
        let mut baseline = vec![1.0f64];
        let mut ar_sum = 0.0f64;
        let mut shr_sum = 0.0f64;
        let mut skipped = 0usize;
        for day in 0..n_days {
            let mut scored: Vec<(usize, f64)> = Vec::new();
            for stock in 0..n_stocks {
                if let Some(p) = pred_rows[day][stock] {
                    scored.push((stock, p));
                }
            }
            scored.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .unwrap()
                    .then_with(|| ids[a.0].cmp(&ids[b.0]))
            });
            let selected: Vec<usize> =
                scored.iter().take(k).map(|&(stock, _)| stock).collect();
            let rets: Vec<f64> = selected
                .iter()
                .map(|&stock| ret_values[day * n_stocks + stock].unwrap_or(0.0))
                .collect();
            let port = rets.iter().sum::<f64>() / rets.len() as f64;
            equity.push(equity.last().unwrap() * (1.0 + port));
            ar_sum += rets.iter().sum::<f64>();

            let mut market_sum = 0.0;
            let mut market_n = 0usize;
            for stock in 0..n_stocks {
                if let Some(r) = ret_values[day * n_stocks + stock] {
                    market_sum += r;
                    market_n += 1;
                }
            }
            let market = if market_n == 0 {
                0.0
            } else {
                market_sum / market_n as f64
            };
            baseline.push(baseline.last().unwrap() * (1.0 + market));

            let n = rets.len() as f64;
            let mean = rets.iter().sum::<f64>() / n;
            let var = rets.iter().map(|r| (r - mean) * (r - mean)).sum::<f64>() / n;
            if var == 0.0 {
                skipped += 1;
            } else {
                let excess: f64 = rets.iter().map(|r| r - market).sum::<f64>() / k as f64;
                shr_sum += excess / var.sqrt();
            }
        }
        let ar = ar_sum / k as f64 * 365.0 / n_days as f64;
        let shr = shr_sum / n_days as f64;

        assert!((report.ar - ar).abs() <= 1e-12, "case {case}: ar");
        assert!((report.shr - shr).abs() <= 1e-12, "case {case}: shr");
        assert_eq!(report.shr_skipped_days, skipped, "case {case}: skipped");
        for (a, b) in report.equity.iter().zip(&equity) {
            assert!((a - b).abs() <= 1e-12, "case {case}: equity");
        }
        for (a, b) in report.baseline.iter().zip(&baseline) {
            assert!((a - b).abs() <= 1e-12, "case {case}: baseline");
        }
    }
    let elapsed = started.elapsed();
    assert!(elapsed.as_secs() < 5, "took {elapsed:?}, budget 5 seconds");
    println!(
        "criterion 5 (metric oracles): PASS - 20 cases to 1e-12, {:.2}s",
        elapsed.as_secs_f64()
    );
}

fn random_panel(seed: u64, n_days: usize, n_stocks: usize) -> PricePanel {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let start = chrono::NaiveDate::from_ymd_opt(2021, 3, 1).unwrap();
    let calendar = TradingCalendar::new(
        (0..n_days)
            .map(|d| start + chrono::Days::new(d as u64))
            .collect(),
    )
    .unwrap();
    let mut records = Vec::new();
    let mut prices: Vec<f64> = (0..n_stocks)
        .map(|_| 50.0 + 100.0 * rng.random::<f64>())
        .collect();
    for _ in 0..n_days {
        for price in prices.iter_mut() {
            let open = *price;
            *price *= 1.0 + rng.random_range(-0.03..0.03);
            let close = *price;
            records.push(Some(StockRecord {
                open,
                high: open.max(close) * (1.0 + rng.random::<f64>() * 0.002),
                low: open.min(close) * (1.0 - rng.random::<f64>() * 0.002),
                close,
                volume: (1e5_f64 + 1e5 * rng.random::<f64>()).round(),
                suspended: false,
            }));
        }
    }
    let ids = (0..n_stocks).map(|i| format!("R{i:02}")).collect();
    PricePanel::new(calendar, ids, records).unwrap()
}

#[test]
fn criterion_6_indicator_oracle() {
    let started = Instant::now();
    let panel = random_panel(6006, 30, 3);
    let n_days = panel.n_days();
    let close = |d: usize, s: usize| panel.record(d, s).unwrap().close;
    let rel_eq = |a: f64, b: f64, what: &str| {
        let denom = a.abs().max(b.abs()).max(1.0);
        assert!((a - b).abs() / denom <= 1e-12, "{what}: {a} vs {b}");
    };

    for stock in 0..panel.n_stocks() {
        for day in 0..n_days {
            let rec = panel.record(day, stock).unwrap();
            // Candlesticks, straight from their formulas.
            let klen = compute_indicator(
                IndicatorSpec::price(IndicatorKind::Klen).unwrap(),
                &panel,
            )
            .unwrap();
            rel_eq(
                klen.value(day, stock).unwrap(),
                (rec.close - rec.open) / rec.open,
                "KLEN",
            );
            let kup = compute_indicator(IndicatorSpec::price(IndicatorKind::Kup).unwrap(), &panel)
                .unwrap();
            rel_eq(
                kup.value(day, stock).unwrap(),
                (rec.high - rec.open.max(rec.close)) / rec.open,
                "KUP",
            );
            let klow =
                compute_indicator(IndicatorSpec::price(IndicatorKind::Klow).unwrap(), &panel)
                    .unwrap();
            rel_eq(
                klow.value(day, stock).unwrap(),
                (rec.open.min(rec.close) - rec.low) / rec.open,
                "KLOW",
            );
        }

        for m in [1usize, 5, 10] {
            let ma =
                compute_indicator(IndicatorSpec::windowed(IndicatorKind::Ma, m).unwrap(), &panel)
                    .unwrap();
            let bias =
                compute_indicator(IndicatorSpec::windowed(IndicatorKind::Bias, m).unwrap(), &panel)
                    .unwrap();
            let roc =
                compute_indicator(IndicatorSpec::windowed(IndicatorKind::Roc, m).unwrap(), &panel)
                    .unwrap();
            let ema =
                compute_indicator(IndicatorSpec::windowed(IndicatorKind::Ema, m).unwrap(), &panel)
                    .unwrap();
            let mut ema_state: Option<f64> = None;
            for day in 0..n_days {
                if day + 1 >= m {
                    let mean = (0..m).map(|j| close(day - j, stock)).sum::<f64>() / m as f64;
                    rel_eq(ma.value(day, stock).unwrap(), mean, "MA");
                    rel_eq(bias.value(day, stock).unwrap(), close(day, stock) - mean, "BIAS");
                } else {
                    assert_eq!(ma.value(day, stock), None);
                    assert_eq!(bias.value(day, stock), None);
                }
                if day >= m {
                    let expected = (close(day, stock) - close(day - m, stock))
                        / close(day - m, stock);
                    rel_eq(roc.value(day, stock).unwrap(), expected, "ROC");
                } else {
                    assert_eq!(roc.value(day, stock), None);
                }
                // EMA recursion seeded with the first close.
                let expected = match ema_state {
                    None => close(day, stock),
                    Some(prev) => {
                        (close(day, stock) - prev) * (2.0 / (m as f64 + 1.0)) + prev
                    }
                };
                ema_state = Some(expected);
                rel_eq(ema.value(day, stock).unwrap(), expected, "EMA");
                if m == 1 {
                    // Exact collapse to the close series.
                    assert_eq!(ema.value(day, stock), Some(close(day, stock)));
                }
            }
        }
    }
    let elapsed = started.elapsed();
    println!(
        "criterion 6 (indicator oracle): PASS - all formulas to 1e-12 incl. EMA m=1 collapse, {:.2}s",
        elapsed.as_secs_f64()
    );
}

#[test]
fn criterion_7_determinism() {
    use paramcast_cli::commands;
    use paramcast_cli::config::RunConfig;
    use paramcast_cli::Command;

    let started = Instant::now();
    let root = tempfile::tempdir().unwrap();
    let run = |name: &str| {
        let out = root.path().join(name);
        let out_str = out.display().to_string();
        let config = RunConfig {
            data: format!("{out_str}/market.csv"),
            features_file: format!("{out_str}/features.csv"),
            out: out_str,
            seed: 99,
            scales: vec![1, 5],
            steps: 3,
            hidden: 6,
            model_episodes: 40,
            model_lr: 0.2,
            rot_windows: vec![5, 10],
            top_k: vec![3, 5],
            synth_pattern: "constant".into(),
            synth_days: 140,
            synth_stocks: 8,
            synth_base_weights: vec![0.05, -0.03],
            synth_base_bias: 0.001,
            synth_noise: 0.01,
            ..RunConfig::default()
        };
        commands::run(&config, &Command::Synth).unwrap();
        commands::run(&config, &Command::Collect).unwrap();
        commands::run(&config, &Command::Train).unwrap();
        commands::run(&config, &Command::Predict).unwrap();
        commands::run(&config, &Command::Backtest { svg: false }).unwrap();
        commands::run(&config, &Command::Report).unwrap();
        out
    };
    let a = run("a");
    let b = run("b");
    for file in [
        "market.csv",
        "truth.csv",
        "features.csv",
        "params.csv",
        "model.txt",
        "train_metrics.csv",
        "predictions.csv",
        "report.csv",
        "equity.csv",
        "comparison.csv",
    ] {
        let bytes_a = std::fs::read(a.join(file)).unwrap();
        let bytes_b = std::fs::read(b.join(file)).unwrap();
        assert_eq!(bytes_a, bytes_b, "{file} differs between identical runs");
    }
    println!(
        "criterion 7 (determinism): PASS - 10 artifacts byte-identical across runs, {:.1}s",
        started.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_8_causality() {
    let started = Instant::now();
    let market = generate(&RegimeSpec {
        pattern: RegimePattern::Sinusoidal {
            period: 30,
            amplitude: 0.08,
        },
        base_weights: vec![0.02, -0.01, 0.03],
        base_bias: 0.0,
        noise_std: 0.05,
        n_stocks: 10,
        n_days: 260,
        seed: 808,
    })
    .unwrap();
    let cfg = TrainConfig {
        episodes: 60,
        learning_rate: 0.2,
        hidden_sizes: vec![6],
        seed: 808,
        ..TrainConfig::default()
    };
    let model = train(
        &market.features,
        &market.returns,
        DayRange::new(0, 190),
        &[1, 5],
        4,
        &cfg,
        &ridge(),
    )
    .unwrap();
    let full = predict_rolling(
        &model,
        &market.features,
        &market.returns,
        DayRange::new(190, 250),
        &ridge(),
    )
    .unwrap();

    for cut_day in [210usize, 230] {
        let panel = market.panel.truncate_days(cut_day + 1);
        let features = market.features.truncate_days(cut_day + 1);
        let returns = compute_returns(&panel, 1).unwrap();
        let truncated = predict_rolling(
            &model,
            &features,
            &returns,
            DayRange::new(190, cut_day + 1),
            &ridge(),
        )
        .unwrap();
        for (pos, (day, row)) in truncated.iter().enumerate() {
            assert!(day <= cut_day);
            assert_eq!(day, full.days()[pos]);
            for stock in 0..row.len() {
                assert_eq!(
                    row[stock].map(f64::to_bits),
                    full.row(pos)[stock].map(f64::to_bits),
                    "cut {cut_day}, day {day}, stock {stock}"
                );
            }
        }
    }
    println!(
        "criterion 8 (causality): PASS - truncated-panel predictions bit-identical, {:.1}s",
        started.elapsed().as_secs_f64()
    );
}

#[test]
fn criterion_9_ic_sign_flip() {
    let started = Instant::now();
    let switch = 100usize;
    let market = generate(&RegimeSpec {
        pattern: RegimePattern::StepSwitch {
            switch_days: vec![switch],
            weight_sets: vec![vec![-0.08, 0.01, 0.01]],
        },
        base_weights: vec![0.08, 0.01, 0.01],
        base_bias: 0.0,
        noise_std: 0.02,
        n_stocks: 20,
        n_days: 200,
        seed: 909,
    })
    .unwrap();
    let driving = market.features.column_series(0);
    let window = 5usize;

    let before = windowed_ic(&driving, &market.returns, switch - 1, window).unwrap();
    assert!(before > 0.5, "pre-switch IC should be strongly positive, got {before}");
    let flip_day = (switch..switch + window + 1)
        .find(|&day| windowed_ic(&driving, &market.returns, day, window).unwrap() < 0.0)
        .expect("IC never flipped");
    assert!(
        flip_day <= switch + window,
        "IC flipped only at day {flip_day}, switch was {switch}"
    );
    let settled = windowed_ic(&driving, &market.returns, switch + window, window).unwrap();
    assert!(settled < -0.5, "post-switch IC should be strongly negative, got {settled}");
    println!(
        "criterion 9 (IC sign flip): PASS - flip within {} days of the switch (IC {before:.2} -> {settled:.2}), {:.2}s",
        flip_day - switch,
        started.elapsed().as_secs_f64()
    );
}

//! Flat key-value run configuration with validation and snapshots.
//!
//! Every run resolves its configuration (file plus command-line overrides)
//! and writes the result next to its outputs, so any artifact can be traced
//! back to the exact settings that produced it. Timestamps go to a separate
//! sidecar to keep the main outputs byte-reproducible.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use chrono::NaiveDate;
use serde::{Deserialize, Serialize};

use paramcast::first_order::{RidgeConfig, RidgeSolver};
use paramcast::market_data::{DayRange, TradingCalendar};
use paramcast::second_order::{HeadMode, TrainConfig};

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Panel CSV path.
    pub data: String,
    /// Optional feature CSV; empty means compute the indicator set.
    pub features_file: String,
    /// Output directory.
    pub out: String,

    /// Inclusive date ranges. Leaving all four empty selects a 75/25
    /// train/test split over the panel's calendar.
    pub train_start: String,
    pub train_end: String,
    pub test_start: String,
    pub test_end: String,

    /// Fraction of training samples randomly held out for validation.
    pub val_fraction: f64,
    pub seed: u64,

    /// Stocks suspended on more than this fraction of days are dropped.
    pub max_suspension_ratio: f64,
    /// Per-day cross-sectional z-scoring of the indicator columns.
    pub normalize: bool,
    pub return_horizon: usize,

    pub scales: Vec<usize>,
    pub ridge_lambda: f64,
    pub ridge_solver: String,
    pub ridge_lr: f64,
    pub ridge_episodes: usize,
    pub ridge_tolerance: f64,

    /// Look-back cells per scale.
    pub steps: usize,
    pub hidden: usize,
    pub forget_bias: f64,
    pub model_lr: f64,
    pub model_episodes: usize,
    pub grad_clip: f64,
    pub model_tolerance: f64,
    pub head_mode: String,
    /// Retrain the sequential model before every test day instead of
    /// training once. Much slower.
    pub retrain_daily: bool,

    pub rot_windows: Vec<usize>,
    pub top_k: Vec<usize>,

    pub grid_steps: Vec<usize>,
    pub grid_hidden: Vec<usize>,
    pub grid_forget_bias: Vec<f64>,
    pub grid_lambda: Vec<f64>,

    pub synth_pattern: String,
    pub synth_days: usize,
    pub synth_stocks: usize,
    pub synth_base_weights: Vec<f64>,
    pub synth_base_bias: f64,
    pub synth_noise: f64,
    pub synth_amplitude: f64,
    pub synth_period: usize,
    pub synth_switch_days: Vec<usize>,
    pub synth_weight_sets: Vec<Vec<f64>>,
    pub synth_step_std: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            data: "market.csv".into(),
            features_file: String::new(),
            out: "runs/latest".into(),
            train_start: String::new(),
            train_end: String::new(),
            test_start: String::new(),
            test_end: String::new(),
            val_fraction: 0.1,
            seed: 42,
            max_suspension_ratio: 0.1,
            normalize: true,
            return_horizon: 1,
            scales: vec![1, 5, 10, 20],
            ridge_lambda: 1e-3,
            ridge_solver: "closed_form".into(),
            ridge_lr: 0.05,
            ridge_episodes: 2000,
            ridge_tolerance: 1e-10,
            steps: 5,
            hidden: 16,
            forget_bias: 1.0,
            model_lr: 0.2,
            model_episodes: 300,
            grad_clip: 5.0,
            model_tolerance: 1e-12,
            head_mode: "learned".into(),
            retrain_daily: false,
            rot_windows: vec![5, 20, 60],
            top_k: vec![10, 20, 50],
            grid_steps: vec![5, 10, 20],
            grid_hidden: vec![64, 128],
            grid_forget_bias: vec![0.0, 0.5, 1.0],
            grid_lambda: vec![1e-2, 5e-3, 1e-3],
            synth_pattern: "sinusoidal".into(),
            synth_days: 600,
            synth_stocks: 20,
            synth_base_weights: vec![0.0, 0.0, 0.0, 0.0],
            synth_base_bias: 0.0,
            synth_noise: 0.14,
            synth_amplitude: 0.1,
            synth_period: 40,
            synth_switch_days: vec![300],
            synth_weight_sets: Vec::new(),
            synth_step_std: 0.005,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        let config: RunConfig =
            toml::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
        Ok(config)
    }

    /// Field-by-field sanity checks; errors name the offending key.
    pub fn validate(&self) -> Result<()> {
        if !(0.0 < self.val_fraction && self.val_fraction < 1.0) {
            bail!("val_fraction: must be in (0, 1), got {}", self.val_fraction);
        }
        if !(0.0..=1.0).contains(&self.max_suspension_ratio) {
            bail!(
                "max_suspension_ratio: must be in [0, 1], got {}",
                self.max_suspension_ratio
            );
        }
        if self.return_horizon == 0 {
            bail!("return_horizon: must be >= 1");
        }
        if self.scales.is_empty() || self.scales.windows(2).any(|w| w[0] >= w[1]) {
            bail!("scales: must be non-empty and strictly increasing");
        }
        if self.scales.contains(&0) {
            bail!("scales: every scale must be >= 1");
        }
        if self.steps == 0 {
            bail!("steps: must be >= 1");
        }
        if self.hidden == 0 {
            bail!("hidden: must be >= 1");
        }
        if self.model_episodes == 0 {
            bail!("model_episodes: must be >= 1");
        }
        if self.ridge_lambda < 0.0 {
            bail!("ridge_lambda: must be >= 0");
        }
        if self.top_k.is_empty() || self.top_k.contains(&0) {
            bail!("top_k: must be non-empty positive");
        }
        if self.rot_windows.is_empty() || self.rot_windows.contains(&0) {
            bail!("rot_windows: must be non-empty positive");
        }
        self.ridge_solver()?;
        self.head_mode()?;

        let dates = [
            ("train_start", &self.train_start),
            ("train_end", &self.train_end),
            ("test_start", &self.test_start),
            ("test_end", &self.test_end),
        ];
        let empty = dates.iter().filter(|(_, v)| v.is_empty()).count();
        if empty != 0 && empty != 4 {
            bail!("date ranges: give all of train_start/train_end/test_start/test_end or none");
        }
        if empty == 0 {
            let mut parsed = Vec::new();
            for (name, value) in dates {
                let d = NaiveDate::parse_from_str(value, "%Y-%m-%d")
                    .with_context(|| format!("{name}: bad date '{value}'"))?;
                parsed.push((name, d));
            }
            if parsed[0].1 > parsed[1].1 {
                bail!("train_end: must not precede train_start");
            }
            if parsed[2].1 > parsed[3].1 {
                bail!("test_end: must not precede test_start");
            }
            if parsed[2].1 <= parsed[1].1 {
                bail!("test_start: must come after train_end (ranges must not overlap)");
            }
        }
        Ok(())
    }

    /// Map the configured date ranges onto a calendar. With no dates set,
    /// the first 75% of days train and the rest test.
    pub fn resolve_ranges(&self, calendar: &TradingCalendar) -> Result<(DayRange, DayRange)> {
        if self.train_start.is_empty() {
            let split = calendar.len() * 3 / 4;
            return Ok((
                DayRange::new(0, split),
                DayRange::new(split, calendar.len()),
            ));
        }
        let parse = |name: &str, v: &str| {
            NaiveDate::parse_from_str(v, "%Y-%m-%d").with_context(|| format!("{name}: bad date"))
        };
        let train = calendar.range(
            parse("train_start", &self.train_start)?,
            parse("train_end", &self.train_end)?,
        );
        let test = calendar.range(
            parse("test_start", &self.test_start)?,
            parse("test_end", &self.test_end)?,
        );
        if train.is_empty() {
            bail!("train range covers no calendar days");
        }
        if test.is_empty() {
            bail!("test range covers no calendar days");
        }
        Ok((train, test))
    }

    pub fn ridge_solver(&self) -> Result<RidgeSolver> {
        match self.ridge_solver.as_str() {
            "closed_form" => Ok(RidgeSolver::ClosedForm),
            "gradient_descent" => Ok(RidgeSolver::GradientDescent),
            other => bail!("ridge_solver: must be closed_form or gradient_descent, got {other}"),
        }
    }

    pub fn head_mode(&self) -> Result<HeadMode> {
        HeadMode::parse(&self.head_mode).map_err(|e| anyhow::anyhow!("head_mode: {e}"))
    }

    pub fn ridge(&self) -> Result<RidgeConfig> {
        Ok(RidgeConfig {
            l2_weight: self.ridge_lambda,
            solver: self.ridge_solver()?,
            learning_rate: self.ridge_lr,
            episodes: self.ridge_episodes,
            tolerance: self.ridge_tolerance,
        })
    }

    pub fn trainer(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            episodes: self.model_episodes,
            learning_rate: self.model_lr,
            hidden_sizes: vec![self.hidden],
            forget_bias: self.forget_bias,
            grad_clip: self.grad_clip,
            tolerance: self.model_tolerance,
            val_fraction: self.val_fraction,
            seed: self.seed,
            head_mode: self.head_mode()?,
        })
    }

    pub fn out_dir(&self) -> PathBuf {
        PathBuf::from(&self.out)
    }

    /// Write the resolved configuration next to the outputs, and the
    /// wall-clock stamp to a sidecar that identity checks can ignore.
    pub fn write_snapshot(&self, out_dir: &Path) -> Result<()> {
        std::fs::create_dir_all(out_dir)?;
        let toml = toml::to_string(self).context("serializing resolved config")?;
        std::fs::write(out_dir.join("resolved_config.toml"), toml)?;
        std::fs::write(
            out_dir.join("run_meta.txt"),
            format!("written_at {}\n", chrono::Utc::now().to_rfc3339()),
        )?;
        Ok(())
    }
}

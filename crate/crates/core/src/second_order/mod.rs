//! The sequential model over first-order parameters.
//!
//! For every time scale `s`, the parameter vectors fitted by the first-order
//! module form a sequence sampled at stride `s`. One LSTM per scale reads the
//! last `K` vectors; the final hidden states are fused through scale weights
//! and a shared affine head into the predicted parameter vector, which is
//! applied to today's features to predict tomorrow's return. Training is
//! end-to-end against realized returns, not against fitted parameters.

mod cell;
mod grad;
mod io;
mod train;

use std::collections::BTreeMap;

use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use cell::{lstm_step, GateWeights, LstmState, LstmWeights};
pub use grad::{gradients, ModelGradients};
pub use train::{
    assemble_window, predict_rolling, predict_rolling_retrained, predict_rolling_with_series,
    train, train_with_report, TrainConfig, TrainReport,
};

use crate::error::{Error, Result};
use crate::first_order::LinearParams;

/// How the fused hidden vector becomes a parameter vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum HeadMode {
    /// Shared affine head; hidden size is free.
    Learned,
    /// No head: the fused hidden vector is the parameter vector. Requires
    /// hidden size == feature_dim + 1.
    Identity,
}

impl HeadMode {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "learned" => Ok(HeadMode::Learned),
            "identity" => Ok(HeadMode::Identity),
            other => Err(Error::InvalidArgument(format!(
                "head_mode must be learned or identity, got {other}"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            HeadMode::Learned => "learned",
            HeadMode::Identity => "identity",
        }
    }
}

/// Affine map from the fused hidden vector to the predicted parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineHead {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl AffineHead {
    /// Identity on the leading hidden coordinates, zero elsewhere.
    fn identity_prefix(out_dim: usize, hidden: usize) -> Self {
        let mut weight = Array2::zeros((out_dim, hidden));
        for j in 0..out_dim.min(hidden) {
            weight[[j, j]] = 1.0;
        }
        Self {
            weight,
            bias: Array1::zeros(out_dim),
        }
    }
}

/// Per-scale cells, scale weights and the shared head.
#[derive(Debug, Clone, PartialEq)]
pub struct SecondOrderModel {
    pub feature_dim: usize,
    pub hidden: usize,
    /// Look-back cells per scale.
    pub steps: usize,
    pub scales: Vec<usize>,
    pub head_mode: HeadMode,
    pub seed: u64,
    pub cells: BTreeMap<usize, LstmWeights>,
    pub alpha: BTreeMap<usize, f64>,
    pub head: AffineHead,
}

/// Per-scale input windows: exactly `steps` parameter vectors at stride `s`,
/// oldest first, all strictly before the prediction day.
pub type ParamWindow = BTreeMap<usize, Vec<Array1<f64>>>;

impl SecondOrderModel {
    /// Seeded initialization: cell weights uniform in [-0.08, 0.08], the
    /// forget-gate bias as configured, scale weights 1/|S|, head as an
    /// identity-like prefix with zero bias.
    pub fn init(
        feature_dim: usize,
        hidden: usize,
        steps: usize,
        scales: &[usize],
        forget_bias: f64,
        head_mode: HeadMode,
        seed: u64,
    ) -> Result<Self> {
        if scales.is_empty() {
            return Err(Error::InvalidArgument("scales must be non-empty".into()));
        }
        if scales.contains(&0) {
            return Err(Error::InvalidArgument("every scale must be >= 1".into()));
        }
        if scales.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::InvalidArgument(
                "scales must be strictly increasing".into(),
            ));
        }
        if steps == 0 {
            return Err(Error::InvalidArgument("steps must be >= 1".into()));
        }
        if hidden == 0 || feature_dim == 0 {
            return Err(Error::InvalidArgument(
                "hidden and feature_dim must be >= 1".into(),
            ));
        }
        let out_dim = feature_dim + 1;
        if head_mode == HeadMode::Identity && hidden != out_dim {
            return Err(Error::InvalidArgument(format!(
                "identity head requires hidden == feature_dim + 1 ({out_dim}), got {hidden}"
            )));
        }
        let input_dim = feature_dim + 1;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut cells = BTreeMap::new();
        let mut alpha = BTreeMap::new();
        for &s in scales {
            cells.insert(s, LstmWeights::init(hidden, input_dim, forget_bias, &mut rng));
            alpha.insert(s, 1.0 / scales.len() as f64);
        }
        Ok(Self {
            feature_dim,
            hidden,
            steps,
            scales: scales.to_vec(),
            head_mode,
            seed,
            cells,
            alpha,
            head: AffineHead::identity_prefix(out_dim, hidden),
        })
    }

    pub fn param_dim(&self) -> usize {
        self.feature_dim + 1
    }

    fn validate_window(&self, window: &ParamWindow) -> Result<()> {
        for &s in &self.scales {
            let seq = window
                .get(&s)
                .ok_or(Error::MissingParamEntry { scale: s, day: 0 })?;
            if seq.len() != self.steps {
                return Err(Error::DimensionMismatch {
                    expected: self.steps,
                    got: seq.len(),
                });
            }
            for theta in seq {
                if theta.len() != self.param_dim() {
                    return Err(Error::DimensionMismatch {
                        expected: self.param_dim(),
                        got: theta.len(),
                    });
                }
            }
        }
        Ok(())
    }

    /// Predicted parameter vector for the window's target day.
    pub fn predict_params(&self, window: &ParamWindow) -> Result<LinearParams> {
        let cache = self.forward_cached(window)?;
        Ok(LinearParams::from_vec(cache.theta_hat.as_slice().unwrap()))
    }

    /// Full forward pass: predicted parameters plus their application to
    /// one feature vector.
    pub fn forward(&self, window: &ParamWindow, x: &[f64]) -> Result<(LinearParams, f64)> {
        if x.len() != self.feature_dim {
            return Err(Error::DimensionMismatch {
                expected: self.feature_dim,
                got: x.len(),
            });
        }
        let params = self.predict_params(window)?;
        let y_hat = params.apply(x);
        Ok((params, y_hat))
    }

    /// All trainable parameters in the declared order: per scale ascending,
    /// gates input/forget/output/cell, each as w (row-major), u, b; then the
    /// scale weights; then the head weight and bias. The same order is used
    /// by [`ModelGradients::flatten`] and the model file.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for &s in &self.scales {
            for gate in self.cells[&s].gates() {
                out.extend(gate.w.iter());
                out.extend(gate.u.iter());
                out.extend(gate.b.iter());
            }
        }
        for &s in &self.scales {
            out.push(self.alpha[&s]);
        }
        out.extend(self.head.weight.iter());
        out.extend(self.head.bias.iter());
        out
    }

    /// Inverse of [`flatten_params`](Self::flatten_params).
    pub fn assign_params(&mut self, flat: &[f64]) -> Result<()> {
        let expected = self.flatten_params().len();
        if flat.len() != expected {
            return Err(Error::DimensionMismatch {
                expected,
                got: flat.len(),
            });
        }
        let mut it = flat.iter().copied();
        let scales = self.scales.clone();
        for &s in &scales {
            for gate in self.cells.get_mut(&s).unwrap().gates_mut() {
                for v in gate.w.iter_mut() {
                    *v = it.next().unwrap();
                }
                for v in gate.u.iter_mut() {
                    *v = it.next().unwrap();
                }
                for v in gate.b.iter_mut() {
                    *v = it.next().unwrap();
                }
            }
        }
        for &s in &scales {
            *self.alpha.get_mut(&s).unwrap() = it.next().unwrap();
        }
        for v in self.head.weight.iter_mut() {
            *v = it.next().unwrap();
        }
        for v in self.head.bias.iter_mut() {
            *v = it.next().unwrap();
        }
        Ok(())
    }

    pub(crate) fn forward_cached(&self, window: &ParamWindow) -> Result<ForwardCache> {
        self.validate_window(window)?;
        let mut per_scale = BTreeMap::new();
        let mut fused = Array1::zeros(self.hidden);
        for &s in &self.scales {
            let inputs = &window[&s];
            let (state, steps) = cell::run_sequence(&self.cells[&s], inputs)?;
            fused.scaled_add(self.alpha[&s], &state.h);
            per_scale.insert(
                s,
                ScaleCache {
                    steps,
                    h_last: state.h,
                },
            );
        }
        let theta_hat = match self.head_mode {
            HeadMode::Learned => self.head.weight.dot(&fused) + &self.head.bias,
            HeadMode::Identity => fused.clone(),
        };
        Ok(ForwardCache {
            per_scale,
            fused,
            theta_hat,
        })
    }
}

pub(crate) struct ScaleCache {
    pub steps: Vec<cell::StepCache>,
    pub h_last: Array1<f64>,
}

pub(crate) struct ForwardCache {
    pub per_scale: BTreeMap<usize, ScaleCache>,
    pub fused: Array1<f64>,
    pub theta_hat: Array1<f64>,
}

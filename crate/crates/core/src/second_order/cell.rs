//! LSTM cell over parameter vectors, one instance per time scale.

use ndarray::{Array1, Array2};
use rand::Rng;

use crate::error::{Error, Result};

/// Weights of one gate: input matrix, recurrent matrix, bias.
#[derive(Debug, Clone, PartialEq)]
pub struct GateWeights {
    pub w: Array2<f64>,
    pub u: Array2<f64>,
    pub b: Array1<f64>,
}

impl GateWeights {
    fn zeros(hidden: usize, input_dim: usize) -> Self {
        Self {
            w: Array2::zeros((hidden, input_dim)),
            u: Array2::zeros((hidden, hidden)),
            b: Array1::zeros(hidden),
        }
    }

    fn init<R: Rng>(hidden: usize, input_dim: usize, bias: f64, rng: &mut R) -> Self {
        let mut g = Self::zeros(hidden, input_dim);
        for v in g.w.iter_mut() {
            *v = rng.random_range(-0.08..0.08);
        }
        for v in g.u.iter_mut() {
            *v = rng.random_range(-0.08..0.08);
        }
        g.b.fill(bias);
        g
    }
}

/// All four gates of one per-scale cell. The same shape doubles as the
/// gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    pub input: GateWeights,
    pub forget: GateWeights,
    pub output: GateWeights,
    pub cell: GateWeights,
}

pub(crate) const GATE_NAMES: [&str; 4] = ["input", "forget", "output", "cell"];

impl LstmWeights {
    pub fn hidden(&self) -> usize {
        self.input.w.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.input.w.ncols()
    }

    pub fn zeros(hidden: usize, input_dim: usize) -> Self {
        Self {
            input: GateWeights::zeros(hidden, input_dim),
            forget: GateWeights::zeros(hidden, input_dim),
            output: GateWeights::zeros(hidden, input_dim),
            cell: GateWeights::zeros(hidden, input_dim),
        }
    }

    /// Uniform init in [-0.08, 0.08]; forget-gate bias set separately.
    pub fn init<R: Rng>(hidden: usize, input_dim: usize, forget_bias: f64, rng: &mut R) -> Self {
        Self {
            input: GateWeights::init(hidden, input_dim, 0.0, rng),
            forget: GateWeights::init(hidden, input_dim, forget_bias, rng),
            output: GateWeights::init(hidden, input_dim, 0.0, rng),
            cell: GateWeights::init(hidden, input_dim, 0.0, rng),
        }
    }

    pub fn gates(&self) -> [&GateWeights; 4] {
        [&self.input, &self.forget, &self.output, &self.cell]
    }

    pub fn gates_mut(&mut self) -> [&mut GateWeights; 4] {
        [
            &mut self.input,
            &mut self.forget,
            &mut self.output,
            &mut self.cell,
        ]
    }
}

/// Hidden and memory state carried between cells of one scale.
#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    pub h: Array1<f64>,
    pub c: Array1<f64>,
}

impl LstmState {
    pub fn zero(hidden: usize) -> Self {
        Self {
            h: Array1::zeros(hidden),
            c: Array1::zeros(hidden),
        }
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Intermediate values of one step, kept for backpropagation.
#[derive(Debug, Clone)]
pub(crate) struct StepCache {
    pub input_gate: Array1<f64>,
    pub forget_gate: Array1<f64>,
    pub output_gate: Array1<f64>,
    pub candidate: Array1<f64>,
    pub tanh_c: Array1<f64>,
    pub h_prev: Array1<f64>,
    pub c_prev: Array1<f64>,
    pub theta: Array1<f64>,
}

/// One LSTM step: gates from the incoming parameter vector and the previous
/// state, memory update, hidden output.
pub fn lstm_step(weights: &LstmWeights, theta: &Array1<f64>, state: &LstmState) -> Result<LstmState> {
    let (next, _) = step_cached(weights, theta, state)?;
    Ok(next)
}

pub(crate) fn step_cached(
    weights: &LstmWeights,
    theta: &Array1<f64>,
    state: &LstmState,
) -> Result<(LstmState, StepCache)> {
    if theta.len() != weights.input_dim() {
        return Err(Error::DimensionMismatch {
            expected: weights.input_dim(),
            got: theta.len(),
        });
    }
    if theta.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFiniteInput(
            "parameter vector fed to the cell".into(),
        ));
    }
    let pre = |g: &GateWeights| g.w.dot(theta) + g.u.dot(&state.h) + &g.b;
    let input_gate = pre(&weights.input).mapv(sigmoid);
    let forget_gate = pre(&weights.forget).mapv(sigmoid);
    let output_gate = pre(&weights.output).mapv(sigmoid);
    let candidate = pre(&weights.cell).mapv(f64::tanh);

    let c = &forget_gate * &state.c + &input_gate * &candidate;
    let tanh_c = c.mapv(f64::tanh);
    let h = &output_gate * &tanh_c;

    let cache = StepCache {
        input_gate,
        forget_gate,
        output_gate,
        candidate,
        tanh_c,
        h_prev: state.h.clone(),
        c_prev: state.c.clone(),
        theta: theta.clone(),
    };
    Ok((LstmState { h, c }, cache))
}

/// Run the cell over a whole window from the zero state, caching each step.
pub(crate) fn run_sequence(
    weights: &LstmWeights,
    inputs: &[Array1<f64>],
) -> Result<(LstmState, Vec<StepCache>)> {
    let mut state = LstmState::zero(weights.hidden());
    let mut caches = Vec::with_capacity(inputs.len());
    for theta in inputs {
        let (next, cache) = step_cached(weights, theta, &state)?;
        caches.push(cache);
        state = next;
    }
    Ok((state, caches))
}

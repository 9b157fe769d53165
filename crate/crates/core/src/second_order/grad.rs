//! Reverse-mode gradients of the squared prediction loss, by hand.
//!
//! The chain runs loss -> predicted return -> predicted parameters -> head
//! -> fused hidden vector -> per-scale hidden states -> backpropagation
//! through time across the window's cells.

use std::collections::BTreeMap;

use ndarray::{Array1, Array2, Axis};

use crate::error::{Error, Result};

use super::cell::{LstmWeights, StepCache, GATE_NAMES};
use super::{ForwardCache, HeadMode, ParamWindow, SecondOrderModel};

/// Gradient of the loss with respect to every trainable parameter. Cell
/// gradients reuse the weight layout.
#[derive(Debug, Clone)]
pub struct ModelGradients {
    pub cells: BTreeMap<usize, LstmWeights>,
    pub alpha: BTreeMap<usize, f64>,
    pub head_weight: Array2<f64>,
    pub head_bias: Array1<f64>,
}

impl ModelGradients {
    pub fn zeros_like(model: &SecondOrderModel) -> Self {
        Self {
            cells: model
                .scales
                .iter()
                .map(|&s| (s, LstmWeights::zeros(model.hidden, model.param_dim())))
                .collect(),
            alpha: model.scales.iter().map(|&s| (s, 0.0)).collect(),
            head_weight: Array2::zeros(model.head.weight.dim()),
            head_bias: Array1::zeros(model.head.bias.len()),
        }
    }

    pub fn global_norm(&self) -> f64 {
        let mut acc = 0.0;
        for cell in self.cells.values() {
            for gate in cell.gates() {
                acc += gate.w.iter().map(|v| v * v).sum::<f64>();
                acc += gate.u.iter().map(|v| v * v).sum::<f64>();
                acc += gate.b.iter().map(|v| v * v).sum::<f64>();
            }
        }
        acc += self.alpha.values().map(|v| v * v).sum::<f64>();
        acc += self.head_weight.iter().map(|v| v * v).sum::<f64>();
        acc += self.head_bias.iter().map(|v| v * v).sum::<f64>();
        acc.sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for cell in self.cells.values_mut() {
            for gate in cell.gates_mut() {
                gate.w.mapv_inplace(|v| v * factor);
                gate.u.mapv_inplace(|v| v * factor);
                gate.b.mapv_inplace(|v| v * factor);
            }
        }
        for a in self.alpha.values_mut() {
            *a *= factor;
        }
        self.head_weight.mapv_inplace(|v| v * factor);
        self.head_bias.mapv_inplace(|v| v * factor);
    }

    /// Same canonical order as [`SecondOrderModel::flatten_params`].
    pub fn flatten(&self, model: &SecondOrderModel) -> Vec<f64> {
        let mut out = Vec::new();
        for &s in &model.scales {
            for gate in self.cells[&s].gates() {
                out.extend(gate.w.iter());
                out.extend(gate.u.iter());
                out.extend(gate.b.iter());
            }
        }
        for &s in &model.scales {
            out.push(self.alpha[&s]);
        }
        out.extend(self.head_weight.iter());
        out.extend(self.head_bias.iter());
        out
    }

    /// Name of the first non-finite entry, if any.
    pub fn first_non_finite(&self) -> Option<String> {
        for (&s, cell) in &self.cells {
            for (gate, name) in cell.gates().iter().zip(GATE_NAMES) {
                for (label, arr) in [("w", &gate.w), ("u", &gate.u)] {
                    if let Some((idx, _)) = arr.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                        return Some(format!("scale {s} {name} gate {label}[{idx}]"));
                    }
                }
                if let Some((idx, _)) = gate.b.iter().enumerate().find(|(_, v)| !v.is_finite()) {
                    return Some(format!("scale {s} {name} gate b[{idx}]"));
                }
            }
        }
        for (&s, a) in &self.alpha {
            if !a.is_finite() {
                return Some(format!("alpha[{s}]"));
            }
        }
        if let Some((idx, _)) = self
            .head_weight
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite())
        {
            return Some(format!("head weight[{idx}]"));
        }
        if let Some((idx, _)) = self
            .head_bias
            .iter()
            .enumerate()
            .find(|(_, v)| !v.is_finite())
        {
            return Some(format!("head bias[{idx}]"));
        }
        None
    }
}

/// Apply one plain gradient-descent step.
pub(crate) fn apply_update(model: &mut SecondOrderModel, grads: &ModelGradients, lr: f64) {
    for (&s, cell) in model.cells.iter_mut() {
        let g = &grads.cells[&s];
        for (wg, gg) in cell.gates_mut().into_iter().zip(g.gates()) {
            wg.w.scaled_add(-lr, &gg.w);
            wg.u.scaled_add(-lr, &gg.u);
            wg.b.scaled_add(-lr, &gg.b);
        }
    }
    for (&s, a) in model.alpha.iter_mut() {
        *a -= lr * grads.alpha[&s];
    }
    if model.head_mode == HeadMode::Learned {
        model.head.weight.scaled_add(-lr, &grads.head_weight);
        model.head.bias.scaled_add(-lr, &grads.head_bias);
    }
}

/// Exact gradients of `(y_hat - y)^2` for a single sample.
pub fn gradients(
    model: &SecondOrderModel,
    window: &ParamWindow,
    x: &[f64],
    y: f64,
) -> Result<(f64, ModelGradients)> {
    if x.len() != model.feature_dim {
        return Err(Error::DimensionMismatch {
            expected: model.feature_dim,
            got: x.len(),
        });
    }
    let cache = model.forward_cached(window)?;
    let theta_hat = cache.theta_hat.as_slice().unwrap();
    let (w, b) = theta_hat.split_at(model.feature_dim);
    let y_hat = w.iter().zip(x).map(|(w, x)| w * x).sum::<f64>() + b[0];
    let loss = (y_hat - y).powi(2);

    // d loss / d theta_hat = 2 (y_hat - y) * [x; 1]
    let dy = 2.0 * (y_hat - y);
    let mut d_theta = Array1::zeros(model.param_dim());
    for (j, &xj) in x.iter().enumerate() {
        d_theta[j] = dy * xj;
    }
    d_theta[model.feature_dim] = dy;

    let mut grads = ModelGradients::zeros_like(model);
    backward_from_dtheta(model, &cache, &d_theta, &mut grads);
    if let Some(parameter) = grads.first_non_finite() {
        return Err(Error::NonFiniteGradient { parameter });
    }
    Ok((loss, grads))
}

/// Backpropagate a given `d loss / d theta_hat` into the accumulator.
/// Shared by the single-sample API and the batched trainer, which seeds
/// `d_theta` with the per-day sum over stocks.
pub(crate) fn backward_from_dtheta(
    model: &SecondOrderModel,
    cache: &ForwardCache,
    d_theta: &Array1<f64>,
    grads: &mut ModelGradients,
) {
    let d_fused = match model.head_mode {
        HeadMode::Learned => {
            grads.head_weight += &d_theta
                .view()
                .insert_axis(Axis(1))
                .dot(&cache.fused.view().insert_axis(Axis(0)));
            grads.head_bias += d_theta;
            model.head.weight.t().dot(d_theta)
        }
        HeadMode::Identity => d_theta.clone(),
    };

    for &s in &model.scales {
        let scale_cache = &cache.per_scale[&s];
        *grads.alpha.get_mut(&s).unwrap() += d_fused.dot(&scale_cache.h_last);
        let dh_last = &d_fused * model.alpha[&s];
        backward_scale(
            &model.cells[&s],
            &scale_cache.steps,
            dh_last,
            grads.cells.get_mut(&s).unwrap(),
        );
    }
}

/// BPTT over one scale's cached steps. Rank-one gradient updates are
/// written with explicit loops to keep the inner loop allocation-free.
fn backward_scale(
    weights: &LstmWeights,
    steps: &[StepCache],
    dh_last: Array1<f64>,
    grads: &mut LstmWeights,
) {
    let hidden = weights.hidden();
    let mut dh = dh_last;
    let mut dc = Array1::zeros(hidden);
    for step in steps.iter().rev() {
        let d_output = &dh * &step.tanh_c;
        for j in 0..hidden {
            let t = step.tanh_c[j];
            dc[j] += dh[j] * step.output_gate[j] * (1.0 - t * t);
        }
        let d_input = &dc * &step.candidate;
        let d_candidate = &dc * &step.input_gate;
        let d_forget = &dc * &step.c_prev;
        let dc_prev = &dc * &step.forget_gate;

        let dpre_input = d_input * step.input_gate.mapv(|g| g * (1.0 - g));
        let dpre_forget = d_forget * step.forget_gate.mapv(|g| g * (1.0 - g));
        let dpre_output = d_output * step.output_gate.mapv(|g| g * (1.0 - g));
        let dpre_candidate = d_candidate * step.candidate.mapv(|g| 1.0 - g * g);

        let theta = step.theta.as_slice().expect("contiguous");
        let h_prev = step.h_prev.as_slice().expect("contiguous");
        let mut dh_prev = Array1::zeros(hidden);
        for ((gate_grads, gate), dpre) in grads
            .gates_mut()
            .into_iter()
            .zip(weights.gates())
            .zip([&dpre_input, &dpre_forget, &dpre_output, &dpre_candidate])
        {
            let w = gate_grads.w.as_slice_mut().expect("contiguous");
            let u = gate_grads.u.as_slice_mut().expect("contiguous");
            let in_dim = theta.len();
            for j in 0..hidden {
                let g = dpre[j];
                if g == 0.0 {
                    continue;
                }
                let w_row = &mut w[j * in_dim..(j + 1) * in_dim];
                for (wv, &x) in w_row.iter_mut().zip(theta) {
                    *wv += g * x;
                }
                let u_row = &mut u[j * hidden..(j + 1) * hidden];
                for (uv, &h) in u_row.iter_mut().zip(h_prev) {
                    *uv += g * h;
                }
            }
            gate_grads.b += dpre;
            general_mat_vec_accumulate(&gate.u, dpre, &mut dh_prev);
        }
        dh = dh_prev;
        dc = dc_prev;
    }
}

/// `out += u^T v` without temporaries.
fn general_mat_vec_accumulate(u: &Array2<f64>, v: &Array1<f64>, out: &mut Array1<f64>) {
    let (rows, cols) = u.dim();
    let u = u.as_slice().expect("contiguous");
    for j in 0..rows {
        let vj = v[j];
        if vj == 0.0 {
            continue;
        }
        let row = &u[j * cols..(j + 1) * cols];
        for (o, &uv) in out.iter_mut().zip(row) {
            *o += vj * uv;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_model(rng: &mut ChaCha8Rng) -> SecondOrderModel {
        let mut model =
            SecondOrderModel::init(3, 4, 3, &[1, 5], 0.5, HeadMode::Learned, rng.random()).unwrap();
        // Larger-than-init weights push the gates away from their linear
        // region so the check exercises the nonlinearities.
        for cell in model.cells.values_mut() {
            for gate in cell.gates_mut() {
                gate.w.mapv_inplace(|_| rng.random_range(-0.5..0.5));
                gate.u.mapv_inplace(|_| rng.random_range(-0.5..0.5));
                gate.b.mapv_inplace(|_| rng.random_range(-0.3..0.3));
            }
        }
        for a in model.alpha.values_mut() {
            *a = rng.random_range(0.2..0.8);
        }
        model.head.weight.mapv_inplace(|_| rng.random_range(-0.5..0.5));
        model.head.bias.mapv_inplace(|_| rng.random_range(-0.2..0.2));
        model
    }

    fn random_window(model: &SecondOrderModel, rng: &mut ChaCha8Rng) -> ParamWindow {
        model
            .scales
            .iter()
            .map(|&s| {
                (
                    s,
                    (0..model.steps)
                        .map(|_| {
                            Array1::from_iter(
                                (0..model.param_dim()).map(|_| rng.random_range(-1.0..1.0)),
                            )
                        })
                        .collect(),
                )
            })
            .collect()
    }

    fn loss_of(model: &SecondOrderModel, window: &ParamWindow, x: &[f64], y: f64) -> f64 {
        let (_, y_hat) = model.forward(window, x).unwrap();
        (y_hat - y).powi(2)
    }

    /// Central finite difference through every parameter of the model,
    /// via the canonical flattening.
    fn finite_difference_check(
        model: &SecondOrderModel,
        window: &ParamWindow,
        x: &[f64],
        y: f64,
        step: f64,
        max_rel_err: f64,
    ) {
        let (_, grads) = gradients(model, window, x, y).unwrap();
        let analytic = grads.flatten(model);
        let base = model.flatten_params();
        let mut probe = model.clone();
        for idx in 0..base.len() {
            let mut flat = base.clone();
            flat[idx] = base[idx] + step;
            probe.assign_params(&flat).unwrap();
            let plus = loss_of(&probe, window, x, y);
            flat[idx] = base[idx] - step;
            probe.assign_params(&flat).unwrap();
            let minus = loss_of(&probe, window, x, y);
            let fd = (plus - minus) / (2.0 * step);
            let denom = analytic[idx].abs().max(fd.abs()).max(1e-6);
            let rel = (analytic[idx] - fd).abs() / denom;
            assert!(
                rel < max_rel_err,
                "param {idx}: analytic={} fd={fd} rel={rel}",
                analytic[idx]
            );
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(71);
        let model = random_model(&mut rng);
        let window = random_window(&model, &mut rng);
        let x = [0.4, -0.7, 0.2];
        let y = 0.05;
        finite_difference_check(&model, &window, &x, y, 1e-5, 1e-4);
    }

    #[test]
    fn zero_residual_means_zero_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let model = random_model(&mut rng);
        let window = random_window(&model, &mut rng);
        let x = [0.1, 0.2, -0.3];
        let (_, y_hat) = model.forward(&window, &x).unwrap();
        let (loss, grads) = gradients(&model, &window, &x, y_hat).unwrap();
        assert_eq!(loss, 0.0);
        assert_eq!(grads.global_norm(), 0.0);
    }

    #[test]
    fn alpha_gradient_vanishes_with_zero_hidden_state() {
        // Zero weights and zero inputs keep every hidden state at zero, so
        // the attention weights receive no gradient.
        let mut model =
            SecondOrderModel::init(2, 3, 2, &[1, 5], 0.0, HeadMode::Learned, 9).unwrap();
        for cell in model.cells.values_mut() {
            for gate in cell.gates_mut() {
                gate.w.fill(0.0);
                gate.u.fill(0.0);
                gate.b.fill(0.0);
            }
        }
        let window: ParamWindow = model
            .scales
            .iter()
            .map(|&s| (s, vec![Array1::zeros(3), Array1::zeros(3)]))
            .collect();
        let (_, grads) = gradients(&model, &window, &[1.0, 2.0], 0.5).unwrap();
        for (&s, &g) in &grads.alpha {
            assert_eq!(g, 0.0, "alpha[{s}]");
        }
    }

    #[test]
    fn non_finite_gradients_name_the_offending_parameter() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let model = random_model(&mut rng);
        let window = random_window(&model, &mut rng);
        // An input/target pair large enough to overflow the chain rule.
        let x = [1e160, 0.0, 0.0];
        let err = gradients(&model, &window, &x, -1e160).unwrap_err();
        match err {
            Error::NonFiniteGradient { parameter } => {
                assert!(!parameter.is_empty());
            }
            other => panic!("unexpected error: {other}"),
        }
    }

    #[test]
    fn identity_head_gradients_also_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(33);
        let mut model =
            SecondOrderModel::init(2, 3, 2, &[1, 5], 0.5, HeadMode::Identity, 21).unwrap();
        for cell in model.cells.values_mut() {
            for gate in cell.gates_mut() {
                gate.w.mapv_inplace(|_| rng.random_range(-0.5..0.5));
                gate.u.mapv_inplace(|_| rng.random_range(-0.5..0.5));
            }
        }
        let window = random_window(&model, &mut rng);
        let x = [0.6, -0.1];
        finite_difference_check(&model, &window, &x, 0.02, 1e-5, 1e-4);
    }
}

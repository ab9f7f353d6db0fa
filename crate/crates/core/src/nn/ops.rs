//! Single-sample forms of the model operations.
//!
//! These are written directly against slices and double as a second route
//! for checking the batched forward pass in `model.rs`.

use crate::error::{Error, Result};
use crate::nn::dense::sigmoid;
use crate::nn::{AttentionParams, DenseParams, GateParams, ModelParams, TslmParams, RECENCY_SCALE_HOURS};

pub fn softplus(x: f64) -> f64 {
    if x > 30.0 {
        x
    } else {
        x.exp().ln_1p()
    }
}

/// Two-way softmax, returned as `(w_first, w_second)`.
pub fn softmax_pair(a: f64, b: f64) -> (f64, f64) {
    let m = a.max(b);
    let (ea, eb) = ((a - m).exp(), (b - m).exp());
    let z = ea + eb;
    (ea / z, eb / z)
}

/// `[x ⊙ exp(-softplus(rho) ⊙ Δt/24) ; Δt/24]`.
pub fn tslm_transform(values: &[f64], delta_t: &[f64], params: &TslmParams) -> Result<Vec<f64>> {
    let n = params.rho.len();
    if values.len() != n || delta_t.len() != n {
        return Err(Error::ShapeMismatch(format!(
            "tslm transform expects {n} values and ages, got {} and {}",
            values.len(),
            delta_t.len()
        )));
    }
    if let Some(bad) = delta_t.iter().find(|d| !(**d >= 0.0)) {
        return Err(Error::InvalidInput(format!("negative or non-finite time since last measurement {bad}")));
    }
    let mut out = Vec::with_capacity(2 * n);
    for i in 0..n {
        let scaled = delta_t[i] / RECENCY_SCALE_HOURS;
        out.push(values[i] * (-softplus(params.rho[i]) * scaled).exp());
    }
    out.extend(delta_t.iter().map(|d| d / RECENCY_SCALE_HOURS));
    Ok(out)
}

fn run_stack(layers: &[DenseParams], input: Vec<f64>) -> Vec<f64> {
    layers.iter().fold(input, |x, layer| layer.forward_one(&x))
}

/// Encoder input for one feature row: `[static ; tslm_transform ; baseline ; trend]`.
pub fn encoder_input(x_e: &[f64], params: &ModelParams) -> Result<Vec<f64>> {
    let layout = params.layout;
    if x_e.len() != layout.width() {
        return Err(Error::ShapeMismatch(format!("feature row has {} columns, expected {}", x_e.len(), layout.width())));
    }
    let d = layout.dynamic_dim;
    let dynamic = &x_e[layout.dynamic_start()..layout.dynamic_start() + d];
    let ages = &x_e[layout.tslm_start()..layout.tslm_start() + d];
    let mut input = Vec::with_capacity(layout.width());
    input.extend_from_slice(&x_e[..layout.static_dim]);
    input.extend(tslm_transform(dynamic, ages, &params.tslm)?);
    input.extend_from_slice(&x_e[layout.baseline_start()..layout.tslm_start()]);
    Ok(input)
}

pub fn encode_ehr(x_e: &[f64], params: &ModelParams) -> Result<Vec<f64>> {
    let input = encoder_input(x_e, params)?;
    if let Some(first) = params.ehr_encoder.first() {
        if first.in_dim() != input.len() {
            return Err(Error::ShapeMismatch(format!("encoder expects {} inputs, got {}", first.in_dim(), input.len())));
        }
    }
    Ok(run_stack(&params.ehr_encoder, input))
}

pub fn project_image(z_c: &[f64], params: &ModelParams) -> Result<Vec<f64>> {
    let expected = params.embedding_dim();
    if z_c.len() != expected {
        return Err(Error::ShapeMismatch(format!("embedding has {} values, expected {expected}", z_c.len())));
    }
    Ok(run_stack(&params.projection, z_c.to_vec()))
}

/// `g = σ(W[h_e; h_c] + b)`, `h = (1 - g) h_e + g h_c`.
pub fn gate_and_fuse(h_e: &[f64], h_c: &[f64], gate: &GateParams) -> Result<(Vec<f64>, f64)> {
    let d = h_e.len();
    if h_c.len() != d || gate.weight.len() != 2 * d {
        return Err(Error::ShapeMismatch(format!(
            "gate over dims {} and {} with {} weights",
            d,
            h_c.len(),
            gate.weight.len()
        )));
    }
    let logit: f64 = h_e.iter().chain(h_c).zip(gate.weight.iter()).map(|(x, w)| x * w).sum::<f64>() + gate.bias;
    let g = sigmoid(logit);
    let h = h_e.iter().zip(h_c).map(|(e, c)| (1.0 - g) * e + g * c).collect();
    Ok((h, g))
}

/// Softmax over per-modality scores from one shared scoring layer.
/// Returns the fused vector and the `(ehr, cxr)` weights.
pub fn attention_fuse(h_e: &[f64], h_c: &[f64], attention: &AttentionParams) -> Result<(Vec<f64>, (f64, f64))> {
    let d = h_e.len();
    if h_c.len() != d || attention.score.len() != d {
        return Err(Error::ShapeMismatch(format!(
            "attention over dims {} and {} with {} score weights",
            d,
            h_c.len(),
            attention.score.len()
        )));
    }
    let score = |h: &[f64]| h.iter().zip(attention.score.iter()).map(|(x, w)| x * w).sum::<f64>() + attention.bias;
    let (w_e, w_c) = softmax_pair(score(h_e), score(h_c));
    let h = h_e.iter().zip(h_c).map(|(e, c)| w_e * e + w_c * c).collect();
    Ok((h, (w_e, w_c)))
}

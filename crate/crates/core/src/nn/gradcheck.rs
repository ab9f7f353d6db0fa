//! Central finite-difference check of the analytic backward pass.

use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;
use crate::nn::{Inputs, ModelConfig, ModelParams, Variant};

pub const STEP: f64 = 1e-5;
/// Denominator floor so that near-zero gradients are compared absolutely.
pub const RELATIVE_FLOOR: f64 = 1e-6;
pub const TOLERANCE: f64 = 1e-4;

#[derive(Debug, Clone, Serialize)]
pub struct GradcheckReport {
    pub variant: Variant,
    pub seed: u64,
    pub parameters: usize,
    pub max_relative_error: f64,
    pub worst_parameter: String,
}

impl GradcheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error < TOLERANCE
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

/// Mean positive-weighted cross-entropy without clamping.
pub fn loss(params: &ModelParams, inputs: Inputs<'_>, labels: &[f64], pos_weight: f64) -> Result<f64> {
    let p = params.predict_batch(inputs)?;
    let total: f64 = p.iter().zip(labels).map(|(p, y)| -(pos_weight * y * p.ln() + (1.0 - y) * (1.0 - p).ln())).sum();
    Ok(total / labels.len() as f64)
}

/// Small random architecture, parameters and batch for one seed.
pub fn random_problem(variant: Variant, seed: u64) -> Result<(ModelParams, Array2<f64>, Array2<f64>, Vec<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let hidden = |rng: &mut ChaCha8Rng| (0..rng.random_range(0..=2)).map(|_| rng.random_range(2..=5)).collect();
    let config = ModelConfig {
        static_dim: rng.random_range(0..=3),
        dynamic_dim: rng.random_range(1..=3),
        embedding_dim: rng.random_range(1..=4),
        encoder_hidden: hidden(&mut rng),
        projection_hidden: hidden(&mut rng),
        latent_dim: rng.random_range(2..=4),
        initial_rho: rng.random_range(-2.0..1.0),
    };
    let mut params = ModelParams::init(variant, &config, &mut rng)?;
    params.tslm.rho.mapv_inplace(|_| rng.random_range(-2.0..1.0));
    params.gate.bias = rng.random_range(-1.0..1.0);
    params.attention.bias = rng.random_range(-1.0..1.0);
    params.for_each_param_mut(|name, p| {
        if name.ends_with(".bias") {
            p.iter_mut().for_each(|v| *v = rng.random_range(-0.5..0.5));
        }
    });

    let batch = rng.random_range(3..=6);
    let layout = params.layout;
    let mut x: Array2<f64> = Array2::from_shape_fn((batch, layout.width()), |_| rng.random_range(-2.0..2.0));
    x.slice_mut(s![.., layout.tslm_start()..]).mapv_inplace(|v| (v.abs() * 20.0).floor());
    let z = Array2::from_shape_fn((batch, config.embedding_dim), |_| rng.random_range(-1.5..1.5));
    let mut labels: Vec<f64> = (0..batch).map(|_| if rng.random::<bool>() { 1.0 } else { 0.0 }).collect();
    labels[0] = 1.0;
    labels[1] = 0.0;
    Ok((params, x, z, labels))
}

pub fn check(params: &ModelParams, inputs: Inputs<'_>, labels: &[f64], pos_weight: f64) -> Result<(f64, String)> {
    let cache = params.forward(inputs, None)?;
    let analytic = params.backward(&cache, labels, pos_weight)?.flatten();
    let names = params.flat_names();
    let base = params.flatten();
    let mut probe = params.clone();
    let mut worst = (0.0, String::new());
    for i in 0..base.len() {
        let mut flat = base.clone();
        flat[i] = base[i] + STEP;
        probe.set_flat(&flat)?;
        let up = loss(&probe, inputs, labels, pos_weight)?;
        flat[i] = base[i] - STEP;
        probe.set_flat(&flat)?;
        let down = loss(&probe, inputs, labels, pos_weight)?;
        let numeric = (up - down) / (2.0 * STEP);
        let err = relative_error(analytic[i], numeric);
        if err > worst.0 || worst.1.is_empty() {
            worst = (err, names[i].clone());
        }
    }
    Ok(worst)
}

pub fn run(variant: Variant, seed: u64) -> Result<GradcheckReport> {
    let (params, x, z, labels) = random_problem(variant, seed)?;
    let pos_weight = 1.0 + (seed % 3) as f64;
    let inputs = Inputs { ehr: Some(x.view()), cxr: Some(z.view()) };
    let (max_relative_error, worst_parameter) = check(&params, inputs, &labels, pos_weight)?;
    Ok(GradcheckReport { variant, seed, parameters: params.num_params(), max_relative_error, worst_parameter })
}

/// `configs` random problems per variant, seeds derived from `seed`.
pub fn run_all(seed: u64, configs: usize) -> Result<Vec<GradcheckReport>> {
    let mut out = Vec::with_capacity(configs * Variant::ALL.len());
    for variant in Variant::ALL {
        for k in 0..configs as u64 {
            out.push(run(variant, seed.wrapping_mul(1000).wrapping_add(k))?);
        }
    }
    Ok(out)
}

//! Mini-batch Adam training with early stopping on validation AUROC.

use std::collections::BTreeSet;

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::eval::auroc;
use crate::nn::{Dropout, Inputs, ModelConfig, ModelParams, Variant};

/// Probabilities are clamped to `[EPS, 1 - EPS]` inside the loss.
pub const LOSS_EPS: f64 = 1e-12;
const EVAL_CHUNK: usize = 4096;

pub fn bce_loss(p: &[f64], y: &[f64]) -> Result<f64> {
    if p.len() != y.len() {
        return Err(Error::ShapeMismatch(format!("{} probabilities for {} labels", p.len(), y.len())));
    }
    if p.is_empty() {
        return Ok(0.0);
    }
    let total: f64 = p
        .iter()
        .zip(y)
        .map(|(p, y)| {
            let p = p.clamp(LOSS_EPS, 1.0 - LOSS_EPS);
            -(y * p.ln() + (1.0 - y) * (1.0 - p).ln())
        })
        .sum();
    Ok(total / p.len() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// L2 penalty on weight matrices and vectors (not biases or decay rates).
    pub l2_coefficient: f64,
    pub dropout_rate: f64,
    pub seed: u64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    /// Multiplier on the positive-class loss terms; 1 means no reweighting.
    pub pos_weight: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            batch_size: 64,
            max_epochs: 30,
            patience: 5,
            l2_coefficient: 1e-4,
            dropout_rate: 0.1,
            seed: 0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            pos_weight: 1.0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning_rate {} must be positive", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be at least 1".into());
        }
        if self.patience == 0 {
            return bad("patience must be at least 1".into());
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be at least 1".into());
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return bad(format!("dropout_rate {} outside [0, 1)", self.dropout_rate));
        }
        if !(self.l2_coefficient >= 0.0) {
            return bad(format!("l2_coefficient {} must be non-negative", self.l2_coefficient));
        }
        if !(self.pos_weight > 0.0) {
            return bad(format!("pos_weight {} must be positive", self.pos_weight));
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) || !(self.adam_eps > 0.0) {
            return bad("Adam coefficients out of range".into());
        }
        Ok(())
    }
}

/// First and second moment estimates over the flattened parameters.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        AdamState { m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }
}

pub fn adam_step(params: &mut [f64], grads: &[f64], state: &mut AdamState, config: &TrainConfig) {
    assert_eq!(params.len(), grads.len());
    if state.m.len() != params.len() {
        *state = AdamState::new(params.len());
    }
    state.step += 1;
    let (b1, b2) = (config.adam_beta1, config.adam_beta2);
    let c1 = 1.0 - b1.powi(state.step as i32);
    let c2 = 1.0 - b2.powi(state.step as i32);
    for i in 0..params.len() {
        let g = grads[i];
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g;
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g * g;
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        params[i] -= config.learning_rate * m_hat / (v_hat.sqrt() + config.adam_eps);
    }
}

/// Rows of one split. Each row belongs to an encounter; modalities a model
/// does not use may be left out.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub encounter_ids: Vec<String>,
    pub ehr: Option<Array2<f64>>,
    pub cxr: Option<Array2<f64>>,
    pub labels: Vec<u8>,
}

impl Dataset {
    pub fn rows(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn inputs(&self) -> Inputs<'_> {
        Inputs { ehr: self.ehr.as_ref().map(|a| a.view()), cxr: self.cxr.as_ref().map(|a| a.view()) }
    }

    pub fn check(&self) -> Result<()> {
        let n = self.rows();
        let bad = [self.ehr.as_ref().map(|a| a.nrows()), self.cxr.as_ref().map(|a| a.nrows())]
            .into_iter()
            .flatten()
            .chain([self.encounter_ids.len()])
            .any(|r| r != n);
        if bad {
            return Err(Error::ShapeMismatch("dataset parts have different row counts".into()));
        }
        Ok(())
    }

    pub fn select(&self, rows: &[usize]) -> Dataset {
        Dataset {
            encounter_ids: rows.iter().map(|&r| self.encounter_ids[r].clone()).collect(),
            ehr: self.ehr.as_ref().map(|a| a.select(Axis(0), rows)),
            cxr: self.cxr.as_ref().map(|a| a.select(Axis(0), rows)),
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
        }
    }

    pub fn encounter_set(&self) -> BTreeSet<&str> {
        self.encounter_ids.iter().map(String::as_str).collect()
    }
}

/// Encounter-level disjointness of splits.
pub fn check_disjoint(splits: &[&Dataset]) -> Result<()> {
    let mut seen: BTreeSet<&str> = BTreeSet::new();
    for split in splits {
        let ids = split.encounter_set();
        if let Some(id) = ids.iter().find(|id| seen.contains(*id)) {
            return Err(Error::SplitLeakage(id.to_string()));
        }
        seen.extend(ids);
    }
    Ok(())
}

/// Inference over a dataset in fixed-size chunks.
pub fn predict_dataset(params: &ModelParams, data: &Dataset) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(data.rows());
    let mut start = 0;
    while start < data.rows() {
        let end = (start + EVAL_CHUNK).min(data.rows());
        let ehr = data.ehr.as_ref().map(|a| a.slice(ndarray::s![start..end, ..]));
        let cxr = data.cxr.as_ref().map(|a| a.slice(ndarray::s![start..end, ..]));
        let p = params.predict_batch(Inputs { ehr, cxr })?;
        out.extend(p.iter());
        start = end;
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_auroc: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_auroc: f64,
}

fn requires(variant: Variant, data: &Dataset, split: &'static str) -> Result<()> {
    if data.is_empty() {
        return Err(Error::EmptySplit(split));
    }
    data.check()?;
    if variant.uses_ehr() && data.ehr.is_none() {
        return Err(Error::MissingModality("ehr"));
    }
    if variant.uses_cxr() && data.cxr.is_none() {
        return Err(Error::MissingModality("cxr"));
    }
    let pos = data.labels.iter().filter(|l| **l == 1).count();
    if pos == 0 || pos == data.rows() {
        return Err(Error::SingleClass(split));
    }
    Ok(())
}

fn is_penalized(name: &str) -> bool {
    name.ends_with(".weight") || name == "attention.score"
}

/// Trains `variant` from a seeded initialization and returns the parameters
/// of the epoch with the best validation AUROC.
pub fn train(
    variant: Variant,
    model: &ModelConfig,
    train_data: &Dataset,
    val_data: &Dataset,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    model.validate()?;
    requires(variant, train_data, "training")?;
    requires(variant, val_data, "validation")?;
    check_disjoint(&[train_data, val_data])?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut params = ModelParams::init(variant, model, &mut rng)?;
    let mut penalty_mask = Vec::with_capacity(params.num_params());
    params.for_each_tensor(|name, _, p| penalty_mask.extend(std::iter::repeat_n(is_penalized(name), p.len())));
    let mut adam = AdamState::new(params.num_params());
    let mut flat = params.flatten();

    let mut order: Vec<usize> = (0..train_data.rows()).collect();
    let mut history = Vec::new();
    let mut best: Option<(usize, f64, ModelParams)> = None;
    let mut since_best = 0;
    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(config.batch_size) {
            let data = train_data.select(batch);
            let labels: Vec<f64> = data.labels.iter().map(|&l| f64::from(l)).collect();
            let dropout = (config.dropout_rate > 0.0).then(|| Dropout { rate: config.dropout_rate, rng: &mut rng });
            let cache = params.forward(data.inputs(), dropout)?;
            let loss = bce_loss(cache.probabilities.as_slice().expect("contiguous"), &labels)?;
            if !loss.is_finite() {
                return Err(Error::InvalidInput(format!("non-finite training loss in epoch {epoch}")));
            }
            loss_sum += loss * batch.len() as f64;
            let mut grads = params.backward(&cache, &labels, config.pos_weight)?.flatten();
            for ((g, w), penalize) in grads.iter_mut().zip(&flat).zip(&penalty_mask) {
                if *penalize {
                    *g += 2.0 * config.l2_coefficient * w;
                }
            }
            adam_step(&mut flat, &grads, &mut adam, config);
            params.set_flat(&flat)?;
        }
        if !params.is_finite() {
            return Err(Error::InvalidInput(format!("non-finite parameters after epoch {epoch}")));
        }
        let val_scores = predict_dataset(&params, val_data)?;
        let val_auroc = auroc(&val_scores, &val_data.labels)?;
        history.push(EpochRecord { epoch, train_loss: loss_sum / train_data.rows() as f64, val_auroc });
        if best.as_ref().is_none_or(|(_, b, _)| val_auroc > *b) {
            best = Some((epoch, val_auroc, params.clone()));
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= config.patience {
                break;
            }
        }
    }
    let (best_epoch, best_val_auroc, params) = best.expect("at least one epoch runs");
    Ok(TrainOutcome { params, history, best_epoch, best_val_auroc })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::write_checkpoint;
    use rand::Rng;

    #[test]
    fn loss_examples() {
        assert!(bce_loss(&[1.0, 0.0], &[1.0, 0.0]).unwrap() < 1e-11);
        assert!((bce_loss(&[0.5; 4], &[1.0, 0.0, 1.0, 0.0]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        let expected = (-(0.9f64.ln()) - 0.8f64.ln()) / 2.0;
        assert!((bce_loss(&[0.9, 0.2], &[1.0, 0.0]).unwrap() - expected).abs() < 1e-15);
        assert!((expected - 0.1643).abs() < 1e-4);
        assert!(bce_loss(&[0.5], &[1.0, 0.0]).is_err());
    }

    #[test]
    fn adam_examples() {
        let cfg = TrainConfig { learning_rate: 0.1, ..TrainConfig::default() };
        let mut p = vec![0.0];
        let mut s = AdamState::new(1);
        adam_step(&mut p, &[1.0], &mut s, &cfg);
        assert!((p[0] + 0.1).abs() < 1e-7);

        let mut q = vec![2.0, -1.0];
        let mut s = AdamState { m: vec![0.5, -0.5], v: vec![0.25, 0.25], step: 3 };
        adam_step(&mut q, &[0.0, 0.0], &mut s, &cfg);
        assert!(q[0] < 2.0 && q[1] > -1.0, "moments still move parameters");
        assert!((s.m[0] - 0.45).abs() < 1e-15 && (s.v[0] - 0.25 * 0.999).abs() < 1e-15);

        let mut z = vec![1.0, 2.0];
        let mut s = AdamState::new(2);
        adam_step(&mut z, &[0.0, 0.0], &mut s, &cfg);
        assert_eq!(z, vec![1.0, 2.0]);
    }

    fn toy(n: usize, seed: u64, prefix: &str, separable: bool) -> Dataset {
        let cfg = small_model();
        let width = cfg.layout().width();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = Array2::zeros((n, width));
        let mut labels = Vec::new();
        for r in 0..n {
            let y = r % 3 == 0;
            for c in 0..width {
                x[[r, c]] = rng.random_range(-1.0..1.0);
            }
            if separable {
                x[[r, 0]] = if y { 1.5 } else { -1.5 };
            }
            for c in cfg.layout().tslm_start()..width {
                x[[r, c]] = 1.0;
            }
            labels.push(u8::from(y));
        }
        Dataset { encounter_ids: (0..n).map(|r| format!("{prefix}{}", r / 4)).collect(), ehr: Some(x), cxr: None, labels }
    }

    fn small_model() -> ModelConfig {
        ModelConfig {
            static_dim: 3,
            dynamic_dim: 2,
            embedding_dim: 2,
            encoder_hidden: vec![8],
            projection_hidden: vec![],
            latent_dim: 4,
            initial_rho: -1.0,
        }
    }

    #[test]
    fn separable_toy_is_learned() {
        let tr = toy(120, 1, "t", true);
        let va = toy(60, 2, "v", true);
        let cfg = TrainConfig { learning_rate: 0.01, batch_size: 16, max_epochs: 200, patience: 200, seed: 3, ..Default::default() };
        let out = train(Variant::EhrOnly, &small_model(), &tr, &va, &cfg).unwrap();
        let scores = predict_dataset(&out.params, &tr).unwrap();
        assert!(auroc(&scores, &tr.labels).unwrap() >= 0.99);
        assert!(out.history.iter().all(|h| h.val_auroc <= out.best_val_auroc));
    }

    #[test]
    fn frozen_validation_stops_early() {
        let tr = toy(60, 1, "t", true);
        let mut va = toy(30, 2, "v", false);
        va.ehr.as_mut().unwrap().fill(0.5);
        let cfg = TrainConfig { patience: 1, max_epochs: 50, ..Default::default() };
        let out = train(Variant::EhrOnly, &small_model(), &tr, &va, &cfg).unwrap();
        assert_eq!(out.best_epoch, 1);
        assert!(out.history.len() <= out.best_epoch + 2);
    }

    #[test]
    fn training_is_deterministic() {
        let tr = toy(60, 1, "t", false);
        let va = toy(30, 2, "v", false);
        let cfg = TrainConfig { max_epochs: 4, ..Default::default() };
        let a = train(Variant::EhrOnly, &small_model(), &tr, &va, &cfg).unwrap();
        let b = train(Variant::EhrOnly, &small_model(), &tr, &va, &cfg).unwrap();
        assert_eq!(write_checkpoint(&a.params), write_checkpoint(&b.params));
        assert_eq!(a.history, b.history);
    }

    #[test]
    fn split_errors() {
        let tr = toy(30, 1, "t", false);
        let va = toy(30, 2, "v", false);
        let cfg = TrainConfig { max_epochs: 1, ..Default::default() };
        let m = small_model();
        assert!(matches!(train(Variant::EhrOnly, &m, &tr, &toy(30, 3, "t", false), &cfg), Err(Error::SplitLeakage(_))));
        assert!(matches!(train(Variant::EhrOnly, &m, &Dataset::default(), &va, &cfg), Err(Error::EmptySplit("training"))));
        let mut one = tr.clone();
        one.labels.fill(0);
        assert!(matches!(train(Variant::EhrOnly, &m, &one, &va, &cfg), Err(Error::SingleClass("training"))));
        assert!(matches!(train(Variant::Gated, &m, &tr, &va, &cfg), Err(Error::MissingModality("cxr"))));
        let bad = TrainConfig { learning_rate: 0.0, ..cfg };
        assert!(matches!(train(Variant::EhrOnly, &m, &tr, &va, &bad), Err(Error::InvalidConfig(_))));
    }
}

//! Seeded random hyperparameter search.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::Path;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{ModelConfig, Variant};
use crate::train::{train, Dataset, TrainConfig};

pub const TRIAL_LOG_HEADER: &str = "trial_id,learning_rate,batch_size,hidden_dim,l2_coefficient,dropout_rate,val_auroc,wall_seconds";

/// Inclusive ranges. Learning rate, batch size and L2 coefficient are drawn
/// log-uniformly (L2 uniformly when its lower bound is zero); hidden width and
/// dropout uniformly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SearchSpace {
    pub learning_rate: [f64; 2],
    pub batch_size: [usize; 2],
    /// Width applied to every hidden layer of the encoder and projection.
    pub hidden_dim: [usize; 2],
    pub l2_coefficient: [f64; 2],
    pub dropout_rate: [f64; 2],
    pub trials: usize,
    pub seed: u64,
}

impl Default for SearchSpace {
    fn default() -> Self {
        SearchSpace {
            learning_rate: [3e-4, 3e-3],
            batch_size: [32, 256],
            hidden_dim: [16, 64],
            l2_coefficient: [1e-6, 1e-3],
            dropout_rate: [0.0, 0.3],
            trials: 8,
            seed: 0,
        }
    }
}

impl SearchSpace {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("search space: {m}")));
        if self.trials == 0 {
            return bad("trial count must be at least 1");
        }
        let [lr0, lr1] = self.learning_rate;
        if !(lr0 > 0.0 && lr0 <= lr1 && lr1.is_finite()) {
            return bad("learning_rate range must be positive and ordered");
        }
        let [b0, b1] = self.batch_size;
        if b0 == 0 || b0 > b1 {
            return bad("batch_size range must be positive and ordered");
        }
        let [h0, h1] = self.hidden_dim;
        if h0 == 0 || h0 > h1 {
            return bad("hidden_dim range must be positive and ordered");
        }
        let [l0, l1] = self.l2_coefficient;
        if !(l0 >= 0.0 && l0 <= l1 && l1.is_finite()) {
            return bad("l2_coefficient range must be non-negative and ordered");
        }
        let [d0, d1] = self.dropout_rate;
        if !(d0 >= 0.0 && d0 <= d1 && d1 < 1.0) {
            return bad("dropout_rate range must lie in [0, 1) and be ordered");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialParams {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub hidden_dim: usize,
    pub l2_coefficient: f64,
    pub dropout_rate: f64,
}

fn log_uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo.ln()..=hi.ln()).exp()
    }
}

fn uniform(rng: &mut ChaCha8Rng, [lo, hi]: [f64; 2]) -> f64 {
    if lo == hi {
        lo
    } else {
        rng.random_range(lo..=hi)
    }
}

/// The sequence of sampled trial settings for a space.
pub fn sample_trials(space: &SearchSpace) -> Result<Vec<TrialParams>> {
    space.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(space.seed);
    Ok((0..space.trials)
        .map(|_| {
            let learning_rate = log_uniform(&mut rng, space.learning_rate);
            let [b0, b1] = space.batch_size;
            let batch_size = (log_uniform(&mut rng, [b0 as f64, b1 as f64]).round() as usize).clamp(b0, b1);
            let [h0, h1] = space.hidden_dim;
            let hidden_dim = rng.random_range(h0..=h1);
            let l2_coefficient = if space.l2_coefficient[0] > 0.0 {
                log_uniform(&mut rng, space.l2_coefficient)
            } else {
                uniform(&mut rng, space.l2_coefficient)
            };
            let dropout_rate = uniform(&mut rng, space.dropout_rate);
            TrialParams { learning_rate, batch_size, hidden_dim, l2_coefficient, dropout_rate }
        })
        .collect())
}

impl TrialParams {
    pub fn apply(&self, model: &ModelConfig, train: &TrainConfig) -> (ModelConfig, TrainConfig) {
        let model = ModelConfig {
            encoder_hidden: vec![self.hidden_dim; model.encoder_hidden.len()],
            projection_hidden: vec![self.hidden_dim; model.projection_hidden.len()],
            ..model.clone()
        };
        let train = TrainConfig {
            learning_rate: self.learning_rate,
            batch_size: self.batch_size,
            l2_coefficient: self.l2_coefficient,
            dropout_rate: self.dropout_rate,
            ..train.clone()
        };
        (model, train)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub trial_id: usize,
    pub params: TrialParams,
    pub val_auroc: f64,
    pub wall_seconds: f64,
}

impl Trial {
    fn csv_row(&self) -> String {
        let p = &self.params;
        format!(
            "{},{},{},{},{},{},{},{:.3}",
            self.trial_id,
            p.learning_rate,
            p.batch_size,
            p.hidden_dim,
            p.l2_coefficient,
            p.dropout_rate,
            self.val_auroc,
            self.wall_seconds
        )
    }
}

#[derive(Debug, Clone)]
pub struct SearchOutcome {
    pub trials: Vec<Trial>,
    pub best: Trial,
    pub best_model: ModelConfig,
    pub best_train: TrainConfig,
}

/// Appends one trial to a CSV log, writing the header for a new file.
pub fn append_trial(path: &Path, trial: &Trial) -> Result<()> {
    let fresh = !path.exists() || std::fs::metadata(path)?.len() == 0;
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if fresh {
        writeln!(f, "{TRIAL_LOG_HEADER}")?;
    }
    writeln!(f, "{}", trial.csv_row())?;
    Ok(())
}

/// Trains one model per sampled setting and keeps the best by validation
/// AUROC (earliest trial on ties).
pub fn random_search(
    space: &SearchSpace,
    variant: Variant,
    model: &ModelConfig,
    base: &TrainConfig,
    train_data: &Dataset,
    val_data: &Dataset,
    log: Option<&Path>,
) -> Result<SearchOutcome> {
    let settings = sample_trials(space)?;
    let mut trials: Vec<Trial> = Vec::with_capacity(settings.len());
    let mut best: Option<(usize, ModelConfig, TrainConfig)> = None;
    for (trial_id, params) in settings.into_iter().enumerate() {
        let (m, t) = params.apply(model, base);
        let started = Instant::now();
        let outcome = train(variant, &m, train_data, val_data, &t)?;
        let trial = Trial { trial_id, params, val_auroc: outcome.best_val_auroc, wall_seconds: started.elapsed().as_secs_f64() };
        if let Some(path) = log {
            append_trial(path, &trial)?;
        }
        if best.as_ref().is_none_or(|(b, _, _)| trial.val_auroc > trials[*b].val_auroc) {
            best = Some((trial_id, m, t));
        }
        trials.push(trial);
    }
    let (idx, best_model, best_train) = best.expect("at least one trial");
    Ok(SearchOutcome { best: trials[idx].clone(), trials, best_model, best_train })
}

//! In-memory pipeline from encounters to trained and evaluated models.
//!
//! Encounters are filtered by the inclusion rules, split at encounter level,
//! turned into hourly rows, paired with radiographs (rows without one are
//! dropped for every variant so all models see the same rows), imputed and
//! standardized with training-split statistics.

use std::collections::{BTreeMap, BTreeSet};

use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{apply_inclusion_criteria, prediction_timestamps_with_onset, Encounter, ExclusionReason};
use crate::cxr::{self, CxrEmbeddingTable};
use crate::error::{Error, Result};
use crate::eval::{select_threshold, EvalReport, ScoredPoint};
use crate::features::{impute, raw_features, ImputationStats, RawFeatureMatrix, Standardizer};
use crate::nn::{ModelConfig, ModelParams, Variant};
use crate::schema::{default_criteria, Criterion, COLUMN_COUNT};
use crate::train::{predict_dataset, train, Dataset, TrainConfig, TrainOutcome};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SplitConfig {
    /// Fraction of included encounters held out for testing.
    pub test_fraction: f64,
    /// Fraction of the remaining development encounters used for validation.
    pub validation_fraction: f64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig { test_fraction: 0.2, validation_fraction: 0.2 }
    }
}

impl SplitConfig {
    pub fn validate(&self) -> Result<()> {
        for (name, f) in [("test_fraction", self.test_fraction), ("validation_fraction", self.validation_fraction)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(Error::InvalidConfig(format!("{name} {f} outside (0, 1)")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SplitName {
    Train,
    Validation,
    Test,
}

impl SplitName {
    pub const ALL: [SplitName; 3] = [SplitName::Train, SplitName::Validation, SplitName::Test];

    pub fn name(self) -> &'static str {
        match self {
            SplitName::Train => "train",
            SplitName::Validation => "validation",
            SplitName::Test => "test",
        }
    }
}

/// Encounter-level split, stratified by whether ventilation occurs.
pub fn split_encounters(encounters: &[&Encounter], seed: u64, config: &SplitConfig) -> Result<[Vec<String>; 3]> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: [Vec<String>; 3] = Default::default();
    for ventilated in [true, false] {
        let mut ids: Vec<String> =
            encounters.iter().filter(|e| e.t0().is_some() == ventilated).map(|e| e.encounter_id.clone()).collect();
        ids.sort();
        ids.shuffle(&mut rng);
        let n_test = (ids.len() as f64 * config.test_fraction).round() as usize;
        let n_val = ((ids.len() - n_test) as f64 * config.validation_fraction).round() as usize;
        out[2].extend(ids.drain(..n_test));
        out[1].extend(ids.drain(..n_val));
        out[0].extend(ids);
    }
    for ids in &mut out {
        ids.sort();
    }
    Ok(out)
}

/// Identity and provenance of one retained row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RowIndex {
    pub encounter_id: String,
    pub timestamp: f64,
    pub t0: Option<f64>,
    pub label: u8,
    pub study_id: String,
    pub embedding_age_hours: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub name: SplitName,
    pub index: Vec<RowIndex>,
    /// Standardized feature rows.
    pub ehr: Array2<f64>,
    /// Embeddings of the paired radiographs, when the table was available.
    pub cxr: Option<Array2<f64>>,
}

impl SplitData {
    pub fn rows(&self) -> usize {
        self.index.len()
    }

    pub fn labels(&self) -> Vec<u8> {
        self.index.iter().map(|r| r.label).collect()
    }

    /// Rows with only the modalities `variant` consumes.
    pub fn dataset(&self, variant: Variant) -> Result<Dataset> {
        let cxr = if variant.uses_cxr() {
            Some(self.cxr.clone().ok_or(Error::MissingModality("cxr"))?)
        } else {
            None
        };
        Ok(Dataset {
            encounter_ids: self.index.iter().map(|r| r.encounter_id.clone()).collect(),
            ehr: variant.uses_ehr().then(|| self.ehr.clone()),
            cxr,
            labels: self.labels(),
        })
    }

    pub fn scored_points(&self, scores: &[f64]) -> Vec<ScoredPoint> {
        self.index
            .iter()
            .zip(scores)
            .map(|(r, s)| ScoredPoint { encounter_id: r.encounter_id.clone(), timestamp: r.timestamp, score: *s, label: r.label })
            .collect()
    }

    pub fn onsets(&self) -> BTreeMap<String, Option<f64>> {
        self.index.iter().map(|r| (r.encounter_id.clone(), r.t0)).collect()
    }
}

/// Where encounters and rows went. An excluded encounter is counted under
/// each rule it violates.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Accounting {
    pub encounters: usize,
    pub encounters_included: usize,
    pub encounters_excluded: usize,
    pub exclusions_by_reason: BTreeMap<ExclusionReason, usize>,
    pub rows_candidate: usize,
    pub rows_dropped_inclusion: usize,
    pub rows_dropped_unmatched_cxr: usize,
    pub rows_retained: usize,
    pub rows_by_split: BTreeMap<SplitName, usize>,
    pub positive_rows_by_split: BTreeMap<SplitName, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Featurized {
    pub train: SplitData,
    pub validation: SplitData,
    pub test: SplitData,
    pub imputation: ImputationStats,
    pub standardizer: Standardizer,
    pub accounting: Accounting,
    pub embedding_dim: Option<usize>,
}

impl Featurized {
    pub fn split(&self, name: SplitName) -> &SplitData {
        match name {
            SplitName::Train => &self.train,
            SplitName::Validation => &self.validation,
            SplitName::Test => &self.test,
        }
    }
}

struct Pending {
    raw: RawFeatureMatrix,
    index: Vec<RowIndex>,
    keys: Vec<String>,
}

fn encounter_rows(e: &Encounter, table: Option<&CxrEmbeddingTable>, criteria: &[Criterion]) -> Result<(usize, Pending)> {
    let t0 = e.t0();
    let timestamps = prediction_timestamps_with_onset(e, t0);
    let aligned = match table {
        Some(table) => cxr::align(e, &timestamps, table)?,
        None => timestamps
            .iter()
            .enumerate()
            .filter_map(|(row, &t)| {
                cxr::match_study(&e.cxr_studies, t).map(|s| cxr::AlignedSample {
                    encounter_id: e.encounter_id.clone(),
                    timestamp: t,
                    row,
                    study_id: s.study_id.clone(),
                    embedding_key: s.embedding_key.clone(),
                    embedding_age_hours: t - s.acquired_at,
                })
            })
            .collect(),
    };
    let kept: Vec<f64> = aligned.iter().map(|a| a.timestamp).collect();
    let raw = raw_features(e, &kept, t0, criteria);
    let index = aligned
        .iter()
        .zip(&raw.labels)
        .map(|(a, &label)| RowIndex {
            encounter_id: e.encounter_id.clone(),
            timestamp: a.timestamp,
            t0,
            label,
            study_id: a.study_id.clone(),
            embedding_age_hours: a.embedding_age_hours,
        })
        .collect();
    let keys = aligned.into_iter().map(|a| a.embedding_key).collect();
    Ok((timestamps.len(), Pending { raw, index, keys }))
}

/// Builds standardized, radiograph-aligned rows for the three splits.
///
/// Without an embedding table, rows are still restricted to those with a
/// qualifying radiograph so that EHR-only results stay comparable.
pub fn featurize(
    encounters: &[Encounter],
    table: Option<&CxrEmbeddingTable>,
    seed: u64,
    split: &SplitConfig,
) -> Result<Featurized> {
    let criteria = default_criteria();
    let mut accounting = Accounting { encounters: encounters.len(), ..Accounting::default() };
    let mut included = Vec::new();
    for e in encounters {
        e.validate()?;
        let decision = apply_inclusion_criteria(e, f64::INFINITY);
        if decision.included {
            included.push(e);
        } else {
            accounting.encounters_excluded += 1;
            for r in decision.reasons {
                *accounting.exclusions_by_reason.entry(r).or_default() += 1;
            }
            let rows = prediction_timestamps_with_onset(e, e.t0()).len();
            accounting.rows_candidate += rows;
            accounting.rows_dropped_inclusion += rows;
        }
    }
    accounting.encounters_included = included.len();

    let ids = split_encounters(&included, seed, split)?;
    let membership: BTreeMap<&str, usize> =
        ids.iter().enumerate().flat_map(|(k, v)| v.iter().map(move |id| (id.as_str(), k))).collect();

    let mut pending: [Vec<Pending>; 3] = Default::default();
    let mut sorted = included.clone();
    sorted.sort_by(|a, b| a.encounter_id.cmp(&b.encounter_id));
    let mut seen = BTreeSet::new();
    for e in sorted {
        if !seen.insert(e.encounter_id.as_str()) {
            return Err(Error::InvalidEncounter { id: e.encounter_id.clone(), reason: "duplicate encounter id".into() });
        }
        let (candidates, p) = encounter_rows(e, table, &criteria)?;
        accounting.rows_candidate += candidates;
        accounting.rows_dropped_unmatched_cxr += candidates - p.index.len();
        accounting.rows_retained += p.index.len();
        pending[membership[e.encounter_id.as_str()]].push(p);
    }

    let imputation = ImputationStats::fit(pending[0].iter().map(|p| &p.raw));
    let mut matrices: [Vec<_>; 3] = Default::default();
    let mut indices: [Vec<RowIndex>; 3] = Default::default();
    let mut keys: [Vec<String>; 3] = Default::default();
    for (k, list) in pending.into_iter().enumerate() {
        for p in list {
            matrices[k].push(impute(p.raw, &imputation)?);
            indices[k].extend(p.index);
            keys[k].extend(p.keys);
        }
    }
    let standardizer = Standardizer::fit(&matrices[0]);

    let mut splits = Vec::with_capacity(3);
    for (k, name) in SplitName::ALL.into_iter().enumerate() {
        let views: Vec<_> = matrices[k].iter().map(|m| m.values.view()).collect();
        let mut ehr = if views.is_empty() {
            Array2::zeros((0, COLUMN_COUNT))
        } else {
            ndarray::concatenate(Axis(0), &views).map_err(|e| Error::ShapeMismatch(e.to_string()))?
        };
        standardizer.apply(&mut ehr);
        let cxr = table
            .map(|t| -> Result<Array2<f64>> {
                let mut z = Array2::zeros((keys[k].len(), t.dim));
                for (r, key) in keys[k].iter().enumerate() {
                    let v = t.get(key).ok_or_else(|| Error::UnresolvedEmbedding(key.clone()))?;
                    z.row_mut(r).iter_mut().zip(v).for_each(|(dst, src)| *dst = f64::from(*src));
                }
                Ok(z)
            })
            .transpose()?;
        let index = std::mem::take(&mut indices[k]);
        accounting.rows_by_split.insert(name, index.len());
        accounting.positive_rows_by_split.insert(name, index.iter().filter(|r| r.label == 1).count());
        splits.push(SplitData { name, index, ehr, cxr });
    }
    let mut splits = splits.into_iter();
    Ok(Featurized {
        train: splits.next().expect("three splits"),
        validation: splits.next().expect("three splits"),
        test: splits.next().expect("three splits"),
        imputation,
        standardizer,
        accounting,
        embedding_dim: table.map(|t| t.dim),
    })
}

/// Model sizes adjusted to the data: standard layout and the embedding width
/// of the table when one is present.
pub fn fit_model_config(model: &ModelConfig, embedding_dim: Option<usize>) -> ModelConfig {
    ModelConfig { embedding_dim: embedding_dim.unwrap_or(model.embedding_dim), ..model.clone() }
}

/// Operating threshold chosen on validation data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdRecord {
    pub variant: Variant,
    pub source: String,
    pub target_sensitivity: f64,
    pub threshold: f64,
    pub validation_auroc: f64,
}

pub fn choose_threshold(
    params: &ModelParams,
    validation: &SplitData,
    target_sensitivity: f64,
) -> Result<ThresholdRecord> {
    let data = validation.dataset(params.variant)?;
    let scores = predict_dataset(params, &data)?;
    let threshold = select_threshold(&scores, &data.labels, target_sensitivity)?;
    Ok(ThresholdRecord {
        variant: params.variant,
        source: SplitName::Validation.name().to_string(),
        target_sensitivity,
        threshold,
        validation_auroc: crate::eval::auroc(&scores, &data.labels)?,
    })
}

/// Scores the test split at a frozen threshold.
pub fn evaluate(params: &ModelParams, test: &SplitData, threshold: &ThresholdRecord, name: &str) -> Result<EvalReport> {
    if threshold.variant != params.variant || threshold.source != SplitName::Validation.name() {
        return Err(Error::MissingThreshold(format!(
            "threshold for {} from {} does not belong to a {} model",
            threshold.variant, threshold.source, params.variant
        )));
    }
    let data = test.dataset(params.variant)?;
    let scores = predict_dataset(params, &data)?;
    EvalReport::for_scores(name, &test.scored_points(&scores), &test.onsets(), threshold.threshold, threshold.target_sensitivity)
}

pub struct ExperimentResult {
    pub outcome: TrainOutcome,
    pub threshold: ThresholdRecord,
    pub report: EvalReport,
}

/// Train on the training split, freeze a threshold on validation, evaluate on test.
pub fn run_variant(
    data: &Featurized,
    variant: Variant,
    model: &ModelConfig,
    config: &TrainConfig,
    target_sensitivity: f64,
) -> Result<ExperimentResult> {
    let model = fit_model_config(model, data.embedding_dim);
    let outcome = train(variant, &model, &data.train.dataset(variant)?, &data.validation.dataset(variant)?, config)?;
    let threshold = choose_threshold(&outcome.params, &data.validation, target_sensitivity)?;
    let report = evaluate(&outcome.params, &data.test, &threshold, variant.label())?;
    Ok(ExperimentResult { outcome, threshold, report })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{generate, SynthConfig};

    fn small() -> (Vec<Encounter>, CxrEmbeddingTable) {
        generate(&SynthConfig { seed: 3, n_encounters: 150, event_rate: 0.2, ..SynthConfig::default() }).unwrap()
    }

    #[test]
    fn splits_are_disjoint_and_complete() {
        let (encounters, _) = small();
        let refs: Vec<&Encounter> = encounters.iter().collect();
        let [tr, va, te] = split_encounters(&refs, 5, &SplitConfig::default()).unwrap();
        let all: BTreeSet<&String> = tr.iter().chain(&va).chain(&te).collect();
        assert_eq!(all.len(), encounters.len());
        assert_eq!(tr.len() + va.len() + te.len(), encounters.len());
        assert!((te.len() as f64 - 30.0).abs() <= 2.0);
    }

    #[test]
    fn accounting_adds_up() {
        let (encounters, table) = small();
        let f = featurize(&encounters, Some(&table), 1, &SplitConfig::default()).unwrap();
        let a = &f.accounting;
        assert_eq!(a.encounters_included + a.encounters_excluded, a.encounters);
        assert_eq!(a.rows_retained + a.rows_dropped_inclusion + a.rows_dropped_unmatched_cxr, a.rows_candidate);
        assert_eq!(a.rows_by_split.values().sum::<usize>(), a.rows_retained);
        for s in SplitName::ALL {
            let d = f.split(s);
            assert_eq!(d.ehr.nrows(), d.rows());
            assert_eq!(d.cxr.as_ref().unwrap().nrows(), d.rows());
            assert!(d.ehr.iter().all(|v| v.is_finite()));
        }
        let without = featurize(&encounters, None, 1, &SplitConfig::default()).unwrap();
        assert_eq!(without.train.ehr, f.train.ehr);
        assert!(without.train.cxr.is_none());
        assert!(matches!(without.train.dataset(Variant::Gated), Err(Error::MissingModality("cxr"))));
        assert!(without.train.dataset(Variant::EhrOnly).is_ok());
    }
}

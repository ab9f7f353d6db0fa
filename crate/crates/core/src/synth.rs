//! Seeded synthetic cohorts.
//!
//! Each encounter carries a hidden context that decides where pulmonary
//! deterioration shows up. In the imaging context a ventilated patient's risk
//! appears only as a displacement of the radiograph embeddings along a fixed
//! direction, while the vitals and labs carry label-independent episodes of
//! the same shape. In the EHR context it is the other way round: vitals and
//! labs drift before onset and the radiographs carry chronic, label-independent
//! displacements. Comorbidity flag 0 marks the EHR context (with 5% noise), so
//! a model that can condition its fusion on the patient can use whichever
//! modality is trustworthy.
//!
//! All randomness comes from ChaCha8 streams: one master stream seeded with
//! `seed`, and one child stream per encounter seeded from the master.

use rand::seq::SliceRandom;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::cohort::{CxrSource, CxrStudy, Encounter, MedicationEvent, ObservationSeries};
use crate::cxr::CxrEmbeddingTable;
use crate::error::{Error, Result};
use crate::schema::{self, N_COMORBIDITIES, N_DEMOGRAPHICS, N_DYNAMIC, N_MEDICATION_CATEGORIES};

pub const ENCODER_NAME: &str = "synthetic";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_encounters: usize,
    pub event_rate: f64,
    /// Probability that any scheduled measurement is not recorded.
    pub dynamic_missing_rate: f64,
    pub embedding_dim: usize,
    /// Probability that an encounter's deterioration is visible only on imaging.
    pub context_gate_prob: f64,
    /// Longest span after admission at which onset or discharge is simulated.
    pub horizon_hours: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            seed: 1,
            n_encounters: 1000,
            event_rate: 0.08,
            dynamic_missing_rate: 0.1,
            embedding_dim: 32,
            context_gate_prob: 0.5,
            horizon_hours: 36,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_encounters == 0 {
            return bad("n_encounters must be positive".into());
        }
        if !(self.event_rate > 0.0 && self.event_rate < 1.0) {
            return bad(format!("event_rate {} outside (0, 1)", self.event_rate));
        }
        if !(0.0..1.0).contains(&self.dynamic_missing_rate) {
            return bad(format!("dynamic_missing_rate {} outside [0, 1)", self.dynamic_missing_rate));
        }
        if self.embedding_dim < 2 {
            return bad(format!("embedding_dim {} below 2", self.embedding_dim));
        }
        if !(0.0..=1.0).contains(&self.context_gate_prob) {
            return bad(format!("context_gate_prob {} outside [0, 1]", self.context_gate_prob));
        }
        if self.horizon_hours < 12 {
            return bad(format!("horizon_hours {} below 12", self.horizon_hours));
        }
        Ok(())
    }
}

struct VarSpec {
    mean: f64,
    sd: f64,
    interval: f64,
    lo: f64,
    hi: f64,
    /// Shift at full deterioration, in standard deviations.
    effect: f64,
}

const fn v(mean: f64, sd: f64, interval: f64, lo: f64, hi: f64, effect: f64) -> VarSpec {
    VarSpec { mean, sd, interval, lo, hi, effect }
}

// Indexed like schema::DYNAMIC_VARIABLES.
const VARS: [VarSpec; N_DYNAMIC] = [
    v(85.0, 12.0, 1.0, 30.0, 220.0, 1.5),      // heart_rate
    v(120.0, 15.0, 1.0, 50.0, 250.0, -0.3),    // sbp
    v(65.0, 10.0, 1.0, 20.0, 150.0, 0.0),      // dbp
    v(85.0, 10.0, 1.0, 30.0, 180.0, -0.3),     // map
    v(18.0, 3.0, 1.0, 4.0, 60.0, 2.0),         // resp_rate
    v(96.0, 1.5, 1.0, 50.0, 100.0, -2.0),      // spo2
    v(37.0, 0.5, 1.0, 33.0, 42.0, 0.3),        // temperature
    v(14.0, 1.0, 1.0, 3.0, 15.0, 0.0),         // gcs
    v(0.35, 0.08, 1.0, 0.21, 1.0, 2.0),        // fio2
    v(3.0, 1.5, 1.0, 0.0, 15.0, 1.5),          // o2_flow
    v(80.0, 30.0, 1.0, 0.0, 500.0, 0.0),       // urine_output
    v(80.0, 15.0, 24.0, 30.0, 250.0, 0.0),     // weight
    v(90.0, 15.0, 6.0, 30.0, 500.0, -1.5),     // pao2
    v(40.0, 5.0, 6.0, 15.0, 120.0, 1.0),       // paco2
    v(7.40, 0.04, 6.0, 6.8, 7.8, -1.0),        // ph
    v(24.0, 3.0, 6.0, 5.0, 50.0, 0.0),         // hco3
    v(0.0, 3.0, 6.0, -30.0, 30.0, 0.0),        // base_excess
    v(1.5, 0.6, 6.0, 0.2, 20.0, 1.0),          // lactate
    v(9.0, 3.0, 12.0, 0.1, 80.0, 0.0),         // wbc
    v(11.0, 1.5, 12.0, 3.0, 20.0, 0.0),        // hemoglobin
    v(33.0, 4.5, 12.0, 10.0, 60.0, 0.0),       // hematocrit
    v(220.0, 70.0, 12.0, 5.0, 1000.0, 0.0),    // platelets
    v(139.0, 3.0, 12.0, 110.0, 170.0, 0.0),    // sodium
    v(4.1, 0.4, 12.0, 2.0, 8.0, 0.0),          // potassium
    v(103.0, 3.0, 12.0, 80.0, 130.0, 0.0),     // chloride
    v(20.0, 8.0, 12.0, 2.0, 150.0, 0.0),       // bun
    v(1.0, 0.4, 12.0, 0.1, 15.0, 0.0),         // creatinine
    v(130.0, 30.0, 6.0, 40.0, 600.0, 0.0),     // glucose
    v(8.8, 0.5, 12.0, 5.0, 13.0, 0.0),         // calcium
    v(2.0, 0.2, 12.0, 0.8, 4.0, 0.0),          // magnesium
    v(3.5, 0.6, 12.0, 1.0, 9.0, 0.0),          // phosphate
    v(0.9, 0.5, 24.0, 0.1, 30.0, 0.0),         // bilirubin
    v(35.0, 15.0, 24.0, 5.0, 2000.0, 0.0),     // ast
    v(30.0, 15.0, 24.0, 5.0, 2000.0, 0.0),     // alt
    v(90.0, 30.0, 24.0, 20.0, 800.0, 0.0),     // alk_phos
    v(3.3, 0.5, 24.0, 1.0, 5.5, 0.0),          // albumin
    v(6.3, 0.6, 24.0, 3.0, 9.0, 0.0),          // total_protein
    v(1.2, 0.2, 24.0, 0.8, 8.0, 0.0),          // inr
    v(32.0, 5.0, 24.0, 18.0, 150.0, 0.0),      // ptt
    v(350.0, 80.0, 48.0, 50.0, 900.0, 0.0),    // fibrinogen
    v(0.05, 0.03, 48.0, 0.0, 50.0, 0.0),       // troponin
    v(200.0, 100.0, 48.0, 5.0, 5000.0, 0.0),   // bnp
    v(40.0, 30.0, 48.0, 0.1, 400.0, 0.0),      // crp
    v(0.5, 0.4, 48.0, 0.01, 100.0, 0.0),       // procalcitonin
    v(250.0, 80.0, 48.0, 80.0, 3000.0, 0.0),   // ldh
    v(150.0, 80.0, 48.0, 20.0, 10000.0, 0.0),  // ck
    v(12.0, 2.5, 12.0, 3.0, 30.0, 0.0),        // anion_gap
    v(70.0, 8.0, 24.0, 20.0, 98.0, 0.0),       // neutrophils
    v(18.0, 6.0, 24.0, 1.0, 70.0, 0.0),        // lymphocytes
    v(1.15, 0.06, 24.0, 0.8, 1.5, 0.0),        // ionized_calcium
];

/// Hours over which deterioration ramps from nothing to full strength.
const RAMP_HOURS: f64 = 6.0;
/// Embedding displacement at full deterioration, in units of the
/// per-coordinate patient spread.
const IMAGING_SHIFT: f64 = 3.5;
const MARKER_NOISE: f64 = 0.05;
const DISTRACTOR_PROB: f64 = 0.5;

fn normal(rng: &mut impl Rng) -> f64 {
    rng.sample(StandardNormal)
}

fn round_to(x: f64, places: i32) -> f64 {
    let f = 10f64.powi(places);
    (x * f).round() / f
}

fn ramp(t: f64, start: f64) -> f64 {
    ((t - start) / RAMP_HOURS).clamp(0.0, 1.0)
}

/// Label-independent episode shaped like deterioration: ramps up at `start`
/// and stops after `length` hours.
#[derive(Clone, Copy)]
struct Episode {
    start: f64,
    length: f64,
    strength: f64,
}

impl Episode {
    fn at(&self, t: f64) -> f64 {
        if t > self.start + self.length {
            0.0
        } else {
            self.strength * ramp(t, self.start)
        }
    }
}

/// Ground truth kept alongside a generated encounter for tests and reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncounterTruth {
    pub encounter_id: String,
    pub ventilated: bool,
    pub imaging_context: bool,
}

pub struct SynthCohort {
    pub encounters: Vec<Encounter>,
    pub embeddings: CxrEmbeddingTable,
    pub truth: Vec<EncounterTruth>,
}

pub fn generate(config: &SynthConfig) -> Result<(Vec<Encounter>, CxrEmbeddingTable)> {
    let cohort = generate_with_truth(config)?;
    Ok((cohort.encounters, cohort.embeddings))
}

pub fn generate_with_truth(config: &SynthConfig) -> Result<SynthCohort> {
    config.validate()?;
    let mut master = ChaCha8Rng::seed_from_u64(config.seed);
    let dim = config.embedding_dim;

    let mut direction: Vec<f64> = (0..dim).map(|_| normal(&mut master)).collect();
    let norm = direction.iter().map(|x| x * x).sum::<f64>().sqrt();
    direction.iter_mut().for_each(|x| *x /= norm);

    let n = config.n_encounters;
    let n_vent = ((config.event_rate * n as f64).round() as usize).clamp(1, n);
    let mut ventilated = vec![false; n];
    ventilated[..n_vent].iter_mut().for_each(|v| *v = true);
    ventilated.shuffle(&mut master);

    let mut table = CxrEmbeddingTable::new(dim, ENCODER_NAME)?;
    let mut encounters = Vec::with_capacity(n);
    let mut truth = Vec::with_capacity(n);
    for (i, vent) in ventilated.into_iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(master.next_u64());
        let (e, t) = encounter(i, vent, config, &direction, &mut table, &mut rng)?;
        encounters.push(e);
        truth.push(t);
    }
    Ok(SynthCohort { encounters, embeddings: table, truth })
}

fn encounter(
    index: usize,
    ventilated: bool,
    config: &SynthConfig,
    direction: &[f64],
    table: &mut CxrEmbeddingTable,
    rng: &mut ChaCha8Rng,
) -> Result<(Encounter, EncounterTruth)> {
    let id = format!("enc{index:05}");
    let horizon = config.horizon_hours as f64;
    let imaging_context = rng.random::<f64>() < config.context_gate_prob;
    let admit = round_to(rng.random_range(0.0..8760.0), 2);

    let (t0, discharge) = if ventilated {
        let t0 = round_to(admit + rng.random_range(6.0..horizon), 2);
        (Some(t0), round_to(t0 + rng.random_range(12.0..48.0), 2))
    } else if rng.random::<f64>() < 0.02 {
        (None, round_to(admit + rng.random_range(2.0..4.9), 2))
    } else {
        (None, round_to(admit + rng.random_range(5.5..horizon), 2))
    };
    let end = discharge;

    // Where deterioration and distractors act.
    let onset_ramp = t0.map(|t| t - rng.random_range(18.0..28.0));
    let ehr_signal = if ventilated && !imaging_context { onset_ramp } else { None };
    let image_signal = if ventilated && imaging_context { onset_ramp } else { None };
    let stay = end - admit;
    let ehr_distractor = (imaging_context && rng.random::<f64>() < DISTRACTOR_PROB).then(|| Episode {
        start: admit + rng.random_range(-12.0..stay.max(1.0)),
        length: rng.random_range(8.0..36.0),
        strength: rng.random_range(0.5..1.0),
    });
    let image_distractor = (!imaging_context && rng.random::<f64>() < DISTRACTOR_PROB).then(|| rng.random_range(0.2..1.0));

    let ehr_effect = |t: f64| ehr_signal.map_or(0.0, |s| ramp(t, s)) + ehr_distractor.map_or(0.0, |d| d.at(t));

    // Static features.
    let age = (62.0 + 15.0 * normal(rng)).clamp(18.0, 95.0);
    let male = rng.random::<f64>() < 0.55;
    let bmi = (28.0 + 6.0 * normal(rng)).clamp(14.0, 70.0);
    let race = rng.random::<f64>();
    let demographics = vec![
        round_to(age, 1),
        f64::from(u8::from(male)),
        round_to(bmi, 1),
        f64::from(u8::from(race < 0.6)),
        f64::from(u8::from((0.6..0.75).contains(&race))),
        f64::from(u8::from((0.75..0.85).contains(&race))),
    ];
    debug_assert_eq!(demographics.len(), N_DEMOGRAPHICS);
    let mut comorbidities: Vec<bool> = (0..N_COMORBIDITIES).map(|_| rng.random::<f64>() < 0.1).collect();
    comorbidities[0] = !imaging_context ^ (rng.random::<f64>() < MARKER_NOISE);

    let mut medication_events = Vec::new();
    for cat in 0..N_MEDICATION_CATEGORIES {
        if rng.random::<f64>() < 0.3 {
            let mut t = admit + rng.random_range(-6.0..stay);
            while t < end {
                medication_events.push(MedicationEvent(cat as u8, round_to(t, 2)));
                t += rng.random_range(4.0..12.0);
            }
        }
    }
    medication_events.sort_by(|a, b| a.1.total_cmp(&b.1).then(a.0.cmp(&b.0)));

    let dnr = rng.random::<f64>() < 0.03;
    let pre_icu_ventilated = rng.random::<f64>() < 0.02;
    let no_prior_data = rng.random::<f64>() < 0.01;
    let surgery_times =
        if rng.random::<f64>() < 0.05 { vec![round_to(admit + rng.random_range(-20.0..stay / 2.0), 2)] } else { vec![] };

    // Vitals and labs.
    let first_time = if no_prior_data { admit + 4.5 } else { f64::NEG_INFINITY };
    let mut observations = Vec::with_capacity(N_DYNAMIC);
    for (var, spec) in VARS.iter().enumerate() {
        let offset = 0.7 * spec.sd * normal(rng);
        let mut samples = Vec::new();
        let mut t = if spec.interval <= 1.0 {
            admit - rng.random_range(1.0..6.0)
        } else {
            admit - rng.random_range(0.5..spec.interval.min(24.0))
        };
        while t < end {
            let stamp = round_to(t + rng.random_range(0.05..0.95), 2);
            let recorded = rng.random::<f64>() >= config.dynamic_missing_rate;
            let noise = 0.5 * spec.sd * normal(rng);
            if recorded && stamp >= first_time && stamp < end {
                let shift = spec.effect * spec.sd * ehr_effect(stamp);
                let value = (spec.mean + offset + noise + shift).clamp(spec.lo, spec.hi);
                let places = if spec.sd < 0.1 { 4 } else { 2 };
                samples.push((stamp, round_to(value, places)));
            }
            t += if spec.interval <= 1.0 { 1.0 } else { spec.interval * rng.random_range(0.75..1.25) };
        }
        samples.dedup_by(|a, b| a.0 <= b.0);
        if !samples.is_empty() {
            observations.push(ObservationSeries { variable_id: var, samples });
        }
    }

    // Radiographs.
    let base: Vec<f64> = (0..config.embedding_dim).map(|_| normal(rng)).collect();
    let mut cxr_studies = Vec::new();
    let mut add_study = |at: f64, source: CxrSource, rng: &mut ChaCha8Rng, table: &mut CxrEmbeddingTable| -> Result<()> {
        let key = format!("{id}/cxr{}", cxr_studies.len());
        let shift = IMAGING_SHIFT * (image_signal.map_or(0.0, |s| ramp(at, s)) + image_distractor.unwrap_or(0.0));
        let vector = base
            .iter()
            .zip(direction)
            .map(|(b, d)| (b + 0.3 * normal(rng) + shift * d) as f32)
            .collect();
        table.insert(key.clone(), vector)?;
        cxr_studies.push(CxrStudy { study_id: key.clone(), acquired_at: at, source, embedding_key: key });
        Ok(())
    };
    if rng.random::<f64>() < 0.4 {
        let at = round_to(admit - rng.random_range(0.5..96.0), 2);
        add_study(at, CxrSource::OtherDept, rng, table)?;
    }
    if rng.random::<f64>() < 0.9 {
        let mut t = admit + rng.random_range(0.0..6.0);
        while t < end {
            add_study(round_to(t, 2), CxrSource::Icu, rng, table)?;
            t += rng.random_range(4.0..10.0);
        }
    }

    let (peep_times, fio2_times) = match t0 {
        Some(t0) => {
            let span = ((end - t0).floor() as i64).clamp(1, 12);
            let peep: Vec<f64> = (0..span).map(|k| t0 + k as f64).collect();
            let fio2: Vec<f64> = (-2..span).map(|k| t0 + k as f64).collect();
            (peep, fio2)
        }
        None => (vec![], vec![]),
    };

    let e = Encounter {
        encounter_id: id.clone(),
        icu_admit: admit,
        icu_discharge: discharge,
        demographics,
        comorbidities,
        medication_events,
        dnr,
        surgery_times,
        pre_icu_ventilated,
        observations,
        cxr_studies,
        peep_times,
        fio2_times,
    };
    e.validate()?;
    debug_assert_eq!(e.t0(), t0);
    Ok((e, EncounterTruth { encounter_id: id, ventilated, imaging_context }))
}

/// Index of the comorbidity flag that marks the EHR context.
pub const CONTEXT_MARKER: usize = 0;

/// Column of the context marker in a standard feature row.
pub fn context_marker_column() -> usize {
    N_DEMOGRAPHICS + CONTEXT_MARKER
}

/// Variables that move with deterioration.
pub fn signal_variables() -> Vec<&'static str> {
    VARS.iter()
        .enumerate()
        .filter(|(_, s)| s.effect.abs() >= 1.0)
        .map(|(i, _)| schema::DYNAMIC_VARIABLES[i])
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::write_cohort;

    fn small(seed: u64) -> SynthConfig {
        SynthConfig { seed, n_encounters: 200, ..SynthConfig::default() }
    }

    #[test]
    fn event_count_example() {
        let cfg = SynthConfig { seed: 1, n_encounters: 500, event_rate: 0.1, ..SynthConfig::default() };
        let (encounters, _) = generate(&cfg).unwrap();
        let vent = encounters.iter().filter(|e| e.t0().is_some()).count();
        assert!((40..=60).contains(&vent), "{vent}");
    }

    #[test]
    fn all_encounters_are_valid_and_keys_resolve() {
        let (encounters, table) = generate(&small(4)).unwrap();
        for e in &encounters {
            e.validate().unwrap();
            for s in &e.cxr_studies {
                assert!(table.get(&s.embedding_key).is_some());
            }
            if let Some(t0) = e.t0() {
                assert!(t0 < e.icu_discharge && t0 >= e.icu_admit + 6.0 - 1e-9);
            }
        }
    }

    #[test]
    fn same_seed_same_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let mut files = Vec::new();
        for k in 0..2 {
            let (encounters, table) = generate(&small(9)).unwrap();
            let path = dir.path().join(format!("c{k}.jsonl"));
            write_cohort(&path, &encounters).unwrap();
            files.push((std::fs::read(&path).unwrap(), table.to_bytes().unwrap()));
        }
        assert_eq!(files[0], files[1]);
        let (other, _) = generate(&small(10)).unwrap();
        let (first, _) = generate(&small(9)).unwrap();
        assert_ne!(other, first);
    }

    #[test]
    fn marker_tracks_context() {
        let cohort = generate_with_truth(&SynthConfig { n_encounters: 400, ..small(2) }).unwrap();
        let agree = cohort
            .encounters
            .iter()
            .zip(&cohort.truth)
            .filter(|(e, t)| e.comorbidities[CONTEXT_MARKER] != t.imaging_context)
            .count();
        assert!(agree as f64 / 400.0 > 0.9);
    }

    #[test]
    fn rejects_bad_configs() {
        for cfg in [
            SynthConfig { event_rate: 0.0, ..SynthConfig::default() },
            SynthConfig { event_rate: 1.0, ..SynthConfig::default() },
            SynthConfig { dynamic_missing_rate: 1.0, ..SynthConfig::default() },
            SynthConfig { embedding_dim: 1, ..SynthConfig::default() },
            SynthConfig { context_gate_prob: 1.5, ..SynthConfig::default() },
            SynthConfig { n_encounters: 0, ..SynthConfig::default() },
        ] {
            assert!(matches!(generate(&cfg), Err(Error::InvalidConfig(_))));
        }
    }
}

//! ICU encounters, eligibility, ventilation onset and outcome labels.
//!
//! Timestamps are real-valued hours since a per-dataset epoch. Prediction
//! windows are half-open: a row at `t` looks ahead over `(t, t + 24]`.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::schema::{self, N_COMORBIDITIES, N_DEMOGRAPHICS, N_DYNAMIC, N_MEDICATION_CATEGORIES};

pub const MIN_STAY_HOURS: f64 = 5.0;
pub const PREDICTION_START_HOURS: f64 = 4.0;
pub const HORIZON_HOURS: f64 = 24.0;
pub const SURGERY_EXCLUSION_HOURS: f64 = 24.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum CxrSource {
    #[serde(rename = "ICU")]
    Icu,
    #[serde(rename = "OTHER_DEPT")]
    OtherDept,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CxrStudy {
    pub study_id: String,
    pub acquired_at: f64,
    pub source: CxrSource,
    pub embedding_key: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObservationSeries {
    pub variable_id: usize,
    /// `(timestamp, value)` pairs with strictly increasing timestamps.
    pub samples: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MedicationEvent(pub u8, pub f64);

impl MedicationEvent {
    pub fn category(&self) -> usize {
        self.0 as usize
    }

    pub fn time(&self) -> f64 {
        self.1
    }
}

/// One ICU stay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Encounter {
    pub encounter_id: String,
    pub icu_admit: f64,
    pub icu_discharge: f64,
    pub demographics: Vec<f64>,
    pub comorbidities: Vec<bool>,
    #[serde(rename = "medications")]
    pub medication_events: Vec<MedicationEvent>,
    pub dnr: bool,
    #[serde(rename = "surgeries")]
    pub surgery_times: Vec<f64>,
    pub pre_icu_ventilated: bool,
    pub observations: Vec<ObservationSeries>,
    pub cxr_studies: Vec<CxrStudy>,
    pub peep_times: Vec<f64>,
    pub fio2_times: Vec<f64>,
}

impl Encounter {
    pub fn validate(&self) -> Result<()> {
        let fail = |reason: String| Err(Error::InvalidEncounter { id: self.encounter_id.clone(), reason });
        if !(self.icu_admit.is_finite() && self.icu_discharge.is_finite()) {
            return fail("non-finite admission or discharge time".into());
        }
        if self.icu_admit >= self.icu_discharge {
            return fail(format!("icu_admit {} is not before icu_discharge {}", self.icu_admit, self.icu_discharge));
        }
        if self.demographics.len() != N_DEMOGRAPHICS {
            return fail(format!("expected {N_DEMOGRAPHICS} demographics, got {}", self.demographics.len()));
        }
        if self.demographics.iter().any(|v| !v.is_finite()) {
            return fail("non-finite demographic value".into());
        }
        if self.comorbidities.len() != N_COMORBIDITIES {
            return fail(format!("expected {N_COMORBIDITIES} comorbidities, got {}", self.comorbidities.len()));
        }
        for m in &self.medication_events {
            if m.category() >= N_MEDICATION_CATEGORIES || !m.time().is_finite() {
                return fail(format!("invalid medication event {m:?}"));
            }
        }
        for s in &self.observations {
            if s.variable_id >= N_DYNAMIC {
                return fail(format!("variable_id {} out of range", s.variable_id));
            }
            if s.samples.iter().any(|(t, v)| !t.is_finite() || !v.is_finite()) {
                return fail(format!("non-finite sample in variable {}", s.variable_id));
            }
            if s.samples.windows(2).any(|w| w[0].0 >= w[1].0) {
                return fail(format!("timestamps not strictly increasing in variable {}", s.variable_id));
            }
        }
        let times = self
            .surgery_times
            .iter()
            .chain(&self.peep_times)
            .chain(&self.fio2_times)
            .chain(self.cxr_studies.iter().map(|c| &c.acquired_at));
        for t in times {
            if !t.is_finite() {
                return fail("non-finite event timestamp".into());
            }
        }
        Ok(())
    }

    pub fn vent_record(&self) -> VentRecord {
        VentRecord { peep_times: self.peep_times.clone(), fio2_times: self.fio2_times.clone() }
    }

    /// Ventilation onset with exact simultaneity.
    pub fn t0(&self) -> Option<f64> {
        derive_t0(&self.vent_record(), 0.0)
    }

    pub fn prediction_start(&self) -> f64 {
        self.icu_admit + PREDICTION_START_HOURS
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct VentRecord {
    pub peep_times: Vec<f64>,
    pub fio2_times: Vec<f64>,
}

/// Earliest time at which PEEP and FiO2 are both recorded within
/// `tolerance_hours` of each other. The earlier member of the qualifying pair
/// is reported.
pub fn derive_t0(vent: &VentRecord, tolerance_hours: f64) -> Option<f64> {
    let mut peep = vent.peep_times.clone();
    let mut fio2 = vent.fio2_times.clone();
    peep.sort_by(f64::total_cmp);
    fio2.sort_by(f64::total_cmp);
    let tol = tolerance_hours.max(0.0);

    // Candidate for each PEEP time: the nearest FiO2 at or after `p - tol`.
    let mut best: Option<f64> = None;
    let mut j = 0;
    for &p in &peep {
        while j < fio2.len() && fio2[j] < p - tol {
            j += 1;
        }
        if j < fio2.len() && fio2[j] <= p + tol {
            let t = p.min(fio2[j]);
            best = Some(best.map_or(t, |b: f64| b.min(t)));
        }
    }
    best
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum ExclusionReason {
    MinStay,
    PreIcuVentilated,
    Dnr,
    NoPriorData,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct InclusionDecision {
    pub included: bool,
    pub reasons: Vec<ExclusionReason>,
}

/// Eligibility of an encounter given data available up to `now`.
///
/// The stay length is measured up to `min(icu_discharge, now)`; pass
/// `f64::INFINITY` for retrospective use.
pub fn apply_inclusion_criteria(e: &Encounter, now: f64) -> InclusionDecision {
    let mut reasons = Vec::new();
    let stay_end = e.icu_discharge.min(now);
    if stay_end - e.icu_admit < MIN_STAY_HOURS {
        reasons.push(ExclusionReason::MinStay);
    }
    if e.pre_icu_ventilated {
        reasons.push(ExclusionReason::PreIcuVentilated);
    }
    if e.dnr {
        reasons.push(ExclusionReason::Dnr);
    }
    let cutoff = e.prediction_start().min(now);
    let has_before = |want_vital: bool| {
        e.observations.iter().any(|s| {
            schema::is_vital(s.variable_id) == want_vital && s.samples.first().is_some_and(|(t, _)| *t < cutoff)
        })
    };
    if !(has_before(true) && has_before(false)) {
        reasons.push(ExclusionReason::NoPriorData);
    }
    InclusionDecision { included: reasons.is_empty(), reasons }
}

/// Hourly grid point `k` hours after admission.
pub fn grid_time(icu_admit: f64, k: i64) -> f64 {
    icu_admit + k as f64
}

/// Hourly grid from four hours after admission, stopping before ventilation
/// onset or discharge, without surgery removals.
pub fn candidate_timestamps(e: &Encounter, t0: Option<f64>) -> Vec<f64> {
    let stop = t0.map_or(e.icu_discharge, |t| t.min(e.icu_discharge));
    let mut out = Vec::new();
    let mut k = PREDICTION_START_HOURS as i64;
    loop {
        let t = grid_time(e.icu_admit, k);
        if t >= stop {
            break;
        }
        out.push(t);
        k += 1;
    }
    out
}

pub fn near_surgery(e: &Encounter, t: f64) -> bool {
    e.surgery_times.iter().any(|&s| s <= t && t <= s + SURGERY_EXCLUSION_HOURS)
}

/// Prediction times for an included encounter, using an explicit onset.
pub fn prediction_timestamps_with_onset(e: &Encounter, t0: Option<f64>) -> Vec<f64> {
    candidate_timestamps(e, t0).into_iter().filter(|&t| !near_surgery(e, t)).collect()
}

pub fn prediction_timestamps(e: &Encounter) -> Vec<f64> {
    prediction_timestamps_with_onset(e, e.t0())
}

/// Severity points of the clinical labeling scheme.
///
/// The PaO2/FiO2 branch is used when that ratio is available, otherwise the
/// SpO2/FiO2 branch. NaN ratios count as unavailable.
pub fn severity_points(pf: Option<f64>, sf: Option<f64>, imv_within_24h: bool, imv_beyond_24h: bool) -> Result<u8> {
    let pf = pf.filter(|v| !v.is_nan());
    let sf = sf.filter(|v| !v.is_nan());
    for r in pf.iter().chain(sf.iter()) {
        if *r < 0.0 {
            return Err(Error::InvalidInput(format!("negative oxygenation ratio {r}")));
        }
    }
    // (mild upper bound, severe bound)
    let (value, mild, severe) = match (pf, sf) {
        (Some(v), _) => (Some(v), 300.0, 200.0),
        (None, Some(v)) => (Some(v), 221.0, 141.0),
        (None, None) => (None, 0.0, 0.0),
    };
    let severe_hypoxemia = value.is_some_and(|v| v <= severe);
    let mild_hypoxemia = value.is_some_and(|v| v > severe && v <= mild);

    let points = if imv_beyond_24h {
        5
    } else if severe_hypoxemia && imv_within_24h {
        4
    } else if imv_within_24h {
        3
    } else if severe_hypoxemia {
        2
    } else if mild_hypoxemia {
        1
    } else {
        0
    };
    Ok(points)
}

/// 1 iff onset falls in `(t, t + 24]`.
pub fn binary_imv_label(t: f64, t0: Option<f64>) -> u8 {
    match t0 {
        Some(onset) if t < onset && onset <= t + HORIZON_HOURS => 1,
        _ => 0,
    }
}

pub fn read_cohort(path: &Path) -> Result<Vec<Encounter>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: Encounter = serde_json::from_str(&line)
            .map_err(|err| Error::Parse(format!("{}:{}: {err}", path.display(), lineno + 1)))?;
        e.validate()?;
        out.push(e);
    }
    Ok(out)
}

pub fn write_cohort(path: &Path, encounters: &[Encounter]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for e in encounters {
        serde_json::to_writer(&mut w, e)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
pub(crate) mod tests_support {
    use super::*;

    /// Encounter with hourly vitals and six-hourly labs from 12 h before
    /// admission until discharge.
    pub(crate) fn encounter_with(admit: f64, discharge: f64) -> Encounter {
        let mut observations = Vec::new();
        for v in 0..N_DYNAMIC {
            let step = if schema::is_vital(v) { 1.0 } else { 6.0 };
            let mut samples = Vec::new();
            let mut t = admit - 12.0 + 0.25 + (v % 3) as f64 * 0.1;
            let mut k = 0.0;
            while t < discharge {
                samples.push((t, 10.0 + v as f64 + (k * 0.7_f64).sin()));
                t += step;
                k += 1.0;
            }
            observations.push(ObservationSeries { variable_id: v, samples });
        }
        Encounter {
            encounter_id: format!("enc-{admit}"),
            icu_admit: admit,
            icu_discharge: discharge,
            demographics: vec![60.0, 1.0, 25.0, 1.0, 0.0, 0.0],
            comorbidities: (0..N_COMORBIDITIES).map(|i| i % 7 == 0).collect(),
            medication_events: vec![MedicationEvent(0, admit + 2.0), MedicationEvent(5, admit + 10.5)],
            dnr: false,
            surgery_times: vec![],
            pre_icu_ventilated: false,
            observations,
            cxr_studies: vec![],
            peep_times: vec![],
            fio2_times: vec![],
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn blank(id: &str, admit: f64, discharge: f64) -> Encounter {
        Encounter {
            encounter_id: id.to_string(),
            icu_admit: admit,
            icu_discharge: discharge,
            demographics: vec![60.0, 1.0, 25.0, 1.0, 0.0, 0.0],
            comorbidities: vec![false; N_COMORBIDITIES],
            medication_events: vec![],
            dnr: false,
            surgery_times: vec![],
            pre_icu_ventilated: false,
            observations: vec![
                ObservationSeries { variable_id: 0, samples: vec![(admit + 1.0, 80.0)] },
                ObservationSeries { variable_id: 20, samples: vec![(admit + 2.0, 30.0)] },
            ],
            cxr_studies: vec![],
            peep_times: vec![],
            fio2_times: vec![],
        }
    }

    fn brute_t0(vent: &VentRecord, tol: f64) -> Option<f64> {
        let mut best: Option<f64> = None;
        for &p in &vent.peep_times {
            for &f in &vent.fio2_times {
                if (p - f).abs() <= tol {
                    let t = p.min(f);
                    best = Some(best.map_or(t, |b: f64| b.min(t)));
                }
            }
        }
        best
    }

    #[test]
    fn t0_examples() {
        let v = VentRecord { peep_times: vec![10.0, 12.0], fio2_times: vec![12.0, 13.0] };
        assert_eq!(derive_t0(&v, 0.0), Some(12.0));
        let v = VentRecord { peep_times: vec![], fio2_times: vec![5.0] };
        assert_eq!(derive_t0(&v, 0.0), None);
        let v = VentRecord { peep_times: vec![4.2], fio2_times: vec![4.6] };
        assert_eq!(derive_t0(&v, 0.5), Some(4.2));
        assert_eq!(derive_t0(&v, 0.5), brute_t0(&v, 0.5));
    }

    #[test]
    fn t0_is_member_of_a_simultaneous_pair() {
        let v = VentRecord { peep_times: vec![3.0, 7.5, 9.0], fio2_times: vec![1.0, 7.0, 9.0] };
        let t0 = derive_t0(&v, 0.5).unwrap();
        assert_eq!(t0, 7.0);
        assert!(v.peep_times.contains(&t0) || v.fio2_times.contains(&t0));
    }

    #[test]
    fn inclusion_examples() {
        let e = blank("a", 0.0, 3.0);
        let d = apply_inclusion_criteria(&e, f64::INFINITY);
        assert!(!d.included);
        assert_eq!(d.reasons, vec![ExclusionReason::MinStay]);

        let mut e = blank("b", 0.0, 6.0);
        e.dnr = true;
        let d = apply_inclusion_criteria(&e, f64::INFINITY);
        assert_eq!(d.reasons, vec![ExclusionReason::Dnr]);

        let e = blank("c", 0.0, 6.0);
        let d = apply_inclusion_criteria(&e, f64::INFINITY);
        assert!(d.included && d.reasons.is_empty());
    }

    #[test]
    fn inclusion_lists_every_violation() {
        let mut e = blank("d", 0.0, 2.0);
        e.dnr = true;
        e.pre_icu_ventilated = true;
        e.observations.clear();
        let d = apply_inclusion_criteria(&e, f64::INFINITY);
        assert_eq!(
            d.reasons,
            vec![
                ExclusionReason::MinStay,
                ExclusionReason::PreIcuVentilated,
                ExclusionReason::Dnr,
                ExclusionReason::NoPriorData
            ]
        );
    }

    #[test]
    fn labs_after_prediction_start_do_not_count() {
        let mut e = blank("e", 0.0, 12.0);
        e.observations[1].samples = vec![(4.0, 30.0)];
        let d = apply_inclusion_criteria(&e, f64::INFINITY);
        assert_eq!(d.reasons, vec![ExclusionReason::NoPriorData]);
    }

    #[test]
    fn prospective_cutoff_shortens_stay() {
        let e = blank("f", 0.0, 48.0);
        assert!(!apply_inclusion_criteria(&e, 3.0).included);
        assert!(apply_inclusion_criteria(&e, 10.0).included);
    }

    #[test]
    fn prediction_grid_examples() {
        let e = blank("g", 0.0, 10.0);
        assert_eq!(prediction_timestamps(&e), vec![4.0, 5.0, 6.0, 7.0, 8.0, 9.0]);

        let mut e = blank("h", 0.0, 10.0);
        e.peep_times = vec![6.0];
        e.fio2_times = vec![6.0];
        assert_eq!(prediction_timestamps(&e), vec![4.0, 5.0]);

        let mut e = blank("i", 0.0, 40.0);
        e.surgery_times = vec![5.0];
        let expected: Vec<f64> = (4..40).filter(|h| !(5..=29).contains(h)).map(|h| h as f64).collect();
        assert_eq!(prediction_timestamps(&e), expected);
    }

    #[test]
    fn severity_examples() {
        assert_eq!(severity_points(Some(250.0), None, false, false).unwrap(), 1);
        assert_eq!(severity_points(Some(150.0), None, true, false).unwrap(), 4);
        assert_eq!(severity_points(None, Some(130.0), false, false).unwrap(), 2);
        assert_eq!(severity_points(None, None, false, true).unwrap(), 5);
        assert_eq!(severity_points(None, None, false, false).unwrap(), 0);
        assert_eq!(severity_points(Some(350.0), Some(100.0), false, false).unwrap(), 0);
        assert!(severity_points(Some(-1.0), None, false, false).is_err());
        assert_eq!(severity_points(Some(f64::NAN), Some(200.0), false, false).unwrap(), 1);
    }

    #[test]
    fn label_examples() {
        assert_eq!(binary_imv_label(10.0, Some(20.0)), 1);
        assert_eq!(binary_imv_label(10.0, Some(40.0)), 0);
        assert_eq!(binary_imv_label(10.0, None), 0);
        assert_eq!(binary_imv_label(10.0, Some(34.0)), 1);
        assert_eq!(binary_imv_label(10.0, Some(10.0)), 0);
    }

    #[test]
    fn cohort_file_uses_fixed_field_names() {
        let e = blank("j", 0.0, 10.0);
        let json = serde_json::to_value(&e).unwrap();
        let obj = json.as_object().unwrap();
        for key in [
            "encounter_id",
            "icu_admit",
            "icu_discharge",
            "demographics",
            "comorbidities",
            "medications",
            "dnr",
            "surgeries",
            "pre_icu_ventilated",
            "observations",
            "cxr_studies",
            "peep_times",
            "fio2_times",
        ] {
            assert!(obj.contains_key(key), "missing {key}");
        }
        assert_eq!(obj.len(), 13);
    }

    #[test]
    fn validation_rejects_bad_encounters() {
        let mut e = blank("k", 5.0, 5.0);
        assert!(e.validate().is_err());
        e.icu_discharge = 10.0;
        e.medication_events.push(MedicationEvent(12, 6.0));
        assert!(e.validate().is_err());
        e.medication_events.clear();
        e.observations[0].samples = vec![(6.0, 1.0), (6.0, 2.0)];
        assert!(e.validate().is_err());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn t0_matches_pairwise_search(
                peep in proptest::collection::vec(0.0f64..50.0, 0..8),
                fio2 in proptest::collection::vec(0.0f64..50.0, 0..8),
                tol in 0.0f64..3.0,
            ) {
                let v = VentRecord { peep_times: peep, fio2_times: fio2 };
                prop_assert_eq!(derive_t0(&v, tol), brute_t0(&v, tol));
            }

            #[test]
            fn prediction_times_precede_onset(
                discharge in 5.0f64..80.0,
                onset in proptest::option::of(0.0f64..80.0),
                surgery in proptest::option::of(-10.0f64..60.0),
            ) {
                let mut e = blank("p", 0.0, discharge);
                e.surgery_times = surgery.into_iter().collect();
                for t in prediction_timestamps_with_onset(&e, onset) {
                    prop_assert!(t < discharge);
                    if let Some(t0) = onset {
                        prop_assert!(t < t0);
                    }
                }
            }

            #[test]
            fn label_is_monotone_toward_onset(t in 0.0f64..100.0, dt in 0.0f64..30.0, t0 in 0.0f64..120.0) {
                let later = t + dt;
                if binary_imv_label(t, Some(t0)) == 1 && later < t0 {
                    prop_assert_eq!(binary_imv_label(later, Some(t0)), 1);
                }
            }
        }
    }
}

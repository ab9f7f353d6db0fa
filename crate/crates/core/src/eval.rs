//! Discrimination and operating-point metrics.
//!
//! A prediction is positive when `score >= threshold`. Ratios whose
//! denominator is zero are reported as absent rather than zero.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cohort::HORIZON_HOURS;
use crate::error::{Error, Result};

fn check_inputs(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if let Some(s) = scores.iter().find(|s| s.is_nan()) {
        return Err(Error::InvalidInput(format!("score {s} is not a number")));
    }
    if let Some(l) = labels.iter().find(|l| **l > 1) {
        return Err(Error::InvalidInput(format!("label {l} is not binary")));
    }
    let pos = labels.iter().filter(|l| **l == 1).count();
    Ok((pos, labels.len() - pos))
}

/// Twice the Mann-Whitney U statistic: each positive-negative pair scores 2
/// when the positive ranks higher and 1 when tied.
fn doubled_u(scores: &[f64], labels: &[u8]) -> u64 {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut negatives_below = 0u64;
    let mut total = 0u64;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        let (mut pos, mut neg) = (0u64, 0u64);
        while j < order.len() && scores[order[j]] == scores[order[i]] {
            if labels[order[j]] == 1 {
                pos += 1;
            } else {
                neg += 1;
            }
            j += 1;
        }
        total += 2 * negatives_below * pos + pos * neg;
        negatives_below += neg;
        i = j;
    }
    total
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half.
pub fn auroc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = check_inputs(scores, labels)?;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass("auroc input"));
    }
    Ok(doubled_u(scores, labels) as f64 / (2 * pos as u64 * neg as u64) as f64)
}

/// Serializes non-finite thresholds as the strings `inf` / `-inf`.
mod threshold_repr {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Number(f64),
        Text(String),
    }

    pub fn serialize<S: Serializer>(value: &f64, s: S) -> Result<S::Ok, S::Error> {
        if value.is_finite() {
            s.serialize_f64(*value)
        } else if *value > 0.0 {
            s.serialize_str("inf")
        } else {
            s.serialize_str("-inf")
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Number(v) => Ok(v),
            Repr::Text(t) if t == "inf" => Ok(f64::INFINITY),
            Repr::Text(t) if t == "-inf" => Ok(f64::NEG_INFINITY),
            Repr::Text(t) => Err(serde::de::Error::custom(format!("bad threshold {t:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    #[serde(with = "threshold_repr")]
    pub threshold: f64,
    pub sensitivity: f64,
    pub fpr: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// One point per distinct score plus `+inf`, thresholds ascending.
    pub points: Vec<RocPoint>,
    pub auroc: f64,
}

impl RocCurve {
    pub fn compute(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
        let auroc = auroc(scores, labels)?;
        let (pos, neg) = check_inputs(scores, labels)?;
        let mut order: Vec<usize> = (0..scores.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        // Walk from the highest score down, emitting a point after each tie group.
        let mut points = vec![RocPoint { threshold: f64::INFINITY, sensitivity: 0.0, fpr: 0.0 }];
        let (mut tp, mut fp) = (0usize, 0usize);
        let mut i = 0;
        while i < order.len() {
            let s = scores[order[i]];
            while i < order.len() && scores[order[i]] == s {
                if labels[order[i]] == 1 {
                    tp += 1;
                } else {
                    fp += 1;
                }
                i += 1;
            }
            points.push(RocPoint { threshold: s, sensitivity: tp as f64 / pos as f64, fpr: fp as f64 / neg as f64 });
        }
        points.reverse();
        Ok(RocCurve { points, auroc })
    }

    /// Trapezoidal area under the points.
    pub fn trapezoid_area(&self) -> f64 {
        self.points.windows(2).map(|w| (w[0].fpr - w[1].fpr) * (w[0].sensitivity + w[1].sensitivity) / 2.0).sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("threshold,sensitivity,fpr\n");
        for p in &self.points {
            let t = if p.threshold.is_infinite() { "inf".to_string() } else { p.threshold.to_string() };
            let _ = writeln!(out, "{t},{},{}", p.sensitivity, p.fpr);
        }
        out
    }
}

/// Largest candidate threshold (observed scores and `+inf`) whose
/// sensitivity on the given data is at least `target`.
pub fn select_threshold(scores: &[f64], labels: &[u8], target: f64) -> Result<f64> {
    let (pos, _) = check_inputs(scores, labels)?;
    if pos == 0 {
        return Err(Error::NoPositives);
    }
    if !(0.0..=1.0).contains(&target) {
        return Err(Error::InvalidInput(format!("target sensitivity {target} outside [0, 1]")));
    }
    let mut positives: Vec<f64> = scores.iter().zip(labels).filter(|(_, l)| **l == 1).map(|(s, _)| *s).collect();
    positives.sort_by(|a, b| b.total_cmp(a));
    let needed = (0..=pos).find(|k| *k as f64 / pos as f64 >= target).expect("k = pos always qualifies");
    Ok(if needed == 0 { f64::INFINITY } else { positives[needed - 1] })
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl ConfusionCounts {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn sensitivity(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn specificity(&self) -> Option<f64> {
        ratio(self.tn, self.tn + self.fp)
    }

    pub fn ppv(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn miss_rate(&self) -> Option<f64> {
        ratio(self.fn_, self.tp + self.fn_)
    }

    pub fn false_positive_rate(&self) -> Option<f64> {
        ratio(self.fp, self.tn + self.fp)
    }

    pub fn balanced_accuracy(&self) -> Option<f64> {
        Some((self.sensitivity()? + self.specificity()?) / 2.0)
    }

    pub fn rates(&self) -> Rates {
        Rates {
            sensitivity: self.sensitivity(),
            specificity: self.specificity(),
            ppv: self.ppv(),
            balanced_accuracy: self.balanced_accuracy(),
        }
    }
}

/// Thresholded counts at the prediction level.
pub fn confusion(scores: &[f64], labels: &[u8], threshold: f64) -> Result<ConfusionCounts> {
    check_inputs(scores, labels)?;
    let mut c = ConfusionCounts::default();
    for (s, l) in scores.iter().zip(labels) {
        match (*s >= threshold, *l == 1) {
            (true, true) => c.tp += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(c)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub ppv: Option<f64>,
    pub balanced_accuracy: Option<f64>,
}

/// One scored prediction point of an encounter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPoint {
    pub encounter_id: String,
    pub timestamp: f64,
    pub score: f64,
    pub label: u8,
}

/// Whether a prediction at `t` has ventilation onset inside its horizon.
pub fn in_onset_window(t: f64, t0: Option<f64>) -> bool {
    t0.is_some_and(|t0| t < t0 && t0 <= t + HORIZON_HOURS)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct EncounterConfusion {
    /// One cell per evaluated prediction point.
    pub predictions: ConfusionCounts,
    /// One cell per encounter: detected if any in-window prediction is
    /// positive; false alarm if it has no positive label and any positive
    /// prediction.
    pub encounters: ConfusionCounts,
}

/// Confusion cells for predictions against ventilation onsets.
///
/// At the prediction level a point is TP/FN when onset lies within its
/// 24-hour horizon and FP/TN otherwise. Each point's label must agree with
/// its encounter's onset.
pub fn encounter_confusion(
    points: &[ScoredPoint],
    onsets: &BTreeMap<String, Option<f64>>,
    threshold: f64,
) -> Result<EncounterConfusion> {
    let mut out = EncounterConfusion::default();
    // (has positive label, any in-window positive prediction, any positive prediction)
    let mut per_encounter: BTreeMap<&str, (bool, bool, bool)> = BTreeMap::new();
    for p in points {
        let t0 = *onsets
            .get(&p.encounter_id)
            .ok_or_else(|| Error::InvalidInput(format!("no onset entry for encounter {}", p.encounter_id)))?;
        let in_window = in_onset_window(p.timestamp, t0);
        if in_window != (p.label == 1) {
            return Err(Error::InvalidInput(format!(
                "label {} at {} disagrees with onset {:?} for {}",
                p.label, p.timestamp, t0, p.encounter_id
            )));
        }
        if p.score.is_nan() {
            return Err(Error::InvalidInput(format!("score for {} is not a number", p.encounter_id)));
        }
        let positive = p.score >= threshold;
        match (positive, in_window) {
            (true, true) => out.predictions.tp += 1,
            (true, false) => out.predictions.fp += 1,
            (false, true) => out.predictions.fn_ += 1,
            (false, false) => out.predictions.tn += 1,
        }
        let entry = per_encounter.entry(&p.encounter_id).or_default();
        entry.0 |= in_window;
        entry.1 |= positive && in_window;
        entry.2 |= positive;
    }
    for (has_label, detected, any_positive) in per_encounter.values() {
        match (has_label, detected, any_positive) {
            (true, true, _) => out.encounters.tp += 1,
            (true, false, _) => out.encounters.fn_ += 1,
            (false, _, true) => out.encounters.fp += 1,
            (false, _, false) => out.encounters.tn += 1,
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub name: String,
    pub auroc: Option<f64>,
    /// Operating threshold; absent for binary predictors.
    pub threshold: Option<f64>,
    pub target_sensitivity: Option<f64>,
    pub sensitivity: Option<f64>,
    pub specificity: Option<f64>,
    pub ppv: Option<f64>,
    pub balanced_accuracy: Option<f64>,
    pub counts: ConfusionCounts,
    pub encounter_counts: Option<ConfusionCounts>,
    pub encounter_rates: Option<Rates>,
    pub roc: Vec<RocPoint>,
}

impl EvalReport {
    pub fn from_counts(name: impl Into<String>, counts: ConfusionCounts) -> EvalReport {
        let r = counts.rates();
        EvalReport {
            name: name.into(),
            auroc: None,
            threshold: None,
            target_sensitivity: None,
            sensitivity: r.sensitivity,
            specificity: r.specificity,
            ppv: r.ppv,
            balanced_accuracy: r.balanced_accuracy,
            counts,
            encounter_counts: None,
            encounter_rates: None,
            roc: vec![],
        }
    }

    /// Scores evaluated at a frozen threshold, with the ROC curve and both
    /// prediction- and encounter-level cells.
    pub fn for_scores(
        name: impl Into<String>,
        points: &[ScoredPoint],
        onsets: &BTreeMap<String, Option<f64>>,
        threshold: f64,
        target_sensitivity: f64,
    ) -> Result<EvalReport> {
        let scores: Vec<f64> = points.iter().map(|p| p.score).collect();
        let labels: Vec<u8> = points.iter().map(|p| p.label).collect();
        let roc = RocCurve::compute(&scores, &labels)?;
        let cells = encounter_confusion(points, onsets, threshold)?;
        let mut report = EvalReport::from_counts(name, cells.predictions);
        report.auroc = Some(roc.auroc);
        report.threshold = Some(threshold);
        report.target_sensitivity = Some(target_sensitivity);
        report.encounter_counts = Some(cells.encounters);
        report.encounter_rates = Some(cells.encounters.rates());
        report.roc = roc.points;
        Ok(report)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }

    pub fn from_json(text: &str) -> Result<EvalReport> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<EvalReport> {
        EvalReport::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn roc_csv(&self) -> String {
        RocCurve { points: self.roc.clone(), auroc: self.auroc.unwrap_or(f64::NAN) }.to_csv()
    }
}

/// Metrics for a predictor that only emits binary calls.
pub fn binary_predictor_metrics(name: impl Into<String>, counts: ConfusionCounts) -> Result<EvalReport> {
    if counts.total() == 0 {
        return Err(Error::InvalidInput("all confusion counts are zero".into()));
    }
    Ok(EvalReport::from_counts(name, counts))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ComparisonTable {
    pub markdown: String,
    pub csv: String,
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "--".to_string(), |v| format!("{v:.3}"))
}

/// Predictor comparison with columns AUC, specificity, sensitivity and PPV.
pub fn compare(reports: &[EvalReport]) -> Result<ComparisonTable> {
    if reports.len() < 2 {
        return Err(Error::InvalidInput(format!("comparison needs at least two reports, got {}", reports.len())));
    }
    let mut markdown = String::from("| Predictor | AUC | Specificity | Sensitivity | PPV |\n|---|---|---|---|---|\n");
    let mut csv = String::from("predictor,auc,specificity,sensitivity,ppv\n");
    for r in reports {
        let cells = [cell(r.auroc), cell(r.specificity), cell(r.sensitivity), cell(r.ppv)];
        let _ = writeln!(markdown, "| {} | {} |", r.name, cells.join(" | "));
        let name = if r.name.contains([',', '"']) { format!("\"{}\"", r.name.replace('"', "\"\"")) } else { r.name.clone() };
        let _ = writeln!(csv, "{name},{}", cells.join(","));
    }
    Ok(ComparisonTable { markdown, csv })
}

/// Per-predictor AUROC as `predictor,auroc` rows for bar charts.
pub fn auroc_bars_csv(reports: &[EvalReport]) -> String {
    let mut out = String::from("predictor,auroc\n");
    for r in reports {
        let _ = writeln!(out, "{},{}", r.name, r.auroc.map_or_else(String::new, |a| format!("{a:.4}")));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn brute_force(scores: &[f64], labels: &[u8]) -> f64 {
        let mut twice = 0u64;
        let (mut p, mut n) = (0u64, 0u64);
        for (i, &li) in labels.iter().enumerate() {
            if li == 1 {
                p += 1;
            } else {
                n += 1;
            }
            if li != 1 {
                continue;
            }
            for (j, &lj) in labels.iter().enumerate() {
                if lj == 0 {
                    twice += match scores[i].partial_cmp(&scores[j]).unwrap() {
                        std::cmp::Ordering::Greater => 2,
                        std::cmp::Ordering::Equal => 1,
                        std::cmp::Ordering::Less => 0,
                    };
                }
            }
        }
        twice as f64 / (2 * p * n) as f64
    }

    #[test]
    fn auroc_examples() {
        assert_eq!(auroc(&[0.1, 0.2, 0.8, 0.9], &[0, 0, 1, 1]).unwrap(), 1.0);
        assert_eq!(auroc(&[0.5; 6], &[0, 1, 0, 1, 1, 0]).unwrap(), 0.5);
        assert_eq!(auroc(&[0.9, 0.1], &[0, 1]).unwrap(), 0.0);
        assert!(matches!(auroc(&[0.1, 0.2], &[1, 1]), Err(Error::SingleClass(_))));
        assert!(auroc(&[0.1], &[1, 0]).is_err());
    }

    #[test]
    fn threshold_examples() {
        let scores = [0.9, 0.8, 0.7, 0.2, 0.1, 0.75, 0.3];
        let labels = [1, 1, 1, 1, 1, 0, 0];
        assert_eq!(select_threshold(&scores, &labels, 0.6).unwrap(), 0.7);
        assert!(select_threshold(&scores, &labels, 1.0).unwrap() <= 0.1);
        assert_eq!(select_threshold(&scores, &labels, 0.0).unwrap(), f64::INFINITY);
        let same = [0.4, 0.4, 0.4, 0.9];
        for target in [0.1, 0.5, 1.0] {
            assert_eq!(select_threshold(&same, &[1, 1, 1, 0], target).unwrap(), 0.4);
        }
        assert!(matches!(select_threshold(&[0.5], &[0], 0.6), Err(Error::NoPositives)));
    }

    #[test]
    fn physician_counts() {
        let r = binary_predictor_metrics("Physician", ConfusionCounts { tp: 3, fp: 9, fn_: 11, tn: 224 }).unwrap();
        assert_eq!(format!("{:.3}", r.sensitivity.unwrap()), "0.214");
        assert_eq!(format!("{:.3}", r.specificity.unwrap()), "0.961");
        assert_eq!(format!("{:.3}", r.balanced_accuracy.unwrap()), "0.588");
        assert_eq!(format!("{:.3}", r.ppv.unwrap()), "0.250");
        assert!(r.auroc.is_none());

        let none = binary_predictor_metrics("x", ConfusionCounts { tp: 0, fp: 0, fn_: 4, tn: 5 }).unwrap();
        assert!(none.ppv.is_none());
        assert_eq!(none.sensitivity, Some(0.0));
        let perfect = binary_predictor_metrics("p", ConfusionCounts { tp: 4, fp: 0, fn_: 0, tn: 5 }).unwrap();
        for m in [perfect.sensitivity, perfect.specificity, perfect.ppv, perfect.balanced_accuracy] {
            assert_eq!(m, Some(1.0));
        }
        assert!(binary_predictor_metrics("z", ConfusionCounts::default()).is_err());
    }

    fn point(id: &str, t: f64, score: f64, t0: Option<f64>) -> ScoredPoint {
        ScoredPoint { encounter_id: id.into(), timestamp: t, score, label: u8::from(in_onset_window(t, t0)) }
    }

    #[test]
    fn encounter_cells_examples() {
        let onsets: BTreeMap<String, Option<f64>> =
            [("a".to_string(), Some(30.0)), ("b".to_string(), None), ("c".to_string(), Some(30.0)), ("d".to_string(), None)]
                .into();
        let cells = |pts: &[ScoredPoint]| encounter_confusion(pts, &onsets, 0.5).unwrap();

        let tp = cells(&[point("a", 10.0, 0.9, Some(30.0))]);
        assert_eq!(tp.predictions, ConfusionCounts { tp: 1, ..Default::default() });
        assert_eq!(tp.encounters, ConfusionCounts { tp: 1, ..Default::default() });

        let tn = cells(&[point("b", 4.0, 0.1, None), point("b", 5.0, 0.2, None)]);
        assert_eq!(tn.encounters, ConfusionCounts { tn: 1, ..Default::default() });
        assert_eq!(tn.predictions.tn, 2);

        let fn_ = cells(&[point("c", 10.0, 0.2, Some(30.0))]);
        assert_eq!(fn_.encounters, ConfusionCounts { fn_: 1, ..Default::default() });

        let fp = cells(&[point("d", 4.0, 0.1, None), point("d", 5.0, 0.7, None)]);
        assert_eq!(fp.encounters, ConfusionCounts { fp: 1, ..Default::default() });
        assert_eq!(fp.predictions, ConfusionCounts { fp: 1, tn: 1, ..Default::default() });

        let mut bad = point("a", 10.0, 0.9, Some(30.0));
        bad.label = 0;
        assert!(encounter_confusion(&[bad], &onsets, 0.5).is_err());
        assert!(encounter_confusion(&[point("zz", 1.0, 0.1, None)], &onsets, 0.5).is_err());
    }

    #[test]
    fn roc_curve_matches_auroc_and_csv() {
        let scores = [0.1, 0.4, 0.35, 0.8, 0.4, 0.9];
        let labels = [0, 0, 1, 1, 1, 0];
        let roc = RocCurve::compute(&scores, &labels).unwrap();
        assert!((roc.trapezoid_area() - roc.auroc).abs() < 1e-12);
        assert_eq!(roc.points.last().unwrap().threshold, f64::INFINITY);
        let csv = roc.to_csv();
        assert!(csv.starts_with("threshold,sensitivity,fpr\n0.1,1,1\n"));
        assert!(csv.ends_with("inf,0,0\n"));
    }

    #[test]
    fn report_json_round_trip() {
        let onsets: BTreeMap<String, Option<f64>> = [("a".to_string(), Some(30.0)), ("b".to_string(), None)].into();
        let pts = [point("a", 10.0, 0.9, Some(30.0)), point("b", 10.0, 0.3, None), point("b", 11.0, 0.6, None)];
        let r = EvalReport::for_scores("m", &pts, &onsets, 0.5, 0.6).unwrap();
        let back = EvalReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.roc.last().unwrap().threshold, f64::INFINITY);
    }

    #[test]
    fn table_layout() {
        let rows = [
            ("Physician", None, 0.961, 0.214, 0.250),
            ("Vent.io (EHR only)", Some(0.752), 0.368, 0.739, 0.139),
            ("Gated Multimodal (REMEDIS)", Some(0.860), 0.831, 0.391, 0.243),
            ("Gated Multimodal (MedInsight)", Some(0.858), 0.910, 0.304, 0.318),
        ];
        let reports: Vec<EvalReport> = rows
            .iter()
            .map(|(name, auc, spec, sens, ppv)| {
                let mut r = EvalReport::from_counts(*name, ConfusionCounts::default());
                r.auroc = *auc;
                r.specificity = Some(*spec);
                r.sensitivity = Some(*sens);
                r.ppv = Some(*ppv);
                r
            })
            .collect();
        let table = compare(&reports).unwrap();
        let expected = "| Predictor | AUC | Specificity | Sensitivity | PPV |\n\
                        |---|---|---|---|---|\n\
                        | Physician | -- | 0.961 | 0.214 | 0.250 |\n\
                        | Vent.io (EHR only) | 0.752 | 0.368 | 0.739 | 0.139 |\n\
                        | Gated Multimodal (REMEDIS) | 0.860 | 0.831 | 0.391 | 0.243 |\n\
                        | Gated Multimodal (MedInsight) | 0.858 | 0.910 | 0.304 | 0.318 |\n";
        assert_eq!(table.markdown, expected);
        assert!(table.csv.contains("Physician,--,0.961,0.214,0.250\n"));
        assert_eq!(compare(&reports).unwrap(), table);
        assert!(compare(&reports[..1]).is_err());
    }

    proptest! {
        #[test]
        fn auroc_equals_pairwise(raw in proptest::collection::vec((0u8..12, any::<bool>()), 2..120)) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 4.0).collect();
            let labels: Vec<u8> = raw.iter().map(|(_, l)| u8::from(*l)).collect();
            let pos = labels.iter().filter(|l| **l == 1).count();
            prop_assume!(pos > 0 && pos < labels.len());
            prop_assert_eq!(auroc(&scores, &labels).unwrap(), brute_force(&scores, &labels));
            let squashed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp()).collect();
            prop_assert_eq!(auroc(&squashed, &labels).unwrap(), auroc(&scores, &labels).unwrap());
        }

        #[test]
        fn threshold_meets_target(raw in proptest::collection::vec((0u16..500, any::<bool>()), 1..150), target in 0.0f64..=1.0) {
            let scores: Vec<f64> = raw.iter().map(|(s, _)| *s as f64 / 500.0).collect();
            let labels: Vec<u8> = raw.iter().map(|(_, l)| u8::from(*l)).collect();
            prop_assume!(labels.contains(&1));
            let thr = select_threshold(&scores, &labels, target).unwrap();
            let sens = confusion(&scores, &labels, thr).unwrap().sensitivity().unwrap();
            prop_assert!(sens >= target);
            for &c in scores.iter().filter(|s| **s > thr) {
                prop_assert!(confusion(&scores, &labels, c).unwrap().sensitivity().unwrap() < target);
            }
            let c = confusion(&scores, &labels, thr).unwrap();
            prop_assert_eq!(c.sensitivity().unwrap() + c.miss_rate().unwrap(), 1.0);
            if let (Some(s), Some(f)) = (c.specificity(), c.false_positive_rate()) {
                prop_assert_eq!(s + f, 1.0);
            }
        }
    }
}

//! Column layout of the hourly model-input matrix.
//!
//! A row is laid out as
//! `[static | dynamic | baseline | trend | tslm]` where the static block holds
//! demographics, comorbidity flags, medication-category activity and the
//! SIRS/SOFA criterion indicators. The three derived blocks are per dynamic
//! variable, in the same variable order as the dynamic block.

use serde::{Deserialize, Serialize};

pub const SCHEMA_VERSION: u32 = 1;

pub const N_DEMOGRAPHICS: usize = 6;
pub const N_COMORBIDITIES: usize = 62;
pub const N_MEDICATION_CATEGORIES: usize = 12;
pub const N_CRITERIA: usize = 12;
pub const N_DYNAMIC: usize = 50;
/// Dynamic variables `0..N_VITALS` are vital signs, the rest are labs.
pub const N_VITALS: usize = 12;

pub const STATIC_COUNT: usize = N_DEMOGRAPHICS + N_COMORBIDITIES + N_MEDICATION_CATEGORIES + N_CRITERIA;
pub const DERIVED_COUNT: usize = 3 * N_DYNAMIC;
pub const COLUMN_COUNT: usize = STATIC_COUNT + N_DYNAMIC + DERIVED_COUNT;

pub const DEMOGRAPHICS: [&str; N_DEMOGRAPHICS] =
    ["age", "male", "bmi", "race_white", "race_black", "race_asian"];

pub const MEDICATION_CATEGORIES: [&str; N_MEDICATION_CATEGORIES] = [
    "vasopressor",
    "inotrope",
    "sedative",
    "opioid",
    "neuromuscular_blocker",
    "antibiotic",
    "corticosteroid",
    "diuretic",
    "bronchodilator",
    "anticoagulant",
    "insulin",
    "crystalloid_bolus",
];

pub const DYNAMIC_VARIABLES: [&str; N_DYNAMIC] = [
    // vitals
    "heart_rate",
    "sbp",
    "dbp",
    "map",
    "resp_rate",
    "spo2",
    "temperature",
    "gcs",
    "fio2",
    "o2_flow",
    "urine_output",
    "weight",
    // labs
    "pao2",
    "paco2",
    "ph",
    "hco3",
    "base_excess",
    "lactate",
    "wbc",
    "hemoglobin",
    "hematocrit",
    "platelets",
    "sodium",
    "potassium",
    "chloride",
    "bun",
    "creatinine",
    "glucose",
    "calcium",
    "magnesium",
    "phosphate",
    "bilirubin",
    "ast",
    "alt",
    "alk_phos",
    "albumin",
    "total_protein",
    "inr",
    "ptt",
    "fibrinogen",
    "troponin",
    "bnp",
    "crp",
    "procalcitonin",
    "ldh",
    "ck",
    "anion_gap",
    "neutrophils",
    "lymphocytes",
    "ionized_calcium",
];

/// Index of a dynamic variable by name. Panics on unknown names; only used
/// with the constant names above.
pub fn var(name: &str) -> usize {
    DYNAMIC_VARIABLES
        .iter()
        .position(|v| *v == name)
        .unwrap_or_else(|| panic!("unknown dynamic variable {name}"))
}

pub fn is_vital(variable_id: usize) -> bool {
    variable_id < N_VITALS
}

/// Column offsets of each block within a row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Layout {
    pub static_dim: usize,
    pub dynamic_dim: usize,
}

impl Layout {
    pub const fn standard() -> Self {
        Layout { static_dim: STATIC_COUNT, dynamic_dim: N_DYNAMIC }
    }

    pub const fn width(&self) -> usize {
        self.static_dim + 4 * self.dynamic_dim
    }

    pub const fn dynamic_start(&self) -> usize {
        self.static_dim
    }

    pub const fn baseline_start(&self) -> usize {
        self.static_dim + self.dynamic_dim
    }

    pub const fn trend_start(&self) -> usize {
        self.static_dim + 2 * self.dynamic_dim
    }

    pub const fn tslm_start(&self) -> usize {
        self.static_dim + 3 * self.dynamic_dim
    }
}

pub fn column_names() -> Vec<String> {
    let mut names = Vec::with_capacity(COLUMN_COUNT);
    names.extend(DEMOGRAPHICS.iter().map(|s| s.to_string()));
    names.extend((0..N_COMORBIDITIES).map(|i| format!("comorbidity_{i:02}")));
    names.extend(MEDICATION_CATEGORIES.iter().map(|s| format!("med_{s}")));
    names.extend(default_criteria().iter().map(|c| format!("criterion_{}", c.name)));
    names.extend(DYNAMIC_VARIABLES.iter().map(|s| s.to_string()));
    for prefix in ["baseline", "trend", "tslm"] {
        names.extend(DYNAMIC_VARIABLES.iter().map(|s| format!("{prefix}_{s}")));
    }
    names
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Comparison {
    Above,
    AtLeast,
    Below,
}

/// One threshold term of a criterion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub variable: String,
    pub comparison: Comparison,
    pub cutoff: f64,
}

/// A SIRS or SOFA criterion: met when any of its terms holds.
///
/// Ratio criteria (PaO2/FiO2, SpO2/FiO2) use the pseudo-variables
/// `pf_ratio` and `sf_ratio`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Criterion {
    pub name: String,
    pub any_of: Vec<Term>,
}

fn term(variable: &str, comparison: Comparison, cutoff: f64) -> Term {
    Term { variable: variable.to_string(), comparison, cutoff }
}

pub fn default_criteria() -> Vec<Criterion> {
    use Comparison::*;
    let c = |name: &str, any_of: Vec<Term>| Criterion { name: name.to_string(), any_of };
    vec![
        c("sirs_temperature", vec![term("temperature", Above, 38.0), term("temperature", Below, 36.0)]),
        c("sirs_heart_rate", vec![term("heart_rate", Above, 90.0)]),
        c("sirs_respiratory", vec![term("resp_rate", Above, 20.0), term("paco2", Below, 32.0)]),
        c("sirs_wbc", vec![term("wbc", Above, 12.0), term("wbc", Below, 4.0)]),
        c("sofa_respiratory", vec![term("pf_ratio", Below, 400.0)]),
        c("sofa_oxygen_saturation", vec![term("sf_ratio", Below, 315.0)]),
        c("sofa_coagulation", vec![term("platelets", Below, 150.0)]),
        c("sofa_liver", vec![term("bilirubin", AtLeast, 1.2)]),
        c("sofa_cardiovascular", vec![term("map", Below, 70.0)]),
        c("sofa_cns", vec![term("gcs", Below, 15.0)]),
        c("sofa_renal", vec![term("creatinine", AtLeast, 1.2)]),
        c("sepsis_lactate", vec![term("lactate", Above, 2.0)]),
    ]
}

impl Criterion {
    /// Evaluates against one row of filled dynamic values. Absent inputs never
    /// satisfy a term.
    pub fn evaluate(&self, dynamic: &[Option<f64>]) -> bool {
        self.any_of.iter().any(|t| {
            let value = match t.variable.as_str() {
                "pf_ratio" => ratio(dynamic[var("pao2")], dynamic[var("fio2")]),
                "sf_ratio" => ratio(dynamic[var("spo2")], dynamic[var("fio2")]),
                name => dynamic[var(name)],
            };
            match (value, t.comparison) {
                (Some(v), Comparison::Above) => v > t.cutoff,
                (Some(v), Comparison::AtLeast) => v >= t.cutoff,
                (Some(v), Comparison::Below) => v < t.cutoff,
                (None, _) => false,
            }
        })
    }
}

/// Oxygenation ratio with FiO2 expressed as a fraction.
pub fn ratio(numerator: Option<f64>, fio2: Option<f64>) -> Option<f64> {
    match (numerator, fio2) {
        (Some(n), Some(f)) if f > 0.0 => Some(n / f),
        _ => None,
    }
}

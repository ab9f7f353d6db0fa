//! Batch commands behind the `gatefuse` binary, driven by a TOML run file.
//!
//! Every command reads and writes plain files under the configured paths so
//! stages can be rerun independently. Outputs are byte-stable for identical
//! inputs, except the wall-clock column of the search trial log.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::cohort::{apply_inclusion_criteria, read_cohort, write_cohort, Encounter, ExclusionReason};
use crate::cxr::{load_embeddings, save_embeddings};
use crate::error::{Error, Result};
use crate::eval::{auroc_bars_csv, binary_predictor_metrics, compare, ConfusionCounts, EvalReport};
use crate::features::{load_fmx, read_fmx, save_fmx, write_fmx, ImputationStats, Standardizer};
use crate::nn::{gradcheck, load_checkpoint, save_checkpoint, ModelConfig, Variant};
use crate::pipeline::{
    choose_threshold, evaluate, featurize, fit_model_config, Accounting, RowIndex, SplitConfig, SplitData, SplitName,
    ThresholdRecord,
};
use crate::schema::{COLUMN_COUNT, SCHEMA_VERSION};
use crate::search::{random_search, SearchSpace};
use crate::synth::{generate, SynthConfig};
use crate::train::{train, TrainConfig};

/// Environment variable that relocates every relative path of a run.
pub const OUT_DIR_ENV: &str = "GATEFUSE_OUT_DIR";

/// Name under which physician calls appear in reports.
pub const PHYSICIAN: &str = "physician";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub cohort: PathBuf,
    pub embeddings: PathBuf,
    pub features: PathBuf,
    pub checkpoints: PathBuf,
    pub reports: PathBuf,
    /// Two-column CSV `encounter_id,call` with binary calls per encounter.
    pub physician_calls: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            cohort: "cohort.jsonl".into(),
            embeddings: "embeddings.cxre".into(),
            features: "features".into(),
            checkpoints: "checkpoints".into(),
            reports: "reports".into(),
            physician_calls: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RunConfig {
    pub seed: u64,
    pub variants: Vec<Variant>,
    pub target_sensitivity: f64,
    pub paths: Paths,
    pub synth: SynthConfig,
    pub split: SplitConfig,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub search: SearchSpace,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            variants: Variant::ALL.to_vec(),
            target_sensitivity: 0.6,
            paths: Paths::default(),
            synth: SynthConfig::default(),
            split: SplitConfig::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            search: SearchSpace::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    /// Reads a run file; relative paths resolve against its directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let cfg = RunConfig::from_toml(&fs::read_to_string(path)?)?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        Ok(cfg.resolved(base))
    }

    /// Makes relative paths absolute against `base`, or against the output
    /// directory override when it is set.
    pub fn resolved(mut self, base: &Path) -> RunConfig {
        let base = std::env::var_os(OUT_DIR_ENV).map(PathBuf::from).unwrap_or_else(|| base.to_path_buf());
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        let paths = &mut self.paths;
        for p in [&mut paths.cohort, &mut paths.embeddings, &mut paths.features, &mut paths.checkpoints, &mut paths.reports] {
            fix(p);
        }
        if let Some(p) = paths.physician_calls.as_mut() {
            fix(p);
        }
        self
    }

    pub fn validate(&self) -> Result<()> {
        let p = &self.paths;
        let mut all = vec![&p.cohort, &p.embeddings, &p.features, &p.checkpoints, &p.reports];
        all.extend(p.physician_calls.as_ref());
        for (i, a) in all.iter().enumerate() {
            if all[i + 1..].contains(a) {
                return Err(Error::InvalidConfig(format!("path {} is used twice", a.display())));
            }
        }
        if self.variants.is_empty() {
            return Err(Error::InvalidConfig("variant list is empty".into()));
        }
        if !(self.target_sensitivity > 0.0 && self.target_sensitivity <= 1.0) {
            return Err(Error::InvalidConfig(format!("target_sensitivity {} outside (0, 1]", self.target_sensitivity)));
        }
        self.synth.validate()?;
        self.split.validate()?;
        self.model.validate()?;
        self.train.validate()?;
        self.search.validate()
    }

    pub fn checkpoint_path(&self, variant: Variant) -> PathBuf {
        self.paths.checkpoints.join(format!("{}.vgm", variant.name()))
    }

    pub fn threshold_path(&self, variant: Variant) -> PathBuf {
        self.paths.checkpoints.join(format!("{}.threshold.json", variant.name()))
    }

    pub fn history_path(&self, variant: Variant) -> PathBuf {
        self.paths.checkpoints.join(format!("{}.history.csv", variant.name()))
    }

    pub fn report_path(&self, name: &str) -> PathBuf {
        self.paths.reports.join(format!("{name}.report.json"))
    }
}

fn require(path: &Path, what: &str) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::InvalidInput(format!("{what} not found at {}", path.display())))
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    fs::write(path, text)?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn from_json_file<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_str(&fs::read_to_string(path)?)?)
}

/// Cohort characteristics in the shape of a baseline table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CohortSummary {
    pub encounters: usize,
    pub included: usize,
    pub ventilated: usize,
    pub exclusions: BTreeMap<ExclusionReason, usize>,
    pub age_mean: f64,
    pub age_sd: f64,
    pub male: usize,
    pub cxr_studies: usize,
    pub embeddings: usize,
}

impl CohortSummary {
    pub fn compute(encounters: &[Encounter], embeddings: usize) -> CohortSummary {
        let mut exclusions = BTreeMap::new();
        let mut included = Vec::new();
        for e in encounters {
            let d = apply_inclusion_criteria(e, f64::INFINITY);
            for r in d.reasons {
                *exclusions.entry(r).or_insert(0) += 1;
            }
            if d.included {
                included.push(e);
            }
        }
        let ages: Vec<f64> = included.iter().filter_map(|e| e.demographics.first().copied()).collect();
        let n = ages.len().max(1) as f64;
        let age_mean = ages.iter().sum::<f64>() / n;
        let age_sd = (ages.iter().map(|a| (a - age_mean).powi(2)).sum::<f64>() / n).sqrt();
        CohortSummary {
            encounters: encounters.len(),
            included: included.len(),
            ventilated: included.iter().filter(|e| e.t0().is_some()).count(),
            exclusions,
            age_mean,
            age_sd,
            male: included.iter().filter(|e| e.demographics.get(1) == Some(&1.0)).count(),
            cxr_studies: encounters.iter().map(|e| e.cxr_studies.len()).sum(),
            embeddings,
        }
    }

    pub fn to_markdown(&self) -> String {
        let pct = |k: usize| if self.included > 0 { 100.0 * k as f64 / self.included as f64 } else { 0.0 };
        let mut s = String::from("| Characteristic | Value |\n|---|---|\n");
        s += &format!("| Encounters generated | {} |\n", self.encounters);
        for (reason, n) in &self.exclusions {
            let name = serde_json::to_value(reason).ok().and_then(|v| v.as_str().map(str::to_string)).unwrap_or_default();
            s += &format!("| Excluded: {name} | {n} |\n");
        }
        s += &format!("| Included encounters | {} |\n", self.included);
        s += &format!("| Mechanically ventilated, n (%) | {} ({:.1}%) |\n", self.ventilated, pct(self.ventilated));
        s += &format!("| Age, mean (SD) | {:.1} ({:.1}) |\n", self.age_mean, self.age_sd);
        s += &format!("| Male, n (%) | {} ({:.1}%) |\n", self.male, pct(self.male));
        s += &format!("| Chest radiographs | {} |\n", self.cxr_studies);
        s
    }
}

/// Generates a synthetic cohort and its embedding table.
pub fn cmd_gen(cfg: &RunConfig) -> Result<CohortSummary> {
    cfg.validate()?;
    let (encounters, table) = generate(&cfg.synth)?;
    for p in [&cfg.paths.cohort, &cfg.paths.embeddings] {
        if let Some(dir) = p.parent() {
            fs::create_dir_all(dir)?;
        }
    }
    write_cohort(&cfg.paths.cohort, &encounters)?;
    save_embeddings(&cfg.paths.embeddings, &table)?;
    Ok(CohortSummary::compute(&encounters, table.len()))
}

/// Preprocessing state shared by all splits of a feature cache.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSummary {
    pub schema_version: u32,
    pub seed: u64,
    pub split: SplitConfig,
    pub embedding_dim: Option<usize>,
    pub encoder: Option<String>,
    pub accounting: Accounting,
    pub imputation: ImputationStats,
    pub standardizer: Standardizer,
}

fn summary_path(dir: &Path) -> PathBuf {
    dir.join("summary.json")
}

fn split_file(dir: &Path, split: SplitName, kind: &str) -> PathBuf {
    dir.join(format!("{}.{kind}", split.name()))
}

fn save_split(dir: &Path, data: &SplitData) -> Result<()> {
    let labels = data.labels();
    save_fmx(&split_file(dir, data.name, "ehr.fmx"), data.ehr.view(), &labels)?;
    let cxr_path = split_file(dir, data.name, "cxr.fmx");
    match &data.cxr {
        Some(z) => {
            let mut w = BufWriter::new(File::create(&cxr_path)?);
            write_fmx(&mut w, z.view(), &labels)?;
            w.flush()?;
        }
        None if cxr_path.exists() => fs::remove_file(&cxr_path)?,
        None => {}
    }
    let mut w = csv::Writer::from_path(split_file(dir, data.name, "index.csv"))?;
    for row in &data.index {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one split of a feature cache. Embeddings are loaded only when asked for.
pub fn load_split(dir: &Path, split: SplitName, with_cxr: bool) -> Result<SplitData> {
    let summary: FeatureSummary = from_json_file(&summary_path(dir))?;
    if summary.schema_version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion { expected: SCHEMA_VERSION, found: summary.schema_version });
    }
    let index: Vec<RowIndex> = csv::Reader::from_path(split_file(dir, split, "index.csv"))?
        .deserialize()
        .collect::<std::result::Result<_, _>>()?;
    let (ehr, labels) = load_fmx(&split_file(dir, split, "ehr.fmx"))?;
    let check = |rows: usize, labels: &[u8], what: &str| -> Result<()> {
        if rows != index.len() || labels.iter().zip(&index).any(|(l, r)| *l != r.label) {
            return Err(Error::ShapeMismatch(format!("{} {what} does not match its row index", split.name())));
        }
        Ok(())
    };
    check(ehr.nrows(), &labels, "feature matrix")?;
    let cxr = if with_cxr {
        let path = split_file(dir, split, "cxr.fmx");
        if !path.exists() {
            return Err(Error::MissingModality("cxr"));
        }
        let (z, labels) = read_fmx(BufReader::new(File::open(&path)?))?;
        check(z.nrows(), &labels, "embedding matrix")?;
        if Some(z.ncols()) != summary.embedding_dim {
            return Err(Error::DimMismatch { expected: summary.embedding_dim.unwrap_or(0), found: z.ncols() });
        }
        Some(z)
    } else {
        None
    };
    debug_assert_eq!(ehr.ncols(), COLUMN_COUNT);
    Ok(SplitData { name: split, index, ehr, cxr })
}

pub fn load_feature_summary(cfg: &RunConfig) -> Result<FeatureSummary> {
    let path = summary_path(&cfg.paths.features);
    require(&path, "feature cache")?;
    from_json_file(&path)
}

/// Builds the feature and alignment caches. Without an embedding file the
/// cache holds EHR rows only, which is enough for the EHR-only model.
pub fn cmd_featurize(cfg: &RunConfig) -> Result<Accounting> {
    cfg.validate()?;
    require(&cfg.paths.cohort, "cohort file")?;
    let encounters = read_cohort(&cfg.paths.cohort)?;
    let table = if cfg.paths.embeddings.exists() { Some(load_embeddings(&cfg.paths.embeddings)?) } else { None };
    let data = featurize(&encounters, table.as_ref(), cfg.seed, &cfg.split)?;
    let dir = &cfg.paths.features;
    fs::create_dir_all(dir)?;
    for split in SplitName::ALL {
        save_split(dir, data.split(split))?;
    }
    let summary = FeatureSummary {
        schema_version: SCHEMA_VERSION,
        seed: cfg.seed,
        split: cfg.split.clone(),
        embedding_dim: data.embedding_dim,
        encoder: table.map(|t| t.encoder),
        accounting: data.accounting.clone(),
        imputation: data.imputation,
        standardizer: data.standardizer,
    };
    write_text(&summary_path(dir), &to_json(&summary)?)?;
    Ok(data.accounting)
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub variant: Variant,
    pub best_epoch: usize,
    pub best_val_auroc: f64,
    pub epochs_run: usize,
    pub threshold: f64,
    pub checkpoint: PathBuf,
}

/// Trains one variant, then freezes its operating threshold on validation.
pub fn cmd_train(cfg: &RunConfig, variant: Variant) -> Result<TrainSummary> {
    cfg.validate()?;
    let summary = load_feature_summary(cfg)?;
    let dir = &cfg.paths.features;
    let train_split = load_split(dir, SplitName::Train, variant.uses_cxr())?;
    let val_split = load_split(dir, SplitName::Validation, variant.uses_cxr())?;
    let model = fit_model_config(&cfg.model, summary.embedding_dim);
    let outcome = train(variant, &model, &train_split.dataset(variant)?, &val_split.dataset(variant)?, &cfg.train)?;
    let threshold = choose_threshold(&outcome.params, &val_split, cfg.target_sensitivity)?;

    fs::create_dir_all(&cfg.paths.checkpoints)?;
    let checkpoint = cfg.checkpoint_path(variant);
    save_checkpoint(&outcome.params, &checkpoint)?;
    write_text(&cfg.threshold_path(variant), &to_json(&threshold)?)?;
    let mut history = String::from("epoch,train_loss,val_auroc\n");
    for r in &outcome.history {
        history += &format!("{},{},{}\n", r.epoch, r.train_loss, r.val_auroc);
    }
    write_text(&cfg.history_path(variant), &history)?;
    Ok(TrainSummary {
        variant,
        best_epoch: outcome.best_epoch,
        best_val_auroc: outcome.best_val_auroc,
        epochs_run: outcome.history.len(),
        threshold: threshold.threshold,
        checkpoint,
    })
}

/// Finite-difference check of every variant; fails if any configuration does.
pub fn cmd_gradcheck(cfg: &RunConfig, configs: usize) -> Result<Vec<gradcheck::GradcheckReport>> {
    let reports = gradcheck::run_all(cfg.seed, configs)?;
    if let Some(bad) = reports.iter().find(|r| !r.passed()) {
        return Err(Error::InvalidInput(format!(
            "gradient check failed for {} (seed {}): relative error {:.3e} at {}",
            bad.variant, bad.seed, bad.max_relative_error, bad.worst_parameter
        )));
    }
    Ok(reports)
}

/// Best setting of a search, stored next to its trial log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    pub variant: Variant,
    pub trial_id: usize,
    pub val_auroc: f64,
    pub model: ModelConfig,
    pub train: TrainConfig,
}

pub fn cmd_search(cfg: &RunConfig, variant: Variant) -> Result<SearchResult> {
    cfg.validate()?;
    let summary = load_feature_summary(cfg)?;
    let dir = &cfg.paths.features;
    let train_split = load_split(dir, SplitName::Train, variant.uses_cxr())?;
    let val_split = load_split(dir, SplitName::Validation, variant.uses_cxr())?;
    fs::create_dir_all(&cfg.paths.reports)?;
    let log = cfg.paths.reports.join(format!("search_{}.trials.csv", variant.name()));
    let model = fit_model_config(&cfg.model, summary.embedding_dim);
    let outcome = random_search(
        &cfg.search,
        variant,
        &model,
        &cfg.train,
        &train_split.dataset(variant)?,
        &val_split.dataset(variant)?,
        Some(&log),
    )?;
    let result = SearchResult {
        variant,
        trial_id: outcome.best.trial_id,
        val_auroc: outcome.best.val_auroc,
        model: outcome.best_model,
        train: outcome.best_train,
    };
    write_text(&cfg.paths.reports.join(format!("search_{}.best.json", variant.name())), &to_json(&result)?)?;
    Ok(result)
}

/// Scores the test split with a trained checkpoint at its frozen threshold.
pub fn cmd_eval(cfg: &RunConfig, variant: Variant, checkpoint: Option<&Path>) -> Result<EvalReport> {
    cfg.validate()?;
    let default_path = cfg.checkpoint_path(variant);
    let checkpoint = checkpoint.unwrap_or(&default_path);
    require(checkpoint, "checkpoint")?;
    let params = load_checkpoint(checkpoint)?;
    if params.variant != variant {
        return Err(Error::Checkpoint(format!("{} holds a {} model, not {variant}", checkpoint.display(), params.variant)));
    }
    let threshold_path = cfg.threshold_path(variant);
    if !threshold_path.exists() {
        return Err(Error::MissingThreshold(format!("no validation threshold at {}", threshold_path.display())));
    }
    let threshold: ThresholdRecord = from_json_file(&threshold_path)?;
    let test = load_split(&cfg.paths.features, SplitName::Test, variant.uses_cxr())?;
    let report = evaluate(&params, &test, &threshold, variant.label())?;
    let name = variant.name();
    write_text(&cfg.report_path(name), &report.to_json()?)?;
    write_text(&cfg.paths.reports.join(format!("{name}.roc.csv")), &report.roc_csv())?;
    Ok(report)
}

#[derive(Debug, Deserialize)]
struct PhysicianCall {
    encounter_id: String,
    call: u8,
}

/// Encounter-level counts of binary calls against cohort outcomes.
pub fn physician_counts(calls_csv: &Path, encounters: &[Encounter]) -> Result<ConfusionCounts> {
    let outcomes: BTreeMap<&str, bool> = encounters.iter().map(|e| (e.encounter_id.as_str(), e.t0().is_some())).collect();
    let mut counts = ConfusionCounts::default();
    let mut seen = BTreeMap::new();
    for row in csv::Reader::from_path(calls_csv)?.deserialize() {
        let PhysicianCall { encounter_id, call } = row?;
        if call > 1 {
            return Err(Error::Parse(format!("call for {encounter_id} must be 0 or 1, got {call}")));
        }
        let &ventilated = outcomes
            .get(encounter_id.as_str())
            .ok_or_else(|| Error::InvalidInput(format!("unknown encounter {encounter_id} in physician calls")))?;
        if seen.insert(encounter_id.clone(), ()).is_some() {
            return Err(Error::InvalidInput(format!("duplicate physician call for {encounter_id}")));
        }
        match (call == 1, ventilated) {
            (true, true) => counts.tp += 1,
            (true, false) => counts.fp += 1,
            (false, true) => counts.fn_ += 1,
            (false, false) => counts.tn += 1,
        }
    }
    Ok(counts)
}

/// Evaluates the configured physician calls file, if any.
pub fn cmd_eval_physician(cfg: &RunConfig) -> Result<Option<EvalReport>> {
    let Some(path) = &cfg.paths.physician_calls else { return Ok(None) };
    require(path, "physician calls")?;
    require(&cfg.paths.cohort, "cohort file")?;
    let counts = physician_counts(path, &read_cohort(&cfg.paths.cohort)?)?;
    let report = binary_predictor_metrics("Physician", counts)?;
    write_text(&cfg.report_path(PHYSICIAN), &report.to_json()?)?;
    Ok(Some(report))
}

/// Reports present in the reports directory: physician first, then variants
/// in configured order.
pub fn default_report_paths(cfg: &RunConfig) -> Vec<PathBuf> {
    std::iter::once(PHYSICIAN)
        .chain(cfg.variants.iter().map(|v| v.name()))
        .map(|name| cfg.report_path(name))
        .filter(|p| p.exists())
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct CompareOutputs {
    pub markdown: PathBuf,
    pub csv: PathBuf,
    pub auroc_bars: PathBuf,
    pub table: String,
}

pub fn cmd_compare(cfg: &RunConfig, reports: &[PathBuf]) -> Result<CompareOutputs> {
    let paths = if reports.is_empty() { default_report_paths(cfg) } else { reports.to_vec() };
    let loaded = paths.iter().map(|p| EvalReport::load(p)).collect::<Result<Vec<_>>>()?;
    let table = compare(&loaded)?;
    let out = CompareOutputs {
        markdown: cfg.paths.reports.join("comparison.md"),
        csv: cfg.paths.reports.join("comparison.csv"),
        auroc_bars: cfg.paths.reports.join("auroc_bars.csv"),
        table: table.markdown.clone(),
    };
    write_text(&out.markdown, &table.markdown)?;
    write_text(&out.csv, &table.csv)?;
    write_text(&out.auroc_bars, &auroc_bars_csv(&loaded))?;
    Ok(out)
}

/// Markdown summary of a run: cohort accounting, thresholds and the
/// comparison table. Missing stages are skipped.
pub fn cmd_report(cfg: &RunConfig) -> Result<PathBuf> {
    let mut s = String::from("# Run summary\n\n");
    if cfg.paths.cohort.exists() {
        let encounters = read_cohort(&cfg.paths.cohort)?;
        let embeddings = if cfg.paths.embeddings.exists() { load_embeddings(&cfg.paths.embeddings)?.len() } else { 0 };
        s += "## Cohort\n\n";
        s += &CohortSummary::compute(&encounters, embeddings).to_markdown();
        s += "\n";
    }
    if let Ok(f) = load_feature_summary(cfg) {
        let a = &f.accounting;
        s += "## Rows\n\n| Stage | Rows |\n|---|---|\n";
        s += &format!("| Candidate prediction times | {} |\n", a.rows_candidate);
        s += &format!("| Dropped by inclusion criteria | {} |\n", a.rows_dropped_inclusion);
        s += &format!("| Dropped without a qualifying radiograph | {} |\n", a.rows_dropped_unmatched_cxr);
        for split in SplitName::ALL {
            let rows = a.rows_by_split.get(&split).copied().unwrap_or(0);
            let pos = a.positive_rows_by_split.get(&split).copied().unwrap_or(0);
            s += &format!("| {} ({} positive) | {} |\n", split.name(), pos, rows);
        }
        s += "\n";
    }
    let thresholds: Vec<ThresholdRecord> = cfg
        .variants
        .iter()
        .map(|v| cfg.threshold_path(*v))
        .filter(|p| p.exists())
        .map(|p| from_json_file(&p))
        .collect::<Result<_>>()?;
    if !thresholds.is_empty() {
        s += "## Operating thresholds\n\n| Model | Threshold | Validation AUROC |\n|---|---|---|\n";
        for t in &thresholds {
            s += &format!("| {} | {:.6} | {:.3} |\n", t.variant.label(), t.threshold, t.validation_auroc);
        }
        s += "\n";
    }
    let reports = default_report_paths(cfg);
    if reports.len() >= 2 {
        s += "## Test performance\n\n";
        s += &cmd_compare(cfg, &reports)?.table;
    }
    let path = cfg.paths.reports.join("summary.md");
    write_text(&path, &s)?;
    Ok(path)
}

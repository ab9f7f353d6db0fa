//! Hourly feature assembly: median binning, bounded carry-forward,
//! training-mean imputation, derived baseline/trend/TSLM channels and the
//! `FMX1` matrix file.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::cohort::{self, binary_imv_label, Encounter, ObservationSeries};
use crate::error::{Error, Result};
use crate::schema::{
    self, Criterion, Layout, COLUMN_COUNT, N_COMORBIDITIES, N_DEMOGRAPHICS, N_DYNAMIC, N_MEDICATION_CATEGORIES,
    SCHEMA_VERSION,
};

pub const CARRY_FORWARD_HOURS: usize = 24;
pub const BASELINE_WINDOW_HOURS: usize = 72;
/// Hours of pre-admission history binned before the first grid point.
pub const HISTORY_HOURS: i64 = 72;
pub const MEDICATION_ACTIVE_HOURS: f64 = 24.0;

const FMX_MAGIC: [u8; 4] = *b"FMX1";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Observed,
    Filled,
    Missing,
    Imputed,
}

/// Median of the samples falling in `[g, g + 1)` for each grid point `g`.
pub fn bin_hourly(series: &ObservationSeries, grid: &[f64]) -> Vec<Option<f64>> {
    let mut out = vec![None; grid.len()];
    let samples = &series.samples;
    let mut start = samples.partition_point(|(t, _)| grid.first().is_some_and(|g| t < g));
    let mut bucket = Vec::new();
    for (cell, &g) in out.iter_mut().zip(grid) {
        while start < samples.len() && samples[start].0 < g {
            start += 1;
        }
        bucket.clear();
        let mut i = start;
        while i < samples.len() && samples[i].0 < g + 1.0 {
            bucket.push(samples[i].1);
            i += 1;
        }
        if !bucket.is_empty() {
            *cell = Some(median(&mut bucket));
        }
    }
    out
}

/// Median; an even count averages the two middle values.
pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Carries the last observation forward for at most `max_hours` bins.
///
/// Returns the filled values and the hours since the last observation. Cells
/// with no earlier observation report an age counted from the hour before the
/// first bin.
pub fn forward_fill(binned: &[Option<f64>], max_hours: usize) -> (Vec<Option<f64>>, Vec<f64>) {
    let mut values = Vec::with_capacity(binned.len());
    let mut tslm = Vec::with_capacity(binned.len());
    let mut last: Option<(usize, f64)> = None;
    for (i, cell) in binned.iter().enumerate() {
        if let Some(v) = cell {
            last = Some((i, *v));
            values.push(Some(*v));
            tslm.push(0.0);
            continue;
        }
        match last {
            Some((j, v)) => {
                let age = i - j;
                values.push((age <= max_hours).then_some(v));
                tslm.push(age as f64);
            }
            None => {
                values.push(None);
                tslm.push((i + 1) as f64);
            }
        }
    }
    (values, tslm)
}

/// Baseline and trend channels for one variable.
///
/// The baseline is the mean of observed bins in the 72 hours before the
/// current bin, falling back to the current filled value. The trend is the
/// difference between the two most recent observations, 0 with fewer than two.
pub fn derive_features(binned: &[Option<f64>], filled: &[Option<f64>]) -> (Vec<Option<f64>>, Vec<f64>) {
    let n = binned.len();
    let mut baseline = Vec::with_capacity(n);
    let mut trend = Vec::with_capacity(n);
    let (mut sum, mut count) = (0.0, 0usize);
    let (mut latest, mut previous): (Option<f64>, Option<f64>) = (None, None);
    for i in 0..n {
        if i > BASELINE_WINDOW_HOURS {
            if let Some(v) = binned[i - BASELINE_WINDOW_HOURS - 1] {
                sum -= v;
                count -= 1;
            }
        }
        baseline.push(if count > 0 { Some(sum / count as f64) } else { filled[i] });

        if let Some(v) = binned[i] {
            previous = latest;
            latest = Some(v);
            sum += v;
            count += 1;
        }
        trend.push(match (latest, previous) {
            (Some(a), Some(b)) => a - b,
            _ => 0.0,
        });
    }
    (baseline, trend)
}

/// Un-imputed per-encounter matrix. Absent cells are `None`.
#[derive(Debug, Clone, PartialEq)]
pub struct RawFeatureMatrix {
    pub encounter_id: String,
    pub timestamps: Vec<f64>,
    pub t0: Option<f64>,
    /// `rows × COLUMN_COUNT`, row-major.
    pub cells: Vec<Option<f64>>,
    /// `rows × N_DYNAMIC` provenance of the dynamic block.
    pub provenance: Vec<Provenance>,
    pub labels: Vec<u8>,
    pub severity: Vec<u8>,
}

impl RawFeatureMatrix {
    pub fn rows(&self) -> usize {
        self.timestamps.len()
    }

    pub fn row(&self, r: usize) -> &[Option<f64>] {
        &self.cells[r * COLUMN_COUNT..(r + 1) * COLUMN_COUNT]
    }
}

pub fn history_grid(e: &Encounter, last: f64) -> Vec<f64> {
    let last_k = (last - e.icu_admit).round() as i64;
    (-HISTORY_HOURS..=last_k).map(|k| cohort::grid_time(e.icu_admit, k)).collect()
}

/// Builds the un-imputed rows of `e` at `timestamps` (which must lie on the
/// admission-aligned hourly grid).
pub fn raw_features(e: &Encounter, timestamps: &[f64], t0: Option<f64>, criteria: &[Criterion]) -> RawFeatureMatrix {
    let layout = Layout::standard();
    let rows = timestamps.len();
    let mut cells = vec![None; rows * COLUMN_COUNT];
    let mut provenance = vec![Provenance::Missing; rows * N_DYNAMIC];
    let mut labels = Vec::with_capacity(rows);
    let mut severity = Vec::with_capacity(rows);
    let Some(&last) = timestamps.last() else {
        return RawFeatureMatrix {
            encounter_id: e.encounter_id.clone(),
            timestamps: vec![],
            t0,
            cells,
            provenance,
            labels,
            severity,
        };
    };

    let grid = history_grid(e, last);
    let grid_index: Vec<usize> =
        timestamps.iter().map(|t| ((t - e.icu_admit).round() as i64 + HISTORY_HOURS) as usize).collect();

    // Per-row filled dynamic values, kept for criteria and severity.
    let mut filled_rows = vec![None; rows * N_DYNAMIC];
    let empty = ObservationSeries { variable_id: 0, samples: vec![] };
    for v in 0..N_DYNAMIC {
        let series = e.observations.iter().find(|s| s.variable_id == v).unwrap_or(&empty);
        let binned = bin_hourly(series, &grid);
        let (filled, tslm) = forward_fill(&binned, CARRY_FORWARD_HOURS);
        let (baseline, trend) = derive_features(&binned, &filled);
        for (r, &gi) in grid_index.iter().enumerate() {
            let row = &mut cells[r * COLUMN_COUNT..(r + 1) * COLUMN_COUNT];
            row[layout.dynamic_start() + v] = filled[gi];
            row[layout.baseline_start() + v] = baseline[gi];
            row[layout.trend_start() + v] = Some(trend[gi]);
            row[layout.tslm_start() + v] = Some(tslm[gi]);
            provenance[r * N_DYNAMIC + v] = match (binned[gi], filled[gi]) {
                (Some(_), _) => Provenance::Observed,
                (None, Some(_)) => Provenance::Filled,
                (None, None) => Provenance::Missing,
            };
            filled_rows[r * N_DYNAMIC + v] = filled[gi];
        }
    }

    for (r, &t) in timestamps.iter().enumerate() {
        let row = &mut cells[r * COLUMN_COUNT..(r + 1) * COLUMN_COUNT];
        let dynamic = &filled_rows[r * N_DYNAMIC..(r + 1) * N_DYNAMIC];
        let mut col = 0;
        for d in &e.demographics {
            row[col] = Some(*d);
            col += 1;
        }
        for c in &e.comorbidities {
            row[col] = Some(if *c { 1.0 } else { 0.0 });
            col += 1;
        }
        let window_end = t + 1.0;
        for cat in 0..N_MEDICATION_CATEGORIES {
            let active = e.medication_events.iter().any(|m| {
                m.category() == cat && m.time() < window_end && m.time() >= window_end - MEDICATION_ACTIVE_HOURS
            });
            row[col] = Some(if active { 1.0 } else { 0.0 });
            col += 1;
        }
        for c in criteria {
            row[col] = Some(if c.evaluate(dynamic) { 1.0 } else { 0.0 });
            col += 1;
        }
        debug_assert_eq!(col, N_DEMOGRAPHICS + N_COMORBIDITIES + N_MEDICATION_CATEGORIES + criteria.len());

        let label = binary_imv_label(t, t0);
        labels.push(label);
        let pf = schema::ratio(dynamic[schema::var("pao2")], dynamic[schema::var("fio2")]);
        let sf = schema::ratio(dynamic[schema::var("spo2")], dynamic[schema::var("fio2")]);
        severity.push(cohort::severity_points(pf, sf, label == 1, false).unwrap_or(0));
    }

    RawFeatureMatrix {
        encounter_id: e.encounter_id.clone(),
        timestamps: timestamps.to_vec(),
        t0,
        cells,
        provenance,
        labels,
        severity,
    }
}

/// Per-column means over the training split.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImputationStats {
    pub means: Vec<f64>,
}

impl ImputationStats {
    pub fn fit<'a>(train: impl IntoIterator<Item = &'a RawFeatureMatrix>) -> Self {
        let mut sum = vec![0.0; COLUMN_COUNT];
        let mut count = vec![0usize; COLUMN_COUNT];
        for m in train {
            for (j, cell) in m.cells.iter().enumerate() {
                if let Some(v) = cell {
                    sum[j % COLUMN_COUNT] += v;
                    count[j % COLUMN_COUNT] += 1;
                }
            }
        }
        let means = sum.iter().zip(&count).map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 }).collect();
        ImputationStats { means }
    }

    pub fn is_fitted(&self) -> bool {
        !self.means.is_empty()
    }
}

/// Replaces absent cells with the training mean of their column.
pub fn impute_mean(cells: &[Option<f64>], stats: &ImputationStats) -> Result<Vec<f64>> {
    if !stats.is_fitted() {
        return Err(Error::UnfittedStats);
    }
    let cols = stats.means.len();
    if cells.len() % cols != 0 {
        return Err(Error::ShapeMismatch(format!("{} cells do not divide into {cols} columns", cells.len())));
    }
    Ok(cells.iter().enumerate().map(|(j, c)| c.unwrap_or(stats.means[j % cols])).collect())
}

/// Fully populated per-encounter model input.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    pub encounter_id: String,
    pub timestamps: Vec<f64>,
    pub t0: Option<f64>,
    pub values: Array2<f64>,
    pub tslm: Array2<f64>,
    pub labels: Vec<u8>,
    pub mask: Vec<Provenance>,
    pub severity: Vec<u8>,
}

impl FeatureMatrix {
    pub fn rows(&self) -> usize {
        self.timestamps.len()
    }
}

pub fn impute(raw: RawFeatureMatrix, stats: &ImputationStats) -> Result<FeatureMatrix> {
    if stats.is_fitted() && stats.means.len() != COLUMN_COUNT {
        return Err(Error::ShapeMismatch(format!(
            "imputation stats cover {} columns, schema has {COLUMN_COUNT}",
            stats.means.len()
        )));
    }
    let values = impute_mean(&raw.cells, stats)?;
    let rows = raw.rows();
    let values = Array2::from_shape_vec((rows, COLUMN_COUNT), values)
        .map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    let tslm_start = Layout::standard().tslm_start();
    let tslm = values.slice(ndarray::s![.., tslm_start..tslm_start + N_DYNAMIC]).to_owned();
    let mask = raw
        .provenance
        .into_iter()
        .map(|p| if p == Provenance::Missing { Provenance::Imputed } else { p })
        .collect();
    Ok(FeatureMatrix {
        encounter_id: raw.encounter_id,
        timestamps: raw.timestamps,
        t0: raw.t0,
        values,
        tslm,
        labels: raw.labels,
        mask,
        severity: raw.severity,
    })
}

/// Builds the imputed feature matrix of an included encounter.
pub fn assemble(e: &Encounter, stats: &ImputationStats, criteria: &[Criterion]) -> Result<FeatureMatrix> {
    if criteria.len() != schema::N_CRITERIA {
        return Err(Error::ShapeMismatch(format!("expected {} criteria, got {}", schema::N_CRITERIA, criteria.len())));
    }
    let t0 = e.t0();
    let timestamps = cohort::prediction_timestamps_with_onset(e, t0);
    impute(raw_features(e, &timestamps, t0, criteria), stats)
}

/// Z-score parameters from the training split. The TSLM block keeps raw hours.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub mean: Vec<f64>,
    pub scale: Vec<f64>,
}

impl Standardizer {
    pub fn fit<'a>(train: impl IntoIterator<Item = &'a FeatureMatrix>) -> Self {
        let mut sum = vec![0.0; COLUMN_COUNT];
        let mut sq = vec![0.0; COLUMN_COUNT];
        let mut n = 0usize;
        for m in train {
            for row in m.values.rows() {
                for (j, v) in row.iter().enumerate() {
                    sum[j] += v;
                    sq[j] += v * v;
                }
                n += 1;
            }
        }
        let tslm_start = Layout::standard().tslm_start();
        let mut mean = vec![0.0; COLUMN_COUNT];
        let mut scale = vec![1.0; COLUMN_COUNT];
        if n > 0 {
            for j in 0..tslm_start {
                let m = sum[j] / n as f64;
                let var = (sq[j] / n as f64 - m * m).max(0.0);
                mean[j] = m;
                let sd = var.sqrt();
                scale[j] = if sd > 1e-9 { sd } else { 1.0 };
            }
        }
        Standardizer { mean, scale }
    }

    pub fn apply(&self, values: &mut Array2<f64>) {
        for mut row in values.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - self.mean[j]) / self.scale[j];
            }
        }
    }
}

/// Writes an `FMX1` matrix: header, row-major f32 values, one label byte per row.
pub fn write_fmx<W: Write>(mut w: W, values: ArrayView2<f64>, labels: &[u8]) -> Result<()> {
    let (rows, cols) = values.dim();
    if labels.len() != rows {
        return Err(Error::ShapeMismatch(format!("{} labels for {rows} rows", labels.len())));
    }
    w.write_all(&FMX_MAGIC)?;
    w.write_all(&(rows as u32).to_le_bytes())?;
    w.write_all(&(cols as u32).to_le_bytes())?;
    w.write_all(&SCHEMA_VERSION.to_le_bytes())?;
    let mut buf = Vec::with_capacity(rows * cols * 4);
    for v in values.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    w.write_all(labels)?;
    Ok(())
}

pub fn read_fmx<R: Read>(mut r: R) -> Result<(Array2<f64>, Vec<u8>)> {
    let mut bytes = Vec::new();
    r.read_to_end(&mut bytes)?;
    if bytes.len() < 16 {
        return Err(Error::Truncated("feature matrix header".into()));
    }
    let magic: [u8; 4] = bytes[0..4].try_into().unwrap();
    if magic != FMX_MAGIC {
        return Err(Error::BadMagic { expected: FMX_MAGIC, found: magic });
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let (rows, cols, version) = (word(4) as usize, word(8) as usize, word(12));
    if version != SCHEMA_VERSION {
        return Err(Error::SchemaVersion { expected: SCHEMA_VERSION, found: version });
    }
    let body = rows * cols * 4;
    if bytes.len() < 16 + body + rows {
        return Err(Error::Truncated(format!("expected {} bytes, found {}", 16 + body + rows, bytes.len())));
    }
    if bytes.len() > 16 + body + rows {
        return Err(Error::Parse("trailing bytes after feature matrix".into()));
    }
    let values: Vec<f64> = bytes[16..16 + body]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    let labels = bytes[16 + body..].to_vec();
    let values = Array2::from_shape_vec((rows, cols), values).map_err(|e| Error::ShapeMismatch(e.to_string()))?;
    Ok((values, labels))
}

pub fn save_fmx(path: &Path, values: ArrayView2<f64>, labels: &[u8]) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_fmx(&mut w, values, labels)?;
    w.flush()?;
    let mut sidecar = BufWriter::new(File::create(columns_sidecar(path))?);
    for name in schema::column_names() {
        writeln!(sidecar, "{name}")?;
    }
    sidecar.flush()?;
    Ok(())
}

pub fn load_fmx(path: &Path) -> Result<(Array2<f64>, Vec<u8>)> {
    let (values, labels) = read_fmx(BufReader::new(File::open(path)?))?;
    if values.ncols() != COLUMN_COUNT {
        return Err(Error::ShapeMismatch(format!("{} columns, schema has {COLUMN_COUNT}", values.ncols())));
    }
    Ok((values, labels))
}

pub fn columns_sidecar(path: &Path) -> std::path::PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".columns.txt");
    name.into()
}

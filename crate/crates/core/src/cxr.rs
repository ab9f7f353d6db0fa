//! Chest-radiograph embedding tables and their alignment to hourly rows.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::cohort::{CxrSource, CxrStudy, Encounter};
use crate::error::{Error, Result};

const CXRE_MAGIC: [u8; 4] = *b"CXRE";

/// Studies from other departments qualify only this many hours back.
pub const OTHER_DEPT_LOOKBACK_HOURS: f64 = 72.0;

/// Precomputed foundation-model embeddings keyed by embedding key.
#[derive(Debug, Clone, PartialEq)]
pub struct CxrEmbeddingTable {
    pub dim: usize,
    pub entries: BTreeMap<String, Vec<f32>>,
    /// Encoder name, e.g. `remedis` or `medinsight`.
    pub encoder: String,
}

impl CxrEmbeddingTable {
    pub fn new(dim: usize, encoder: impl Into<String>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidDim(0));
        }
        Ok(CxrEmbeddingTable { dim, entries: BTreeMap::new(), encoder: encoder.into() })
    }

    pub fn insert(&mut self, key: impl Into<String>, vector: Vec<f32>) -> Result<()> {
        if vector.len() != self.dim {
            return Err(Error::DimMismatch { expected: self.dim, found: vector.len() });
        }
        if vector.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidInput("non-finite embedding value".into()));
        }
        self.entries.insert(key.into(), vector);
        Ok(())
    }

    pub fn get(&self, key: &str) -> Option<&[f32]> {
        self.entries.get(key).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::with_capacity(12 + self.entries.len() * (2 + 16 + 4 * self.dim));
        out.extend_from_slice(&CXRE_MAGIC);
        out.extend_from_slice(&(self.entries.len() as u32).to_le_bytes());
        out.extend_from_slice(&(self.dim as u32).to_le_bytes());
        for (id, vector) in &self.entries {
            let len = u16::try_from(id.len())
                .map_err(|_| Error::InvalidInput(format!("embedding key longer than 65535 bytes: {id}")))?;
            if vector.len() != self.dim {
                return Err(Error::DimMismatch { expected: self.dim, found: vector.len() });
            }
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(id.as_bytes());
            for v in vector {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8], encoder: impl Into<String>) -> Result<Self> {
        let mut cursor = Cursor { bytes, pos: 0 };
        let magic: [u8; 4] = cursor.take(4, "magic")?.try_into().unwrap();
        if magic != CXRE_MAGIC {
            return Err(Error::BadMagic { expected: CXRE_MAGIC, found: magic });
        }
        let count = cursor.u32("entry count")?;
        let dim = cursor.u32("dimension")?;
        if dim == 0 {
            return Err(Error::InvalidDim(0));
        }
        let mut table = CxrEmbeddingTable::new(dim as usize, encoder)?;
        for i in 0..count {
            let len = u16::from_le_bytes(cursor.take(2, "id length")?.try_into().unwrap()) as usize;
            let id = std::str::from_utf8(cursor.take(len, "id")?)
                .map_err(|e| Error::Parse(format!("entry {i}: {e}")))?
                .to_string();
            let raw = cursor.take(4 * dim as usize, "embedding")?;
            let vector = raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
            if table.entries.contains_key(&id) {
                return Err(Error::Parse(format!("duplicate embedding key {id:?}")));
            }
            table.insert(id, vector)?;
        }
        if cursor.pos != bytes.len() {
            return Err(Error::Parse(format!("{} trailing bytes after embeddings", bytes.len() - cursor.pos)));
        }
        Ok(table)
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Truncated(format!("{what} at byte {}", self.pos)));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }
}

pub fn encoder_sidecar(path: &Path) -> PathBuf {
    let mut name = path.as_os_str().to_owned();
    name.push(".encoder.txt");
    name.into()
}

pub fn save_embeddings(path: &Path, table: &CxrEmbeddingTable) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&table.to_bytes()?)?;
    w.flush()?;
    fs::write(encoder_sidecar(path), format!("{}\n", table.encoder))?;
    Ok(())
}

/// Loads a `CXRE` table; the encoder name comes from the sidecar when present.
pub fn load_embeddings(path: &Path) -> Result<CxrEmbeddingTable> {
    let bytes = fs::read(path)?;
    let encoder = match fs::read_to_string(encoder_sidecar(path)) {
        Ok(s) => s.trim().to_string(),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => String::new(),
        Err(e) => return Err(e.into()),
    };
    CxrEmbeddingTable::from_bytes(&bytes, encoder)
}

/// One hourly row paired with the radiograph it sees.
#[derive(Debug, Clone, PartialEq)]
pub struct AlignedSample {
    pub encounter_id: String,
    pub timestamp: f64,
    /// Row index in the encounter's feature matrix.
    pub row: usize,
    pub study_id: String,
    pub embedding_key: String,
    pub embedding_age_hours: f64,
}

/// Most recent qualifying study at `t`.
///
/// ICU studies persist for the rest of the encounter. Only when no ICU study
/// exists at or before `t` does a study from another department within the
/// preceding 72 hours qualify. Equal acquisition times resolve to the
/// lexicographically smallest study id.
pub fn match_study(studies: &[CxrStudy], t: f64) -> Option<&CxrStudy> {
    let latest = |source: CxrSource, earliest: f64| {
        studies
            .iter()
            .filter(|s| s.source == source && s.acquired_at <= t && s.acquired_at >= earliest)
            .min_by(|a, b| b.acquired_at.total_cmp(&a.acquired_at).then_with(|| a.study_id.cmp(&b.study_id)))
    };
    latest(CxrSource::Icu, f64::NEG_INFINITY)
        .or_else(|| latest(CxrSource::OtherDept, t - OTHER_DEPT_LOOKBACK_HOURS))
}

/// Pairs each row at `timestamps` with its radiograph; unmatched rows are dropped.
pub fn align(e: &Encounter, timestamps: &[f64], table: &CxrEmbeddingTable) -> Result<Vec<AlignedSample>> {
    for s in &e.cxr_studies {
        if table.get(&s.embedding_key).is_none() {
            return Err(Error::UnresolvedEmbedding(s.embedding_key.clone()));
        }
    }
    Ok(timestamps
        .iter()
        .enumerate()
        .filter_map(|(row, &t)| {
            match_study(&e.cxr_studies, t).map(|s| AlignedSample {
                encounter_id: e.encounter_id.clone(),
                timestamp: t,
                row,
                study_id: s.study_id.clone(),
                embedding_key: s.embedding_key.clone(),
                embedding_age_hours: t - s.acquired_at,
            })
        })
        .collect())
}

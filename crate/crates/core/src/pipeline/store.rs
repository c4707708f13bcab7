//! Per-cell run directories: `metrics.csv`, `history.csv` (weedout arm
//! only) and `manifest.json`, which is written last and carries sha256
//! digests of the CSVs plus a checksum over itself.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{Arm, EpochRow, PhaseTimings, RunRecord};
use crate::error::{Error, Result};
use crate::network::{hex, NetworkSpec};
use crate::search::{HistoryRow, SearchHistory};
use crate::sparsity::{MaskRecord, MaskSet, SparsityRatio};

pub const MANIFEST: &str = "manifest.json";
pub const METRICS: &str = "metrics.csv";
pub const HISTORY: &str = "history.csv";
const FORMAT: &str = "weedout-run";
const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellStatus {
    Completed,
    Failed,
}

/// Everything about a completed run that is not in the CSVs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub spec: NetworkSpec,
    pub parent_checksum: String,
    pub mask: MaskRecord,
    pub active_parameters: usize,
    pub fitness_evaluations: usize,
    pub timings: PhaseTimings,
    pub total_s: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub run_id: String,
    pub arm: Arm,
    pub eta: SparsityRatio,
    pub seed: u64,
    pub status: CellStatus,
    pub error: Option<String>,
    pub run: Option<RunSummary>,
    /// The experiment config exactly as read.
    pub config: String,
    /// sha256 of each data file in the directory.
    pub files: BTreeMap<String, String>,
    pub checksum: String,
}

impl Manifest {
    fn digest(&self) -> Result<String> {
        let mut unsigned = self.clone();
        unsigned.checksum.clear();
        let bytes = serde_json::to_vec(&unsigned).map_err(|e| Error::Serde(e.to_string()))?;
        Ok(sha256(&bytes))
    }

    fn seal(mut self) -> Result<Self> {
        self.checksum = self.digest()?;
        Ok(self)
    }
}

/// A run directory as read back from disk.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredRun {
    pub manifest: Manifest,
    /// Present for completed cells.
    pub record: Option<RunRecord>,
}

pub fn sha256(bytes: &[u8]) -> String {
    hex(&Sha256::digest(bytes))
}

fn to_csv<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.into_inner().map_err(|e| Error::Serde(e.to_string()))
}

fn from_csv<T: for<'de> Deserialize<'de>>(bytes: &[u8], path: &Path) -> Result<Vec<T>> {
    csv::Reader::from_reader(bytes)
        .deserialize()
        .collect::<std::result::Result<Vec<T>, _>>()
        .map_err(|e| Error::Serde(format!("{}: {e}", path.display())))
}

pub fn metrics_csv(rows: &[EpochRow]) -> Result<Vec<u8>> {
    to_csv(rows)
}

pub fn history_csv(history: &SearchHistory) -> Result<Vec<u8>> {
    to_csv(&history.rows)
}

fn write_file(dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
    let path = dir.join(name);
    fs::write(&path, bytes).map_err(|e| Error::io(&path, e))
}

fn write_manifest(dir: &Path, m: &Manifest) -> Result<()> {
    let text = serde_json::to_string_pretty(m).map_err(|e| Error::Serde(e.to_string()))?;
    let tmp = dir.join(format!("{MANIFEST}.tmp"));
    fs::write(&tmp, text).map_err(|e| Error::io(&tmp, e))?;
    let dst = dir.join(MANIFEST);
    fs::rename(&tmp, &dst).map_err(|e| Error::io(&dst, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

pub fn write_run(dir: &Path, rec: &RunRecord, config: &str) -> Result<()> {
    create_dir(dir)?;
    let mut files = BTreeMap::new();
    let metrics = metrics_csv(&rec.epochs)?;
    write_file(dir, METRICS, &metrics)?;
    files.insert(METRICS.to_string(), sha256(&metrics));
    if let Some(h) = &rec.history {
        let bytes = history_csv(h)?;
        write_file(dir, HISTORY, &bytes)?;
        files.insert(HISTORY.to_string(), sha256(&bytes));
    }
    let m = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        run_id: rec.run_id.clone(),
        arm: rec.arm,
        eta: rec.eta,
        seed: rec.seed,
        status: CellStatus::Completed,
        error: None,
        run: Some(RunSummary {
            spec: rec.spec.clone(),
            parent_checksum: rec.parent_checksum.clone(),
            mask: rec.mask.to_record(),
            active_parameters: rec.active_parameters,
            fitness_evaluations: rec.fitness_evaluations,
            timings: rec.timings,
            total_s: rec.timings.total(),
        }),
        config: config.into(),
        files,
        checksum: String::new(),
    }
    .seal()?;
    write_manifest(dir, &m)
}

pub fn write_failed(dir: &Path, arm: Arm, eta: SparsityRatio, seed: u64, error: &str, config: &str) -> Result<()> {
    create_dir(dir)?;
    for name in [METRICS, HISTORY] {
        let p = dir.join(name);
        if p.exists() {
            fs::remove_file(&p).map_err(|e| Error::io(&p, e))?;
        }
    }
    let m = Manifest {
        format: FORMAT.into(),
        version: VERSION,
        run_id: super::run_id(arm, eta, seed),
        arm,
        eta,
        seed,
        status: CellStatus::Failed,
        error: Some(error.into()),
        run: None,
        config: config.into(),
        files: BTreeMap::new(),
        checksum: String::new(),
    }
    .seal()?;
    write_manifest(dir, &m)
}

/// Reads and verifies a manifest. Any digest mismatch is a checksum error.
pub fn read_manifest(dir: &Path) -> Result<Manifest> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let m: Manifest = serde_json::from_str(&text)
        .map_err(|e| Error::Checksum(format!("{}: unreadable manifest: {e}", path.display())))?;
    if m.format != FORMAT || m.version != VERSION {
        return Err(Error::Checksum(format!(
            "{}: unsupported format {} v{}",
            path.display(),
            m.format,
            m.version
        )));
    }
    if m.digest()? != m.checksum {
        return Err(Error::Checksum(format!("{}: manifest checksum mismatch", path.display())));
    }
    Ok(m)
}

fn read_verified(dir: &Path, name: &str, m: &Manifest) -> Result<Vec<u8>> {
    let path = dir.join(name);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    match m.files.get(name) {
        Some(want) if *want == sha256(&bytes) => Ok(bytes),
        _ => Err(Error::Checksum(format!("{}: digest does not match manifest", path.display()))),
    }
}

pub fn load_run(dir: &Path) -> Result<StoredRun> {
    let manifest = read_manifest(dir)?;
    if manifest.status == CellStatus::Failed {
        return Ok(StoredRun { manifest, record: None });
    }
    let summary = manifest
        .run
        .clone()
        .ok_or_else(|| Error::Checksum(format!("{}: completed cell without run summary", dir.display())))?;
    let metrics_path = dir.join(METRICS);
    let epochs: Vec<EpochRow> = from_csv(&read_verified(dir, METRICS, &manifest)?, &metrics_path)?;
    let history = if manifest.files.contains_key(HISTORY) {
        let rows: Vec<HistoryRow> = from_csv(&read_verified(dir, HISTORY, &manifest)?, &dir.join(HISTORY))?;
        Some(SearchHistory { rows })
    } else {
        None
    };
    let mask = MaskSet::from_record(&summary.spec, &summary.mask)?;
    let record = RunRecord {
        run_id: manifest.run_id.clone(),
        arm: manifest.arm,
        eta: manifest.eta,
        seed: manifest.seed,
        spec: summary.spec,
        parent_checksum: summary.parent_checksum,
        mask,
        active_parameters: summary.active_parameters,
        epochs,
        history,
        fitness_evaluations: summary.fitness_evaluations,
        timings: summary.timings,
    };
    Ok(StoredRun {
        manifest,
        record: Some(record),
    })
}

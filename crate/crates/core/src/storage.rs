//! On-disk datasets: one CSV file per cycle plus a `manifest.json`.
//!
//! Cycle files are UTF-8 with LF endings. The first line holds the 34 canonical
//! feature names; every following line is one sample. Numbers use the shortest
//! decimal form that parses back to the identical `f64`, so a write/read round
//! trip is bitwise exact. The manifest is a single JSON document with sorted
//! keys:
//!
//! ```json
//! {
//!   "entries": [
//!     {"cycle_id": "...", "file": "cycles/<id>.csv", "label": "Good", "quality": {...},
//!      "rows": 117, "sample_period_ms": 10, "source": "Synthetic", "split": null}
//!   ],
//!   "format_version": 1,
//!   "name": "synthetic",
//!   "schema_fingerprint": "<sha256 hex>"
//! }
//! ```

use std::collections::HashSet;
use std::fmt::Write as _;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::types::{
    validate_cycle, CycleRecord, Dataset, FeatureKind, FeatureSchema, Label, ProcessSetpoints,
    QualityIndicators, Source, SETPOINT_COUNT,
};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StorageError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("{path}: header mismatch: {detail}")]
    Header { path: PathBuf, detail: String },
    #[error("{path}: line {line}, column {column}: cannot parse {value:?} as a number")]
    Parse {
        path: PathBuf,
        line: usize,
        column: usize,
        value: String,
    },
    #[error("{path}: line {line} has {found} fields, expected {expected}")]
    Ragged {
        path: PathBuf,
        line: usize,
        expected: usize,
        found: usize,
    },
    #[error("{path}: invalid cycle: {detail}")]
    Invalid { path: PathBuf, detail: String },
    #[error("{path}: malformed manifest: {detail}")]
    Manifest { path: PathBuf, detail: String },
    #[error("manifest entry {cycle_id} references missing file {path}")]
    DanglingReference { cycle_id: String, path: PathBuf },
    #[error("schema fingerprint mismatch: data has {found}, expected {expected}; the dataset was written with an incompatible schema")]
    FingerprintMismatch { expected: String, found: String },
    #[error("duplicate cycle id {0}")]
    DuplicateId(String),
}

impl StorageError {
    fn io(path: &Path, source: io::Error) -> Self {
        StorageError::Io {
            path: path.to_path_buf(),
            source,
        }
    }
}

/// Write one cycle as CSV.
pub fn write_cycle(record: &CycleRecord, schema: &FeatureSchema, path: &Path) -> Result<(), StorageError> {
    let violations = validate_cycle(record, schema);
    if !violations.is_empty() {
        return Err(StorageError::Invalid {
            path: path.to_path_buf(),
            detail: violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "),
        });
    }
    let mut out = String::with_capacity(record.samples.len() * 12);
    out.push_str(&schema.names().collect::<Vec<_>>().join(","));
    out.push('\n');
    for row in record.samples.rows() {
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            // Display for f64 is the shortest representation that round-trips.
            write!(out, "{v}").expect("write to String");
        }
        out.push('\n');
    }
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|e| StorageError::io(parent, e))?;
    }
    fs::write(path, out).map_err(|e| StorageError::io(path, e))
}

/// Parse a cycle CSV into its sample matrix, checking the header against `schema`.
pub fn read_cycle_matrix(path: &Path, schema: &FeatureSchema) -> Result<Array2<f64>, StorageError> {
    let text = fs::read_to_string(path).map_err(|e| StorageError::io(path, e))?;
    let mut lines = text.lines();
    let header: Vec<&str> = lines.next().unwrap_or("").split(',').collect();
    let expected: Vec<&str> = schema.names().collect();
    if header != expected {
        let detail = if let Some(missing) = expected.iter().find(|n| !header.contains(n)) {
            format!("missing column {missing:?} ({} of {} columns present)", header.len(), expected.len())
        } else if let Some(extra) = header.iter().find(|n| !expected.contains(n)) {
            format!("unexpected column {extra:?}")
        } else {
            "columns out of canonical order".to_string()
        };
        return Err(StorageError::Header {
            path: path.to_path_buf(),
            detail,
        });
    }
    let width = expected.len();
    let mut values = Vec::new();
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != width {
            return Err(StorageError::Ragged {
                path: path.to_path_buf(),
                line: line_no,
                expected: width,
                found: fields.len(),
            });
        }
        for (c, field) in fields.iter().enumerate() {
            let v: f64 = field.parse().map_err(|_| StorageError::Parse {
                path: path.to_path_buf(),
                line: line_no,
                column: c + 1,
                value: (*field).to_string(),
            })?;
            values.push(v);
        }
        rows += 1;
    }
    Ok(Array2::from_shape_vec((rows, width), values).expect("row-major buffer matches shape"))
}

/// Metadata a cycle file does not carry itself.
#[derive(Debug, Clone, PartialEq)]
pub struct CycleMeta {
    pub cycle_id: String,
    pub label: Label,
    pub source: Source,
    pub sample_period_ms: u32,
    pub quality: Option<QualityIndicators>,
}

/// Read and validate one cycle file. Setpoints are recovered from the constant setpoint columns.
pub fn read_cycle(path: &Path, schema: &FeatureSchema, meta: CycleMeta) -> Result<CycleRecord, StorageError> {
    let samples = read_cycle_matrix(path, schema)?;
    let setpoint_cols: Vec<usize> = schema
        .features()
        .iter()
        .enumerate()
        .filter(|(_, f)| f.kind == FeatureKind::Setpoint)
        .map(|(i, _)| i)
        .collect();
    if setpoint_cols.len() != SETPOINT_COUNT || samples.nrows() == 0 {
        return Err(StorageError::Invalid {
            path: path.to_path_buf(),
            detail: "cannot recover setpoints".into(),
        });
    }
    let mut sp = [0.0; SETPOINT_COUNT];
    for (slot, &c) in sp.iter_mut().zip(&setpoint_cols) {
        *slot = samples[[0, c]];
    }
    let record = CycleRecord {
        cycle_id: meta.cycle_id,
        source: meta.source,
        label: meta.label,
        sample_period_ms: meta.sample_period_ms,
        samples,
        setpoints: ProcessSetpoints::from_array(sp),
        quality: meta.quality,
    };
    let violations = validate_cycle(&record, schema);
    if !violations.is_empty() {
        return Err(StorageError::Invalid {
            path: path.to_path_buf(),
            detail: violations.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "),
        });
    }
    Ok(record)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub cycle_id: String,
    /// Path relative to the dataset directory.
    pub file: String,
    pub label: Label,
    pub source: Source,
    pub sample_period_ms: u32,
    pub rows: usize,
    pub split: Option<String>,
    pub quality: Option<QualityIndicators>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub name: String,
    pub schema_fingerprint: String,
    pub entries: Vec<ManifestEntry>,
}

/// Serialize any value as pretty JSON with recursively sorted object keys and a trailing newline.
pub fn to_sorted_json<T: Serialize>(value: &T) -> Result<String, serde_json::Error> {
    // serde_json::Value objects are BTreeMaps, so converting sorts every key.
    let v = serde_json::to_value(value)?;
    let mut s = serde_json::to_string_pretty(&v)?;
    s.push('\n');
    Ok(s)
}

fn check_cycle_id(id: &str) -> bool {
    !id.is_empty() && id.chars().all(|c| c.is_ascii_alphanumeric() || "-_.+".contains(c)) && !id.starts_with('.')
}

/// Write every cycle plus the manifest into `dir`. Returns the manifest.
pub fn write_dataset(dataset: &Dataset, dir: &Path, split: Option<&str>) -> Result<DatasetManifest, StorageError> {
    let mut seen = HashSet::new();
    let mut entries = Vec::with_capacity(dataset.len());
    for r in &dataset.records {
        if !seen.insert(r.cycle_id.as_str()) {
            return Err(StorageError::DuplicateId(r.cycle_id.clone()));
        }
        if !check_cycle_id(&r.cycle_id) {
            return Err(StorageError::Invalid {
                path: dir.to_path_buf(),
                detail: format!("cycle id {:?} is not usable as a file name", r.cycle_id),
            });
        }
        let file = format!("cycles/{}.csv", r.cycle_id);
        write_cycle(r, &dataset.schema, &dir.join(&file))?;
        entries.push(ManifestEntry {
            cycle_id: r.cycle_id.clone(),
            file,
            label: r.label,
            source: r.source,
            sample_period_ms: r.sample_period_ms,
            rows: r.samples.nrows(),
            split: split.map(str::to_string),
            quality: r.quality,
        });
    }
    let manifest = DatasetManifest {
        format_version: MANIFEST_VERSION,
        name: dataset.name.clone(),
        schema_fingerprint: dataset.schema.fingerprint(),
        entries,
    };
    write_manifest(&manifest, dir)?;
    Ok(manifest)
}

pub fn write_manifest(manifest: &DatasetManifest, dir: &Path) -> Result<(), StorageError> {
    let path = dir.join(MANIFEST_FILE);
    let json = to_sorted_json(manifest).map_err(|e| StorageError::Manifest {
        path: path.clone(),
        detail: e.to_string(),
    })?;
    fs::create_dir_all(dir).map_err(|e| StorageError::io(dir, e))?;
    fs::write(&path, json).map_err(|e| StorageError::io(&path, e))
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest, StorageError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(|e| StorageError::io(&path, e))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| StorageError::Manifest {
        path: path.clone(),
        detail: e.to_string(),
    })?;
    if manifest.format_version != MANIFEST_VERSION {
        return Err(StorageError::Manifest {
            path,
            detail: format!("unsupported format version {}", manifest.format_version),
        });
    }
    Ok(manifest)
}

/// Load a dataset written by [`write_dataset`], checking the schema fingerprint and every file.
pub fn read_dataset(dir: &Path, schema: &FeatureSchema) -> Result<Dataset, StorageError> {
    let manifest = read_manifest(dir)?;
    let expected = schema.fingerprint();
    if manifest.schema_fingerprint != expected {
        return Err(StorageError::FingerprintMismatch {
            expected,
            found: manifest.schema_fingerprint,
        });
    }
    let mut seen = HashSet::new();
    let mut records = Vec::with_capacity(manifest.entries.len());
    for e in &manifest.entries {
        if !seen.insert(e.cycle_id.as_str()) {
            return Err(StorageError::DuplicateId(e.cycle_id.clone()));
        }
        let path = dir.join(&e.file);
        if !path.is_file() {
            return Err(StorageError::DanglingReference {
                cycle_id: e.cycle_id.clone(),
                path,
            });
        }
        let record = read_cycle(
            &path,
            schema,
            CycleMeta {
                cycle_id: e.cycle_id.clone(),
                label: e.label,
                source: e.source,
                sample_period_ms: e.sample_period_ms,
                quality: e.quality,
            },
        )?;
        if record.samples.nrows() != e.rows {
            return Err(StorageError::Invalid {
                path,
                detail: format!("manifest says {} rows, file has {}", e.rows, record.samples.nrows()),
            });
        }
        records.push(record);
    }
    Ok(Dataset {
        name: manifest.name,
        schema: Arc::new(schema.clone()),
        records,
    })
}

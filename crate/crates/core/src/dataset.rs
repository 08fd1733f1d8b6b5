//! On-disk formats: headerless CSV matrices, the `dataset.json` manifest and
//! per-subject graph caches.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::alga::KernelOptions;
use crate::error::{Error, Result};
use crate::graph::{build_graph, LabeledDataset, TimeSeriesTable};
use crate::matrix::Matrix;

pub const DATASET_MANIFEST: &str = "dataset.json";
pub const CACHE_MANIFEST: &str = "manifest.json";

/// Shortest text that parses back to the same `f64`.
fn format_value(v: f64) -> String {
    format!("{v:?}")
}

pub fn format_matrix_csv(m: &Matrix) -> String {
    let mut out = String::with_capacity(m.len() * 20);
    for r in 0..m.rows() {
        for (c, v) in m.row(r).iter().enumerate() {
            if c > 0 {
                out.push(',');
            }
            out.push_str(&format_value(*v));
        }
        out.push('\n');
    }
    out
}

/// Parses a headerless numeric CSV; `origin` is only used in error messages.
pub fn parse_matrix_csv(text: &str, origin: &Path) -> Result<Matrix> {
    let mut data = Vec::new();
    let mut cols = None;
    let mut rows = 0;
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let parse_err = |detail: String| Error::Parse {
            path: origin.to_path_buf(),
            line: lineno + 1,
            detail,
        };
        let before = data.len();
        for field in line.split(',') {
            let v: f64 = field
                .trim()
                .parse()
                .map_err(|_| parse_err(format!("not a number: {field:?}")))?;
            data.push(v);
        }
        let width = data.len() - before;
        match cols {
            None => cols = Some(width),
            Some(c) if c != width => {
                return Err(parse_err(format!("expected {c} columns, found {width}")));
            }
            _ => {}
        }
        rows += 1;
    }
    let cols = cols.ok_or_else(|| Error::Parse {
        path: origin.to_path_buf(),
        line: 0,
        detail: "empty matrix file".into(),
    })?;
    Matrix::new(rows, cols, data)
}

pub fn read_matrix_csv(path: &Path) -> Result<Matrix> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix_csv(&text, path)
}

pub fn write_matrix_csv(path: &Path, m: &Matrix) -> Result<()> {
    fs::write(path, format_matrix_csv(m)).map_err(|e| Error::io(path, e))
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SubjectEntry {
    pub id: String,
    /// CSV path relative to the manifest's directory.
    pub timeseries: String,
    pub label: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub num_rois: usize,
    pub subjects: Vec<SubjectEntry>,
}

/// A subject's time series with its label, as stored in a dataset directory.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledSeries {
    pub table: TimeSeriesTable,
    pub label: usize,
}

/// Writes `timeseries/<id>.csv` for every subject plus `dataset.json`.
pub fn write_dataset(dir: &Path, name: &str, subjects: &[LabeledSeries]) -> Result<DatasetManifest> {
    let num_rois = subjects
        .first()
        .map(|s| s.table.num_rois())
        .ok_or_else(|| Error::invalid("dataset has no subjects"))?;
    let ts_dir = dir.join("timeseries");
    create_dir(&ts_dir)?;
    let mut entries = Vec::with_capacity(subjects.len());
    for s in subjects {
        let id = s.table.subject_id();
        if s.table.num_rois() != num_rois {
            return Err(Error::invalid(format!(
                "subject {id} has {} ROIs, expected {num_rois}",
                s.table.num_rois()
            )));
        }
        if s.label > 1 {
            return Err(Error::invalid(format!("subject {id} has label {}", s.label)));
        }
        if id.is_empty() || id.contains(['/', '\\']) || id.starts_with('.') {
            return Err(Error::invalid(format!("subject id {id:?} is not a plain file name")));
        }
        let rel = format!("timeseries/{id}.csv");
        write_matrix_csv(&dir.join(&rel), s.table.values())?;
        entries.push(SubjectEntry {
            id: id.to_string(),
            timeseries: rel,
            label: s.label,
        });
    }
    let manifest = DatasetManifest {
        name: name.to_string(),
        num_rois,
        subjects: entries,
    };
    write_json(&dir.join(DATASET_MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest> {
    read_json(&dir.join(DATASET_MANIFEST))
}

/// Loads every subject's series, checking them against the manifest.
pub fn load_series(dir: &Path) -> Result<(DatasetManifest, Vec<LabeledSeries>)> {
    let manifest = read_manifest(dir)?;
    let mut out = Vec::with_capacity(manifest.subjects.len());
    for s in &manifest.subjects {
        let path = dir.join(&s.timeseries);
        let values = read_matrix_csv(&path)?;
        if values.cols() != manifest.num_rois {
            return Err(Error::invalid(format!(
                "{}: {} ROIs, manifest says {}",
                path.display(),
                values.cols(),
                manifest.num_rois
            )));
        }
        if s.label > 1 {
            return Err(Error::invalid(format!("subject {} has label {}", s.id, s.label)));
        }
        out.push(LabeledSeries {
            table: TimeSeriesTable::new(s.id.clone(), values)?,
            label: s.label,
        });
    }
    Ok((manifest, out))
}

pub fn load_dataset(dir: &Path, threshold: f64) -> Result<LabeledDataset> {
    let (manifest, series) = load_series(dir)?;
    let graphs = series
        .iter()
        .map(|s| build_graph(&s.table, threshold))
        .collect::<Result<Vec<_>>>()?;
    LabeledDataset::new(
        manifest.name,
        series.iter().map(|s| s.table.subject_id().to_string()).collect(),
        graphs,
        series.iter().map(|s| s.label).collect(),
    )
}

/// Hash of a subject's source series, taken over its canonical CSV text.
pub fn source_hash(table: &TimeSeriesTable) -> String {
    sha256_hex(format_matrix_csv(table.values()).as_bytes())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GraphCacheManifest {
    pub subject_id: String,
    pub label: usize,
    pub threshold: f64,
    pub source_hash: String,
    /// Present when `E.csv` was written.
    pub k_hops: Option<usize>,
    pub kernel: KernelOptions,
    /// SHA-256 of each written file, by file name.
    pub files: Vec<(String, String)>,
}

/// Matrices stored in one subject's cache directory.
#[derive(Clone, Debug, PartialEq)]
pub struct GraphCache {
    pub manifest: GraphCacheManifest,
    pub x: Matrix,
    pub a: Matrix,
    pub f: Option<Matrix>,
    pub e: Option<Matrix>,
}

pub fn write_graph_cache(dir: &Path, cache: &GraphCache) -> Result<GraphCacheManifest> {
    create_dir(dir)?;
    let mut files = Vec::new();
    let mut put = |name: &str, m: &Matrix| -> Result<()> {
        let text = format_matrix_csv(m);
        let path = dir.join(name);
        fs::write(&path, &text).map_err(|e| Error::io(&path, e))?;
        files.push((name.to_string(), sha256_hex(text.as_bytes())));
        Ok(())
    };
    put("X.csv", &cache.x)?;
    put("A.csv", &cache.a)?;
    if let Some(f) = &cache.f {
        put("F.csv", f)?;
    }
    if let Some(e) = &cache.e {
        put("E.csv", e)?;
    }
    let manifest = GraphCacheManifest {
        files,
        ..cache.manifest.clone()
    };
    write_json(&dir.join(CACHE_MANIFEST), &manifest)?;
    Ok(manifest)
}

pub fn read_graph_cache(dir: &Path) -> Result<GraphCache> {
    let manifest: GraphCacheManifest = read_json(&dir.join(CACHE_MANIFEST))?;
    let optional = |name: &str| -> Result<Option<Matrix>> {
        let p: PathBuf = dir.join(name);
        if p.exists() {
            read_matrix_csv(&p).map(Some)
        } else {
            Ok(None)
        }
    };
    Ok(GraphCache {
        x: read_matrix_csv(&dir.join("X.csv"))?,
        a: read_matrix_csv(&dir.join("A.csv"))?,
        f: optional("F.csv")?,
        e: optional("E.csv")?,
        manifest,
    })
}

//! Benchmark dataset ingestion: tabular CSV and MNIST IDX loaders, min-max
//! voltage normalization, and seeded train/test splits.
//!
//! Features are carried as plain real matrices until [`normalize_to_voltage`]
//! maps each dimension onto the differential signal range [-vdd/2, +vdd/2].
//! Normalization statistics are fit on the training split only and reapplied
//! to test data, clamping anything that falls outside the rails.

use std::fs::File;
use std::io::Read;
use std::path::{Path, PathBuf};

use ndarray::Array2;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::device::DeviceParams;
use crate::error::{Error, Result};
use crate::rng;

/// A labeled classification dataset.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub name: String,
    /// samples x dims
    pub features: Array2<f64>,
    pub labels: Vec<usize>,
    pub class_count: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.features.ncols()
    }

    /// Rows at `indices`, in order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let mut features = Array2::zeros((indices.len(), self.dims()));
        let mut labels = Vec::with_capacity(indices.len());
        for (out, &idx) in indices.iter().enumerate() {
            features.row_mut(out).assign(&self.features.row(idx));
            labels.push(self.labels[idx]);
        }
        Dataset {
            name: self.name.clone(),
            features,
            labels,
            class_count: self.class_count,
        }
    }
}

/// Column layout of a tabular CSV: which header names the label, and which
/// columns are features (default: every other column).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularSchema {
    pub label_column: String,
    #[serde(default)]
    pub feature_columns: Option<Vec<String>>,
}

/// A loaded tabular dataset plus how many rows were dropped for missing values.
#[derive(Debug, Clone)]
pub struct TabularLoad {
    pub dataset: Dataset,
    pub dropped_rows: usize,
}

fn is_missing(field: &str) -> bool {
    let t = field.trim();
    t.is_empty() || t == "?" || t.eq_ignore_ascii_case("na")
}

/// Parse a headered CSV into a dataset. Rows with missing values are dropped
/// and counted; anything else unparseable is an error naming the line.
pub fn load_tabular(path: &Path, schema: &TabularSchema) -> Result<TabularLoad> {
    let display = path.display().to_string();
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_path(path)
        .map_err(|e| Error::Data(format!("{display}: {e}")))?;

    let headers: Vec<String> = reader
        .headers()
        .map_err(|e| Error::Data(format!("{display}: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let label_idx = headers
        .iter()
        .position(|h| h == &schema.label_column)
        .ok_or_else(|| {
            Error::Data(format!(
                "{display}: label column {:?} not in header {:?}",
                schema.label_column, headers
            ))
        })?;
    let feature_idx: Vec<usize> = match &schema.feature_columns {
        Some(cols) => cols
            .iter()
            .map(|c| {
                headers.iter().position(|h| h == c).ok_or_else(|| {
                    Error::Data(format!("{display}: feature column {c:?} not in header"))
                })
            })
            .collect::<Result<_>>()?,
        None => (0..headers.len()).filter(|&i| i != label_idx).collect(),
    };
    if feature_idx.is_empty() {
        return Err(Error::Data(format!("{display}: no feature columns")));
    }

    let mut rows: Vec<Vec<f64>> = Vec::new();
    let mut raw_labels: Vec<String> = Vec::new();
    let mut dropped = 0usize;
    for record in reader.records() {
        let record = record.map_err(|e| Error::Data(format!("{display}: {e}")))?;
        let line = record
            .position()
            .map(|p| p.line() as usize)
            .unwrap_or(0);
        if record.len() != headers.len() {
            return Err(Error::MalformedRow {
                path: display.clone(),
                line,
                detail: format!("expected {} fields, got {}", headers.len(), record.len()),
            });
        }
        if record.iter().any(is_missing) {
            dropped += 1;
            continue;
        }
        let mut row = Vec::with_capacity(feature_idx.len());
        for &i in &feature_idx {
            let field = record[i].trim();
            let value: f64 = field.parse().map_err(|_| Error::MalformedRow {
                path: display.clone(),
                line,
                detail: format!("cannot parse {:?} in column {:?} as a number", field, headers[i]),
            })?;
            if !value.is_finite() {
                return Err(Error::MalformedRow {
                    path: display.clone(),
                    line,
                    detail: format!("non-finite value in column {:?}", headers[i]),
                });
            }
            row.push(value);
        }
        rows.push(row);
        raw_labels.push(record[label_idx].trim().to_string());
    }
    if rows.is_empty() {
        return Err(Error::Data(format!(
            "{display}: no usable samples ({dropped} rows dropped)"
        )));
    }

    // class ids: numeric labels sort numerically, otherwise lexicographically
    let mut distinct: Vec<String> = raw_labels.clone();
    distinct.sort();
    distinct.dedup();
    if distinct.iter().all(|l| l.parse::<i64>().is_ok()) {
        distinct.sort_by_key(|l| l.parse::<i64>().unwrap());
    }
    let labels: Vec<usize> = raw_labels
        .iter()
        .map(|l| distinct.iter().position(|d| d == l).unwrap())
        .collect();

    let dims = feature_idx.len();
    let mut features = Array2::zeros((rows.len(), dims));
    for (r, row) in rows.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            features[[r, c]] = v;
        }
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "tabular".into());
    Ok(TabularLoad {
        dataset: Dataset {
            name,
            features,
            labels,
            class_count: distinct.len(),
        },
        dropped_rows: dropped,
    })
}

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn read_maybe_gz(path: &Path) -> Result<Vec<u8>> {
    let mut file = File::open(path)?;
    let mut bytes = Vec::new();
    if path.extension().is_some_and(|e| e == "gz") {
        flate2::read::GzDecoder::new(file).read_to_end(&mut bytes)?;
    } else {
        file.read_to_end(&mut bytes)?;
    }
    Ok(bytes)
}

fn idx_err(path: &Path, offset: u64, detail: String) -> Error {
    Error::Format {
        path: path.display().to_string(),
        offset: Some(offset),
        detail,
    }
}

fn be_u32(bytes: &[u8], offset: usize, path: &Path) -> Result<u32> {
    bytes
        .get(offset..offset + 4)
        .map(|b| u32::from_be_bytes([b[0], b[1], b[2], b[3]]))
        .ok_or_else(|| idx_err(path, offset as u64, "truncated header".into()))
}

/// Parse the standard IDX image/label pair (gzip accepted by extension).
/// With `downsample`, images are reduced by non-overlapping 2x2 mean pooling
/// (28x28 becomes 14x14 = 196 features); pixel values stay in 0..=255.
pub fn load_mnist(images_path: &Path, labels_path: &Path, downsample: bool) -> Result<Dataset> {
    let img = read_maybe_gz(images_path)?;
    let magic = be_u32(&img, 0, images_path)?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(idx_err(
            images_path,
            0,
            format!("bad image magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"),
        ));
    }
    let count = be_u32(&img, 4, images_path)? as usize;
    let rows = be_u32(&img, 8, images_path)? as usize;
    let cols = be_u32(&img, 12, images_path)? as usize;
    let expected = 16 + count * rows * cols;
    if img.len() != expected {
        return Err(idx_err(
            images_path,
            img.len().min(expected) as u64,
            format!("image payload is {} bytes, expected {}", img.len(), expected),
        ));
    }

    let lab = read_maybe_gz(labels_path)?;
    let magic = be_u32(&lab, 0, labels_path)?;
    if magic != IDX_LABELS_MAGIC {
        return Err(idx_err(
            labels_path,
            0,
            format!("bad label magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"),
        ));
    }
    let lab_count = be_u32(&lab, 4, labels_path)? as usize;
    if lab.len() != 8 + lab_count {
        return Err(idx_err(
            labels_path,
            lab.len().min(8 + lab_count) as u64,
            format!("label payload is {} bytes, expected {}", lab.len(), 8 + lab_count),
        ));
    }
    if lab_count != count {
        return Err(Error::Data(format!(
            "{} has {count} images but {} has {lab_count} labels",
            images_path.display(),
            labels_path.display()
        )));
    }
    if count == 0 {
        return Err(Error::Data(format!("{}: no images", images_path.display())));
    }

    let pool = downsample && rows % 2 == 0 && cols % 2 == 0;
    if downsample && !pool {
        return Err(Error::Data(format!(
            "cannot 2x2-pool odd image size {rows}x{cols}"
        )));
    }
    let (out_r, out_c) = if pool { (rows / 2, cols / 2) } else { (rows, cols) };
    let mut features = Array2::zeros((count, out_r * out_c));
    for s in 0..count {
        let base = 16 + s * rows * cols;
        if pool {
            for r in 0..out_r {
                for c in 0..out_c {
                    let i0 = base + (2 * r) * cols + 2 * c;
                    let i1 = base + (2 * r + 1) * cols + 2 * c;
                    let sum = img[i0] as f64
                        + img[i0 + 1] as f64
                        + img[i1] as f64
                        + img[i1 + 1] as f64;
                    features[[s, r * out_c + c]] = sum / 4.0;
                }
            }
        } else {
            for p in 0..rows * cols {
                features[[s, p]] = img[base + p] as f64;
            }
        }
    }
    let labels: Vec<usize> = lab[8..].iter().map(|&b| b as usize).collect();
    let class_count = labels.iter().copied().max().unwrap() + 1;
    Ok(Dataset {
        name: "mnist".into(),
        features,
        labels,
        class_count,
    })
}

/// Per-dimension affine map of feature ranges onto the voltage rails,
/// invertible for in-range values and reusable on held-out data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Normalizer {
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
    pub rail: f64,
}

impl Normalizer {
    pub fn fit(ds: &Dataset, device: &DeviceParams) -> Normalizer {
        let dims = ds.dims();
        let mut mins = vec![f64::INFINITY; dims];
        let mut maxs = vec![f64::NEG_INFINITY; dims];
        for row in ds.features.rows() {
            for (d, &v) in row.iter().enumerate() {
                mins[d] = mins[d].min(v);
                maxs[d] = maxs[d].max(v);
            }
        }
        Normalizer {
            mins,
            maxs,
            rail: device.rail(),
        }
    }

    /// Map features onto [-rail, +rail]; degenerate dimensions go to 0 and
    /// out-of-range values (test data beyond the fitted range) clamp.
    pub fn apply(&self, ds: &Dataset) -> Dataset {
        let mut out = ds.clone();
        for mut row in out.features.rows_mut() {
            for (d, v) in row.iter_mut().enumerate() {
                let span = self.maxs[d] - self.mins[d];
                *v = if span > 0.0 {
                    ((*v - self.mins[d]) / span * (2.0 * self.rail) - self.rail)
                        .clamp(-self.rail, self.rail)
                } else {
                    0.0
                };
            }
        }
        out
    }

    /// Inverse of [`Normalizer::apply`] for non-degenerate dimensions.
    pub fn invert(&self, voltage: f64, dim: usize) -> f64 {
        self.mins[dim] + (voltage + self.rail) / (2.0 * self.rail) * (self.maxs[dim] - self.mins[dim])
    }
}

/// Fit on `ds` and apply: every emitted value lies in [-vdd/2, +vdd/2].
pub fn normalize_to_voltage(ds: &Dataset, device: &DeviceParams) -> (Dataset, Normalizer) {
    let norm = Normalizer::fit(ds, device);
    (norm.apply(ds), norm)
}

/// Seeded shuffle-then-partition. Disjoint and exhaustive; both sides
/// non-empty. Normalization is deliberately not applied here: fit it on the
/// returned training part.
pub fn split(ds: &Dataset, train_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidParameter(format!(
            "train fraction must be in (0, 1), got {train_fraction}"
        )));
    }
    let n = ds.len();
    let n_train = (n as f64 * train_fraction).round() as usize;
    if n_train == 0 || n_train == n {
        return Err(Error::Data(format!(
            "split of {n} samples at {train_fraction} leaves an empty side"
        )));
    }
    let mut indices: Vec<usize> = (0..n).collect();
    indices.shuffle(&mut rng::stream(seed));
    Ok((ds.select(&indices[..n_train]), ds.select(&indices[n_train..])))
}

/// First `k` rows of a seeded shuffle; the whole dataset if `k >= len`.
pub fn subsample(ds: &Dataset, k: usize, seed: u64) -> Dataset {
    if k >= ds.len() {
        return ds.clone();
    }
    let mut indices: Vec<usize> = (0..ds.len()).collect();
    indices.shuffle(&mut rng::stream(seed));
    ds.select(&indices[..k])
}

/// Binary snapshot cache for prepared datasets, keyed by caller-supplied
/// byte strings (file hash, schema, normalization tag).
pub mod cache {
    use super::*;
    use sha2::{Digest, Sha256};
    use std::io::Write;

    const MAGIC: &[u8; 8] = b"MXDATA1\n";

    /// Hex digest over all key parts, length-prefixed so parts cannot bleed.
    pub fn key(parts: &[&[u8]]) -> String {
        let mut h = Sha256::new();
        for p in parts {
            h.update((p.len() as u64).to_le_bytes());
            h.update(p);
        }
        let out = h.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn path_for(dir: &Path, key: &str) -> PathBuf {
        dir.join(format!("{key}.mxds"))
    }

    pub fn store(dir: &Path, key: &str, ds: &Dataset) -> Result<PathBuf> {
        std::fs::create_dir_all(dir)?;
        let path = path_for(dir, key);
        let mut w = std::io::BufWriter::new(File::create(&path)?);
        w.write_all(MAGIC)?;
        let name = ds.name.as_bytes();
        w.write_all(&(name.len() as u64).to_le_bytes())?;
        w.write_all(name)?;
        for dim in [ds.len(), ds.dims(), ds.class_count] {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        for &l in &ds.labels {
            w.write_all(&(l as u32).to_le_bytes())?;
        }
        for &v in ds.features.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(path)
    }

    pub fn load(dir: &Path, key: &str) -> Result<Option<Dataset>> {
        let path = path_for(dir, key);
        if !path.exists() {
            return Ok(None);
        }
        let bytes = std::fs::read(&path)?;
        let bad = |detail: &str, offset: usize| {
            Error::Format {
                path: path.display().to_string(),
                offset: Some(offset as u64),
                detail: detail.into(),
            }
        };
        if bytes.len() < 8 || &bytes[..8] != MAGIC {
            return Err(bad("bad cache magic", 0));
        }
        let mut at = 8usize;
        let mut take_u64 = |at: &mut usize| -> Result<u64> {
            let b = bytes
                .get(*at..*at + 8)
                .ok_or_else(|| bad("truncated cache file", *at))?;
            *at += 8;
            Ok(u64::from_le_bytes(b.try_into().unwrap()))
        };
        let name_len = take_u64(&mut at)? as usize;
        let name = String::from_utf8_lossy(
            bytes
                .get(at..at + name_len)
                .ok_or_else(|| bad("truncated cache name", at))?,
        )
        .into_owned();
        at += name_len;
        let samples = take_u64(&mut at)? as usize;
        let dims = take_u64(&mut at)? as usize;
        let class_count = take_u64(&mut at)? as usize;
        let mut labels = Vec::with_capacity(samples);
        for _ in 0..samples {
            let b = bytes
                .get(at..at + 4)
                .ok_or_else(|| bad("truncated labels", at))?;
            labels.push(u32::from_le_bytes(b.try_into().unwrap()) as usize);
            at += 4;
        }
        let mut values = Vec::with_capacity(samples * dims);
        for _ in 0..samples * dims {
            let b = bytes
                .get(at..at + 8)
                .ok_or_else(|| bad("truncated features", at))?;
            values.push(f64::from_le_bytes(b.try_into().unwrap()));
            at += 8;
        }
        let features = Array2::from_shape_vec((samples, dims), values)
            .map_err(|e| bad(&format!("bad shape: {e}"), at))?;
        Ok(Some(Dataset {
            name,
            features,
            labels,
            class_count,
        }))
    }
}

/*
Copyright 2026 The isohash Authors

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
*/

//! Dataset ingestion, preprocessing, secant-target selection, synthetic
//! generators, and the binary dataset / model file formats.
//!
//! Dataset file (`NIBHDS1`): 7-byte magic, Q and N as u64 little-endian, a
//! flags byte (bit 0: rows unit-normalized, bit 1: mean-centered), then
//! Q·N row-major f32 little-endian values.
//!
//! Model file: one JSON header line
//! `{"version":1,"M":..,"N":..,"lambda":..,"alpha":..,"normalized":..,"mean":[..]}`,
//! a newline, then M·N row-major f64 little-endian values of W.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hashing::{enumerate_secants, secant_count, Dataset, HashModel, Preprocessing, SecantRef};

pub const DATASET_MAGIC: &[u8; 7] = b"NIBHDS1";
const HEADER_LEN: usize = 7 + 8 + 8 + 1;
pub const FLAG_NORMALIZED: u8 = 1;
pub const FLAG_CENTERED: u8 = 2;
pub const MODEL_VERSION: u32 = 1;

/// Centers the rows and scales each to unit ℓ2 norm.
pub fn preprocess(raw: ArrayView2<'_, f64>) -> Result<Dataset> {
    let mean = raw
        .mean_axis(Axis(0))
        .ok_or_else(|| Error::invalid("cannot preprocess an empty matrix"))?;
    apply_preprocessing(
        raw,
        &Preprocessing {
            mean: mean.to_vec(),
            normalized: true,
        },
    )
}

/// Applies stored preprocessing (e.g. a model's training statistics) to
/// new raw points.
pub fn apply_preprocessing(raw: ArrayView2<'_, f64>, pre: &Preprocessing) -> Result<Dataset> {
    if pre.mean.len() != raw.ncols() {
        return Err(Error::DimensionMismatch {
            context: "preprocessing mean",
            expected: (1, raw.ncols()),
            found: (1, pre.mean.len()),
        });
    }
    let mean = Array1::from(pre.mean.clone());
    let mut points = &raw - &mean;
    if pre.normalized {
        for (row, mut x) in points.axis_iter_mut(Axis(0)).enumerate() {
            let norm = x.dot(&x).sqrt();
            if norm == 0.0 || !norm.is_finite() {
                return Err(Error::ZeroRow { row });
            }
            x.mapv_inplace(|v| v / norm);
        }
    }
    Dataset::from_parts(points, mean, pre.normalized)
}

/// Secants for neighbor-preservation training: the lowest `low_frac` of all
/// pairwise distances with targets overridden to 0, plus the highest
/// `high_frac` with their true distances. Counts use floor; ties are broken
/// by enumeration order.
pub fn bre_secant_selection(data: &Dataset, low_frac: f64, high_frac: f64) -> Result<Vec<SecantRef>> {
    if !(low_frac > 0.0 && low_frac < 1.0 && high_frac > 0.0 && high_frac < 1.0) || low_frac + high_frac > 1.0 {
        return Err(Error::invalid(format!(
            "fractions must lie in (0, 1) with sum at most 1, got {low_frac} and {high_frac}"
        )));
    }
    let total = secant_count(data.len()) as usize;
    let low = (low_frac * total as f64).floor() as usize;
    let high = (high_frac * total as f64).floor() as usize;
    if low == 0 || high == 0 {
        return Err(Error::invalid(format!(
            "{} points give {total} pairs, too few for nonzero low ({low}) and high ({high}) counts",
            data.len()
        )));
    }
    let mut all: Vec<SecantRef> = enumerate_secants(data.len())
        .map(|(i, j)| SecantRef::measured(data, i, j))
        .collect();
    // Stable sort keeps enumeration order among equal distances.
    all.sort_by(|a, b| a.c.total_cmp(&b.c));
    let mut out: Vec<SecantRef> = all[..low].iter().map(|s| SecantRef { c: 0.0, ..*s }).collect();
    out.extend_from_slice(&all[total - high..]);
    Ok(out)
}

/// Q i.i.d. standard normal vectors in ℝᴺ (not preprocessed).
pub fn gen_random_dataset(q: usize, n: usize, seed: u64) -> Result<Dataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let points = Array2::from_shape_simple_fn((q, n), || StandardNormal.sample(&mut rng));
    Dataset::new(points)
}

/// Every translation of a `square`×`square` block of ones inside a
/// `grid`×`grid` image, flattened row-major.
pub fn gen_translating_squares(grid: usize, square: usize) -> Result<Dataset> {
    if square == 0 || square > grid {
        return Err(Error::invalid(format!("square size {square} must be in 1..={grid}")));
    }
    let positions = grid - square + 1;
    let mut points = Array2::zeros((positions * positions, grid * grid));
    for top in 0..positions {
        for left in 0..positions {
            let row = top * positions + left;
            for dy in 0..square {
                for dx in 0..square {
                    points[[row, (top + dy) * grid + left + dx]] = 1.0;
                }
            }
        }
    }
    Dataset::new(points)
}

fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Headerless comma-separated rows of decimal numbers.
pub fn load_csv(path: &Path) -> Result<Dataset> {
    let name = path.display().to_string();
    let file = fs::File::open(path).map_err(|e| Error::io(&name, e))?;
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (lineno, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(&name, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let mut row = Vec::new();
        for (col, field) in line.split(',').enumerate() {
            let v: f64 = field.trim().parse().map_err(|_| {
                Error::format(&name, format!("line {}: column {} is not a number: {field:?}", lineno + 1, col + 1))
            })?;
            if !v.is_finite() {
                return Err(Error::format(&name, format!("line {}: column {} is {v}", lineno + 1, col + 1)));
            }
            row.push(v);
        }
        if let Some(first) = rows.first() {
            if first.len() != row.len() {
                return Err(Error::format(
                    &name,
                    format!("line {}: expected {} columns, found {}", lineno + 1, first.len(), row.len()),
                ));
            }
        }
        rows.push(row);
    }
    let n = rows.first().map_or(0, Vec::len);
    let flat: Vec<f64> = rows.iter().flatten().copied().collect();
    let points = Array2::from_shape_vec((rows.len(), n), flat).map_err(|e| Error::format(&name, e.to_string()))?;
    Dataset::new(points).map_err(|e| Error::format(&name, e.to_string()))
}

/// Reads a `NIBHDS1` dataset file. Rows flagged as normalized are
/// renormalized in f64 to undo f32 rounding.
pub fn load_binary(path: &Path) -> Result<Dataset> {
    let name = path.display().to_string();
    let bytes = read_file(path)?;
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(
            &name,
            format!("header needs {HEADER_LEN} bytes, file has {}", bytes.len()),
        ));
    }
    if &bytes[..7] != DATASET_MAGIC {
        return Err(Error::format(&name, format!("bad magic at byte 0: {:?}", &bytes[..7])));
    }
    let q = u64::from_le_bytes(bytes[7..15].try_into().expect("8 bytes"));
    let n = u64::from_le_bytes(bytes[15..23].try_into().expect("8 bytes"));
    let flags = bytes[23];
    let expected = q
        .checked_mul(n)
        .and_then(|x| x.checked_mul(4))
        .ok_or_else(|| Error::format(&name, format!("shape {q}x{n} overflows")))?;
    let actual = (bytes.len() - HEADER_LEN) as u64;
    if actual != expected {
        return Err(Error::format(
            &name,
            format!("payload at byte {HEADER_LEN} should be {expected} bytes for {q}x{n}, found {actual}"),
        ));
    }
    let mut values = Vec::with_capacity((q * n) as usize);
    for (k, chunk) in bytes[HEADER_LEN..].chunks_exact(4).enumerate() {
        let v = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
        if !v.is_finite() {
            return Err(Error::format(&name, format!("non-finite value at byte {}", HEADER_LEN + 4 * k)));
        }
        values.push(v);
    }
    let mut points = Array2::from_shape_vec((q as usize, n as usize), values)
        .map_err(|e| Error::format(&name, e.to_string()))?;
    let normalized = flags & FLAG_NORMALIZED != 0;
    if normalized {
        for (row, mut x) in points.axis_iter_mut(Axis(0)).enumerate() {
            let norm = x.dot(&x).sqrt();
            if norm == 0.0 {
                return Err(Error::format(&name, format!("row {row} is zero but flagged normalized")));
            }
            x.mapv_inplace(|v| v / norm);
        }
    }
    Dataset::from_parts(points, Array1::zeros(n as usize), normalized).map_err(|e| Error::format(&name, e.to_string()))
}

pub fn encode_binary(data: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + 4 * data.len() * data.dim());
    out.extend_from_slice(DATASET_MAGIC);
    out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    out.extend_from_slice(&(data.dim() as u64).to_le_bytes());
    let centered = data.mean().iter().any(|&m| m != 0.0);
    out.push(if data.normalized() { FLAG_NORMALIZED } else { 0 } | if centered { FLAG_CENTERED } else { 0 });
    for v in data.points().iter() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    out
}

pub fn save_binary(data: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, encode_binary(data)).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Images from an IDX file (big-endian dims, unsigned bytes), flattened to
/// one row per image with pixel values as floats.
pub fn load_idx_images(path: &Path) -> Result<Dataset> {
    let name = path.display().to_string();
    let bytes = read_file(path)?;
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::format(&name, "bad IDX magic at byte 0"));
    }
    if bytes[2] != 0x08 {
        return Err(Error::format(&name, format!("byte 2: element type {:#04x} is not unsigned byte", bytes[2])));
    }
    let ndims = bytes[3] as usize;
    if ndims < 1 || bytes.len() < 4 + 4 * ndims {
        return Err(Error::format(&name, format!("header declares {ndims} dims but file has {} bytes", bytes.len())));
    }
    let dims: Vec<usize> = (0..ndims)
        .map(|d| u32::from_be_bytes(bytes[4 + 4 * d..8 + 4 * d].try_into().expect("4 bytes")) as usize)
        .collect();
    let count = dims[0];
    let row_len: usize = dims[1..].iter().product();
    let start = 4 + 4 * ndims;
    let expected = count * row_len;
    if bytes.len() - start != expected {
        return Err(Error::format(
            &name,
            format!("payload at byte {start} should be {expected} bytes, found {}", bytes.len() - start),
        ));
    }
    let values: Vec<f64> = bytes[start..].iter().map(|&b| b as f64).collect();
    let points = Array2::from_shape_vec((count, row_len.max(1)), values).map_err(|e| Error::format(&name, e.to_string()))?;
    Dataset::new(points).map_err(|e| Error::format(&name, e.to_string()))
}

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    version: u32,
    #[serde(rename = "M")]
    bits: usize,
    #[serde(rename = "N")]
    dim: usize,
    lambda: f64,
    alpha: f64,
    normalized: bool,
    mean: Vec<f64>,
}

pub fn encode_model(model: &HashModel) -> Vec<u8> {
    let header = ModelHeader {
        version: MODEL_VERSION,
        bits: model.bits(),
        dim: model.dim(),
        lambda: model.lambda,
        alpha: model.alpha,
        normalized: model.normalized,
        mean: model.mean.to_vec(),
    };
    let mut out = serde_json::to_vec(&header).expect("model header serializes");
    out.push(b'\n');
    for v in model.w.iter() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn decode_model(bytes: &[u8], name: &str) -> Result<HashModel> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(name, "missing newline after JSON header"))?;
    let header: ModelHeader = serde_json::from_slice(&bytes[..newline])
        .map_err(|e| Error::format(name, format!("header: {e}")))?;
    if header.version != MODEL_VERSION {
        return Err(Error::format(name, format!("unsupported model version {}", header.version)));
    }
    let start = newline + 1;
    let expected = header.bits * header.dim * 8;
    if bytes.len() - start != expected {
        return Err(Error::format(
            name,
            format!(
                "W payload at byte {start} should be {expected} bytes for {}x{}, found {}",
                header.bits,
                header.dim,
                bytes.len() - start
            ),
        ));
    }
    let w: Vec<f64> = bytes[start..]
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
        .collect();
    let w = Array2::from_shape_vec((header.bits, header.dim), w).map_err(|e| Error::format(name, e.to_string()))?;
    HashModel::new(
        w,
        header.lambda,
        header.alpha,
        &Preprocessing {
            mean: header.mean,
            normalized: header.normalized,
        },
    )
    .map_err(|e| Error::format(name, e.to_string()))
}

pub fn save_model(model: &HashModel, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    file.write_all(&encode_model(model))
        .map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn load_model(path: &Path) -> Result<HashModel> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    decode_model(&bytes, &path.display().to_string())
}

/// Loads a dataset by extension: `.csv`, IDX (`*-ubyte`, `.idx*`), or the
/// native binary format otherwise.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let name = path.file_name().and_then(|s| s.to_str()).unwrap_or("");
    if name.ends_with(".csv") {
        load_csv(path)
    } else if name.ends_with("ubyte") || name.contains(".idx") {
        load_idx_images(path)
    } else {
        load_binary(path)
    }
}

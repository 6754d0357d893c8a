//! Dataset files and synthetic generation.
//!
//! The native container "LDDS" holds magic, u32 version, u64 n, u32 d, then
//! n*d row-major little-endian f32s. fvecs (per-vector u32 dimension header,
//! then that many f32s) and CSV (one vector per line, '.' decimal) are the
//! exchange formats. All readers reject inconsistent dimensions, non-finite
//! values, and truncated records with a byte offset.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter};
use std::path::Path;

use rand::Rng;
use rand_distr::{Pareto, StandardNormal};

use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::rng::derive_rng;
use crate::wire::{Reader, Writer};

const MAGIC: [u8; 4] = *b"LDDS";
const VERSION: u32 = 1;
const HEADER_BYTES: u64 = 4 + 4 + 8 + 4;
/// Caps a header-declared dimension before any allocation.
const MAX_DIM: u32 = 1 << 24;

/// Writes the dataset container to `path`, overwriting.
pub fn save_dataset(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = Writer::new(BufWriter::new(file), path);
    w.bytes(&MAGIC)?;
    w.u32(VERSION)?;
    w.u64(dataset.len() as u64)?;
    w.u32(dataset.dim() as u32)?;
    for i in 0..dataset.len() {
        w.f32_slice(dataset.row(i))?;
    }
    w.finish()
}

/// Reads a dataset container, validating magic, version, and that the file
/// length matches the declared shape exactly.
pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let actual_len = file.metadata().map_err(|e| Error::io(path, e))?.len();
    let mut r = Reader::new(BufReader::new(file), path);

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if magic != MAGIC {
        return Err(Error::BadMagic {
            path: path.to_path_buf(),
            expected: MAGIC,
            found: magic,
        });
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::UnsupportedVersion {
            path: path.to_path_buf(),
            version,
        });
    }
    let n = r.u64()?;
    let d = r.u32()?;
    if n == 0 || d == 0 {
        return Err(r.malformed(format!("empty shape n = {n}, d = {d}")));
    }
    if n > u32::MAX as u64 || d > MAX_DIM {
        return Err(r.malformed(format!("implausible shape n = {n}, d = {d}")));
    }
    let expected_len = HEADER_BYTES + n * d as u64 * 4;
    if actual_len != expected_len {
        return Err(r.malformed(format!(
            "file is {actual_len} bytes, shape requires {expected_len}"
        )));
    }
    let features = r.f32_vec(n as usize * d as usize)?;
    if let Some(bad) = features.iter().position(|v| !v.is_finite()) {
        return Err(r.malformed(format!("non-finite value in row {}", bad / d as usize)));
    }
    Dataset::from_rows(n as usize, d as usize, features)
}

/// Reads standard fvecs: records of a u32 dimension header followed by that
/// many f32s, repeated to end of file.
pub fn read_fvecs(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut r = Reader::new(BufReader::new(file), path);
    let mut d: Option<u32> = None;
    let mut features: Vec<f32> = Vec::new();
    let mut n = 0usize;
    while let Some(rec_d) = r.try_u32()? {
        if rec_d == 0 || rec_d > MAX_DIM {
            return Err(r.malformed(format!("record {n} declares dimension {rec_d}")));
        }
        match d {
            None => d = Some(rec_d),
            Some(first) if first != rec_d => {
                return Err(r.malformed(format!(
                    "record {n} has dimension {rec_d}, previous records have {first}"
                )));
            }
            _ => {}
        }
        let row = r.f32_vec(rec_d as usize)?;
        if let Some(j) = row.iter().position(|v| !v.is_finite()) {
            return Err(r.malformed(format!("non-finite value in record {n}, component {j}")));
        }
        features.extend_from_slice(&row);
        n += 1;
    }
    let d = d.ok_or_else(|| r.malformed("no records"))?;
    Dataset::from_rows(n, d as usize, features)
}

pub fn write_fvecs(dataset: &Dataset, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = Writer::new(BufWriter::new(file), path);
    for i in 0..dataset.len() {
        w.u32(dataset.dim() as u32)?;
        w.f32_slice(dataset.row(i))?;
    }
    w.finish()
}

/// Reads CSV: one vector per line, comma separators, '.' decimal. Empty
/// lines are skipped.
pub fn read_csv(path: &Path) -> Result<Dataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let reader = BufReader::new(file);
    let mut d: Option<usize> = None;
    let mut features: Vec<f32> = Vec::new();
    let mut n = 0usize;
    let mut offset = 0u64;
    let malformed = |offset: u64, reason: String| Error::MalformedFile {
        path: path.to_path_buf(),
        reason,
        offset,
    };
    for (line_no, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let line_start = offset;
        offset += line.len() as u64 + 1;
        let trimmed = line.trim();
        if trimmed.is_empty() {
            continue;
        }
        let mut row: Vec<f32> = Vec::with_capacity(d.unwrap_or(8));
        for (field_no, field) in trimmed.split(',').enumerate() {
            let value: f32 = field.trim().parse().map_err(|_| {
                malformed(
                    line_start,
                    format!("line {}: field {} is not a number: {field:?}", line_no + 1, field_no + 1),
                )
            })?;
            if !value.is_finite() {
                return Err(malformed(
                    line_start,
                    format!("line {}: non-finite value in field {}", line_no + 1, field_no + 1),
                ));
            }
            row.push(value);
        }
        match d {
            None => d = Some(row.len()),
            Some(first) if first != row.len() => {
                return Err(malformed(
                    line_start,
                    format!(
                        "line {}: {} fields, previous lines have {first}",
                        line_no + 1,
                        row.len()
                    ),
                ));
            }
            _ => {}
        }
        features.extend_from_slice(&row);
        n += 1;
    }
    let d = d.ok_or_else(|| malformed(offset, "no records".into()))?;
    Dataset::from_rows(n, d, features)
}

pub fn write_csv(dataset: &Dataset, path: &Path) -> Result<()> {
    use std::io::Write;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for i in 0..dataset.len() {
        let row = dataset.row(i);
        let mut line = String::new();
        for (j, v) in row.iter().enumerate() {
            if j > 0 {
                line.push(',');
            }
            // Shortest round-trip decimal form, so export -> ingest is exact.
            line.push_str(&format!("{v}"));
        }
        line.push('\n');
        w.write_all(line.as_bytes()).map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Returns a copy with each row scaled to unit Euclidean norm.
pub fn normalize_rows(dataset: &Dataset) -> Result<Dataset> {
    let d = dataset.dim();
    let mut features = Vec::with_capacity(dataset.len() * d);
    for i in 0..dataset.len() {
        let row = dataset.row(i);
        let norm = row.iter().map(|&v| (v as f64).powi(2)).sum::<f64>().sqrt();
        if norm == 0.0 {
            return Err(Error::ZeroNormRow { row: i });
        }
        features.extend(row.iter().map(|&v| (v as f64 / norm) as f32));
    }
    Dataset::from_rows(dataset.len(), d, features)
}

/// Synthetic feature distributions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Synthetic {
    /// Isotropic Gaussian directions normalized to unit norm.
    GaussianUnit,
    /// m tight clusters (sigma 0.02) around unit-norm centers; row i belongs
    /// to cluster i * m / n, so cluster 0 is the leading block of rows.
    PlantedClusters { m: usize },
    /// Uniform directions with Pareto(shape 2) magnitudes at scale 0.1:
    /// most rows are small, a few dominate the score range.
    HeavyTail,
}

/// Deterministic synthetic dataset: same arguments, same bytes.
pub fn gen_synthetic(n: usize, d: usize, dist: Synthetic, seed: u64) -> Result<Dataset> {
    if n == 0 || d == 0 {
        return Err(Error::EmptyDataset);
    }
    let mut rng = derive_rng(seed, 0);
    let unit = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..d).map(|_| rng.sample(StandardNormal)).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 0.0 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    };
    let mut features: Vec<f32> = Vec::with_capacity(n * d);
    match dist {
        Synthetic::GaussianUnit => {
            for _ in 0..n {
                features.extend(unit(&mut rng).into_iter().map(|x| x as f32));
            }
        }
        Synthetic::PlantedClusters { m } => {
            if m == 0 || m > n {
                return Err(Error::invalid(
                    "m",
                    format!("need 1 <= m <= n, got m = {m}, n = {n}"),
                ));
            }
            let centers: Vec<Vec<f64>> = (0..m).map(|_| unit(&mut rng)).collect();
            for i in 0..n {
                let c = &centers[i * m / n];
                for j in 0..d {
                    let noise: f64 = rng.sample(StandardNormal);
                    features.push((c[j] + 0.02 * noise) as f32);
                }
            }
        }
        Synthetic::HeavyTail => {
            let pareto = Pareto::new(0.1, 2.0).map_err(|e| Error::invalid("pareto", e.to_string()))?;
            for _ in 0..n {
                let magnitude: f64 = rng.sample(pareto);
                features.extend(unit(&mut rng).into_iter().map(|x| (x * magnitude) as f32));
            }
        }
    }
    Dataset::from_rows(n, d, features)
}

//! "QSD1" binary datasets and their CSV mirror.
//!
//! Layout, little-endian throughout: magic `QSD1`, u32 version (1), u8 qubit
//! count (3), u32 record count, then per record 128 f64 (row-major 8x8,
//! interleaved re/im) and a u16 label bitfield.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{label_consistent, Dataset, DatasetMeta, Record};
use crate::error::{Error, Result};
use crate::oracles::StateLabel;
use crate::states::{DensityMatrix, N_QUBITS};

pub const MAGIC: &[u8; 4] = b"QSD1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 4 + 4 + 1 + 4;
const N_VALUES: usize = 128;
pub const RECORD_LEN: usize = N_VALUES * 8 + 2;

pub fn encode(ds: &Dataset) -> Vec<u8> {
    let mut out = Vec::with_capacity(HEADER_LEN + ds.len() * RECORD_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.push(N_QUBITS as u8);
    out.extend_from_slice(&(ds.len() as u32).to_le_bytes());
    for r in &ds.records {
        for x in r.rho.to_interleaved() {
            out.extend_from_slice(&x.to_le_bytes());
        }
        out.extend_from_slice(&r.label.to_bits().to_le_bytes());
    }
    out
}

fn read_u32(bytes: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(bytes[at..at + 4].try_into().expect("4 bytes"))
}

/// Parses and validates a whole file image. Every record must hold a valid
/// density matrix and a consistent label bitfield.
pub fn decode(bytes: &[u8]) -> Result<Dataset> {
    if bytes.len() < HEADER_LEN {
        return Err(Error::format(bytes.len() as u64, "truncated header"));
    }
    if &bytes[..4] != MAGIC {
        return Err(Error::format(0, "bad magic, expected \"QSD1\""));
    }
    let version = read_u32(bytes, 4);
    if version != VERSION {
        return Err(Error::format(4, format!("unsupported version {version}")));
    }
    if bytes[8] as usize != N_QUBITS {
        return Err(Error::format(8, format!("unsupported qubit count {}", bytes[8])));
    }
    let count = read_u32(bytes, 9) as usize;
    let expected = HEADER_LEN + count * RECORD_LEN;
    if bytes.len() < expected {
        let complete = (bytes.len() - HEADER_LEN) / RECORD_LEN;
        return Err(Error::format(
            (HEADER_LEN + complete * RECORD_LEN) as u64,
            format!("truncated: header announces {count} records, file holds {complete}"),
        ));
    }
    if bytes.len() > expected {
        return Err(Error::format(expected as u64, "trailing bytes after last record"));
    }
    let mut records = Vec::with_capacity(count);
    let mut values = [0.0f64; N_VALUES];
    for i in 0..count {
        let start = HEADER_LEN + i * RECORD_LEN;
        for (k, v) in values.iter_mut().enumerate() {
            let at = start + 8 * k;
            *v = f64::from_le_bytes(bytes[at..at + 8].try_into().expect("8 bytes"));
        }
        let rho = DensityMatrix::from_interleaved(&values)
            .map_err(|e| Error::format(start as u64, format!("record {i}: {e}")))?;
        let at = start + 8 * N_VALUES;
        let bits = u16::from_le_bytes([bytes[at], bytes[at + 1]]);
        let label = StateLabel::from_bits(bits)
            .ok_or_else(|| Error::format(at as u64, format!("record {i}: invalid label bits {bits:#06x}")))?;
        records.push(Record { rho, label });
    }
    Ok(Dataset {
        records,
        meta: DatasetMeta {
            kind: "loaded".into(),
            ..Default::default()
        },
    })
}

/// Re-classifies a seeded sample of `fraction` of the records (at least
/// one) and fails with the byte offset of the first mismatching record.
pub fn verify_labels(ds: &Dataset, fraction: f64, seed: u64) -> Result<usize> {
    if ds.is_empty() {
        return Ok(0);
    }
    let n = ((ds.len() as f64 * fraction).ceil() as usize).clamp(1, ds.len());
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut picked = sample(&mut rng, ds.len(), n).into_vec();
    picked.sort_unstable();
    for i in picked.iter().copied() {
        let r = &ds.records[i];
        if !label_consistent(&r.rho, &r.label) {
            let offset = HEADER_LEN + i * RECORD_LEN + 8 * N_VALUES;
            return Err(Error::format(
                offset as u64,
                format!("record {i}: stored label disagrees with oracle re-check"),
            ));
        }
    }
    Ok(n)
}

/// Fraction of records re-checked on load.
pub const VERIFY_FRACTION: f64 = 0.01;

pub fn save(ds: &Dataset, path: &Path) -> Result<()> {
    crate::io::write_atomic(path, &encode(ds))
}

/// Reads, validates and spot-checks labels of a dataset file.
pub fn load(path: &Path) -> Result<Dataset> {
    let bytes = fs::read(path)?;
    let mut ds = decode(&bytes)?;
    verify_labels(&ds, VERIFY_FRACTION, 0)?;
    ds.meta.kind = path.display().to_string();
    Ok(ds)
}

/// `label,klass,v0..v127` with the values in file order.
pub fn write_csv<W: Write>(ds: &Dataset, header_comment: &str, mut out: W) -> Result<()> {
    writeln!(out, "# {header_comment}")?;
    write!(out, "label,klass")?;
    for k in 0..N_VALUES {
        write!(out, ",v{k}")?;
    }
    writeln!(out)?;
    for r in &ds.records {
        write!(out, "{},{}", r.label.to_bits(), r.label.klass.name())?;
        for x in r.rho.to_interleaved() {
            write!(out, ",{x:e}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}

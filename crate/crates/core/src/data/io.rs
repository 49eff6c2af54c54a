//! Feature files.
//!
//! Binary layout (all integers and floats little-endian):
//!
//! | offset | size  | field                          |
//! |--------|-------|--------------------------------|
//! | 0      | 4     | magic `SMFT`                   |
//! | 4      | 4     | version `u32` (= 1)            |
//! | 8      | 8     | rows `n` (`u64`)               |
//! | 16     | 8     | columns `d` (`u64`)            |
//! | 24     | 1     | `has_labels` (`u8`, 0 or 1)    |
//! | 25     | 8·n·d | features, `f64`, row-major     |
//! | …      | 4·n   | labels, `u32`, only if present |
//!
//! The CSV alternative has a header row `f0,…,f{d-1}[,label]`.

use std::fs;
use std::path::Path;

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::linalg::Matrix;

pub const SMFT_MAGIC: &[u8; 4] = b"SMFT";
pub const SMFT_VERSION: u32 = 1;
const HEADER_LEN: usize = 25;

pub fn encode_features(data: &LabeledDataset) -> Vec<u8> {
    let n = data.len();
    let labeled = !data.labels.is_empty();
    let mut out = Vec::with_capacity(HEADER_LEN + n * data.dim() * 8 + if labeled { 4 * n } else { 0 });
    out.extend_from_slice(SMFT_MAGIC);
    out.extend_from_slice(&SMFT_VERSION.to_le_bytes());
    out.extend_from_slice(&(n as u64).to_le_bytes());
    out.extend_from_slice(&(data.dim() as u64).to_le_bytes());
    out.push(u8::from(labeled));
    for v in data.features.as_slice() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    if labeled {
        for &y in &data.labels {
            out.extend_from_slice(&(y as u32).to_le_bytes());
        }
    }
    out
}

fn take(bytes: &[u8], offset: usize, len: usize) -> Result<&[u8]> {
    bytes
        .get(offset..offset + len)
        .ok_or_else(|| Error::parse(offset, format!("truncated: need {len} bytes")))
}

pub fn decode_features(bytes: &[u8], name: impl Into<String>) -> Result<LabeledDataset> {
    if take(bytes, 0, 4)? != SMFT_MAGIC {
        return Err(Error::parse(0, "bad magic, expected SMFT"));
    }
    let version = u32::from_le_bytes(take(bytes, 4, 4)?.try_into().unwrap());
    if version != SMFT_VERSION {
        return Err(Error::parse(4, format!("unsupported version {version}")));
    }
    let n = u64::from_le_bytes(take(bytes, 8, 8)?.try_into().unwrap());
    let d = u64::from_le_bytes(take(bytes, 16, 8)?.try_into().unwrap());
    let has_labels = match take(bytes, 24, 1)?[0] {
        0 => false,
        1 => true,
        other => return Err(Error::parse(24, format!("has_labels must be 0 or 1, got {other}"))),
    };
    let cells = n
        .checked_mul(d)
        .and_then(|c| usize::try_from(c).ok())
        .ok_or_else(|| Error::parse(8, "shape overflows"))?;
    let n = n as usize;
    let expected = cells
        .checked_mul(8)
        .and_then(|f| f.checked_add(HEADER_LEN))
        .and_then(|f| f.checked_add(if has_labels { 4 * n } else { 0 }))
        .ok_or_else(|| Error::parse(8, "shape overflows"))?;
    if bytes.len() != expected {
        return Err(Error::parse(
            bytes.len().min(expected),
            format!("file is {} bytes, header implies {expected}", bytes.len()),
        ));
    }
    let feats = &bytes[HEADER_LEN..HEADER_LEN + cells * 8];
    let values: Vec<f64> = feats
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    if let Some(i) = values.iter().position(|v| !v.is_finite()) {
        return Err(Error::parse(HEADER_LEN + 8 * i, "non-finite feature"));
    }
    let features = Matrix::from_vec(n, d as usize, values)?;
    let name = name.into();
    if has_labels {
        let start = HEADER_LEN + cells * 8;
        let labels = bytes[start..]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()) as usize)
            .collect();
        LabeledDataset::new(features, labels, name)
    } else {
        LabeledDataset::unlabeled(features, name)
    }
}

pub fn write_features(data: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_features(data))?;
    Ok(())
}

/// Reads an SMFT file, or CSV when the extension is `.csv`. The dataset is
/// named after the file stem.
pub fn read_features(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv")) {
        return read_csv(path);
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    decode_features(&fs::read(path)?, name)
}

pub fn read_csv(path: impl AsRef<Path>) -> Result<LabeledDataset> {
    let path = path.as_ref();
    let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
    let header = reader.headers().map_err(csv_err)?.clone();
    let labeled = header.iter().next_back() == Some("label");
    let d = header.len() - usize::from(labeled);
    for (i, h) in header.iter().take(d).enumerate() {
        if h != format!("f{i}") {
            return Err(Error::parse(0, format!("unexpected CSV column {h:?}, expected f{i}")));
        }
    }
    let mut values = Vec::new();
    let mut labels = Vec::new();
    let mut rows = 0;
    for rec in reader.records() {
        let rec = rec.map_err(csv_err)?;
        let offset = rec.position().map_or(0, |p| p.byte() as usize);
        if rec.len() != header.len() {
            return Err(Error::parse(offset, "wrong field count"));
        }
        for f in rec.iter().take(d) {
            values.push(
                f.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::parse(offset, format!("bad feature {f:?}: {e}")))?,
            );
        }
        if labeled {
            let f = &rec[d];
            labels.push(
                f.trim()
                    .parse::<usize>()
                    .map_err(|e| Error::parse(offset, format!("bad label {f:?}: {e}")))?,
            );
        }
        rows += 1;
    }
    let name = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let features = Matrix::from_vec(rows, d, values)?;
    if labeled {
        LabeledDataset::new(features, labels, name)
    } else {
        LabeledDataset::unlabeled(features, name)
    }
}

pub fn write_csv(data: &LabeledDataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    let labeled = !data.labels.is_empty();
    let mut header: Vec<String> = (0..data.dim()).map(|i| format!("f{i}")).collect();
    if labeled {
        header.push("label".into());
    }
    w.write_record(&header).map_err(csv_err)?;
    for (i, row) in data.features.row_iter().enumerate() {
        let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        if labeled {
            rec.push(data.labels[i].to_string());
        }
        w.write_record(&rec).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    let offset = e.position().map_or(0, |p| p.byte() as usize);
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::Io(io),
        other => Error::parse(offset, format!("{other:?}")),
    }
}

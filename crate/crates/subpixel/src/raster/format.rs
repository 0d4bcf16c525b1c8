//! On-disk raster container format.
//!
//! A container is a pair of files sharing a stem: `<stem>.hdr.json` (header)
//! and `<stem>.bin` (payload), plus an optional `<stem>.mask.bin`.
//!
//! Header keys: `rows`, `cols`, `bands`, `cell_size_m`, `dtype`
//! (`"f32le"` for value rasters, `"u8"` for label grids) and
//! `order` (always `"band-sequential,row-major"`).
//!
//! Payload: for `f32le`, rows x cols x bands IEEE-754 binary32 little-endian
//! values, band-sequential, row-major within each band. For `u8`, one byte
//! per cell, single band. The mask file holds one byte per cell,
//! 0 = valid, 1 = nodata.
//!
//! All decode functions operate on byte slices so untrusted input can be
//! validated without touching the filesystem.

use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::{Path, PathBuf};

pub const DTYPE_F32LE: &str = "f32le";
pub const DTYPE_U8: &str = "u8";
pub const ORDER: &str = "band-sequential,row-major";

/// Hard cap on declared cell count so corrupt headers cannot trigger
/// enormous allocations (2^31 cells x 4 bytes = 8 GiB payload).
const MAX_CELLS: u64 = 1 << 31;

/// Parsed container header.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub rows: u64,
    pub cols: u64,
    pub bands: u64,
    pub cell_size_m: f64,
    pub dtype: String,
    pub order: String,
}

impl Header {
    pub fn f32le(rows: usize, cols: usize, bands: usize, cell_size_m: f64) -> Self {
        Header {
            rows: rows as u64,
            cols: cols as u64,
            bands: bands as u64,
            cell_size_m,
            dtype: DTYPE_F32LE.to_string(),
            order: ORDER.to_string(),
        }
    }

    pub fn u8(rows: usize, cols: usize, cell_size_m: f64) -> Self {
        Header {
            rows: rows as u64,
            cols: cols as u64,
            bands: 1,
            cell_size_m,
            dtype: DTYPE_U8.to_string(),
            order: ORDER.to_string(),
        }
    }

    /// Parse and validate a header from raw JSON bytes.
    pub fn from_json_bytes(bytes: &[u8]) -> Result<Header> {
        let header: Header = serde_json::from_slice(bytes)
            .map_err(|e| Error::Header(format!("malformed JSON: {e}")))?;
        header.validate()?;
        Ok(header)
    }

    pub fn validate(&self) -> Result<()> {
        if self.rows == 0 || self.cols == 0 || self.bands == 0 {
            return Err(Error::Header(format!(
                "dimensions must be positive, got {}x{}x{}",
                self.rows, self.cols, self.bands
            )));
        }
        if !(self.cell_size_m.is_finite() && self.cell_size_m > 0.0) {
            return Err(Error::Header(format!(
                "cell_size_m must be a positive finite number, got {}",
                self.cell_size_m
            )));
        }
        if self.dtype != DTYPE_F32LE && self.dtype != DTYPE_U8 {
            return Err(Error::Header(format!("unknown dtype {:?}", self.dtype)));
        }
        if self.dtype == DTYPE_U8 && self.bands != 1 {
            return Err(Error::Header(format!(
                "u8 containers are single-band, got {} bands",
                self.bands
            )));
        }
        if self.order != ORDER {
            return Err(Error::Header(format!("unknown order {:?}", self.order)));
        }
        let cells = self
            .rows
            .checked_mul(self.cols)
            .and_then(|c| c.checked_mul(self.bands))
            .ok_or_else(|| Error::Header("declared size overflows".to_string()))?;
        if cells > MAX_CELLS {
            return Err(Error::Header(format!(
                "declared size {cells} exceeds the {MAX_CELLS}-cell limit"
            )));
        }
        Ok(())
    }

    pub fn total_values(&self) -> usize {
        (self.rows * self.cols * self.bands) as usize
    }

    pub fn cells(&self) -> usize {
        (self.rows * self.cols) as usize
    }

    pub fn to_json(&self) -> String {
        // serde_json with explicit field order from the struct definition
        serde_json::to_string_pretty(self).expect("header serializes")
    }
}

/// Decode an f32le payload validated against `header`.
pub fn decode_f32_values(header: &Header, bytes: &[u8]) -> Result<Vec<f32>> {
    if header.dtype != DTYPE_F32LE {
        return Err(Error::Header(format!(
            "expected dtype {DTYPE_F32LE}, header declares {:?}",
            header.dtype
        )));
    }
    let expected = header.total_values() * 4;
    if bytes.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

/// Decode a u8 label payload validated against `header`.
/// Label codes: 0 = other, 1 = built-up, 2 = vegetation, 255 = nodata.
pub fn decode_labels(header: &Header, bytes: &[u8]) -> Result<Vec<u8>> {
    if header.dtype != DTYPE_U8 {
        return Err(Error::Header(format!(
            "expected dtype {DTYPE_U8}, header declares {:?}",
            header.dtype
        )));
    }
    let expected = header.total_values();
    if bytes.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    for (index, &code) in bytes.iter().enumerate() {
        if !matches!(code, 0 | 1 | 2 | 255) {
            return Err(Error::InvalidLabel { code, index });
        }
    }
    Ok(bytes.to_vec())
}

/// Decode a nodata mask validated against `header` (one byte per cell).
pub fn decode_mask(header: &Header, bytes: &[u8]) -> Result<Vec<bool>> {
    let expected = header.cells();
    if bytes.len() != expected {
        return Err(Error::SizeMismatch {
            expected,
            actual: bytes.len(),
        });
    }
    let mut mask = Vec::with_capacity(bytes.len());
    for (index, &b) in bytes.iter().enumerate() {
        match b {
            0 => mask.push(false),
            1 => mask.push(true),
            _ => {
                return Err(Error::Header(format!(
                    "mask byte at cell {index} must be 0 or 1, got {b}"
                )))
            }
        }
    }
    Ok(mask)
}

pub fn encode_f32_values(values: &[f32]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 4);
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_mask(mask: &[bool]) -> Vec<u8> {
    mask.iter().map(|&m| u8::from(m)).collect()
}

/// Container file paths derived from a stem. `stem` may already carry one of
/// the container extensions; it is stripped first.
#[derive(Debug, Clone)]
pub struct ContainerPaths {
    pub header: PathBuf,
    pub data: PathBuf,
    pub mask: PathBuf,
}

impl ContainerPaths {
    pub fn new(stem: impl AsRef<Path>) -> Self {
        let s = stem.as_ref().to_string_lossy().to_string();
        let base = s
            .strip_suffix(".hdr.json")
            .or_else(|| s.strip_suffix(".mask.bin"))
            .or_else(|| s.strip_suffix(".bin"))
            .unwrap_or(&s)
            .to_string();
        ContainerPaths {
            header: PathBuf::from(format!("{base}.hdr.json")),
            data: PathBuf::from(format!("{base}.bin")),
            mask: PathBuf::from(format!("{base}.mask.bin")),
        }
    }
}

pub(crate) fn read_file(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

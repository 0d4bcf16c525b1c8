//! Multiband raster and label grid containers, alignment, synthetic scenes.

pub mod format;
mod synth;

pub use synth::{
    signature_spread, synth_fine_imagery, synth_scene, synth_scene_with_truth, SynthScene,
    CLASS_SIGNATURES, FINE_SIGNATURES, N_BANDS,
};

use crate::{Error, Result};
use format::{ContainerPaths, Header};
use std::path::Path;

/// Label codes used by [`LabelGrid`].
pub const LABEL_OTHER: u8 = 0;
pub const LABEL_BUILTUP: u8 = 1;
pub const LABEL_VEGETATION: u8 = 2;
pub const LABEL_NODATA: u8 = 255;

/// Multiband coarse-scene container: values, nodata mask, and geometry.
///
/// Values are stored band-sequential, row-major within each band. Every
/// unmasked value is finite; masked cells are written to disk as 0.0.
#[derive(Debug, Clone, PartialEq)]
pub struct RasterGrid {
    rows: usize,
    cols: usize,
    bands: usize,
    cell_size_m: f64,
    values: Vec<f32>,
    nodata_mask: Vec<bool>,
}

impl RasterGrid {
    pub fn new(
        rows: usize,
        cols: usize,
        bands: usize,
        cell_size_m: f64,
        values: Vec<f32>,
        nodata_mask: Option<Vec<bool>>,
    ) -> Result<Self> {
        if rows == 0 || cols == 0 || bands == 0 {
            return Err(Error::InvalidInput(
                "raster dimensions must be positive".to_string(),
            ));
        }
        if !(cell_size_m.is_finite() && cell_size_m > 0.0) {
            return Err(Error::InvalidInput(format!(
                "cell_size_m must be positive, got {cell_size_m}"
            )));
        }
        if values.len() != rows * cols * bands {
            return Err(Error::SizeMismatch {
                expected: rows * cols * bands,
                actual: values.len(),
            });
        }
        let nodata_mask = match nodata_mask {
            Some(m) => {
                if m.len() != rows * cols {
                    return Err(Error::SizeMismatch {
                        expected: rows * cols,
                        actual: m.len(),
                    });
                }
                m
            }
            None => vec![false; rows * cols],
        };
        let grid = RasterGrid {
            rows,
            cols,
            bands,
            cell_size_m,
            values,
            nodata_mask,
        };
        grid.check_finite()?;
        Ok(grid)
    }

    fn check_finite(&self) -> Result<()> {
        for band in 0..self.bands {
            let base = band * self.rows * self.cols;
            for cell in 0..self.rows * self.cols {
                if !self.nodata_mask[cell] && !self.values[base + cell].is_finite() {
                    return Err(Error::NonFiniteValue { index: base + cell });
                }
            }
        }
        Ok(())
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn bands(&self) -> usize {
        self.bands
    }

    pub fn cell_size_m(&self) -> f64 {
        self.cell_size_m
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn nodata_mask(&self) -> &[bool] {
        &self.nodata_mask
    }

    pub fn is_nodata(&self, row: usize, col: usize) -> bool {
        self.nodata_mask[row * self.cols + col]
    }

    pub fn set_nodata(&mut self, row: usize, col: usize) {
        self.nodata_mask[row * self.cols + col] = true;
    }

    /// Value of `band` at `(row, col)`. Bands are zero-indexed, so Landsat
    /// band 1 is `band = 0`.
    pub fn value(&self, band: usize, row: usize, col: usize) -> f32 {
        self.values[band * self.rows * self.cols + row * self.cols + col]
    }

    /// Contiguous row-major slice of one band.
    pub fn band(&self, band: usize) -> &[f32] {
        let n = self.rows * self.cols;
        &self.values[band * n..(band + 1) * n]
    }

    /// Decode a raster from header/data/mask byte buffers.
    pub fn from_container_bytes(
        header_bytes: &[u8],
        data_bytes: &[u8],
        mask_bytes: Option<&[u8]>,
    ) -> Result<Self> {
        let header = Header::from_json_bytes(header_bytes)?;
        let mut values = format::decode_f32_values(&header, data_bytes)?;
        let mask = match mask_bytes {
            Some(mb) => Some(format::decode_mask(&header, mb)?),
            None => None,
        };
        // Masked cells may legally hold anything on disk; normalize to 0.0 so
        // in-memory grids compare equal across round-trips.
        if let Some(ref m) = mask {
            let cells = header.cells();
            for band in 0..header.bands as usize {
                for cell in 0..cells {
                    if m[cell] {
                        values[band * cells + cell] = 0.0;
                    }
                }
            }
        }
        RasterGrid::new(
            header.rows as usize,
            header.cols as usize,
            header.bands as usize,
            header.cell_size_m,
            values,
            mask,
        )
    }

    /// Read a raster container from `<stem>.hdr.json` + `<stem>.bin`
    /// (+ `<stem>.mask.bin` when present).
    pub fn read(stem: impl AsRef<Path>) -> Result<Self> {
        let paths = ContainerPaths::new(stem);
        let header_bytes = format::read_file(&paths.header)?;
        let data_bytes = format::read_file(&paths.data)?;
        let mask_bytes = if paths.mask.exists() {
            Some(format::read_file(&paths.mask)?)
        } else {
            None
        };
        Self::from_container_bytes(&header_bytes, &data_bytes, mask_bytes.as_deref())
    }

    /// Write the container. The mask file is only emitted when any cell is
    /// nodata; masked cells are written as 0.0 in the data file.
    pub fn write(&self, stem: impl AsRef<Path>) -> Result<()> {
        let paths = ContainerPaths::new(stem);
        let header = Header::f32le(self.rows, self.cols, self.bands, self.cell_size_m);
        format::write_file(&paths.header, header.to_json().as_bytes())?;

        let any_masked = self.nodata_mask.iter().any(|&m| m);
        let cells = self.rows * self.cols;
        let data = if any_masked {
            let mut vals = self.values.clone();
            for band in 0..self.bands {
                for cell in 0..cells {
                    if self.nodata_mask[cell] {
                        vals[band * cells + cell] = 0.0;
                    }
                }
            }
            format::encode_f32_values(&vals)
        } else {
            format::encode_f32_values(&self.values)
        };
        format::write_file(&paths.data, &data)?;

        if any_masked {
            format::write_file(&paths.mask, &format::encode_mask(&self.nodata_mask))?;
        } else if paths.mask.exists() {
            std::fs::remove_file(&paths.mask).map_err(|e| Error::io(&paths.mask, e))?;
        }
        Ok(())
    }
}

/// Fine-resolution hard-classified class raster.
///
/// Codes: 0 = other, 1 = built-up, 2 = vegetation, 255 = nodata.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelGrid {
    rows: usize,
    cols: usize,
    labels: Vec<u8>,
}

impl LabelGrid {
    pub fn new(rows: usize, cols: usize, labels: Vec<u8>) -> Result<Self> {
        if rows == 0 || cols == 0 {
            return Err(Error::InvalidInput(
                "label grid dimensions must be positive".to_string(),
            ));
        }
        if labels.len() != rows * cols {
            return Err(Error::SizeMismatch {
                expected: rows * cols,
                actual: labels.len(),
            });
        }
        for (index, &code) in labels.iter().enumerate() {
            if !matches!(code, 0 | 1 | 2 | 255) {
                return Err(Error::InvalidLabel { code, index });
            }
        }
        Ok(LabelGrid { rows, cols, labels })
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    pub fn label(&self, row: usize, col: usize) -> u8 {
        self.labels[row * self.cols + col]
    }

    pub fn from_container_bytes(header_bytes: &[u8], data_bytes: &[u8]) -> Result<Self> {
        let header = Header::from_json_bytes(header_bytes)?;
        let labels = format::decode_labels(&header, data_bytes)?;
        LabelGrid::new(header.rows as usize, header.cols as usize, labels)
    }

    pub fn read(stem: impl AsRef<Path>) -> Result<Self> {
        let paths = ContainerPaths::new(stem);
        let header_bytes = format::read_file(&paths.header)?;
        let data_bytes = format::read_file(&paths.data)?;
        Self::from_container_bytes(&header_bytes, &data_bytes)
    }

    pub fn write(&self, stem: impl AsRef<Path>, cell_size_m: f64) -> Result<()> {
        let paths = ContainerPaths::new(stem);
        let header = Header::u8(self.rows, self.cols, cell_size_m);
        format::write_file(&paths.header, header.to_json().as_bytes())?;
        format::write_file(&paths.data, &self.labels)
    }

    /// Drop trailing rows/cols so the grid measures exactly `rows x cols`.
    fn crop(&self, rows: usize, cols: usize) -> LabelGrid {
        debug_assert!(rows <= self.rows && cols <= self.cols);
        let mut labels = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            let start = r * self.cols;
            labels.extend_from_slice(&self.labels[start..start + cols]);
        }
        LabelGrid {
            rows,
            cols,
            labels,
        }
    }
}

/// A coarse raster paired with a fine label grid covering the same extent,
/// `factor` fine cells per coarse cell along each axis.
#[derive(Debug, Clone)]
pub struct AlignedPair {
    pub coarse: RasterGrid,
    pub fine: LabelGrid,
    pub factor: usize,
}

/// Pair a coarse raster with a fine label grid. When the fine grid is larger
/// than `factor` x coarse it is cropped (trailing rows/cols only); if it
/// cannot fully cover the coarse grid the pairing fails.
pub fn align(coarse: RasterGrid, fine: LabelGrid, factor: usize) -> Result<AlignedPair> {
    if factor == 0 {
        return Err(Error::InvalidInput("factor must be positive".to_string()));
    }
    let want_rows = coarse.rows * factor;
    let want_cols = coarse.cols * factor;
    if fine.rows < want_rows || fine.cols < want_cols {
        return Err(Error::DimensionMismatch(format!(
            "fine grid {}x{} cannot cover coarse {}x{} at factor {} (needs {}x{})",
            fine.rows, fine.cols, coarse.rows, coarse.cols, factor, want_rows, want_cols
        )));
    }
    let fine = if fine.rows == want_rows && fine.cols == want_cols {
        fine
    } else {
        fine.crop(want_rows, want_cols)
    };
    Ok(AlignedPair {
        coarse,
        fine,
        factor,
    })
}

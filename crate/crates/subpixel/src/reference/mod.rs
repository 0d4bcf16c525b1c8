//! Reference data: hard-class maps, coarse-cell fraction aggregation, and
//! reference-map quality assessment (confusion matrices, Cohen's kappa).

mod isodata;

pub use isodata::{
    assign_classes, isodata_cluster, ndvi_grid, ClassRule, IsodataConfig, CLUSTER_NODATA,
};

use crate::raster::{LabelGrid, RasterGrid, LABEL_BUILTUP, LABEL_NODATA, LABEL_VEGETATION};
use crate::{Error, Result};
use std::path::Path;

/// Per-coarse-cell built-up and vegetation fractions in [0, 1].
///
/// Fractions aggregated from a hard-classified fine grid lie on the lattice
/// `k / factor^2`.
#[derive(Debug, Clone, PartialEq)]
pub struct FractionMap {
    pub rows: usize,
    pub cols: usize,
    pub builtup: Vec<f32>,
    pub vegetation: Vec<f32>,
    pub valid: Vec<bool>,
}

impl FractionMap {
    pub fn new(rows: usize, cols: usize) -> FractionMap {
        FractionMap {
            rows,
            cols,
            builtup: vec![0.0; rows * cols],
            vegetation: vec![0.0; rows * cols],
            valid: vec![false; rows * cols],
        }
    }

    pub fn cell(&self, row: usize, col: usize) -> (f32, f32, bool) {
        let i = row * self.cols + col;
        (self.builtup[i], self.vegetation[i], self.valid[i])
    }

    /// Persist as a 2-band raster container (band 0 built-up, band 1
    /// vegetation), invalid cells masked.
    pub fn write(&self, stem: impl AsRef<Path>, cell_size_m: f64) -> Result<()> {
        let cells = self.rows * self.cols;
        let mut values = vec![0.0f32; cells * 2];
        values[..cells].copy_from_slice(&self.builtup);
        values[cells..].copy_from_slice(&self.vegetation);
        let mask: Vec<bool> = self.valid.iter().map(|&v| !v).collect();
        let grid = RasterGrid::new(self.rows, self.cols, 2, cell_size_m, values, Some(mask))?;
        grid.write(stem)
    }

    pub fn read(stem: impl AsRef<Path>) -> Result<FractionMap> {
        let grid = RasterGrid::read(stem)?;
        if grid.bands() != 2 {
            return Err(Error::Artifact(format!(
                "fraction map container must have 2 bands, got {}",
                grid.bands()
            )));
        }
        let cells = grid.rows() * grid.cols();
        Ok(FractionMap {
            rows: grid.rows(),
            cols: grid.cols(),
            builtup: grid.values()[..cells].to_vec(),
            vegetation: grid.values()[cells..].to_vec(),
            valid: grid.nodata_mask().iter().map(|&m| !m).collect(),
        })
    }
}

/// Count fine labels within each `factor x factor` block: built-up fraction
/// is `#(label==1)/factor^2`, vegetation `#(label==2)/factor^2`. A block is
/// invalid when any member is nodata. Fine dimensions must divide evenly.
pub fn aggregate_fractions(fine: &LabelGrid, factor: usize) -> Result<FractionMap> {
    if factor == 0 {
        return Err(Error::InvalidInput("factor must be positive".to_string()));
    }
    if fine.rows() % factor != 0 || fine.cols() % factor != 0 {
        return Err(Error::DimensionMismatch(format!(
            "fine grid {}x{} not divisible by factor {factor}",
            fine.rows(),
            fine.cols()
        )));
    }
    let rows = fine.rows() / factor;
    let cols = fine.cols() / factor;
    let block = (factor * factor) as f32;
    let mut map = FractionMap::new(rows, cols);
    for r in 0..rows {
        for c in 0..cols {
            let mut built = 0u32;
            let mut veg = 0u32;
            let mut any_nodata = false;
            for dr in 0..factor {
                for dc in 0..factor {
                    match fine.label(r * factor + dr, c * factor + dc) {
                        LABEL_BUILTUP => built += 1,
                        LABEL_VEGETATION => veg += 1,
                        LABEL_NODATA => any_nodata = true,
                        _ => {}
                    }
                }
            }
            let i = r * cols + c;
            if !any_nodata {
                map.builtup[i] = built as f32 / block;
                map.vegetation[i] = veg as f32 / block;
                map.valid[i] = true;
            }
        }
    }
    Ok(map)
}

/// Square confusion matrix; rows are predicted classes, columns actual.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    pub k: usize,
    pub counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_counts(k: usize, counts: Vec<u64>) -> Result<ConfusionMatrix> {
        if counts.len() != k * k {
            return Err(Error::InvalidInput(format!(
                "expected {k}x{k} counts, got {}",
                counts.len()
            )));
        }
        let m = ConfusionMatrix { k, counts };
        if m.total() == 0 {
            return Err(Error::EmptyInput("confusion matrix is empty".to_string()));
        }
        Ok(m)
    }

    pub fn at(&self, predicted: usize, actual: usize) -> u64 {
        self.counts[predicted * self.k + actual]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn row_total(&self, predicted: usize) -> u64 {
        (0..self.k).map(|a| self.at(predicted, a)).sum()
    }

    pub fn col_total(&self, actual: usize) -> u64 {
        (0..self.k).map(|p| self.at(p, actual)).sum()
    }

    pub fn diagonal(&self) -> u64 {
        (0..self.k).map(|i| self.at(i, i)).sum()
    }

    /// Producer's accuracy per class: diagonal over column total.
    pub fn class_accuracy(&self, class: usize) -> Option<f64> {
        let col = self.col_total(class);
        if col == 0 {
            None
        } else {
            Some(self.at(class, class) as f64 / col as f64)
        }
    }

    pub fn overall_accuracy(&self) -> f64 {
        self.diagonal() as f64 / self.total() as f64
    }
}

/// Tally predicted vs actual class samples into a confusion matrix over the
/// class alphabet `0..k`.
pub fn confusion(pred: &[u8], actual: &[u8], k: usize) -> Result<ConfusionMatrix> {
    if pred.len() != actual.len() {
        return Err(Error::DimensionMismatch(format!(
            "pred has {} samples, actual {}",
            pred.len(),
            actual.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::EmptyInput("no samples".to_string()));
    }
    let mut counts = vec![0u64; k * k];
    for (&p, &a) in pred.iter().zip(actual) {
        let (p, a) = (p as usize, a as usize);
        if p >= k || a >= k {
            return Err(Error::InvalidInput(format!(
                "class code outside alphabet 0..{k}: pred {p}, actual {a}"
            )));
        }
        counts[p * k + a] += 1;
    }
    ConfusionMatrix::from_counts(k, counts)
}

/// Cohen's kappa: `(p_o - p_e) / (1 - p_e)` with observed agreement `p_o`
/// (diagonal over total) and chance agreement `p_e` (sum of row x column
/// margin products over total squared).
pub fn kappa(m: &ConfusionMatrix) -> Result<f64> {
    let total = m.total() as f64;
    let p_o = m.diagonal() as f64 / total;
    let p_e = (0..m.k)
        .map(|i| m.row_total(i) as f64 * m.col_total(i) as f64)
        .sum::<f64>()
        / (total * total);
    if (1.0 - p_e).abs() < 1e-15 {
        return Err(Error::Undefined(
            "kappa undefined when chance agreement is 1".to_string(),
        ));
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

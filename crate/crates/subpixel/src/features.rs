//! Spectral indices and input tensor assembly.
//!
//! The model input for each selected coarse cell is a `w x w x 6` patch:
//! planes 0-3 are the windowed neighborhoods of bands 1-4 after symmetric
//! padding, plane 4 is the cell's EBBI value replicated across the window,
//! and plane 5 is the cell's band-7 value replicated the same way.

use crate::raster::RasterGrid;
use crate::{Error, Result};
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Number of feature planes per sample.
pub const N_PLANES: usize = 6;

/// Enhanced Built-Up and Bareness Index from bands 4 (NIR), 5 (SWIR-1) and
/// 6 (thermal): `(b5 - b4) / (10 * sqrt(b5 + b6))`.
///
/// Undefined when `b5 + b6 <= 0`; callers substitute 0 and exclude the cell
/// from sampling.
pub fn ebbi(b4: f64, b5: f64, b6: f64) -> Result<f64> {
    let denom = b5 + b6;
    if denom <= 0.0 {
        return Err(Error::SingularInput(format!(
            "ebbi denominator requires b5 + b6 > 0, got {denom}"
        )));
    }
    Ok((b5 - b4) / (10.0 * denom.sqrt()))
}

/// Normalized Difference Vegetation Index `(nir - red) / (nir + red)`.
///
/// Returns `(value, degenerate)`; a zero denominator yields `(0.0, true)`.
pub fn ndvi(red: f64, nir: f64) -> (f64, bool) {
    let denom = nir + red;
    if denom == 0.0 {
        (0.0, true)
    } else {
        ((nir - red) / denom, false)
    }
}

/// Mirror index into `0..n` for symmetric padding: the sequence reflects at
/// both edges with the edge value repeated (`[a,b,c]` extends to
/// `... c b a | a b c | c b a ...`).
fn mirror(mut i: isize, n: usize) -> usize {
    let n = n as isize;
    debug_assert!(n > 0);
    loop {
        if i < 0 {
            i = -i - 1;
        } else if i >= n {
            i = 2 * n - i - 1;
        } else {
            return i as usize;
        }
    }
}

/// Symmetric padding of a row-major 2-D grid: output grows by `margin` on
/// every side, interior equals the input, borders mirror the input edge.
pub fn symmetric_pad(band: &[f32], rows: usize, cols: usize, margin: usize) -> Vec<f32> {
    assert_eq!(band.len(), rows * cols, "band length must be rows*cols");
    if margin == 0 {
        return band.to_vec();
    }
    let out_rows = rows + 2 * margin;
    let out_cols = cols + 2 * margin;
    let m = margin as isize;
    let mut out = vec![0.0f32; out_rows * out_cols];
    for r in 0..out_rows {
        let src_r = mirror(r as isize - m, rows);
        for c in 0..out_cols {
            let src_c = mirror(c as isize - m, cols);
            out[r * out_cols + c] = band[src_r * cols + src_c];
        }
    }
    out
}

/// The 4-D training/prediction tensor: `n` samples of `w x w x 6` patches.
///
/// In memory the layout is sample-major, then plane, then row, then column
/// (channels-first per sample).
#[derive(Debug, Clone, PartialEq)]
pub struct InputTensor {
    window: usize,
    n: usize,
    grid_rows: usize,
    grid_cols: usize,
    values: Vec<f32>,
    sample_index: Vec<(usize, usize)>,
}

impl InputTensor {
    pub fn window(&self) -> usize {
        self.window
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn grid_rows(&self) -> usize {
        self.grid_rows
    }

    pub fn grid_cols(&self) -> usize {
        self.grid_cols
    }

    /// Values of one sample: `6 * w * w` floats, plane-major.
    pub fn sample(&self, i: usize) -> &[f32] {
        let len = N_PLANES * self.window * self.window;
        &self.values[i * len..(i + 1) * len]
    }

    pub fn values(&self) -> &[f32] {
        &self.values
    }

    pub fn sample_index(&self) -> &[(usize, usize)] {
        &self.sample_index
    }

    /// Per-sample value at (plane, dy, dx).
    pub fn at(&self, sample: usize, plane: usize, dy: usize, dx: usize) -> f32 {
        let w = self.window;
        self.values[((sample * N_PLANES + plane) * w + dy) * w + dx]
    }

    /// Subset of samples by index, preserving order.
    pub fn select(&self, indices: &[usize]) -> InputTensor {
        let len = N_PLANES * self.window * self.window;
        let mut values = Vec::with_capacity(indices.len() * len);
        let mut sample_index = Vec::with_capacity(indices.len());
        for &i in indices {
            values.extend_from_slice(self.sample(i));
            sample_index.push(self.sample_index[i]);
        }
        InputTensor {
            window: self.window,
            n: indices.len(),
            grid_rows: self.grid_rows,
            grid_cols: self.grid_cols,
            values,
            sample_index,
        }
    }

    /// Persist as a raster container with `w*w*6` bands over the source grid:
    /// band `plane*w*w + dy*w + dx` holds that patch value at the sample's
    /// cell; cells not in the selection are masked.
    pub fn write(&self, stem: impl AsRef<Path>, cell_size_m: f64) -> Result<()> {
        let w = self.window;
        let bands = N_PLANES * w * w;
        let cells = self.grid_rows * self.grid_cols;
        let mut values = vec![0.0f32; cells * bands];
        let mut mask = vec![true; cells];
        for (i, &(r, c)) in self.sample_index.iter().enumerate() {
            let cell = r * self.grid_cols + c;
            mask[cell] = false;
            let sample = self.sample(i);
            for (b, &v) in sample.iter().enumerate() {
                values[b * cells + cell] = v;
            }
        }
        let grid = RasterGrid::new(
            self.grid_rows,
            self.grid_cols,
            bands,
            cell_size_m,
            values,
            Some(mask),
        )?;
        grid.write(stem)
    }

    /// Read a tensor previously written by [`InputTensor::write`].
    pub fn read(stem: impl AsRef<Path>) -> Result<InputTensor> {
        let grid = RasterGrid::read(stem)?;
        let bands = grid.bands();
        let per_plane = bands / N_PLANES;
        let window = (per_plane as f64).sqrt().round() as usize;
        if window * window * N_PLANES != bands || window % 2 == 0 {
            return Err(Error::Artifact(format!(
                "container with {bands} bands is not a w*w*6 tensor layout"
            )));
        }
        let cells = grid.rows() * grid.cols();
        let mut sample_index = Vec::new();
        for r in 0..grid.rows() {
            for c in 0..grid.cols() {
                if !grid.is_nodata(r, c) {
                    sample_index.push((r, c));
                }
            }
        }
        let mut values = Vec::with_capacity(sample_index.len() * bands);
        for &(r, c) in &sample_index {
            let cell = r * grid.cols() + c;
            for b in 0..bands {
                values.push(grid.values()[b * cells + cell]);
            }
        }
        Ok(InputTensor {
            window,
            n: sample_index.len(),
            grid_rows: grid.rows(),
            grid_cols: grid.cols(),
            values,
            sample_index,
        })
    }
}

/// Cells eligible for sampling: the cell itself is unmasked, no in-bounds
/// cell of its `window x window` neighborhood is masked, and its EBBI
/// denominator is non-singular.
pub fn valid_cells(coarse: &RasterGrid, window: usize) -> Vec<(usize, usize)> {
    let margin = window / 2;
    let rows = coarse.rows();
    let cols = coarse.cols();
    let mut out = Vec::new();
    for r in 0..rows {
        'cell: for c in 0..cols {
            let r0 = r.saturating_sub(margin);
            let r1 = (r + margin).min(rows - 1);
            let c0 = c.saturating_sub(margin);
            let c1 = (c + margin).min(cols - 1);
            for rr in r0..=r1 {
                for cc in c0..=c1 {
                    if coarse.is_nodata(rr, cc) {
                        continue 'cell;
                    }
                }
            }
            let b5 = coarse.value(4, r, c) as f64;
            let b6 = coarse.value(5, r, c) as f64;
            if b5 + b6 <= 0.0 {
                continue;
            }
            out.push((r, c));
        }
    }
    out
}

/// Assemble the input tensor for the given selection of coarse cells.
///
/// Bands are zero-indexed: planes 0-3 come from bands 0-3 (B1-B4), EBBI from
/// bands 3-5 (B4-B6), plane 5 from band 6 (B7). A singular EBBI denominator
/// emits 0 for that sample (such cells are normally excluded beforehand by
/// [`valid_cells`]).
pub fn build_tensor(
    coarse: &RasterGrid,
    window: usize,
    selection: &[(usize, usize)],
) -> Result<InputTensor> {
    if window % 2 == 0 || window == 0 {
        return Err(Error::InvalidInput(format!(
            "window must be odd and positive, got {window}"
        )));
    }
    if coarse.bands() < 7 {
        return Err(Error::InvalidInput(format!(
            "tensor assembly needs at least 7 bands, raster has {}",
            coarse.bands()
        )));
    }
    let rows = coarse.rows();
    let cols = coarse.cols();
    let margin = window / 2;
    let padded_cols = cols + 2 * margin;

    let padded: Vec<Vec<f32>> = (0..4)
        .map(|b| symmetric_pad(coarse.band(b), rows, cols, margin))
        .collect();

    let w = window;
    let mut values = vec![0.0f32; selection.len() * N_PLANES * w * w];
    for (i, &(r, c)) in selection.iter().enumerate() {
        if r >= rows || c >= cols {
            return Err(Error::InvalidInput(format!(
                "selection ({r},{c}) outside {rows}x{cols} grid"
            )));
        }
        // reject neighborhoods touching nodata (in-bounds part only; the
        // padded border mirrors in-bounds cells, which are checked anyway)
        let r0 = r.saturating_sub(margin);
        let r1 = (r + margin).min(rows - 1);
        let c0 = c.saturating_sub(margin);
        let c1 = (c + margin).min(cols - 1);
        for rr in r0..=r1 {
            for cc in c0..=c1 {
                if coarse.is_nodata(rr, cc) {
                    return Err(Error::InvalidInput(format!(
                        "neighborhood of ({r},{c}) touches nodata at ({rr},{cc})"
                    )));
                }
            }
        }

        let base = i * N_PLANES * w * w;
        for plane in 0..4 {
            let pb = &padded[plane];
            for dy in 0..w {
                let src = (r + dy) * padded_cols + c;
                let dst = base + (plane * w + dy) * w;
                values[dst..dst + w].copy_from_slice(&pb[src..src + w]);
            }
        }
        let b4 = coarse.value(3, r, c) as f64;
        let b5 = coarse.value(4, r, c) as f64;
        let b6 = coarse.value(5, r, c) as f64;
        let ebbi_v = ebbi(b4, b5, b6).unwrap_or(0.0) as f32;
        let b7 = coarse.value(6, r, c);
        values[base + 4 * w * w..base + 5 * w * w].fill(ebbi_v);
        values[base + 5 * w * w..base + 6 * w * w].fill(b7);
    }

    Ok(InputTensor {
        window,
        n: selection.len(),
        grid_rows: rows,
        grid_cols: cols,
        values,
        sample_index: selection.to_vec(),
    })
}

/// Per-plane standardization statistics, estimated on training samples and
/// persisted with the model so prediction matches training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlaneStats {
    pub mean: [f64; N_PLANES],
    pub sd: [f64; N_PLANES],
}

impl PlaneStats {
    /// Estimate mean/sd per plane over all patch values of all samples.
    /// A zero spread falls back to sd = 1 so standardization stays finite.
    pub fn fit(tensor: &InputTensor) -> PlaneStats {
        let w = tensor.window();
        let plane_len = w * w;
        let mut mean = [0.0f64; N_PLANES];
        let mut sd = [1.0f64; N_PLANES];
        if tensor.n() == 0 {
            return PlaneStats { mean, sd };
        }
        let count = (tensor.n() * plane_len) as f64;
        for plane in 0..N_PLANES {
            let mut sum = 0.0f64;
            for s in 0..tensor.n() {
                let sample = tensor.sample(s);
                for v in &sample[plane * plane_len..(plane + 1) * plane_len] {
                    sum += *v as f64;
                }
            }
            let mu = sum / count;
            let mut ss = 0.0f64;
            for s in 0..tensor.n() {
                let sample = tensor.sample(s);
                for v in &sample[plane * plane_len..(plane + 1) * plane_len] {
                    let d = *v as f64 - mu;
                    ss += d * d;
                }
            }
            let var = ss / count;
            mean[plane] = mu;
            sd[plane] = if var > 0.0 { var.sqrt() } else { 1.0 };
        }
        PlaneStats { mean, sd }
    }

    /// Standardized copy of a sample's values as `T` (used by the network).
    pub fn standardize_into(&self, sample: &[f32], window: usize, out: &mut [f64]) {
        let plane_len = window * window;
        for plane in 0..N_PLANES {
            let mu = self.mean[plane];
            let sd = self.sd[plane];
            for k in 0..plane_len {
                let idx = plane * plane_len + k;
                out[idx] = (sample[idx] as f64 - mu) / sd;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::N_BANDS;

    #[test]
    fn ebbi_examples() {
        assert_eq!(ebbi(0.3, 0.3, 0.1).unwrap(), 0.0);
        let v = ebbi(0.1, 0.3, 0.2).unwrap();
        assert!((v - 0.028284271).abs() < 1e-8, "got {v}");
        let v = ebbi(0.4, 0.2, 0.05).unwrap();
        assert!((v - (-0.04)).abs() < 1e-12, "got {v}");
    }

    #[test]
    fn ebbi_singular_denominator() {
        assert!(ebbi(0.1, 0.0, 0.0).is_err());
        assert!(ebbi(0.1, 0.2, -0.3).is_err());
    }

    #[test]
    fn ndvi_examples() {
        assert_eq!(ndvi(0.2, 0.2), (0.0, false));
        let (v, flag) = ndvi(0.1, 0.3);
        assert!((v - 0.5).abs() < 1e-12 && !flag);
        let (v, flag) = ndvi(0.3, 0.1);
        assert!((v + 0.5).abs() < 1e-12 && !flag);
        assert_eq!(ndvi(0.0, 0.0), (0.0, true));
    }

    #[test]
    fn pad_margin_zero_is_identity() {
        let band = vec![1.0, 2.0, 3.0, 4.0];
        assert_eq!(symmetric_pad(&band, 2, 2, 0), band);
    }

    #[test]
    fn pad_one_dimensional_margin_one() {
        // 1x3 grid [a,b,c] with margin 1 along the column axis
        let band = vec![1.0, 2.0, 3.0];
        let padded = symmetric_pad(&band, 1, 3, 1);
        // middle row of the 3x5 result is [a,a,b,c,c]
        assert_eq!(&padded[5..10], &[1.0, 1.0, 2.0, 3.0, 3.0]);
    }

    /// Independent mirror oracle: index into the period-2n sequence
    /// [0..n-1, n-1..0].
    fn mirror_oracle(i: isize, n: usize) -> usize {
        let period = 2 * n as isize;
        let j = ((i % period) + period) % period;
        if (j as usize) < n {
            j as usize
        } else {
            2 * n - 1 - j as usize
        }
    }

    #[test]
    fn pad_matches_mirror_oracle_every_cell() {
        let rows = 3;
        let cols = 3;
        let band: Vec<f32> = (0..9).map(|i| i as f32).collect();
        for margin in 1..=3usize {
            let padded = symmetric_pad(&band, rows, cols, margin);
            let oc = cols + 2 * margin;
            for r in 0..rows + 2 * margin {
                for c in 0..oc {
                    let sr = mirror_oracle(r as isize - margin as isize, rows);
                    let sc = mirror_oracle(c as isize - margin as isize, cols);
                    assert_eq!(
                        padded[r * oc + c],
                        band[sr * cols + sc],
                        "margin {margin} cell ({r},{c})"
                    );
                }
            }
        }
    }

    fn toy_raster(rows: usize, cols: usize, f: impl Fn(usize, usize, usize) -> f32) -> RasterGrid {
        let cells = rows * cols;
        let mut values = vec![0.0f32; cells * N_BANDS];
        for b in 0..N_BANDS {
            for r in 0..rows {
                for c in 0..cols {
                    values[b * cells + r * cols + c] = f(b, r, c);
                }
            }
        }
        RasterGrid::new(rows, cols, N_BANDS, 30.0, values, None).unwrap()
    }

    #[test]
    fn full_selection_count() {
        let grid = toy_raster(4, 5, |b, _, _| 0.1 + b as f32 * 0.05);
        let selection: Vec<_> = (0..4).flat_map(|r| (0..5).map(move |c| (r, c))).collect();
        let t = build_tensor(&grid, 3, &selection).unwrap();
        assert_eq!(t.n(), 20);
    }

    #[test]
    fn constant_scene_constant_planes() {
        let grid = toy_raster(5, 5, |b, _, _| 0.1 + b as f32 * 0.05);
        let t = build_tensor(&grid, 3, &[(2, 2), (0, 0)]).unwrap();
        // band values pass through f32 storage before the index
        let e = ebbi(0.25f32 as f64, 0.3f32 as f64, 0.35f32 as f64).unwrap() as f32;
        for s in 0..t.n() {
            for plane in 0..4 {
                for dy in 0..3 {
                    for dx in 0..3 {
                        assert_eq!(t.at(s, plane, dy, dx), 0.1 + plane as f32 * 0.05);
                    }
                }
            }
            for dy in 0..3 {
                for dx in 0..3 {
                    assert_eq!(t.at(s, 4, dy, dx), e);
                    assert_eq!(t.at(s, 5, dy, dx), 0.4);
                }
            }
        }
    }

    #[test]
    fn corner_patch_matches_pad_then_slice_oracle() {
        // band 0 carries a distinct 3x3 pattern; corner cell (0,0), window 3
        let grid = toy_raster(3, 3, |b, r, c| {
            if b == 0 {
                (r * 3 + c) as f32
            } else {
                0.2
            }
        });
        let t = build_tensor(&grid, 3, &[(0, 0)]).unwrap();
        // oracle: pad the band by hand, then slice the top-left 3x3
        let padded = symmetric_pad(grid.band(0), 3, 3, 1);
        for dy in 0..3 {
            for dx in 0..3 {
                assert_eq!(t.at(0, 0, dy, dx), padded[dy * 5 + dx]);
            }
        }
    }

    #[test]
    fn replicated_planes_have_zero_variance() {
        let grid = toy_raster(6, 6, |b, r, c| (b * 36 + r * 6 + c) as f32 * 0.01 + 0.05);
        let sel: Vec<_> = (0..6).flat_map(|r| (0..6).map(move |c| (r, c))).collect();
        let t = build_tensor(&grid, 5, &sel).unwrap();
        for s in 0..t.n() {
            for plane in [4usize, 5] {
                let first = t.at(s, plane, 0, 0);
                for dy in 0..5 {
                    for dx in 0..5 {
                        assert_eq!(t.at(s, plane, dy, dx), first);
                    }
                }
            }
        }
    }

    #[test]
    fn translation_consistency_on_periodic_scene() {
        // periodic with period 4; interior windows shifted by the period match
        let grid = toy_raster(12, 12, |b, r, c| {
            ((r % 4) * 7 + (c % 4) + b) as f32 * 0.03
        });
        let t = build_tensor(&grid, 3, &[(4, 4), (8, 8)]).unwrap();
        assert_eq!(t.sample(0), t.sample(1));
    }

    #[test]
    fn nodata_neighborhood_rejected() {
        let mut grid = toy_raster(5, 5, |_, _, _| 0.3);
        grid.set_nodata(2, 2);
        let err = build_tensor(&grid, 3, &[(1, 1)]).unwrap_err();
        assert!(matches!(err, Error::InvalidInput(_)));
        // valid_cells excludes the whole neighborhood of the masked cell
        let valid = valid_cells(&grid, 3);
        assert!(!valid.contains(&(1, 1)));
        assert!(valid.contains(&(0, 0)));
        assert!(valid.contains(&(4, 4)));
    }

    #[test]
    fn selection_out_of_range_rejected() {
        let grid = toy_raster(3, 3, |_, _, _| 0.3);
        assert!(build_tensor(&grid, 3, &[(3, 0)]).is_err());
    }

    #[test]
    fn tensor_container_round_trip() {
        let grid = toy_raster(4, 4, |b, r, c| (b + r + c) as f32 * 0.02 + 0.1);
        let t = build_tensor(&grid, 3, &[(0, 0), (1, 2), (3, 3)]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let stem = dir.path().join("tensor");
        t.write(&stem, 30.0).unwrap();
        let back = InputTensor::read(&stem).unwrap();
        assert_eq!(t, back);
    }

    #[test]
    fn plane_stats_standardize() {
        let grid = toy_raster(4, 4, |b, r, c| (b * 16 + r * 4 + c) as f32 * 0.01);
        let sel: Vec<_> = (0..4).flat_map(|r| (0..4).map(move |c| (r, c))).collect();
        let t = build_tensor(&grid, 3, &sel).unwrap();
        let stats = PlaneStats::fit(&t);
        // standardized plane values have mean ~0, sd ~1
        let w = t.window();
        let plane_len = w * w;
        let mut buf = vec![0.0f64; N_PLANES * plane_len];
        let mut sums = [0.0f64; N_PLANES];
        let mut sqs = [0.0f64; N_PLANES];
        for s in 0..t.n() {
            stats.standardize_into(t.sample(s), w, &mut buf);
            for p in 0..N_PLANES {
                for k in 0..plane_len {
                    let v = buf[p * plane_len + k];
                    sums[p] += v;
                    sqs[p] += v * v;
                }
            }
        }
        let count = (t.n() * plane_len) as f64;
        for p in 0..4 {
            let mean = sums[p] / count;
            let var = sqs[p] / count - mean * mean;
            assert!(mean.abs() < 1e-9, "plane {p} mean {mean}");
            assert!((var - 1.0).abs() < 1e-6, "plane {p} var {var}");
        }
    }
}

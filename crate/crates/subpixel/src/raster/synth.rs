//! Synthetic aligned scene generator: a desk-scale substitute for real
//! coarse/fine image pairs.
//!
//! The fine label grid is drawn from a spatially correlated class process
//! (argmax of three smooth random fields, giving patchwise class regions).
//! Coarse band values are exact linear mixtures of fixed per-class spectral
//! signatures weighted by each cell's true class fractions, plus optional
//! Gaussian noise.

use super::{align, AlignedPair, LabelGrid, RasterGrid};
use crate::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Bands of the synthetic coarse scene (Landsat-5 TM band count).
pub const N_BANDS: usize = 7;

/// Per-class coarse signatures, indexed by label code (other, built-up,
/// vegetation) then band (B1..B7). Reflectance-like magnitudes; chosen so
/// EBBI orders vegetation < other < built-up and NDVI separates vegetation.
pub const CLASS_SIGNATURES: [[f64; N_BANDS]; 3] = [
    // other (bare/open)
    [0.14, 0.18, 0.22, 0.28, 0.32, 0.30, 0.26],
    // built-up
    [0.16, 0.19, 0.21, 0.22, 0.33, 0.38, 0.30],
    // vegetation
    [0.06, 0.09, 0.07, 0.42, 0.22, 0.24, 0.12],
];

/// Per-class fine-sensor signatures (green, red, NIR), used by
/// [`synth_fine_imagery`] to emulate the high-resolution multispectral
/// input that reference classification consumes.
pub const FINE_SIGNATURES: [[f64; 3]; 3] = [
    [0.20, 0.24, 0.30], // other
    [0.21, 0.23, 0.25], // built-up
    [0.10, 0.08, 0.45], // vegetation
];

/// Mean over bands of the across-class signature range. Noise levels for
/// experiments are usually quoted relative to this.
pub fn signature_spread() -> f64 {
    let mut total = 0.0;
    for band in 0..N_BANDS {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for sig in &CLASS_SIGNATURES {
            lo = lo.min(sig[band]);
            hi = hi.max(sig[band]);
        }
        total += hi - lo;
    }
    total / N_BANDS as f64
}

/// A generated scene. `truth` holds the per-coarse-cell class fractions the
/// coarse bands were mixed from (index by class code 0/1/2).
pub struct SynthScene {
    pub pair: AlignedPair,
    pub truth: Vec<[f64; 3]>,
}

/// Smooth random field sampled on a sparse lattice and bilinearly
/// interpolated to fine resolution.
struct SmoothField {
    grid_rows: usize,
    grid_cols: usize,
    spacing: f64,
    values: Vec<f64>,
}

impl SmoothField {
    fn draw(rng: &mut ChaCha8Rng, fine_rows: usize, fine_cols: usize, spacing: usize) -> Self {
        let spacing = spacing.max(1);
        let grid_rows = fine_rows / spacing + 2;
        let grid_cols = fine_cols / spacing + 2;
        let values = (0..grid_rows * grid_cols)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        SmoothField {
            grid_rows,
            grid_cols,
            spacing: spacing as f64,
            values,
        }
    }

    fn at(&self, row: usize, col: usize) -> f64 {
        let fr = row as f64 / self.spacing;
        let fc = col as f64 / self.spacing;
        let r0 = (fr.floor() as usize).min(self.grid_rows - 2);
        let c0 = (fc.floor() as usize).min(self.grid_cols - 2);
        let tr = fr - r0 as f64;
        let tc = fc - c0 as f64;
        let v = |r: usize, c: usize| self.values[r * self.grid_cols + c];
        let top = v(r0, c0) * (1.0 - tc) + v(r0, c0 + 1) * tc;
        let bottom = v(r0 + 1, c0) * (1.0 - tc) + v(r0 + 1, c0 + 1) * tc;
        top * (1.0 - tr) + bottom * tr
    }
}

/// Generate an aligned synthetic scene. Deterministic per seed. Coarse cells
/// are exact convex combinations of [`CLASS_SIGNATURES`] with weights equal
/// to the block class fractions; `noise_sd` adds i.i.d. Gaussian noise on
/// top.
pub fn synth_scene(
    seed: u64,
    coarse_rows: usize,
    coarse_cols: usize,
    factor: usize,
    noise_sd: f64,
) -> Result<AlignedPair> {
    Ok(synth_scene_with_truth(seed, coarse_rows, coarse_cols, factor, noise_sd)?.pair)
}

/// Like [`synth_scene`] but also returns the per-cell mixing fractions.
pub fn synth_scene_with_truth(
    seed: u64,
    coarse_rows: usize,
    coarse_cols: usize,
    factor: usize,
    noise_sd: f64,
) -> Result<SynthScene> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let fine_rows = coarse_rows * factor;
    let fine_cols = coarse_cols * factor;

    // Class regions: argmax of one smooth field per class. Patch length
    // scale of two coarse cells gives a healthy mix of pure and mixed cells.
    let spacing = 2 * factor;
    let fields: Vec<SmoothField> = (0..3)
        .map(|_| SmoothField::draw(&mut rng, fine_rows, fine_cols, spacing))
        .collect();

    let mut labels = vec![0u8; fine_rows * fine_cols];
    for r in 0..fine_rows {
        for c in 0..fine_cols {
            let mut best = 0usize;
            let mut best_v = f64::NEG_INFINITY;
            for (class, field) in fields.iter().enumerate() {
                let v = field.at(r, c);
                if v > best_v {
                    best_v = v;
                    best = class;
                }
            }
            labels[r * fine_cols + c] = best as u8;
        }
    }
    let fine = LabelGrid::new(fine_rows, fine_cols, labels)?;

    // Coarse bands: linear mixture of signatures by block fractions.
    let cells = coarse_rows * coarse_cols;
    let block = (factor * factor) as f64;
    let mut truth = vec![[0.0f64; 3]; cells];
    for cr in 0..coarse_rows {
        for cc in 0..coarse_cols {
            let mut counts = [0usize; 3];
            for dr in 0..factor {
                for dc in 0..factor {
                    let l = fine.label(cr * factor + dr, cc * factor + dc) as usize;
                    counts[l] += 1;
                }
            }
            truth[cr * coarse_cols + cc] = [
                counts[0] as f64 / block,
                counts[1] as f64 / block,
                counts[2] as f64 / block,
            ];
        }
    }

    let mut values = vec![0.0f32; cells * N_BANDS];
    for band in 0..N_BANDS {
        for cell in 0..cells {
            let f = &truth[cell];
            let mut v = 0.0f64;
            for class in 0..3 {
                v += f[class] * CLASS_SIGNATURES[class][band];
            }
            if noise_sd > 0.0 {
                v += rng.sample::<f64, _>(StandardNormal) * noise_sd;
            }
            values[band * cells + cell] = v as f32;
        }
    }

    let coarse = RasterGrid::new(coarse_rows, coarse_cols, N_BANDS, 30.0, values, None)?;
    let pair = align(coarse, fine, factor)?;
    Ok(SynthScene { pair, truth })
}

/// Emulated fine-resolution multispectral imagery (green, red, NIR) for a
/// label grid, used to exercise the reference classification pipeline.
pub fn synth_fine_imagery(
    labels: &LabelGrid,
    cell_size_m: f64,
    noise_sd: f64,
    seed: u64,
) -> Result<RasterGrid> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows = labels.rows();
    let cols = labels.cols();
    let cells = rows * cols;
    let mut values = vec![0.0f32; cells * 3];
    let mut mask = vec![false; cells];
    for cell in 0..cells {
        let code = labels.labels()[cell];
        if code == super::LABEL_NODATA {
            mask[cell] = true;
            for band in 0..3 {
                values[band * cells + cell] = 0.0;
            }
            // keep the rng stream aligned regardless of nodata placement
            for _ in 0..3 {
                let _: f64 = rng.sample(StandardNormal);
            }
            continue;
        }
        let sig = &FINE_SIGNATURES[code as usize];
        for band in 0..3 {
            let noise: f64 = rng.sample(StandardNormal);
            values[band * cells + cell] = (sig[band] + noise * noise_sd) as f32;
        }
    }
    RasterGrid::new(rows, cols, 3, cell_size_m, values, Some(mask))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_identical_scene() {
        let a = synth_scene(42, 8, 9, 6, 0.05).unwrap();
        let b = synth_scene(42, 8, 9, 6, 0.05).unwrap();
        assert_eq!(a.coarse, b.coarse);
        assert_eq!(a.fine, b.fine);
    }

    #[test]
    fn different_seeds_differ() {
        let a = synth_scene(1, 8, 8, 6, 0.0).unwrap();
        let b = synth_scene(2, 8, 8, 6, 0.0).unwrap();
        assert_ne!(a.fine, b.fine);
    }

    #[test]
    fn noiseless_values_are_exact_mixtures() {
        let scene = synth_scene_with_truth(7, 6, 5, 6, 0.0).unwrap();
        let coarse = &scene.pair.coarse;
        let cells = coarse.rows() * coarse.cols();
        for band in 0..N_BANDS {
            for cell in 0..cells {
                let f = &scene.truth[cell];
                let expect = (0..3).map(|c| f[c] * CLASS_SIGNATURES[c][band]).sum::<f64>();
                assert_eq!(coarse.values()[band * cells + cell], expect as f32);
            }
        }
    }

    #[test]
    fn single_class_scene_equals_signature() {
        // find a seed region: instead force labels directly
        let labels = LabelGrid::new(12, 12, vec![2u8; 144]).unwrap();
        let pair = align(
            {
                // rebuild coarse by mixing a pure-vegetation grid
                let cells = 4;
                let mut values = vec![0.0f32; cells * N_BANDS];
                for band in 0..N_BANDS {
                    for cell in 0..cells {
                        values[band * cells + cell] = CLASS_SIGNATURES[2][band] as f32;
                    }
                }
                RasterGrid::new(2, 2, N_BANDS, 30.0, values, None).unwrap()
            },
            labels,
            6,
        )
        .unwrap();
        for band in 0..N_BANDS {
            for cell in 0..4 {
                assert_eq!(
                    pair.coarse.values()[band * 4 + cell],
                    CLASS_SIGNATURES[2][band] as f32
                );
            }
        }
    }

    #[test]
    fn class_mix_is_balanced_enough() {
        let pair = synth_scene(3, 20, 20, 6, 0.0).unwrap();
        let mut counts = [0usize; 3];
        for &l in pair.fine.labels() {
            counts[l as usize] += 1;
        }
        let total = pair.fine.labels().len() as f64;
        for c in counts {
            let share = c as f64 / total;
            assert!(share > 0.15 && share < 0.60, "class share {share}");
        }
    }

    #[test]
    fn fine_imagery_reflects_signatures() {
        let labels = LabelGrid::new(4, 4, vec![
            0, 0, 1, 1,
            0, 0, 1, 1,
            2, 2, 255, 255,
            2, 2, 255, 255,
        ])
        .unwrap();
        let img = synth_fine_imagery(&labels, 5.0, 0.0, 9).unwrap();
        assert_eq!(img.bands(), 3);
        assert_eq!(img.value(2, 0, 0), FINE_SIGNATURES[0][2] as f32);
        assert_eq!(img.value(0, 0, 2), FINE_SIGNATURES[1][0] as f32);
        assert!(img.is_nodata(2, 2));
    }
}

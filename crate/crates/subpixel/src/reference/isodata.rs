//! ISODATA clustering for reference map generation: iterative
//! assign/update with cluster splitting (within-cluster spread above
//! `split_sd`) and merging (centroid distance below `merge_dist`).
//!
//! The exact ISODATA variant used by desktop GIS tools is unspecified;
//! this implementation documents its own behavior and is deterministic
//! per seed.

use crate::raster::{LabelGrid, RasterGrid, LABEL_NODATA, LABEL_VEGETATION};
use crate::{Error, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Cluster id assigned to nodata cells.
pub const CLUSTER_NODATA: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct IsodataConfig {
    /// Initial cluster count (over-segment, then merge).
    pub k_init: usize,
    pub max_iter: usize,
    /// Split a cluster when its largest per-dimension standard deviation
    /// exceeds this.
    pub split_sd: f64,
    /// Merge clusters whose centroids are closer than this (Euclidean).
    pub merge_dist: f64,
    pub seed: u64,
}

impl Default for IsodataConfig {
    fn default() -> Self {
        IsodataConfig {
            k_init: 10,
            max_iter: 25,
            split_sd: 0.08,
            merge_dist: 0.05,
            seed: 0,
        }
    }
}

struct Cluster {
    centroid: Vec<f64>,
    count: usize,
}

fn dist2(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Cluster the unmasked cells of a multiband raster. Returns one cluster id
/// per cell (row-major); nodata cells get [`CLUSTER_NODATA`]. Ids are
/// compacted to `0..k` in first-appearance order.
pub fn isodata_cluster(fine_bands: &RasterGrid, cfg: &IsodataConfig) -> Result<Vec<u32>> {
    if cfg.k_init == 0 {
        return Err(Error::Config("k_init must be at least 1".to_string()));
    }
    if fine_bands.bands() < 2 {
        return Err(Error::Config(format!(
            "clustering needs at least 2 bands, got {}",
            fine_bands.bands()
        )));
    }
    let cells = fine_bands.rows() * fine_bands.cols();
    let bands = fine_bands.bands();
    let valid: Vec<usize> = (0..cells).filter(|&i| !fine_bands.nodata_mask()[i]).collect();
    if valid.is_empty() {
        return Err(Error::EmptyInput("no unmasked cells to cluster".to_string()));
    }

    let feature = |cell: usize, out: &mut Vec<f64>| {
        out.clear();
        for b in 0..bands {
            out.push(fine_bands.values()[b * cells + cell] as f64);
        }
    };

    // init: centroids at k_init distinct random unmasked cells
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let k0 = cfg.k_init.min(valid.len());
    let mut picks = valid.clone();
    picks.shuffle(&mut rng);
    let mut buf = Vec::with_capacity(bands);
    let mut clusters: Vec<Cluster> = picks[..k0]
        .iter()
        .map(|&cell| {
            feature(cell, &mut buf);
            Cluster {
                centroid: buf.clone(),
                count: 0,
            }
        })
        .collect();

    let mut assignment = vec![0u32; valid.len()];
    for _iter in 0..cfg.max_iter.max(1) {
        // assign
        let mut changed = false;
        for (vi, &cell) in valid.iter().enumerate() {
            feature(cell, &mut buf);
            let mut best = 0usize;
            let mut best_d = f64::INFINITY;
            for (ci, cl) in clusters.iter().enumerate() {
                let d = dist2(&buf, &cl.centroid);
                if d < best_d {
                    best_d = d;
                    best = ci;
                }
            }
            if assignment[vi] != best as u32 {
                assignment[vi] = best as u32;
                changed = true;
            }
        }

        // update centroids
        let mut sums = vec![vec![0.0f64; bands]; clusters.len()];
        let mut counts = vec![0usize; clusters.len()];
        for (vi, &cell) in valid.iter().enumerate() {
            feature(cell, &mut buf);
            let ci = assignment[vi] as usize;
            counts[ci] += 1;
            for b in 0..bands {
                sums[ci][b] += buf[b];
            }
        }
        let mut kept: Vec<Cluster> = Vec::new();
        let mut remap = vec![0u32; clusters.len()];
        for ci in 0..clusters.len() {
            if counts[ci] > 0 {
                remap[ci] = kept.len() as u32;
                kept.push(Cluster {
                    centroid: sums[ci].iter().map(|s| s / counts[ci] as f64).collect(),
                    count: counts[ci],
                });
            }
        }
        for a in assignment.iter_mut() {
            *a = remap[*a as usize];
        }
        clusters = kept;

        // merge closest pairs below threshold (weighted centroid average)
        let mut merged_any = false;
        loop {
            if clusters.len() < 2 {
                break;
            }
            let mut best: Option<(usize, usize, f64)> = None;
            for i in 0..clusters.len() {
                for j in i + 1..clusters.len() {
                    let d = dist2(&clusters[i].centroid, &clusters[j].centroid).sqrt();
                    if d < cfg.merge_dist && best.map_or(true, |(_, _, bd)| d < bd) {
                        best = Some((i, j, d));
                    }
                }
            }
            let Some((i, j, _)) = best else { break };
            let (wi, wj) = (clusters[i].count as f64, clusters[j].count as f64);
            let total = wi + wj;
            let cj = clusters[j].centroid.clone();
            for (b, v) in clusters[i].centroid.iter_mut().enumerate() {
                *v = (*v * wi + cj[b] * wj) / total;
            }
            clusters[i].count += clusters[j].count;
            clusters.remove(j);
            for a in assignment.iter_mut() {
                if *a == j as u32 {
                    *a = i as u32;
                } else if *a > j as u32 {
                    *a -= 1;
                }
            }
            merged_any = true;
        }

        // split clusters with large within-cluster spread along their widest
        // dimension (centroid +/- sd)
        let mut split_any = false;
        let mut variances = vec![vec![0.0f64; bands]; clusters.len()];
        for (vi, &cell) in valid.iter().enumerate() {
            feature(cell, &mut buf);
            let ci = assignment[vi] as usize;
            for b in 0..bands {
                let d = buf[b] - clusters[ci].centroid[b];
                variances[ci][b] += d * d;
            }
        }
        let n_before = clusters.len();
        for ci in 0..n_before {
            if clusters[ci].count < 4 {
                continue;
            }
            let mut widest = 0usize;
            let mut widest_var = 0.0f64;
            for b in 0..bands {
                let var = variances[ci][b] / clusters[ci].count as f64;
                if var > widest_var {
                    widest_var = var;
                    widest = b;
                }
            }
            let sd = widest_var.sqrt();
            if sd > cfg.split_sd {
                let mut hi = clusters[ci].centroid.clone();
                hi[widest] += sd;
                clusters[ci].centroid[widest] -= sd;
                clusters.push(Cluster {
                    centroid: hi,
                    count: 0,
                });
                split_any = true;
            }
        }

        if !changed && !merged_any && !split_any {
            break;
        }
    }

    // final assignment against the surviving centroids
    for (vi, &cell) in valid.iter().enumerate() {
        feature(cell, &mut buf);
        let mut best = 0usize;
        let mut best_d = f64::INFINITY;
        for (ci, cl) in clusters.iter().enumerate() {
            let d = dist2(&buf, &cl.centroid);
            if d < best_d {
                best_d = d;
                best = ci;
            }
        }
        assignment[vi] = best as u32;
    }

    // compact ids in first-appearance order
    let mut remap: BTreeMap<u32, u32> = BTreeMap::new();
    let mut next = 0u32;
    let mut out = vec![CLUSTER_NODATA; cells];
    for (vi, &cell) in valid.iter().enumerate() {
        let id = *remap.entry(assignment[vi]).or_insert_with(|| {
            let id = next;
            next += 1;
            id
        });
        out[cell] = id;
    }
    Ok(out)
}

/// Per-cell NDVI of a fine multispectral raster; degenerate denominators
/// yield 0.
pub fn ndvi_grid(img: &RasterGrid, red_band: usize, nir_band: usize) -> Vec<f32> {
    let cells = img.rows() * img.cols();
    (0..cells)
        .map(|cell| {
            let red = img.values()[red_band * cells + cell] as f64;
            let nir = img.values()[nir_band * cells + cell] as f64;
            crate::features::ndvi(red, nir).0 as f32
        })
        .collect()
}

/// Analyst rule table mapping cluster ids to classes for clusters that the
/// NDVI rule does not label as vegetation.
#[derive(Debug, Clone, Default)]
pub struct ClassRule {
    pub assignments: BTreeMap<u32, u8>,
    /// Fallback class for clusters without an explicit entry.
    pub default: Option<u8>,
}

impl ClassRule {
    pub fn with_default(class: u8) -> ClassRule {
        ClassRule {
            assignments: BTreeMap::new(),
            default: Some(class),
        }
    }
}

/// Label clusters: vegetation when the cluster's mean NDVI reaches the
/// threshold, otherwise the rule table decides. Nodata cluster ids map to
/// nodata labels. Errors when a cluster has neither an NDVI decision nor a
/// rule.
pub fn assign_classes(
    clusters: &[u32],
    rows: usize,
    cols: usize,
    ndvi: &[f32],
    ndvi_veg_threshold: f64,
    rules: &ClassRule,
) -> Result<LabelGrid> {
    if clusters.len() != rows * cols || ndvi.len() != rows * cols {
        return Err(Error::DimensionMismatch(
            "cluster ids, NDVI grid and shape must agree".to_string(),
        ));
    }
    let mut sums: BTreeMap<u32, (f64, usize)> = BTreeMap::new();
    for (i, &id) in clusters.iter().enumerate() {
        if id != CLUSTER_NODATA {
            let e = sums.entry(id).or_insert((0.0, 0));
            e.0 += ndvi[i] as f64;
            e.1 += 1;
        }
    }
    let mut class_of: BTreeMap<u32, u8> = BTreeMap::new();
    for (&id, &(sum, count)) in &sums {
        let mean_ndvi = sum / count as f64;
        let class = if mean_ndvi >= ndvi_veg_threshold {
            LABEL_VEGETATION
        } else if let Some(&c) = rules.assignments.get(&id) {
            c
        } else if let Some(c) = rules.default {
            c
        } else {
            return Err(Error::InvalidInput(format!(
                "cluster {id} (mean NDVI {mean_ndvi:.3}) has no rule and no NDVI decision"
            )));
        };
        if !matches!(class, 0 | 1 | 2) {
            return Err(Error::InvalidLabel {
                code: class,
                index: id as usize,
            });
        }
        class_of.insert(id, class);
    }
    let labels = clusters
        .iter()
        .map(|&id| {
            if id == CLUSTER_NODATA {
                LABEL_NODATA
            } else {
                class_of[&id]
            }
        })
        .collect();
    LabelGrid::new(rows, cols, labels)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::raster::LABEL_BUILTUP;

    fn raster_from(rows: usize, cols: usize, bands: Vec<Vec<f32>>) -> RasterGrid {
        let mut values = Vec::new();
        for b in &bands {
            values.extend_from_slice(b);
        }
        RasterGrid::new(rows, cols, bands.len(), 5.0, values, None).unwrap()
    }

    #[test]
    fn identical_cells_collapse_to_one_cluster() {
        let img = raster_from(4, 4, vec![vec![0.3; 16], vec![0.5; 16]]);
        let cfg = IsodataConfig {
            k_init: 5,
            ..Default::default()
        };
        let ids = isodata_cluster(&img, &cfg).unwrap();
        assert!(ids.iter().all(|&i| i == 0));
    }

    #[test]
    fn same_seed_identical_labeling() {
        let pair = crate::raster::synth_scene(5, 6, 6, 6, 0.0).unwrap();
        let img = crate::raster::synth_fine_imagery(&pair.fine, 5.0, 0.02, 3).unwrap();
        let cfg = IsodataConfig::default();
        let a = isodata_cluster(&img, &cfg).unwrap();
        let b = isodata_cluster(&img, &cfg).unwrap();
        assert_eq!(a, b);
    }

    /// Independent Lloyd's k-means oracle, k = 2.
    fn kmeans2_oracle(points: &[(f64, f64)], init: [(f64, f64); 2]) -> Vec<usize> {
        let mut centers = init;
        let mut assign = vec![0usize; points.len()];
        for _ in 0..50 {
            for (i, p) in points.iter().enumerate() {
                let d0 = (p.0 - centers[0].0).powi(2) + (p.1 - centers[0].1).powi(2);
                let d1 = (p.0 - centers[1].0).powi(2) + (p.1 - centers[1].1).powi(2);
                assign[i] = usize::from(d1 < d0);
            }
            for c in 0..2 {
                let members: Vec<_> = points
                    .iter()
                    .zip(&assign)
                    .filter(|(_, &a)| a == c)
                    .map(|(p, _)| *p)
                    .collect();
                if !members.is_empty() {
                    let n = members.len() as f64;
                    centers[c] = (
                        members.iter().map(|p| p.0).sum::<f64>() / n,
                        members.iter().map(|p| p.1).sum::<f64>() / n,
                    );
                }
            }
        }
        assign
    }

    #[test]
    fn two_blobs_match_kmeans_oracle() {
        use rand::Rng;
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let rows = 20;
        let cols = 20;
        let cells = rows * cols;
        let mut b0 = vec![0.0f32; cells];
        let mut b1 = vec![0.0f32; cells];
        let mut points = Vec::with_capacity(cells);
        for i in 0..cells {
            let blob = i % 2;
            let (cx, cy) = if blob == 0 { (0.2, 0.2) } else { (0.8, 0.8) };
            let x = cx + rng.gen_range(-0.05..0.05);
            let y = cy + rng.gen_range(-0.05..0.05);
            b0[i] = x as f32;
            b1[i] = y as f32;
            points.push((x, y));
        }
        let img = raster_from(rows, cols, vec![b0, b1]);
        let cfg = IsodataConfig {
            k_init: 2,
            max_iter: 50,
            split_sd: 10.0,   // disable splitting
            merge_dist: 1e-9, // disable merging
            seed: 4,
        };
        let ids = isodata_cluster(&img, &cfg).unwrap();
        let oracle = kmeans2_oracle(&points, [(0.2, 0.2), (0.8, 0.8)]);
        // cluster numbering is arbitrary; count agreement under the better
        // of the two label pairings
        let same = ids
            .iter()
            .zip(&oracle)
            .filter(|(&a, &b)| (a as usize) == b)
            .count();
        let agree = same.max(cells - same) as f64 / cells as f64;
        assert!(agree >= 0.99, "agreement {agree}");
    }

    #[test]
    fn all_high_ndvi_labels_vegetation() {
        let clusters = vec![0u32, 0, 1, 1];
        let ndvi = vec![0.8f32; 4];
        let grid = assign_classes(&clusters, 2, 2, &ndvi, 0.4, &ClassRule::default()).unwrap();
        assert!(grid.labels().iter().all(|&l| l == LABEL_VEGETATION));
    }

    #[test]
    fn unreachable_threshold_requires_rule_table() {
        let clusters = vec![0u32, 0, 1, 1];
        let ndvi = vec![0.8f32; 4];
        let err = assign_classes(&clusters, 2, 2, &ndvi, 1.1, &ClassRule::default());
        assert!(err.is_err());
        // supplying rules resolves it
        let mut rules = ClassRule::default();
        rules.assignments.insert(0, LABEL_BUILTUP);
        rules.assignments.insert(1, 0);
        let grid = assign_classes(&clusters, 2, 2, &ndvi, 1.1, &rules).unwrap();
        assert_eq!(grid.labels(), &[1, 1, 0, 0]);
    }

    #[test]
    fn synthetic_scene_recovery() {
        let pair = crate::raster::synth_scene(21, 10, 10, 6, 0.0).unwrap();
        let img = crate::raster::synth_fine_imagery(&pair.fine, 5.0, 0.01, 7).unwrap();
        let cfg = IsodataConfig::default();
        let ids = isodata_cluster(&img, &cfg).unwrap();
        let ndvi = ndvi_grid(&img, 1, 2);

        // analyst surrogate: majority true class per cluster
        let mut votes: BTreeMap<u32, [usize; 3]> = BTreeMap::new();
        for (i, &id) in ids.iter().enumerate() {
            votes.entry(id).or_default()[pair.fine.labels()[i] as usize] += 1;
        }
        let mut rules = ClassRule::default();
        for (id, v) in votes {
            let best = (0..3).max_by_key(|&c| v[c]).unwrap() as u8;
            rules.assignments.insert(id, best);
        }

        let recovered = assign_classes(&ids, 60, 60, &ndvi, 0.3, &rules).unwrap();
        let agree = recovered
            .labels()
            .iter()
            .zip(pair.fine.labels())
            .filter(|(a, b)| a == b)
            .count() as f64
            / 3600.0;
        assert!(agree >= 0.95, "agreement {agree}");
    }
}

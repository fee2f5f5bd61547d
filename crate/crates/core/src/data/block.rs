use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::ClassId;

pub const DEFAULT_BLOCK_SIZE: f64 = 1.0;
pub const DEFAULT_POINTS_PER_BLOCK: usize = 2048;
/// XYZ, RGB, XYZ normalized to the block's bounding box.
pub const INPUT_DIM: usize = 9;

/// Groups point indices into `block_size` x `block_size` cells of the xy plane.
///
/// Cells are `floor((x - x_min) / block_size)`, clamped so the far edge of the
/// cloud stays in the last cell. Empty cells are omitted; blocks come out in
/// (x cell, y cell) order.
pub fn partition_blocks(cloud: &PointCloud, block_size: f64) -> Result<Vec<Vec<usize>>> {
    if !(block_size > 0.0 && block_size.is_finite()) {
        return Err(Error::invalid(format!("block size must be > 0, got {block_size}")));
    }
    if cloud.is_empty() {
        return Ok(Vec::new());
    }
    let mut min = [f64::INFINITY; 2];
    let mut max = [f64::NEG_INFINITY; 2];
    for p in &cloud.positions {
        for k in 0..2 {
            min[k] = min[k].min(p[k] as f64);
            max[k] = max[k].max(p[k] as f64);
        }
    }
    let cells = |k: usize| (((max[k] - min[k]) / block_size).ceil() as usize).max(1);
    let (nx, ny) = (cells(0), cells(1));

    let mut groups: BTreeMap<(usize, usize), Vec<usize>> = BTreeMap::new();
    for (i, p) in cloud.positions.iter().enumerate() {
        let cell = |k: usize, n: usize| {
            let c = ((p[k] as f64 - min[k]) / block_size).floor() as usize;
            c.min(n - 1)
        };
        groups.entry((cell(0, nx), cell(1, ny))).or_default().push(i);
    }
    Ok(groups.into_values().collect())
}

/// A fixed-size sample of one block, ready for feature extraction.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledBlock {
    /// `m` rows of [x, y, z, r, g, b, nx, ny, nz].
    pub input_features: Vec<[f64; INPUT_DIM]>,
    /// Per-row class labels when the source cloud is labeled (or a mask owner decided to keep them).
    pub labels: Option<Vec<ClassId>>,
    /// Row -> index into the source cloud.
    pub indices: Vec<usize>,
    /// Minimum corner of the block's bounding box.
    pub origin: [f64; 3],
}

impl SampledBlock {
    pub fn len(&self) -> usize {
        self.input_features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.input_features.is_empty()
    }

    pub fn positions(&self) -> Vec<[f64; 3]> {
        self.input_features
            .iter()
            .map(|r| [r[0], r[1], r[2]])
            .collect()
    }
}

/// Samples `m` points of `block`: without replacement when the block is large
/// enough, with replacement otherwise.
pub fn sample_block(cloud: &PointCloud, block: &[usize], m: usize, seed: u64) -> Result<SampledBlock> {
    if block.is_empty() {
        return Err(Error::invalid("cannot sample an empty block"));
    }
    if m == 0 {
        return Err(Error::invalid("points per block must be >= 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let picks: Vec<usize> = if block.len() >= m {
        index::sample(&mut rng, block.len(), m).into_vec()
    } else {
        (0..m).map(|_| rng.gen_range(0..block.len())).collect()
    };
    let indices: Vec<usize> = picks.into_iter().map(|i| block[i]).collect();

    let mut min = [f64::INFINITY; 3];
    let mut max = [f64::NEG_INFINITY; 3];
    for &i in block {
        let p = cloud.position(i);
        for k in 0..3 {
            min[k] = min[k].min(p[k]);
            max[k] = max[k].max(p[k]);
        }
    }
    let input_features = indices
        .iter()
        .map(|&i| {
            let p = cloud.position(i);
            let c = cloud.color(i);
            let mut row = [0.0; INPUT_DIM];
            row[..3].copy_from_slice(&p);
            row[3..6].copy_from_slice(&c);
            for k in 0..3 {
                let extent = max[k] - min[k];
                row[6 + k] = if extent > 0.0 {
                    ((p[k] - min[k]) / extent).clamp(0.0, 1.0)
                } else {
                    0.0
                };
            }
            row
        })
        .collect();
    let labels = cloud
        .labels
        .as_ref()
        .map(|l| indices.iter().map(|&i| l[i]).collect());
    Ok(SampledBlock {
        input_features,
        labels,
        indices,
        origin: min,
    })
}

/// Derives the sampling seed of one block from a run seed and the block's position.
pub fn block_seed(seed: u64, scene: usize, block: usize) -> u64 {
    let mut h = seed ^ 0x51_7c_c1_b7_27_22_0a_95;
    for v in [scene as u64, block as u64] {
        h = h.rotate_left(23) ^ v.wrapping_mul(0x9e37_79b9_7f4a_7c15);
        h = h.wrapping_mul(0xbf58_476d_1ce4_e5b9);
    }
    h
}

/// Partitions and samples every block of `cloud`.
pub fn sample_scene(
    cloud: &PointCloud,
    block_size: f64,
    m: usize,
    seed: u64,
    scene_index: usize,
) -> Result<Vec<SampledBlock>> {
    partition_blocks(cloud, block_size)?
        .iter()
        .enumerate()
        .map(|(b, group)| sample_block(cloud, group, m, block_seed(seed, scene_index, b)))
        .collect()
}

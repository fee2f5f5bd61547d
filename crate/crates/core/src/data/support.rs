use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::block::{sample_scene, SampledBlock};
use crate::data::cloud::PointCloud;
use crate::data::registry::ClassRegistry;
use crate::error::{Error, Result};
use crate::ClassId;

pub const DEFAULT_MIN_FOREGROUND: usize = 100;

#[derive(Debug, Clone, PartialEq)]
pub struct SupportBlock {
    /// The sampled block with its labels withheld.
    pub block: SampledBlock,
    /// True exactly on rows of the target class.
    pub mask: Vec<bool>,
    /// (scene index, block index) the block was drawn from.
    pub source: (usize, usize),
}

impl SupportBlock {
    pub fn foreground_count(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportClass {
    pub class: ClassId,
    pub blocks: Vec<SupportBlock>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SupportSet {
    pub shot_count: usize,
    pub classes: Vec<SupportClass>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SupportParams {
    pub shots: usize,
    pub block_size: f64,
    pub points_per_block: usize,
    pub min_foreground: usize,
    pub seed: u64,
}

/// Draws `shots` masked blocks per novel class from labeled clouds.
///
/// Candidate blocks are sampled with seeds derived from `params.seed`; a block
/// qualifies for a class when at least `min_foreground` of its sampled rows
/// carry that class.
pub fn build_support_set(
    clouds: &[PointCloud],
    registry: &ClassRegistry,
    params: &SupportParams,
) -> Result<SupportSet> {
    if params.shots == 0 {
        return Err(Error::invalid("shot count must be >= 1"));
    }
    let mut sampled = Vec::new();
    for (s, cloud) in clouds.iter().enumerate() {
        if cloud.labels.is_none() {
            return Err(Error::invalid(format!("support scene {s} is unlabeled")));
        }
        for (b, block) in sample_scene(
            cloud,
            params.block_size,
            params.points_per_block,
            params.seed,
            s,
        )?
        .into_iter()
        .enumerate()
        {
            sampled.push(((s, b), block));
        }
    }

    let mut classes = Vec::with_capacity(registry.novel_classes.len());
    for &class in &registry.novel_classes {
        let candidates: Vec<usize> = sampled
            .iter()
            .enumerate()
            .filter(|(_, (_, block))| {
                let labels = block.labels.as_ref().expect("labeled");
                labels.iter().filter(|&&l| l == class).count() >= params.min_foreground
            })
            .map(|(i, _)| i)
            .collect();
        if candidates.len() < params.shots {
            return Err(Error::InsufficientSupport {
                class,
                name: registry.name(class).to_string(),
                found: candidates.len(),
                required: params.shots,
            });
        }
        let mut rng = ChaCha8Rng::seed_from_u64(params.seed ^ (u64::from(class) << 32 | 0x5eed));
        let mut picks = index::sample(&mut rng, candidates.len(), params.shots).into_vec();
        picks.sort_unstable();
        let blocks = picks
            .into_iter()
            .map(|p| {
                let (source, block) = &sampled[candidates[p]];
                let labels = block.labels.as_ref().expect("labeled");
                let mask = labels.iter().map(|&l| l == class).collect();
                SupportBlock {
                    block: SampledBlock {
                        labels: None,
                        ..block.clone()
                    },
                    mask,
                    source: *source,
                }
            })
            .collect();
        classes.push(SupportClass { class, blocks });
    }
    Ok(SupportSet {
        shot_count: params.shots,
        classes,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::block::partition_blocks;

    /// Scene of `n_blocks` 1 m cells along x; cell `i` holds `fg[i]` class-1 points
    /// and pads the rest with class 0.
    fn striped_cloud(fg: &[usize], per_block: usize) -> PointCloud {
        let mut positions = Vec::new();
        let mut labels = Vec::new();
        for (b, &n_fg) in fg.iter().enumerate() {
            for i in 0..per_block {
                let x = b as f32 + 0.05 + 0.9 * (i as f32 / per_block as f32);
                positions.push([x, 0.5, (i % 7) as f32 * 0.1]);
                labels.push(if i < n_fg { 1 } else { 0 });
            }
        }
        let n = positions.len();
        PointCloud::new(positions, vec![[0.5; 3]; n], Some(labels)).unwrap()
    }

    fn registry() -> ClassRegistry {
        ClassRegistry::new(vec![0], vec![1], vec!["base".into(), "novel".into()]).unwrap()
    }

    fn params(shots: usize, seed: u64) -> SupportParams {
        SupportParams {
            shots,
            block_size: 1.0,
            points_per_block: 200,
            min_foreground: 100,
            seed,
        }
    }

    #[test]
    fn forced_choice_with_one_qualifying_block() {
        let cloud = striped_cloud(&[0, 200, 0], 200);
        assert_eq!(partition_blocks(&cloud, 1.0).unwrap().len(), 3);
        let set = build_support_set(&[cloud], &registry(), &params(1, 0)).unwrap();
        assert_eq!(set.classes[0].blocks.len(), 1);
        assert_eq!(set.classes[0].blocks[0].source, (0, 1));
    }

    #[test]
    fn fixed_seed_gives_identical_selection() {
        let cloud = striped_cloud(&[200; 20], 200);
        let a = build_support_set(std::slice::from_ref(&cloud), &registry(), &params(5, 42)).unwrap();
        let b = build_support_set(&[cloud], &registry(), &params(5, 42)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn masks_match_labels_and_labels_are_withheld() {
        let cloud = striped_cloud(&[150, 180, 120, 160], 200);
        let set = build_support_set(std::slice::from_ref(&cloud), &registry(), &params(3, 1)).unwrap();
        for sb in &set.classes[0].blocks {
            assert!(sb.block.labels.is_none());
            for (row, &src) in sb.block.indices.iter().enumerate() {
                let truth = cloud.labels.as_ref().unwrap()[src] == 1;
                assert_eq!(sb.mask[row], truth);
            }
            assert!(sb.foreground_count() >= 100);
        }
    }

    #[test]
    fn insufficient_blocks_names_the_class() {
        let cloud = striped_cloud(&[200, 10], 200);
        match build_support_set(&[cloud], &registry(), &params(2, 0)) {
            Err(Error::InsufficientSupport { class, found, .. }) => {
                assert_eq!(class, 1);
                assert_eq!(found, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
    }
}

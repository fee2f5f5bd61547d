//! Geometric-guided classifier re-weighting and full-scene segmentation.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::bundle::ModelBundle;
use crate::data::block::{block_seed, partition_blocks, sample_block, SampledBlock};
use crate::data::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::fusion::{semantic_logit, SemanticPrototype};
use crate::linalg::argmax;
use crate::prototypes::GeometricPrototype;
use crate::represent::{block_features, fused_features, point_inputs, FeatureInput};
use crate::vocab::HardAssignment;
use crate::ClassId;

/// 1 when the pruned histogram keeps the point's word.
pub fn matching_score(proto: &GeometricPrototype, assignment: HardAssignment) -> bool {
    proto.histogram().get(assignment.0).is_some_and(|v| *v > 0.0)
}

/// `beta` for matched classes, 1 elsewhere.
pub fn class_weights(scores: &[bool], beta: f64) -> Result<Vec<f64>> {
    if !(beta >= 1.0 && beta.is_finite()) {
        return Err(Error::invalid(format!("beta must be >= 1, got {beta}")));
    }
    Ok(scores.iter().map(|&s| if s { beta } else { 1.0 }).collect())
}

/// Label of the largest final logit, ties to the lowest class.
pub fn predict(final_logits: &[f64]) -> ClassId {
    argmax(final_logits) as ClassId
}

#[derive(Debug, Clone, PartialEq)]
pub struct PointPrediction {
    pub label: ClassId,
    /// Cosine logits indexed by class id.
    pub semantic_logits: Vec<f64>,
    /// Re-weighted logits indexed by class id.
    pub final_logits: Vec<f64>,
}

/// Scoring overrides applied at inference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InferenceOptions {
    pub beta: f64,
}

impl InferenceOptions {
    pub fn from_bundle(bundle: &ModelBundle) -> Self {
        Self {
            beta: bundle.hyper.beta,
        }
    }
}

struct Classifier<'a> {
    semantic: Vec<&'a SemanticPrototype>,
    pruned: Vec<&'a GeometricPrototype>,
}

impl<'a> Classifier<'a> {
    fn new(bundle: &'a ModelBundle) -> Result<Self> {
        let n = bundle.registry.num_classes();
        let mut semantic = Vec::with_capacity(n);
        let mut pruned = Vec::with_capacity(n);
        for c in 0..n as ClassId {
            semantic.push(bundle.semantic.get(&c).ok_or(Error::MissingPrototype(c))?);
            pruned.push(bundle.pruned.get(&c).ok_or(Error::MissingPrototype(c))?);
        }
        Ok(Self { semantic, pruned })
    }

    fn score(&self, f_fin: &[f64], word: HardAssignment, beta: f64) -> PointPrediction {
        let semantic_logits: Vec<f64> = self.semantic.iter().map(|p| semantic_logit(f_fin, p)).collect();
        let final_logits: Vec<f64> = semantic_logits
            .iter()
            .zip(&self.pruned)
            .map(|(l, p)| if matching_score(p, word) { beta * l } else { *l })
            .collect();
        PointPrediction {
            label: predict(&final_logits),
            semantic_logits,
            final_logits,
        }
    }
}

/// Classifies every row of a sampled block.
pub fn classify_points(block: &SampledBlock, bundle: &ModelBundle) -> Result<Vec<PointPrediction>> {
    classify_with(block, bundle, FeatureInput::Handcrafted, InferenceOptions::from_bundle(bundle))
}

pub fn classify_with(
    block: &SampledBlock,
    bundle: &ModelBundle,
    input: FeatureInput<'_>,
    options: InferenceOptions,
) -> Result<Vec<PointPrediction>> {
    class_weights(&[], options.beta)?;
    let classifier = Classifier::new(bundle)?;
    let weights = bundle
        .fusion
        .as_ref()
        .ok_or_else(|| Error::invalid("model has no trained fusion layer"))?;
    let features = block_features(block, &bundle.hyper, input)?;
    let inputs = point_inputs(&features, &bundle.vocabulary, &bundle.hyper)?;
    let fused = fused_features(&inputs, weights)?;
    Ok(fused
        .par_iter()
        .zip(inputs.words.par_iter())
        .map(|(f, w)| classifier.score(f, *w, options.beta))
        .collect())
}

/// Block layout used to segment a full cloud.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegmentConfig {
    pub block_size: f64,
    pub points_per_block: usize,
    pub seed: u64,
    pub options: InferenceOptions,
}

impl SegmentConfig {
    pub fn from_bundle(bundle: &ModelBundle, seed: u64) -> Self {
        Self {
            block_size: bundle.hyper.block_size,
            points_per_block: bundle.hyper.points_per_block,
            seed,
            options: InferenceOptions::from_bundle(bundle),
        }
    }
}

/// Labels every point of `cloud`: block-wise classification of sampled rows,
/// then nearest sampled neighbor within the block for the rest.
pub fn segment_scene(
    cloud: &PointCloud,
    bundle: &ModelBundle,
    input: FeatureInput<'_>,
    config: &SegmentConfig,
) -> Result<Vec<ClassId>> {
    if cloud.is_empty() {
        return Err(Error::invalid("cannot segment an empty cloud"));
    }
    let mut labels = vec![0 as ClassId; cloud.len()];
    for (b, group) in partition_blocks(cloud, config.block_size)?.iter().enumerate() {
        let block = sample_block(cloud, group, config.points_per_block, block_seed(config.seed, 0, b))?;
        let predictions = classify_with(&block, bundle, input, config.options)?;
        for (point, label) in stitch(cloud, group, &block, &predictions) {
            labels[point] = label;
        }
    }
    Ok(labels)
}

fn stitch(
    cloud: &PointCloud,
    group: &[usize],
    block: &SampledBlock,
    predictions: &[PointPrediction],
) -> Vec<(usize, ClassId)> {
    let sampled: Vec<[f64; 3]> = block.indices.iter().map(|&i| cloud.position(i)).collect();
    let mut row_of = HashMap::with_capacity(block.indices.len());
    for (row, &i) in block.indices.iter().enumerate().rev() {
        row_of.insert(i, row);
    }
    group
        .par_iter()
        .with_min_len(256)
        .map(|&point| {
            if let Some(&row) = row_of.get(&point) {
                return (point, predictions[row].label);
            }
            let p = cloud.position(point);
            let mut best = (f64::INFINITY, 0);
            for (row, q) in sampled.iter().enumerate() {
                let d = (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2);
                if d < best.0 {
                    best = (d, row);
                }
            }
            (point, predictions[best.1].label)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bundle::tests::sample_bundle;
    use crate::data::registry::ClassRegistry;
    use crate::data::synth::{generate_synthetic_scene, two_planes};
    use crate::features::SemanticDescriptorConfig;
    use proptest::prelude::*;

    fn geo(h: &[f64]) -> GeometricPrototype {
        GeometricPrototype::new(0, h.to_vec(), None).unwrap()
    }

    #[test]
    fn matching_examples() {
        let p = geo(&[0.6, 0.4, 0.0]);
        assert!(matching_score(&p, HardAssignment(0)));
        assert!(!matching_score(&p, HardAssignment(2)));
        let u = geo(&[0.25; 4]);
        assert!((0..4).all(|i| matching_score(&u, HardAssignment(i))));
    }

    #[test]
    fn weight_examples() {
        assert_eq!(class_weights(&[true, false, true], 1.2).unwrap(), vec![1.2, 1.0, 1.2]);
        assert_eq!(class_weights(&[true, true], 1.0).unwrap(), vec![1.0, 1.0]);
        assert_eq!(class_weights(&[false, false], 1.5).unwrap(), vec![1.0, 1.0]);
        assert!(class_weights(&[true], 0.9).is_err());
    }

    #[test]
    fn geometric_match_flips_small_deficit() {
        let l_sem = [0.80, 0.70];
        let w = class_weights(&[false, true], 1.2).unwrap();
        let l_fin: Vec<f64> = l_sem.iter().zip(&w).map(|(l, w)| l * w).collect();
        assert!((l_fin[1] - 0.84).abs() < 1e-12);
        assert_eq!(predict(&l_fin), 1);
        assert_eq!(predict(&[0.5, 0.5]), 0);
    }

    fn two_plane_block() -> (PointCloud, SampledBlock) {
        let cloud = generate_synthetic_scene(&two_planes(3)).unwrap();
        let group: Vec<usize> = (0..cloud.len()).collect();
        let block = sample_block(&cloud, &group, 256, 1).unwrap();
        (cloud, block)
    }

    fn bundle_for_block(n_classes: usize) -> ModelBundle {
        let mut bundle = sample_bundle(11);
        bundle.hyper.low_dim = crate::features::GEOMETRY_DIM;
        bundle.hyper.semantic = SemanticDescriptorConfig::default();
        bundle.hyper.sem_dim = bundle.hyper.semantic.dim();
        let h = bundle.hyper.vocab_size;
        let mut words = vec![0.0; h * bundle.hyper.low_dim];
        for i in 0..h {
            words[i * bundle.hyper.low_dim + i] = 1.0;
        }
        bundle.vocabulary = crate::vocab::Vocabulary::new(
            words,
            bundle.hyper.low_dim,
            vec![1; h],
            Default::default(),
        )
        .unwrap();
        bundle.fusion = Some(crate::fusion::FusionWeights::initialize(
            bundle.hyper.fused_dim,
            bundle.hyper.fusion_in_dim(),
            4,
        ));
        let names = (0..n_classes).map(|c| format!("c{c}")).collect();
        bundle.registry = ClassRegistry::new((0..n_classes as ClassId).collect(), vec![], names).unwrap();
        bundle.semantic.retain(|c, _| (*c as usize) < n_classes);
        bundle.geometric.retain(|c, _| (*c as usize) < n_classes);
        bundle.pruned.retain(|c, _| (*c as usize) < n_classes);
        bundle.validate().unwrap();
        bundle
    }

    #[test]
    fn single_class_labels_everything() {
        let (_, block) = two_plane_block();
        let bundle = bundle_for_block(1);
        let preds = classify_points(&block, &bundle).unwrap();
        assert_eq!(preds.len(), block.len());
        assert!(preds.iter().all(|p| p.label == 0));
    }

    #[test]
    fn beta_one_is_semantic_argmax() {
        let (_, block) = two_plane_block();
        let bundle = bundle_for_block(3);
        let preds = classify_with(&block, &bundle, FeatureInput::Handcrafted, InferenceOptions { beta: 1.0 }).unwrap();
        for p in preds {
            assert_eq!(p.final_logits, p.semantic_logits);
            assert_eq!(p.label as usize, argmax(&p.semantic_logits));
        }
    }

    #[test]
    fn missing_prototype_is_an_error() {
        let (_, block) = two_plane_block();
        let mut bundle = bundle_for_block(3);
        bundle.semantic.remove(&2);
        assert!(matches!(classify_points(&block, &bundle), Err(Error::MissingPrototype(2))));
    }

    #[test]
    fn one_block_scene_matches_block_classification() {
        let cloud = generate_synthetic_scene(&two_planes(5)).unwrap();
        let bundle = bundle_for_block(3);
        let mut config = SegmentConfig::from_bundle(&bundle, 9);
        config.block_size = 10.0;
        config.points_per_block = cloud.len() + 10;
        let labels = segment_scene(&cloud, &bundle, FeatureInput::Handcrafted, &config).unwrap();
        let group: Vec<usize> = (0..cloud.len()).collect();
        let block = sample_block(&cloud, &group, config.points_per_block, block_seed(9, 0, 0)).unwrap();
        let preds = classify_points(&block, &bundle).unwrap();
        for (row, &i) in block.indices.iter().enumerate() {
            assert_eq!(labels[i], preds[row].label);
        }
        assert_eq!(labels, segment_scene(&cloud, &bundle, FeatureInput::Handcrafted, &config).unwrap());
    }

    #[test]
    fn empty_cloud_is_an_error() {
        let cloud = PointCloud::new(vec![], vec![], None).unwrap();
        let bundle = bundle_for_block(2);
        let config = SegmentConfig::from_bundle(&bundle, 0);
        assert!(segment_scene(&cloud, &bundle, FeatureInput::Handcrafted, &config).is_err());
    }

    proptest! {
        #[test]
        fn matching_is_dot_product_sign(
            counts in prop::collection::vec(0u32..4, 1..=12),
            idx in 0usize..12,
        ) {
            let total: u32 = counts.iter().sum();
            prop_assume!(total > 0);
            let h: Vec<f64> = counts.iter().map(|&c| c as f64 / total as f64).collect();
            let p = geo(&h);
            let idx = idx % h.len();
            let dot: f64 = (0..h.len()).map(|i| h[i] * if i == idx { 1.0 } else { 0.0 }).sum();
            prop_assert_eq!(matching_score(&p, HardAssignment(idx)), dot > 0.0);
        }

        #[test]
        fn larger_beta_only_moves_toward_matched(
            logits in prop::collection::vec(0.0f64..1.0, 2..6),
            matched in prop::collection::vec(any::<bool>(), 6),
            b1 in 1.0f64..2.0,
            extra in 0.0f64..1.0,
        ) {
            let scores = &matched[..logits.len()];
            let apply = |beta: f64| {
                let w = class_weights(scores, beta).unwrap();
                predict(&logits.iter().zip(&w).map(|(l, w)| l * w).collect::<Vec<_>>())
            };
            let before = apply(b1);
            let after = apply(b1 + extra);
            if before != after {
                prop_assert!(scores[after as usize]);
            }
        }

        #[test]
        fn matched_nonnegative_top_class_is_stable(
            logits in prop::collection::vec(0.0f64..1.0, 2..6),
            beta in 1.0f64..3.0,
        ) {
            let top = argmax(&logits);
            let scores: Vec<bool> = (0..logits.len()).map(|c| c == top).collect();
            let w = class_weights(&scores, beta).unwrap();
            let fin: Vec<f64> = logits.iter().zip(&w).map(|(l, w)| l * w).collect();
            prop_assert_eq!(predict(&fin) as usize, top);
        }
    }
}

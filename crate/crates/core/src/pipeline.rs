//! End-to-end workflow: vocabulary, base training, novel registration and
//! evaluation over whole scenes.

use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::bundle::{FeatureSourceKind, ModelBundle};
use crate::config::WorkspaceConfig;
use crate::data::block::{sample_scene, SampledBlock};
use crate::data::cloud::{load_point_cloud, PointCloud};
use crate::data::registry::{label_histogram, ClassRegistry};
use crate::data::support::{build_support_set, SupportParams};
use crate::error::{Error, Result};
use crate::eval::{confusion_matrix, miou_report, ConfusionMatrix, EvalReport};
use crate::features::{ingest_features, FeatureMatrix, GEOMETRY_DIM};
use crate::gcr::{classify_with, InferenceOptions};
use crate::prototypes::{build_geometric_prototype, prototypes_from_foreground, prune_minor_frequencies};
use crate::represent::{block_features, fused_features, point_inputs, FeatureInput};
use crate::train::{train_base, EpochLog, TrainingBlock};
use crate::vocab::{build_vocabulary, HardAssignment};
use crate::ClassId;

/// A point cloud together with its ingested descriptors, if any.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub cloud: PointCloud,
    pub features: Option<(FeatureMatrix, FeatureMatrix)>,
}

impl Scene {
    pub fn handcrafted(cloud: PointCloud) -> Self {
        Self { cloud, features: None }
    }

    pub fn input(&self) -> FeatureInput<'_> {
        match &self.features {
            Some((low, sem)) => FeatureInput::Ingested { low, sem },
            None => FeatureInput::Handcrafted,
        }
    }

    pub fn labels(&self) -> Result<&[ClassId]> {
        self.cloud
            .labels
            .as_deref()
            .ok_or_else(|| Error::invalid("scene has no labels"))
    }

    /// Descriptor widths `(low, semantic)` this scene provides.
    pub fn dims(&self, cfg: &WorkspaceConfig) -> (usize, usize) {
        match &self.features {
            Some((low, sem)) => (low.cols(), sem.cols()),
            None => (GEOMETRY_DIM, cfg.semantic.dim()),
        }
    }
}

/// Paths of the descriptor files ingested alongside `cloud`:
/// `<stem>.low.gwfeat` and `<stem>.sem.gwfeat`.
pub fn feature_paths(cloud: &Path) -> (PathBuf, PathBuf) {
    (cloud.with_extension("low.gwfeat"), cloud.with_extension("sem.gwfeat"))
}

pub fn load_scene(path: impl AsRef<Path>, source: FeatureSourceKind) -> Result<Scene> {
    let path = path.as_ref();
    let cloud = load_point_cloud(path)?;
    let features = match source {
        FeatureSourceKind::Handcrafted => None,
        FeatureSourceKind::Ingested => {
            let (low, sem) = feature_paths(path);
            Some((ingest_features(low, cloud.len())?, ingest_features(sem, cloud.len())?))
        }
    };
    Ok(Scene { cloud, features })
}

fn check_sources(scenes: &[Scene], cfg: &WorkspaceConfig) -> Result<(usize, usize)> {
    let first = scenes.first().ok_or_else(|| Error::invalid("no scenes given"))?;
    let dims = first.dims(cfg);
    for s in scenes {
        if s.input().kind() != cfg.feature_source {
            return Err(Error::invalid(format!(
                "configured for {:?} features but a scene provides {:?}",
                cfg.feature_source,
                s.input().kind()
            )));
        }
        if s.dims(cfg) != dims {
            return Err(Error::invalid("scenes disagree on descriptor dimensions"));
        }
    }
    Ok(dims)
}

/// Base/novel split from the pooled label counts: the `novel_count` rarest
/// classes become novel (capped so at least two base classes remain).
pub fn registry_from_scenes(scenes: &[Scene], cfg: &WorkspaceConfig, names: Option<&[String]>) -> Result<ClassRegistry> {
    let labels: Vec<&[ClassId]> = scenes.iter().map(Scene::labels).collect::<Result<_>>()?;
    let counts = label_histogram(labels, names.map_or(0, <[String]>::len));
    let n_novel = cfg.novel_count.min(counts.len().saturating_sub(2));
    let registry = crate::data::registry::split_classes(&counts, n_novel)?;
    match names {
        Some(names) => registry.with_names(names.to_vec()),
        None => Ok(registry),
    }
}

fn sampled(scenes: &[Scene], cfg: &WorkspaceConfig, seed: u64) -> Result<Vec<(usize, SampledBlock)>> {
    let mut out = Vec::new();
    for (s, scene) in scenes.iter().enumerate() {
        for block in sample_scene(&scene.cloud, cfg.block_size, cfg.points_per_block, seed, s)? {
            out.push((s, block));
        }
    }
    Ok(out)
}

/// Clusters the low-level descriptors of base-class points of the training
/// scenes into a vocabulary and returns a bundle holding only that.
pub fn build_vocab_bundle(scenes: &[Scene], registry: ClassRegistry, cfg: &WorkspaceConfig) -> Result<ModelBundle> {
    cfg.validate()?;
    let (low_dim, sem_dim) = check_sources(scenes, cfg)?;
    let hyper = cfg.hyperparameters(low_dim, sem_dim);
    let mut rows: Vec<f64> = Vec::new();
    for (s, block) in sampled(scenes, cfg, cfg.seed)? {
        let labels = block
            .labels
            .as_ref()
            .ok_or_else(|| Error::invalid("training scenes must be labeled"))?;
        let features = block_features(&block, &hyper, scenes[s].input())?;
        for (i, &l) in labels.iter().enumerate() {
            if registry.is_base(l) {
                rows.extend_from_slice(features.low.row(i));
            }
        }
    }
    let n = rows.len() / low_dim;
    let mut descriptors = FeatureMatrix::new(n, low_dim, rows)?;
    if n > cfg.vocab_max_points {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x0076_6f63_6162);
        let mut keep = index::sample(&mut rng, n, cfg.vocab_max_points).into_vec();
        keep.sort_unstable();
        descriptors = descriptors.select_rows(&keep)?;
    }
    let vocabulary = build_vocabulary(&descriptors.normalized(), cfg.vocab_size, &cfg.kmeans())?;
    ModelBundle::new(hyper, registry, vocabulary)
}

/// Trains the fusion head and base prototypes, then builds the base-class
/// geometric prototypes from every base training point.
pub fn train_bundle(mut bundle: ModelBundle, scenes: &[Scene], cfg: &WorkspaceConfig) -> Result<(ModelBundle, Vec<EpochLog>)> {
    check_sources(scenes, cfg)?;
    let hyper = bundle.hyper.clone();
    let registry = bundle.registry.clone();
    let mut blocks = Vec::new();
    let mut words: Vec<Vec<HardAssignment>> = vec![Vec::new(); registry.num_classes()];
    for (s, block) in sampled(scenes, cfg, cfg.seed)? {
        let labels = block
            .labels
            .as_ref()
            .ok_or_else(|| Error::invalid("training scenes must be labeled"))?;
        let features = block_features(&block, &hyper, scenes[s].input())?;
        let inputs = point_inputs(&features, &bundle.vocabulary, &hyper)?;
        let labels: Vec<Option<ClassId>> = labels
            .iter()
            .map(|&l| registry.is_base(l).then_some(l))
            .collect();
        for (w, l) in inputs.words.iter().zip(&labels) {
            if let Some(l) = l {
                words[*l as usize].push(*w);
            }
        }
        blocks.push(TrainingBlock {
            inputs: inputs.inputs,
            labels,
        });
    }
    let mut training = cfg.training();
    training.tau = hyper.tau;
    training.fused_dim = hyper.fused_dim;
    let outcome = train_base(&blocks, &registry.base_classes, hyper.fusion_in_dim(), &training)?;
    bundle.set_fusion(outcome.weights)?;
    for proto in outcome.prototypes {
        let class = proto.class;
        let geometric = build_geometric_prototype(class, &words[class as usize], hyper.vocab_size)?;
        let pruned = prune_minor_frequencies(&geometric, hyper.alpha)?;
        bundle.set_class(proto, geometric, pruned)?;
    }
    Ok((bundle, outcome.log))
}

/// Draws a K-shot support set for every novel class and installs the
/// resulting prototypes. Base entries are left untouched.
pub fn register_bundle(mut bundle: ModelBundle, support: &[Scene], cfg: &WorkspaceConfig, seed: u64) -> Result<ModelBundle> {
    let weights = bundle
        .fusion
        .clone()
        .ok_or_else(|| Error::invalid("model must be trained before registration"))?;
    let clouds: Vec<PointCloud> = support.iter().map(|s| s.cloud.clone()).collect();
    let params = SupportParams {
        shots: cfg.shots,
        block_size: bundle.hyper.block_size,
        points_per_block: bundle.hyper.points_per_block,
        min_foreground: cfg.min_foreground,
        seed,
    };
    let set = build_support_set(&clouds, &bundle.registry, &params)?;
    let hyper = bundle.hyper.clone();
    for class in &set.classes {
        let mut fused = Vec::new();
        let mut words = Vec::new();
        for sb in &class.blocks {
            let features = block_features(&sb.block, &hyper, support[sb.source.0].input())?;
            let inputs = point_inputs(&features, &bundle.vocabulary, &hyper)?;
            let f = fused_features(&inputs, &weights)?;
            for (i, f) in f.into_iter().enumerate() {
                if sb.mask[i] {
                    fused.push(f);
                    words.push(inputs.words[i]);
                }
            }
        }
        let reg = prototypes_from_foreground(class.class, &fused, &words, hyper.vocab_size, hyper.alpha)?;
        bundle.set_class(reg.semantic, reg.geometric, reg.pruned)?;
    }
    Ok(bundle)
}

/// Scores the sampled blocks of labeled test scenes.
pub fn evaluate_scenes(bundle: &ModelBundle, scenes: &[Scene], cfg: &WorkspaceConfig, options: InferenceOptions) -> Result<EvalReport> {
    let n = bundle.registry.num_classes();
    let mut confusion = ConfusionMatrix::zeros(n);
    for (s, block) in sampled(scenes, cfg, cfg.seed ^ 0x7465_7374)? {
        let gt = block
            .labels
            .as_ref()
            .ok_or_else(|| Error::invalid("test scenes must be labeled"))?;
        let pred: Vec<ClassId> = classify_with(&block, bundle, scenes[s].input(), options)?
            .into_iter()
            .map(|p| p.label)
            .collect();
        confusion.merge(&confusion_matrix(&pred, gt, n)?)?;
    }
    let mut report = miou_report(&confusion, &bundle.registry)?;
    report.shots = Some(cfg.shots);
    Ok(report)
}

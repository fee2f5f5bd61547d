//! The persisted model: vocabulary, fusion head, per-class prototypes, class
//! registry and hyperparameters in one self-describing file.
//!
//! Layout: the ASCII line `gwbundle\n`, a little-endian `u64` metadata length,
//! the JSON metadata, then every numeric payload as little-endian `f32` in the
//! order listed by the metadata. All in-memory payloads are kept at `f32`
//! precision so a save/load cycle is exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::registry::ClassRegistry;
use crate::error::{Error, Result};
use crate::features::SemanticDescriptorConfig;
use crate::fusion::{FusionWeights, SemanticPrototype};
use crate::prototypes::GeometricPrototype;
use crate::vocab::{KMeansConfig, Vocabulary};
use crate::ClassId;

pub const FORMAT_VERSION: u32 = 1;
const MAGIC: &[u8] = b"gwbundle\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureSourceKind {
    Handcrafted,
    Ingested,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparameters {
    /// Temperature of the word softmax and of the classifier softmax.
    pub tau: f64,
    /// Logit multiplier for geometrically matched classes.
    pub beta: f64,
    /// Frequency limit of minor frequency pruning.
    pub alpha: f64,
    pub vocab_size: usize,
    pub low_dim: usize,
    pub sem_dim: usize,
    pub fused_dim: usize,
    /// When false the geometric half of the fusion input is zero (semantic-only representation).
    pub use_geometric_words: bool,
    pub feature_source: FeatureSourceKind,
    pub k_neighbors: usize,
    pub semantic: SemanticDescriptorConfig,
    pub block_size: f64,
    pub points_per_block: usize,
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<()> {
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invariant(format!("tau must be > 0, got {}", self.tau)));
        }
        if !(self.beta >= 1.0 && self.beta.is_finite()) {
            return Err(Error::invariant(format!("beta must be >= 1, got {}", self.beta)));
        }
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invariant(format!("alpha must be in (0, 1], got {}", self.alpha)));
        }
        if self.vocab_size < 2 {
            return Err(Error::invariant("vocabulary size must be >= 2"));
        }
        if !(self.block_size > 0.0) || self.points_per_block == 0 {
            return Err(Error::invariant("block size and points per block must be positive"));
        }
        Ok(())
    }

    pub fn fusion_in_dim(&self) -> usize {
        self.vocab_size + self.sem_dim
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBundle {
    pub hyper: Hyperparameters,
    pub registry: ClassRegistry,
    pub vocabulary: Vocabulary,
    pub fusion: Option<FusionWeights>,
    pub semantic: BTreeMap<ClassId, SemanticPrototype>,
    /// Unpruned geometric prototypes.
    pub geometric: BTreeMap<ClassId, GeometricPrototype>,
    pub pruned: BTreeMap<ClassId, GeometricPrototype>,
}

impl ModelBundle {
    /// A bundle holding only a vocabulary (the state after `build-vocab`).
    pub fn new(hyper: Hyperparameters, registry: ClassRegistry, vocabulary: Vocabulary) -> Result<Self> {
        let mut bundle = Self {
            hyper,
            registry,
            vocabulary,
            fusion: None,
            semantic: BTreeMap::new(),
            geometric: BTreeMap::new(),
            pruned: BTreeMap::new(),
        };
        bundle.canonicalize();
        bundle.validate()?;
        Ok(bundle)
    }

    /// Rounds every numeric payload to the on-disk `f32` precision.
    pub fn canonicalize(&mut self) {
        self.vocabulary.round_to_f32();
        if let Some(f) = self.fusion.as_mut() {
            f.round_to_f32();
        }
        self.semantic.values_mut().for_each(SemanticPrototype::round_to_f32);
        self.geometric.values_mut().for_each(GeometricPrototype::round_to_f32);
        self.pruned.values_mut().for_each(GeometricPrototype::round_to_f32);
    }

    pub fn set_fusion(&mut self, weights: FusionWeights) -> Result<()> {
        self.fusion = Some(weights);
        self.canonicalize();
        self.validate()
    }

    /// Installs one class's prototypes (pruned at the bundle's alpha when needed).
    pub fn set_class(
        &mut self,
        semantic: SemanticPrototype,
        geometric: GeometricPrototype,
        pruned: GeometricPrototype,
    ) -> Result<()> {
        let class = semantic.class;
        if geometric.class != class || pruned.class != class {
            return Err(Error::invariant("prototype classes disagree"));
        }
        self.semantic.insert(class, semantic);
        self.geometric.insert(class, geometric);
        self.pruned.insert(class, pruned);
        self.canonicalize();
        self.validate()
    }

    /// True once every registered class has all three prototypes.
    pub fn is_complete(&self) -> bool {
        self.fusion.is_some()
            && (0..self.registry.num_classes() as ClassId).all(|c| {
                self.semantic.contains_key(&c) && self.pruned.contains_key(&c)
            })
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.hyper;
        h.validate()?;
        self.registry.validate()?;
        let n_classes = self.registry.num_classes();
        if self.vocabulary.size() != h.vocab_size {
            return Err(Error::invariant(format!(
                "vocabulary has {} words, hyperparameters say {}",
                self.vocabulary.size(),
                h.vocab_size
            )));
        }
        if self.vocabulary.dim() != h.low_dim {
            return Err(Error::invariant(format!(
                "vocabulary dimension {} != low-level descriptor dimension {}",
                self.vocabulary.dim(),
                h.low_dim
            )));
        }
        if let Some(f) = &self.fusion {
            if f.in_dim() != h.fusion_in_dim() || f.out_dim() != h.fused_dim {
                return Err(Error::invariant(format!(
                    "fusion layer is {}x{}, expected {}x{}",
                    f.out_dim(),
                    f.in_dim(),
                    h.fused_dim,
                    h.fusion_in_dim()
                )));
            }
        }
        for (c, p) in &self.semantic {
            if p.class != *c || *c as usize >= n_classes {
                return Err(Error::invariant(format!("semantic prototype for unknown class {c}")));
            }
            if p.dim() != h.fused_dim {
                return Err(Error::invariant(format!(
                    "semantic prototype of class {c} has dimension {}, expected {}",
                    p.dim(),
                    h.fused_dim
                )));
            }
        }
        for (map, pruned) in [(&self.geometric, false), (&self.pruned, true)] {
            for (c, p) in map {
                if p.class != *c || *c as usize >= n_classes {
                    return Err(Error::invariant(format!("geometric prototype for unknown class {c}")));
                }
                if p.histogram().len() != h.vocab_size {
                    return Err(Error::invariant(format!(
                        "geometric prototype of class {c} has {} bins, expected {}",
                        p.histogram().len(),
                        h.vocab_size
                    )));
                }
                if p.is_pruned() != pruned {
                    return Err(Error::invariant(format!(
                        "geometric prototype of class {c} has the wrong pruning state"
                    )));
                }
            }
        }
        for (c, p) in &self.pruned {
            let raw = self.geometric.get(c).ok_or_else(|| {
                Error::invariant(format!("pruned prototype of class {c} has no unpruned source"))
            })?;
            if p.support().any(|i| raw.histogram()[i] <= 0.0) {
                return Err(Error::invariant(format!(
                    "pruned support of class {c} is not within the unpruned support"
                )));
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut payload: Vec<f64> = Vec::new();
        payload.extend_from_slice(self.vocabulary.words());
        let fusion = self.fusion.as_ref().map(|f| {
            payload.extend_from_slice(f.weights());
            payload.extend_from_slice(f.bias());
            FusionMeta {
                out_dim: f.out_dim(),
                in_dim: f.in_dim(),
                trained: f.trained,
            }
        });
        let semantic: Vec<ClassId> = self.semantic.keys().copied().collect();
        for p in self.semantic.values() {
            payload.extend_from_slice(p.weight());
        }
        let geometric: Vec<ClassId> = self.geometric.keys().copied().collect();
        for p in self.geometric.values() {
            payload.extend_from_slice(p.histogram());
        }
        let pruned: Vec<(ClassId, f64)> = self
            .pruned
            .iter()
            .map(|(c, p)| (*c, p.alpha.expect("pruned")))
            .collect();
        for p in self.pruned.values() {
            payload.extend_from_slice(p.histogram());
        }

        let meta = Metadata {
            format_version: FORMAT_VERSION,
            hyperparameters: self.hyper.clone(),
            registry: self.registry.clone(),
            vocabulary: VocabularyMeta {
                size: self.vocabulary.size(),
                dim: self.vocabulary.dim(),
                member_counts: self.vocabulary.member_counts.clone(),
                build_config: self.vocabulary.build_config,
            },
            fusion,
            semantic_classes: semantic,
            geometric_classes: geometric,
            pruned_classes: pruned,
            payload_values: payload.len(),
        };
        let json = serde_json::to_vec(&meta)?;
        let mut out = Vec::with_capacity(MAGIC.len() + 8 + json.len() + 4 * payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for v in payload {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if !bytes.starts_with(MAGIC) {
            return Err(Error::format(0, "not a model bundle"));
        }
        let mut at = MAGIC.len();
        if bytes.len() < at + 8 {
            return Err(Error::Truncated {
                expected: at + 8,
                actual: bytes.len(),
            });
        }
        let json_len = u64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()) as usize;
        at += 8;
        if bytes.len() < at + json_len {
            return Err(Error::Truncated {
                expected: at + json_len,
                actual: bytes.len(),
            });
        }
        let raw: serde_json::Value = serde_json::from_slice(&bytes[at..at + json_len])?;
        let version = raw
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::invariant("bundle metadata has no format_version"))?;
        if version != u64::from(FORMAT_VERSION) {
            return Err(Error::UnsupportedVersion(version as u32));
        }
        let meta: Metadata = serde_json::from_value(raw)?;
        at += json_len;

        let expected = at + 4 * meta.payload_values;
        if bytes.len() != expected {
            return Err(Error::Truncated {
                expected,
                actual: bytes.len(),
            });
        }
        let values: Vec<f64> = bytes[at..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        let mut cursor = Cursor { values: &values, at: 0 };

        let hyper = meta.hyperparameters;
        let vm = meta.vocabulary;
        let vocabulary = Vocabulary::new(
            cursor.take(vm.size * vm.dim)?.to_vec(),
            vm.dim,
            vm.member_counts,
            vm.build_config,
        )?;
        let fusion = match meta.fusion {
            Some(fm) => {
                let w = cursor.take(fm.out_dim * fm.in_dim)?.to_vec();
                let b = cursor.take(fm.out_dim)?.to_vec();
                let mut f = FusionWeights::new(fm.out_dim, fm.in_dim, w, b)?;
                f.trained = fm.trained;
                Some(f)
            }
            None => None,
        };
        let mut semantic = BTreeMap::new();
        for c in meta.semantic_classes {
            let w = cursor.take(hyper.fused_dim)?.to_vec();
            semantic.insert(c, SemanticPrototype::new(c, w)?);
        }
        let mut geometric = BTreeMap::new();
        for c in meta.geometric_classes {
            let h = cursor.take(hyper.vocab_size)?.to_vec();
            geometric.insert(c, GeometricPrototype::new(c, h, None)?);
        }
        let mut pruned = BTreeMap::new();
        for (c, alpha) in meta.pruned_classes {
            let h = cursor.take(hyper.vocab_size)?.to_vec();
            pruned.insert(c, GeometricPrototype::new(c, h, Some(alpha))?);
        }
        if cursor.at != values.len() {
            return Err(Error::invariant(format!(
                "metadata accounts for {} payload values, file has {}",
                cursor.at,
                values.len()
            )));
        }
        let bundle = Self {
            hyper,
            registry: meta.registry,
            vocabulary,
            fusion,
            semantic,
            geometric,
            pruned,
        };
        bundle.validate()?;
        Ok(bundle)
    }
}

struct Cursor<'a> {
    values: &'a [f64],
    at: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [f64]> {
        let end = self.at + n;
        if end > self.values.len() {
            return Err(Error::invariant(format!(
                "payload holds {} values, metadata needs at least {end}",
                self.values.len()
            )));
        }
        let out = &self.values[self.at..end];
        self.at = end;
        Ok(out)
    }
}

#[derive(Serialize, Deserialize)]
struct VocabularyMeta {
    size: usize,
    dim: usize,
    member_counts: Vec<u64>,
    build_config: KMeansConfig,
}

#[derive(Serialize, Deserialize)]
struct FusionMeta {
    out_dim: usize,
    in_dim: usize,
    trained: bool,
}

#[derive(Serialize, Deserialize)]
struct Metadata {
    format_version: u32,
    hyperparameters: Hyperparameters,
    registry: ClassRegistry,
    vocabulary: VocabularyMeta,
    fusion: Option<FusionMeta>,
    semantic_classes: Vec<ClassId>,
    geometric_classes: Vec<ClassId>,
    pruned_classes: Vec<(ClassId, f64)>,
    payload_values: usize,
}

pub fn save_bundle(bundle: &ModelBundle, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, bundle.to_bytes()?).map_err(|e| Error::io(path, e))
}

pub fn load_bundle(path: impl AsRef<Path>) -> Result<ModelBundle> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    ModelBundle::from_bytes(&bytes)
}

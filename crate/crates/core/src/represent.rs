//! Per-block feature extraction and assembly of fusion inputs `(f_geo || f_sem)`.

use rayon::prelude::*;

use crate::bundle::{FeatureSourceKind, Hyperparameters};
use crate::data::block::SampledBlock;
use crate::error::{Error, Result};
use crate::features::{compute_local_descriptors, compute_semantic_descriptors, FeatureMatrix};
use crate::fusion::FusionWeights;
use crate::linalg::{argmax, softmax_scaled};
use crate::vocab::{HardAssignment, Vocabulary};

const CHUNK: usize = 256;

/// Where descriptors come from for one cloud.
#[derive(Debug, Clone, Copy)]
pub enum FeatureInput<'a> {
    Handcrafted,
    /// Whole-cloud matrices, one row per cloud point, already normalized.
    Ingested {
        low: &'a FeatureMatrix,
        sem: &'a FeatureMatrix,
    },
}

impl FeatureInput<'_> {
    pub fn kind(&self) -> FeatureSourceKind {
        match self {
            FeatureInput::Handcrafted => FeatureSourceKind::Handcrafted,
            FeatureInput::Ingested { .. } => FeatureSourceKind::Ingested,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockFeatures {
    pub low: FeatureMatrix,
    pub sem: FeatureMatrix,
}

pub fn block_features(
    block: &SampledBlock,
    hyper: &Hyperparameters,
    input: FeatureInput<'_>,
) -> Result<BlockFeatures> {
    if input.kind() != hyper.feature_source {
        return Err(Error::invalid(format!(
            "model expects {:?} features, got {:?}",
            hyper.feature_source,
            input.kind()
        )));
    }
    let features = match input {
        FeatureInput::Handcrafted => BlockFeatures {
            low: compute_local_descriptors(block, hyper.k_neighbors)?,
            sem: compute_semantic_descriptors(block, &hyper.semantic)?,
        },
        FeatureInput::Ingested { low, sem } => BlockFeatures {
            low: low.select_rows(&block.indices)?,
            sem: sem.select_rows(&block.indices)?,
        },
    };
    for (what, got, want) in [
        ("low-level descriptors", features.low.cols(), hyper.low_dim),
        ("semantic descriptors", features.sem.cols(), hyper.sem_dim),
    ] {
        if got != want {
            return Err(Error::DimensionMismatch {
                what,
                expected: want,
                actual: got,
            });
        }
    }
    Ok(features)
}

/// Fusion inputs (`n x (H + d2)`, row-major) and the hard word of each point.
#[derive(Debug, Clone, PartialEq)]
pub struct PointInputs {
    pub inputs: Vec<f64>,
    pub words: Vec<HardAssignment>,
    pub in_dim: usize,
}

impl PointInputs {
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.inputs[i * self.in_dim..(i + 1) * self.in_dim]
    }
}

/// Soft word assignment (or zeros with geometric words disabled) concatenated
/// with the semantic descriptor.
pub fn point_inputs(features: &BlockFeatures, vocab: &Vocabulary, hyper: &Hyperparameters) -> Result<PointInputs> {
    let n = features.low.rows();
    if features.sem.rows() != n {
        return Err(Error::DimensionMismatch {
            what: "semantic descriptor rows",
            expected: n,
            actual: features.sem.rows(),
        });
    }
    if features.low.cols() != vocab.dim() {
        return Err(Error::DimensionMismatch {
            what: "low-level descriptors",
            expected: vocab.dim(),
            actual: features.low.cols(),
        });
    }
    let h = vocab.size();
    let in_dim = h + features.sem.cols();
    let rows: Vec<usize> = (0..n).collect();
    let parts: Vec<(Vec<f64>, Vec<HardAssignment>)> = rows
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut inputs = Vec::with_capacity(chunk.len() * in_dim);
            let mut words = Vec::with_capacity(chunk.len());
            for &i in chunk {
                let sims = vocab.similarities(features.low.row(i));
                words.push(HardAssignment(argmax(&sims)));
                if hyper.use_geometric_words {
                    inputs.extend(softmax_scaled(&sims, hyper.tau));
                } else {
                    inputs.extend(std::iter::repeat_n(0.0, h));
                }
                inputs.extend_from_slice(features.sem.row(i));
            }
            (inputs, words)
        })
        .collect();
    let mut out = PointInputs {
        inputs: Vec::with_capacity(n * in_dim),
        words: Vec::with_capacity(n),
        in_dim,
    };
    for (inputs, words) in parts {
        out.inputs.extend(inputs);
        out.words.extend(words);
    }
    Ok(out)
}

/// `f_fin` for every row.
pub fn fused_features(inputs: &PointInputs, weights: &FusionWeights) -> Result<Vec<Vec<f64>>> {
    if inputs.in_dim != weights.in_dim() {
        return Err(Error::DimensionMismatch {
            what: "fusion input",
            expected: weights.in_dim(),
            actual: inputs.in_dim,
        });
    }
    Ok(inputs
        .inputs
        .par_chunks(inputs.in_dim)
        .with_min_len(CHUNK)
        .map(|x| weights.forward(x).expect("checked width"))
        .collect())
}

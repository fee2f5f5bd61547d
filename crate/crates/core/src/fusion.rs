//! The fusion head and cosine prototype classifier.
//!
//! `f_fin = relu(W (f_geo || f_sem) + b)`, and a class scores `cos(p_c, f_fin)`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::linalg::{cosine, norm};
use crate::vocab::SoftAssignment;
use crate::ClassId;

pub const DEFAULT_FUSED_DIM: usize = 128;
const UNIT_TOLERANCE: f64 = 1e-6;

/// One pointwise affine layer followed by a rectifier.
#[derive(Debug, Clone, PartialEq)]
pub struct FusionWeights {
    out_dim: usize,
    in_dim: usize,
    /// `out_dim x in_dim`, row-major.
    pub(crate) weights: Vec<f64>,
    pub(crate) bias: Vec<f64>,
    pub trained: bool,
}

impl FusionWeights {
    pub fn new(out_dim: usize, in_dim: usize, weights: Vec<f64>, bias: Vec<f64>) -> Result<Self> {
        if weights.len() != out_dim * in_dim {
            return Err(Error::DimensionMismatch {
                what: "fusion weights",
                expected: out_dim * in_dim,
                actual: weights.len(),
            });
        }
        if bias.len() != out_dim {
            return Err(Error::DimensionMismatch {
                what: "fusion bias",
                expected: out_dim,
                actual: bias.len(),
            });
        }
        if out_dim == 0 || in_dim == 0 {
            return Err(Error::invalid("fusion layer dimensions must be >= 1"));
        }
        if weights.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::invariant("fusion weights contain non-finite entries"));
        }
        Ok(Self {
            out_dim,
            in_dim,
            weights,
            bias,
            trained: false,
        })
    }

    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self::new(out_dim, in_dim, vec![0.0; out_dim * in_dim], vec![0.0; out_dim])
            .expect("nonzero dimensions")
    }

    /// He-normal weights, zero bias.
    pub fn initialize(out_dim: usize, in_dim: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, (2.0 / in_dim as f64).sqrt()).unwrap();
        let weights = (0..out_dim * in_dim).map(|_| normal.sample(&mut rng)).collect();
        Self::new(out_dim, in_dim, weights, vec![0.0; out_dim]).expect("nonzero dimensions")
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    /// Pre-activation `W x + b`.
    pub(crate) fn affine(&self, x: &[f64]) -> Vec<f64> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, b)| row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b)
            .collect()
    }

    /// Fused representation of an already-concatenated input row.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.in_dim {
            return Err(Error::DimensionMismatch {
                what: "fusion input",
                expected: self.in_dim,
                actual: x.len(),
            });
        }
        Ok(self.affine(x).into_iter().map(|z| z.max(0.0)).collect())
    }

    pub(crate) fn round_to_f32(&mut self) {
        crate::linalg::round_f32(&mut self.weights);
        crate::linalg::round_f32(&mut self.bias);
    }
}

/// Concatenates the geometric and semantic parts of one point.
pub fn fusion_input(f_geo: &[f64], f_sem: &[f64]) -> Vec<f64> {
    let mut x = Vec::with_capacity(f_geo.len() + f_sem.len());
    x.extend_from_slice(f_geo);
    x.extend_from_slice(f_sem);
    x
}

pub fn fuse(f_geo: &SoftAssignment, f_sem: &[f64], weights: &FusionWeights) -> Result<Vec<f64>> {
    weights.forward(&fusion_input(&f_geo.0, f_sem))
}

/// A class's unit classifier direction.
#[derive(Debug, Clone, PartialEq)]
pub struct SemanticPrototype {
    pub class: ClassId,
    weight: Vec<f64>,
}

impl SemanticPrototype {
    pub fn new(class: ClassId, weight: Vec<f64>) -> Result<Self> {
        if weight.iter().any(|v| !v.is_finite()) || (norm(&weight) - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::invariant(format!(
                "semantic prototype of class {class} has norm {} (must be 1)",
                norm(&weight)
            )));
        }
        Ok(Self { class, weight })
    }

    /// Normalizes `direction`; fails on the zero vector.
    pub fn from_direction(class: ClassId, mut direction: Vec<f64>) -> Result<Self> {
        if !crate::linalg::normalize_in_place(&mut direction) {
            return Err(Error::invariant(format!(
                "semantic prototype of class {class} has no direction"
            )));
        }
        Self::new(class, direction)
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn dim(&self) -> usize {
        self.weight.len()
    }

    pub(crate) fn round_to_f32(&mut self) {
        crate::linalg::round_f32(&mut self.weight);
    }
}

/// Cosine between a fused feature and a prototype; 0 for a zero feature.
pub fn semantic_logit(f_fin: &[f64], proto: &SemanticPrototype) -> f64 {
    cosine(f_fin, proto.weight())
}

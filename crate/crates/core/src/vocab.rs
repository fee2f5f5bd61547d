//! Geometric-word vocabulary: spherical K-means over unit descriptors, and the
//! soft / hard assignment of points to words.

use rand::distributions::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::FeatureMatrix;
use crate::linalg::{argmax, dot, norm, softmax_scaled};

pub const DEFAULT_VOCAB_SIZE: usize = 32;
pub const DEFAULT_TAU: f64 = 10.0;
const UNIT_TOLERANCE: f64 = 1e-6;
const DUPLICATE_COSINE: f64 = 1.0 - 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KMeansConfig {
    pub seed: u64,
    pub max_iterations: usize,
    /// Stop once no centroid moves farther than this (Euclidean).
    pub tolerance: f64,
}

impl Default for KMeansConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            max_iterations: 100,
            tolerance: 1e-5,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KMeansResult {
    /// `k x d`, row-major, unit rows.
    pub centroids: Vec<f64>,
    pub k: usize,
    pub dim: usize,
    pub assignments: Vec<usize>,
    /// Sum of `1 - cos` to the assigned centroid, recorded after every assignment step.
    pub objective_trace: Vec<f64>,
    pub iterations: usize,
}

impl KMeansResult {
    pub fn centroid(&self, c: usize) -> &[f64] {
        &self.centroids[c * self.dim..(c + 1) * self.dim]
    }
}

fn check_unit_rows(features: &FeatureMatrix) -> Result<()> {
    for (i, row) in features.iter_rows().enumerate() {
        if (norm(row) - 1.0).abs() > UNIT_TOLERANCE {
            return Err(Error::invalid(format!(
                "descriptor row {i} is not unit-normalized"
            )));
        }
    }
    Ok(())
}

/// Best centroid by cosine (ties to the lowest index) and that cosine.
fn nearest(centroids: &[f64], dim: usize, x: &[f64]) -> (usize, f64) {
    let sims: Vec<f64> = centroids.chunks_exact(dim).map(|c| dot(c, x)).collect();
    let best = argmax(&sims);
    (best, sims[best])
}

fn kmeans_plus_plus(features: &FeatureMatrix, k: usize, rng: &mut ChaCha8Rng) -> Result<Vec<f64>> {
    let n = features.rows();
    let dim = features.cols();
    let mut centroids = Vec::with_capacity(k * dim);
    let first = rng.gen_range(0..n);
    centroids.extend_from_slice(features.row(first));
    let mut gap: Vec<f64> = (0..n)
        .map(|i| (1.0 - dot(features.row(i), features.row(first))).max(0.0))
        .collect();
    for c in 1..k {
        let total: f64 = gap.iter().sum();
        if !(total > 0.0) {
            return Err(Error::invalid(format!(
                "only {c} distinct descriptors available for {k} centroids"
            )));
        }
        let pick = WeightedIndex::new(&gap)
            .map_err(|e| Error::invalid(format!("k-means++ weights: {e}")))?
            .sample(rng);
        let chosen = features.row(pick).to_vec();
        for (i, g) in gap.iter_mut().enumerate() {
            *g = g.min((1.0 - dot(features.row(i), &chosen)).max(0.0));
        }
        centroids.extend_from_slice(&chosen);
    }
    Ok(centroids)
}

/// Spherical K-means with k-means++ seeding.
///
/// Empty clusters are reseeded with the point that fits its current centroid
/// worst. Any `k >= 1` is accepted here; [`build_vocabulary`] adds the
/// vocabulary-specific requirements.
pub fn spherical_kmeans(features: &FeatureMatrix, k: usize, config: &KMeansConfig) -> Result<KMeansResult> {
    let n = features.rows();
    let dim = features.cols();
    if k == 0 {
        return Err(Error::invalid("k must be >= 1"));
    }
    if k > n {
        return Err(Error::invalid(format!(
            "cannot build {k} centroids from {n} descriptors"
        )));
    }
    check_unit_rows(features)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut centroids = kmeans_plus_plus(features, k, &mut rng)?;
    let mut trace = Vec::new();
    let mut iterations = 0;

    let assign = |centroids: &[f64]| -> Vec<(usize, f64)> {
        (0..n)
            .into_par_iter()
            .map(|i| nearest(centroids, dim, features.row(i)))
            .collect()
    };

    let mut assigned = assign(&centroids);
    loop {
        reseed_empty(&mut centroids, &mut assigned, features, k);
        trace.push(assigned.iter().map(|&(_, s)| 1.0 - s).sum());
        if iterations == config.max_iterations {
            break;
        }
        iterations += 1;

        let mut sums = vec![0.0; k * dim];
        for (i, &(c, _)) in assigned.iter().enumerate() {
            for (s, x) in sums[c * dim..(c + 1) * dim].iter_mut().zip(features.row(i)) {
                *s += x;
            }
        }
        let mut shift: f64 = 0.0;
        for c in 0..k {
            let sum = &mut sums[c * dim..(c + 1) * dim];
            let len = norm(sum);
            if len > 0.0 {
                sum.iter_mut().for_each(|v| *v /= len);
                let old = &centroids[c * dim..(c + 1) * dim];
                let moved = old
                    .iter()
                    .zip(sum.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                shift = shift.max(moved);
                centroids[c * dim..(c + 1) * dim].copy_from_slice(sum);
            }
        }
        assigned = assign(&centroids);
        if shift < config.tolerance {
            reseed_empty(&mut centroids, &mut assigned, features, k);
            trace.push(assigned.iter().map(|&(_, s)| 1.0 - s).sum());
            break;
        }
    }

    Ok(KMeansResult {
        centroids,
        k,
        dim,
        assignments: assigned.into_iter().map(|(c, _)| c).collect(),
        objective_trace: trace,
        iterations,
    })
}

fn reseed_empty(centroids: &mut [f64], assigned: &mut [(usize, f64)], features: &FeatureMatrix, k: usize) {
    let dim = features.cols();
    for _ in 0..k {
        let mut counts = vec![0usize; k];
        for &(c, _) in assigned.iter() {
            counts[c] += 1;
        }
        let Some(empty) = counts.iter().position(|&c| c == 0) else {
            return;
        };
        // Worst-fitting point whose cluster can spare it.
        let donor = assigned
            .iter()
            .enumerate()
            .filter(|(_, (c, _))| counts[*c] > 1)
            .min_by(|a, b| a.1 .1.total_cmp(&b.1 .1).then(a.0.cmp(&b.0)))
            .map(|(i, _)| i);
        let Some(donor) = donor else {
            return;
        };
        centroids[empty * dim..(empty + 1) * dim].copy_from_slice(features.row(donor));
        assigned[donor] = (empty, dot(features.row(donor), features.row(donor)));
    }
}

/// The H geometric words: unit centroids in descriptor space.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocabulary {
    words: Vec<f64>,
    size: usize,
    dim: usize,
    /// Number of build descriptors hard-assigned to each word.
    pub member_counts: Vec<u64>,
    pub build_config: KMeansConfig,
}

impl Vocabulary {
    pub fn new(words: Vec<f64>, dim: usize, member_counts: Vec<u64>, build_config: KMeansConfig) -> Result<Self> {
        if dim == 0 || !words.len().is_multiple_of(dim) {
            return Err(Error::invariant(format!(
                "vocabulary payload of {} values is not a multiple of dimension {dim}",
                words.len()
            )));
        }
        let size = words.len() / dim;
        if size < 2 {
            return Err(Error::invariant(format!("vocabulary needs at least 2 words, got {size}")));
        }
        if member_counts.len() != size {
            return Err(Error::DimensionMismatch {
                what: "vocabulary member counts",
                expected: size,
                actual: member_counts.len(),
            });
        }
        let vocab = Self {
            words,
            size,
            dim,
            member_counts,
            build_config,
        };
        for h in 0..size {
            let w = vocab.word(h);
            if w.iter().any(|v| !v.is_finite()) || (norm(w) - 1.0).abs() > UNIT_TOLERANCE {
                return Err(Error::invariant(format!("geometric word {h} is not unit-norm")));
            }
        }
        for a in 0..size {
            for b in a + 1..size {
                if dot(vocab.word(a), vocab.word(b)) >= DUPLICATE_COSINE {
                    return Err(Error::invariant(format!("geometric words {a} and {b} coincide")));
                }
            }
        }
        Ok(vocab)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn word(&self, h: usize) -> &[f64] {
        &self.words[h * self.dim..(h + 1) * self.dim]
    }

    pub fn words(&self) -> &[f64] {
        &self.words
    }

    /// Cosine similarity of a unit descriptor to every word.
    pub fn similarities(&self, f_low: &[f64]) -> Vec<f64> {
        debug_assert_eq!(f_low.len(), self.dim);
        self.words.chunks_exact(self.dim).map(|w| dot(w, f_low)).collect()
    }

    pub(crate) fn round_to_f32(&mut self) {
        crate::linalg::round_f32(&mut self.words);
    }
}

/// Clusters base-class descriptors into `size` geometric words.
pub fn build_vocabulary(features: &FeatureMatrix, size: usize, config: &KMeansConfig) -> Result<Vocabulary> {
    if size < 2 {
        return Err(Error::invalid(format!("vocabulary size must be >= 2, got {size}")));
    }
    let result = spherical_kmeans(features, size, config)?;
    let mut counts = vec![0u64; size];
    for &a in &result.assignments {
        counts[a] += 1;
    }
    Vocabulary::new(result.centroids, result.dim, counts, *config)
}

/// Softmax over temperature-scaled word similarities; sums to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct SoftAssignment(pub Vec<f64>);

/// Index of the most similar word, ties to the lowest index.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct HardAssignment(pub usize);

pub fn soft_assign(f_low: &[f64], vocab: &Vocabulary, tau: f64) -> SoftAssignment {
    SoftAssignment(softmax_scaled(&vocab.similarities(f_low), tau))
}

pub fn hard_assign(f_low: &[f64], vocab: &Vocabulary) -> HardAssignment {
    HardAssignment(argmax(&vocab.similarities(f_low)))
}

/// True for every row whose hard assignment is `word`.
pub fn activation_mask(features: &FeatureMatrix, vocab: &Vocabulary, word: usize) -> Result<Vec<bool>> {
    if word >= vocab.size() {
        return Err(Error::invalid(format!(
            "word index {word} out of range for {} words",
            vocab.size()
        )));
    }
    Ok(features
        .iter_rows()
        .map(|row| hard_assign(row, vocab).0 == word)
        .collect())
}

//! Base-class training of the fusion head and the learned prototypes.
//!
//! Each batch is an episode: some base classes are made fake-novel, their
//! learned prototypes are swapped for the mean fused feature of their points in
//! a held-out support part of the batch, and softmax cross-entropy over
//! `tau * cos(prototype, f_fin)` is minimized on the remaining query points.
//! All gradients are derived by hand, including the path through the
//! support-mean prototypes.

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fusion::{FusionWeights, SemanticPrototype};
use crate::linalg::{dot, norm, normalize_in_place};
use crate::ClassId;

/// Points per parallel work unit; fixed so reductions do not depend on thread count.
const CHUNK: usize = 256;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingConfig {
    pub epochs: usize,
    /// Blocks per batch.
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Multiplier applied every `decay_every` epochs.
    pub lr_decay: f64,
    pub decay_every: usize,
    pub tau: f64,
    pub fake_novel: usize,
    pub fused_dim: usize,
    pub seed: u64,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 8,
            learning_rate: 0.01,
            lr_decay: 0.5,
            decay_every: 20,
            tau: 10.0,
            fake_novel: 2,
            fused_dim: crate::fusion::DEFAULT_FUSED_DIM,
            seed: 0,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self, n_base: usize) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.decay_every == 0 || self.fused_dim == 0 {
            return Err(Error::invalid("epochs, batch size, decay period and fused dim must be >= 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::invalid("learning rate must be finite and >= 0"));
        }
        if !(self.lr_decay > 0.0) || !(self.tau > 0.0) {
            return Err(Error::invalid("lr decay and tau must be > 0"));
        }
        if n_base < 2 {
            return Err(Error::invalid("training needs at least two base classes"));
        }
        if self.fake_novel >= n_base {
            return Err(Error::invalid(format!(
                "fake-novel count {} must be below the base class count {n_base}",
                self.fake_novel
            )));
        }
        Ok(())
    }

    pub fn learning_rate_at(&self, epoch: usize) -> f64 {
        self.learning_rate * self.lr_decay.powi((epoch / self.decay_every) as i32)
    }
}

/// Precomputed fusion inputs of one block; `None` labels are ignored by the loss.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBlock {
    /// `n x in_dim`, row-major.
    pub inputs: Vec<f64>,
    pub labels: Vec<Option<ClassId>>,
}

/// Where an episode's k-th prototype comes from.
#[derive(Debug, Clone, PartialEq)]
pub enum PrototypeSource {
    /// Learned prototype by position.
    Learned(usize),
    /// Mean fused feature of these input rows (`in_dim` wide, row-major).
    Support(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Episode {
    pub in_dim: usize,
    pub query_inputs: Vec<f64>,
    /// Index into `prototypes` of each query row's class.
    pub query_labels: Vec<usize>,
    pub prototypes: Vec<PrototypeSource>,
}

impl Episode {
    fn query_count(&self) -> usize {
        self.query_labels.len()
    }

    fn query(&self, i: usize) -> &[f64] {
        &self.query_inputs[i * self.in_dim..(i + 1) * self.in_dim]
    }
}

/// The trainable parameters: fusion layer plus raw (possibly non-unit) prototypes.
#[derive(Debug, Clone, PartialEq)]
pub struct Parameters {
    pub fusion: FusionWeights,
    pub prototypes: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub prototypes: Vec<Vec<f64>>,
}

impl Gradients {
    fn zeros(params: &Parameters) -> Self {
        Self {
            weights: vec![0.0; params.fusion.weights.len()],
            bias: vec![0.0; params.fusion.bias.len()],
            prototypes: params.prototypes.iter().map(|p| vec![0.0; p.len()]).collect(),
        }
    }

    fn add(&mut self, other: &Gradients) {
        let acc = |a: &mut [f64], b: &[f64]| a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        acc(&mut self.weights, &other.weights);
        acc(&mut self.bias, &other.bias);
        for (a, b) in self.prototypes.iter_mut().zip(&other.prototypes) {
            acc(a, b);
        }
    }

    /// Backpropagates `d_fused` through the rectifier at input `x`.
    fn push_fused(&mut self, fusion: &FusionWeights, z: &[f64], x: &[f64], d_fused: &[f64]) {
        let in_dim = fusion.in_dim();
        for (o, (&dz, &zo)) in d_fused.iter().zip(z).enumerate() {
            if zo <= 0.0 || dz == 0.0 {
                continue;
            }
            self.bias[o] += dz;
            for (g, xv) in self.weights[o * in_dim..(o + 1) * in_dim].iter_mut().zip(x) {
                *g += dz * xv;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeResult {
    pub loss: f64,
    pub correct: usize,
    pub count: usize,
}

fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|v| v.max(0.0)).collect()
}

/// Assembled (unnormalized) prototype vectors of an episode.
fn assemble(params: &Parameters, episode: &Episode) -> Vec<Vec<f64>> {
    let d = params.fusion.out_dim();
    episode
        .prototypes
        .iter()
        .map(|src| match src {
            PrototypeSource::Learned(k) => params.prototypes[*k].clone(),
            PrototypeSource::Support(rows) => {
                let n = rows.len() / episode.in_dim;
                let mut mean = vec![0.0; d];
                for x in rows.chunks_exact(episode.in_dim) {
                    let f = relu(&params.fusion.affine(x));
                    mean.iter_mut().zip(&f).for_each(|(m, v)| *m += v);
                }
                if n > 0 {
                    mean.iter_mut().for_each(|m| *m /= n as f64);
                }
                mean
            }
        })
        .collect()
}

/// Cross-entropy of one query point.
struct PointTerm {
    loss: f64,
    correct: bool,
}

/// Mean cross-entropy of an episode, optionally with gradients.
pub fn episode_loss(params: &Parameters, episode: &Episode, tau: f64, with_grad: bool) -> (EpisodeResult, Option<Gradients>) {
    let n = episode.query_count();
    let protos = assemble(params, episode);
    let proto_norms: Vec<f64> = protos.iter().map(|p| norm(p)).collect();
    let proto_units: Vec<Vec<f64>> = protos
        .iter()
        .zip(&proto_norms)
        .map(|(p, &pn)| {
            if pn > 0.0 {
                p.iter().map(|v| v / pn).collect()
            } else {
                vec![0.0; p.len()]
            }
        })
        .collect();
    let scale = 1.0 / n.max(1) as f64;
    let fusion = &params.fusion;

    // Per chunk: (loss sum, correct, gradient wrt fusion params, gradient wrt assembled prototypes).
    let partials: Vec<(f64, usize, Option<(Gradients, Vec<Vec<f64>>)>)> = (0..n)
        .collect::<Vec<_>>()
        .par_chunks(CHUNK)
        .map(|chunk| {
            let mut loss = 0.0;
            let mut correct = 0;
            let mut grads = with_grad.then(|| {
                (
                    Gradients::zeros(params),
                    protos.iter().map(|p| vec![0.0; p.len()]).collect::<Vec<_>>(),
                )
            });
            for &i in chunk {
                let x = episode.query(i);
                let y = episode.query_labels[i];
                let z = fusion.affine(x);
                let f = relu(&z);
                let fnorm = norm(&f);
                let cos: Vec<f64> = if fnorm > 0.0 {
                    proto_units.iter().map(|q| dot(q, &f) / fnorm).collect()
                } else {
                    vec![0.0; protos.len()]
                };
                let term = point_term(&cos, y, tau);
                loss += term.0.loss;
                correct += usize::from(term.0.correct);
                let Some((g, gp)) = grads.as_mut() else {
                    continue;
                };
                if fnorm == 0.0 {
                    continue;
                }
                let probs = term.1;
                let mut d_fused = vec![0.0; f.len()];
                for c in 0..protos.len() {
                    let gc = (probs[c] - if c == y { 1.0 } else { 0.0 }) * scale * tau;
                    if proto_norms[c] == 0.0 || gc == 0.0 {
                        continue;
                    }
                    for (k, df) in d_fused.iter_mut().enumerate() {
                        *df += gc * (proto_units[c][k] - cos[c] * f[k] / fnorm) / fnorm;
                        gp[c][k] += gc * (f[k] / fnorm - cos[c] * proto_units[c][k]) / proto_norms[c];
                    }
                }
                g.push_fused(fusion, &z, x, &d_fused);
            }
            (loss, correct, grads)
        })
        .collect();

    let mut loss = 0.0;
    let mut correct = 0;
    let mut grads = with_grad.then(|| (Gradients::zeros(params), protos.iter().map(|p| vec![0.0; p.len()]).collect::<Vec<Vec<f64>>>()));
    for (l, c, g) in partials {
        loss += l;
        correct += c;
        if let (Some((acc, acc_p)), Some((g, gp))) = (grads.as_mut(), g) {
            acc.add(&g);
            for (a, b) in acc_p.iter_mut().zip(&gp) {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
            }
        }
    }
    let result = EpisodeResult {
        loss: loss * scale,
        correct,
        count: n,
    };

    let grads = grads.map(|(mut g, gp)| {
        for (c, src) in episode.prototypes.iter().enumerate() {
            match src {
                PrototypeSource::Learned(k) => {
                    g.prototypes[*k].iter_mut().zip(&gp[c]).for_each(|(a, b)| *a += b);
                }
                PrototypeSource::Support(rows) => {
                    let count = rows.len() / episode.in_dim;
                    if count == 0 || gp[c].iter().all(|v| *v == 0.0) {
                        continue;
                    }
                    let d_each: Vec<f64> = gp[c].iter().map(|v| v / count as f64).collect();
                    for x in rows.chunks_exact(episode.in_dim) {
                        let z = fusion.affine(x);
                        g.push_fused(fusion, &z, x, &d_each);
                    }
                }
            }
        }
        g
    });
    (result, grads)
}

/// Cross-entropy of `tau * cos` at label `y`, plus the softmax probabilities.
fn point_term(cos: &[f64], y: usize, tau: f64) -> (PointTerm, Vec<f64>) {
    let logits: Vec<f64> = cos.iter().map(|c| tau * c).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum: f64 = logits.iter().map(|l| (l - max).exp()).sum();
    let log_z = max + sum.ln();
    let probs = logits.iter().map(|l| (l - log_z).exp()).collect();
    let predicted = crate::linalg::argmax(&logits);
    (
        PointTerm {
            loss: log_z - logits[y],
            correct: predicted == y,
        },
        probs,
    )
}

/// Floor on the denominator of the relative error, absorbing finite-difference round-off
/// on near-zero gradient entries.
const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

/// Largest entry-wise relative error between analytic gradients and central
/// finite differences over every fusion weight, bias, and learned prototype entry.
pub fn gradient_check(params: &Parameters, episode: &Episode, tau: f64, epsilon: f64) -> Result<f64> {
    if !(1e-7..=1e-3).contains(&epsilon) {
        return Err(Error::invalid(format!("epsilon {epsilon} outside [1e-7, 1e-3]")));
    }
    let (_, grads) = episode_loss(params, episode, tau, true);
    let grads = grads.expect("requested");
    let loss_at = |p: &Parameters| episode_loss(p, episode, tau, false).0.loss;
    let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(RELATIVE_ERROR_FLOOR);

    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    let central = |probe: &mut Parameters, get: &dyn Fn(&mut Parameters) -> &mut f64| {
        let orig = *get(probe);
        *get(probe) = orig + epsilon;
        let up = loss_at(probe);
        *get(probe) = orig - epsilon;
        let down = loss_at(probe);
        *get(probe) = orig;
        (up - down) / (2.0 * epsilon)
    };
    for i in 0..grads.weights.len() {
        let fd = central(&mut probe, &|p| &mut p.fusion.weights[i]);
        worst = worst.max(rel(grads.weights[i], fd));
    }
    for i in 0..grads.bias.len() {
        let fd = central(&mut probe, &|p| &mut p.fusion.bias[i]);
        worst = worst.max(rel(grads.bias[i], fd));
    }
    for k in 0..grads.prototypes.len() {
        for i in 0..grads.prototypes[k].len() {
            let fd = central(&mut probe, &|p| &mut p.prototypes[k][i]);
            worst = worst.max(rel(grads.prototypes[k][i], fd));
        }
    }
    Ok(worst)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub loss: f64,
    pub accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainingOutcome {
    pub weights: FusionWeights,
    pub prototypes: Vec<SemanticPrototype>,
    pub log: Vec<EpochLog>,
}

/// Learned prototypes start at the normalized class means of the initial fused features.
fn initial_prototypes(fusion: &FusionWeights, blocks: &[TrainingBlock], base: &[ClassId]) -> Vec<Vec<f64>> {
    let in_dim = fusion.in_dim();
    let d = fusion.out_dim();
    let mut sums = vec![vec![0.0; d]; base.len()];
    for block in blocks {
        for (x, label) in block.inputs.chunks_exact(in_dim).zip(&block.labels) {
            let Some(k) = label.and_then(|l| base.iter().position(|&b| b == l)) else {
                continue;
            };
            let f = fusion.forward(x).expect("checked dimensions");
            sums[k].iter_mut().zip(&f).for_each(|(s, v)| *s += v);
        }
    }
    sums.into_iter()
        .enumerate()
        .map(|(k, mut s)| {
            if !normalize_in_place(&mut s) {
                s = vec![0.0; d];
                s[k % d] = 1.0;
            }
            s
        })
        .collect()
}

/// Builds one training episode from a batch of blocks.
fn make_episode(
    blocks: &[TrainingBlock],
    batch: &[usize],
    base: &[ClassId],
    in_dim: usize,
    fake_novel: usize,
    rng: &mut ChaCha8Rng,
) -> Episode {
    let position = |l: Option<ClassId>| l.and_then(|l| base.iter().position(|&b| b == l));
    let present = |part: &[usize]| {
        let mut seen = vec![false; base.len()];
        for &b in part {
            for &l in &blocks[b].labels {
                if let Some(k) = position(l) {
                    seen[k] = true;
                }
            }
        }
        seen
    };

    let mut fake: Vec<usize> = Vec::new();
    let (support, query) = if fake_novel > 0 && batch.len() >= 2 {
        let (s, q) = batch.split_at(batch.len() / 2);
        let (in_s, in_q) = (present(s), present(q));
        let eligible: Vec<usize> = (0..base.len()).filter(|&k| in_s[k] && in_q[k]).collect();
        let count = fake_novel.min(eligible.len());
        if count > 0 {
            fake = index::sample(rng, eligible.len(), count)
                .into_iter()
                .map(|i| eligible[i])
                .collect();
            fake.sort_unstable();
            (s, q)
        } else {
            (&batch[..0], batch)
        }
    } else {
        (&batch[..0], batch)
    };

    let prototypes = (0..base.len())
        .map(|k| {
            if fake.contains(&k) {
                let mut rows = Vec::new();
                for &b in support {
                    let block = &blocks[b];
                    for (x, &l) in block.inputs.chunks_exact(in_dim).zip(&block.labels) {
                        if position(l) == Some(k) {
                            rows.extend_from_slice(x);
                        }
                    }
                }
                PrototypeSource::Support(rows)
            } else {
                PrototypeSource::Learned(k)
            }
        })
        .collect();

    let mut query_inputs = Vec::new();
    let mut query_labels = Vec::new();
    for &b in query {
        let block = &blocks[b];
        for (x, &l) in block.inputs.chunks_exact(in_dim).zip(&block.labels) {
            if let Some(k) = position(l) {
                query_inputs.extend_from_slice(x);
                query_labels.push(k);
            }
        }
    }
    Episode {
        in_dim,
        query_inputs,
        query_labels,
        prototypes,
    }
}

/// Trains the fusion head and one prototype per base class by SGD over fake-novel episodes.
pub fn train_base(
    blocks: &[TrainingBlock],
    base_classes: &[ClassId],
    in_dim: usize,
    config: &TrainingConfig,
) -> Result<TrainingOutcome> {
    config.validate(base_classes.len())?;
    for (b, block) in blocks.iter().enumerate() {
        if block.inputs.len() != block.labels.len() * in_dim {
            return Err(Error::DimensionMismatch {
                what: "training block inputs",
                expected: block.labels.len() * in_dim,
                actual: block.inputs.len(),
            });
        }
        if let Some(row) = block.inputs.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                what: "training inputs",
                row: row / in_dim + b,
            });
        }
    }
    for &c in base_classes {
        let seen = blocks
            .iter()
            .any(|b| b.labels.contains(&Some(c)));
        if !seen {
            return Err(Error::MissingBaseClass(c));
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let fusion = FusionWeights::initialize(config.fused_dim, in_dim, config.seed ^ 0xf00d);
    let prototypes = initial_prototypes(&fusion, blocks, base_classes);
    let mut params = Parameters { fusion, prototypes };
    let mut log = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..blocks.len()).collect();

    for epoch in 0..config.epochs {
        let lr = config.learning_rate_at(epoch);
        order.shuffle(&mut rng);
        let (mut loss_sum, mut correct, mut count) = (0.0, 0usize, 0usize);
        for (batch_id, batch) in order.chunks(config.batch_size).enumerate() {
            let episode = make_episode(blocks, batch, base_classes, in_dim, config.fake_novel, &mut rng);
            if episode.query_count() == 0 {
                continue;
            }
            let (result, grads) = episode_loss(&params, &episode, config.tau, true);
            if !result.loss.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: batch_id });
            }
            loss_sum += result.loss * result.count as f64;
            correct += result.correct;
            count += result.count;
            apply_step(&mut params, &grads.expect("requested"), lr);
        }
        log.push(EpochLog {
            epoch,
            loss: if count > 0 { loss_sum / count as f64 } else { 0.0 },
            accuracy: if count > 0 { correct as f64 / count as f64 } else { 0.0 },
        });
    }

    let mut weights = params.fusion;
    weights.trained = true;
    let prototypes = params
        .prototypes
        .into_iter()
        .zip(base_classes)
        .map(|(p, &c)| SemanticPrototype::new(c, p))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainingOutcome {
        weights,
        prototypes,
        log,
    })
}

fn apply_step(params: &mut Parameters, grads: &Gradients, lr: f64) {
    if lr == 0.0 {
        return;
    }
    let step = |p: &mut [f64], g: &[f64]| p.iter_mut().zip(g).for_each(|(x, d)| *x -= lr * d);
    step(&mut params.fusion.weights, &grads.weights);
    step(&mut params.fusion.bias, &grads.bias);
    for (p, g) in params.prototypes.iter_mut().zip(&grads.prototypes) {
        if g.iter().all(|v| *v == 0.0) {
            continue;
        }
        step(p, g);
        normalize_in_place(p);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    fn random_episode(rng: &mut ChaCha8Rng, in_dim: usize, classes: usize, n: usize, fake: bool) -> Episode {
        let query_inputs = (0..n * in_dim).map(|_| rng.gen::<f64>() - 0.3).collect();
        let query_labels = (0..n).map(|i| i % classes).collect();
        let prototypes = (0..classes)
            .map(|k| {
                if fake && k == 0 {
                    PrototypeSource::Support((0..4 * in_dim).map(|_| rng.gen::<f64>() - 0.2).collect())
                } else {
                    PrototypeSource::Learned(k)
                }
            })
            .collect();
        Episode {
            in_dim,
            query_inputs,
            query_labels,
            prototypes,
        }
    }

    fn random_params(rng: &mut ChaCha8Rng, out: usize, in_dim: usize, classes: usize) -> Parameters {
        let mut fusion = FusionWeights::initialize(out, in_dim, rng.gen());
        fusion.bias.iter_mut().for_each(|b| *b = rng.gen::<f64>() * 0.2);
        Parameters {
            fusion,
            prototypes: (0..classes)
                .map(|_| (0..out).map(|_| rng.gen::<f64>() - 0.5).collect())
                .collect(),
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for trial in 0..4 {
            let params = random_params(&mut rng, 6, 5, 3);
            let episode = random_episode(&mut rng, 5, 3, 10, trial % 2 == 0);
            let err = gradient_check(&params, &episode, 10.0, 1e-5).unwrap();
            assert!(err < 1e-4, "trial {trial}: {err}");
        }
    }

    #[test]
    fn finite_difference_error_shrinks_with_epsilon() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let params = random_params(&mut rng, 5, 4, 2);
        let episode = random_episode(&mut rng, 4, 2, 8, false);
        let coarse = gradient_check(&params, &episode, 10.0, 1e-3).unwrap();
        let fine = gradient_check(&params, &episode, 10.0, 1e-5).unwrap();
        assert!(fine < coarse, "{fine} vs {coarse}");
    }

    #[test]
    fn epsilon_out_of_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let params = random_params(&mut rng, 2, 2, 2);
        let episode = random_episode(&mut rng, 2, 2, 2, false);
        assert!(gradient_check(&params, &episode, 1.0, 1e-2).is_err());
    }

    #[test]
    fn zero_weights_symmetric_batch_gives_mirrored_gradients() {
        let fusion = FusionWeights::new(2, 3, vec![0.0; 6], vec![1.0, 1.0]).unwrap();
        let params = Parameters {
            fusion,
            prototypes: vec![vec![1.0, 0.0], vec![0.0, 1.0]],
        };
        let episode = Episode {
            in_dim: 3,
            query_inputs: vec![0.2, 0.5, 0.1, 0.2, 0.5, 0.1],
            query_labels: vec![0, 1],
            prototypes: vec![PrototypeSource::Learned(0), PrototypeSource::Learned(1)],
        };
        let (_, g) = episode_loss(&params, &episode, 10.0, true);
        let g = g.unwrap();
        assert!((g.prototypes[0][0] - g.prototypes[1][1]).abs() < 1e-15);
        assert!((g.prototypes[0][1] - g.prototypes[1][0]).abs() < 1e-15);
    }

    #[test]
    fn identical_prototypes_give_ln_two() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut params = random_params(&mut rng, 4, 3, 2);
        params.prototypes[1] = params.prototypes[0].clone();
        let episode = random_episode(&mut rng, 3, 2, 7, false);
        let (r, _) = episode_loss(&params, &episode, 10.0, false);
        assert!((r.loss - 2f64.ln()).abs() < 1e-12);
    }

    /// Two well-separated Gaussian blobs per class in 4-D.
    fn separable_blocks(rng: &mut ChaCha8Rng) -> Vec<TrainingBlock> {
        (0..8)
            .map(|_| {
                let mut inputs = Vec::new();
                let mut labels = Vec::new();
                for i in 0..40 {
                    let c = (i % 2) as ClassId;
                    let center = if c == 0 { [1.0, 0.2, 0.0, 0.3] } else { [0.1, 0.9, 0.8, 0.0] };
                    for v in center {
                        inputs.push(v + (rng.gen::<f64>() - 0.5) * 0.2);
                    }
                    labels.push(Some(c));
                }
                TrainingBlock { inputs, labels }
            })
            .collect()
    }

    fn small_config(epochs: usize, lr: f64) -> TrainingConfig {
        TrainingConfig {
            epochs,
            batch_size: 2,
            learning_rate: lr,
            lr_decay: 0.5,
            decay_every: 100,
            tau: 10.0,
            fake_novel: 1,
            fused_dim: 8,
            seed: 5,
        }
    }

    #[test]
    fn separable_set_trains() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let blocks = separable_blocks(&mut rng);
        // 8 blocks / batch 2 = 4 steps per epoch, 200 steps total.
        let out = train_base(&blocks, &[0, 1], 4, &small_config(50, 0.5)).unwrap();
        let first = out.log.first().unwrap();
        let last = out.log.last().unwrap();
        assert!(last.loss < first.loss, "{first:?} -> {last:?}");
        assert!(last.accuracy > 0.95, "{last:?}");
        for p in &out.prototypes {
            assert!((norm(p.weight()) - 1.0).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_learning_rate_changes_nothing() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let blocks = separable_blocks(&mut rng);
        let cfg = small_config(3, 0.0);
        let out = train_base(&blocks, &[0, 1], 4, &cfg).unwrap();
        let init = FusionWeights::initialize(cfg.fused_dim, 4, cfg.seed ^ 0xf00d);
        assert_eq!(out.weights.weights(), init.weights());
        assert_eq!(out.weights.bias(), init.bias());
        let protos = initial_prototypes(&init, &blocks, &[0, 1]);
        for (p, q) in out.prototypes.iter().zip(&protos) {
            assert_eq!(p.weight(), q.as_slice());
        }
    }

    #[test]
    fn training_is_deterministic() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let blocks = separable_blocks(&mut rng);
        let cfg = small_config(5, 0.3);
        let a = train_base(&blocks, &[0, 1], 4, &cfg).unwrap();
        let b = train_base(&blocks, &[0, 1], 4, &cfg).unwrap();
        assert_eq!(a.weights, b.weights);
        assert_eq!(a.prototypes, b.prototypes);
    }

    #[test]
    fn missing_base_class_is_reported() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let blocks = separable_blocks(&mut rng);
        assert!(matches!(
            train_base(&blocks, &[0, 1, 2], 4, &small_config(1, 0.1)),
            Err(Error::MissingBaseClass(2))
        ));
    }

    #[test]
    fn fake_novel_must_be_below_base_count() {
        let cfg = TrainingConfig { fake_novel: 2, ..small_config(1, 0.1) };
        assert!(cfg.validate(2).is_err());
    }
}

//! Geometric prototypes (per-class word-frequency histograms), minor frequency
//! pruning, and registration of novel classes from a support set.

use crate::error::{Error, Result};
use crate::fusion::SemanticPrototype;
use crate::vocab::HardAssignment;
use crate::ClassId;

const SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct GeometricPrototype {
    pub class: ClassId,
    histogram: Vec<f64>,
    /// The frequency limit used, when pruned.
    pub alpha: Option<f64>,
}

impl GeometricPrototype {
    pub fn new(class: ClassId, histogram: Vec<f64>, alpha: Option<f64>) -> Result<Self> {
        if histogram.is_empty() {
            return Err(Error::invariant(format!("class {class}: empty histogram")));
        }
        if histogram.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
            return Err(Error::invariant(format!(
                "class {class}: histogram entries must be finite and >= 0"
            )));
        }
        let sum: f64 = histogram.iter().sum();
        if (sum - 1.0).abs() > SUM_TOLERANCE {
            return Err(Error::invariant(format!(
                "class {class}: histogram sums to {sum}, not 1"
            )));
        }
        if let Some(a) = alpha {
            check_alpha(a)?;
        }
        Ok(Self {
            class,
            histogram,
            alpha,
        })
    }

    pub fn histogram(&self) -> &[f64] {
        &self.histogram
    }

    pub fn is_pruned(&self) -> bool {
        self.alpha.is_some()
    }

    pub fn support(&self) -> impl Iterator<Item = usize> + '_ {
        self.histogram
            .iter()
            .enumerate()
            .filter(|(_, v)| **v > 0.0)
            .map(|(i, _)| i)
    }

    pub(crate) fn round_to_f32(&mut self) {
        crate::linalg::round_f32(&mut self.histogram);
    }
}

fn check_alpha(alpha: f64) -> Result<()> {
    if !(alpha > 0.0 && alpha <= 1.0) {
        return Err(Error::invalid(format!("alpha must be in (0, 1], got {alpha}")));
    }
    Ok(())
}

/// Mean of the one-hot hard assignments of a class's points.
pub fn build_geometric_prototype(
    class: ClassId,
    assignments: &[HardAssignment],
    vocab_size: usize,
) -> Result<GeometricPrototype> {
    if assignments.is_empty() {
        return Err(Error::EmptyClass(class));
    }
    let mut counts = vec![0u64; vocab_size];
    for a in assignments {
        let slot = counts.get_mut(a.0).ok_or_else(|| {
            Error::invalid(format!("word index {} out of range for {vocab_size} words", a.0))
        })?;
        *slot += 1;
    }
    let n = assignments.len() as f64;
    GeometricPrototype::new(class, counts.into_iter().map(|c| c as f64 / n).collect(), None)
}

/// Keeps the most frequent words until their accumulated frequency reaches
/// `alpha` (the word that crosses `alpha` is kept), zeroes the rest, and
/// renormalizes.
///
/// Words are visited in descending frequency, ties by ascending index. When
/// every nonzero word survives the histogram is returned unchanged. A
/// prototype already pruned at the same `alpha` is returned as is.
pub fn prune_minor_frequencies(proto: &GeometricPrototype, alpha: f64) -> Result<GeometricPrototype> {
    check_alpha(alpha)?;
    match proto.alpha {
        Some(a) if a == alpha => return Ok(proto.clone()),
        Some(a) => {
            return Err(Error::invalid(format!(
                "class {}: prototype is already pruned at alpha {a}",
                proto.class
            )))
        }
        None => {}
    }
    let hist = proto.histogram();
    let mut order: Vec<usize> = (0..hist.len()).collect();
    order.sort_by(|&a, &b| hist[b].total_cmp(&hist[a]).then(a.cmp(&b)));

    let mut kept = vec![0.0; hist.len()];
    let mut accumulated = 0.0;
    let mut next = 0;
    while accumulated < alpha && next < order.len() {
        let idx = order[next];
        kept[idx] = hist[idx];
        accumulated += hist[idx];
        next += 1;
    }

    let full_support = hist.iter().filter(|v| **v > 0.0).count();
    let kept_support = kept.iter().filter(|v| **v > 0.0).count();
    let histogram = if kept_support == full_support {
        hist.to_vec()
    } else {
        let total: f64 = kept.iter().sum();
        kept.into_iter().map(|v| v / total).collect()
    };
    GeometricPrototype::new(proto.class, histogram, Some(alpha))
}

/// Prototypes derived for one novel class.
#[derive(Debug, Clone, PartialEq)]
pub struct RegisteredClass {
    pub semantic: SemanticPrototype,
    pub geometric: GeometricPrototype,
    pub pruned: GeometricPrototype,
}

/// Pools a class's foreground points (across all its support blocks) into a
/// semantic prototype (normalized mean fused feature) and a pruned geometric
/// prototype.
pub fn prototypes_from_foreground(
    class: ClassId,
    fused: &[Vec<f64>],
    words: &[HardAssignment],
    vocab_size: usize,
    alpha: f64,
) -> Result<RegisteredClass> {
    if fused.is_empty() || words.is_empty() {
        return Err(Error::EmptyClass(class));
    }
    let dim = fused[0].len();
    let mut mean = vec![0.0; dim];
    for f in fused {
        mean.iter_mut().zip(f).for_each(|(m, v)| *m += v);
    }
    mean.iter_mut().for_each(|m| *m /= fused.len() as f64);
    let semantic = SemanticPrototype::from_direction(class, mean)?;
    let geometric = build_geometric_prototype(class, words, vocab_size)?;
    let pruned = prune_minor_frequencies(&geometric, alpha)?;
    Ok(RegisteredClass {
        semantic,
        geometric,
        pruned,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn proto(h: &[f64]) -> GeometricPrototype {
        GeometricPrototype::new(0, h.to_vec(), None).unwrap()
    }

    fn hard(idx: &[usize]) -> Vec<HardAssignment> {
        idx.iter().map(|&i| HardAssignment(i)).collect()
    }

    #[test]
    fn histogram_of_assignments() {
        let p = build_geometric_prototype(3, &hard(&[0, 0, 1, 2]), 3).unwrap();
        assert_eq!(p.histogram(), &[0.5, 0.25, 0.25]);
        let p = build_geometric_prototype(3, &hard(&[1, 1, 1]), 3).unwrap();
        assert_eq!(p.histogram(), &[0.0, 1.0, 0.0]);
        assert!(build_geometric_prototype(3, &[], 3).is_err());
        assert!(build_geometric_prototype(3, &hard(&[5]), 3).is_err());
    }

    #[test]
    fn concatenation_is_count_weighted_average() {
        let a = hard(&[0, 1, 1, 3, 3, 3]);
        let b = hard(&[2, 2, 0, 1]);
        let pa = build_geometric_prototype(0, &a, 4).unwrap();
        let pb = build_geometric_prototype(0, &b, 4).unwrap();
        let both: Vec<_> = a.iter().chain(&b).copied().collect();
        let pab = build_geometric_prototype(0, &both, 4).unwrap();
        for h in 0..4 {
            let expected = (6.0 * pa.histogram()[h] + 4.0 * pb.histogram()[h]) / 10.0;
            assert!((pab.histogram()[h] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn hand_traced_pruning() {
        let p = prune_minor_frequencies(&proto(&[0.5, 0.3, 0.15, 0.05]), 0.9).unwrap();
        let want = [10.0 / 19.0, 6.0 / 19.0, 3.0 / 19.0, 0.0];
        for (a, b) in p.histogram().iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_eq!(p.alpha, Some(0.9));
    }

    #[test]
    fn alpha_one_and_one_hot_are_untouched() {
        let h = [0.1, 0.2, 0.3, 0.4];
        assert_eq!(prune_minor_frequencies(&proto(&h), 1.0).unwrap().histogram(), &h);
        let one_hot = [0.0, 1.0, 0.0];
        for alpha in [0.01, 0.5, 0.9, 1.0] {
            assert_eq!(
                prune_minor_frequencies(&proto(&one_hot), alpha).unwrap().histogram(),
                &one_hot
            );
        }
    }

    #[test]
    fn ties_resolved_by_index() {
        let p = prune_minor_frequencies(&proto(&[0.25, 0.25, 0.25, 0.25]), 0.5).unwrap();
        assert_eq!(p.histogram(), &[0.5, 0.5, 0.0, 0.0]);
    }

    #[test]
    fn bad_alpha() {
        let p = proto(&[0.5, 0.5]);
        assert!(prune_minor_frequencies(&p, 0.0).is_err());
        assert!(prune_minor_frequencies(&p, 1.1).is_err());
        let pruned = prune_minor_frequencies(&p, 0.5).unwrap();
        assert!(prune_minor_frequencies(&pruned, 0.9).is_err());
    }

    #[test]
    fn foreground_pooling() {
        let fused = vec![vec![0.0, 2.0, 0.0]; 5];
        let words = hard(&[7; 5]);
        let reg = prototypes_from_foreground(4, &fused, &words, 10, 0.9).unwrap();
        assert_eq!(reg.semantic.weight(), &[0.0, 1.0, 0.0]);
        assert_eq!(reg.pruned.histogram(), reg.geometric.histogram());
        assert_eq!(reg.pruned.histogram()[7], 1.0);
    }

    fn histogram_strategy() -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0u32..20, 1..16).prop_filter_map("nonzero", |counts| {
            let total: u32 = counts.iter().sum();
            (total > 0).then(|| counts.iter().map(|&c| c as f64 / total as f64).collect())
        })
    }

    proptest! {
        #[test]
        fn pruning_invariants(h in histogram_strategy(), a in 0.05f64..=1.0, b in 0.05f64..=1.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let p = proto(&h);
            let p_lo = prune_minor_frequencies(&p, lo).unwrap();
            let p_hi = prune_minor_frequencies(&p, hi).unwrap();
            let sum: f64 = p_lo.histogram().iter().sum();
            prop_assert!((sum - 1.0).abs() < 1e-6);
            let support: Vec<usize> = p.support().collect();
            let s_lo: Vec<usize> = p_lo.support().collect();
            let s_hi: Vec<usize> = p_hi.support().collect();
            prop_assert!(s_lo.iter().all(|i| support.contains(i)));
            prop_assert!(s_lo.iter().all(|i| s_hi.contains(i)));

            prop_assert_eq!(prune_minor_frequencies(&p_lo, lo).unwrap(), p_lo);
        }
    }
}

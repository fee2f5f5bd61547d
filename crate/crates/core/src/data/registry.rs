use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ClassId;

/// Base/novel split over the dense class ids `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassRegistry {
    pub base_classes: Vec<ClassId>,
    pub novel_classes: Vec<ClassId>,
    /// Display names indexed by class id.
    pub names: Vec<String>,
}

impl ClassRegistry {
    pub fn new(
        base_classes: Vec<ClassId>,
        novel_classes: Vec<ClassId>,
        names: Vec<String>,
    ) -> Result<Self> {
        let reg = Self {
            base_classes,
            novel_classes,
            names,
        };
        reg.validate()?;
        Ok(reg)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.names.len();
        let mut seen = vec![false; n];
        for &c in self.base_classes.iter().chain(&self.novel_classes) {
            let slot = seen
                .get_mut(c as usize)
                .ok_or_else(|| Error::invariant(format!("class id {c} outside 0..{n}")))?;
            if *slot {
                return Err(Error::invariant(format!("class id {c} listed twice")));
            }
            *slot = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::invariant(format!(
                "class id {missing} is neither base nor novel"
            )));
        }
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.names.len()
    }

    pub fn is_novel(&self, class: ClassId) -> bool {
        self.novel_classes.contains(&class)
    }

    pub fn is_base(&self, class: ClassId) -> bool {
        self.base_classes.contains(&class)
    }

    pub fn name(&self, class: ClassId) -> &str {
        self.names.get(class as usize).map_or("?", String::as_str)
    }

    pub fn with_names(mut self, names: Vec<String>) -> Result<Self> {
        if names.len() != self.names.len() {
            return Err(Error::DimensionMismatch {
                what: "class names",
                expected: self.names.len(),
                actual: names.len(),
            });
        }
        self.names = names;
        Ok(self)
    }
}

/// Makes the `n_novel` classes with the fewest labeled points novel.
///
/// `label_counts[c]` is the point count of class `c`. Ties go to the lower index.
pub fn split_classes(label_counts: &[u64], n_novel: usize) -> Result<ClassRegistry> {
    let n = label_counts.len();
    if n_novel >= n {
        return Err(Error::invalid(format!(
            "n_novel ({n_novel}) must be smaller than the class count ({n})"
        )));
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by_key(|&c| (label_counts[c], c));
    let mut novel: Vec<ClassId> = order[..n_novel].iter().map(|&c| c as ClassId).collect();
    novel.sort_unstable();
    let base = (0..n as ClassId).filter(|c| !novel.contains(c)).collect();
    ClassRegistry::new(base, novel, (0..n).map(|c| format!("class{c}")).collect())
}

/// Per-class point counts over labeled clouds, sized to cover the largest label seen
/// (or `min_classes`, whichever is larger).
pub fn label_histogram<'a>(
    labels: impl IntoIterator<Item = &'a [ClassId]>,
    min_classes: usize,
) -> Vec<u64> {
    let mut counts = vec![0u64; min_classes];
    for slice in labels {
        for &l in slice {
            let l = l as usize;
            if l >= counts.len() {
                counts.resize(l + 1, 0);
            }
            counts[l] += 1;
        }
    }
    counts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fewest_points_go_novel() {
        let reg = split_classes(&[100, 50, 10], 1).unwrap();
        assert_eq!(reg.novel_classes, vec![2]);
        assert_eq!(reg.base_classes, vec![0, 1]);
    }

    #[test]
    fn zero_novel_means_all_base() {
        let reg = split_classes(&[3, 2, 1], 0).unwrap();
        assert!(reg.novel_classes.is_empty());
        assert_eq!(reg.base_classes, vec![0, 1, 2]);
    }

    #[test]
    fn tie_at_cutoff_prefers_lower_index() {
        let reg = split_classes(&[10, 5, 7, 5], 1).unwrap();
        assert_eq!(reg.novel_classes, vec![1]);
    }

    #[test]
    fn too_many_novel() {
        assert!(split_classes(&[1, 2], 2).is_err());
    }

    #[test]
    fn registry_rejects_overlap() {
        assert!(ClassRegistry::new(vec![0, 1], vec![1], vec!["a".into(), "b".into()]).is_err());
        assert!(ClassRegistry::new(vec![0], vec![], vec!["a".into(), "b".into()]).is_err());
    }
}

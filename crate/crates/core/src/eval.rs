//! Confusion matrices, per-class IoU, base/novel/all mIoU, harmonic mean and
//! multi-seed aggregation.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::data::registry::ClassRegistry;
use crate::error::{Error, Result};
use crate::ClassId;

/// Square count matrix; rows are ground truth, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    n: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn zeros(n: usize) -> Self {
        Self {
            n,
            counts: vec![0; n * n],
        }
    }

    pub fn n_classes(&self) -> usize {
        self.n
    }

    pub fn get(&self, gt: usize, pred: usize) -> u64 {
        self.counts[gt * self.n + pred]
    }

    pub fn row(&self, gt: usize) -> &[u64] {
        &self.counts[gt * self.n..(gt + 1) * self.n]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// Adds another matrix of the same size.
    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.n != self.n {
            return Err(Error::DimensionMismatch {
                what: "confusion matrix",
                expected: self.n,
                actual: other.n,
            });
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        Ok(())
    }

    /// `None` when the class appears in neither ground truth nor predictions.
    pub fn iou(&self, c: usize) -> Option<f64> {
        let tp = self.get(c, c);
        let fn_: u64 = self.row(c).iter().sum::<u64>() - tp;
        let fp: u64 = (0..self.n).map(|g| self.get(g, c)).sum::<u64>() - tp;
        let union = tp + fp + fn_;
        (union > 0).then(|| tp as f64 / union as f64)
    }
}

pub fn confusion_matrix(pred: &[ClassId], gt: &[ClassId], n_classes: usize) -> Result<ConfusionMatrix> {
    if pred.len() != gt.len() {
        return Err(Error::DimensionMismatch {
            what: "prediction labels",
            expected: gt.len(),
            actual: pred.len(),
        });
    }
    let mut m = ConfusionMatrix::zeros(n_classes);
    for (i, (&p, &g)) in pred.iter().zip(gt).enumerate() {
        if p as usize >= n_classes || g as usize >= n_classes {
            return Err(Error::invalid(format!(
                "label out of range at index {i}: gt {g}, pred {p}, {n_classes} classes"
            )));
        }
        m.counts[g as usize * n_classes + p as usize] += 1;
    }
    Ok(m)
}

/// `2ab / (a + b)`, with 0 when both are 0.
pub fn harmonic_mean(a: f64, b: f64) -> f64 {
    if a == b {
        a
    } else if a + b == 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    /// Per-class IoU; `None` for classes excluded from the means.
    pub iou: Vec<Option<f64>>,
    pub miou_base: f64,
    pub miou_novel: f64,
    pub miou_all: f64,
    pub hm: f64,
    pub seed: Option<u64>,
    pub shots: Option<usize>,
    pub class_names: Vec<String>,
}

fn mean_over(iou: &[Option<f64>], classes: impl Iterator<Item = usize>) -> f64 {
    let vals: Vec<f64> = classes.filter_map(|c| iou[c]).collect();
    if vals.is_empty() {
        0.0
    } else {
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

pub fn miou_report(confusion: &ConfusionMatrix, registry: &ClassRegistry) -> Result<EvalReport> {
    let n = registry.num_classes();
    if confusion.n_classes() != n {
        return Err(Error::DimensionMismatch {
            what: "confusion matrix",
            expected: n,
            actual: confusion.n_classes(),
        });
    }
    let iou: Vec<Option<f64>> = (0..n).map(|c| confusion.iou(c)).collect();
    let miou_base = mean_over(&iou, registry.base_classes.iter().map(|&c| c as usize));
    let miou_novel = mean_over(&iou, registry.novel_classes.iter().map(|&c| c as usize));
    let miou_all = mean_over(&iou, 0..n);
    Ok(EvalReport {
        confusion: confusion.clone(),
        iou,
        miou_base,
        miou_novel,
        miou_all,
        hm: harmonic_mean(miou_base, miou_novel),
        seed: None,
        shots: None,
        class_names: registry.names.clone(),
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "nan".to_string(), |v| format!("{v:.6}"))
}

impl EvalReport {
    /// `metric,value` rows followed by `iou_<name>` rows.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,value\n");
        for (k, v) in self.summary() {
            let _ = writeln!(out, "{k},{v:.6}");
        }
        if let Some(seed) = self.seed {
            let _ = writeln!(out, "seed,{seed}");
        }
        if let Some(k) = self.shots {
            let _ = writeln!(out, "shots,{k}");
        }
        for (c, v) in self.iou.iter().enumerate() {
            let _ = writeln!(out, "iou_{},{}", self.class_names[c], fmt_opt(*v));
        }
        out
    }

    pub fn to_table(&self) -> String {
        let width = self.class_names.iter().map(String::len).max().unwrap_or(5).max(7);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>8}", "class", "IoU");
        for (c, v) in self.iou.iter().enumerate() {
            let shown = v.map_or_else(|| "-".to_string(), |v| format!("{:.2}", 100.0 * v));
            let _ = writeln!(out, "{:<width$}  {:>8}", self.class_names[c], shown);
        }
        let _ = writeln!(out);
        for (k, v) in self.summary() {
            let _ = writeln!(out, "{k:<width$}  {:>8.2}", 100.0 * v);
        }
        out
    }

    pub fn summary(&self) -> [(&'static str, f64); 4] {
        [
            ("miou_base", self.miou_base),
            ("miou_novel", self.miou_novel),
            ("miou_all", self.miou_all),
            ("hm", self.hm),
        ]
    }
}

/// Mean and sample standard deviation (n - 1) of one metric across runs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub std: f64,
}

pub fn mean_std(values: &[f64]) -> MeanStd {
    let n = values.len();
    if n == 0 {
        return MeanStd { mean: 0.0, std: 0.0 };
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    let std = if n < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
    };
    MeanStd { mean, std }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateReport {
    pub seeds: Vec<u64>,
    pub miou_base: MeanStd,
    pub miou_novel: MeanStd,
    pub miou_all: MeanStd,
    pub hm: MeanStd,
}

pub fn aggregate(reports: &[EvalReport]) -> Result<AggregateReport> {
    if reports.is_empty() {
        return Err(Error::invalid("no reports to aggregate"));
    }
    let pick = |f: fn(&EvalReport) -> f64| mean_std(&reports.iter().map(f).collect::<Vec<_>>());
    Ok(AggregateReport {
        seeds: reports.iter().filter_map(|r| r.seed).collect(),
        miou_base: pick(|r| r.miou_base),
        miou_novel: pick(|r| r.miou_novel),
        miou_all: pick(|r| r.miou_all),
        hm: pick(|r| r.hm),
    })
}

impl AggregateReport {
    pub fn rows(&self) -> [(&'static str, MeanStd); 4] {
        [
            ("miou_base", self.miou_base),
            ("miou_novel", self.miou_novel),
            ("miou_all", self.miou_all),
            ("hm", self.hm),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("metric,mean,std\n");
        for (k, v) in self.rows() {
            let _ = writeln!(out, "{k},{:.6},{:.6}", v.mean, v.std);
        }
        out
    }

    pub fn to_table(&self) -> String {
        let mut out = format!("{} runs\n", self.seeds.len());
        for (k, v) in self.rows() {
            let _ = writeln!(out, "{k:<10}  {:>6.2} ± {:.2}", 100.0 * v.mean, 100.0 * v.std);
        }
        out
    }
}

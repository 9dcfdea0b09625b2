//! Dataset-level evaluation: confusion matrix, per-class precision/recall/F1,
//! macro averages and top-k accuracy.

use std::io::Write;
use std::path::Path;

use serde::Serialize;

use crate::dataset::{self, Sample, INPUT_SIZE};
use crate::error::{Error, Result};
use crate::graph::Model;
use crate::parallel;

pub const EVAL_SCHEMA: &str = "drivecls.eval/1";

/// Rows are true classes, columns predicted classes.
#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct ConfusionMatrix {
    counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        ConfusionMatrix {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let k = counts.len();
        if counts.iter().any(|r| r.len() != k) {
            return Err(Error::shape("ConfusionMatrix", format!("{k}×{k}"), "ragged rows"));
        }
        Ok(ConfusionMatrix { counts })
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn record(&mut self, truth: usize, predicted: usize) {
        self.counts[truth][predicted] += 1;
    }

    pub fn get(&self, truth: usize, predicted: usize) -> u64 {
        self.counts[truth][predicted]
    }

    pub fn rows(&self) -> &[Vec<u64>] {
        &self.counts
    }

    pub fn row_sum(&self, j: usize) -> u64 {
        self.counts[j].iter().sum()
    }

    pub fn col_sum(&self, j: usize) -> u64 {
        self.counts.iter().map(|r| r[j]).sum()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.classes()).map(|j| self.counts[j][j]).sum()
    }

    /// Elementwise sum; used to merge per-worker partial matrices.
    pub fn merge(&mut self, other: &ConfusionMatrix) {
        for (a, b) in self.counts.iter_mut().zip(&other.counts) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    /// Header row `true\pred,c0,..`, then one row per true class.
    pub fn to_csv(&self) -> String {
        let code = |j: usize| {
            if self.classes() == dataset::NUM_CLASSES {
                dataset::class_code(j).to_string()
            } else {
                format!("c{j}")
            }
        };
        let mut out = String::from("true\\pred");
        for j in 0..self.classes() {
            out.push(',');
            out.push_str(&code(j));
        }
        out.push('\n');
        for (i, row) in self.counts.iter().enumerate() {
            out.push_str(&code(i));
            for v in row {
                out.push_str(&format!(",{v}"));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Metrics {
    pub per_class: Vec<ClassMetrics>,
    pub macro_avg: ClassMetrics,
}

fn ratio(num: u64, den: u64, what: &str, class: usize) -> f64 {
    if den == 0 {
        log::warn!("{what} undefined for class {class} (0/0); reporting 0");
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Precision, recall and F1 per class, with unweighted macro means. 0/0 is 0.
pub fn metrics_from_confusion(cm: &ConfusionMatrix) -> Metrics {
    let per_class: Vec<ClassMetrics> = (0..cm.classes())
        .map(|j| {
            let tp = cm.get(j, j);
            let precision = ratio(tp, cm.col_sum(j), "precision", j);
            let recall = ratio(tp, cm.row_sum(j), "recall", j);
            let f1 = if precision + recall == 0.0 {
                0.0
            } else {
                2.0 * precision * recall / (precision + recall)
            };
            ClassMetrics {
                precision,
                recall,
                f1,
            }
        })
        .collect();
    let k = per_class.len().max(1) as f64;
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / k;
    let macro_avg = ClassMetrics {
        precision: mean(|m| m.precision),
        recall: mean(|m| m.recall),
        f1: mean(|m| m.f1),
    };
    Metrics {
        per_class,
        macro_avg,
    }
}

/// Class indices ordered by descending score; equal scores keep the lower index first.
pub fn ranked(logits: &[f32]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..logits.len()).collect();
    idx.sort_by(|&a, &b| logits[b].total_cmp(&logits[a]).then(a.cmp(&b)));
    idx
}

/// True when `truth` is among the `k` highest logits (ties toward lower index).
pub fn in_top_k(logits: &[f32], truth: usize, k: usize) -> bool {
    // Rank of `truth` = entries that beat it under the tie rule.
    let t = logits[truth];
    let better = logits
        .iter()
        .enumerate()
        .filter(|&(j, &v)| v > t || (v == t && j < truth))
        .count();
    better < k
}

/// Fraction of rows whose label is among the top `k` logits.
pub fn top_k(logits: &[Vec<f32>], labels: &[usize], k: usize) -> Result<f64> {
    if logits.len() != labels.len() {
        return Err(Error::shape("top_k", logits.len(), labels.len()));
    }
    if logits.is_empty() {
        return Err(Error::Empty("top_k"));
    }
    for (row, &label) in logits.iter().zip(labels) {
        if k > row.len() || label >= row.len() {
            return Err(Error::ClassOutOfRange {
                class: label.max(k),
                num_classes: row.len(),
            });
        }
    }
    let hits = logits.iter().zip(labels).filter(|(row, &l)| in_top_k(row, l, k)).count();
    Ok(hits as f64 / logits.len() as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct FailedSample {
    pub path: String,
    pub reason: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct EvalReport {
    pub schema: &'static str,
    pub confusion: ConfusionMatrix,
    pub per_class: Vec<ClassMetrics>,
    #[serde(rename = "macro")]
    pub macro_avg: ClassMetrics,
    pub top1: f64,
    pub top5: f64,
    pub n_evaluated: usize,
    pub n_failed: usize,
    pub failures: Vec<FailedSample>,
}

impl EvalReport {
    /// Builds the report from per-sample logits (sample order does not matter).
    pub fn from_logits(classes: usize, rows: &[(usize, Vec<f32>)], failures: Vec<FailedSample>) -> Result<Self> {
        let mut confusion = ConfusionMatrix::new(classes);
        let mut top5_hits = 0usize;
        for (truth, logits) in rows {
            if logits.len() != classes || *truth >= classes {
                return Err(Error::ClassOutOfRange {
                    class: *truth,
                    num_classes: logits.len(),
                });
            }
            // Ranked on logits: softmax preserves the order.
            confusion.record(*truth, ranked(logits)[0]);
            top5_hits += in_top_k(logits, *truth, 5.min(classes)) as usize;
        }
        let n = rows.len();
        let metrics = metrics_from_confusion(&confusion);
        let frac = |hits: usize| if n == 0 { 0.0 } else { hits as f64 / n as f64 };
        Ok(EvalReport {
            schema: EVAL_SCHEMA,
            top1: frac(confusion.trace() as usize),
            top5: frac(top5_hits),
            per_class: metrics.per_class,
            macro_avg: metrics.macro_avg,
            confusion,
            n_evaluated: n,
            n_failed: failures.len(),
            failures,
        })
    }

    pub fn write_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = std::fs::File::create(path)?;
        serde_json::to_writer_pretty(&mut f, self)?;
        f.write_all(b"\n")?;
        Ok(())
    }

    pub fn write_confusion_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.confusion.to_csv())?;
        Ok(())
    }
}

/// Evaluates with an arbitrary scorer. Samples the scorer rejects are reported
/// and excluded. `workers` bounds the fan-out; results do not depend on it.
pub fn evaluate_with<F>(classes: usize, samples: &[Sample], workers: usize, score: F) -> Result<EvalReport>
where
    F: Fn(&Sample) -> Result<Vec<f32>> + Sync,
{
    if samples.is_empty() {
        return Err(Error::Empty("evaluate"));
    }
    let results = parallel::map_ordered(samples, workers, |s| score(s));
    let mut rows = Vec::with_capacity(samples.len());
    let mut failures = Vec::new();
    for (sample, result) in samples.iter().zip(results) {
        match result {
            Ok(logits) => rows.push((sample.class_id, logits)),
            Err(e) => {
                log::warn!("excluding {}: {e}", sample.path);
                failures.push(FailedSample {
                    path: sample.path.clone(),
                    reason: e.to_string(),
                });
            }
        }
    }
    EvalReport::from_logits(classes, &rows, failures)
}

/// Preprocesses every sample under `root`, runs the model, and scores it.
pub fn evaluate(model: &Model, root: &Path, samples: &[Sample], workers: usize) -> Result<EvalReport> {
    let classes = model
        .num_classes()
        .ok_or_else(|| Error::Config("graph has no classify head".into()))?;
    if !model.is_bound() {
        return Err(Error::Unbound);
    }
    evaluate_with(classes, samples, workers, |s| {
        let input = dataset::load_image(root.join(&s.path), INPUT_SIZE)?;
        Ok(model.forward(&input)?.remove(0))
    })
}

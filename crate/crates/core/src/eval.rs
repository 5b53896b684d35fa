//! Downstream evaluation of a coreset with a lightweight classifier.
//!
//! Precision, recall and F1 are computed one-vs-rest per class from the
//! confusion matrix and macro-averaged. Any metric whose denominator vanishes
//! is 0.

use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::EmbeddingMatrix;
use crate::error::{Error, Result};
use crate::kmedoids::{ClassClustering, Metric};
use crate::sampler::{build_coreset, ClassAllocation, ClusterAllocation, CoresetSize, CoresetSpec, SamplingMethod};

pub const DEFAULT_KNN_K: usize = 5;

fn euclidean(a: ndarray::ArrayView1<'_, f64>, b: ndarray::ArrayView1<'_, f64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn check_dims(train_dim: usize, test: &EmbeddingMatrix) -> Result<()> {
    if train_dim != test.dim() {
        return Err(Error::Shape(format!(
            "training dimension {train_dim} differs from test dimension {}",
            test.dim()
        )));
    }
    Ok(())
}

/// Majority vote among the `k` nearest training rows (euclidean).
///
/// Neighbors are ranked by (distance, class, row); vote ties go to the
/// smallest class index.
pub fn knn_classify(train: &EmbeddingMatrix, test: &EmbeddingMatrix, k: usize) -> Result<Vec<u32>> {
    if k == 0 || k.is_multiple_of(2) {
        return Err(Error::Parameter(format!("k must be a positive odd integer, got {k}")));
    }
    if k > train.n() {
        return Err(Error::Parameter(format!("k = {k} exceeds {} training rows", train.n())));
    }
    check_dims(train.dim(), test)?;
    let classes = train.num_classes().max(test.num_classes());
    let labels = train.labels();
    Ok((0..test.n())
        .into_par_iter()
        .map(|q| {
            let query = test.row(q);
            let mut cand: Vec<(f64, u32, usize)> = (0..train.n())
                .map(|r| (euclidean(query, train.row(r)), labels[r], r))
                .collect();
            let key = |a: &(f64, u32, usize), b: &(f64, u32, usize)| {
                a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
            };
            if k < cand.len() {
                cand.select_nth_unstable_by(k - 1, key);
            }
            let mut votes = vec![0usize; classes];
            for c in &cand[..k] {
                votes[c.1 as usize] += 1;
            }
            let mut best = 0;
            for (c, &v) in votes.iter().enumerate() {
                if v > votes[best] {
                    best = c;
                }
            }
            best as u32
        })
        .collect())
}

/// Class of the nearest prototype; equidistant prototypes resolve to the
/// smallest class index.
pub fn nearest_medoid_classify(medoids: &[(u32, Vec<f64>)], test: &EmbeddingMatrix) -> Result<Vec<u32>> {
    if medoids.is_empty() {
        return Err(Error::Parameter("no medoids to classify against".into()));
    }
    if let Some((_, v)) = medoids.iter().find(|(_, v)| v.len() != test.dim()) {
        return Err(Error::Shape(format!(
            "medoid dimension {} differs from test dimension {}",
            v.len(),
            test.dim()
        )));
    }
    Ok((0..test.n())
        .into_par_iter()
        .map(|q| {
            let query = test.row(q);
            let query = query.as_slice().map(<[f64]>::to_vec).unwrap_or_else(|| query.to_vec());
            medoids
                .iter()
                .map(|(class, v)| (Metric::Euclidean.distance(&query, v), *class))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .expect("non-empty")
                .1
        })
        .collect())
}

/// Rows are true classes, columns predicted classes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub counts: Vec<Vec<u64>>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            counts: vec![vec![0; classes]; classes],
        }
    }

    pub fn from_predictions(truth: &[u32], predicted: &[u32], classes: usize) -> Result<Self> {
        if truth.len() != predicted.len() {
            return Err(Error::Shape(format!(
                "{} true labels vs {} predictions",
                truth.len(),
                predicted.len()
            )));
        }
        let mut cm = Self::new(classes);
        for (&t, &p) in truth.iter().zip(predicted) {
            if t as usize >= classes || p as usize >= classes {
                return Err(Error::Parameter(format!("label outside {classes} classes")));
            }
            cm.counts[t as usize][p as usize] += 1;
        }
        Ok(cm)
    }

    pub fn classes(&self) -> usize {
        self.counts.len()
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().flatten().sum()
    }

    /// (TP, TN, FP, FN) of class `c` against the rest.
    pub fn one_vs_rest(&self, c: usize) -> (u64, u64, u64, u64) {
        let tp = self.counts[c][c];
        let row: u64 = self.counts[c].iter().sum();
        let col: u64 = self.counts.iter().map(|r| r[c]).sum();
        let fp = col - tp;
        let fn_ = row - tp;
        let tn = self.total() - tp - fp - fn_;
        (tp, tn, fp, fn_)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub accuracy: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
    pub per_class: Vec<ClassMetrics>,
}

fn ratio(num: u64, den: u64) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn compute_metrics(cm: &ConfusionMatrix) -> Result<Metrics> {
    let total = cm.total();
    if cm.classes() == 0 || total == 0 {
        return Err(Error::Parameter("confusion matrix is empty".into()));
    }
    let trace: u64 = (0..cm.classes()).map(|c| cm.counts[c][c]).sum();
    let per_class: Vec<ClassMetrics> = (0..cm.classes())
        .map(|c| {
            let (tp, _tn, fp, fn_) = cm.one_vs_rest(c);
            ClassMetrics {
                precision: ratio(tp, tp + fp),
                recall: ratio(tp, tp + fn_),
                // Harmonic mean of precision and recall, in count form.
                f1: ratio(2 * tp, 2 * tp + fp + fn_),
            }
        })
        .collect();
    let mean = |f: fn(&ClassMetrics) -> f64| per_class.iter().map(f).sum::<f64>() / per_class.len() as f64;
    Ok(Metrics {
        accuracy: ratio(trace, total),
        precision_macro: mean(|m| m.precision),
        recall_macro: mean(|m| m.recall),
        f1_macro: mean(|m| m.f1),
        per_class,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ClassifierConfig {
    Knn { k: usize },
    /// One 1-medoid prototype per class of the training coreset.
    NearestMedoid,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self::Knn { k: DEFAULT_KNN_K }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub confusion: ConfusionMatrix,
    #[serde(flatten)]
    pub metrics: Metrics,
    pub classifier: ClassifierConfig,
    pub coreset_spec: Option<CoresetSpec>,
}

/// The row of each class that minimizes summed distance to its classmates.
pub fn class_medoids(train: &EmbeddingMatrix) -> Vec<(u32, Vec<f64>)> {
    crate::data::partition_by_class(train)
        .into_iter()
        .map(|(class, part)| {
            let n = part.n();
            let best = (0..n)
                .map(|i| {
                    let s: f64 = (0..n).map(|j| euclidean(part.row(i), part.row(j))).sum();
                    (i, s)
                })
                .fold((0, f64::INFINITY), |b, (i, s)| if s < b.1 { (i, s) } else { b })
                .0;
            (class, part.row(best).to_vec())
        })
        .collect()
}

/// Trains the configured classifier on `train` and scores it on `test`.
/// For k-NN, `k` is reduced to the largest odd value the training set allows.
pub fn evaluate(
    train: &EmbeddingMatrix,
    test: &EmbeddingMatrix,
    classifier: ClassifierConfig,
    coreset_spec: Option<CoresetSpec>,
) -> Result<EvalReport> {
    if train.class_names() != test.class_names() {
        return Err(Error::Consistency("train and test use different class tables".into()));
    }
    let predictions = match classifier {
        ClassifierConfig::Knn { k } => {
            let mut k = k.min(train.n());
            if k % 2 == 0 {
                k -= 1;
            }
            knn_classify(train, test, k.max(1))?
        }
        ClassifierConfig::NearestMedoid => {
            check_dims(train.dim(), test)?;
            nearest_medoid_classify(&class_medoids(train), test)?
        }
    };
    let confusion = ConfusionMatrix::from_predictions(test.labels(), &predictions, test.num_classes())?;
    let metrics = compute_metrics(&confusion)?;
    Ok(EvalReport {
        confusion,
        metrics,
        classifier,
        coreset_spec,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompareConfig {
    pub classifier: ClassifierConfig,
    pub methods: Vec<SamplingMethod>,
    pub cluster_allocation: ClusterAllocation,
    pub class_allocation: ClassAllocation,
}

impl Default for CompareConfig {
    fn default() -> Self {
        Self {
            classifier: ClassifierConfig::default(),
            methods: vec![SamplingMethod::Random, SamplingMethod::Intelligent],
            cluster_allocation: ClusterAllocation::default(),
            class_allocation: ClassAllocation::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComparisonRow {
    pub method: SamplingMethod,
    pub fraction: f64,
    pub seed: u64,
    pub coreset_size: usize,
    pub accuracy: f64,
    pub precision_macro: f64,
    pub recall_macro: f64,
    pub f1_macro: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    pub stddev: f64,
}

impl MeanStd {
    /// Sample standard deviation (n - 1); 0 for a single value.
    pub fn of(values: &[f64]) -> Self {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let stddev = if values.len() > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        Self { mean, stddev }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: SamplingMethod,
    pub fraction: f64,
    pub runs: usize,
    pub accuracy: MeanStd,
    pub precision_macro: MeanStd,
    pub recall_macro: MeanStd,
    pub f1_macro: MeanStd,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub rows: Vec<ComparisonRow>,
    pub summary: Vec<SummaryRow>,
    pub reports: Vec<EvalReport>,
}

/// Every fraction x seed x method: build the coreset from `train`, fit the
/// classifier on it and score on `test`. Rows come out in that nesting order.
pub fn compare(
    train: &EmbeddingMatrix,
    test: &EmbeddingMatrix,
    clusterings: &[ClassClustering],
    fractions: &[f64],
    seeds: &[u64],
    config: &CompareConfig,
) -> Result<Comparison> {
    if fractions.is_empty() || seeds.is_empty() || config.methods.is_empty() {
        return Err(Error::Parameter("compare needs at least one fraction, seed and method".into()));
    }
    let units: Vec<(f64, u64, SamplingMethod)> = fractions
        .iter()
        .flat_map(|&f| seeds.iter().flat_map(move |&s| config.methods.iter().map(move |&m| (f, s, m))))
        .collect();
    let results: Vec<(ComparisonRow, EvalReport)> = units
        .par_iter()
        .map(|&(fraction, seed, method)| {
            let spec = CoresetSpec {
                size: CoresetSize::Fraction(fraction),
                method,
                seed,
                cluster_allocation: config.cluster_allocation,
                class_allocation: config.class_allocation,
            };
            let sel = build_coreset(train, Some(clusterings), &spec)?;
            let coreset = train.select_ids(&sel.ids)?;
            let report = evaluate(&coreset, test, config.classifier, Some(spec))?;
            let row = ComparisonRow {
                method,
                fraction,
                seed,
                coreset_size: sel.ids.len(),
                accuracy: report.metrics.accuracy,
                precision_macro: report.metrics.precision_macro,
                recall_macro: report.metrics.recall_macro,
                f1_macro: report.metrics.f1_macro,
            };
            Ok((row, report))
        })
        .collect::<Result<_>>()?;
    let (rows, reports): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    let summary = summarize(&rows, fractions, &config.methods);
    Ok(Comparison { rows, summary, reports })
}

/// Mean and sample stddev per (fraction, method) cell, in argument order.
pub fn summarize(rows: &[ComparisonRow], fractions: &[f64], methods: &[SamplingMethod]) -> Vec<SummaryRow> {
    let mut out = Vec::new();
    for &fraction in fractions {
        for &method in methods {
            let cell: Vec<&ComparisonRow> = rows
                .iter()
                .filter(|r| r.method == method && r.fraction == fraction)
                .collect();
            let stat = |f: fn(&ComparisonRow) -> f64| MeanStd::of(&cell.iter().map(|r| f(r)).collect::<Vec<_>>());
            out.push(SummaryRow {
                method,
                fraction,
                runs: cell.len(),
                accuracy: stat(|r| r.accuracy),
                precision_macro: stat(|r| r.precision_macro),
                recall_macro: stat(|r| r.recall_macro),
                f1_macro: stat(|r| r.f1_macro),
            });
        }
    }
    out
}

pub const COMPARISON_HEADER: &str = "method,fraction,seed,accuracy,precision_macro,recall_macro,f1_macro";
pub const CURVE_HEADER: &str = "method,fraction,metric,mean,stddev";

pub fn comparison_csv(rows: &[ComparisonRow]) -> String {
    let mut out = format!("{COMPARISON_HEADER}\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{:?},{},{:?},{:?},{:?},{:?}",
            r.method.as_str(),
            r.fraction,
            r.seed,
            r.accuracy,
            r.precision_macro,
            r.recall_macro,
            r.f1_macro
        );
    }
    out
}

/// Long format, one line per (method, fraction, metric), for plotting curves.
pub fn curve_csv(summary: &[SummaryRow]) -> String {
    let mut out = format!("{CURVE_HEADER}\n");
    for s in summary {
        for (name, v) in [
            ("accuracy", s.accuracy),
            ("precision_macro", s.precision_macro),
            ("recall_macro", s.recall_macro),
            ("f1_macro", s.f1_macro),
        ] {
            let _ = writeln!(out, "{},{:?},{name},{:?},{:?}", s.method.as_str(), s.fraction, v.mean, v.stddev);
        }
    }
    out
}

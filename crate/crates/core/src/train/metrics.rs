use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::nn::{predict_proba, ModelSpec, ModelState};
use crate::synth::{DatasetBundle, IQFrame};

/// Accuracy within one SNR bucket.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SnrAccuracy {
    pub snr_db: i32,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub class_names: Vec<String>,
    /// All-SNR top-1 accuracy.
    pub accuracy: f64,
    pub correct: usize,
    pub total: usize,
    /// Ascending by SNR.
    pub per_snr: Vec<SnrAccuracy>,
    /// Raw counts, rows are truth, columns prediction.
    pub confusion_counts: Vec<Vec<usize>>,
    /// Row-normalized; rows without samples are all zero.
    pub confusion: Vec<Vec<f64>>,
    /// Diagonal of `confusion`.
    pub per_class: Vec<f64>,
}

impl MetricsReport {
    /// 95% binomial half-width of the all-SNR accuracy.
    pub fn ci95(&self) -> f64 {
        ci95_half_width(self.accuracy, self.total)
    }

    /// Mean accuracy over SNR buckets selected by `keep`, unweighted.
    pub fn mean_accuracy_where(&self, keep: impl Fn(i32) -> bool) -> Option<f64> {
        let v: Vec<f64> = self
            .per_snr
            .iter()
            .filter(|s| keep(s.snr_db))
            .map(|s| s.accuracy)
            .collect();
        (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64)
    }
}

/// `1.96 * sqrt(p (1 - p) / n)`; zero for an empty sample.
pub fn ci95_half_width(p: f64, n: usize) -> f64 {
    if n == 0 {
        return 0.0;
    }
    1.96 * (p * (1.0 - p) / n as f64).sqrt()
}

/// Builds a report from predicted and true class indices.
pub fn metrics_from_predictions(
    predicted: &[usize],
    truth: &[usize],
    snr: &[i32],
    class_names: &[String],
) -> Result<MetricsReport, TrainError> {
    let n = truth.len();
    if predicted.len() != n || snr.len() != n {
        return Err(TrainError::Config(format!(
            "{} predictions, {} labels, {} snr labels",
            predicted.len(),
            n,
            snr.len()
        )));
    }
    if n == 0 {
        return Err(TrainError::Config("cannot score an empty set".into()));
    }
    let k = class_names.len();
    if let Some(&bad) = predicted.iter().chain(truth).find(|&&c| c >= k) {
        return Err(TrainError::Config(format!("class index {bad} outside {k} classes")));
    }
    let mut counts = vec![vec![0usize; k]; k];
    let mut buckets: std::collections::BTreeMap<i32, (usize, usize)> = Default::default();
    let mut correct = 0;
    for ((&p, &t), &s) in predicted.iter().zip(truth).zip(snr) {
        counts[t][p] += 1;
        let e = buckets.entry(s).or_insert((0, 0));
        e.1 += 1;
        if p == t {
            correct += 1;
            e.0 += 1;
        }
    }
    let confusion: Vec<Vec<f64>> = counts
        .iter()
        .map(|row| {
            let total: usize = row.iter().sum();
            row.iter()
                .map(|&c| if total == 0 { 0.0 } else { c as f64 / total as f64 })
                .collect()
        })
        .collect();
    let per_class = (0..k).map(|i| confusion[i][i]).collect();
    Ok(MetricsReport {
        class_names: class_names.to_vec(),
        accuracy: correct as f64 / n as f64,
        correct,
        total: n,
        per_snr: buckets
            .into_iter()
            .map(|(snr_db, (c, t))| SnrAccuracy {
                snr_db,
                correct: c,
                total: t,
                accuracy: c as f64 / t as f64,
            })
            .collect(),
        confusion_counts: counts,
        confusion,
        per_class,
    })
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax(p: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

pub const EVAL_BATCH: usize = 256;

/// Top-1 metrics of `state` over every frame in `bundle`.
pub fn evaluate(
    state: &ModelState<f32>,
    spec: &ModelSpec,
    bundle: &DatasetBundle,
) -> Result<MetricsReport, TrainError> {
    let frames: Vec<&IQFrame> = bundle.frames.iter().collect();
    let probs = predict_proba(spec, state, &frames, EVAL_BATCH)?;
    let head = probs.first().map_or(0, |p| p.len());
    if head < bundle.n_classes() {
        return Err(TrainError::Config(format!(
            "model predicts {head} classes but the dataset has {}",
            bundle.n_classes()
        )));
    }
    let predicted: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let mut names = bundle.class_names.clone();
    // extra head outputs beyond the dataset's classes get placeholder names
    for extra in names.len()..head {
        names.push(format!("class{extra}"));
    }
    metrics_from_predictions(&predicted, &bundle.mod_labels, &bundle.snr_labels, &names)
}

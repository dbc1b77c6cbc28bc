//! Confusion-matrix metrics, one-vs-rest ROC/AUC, and the thresholded
//! authentication decision.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{downscale, normalize, to_image, FingerprintImage};
use crate::nn::model::Model;
use crate::nn::tensor::{Scalar, Tensor};
use crate::sim::Measurement;

/// Counts with rows = true class, columns = predicted class.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub n_classes: usize,
    counts: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn from_predictions(predictions: &[usize], labels: &[usize], n_classes: usize) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::param(format!(
                "{} predictions vs {} labels",
                predictions.len(),
                labels.len()
            )));
        }
        let mut counts = vec![0u64; n_classes * n_classes];
        for (&pred, &truth) in predictions.iter().zip(labels) {
            if pred >= n_classes || truth >= n_classes {
                return Err(Error::param(format!(
                    "label/prediction ({truth},{pred}) out of range for {n_classes} classes"
                )));
            }
            counts[truth * n_classes + pred] += 1;
        }
        Ok(ConfusionMatrix { n_classes, counts })
    }

    pub fn get(&self, truth: usize, pred: usize) -> u64 {
        self.counts[truth * self.n_classes + pred]
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> u64 {
        (0..self.n_classes).map(|i| self.get(i, i)).sum()
    }

    pub fn rows(&self) -> Vec<Vec<u64>> {
        self.counts
            .chunks_exact(self.n_classes)
            .map(|r| r.to_vec())
            .collect()
    }

    /// CSV with a `true\pred` header column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("true\\pred");
        for j in 0..self.n_classes {
            out.push_str(&format!(",{j}"));
        }
        out.push('\n');
        for i in 0..self.n_classes {
            out.push_str(&i.to_string());
            for j in 0..self.n_classes {
                out.push_str(&format!(",{}", self.get(i, j)));
            }
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub class: usize,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

/// Accuracy plus per-class and macro-averaged precision/recall/F1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub per_class: Vec<ClassMetrics>,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
    pub counts: Vec<Vec<u64>>,
}

fn ratio(num: u64, den: u64) -> f64 {
    // zero-denominator convention: 0
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Per-class one-vs-rest reduction of the confusion matrix.
pub fn metrics(cm: &ConfusionMatrix) -> Result<MetricsReport> {
    let total = cm.total();
    if total == 0 {
        return Err(Error::Degenerate("confusion matrix has no samples".to_string()));
    }
    let mut per_class = Vec::with_capacity(cm.n_classes);
    for k in 0..cm.n_classes {
        let tp = cm.get(k, k);
        let fp: u64 = (0..cm.n_classes).filter(|&i| i != k).map(|i| cm.get(i, k)).sum();
        let fn_: u64 = (0..cm.n_classes).filter(|&j| j != k).map(|j| cm.get(k, j)).sum();
        let precision = ratio(tp, tp + fp);
        let recall = ratio(tp, tp + fn_);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        per_class.push(ClassMetrics { class: k, precision, recall, f1 });
    }
    let n = cm.n_classes as f64;
    Ok(MetricsReport {
        accuracy: cm.trace() as f64 / total as f64,
        macro_precision: per_class.iter().map(|c| c.precision).sum::<f64>() / n,
        macro_recall: per_class.iter().map(|c| c.recall).sum::<f64>() / n,
        macro_f1: per_class.iter().map(|c| c.f1).sum::<f64>() / n,
        per_class,
        counts: cm.rows(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    /// Score threshold that produced this operating point (`inf` anchors (0,0)).
    pub threshold: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// One-vs-rest ROC curve with its trapezoidal AUC.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    pub class_id: usize,
    pub points: Vec<RocPoint>,
    pub auc: f64,
}

/// Threshold sweep over descending distinct scores; tied scores fall into one
/// threshold group. Needs at least one positive and one negative label.
pub fn roc_curve(scores: &[f64], positives: &[bool], class_id: usize) -> Result<RocCurve> {
    if scores.len() != positives.len() {
        return Err(Error::param(format!(
            "{} scores vs {} labels",
            scores.len(),
            positives.len()
        )));
    }
    let n_pos = positives.iter().filter(|&&p| p).count();
    let n_neg = positives.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Degenerate(format!(
            "roc needs both label kinds, got {n_pos} positives and {n_neg} negatives"
        )));
    }

    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].partial_cmp(&scores[a]).expect("finite scores"));

    let mut points = vec![RocPoint { threshold: f64::INFINITY, fpr: 0.0, tpr: 0.0 }];
    let (mut tp, mut fp) = (0u64, 0u64);
    let mut i = 0;
    while i < order.len() {
        let threshold = scores[order[i]];
        // consume the whole tie group
        while i < order.len() && scores[order[i]] == threshold {
            if positives[order[i]] {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push(RocPoint {
            threshold,
            fpr: fp as f64 / n_neg as f64,
            tpr: tp as f64 / n_pos as f64,
        });
    }

    let auc = points
        .windows(2)
        .map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0)
        .sum();

    Ok(RocCurve { class_id, points, auc })
}

/// ROC curves as CSV: `class,threshold,fpr,tpr`.
pub fn rocs_to_csv(rocs: &[RocCurve]) -> String {
    let mut out = String::from("class,threshold,fpr,tpr\n");
    for roc in rocs {
        for p in &roc.points {
            out.push_str(&format!("{},{},{},{}\n", roc.class_id, p.threshold, p.fpr, p.tpr));
        }
    }
    out
}

/// Per-sample class probabilities over a batched inference sweep.
pub fn predict_probs<T: Scalar>(
    model: &Model<T>,
    images: &[FingerprintImage],
    batch: usize,
) -> Result<Vec<Vec<f64>>> {
    let (h, w) = model.input_dims();
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(batch.max(1)) {
        let mut data = Vec::with_capacity(chunk.len() * h * w);
        for img in chunk {
            if img.rows != h || img.cols != w {
                return Err(Error::Contract(format!(
                    "image is {}x{} but the model expects {h}x{w}",
                    img.rows, img.cols
                )));
            }
            data.extend(img.pixels.iter().map(|&p| T::from_f64(p as f64 / 255.0)));
        }
        let probs = model.infer(&Tensor::from_vec([chunk.len(), h, w, 1], data))?;
        let classes = probs.sample_len();
        for row in probs.data().chunks_exact(classes) {
            out.push(row.iter().map(|&v| v.to_f64()).collect());
        }
    }
    Ok(out)
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of images whose argmax prediction matches their label.
pub fn accuracy_on<T: Scalar>(model: &Model<T>, images: &[FingerprintImage], batch: usize) -> Result<f64> {
    if images.is_empty() {
        return Err(Error::param("cannot measure accuracy on an empty set".to_string()));
    }
    let probs = predict_probs(model, images, batch)?;
    let correct = probs
        .iter()
        .zip(images)
        .filter(|(p, img)| argmax(p) == img.label as usize)
        .count();
    Ok(correct as f64 / images.len() as f64)
}

/// Full evaluation artifacts for one test sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub report: MetricsReport,
    pub rocs: Vec<RocCurve>,
    pub confusion: ConfusionMatrix,
}

/// Per-sample softmax scores → argmax predictions → metrics plus one
/// one-vs-rest ROC per class. The model must be frozen (inference mode is
/// used throughout).
pub fn evaluate<T: Scalar>(
    model: &Model<T>,
    images: &[FingerprintImage],
    batch: usize,
) -> Result<Evaluation> {
    if images.is_empty() {
        return Err(Error::param("cannot evaluate an empty test set".to_string()));
    }
    let n_classes = model.arch.n_classes;
    let probs = predict_probs(model, images, batch)?;
    let predictions: Vec<usize> = probs.iter().map(|p| argmax(p)).collect();
    let labels: Vec<usize> = images.iter().map(|img| img.label as usize).collect();

    let confusion = ConfusionMatrix::from_predictions(&predictions, &labels, n_classes)?;
    let report = metrics(&confusion)?;

    let mut rocs = Vec::with_capacity(n_classes);
    for k in 0..n_classes {
        let scores: Vec<f64> = probs.iter().map(|p| p[k]).collect();
        let positives: Vec<bool> = labels.iter().map(|&l| l == k).collect();
        rocs.push(roc_curve(&scores, &positives, k)?);
    }

    Ok(Evaluation { report, rocs, confusion })
}

/// Accept/reject outcome for one measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuthDecision {
    pub accepted: bool,
    /// Predicted device when accepted.
    pub device_id: Option<u32>,
    pub probabilities: Vec<f64>,
    pub threshold: f64,
}

/// Pure threshold rule: accept iff the maximum class probability reaches τ.
pub fn decide(probabilities: &[f64], threshold: f64) -> AuthDecision {
    let best = argmax(probabilities);
    let accepted = probabilities[best] >= threshold;
    AuthDecision {
        accepted,
        device_id: if accepted { Some(best as u32) } else { None },
        probabilities: probabilities.to_vec(),
        threshold,
    }
}

/// Run the imaging pipeline on a raw measurement and threshold the softmax
/// output. The measurement geometry must downscale to the model input.
pub fn authenticate<T: Scalar>(
    model: &Model<T>,
    measurement: &Measurement,
    threshold: f64,
) -> Result<AuthDecision> {
    let (h, w) = model.input_dims();
    let image = to_image(measurement);
    let sized = if image.rows == h && image.cols == w {
        image
    } else {
        downscale(&image, h, w)?
    };
    let normalized = normalize(&sized);
    let input = Tensor::from_vec(
        [1, h, w, 1],
        normalized.values.iter().map(|&v| T::from_f64(v)).collect(),
    );
    let probs = model.infer(&input)?;
    Ok(decide(
        &probs.data().iter().map(|&v| v.to_f64()).collect::<Vec<_>>(),
        threshold,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_predictions_are_diagonal() {
        let cm = ConfusionMatrix::from_predictions(&[0, 1, 2, 1], &[0, 1, 2, 1], 3).unwrap();
        assert_eq!(cm.trace(), 4);
        assert_eq!(cm.total(), 4);
        let m = metrics(&cm).unwrap();
        assert_eq!(m.accuracy, 1.0);
        assert_eq!(m.macro_f1, 1.0);
    }

    #[test]
    fn single_sample_lands_in_one_cell() {
        let cm = ConfusionMatrix::from_predictions(&[2], &[0], 3).unwrap();
        assert_eq!(cm.get(0, 2), 1);
        assert_eq!(cm.total(), 1);
        for i in 0..3 {
            for j in 0..3 {
                if (i, j) != (0, 2) {
                    assert_eq!(cm.get(i, j), 0);
                }
            }
        }
    }

    #[test]
    fn scripted_twenty_sample_tally() {
        // Hand-tallied: true labels and predictions scripted, matrix frozen.
        let labels = [0, 0, 0, 0, 0, 0, 0, 1, 1, 1, 1, 1, 1, 2, 2, 2, 2, 2, 2, 2];
        let preds =  [0, 0, 0, 0, 0, 1, 2, 1, 1, 1, 1, 0, 2, 2, 2, 2, 2, 2, 0, 1];
        let cm = ConfusionMatrix::from_predictions(&preds, &labels, 3).unwrap();
        assert_eq!(cm.rows(), vec![vec![5, 1, 1], vec![1, 4, 1], vec![1, 1, 5]]);
    }

    #[test]
    fn binary_hand_metrics() {
        // class-1 one-vs-rest: TP=8, FP=2, FN=1, TN=9.
        let mut preds = Vec::new();
        let mut labels = Vec::new();
        preds.extend(std::iter::repeat_n(1, 8));
        labels.extend(std::iter::repeat_n(1, 8)); // TP
        preds.extend(std::iter::repeat_n(1, 2));
        labels.extend(std::iter::repeat_n(0, 2)); // FP
        preds.extend(std::iter::repeat_n(0, 1));
        labels.extend(std::iter::repeat_n(1, 1)); // FN
        preds.extend(std::iter::repeat_n(0, 9));
        labels.extend(std::iter::repeat_n(0, 9)); // TN
        let cm = ConfusionMatrix::from_predictions(&preds, &labels, 2).unwrap();
        let m = metrics(&cm).unwrap();
        let c1 = &m.per_class[1];
        assert!((c1.precision - 0.8).abs() < 1e-12);
        assert!((c1.recall - 8.0 / 9.0).abs() < 1e-12);
        assert!((c1.f1 - 2.0 * 0.8 * (8.0 / 9.0) / (0.8 + 8.0 / 9.0)).abs() < 1e-12);
        assert!((m.accuracy - 0.85).abs() < 1e-12);
    }

    #[test]
    fn zero_denominator_convention() {
        // class 2 never predicted and never true -> precision=recall=f1=0
        let cm = ConfusionMatrix::from_predictions(&[0, 1], &[0, 1], 3).unwrap();
        let m = metrics(&cm).unwrap();
        assert_eq!(m.per_class[2].precision, 0.0);
        assert_eq!(m.per_class[2].recall, 0.0);
        assert_eq!(m.per_class[2].f1, 0.0);
    }

    #[test]
    fn mismatched_lengths_and_range_errors() {
        assert!(ConfusionMatrix::from_predictions(&[0], &[0, 1], 2).is_err());
        assert!(ConfusionMatrix::from_predictions(&[5], &[0], 2).is_err());
    }

    #[test]
    fn roc_perfectly_separated() {
        let roc = roc_curve(&[0.9, 0.8, 0.3, 0.1], &[true, true, false, false], 0).unwrap();
        assert_eq!(roc.auc, 1.0);
        assert_eq!(roc.points.first().unwrap().fpr, 0.0);
        assert_eq!(roc.points.last().unwrap().tpr, 1.0);
    }

    #[test]
    fn roc_identical_scores_is_chance() {
        let roc = roc_curve(&[0.5; 6], &[true, false, true, false, true, false], 1).unwrap();
        assert_eq!(roc.points.len(), 2); // (0,0) anchor + single tie group at (1,1)
        assert_eq!(roc.auc, 0.5);
    }

    #[test]
    fn roc_hand_cases() {
        let roc = roc_curve(&[0.9, 0.8, 0.7, 0.4], &[true, true, false, false], 0).unwrap();
        assert_eq!(roc.auc, 1.0);
        let roc = roc_curve(&[0.9, 0.6, 0.8, 0.4], &[true, true, false, false], 0).unwrap();
        // concordant pairs: (0.9,0.8)+(0.9,0.4)+(0.6,0.4) = 3 of 4
        assert!((roc.auc - 0.75).abs() < 1e-12);
    }

    #[test]
    fn roc_rejects_single_class() {
        assert!(matches!(
            roc_curve(&[0.1, 0.2], &[true, true], 0),
            Err(Error::Degenerate(_))
        ));
    }

    #[test]
    fn roc_monotone() {
        let scores: Vec<f64> = (0..50).map(|i| ((i * 7919) % 100) as f64 / 100.0).collect();
        let positives: Vec<bool> = (0..50).map(|i| i % 3 == 0).collect();
        let roc = roc_curve(&scores, &positives, 0).unwrap();
        for w in roc.points.windows(2) {
            assert!(w[1].fpr >= w[0].fpr);
            assert!(w[1].tpr >= w[0].tpr);
        }
        assert_eq!(roc.points.first().unwrap().fpr, 0.0);
        assert_eq!(roc.points.last().unwrap().fpr, 1.0);
        assert_eq!(roc.points.last().unwrap().tpr, 1.0);
    }

    #[test]
    fn decide_thresholding() {
        let d = decide(&[1.0, 0.0, 0.0], 0.99);
        assert!(d.accepted);
        assert_eq!(d.device_id, Some(0));

        let d = decide(&[0.5, 0.3, 0.2], 0.9);
        assert!(!d.accepted);
        assert_eq!(d.device_id, None);
        assert_eq!(d.probabilities, vec![0.5, 0.3, 0.2]);

        let d = decide(&[0.2, 0.5, 0.3], 0.0);
        assert!(d.accepted);
        assert_eq!(d.device_id, Some(1));
    }

    #[test]
    fn metric_permutation_invariance() {
        // permute class order (0,1,2) -> (2,0,1), macro averages unchanged
        let labels = [0, 0, 1, 1, 2, 2, 0, 1, 2, 0];
        let preds = [0, 1, 1, 1, 2, 0, 0, 2, 2, 0];
        let cm = ConfusionMatrix::from_predictions(&preds, &labels, 3).unwrap();
        let m = metrics(&cm).unwrap();

        let perm = |x: usize| (x + 1) % 3;
        let labels_p: Vec<usize> = labels.iter().map(|&x| perm(x)).collect();
        let preds_p: Vec<usize> = preds.iter().map(|&x| perm(x)).collect();
        let cm_p = ConfusionMatrix::from_predictions(&preds_p, &labels_p, 3).unwrap();
        let m_p = metrics(&cm_p).unwrap();

        assert!((m.macro_f1 - m_p.macro_f1).abs() < 1e-15);
        assert!((m.macro_precision - m_p.macro_precision).abs() < 1e-15);
        assert!((m.accuracy - m_p.accuracy).abs() < 1e-15);
        for k in 0..3 {
            assert_eq!(m.per_class[k].precision, m_p.per_class[perm(k)].precision);
            assert_eq!(m.per_class[k].recall, m_p.per_class[perm(k)].recall);
        }
    }
}

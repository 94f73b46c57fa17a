//! Confusion counting and the three pixel metrics.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{FieldkitError, Result};

/// Binary confusion counts over the evaluated (masked-in) pixels.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConfusionCounts {
    pub tp: u64,
    pub tn: u64,
    pub fp: u64,
    pub fn_: u64,
}

impl ConfusionCounts {
    pub fn new(tp: u64, tn: u64, fp: u64, fn_: u64) -> Self {
        Self { tp, tn, fp, fn_ }
    }

    pub fn total(&self) -> u64 {
        self.tp + self.tn + self.fp + self.fn_
    }

    pub fn add(&mut self, other: &ConfusionCounts) {
        self.tp += other.tp;
        self.tn += other.tn;
        self.fp += other.fp;
        self.fn_ += other.fn_;
    }
}

/// A metric that may be undefined on degenerate confusions. Serialized as
/// the float or the string "undefined" so reports never coerce to 0.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum MetricValue {
    Defined(f64),
    Undefined(String),
}

impl MetricValue {
    pub fn undefined() -> Self {
        MetricValue::Undefined("undefined".to_string())
    }

    pub fn value(&self) -> Option<f64> {
        match self {
            MetricValue::Defined(v) => Some(*v),
            MetricValue::Undefined(_) => None,
        }
    }
}

/// Count the confusion between a thresholded extent prediction and the
/// binary extent label, over mask=1 pixels only.
pub fn confusion(
    prediction: &Array2<f32>,
    label: &Array2<u8>,
    mask: &Array2<u8>,
    threshold: f32,
) -> Result<ConfusionCounts> {
    if prediction.dim() != label.dim() || prediction.dim() != mask.dim() {
        return Err(FieldkitError::ShapeMismatch(format!(
            "prediction {:?}, label {:?}, mask {:?}",
            prediction.dim(),
            label.dim(),
            mask.dim()
        )));
    }
    let mut c = ConfusionCounts::default();
    for ((&p, &y), &m) in prediction.iter().zip(label.iter()).zip(mask.iter()) {
        if m == 0 {
            continue;
        }
        let pred = p >= threshold;
        let truth = y == 1;
        match (pred, truth) {
            (true, true) => c.tp += 1,
            (false, false) => c.tn += 1,
            (true, false) => c.fp += 1,
            (false, true) => c.fn_ += 1,
        }
    }
    if c.total() == 0 {
        return Err(FieldkitError::UnsupervisableBatch("confusion over empty mask".to_string()));
    }
    Ok(c)
}

/// Overall accuracy: (TP + TN) / all.
pub fn oa(c: &ConfusionCounts) -> MetricValue {
    let total = c.total();
    if total == 0 {
        return MetricValue::undefined();
    }
    MetricValue::Defined((c.tp + c.tn) as f64 / total as f64)
}

/// F1 = TP / (TP + (FP + FN) / 2), the harmonic mean of precision/recall.
pub fn f1(c: &ConfusionCounts) -> MetricValue {
    let denom = c.tp as f64 + 0.5 * (c.fp + c.fn_) as f64;
    if denom == 0.0 {
        return MetricValue::undefined();
    }
    MetricValue::Defined(c.tp as f64 / denom)
}

/// Matthews correlation coefficient; undefined when any marginal is empty.
pub fn mcc(c: &ConfusionCounts) -> MetricValue {
    let tp = c.tp as f64;
    let tn = c.tn as f64;
    let fp = c.fp as f64;
    let fn_ = c.fn_ as f64;
    let denom = (tp + fp) * (tp + fn_) * (tn + fp) * (tn + fn_);
    if denom == 0.0 {
        return MetricValue::undefined();
    }
    MetricValue::Defined((tp * tn - fp * fn_) / denom.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn hand_derived_values_match_exactly() {
        let c = ConfusionCounts::new(2, 3, 1, 1);
        assert!((oa(&c).value().unwrap() - 5.0 / 7.0).abs() < 1e-12);
        assert!((f1(&c).value().unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert!((mcc(&c).value().unwrap() - 5.0 / 12.0).abs() < 1e-12);
    }

    #[test]
    fn perfect_and_anti_perfect() {
        let perfect = ConfusionCounts::new(4, 4, 0, 0);
        assert_eq!(oa(&perfect).value(), Some(1.0));
        assert_eq!(f1(&perfect).value(), Some(1.0));
        assert_eq!(mcc(&perfect).value(), Some(1.0));
        let wrong = ConfusionCounts::new(0, 0, 4, 4);
        assert_eq!(oa(&wrong).value(), Some(0.0));
        assert_eq!(mcc(&wrong).value(), Some(-1.0));
    }

    #[test]
    fn mcc_symmetric_under_class_relabeling() {
        let c = ConfusionCounts::new(13, 7, 3, 5);
        let swapped = ConfusionCounts::new(c.tn, c.tp, c.fn_, c.fp);
        assert_eq!(mcc(&c).value(), mcc(&swapped).value());
    }

    #[test]
    fn degenerate_confusion_is_undefined_not_zero() {
        let c = ConfusionCounts::new(5, 0, 0, 0); // no negatives at all
        assert_eq!(mcc(&c).value(), None);
        let empty = ConfusionCounts::default();
        assert_eq!(oa(&empty).value(), None);
        assert_eq!(f1(&ConfusionCounts::new(0, 3, 0, 0)).value(), None);
    }

    #[test]
    fn confusion_respects_mask_and_threshold() {
        let pred = array![[0.9f32, 0.2], [0.6, 0.4]];
        let label = array![[1u8, 1], [0, 0]];
        let mask = array![[1u8, 0], [1, 1]];
        let c = confusion(&pred, &label, &mask, 0.5).unwrap();
        assert_eq!(c, ConfusionCounts::new(1, 1, 1, 0));
    }

    #[test]
    fn masked_out_errors_do_not_count() {
        let pred = array![[1.0f32, 1.0], [1.0, 1.0]];
        let label = array![[1u8, 0], [0, 0]];
        let mask = array![[1u8, 0], [0, 0]];
        let c = confusion(&pred, &label, &mask, 0.5).unwrap();
        assert_eq!(oa(&c).value(), Some(1.0));
    }

    #[test]
    fn empty_mask_is_an_error() {
        let pred = array![[0.9f32]];
        let label = array![[1u8]];
        let mask = array![[0u8]];
        assert!(confusion(&pred, &label, &mask, 0.5).is_err());
    }

    #[test]
    fn majority_predictor_on_imbalanced_labels_scores_low_mcc_high_oa() {
        // 95:5 imbalance. The strict majority predictor has an empty
        // positive marginal: undefined, surfaced as such.
        let strict = ConfusionCounts::new(0, 95, 0, 5);
        assert!(oa(&strict).value().unwrap() > 0.9);
        assert_eq!(mcc(&strict).value(), None);
        // A near-majority predictor whose few positives are uncorrelated
        // with the label: OA stays high, MCC collapses toward 0.
        let near = ConfusionCounts::new(0, 93, 2, 5);
        let mcc_v = mcc(&near).value().unwrap();
        assert!(mcc_v.abs() < 0.1, "mcc {mcc_v}");
        assert!(oa(&near).value().unwrap() > 0.9);
    }
}

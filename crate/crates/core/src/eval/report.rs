//! Aggregated evaluation reports, serializable to JSON and CSV.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

use super::instance_iou::{FieldIou, IouCurve};
use super::pixel::{ConfusionCounts, MetricValue};

/// Pixel metrics of one image (masked pixels only).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PerImageMetrics {
    pub image_id: String,
    pub confusion: ConfusionCounts,
    pub oa: MetricValue,
    pub f1: MetricValue,
    pub mcc: MetricValue,
}

/// Full evaluation output: pooled pixel metrics, the per-image breakdown,
/// and instance-level aggregates when instances were evaluated.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EvalReport {
    /// Pooled over all masked pixels of all images.
    pub pooled_confusion: ConfusionCounts,
    pub oa: MetricValue,
    pub f1: MetricValue,
    pub mcc: MetricValue,
    /// Means of the defined per-image metrics (the alternative pooling).
    pub per_image_mean_oa: MetricValue,
    pub per_image_mean_f1: MetricValue,
    pub per_image_mean_mcc: MetricValue,
    pub per_image: Vec<PerImageMetrics>,
    pub per_field_ious: Vec<FieldIou>,
    pub instance: Option<IouCurve>,
}

impl EvalReport {
    pub fn from_parts(per_image: Vec<PerImageMetrics>, per_field_ious: Vec<FieldIou>) -> Self {
        use super::pixel::{f1, mcc, oa};
        let mut pooled = ConfusionCounts::default();
        for img in &per_image {
            pooled.add(&img.confusion);
        }
        let mean_of = |extract: fn(&PerImageMetrics) -> &MetricValue| -> MetricValue {
            let defined: Vec<f64> =
                per_image.iter().filter_map(|m| extract(m).value()).collect();
            if defined.is_empty() {
                MetricValue::undefined()
            } else {
                MetricValue::Defined(defined.iter().sum::<f64>() / defined.len() as f64)
            }
        };
        let instance = if per_field_ious.is_empty() {
            None
        } else {
            Some(super::instance_iou::aggregate_instances(&per_field_ious))
        };
        Self {
            pooled_confusion: pooled,
            oa: oa(&pooled),
            f1: f1(&pooled),
            mcc: mcc(&pooled),
            per_image_mean_oa: mean_of(|m| &m.oa),
            per_image_mean_f1: mean_of(|m| &m.f1),
            per_image_mean_mcc: mean_of(|m| &m.mcc),
            per_image,
            per_field_ious,
            instance,
        }
    }

    pub fn save_json(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    /// Tabular per-field IoU dump.
    pub fn save_field_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("field_id,iou,field_area_px,matched_instance\n");
        for f in &self.per_field_ious {
            let matched =
                f.matched_instance.map(|v| v.to_string()).unwrap_or_else(|| "none".to_string());
            out.push_str(&format!("{},{},{},{}\n", f.field_id, f.iou, f.field_area_px, matched));
        }
        fs::write(path, out)?;
        Ok(())
    }
}

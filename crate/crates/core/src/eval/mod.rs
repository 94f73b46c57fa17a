//! Pixel- and instance-level evaluation, restricted to labeled fields.
//!
//! Pixel metrics (OA, F1, MCC) are computed from a confusion matrix counted
//! only over supervision-mask pixels after thresholding the extent
//! prediction at 0.5. Degenerate denominators surface as explicit
//! `undefined` sentinels, never as silent zeros. Instance metrics match
//! each ground-truth field to the predicted instance with the largest
//! overlap (one-sided by default; exclusive bipartite matching behind a
//! flag) and aggregate per-field IoU into a median and an IoU_k curve.

mod instance_iou;
mod pixel;
mod report;

pub use instance_iou::{
    aggregate_instances, field_iou, match_fields, FieldIou, IouCurve, MatchPolicy,
};
pub use pixel::{confusion, f1, mcc, oa, ConfusionCounts, MetricValue};
pub use report::{EvalReport, PerImageMetrics};

//! External cropland-mask post-processing.

use ndarray::Array2;

use crate::error::{FieldkitError, Result};

use super::watershed::split_components;
use super::InstanceMap;

/// Apply an externally supplied cropland mask: pixels with cropmask=0
/// become background, instances losing more than half their area are
/// dropped entirely, survivors are split back into 4-connected components
/// and re-compacted.
pub fn apply_cropland_mask(inst: &InstanceMap, cropmask: &Array2<u8>) -> Result<InstanceMap> {
    if inst.labels.dim() != cropmask.dim() {
        return Err(FieldkitError::ShapeMismatch(format!(
            "instances {:?} vs cropmask {:?}",
            inst.labels.dim(),
            cropmask.dim()
        )));
    }
    let max_id = inst.labels.iter().copied().max().unwrap_or(0) as usize;
    let mut before = vec![0usize; max_id + 1];
    let mut after = vec![0usize; max_id + 1];
    for (&l, &m) in inst.labels.iter().zip(cropmask.iter()) {
        if l > 0 {
            before[l as usize] += 1;
            if m == 1 {
                after[l as usize] += 1;
            }
        }
    }
    let mut masked = inst.labels.clone();
    for (l, &m) in masked.iter_mut().zip(cropmask.iter()) {
        if *l == 0 {
            continue;
        }
        let id = *l as usize;
        let dropped = after[id] * 2 <= before[id] && after[id] < before[id];
        if m == 0 || dropped {
            *l = 0;
        }
    }
    let relabeled = split_components(&masked);
    Ok(InstanceMap::canonicalize(&relabeled))
}
